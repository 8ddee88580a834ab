#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "fedrema/errors.hpp"
#include "fedrema/harness.hpp"

using namespace fedrema;
using namespace fedrema::harness;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() / ("fedrema_h_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

ExperimentConfig tiny(const std::filesystem::path& out) {
    ExperimentConfig c = default_config();
    c.rounds = 3;
    c.num_clients = 4;
    c.num_classes = 4;
    c.num_groups = 2;
    c.dominant_per_group = 2;
    c.samples_per_client = 60;
    c.input_dim = 8;
    c.samples_per_class = 200;
    c.hidden_dim = 8;
    c.feature_dim = 4;
    c.epochs = 1;
    c.batch_size = 16;
    c.output_dir = out.string();
    return c;
}

server::RoundReport sample_report(std::size_t round, bool ccp) {
    server::RoundReport r;
    r.round = round;
    r.accuracy = {0.5, 0.75};
    r.mean_accuracy = 0.625;
    if (ccp) {
        r.delta_s_bar = 0.125;
        r.relevant_sets = {{1, 0}, {1}};
    }
    r.ccp_active = ccp;
    r.wall_ms = 3.5;
    return r;
}

}  // namespace

TEST_CASE("an empty config yields the defaults") {
    auto c = parse_config("");
    CHECK(c == default_config());
    CHECK(c.rounds == 100);
    CHECK(c.epochs == 5);
    CHECK(c.batch_size == 100);
    CHECK(c.lr == doctest::Approx(0.01));
    CHECK(c.strategy.fedrema.delta == doctest::Approx(0.5));
    CHECK(c.strategy.fedrema.temperature == doctest::Approx(0.5));
    CHECK(c.strategy.fedrema.n_probes == 1);
    CHECK(c.strategy.kind == server::StrategyKind::fedrema);
}

TEST_CASE("config values are parsed by section") {
    auto c = parse_config(
        "# comment\n"
        "[experiment]\nstrategy = fedper\nrounds = 7\nseed = 42\n"
        "[data]\niid_fraction = 0.5\nsamples_per_client = 100\n"
        "[model]\nrelu_features = false\n"
        "[training]\nlr = 0.05\n"
        "[fedrema]\ndelta = 0.3\nalways_probe = true\n");
    CHECK(c.strategy.kind == server::StrategyKind::fedper);
    CHECK(c.rounds == 7);
    CHECK(c.seed == 42);
    CHECK(c.iid_fraction == 0.5);
    CHECK(c.samples_per_client == 100);
    CHECK_FALSE(c.relu_features);
    CHECK(c.lr == 0.05);
    CHECK(c.strategy.fedrema.delta == 0.3);
    CHECK(c.strategy.fedrema.always_probe);
}

TEST_CASE("out-of-range values name the field") {
    try {
        parse_config("[data]\niid_fraction = 1.5\n");
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(e.field() == "data.iid_fraction");
    }
    CHECK_THROWS_AS(parse_config("[fedrema]\ndelta = 1.0\n"), ValidationError);
    CHECK_THROWS_AS(parse_config("[data]\ntrain_fraction = 1.0\n"), ValidationError);
}

TEST_CASE("malformed config text reports the line") {
    auto line_of = [](const std::string& text) -> std::size_t {
        try {
            parse_config(text);
        } catch (const ConfigParseError& e) {
            return e.line();
        }
        return 0;
    };
    CHECK(line_of("[experiment]\nrounds = ten\n") == 2);
    CHECK(line_of("[nonsense]\n") == 1);
    CHECK(line_of("[data]\n\nbogus = 1\n") == 3);
    CHECK(line_of("rounds = 3\n") == 1);
    CHECK(line_of("[experiment]\nrounds = 3\nrounds = 4\n") == 3);
    CHECK(line_of("[experiment\n") == 1);
    CHECK(line_of("[experiment]\nstrategy = fedprox\n") == 2);
    CHECK(line_of("[experiment]\nrounds\n") == 2);
}

TEST_CASE("serialized configs parse back to the same value") {
    auto c = default_config();
    c.strategy.kind = server::StrategyKind::fedavg;
    c.seed = 123456789012345ULL;
    c.iid_fraction = 0.1 + 0.2;
    c.lr = 1.0 / 3.0;
    c.strategy.fedrema.paper_literal_mds = true;
    c.idx_images = "a.idx";
    CHECK(parse_config(serialize_config(c)) == c);
}

TEST_CASE("load_config prefixes errors with the file name") {
    TempDir d;
    auto p = d.path / "bad.ini";
    std::ofstream(p) << "[experiment]\nrounds = -1\n";
    try {
        load_config(p);
        FAIL("expected ConfigParseError");
    } catch (const ConfigParseError& e) {
        CHECK(std::string(e.what()).find("bad.ini:line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(load_config(d.path / "missing.ini"), ConfigError);
}

TEST_CASE("command-line overrides win over file values") {
    auto file = parse_config("[experiment]\nseed = 5\nrounds = 9\nstrategy = fedavg\n");
    Overrides o;
    o.seed = 11;
    o.strategy = "local";
    auto c = apply_overrides(file, o);
    CHECK(c.seed == 11);
    CHECK(c.strategy.kind == server::StrategyKind::local);
    CHECK(c.rounds == 9);
    o.rounds = 0;
    CHECK_THROWS_AS(apply_overrides(file, o), ValidationError);
}

TEST_CASE("partition seed is derived from the master seed") {
    auto a = default_config();
    auto b = a;
    b.seed = 1;
    CHECK(partition_spec(a).seed != partition_spec(b).seed);
    CHECK(partition_spec(a).seed == partition_spec(a).seed);
}

TEST_CASE("csv layout") {
    std::vector<server::RoundReport> reports{sample_report(1, true), sample_report(2, false)};
    const std::string csv = format_csv(reports);
    CHECK(csv ==
          "round,client_id,accuracy,mean_accuracy,delta_s_bar,ccp_active\n"
          "1,0,0.5,0.625,0.125,1\n"
          "1,1,0.75,0.625,0.125,1\n"
          "2,0,0.5,0.625,,0\n"
          "2,1,0.75,0.625,,0\n");
}

TEST_CASE("json reports round-trip with sorted relevant sets") {
    std::vector<server::RoundReport> reports{sample_report(1, true), sample_report(2, false)};
    auto back = parse_json_reports(format_json(reports));
    REQUIRE(back.size() == 2);
    CHECK(back[0].relevant_sets[0] == std::vector<std::size_t>{0, 1});
    back[0].relevant_sets[0] = {1, 0};
    CHECK(back == reports);
    CHECK_THROWS_AS(parse_json_reports("[{\"round\": 1}]"), ConfigError);
}

TEST_CASE("metrics emission writes atomically and rejects empty input") {
    TempDir d;
    std::vector<server::RoundReport> reports{sample_report(1, true)};
    emit_metrics(reports, MetricsFormat::csv, d.path / "m.csv");
    CHECK(slurp(d.path / "m.csv") == format_csv(reports));
    CHECK_FALSE(std::filesystem::exists(d.path / "m.csv.tmp"));
    CHECK_THROWS_AS(emit_metrics({}, MetricsFormat::json, d.path / "m.json"), ParameterError);
    CHECK_THROWS_AS(write_atomic(d.path / "no" / "such" / "dir" / "f", "x"), IoError);
}

TEST_CASE("an experiment writes metrics, rounds and a summary") {
    TempDir d;
    auto c = tiny(d.path / "run");
    std::size_t seen = 0;
    RunOptions opts;
    opts.on_round = [&](const server::RoundReport& r) { CHECK(r.round == ++seen); };
    auto result = run_experiment(c, opts);
    CHECK(seen == 3);
    CHECK(result.reports.size() == 3);
    CHECK(slurp(d.path / "run" / "metrics.csv") == format_csv(result.reports));
    CHECK(parse_json_reports(slurp(d.path / "run" / "rounds.json")).size() == 3);
    CHECK(std::filesystem::exists(d.path / "run" / "summary.json"));
    CHECK(result.summary.rounds == 3);
}

TEST_CASE("same config and seed give identical metrics") {
    TempDir d;
    auto c = tiny(d.path / "a");
    auto a = run_experiment(c, {false, {}});
    c.threads = 3;
    auto b = run_experiment(c, {false, {}});
    CHECK(format_csv(a.reports) == format_csv(b.reports));
    c.seed = 1;
    auto other = run_experiment(c, {false, {}});
    CHECK_FALSE(format_csv(a.reports) == format_csv(other.reports));
}

TEST_CASE("summary statistics") {
    std::vector<server::RoundReport> reports;
    for (std::size_t t = 1; t <= 7; ++t) {
        auto r = sample_report(t, t <= 2);
        r.mean_accuracy = 0.1 * static_cast<double>(t);
        reports.push_back(r);
    }
    auto s = summarize(reports);
    CHECK(s.rounds == 7);
    CHECK(s.best_mean_accuracy == doctest::Approx(0.7));
    CHECK(s.final_mean_accuracy == doctest::Approx(0.5));
    CHECK(s.ccp_rounds == 2);
    CHECK(s.total_ms == doctest::Approx(7 * 3.5));
}

TEST_CASE("output directory defaults from the environment") {
    ::setenv("FEDREMA_OUT_DIR", "/tmp/elsewhere", 1);
    CHECK(default_config().output_dir == "/tmp/elsewhere");
    ::unsetenv("FEDREMA_OUT_DIR");
    CHECK(default_config().output_dir == "runs");
}
