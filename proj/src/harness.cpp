#include "fedrema/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <system_error>

#include "json.hpp"

#include "fedrema/rng.hpp"

namespace fedrema::harness {

namespace {

using nlohmann::json;

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

struct BadValue {
    std::string message;
};

double to_double(const std::string& s) {
    double v = 0.0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) throw BadValue{"expected a number, got '" + s + "'"};
    return v;
}

std::uint64_t to_uint(const std::string& s) {
    std::uint64_t v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) {
        throw BadValue{"expected a non-negative integer, got '" + s + "'"};
    }
    return v;
}

bool to_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw BadValue{"expected true or false, got '" + s + "'"};
}

struct Field {
    std::string section;
    std::string key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename T>
Field size_field(std::string section, std::string key, T ExperimentConfig::*member) {
    return {std::move(section), std::move(key),
            [member](const ExperimentConfig& c) { return std::to_string(c.*member); },
            [member](ExperimentConfig& c, const std::string& v) { c.*member = static_cast<T>(to_uint(v)); }};
}

Field real_field(std::string section, std::string key, double ExperimentConfig::*member) {
    return {std::move(section), std::move(key),
            [member](const ExperimentConfig& c) { return format_double(c.*member); },
            [member](ExperimentConfig& c, const std::string& v) { c.*member = to_double(v); }};
}

Field bool_field(std::string section, std::string key, bool ExperimentConfig::*member) {
    return {std::move(section), std::move(key),
            [member](const ExperimentConfig& c) { return std::string(c.*member ? "true" : "false"); },
            [member](ExperimentConfig& c, const std::string& v) { c.*member = to_bool(v); }};
}

Field string_field(std::string section, std::string key, std::string ExperimentConfig::*member) {
    return {std::move(section), std::move(key), [member](const ExperimentConfig& c) { return c.*member; },
            [member](ExperimentConfig& c, const std::string& v) { c.*member = v; }};
}

Field fedrema_real(std::string key, double server::FedRemaOptions::*member) {
    return {"fedrema", std::move(key),
            [member](const ExperimentConfig& c) { return format_double(c.strategy.fedrema.*member); },
            [member](ExperimentConfig& c, const std::string& v) { c.strategy.fedrema.*member = to_double(v); }};
}

Field fedrema_bool(std::string key, bool server::FedRemaOptions::*member) {
    return {"fedrema", std::move(key),
            [member](const ExperimentConfig& c) { return std::string(c.strategy.fedrema.*member ? "true" : "false"); },
            [member](ExperimentConfig& c, const std::string& v) { c.strategy.fedrema.*member = to_bool(v); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back({"experiment", "strategy",
                     [](const ExperimentConfig& c) { return std::string(server::to_string(c.strategy.kind)); },
                     [](ExperimentConfig& c, const std::string& v) {
                         try {
                             c.strategy.kind = server::parse_strategy(v);
                         } catch (const ConfigError& e) {
                             throw BadValue{e.what()};
                         }
                     }});
        f.push_back(size_field("experiment", "rounds", &ExperimentConfig::rounds));
        f.push_back(size_field("experiment", "seed", &ExperimentConfig::seed));
        f.push_back(string_field("experiment", "output_dir", &ExperimentConfig::output_dir));
        f.push_back(size_field("experiment", "threads", &ExperimentConfig::threads));

        f.push_back({"data", "source",
                     [](const ExperimentConfig& c) {
                         return std::string(c.source == DataSource::synthetic ? "synthetic" : "idx");
                     },
                     [](ExperimentConfig& c, const std::string& v) {
                         if (v == "synthetic") {
                             c.source = DataSource::synthetic;
                         } else if (v == "idx") {
                             c.source = DataSource::idx;
                         } else {
                             throw BadValue{"expected synthetic or idx, got '" + v + "'"};
                         }
                     }});
        f.push_back(size_field("data", "num_clients", &ExperimentConfig::num_clients));
        f.push_back(size_field("data", "num_classes", &ExperimentConfig::num_classes));
        f.push_back(size_field("data", "samples_per_client", &ExperimentConfig::samples_per_client));
        f.push_back(real_field("data", "iid_fraction", &ExperimentConfig::iid_fraction));
        f.push_back(real_field("data", "train_fraction", &ExperimentConfig::train_fraction));
        f.push_back(size_field("data", "num_groups", &ExperimentConfig::num_groups));
        f.push_back(size_field("data", "dominant_per_group", &ExperimentConfig::dominant_per_group));
        f.push_back(bool_field("data", "with_replacement", &ExperimentConfig::with_replacement));
        f.push_back(size_field("data", "input_dim", &ExperimentConfig::input_dim));
        f.push_back(real_field("data", "class_separation", &ExperimentConfig::class_separation));
        f.push_back(size_field("data", "samples_per_class", &ExperimentConfig::samples_per_class));
        f.push_back(string_field("data", "idx_images", &ExperimentConfig::idx_images));
        f.push_back(string_field("data", "idx_labels", &ExperimentConfig::idx_labels));

        f.push_back(size_field("model", "hidden_dim", &ExperimentConfig::hidden_dim));
        f.push_back(size_field("model", "feature_dim", &ExperimentConfig::feature_dim));
        f.push_back(bool_field("model", "relu_features", &ExperimentConfig::relu_features));
        f.push_back(bool_field("model", "zero_classifier", &ExperimentConfig::zero_classifier));

        f.push_back(size_field("training", "epochs", &ExperimentConfig::epochs));
        f.push_back(size_field("training", "batch_size", &ExperimentConfig::batch_size));
        f.push_back(real_field("training", "lr", &ExperimentConfig::lr));

        f.push_back(fedrema_real("delta", &server::FedRemaOptions::delta));
        f.push_back(fedrema_real("temperature", &server::FedRemaOptions::temperature));
        f.push_back(fedrema_bool("paper_literal_mds", &server::FedRemaOptions::paper_literal_mds));
        f.push_back({"fedrema", "n_probes",
                     [](const ExperimentConfig& c) { return std::to_string(c.strategy.fedrema.n_probes); },
                     [](ExperimentConfig& c, const std::string& v) { c.strategy.fedrema.n_probes = to_uint(v); }});
        f.push_back(fedrema_bool("resample_probe", &server::FedRemaOptions::resample_probe));
        f.push_back(fedrema_bool("always_probe", &server::FedRemaOptions::always_probe));
        f.push_back(fedrema_bool("force_all_relevant", &server::FedRemaOptions::force_all_relevant));
        f.push_back(fedrema_bool("force_ccp", &server::FedRemaOptions::force_ccp));
        return f;
    }();
    return table;
}

void require(bool ok, const std::string& field, const std::string& what) {
    if (!ok) throw ValidationError(field, what);
}

json report_to_json(const server::RoundReport& r) {
    json j;
    j["round"] = r.round;
    j["accuracy"] = r.accuracy;
    j["mean_accuracy"] = r.mean_accuracy;
    j["delta_s_bar"] = r.delta_s_bar ? json(*r.delta_s_bar) : json(nullptr);
    j["ccp_active"] = r.ccp_active;
    json sets = json::array();
    for (const auto& s : r.relevant_sets) {
        auto sorted = s;
        std::sort(sorted.begin(), sorted.end());
        sets.push_back(sorted);
    }
    j["relevant_sets"] = std::move(sets);
    j["wall_ms"] = r.wall_ms;
    return j;
}

server::RoundReport report_from_json(const json& j) {
    server::RoundReport r;
    r.round = j.at("round").get<std::size_t>();
    r.accuracy = j.at("accuracy").get<std::vector<double>>();
    r.mean_accuracy = j.at("mean_accuracy").get<double>();
    if (!j.at("delta_s_bar").is_null()) r.delta_s_bar = j.at("delta_s_bar").get<double>();
    r.ccp_active = j.at("ccp_active").get<bool>();
    r.relevant_sets = j.at("relevant_sets").get<std::vector<std::vector<std::size_t>>>();
    r.wall_ms = j.at("wall_ms").get<double>();
    return r;
}

json summary_to_json(const Summary& s) {
    return {{"rounds", s.rounds},
            {"best_mean_accuracy", s.best_mean_accuracy},
            {"final_mean_accuracy", s.final_mean_accuracy},
            {"ccp_rounds", s.ccp_rounds},
            {"total_ms", s.total_ms}};
}

}  // namespace

ExperimentConfig default_config() {
    ExperimentConfig c;
    if (const char* dir = std::getenv("FEDREMA_OUT_DIR"); dir != nullptr && *dir != '\0') c.output_dir = dir;
    return c;
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig config = default_config();
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::set<std::string> seen;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigParseError("unterminated section header", lineno);
            section = trim(std::string_view(t).substr(1, t.size() - 2));
            const bool known = std::any_of(fields().begin(), fields().end(),
                                           [&](const Field& f) { return f.section == section; });
            if (!known) throw ConfigParseError("unknown section [" + section + "]", lineno);
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigParseError("expected 'key = value'", lineno);
        const std::string key = trim(std::string_view(t).substr(0, eq));
        const std::string value = trim(std::string_view(t).substr(eq + 1));
        if (section.empty()) throw ConfigParseError("key '" + key + "' appears before any [section]", lineno);
        auto it = std::find_if(fields().begin(), fields().end(),
                               [&](const Field& f) { return f.section == section && f.key == key; });
        if (it == fields().end()) throw ConfigParseError("unknown key '" + key + "' in [" + section + "]", lineno);
        if (!seen.insert(section + "." + key).second) {
            throw ConfigParseError("duplicate key '" + section + "." + key + "'", lineno);
        }
        try {
            it->set(config, value);
        } catch (const BadValue& e) {
            throw ConfigParseError(section + "." + key + ": " + e.message, lineno);
        }
    }
    validate(config);
    return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    try {
        return parse_config(text.str());
    } catch (const ConfigParseError& e) {
        throw ConfigParseError(e.detail(), e.line(), path.string());
    }
}

std::string serialize_config(const ExperimentConfig& config) {
    std::ostringstream out;
    std::string section;
    for (const auto& f : fields()) {
        if (f.section != section) {
            if (!section.empty()) out << '\n';
            section = f.section;
            out << '[' << section << "]\n";
        }
        out << f.key << " = " << f.get(config) << '\n';
    }
    return out.str();
}

void validate(const ExperimentConfig& c) {
    require(c.rounds >= 1, "experiment.rounds", "must be >= 1");
    require(c.threads >= 1, "experiment.threads", "must be >= 1");
    require(c.num_clients >= 1, "data.num_clients", "must be >= 1");
    require(c.num_classes >= 2, "data.num_classes", "must be >= 2");
    require(c.samples_per_client >= 1, "data.samples_per_client", "must be >= 1");
    require(c.iid_fraction >= 0.0 && c.iid_fraction <= 1.0, "data.iid_fraction",
            "must lie in [0, 1], got " + format_double(c.iid_fraction));
    require(c.train_fraction > 0.0 && c.train_fraction < 1.0, "data.train_fraction",
            "must lie in (0, 1), got " + format_double(c.train_fraction));
    require(c.num_groups >= 1, "data.num_groups", "must be >= 1");
    require(c.dominant_per_group >= 1 && c.dominant_per_group <= c.num_classes, "data.dominant_per_group",
            "must lie in [1, num_classes]");
    if (c.source == DataSource::synthetic) {
        require(c.input_dim >= c.num_classes, "data.input_dim", "must be >= num_classes for synthetic data");
        require(c.class_separation >= 0.0 && std::isfinite(c.class_separation), "data.class_separation",
                "must be finite and >= 0");
        require(c.samples_per_class >= 1, "data.samples_per_class", "must be >= 1");
    } else {
        require(!c.idx_images.empty(), "data.idx_images", "required when source = idx");
        require(!c.idx_labels.empty(), "data.idx_labels", "required when source = idx");
    }
    require(c.feature_dim >= 1, "model.feature_dim", "must be >= 1");
    require(c.epochs >= 1, "training.epochs", "must be >= 1");
    require(c.batch_size >= 1, "training.batch_size", "must be >= 1");
    require(c.lr > 0.0 && std::isfinite(c.lr), "training.lr", "must be > 0");
    const auto& f = c.strategy.fedrema;
    require(f.delta > 0.0 && f.delta < 1.0, "fedrema.delta", "must lie in (0, 1), got " + format_double(f.delta));
    require(f.temperature > 0.0 && std::isfinite(f.temperature), "fedrema.temperature", "must be > 0");
    require(f.n_probes >= 1, "fedrema.n_probes", "must be >= 1");
    const auto train = static_cast<std::size_t>(std::llround(c.train_fraction * static_cast<double>(c.samples_per_client)));
    require(train >= 1 && train < c.samples_per_client, "data.samples_per_client",
            "too small for a non-empty train and test split");
}

ExperimentConfig apply_overrides(ExperimentConfig config, const Overrides& o) {
    if (o.seed) config.seed = *o.seed;
    if (o.strategy) config.strategy.kind = server::parse_strategy(*o.strategy);
    if (o.rounds) config.rounds = *o.rounds;
    if (o.output_dir) config.output_dir = *o.output_dir;
    if (o.threads) config.threads = *o.threads;
    validate(config);
    return config;
}

data::PartitionSpec partition_spec(const ExperimentConfig& c) {
    data::PartitionSpec spec;
    spec.num_clients = c.num_clients;
    spec.num_classes = c.num_classes;
    spec.samples_per_client = c.samples_per_client;
    spec.iid_fraction = c.iid_fraction;
    spec.num_groups = c.num_groups;
    spec.dominant_per_group = c.dominant_per_group;
    spec.train_fraction = c.train_fraction;
    spec.with_replacement = c.with_replacement;
    spec.seed = derive_seed(c.seed, Stream::partition);
    return spec;
}

data::Pool build_pool(const ExperimentConfig& c) {
    if (c.source == DataSource::idx) {
        auto pool = data::load_idx(c.idx_images, c.idx_labels);
        if (pool.num_classes != c.num_classes) {
            throw ValidationError("data.num_classes", "IDX labels span " + std::to_string(pool.num_classes) +
                                                          " classes, config says " + std::to_string(c.num_classes));
        }
        return pool;
    }
    data::SyntheticSpec spec;
    spec.num_classes = c.num_classes;
    spec.input_dim = c.input_dim;
    spec.class_separation = c.class_separation;
    spec.samples_per_class = c.samples_per_class;
    spec.seed = c.seed;
    return data::generate_synthetic(spec);
}

std::vector<data::ClientDataset> build_clients(const ExperimentConfig& c) {
    return data::partition(build_pool(c), partition_spec(c));
}

nn::ModelParams initial_model(const ExperimentConfig& config, std::size_t input_dim) {
    nn::ModelShape shape;
    shape.input_dim = input_dim;
    shape.hidden_dims.clear();
    if (config.hidden_dim > 0) shape.hidden_dims.push_back(config.hidden_dim);
    shape.feature_dim = config.feature_dim;
    shape.num_classes = config.num_classes;
    shape.feature_activation = config.relu_features ? nn::Activation::relu : nn::Activation::identity;
    shape.zero_classifier = config.zero_classifier;
    return nn::init_model(shape, derive_seed(config.seed, Stream::model_init));
}

Summary summarize(const std::vector<server::RoundReport>& reports) {
    Summary s;
    s.rounds = reports.size();
    if (reports.empty()) return s;
    s.best_mean_accuracy = -std::numeric_limits<double>::infinity();
    for (const auto& r : reports) {
        s.best_mean_accuracy = std::max(s.best_mean_accuracy, r.mean_accuracy);
        s.ccp_rounds += r.ccp_active ? 1 : 0;
        s.total_ms += r.wall_ms;
    }
    const std::size_t tail = std::min<std::size_t>(5, reports.size());
    double acc = 0.0;
    for (std::size_t i = reports.size() - tail; i < reports.size(); ++i) acc += reports[i].mean_accuracy;
    s.final_mean_accuracy = acc / static_cast<double>(tail);
    return s;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    validate(config);
    const auto clients = build_clients(config);

    const auto init = initial_model(config, clients.front().train.inputs.cols());

    auto state = server::RoundState::initial(init, clients, config.strategy, config.seed);
    server::TrainingConfig training{config.epochs, config.batch_size, config.lr, config.threads};

    const std::filesystem::path out_dir = config.output_dir;
    if (options.write_files) {
        std::error_code ec;
        std::filesystem::create_directories(out_dir, ec);
        if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
    }

    ExperimentResult result;
    for (std::size_t t = 0; t < config.rounds; ++t) {
        result.reports.push_back(server::run_round(state, config.strategy, clients, training));
        if (options.write_files) {
            emit_metrics(result.reports, MetricsFormat::csv, out_dir / "metrics.csv");
            emit_metrics(result.reports, MetricsFormat::json, out_dir / "rounds.json");
        }
        if (options.on_round) options.on_round(result.reports.back());
    }
    result.summary = summarize(result.reports);
    if (options.write_files) write_atomic(out_dir / "summary.json", summary_to_json(result.summary).dump(2) + "\n");
    return result;
}

std::string format_csv(const std::vector<server::RoundReport>& reports) {
    std::string out = "round,client_id,accuracy,mean_accuracy,delta_s_bar,ccp_active\n";
    for (const auto& r : reports) {
        const std::string tail = "," + format_double(r.mean_accuracy) + "," +
                                 (r.delta_s_bar ? format_double(*r.delta_s_bar) : std::string()) + "," +
                                 (r.ccp_active ? "1" : "0") + "\n";
        for (std::size_t k = 0; k < r.accuracy.size(); ++k) {
            out += std::to_string(r.round) + "," + std::to_string(k) + "," + format_double(r.accuracy[k]) + tail;
        }
    }
    return out;
}

std::string format_json(const std::vector<server::RoundReport>& reports) {
    json arr = json::array();
    for (const auto& r : reports) arr.push_back(report_to_json(r));
    return arr.dump(2) + "\n";
}

std::vector<server::RoundReport> parse_json_reports(const std::string& text) {
    std::vector<server::RoundReport> out;
    try {
        for (const auto& j : json::parse(text)) out.push_back(report_from_json(j));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed round reports: ") + e.what());
    }
    return out;
}

void write_atomic(const std::filesystem::path& path, const std::string& contents) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void emit_metrics(const std::vector<server::RoundReport>& reports, MetricsFormat format,
                  const std::filesystem::path& path) {
    if (reports.empty()) throw ParameterError("emit_metrics: no reports");
    write_atomic(path, format == MetricsFormat::csv ? format_csv(reports) : format_json(reports));
}

}  // namespace fedrema::harness
