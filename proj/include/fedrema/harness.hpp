#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedrema/data.hpp"
#include "fedrema/errors.hpp"
#include "fedrema/server.hpp"

namespace fedrema::harness {

enum class DataSource { synthetic, idx };

struct ExperimentConfig {
    // [experiment]
    server::Strategy strategy;
    std::size_t rounds = 100;
    std::uint64_t seed = 0;
    std::string output_dir = "runs";
    std::size_t threads = 1;

    // [data]
    DataSource source = DataSource::synthetic;
    std::size_t num_clients = 10;
    std::size_t num_classes = 10;
    std::size_t samples_per_client = 600;
    double iid_fraction = 0.2;
    double train_fraction = 0.8;
    std::size_t num_groups = 5;
    std::size_t dominant_per_group = 3;
    bool with_replacement = true;
    std::size_t input_dim = 64;
    double class_separation = 3.0;
    std::size_t samples_per_class = 1000;
    std::string idx_images;
    std::string idx_labels;

    // [model]
    std::size_t hidden_dim = 64;  // 0 drops the ReLU layer
    std::size_t feature_dim = 32;
    bool relu_features = true;     // false: identity feature layer
    bool zero_classifier = true;   // false: Glorot-uniform classifier weights

    // [training]
    std::size_t epochs = 5;
    std::size_t batch_size = 100;
    double lr = 0.01;

    bool operator==(const ExperimentConfig&) const = default;
};

// Defaults, with output_dir taken from $FEDREMA_OUT_DIR when set.
ExperimentConfig default_config();

// Malformed config text; line() is 1-based.
class ConfigParseError : public ConfigError {
public:
    ConfigParseError(const std::string& what, std::size_t line, const std::string& source = "")
        : ConfigError((source.empty() ? "" : source + ":") + "line " + std::to_string(line) + ": " + what),
          line_(line), detail_(what) {}
    std::size_t line() const noexcept { return line_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    std::size_t line_;
    std::string detail_;
};

// A well-formed value outside its allowed range; field() is "section.key".
class ValidationError : public ConfigError {
public:
    ValidationError(const std::string& field, const std::string& what)
        : ConfigError(field + ": " + what), field_(field) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

// INI-style text: [section] headers, key = value lines, '#' or ';' comments.
// Unknown sections or keys are rejected; absent keys keep their defaults.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& config);
void validate(const ExperimentConfig& config);

// Command-line layer; set fields win over the file.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> strategy;
    std::optional<std::size_t> rounds;
    std::optional<std::string> output_dir;
    std::optional<std::size_t> threads;
};
ExperimentConfig apply_overrides(ExperimentConfig config, const Overrides& overrides);

data::PartitionSpec partition_spec(const ExperimentConfig& config);
data::Pool build_pool(const ExperimentConfig& config);
std::vector<data::ClientDataset> build_clients(const ExperimentConfig& config);
// The model every client starts from, for inputs of the given width.
nn::ModelParams initial_model(const ExperimentConfig& config, std::size_t input_dim);

struct Summary {
    std::size_t rounds = 0;
    double best_mean_accuracy = 0.0;
    double final_mean_accuracy = 0.0;  // mean over the last min(5, T) rounds
    std::size_t ccp_rounds = 0;        // rounds that took the co-learning path
    double total_ms = 0.0;
};

struct ExperimentResult {
    std::vector<server::RoundReport> reports;
    Summary summary;
};

Summary summarize(const std::vector<server::RoundReport>& reports);

struct RunOptions {
    bool write_files = true;
    std::function<void(const server::RoundReport&)> on_round;
};

// Runs config.rounds rounds. With write_files, metrics.csv and rounds.json in
// config.output_dir are rewritten atomically after every round, so an
// interrupted run leaves both readable through the last finished round.
ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

enum class MetricsFormat { csv, json };

// CSV columns: round,client_id,accuracy,mean_accuracy,delta_s_bar,ccp_active
std::string format_csv(const std::vector<server::RoundReport>& reports);
std::string format_json(const std::vector<server::RoundReport>& reports);
std::vector<server::RoundReport> parse_json_reports(const std::string& text);

// Writes via a temporary file and rename. Throws IoError naming the path.
void write_atomic(const std::filesystem::path& path, const std::string& contents);
void emit_metrics(const std::vector<server::RoundReport>& reports, MetricsFormat format,
                  const std::filesystem::path& path);

}  // namespace fedrema::harness
