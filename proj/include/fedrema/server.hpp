#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedrema/data.hpp"
#include "fedrema/matching.hpp"
#include "fedrema/nn.hpp"

namespace fedrema::server {

enum class StrategyKind { local, fedavg, fedper, fedrema };

std::string_view to_string(StrategyKind kind);
// Throws ConfigError for unknown names.
StrategyKind parse_strategy(std::string_view name);

struct FedRemaOptions {
    double delta = 0.5;        // CCP threshold
    double temperature = 0.5;  // soft-logit temperature M
    bool paper_literal_mds = false;
    std::size_t n_probes = 1;
    bool resample_probe = true;  // fresh probe every round
    bool always_probe = false;   // keep measuring similarity after the CCP
    // Diagnostics for the reduction-to-FedAvg check.
    bool force_all_relevant = false;
    bool force_ccp = false;

    bool operator==(const FedRemaOptions&) const = default;
};

struct Strategy {
    StrategyKind kind = StrategyKind::fedrema;
    FedRemaOptions fedrema;

    bool operator==(const Strategy&) const = default;
};

struct TrainingConfig {
    std::size_t epochs = 5;
    std::size_t batch_size = 100;
    double lr = 0.01;
    std::size_t threads = 1;  // client training workers; 1 = sequential
};

struct RoundState {
    std::size_t round = 0;  // completed rounds
    std::vector<nn::ModelParams> models;
    std::vector<std::size_t> dataset_sizes;
    matching::CcpTracker tracker;
    matching::DependencyMap dependency;
    std::uint64_t seed = 0;

    // Every client starts from the same initial model.
    static RoundState initial(const nn::ModelParams& init, std::span<const data::ClientDataset> clients,
                              const Strategy& strategy, std::uint64_t seed);
};

struct RoundReport {
    std::size_t round = 0;  // 1-based
    std::vector<double> accuracy;
    double mean_accuracy = 0.0;
    std::optional<double> delta_s_bar;  // summed MDS gaps, when similarities were measured
    bool ccp_active = false;            // the co-learning aggregation path ran this round
    std::vector<std::vector<std::size_t>> relevant_sets;  // per client, co-learning rounds only
    double wall_ms = 0.0;

    bool operator==(const RoundReport&) const = default;
};

// |D_i| / sum |D_j| over the given sizes.
std::vector<double> size_weights(std::span<const std::size_t> sizes);

// Elementwise weighted mean, summed in ascending client order.
nn::FeatureExtractor weighted_mean(std::span<const nn::FeatureExtractor> parts, std::span<const double> weights);
nn::Classifier weighted_mean(std::span<const nn::Classifier> parts, std::span<const double> weights);

// Global extractor: size-weighted mean over all uploads.
nn::FeatureExtractor aggregate_extractors(std::span<const nn::FeatureExtractor> uploads,
                                          std::span<const std::size_t> sizes);

// Personalized classifier: size-weighted mean over the relevant peers.
nn::Classifier aggregate_classifiers_ccp(std::span<const nn::Classifier> uploads, std::span<const std::size_t> sizes,
                                         const matching::RelevantSet& relevant);

// Personalized classifier from dependency weights (must sum to 1).
nn::Classifier aggregate_classifiers_post(std::span<const nn::Classifier> uploads, std::span<const double> weights);

// Fraction of argmax-correct predictions.
double evaluate(const nn::ModelParams& params, const nn::LabeledBatch& test);

// One communication round: local training, aggregation, broadcast, evaluation.
RoundReport run_round(RoundState& state, const Strategy& strategy, std::span<const data::ClientDataset> clients,
                      const TrainingConfig& training);

}  // namespace fedrema::server
