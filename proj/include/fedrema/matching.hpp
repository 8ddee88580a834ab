#pragma once

// Server-side matching kernel: soft-logit probing, the relativity matrix,
// maximum difference segmentation, the co-learning period tracker and the
// dependency map.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedrema/nn.hpp"

namespace fedrema::matching {

// One probability vector per client, all answering the same probe.
struct SoftLogits {
    std::vector<std::vector<double>> per_client;

    std::size_t num_clients() const noexcept { return per_client.size(); }
};

// Probe vector with every element drawn uniformly from [0, 1).
std::vector<double> sample_probe(std::size_t feature_dim, std::uint64_t seed);

// p_k = softmax((W_k * probe + b_k) / temperature) for every classifier.
SoftLogits probe_soft_logits(std::span<const nn::Classifier> classifiers, std::span<const double> probe,
                             double temperature);

// Averages soft logits over several probes (one shared set for all clients).
SoftLogits probe_soft_logits(std::span<const nn::Classifier> classifiers,
                             std::span<const std::vector<double>> probes, double temperature);

// Symmetric K x K cosine similarities of soft logits.
class RelativityMatrix {
public:
    RelativityMatrix() = default;
    explicit RelativityMatrix(std::size_t k) : k_(k), s_(k * k, 0.0) {}

    std::size_t size() const noexcept { return k_; }
    double operator()(std::size_t i, std::size_t j) const { return s_[i * k_ + j]; }
    double& operator()(std::size_t i, std::size_t j) { return s_[i * k_ + j]; }
    std::span<const double> row(std::size_t i) const { return {s_.data() + i * k_, k_}; }

private:
    std::size_t k_ = 0;
    std::vector<double> s_;
};

RelativityMatrix relativity_matrix(const SoftLogits& logits);

enum class SegmentBoundary {
    above_gap,     // clients strictly above the largest gap
    paper_literal  // additionally the client just below the gap
};

struct RelevantSet {
    std::size_t client = 0;
    std::vector<std::size_t> peers;  // sorted ascending
    double max_gap = 0.0;

    bool operator==(const RelevantSet&) const = default;
};

// Maximum difference segmentation over a relevance vector. Values are sorted
// ascending (ties by client id); the first largest consecutive gap splits
// them and the high side is returned. All-equal values select everyone.
RelevantSet mds(std::span<const double> relevance, std::size_t client,
                SegmentBoundary boundary = SegmentBoundary::above_gap);

// Tracks the summed per-client max gaps and decides whether the critical
// co-learning period is still running: active while the current sum over
// the historical maximum exceeds the threshold. Once inactive, stays so.
class CcpTracker {
public:
    explicit CcpTracker(double threshold = 0.5);

    // Records one round of per-client gaps and returns the new active flag.
    // Throws std::logic_error if called after the period ended.
    bool update(std::span<const double> per_client_gaps);

    bool active() const noexcept { return active_; }
    double threshold() const noexcept { return threshold_; }
    double historical_max() const noexcept { return max_; }
    const std::vector<double>& history() const noexcept { return history_; }
    // Ratio computed by the last update (1 when nothing recorded yet).
    double last_ratio() const noexcept { return last_ratio_; }

private:
    double threshold_;
    double max_ = 0.0;
    double last_ratio_ = 1.0;
    bool active_ = true;
    std::vector<double> history_;
};

// g(k, i): how many co-learning rounds client k picked client i as a peer.
class DependencyMap {
public:
    explicit DependencyMap(std::size_t num_clients = 0)
        : k_(num_clients), counts_(num_clients * num_clients, 0) {}

    std::size_t size() const noexcept { return k_; }
    std::uint64_t operator()(std::size_t k, std::size_t i) const { return counts_[k * k_ + i]; }

    void record(std::span<const RelevantSet> sets);

    // Row k normalized to sum 1. An all-zero row falls back to weight 1 on k
    // and logs a warning.
    std::vector<double> weights(std::size_t k) const;

private:
    std::size_t k_;
    std::vector<std::uint64_t> counts_;
};

}  // namespace fedrema::matching
