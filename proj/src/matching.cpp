#include "fedrema/matching.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "fedrema/errors.hpp"
#include "fedrema/rng.hpp"

namespace fedrema::matching {

std::vector<double> sample_probe(std::size_t feature_dim, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> probe(feature_dim);
    for (double& v : probe) v = u(rng);
    return probe;
}

SoftLogits probe_soft_logits(std::span<const nn::Classifier> classifiers, std::span<const double> probe,
                             double temperature) {
    if (!(temperature > 0.0)) throw ParameterError("probe temperature must be positive");
    SoftLogits out;
    out.per_client.reserve(classifiers.size());
    for (std::size_t k = 0; k < classifiers.size(); ++k) {
        if (classifiers[k].feature_dim() != probe.size()) {
            throw StructuralError("client " + std::to_string(k) + ": classifier takes " +
                                  std::to_string(classifiers[k].feature_dim()) + " features, probe has " +
                                  std::to_string(probe.size()));
        }
        out.per_client.push_back(nn::softmax(nn::classifier_logits(classifiers[k], probe), temperature));
    }
    return out;
}

SoftLogits probe_soft_logits(std::span<const nn::Classifier> classifiers,
                             std::span<const std::vector<double>> probes, double temperature) {
    if (probes.empty()) throw ParameterError("at least one probe is required");
    SoftLogits acc = probe_soft_logits(classifiers, probes[0], temperature);
    if (probes.size() == 1) return acc;
    for (std::size_t p = 1; p < probes.size(); ++p) {
        SoftLogits next = probe_soft_logits(classifiers, probes[p], temperature);
        for (std::size_t k = 0; k < acc.per_client.size(); ++k) {
            for (std::size_t c = 0; c < acc.per_client[k].size(); ++c) acc.per_client[k][c] += next.per_client[k][c];
        }
    }
    const double inv = 1.0 / static_cast<double>(probes.size());
    for (auto& p : acc.per_client) {
        for (double& v : p) v *= inv;
    }
    return acc;
}

RelativityMatrix relativity_matrix(const SoftLogits& logits) {
    const std::size_t k = logits.num_clients();
    if (k == 0) throw StructuralError("relativity matrix needs at least one client");
    const std::size_t dim = logits.per_client[0].size();
    std::vector<double> norms(k);
    for (std::size_t i = 0; i < k; ++i) {
        const auto& p = logits.per_client[i];
        if (p.size() != dim) throw StructuralError("soft logits of client " + std::to_string(i) + " differ in length");
        double s = 0.0;
        for (double v : p) s += v * v;
        norms[i] = std::sqrt(s);
        assert(norms[i] > 0.0 && "softmax outputs are strictly positive");
    }
    RelativityMatrix m(k);
    for (std::size_t i = 0; i < k; ++i) {
        m(i, i) = 1.0;
        for (std::size_t j = i + 1; j < k; ++j) {
            const auto& a = logits.per_client[i];
            const auto& b = logits.per_client[j];
            double d = 0.0;
            for (std::size_t c = 0; c < dim; ++c) d += a[c] * b[c];
            const double s = std::min(1.0, d / (norms[i] * norms[j]));
            m(i, j) = s;
            m(j, i) = s;
        }
    }
    return m;
}

RelevantSet mds(std::span<const double> relevance, std::size_t client, SegmentBoundary boundary) {
    const std::size_t k = relevance.size();
    RelevantSet out;
    out.client = client;
    std::vector<std::size_t> idx(k);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (k < 2) {
        out.peers = idx;
        return out;
    }
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return relevance[a] < relevance[b]; });

    std::size_t m = 0;
    double best = relevance[idx[1]] - relevance[idx[0]];
    for (std::size_t i = 1; i + 1 < k; ++i) {
        const double gap = relevance[idx[i + 1]] - relevance[idx[i]];
        if (gap > best) {
            best = gap;
            m = i;
        }
    }
    out.max_gap = best;
    if (!(best > 0.0)) {
        out.peers.resize(k);
        std::iota(out.peers.begin(), out.peers.end(), std::size_t{0});
        out.max_gap = 0.0;
        return out;
    }
    const std::size_t first = boundary == SegmentBoundary::above_gap ? m + 1 : m;
    out.peers.assign(idx.begin() + static_cast<std::ptrdiff_t>(first), idx.end());
    std::sort(out.peers.begin(), out.peers.end());
    return out;
}

CcpTracker::CcpTracker(double threshold) : threshold_(threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ParameterError("CCP threshold must lie in (0, 1)");
}

bool CcpTracker::update(std::span<const double> per_client_gaps) {
    if (!active_) throw std::logic_error("CcpTracker::update called after the co-learning period ended");
    if (per_client_gaps.empty()) throw StructuralError("CcpTracker::update: no per-client gaps");
    // Summed, not averaged: the ratio below is scale free.
    double sum = 0.0;
    for (double g : per_client_gaps) sum += g;
    history_.push_back(sum);
    max_ = std::max(max_, sum);
    last_ratio_ = max_ > 0.0 ? sum / max_ : 1.0;
    active_ = last_ratio_ > threshold_;
    return active_;
}

void DependencyMap::record(std::span<const RelevantSet> sets) {
    for (const auto& s : sets) {
        if (s.client >= k_) throw StructuralError("relevant set for unknown client " + std::to_string(s.client));
        for (std::size_t i : s.peers) {
            if (i >= k_) throw StructuralError("relevant set names unknown client " + std::to_string(i));
            ++counts_[s.client * k_ + i];
        }
    }
}

std::vector<double> DependencyMap::weights(std::size_t k) const {
    if (k >= k_) throw StructuralError("dependency weights for unknown client " + std::to_string(k));
    std::vector<double> w(k_, 0.0);
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < k_; ++i) total += (*this)(k, i);
    if (total == 0) {
        std::clog << "warning: dependency map row " << k << " is empty; using self-only weights\n";
        w[k] = 1.0;
        return w;
    }
    for (std::size_t i = 0; i < k_; ++i) {
        w[i] = static_cast<double>((*this)(k, i)) / static_cast<double>(total);
    }
    return w;
}

}  // namespace fedrema::matching
