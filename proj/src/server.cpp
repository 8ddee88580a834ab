#include "fedrema/server.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <string>
#include <thread>

#include "fedrema/errors.hpp"
#include "fedrema/rng.hpp"

namespace fedrema::server {

namespace {

template <typename Part>
Part weighted_mean_impl(std::span<const Part> parts, std::span<const double> weights) {
    if (parts.empty()) throw StructuralError("aggregation needs at least one upload");
    if (parts.size() != weights.size()) {
        throw StructuralError("aggregation got " + std::to_string(parts.size()) + " uploads and " +
                              std::to_string(weights.size()) + " weights");
    }
    Part out = parts[0];
    auto dst = nn::tensors(out);
    for (auto t : dst) std::fill(t.begin(), t.end(), 0.0);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        auto src = nn::tensors(parts[i]);
        if (src.size() != dst.size()) {
            throw StructuralError("upload " + std::to_string(i) + " has a different layer count");
        }
        for (std::size_t t = 0; t < dst.size(); ++t) {
            if (src[t].size() != dst[t].size()) {
                throw StructuralError("upload " + std::to_string(i) + " tensor " + std::to_string(t) +
                                      " has " + std::to_string(src[t].size()) + " values, expected " +
                                      std::to_string(dst[t].size()));
            }
            const double w = weights[i];
            for (std::size_t e = 0; e < dst[t].size(); ++e) dst[t][e] += w * src[t][e];
        }
    }
    return out;
}

void train_clients(RoundState& state, std::span<const data::ClientDataset> clients, const TrainingConfig& training,
                   std::size_t round) {
    const std::size_t k = clients.size();
    auto train_one = [&](std::size_t c) {
        nn::TrainOptions opts{training.epochs, training.batch_size, training.lr,
                              derive_seed(state.seed, Stream::client_train, round, c)};
        state.models[c] = nn::local_train(std::move(state.models[c]), clients[c].train, opts);
    };
    const std::size_t workers = std::min(std::max<std::size_t>(training.threads, 1), k);
    if (workers <= 1) {
        for (std::size_t c = 0; c < k; ++c) train_one(c);
        return;
    }
    std::vector<std::exception_ptr> errors(k);
    std::atomic<std::size_t> next{0};
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t c = next++; c < k; c = next++) {
                    try {
                        train_one(c);
                    } catch (...) {
                        errors[c] = std::current_exception();
                    }
                }
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

struct Similarity {
    std::vector<matching::RelevantSet> sets;
    double delta_s_bar = 0.0;
};

Similarity measure_similarity(std::span<const nn::Classifier> classifiers, const FedRemaOptions& opts,
                              std::uint64_t seed, std::size_t round) {
    const std::size_t feature_dim = classifiers.front().feature_dim();
    std::vector<std::vector<double>> probes;
    const std::size_t n_probes = std::max<std::size_t>(1, opts.n_probes);
    for (std::size_t p = 0; p < n_probes; ++p) {
        probes.push_back(
            matching::sample_probe(feature_dim, derive_seed(seed, Stream::probe, opts.resample_probe ? round : 0, p)));
    }
    const auto logits = matching::probe_soft_logits(classifiers, probes, opts.temperature);
    const auto s = matching::relativity_matrix(logits);
    const auto boundary =
        opts.paper_literal_mds ? matching::SegmentBoundary::paper_literal : matching::SegmentBoundary::above_gap;
    Similarity out;
    for (std::size_t k = 0; k < classifiers.size(); ++k) {
        out.sets.push_back(matching::mds(s.row(k), k, boundary));
        out.delta_s_bar += out.sets.back().max_gap;
    }
    return out;
}

}  // namespace

std::string_view to_string(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::local: return "local";
        case StrategyKind::fedavg: return "fedavg";
        case StrategyKind::fedper: return "fedper";
        case StrategyKind::fedrema: return "fedrema";
    }
    return "unknown";
}

StrategyKind parse_strategy(std::string_view name) {
    for (auto k : {StrategyKind::local, StrategyKind::fedavg, StrategyKind::fedper, StrategyKind::fedrema}) {
        if (name == to_string(k)) return k;
    }
    throw ConfigError("unknown strategy '" + std::string(name) + "' (expected local, fedavg, fedper or fedrema)");
}

RoundState RoundState::initial(const nn::ModelParams& init, std::span<const data::ClientDataset> clients,
                               const Strategy& strategy, std::uint64_t seed) {
    if (clients.empty()) throw ConfigError("no clients");
    RoundState s;
    s.models.assign(clients.size(), init);
    for (const auto& c : clients) s.dataset_sizes.push_back(c.train.size());
    s.tracker = matching::CcpTracker(strategy.fedrema.delta);
    s.dependency = matching::DependencyMap(clients.size());
    s.seed = seed;
    return s;
}

std::vector<double> size_weights(std::span<const std::size_t> sizes) {
    const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    if (total == 0) throw StructuralError("aggregation weights: total dataset size is zero");
    std::vector<double> w(sizes.size());
    for (std::size_t i = 0; i < sizes.size(); ++i) w[i] = static_cast<double>(sizes[i]) / static_cast<double>(total);
    return w;
}

nn::FeatureExtractor weighted_mean(std::span<const nn::FeatureExtractor> parts, std::span<const double> weights) {
    return weighted_mean_impl(parts, weights);
}

nn::Classifier weighted_mean(std::span<const nn::Classifier> parts, std::span<const double> weights) {
    return weighted_mean_impl(parts, weights);
}

nn::FeatureExtractor aggregate_extractors(std::span<const nn::FeatureExtractor> uploads,
                                          std::span<const std::size_t> sizes) {
    return weighted_mean(uploads, size_weights(sizes));
}

nn::Classifier aggregate_classifiers_ccp(std::span<const nn::Classifier> uploads, std::span<const std::size_t> sizes,
                                         const matching::RelevantSet& relevant) {
    if (relevant.peers.empty()) throw StructuralError("relevant set is empty");
    if (uploads.size() != sizes.size()) throw StructuralError("uploads and sizes differ in length");
    std::vector<nn::Classifier> chosen;
    std::vector<std::size_t> chosen_sizes;
    for (std::size_t i : relevant.peers) {
        if (i >= uploads.size()) throw StructuralError("relevant set names unknown client " + std::to_string(i));
        chosen.push_back(uploads[i]);
        chosen_sizes.push_back(sizes[i]);
    }
    return weighted_mean(std::span<const nn::Classifier>(chosen), size_weights(chosen_sizes));
}

nn::Classifier aggregate_classifiers_post(std::span<const nn::Classifier> uploads, std::span<const double> weights) {
    return weighted_mean(uploads, weights);
}

double evaluate(const nn::ModelParams& params, const nn::LabeledBatch& test) {
    if (test.empty()) throw ParameterError("evaluate: empty test set");
    const auto pred = nn::predict(params, test.inputs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test.labels[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

RoundReport run_round(RoundState& state, const Strategy& strategy, std::span<const data::ClientDataset> clients,
                      const TrainingConfig& training) {
    const auto started = std::chrono::steady_clock::now();
    const std::size_t k = clients.size();
    if (state.models.size() != k || state.dataset_sizes.size() != k) {
        throw StructuralError("round state holds " + std::to_string(state.models.size()) + " models for " +
                              std::to_string(k) + " clients");
    }
    const std::size_t round = state.round + 1;
    RoundReport report;
    report.round = round;

    train_clients(state, clients, training, round);

    if (strategy.kind != StrategyKind::local) {
        std::vector<nn::FeatureExtractor> extractors;
        std::vector<nn::Classifier> classifiers;
        extractors.reserve(k);
        classifiers.reserve(k);
        for (auto& m : state.models) {
            extractors.push_back(std::move(m.extractor));
            classifiers.push_back(std::move(m.classifier));
        }
        const auto global_extractor = aggregate_extractors(extractors, state.dataset_sizes);

        std::vector<nn::Classifier> personalized;
        switch (strategy.kind) {
            case StrategyKind::fedavg:
                personalized.assign(k, weighted_mean(std::span<const nn::Classifier>(classifiers),
                                                     size_weights(state.dataset_sizes)));
                break;
            case StrategyKind::fedper:
                personalized = std::move(classifiers);
                break;
            case StrategyKind::fedrema: {
                const auto& opts = strategy.fedrema;
                const bool colearn = opts.force_ccp || state.tracker.active();
                report.ccp_active = colearn;
                if (colearn) {
                    auto sim = measure_similarity(classifiers, opts, state.seed, round);
                    if (opts.force_all_relevant) {
                        for (auto& set : sim.sets) {
                            set.peers.resize(k);
                            std::iota(set.peers.begin(), set.peers.end(), std::size_t{0});
                        }
                    }
                    for (std::size_t c = 0; c < k; ++c) {
                        personalized.push_back(aggregate_classifiers_ccp(classifiers, state.dataset_sizes, sim.sets[c]));
                        report.relevant_sets.push_back(sim.sets[c].peers);
                    }
                    state.dependency.record(sim.sets);
                    report.delta_s_bar = sim.delta_s_bar;
                    if (state.tracker.active()) {
                        std::vector<double> gaps;
                        for (const auto& set : sim.sets) gaps.push_back(set.max_gap);
                        state.tracker.update(gaps);
                    }
                } else {
                    if (opts.always_probe) {
                        report.delta_s_bar = measure_similarity(classifiers, opts, state.seed, round).delta_s_bar;
                    }
                    for (std::size_t c = 0; c < k; ++c) {
                        personalized.push_back(aggregate_classifiers_post(classifiers, state.dependency.weights(c)));
                    }
                }
                break;
            }
            case StrategyKind::local:
                break;
        }
        for (std::size_t c = 0; c < k; ++c) {
            state.models[c].extractor = global_extractor;
            state.models[c].classifier = std::move(personalized[c]);
        }
    }

    for (std::size_t c = 0; c < k; ++c) {
        if (!nn::all_finite(state.models[c])) {
            throw NumericError("round " + std::to_string(round) + ", client " + std::to_string(c) +
                               ": non-finite parameters after aggregation");
        }
    }

    report.accuracy.resize(k);
    for (std::size_t c = 0; c < k; ++c) report.accuracy[c] = evaluate(state.models[c], clients[c].test);
    report.mean_accuracy = std::accumulate(report.accuracy.begin(), report.accuracy.end(), 0.0) / static_cast<double>(k);
    state.round = round;
    report.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return report;
}

}  // namespace fedrema::server
