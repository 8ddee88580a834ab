#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "fedrema/nn.hpp"

namespace fedrema::data {

// A labeled sample pool that client datasets are drawn from.
struct Pool {
    nn::LabeledBatch samples;
    std::size_t num_classes = 0;

    std::size_t input_dim() const noexcept { return samples.inputs.cols(); }
    std::vector<std::size_t> class_counts() const;
};

struct SyntheticSpec {
    std::size_t num_classes = 10;
    std::size_t input_dim = 64;
    double class_separation = 2.0;
    std::size_t samples_per_class = 1000;
    std::uint64_t seed = 0;
};

// Class c is drawn as prototype_c + N(0, I), where the prototypes are
// class_separation times an orthonormal set of seeded random directions.
// The pool is class balanced and ordered by class.
Pool generate_synthetic(const SyntheticSpec& spec);

struct ClientDataset {
    nn::LabeledBatch train;
    nn::LabeledBatch test;
    std::vector<std::size_t> class_histogram;  // train counts per class
    std::size_t group = 0;
};

struct PartitionSpec {
    std::size_t num_clients = 10;
    std::size_t num_classes = 10;
    std::size_t samples_per_client = 600;  // train + test
    double iid_fraction = 0.2;             // s
    std::size_t num_groups = 5;
    std::size_t dominant_per_group = 3;
    double train_fraction = 0.8;
    // Empty means the default map: group g dominates labels
    // (stride*g + j) mod C for j < dominant_per_group, stride = C / num_groups.
    std::vector<std::vector<int>> dominant_labels;
    // Default: clients draw independently from the pool (a source sample may
    // reach several clients). When false, no pool sample is used twice.
    bool with_replacement = true;
    std::uint64_t seed = 0;

    std::size_t group_of_client(std::size_t client) const { return client % num_groups; }
    std::vector<std::vector<int>> resolved_dominant_labels() const;
    std::size_t train_size() const;
    std::size_t test_size() const { return samples_per_client - train_size(); }

    // Throws ConfigError on inconsistent settings.
    void validate() const;
};

// Per-class sample counts for one split of one client: round(s*n) samples
// spread evenly over all classes (remainder to classes client, client+1, ...),
// the rest spread evenly over the group's dominant labels (remainder to the
// first labels in the group's list). Depends only on the partition settings, not the seed.
std::vector<std::size_t> target_histogram(const PartitionSpec& spec, std::size_t client, std::size_t n);

std::vector<ClientDataset> partition(const Pool& pool, const PartitionSpec& spec);

// IDX images (magic 0x00000803) and labels (0x00000801). Pixels are scaled
// to [0, 1] and images flattened row-major.
Pool load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

}  // namespace fedrema::data
