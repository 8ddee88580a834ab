#include "fedrema/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <string>

#include "fedrema/errors.hpp"
#include "fedrema/rng.hpp"

namespace fedrema::data {

std::vector<std::size_t> Pool::class_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (int y : samples.labels) ++counts[static_cast<std::size_t>(y)];
    return counts;
}

Pool generate_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
    if (spec.input_dim < spec.num_classes) {
        throw ConfigError("synthetic input_dim (" + std::to_string(spec.input_dim) +
                          ") must be >= num_classes (" + std::to_string(spec.num_classes) + ")");
    }
    if (!(spec.class_separation >= 0.0) || !std::isfinite(spec.class_separation)) {
        throw ConfigError("class_separation must be a finite value >= 0");
    }
    if (spec.samples_per_class == 0) throw ConfigError("samples_per_class must be positive");

    const std::size_t d = spec.input_dim;
    const std::size_t classes = spec.num_classes;
    Rng rng(derive_seed(spec.seed, Stream::synthetic_data));
    std::normal_distribution<double> normal(0.0, 1.0);

    // Gram-Schmidt on Gaussian directions. d >= C makes rank deficiency a
    // measure-zero event; redraw if it happens anyway.
    std::vector<std::vector<double>> basis;
    while (basis.size() < classes) {
        std::vector<double> v(d);
        for (double& x : v) x = normal(rng);
        for (const auto& q : basis) {
            double p = 0.0;
            for (std::size_t i = 0; i < d; ++i) p += v[i] * q[i];
            for (std::size_t i = 0; i < d; ++i) v[i] -= p * q[i];
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-8) continue;
        for (double& x : v) x /= norm;
        basis.push_back(std::move(v));
    }

    Pool pool;
    pool.num_classes = classes;
    const std::size_t total = classes * spec.samples_per_class;
    pool.samples.inputs = nn::Matrix(total, d);
    pool.samples.labels.resize(total);
    std::size_t r = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t n = 0; n < spec.samples_per_class; ++n, ++r) {
            auto row = pool.samples.inputs.row(r);
            for (std::size_t i = 0; i < d; ++i) row[i] = spec.class_separation * basis[c][i] + normal(rng);
            pool.samples.labels[r] = static_cast<int>(c);
        }
    }
    return pool;
}

std::vector<std::vector<int>> PartitionSpec::resolved_dominant_labels() const {
    if (!dominant_labels.empty()) return dominant_labels;
    const std::size_t stride = std::max<std::size_t>(1, num_classes / std::max<std::size_t>(1, num_groups));
    std::vector<std::vector<int>> out(num_groups);
    for (std::size_t g = 0; g < num_groups; ++g) {
        for (std::size_t j = 0; j < dominant_per_group; ++j) {
            out[g].push_back(static_cast<int>((stride * g + j) % num_classes));
        }
    }
    return out;
}

std::size_t PartitionSpec::train_size() const {
    return static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(samples_per_client)));
}

void PartitionSpec::validate() const {
    if (num_clients == 0) throw ConfigError("num_clients must be positive");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (samples_per_client == 0) throw ConfigError("samples_per_client must be positive");
    if (!(iid_fraction >= 0.0 && iid_fraction <= 1.0)) throw ConfigError("iid_fraction must lie in [0, 1]");
    if (num_groups == 0) throw ConfigError("num_groups must be positive");
    if (dominant_per_group == 0 || dominant_per_group > num_classes) {
        throw ConfigError("dominant_per_group must lie in [1, num_classes]");
    }
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("train_fraction must lie in (0, 1]");
    if (train_size() == 0) throw ConfigError("train split is empty");
    const auto labels = resolved_dominant_labels();
    if (labels.size() != num_groups) {
        throw ConfigError("dominant_labels must list one label set per group");
    }
    for (std::size_t g = 0; g < labels.size(); ++g) {
        auto sorted = labels[g];
        std::sort(sorted.begin(), sorted.end());
        if (sorted.size() != dominant_per_group ||
            std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
            throw ConfigError("group " + std::to_string(g) + " must have " +
                              std::to_string(dominant_per_group) + " distinct dominant labels");
        }
        for (int y : sorted) {
            if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
                throw ConfigError("group " + std::to_string(g) + " has dominant label " +
                                  std::to_string(y) + " outside [0, num_classes)");
            }
        }
    }
}

std::vector<std::size_t> target_histogram(const PartitionSpec& spec, std::size_t client, std::size_t n) {
    const std::size_t classes = spec.num_classes;
    std::vector<std::size_t> hist(classes, 0);
    const auto iid = static_cast<std::size_t>(std::llround(spec.iid_fraction * static_cast<double>(n)));
    for (std::size_t c = 0; c < classes; ++c) hist[c] = iid / classes;
    for (std::size_t j = 0; j < iid % classes; ++j) ++hist[(client + j) % classes];

    const auto labels = spec.resolved_dominant_labels()[spec.group_of_client(client)];
    const std::size_t dominant = n - iid;
    for (std::size_t j = 0; j < labels.size(); ++j) {
        hist[static_cast<std::size_t>(labels[j])] += dominant / labels.size() + (j < dominant % labels.size() ? 1 : 0);
    }
    return hist;
}

std::vector<ClientDataset> partition(const Pool& pool, const PartitionSpec& spec) {
    spec.validate();
    if (pool.num_classes != spec.num_classes) {
        throw ConfigError("pool has " + std::to_string(pool.num_classes) + " classes, partition expects " +
                          std::to_string(spec.num_classes));
    }
    std::vector<std::vector<std::size_t>> by_class(spec.num_classes);
    for (std::size_t i = 0; i < pool.samples.size(); ++i) {
        by_class[static_cast<std::size_t>(pool.samples.labels[i])].push_back(i);
    }

    // Without-replacement mode consumes one globally shuffled list per class.
    std::vector<std::size_t> cursor(spec.num_classes, 0);
    if (!spec.with_replacement) {
        Rng rng(derive_seed(spec.seed, Stream::partition, spec.num_clients));
        for (auto& ids : by_class) std::shuffle(ids.begin(), ids.end(), rng);
    }

    const std::size_t n_train = spec.train_size();
    const std::size_t n_test = spec.test_size();
    std::vector<ClientDataset> clients;
    clients.reserve(spec.num_clients);
    for (std::size_t k = 0; k < spec.num_clients; ++k) {
        const auto train_hist = target_histogram(spec, k, n_train);
        const auto test_hist = target_histogram(spec, k, n_test);
        Rng rng(derive_seed(spec.seed, Stream::partition, k));
        std::vector<std::size_t> train_ids, test_ids;
        for (std::size_t c = 0; c < spec.num_classes; ++c) {
            const std::size_t need = train_hist[c] + test_hist[c];
            if (need == 0) continue;
            auto& ids = by_class[c];
            std::vector<std::size_t> picked;
            if (spec.with_replacement) {
                if (need > ids.size()) {
                    throw ConfigError("class " + std::to_string(c) + " exhausted: client " + std::to_string(k) +
                                      " needs " + std::to_string(need) + " samples, pool has " +
                                      std::to_string(ids.size()));
                }
                // Partial Fisher-Yates: distinct samples within this client.
                std::vector<std::size_t> local = ids;
                for (std::size_t i = 0; i < need; ++i) {
                    std::uniform_int_distribution<std::size_t> pick(i, local.size() - 1);
                    std::swap(local[i], local[pick(rng)]);
                }
                picked.assign(local.begin(), local.begin() + static_cast<std::ptrdiff_t>(need));
            } else {
                if (cursor[c] + need > ids.size()) {
                    throw ConfigError("class " + std::to_string(c) + " exhausted at client " + std::to_string(k) +
                                      ": " + std::to_string(ids.size() - cursor[c]) + " unused samples left, " +
                                      std::to_string(need) + " needed");
                }
                picked.assign(ids.begin() + static_cast<std::ptrdiff_t>(cursor[c]),
                              ids.begin() + static_cast<std::ptrdiff_t>(cursor[c] + need));
                cursor[c] += need;
            }
            train_ids.insert(train_ids.end(), picked.begin(), picked.begin() + static_cast<std::ptrdiff_t>(train_hist[c]));
            test_ids.insert(test_ids.end(), picked.begin() + static_cast<std::ptrdiff_t>(train_hist[c]), picked.end());
        }
        ClientDataset cd;
        cd.train = nn::gather(pool.samples, train_ids);
        cd.test = nn::gather(pool.samples, test_ids);
        cd.class_histogram = train_hist;
        cd.group = spec.group_of_client(k);
        clients.push_back(std::move(cd));
    }
    return clients;
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string(), 0);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::string& what) {
    if (offset + 4 > bytes.size()) throw ParseError("truncated " + what, offset);
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

}  // namespace

Pool load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto images = read_file(images_path);
    const auto labels = read_file(labels_path);
    const std::string iname = images_path.filename().string();
    const std::string lname = labels_path.filename().string();

    const auto imagic = read_be32(images, 0, iname + " header");
    if (imagic != kImageMagic) {
        throw ParseError(iname + ": bad IDX image magic " + std::to_string(imagic), 0);
    }
    const auto lmagic = read_be32(labels, 0, lname + " header");
    if (lmagic != kLabelMagic) {
        throw ParseError(lname + ": bad IDX label magic " + std::to_string(lmagic), 0);
    }
    const std::size_t count = read_be32(images, 4, iname + " header");
    const std::size_t rows = read_be32(images, 8, iname + " header");
    const std::size_t cols = read_be32(images, 12, iname + " header");
    const std::size_t lcount = read_be32(labels, 4, lname + " header");
    if (count != lcount) {
        throw ParseError(lname + ": label count " + std::to_string(lcount) + " != image count " +
                         std::to_string(count), 4);
    }
    const std::size_t pixels = rows * cols;
    if (16 + count * pixels > images.size()) {
        throw ParseError(iname + ": truncated image data, expected " + std::to_string(16 + count * pixels) +
                         " bytes", images.size());
    }
    if (8 + count > labels.size()) {
        throw ParseError(lname + ": truncated label data, expected " + std::to_string(8 + count) + " bytes",
                         labels.size());
    }

    Pool pool;
    pool.samples.inputs = nn::Matrix(count, pixels);
    pool.samples.labels.resize(count);
    auto out = pool.samples.inputs.data();
    for (std::size_t i = 0; i < count * pixels; ++i) out[i] = static_cast<double>(images[16 + i]) / 255.0;
    int max_label = 1;
    for (std::size_t i = 0; i < count; ++i) {
        pool.samples.labels[i] = labels[8 + i];
        max_label = std::max(max_label, pool.samples.labels[i]);
    }
    pool.num_classes = static_cast<std::size_t>(max_label) + 1;
    return pool;
}

}  // namespace fedrema::data
