#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fedrema/data.hpp"
#include "fedrema/errors.hpp"
#include "oracles.hpp"

using namespace fedrema;
using namespace fedrema::data;

namespace {

// Expected per-class counts for one split, computed straight from the rule:
// round(s*n) spread over all classes, remainder starting at the client's
// index; the rest spread over the dominant labels in list order.
std::vector<std::size_t> expected_split(std::size_t n, double s, std::size_t classes, std::size_t client,
                                        const std::vector<int>& dominant) {
    std::vector<std::size_t> h(classes, 0);
    const auto iid = static_cast<std::size_t>(std::llround(s * static_cast<double>(n)));
    for (std::size_t i = 0; i < iid; ++i) ++h[(client + i) % classes];
    const std::size_t rest = n - iid;
    for (std::size_t i = 0; i < rest; ++i) ++h[static_cast<std::size_t>(dominant[i % dominant.size()])];
    return h;
}

std::vector<std::size_t> histogram(const nn::LabeledBatch& b, std::size_t classes) {
    std::vector<std::size_t> h(classes, 0);
    for (int y : b.labels) ++h[static_cast<std::size_t>(y)];
    return h;
}

void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

struct IdxFixture {
    std::filesystem::path dir;
    std::filesystem::path images;
    std::filesystem::path labels;

    IdxFixture() {
        dir = std::filesystem::temp_directory_path() / ("fedrema_idx_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(dir);
        images = dir / "images.idx";
        labels = dir / "labels.idx";
    }
    ~IdxFixture() { std::filesystem::remove_all(dir); }

    static std::vector<unsigned char> image_bytes(std::uint32_t count, std::uint32_t rows, std::uint32_t cols) {
        std::vector<unsigned char> b;
        put_be32(b, 0x00000803);
        put_be32(b, count);
        put_be32(b, rows);
        put_be32(b, cols);
        for (std::uint32_t i = 0; i < count * rows * cols; ++i) b.push_back(static_cast<unsigned char>(i * 37 % 256));
        return b;
    }
    static std::vector<unsigned char> label_bytes(std::vector<unsigned char> ys) {
        std::vector<unsigned char> b;
        put_be32(b, 0x00000801);
        put_be32(b, static_cast<std::uint32_t>(ys.size()));
        b.insert(b.end(), ys.begin(), ys.end());
        return b;
    }
};

}  // namespace

TEST_CASE("synthetic pool is balanced and reproducible") {
    SyntheticSpec spec;
    spec.samples_per_class = 50;
    spec.seed = 4;
    auto a = generate_synthetic(spec);
    CHECK(a.samples.size() == 500);
    for (auto n : a.class_counts()) CHECK(n == 50);
    CHECK(a.samples == generate_synthetic(spec).samples);
    spec.seed = 5;
    CHECK_FALSE(a.samples == generate_synthetic(spec).samples);
}

TEST_CASE("well separated classes are recoverable by nearest centroid") {
    SyntheticSpec spec;
    spec.num_classes = 4;
    spec.input_dim = 16;
    spec.class_separation = 10.0;
    spec.samples_per_class = 500;
    auto pool = generate_synthetic(spec);
    CHECK(oracle::nearest_centroid_accuracy(pool.samples, 4) >= 0.99);
}

TEST_CASE("zero separation makes classes indistinguishable") {
    SyntheticSpec spec;
    spec.class_separation = 0.0;
    spec.samples_per_class = 1000;
    auto pool = generate_synthetic(spec);
    // Centroids fitted on one half, scored on the other.
    nn::LabeledBatch fit, held;
    std::vector<std::size_t> a, b;
    for (std::size_t i = 0; i < pool.samples.size(); ++i) (i % 2 ? b : a).push_back(i);
    fit = nn::gather(pool.samples, a);
    held = nn::gather(pool.samples, b);
    std::vector<std::vector<double>> mean(10, std::vector<double>(64, 0.0));
    std::vector<double> n(10, 0.0);
    for (std::size_t r = 0; r < fit.size(); ++r) {
        auto c = static_cast<std::size_t>(fit.labels[r]);
        n[c] += 1;
        for (std::size_t i = 0; i < 64; ++i) mean[c][i] += fit.inputs(r, i);
    }
    for (std::size_t c = 0; c < 10; ++c)
        for (auto& v : mean[c]) v /= n[c];
    std::size_t hit = 0;
    for (std::size_t r = 0; r < held.size(); ++r) {
        std::size_t best = 0;
        double best_d = 1e300;
        for (std::size_t c = 0; c < 10; ++c) {
            double d = 0;
            for (std::size_t i = 0; i < 64; ++i) d += std::pow(held.inputs(r, i) - mean[c][i], 2);
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        hit += best == static_cast<std::size_t>(held.labels[r]);
    }
    CHECK(std::abs(static_cast<double>(hit) / static_cast<double>(held.size()) - 0.1) <= 0.05);
}

TEST_CASE("synthetic generation rejects bad settings") {
    SyntheticSpec spec;
    spec.input_dim = 5;
    CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
    spec.input_dim = 64;
    spec.class_separation = -1.0;
    CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
}

TEST_CASE("default dominant labels and group assignment") {
    PartitionSpec spec;
    auto labels = spec.resolved_dominant_labels();
    REQUIRE(labels.size() == 5);
    for (std::size_t g = 0; g < 5; ++g) {
        CHECK(labels[g] == std::vector<int>{static_cast<int>(2 * g % 10), static_cast<int>((2 * g + 1) % 10),
                                            static_cast<int>((2 * g + 2) % 10)});
    }
    for (std::size_t k = 0; k < 10; ++k) CHECK(spec.group_of_client(k) == k % 5);
}

TEST_CASE("partition follows the histogram law for every split") {
    SyntheticSpec syn;
    syn.samples_per_class = 1000;
    auto pool = generate_synthetic(syn);
    for (double s : {0.0, 0.2, 0.5, 0.8, 1.0}) {
        PartitionSpec spec;
        spec.iid_fraction = s;
        spec.seed = 8;
        auto clients = partition(pool, spec);
        auto labels = spec.resolved_dominant_labels();
        REQUIRE(clients.size() == 10);
        for (std::size_t k = 0; k < 10; ++k) {
            CAPTURE(s);
            CAPTURE(k);
            const auto& dom = labels[k % 5];
            CHECK(histogram(clients[k].train, 10) == expected_split(480, s, 10, k, dom));
            CHECK(histogram(clients[k].test, 10) == expected_split(120, s, 10, k, dom));
            CHECK(clients[k].class_histogram == histogram(clients[k].train, 10));
            CHECK(clients[k].group == k % 5);
        }
    }
}

TEST_CASE("s = 0.2, N = 600 splits into 120 IID and 480 dominant samples") {
    SyntheticSpec syn;
    auto pool = generate_synthetic(syn);
    PartitionSpec spec;
    auto clients = partition(pool, spec);
    auto total = histogram(clients[0].train, 10);
    auto test = histogram(clients[0].test, 10);
    for (std::size_t c = 0; c < 10; ++c) total[c] += test[c];
    // client 0 dominates {0, 1, 2}: about 12 IID each plus 160 dominant;
    // rounding per split moves at most one sample per class
    std::size_t sum = 0;
    for (std::size_t c = 0; c < 10; ++c) {
        const long want = c < 3 ? 172 : 12;
        CHECK(std::labs(static_cast<long>(total[c]) - want) <= 1);
        sum += total[c];
    }
    CHECK(sum == 600);
}

TEST_CASE("s = 0 leaves only dominant labels, s = 1 is uniform") {
    auto pool = generate_synthetic({});
    PartitionSpec spec;
    spec.iid_fraction = 0.0;
    auto skewed = partition(pool, spec);
    for (std::size_t k = 0; k < 10; ++k) {
        auto dom = spec.resolved_dominant_labels()[k % 5];
        std::set<int> allowed(dom.begin(), dom.end());
        for (int y : skewed[k].train.labels) CHECK(allowed.count(y) == 1);
        for (int y : skewed[k].test.labels) CHECK(allowed.count(y) == 1);
    }
    spec.iid_fraction = 1.0;
    for (const auto& c : partition(pool, spec)) {
        for (auto n : histogram(c.train, 10)) CHECK((n == 48));
    }
}

TEST_CASE("samples are distinct within a client") {
    auto pool = generate_synthetic({});
    PartitionSpec spec;
    spec.seed = 3;
    for (const auto& c : partition(pool, spec)) {
        std::set<std::vector<double>> seen;
        for (std::size_t r = 0; r < c.train.size(); ++r)
            seen.insert({c.train.inputs.row(r).begin(), c.train.inputs.row(r).end()});
        for (std::size_t r = 0; r < c.test.size(); ++r)
            seen.insert({c.test.inputs.row(r).begin(), c.test.inputs.row(r).end()});
        CHECK(seen.size() == c.train.size() + c.test.size());
    }
}

TEST_CASE("partition is a pure function of pool and seed") {
    auto pool = generate_synthetic({});
    PartitionSpec spec;
    spec.seed = 12;
    auto a = partition(pool, spec);
    auto b = partition(pool, spec);
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].train == b[k].train);
        CHECK(a[k].test == b[k].test);
    }
}

TEST_CASE("an undersized pool names the exhausted class") {
    SyntheticSpec syn;
    syn.samples_per_class = 100;
    auto pool = generate_synthetic(syn);
    PartitionSpec spec;
    try {
        partition(pool, spec);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("class 0") != std::string::npos);
    }
    spec.with_replacement = false;
    syn.samples_per_class = 400;
    CHECK_THROWS_AS(partition(generate_synthetic(syn), spec), ConfigError);
}

TEST_CASE("partition spec validation") {
    PartitionSpec spec;
    spec.iid_fraction = 1.5;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.iid_fraction = 0.2;
    spec.dominant_labels = {{0, 1, 2}};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.dominant_labels = {{0, 1, 2}, {2, 3, 4}, {4, 5, 6}, {6, 7, 8}, {8, 9, 12}};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("IDX files load with scaled pixels") {
    IdxFixture f;
    write_bytes(f.images, IdxFixture::image_bytes(3, 2, 2));
    write_bytes(f.labels, IdxFixture::label_bytes({4, 0, 7}));
    auto pool = load_idx(f.images, f.labels);
    CHECK(pool.samples.size() == 3);
    CHECK(pool.input_dim() == 4);
    CHECK(pool.num_classes == 8);
    CHECK(pool.samples.labels == std::vector<int>{4, 0, 7});
    CHECK(pool.samples.inputs(0, 1) == doctest::Approx(37.0 / 255.0));
    CHECK(pool.samples.inputs(2, 3) == doctest::Approx((11 * 37 % 256) / 255.0));
}

TEST_CASE("IDX errors carry byte offsets") {
    IdxFixture f;
    write_bytes(f.labels, IdxFixture::label_bytes({1, 2, 3}));

    auto bad_magic = IdxFixture::image_bytes(3, 2, 2);
    bad_magic[3] = 0x02;
    write_bytes(f.images, bad_magic);
    try {
        load_idx(f.images, f.labels);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.offset() == 0);
    }

    write_bytes(f.images, std::vector<unsigned char>{0, 0, 8});
    try {
        load_idx(f.images, f.labels);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.offset() == 0);
    }

    auto truncated = IdxFixture::image_bytes(3, 2, 2);
    truncated.resize(20);
    write_bytes(f.images, truncated);
    try {
        load_idx(f.images, f.labels);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.offset() == 20);
        CHECK(std::string(e.what()).find("byte offset 20") != std::string::npos);
    }

    write_bytes(f.images, IdxFixture::image_bytes(2, 2, 2));
    try {
        load_idx(f.images, f.labels);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.offset() == 4);
    }
}
