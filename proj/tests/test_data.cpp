#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "revsnn/data.hpp"

using namespace revsnn;

namespace {

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream os(path, std::ios::binary);
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
}

struct FileGuard {
    std::string path;
    ~FileGuard() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("synth task layout, labels and determinism") {
    Dataset ds = synth_task(5, 3, 7, 2, 2, 4);
    CHECK(ds.steps == 2);
    CHECK(ds.classes == 3);
    CHECK(ds.size() == 7);
    CHECK(ds.samples.size() == 14);
    for (int i = 0; i < ds.size(); ++i) CHECK(ds.labels[i] == i % 3);
    for (const Tensor& t : ds.samples) {
        CHECK(t.shape.c == 2);
        CHECK(t.shape.h == 4);
        CHECK(t.shape.w == 4);
        for (float v : t.data) CHECK((v == 0.0f || v == 1.0f));
    }

    Dataset again = synth_task(5, 3, 7, 2, 2, 4);
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        CHECK(bit_equal(ds.samples[i], again.samples[i]));
    Dataset other = synth_task(6, 3, 7, 2, 2, 4);
    bool differs = false;
    for (std::size_t i = 0; i < ds.samples.size() && !differs; ++i)
        differs = !bit_equal(ds.samples[i], other.samples[i]);
    CHECK(differs);
    CHECK(!bit_equal(ds.sample(0, 0), ds.sample(0, 1)));  // redrawn each step

    CHECK_THROWS_AS(synth_task(1, 1, 4, 2), std::invalid_argument);
    CHECK_THROWS_AS(synth_task(1, 3, 0, 2), std::invalid_argument);
    CHECK_THROWS_AS(synth_task(1, 3, 4, 0), std::invalid_argument);
}

TEST_CASE("synth spike rates sit at the designed levels") {
    const int classes = 3, count = 600, T = 2, hw = 4, channels = 2;
    Dataset ds = synth_task(11, classes, count, T, channels, hw);
    const int pixels = channels * hw * hw;
    std::vector<std::vector<double>> rate(classes, std::vector<double>(pixels, 0.0));
    std::vector<int> per_class(classes, 0);
    for (int i = 0; i < count; ++i) {
        ++per_class[ds.labels[i]];
        for (int t = 0; t < T; ++t)
            for (int j = 0; j < pixels; ++j) rate[ds.labels[i]][j] += ds.sample(i, t).data[j];
    }
    for (int c = 0; c < classes; ++c)
        for (int j = 0; j < pixels; ++j) {
            const double r = rate[c][j] / (per_class[c] * T);
            const double want = j % classes == c ? 0.7 : 0.1;
            CHECK(std::abs(r - want) < 0.075);  // ~3 binomial sigma at 400 draws
        }
}

TEST_CASE("per-pixel mean rates are linearly separable") {
    const int classes = 4, count = 200, T = 4;
    Dataset ds = synth_task(21, classes, count, T);
    const int pixels = ds.channels * ds.height * ds.width;

    std::vector<std::vector<double>> x(count, std::vector<double>(pixels, 0.0));
    for (int i = 0; i < count; ++i)
        for (int t = 0; t < T; ++t)
            for (int j = 0; j < pixels; ++j) x[i][j] += ds.sample(i, t).data[j] / T;

    // full-batch softmax regression on the rate features
    std::vector<std::vector<double>> w(classes, std::vector<double>(pixels, 0.0));
    std::vector<double> b(classes, 0.0);
    const double lr = 1.0;
    for (int iter = 0; iter < 300; ++iter) {
        std::vector<std::vector<double>> gw(classes, std::vector<double>(pixels, 0.0));
        std::vector<double> gb(classes, 0.0);
        for (int i = 0; i < count; ++i) {
            std::vector<double> p(classes);
            double mx = -1e300;
            for (int c = 0; c < classes; ++c) {
                p[c] = b[c] + std::inner_product(x[i].begin(), x[i].end(), w[c].begin(), 0.0);
                mx = std::max(mx, p[c]);
            }
            double z = 0.0;
            for (int c = 0; c < classes; ++c) z += std::exp(p[c] - mx);
            for (int c = 0; c < classes; ++c) p[c] = std::exp(p[c] - mx) / z;
            p[ds.labels[i]] -= 1.0;
            for (int c = 0; c < classes; ++c) {
                gb[c] += p[c] / count;
                for (int j = 0; j < pixels; ++j) gw[c][j] += p[c] * x[i][j] / count;
            }
        }
        for (int c = 0; c < classes; ++c) {
            b[c] -= lr * gb[c];
            for (int j = 0; j < pixels; ++j) w[c][j] -= lr * gw[c][j];
        }
    }

    int hits = 0;
    for (int i = 0; i < count; ++i) {
        int best = 0;
        double bv = -1e300;
        for (int c = 0; c < classes; ++c) {
            const double s =
                b[c] + std::inner_product(x[i].begin(), x[i].end(), w[c].begin(), 0.0);
            if (s > bv) {
                bv = s;
                best = c;
            }
        }
        hits += best == ds.labels[i];
    }
    CHECK(static_cast<double>(hits) / count >= 0.99);
}

TEST_CASE("batches stack sample rows in index order") {
    Dataset ds = synth_task(31, 3, 5, 2, 2, 4);
    Batch b = make_batch(ds, {3, 0, 4});
    REQUIRE(b.steps.size() == 2);
    CHECK(b.labels == std::vector<int>{0, 0, 1});
    for (int t = 0; t < 2; ++t) {
        CHECK(b.steps[t].shape.n == 3);
        const std::size_t stride = 2 * 4 * 4;
        const int src[3] = {3, 0, 4};
        for (int r = 0; r < 3; ++r)
            for (std::size_t j = 0; j < stride; ++j)
                CHECK(b.steps[t].data[r * stride + j] == ds.sample(src[r], t).data[j]);
    }
    CHECK_THROWS_AS(make_batch(ds, {}), std::invalid_argument);
    CHECK_THROWS_AS(make_batch(ds, {5}), std::out_of_range);
    CHECK_THROWS_AS(make_batch(ds, {-1}), std::out_of_range);
}

TEST_CASE("shuffles are permutations and reproducible") {
    Rng rng(41);
    std::vector<int> idx = shuffled_indices(50, rng);
    std::vector<int> sorted = idx;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> iota(50);
    std::iota(iota.begin(), iota.end(), 0);
    CHECK(sorted == iota);
    CHECK(idx != iota);  // 50 elements leave identity with probability ~0

    Rng rng2(41);
    CHECK(shuffled_indices(50, rng2) == idx);
    CHECK(shuffled_indices(1, rng) == std::vector<int>{0});
}

TEST_CASE("augmentation applies one transform to all of a sample's steps") {
    Rng fill(51);
    Tensor step(3, 2, 6, 6);
    fill.fill_normal(step, 0.0f, 1.0f);
    Batch b;
    b.steps = {step, step};  // identical steps must stay identical
    b.labels = {0, 1, 2};

    Rng rng(52);
    augment_batch(b, rng);
    CHECK(b.steps[0].shape == step.shape);
    CHECK(bit_equal(b.steps[0], b.steps[1]));
    CHECK(!bit_equal(b.steps[0], step));  // at least one sample moved
}

TEST_CASE("cifar single-label records normalize per channel") {
    // two records with constant pixel levels 100 and 200: each channel sees
    // two equally weighted values, so normalized pixels are exactly -1 and +1
    std::vector<unsigned char> bytes;
    auto add_record = [&bytes](unsigned char label, unsigned char level) {
        bytes.push_back(label);
        bytes.insert(bytes.end(), 3072, level);
    };
    add_record(1, 100);
    add_record(2, 200);
    const std::string path = "cifar_one_label.bin";
    FileGuard guard{path};
    write_bytes(path, bytes);

    Dataset ds = load_cifar_binary(path);
    CHECK(ds.steps == 1);
    CHECK(ds.channels == 3);
    CHECK(ds.height == 32);
    CHECK(ds.width == 32);
    CHECK(ds.size() == 2);
    CHECK(ds.labels == std::vector<int>{1, 2});
    CHECK(ds.classes == 3);
    for (float v : ds.samples[0].data) CHECK(v == doctest::Approx(-1.0).epsilon(1e-5));
    for (float v : ds.samples[1].data) CHECK(v == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("cifar coarse+fine records use the fine label") {
    std::vector<unsigned char> bytes;
    auto add_record = [&bytes](unsigned char coarse, unsigned char fine, unsigned char level) {
        bytes.push_back(coarse);
        bytes.push_back(fine);
        bytes.insert(bytes.end(), 3072, level);
    };
    add_record(9, 4, 10);
    add_record(3, 7, 250);
    const std::string path = "cifar_two_label.bin";
    FileGuard guard{path};
    write_bytes(path, bytes);

    Dataset ds = load_cifar_binary(path);
    CHECK(ds.size() == 2);
    CHECK(ds.labels == std::vector<int>{4, 7});
    CHECK(ds.classes == 8);
}

TEST_CASE("cifar size errors name the offending byte counts") {
    const std::string path = "cifar_cut.bin";
    FileGuard guard{path};
    write_bytes(path, std::vector<unsigned char>(5000, 0));
    try {
        load_cifar_binary(path);
        CHECK(false);
    } catch (const std::runtime_error& e) {
        std::string msg = e.what();
        CHECK(msg.find("5000") != std::string::npos);
        CHECK(msg.find("6146") != std::string::npos);  // next whole 3073-byte count
        CHECK(msg.find("6148") != std::string::npos);  // next whole 3074-byte count
    }
    CHECK_THROWS_WITH_AS(load_cifar_binary("no_such_dataset.bin"),
                         doctest::Contains("cannot open"), std::runtime_error);
}
