#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "revsnn/rng.hpp"
#include "revsnn/tensor.hpp"

using namespace revsnn;

namespace {

// Independent FNV-1a over bytes, written from the published constants.
std::uint64_t fnv_oracle(const float* p, std::size_t count, std::uint64_t seed) {
    std::uint64_t h = seed;
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < count * sizeof(float); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

TEST_CASE("shape arithmetic and printing") {
    Shape s{2, 3, 4, 5};
    CHECK(s.elems() == 120);
    CHECK(s == Shape{2, 3, 4, 5});
    CHECK_FALSE(s == Shape{2, 3, 5, 4});
    CHECK(s.str().find('2') != std::string::npos);

    Tensor t(2, 3, 4, 5);
    CHECK(t.size() == 120);
    CHECK(t.bytes() == 120 * sizeof(float));
    CHECK_FALSE(t.empty());
    CHECK(Tensor().empty());
}

TEST_CASE("at() addresses row-major with width innermost") {
    Tensor t(2, 3, 4, 5);
    t.at(1, 2, 3, 4) = 7.0f;
    std::size_t flat = ((static_cast<std::size_t>(1) * 3 + 2) * 4 + 3) * 5 + 4;
    CHECK(t.data[flat] == 7.0f);
    t.at(0, 0, 0, 1) = 3.0f;
    CHECK(t.data[1] == 3.0f);
}

TEST_CASE("elementwise ops match manual loops") {
    Rng rng(11);
    Tensor a(2, 2, 3, 3), b(2, 2, 3, 3);
    rng.fill_normal(a, 0.0f, 1.0f);
    rng.fill_normal(b, 0.0f, 1.0f);

    Tensor s = add(a, b), d = sub(a, b), m = scale(a, 2.5f);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        CHECK(s.data[i] == a.data[i] + b.data[i]);
        CHECK(d.data[i] == a.data[i] - b.data[i]);
        CHECK(m.data[i] == a.data[i] * 2.5f);
    }

    Tensor acc = a;
    add_into(acc, b);
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(acc.data[i] == a.data[i] + b.data[i]);
}

TEST_CASE("shape mismatches throw with the call site name") {
    Tensor a(1, 2, 2, 2), b(1, 2, 2, 3);
    CHECK_THROWS_AS(add(a, b), std::invalid_argument);
    try {
        check_same_shape(a, b, "somewhere");
        CHECK(false);
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("somewhere") != std::string::npos);
    }
}

TEST_CASE("max_abs and max_abs_diff") {
    Tensor a(1, 1, 1, 4), b(1, 1, 1, 4);
    a.data = {1.0f, -3.5f, 0.25f, 2.0f};
    b.data = {1.0f, -3.0f, 0.25f, 2.5f};
    CHECK(max_abs(a) == 3.5f);
    CHECK(max_abs_diff(a, b) == 0.5f);
    CHECK(max_abs_diff(a, a) == 0.0f);
}

TEST_CASE("bit_equal compares representations, not values") {
    Tensor a(1, 1, 1, 2), b(1, 1, 1, 2);
    a.data = {0.0f, 1.0f};
    b.data = {-0.0f, 1.0f};
    CHECK(max_abs_diff(a, b) == 0.0f);  // -0 equals 0 numerically
    CHECK_FALSE(bit_equal(a, b));       // but not bitwise
    CHECK(bit_equal(a, a));
    Tensor c(1, 1, 2, 1);
    c.data = {0.0f, 1.0f};
    CHECK_FALSE(bit_equal(a, c));  // same bytes, different shape
}

TEST_CASE("hashing matches an independent fnv-1a") {
    Rng rng(5);
    Tensor t(1, 2, 3, 4);
    rng.fill_normal(t, 0.0f, 2.0f);
    CHECK(hash_tensor(t) == fnv_oracle(t.data.data(), t.data.size(), 1469598103934665603ull));
    CHECK(fnv1a64(t.data.data(), t.data.size(), 99) == fnv_oracle(t.data.data(), t.data.size(), 99));
    Tensor u = t;
    u.data[5] = std::nextafter(u.data[5], 10.0f);
    CHECK(hash_tensor(u) != hash_tensor(t));
}

TEST_CASE("rng streams are deterministic and fork independently") {
    Rng a(42), b(42);
    for (int i = 0; i < 16; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(42);
    c.next_u64();
    Rng f1 = c.fork();
    CHECK(f1.next_u64() != c.next_u64());

    Rng d(7);
    for (int i = 0; i < 1000; ++i) {
        double u = d.next_double();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        int k = d.next_index(13);
        CHECK(k >= 0);
        CHECK(k < 13);
    }
}
