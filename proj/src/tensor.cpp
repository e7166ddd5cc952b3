#include "revsnn/tensor.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace revsnn {

std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!(a.shape == b.shape)) {
        throw std::invalid_argument(std::string(where) + ": shape mismatch " + a.shape.str() +
                                    " vs " + b.shape.str());
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] - b.data[i];
    return out;
}

Tensor scale(const Tensor& a, float s) {
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * s;
    return out;
}

void add_into(Tensor& acc, const Tensor& a) {
    check_same_shape(acc, a, "add_into");
    for (std::size_t i = 0; i < a.data.size(); ++i) acc.data[i] += a.data[i];
}

float max_abs(const Tensor& a) {
    float m = 0.0f;
    for (float v : a.data) m = std::max(m, std::fabs(v));
    return m;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "max_abs_diff");
    float m = 0.0f;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (!(a.shape == b.shape)) return false;
    return std::memcmp(a.data.data(), b.data.data(), a.bytes()) == 0;
}

std::uint64_t fnv1a64(const float* p, std::size_t count, std::uint64_t seed) {
    std::uint64_t h = seed;
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < count * sizeof(float); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t hash_tensor(const Tensor& a, std::uint64_t seed) {
    return fnv1a64(a.data.data(), a.data.size(), seed);
}

}  // namespace revsnn
