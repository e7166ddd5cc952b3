#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace revsnn {

// Dense (batch, channels, height, width) layout, row-major, innermost = width.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t elems() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    bool operator==(const Shape& o) const = default;
    std::string str() const;
};

struct Tensor {
    Shape shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int n, int c, int h, int w) : shape{n, c, h, w}, data(shape.elems(), 0.0f) {}
    explicit Tensor(Shape s) : shape(s), data(s.elems(), 0.0f) {}

    std::size_t size() const { return data.size(); }
    std::size_t bytes() const { return data.size() * sizeof(float); }
    bool empty() const { return data.empty(); }

    float& at(int b, int c, int y, int x) {
        return data[((static_cast<std::size_t>(b) * shape.c + c) * shape.h + y) * shape.w + x];
    }
    float at(int b, int c, int y, int x) const {
        return data[((static_cast<std::size_t>(b) * shape.c + c) * shape.h + y) * shape.w + x];
    }
};

// Throws std::invalid_argument naming `where` when shapes differ.
void check_same_shape(const Tensor& a, const Tensor& b, const char* where);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
void add_into(Tensor& acc, const Tensor& a);

float max_abs(const Tensor& a);
float max_abs_diff(const Tensor& a, const Tensor& b);
bool bit_equal(const Tensor& a, const Tensor& b);

// FNV-1a 64 over the raw little-endian float bytes.
std::uint64_t fnv1a64(const float* p, std::size_t count, std::uint64_t seed = 1469598103934665603ull);
std::uint64_t hash_tensor(const Tensor& a, std::uint64_t seed = 1469598103934665603ull);

}  // namespace revsnn
