#include "revsnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace revsnn {

namespace {
constexpr std::size_t kCifarPixels = 3072;  // 3 x 32 x 32
}

Dataset load_cifar_binary(const std::string& path) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw std::runtime_error("cannot open data file: " + path);
    const std::size_t size = static_cast<std::size_t>(is.tellg());
    is.seekg(0);

    std::size_t record = 0, label_bytes = 0;
    if (size > 0 && size % (1 + kCifarPixels) == 0) {
        record = 1 + kCifarPixels;
        label_bytes = 1;
    } else if (size > 0 && size % (2 + kCifarPixels) == 0) {
        record = 2 + kCifarPixels;
        label_bytes = 2;
    } else {
        const std::size_t next10 = (size / (1 + kCifarPixels) + 1) * (1 + kCifarPixels);
        const std::size_t next100 = (size / (2 + kCifarPixels) + 1) * (2 + kCifarPixels);
        throw std::runtime_error("truncated cifar file " + path + ": got " +
                                 std::to_string(size) + " bytes, expected " +
                                 std::to_string(next10) + " (1-label records) or " +
                                 std::to_string(next100) + " (2-label records)");
    }
    const std::size_t count = size / record;

    std::vector<unsigned char> raw(size);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(size)))
        throw std::runtime_error("failed reading data file: " + path);

    Dataset ds;
    ds.steps = 1;
    ds.channels = 3;
    ds.height = 32;
    ds.width = 32;
    ds.labels.resize(count);
    ds.samples.reserve(count);

    double mean[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned char* rec = raw.data() + i * record;
        // the fine label is the last label byte in the 2-label variant
        ds.labels[i] = rec[label_bytes - 1];
        const unsigned char* px = rec + label_bytes;
        for (int c = 0; c < 3; ++c)
            for (std::size_t j = 0; j < 1024; ++j) {
                const double v = px[c * 1024 + j] / 255.0;
                mean[c] += v;
                sq[c] += v * v;
            }
    }
    const double per_chan = static_cast<double>(count) * 1024.0;
    double std[3];
    for (int c = 0; c < 3; ++c) {
        mean[c] /= per_chan;
        const double var = sq[c] / per_chan - mean[c] * mean[c];
        std[c] = std::sqrt(var > 1e-12 ? var : 1e-12);
    }

    for (std::size_t i = 0; i < count; ++i) {
        const unsigned char* px = raw.data() + i * record + label_bytes;
        Tensor t(1, 3, 32, 32);
        for (int c = 0; c < 3; ++c)
            for (std::size_t j = 0; j < 1024; ++j)
                t.data[c * 1024 + j] =
                    static_cast<float>((px[c * 1024 + j] / 255.0 - mean[c]) / std[c]);
        ds.samples.push_back(std::move(t));
    }
    ds.classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    return ds;
}

Dataset synth_task(std::uint64_t seed, int classes, int count, int timesteps, int channels,
                   int hw) {
    if (classes < 2 || count < 1 || timesteps < 1 || channels < 1 || hw < 1)
        throw std::invalid_argument("synth_task: all sizes must be positive, classes >= 2");
    Rng rng(seed);
    const double hi = 0.7, lo = 0.1;
    Dataset ds;
    ds.steps = timesteps;
    ds.classes = classes;
    ds.channels = channels;
    ds.height = hw;
    ds.width = hw;
    ds.labels.resize(count);
    ds.samples.reserve(static_cast<std::size_t>(count) * timesteps);
    const int pixels = channels * hw * hw;
    for (int i = 0; i < count; ++i) {
        const int label = i % classes;
        ds.labels[i] = label;
        for (int t = 0; t < timesteps; ++t) {
            Tensor s(1, channels, hw, hw);
            for (int j = 0; j < pixels; ++j) {
                const double rate = j % classes == label ? hi : lo;
                s.data[j] = rng.next_double() < rate ? 1.0f : 0.0f;
            }
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

Batch make_batch(const Dataset& ds, const std::vector<int>& indices) {
    if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
    const int n = static_cast<int>(indices.size());
    Batch b;
    b.labels.resize(n);
    b.steps.reserve(ds.steps);
    for (int t = 0; t < ds.steps; ++t)
        b.steps.emplace_back(n, ds.channels, ds.height, ds.width);
    const std::size_t stride = static_cast<std::size_t>(ds.channels) * ds.height * ds.width;
    for (int r = 0; r < n; ++r) {
        const int i = indices[r];
        if (i < 0 || i >= ds.size()) throw std::out_of_range("make_batch: index out of range");
        b.labels[r] = ds.labels[i];
        for (int t = 0; t < ds.steps; ++t)
            std::copy_n(ds.sample(i, t).data.begin(), stride,
                        b.steps[t].data.begin() + static_cast<std::size_t>(r) * stride);
    }
    return b;
}

std::vector<int> shuffled_indices(int n, Rng& rng) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.next_index(i + 1)]);
    return idx;
}

void augment_batch(Batch& batch, Rng& rng) {
    constexpr int pad = 4;
    if (batch.steps.empty()) return;
    const Shape s = batch.steps[0].shape;
    for (int b = 0; b < s.n; ++b) {
        // one draw per sample, shared by all of its step tensors
        const int dy = rng.next_index(2 * pad + 1) - pad;
        const int dx = rng.next_index(2 * pad + 1) - pad;
        const bool flip = rng.next_double() < 0.5;
        for (Tensor& step : batch.steps) {
            Tensor img(1, s.c, s.h, s.w);
            for (int c = 0; c < s.c; ++c)
                for (int y = 0; y < s.h; ++y)
                    for (int x = 0; x < s.w; ++x) {
                        const int sy = y + dy;
                        const int sx = flip ? s.w - 1 - (x + dx) : x + dx;
                        img.at(0, c, y, x) = sy >= 0 && sy < s.h && sx >= 0 && sx < s.w
                                                 ? step.at(b, c, sy, sx)
                                                 : 0.0f;
                    }
            for (int c = 0; c < s.c; ++c)
                for (int y = 0; y < s.h; ++y)
                    for (int x = 0; x < s.w; ++x) step.at(b, c, y, x) = img.at(0, c, y, x);
        }
    }
}

}  // namespace revsnn
