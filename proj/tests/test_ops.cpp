#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "revsnn/ops.hpp"
#include "revsnn/rng.hpp"

using namespace revsnn;

namespace {

constexpr float kEps = 1e-5f;

// Plain quadruple-loop convolution, padding 1, double accumulation. Written
// directly from the definition so it shares no structure with the library.
Tensor naive_conv(const Tensor& in, const Tensor& w, int stride) {
    int oh = (in.shape.h + 2 - 3) / stride + 1;
    int ow = (in.shape.w + 2 - 3) / stride + 1;
    Tensor out(in.shape.n, w.shape.n, oh, ow);
    for (int b = 0; b < in.shape.n; ++b)
        for (int k = 0; k < w.shape.n; ++k)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    double acc = 0.0;
                    for (int c = 0; c < in.shape.c; ++c)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                int iy = y * stride + ky - 1;
                                int ix = x * stride + kx - 1;
                                if (iy < 0 || iy >= in.shape.h || ix < 0 || ix >= in.shape.w)
                                    continue;
                                acc += static_cast<double>(in.at(b, c, iy, ix)) *
                                       static_cast<double>(w.at(k, c, ky, kx));
                            }
                    out.at(b, k, y, x) = static_cast<float>(acc);
                }
    return out;
}

double dot(const Tensor& a, const Tensor& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        s += static_cast<double>(a.data[i]) * static_cast<double>(r.data[i]);
    return s;
}

// Central differences over every entry of `target`; gradients here are order
// one, so a unit-floored relative error at 1e-3 is a strict check.
float fd_full(Tensor& target, const Tensor& analytic, const std::function<double()>& loss) {
    const float h = 1e-3f;
    float worst = 0.0f;
    for (std::size_t i = 0; i < target.data.size(); ++i) {
        float keep = target.data[i];
        target.data[i] = keep + h;
        double lp = loss();
        target.data[i] = keep - h;
        double lm = loss();
        target.data[i] = keep;
        double fd = (lp - lm) / (2.0 * h);
        double an = analytic.data[i];
        double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0});
        worst = std::max(worst, static_cast<float>(rel));
    }
    return worst;
}

}  // namespace

TEST_CASE("conv2d matches the naive definition") {
    Rng rng(3);
    for (int stride : {1, 2}) {
        for (auto [h, w] : {std::pair{5, 5}, std::pair{6, 4}, std::pair{7, 7}}) {
            Tensor x(2, 3, h, w), k(4, 3, 3, 3);
            rng.fill_normal(x, 0.0f, 1.0f);
            rng.fill_normal(k, 0.0f, 0.5f);
            Tensor got = conv2d(x, k, stride);
            Tensor want = naive_conv(x, k, stride);
            CHECK(got.shape == want.shape);
            CHECK(max_abs_diff(got, want) <= kEps);
        }
    }
}

TEST_CASE("conv2d output spatial size is ceil(input/stride)") {
    Tensor x(1, 1, 7, 5), k(1, 1, 3, 3);
    CHECK(conv2d(x, k, 1).shape == Shape{1, 1, 7, 5});
    CHECK(conv2d(x, k, 2).shape == Shape{1, 1, 4, 3});
    Tensor e(1, 1, 8, 8);
    CHECK(conv2d(e, k, 2).shape == Shape{1, 1, 4, 4});
}

TEST_CASE("conv2d is bitwise deterministic") {
    Rng rng(9);
    Tensor x(2, 4, 6, 6), k(4, 4, 3, 3);
    rng.fill_normal(x, 0.0f, 1.0f);
    rng.fill_normal(k, 0.0f, 0.5f);
    CHECK(bit_equal(conv2d(x, k, 1), conv2d(x, k, 1)));
}

TEST_CASE("conv2d backward passes finite differences") {
    Rng rng(17);
    for (int stride : {1, 2}) {
        Tensor x(1, 2, 4, 4), k(2, 2, 3, 3);
        rng.fill_normal(x, 0.0f, 1.0f);
        rng.fill_normal(k, 0.0f, 0.5f);
        Tensor r(conv2d(x, k, stride).shape);
        rng.fill_uniform(r, -1.0f, 1.0f);
        auto loss = [&]() { return dot(conv2d(x, k, stride), r); };
        Tensor gx = conv2d_backward_input(r, k, x.shape, stride);
        Tensor gk = conv2d_backward_weights(r, x, k.shape, stride);
        CHECK(fd_full(x, gx, loss) <= 1e-3f);
        CHECK(fd_full(k, gk, loss) <= 1e-3f);
    }
}

TEST_CASE("batch norm normalizes per channel and replays bit-exact") {
    Rng rng(23);
    Tensor x(3, 4, 4, 4), gain(1, 4, 1, 1), bias(1, 4, 1, 1);
    rng.fill_normal(x, 1.0f, 2.0f);
    rng.fill_uniform(gain, 0.5f, 1.5f);
    rng.fill_uniform(bias, -0.5f, 0.5f);

    NormStats st;
    Tensor y = batch_norm_forward(x, gain, bias, kEps, st);

    // two-pass oracle per channel
    int per = x.shape.n * x.shape.h * x.shape.w;
    for (int c = 0; c < 4; ++c) {
        double mean = 0.0, var = 0.0;
        for (int b = 0; b < x.shape.n; ++b)
            for (int i = 0; i < x.shape.h; ++i)
                for (int j = 0; j < x.shape.w; ++j) mean += x.at(b, c, i, j);
        mean /= per;
        for (int b = 0; b < x.shape.n; ++b)
            for (int i = 0; i < x.shape.h; ++i)
                for (int j = 0; j < x.shape.w; ++j) {
                    double d = x.at(b, c, i, j) - mean;
                    var += d * d;
                }
        var /= per;
        CHECK(st.mean[c] == doctest::Approx(mean).epsilon(1e-6));
        CHECK(st.invstd[c] == doctest::Approx(1.0 / std::sqrt(var + kEps)).epsilon(1e-6));
        for (int b = 0; b < x.shape.n; ++b)
            for (int i = 0; i < x.shape.h; ++i)
                for (int j = 0; j < x.shape.w; ++j) {
                    double want = (x.at(b, c, i, j) - mean) / std::sqrt(var + kEps) *
                                      gain.data[c] +
                                  bias.data[c];
                    CHECK(y.at(b, c, i, j) == doctest::Approx(want).epsilon(1e-4));
                }
    }

    CHECK(bit_equal(batch_norm_apply(x, gain, bias, st), y));
}

TEST_CASE("batch norm backward differentiates through the statistics") {
    Rng rng(29);
    Tensor x(2, 3, 3, 3), gain(1, 3, 1, 1), bias(1, 3, 1, 1), r(2, 3, 3, 3);
    rng.fill_normal(x, 0.0f, 1.0f);
    rng.fill_uniform(gain, 0.5f, 1.5f);
    rng.fill_uniform(bias, -0.5f, 0.5f);
    rng.fill_uniform(r, -1.0f, 1.0f);
    auto loss = [&]() {
        NormStats st;
        return dot(batch_norm_forward(x, gain, bias, kEps, st), r);
    };
    NormStats st;
    batch_norm_forward(x, gain, bias, kEps, st);
    Tensor gx(x.shape), gg(gain.shape), gb(bias.shape);
    batch_norm_backward(x, gain, st, r, gx, gg, gb);
    CHECK(fd_full(x, gx, loss) <= 1e-3f);
    CHECK(fd_full(gain, gg, loss) <= 1e-3f);
    CHECK(fd_full(bias, gb, loss) <= 1e-3f);
}

TEST_CASE("group norm matches a per-group oracle") {
    Rng rng(31);
    Tensor x(2, 4, 3, 3), gain(1, 4, 1, 1), bias(1, 4, 1, 1);
    rng.fill_normal(x, 0.5f, 1.5f);
    rng.fill_uniform(gain, 0.5f, 1.5f);
    rng.fill_uniform(bias, -0.5f, 0.5f);
    int groups = 2, gc = 2;

    NormStats st;
    Tensor y = group_norm_forward(x, groups, gain, bias, kEps, st);

    for (int b = 0; b < 2; ++b)
        for (int g = 0; g < groups; ++g) {
            double mean = 0.0, var = 0.0;
            int per = gc * 9;
            for (int c = g * gc; c < (g + 1) * gc; ++c)
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) mean += x.at(b, c, i, j);
            mean /= per;
            for (int c = g * gc; c < (g + 1) * gc; ++c)
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) {
                        double d = x.at(b, c, i, j) - mean;
                        var += d * d;
                    }
            var /= per;
            for (int c = g * gc; c < (g + 1) * gc; ++c)
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) {
                        double want = (x.at(b, c, i, j) - mean) / std::sqrt(var + kEps) *
                                          gain.data[c] +
                                      bias.data[c];
                        CHECK(y.at(b, c, i, j) == doctest::Approx(want).epsilon(1e-4));
                    }
        }

    CHECK(bit_equal(group_norm_apply(x, groups, gain, bias, st), y));
}

TEST_CASE("group norm backward passes finite differences") {
    Rng rng(37);
    Tensor x(2, 4, 3, 3), gain(1, 4, 1, 1), bias(1, 4, 1, 1), r(2, 4, 3, 3);
    rng.fill_normal(x, 0.0f, 1.0f);
    rng.fill_uniform(gain, 0.5f, 1.5f);
    rng.fill_uniform(bias, -0.5f, 0.5f);
    rng.fill_uniform(r, -1.0f, 1.0f);
    auto loss = [&]() {
        NormStats st;
        return dot(group_norm_forward(x, 2, gain, bias, kEps, st), r);
    };
    NormStats st;
    group_norm_forward(x, 2, gain, bias, kEps, st);
    Tensor gx(x.shape), gg(gain.shape), gb(bias.shape);
    group_norm_backward(x, 2, gain, st, r, gx, gg, gb);
    CHECK(fd_full(x, gx, loss) <= 1e-3f);
    CHECK(fd_full(gain, gg, loss) <= 1e-3f);
    CHECK(fd_full(bias, gb, loss) <= 1e-3f);
}

TEST_CASE("group count is gcd(channels, 8)") {
    CHECK(group_count_for(1) == 1);
    CHECK(group_count_for(4) == 4);
    CHECK(group_count_for(6) == 2);
    CHECK(group_count_for(8) == 8);
    CHECK(group_count_for(12) == 4);
    CHECK(group_count_for(448) == 8);
}

TEST_CASE("linear layer matches a matmul oracle and finite differences") {
    Rng rng(41);
    Tensor x(3, 4, 1, 1), w(5, 4, 1, 1), b(1, 5, 1, 1);
    rng.fill_normal(x, 0.0f, 1.0f);
    rng.fill_normal(w, 0.0f, 0.5f);
    rng.fill_normal(b, 0.0f, 0.5f);

    Tensor y = linear_forward(x, w, b);
    CHECK(y.shape == Shape{3, 5, 1, 1});
    for (int n = 0; n < 3; ++n)
        for (int k = 0; k < 5; ++k) {
            double want = b.data[k];
            for (int c = 0; c < 4; ++c) want += double(x.at(n, c, 0, 0)) * w.at(k, c, 0, 0);
            CHECK(y.at(n, k, 0, 0) == doctest::Approx(want).epsilon(1e-5));
        }

    Tensor r(3, 5, 1, 1);
    rng.fill_uniform(r, -1.0f, 1.0f);
    auto loss = [&]() { return dot(linear_forward(x, w, b), r); };
    Tensor gx(x.shape), gw(w.shape), gb(b.shape);
    linear_backward(r, x, w, gx, gw, gb);
    CHECK(fd_full(x, gx, loss) <= 1e-3f);
    CHECK(fd_full(w, gw, loss) <= 1e-3f);
    CHECK(fd_full(b, gb, loss) <= 1e-3f);
}

TEST_CASE("global average pool and its backward") {
    Rng rng(43);
    Tensor x(2, 3, 4, 4);
    rng.fill_normal(x, 0.0f, 1.0f);
    Tensor y = avg_pool_global(x);
    CHECK(y.shape == Shape{2, 3, 1, 1});
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c) {
            double mean = 0.0;
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) mean += x.at(n, c, i, j);
            CHECK(y.at(n, c, 0, 0) == doctest::Approx(mean / 16.0).epsilon(1e-6));
        }
    Tensor r(2, 3, 1, 1);
    rng.fill_uniform(r, -1.0f, 1.0f);
    Tensor gx = avg_pool_global_backward(r, x.shape);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j)
                    CHECK(gx.at(n, c, i, j) == doctest::Approx(r.at(n, c, 0, 0) / 16.0f));
}

TEST_CASE("concat and split are exact inverses") {
    Rng rng(47);
    Tensor a(2, 3, 4, 4), b(2, 5, 4, 4);
    rng.fill_normal(a, 0.0f, 1.0f);
    rng.fill_normal(b, 0.0f, 1.0f);
    Tensor cat = concat_channels(a, b);
    CHECK(cat.shape == Shape{2, 8, 4, 4});
    CHECK(cat.at(1, 2, 3, 3) == a.at(1, 2, 3, 3));
    CHECK(cat.at(1, 3, 0, 0) == b.at(1, 0, 0, 0));
    auto [fa, fb] = split_channels(cat, 3);
    CHECK(bit_equal(fa, a));
    CHECK(bit_equal(fb, b));
    CHECK_THROWS_AS(split_channels(cat, 9), std::invalid_argument);
}

TEST_CASE("softmax cross entropy matches a double-precision oracle") {
    Rng rng(53);
    Tensor logits(4, 5, 1, 1);
    rng.fill_normal(logits, 0.0f, 2.0f);
    std::vector<int> labels = {3, 0, 4, 1};

    LossResult lr = softmax_cross_entropy(logits, labels);

    double want = 0.0;
    for (int n = 0; n < 4; ++n) {
        double mx = -1e30;
        for (int k = 0; k < 5; ++k) mx = std::max(mx, double(logits.at(n, k, 0, 0)));
        double z = 0.0;
        for (int k = 0; k < 5; ++k) z += std::exp(double(logits.at(n, k, 0, 0)) - mx);
        want += -(double(logits.at(n, labels[n], 0, 0)) - mx - std::log(z));
        for (int k = 0; k < 5; ++k) {
            double p = std::exp(double(logits.at(n, k, 0, 0)) - mx) / z;
            double g = (p - (k == labels[n] ? 1.0 : 0.0)) / 4.0;  // mean over the batch
            CHECK(lr.grad_logits.at(n, k, 0, 0) == doctest::Approx(g).epsilon(1e-5));
        }
    }
    CHECK(lr.loss == doctest::Approx(want / 4.0).epsilon(1e-6));

    auto loss = [&]() { return softmax_cross_entropy(logits, labels).loss; };
    CHECK(fd_full(logits, lr.grad_logits, loss) <= 1e-3f);
}
