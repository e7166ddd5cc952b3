#include "revsnn/ops.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace revsnn {

namespace {

void check_conv_args(const Tensor& in, const Tensor& weights, int stride, const char* where) {
    if (weights.shape.h != 3 || weights.shape.w != 3)
        throw std::invalid_argument(std::string(where) + ": kernel must be 3x3, got " +
                                    weights.shape.str());
    if (weights.shape.c != in.shape.c)
        throw std::invalid_argument(std::string(where) + ": weight in-channels " +
                                    std::to_string(weights.shape.c) + " vs input channels " +
                                    std::to_string(in.shape.c));
    if (stride != 1 && stride != 2)
        throw std::invalid_argument(std::string(where) + ": stride must be 1 or 2");
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

Tensor conv2d(const Tensor& in, const Tensor& weights, int stride) {
    check_conv_args(in, weights, stride, "conv2d");
    const int oc = weights.shape.n, ic = in.shape.c;
    const int oh = ceil_div(in.shape.h, stride), ow = ceil_div(in.shape.w, stride);
    Tensor out(in.shape.n, oc, oh, ow);
    for (int b = 0; b < in.shape.n; ++b)
        for (int o = 0; o < oc; ++o)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = 0.0;
                    for (int i = 0; i < ic; ++i)
                        for (int ky = 0; ky < 3; ++ky) {
                            const int y = oy * stride + ky - 1;
                            if (y < 0 || y >= in.shape.h) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int x = ox * stride + kx - 1;
                                if (x < 0 || x >= in.shape.w) continue;
                                acc += static_cast<double>(in.at(b, i, y, x)) *
                                       weights.at(o, i, ky, kx);
                            }
                        }
                    out.at(b, o, oy, ox) = static_cast<float>(acc);
                }
    return out;
}

Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weights, Shape in_shape,
                             int stride) {
    const int oc = weights.shape.n;
    if (grad_out.shape.c != oc)
        throw std::invalid_argument("conv2d_backward_input: grad channels mismatch");
    Tensor gin(in_shape);
    for (int b = 0; b < in_shape.n; ++b)
        for (int i = 0; i < in_shape.c; ++i)
            for (int y = 0; y < in_shape.h; ++y)
                for (int x = 0; x < in_shape.w; ++x) {
                    double acc = 0.0;
                    for (int o = 0; o < oc; ++o)
                        for (int ky = 0; ky < 3; ++ky) {
                            const int ny = y + 1 - ky;
                            if (ny % stride != 0) continue;
                            const int oy = ny / stride;
                            if (oy < 0 || oy >= grad_out.shape.h) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int nx = x + 1 - kx;
                                if (nx % stride != 0) continue;
                                const int ox = nx / stride;
                                if (ox < 0 || ox >= grad_out.shape.w) continue;
                                acc += static_cast<double>(grad_out.at(b, o, oy, ox)) *
                                       weights.at(o, i, ky, kx);
                            }
                        }
                    gin.at(b, i, y, x) = static_cast<float>(acc);
                }
    return gin;
}

Tensor conv2d_backward_weights(const Tensor& grad_out, const Tensor& in, Shape weight_shape,
                               int stride) {
    Tensor gw(weight_shape);
    for (int o = 0; o < weight_shape.n; ++o)
        for (int i = 0; i < weight_shape.c; ++i)
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    double acc = 0.0;
                    for (int b = 0; b < in.shape.n; ++b)
                        for (int oy = 0; oy < grad_out.shape.h; ++oy) {
                            const int y = oy * stride + ky - 1;
                            if (y < 0 || y >= in.shape.h) continue;
                            for (int ox = 0; ox < grad_out.shape.w; ++ox) {
                                const int x = ox * stride + kx - 1;
                                if (x < 0 || x >= in.shape.w) continue;
                                acc += static_cast<double>(grad_out.at(b, o, oy, ox)) *
                                       in.at(b, i, y, x);
                            }
                        }
                    gw.at(o, i, ky, kx) = static_cast<float>(acc);
                }
    return gw;
}

namespace {

void check_affine(const Tensor& in, const Tensor& gain, const Tensor& bias, const char* where) {
    if (gain.shape.c != in.shape.c || bias.shape.c != in.shape.c)
        throw std::invalid_argument(std::string(where) + ": gain/bias channels vs input " +
                                    std::to_string(in.shape.c));
}

}  // namespace

Tensor batch_norm_forward(const Tensor& in, const Tensor& gain, const Tensor& bias, float eps,
                          NormStats& stats) {
    check_affine(in, gain, bias, "batch_norm_forward");
    const int C = in.shape.c;
    const std::size_t m = static_cast<std::size_t>(in.shape.n) * in.shape.h * in.shape.w;
    if (m == 0) throw std::invalid_argument("batch_norm_forward: empty input");
    stats.mean.assign(C, 0.0);
    stats.invstd.assign(C, 0.0);
    for (int c = 0; c < C; ++c) {
        double sum = 0.0, sumsq = 0.0;
        for (int b = 0; b < in.shape.n; ++b)
            for (int y = 0; y < in.shape.h; ++y)
                for (int x = 0; x < in.shape.w; ++x) {
                    const double v = in.at(b, c, y, x);
                    sum += v;
                    sumsq += v * v;
                }
        const double mean = sum / static_cast<double>(m);
        double var = sumsq / static_cast<double>(m) - mean * mean;
        if (var < 0.0) var = 0.0;
        stats.mean[c] = mean;
        stats.invstd[c] = 1.0 / std::sqrt(var + static_cast<double>(eps));
    }
    return batch_norm_apply(in, gain, bias, stats);
}

Tensor batch_norm_apply(const Tensor& in, const Tensor& gain, const Tensor& bias,
                        const NormStats& stats) {
    check_affine(in, gain, bias, "batch_norm_apply");
    if (static_cast<int>(stats.mean.size()) != in.shape.c)
        throw std::invalid_argument("batch_norm_apply: stats size vs channels");
    Tensor out(in.shape);
    for (int b = 0; b < in.shape.n; ++b)
        for (int c = 0; c < in.shape.c; ++c) {
            const double mean = stats.mean[c], r = stats.invstd[c];
            const double g = gain.at(0, c, 0, 0), be = bias.at(0, c, 0, 0);
            for (int y = 0; y < in.shape.h; ++y)
                for (int x = 0; x < in.shape.w; ++x)
                    out.at(b, c, y, x) =
                        static_cast<float>(g * ((in.at(b, c, y, x) - mean) * r) + be);
        }
    return out;
}

void batch_norm_backward(const Tensor& in, const Tensor& gain, const NormStats& stats,
                         const Tensor& grad_out, Tensor& grad_in, Tensor& grad_gain,
                         Tensor& grad_bias) {
    check_same_shape(in, grad_out, "batch_norm_backward");
    const int C = in.shape.c;
    const double m = static_cast<double>(in.shape.n) * in.shape.h * in.shape.w;
    grad_in = Tensor(in.shape);
    for (int c = 0; c < C; ++c) {
        const double mean = stats.mean[c], r = stats.invstd[c];
        const double g = gain.at(0, c, 0, 0);
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < in.shape.n; ++b)
            for (int y = 0; y < in.shape.h; ++y)
                for (int x = 0; x < in.shape.w; ++x) {
                    const double dy = grad_out.at(b, c, y, x);
                    const double xhat = (in.at(b, c, y, x) - mean) * r;
                    sum_dy += dy;
                    sum_dy_xhat += dy * xhat;
                }
        grad_gain.at(0, c, 0, 0) += static_cast<float>(sum_dy_xhat);
        grad_bias.at(0, c, 0, 0) += static_cast<float>(sum_dy);
        const double k = g * r / m;
        for (int b = 0; b < in.shape.n; ++b)
            for (int y = 0; y < in.shape.h; ++y)
                for (int x = 0; x < in.shape.w; ++x) {
                    const double dy = grad_out.at(b, c, y, x);
                    const double xhat = (in.at(b, c, y, x) - mean) * r;
                    grad_in.at(b, c, y, x) =
                        static_cast<float>(k * (m * dy - sum_dy - xhat * sum_dy_xhat));
                }
    }
}

namespace {

void check_groups(const Tensor& in, int groups, const char* where) {
    if (groups <= 0 || in.shape.c % groups != 0)
        throw std::invalid_argument(std::string(where) + ": channels " +
                                    std::to_string(in.shape.c) + " not divisible by groups " +
                                    std::to_string(groups));
}

}  // namespace

Tensor group_norm_forward(const Tensor& in, int groups, const Tensor& gain, const Tensor& bias,
                          float eps, NormStats& stats) {
    check_affine(in, gain, bias, "group_norm_forward");
    check_groups(in, groups, "group_norm_forward");
    const int cpg = in.shape.c / groups;
    const double m = static_cast<double>(cpg) * in.shape.h * in.shape.w;
    stats.mean.assign(static_cast<std::size_t>(in.shape.n) * groups, 0.0);
    stats.invstd.assign(static_cast<std::size_t>(in.shape.n) * groups, 0.0);
    for (int b = 0; b < in.shape.n; ++b)
        for (int g = 0; g < groups; ++g) {
            double sum = 0.0, sumsq = 0.0;
            for (int c = g * cpg; c < (g + 1) * cpg; ++c)
                for (int y = 0; y < in.shape.h; ++y)
                    for (int x = 0; x < in.shape.w; ++x) {
                        const double v = in.at(b, c, y, x);
                        sum += v;
                        sumsq += v * v;
                    }
            const double mean = sum / m;
            double var = sumsq / m - mean * mean;
            if (var < 0.0) var = 0.0;
            stats.mean[static_cast<std::size_t>(b) * groups + g] = mean;
            stats.invstd[static_cast<std::size_t>(b) * groups + g] =
                1.0 / std::sqrt(var + static_cast<double>(eps));
        }
    return group_norm_apply(in, groups, gain, bias, stats);
}

Tensor group_norm_apply(const Tensor& in, int groups, const Tensor& gain, const Tensor& bias,
                        const NormStats& stats) {
    check_affine(in, gain, bias, "group_norm_apply");
    check_groups(in, groups, "group_norm_apply");
    const int cpg = in.shape.c / groups;
    Tensor out(in.shape);
    for (int b = 0; b < in.shape.n; ++b)
        for (int c = 0; c < in.shape.c; ++c) {
            const std::size_t gi = static_cast<std::size_t>(b) * groups + c / cpg;
            const double mean = stats.mean[gi], r = stats.invstd[gi];
            const double g = gain.at(0, c, 0, 0), be = bias.at(0, c, 0, 0);
            for (int y = 0; y < in.shape.h; ++y)
                for (int x = 0; x < in.shape.w; ++x)
                    out.at(b, c, y, x) =
                        static_cast<float>(g * ((in.at(b, c, y, x) - mean) * r) + be);
        }
    return out;
}

void group_norm_backward(const Tensor& in, int groups, const Tensor& gain, const NormStats& stats,
                         const Tensor& grad_out, Tensor& grad_in, Tensor& grad_gain,
                         Tensor& grad_bias) {
    check_same_shape(in, grad_out, "group_norm_backward");
    check_groups(in, groups, "group_norm_backward");
    const int cpg = in.shape.c / groups;
    const double m = static_cast<double>(cpg) * in.shape.h * in.shape.w;
    grad_in = Tensor(in.shape);
    for (int b = 0; b < in.shape.n; ++b)
        for (int g = 0; g < groups; ++g) {
            const std::size_t gi = static_cast<std::size_t>(b) * groups + g;
            const double mean = stats.mean[gi], r = stats.invstd[gi];
            // z is the adjoint of the normalized value; gain folds in per channel.
            double sum_z = 0.0, sum_z_xhat = 0.0;
            for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
                const double gc = gain.at(0, c, 0, 0);
                for (int y = 0; y < in.shape.h; ++y)
                    for (int x = 0; x < in.shape.w; ++x) {
                        const double dy = grad_out.at(b, c, y, x);
                        const double xhat = (in.at(b, c, y, x) - mean) * r;
                        sum_z += dy * gc;
                        sum_z_xhat += dy * gc * xhat;
                    }
            }
            for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
                const double gc = gain.at(0, c, 0, 0);
                double dgain = 0.0, dbias = 0.0;
                for (int y = 0; y < in.shape.h; ++y)
                    for (int x = 0; x < in.shape.w; ++x) {
                        const double dy = grad_out.at(b, c, y, x);
                        const double xhat = (in.at(b, c, y, x) - mean) * r;
                        dgain += dy * xhat;
                        dbias += dy;
                        grad_in.at(b, c, y, x) = static_cast<float>(
                            (r / m) * (m * dy * gc - sum_z - xhat * sum_z_xhat));
                    }
                grad_gain.at(0, c, 0, 0) += static_cast<float>(dgain);
                grad_bias.at(0, c, 0, 0) += static_cast<float>(dbias);
            }
        }
}

int group_count_for(int channels) { return std::gcd(channels, 8); }

Tensor linear_forward(const Tensor& in, const Tensor& weights, const Tensor& bias) {
    if (in.shape.h != 1 || in.shape.w != 1)
        throw std::invalid_argument("linear_forward: expects (B,C,1,1) input");
    if (weights.shape.c != in.shape.c)
        throw std::invalid_argument("linear_forward: weight columns vs input channels");
    const int K = weights.shape.n;
    Tensor out(in.shape.n, K, 1, 1);
    for (int b = 0; b < in.shape.n; ++b)
        for (int k = 0; k < K; ++k) {
            double acc = bias.at(0, k, 0, 0);
            for (int c = 0; c < in.shape.c; ++c)
                acc += static_cast<double>(in.at(b, c, 0, 0)) * weights.at(k, c, 0, 0);
            out.at(b, k, 0, 0) = static_cast<float>(acc);
        }
    return out;
}

void linear_backward(const Tensor& grad_out, const Tensor& in, const Tensor& weights,
                     Tensor& grad_in, Tensor& grad_weights, Tensor& grad_bias) {
    const int K = weights.shape.n, C = weights.shape.c;
    grad_in = Tensor(in.shape);
    for (int b = 0; b < in.shape.n; ++b)
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int k = 0; k < K; ++k)
                acc += static_cast<double>(grad_out.at(b, k, 0, 0)) * weights.at(k, c, 0, 0);
            grad_in.at(b, c, 0, 0) = static_cast<float>(acc);
        }
    for (int k = 0; k < K; ++k) {
        double db = 0.0;
        for (int b = 0; b < in.shape.n; ++b) db += grad_out.at(b, k, 0, 0);
        grad_bias.at(0, k, 0, 0) += static_cast<float>(db);
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int b = 0; b < in.shape.n; ++b)
                acc += static_cast<double>(grad_out.at(b, k, 0, 0)) * in.at(b, c, 0, 0);
            grad_weights.at(k, c, 0, 0) += static_cast<float>(acc);
        }
    }
}

Tensor avg_pool_global(const Tensor& in) {
    Tensor out(in.shape.n, in.shape.c, 1, 1);
    const double m = static_cast<double>(in.shape.h) * in.shape.w;
    for (int b = 0; b < in.shape.n; ++b)
        for (int c = 0; c < in.shape.c; ++c) {
            double acc = 0.0;
            for (int y = 0; y < in.shape.h; ++y)
                for (int x = 0; x < in.shape.w; ++x) acc += in.at(b, c, y, x);
            out.at(b, c, 0, 0) = static_cast<float>(acc / m);
        }
    return out;
}

Tensor avg_pool_global_backward(const Tensor& grad_out, Shape in_shape) {
    Tensor gin(in_shape);
    const float inv_m = 1.0f / (static_cast<float>(in_shape.h) * in_shape.w);
    for (int b = 0; b < in_shape.n; ++b)
        for (int c = 0; c < in_shape.c; ++c) {
            const float g = grad_out.at(b, c, 0, 0) * inv_m;
            for (int y = 0; y < in_shape.h; ++y)
                for (int x = 0; x < in_shape.w; ++x) gin.at(b, c, y, x) = g;
        }
    return gin;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.shape.n != b.shape.n || a.shape.h != b.shape.h || a.shape.w != b.shape.w)
        throw std::invalid_argument("concat_channels: incompatible shapes " + a.shape.str() +
                                    " vs " + b.shape.str());
    Tensor out(a.shape.n, a.shape.c + b.shape.c, a.shape.h, a.shape.w);
    for (int n = 0; n < a.shape.n; ++n) {
        for (int c = 0; c < a.shape.c; ++c)
            for (int y = 0; y < a.shape.h; ++y)
                for (int x = 0; x < a.shape.w; ++x) out.at(n, c, y, x) = a.at(n, c, y, x);
        for (int c = 0; c < b.shape.c; ++c)
            for (int y = 0; y < a.shape.h; ++y)
                for (int x = 0; x < a.shape.w; ++x)
                    out.at(n, a.shape.c + c, y, x) = b.at(n, c, y, x);
    }
    return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& t, int first_channels) {
    if (first_channels <= 0 || first_channels >= t.shape.c)
        throw std::invalid_argument("split_channels: first_channels out of range");
    Tensor a(t.shape.n, first_channels, t.shape.h, t.shape.w);
    Tensor b(t.shape.n, t.shape.c - first_channels, t.shape.h, t.shape.w);
    for (int n = 0; n < t.shape.n; ++n) {
        for (int c = 0; c < first_channels; ++c)
            for (int y = 0; y < t.shape.h; ++y)
                for (int x = 0; x < t.shape.w; ++x) a.at(n, c, y, x) = t.at(n, c, y, x);
        for (int c = first_channels; c < t.shape.c; ++c)
            for (int y = 0; y < t.shape.h; ++y)
                for (int x = 0; x < t.shape.w; ++x)
                    b.at(n, c - first_channels, y, x) = t.at(n, c, y, x);
    }
    return {std::move(a), std::move(b)};
}

LossResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (static_cast<int>(labels.size()) != logits.shape.n)
        throw std::invalid_argument("softmax_cross_entropy: labels size vs batch");
    const int B = logits.shape.n, K = logits.shape.c;
    LossResult res;
    res.grad_logits = Tensor(logits.shape);
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        if (labels[b] < 0 || labels[b] >= K)
            throw std::invalid_argument("softmax_cross_entropy: label out of range");
        double mx = logits.at(b, 0, 0, 0);
        for (int k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(logits.at(b, k, 0, 0)));
        double denom = 0.0;
        for (int k = 0; k < K; ++k) denom += std::exp(logits.at(b, k, 0, 0) - mx);
        total += -(logits.at(b, labels[b], 0, 0) - mx - std::log(denom));
        for (int k = 0; k < K; ++k) {
            const double p = std::exp(logits.at(b, k, 0, 0) - mx) / denom;
            res.grad_logits.at(b, k, 0, 0) =
                static_cast<float>((p - (k == labels[b] ? 1.0 : 0.0)) / B);
        }
    }
    res.loss = total / B;
    return res;
}

}  // namespace revsnn
