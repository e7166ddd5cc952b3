#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <stdexcept>

#include "revsnn/memory.hpp"
#include "revsnn/residual.hpp"

using namespace revsnn;

namespace {

double dot(const Tensor& a, const Tensor& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        s += static_cast<double>(a.data[i]) * static_cast<double>(r.data[i]);
    return s;
}

float fd_probe(Tensor& target, const Tensor& analytic, const std::function<double()>& loss,
               Rng& rng, int probes) {
    const float h = 1e-3f;
    float worst = 0.0f;
    for (int p = 0; p < probes; ++p) {
        int i = rng.next_index(static_cast<int>(target.data.size()));
        float keep = target.data[i];
        target.data[i] = keep + h;
        double lp = loss();
        target.data[i] = keep - h;
        double lm = loss();
        target.data[i] = keep;
        double fd = (lp - lm) / (2.0 * h);
        double an = analytic.data[i];
        worst = std::max(worst,
                         float(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0})));
    }
    return worst;
}

}  // namespace

TEST_CASE("param store slots, lookups and gradients") {
    ParamStore store;
    int a = store.add("w", Tensor(2, 3, 3, 3));
    int b = store.add("running", Tensor(1, 3, 1, 1), false);
    CHECK(store.count() == 2);
    CHECK(store.find("w") == a);
    CHECK(store.find("nope") == -1);
    CHECK(store.name(b) == "running");
    CHECK(store.trainable(a));
    CHECK_FALSE(store.trainable(b));
    CHECK_THROWS_AS(store.add("w", Tensor(1, 1, 1, 1)), std::invalid_argument);

    CHECK(store.grad(a).shape == store.value(a).shape);
    store.grad(a).data[0] = 5.0f;
    store.zero_grads();
    CHECK(store.grad(a).data[0] == 0.0f);

    CHECK(store.scalar_count(true) == 2u * 3 * 3 * 3);
    CHECK(store.scalar_count(false) == 2u * 3 * 3 * 3 + 3);
    CHECK(store.bytes() == (2u * 3 * 3 * 3 + 3) * sizeof(float));
}

TEST_CASE("context bytes and meter leases") {
    FnCtx ctx;
    ctx.saved.push_back(Tensor(1, 1, 2, 2));
    ctx.saved.push_back(Tensor(1, 2, 2, 2));
    CHECK(ctx.bytes() == 12 * sizeof(float));

    MemoryMeter meter;
    ctx.attach_lease(&meter, MemCategory::ReversibleInterior);
    CHECK(meter.current(MemCategory::ReversibleInterior) == 12 * sizeof(float));
    CHECK(meter.current_activation() == 12 * sizeof(float));
    ctx = FnCtx{};
    CHECK(meter.current_activation() == 0);
    CHECK(meter.peak_activation() == 12 * sizeof(float));
}

TEST_CASE("residual function replays its recorded statistics bit-exact") {
    Rng rng(3);
    ParamStore store;
    NeuronConfig ncfg;
    ResidualFn fn(store, "f", 6, ncfg, ActKind::Spike, &rng);

    Tensor x(2, 6, 5, 5);
    rng.fill_normal(x, 0.0f, 1.0f);
    FnStats stats;
    FnCtx ctx;
    Tensor train = fn.forward(store, x, EvalMode::Train, &stats, &ctx);
    CHECK(train.shape == x.shape);
    CHECK(ctx.saved.size() == 4);  // input, conv1 out, gn out, conv2 out

    Tensor replay = fn.forward(store, x, EvalMode::Replay, &stats, nullptr);
    CHECK(bit_equal(train, replay));
}

TEST_CASE("folding train statistics aligns inference with the train pass") {
    Rng rng(5);
    ParamStore store;
    NeuronConfig ncfg;
    ResidualFn fn(store, "f", 4, ncfg, ActKind::Tanh, &rng);

    Tensor x(3, 4, 5, 5);
    rng.fill_normal(x, 0.3f, 1.0f);
    FnStats stats;
    Tensor train = fn.forward(store, x, EvalMode::Train, &stats, nullptr);
    Tensor infer_cold = fn.forward(store, x, EvalMode::Infer, nullptr, nullptr);
    CHECK(max_abs_diff(train, infer_cold) > 1e-3f);  // fresh running stats disagree

    fn.fold_running_stats(store, stats, 1.0f);  // momentum 1: adopt the batch outright
    Tensor infer = fn.forward(store, x, EvalMode::Infer, nullptr, nullptr);
    CHECK(max_abs_diff(train, infer) <= 1e-4f);
}

TEST_CASE("residual backward passes finite differences") {
    Rng rng(7);
    ParamStore store;
    NeuronConfig ncfg;
    ResidualFn fn(store, "f", 4, ncfg, ActKind::Tanh, &rng);

    Tensor x(2, 4, 5, 5), r(2, 4, 5, 5);
    rng.fill_normal(x, 0.0f, 1.0f);
    rng.fill_uniform(r, -1.0f, 1.0f);

    auto loss = [&]() {
        FnStats st;
        return dot(fn.forward(store, x, EvalMode::Train, &st, nullptr), r);
    };

    store.zero_grads();
    FnStats st;
    FnCtx ctx;
    fn.forward(store, x, EvalMode::Train, &st, &ctx);
    Tensor gx = fn.backward(store, ctx, st, r);

    float worst = fd_probe(x, gx, loss, rng, 16);
    for (int slot : {fn.conv1, fn.gn_gain, fn.gn_bias, fn.conv2, fn.bn_gain, fn.bn_bias}) {
        Tensor analytic = store.grad(slot);
        worst = std::max(worst, fd_probe(store.value(slot), analytic, loss, rng, 8));
    }
    CHECK(worst <= 1e-3f);
}

TEST_CASE("fused module halves equal the split modules") {
    Rng rng(11);
    ParamStore src;
    NeuronConfig ncfg;
    FusedFn fused(src, "m", 6, ncfg, ActKind::Spike, &rng);
    ParamStore dst;
    SplitFns sp = split_fused_params(src, fused, dst, "m", ncfg, ActKind::Spike);

    Tensor x(2, 6, 5, 5);
    rng.fill_normal(x, 0.0f, 1.0f);

    FnStats stf, stg, stn;
    FnCtx cxf, cxg, cxn;
    FusedFn::Out out = fused.forward(src, x, EvalMode::Train, &stf, &cxf);
    Tensor yg = sp.g->forward(dst, x, EvalMode::Train, &stg, &cxg);
    Tensor yf = sp.f->forward(dst, x, EvalMode::Train, &stn, &cxn);
    CHECK(max_abs_diff(out.g_part, yg) <= 1e-6f);
    CHECK(max_abs_diff(out.f_part, yf) <= 1e-6f);

    // Backward: the g/f roles share conv1, so its gradient is the sum of the
    // split modules'; the second conv and batch norm split by rows/channels.
    Tensor gg(2, 6, 5, 5), gf(2, 6, 5, 5);
    rng.fill_uniform(gg, -1.0f, 1.0f);
    rng.fill_uniform(gf, -1.0f, 1.0f);
    src.zero_grads();
    dst.zero_grads();
    Tensor gx_fused = fused.backward(src, cxf, stf, gg, gf);
    Tensor gx_g = sp.g->backward(dst, cxg, stg, gg);
    Tensor gx_f = sp.f->backward(dst, cxn, stn, gf);
    CHECK(max_abs_diff(gx_fused, add(gx_g, gx_f)) <= 1e-4f);

    Tensor want_c1 = add(dst.grad(sp.g->conv1), dst.grad(sp.f->conv1));
    CHECK(max_abs_diff(src.grad(fused.conv1), want_c1) <= 1e-4f);
    Tensor want_gn = add(dst.grad(sp.g->gn_gain), dst.grad(sp.f->gn_gain));
    CHECK(max_abs_diff(src.grad(fused.gn_gain), want_gn) <= 1e-4f);

    const Tensor& c2 = src.grad(fused.conv2);  // (2c, c, 3, 3): g rows then f rows
    const Tensor& c2g = dst.grad(sp.g->conv2);
    const Tensor& c2f = dst.grad(sp.f->conv2);
    float worst = 0.0f;
    for (int k = 0; k < 6; ++k)
        for (int c = 0; c < 6; ++c)
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    worst = std::max(worst, std::abs(c2.at(k, c, i, j) - c2g.at(k, c, i, j)));
                    worst = std::max(worst, std::abs(c2.at(k + 6, c, i, j) - c2f.at(k, c, i, j)));
                }
    CHECK(worst <= 1e-4f);

    for (int c = 0; c < 6; ++c) {
        CHECK(src.grad(fused.bn_gain).data[c] ==
              doctest::Approx(dst.grad(sp.g->bn_gain).data[c]).epsilon(1e-4));
        CHECK(src.grad(fused.bn_gain).data[c + 6] ==
              doctest::Approx(dst.grad(sp.f->bn_gain).data[c]).epsilon(1e-4));
        CHECK(src.grad(fused.bn_bias).data[c] ==
              doctest::Approx(dst.grad(sp.g->bn_bias).data[c]).epsilon(1e-4));
        CHECK(src.grad(fused.bn_bias).data[c + 6] ==
              doctest::Approx(dst.grad(sp.f->bn_bias).data[c]).epsilon(1e-4));
    }
}

TEST_CASE("he init spread follows fan-in") {
    Rng rng(13);
    Tensor w(64, 32, 3, 3);
    he_init_conv(rng, w);
    double mean = 0.0, var = 0.0;
    for (float v : w.data) mean += v;
    mean /= w.data.size();
    for (float v : w.data) var += (v - mean) * (v - mean);
    var /= w.data.size();
    double want = std::sqrt(2.0 / (32 * 9));
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::sqrt(var) == doctest::Approx(want).epsilon(0.1));
}

TEST_CASE("smooth activation fallback is tanh") {
    Tensor x(1, 1, 1, 3);
    x.data = {-0.5f, 0.0f, 2.0f};
    NeuronConfig ncfg;
    Tensor y = apply_activation(x, ActKind::Tanh, ncfg);
    for (int i = 0; i < 3; ++i) CHECK(y.data[i] == doctest::Approx(std::tanh(x.data[i])));

    Tensor go(1, 1, 1, 3);
    go.data = {1.0f, 2.0f, 3.0f};
    Tensor gx = activation_backward(go, x, ActKind::Tanh, ncfg);
    for (int i = 0; i < 3; ++i) {
        float t = std::tanh(x.data[i]);
        CHECK(gx.data[i] == doctest::Approx(go.data[i] * (1.0f - t * t)));
    }
}
