#include "revsnn/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace revsnn {
namespace {

constexpr float kNormEps = 1e-5f;

std::string strf(const char* fmt, ...) {
    char buf[1024];
    va_list ap;
    va_start(ap, fmt);
    std::vsnprintf(buf, sizeof(buf), fmt, ap);
    va_end(ap);
    return buf;
}

struct Checker {
    bool pass = true;
    std::ostringstream out;

    void check(bool ok, const std::string& line) {
        out << (ok ? "PASS " : "FAIL ") << line << '\n';
        if (!ok) pass = false;
    }
    void note(const std::string& line) { out << line << '\n'; }
    SuiteResult done() const { return SuiteResult{pass, out.str()}; }
};

// Owns the modules a ChainModules view points into.
struct ChainFixture {
    ParamStore params;
    std::vector<std::unique_ptr<ResidualFn>> fs, gs;
    std::unique_ptr<ResidualFn> f_first, g_last;
    std::vector<std::unique_ptr<FusedFn>> mods;
    ChainModules chain;
};

std::unique_ptr<ChainFixture> make_chain(Flavor flavor, int blocks, int channels,
                                         const NeuronConfig& ncfg, ActKind act,
                                         std::uint64_t seed) {
    auto fx = std::make_unique<ChainFixture>();
    Rng rng(seed);
    fx->chain.flavor = flavor;
    if (flavor == Flavor::ParaRevFused) {
        fx->f_first = std::make_unique<ResidualFn>(fx->params, "ffirst", channels, ncfg, act, &rng);
        for (int k = 1; k < blocks; ++k)
            fx->mods.push_back(std::make_unique<FusedFn>(fx->params, "m" + std::to_string(k),
                                                         channels, ncfg, act, &rng));
        fx->g_last = std::make_unique<ResidualFn>(fx->params, "glast", channels, ncfg, act, &rng);
        fx->chain.fused.f_first = fx->f_first.get();
        for (auto& m : fx->mods) fx->chain.fused.fused.push_back(m.get());
        fx->chain.fused.g_last = fx->g_last.get();
    } else {
        for (int k = 1; k <= blocks; ++k) {
            std::string base = "b" + std::to_string(k);
            fx->fs.push_back(
                std::make_unique<ResidualFn>(fx->params, base + ".f", channels, ncfg, act, &rng));
            fx->gs.push_back(
                std::make_unique<ResidualFn>(fx->params, base + ".g", channels, ncfg, act, &rng));
            fx->chain.fs.push_back(fx->fs.back().get());
            fx->chain.gs.push_back(fx->gs.back().get());
        }
    }
    return fx;
}

StreamPair random_pair(Rng& rng, int n, int c, int h, int w) {
    StreamPair p{Tensor(n, c, h, w), Tensor(n, c, h, w)};
    rng.fill_normal(p.s1, 0.0f, 1.0f);
    rng.fill_normal(p.s2, 0.0f, 1.0f);
    return p;
}

float pair_diff(const StreamPair& a, const StreamPair& b) {
    return std::max(max_abs_diff(a.s1, b.s1), max_abs_diff(a.s2, b.s2));
}

// Conv weights on the 1/8 grid and inputs on the 1/16 grid keep every value
// in the pass exactly representable (integer double accumulation, then spike
// outputs in {0, 1}), so reconstruction must be bit-exact, not merely close.
class DyadicFn : public StreamFn {
public:
    DyadicFn(Rng& rng, int channels) : w_(channels, channels, 3, 3) {
        for (float& v : w_.data) v = static_cast<float>(rng.next_index(17) - 8) / 8.0f;
        ncfg_.threshold = 0.5f;
    }

    Tensor forward(const ParamStore&, const Tensor& x, EvalMode, FnStats*,
                   FnCtx* ctx) const override {
        Tensor h = conv2d(x, w_, 1);
        Tensor s = spike_activation(h, ncfg_);
        if (ctx) ctx->saved = {x, h};
        return s;
    }

    Tensor backward(ParamStore&, const FnCtx& ctx, const FnStats&,
                    const Tensor& grad_out) const override {
        Tensor gh = spike_activation_backward(grad_out, ctx.saved[1], ncfg_);
        return conv2d_backward_input(gh, w_, ctx.saved[0].shape, 1);
    }

private:
    Tensor w_;
    NeuronConfig ncfg_;
};

double dot_loss(const Tensor& out, const Tensor& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        s += static_cast<double>(out.data[i]) * static_cast<double>(r.data[i]);
    return s;
}

// Central differences. Gradient entries sit near unit scale by construction,
// so the unit floor in the denominator keeps the measure relative where it
// matters and finite where a gradient vanishes. The step must stay near the
// float optimum cbrt(eps) ~ 5e-3 once the loss sums hundreds of float terms,
// or the quotient drowns in rounding noise.
float fd_worst_rel(Tensor& target, const Tensor& analytic,
                   const std::function<double()>& loss, Rng& rng, int probes,
                   float h = 1e-3f) {
    float worst = 0.0f;
    int count = std::min<int>(probes, static_cast<int>(target.data.size()));
    for (int p = 0; p < count; ++p) {
        int idx = rng.next_index(static_cast<int>(target.data.size()));
        float keep = target.data[idx];
        double an = analytic.data[idx];
        // two quasi-independent estimates; a wrong gradient fails both, while
        // one unlucky rounding draw no longer fails a correct one
        double rel = 1.0;
        for (float step : {h, 2.0f * h}) {
            target.data[idx] = keep + step;
            double lp = loss();
            target.data[idx] = keep - step;
            double lm = loss();
            target.data[idx] = keep;
            double fd = (lp - lm) / (2.0 * static_cast<double>(step));
            rel = std::min(rel, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0}));
        }
        worst = std::max(worst, static_cast<float>(rel));
    }
    return worst;
}

std::unique_ptr<ResidualFn> copy_residual(const ParamStore& src, const ResidualFn& fn,
                                          ParamStore& dst, const std::string& prefix,
                                          const NeuronConfig& ncfg, ActKind act) {
    auto out = std::make_unique<ResidualFn>(dst, prefix, fn.channels(), ncfg, act, nullptr);
    dst.value(out->conv1) = src.value(fn.conv1);
    dst.value(out->gn_gain) = src.value(fn.gn_gain);
    dst.value(out->gn_bias) = src.value(fn.gn_bias);
    dst.value(out->conv2) = src.value(fn.conv2);
    dst.value(out->bn_gain) = src.value(fn.bn_gain);
    dst.value(out->bn_bias) = src.value(fn.bn_bias);
    dst.value(out->bn_rmean) = src.value(fn.bn_rmean);
    dst.value(out->bn_rvar) = src.value(fn.bn_rvar);
    return out;
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double ms_between(std::chrono::steady_clock::time_point a,
                  std::chrono::steady_clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

}  // namespace

SuiteResult verify_inversion(const VerifyOptions& opt) {
    Checker ck;
    Executor exec(1);
    Rng rng(opt.seed);
    static const int kSteps[] = {1, 2, 4};

    float worst = 0.0f;
    int trips = 0, chains = 0;
    const int want = std::max(1, opt.inversion_trials);
    for (int i = 0; trips < want; ++i) {
        Flavor flavor = (i % 2 == 0) ? Flavor::ParaRev : Flavor::Baseline;
        int blocks = 1 + i % 4;
        int channels = (i % 3 == 0) ? 8 : 4;
        int timesteps = kSteps[i % 3];
        NeuronConfig ncfg;
        if (i % 5 == 0) {
            ncfg.surrogate = SurrogateKind::Arctan;
            ncfg.threshold = 0.75f;
        }
        auto fx = make_chain(flavor, blocks, channels, ncfg, ActKind::Spike, rng.next_u64());
        ++chains;
        for (int t = 0; t < timesteps && trips < want; ++t) {
            StreamPair x = random_pair(rng, 2, channels, 6, 6);
            ChainRecord rec;
            StreamPair y = chain_forward(fx->params, fx->chain, x, EvalMode::Train,
                                         Policy::Recompute, exec, &rec, nullptr);
            StreamPair back = chain_inverse(fx->params, fx->chain, y, rec);
            worst = std::max(worst, pair_diff(back, x));
            ++trips;
        }
    }
    ck.check(worst <= 1e-4f,
             strf("inversion: max round-trip error %.3e <= 1e-4 over %d round-trips "
                  "(%d chains, baseline+pararev, B in 1..4, T in {1,2,4})",
                  worst, trips, chains));

    float worst_fused = 0.0f;
    int fused_trips = 0;
    for (int i = 0; i < 12; ++i) {
        int blocks = 2 + i % 3;
        NeuronConfig ncfg;
        auto fx = make_chain(Flavor::ParaRevFused, blocks, 4, ncfg, ActKind::Spike, rng.next_u64());
        for (int t = 0; t < kSteps[i % 3]; ++t) {
            StreamPair x = random_pair(rng, 2, 4, 6, 6);
            ChainRecord rec;
            StreamPair y = chain_forward(fx->params, fx->chain, x, EvalMode::Train,
                                         Policy::Recompute, exec, &rec, nullptr);
            worst_fused = std::max(worst_fused, pair_diff(chain_inverse(fx->params, fx->chain, y, rec), x));
            ++fused_trips;
        }
    }
    ck.check(worst_fused <= 1e-4f,
             strf("inversion: fused max round-trip error %.3e <= 1e-4 over %d round-trips",
                  worst_fused, fused_trips));

    int exact = 0, exact_total = 0;
    for (int i = 0; i < 24; ++i) {
        Flavor flavor = (i % 2 == 0) ? Flavor::ParaRev : Flavor::Baseline;
        int blocks = 1 + i % 4, channels = 4;
        Rng wrng(rng.next_u64());
        std::vector<std::unique_ptr<DyadicFn>> owned;
        ChainModules chain;
        chain.flavor = flavor;
        for (int k = 0; k < 2 * blocks; ++k) owned.push_back(std::make_unique<DyadicFn>(wrng, channels));
        for (int k = 0; k < blocks; ++k) {
            chain.fs.push_back(owned[2 * k].get());
            chain.gs.push_back(owned[2 * k + 1].get());
        }
        ParamStore none;
        StreamPair x{Tensor(2, channels, 6, 6), Tensor(2, channels, 6, 6)};
        for (float& v : x.s1.data) v = static_cast<float>(wrng.next_index(33) - 16) / 16.0f;
        for (float& v : x.s2.data) v = static_cast<float>(wrng.next_index(33) - 16) / 16.0f;
        ChainRecord rec;
        StreamPair y = chain_forward(none, chain, x, EvalMode::Train, Policy::Recompute, exec,
                                     &rec, nullptr);
        StreamPair back = chain_inverse(none, chain, y, rec);
        ++exact_total;
        if (bit_equal(back.s1, x.s1) && bit_equal(back.s2, x.s2)) ++exact;
    }
    ck.check(exact == exact_total,
             strf("inversion: dyadic-weight round-trips bit-exact %d/%d", exact, exact_total));
    return ck.done();
}

SuiteResult verify_gradcheck(const VerifyOptions& opt) {
    Checker ck;
    Rng rng(opt.seed);
    const int probes = 12;
    const float tol = 1e-3f;

    {  // conv, both strides, input and weight grads
        for (int stride : {1, 2}) {
            Tensor x(2, 4, 6, 6), w(5, 4, 3, 3);
            rng.fill_normal(x, 0.0f, 1.0f);
            rng.fill_normal(w, 0.0f, 0.5f);
            Tensor probe = conv2d(x, w, stride);
            Tensor r(probe.shape);
            rng.fill_uniform(r, -1.0f, 1.0f);
            auto loss = [&]() { return dot_loss(conv2d(x, w, stride), r); };
            Tensor gx = conv2d_backward_input(r, w, x.shape, stride);
            Tensor gw = conv2d_backward_weights(r, x, w.shape, stride);
            float ex = fd_worst_rel(x, gx, loss, rng, probes);
            float ew = fd_worst_rel(w, gw, loss, rng, probes);
            ck.check(ex <= tol, strf("gradcheck conv stride %d input: max rel err %.3e <= 1e-3",
                                     stride, ex));
            ck.check(ew <= tol, strf("gradcheck conv stride %d weights: max rel err %.3e <= 1e-3",
                                     stride, ew));
        }
    }

    {  // batch norm, differentiating through the batch statistics
        Tensor x(3, 4, 4, 4), gain(1, 4, 1, 1), bias(1, 4, 1, 1), r(3, 4, 4, 4);
        rng.fill_normal(x, 0.0f, 1.0f);
        rng.fill_uniform(gain, 0.5f, 1.5f);
        rng.fill_uniform(bias, -0.5f, 0.5f);
        rng.fill_uniform(r, -1.0f, 1.0f);
        auto loss = [&]() {
            NormStats st;
            return dot_loss(batch_norm_forward(x, gain, bias, kNormEps, st), r);
        };
        NormStats st;
        batch_norm_forward(x, gain, bias, kNormEps, st);
        Tensor gx(x.shape), ggain(gain.shape), gbias(bias.shape);
        batch_norm_backward(x, gain, st, r, gx, ggain, gbias);
        float ex = fd_worst_rel(x, gx, loss, rng, probes);
        float eg = fd_worst_rel(gain, ggain, loss, rng, probes);
        float eb = fd_worst_rel(bias, gbias, loss, rng, probes);
        ck.check(ex <= tol, strf("gradcheck batch norm input: max rel err %.3e <= 1e-3", ex));
        ck.check(eg <= tol, strf("gradcheck batch norm gain: max rel err %.3e <= 1e-3", eg));
        ck.check(eb <= tol, strf("gradcheck batch norm bias: max rel err %.3e <= 1e-3", eb));
    }

    {  // group norm
        int groups = group_count_for(4);
        Tensor x(2, 4, 4, 4), gain(1, 4, 1, 1), bias(1, 4, 1, 1), r(2, 4, 4, 4);
        rng.fill_normal(x, 0.0f, 1.0f);
        rng.fill_uniform(gain, 0.5f, 1.5f);
        rng.fill_uniform(bias, -0.5f, 0.5f);
        rng.fill_uniform(r, -1.0f, 1.0f);
        auto loss = [&]() {
            NormStats st;
            return dot_loss(group_norm_forward(x, groups, gain, bias, kNormEps, st), r);
        };
        NormStats st;
        group_norm_forward(x, groups, gain, bias, kNormEps, st);
        Tensor gx(x.shape), ggain(gain.shape), gbias(bias.shape);
        group_norm_backward(x, groups, gain, st, r, gx, ggain, gbias);
        float ex = fd_worst_rel(x, gx, loss, rng, probes);
        float eg = fd_worst_rel(gain, ggain, loss, rng, probes);
        float eb = fd_worst_rel(bias, gbias, loss, rng, probes);
        ck.check(ex <= tol, strf("gradcheck group norm input: max rel err %.3e <= 1e-3", ex));
        ck.check(eg <= tol, strf("gradcheck group norm gain: max rel err %.3e <= 1e-3", eg));
        ck.check(eb <= tol, strf("gradcheck group norm bias: max rel err %.3e <= 1e-3", eb));
    }

    {  // linear head
        Tensor x(3, 4, 1, 1), w(5, 4, 1, 1), b(1, 5, 1, 1), r(3, 5, 1, 1);
        rng.fill_normal(x, 0.0f, 1.0f);
        rng.fill_normal(w, 0.0f, 0.5f);
        rng.fill_normal(b, 0.0f, 0.5f);
        rng.fill_uniform(r, -1.0f, 1.0f);
        auto loss = [&]() { return dot_loss(linear_forward(x, w, b), r); };
        Tensor gx(x.shape), gw(w.shape), gb(b.shape);
        linear_backward(r, x, w, gx, gw, gb);
        float ex = fd_worst_rel(x, gx, loss, rng, probes);
        float ew = fd_worst_rel(w, gw, loss, rng, probes);
        float eb = fd_worst_rel(b, gb, loss, rng, probes);
        ck.check(ex <= tol, strf("gradcheck linear input: max rel err %.3e <= 1e-3", ex));
        ck.check(ew <= tol, strf("gradcheck linear weights: max rel err %.3e <= 1e-3", ew));
        ck.check(eb <= tol, strf("gradcheck linear bias: max rel err %.3e <= 1e-3", eb));
    }

    {  // global average pool
        Tensor x(2, 3, 4, 4), r(2, 3, 1, 1);
        rng.fill_normal(x, 0.0f, 1.0f);
        rng.fill_uniform(r, -1.0f, 1.0f);
        auto loss = [&]() { return dot_loss(avg_pool_global(x), r); };
        Tensor gx = avg_pool_global_backward(r, x.shape);
        float ex = fd_worst_rel(x, gx, loss, rng, probes);
        ck.check(ex <= tol, strf("gradcheck avg pool input: max rel err %.3e <= 1e-3", ex));
    }

    {  // softmax cross entropy
        Tensor logits(4, 5, 1, 1);
        rng.fill_normal(logits, 0.0f, 2.0f);
        std::vector<int> labels(4);
        for (int& l : labels) l = rng.next_index(5);
        auto loss = [&]() { return softmax_cross_entropy(logits, labels).loss; };
        Tensor gl = softmax_cross_entropy(logits, labels).grad_logits;
        float ex = fd_worst_rel(logits, gl, loss, rng, probes);
        ck.check(ex <= tol, strf("gradcheck softmax xent logits: max rel err %.3e <= 1e-3", ex));
    }

    // Whole chains with the smooth activation swapped in: checks the coupled
    // backward recurrences end to end, parameters and inputs alike.
    Executor exec(1);
    for (Flavor flavor : {Flavor::Baseline, Flavor::ParaRev, Flavor::ParaRevFused}) {
        int blocks = flavor == Flavor::ParaRevFused ? 3 : 2;
        NeuronConfig ncfg;
        auto fx = make_chain(flavor, blocks, 4, ncfg, ActKind::Tanh, rng.next_u64());
        StreamPair x = random_pair(rng, 2, 4, 4, 4);
        StreamPair r = random_pair(rng, 2, 4, 4, 4);
        // sparse probe: the quotient's noise scales with the loss's float
        // term count, and a 2-block chain already sums hundreds of outputs
        for (Tensor* t : {&r.s1, &r.s2})
            for (float& v : t->data)
                if (rng.next_double() < 0.75) v = 0.0f;
        auto loss = [&]() {
            ChainRecord rec;
            StreamPair y = chain_forward(fx->params, fx->chain, x, EvalMode::Train,
                                         Policy::Recompute, exec, &rec, nullptr);
            return dot_loss(y.s1, r.s1) + dot_loss(y.s2, r.s2);
        };

        fx->params.zero_grads();
        ChainRecord rec;
        StreamPair y = chain_forward(fx->params, fx->chain, x, EvalMode::Train, Policy::Recompute,
                                     exec, &rec, nullptr);
        ChainBackwardResult bk = chain_backward(fx->params, fx->chain, y, r, exec, rec);

        const float hc = 5e-3f;  // chain losses sum ~200 float terms
        float worst = std::max(fd_worst_rel(x.s1, bk.grad_in.s1, loss, rng, probes, hc),
                               fd_worst_rel(x.s2, bk.grad_in.s2, loss, rng, probes, hc));
        for (int slot = 0; slot < fx->params.count(); ++slot) {
            if (!fx->params.trainable(slot)) continue;
            Tensor analytic = fx->params.grad(slot);
            worst = std::max(worst,
                             fd_worst_rel(fx->params.value(slot), analytic, loss, rng, 6, hc));
        }
        ck.check(worst <= tol,
                 strf("gradcheck %s chain (tanh, B=%d) inputs+params: max rel err %.3e <= 1e-3",
                      flavor_name(flavor), blocks, worst));
    }

    return ck.done();
}

SuiteResult verify_policy_equiv(const VerifyOptions& opt) {
    Checker ck;
    Executor exec(1);
    Rng rng(opt.seed);
    static const Flavor kFlavors[] = {Flavor::Baseline, Flavor::ParaRev, Flavor::ParaRevFused};
    static const int kSteps[] = {1, 2, 4};

    float worst = 0.0f;
    const int nets = std::max(1, opt.policy_nets);
    for (int i = 0; i < nets; ++i) {
        Flavor flavor = kFlavors[i % 3];
        int blocks = flavor == Flavor::ParaRevFused ? 2 + i % 3 : 1 + i % 4;
        int timesteps = kSteps[i % 3];
        NeuronConfig ncfg;
        auto fx = make_chain(flavor, blocks, 4, ncfg, ActKind::Spike, rng.next_u64());

        std::vector<StreamPair> xs, gys;
        for (int t = 0; t < timesteps; ++t) {
            xs.push_back(random_pair(rng, 2, 4, 5, 5));
            gys.push_back(random_pair(rng, 2, 4, 5, 5));
        }

        auto run = [&](Policy policy) {
            fx->params.zero_grads();
            std::vector<ChainRecord> recs(timesteps);
            std::vector<StreamPair> ys(timesteps);
            for (int t = 0; t < timesteps; ++t)
                ys[t] = chain_forward(fx->params, fx->chain, xs[t], EvalMode::Train, policy, exec,
                                      &recs[t], nullptr);
            std::vector<Tensor> grads;
            for (int t = timesteps - 1; t >= 0; --t) {
                ChainBackwardResult r =
                    chain_backward(fx->params, fx->chain, ys[t], gys[t], exec, recs[t]);
                grads.push_back(std::move(r.grad_in.s1));
                grads.push_back(std::move(r.grad_in.s2));
            }
            for (int slot = 0; slot < fx->params.count(); ++slot)
                if (fx->params.trainable(slot)) grads.push_back(fx->params.grad(slot));
            return grads;
        };

        std::vector<Tensor> a = run(Policy::StoreAll);
        std::vector<Tensor> b = run(Policy::Recompute);
        float num = 0.0f, den = 0.0f;
        for (std::size_t j = 0; j < a.size(); ++j) {
            num = std::max(num, max_abs_diff(a[j], b[j]));
            den = std::max(den, max_abs(a[j]));
        }
        worst = std::max(worst, num / std::max(den, 1e-8f));
    }
    ck.check(worst <= 1e-4f,
             strf("policy-equiv: max relative grad gap store-all vs recompute %.3e <= 1e-4 "
                  "over %d chains (all flavors, B up to 4, T in {1,2,4})",
                  worst, nets));
    return ck.done();
}

SuiteResult verify_memory_scaling(const VerifyOptions& opt) {
    Checker ck;

    auto measure_peak = [&](int blocks, int timesteps, Policy policy) {
        ArchSpec spec;
        spec.stage_blocks = {blocks};
        spec.stage_widths = {16};
        spec.stem_width = 32;
        spec.flavor = Flavor::ParaRev;
        spec.timesteps = timesteps;
        spec.num_classes = 4;
        spec.in_channels = 2;
        Network net(spec, opt.seed + 7);
        Executor exec(1);
        MemoryMeter meter;
        Rng rng(opt.seed + 11);
        std::vector<Tensor> steps;
        for (int t = 0; t < timesteps; ++t) {
            Tensor x(2, 2, 8, 8);
            rng.fill_normal(x, 0.0f, 1.0f);
            steps.push_back(std::move(x));
        }
        NetRecord rec;
        Tensor logits = net.forward(steps, EvalMode::Train, policy, exec, &rec, &meter);
        Tensor gl(logits.shape);
        rng.fill_normal(gl, 0.0f, 1.0f);
        net.backward(gl, steps, exec, rec);
        return meter.peak_activation();
    };

    static const int kDepths[] = {4, 8, 16};
    std::size_t rec_peak[3], all_peak[3];
    for (int i = 0; i < 3; ++i) {
        rec_peak[i] = measure_peak(kDepths[i], 4, Policy::Recompute);
        all_peak[i] = measure_peak(kDepths[i], 4, Policy::StoreAll);
        ck.note(strf("memory-scaling: D=%-2d T=4  recompute peak %8zu B   store-all peak %8zu B",
                     kDepths[i], rec_peak[i], all_peak[i]));
    }
    std::size_t rmin = std::min({rec_peak[0], rec_peak[1], rec_peak[2]});
    std::size_t rmax = std::max({rec_peak[0], rec_peak[1], rec_peak[2]});
    double variation = rmin ? static_cast<double>(rmax - rmin) / static_cast<double>(rmin) : 1.0;
    ck.check(variation < 0.10,
             strf("memory-scaling: recompute peak varies %.2f%% over D=4..16 (< 10%%)",
                  100.0 * variation));
    double growth = static_cast<double>(all_peak[2]) / static_cast<double>(all_peak[0]);
    ck.check(growth >= 3.0,
             strf("memory-scaling: store-all peak grows %.2fx from D=4 to D=16 (>= 3x)", growth));

    static const int kTs[] = {2, 4, 8};
    double per_t[3];
    for (int i = 0; i < 3; ++i) {
        std::size_t p = measure_peak(8, kTs[i], Policy::Recompute);
        per_t[i] = static_cast<double>(p) / kTs[i];
        ck.note(strf("memory-scaling: D=8  T=%d  recompute peak %8zu B  (%.1f B per step)",
                     kTs[i], p, per_t[i]));
    }
    double tmin = std::min({per_t[0], per_t[1], per_t[2]});
    double tmax = std::max({per_t[0], per_t[1], per_t[2]});
    ck.check(tmax <= tmin * 1.15,
             strf("memory-scaling: recompute peak per step spreads %.2f%% over T=2..8 (<= 15%%)",
                  100.0 * (tmax / tmin - 1.0)));
    return ck.done();
}

SuiteResult verify_critical_path() {
    Checker ck;
    for (int blocks : {1, 2, 4, 8, 16, 32}) {
        int base = build_forward_chain_graph(blocks, Flavor::Baseline).critical_path_length();
        int para = build_forward_chain_graph(blocks, Flavor::ParaRev).critical_path_length();
        int fused = build_forward_chain_graph(blocks, Flavor::ParaRevFused).critical_path_length();
        bool ok = base == 2 * blocks && para == blocks + 1 && fused == blocks + 1;
        ck.check(ok, strf("critical-path: B=%-2d baseline %2d (want %2d)  pararev %2d (want %2d)  "
                          "fused %2d (want %2d)",
                          blocks, base, 2 * blocks, para, blocks + 1, fused, blocks + 1));
    }
    return ck.done();
}

SuiteResult verify_fused_equiv(const VerifyOptions& opt) {
    Checker ck;
    Executor exec(1);
    Rng rng(opt.seed);
    NeuronConfig ncfg;

    for (int blocks : {2, 3, 4}) {
        auto fx = make_chain(Flavor::ParaRevFused, blocks, 8, ncfg, ActKind::Spike, rng.next_u64());

        ParamStore split;
        std::vector<std::unique_ptr<ResidualFn>> fs(blocks), gs(blocks);
        fs[0] = copy_residual(fx->params, *fx->f_first, split, "b1.f", ncfg, ActKind::Spike);
        for (int k = 1; k < blocks; ++k) {
            SplitFns sp = split_fused_params(fx->params, *fx->mods[k - 1], split,
                                             "m" + std::to_string(k), ncfg, ActKind::Spike);
            gs[k - 1] = std::move(sp.g);
            fs[k] = std::move(sp.f);
        }
        gs[blocks - 1] = copy_residual(fx->params, *fx->g_last, split,
                                       "b" + std::to_string(blocks) + ".g", ncfg, ActKind::Spike);
        ChainModules unfused;
        unfused.flavor = Flavor::ParaRev;
        for (int k = 0; k < blocks; ++k) {
            unfused.fs.push_back(fs[k].get());
            unfused.gs.push_back(gs[k].get());
        }

        float worst = 0.0f;
        for (int t = 0; t < 2; ++t) {
            StreamPair x = random_pair(rng, 2, 8, 5, 5);
            ChainRecord rec_f, rec_u;
            StreamPair yf = chain_forward(fx->params, fx->chain, x, EvalMode::Train,
                                          Policy::Recompute, exec, &rec_f, nullptr);
            StreamPair yu = chain_forward(split, unfused, x, EvalMode::Train, Policy::Recompute,
                                          exec, &rec_u, nullptr);
            worst = std::max(worst, pair_diff(yf, yu));
        }
        ck.check(worst <= 1e-5f,
                 strf("fused-equiv: B=%d fused vs split-parameter pararev max output gap "
                      "%.3e <= 1e-5",
                      blocks, worst));
    }
    return ck.done();
}

const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names = {"inversion",      "gradcheck",
                                                   "policy-equiv",   "memory-scaling",
                                                   "critical-path",  "fused-equiv"};
    return names;
}

SuiteResult run_suite(const std::string& name, const VerifyOptions& opt) {
    if (name == "inversion") return verify_inversion(opt);
    if (name == "gradcheck") return verify_gradcheck(opt);
    if (name == "policy-equiv") return verify_policy_equiv(opt);
    if (name == "memory-scaling") return verify_memory_scaling(opt);
    if (name == "critical-path") return verify_critical_path();
    if (name == "fused-equiv") return verify_fused_equiv(opt);
    std::string all;
    for (const std::string& s : suite_names()) all += (all.empty() ? "" : ", ") + s;
    throw std::invalid_argument("unknown verify suite '" + name + "' (expected one of: " + all +
                                ")");
}

std::vector<BenchRow> run_bench(const ArchSpec& arch, const std::vector<Flavor>& flavors,
                                const std::vector<int>& workers, int repeat, std::uint64_t seed) {
    if (flavors.empty()) throw std::invalid_argument("bench: no flavors given");
    if (workers.empty()) throw std::invalid_argument("bench: no worker counts given");
    if (repeat < 1) throw std::invalid_argument("bench: repeat must be positive");
    for (int w : workers)
        if (w < 1) throw std::invalid_argument("bench: worker counts must be positive");

    const int batch = 4, hw = 16;
    Rng rng(seed ^ 0x5deece66dull);
    std::vector<Tensor> steps;
    for (int t = 0; t < arch.timesteps; ++t) {
        Tensor x(batch, arch.in_channels, hw, hw);
        rng.fill_normal(x, 0.0f, 1.0f);
        steps.push_back(std::move(x));
    }
    Tensor grad_logits(batch, arch.num_classes, 1, 1);
    rng.fill_normal(grad_logits, 0.0f, 1.0f);

    // flavor -> workers -> (fwd, bwd, step, peak)
    struct Cell {
        double fwd = 0, bwd = 0, step = 0;
        std::size_t peak = 0;
    };
    std::map<Flavor, std::map<int, Cell>> cells;

    std::vector<Flavor> measured = flavors;
    if (std::find(measured.begin(), measured.end(), Flavor::Baseline) == measured.end())
        measured.push_back(Flavor::Baseline);

    for (Flavor flavor : measured) {
        ArchSpec spec = arch;
        spec.flavor = flavor;
        spec.validate();
        Network net(spec, seed);
        for (int w : workers) {
            Executor exec(w);
            auto one_step = [&](MemoryMeter* meter, double* fwd_ms, double* bwd_ms) {
                NetRecord rec;
                auto t0 = std::chrono::steady_clock::now();
                net.forward(steps, EvalMode::Train, Policy::Recompute, exec, &rec, meter);
                auto t1 = std::chrono::steady_clock::now();
                net.backward(grad_logits, steps, exec, rec);
                auto t2 = std::chrono::steady_clock::now();
                net.params().zero_grads();
                if (fwd_ms) *fwd_ms = ms_between(t0, t1);
                if (bwd_ms) *bwd_ms = ms_between(t1, t2);
            };

            MemoryMeter meter;  // warmup doubles as the metered pass
            one_step(&meter, nullptr, nullptr);
            std::vector<double> fwd, bwd, step;
            for (int r = 0; r < repeat; ++r) {
                double f = 0, b = 0;
                one_step(nullptr, &f, &b);
                fwd.push_back(f);
                bwd.push_back(b);
                step.push_back(f + b);
            }
            Cell& c = cells[flavor][w];
            c.fwd = median(fwd);
            c.bwd = median(bwd);
            c.step = median(step);
            c.peak = meter.peak_activation();
        }
    }

    std::vector<BenchRow> rows;
    for (Flavor flavor : flavors) {
        for (int w : workers) {
            const Cell& c = cells[flavor][w];
            BenchRow row;
            row.flavor = flavor_name(flavor);
            row.workers = w;
            row.fwd_ms = c.fwd;
            row.bwd_ms = c.bwd;
            row.step_ms = c.step;
            row.peak_activation_bytes = c.peak;
            row.speedup_vs_baseline =
                flavor == Flavor::Baseline
                    ? 1.0
                    : cells[Flavor::Baseline][w].step / std::max(c.step, 1e-9);
            rows.push_back(row);
        }
    }
    return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::ostringstream os;
    os << "flavor,workers,fwd_ms,bwd_ms,step_ms,peak_activation_bytes,speedup_vs_baseline\n";
    for (const BenchRow& r : rows)
        os << r.flavor << ',' << r.workers << ',' << strf("%.3f", r.fwd_ms) << ','
           << strf("%.3f", r.bwd_ms) << ',' << strf("%.3f", r.step_ms) << ','
           << r.peak_activation_bytes << ',' << strf("%.3f", r.speedup_vs_baseline) << '\n';
    return os.str();
}

}  // namespace revsnn
