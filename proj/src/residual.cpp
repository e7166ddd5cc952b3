#include "revsnn/residual.hpp"

#include <cmath>
#include <stdexcept>

namespace revsnn {

namespace {
constexpr float kNormEps = 1e-5f;
}

int ParamStore::add(const std::string& name, Tensor init, bool trainable) {
    if (find(name) >= 0) throw std::invalid_argument("ParamStore: duplicate name " + name);
    Entry e;
    e.name = name;
    e.grad = Tensor(init.shape);
    e.value = std::move(init);
    e.trainable = trainable;
    entries_.push_back(std::move(e));
    return static_cast<int>(entries_.size()) - 1;
}

int ParamStore::find(const std::string& name) const {
    for (int i = 0; i < static_cast<int>(entries_.size()); ++i)
        if (entries_[i].name == name) return i;
    return -1;
}

void ParamStore::zero_grads() {
    for (Entry& e : entries_)
        std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0f);
}

std::size_t ParamStore::scalar_count(bool trainable_only) const {
    std::size_t n = 0;
    for (const Entry& e : entries_)
        if (!trainable_only || e.trainable) n += e.value.size();
    return n;
}

std::size_t ParamStore::bytes() const {
    std::size_t n = 0;
    for (const Entry& e : entries_) n += e.value.bytes();
    return n;
}

std::size_t FnCtx::bytes() const {
    std::size_t n = 0;
    for (const Tensor& t : saved) n += t.bytes();
    return n;
}

void FnCtx::attach_lease(MemoryMeter* meter, MemCategory cat) {
    lease = MeterLease(meter, cat, bytes());
}

Tensor apply_activation(const Tensor& x, ActKind act, const NeuronConfig& ncfg) {
    if (act == ActKind::Spike) return spike_activation(x, ncfg);
    Tensor out(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = std::tanh(x.data[i]);
    return out;
}

Tensor activation_backward(const Tensor& grad_out, const Tensor& x, ActKind act,
                           const NeuronConfig& ncfg) {
    if (act == ActKind::Spike) return spike_activation_backward(grad_out, x, ncfg);
    check_same_shape(grad_out, x, "activation_backward");
    Tensor g(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const float t = std::tanh(x.data[i]);
        g.data[i] = grad_out.data[i] * (1.0f - t * t);
    }
    return g;
}

void he_init_conv(Rng& rng, Tensor& w) {
    const float std = std::sqrt(2.0f / (static_cast<float>(w.shape.c) * 9.0f));
    rng.fill_normal(w, 0.0f, std);
}

namespace {

struct TrunkSlots {
    int conv1, gn_gain, gn_bias, conv2, bn_gain, bn_bias, bn_rmean, bn_rvar;
    int groups;
};

TrunkSlots make_trunk(ParamStore& store, const std::string& prefix, int channels,
                      int conv2_out_channels, Rng* init_rng) {
    TrunkSlots t;
    t.groups = group_count_for(channels);
    Tensor w1(channels, channels, 3, 3);
    Tensor w2(conv2_out_channels, channels, 3, 3);
    if (init_rng) {
        he_init_conv(*init_rng, w1);
        he_init_conv(*init_rng, w2);
    }
    Tensor gn_ones(1, channels, 1, 1);
    std::fill(gn_ones.data.begin(), gn_ones.data.end(), 1.0f);
    Tensor bn_ones(1, conv2_out_channels, 1, 1);
    std::fill(bn_ones.data.begin(), bn_ones.data.end(), 1.0f);
    t.conv1 = store.add(prefix + ".conv1", std::move(w1));
    t.gn_gain = store.add(prefix + ".gn_gain", gn_ones);
    t.gn_bias = store.add(prefix + ".gn_bias", Tensor(1, channels, 1, 1));
    t.conv2 = store.add(prefix + ".conv2", std::move(w2));
    t.bn_gain = store.add(prefix + ".bn_gain", bn_ones);
    t.bn_bias = store.add(prefix + ".bn_bias", Tensor(1, conv2_out_channels, 1, 1));
    t.bn_rmean = store.add(prefix + ".bn_rmean", Tensor(1, conv2_out_channels, 1, 1), false);
    t.bn_rvar = store.add(prefix + ".bn_rvar", bn_ones, false);
    return t;
}

NormStats running_to_stats(const Tensor& rmean, const Tensor& rvar) {
    NormStats st;
    const int c = rmean.shape.c;
    st.mean.resize(c);
    st.invstd.resize(c);
    for (int i = 0; i < c; ++i) {
        st.mean[i] = rmean.at(0, i, 0, 0);
        st.invstd[i] = 1.0 / std::sqrt(static_cast<double>(rvar.at(0, i, 0, 0)) + kNormEps);
    }
    return st;
}

Tensor trunk_forward(const ParamStore& p, const TrunkSlots& t, ActKind act,
                     const NeuronConfig& ncfg, const Tensor& x, EvalMode mode, FnStats* stats,
                     FnCtx* ctx) {
    Tensor s1 = apply_activation(x, act, ncfg);
    Tensor h1 = conv2d(s1, p.value(t.conv1), 1);
    Tensor n1, out;
    if (mode == EvalMode::Train) {
        if (!stats) throw std::invalid_argument("trunk_forward: Train mode requires stats");
        stats->norms.assign(2, NormStats{});
        n1 = group_norm_forward(h1, t.groups, p.value(t.gn_gain), p.value(t.gn_bias), kNormEps,
                                stats->norms[0]);
        Tensor s2 = apply_activation(n1, act, ncfg);
        Tensor h2 = conv2d(s2, p.value(t.conv2), 1);
        out = batch_norm_forward(h2, p.value(t.bn_gain), p.value(t.bn_bias), kNormEps,
                                 stats->norms[1]);
        if (ctx) ctx->saved = {x, h1, n1, std::move(h2)};
    } else if (mode == EvalMode::Replay) {
        if (!stats || stats->norms.size() != 2)
            throw std::invalid_argument("trunk_forward: Replay mode requires recorded stats");
        n1 = group_norm_apply(h1, t.groups, p.value(t.gn_gain), p.value(t.gn_bias),
                              stats->norms[0]);
        Tensor s2 = apply_activation(n1, act, ncfg);
        Tensor h2 = conv2d(s2, p.value(t.conv2), 1);
        out = batch_norm_apply(h2, p.value(t.bn_gain), p.value(t.bn_bias), stats->norms[1]);
        if (ctx) ctx->saved = {x, h1, n1, std::move(h2)};
    } else {
        NormStats gn_batch;  // group norm is per sample, batch stats are the inference form
        n1 = group_norm_forward(h1, t.groups, p.value(t.gn_gain), p.value(t.gn_bias), kNormEps,
                                gn_batch);
        Tensor s2 = apply_activation(n1, act, ncfg);
        Tensor h2 = conv2d(s2, p.value(t.conv2), 1);
        out = batch_norm_apply(h2, p.value(t.bn_gain), p.value(t.bn_bias),
                               running_to_stats(p.value(t.bn_rmean), p.value(t.bn_rvar)));
    }
    return out;
}

Tensor trunk_backward(ParamStore& p, const TrunkSlots& t, ActKind act, const NeuronConfig& ncfg,
                      const FnCtx& ctx, const FnStats& stats, const Tensor& grad_out) {
    if (ctx.saved.size() != 4)
        throw std::invalid_argument("trunk_backward: ctx does not hold the 4 saved activations");
    const Tensor& x = ctx.saved[0];
    const Tensor& h1 = ctx.saved[1];
    const Tensor& n1 = ctx.saved[2];
    const Tensor& h2 = ctx.saved[3];
    Tensor gh2;
    batch_norm_backward(h2, p.value(t.bn_gain), stats.norms[1], grad_out, gh2, p.grad(t.bn_gain),
                        p.grad(t.bn_bias));
    Tensor s2 = apply_activation(n1, act, ncfg);  // cheap, recomputed instead of saved
    Tensor gs2 = conv2d_backward_input(gh2, p.value(t.conv2), s2.shape, 1);
    add_into(p.grad(t.conv2), conv2d_backward_weights(gh2, s2, p.value(t.conv2).shape, 1));
    Tensor gn1 = activation_backward(gs2, n1, act, ncfg);
    Tensor gh1;
    group_norm_backward(h1, t.groups, p.value(t.gn_gain), stats.norms[0], gn1, gh1,
                        p.grad(t.gn_gain), p.grad(t.gn_bias));
    Tensor s1 = apply_activation(x, act, ncfg);
    Tensor gs1 = conv2d_backward_input(gh1, p.value(t.conv1), s1.shape, 1);
    add_into(p.grad(t.conv1), conv2d_backward_weights(gh1, s1, p.value(t.conv1).shape, 1));
    return activation_backward(gs1, x, act, ncfg);
}

void trunk_fold_running(ParamStore& p, const TrunkSlots& t, const FnStats& stats,
                        float momentum) {
    if (stats.norms.size() != 2) return;
    const NormStats& bn = stats.norms[1];
    Tensor& rmean = p.value(t.bn_rmean);
    Tensor& rvar = p.value(t.bn_rvar);
    for (int c = 0; c < rmean.shape.c; ++c) {
        const double var = 1.0 / (bn.invstd[c] * bn.invstd[c]) - kNormEps;
        rmean.at(0, c, 0, 0) = static_cast<float>((1.0 - momentum) * rmean.at(0, c, 0, 0) +
                                                  momentum * bn.mean[c]);
        rvar.at(0, c, 0, 0) =
            static_cast<float>((1.0 - momentum) * rvar.at(0, c, 0, 0) + momentum * var);
    }
}

}  // namespace

ResidualFn::ResidualFn(ParamStore& store, const std::string& prefix, int channels,
                       NeuronConfig ncfg, ActKind act, Rng* init_rng)
    : channels_(channels), ncfg_(ncfg), act_(act) {
    ncfg_.validate();
    TrunkSlots t = make_trunk(store, prefix, channels, channels, init_rng);
    conv1 = t.conv1;
    gn_gain = t.gn_gain;
    gn_bias = t.gn_bias;
    conv2 = t.conv2;
    bn_gain = t.bn_gain;
    bn_bias = t.bn_bias;
    bn_rmean = t.bn_rmean;
    bn_rvar = t.bn_rvar;
    groups_ = t.groups;
}

Tensor ResidualFn::forward(const ParamStore& params, const Tensor& x, EvalMode mode,
                           FnStats* stats, FnCtx* ctx) const {
    TrunkSlots t{conv1, gn_gain, gn_bias, conv2, bn_gain, bn_bias, bn_rmean, bn_rvar, groups_};
    return trunk_forward(params, t, act_, ncfg_, x, mode, stats, ctx);
}

Tensor ResidualFn::backward(ParamStore& params, const FnCtx& ctx, const FnStats& stats,
                            const Tensor& grad_out) const {
    TrunkSlots t{conv1, gn_gain, gn_bias, conv2, bn_gain, bn_bias, bn_rmean, bn_rvar, groups_};
    return trunk_backward(params, t, act_, ncfg_, ctx, stats, grad_out);
}

void ResidualFn::fold_running_stats(ParamStore& params, const FnStats& stats,
                                    float momentum) const {
    TrunkSlots t{conv1, gn_gain, gn_bias, conv2, bn_gain, bn_bias, bn_rmean, bn_rvar, groups_};
    trunk_fold_running(params, t, stats, momentum);
}

FusedFn::FusedFn(ParamStore& store, const std::string& prefix, int channels, NeuronConfig ncfg,
                 ActKind act, Rng* init_rng)
    : channels_(channels), ncfg_(ncfg), act_(act) {
    ncfg_.validate();
    TrunkSlots t = make_trunk(store, prefix, channels, 2 * channels, init_rng);
    conv1 = t.conv1;
    gn_gain = t.gn_gain;
    gn_bias = t.gn_bias;
    conv2 = t.conv2;
    bn_gain = t.bn_gain;
    bn_bias = t.bn_bias;
    bn_rmean = t.bn_rmean;
    bn_rvar = t.bn_rvar;
    groups_ = t.groups;
}

FusedFn::Out FusedFn::forward(const ParamStore& params, const Tensor& x, EvalMode mode,
                              FnStats* stats, FnCtx* ctx) const {
    TrunkSlots t{conv1, gn_gain, gn_bias, conv2, bn_gain, bn_bias, bn_rmean, bn_rvar, groups_};
    Tensor both = trunk_forward(params, t, act_, ncfg_, x, mode, stats, ctx);
    auto [g_part, f_part] = split_channels(both, channels_);
    return {std::move(g_part), std::move(f_part)};
}

Tensor FusedFn::backward(ParamStore& params, const FnCtx& ctx, const FnStats& stats,
                         const Tensor& grad_g_part, const Tensor& grad_f_part) const {
    TrunkSlots t{conv1, gn_gain, gn_bias, conv2, bn_gain, bn_bias, bn_rmean, bn_rvar, groups_};
    Tensor grad_both = concat_channels(grad_g_part, grad_f_part);
    return trunk_backward(params, t, act_, ncfg_, ctx, stats, grad_both);
}

void FusedFn::fold_running_stats(ParamStore& params, const FnStats& stats, float momentum) const {
    TrunkSlots t{conv1, gn_gain, gn_bias, conv2, bn_gain, bn_bias, bn_rmean, bn_rvar, groups_};
    trunk_fold_running(params, t, stats, momentum);
}

namespace {

Tensor slice_out_rows(const Tensor& w, int from, int count) {
    Tensor out(count, w.shape.c, w.shape.h, w.shape.w);
    for (int o = 0; o < count; ++o)
        for (int i = 0; i < w.shape.c; ++i)
            for (int y = 0; y < w.shape.h; ++y)
                for (int x = 0; x < w.shape.w; ++x)
                    out.at(o, i, y, x) = w.at(from + o, i, y, x);
    return out;
}

Tensor slice_chan(const Tensor& v, int from, int count) {
    Tensor out(1, count, 1, 1);
    for (int c = 0; c < count; ++c) out.at(0, c, 0, 0) = v.at(0, from + c, 0, 0);
    return out;
}

}  // namespace

SplitFns split_fused_params(const ParamStore& src, const FusedFn& fused, ParamStore& dst,
                            const std::string& prefix, NeuronConfig ncfg, ActKind act) {
    const int c = fused.channels();
    SplitFns out;
    out.g = std::make_unique<ResidualFn>(dst, prefix + ".g", c, ncfg, act, nullptr);
    out.f = std::make_unique<ResidualFn>(dst, prefix + ".f", c, ncfg, act, nullptr);
    auto copy_shared = [&](const ResidualFn& r, int from) {
        dst.value(r.conv1) = src.value(fused.conv1);
        dst.value(r.gn_gain) = src.value(fused.gn_gain);
        dst.value(r.gn_bias) = src.value(fused.gn_bias);
        dst.value(r.conv2) = slice_out_rows(src.value(fused.conv2), from, c);
        dst.value(r.bn_gain) = slice_chan(src.value(fused.bn_gain), from, c);
        dst.value(r.bn_bias) = slice_chan(src.value(fused.bn_bias), from, c);
        dst.value(r.bn_rmean) = slice_chan(src.value(fused.bn_rmean), from, c);
        dst.value(r.bn_rvar) = slice_chan(src.value(fused.bn_rvar), from, c);
    };
    copy_shared(*out.g, 0);
    copy_shared(*out.f, c);
    return out;
}

}  // namespace revsnn
