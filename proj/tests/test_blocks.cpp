#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <memory>
#include <vector>

#include "revsnn/blocks.hpp"
#include "revsnn/rng.hpp"

using namespace revsnn;

namespace {

// y = a * x. Linear, parameter-free: block couplings become exact integer
// arithmetic that can be checked by hand.
class ScaleFn : public StreamFn {
public:
    explicit ScaleFn(float a) : a_(a) {}
    Tensor forward(const ParamStore&, const Tensor& x, EvalMode, FnStats*,
                   FnCtx* ctx) const override {
        if (ctx) ctx->saved = {x};
        return scale(x, a_);
    }
    Tensor backward(ParamStore&, const FnCtx&, const FnStats&,
                    const Tensor& grad_out) const override {
        return scale(grad_out, a_);
    }

private:
    float a_;
};

Tensor scalar(float v) {
    Tensor t(1, 1, 1, 1);
    t.data[0] = v;
    return t;
}

StreamPair random_pair(Rng& rng, int c) {
    StreamPair p{Tensor(2, c, 5, 5), Tensor(2, c, 5, 5)};
    rng.fill_normal(p.s1, 0.0f, 1.0f);
    rng.fill_normal(p.s2, 0.0f, 1.0f);
    return p;
}

}  // namespace

TEST_CASE("coupling values by hand: doubling F, tripling G") {
    ParamStore none;
    ScaleFn F(2.0f), G(3.0f);
    StreamPair x{scalar(1.0f), scalar(2.0f)};

    StreamPair base = rev_forward(none, F, G, x, EvalMode::Train, nullptr, nullptr);
    CHECK(base.s1.data[0] == 5.0f);   // 1 + 2*2
    CHECK(base.s2.data[0] == 17.0f);  // 2 + 3*5

    StreamPair swapped = pararev_forward(none, F, G, x, EvalMode::Train, nullptr, nullptr);
    CHECK(swapped.s1.data[0] == 4.0f);   // 2 + 2*1
    CHECK(swapped.s2.data[0] == 13.0f);  // 1 + 3*4
}

TEST_CASE("stream-swapped coupling equals the baseline on swapped inputs") {
    Rng rng(3);
    ParamStore store;
    NeuronConfig ncfg;
    ResidualFn F(store, "f", 4, ncfg, ActKind::Spike, &rng);
    ResidualFn G(store, "g", 4, ncfg, ActKind::Spike, &rng);
    StreamPair x = random_pair(rng, 4);

    BlockStats sta, stb;
    StreamPair a = pararev_forward(store, F, G, x, EvalMode::Train, &sta, nullptr);
    StreamPair sw{x.s2, x.s1};
    StreamPair b = rev_forward(store, F, G, sw, EvalMode::Train, &stb, nullptr);
    CHECK(bit_equal(a.s1, b.s1));
    CHECK(bit_equal(a.s2, b.s2));
}

TEST_CASE("both couplings invert exactly") {
    Rng rng(5);
    ParamStore store;
    NeuronConfig ncfg;
    ResidualFn F(store, "f", 4, ncfg, ActKind::Spike, &rng);
    ResidualFn G(store, "g", 4, ncfg, ActKind::Spike, &rng);

    for (int i = 0; i < 8; ++i) {
        StreamPair x = random_pair(rng, 4);

        BlockStats st;
        StreamPair y = rev_forward(store, F, G, x, EvalMode::Train, &st, nullptr);
        StreamPair back = rev_inverse(store, F, G, y, &st, nullptr);
        CHECK(max_abs_diff(back.s1, x.s1) <= 1e-5f);
        CHECK(max_abs_diff(back.s2, x.s2) <= 1e-5f);

        BlockStats st2;
        y = pararev_forward(store, F, G, x, EvalMode::Train, &st2, nullptr);
        back = pararev_inverse(store, F, G, y, &st2, nullptr);
        CHECK(max_abs_diff(back.s1, x.s1) <= 1e-5f);
        CHECK(max_abs_diff(back.s2, x.s2) <= 1e-5f);
    }
}

TEST_CASE("recorded statistics replay the forward bit-exact") {
    Rng rng(7);
    ParamStore store;
    NeuronConfig ncfg;
    ResidualFn F(store, "f", 4, ncfg, ActKind::Spike, &rng);
    ResidualFn G(store, "g", 4, ncfg, ActKind::Spike, &rng);
    StreamPair x = random_pair(rng, 4);

    BlockStats st;
    StreamPair train = rev_forward(store, F, G, x, EvalMode::Train, &st, nullptr);
    StreamPair replay = rev_forward(store, F, G, x, EvalMode::Replay, &st, nullptr);
    CHECK(bit_equal(train.s1, replay.s1));
    CHECK(bit_equal(train.s2, replay.s2));
}

TEST_CASE("inversion reconstructs the interior contexts the backward needs") {
    Rng rng(9);
    ParamStore store;
    NeuronConfig ncfg;
    ResidualFn F(store, "f", 4, ncfg, ActKind::Spike, &rng);
    ResidualFn G(store, "g", 4, ncfg, ActKind::Spike, &rng);
    StreamPair x = random_pair(rng, 4);

    BlockStats st;
    BlockCtx fwd_ctx;
    StreamPair y = pararev_forward(store, F, G, x, EvalMode::Train, &st, &fwd_ctx);
    BlockCtx inv_ctx;
    pararev_inverse(store, F, G, y, &st, &inv_ctx);
    REQUIRE(inv_ctx.f.saved.size() == fwd_ctx.f.saved.size());
    for (std::size_t i = 0; i < fwd_ctx.f.saved.size(); ++i)
        CHECK(max_abs_diff(inv_ctx.f.saved[i], fwd_ctx.f.saved[i]) <= 1e-5f);
    for (std::size_t i = 0; i < fwd_ctx.g.saved.size(); ++i)
        CHECK(max_abs_diff(inv_ctx.g.saved[i], fwd_ctx.g.saved[i]) <= 1e-5f);
}

TEST_CASE("fused chain equals the block-by-block swapped chain") {
    Rng rng(11);
    const int blocks = 3, c = 6;
    NeuronConfig ncfg;

    ParamStore src;
    ResidualFn f1(src, "ffirst", c, ncfg, ActKind::Spike, &rng);
    std::vector<std::unique_ptr<FusedFn>> mods;
    for (int k = 1; k < blocks; ++k)
        mods.push_back(
            std::make_unique<FusedFn>(src, "m" + std::to_string(k), c, ncfg, ActKind::Spike, &rng));
    ResidualFn gl(src, "glast", c, ncfg, ActKind::Spike, &rng);

    FusedChain chain;
    chain.f_first = &f1;
    for (auto& m : mods) chain.fused.push_back(m.get());
    chain.g_last = &gl;
    CHECK(chain.block_count() == blocks);

    ParamStore dst;
    std::vector<std::unique_ptr<ResidualFn>> fs(blocks), gs(blocks);
    {
        auto mk = [&](const ResidualFn& fn, const std::string& p) {
            auto out = std::make_unique<ResidualFn>(dst, p, c, ncfg, ActKind::Spike, nullptr);
            dst.value(out->conv1) = src.value(fn.conv1);
            dst.value(out->gn_gain) = src.value(fn.gn_gain);
            dst.value(out->gn_bias) = src.value(fn.gn_bias);
            dst.value(out->conv2) = src.value(fn.conv2);
            dst.value(out->bn_gain) = src.value(fn.bn_gain);
            dst.value(out->bn_bias) = src.value(fn.bn_bias);
            dst.value(out->bn_rmean) = src.value(fn.bn_rmean);
            dst.value(out->bn_rvar) = src.value(fn.bn_rvar);
            return out;
        };
        fs[0] = mk(f1, "b1.f");
        for (int k = 1; k < blocks; ++k) {
            SplitFns sp =
                split_fused_params(src, *mods[k - 1], dst, "m" + std::to_string(k), ncfg,
                                   ActKind::Spike);
            gs[k - 1] = std::move(sp.g);
            fs[k] = std::move(sp.f);
        }
        gs[blocks - 1] = mk(gl, "b3.g");
    }

    StreamPair x = random_pair(rng, c);

    ChainStats cst;
    cst.fused.assign(blocks - 1, FnStats{});
    StreamPair yf = fused_chain_forward(src, chain, x, EvalMode::Train, &cst, nullptr);

    StreamPair cur = x;
    for (int k = 0; k < blocks; ++k) {
        BlockStats st;
        cur = pararev_forward(dst, *fs[k], *gs[k], cur, EvalMode::Train, &st, nullptr);
    }
    CHECK(max_abs_diff(yf.s1, cur.s1) <= 1e-5f);
    CHECK(max_abs_diff(yf.s2, cur.s2) <= 1e-5f);

    StreamPair back = fused_chain_inverse(src, chain, yf, &cst, nullptr);
    CHECK(max_abs_diff(back.s1, x.s1) <= 1e-5f);
    CHECK(max_abs_diff(back.s2, x.s2) <= 1e-5f);
}
