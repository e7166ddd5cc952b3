#include "revsnn/blocks.hpp"

#include <stdexcept>

namespace revsnn {

namespace {

FnStats* maybe_f(BlockStats* s) { return s ? &s->f : nullptr; }
FnStats* maybe_g(BlockStats* s) { return s ? &s->g : nullptr; }
FnCtx* maybe_f(BlockCtx* c) { return c ? &c->f : nullptr; }
FnCtx* maybe_g(BlockCtx* c) { return c ? &c->g : nullptr; }

}  // namespace

StreamPair rev_forward(const ParamStore& params, const StreamFn& F, const StreamFn& G,
                       const StreamPair& x, EvalMode mode, BlockStats* stats, BlockCtx* ctx) {
    Tensor y1 = add(x.s1, F.forward(params, x.s2, mode, maybe_f(stats), maybe_f(ctx)));
    Tensor y2 = add(x.s2, G.forward(params, y1, mode, maybe_g(stats), maybe_g(ctx)));
    return {std::move(y1), std::move(y2)};
}

StreamPair rev_inverse(const ParamStore& params, const StreamFn& F, const StreamFn& G,
                       const StreamPair& y, BlockStats* stats, BlockCtx* ctx) {
    Tensor x2 = sub(y.s2, G.forward(params, y.s1, EvalMode::Replay, maybe_g(stats), maybe_g(ctx)));
    Tensor x1 = sub(y.s1, F.forward(params, x2, EvalMode::Replay, maybe_f(stats), maybe_f(ctx)));
    return {std::move(x1), std::move(x2)};
}

StreamPair pararev_forward(const ParamStore& params, const StreamFn& F, const StreamFn& G,
                           const StreamPair& x, EvalMode mode, BlockStats* stats, BlockCtx* ctx) {
    Tensor y1 = add(x.s2, F.forward(params, x.s1, mode, maybe_f(stats), maybe_f(ctx)));
    Tensor y2 = add(x.s1, G.forward(params, y1, mode, maybe_g(stats), maybe_g(ctx)));
    return {std::move(y1), std::move(y2)};
}

StreamPair pararev_inverse(const ParamStore& params, const StreamFn& F, const StreamFn& G,
                           const StreamPair& y, BlockStats* stats, BlockCtx* ctx) {
    Tensor x1 = sub(y.s2, G.forward(params, y.s1, EvalMode::Replay, maybe_g(stats), maybe_g(ctx)));
    Tensor x2 = sub(y.s1, F.forward(params, x1, EvalMode::Replay, maybe_f(stats), maybe_f(ctx)));
    return {std::move(x1), std::move(x2)};
}

StreamPair fused_chain_forward(const ParamStore& params, const FusedChain& chain,
                               const StreamPair& x, EvalMode mode, ChainStats* stats,
                               ChainCtx* ctx) {
    if (!chain.f_first || !chain.g_last)
        throw std::invalid_argument("fused_chain_forward: chain endpoints missing");
    const int nm = static_cast<int>(chain.fused.size());
    if (stats && mode == EvalMode::Train) stats->fused.assign(nm, FnStats{});
    if (stats && mode != EvalMode::Train && static_cast<int>(stats->fused.size()) != nm)
        throw std::invalid_argument("fused_chain_forward: stats do not match chain length");
    if (ctx) {
        ctx->fused.clear();
        ctx->fused.resize(nm);
    }
    // u_k is y1 of block k; each fused module maps u_k to (G_k(u_k), F_k+1(u_k)).
    Tensor u = add(x.s2, chain.f_first->forward(params, x.s1, mode, stats ? &stats->f_first : nullptr,
                                                ctx ? &ctx->f_first : nullptr));
    Tensor prev_x1 = x.s1;
    for (int k = 0; k < nm; ++k) {
        FusedFn::Out mo = chain.fused[k]->forward(params, u, mode,
                                                  stats ? &stats->fused[k] : nullptr,
                                                  ctx ? &ctx->fused[k] : nullptr);
        Tensor y2 = add(prev_x1, mo.g_part);
        prev_x1 = std::move(u);
        u = add(y2, mo.f_part);
    }
    Tensor gout = chain.g_last->forward(params, u, mode, stats ? &stats->g_last : nullptr,
                                        ctx ? &ctx->g_last : nullptr);
    Tensor y2 = add(prev_x1, gout);
    return {std::move(u), std::move(y2)};
}

StreamPair fused_chain_inverse(const ParamStore& params, const FusedChain& chain,
                               const StreamPair& y, ChainStats* stats, ChainCtx* ctx) {
    if (!chain.f_first || !chain.g_last)
        throw std::invalid_argument("fused_chain_inverse: chain endpoints missing");
    const int nm = static_cast<int>(chain.fused.size());
    if (ctx) {
        ctx->fused.clear();
        ctx->fused.resize(nm);
    }
    if (stats && static_cast<int>(stats->fused.size()) != nm)
        throw std::invalid_argument("fused_chain_inverse: stats do not match chain length");
    Tensor gout = chain.g_last->forward(params, y.s1, EvalMode::Replay,
                                        stats ? &stats->g_last : nullptr,
                                        ctx ? &ctx->g_last : nullptr);
    Tensor u = y.s1;               // u_B
    Tensor prev = sub(y.s2, gout);  // u_B-1, or x1 when the chain has one block
    for (int k = nm - 1; k >= 0; --k) {
        FusedFn::Out mo = chain.fused[k]->forward(params, prev, EvalMode::Replay,
                                                  stats ? &stats->fused[k] : nullptr,
                                                  ctx ? &ctx->fused[k] : nullptr);
        Tensor y2 = sub(u, mo.f_part);
        u = std::move(prev);
        prev = sub(y2, mo.g_part);
    }
    Tensor x1 = std::move(prev);
    Tensor x2 = sub(u, chain.f_first->forward(params, x1, EvalMode::Replay,
                                              stats ? &stats->f_first : nullptr,
                                              ctx ? &ctx->f_first : nullptr));
    return {std::move(x1), std::move(x2)};
}

}  // namespace revsnn
