#pragma once

#include <vector>

#include "revsnn/residual.hpp"

namespace revsnn {

struct StreamPair {
    Tensor s1;
    Tensor s2;
};

struct BlockStats {
    FnStats f;
    FnStats g;
};

struct BlockCtx {
    FnCtx f;
    FnCtx g;
};

// Baseline coupling: y1 = x1 + F(x2), y2 = x2 + G(y1).
StreamPair rev_forward(const ParamStore& params, const StreamFn& F, const StreamFn& G,
                       const StreamPair& x, EvalMode mode, BlockStats* stats, BlockCtx* ctx);
// Exact inverse: x2 = y2 - G(y1), x1 = y1 - F(x2). Replays recorded stats.
StreamPair rev_inverse(const ParamStore& params, const StreamFn& F, const StreamFn& G,
                       const StreamPair& y, BlockStats* stats, BlockCtx* ctx);

// Stream-swapped coupling: y1 = x2 + F(x1), y2 = x1 + G(y1). Produces the
// same value pair as rev_forward with swapped inputs, but its F no longer
// depends on the previous block's G.
StreamPair pararev_forward(const ParamStore& params, const StreamFn& F, const StreamFn& G,
                           const StreamPair& x, EvalMode mode, BlockStats* stats, BlockCtx* ctx);
// Exact inverse: x1 = y2 - G(y1), x2 = y1 - F(x1).
StreamPair pararev_inverse(const ParamStore& params, const StreamFn& F, const StreamFn& G,
                           const StreamPair& y, BlockStats* stats, BlockCtx* ctx);

// A stage of B stream-swapped blocks with interior pairs (G_k, F_k+1) fused
// into single modules: F_first, M_1 .. M_B-1, G_last. A stage of one block
// has no interior pairs and is plain pararev.
struct FusedChain {
    const ResidualFn* f_first = nullptr;
    std::vector<const FusedFn*> fused;
    const ResidualFn* g_last = nullptr;

    int block_count() const { return static_cast<int>(fused.size()) + 1; }
};

struct ChainStats {
    FnStats f_first;
    std::vector<FnStats> fused;
    FnStats g_last;
};

struct ChainCtx {
    FnCtx f_first;
    std::vector<FnCtx> fused;
    FnCtx g_last;
};

StreamPair fused_chain_forward(const ParamStore& params, const FusedChain& chain,
                               const StreamPair& x, EvalMode mode, ChainStats* stats,
                               ChainCtx* ctx);
StreamPair fused_chain_inverse(const ParamStore& params, const FusedChain& chain,
                               const StreamPair& y, ChainStats* stats, ChainCtx* ctx);

}  // namespace revsnn
