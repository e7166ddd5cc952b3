#pragma once

#include "revsnn/blocks.hpp"
#include "revsnn/executor.hpp"
#include "revsnn/graph.hpp"
#include "revsnn/memory.hpp"

namespace revsnn {

// One stage's chain of coupled blocks. Baseline and pararev use fs/gs;
// pararev-fused uses the fused view (F_first, M_1..M_B-1, G_last).
struct ChainModules {
    Flavor flavor = Flavor::ParaRev;
    std::vector<const StreamFn*> fs;
    std::vector<const StreamFn*> gs;
    FusedChain fused;

    int block_count() const {
        return flavor == Flavor::ParaRevFused ? fused.block_count()
                                              : static_cast<int>(fs.size());
    }
};

// Everything one forward pass leaves behind for one chain and one time step.
// Stats are tiny and always recorded in Train mode; contexts and the input
// pair are kept only under the store-all policy.
struct ChainRecord {
    std::vector<BlockStats> block_stats;
    ChainStats chain_stats;
    std::vector<BlockCtx> block_ctx;
    ChainCtx chain_ctx;
    StreamPair input;
    MeterLease input_lease;
    Policy policy = Policy::Recompute;
};

// Executes the chain's forward task graph. Tasks publish into
// single-assignment slots, so results are bit-identical for any worker
// count. Train mode records stats (and contexts under store-all) into *rec;
// Infer mode needs no record. Stored interiors are metered as
// reversible-interior bytes.
StreamPair chain_forward(const ParamStore& params, const ChainModules& chain,
                         const StreamPair& x, EvalMode mode, Policy policy, Executor& exec,
                         ChainRecord* rec, MemoryMeter* meter);

// Sequential exact inverse replaying the recorded statistics.
StreamPair chain_inverse(const ParamStore& params, const ChainModules& chain,
                         const StreamPair& y, ChainRecord& rec);

struct ChainBackwardResult {
    StreamPair grad_in;  // gradients wrt the chain input pair
    StreamPair input;    // reconstructed (recompute) or stored (store-all) input pair
};

// Executes the backward task graph for the recorded pass. Under recompute
// the graph interleaves inversion evaluations with vector-Jacobian products
// and each context lives only from its inversion task to its VJP task.
// Parameter gradients accumulate into `params` (one task per function, so
// writes never race).
ChainBackwardResult chain_backward(ParamStore& params, const ChainModules& chain,
                                   const StreamPair& y, const StreamPair& grad_y,
                                   Executor& exec, ChainRecord& rec);

}  // namespace revsnn
