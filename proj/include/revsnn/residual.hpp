#pragma once

#include <memory>
#include <string>
#include <vector>

#include "revsnn/memory.hpp"
#include "revsnn/neuron.hpp"
#include "revsnn/ops.hpp"
#include "revsnn/rng.hpp"
#include "revsnn/tensor.hpp"

namespace revsnn {

// Named parameter slots with paired gradient buffers. Slots are appended in
// build order; that order is the walk order for init, optimizers and
// checkpoints. Non-trainable slots hold state like running norm statistics.
class ParamStore {
public:
    int add(const std::string& name, Tensor init, bool trainable = true);
    int find(const std::string& name) const;  // -1 when absent
    int count() const { return static_cast<int>(entries_.size()); }

    const std::string& name(int slot) const { return entries_[slot].name; }
    bool trainable(int slot) const { return entries_[slot].trainable; }
    Tensor& value(int slot) { return entries_[slot].value; }
    const Tensor& value(int slot) const { return entries_[slot].value; }
    Tensor& grad(int slot) { return entries_[slot].grad; }
    const Tensor& grad(int slot) const { return entries_[slot].grad; }

    void zero_grads();
    std::size_t scalar_count(bool trainable_only = true) const;
    std::size_t bytes() const;

private:
    struct Entry {
        std::string name;
        Tensor value;
        Tensor grad;
        bool trainable;
    };
    std::vector<Entry> entries_;
};

enum class EvalMode { Train, Replay, Infer };

// Norm statistics recorded by a Train forward and replayed verbatim so the
// function is deterministic within a step.
struct FnStats {
    std::vector<NormStats> norms;
};

// Activations a backward pass needs. Policy decides how long this lives.
struct FnCtx {
    std::vector<Tensor> saved;
    MeterLease lease;

    std::size_t bytes() const;
    void attach_lease(MemoryMeter* meter, MemCategory cat);
};

enum class ActKind { Spike, Tanh };

Tensor apply_activation(const Tensor& x, ActKind act, const NeuronConfig& ncfg);
Tensor activation_backward(const Tensor& grad_out, const Tensor& x, ActKind act,
                           const NeuronConfig& ncfg);

// One stream function: maps a (B, C, H, W) tensor to the same shape.
// Train records stats and may fill ctx; Replay reuses the given stats and
// reproduces the Train output bit for bit; Infer uses running statistics.
class StreamFn {
public:
    virtual ~StreamFn() = default;
    virtual Tensor forward(const ParamStore& params, const Tensor& x, EvalMode mode,
                           FnStats* stats, FnCtx* ctx) const = 0;
    // Returns grad wrt the input, accumulates parameter grads into `params`.
    virtual Tensor backward(ParamStore& params, const FnCtx& ctx, const FnStats& stats,
                            const Tensor& grad_out) const = 0;
    // Folds Train-step batch stats into running stats (controller-only, never
    // called from parallel tasks).
    virtual void fold_running_stats(ParamStore& params, const FnStats& stats,
                                    float momentum) const {}
};

// act -> conv 3x3 (c->c) -> group norm -> act -> conv 3x3 (c->c) -> batch
// norm. No conv bias; group count is gcd(c, 8). Neurons restart from zero
// state every step, so v_pre is just the pre-activation input.
class ResidualFn : public StreamFn {
public:
    ResidualFn(ParamStore& store, const std::string& prefix, int channels, NeuronConfig ncfg,
               ActKind act, Rng* init_rng);

    Tensor forward(const ParamStore& params, const Tensor& x, EvalMode mode, FnStats* stats,
                   FnCtx* ctx) const override;
    Tensor backward(ParamStore& params, const FnCtx& ctx, const FnStats& stats,
                    const Tensor& grad_out) const override;
    void fold_running_stats(ParamStore& params, const FnStats& stats,
                            float momentum) const override;

    int channels() const { return channels_; }

    int conv1 = -1, gn_gain = -1, gn_bias = -1;
    int conv2 = -1, bn_gain = -1, bn_bias = -1;
    int bn_rmean = -1, bn_rvar = -1;

private:
    int channels_;
    int groups_;
    NeuronConfig ncfg_;
    ActKind act_;
};

// Fused module for interior pararev positions: same layout as ResidualFn but
// the second conv produces 2c channels and batch norm runs over all 2c. The
// first c output channels feed the G role, the last c the F role.
class FusedFn {
public:
    FusedFn(ParamStore& store, const std::string& prefix, int channels, NeuronConfig ncfg,
            ActKind act, Rng* init_rng);

    struct Out {
        Tensor g_part;
        Tensor f_part;
    };
    Out forward(const ParamStore& params, const Tensor& x, EvalMode mode, FnStats* stats,
                FnCtx* ctx) const;
    Tensor backward(ParamStore& params, const FnCtx& ctx, const FnStats& stats,
                    const Tensor& grad_g_part, const Tensor& grad_f_part) const;
    void fold_running_stats(ParamStore& params, const FnStats& stats, float momentum) const;

    int channels() const { return channels_; }

    int conv1 = -1, gn_gain = -1, gn_bias = -1;
    int conv2 = -1, bn_gain = -1, bn_bias = -1;
    int bn_rmean = -1, bn_rvar = -1;

private:
    int channels_;
    int groups_;
    NeuronConfig ncfg_;
    ActKind act_;
};

// Builds standalone G and F functions whose parameters are slices of a fused
// module's: conv1 and group norm are shared copies, the second conv's output
// rows and the batch norm channels split as [0, c) for G and [c, 2c) for F.
// Outputs then match the fused module's halves exactly.
struct SplitFns {
    std::unique_ptr<ResidualFn> g;
    std::unique_ptr<ResidualFn> f;
};
SplitFns split_fused_params(const ParamStore& src, const FusedFn& fused, ParamStore& dst,
                            const std::string& prefix, NeuronConfig ncfg, ActKind act);

// He fan-in init for 3x3 conv weights, std = sqrt(2 / (in_channels * 9)).
void he_init_conv(Rng& rng, Tensor& w);

}  // namespace revsnn
