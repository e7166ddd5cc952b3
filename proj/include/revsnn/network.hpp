#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "revsnn/engine.hpp"

namespace revsnn {

// Architecture description. Stage widths are per stream; the stem conv
// produces stem_width = 2 * stage_widths[0] channels which split evenly into
// the two streams.
struct ArchSpec {
    std::vector<int> stage_blocks = {1, 1, 1, 1};
    std::vector<int> stage_widths = {64, 128, 256, 448};
    int stem_width = 128;
    Flavor flavor = Flavor::ParaRev;
    NeuronConfig neuron;
    int timesteps = 4;
    int num_classes = 10;
    int in_channels = 3;

    int stages() const { return static_cast<int>(stage_blocks.size()); }
    void validate() const;  // throws std::invalid_argument
};

// stem conv + head fc + one downsample conv per stage after the first + four
// conv layers per reversible block (two in F, two in G).
int count_layers(const ArchSpec& spec);

std::vector<int> parse_int_list(const std::string& csv);
std::vector<int> default_stage_widths(int stages);

// Builds a spec from a "n1,n2,..." block-count string; widths default per
// stage count, stem width follows the first stage width.
ArchSpec make_arch(const std::string& blocks_csv, Flavor flavor, int timesteps,
                   int num_classes = 10, int in_channels = 3);

// key = value lines, round-trippable.
std::string arch_to_text(const ArchSpec& spec);
ArchSpec arch_from_text(const std::string& text);

// conv3x3 stride 2 -> batch norm -> spike. The stem and each downsample
// stream half. Not reversible; its inputs are cached or recomputed.
struct ConvBnSpike {
    int conv = -1, gain = -1, bias = -1, rmean = -1, rvar = -1;
    NeuronConfig ncfg;

    void build(ParamStore& store, const std::string& prefix, int in_c, int out_c,
               const NeuronConfig& cfg, Rng& rng);
    Tensor forward(const ParamStore& params, const Tensor& x, EvalMode mode, NormStats* stats,
                   FnCtx* ctx) const;
    // ctx holds {input, conv out, norm out}.
    Tensor backward(ParamStore& params, const FnCtx& ctx, const NormStats& stats,
                    const Tensor& grad_out) const;
    void fold_running_stats(ParamStore& params, const NormStats& stats, float momentum) const;
};

// Everything one time step retains for its backward pass. pairs[0] is the
// split stem output (stage 1 input), pairs[s] is stage s output; both are
// the only stream values kept under recompute. Downsample and stem contexts
// exist only under store-all; recompute replays them from the kept pairs.
struct StepRecord {
    NormStats stem_stats;
    FnCtx stem_ctx;
    std::vector<std::array<NormStats, 2>> down_stats;  // stage s >= 2 at [s - 2]
    std::vector<std::array<FnCtx, 2>> down_ctx;
    std::vector<ChainRecord> stage_recs;
    std::vector<StreamPair> pairs;
    Tensor pooled;  // head input after global average pool
    MeterLease retain_lease;
};

struct NetRecord {
    Policy policy = Policy::Recompute;
    std::vector<StepRecord> steps;
};

// Stem, reversible stages with downsample entries, pooled fc head. Logits
// are the mean over time steps of the per-step head output; neuron state
// restarts from zero each step, so steps couple only through the shared
// weights and that mean.
class Network {
public:
    Network(const ArchSpec& spec, std::uint64_t init_seed);

    const ArchSpec& spec() const { return spec_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // steps holds one tensor (reused every step) or timesteps tensors.
    // Returns (batch, classes, 1, 1) logits. Train mode requires rec.
    Tensor forward(const std::vector<Tensor>& steps, EvalMode mode, Policy policy,
                   Executor& exec, NetRecord* rec, MemoryMeter* meter) const;

    // Consumes the record's tensors; keeps its stats for fold_running_stats.
    void backward(const Tensor& grad_logits, const std::vector<Tensor>& steps, Executor& exec,
                  NetRecord& rec);

    void fold_running_stats(const NetRecord& rec, float momentum);

private:
    const Tensor& step_input(const std::vector<Tensor>& steps, int t) const;
    StreamPair downsample_forward(int stage, const StreamPair& x, EvalMode mode,
                                  std::array<NormStats, 2>* stats,
                                  std::array<FnCtx, 2>* ctx) const;

    ArchSpec spec_;
    ParamStore params_;
    ConvBnSpike stem_;
    std::vector<std::array<ConvBnSpike, 2>> down_;  // stage s >= 2 at [s - 2]
    std::vector<std::vector<std::unique_ptr<ResidualFn>>> fs_, gs_;
    std::vector<std::unique_ptr<ResidualFn>> ffirst_, glast_;
    std::vector<std::vector<std::unique_ptr<FusedFn>>> mods_;
    std::vector<ChainModules> chains_;
    int fcw_ = -1, fcb_ = -1;
};

// Flat binary of parameter tensors behind a name/shape manifest plus the
// arch text, so a checkpoint alone can rebuild its network.
void save_checkpoint(const Network& net, const std::string& path);
ArchSpec load_checkpoint_arch(const std::string& path);
void load_checkpoint(Network& net, const std::string& path);

}  // namespace revsnn
