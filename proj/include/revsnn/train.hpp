#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "revsnn/data.hpp"
#include "revsnn/network.hpp"

namespace revsnn {

enum class OptimizerKind { SgdMomentum, AdamW };
const char* optimizer_name(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);
float default_lr(OptimizerKind k);  // 0.1 sgd-momentum, 0.001 adamw

struct TrainConfig {
    int epochs = 1;
    float lr = 0.1f;
    OptimizerKind optimizer = OptimizerKind::SgdMomentum;
    int batch_size = 32;
    std::uint64_t seed = 1;
    Policy policy = Policy::Recompute;
    int workers = 1;
    float momentum = 0.9f;
    float weight_decay = 0.0f;
    float bn_momentum = 0.1f;
    float adam_beta1 = 0.9f;
    float adam_beta2 = 0.999f;
    float adam_eps = 1e-8f;
    bool augment = false;

    void validate() const;  // throws std::invalid_argument
};

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = -1.0;  // -1 without a test set
    double seconds = 0.0;
};

struct RunMetrics {
    std::vector<EpochMetrics> epochs;
    double train_seconds_total = 0.0;    // whole loop including evals
    double train_seconds_compute = 0.0;  // forward + backward + update only
    std::size_t peak_activation_bytes = 0;
    double inference_us_per_image = 0.0;
    double final_train_acc = 0.0;
    double final_test_acc = -1.0;
};

// Cosine decay from base to zero over total_steps; step counts from 0.
double cosine_lr(double base, int step, int total_steps);

// SGD with momentum (L2 folded into the gradient) or AdamW (decoupled
// decay). State tensors are keyed by slot index and never reordered.
class Optimizer {
public:
    Optimizer(const TrainConfig& cfg);
    void step(ParamStore& params, double lr);

private:
    TrainConfig cfg_;
    int t_ = 0;
    std::vector<Tensor> m_, v_;
};

struct EvalResult {
    double accuracy = 0.0;
    double loss = 0.0;
    double us_per_image = 0.0;  // forward only, batch time / batch size
};

EvalResult evaluate(const Network& net, const Dataset& ds, int batch_size, Executor& exec);

// Runs the full loop; deterministic for a fixed config and worker-count
// invariant. Throws on non-finite loss. log may be null.
RunMetrics train_network(Network& net, const Dataset& train_ds, const Dataset* test_ds,
                         const TrainConfig& cfg, std::ostream* log);

// One row per epoch, no wall-clock columns, so reruns are byte-identical.
void write_metrics_csv(const std::string& path, const RunMetrics& metrics);

}  // namespace revsnn
