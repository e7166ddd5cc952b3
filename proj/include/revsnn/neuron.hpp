#pragma once

#include "revsnn/tensor.hpp"

namespace revsnn {

enum class NeuronKind { IF, LIF };
enum class SurrogateKind { Triangular, Arctan };

struct NeuronConfig {
    NeuronKind kind = NeuronKind::IF;
    float threshold = 1.0f;
    float decay = 1.0f;  // LIF leak factor in (0, 1]; ignored for IF
    SurrogateKind surrogate = SurrogateKind::Triangular;
    float surrogate_width = 1.0f;

    void validate() const;  // throws std::invalid_argument
};

struct NeuronState {
    Tensor v;  // membrane potential after reset
};

struct NeuronStepResult {
    Tensor spikes;
    Tensor v_pre;  // potential before reset, needed for the backward pass
    NeuronState next;
};

// One integrate/fire/hard-reset step. IF: V <- V_prev + X. LIF:
// V <- decay * V_prev + X. Spike is H(V - threshold) with H(0) = 1,
// then V <- V * (1 - S).
NeuronStepResult neuron_step(const NeuronState& prev, const Tensor& x, const NeuronConfig& cfg);

// d spike / d v_pre at u = v_pre - threshold. Triangular:
// max(0, 1 - |u|/width)/width. Arctan: (1/pi) * width / (1 + (width*u)^2).
float surrogate_grad(float u, const NeuronConfig& cfg);

struct NeuronGrads {
    Tensor grad_x;
    Tensor grad_v_prev;
};

// Reverse of neuron_step. The reset is straight-through: S in V*(1-S) is
// treated as constant, so grad_v_pre = grad_s * sg(v_pre - theta)
// + grad_v_next * (1 - S). Spikes are recomputed from v_pre.
NeuronGrads neuron_backward(const Tensor& grad_spikes, const Tensor& grad_v_next,
                            const Tensor& v_pre, const NeuronConfig& cfg);

// Single-step evaluation from zero state: v_pre equals x for IF and LIF
// alike, the post-reset potential is discarded. This is the form residual
// functions use at every time step.
Tensor spike_activation(const Tensor& x, const NeuronConfig& cfg);
Tensor spike_activation_backward(const Tensor& grad_spikes, const Tensor& x,
                                 const NeuronConfig& cfg);

}  // namespace revsnn
