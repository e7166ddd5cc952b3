#include "revsnn/neuron.hpp"

#include <cmath>
#include <stdexcept>

namespace revsnn {

void NeuronConfig::validate() const {
    if (!(threshold > 0.0f)) throw std::invalid_argument("NeuronConfig: threshold must be > 0");
    if (kind == NeuronKind::LIF && !(decay > 0.0f && decay <= 1.0f))
        throw std::invalid_argument("NeuronConfig: LIF decay must be in (0, 1]");
    if (!(surrogate_width > 0.0f))
        throw std::invalid_argument("NeuronConfig: surrogate width must be > 0");
}

NeuronStepResult neuron_step(const NeuronState& prev, const Tensor& x, const NeuronConfig& cfg) {
    cfg.validate();
    check_same_shape(prev.v, x, "neuron_step");
    NeuronStepResult r;
    r.v_pre = Tensor(x.shape);
    r.spikes = Tensor(x.shape);
    r.next.v = Tensor(x.shape);
    const float a = cfg.kind == NeuronKind::LIF ? cfg.decay : 1.0f;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const float v = a * prev.v.data[i] + x.data[i];
        const float s = v >= cfg.threshold ? 1.0f : 0.0f;  // H(0) = 1
        r.v_pre.data[i] = v;
        r.spikes.data[i] = s;
        r.next.v.data[i] = v * (1.0f - s);
    }
    return r;
}

float surrogate_grad(float u, const NeuronConfig& cfg) {
    const float w = cfg.surrogate_width;
    if (cfg.surrogate == SurrogateKind::Triangular) {
        const float t = 1.0f - std::fabs(u) / w;
        return t > 0.0f ? t / w : 0.0f;
    }
    const float wu = w * u;
    return (1.0f / 3.14159265358979323846f) * w / (1.0f + wu * wu);
}

NeuronGrads neuron_backward(const Tensor& grad_spikes, const Tensor& grad_v_next,
                            const Tensor& v_pre, const NeuronConfig& cfg) {
    cfg.validate();
    check_same_shape(grad_spikes, v_pre, "neuron_backward");
    check_same_shape(grad_v_next, v_pre, "neuron_backward");
    NeuronGrads g;
    g.grad_x = Tensor(v_pre.shape);
    g.grad_v_prev = Tensor(v_pre.shape);
    const float a = cfg.kind == NeuronKind::LIF ? cfg.decay : 1.0f;
    for (std::size_t i = 0; i < v_pre.data.size(); ++i) {
        const float v = v_pre.data[i];
        const float s = v >= cfg.threshold ? 1.0f : 0.0f;
        const float gv = grad_spikes.data[i] * surrogate_grad(v - cfg.threshold, cfg) +
                         grad_v_next.data[i] * (1.0f - s);
        g.grad_x.data[i] = gv;
        g.grad_v_prev.data[i] = gv * a;
    }
    return g;
}

Tensor spike_activation(const Tensor& x, const NeuronConfig& cfg) {
    cfg.validate();
    Tensor s(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i)
        s.data[i] = x.data[i] >= cfg.threshold ? 1.0f : 0.0f;
    return s;
}

Tensor spike_activation_backward(const Tensor& grad_spikes, const Tensor& x,
                                 const NeuronConfig& cfg) {
    check_same_shape(grad_spikes, x, "spike_activation_backward");
    Tensor g(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i)
        g.data[i] = grad_spikes.data[i] * surrogate_grad(x.data[i] - cfg.threshold, cfg);
    return g;
}

}  // namespace revsnn
