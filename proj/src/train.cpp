#include "revsnn/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>

namespace revsnn {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

int argmax_row(const Tensor& logits, int row) {
    int best = 0;
    for (int c = 1; c < logits.shape.c; ++c)
        if (logits.at(row, c, 0, 0) > logits.at(row, best, 0, 0)) best = c;
    return best;
}

long count_correct(const Tensor& logits, const std::vector<int>& labels) {
    long correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (argmax_row(logits, static_cast<int>(i)) == labels[i]) ++correct;
    return correct;
}

std::vector<int> batch_indices(const std::vector<int>& order, int start, int batch_size) {
    const int end = std::min<int>(start + batch_size, static_cast<int>(order.size()));
    return std::vector<int>(order.begin() + start, order.begin() + end);
}

}  // namespace

const char* optimizer_name(OptimizerKind k) {
    return k == OptimizerKind::SgdMomentum ? "sgd-momentum" : "adamw";
}

OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "sgd-momentum" || s == "sgd") return OptimizerKind::SgdMomentum;
    if (s == "adamw") return OptimizerKind::AdamW;
    throw std::invalid_argument("unknown optimizer: " + s);
}

float default_lr(OptimizerKind k) { return k == OptimizerKind::SgdMomentum ? 0.1f : 0.001f; }

void TrainConfig::validate() const {
    if (epochs < 0) throw std::invalid_argument("TrainConfig: negative epochs");
    if (!(lr > 0.0f)) throw std::invalid_argument("TrainConfig: lr must be positive");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be positive");
    if (workers < 1) throw std::invalid_argument("TrainConfig: workers must be positive");
    if (momentum < 0.0f || momentum >= 1.0f)
        throw std::invalid_argument("TrainConfig: momentum must be in [0, 1)");
    if (weight_decay < 0.0f) throw std::invalid_argument("TrainConfig: negative weight_decay");
    if (bn_momentum <= 0.0f || bn_momentum > 1.0f)
        throw std::invalid_argument("TrainConfig: bn_momentum must be in (0, 1]");
    if (adam_beta1 <= 0.0f || adam_beta1 >= 1.0f || adam_beta2 <= 0.0f || adam_beta2 >= 1.0f)
        throw std::invalid_argument("TrainConfig: adam betas must be in (0, 1)");
    if (!(adam_eps > 0.0f)) throw std::invalid_argument("TrainConfig: adam_eps must be positive");
}

double cosine_lr(double base, int step, int total_steps) {
    if (total_steps <= 0) return base;
    if (step >= total_steps) return 0.0;
    return base * 0.5 * (1.0 + std::cos(3.141592653589793 * step / total_steps));
}

Optimizer::Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}

void Optimizer::step(ParamStore& params, double lr) {
    const int count = params.count();
    if (static_cast<int>(m_.size()) < count) m_.resize(count);
    if (cfg_.optimizer == OptimizerKind::AdamW && static_cast<int>(v_.size()) < count)
        v_.resize(count);
    ++t_;
    const float flr = static_cast<float>(lr);
    for (int i = 0; i < count; ++i) {
        if (!params.trainable(i)) continue;
        Tensor& w = params.value(i);
        const Tensor& g = params.grad(i);
        if (m_[i].empty()) m_[i] = Tensor(w.shape);
        if (cfg_.optimizer == OptimizerKind::SgdMomentum) {
            Tensor& vel = m_[i];
            for (std::size_t j = 0; j < w.size(); ++j) {
                const float gj = g.data[j] + cfg_.weight_decay * w.data[j];
                vel.data[j] = cfg_.momentum * vel.data[j] + gj;
                w.data[j] -= flr * vel.data[j];
            }
        } else {
            if (v_[i].empty()) v_[i] = Tensor(w.shape);
            Tensor& m = m_[i];
            Tensor& v = v_[i];
            const double c1 = 1.0 - std::pow(cfg_.adam_beta1, t_);
            const double c2 = 1.0 - std::pow(cfg_.adam_beta2, t_);
            for (std::size_t j = 0; j < w.size(); ++j) {
                const float gj = g.data[j];
                m.data[j] = cfg_.adam_beta1 * m.data[j] + (1.0f - cfg_.adam_beta1) * gj;
                v.data[j] = cfg_.adam_beta2 * v.data[j] + (1.0f - cfg_.adam_beta2) * gj * gj;
                const double mhat = m.data[j] / c1;
                const double vhat = v.data[j] / c2;
                w.data[j] -= static_cast<float>(lr * (mhat / (std::sqrt(vhat) + cfg_.adam_eps)) +
                                                lr * cfg_.weight_decay * w.data[j]);
            }
        }
    }
}

EvalResult evaluate(const Network& net, const Dataset& ds, int batch_size, Executor& exec) {
    if (ds.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    if (batch_size < 1) throw std::invalid_argument("evaluate: batch_size must be positive");
    EvalResult res;
    long correct = 0;
    double loss_sum = 0.0, fwd_seconds = 0.0;
    std::vector<int> order(ds.size());
    for (int i = 0; i < ds.size(); ++i) order[i] = i;
    for (int start = 0; start < ds.size(); start += batch_size) {
        Batch b = make_batch(ds, batch_indices(order, start, batch_size));
        const auto f0 = Clock::now();
        Tensor logits = net.forward(b.steps, EvalMode::Infer, Policy::Recompute, exec, nullptr,
                                    nullptr);
        fwd_seconds += seconds_since(f0);
        LossResult L = softmax_cross_entropy(logits, b.labels);
        loss_sum += L.loss * static_cast<double>(b.labels.size());
        correct += count_correct(logits, b.labels);
    }
    res.accuracy = static_cast<double>(correct) / ds.size();
    res.loss = loss_sum / ds.size();
    res.us_per_image = fwd_seconds * 1e6 / ds.size();
    return res;
}

RunMetrics train_network(Network& net, const Dataset& train_ds, const Dataset* test_ds,
                         const TrainConfig& cfg, std::ostream* log) {
    cfg.validate();
    if (train_ds.size() == 0) throw std::invalid_argument("train: empty dataset");
    const auto t_start = Clock::now();

    Executor exec(cfg.workers);
    MemoryMeter meter;
    meter.register_bytes(MemCategory::Parameters, net.params().bytes());
    meter.register_bytes(MemCategory::Gradients, net.params().bytes());
    net.params().zero_grads();

    const int n = train_ds.size();
    const int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const int total_steps = cfg.epochs * steps_per_epoch;

    Rng rng(cfg.seed);
    Optimizer opt(cfg);
    RunMetrics rm;
    double compute = 0.0;
    int gstep = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto e_start = Clock::now();
        const std::vector<int> order = shuffled_indices(n, rng);
        double loss_sum = 0.0;
        long correct = 0;
        EpochMetrics em;
        em.epoch = epoch;
        em.lr = cosine_lr(cfg.lr, gstep, total_steps);

        for (int start = 0; start < n; start += cfg.batch_size) {
            Batch b = make_batch(train_ds, batch_indices(order, start, cfg.batch_size));
            if (cfg.augment) augment_batch(b, rng);
            const double lr_t = cosine_lr(cfg.lr, gstep, total_steps);

            const auto c0 = Clock::now();
            NetRecord rec;
            Tensor logits = net.forward(b.steps, EvalMode::Train, cfg.policy, exec, &rec,
                                        &meter);
            LossResult L = softmax_cross_entropy(logits, b.labels);
            if (!std::isfinite(L.loss))
                throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                         std::to_string(epoch) + " step " +
                                         std::to_string(gstep));
            net.backward(L.grad_logits, b.steps, exec, rec);
            opt.step(net.params(), lr_t);
            net.params().zero_grads();
            net.fold_running_stats(rec, cfg.bn_momentum);
            compute += seconds_since(c0);

            loss_sum += L.loss * static_cast<double>(b.labels.size());
            correct += count_correct(logits, b.labels);
            ++gstep;
        }

        em.train_loss = loss_sum / n;
        em.train_acc = static_cast<double>(correct) / n;
        if (test_ds) em.test_acc = evaluate(net, *test_ds, cfg.batch_size, exec).accuracy;
        em.seconds = seconds_since(e_start);
        rm.epochs.push_back(em);
        if (log) {
            char line[160];
            std::snprintf(line, sizeof(line),
                          "epoch %d/%d lr %.5f loss %.5f train_acc %.4f test_acc %.4f (%.1fs)",
                          epoch + 1, cfg.epochs, em.lr, em.train_loss, em.train_acc, em.test_acc,
                          em.seconds);
            *log << line << "\n";
        }
    }

    if (!rm.epochs.empty()) {
        rm.final_train_acc = rm.epochs.back().train_acc;
        rm.final_test_acc = rm.epochs.back().test_acc;
    } else {
        rm.final_train_acc = evaluate(net, train_ds, cfg.batch_size, exec).accuracy;
        if (test_ds) rm.final_test_acc = evaluate(net, *test_ds, cfg.batch_size, exec).accuracy;
    }
    rm.inference_us_per_image =
        evaluate(net, test_ds ? *test_ds : train_ds, cfg.batch_size, exec).us_per_image;
    rm.peak_activation_bytes = meter.peak_activation();
    rm.train_seconds_compute = compute;
    rm.train_seconds_total = seconds_since(t_start);
    return rm;
}

void write_metrics_csv(const std::string& path, const RunMetrics& metrics) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "epoch,lr,train_loss,train_acc,test_acc\n";
    for (const EpochMetrics& em : metrics.epochs) {
        char row[128];
        std::snprintf(row, sizeof(row), "%d,%.6f,%.6f,%.6f,%.6f\n", em.epoch, em.lr,
                      em.train_loss, em.train_acc, em.test_acc);
        os << row;
    }
    if (!os) throw std::runtime_error("failed writing " + path);
}

}  // namespace revsnn
