#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "revsnn/rng.hpp"
#include "revsnn/tensor.hpp"

namespace revsnn {

// Sample i's step-t tensor sits at samples[i * steps + t]; static datasets
// have steps == 1 and feed the same tensor to every time step.
struct Dataset {
    int steps = 1;
    int classes = 0;
    int channels = 0, height = 0, width = 0;
    std::vector<Tensor> samples;  // each (1, C, H, W)
    std::vector<int> labels;

    int size() const { return static_cast<int>(labels.size()); }
    const Tensor& sample(int i, int t) const {
        return samples[static_cast<std::size_t>(i) * steps + t];
    }
};

// CIFAR binary records: 1 label byte + 3072 pixels, or coarse+fine label
// bytes + 3072 pixels for the 100-class variant; the record size is detected
// from the file length. Pixels are scaled to [0, 1] and normalized per
// channel with mean/std computed over the whole file.
Dataset load_cifar_binary(const std::string& path);

// Multi-class spike-rate task: class c fires at a high rate on the pixels
// with index % classes == c and at a low rate elsewhere, redrawn each step.
// Per-pixel mean rates are linearly separable, so a logistic readout on them
// reaches ~1.0 accuracy.
Dataset synth_task(std::uint64_t seed, int classes, int count, int timesteps, int channels = 2,
                   int hw = 8);

struct Batch {
    std::vector<Tensor> steps;  // size 1 or dataset steps, each (B, C, H, W)
    std::vector<int> labels;
};

Batch make_batch(const Dataset& ds, const std::vector<int>& indices);

std::vector<int> shuffled_indices(int n, Rng& rng);

// 4-pixel-pad random crop plus horizontal flip, drawn per sample. Off by
// default in training.
void augment_batch(Batch& batch, Rng& rng);

}  // namespace revsnn
