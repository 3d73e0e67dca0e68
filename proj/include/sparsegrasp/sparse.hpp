#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sparsegrasp/autodiff.hpp"
#include "sparsegrasp/ops.hpp"
#include "sparsegrasp/tensor.hpp"

namespace sg {

// Score/weight initialization and the K fraction of active edges per layer.
struct SparsityConfig {
    float k_fraction = 0.5f;
    std::string weight_init = "kaiming-uniform";
    std::string score_init = "abs-kaiming-uniform";
    uint32_t seed = 0;
    bool mask_output_heads = true;
};

// Frozen weights plus trainable per-edge scores. The binary mask keeps the
// floor(k * n) highest-scored edges; ties go to the lower flat index.
class ScoredTensor {
public:
    ScoredTensor() = default;
    ScoredTensor(std::vector<int> shape, const SparsityConfig& config, std::mt19937& rng,
                 bool masked = true);

    // Recomputes the mask from current scores.
    void select_topk();

    // Mask recomputed, then returns weights * mask as a fresh tensor with
    // requires_grad set; cached until the matching score gradient pull.
    TensorPtr effective_weights();

    // Straight-through: scores.g += d(effective)/d * weights, for every edge
    // including currently masked-out ones.
    void accumulate_score_grad();

    int64_t active_count() const;
    int64_t total_count() const { return weights_ ? weights_->numel() : 0; }

    TensorPtr weights() { return weights_; }
    TensorPtr scores() { return scores_; }
    const std::vector<uint8_t>& mask() const { return mask_; }
    float k_fraction() const { return k_; }
    bool masked() const { return masked_; }
    void set_k_fraction(float k) { k_ = k; }

    // Construction from stored arrays (checkpoint load).
    static ScoredTensor from_arrays(TensorPtr weights, TensorPtr scores, float k, bool masked);

private:
    TensorPtr weights_;
    TensorPtr scores_;
    std::vector<uint8_t> mask_;
    TensorPtr effective_;
    float k_ = 1.0f;
    bool masked_ = true;  // unmasked tensors act as plain dense layers
};

// Conv layer ops on a scored weight tensor. Bias passes through unmasked.
TensorPtr masked_conv2d(Tape& tape, ScoredTensor& st, const TensorPtr& x, const TensorPtr& bias,
                        int stride, int padding);
TensorPtr masked_conv2d_transposed(Tape& tape, ScoredTensor& st, const TensorPtr& x,
                                   const TensorPtr& bias, int stride, int padding,
                                   int output_padding);

}  // namespace sg
