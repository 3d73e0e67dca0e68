#pragma once

#include <vector>

#include "sparsegrasp/autodiff.hpp"
#include "sparsegrasp/tensor.hpp"

namespace sg {

// Per-channel running statistics for non-affine batch normalization. There is
// no learnable scale or shift.
struct BatchNormState {
    int channels = 0;
    float momentum = 0.1f;
    float epsilon = 1e-5f;
    std::vector<float> running_mean;
    std::vector<float> running_var;
    bool seen_batch = false;

    explicit BatchNormState(int c = 0, float mom = 0.1f, float eps = 1e-5f)
        : channels(c), momentum(mom), epsilon(eps), running_mean(c, 0.0f), running_var(c, 1.0f) {}
};

// x: [N,Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout]. Cross-correlation plus bias.
TensorPtr conv2d(Tape& tape, const TensorPtr& x, const TensorPtr& w, const TensorPtr& b,
                 int stride, int padding);

// x: [N,Cin,H,W], w: [Cin,Cout,kh,kw], b: [Cout]. Forward equals the
// gradient-of-input of the matching conv2d.
TensorPtr conv2d_transposed(Tape& tape, const TensorPtr& x, const TensorPtr& w,
                            const TensorPtr& b, int stride, int padding, int output_padding);

TensorPtr batchnorm_nonaffine(Tape& tape, const TensorPtr& x, BatchNormState& state,
                              bool training);

TensorPtr relu(Tape& tape, const TensorPtr& x);

TensorPtr residual_add(Tape& tape, const TensorPtr& a, const TensorPtr& b);

// Concatenates along the channel axis (dim 1). Used by inception blocks.
TensorPtr concat_channels(Tape& tape, const std::vector<TensorPtr>& parts);

// Mean over elements of the Huber-style penalty with threshold beta.
TensorPtr smooth_l1_loss(Tape& tape, const TensorPtr& prediction, const TensorPtr& target,
                         float beta);

TensorPtr mse_loss(Tape& tape, const TensorPtr& prediction, const TensorPtr& target);

// Scalar sum of already-scalar losses.
TensorPtr add_scalars(Tape& tape, const std::vector<TensorPtr>& scalars);

}  // namespace sg
