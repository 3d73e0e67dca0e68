#include "sparsegrasp/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sg {

ScoredTensor::ScoredTensor(std::vector<int> shape, const SparsityConfig& config,
                           std::mt19937& rng, bool masked)
    : k_(config.k_fraction), masked_(masked) {
    if (shape.empty()) throw std::invalid_argument("scored tensor: empty shape");
    if (k_ <= 0.0f || k_ > 1.0f)
        throw std::invalid_argument("scored tensor: k_fraction must be in (0,1]");
    weights_ = make_tensor(shape);
    scores_ = make_tensor(shape);
    const float bound = kaiming_bound(shape);

    if (config.weight_init == "kaiming-uniform") {
        fill_uniform(*weights_, rng, -bound, bound);
    } else if (config.weight_init == "normal") {
        fill_normal(*weights_, rng, 0.0f, bound);
    } else {
        throw std::invalid_argument("unknown weight_init: " + config.weight_init);
    }

    if (config.score_init == "abs-kaiming-uniform") {
        fill_uniform(*scores_, rng, -bound, bound);
        for (auto& s : scores_->v) {
            s = std::fabs(s);
            if (s == 0.0f) s = bound * 1e-6f;  // scores must stay strictly positive
        }
    } else if (config.score_init == "uniform") {
        fill_uniform(*scores_, rng, 1e-6f, 1.0f);
    } else {
        throw std::invalid_argument("unknown score_init: " + config.score_init);
    }

    scores_->requires_grad = true;
    select_topk();
}

ScoredTensor ScoredTensor::from_arrays(TensorPtr weights, TensorPtr scores, float k,
                                       bool masked) {
    ScoredTensor st;
    st.weights_ = std::move(weights);
    st.scores_ = std::move(scores);
    st.scores_->requires_grad = true;
    st.k_ = k;
    st.masked_ = masked;
    st.select_topk();
    return st;
}

void ScoredTensor::select_topk() {
    const int64_t n = scores_->numel();
    mask_.assign(static_cast<size_t>(n), 0);
    if (!masked_ || k_ >= 1.0f) {
        std::fill(mask_.begin(), mask_.end(), 1);
        return;
    }
    const int64_t keep = static_cast<int64_t>(std::floor(static_cast<double>(k_) * n));
    if (keep <= 0) return;
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    auto better = [&](int64_t a, int64_t b) {
        const float sa = scores_->v[static_cast<size_t>(a)];
        const float sb = scores_->v[static_cast<size_t>(b)];
        if (sa != sb) return sa > sb;
        return a < b;
    };
    std::nth_element(idx.begin(), idx.begin() + keep - 1, idx.end(), better);
    for (int64_t i = 0; i < keep; ++i) mask_[static_cast<size_t>(idx[static_cast<size_t>(i)])] = 1;
}

TensorPtr ScoredTensor::effective_weights() {
    select_topk();
    effective_ = make_tensor(weights_->shape);
    for (size_t i = 0; i < effective_->v.size(); ++i)
        effective_->v[i] = mask_[i] ? weights_->v[i] : 0.0f;
    effective_->requires_grad = true;
    return effective_;
}

void ScoredTensor::accumulate_score_grad() {
    if (!effective_ || effective_->g.empty()) return;
    scores_->ensure_grad();
    for (size_t i = 0; i < scores_->g.size(); ++i)
        scores_->g[i] += effective_->g[i] * weights_->v[i];
    effective_.reset();
}

int64_t ScoredTensor::active_count() const {
    int64_t c = 0;
    for (uint8_t m : mask_) c += m;
    return c;
}

TensorPtr masked_conv2d(Tape& tape, ScoredTensor& st, const TensorPtr& x, const TensorPtr& bias,
                        int stride, int padding) {
    return conv2d(tape, x, st.effective_weights(), bias, stride, padding);
}

TensorPtr masked_conv2d_transposed(Tape& tape, ScoredTensor& st, const TensorPtr& x,
                                   const TensorPtr& bias, int stride, int padding,
                                   int output_padding) {
    return conv2d_transposed(tape, x, st.effective_weights(), bias, stride, padding,
                             output_padding);
}

}  // namespace sg
