#pragma once

#include <cmath>
#include <vector>

#include "sparsegrasp/tensor.hpp"

namespace sg {

// Standard Adam with bias correction. Only tensors registered here are ever
// touched; anything else in the model stays frozen.
class Adam {
public:
    explicit Adam(float lr = 0.001f, float beta1 = 0.9f, float beta2 = 0.999f,
                  float epsilon = 1e-8f)
        : lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

    void add_param(const TensorPtr& p) {
        params_.push_back(p);
        m_.emplace_back(p->v.size(), 0.0f);
        v_.emplace_back(p->v.size(), 0.0f);
    }

    void step() {
        ++t_;
        const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
        const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = *params_[pi];
            if (p.g.empty()) continue;
            for (size_t i = 0; i < p.v.size(); ++i) {
                const float g = p.g[i];
                m_[pi][i] = beta1_ * m_[pi][i] + (1.0f - beta1_) * g;
                v_[pi][i] = beta2_ * v_[pi][i] + (1.0f - beta2_) * g * g;
                const float mhat = m_[pi][i] / bc1;
                const float vhat = v_[pi][i] / bc2;
                p.v[i] -= lr_ * mhat / (std::sqrt(vhat) + epsilon_);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_)
            if (!p->g.empty()) p->zero_grad();
    }

    int step_count() const { return t_; }
    float lr() const { return lr_; }

private:
    float lr_, beta1_, beta2_, epsilon_;
    int t_ = 0;
    std::vector<TensorPtr> params_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
};

}  // namespace sg
