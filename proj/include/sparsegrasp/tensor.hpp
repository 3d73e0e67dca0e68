#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sg {

// Dense float32 tensor, NCHW for image data. Gradient storage is allocated
// lazily when the tensor participates in a backward pass.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> v;
    std::vector<float> g;
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, float fill = 0.0f) : shape(std::move(s)) {
        v.assign(numel(), fill);
    }
    Tensor(std::vector<int> s, std::vector<float> values) : shape(std::move(s)), v(std::move(values)) {
        if (static_cast<size_t>(numel()) != v.size())
            throw std::invalid_argument("tensor: shape/value length mismatch");
    }

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    void ensure_grad() {
        if (g.size() != v.size()) g.assign(v.size(), 0.0f);
    }
    void zero_grad() { g.assign(v.size(), 0.0f); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (float x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_tensor(std::vector<int> shape, float fill = 0.0f) {
    return std::make_shared<Tensor>(std::move(shape), fill);
}
inline TensorPtr make_tensor(std::vector<int> shape, std::vector<float> values) {
    return std::make_shared<Tensor>(std::move(shape), std::move(values));
}

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Seeded fills. All randomness in the project flows through std::mt19937 so
// that a (seed, config) pair pins every value.
inline void fill_uniform(Tensor& t, std::mt19937& rng, float lo, float hi) {
    std::uniform_real_distribution<float> d(lo, hi);
    for (auto& x : t.v) x = d(rng);
}
inline void fill_normal(Tensor& t, std::mt19937& rng, float mean, float stddev) {
    std::normal_distribution<float> d(mean, stddev);
    for (auto& x : t.v) x = d(rng);
}

// Kaiming-uniform bound for a conv weight [Cout,Cin,kh,kw] (fan_in based).
inline float kaiming_bound(const std::vector<int>& wshape) {
    int64_t fan_in = 1;
    for (size_t i = 1; i < wshape.size(); ++i) fan_in *= wshape[i];
    return std::sqrt(6.0f / static_cast<float>(fan_in));
}

}  // namespace sg
