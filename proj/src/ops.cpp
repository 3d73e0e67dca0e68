#include "sparsegrasp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "sparsegrasp/detail/gemm.hpp"
#include "sparsegrasp/diag.hpp"

namespace sg {

namespace {

std::vector<float>& scratch(int which, size_t n) {
    static thread_local std::vector<float> bufs[3];
    auto& b = bufs[which];
    if (b.size() < n) b.resize(n);
    return b;
}

void check_4d(const TensorPtr& t, const char* name) {
    if (t->shape.size() != 4)
        throw std::invalid_argument(std::string(name) + " must be 4-D, got " + shape_str(t->shape));
}

int conv_out_size(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

TensorPtr conv2d(Tape& tape, const TensorPtr& x, const TensorPtr& w, const TensorPtr& b,
                 int stride, int padding) {
    check_4d(x, "conv2d input");
    check_4d(w, "conv2d weight");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
    const int N = x->dim(0), Cin = x->dim(1), H = x->dim(2), W = x->dim(3);
    const int Cout = w->dim(0), kh = w->dim(2), kw = w->dim(3);
    if (w->dim(1) != Cin)
        throw std::invalid_argument("conv2d: input channels " + std::to_string(Cin) +
                                    " do not match weight channels " + std::to_string(w->dim(1)));
    if (b->numel() != Cout) throw std::invalid_argument("conv2d: bias size must equal Cout");
    if (H + 2 * padding < kh || W + 2 * padding < kw)
        throw std::invalid_argument("conv2d: kernel does not fit padded input");

    const int Ho = conv_out_size(H, kh, stride, padding);
    const int Wo = conv_out_size(W, kw, stride, padding);
    const int K = Cin * kh * kw;
    const int64_t nsp = static_cast<int64_t>(Ho) * Wo;

    auto y = make_tensor({N, Cout, Ho, Wo});
    auto& col = scratch(0, static_cast<size_t>(K) * nsp);
    for (int n = 0; n < N; ++n) {
        const float* xn = x->v.data() + static_cast<int64_t>(n) * Cin * H * W;
        float* yn = y->v.data() + static_cast<int64_t>(n) * Cout * nsp;
        detail::im2col(xn, Cin, H, W, kh, kw, stride, padding, col.data(), Ho, Wo);
        detail::gemm(Cout, static_cast<int>(nsp), K, w->v.data(), col.data(), yn, false);
        for (int c = 0; c < Cout; ++c) {
            const float bc = b->v[static_cast<size_t>(c)];
            float* yc = yn + static_cast<int64_t>(c) * nsp;
            for (int64_t j = 0; j < nsp; ++j) yc[j] += bc;
        }
    }

    if (x->requires_grad || w->requires_grad || b->requires_grad) {
        y->requires_grad = true;
        tape.record([=]() {
            if (y->g.empty()) return;
            auto& colb = scratch(0, static_cast<size_t>(K) * nsp);
            if (w->requires_grad) {
                w->ensure_grad();
                for (int n = 0; n < N; ++n) {
                    const float* xn = x->v.data() + static_cast<int64_t>(n) * Cin * H * W;
                    const float* dyn = y->g.data() + static_cast<int64_t>(n) * Cout * nsp;
                    detail::im2col(xn, Cin, H, W, kh, kw, stride, padding, colb.data(), Ho, Wo);
                    detail::gemm_abt_acc(Cout, K, static_cast<int>(nsp), dyn, colb.data(),
                                         w->g.data());
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < Cout; ++c) {
                        const float* dyc =
                            y->g.data() + (static_cast<int64_t>(n) * Cout + c) * nsp;
                        float s = 0.0f;
                        for (int64_t j = 0; j < nsp; ++j) s += dyc[j];
                        b->g[static_cast<size_t>(c)] += s;
                    }
            }
            if (x->requires_grad) {
                x->ensure_grad();
                auto& wt = scratch(1, static_cast<size_t>(K) * Cout);
                for (int c = 0; c < Cout; ++c)
                    for (int k = 0; k < K; ++k)
                        wt[static_cast<size_t>(k) * Cout + c] =
                            w->v[static_cast<size_t>(c) * K + k];
                auto& dcol = scratch(2, static_cast<size_t>(K) * nsp);
                for (int n = 0; n < N; ++n) {
                    const float* dyn = y->g.data() + static_cast<int64_t>(n) * Cout * nsp;
                    detail::gemm(K, static_cast<int>(nsp), Cout, wt.data(), dyn, dcol.data(),
                                 false);
                    detail::col2im_acc(dcol.data(), Cin, H, W, kh, kw, stride, padding,
                                       x->g.data() + static_cast<int64_t>(n) * Cin * H * W, Ho,
                                       Wo);
                }
            }
        });
    }
    return y;
}

TensorPtr conv2d_transposed(Tape& tape, const TensorPtr& x, const TensorPtr& w,
                            const TensorPtr& b, int stride, int padding, int output_padding) {
    check_4d(x, "conv2d_transposed input");
    check_4d(w, "conv2d_transposed weight");
    if (stride < 1) throw std::invalid_argument("conv2d_transposed: stride must be >= 1");
    if (output_padding < 0 || output_padding >= stride)
        throw std::invalid_argument("conv2d_transposed: output_padding must be in [0, stride)");
    const int N = x->dim(0), Cin = x->dim(1), H = x->dim(2), W = x->dim(3);
    const int Cout = w->dim(1), kh = w->dim(2), kw = w->dim(3);
    if (w->dim(0) != Cin)
        throw std::invalid_argument("conv2d_transposed: input channels " + std::to_string(Cin) +
                                    " do not match weight channels " + std::to_string(w->dim(0)));
    if (b->numel() != Cout)
        throw std::invalid_argument("conv2d_transposed: bias size must equal Cout");

    const int Ho = (H - 1) * stride - 2 * padding + kh + output_padding;
    const int Wo = (W - 1) * stride - 2 * padding + kw + output_padding;
    if (Ho <= 0 || Wo <= 0)
        throw std::invalid_argument("conv2d_transposed: non-positive output size");
    const int Kc = Cout * kh * kw;
    const int64_t nsp_in = static_cast<int64_t>(H) * W;
    const int64_t nsp_out = static_cast<int64_t>(Ho) * Wo;

    auto y = make_tensor({N, Cout, Ho, Wo});
    auto& wt = scratch(1, static_cast<size_t>(Kc) * Cin);
    for (int c = 0; c < Cin; ++c)
        for (int k = 0; k < Kc; ++k)
            wt[static_cast<size_t>(k) * Cin + c] = w->v[static_cast<size_t>(c) * Kc + k];
    auto& col = scratch(0, static_cast<size_t>(Kc) * nsp_in);
    for (int n = 0; n < N; ++n) {
        const float* xn = x->v.data() + static_cast<int64_t>(n) * Cin * nsp_in;
        float* yn = y->v.data() + static_cast<int64_t>(n) * Cout * nsp_out;
        detail::gemm(Kc, static_cast<int>(nsp_in), Cin, wt.data(), xn, col.data(), false);
        detail::col2im_acc(col.data(), Cout, Ho, Wo, kh, kw, stride, padding, yn, H, W);
        for (int c = 0; c < Cout; ++c) {
            const float bc = b->v[static_cast<size_t>(c)];
            float* yc = yn + static_cast<int64_t>(c) * nsp_out;
            for (int64_t j = 0; j < nsp_out; ++j) yc[j] += bc;
        }
    }

    if (x->requires_grad || w->requires_grad || b->requires_grad) {
        y->requires_grad = true;
        tape.record([=]() {
            if (y->g.empty()) return;
            auto& colb = scratch(0, static_cast<size_t>(Kc) * nsp_in);
            for (int n = 0; n < N; ++n) {
                const float* dyn = y->g.data() + static_cast<int64_t>(n) * Cout * nsp_out;
                detail::im2col(dyn, Cout, Ho, Wo, kh, kw, stride, padding, colb.data(), H, W);
                if (w->requires_grad) {
                    w->ensure_grad();
                    const float* xn = x->v.data() + static_cast<int64_t>(n) * Cin * nsp_in;
                    detail::gemm_abt_acc(Cin, Kc, static_cast<int>(nsp_in), xn, colb.data(),
                                         w->g.data());
                }
                if (x->requires_grad) {
                    x->ensure_grad();
                    auto& dx = scratch(2, static_cast<size_t>(Cin) * nsp_in);
                    detail::gemm(Cin, static_cast<int>(nsp_in), Kc, w->v.data(), colb.data(),
                                 dx.data(), false);
                    float* xg = x->g.data() + static_cast<int64_t>(n) * Cin * nsp_in;
                    for (int64_t j = 0; j < static_cast<int64_t>(Cin) * nsp_in; ++j)
                        xg[j] += dx[static_cast<size_t>(j)];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    for (int c = 0; c < Cout; ++c) {
                        const float* dyc = dyn + static_cast<int64_t>(c) * nsp_out;
                        float s = 0.0f;
                        for (int64_t j = 0; j < nsp_out; ++j) s += dyc[j];
                        b->g[static_cast<size_t>(c)] += s;
                    }
                }
            }
        });
    }
    return y;
}

TensorPtr batchnorm_nonaffine(Tape& tape, const TensorPtr& x, BatchNormState& state,
                              bool training) {
    check_4d(x, "batchnorm input");
    const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
    if (C != state.channels)
        throw std::invalid_argument("batchnorm: channel mismatch");
    const int64_t m = static_cast<int64_t>(N) * H * W;
    const int64_t plane = static_cast<int64_t>(H) * W;

    auto y = make_tensor({N, C, H, W});
    std::vector<float> invstd(static_cast<size_t>(C));

    if (training) {
        if (m < 2) throw std::invalid_argument("batchnorm: need at least 2 values per channel");
        for (int c = 0; c < C; ++c) {
            double sum = 0.0;
            for (int n = 0; n < N; ++n) {
                const float* xc = x->v.data() + (static_cast<int64_t>(n) * C + c) * plane;
                for (int64_t j = 0; j < plane; ++j) sum += xc[j];
            }
            const float mean = static_cast<float>(sum / static_cast<double>(m));
            double sq = 0.0;
            for (int n = 0; n < N; ++n) {
                const float* xc = x->v.data() + (static_cast<int64_t>(n) * C + c) * plane;
                for (int64_t j = 0; j < plane; ++j) {
                    const double d = xc[j] - mean;
                    sq += d * d;
                }
            }
            const float var = static_cast<float>(sq / static_cast<double>(m));
            const float is = 1.0f / std::sqrt(var + state.epsilon);
            invstd[static_cast<size_t>(c)] = is;
            for (int n = 0; n < N; ++n) {
                const float* xc = x->v.data() + (static_cast<int64_t>(n) * C + c) * plane;
                float* yc = y->v.data() + (static_cast<int64_t>(n) * C + c) * plane;
                for (int64_t j = 0; j < plane; ++j) yc[j] = (xc[j] - mean) * is;
            }
            const float unbiased =
                var * static_cast<float>(m) / static_cast<float>(m - 1);
            state.running_mean[static_cast<size_t>(c)] =
                (1.0f - state.momentum) * state.running_mean[static_cast<size_t>(c)] +
                state.momentum * mean;
            state.running_var[static_cast<size_t>(c)] =
                (1.0f - state.momentum) * state.running_var[static_cast<size_t>(c)] +
                state.momentum * unbiased;
        }
        state.seen_batch = true;
    } else {
        if (!state.seen_batch)
            diag::warn("batchnorm: eval mode before any training batch, using init stats");
        for (int c = 0; c < C; ++c) {
            const float mean = state.running_mean[static_cast<size_t>(c)];
            const float is =
                1.0f / std::sqrt(state.running_var[static_cast<size_t>(c)] + state.epsilon);
            invstd[static_cast<size_t>(c)] = is;
            for (int n = 0; n < N; ++n) {
                const float* xc = x->v.data() + (static_cast<int64_t>(n) * C + c) * plane;
                float* yc = y->v.data() + (static_cast<int64_t>(n) * C + c) * plane;
                for (int64_t j = 0; j < plane; ++j) yc[j] = (xc[j] - mean) * is;
            }
        }
    }

    if (x->requires_grad) {
        y->requires_grad = true;
        tape.record([=]() {
            if (y->g.empty()) return;
            x->ensure_grad();
            if (training) {
                // Non-affine: y holds xhat directly.
                for (int c = 0; c < C; ++c) {
                    double sum_dy = 0.0, sum_dyx = 0.0;
                    for (int n = 0; n < N; ++n) {
                        const int64_t off = (static_cast<int64_t>(n) * C + c) * plane;
                        for (int64_t j = 0; j < plane; ++j) {
                            sum_dy += y->g[static_cast<size_t>(off + j)];
                            sum_dyx += static_cast<double>(y->g[static_cast<size_t>(off + j)]) *
                                       y->v[static_cast<size_t>(off + j)];
                        }
                    }
                    const float mean_dy = static_cast<float>(sum_dy / static_cast<double>(m));
                    const float mean_dyx = static_cast<float>(sum_dyx / static_cast<double>(m));
                    const float is = invstd[static_cast<size_t>(c)];
                    for (int n = 0; n < N; ++n) {
                        const int64_t off = (static_cast<int64_t>(n) * C + c) * plane;
                        for (int64_t j = 0; j < plane; ++j)
                            x->g[static_cast<size_t>(off + j)] +=
                                is * (y->g[static_cast<size_t>(off + j)] - mean_dy -
                                      y->v[static_cast<size_t>(off + j)] * mean_dyx);
                    }
                }
            } else {
                for (int c = 0; c < C; ++c) {
                    const float is = invstd[static_cast<size_t>(c)];
                    for (int n = 0; n < N; ++n) {
                        const int64_t off = (static_cast<int64_t>(n) * C + c) * plane;
                        for (int64_t j = 0; j < plane; ++j)
                            x->g[static_cast<size_t>(off + j)] +=
                                is * y->g[static_cast<size_t>(off + j)];
                    }
                }
            }
        });
    }
    return y;
}

TensorPtr relu(Tape& tape, const TensorPtr& x) {
    auto y = make_tensor(x->shape);
    for (size_t i = 0; i < x->v.size(); ++i) y->v[i] = x->v[i] > 0.0f ? x->v[i] : 0.0f;
    if (x->requires_grad) {
        y->requires_grad = true;
        tape.record([=]() {
            if (y->g.empty()) return;
            x->ensure_grad();
            // Subgradient at exactly 0 is 0.
            for (size_t i = 0; i < x->v.size(); ++i)
                if (x->v[i] > 0.0f) x->g[i] += y->g[i];
        });
    }
    return y;
}

TensorPtr residual_add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (!a->same_shape(*b))
        throw std::invalid_argument("residual_add: shape mismatch " + shape_str(a->shape) +
                                    " vs " + shape_str(b->shape));
    auto y = make_tensor(a->shape);
    for (size_t i = 0; i < a->v.size(); ++i) y->v[i] = a->v[i] + b->v[i];
    if (a->requires_grad || b->requires_grad) {
        y->requires_grad = true;
        tape.record([=]() {
            if (y->g.empty()) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < y->g.size(); ++i) a->g[i] += y->g[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < y->g.size(); ++i) b->g[i] += y->g[i];
            }
        });
    }
    return y;
}

TensorPtr concat_channels(Tape& tape, const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    check_4d(parts[0], "concat input");
    const int N = parts[0]->dim(0), H = parts[0]->dim(2), W = parts[0]->dim(3);
    int Ctot = 0;
    bool needs_grad = false;
    for (const auto& p : parts) {
        check_4d(p, "concat input");
        if (p->dim(0) != N || p->dim(2) != H || p->dim(3) != W)
            throw std::invalid_argument("concat: spatial/batch mismatch");
        Ctot += p->dim(1);
        needs_grad = needs_grad || p->requires_grad;
    }
    const int64_t plane = static_cast<int64_t>(H) * W;
    auto y = make_tensor({N, Ctot, H, W});
    for (int n = 0; n < N; ++n) {
        int64_t coff = 0;
        for (const auto& p : parts) {
            const int pc = p->dim(1);
            std::memcpy(y->v.data() + (static_cast<int64_t>(n) * Ctot + coff) * plane,
                        p->v.data() + static_cast<int64_t>(n) * pc * plane,
                        sizeof(float) * static_cast<size_t>(pc) * plane);
            coff += pc;
        }
    }
    if (needs_grad) {
        y->requires_grad = true;
        tape.record([=]() {
            if (y->g.empty()) return;
            for (int n = 0; n < N; ++n) {
                int64_t coff = 0;
                for (const auto& p : parts) {
                    const int pc = p->dim(1);
                    if (p->requires_grad) {
                        p->ensure_grad();
                        const float* src =
                            y->g.data() + (static_cast<int64_t>(n) * Ctot + coff) * plane;
                        float* dst = p->g.data() + static_cast<int64_t>(n) * pc * plane;
                        for (int64_t j = 0; j < static_cast<int64_t>(pc) * plane; ++j)
                            dst[j] += src[j];
                    }
                    coff += pc;
                }
            }
        });
    }
    return y;
}

TensorPtr smooth_l1_loss(Tape& tape, const TensorPtr& prediction, const TensorPtr& target,
                         float beta) {
    if (!prediction->same_shape(*target))
        throw std::invalid_argument("smooth_l1_loss: shape mismatch");
    if (beta <= 0.0f) throw std::invalid_argument("smooth_l1_loss: beta must be > 0");
    const size_t n = prediction->v.size();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const float d = prediction->v[i] - target->v[i];
        const float a = std::fabs(d);
        acc += a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
    }
    auto y = make_tensor({1}, {static_cast<float>(acc / static_cast<double>(n))});
    if (prediction->requires_grad || target->requires_grad) {
        y->requires_grad = true;
        tape.record([=]() {
            if (y->g.empty()) return;
            const float scale = y->g[0] / static_cast<float>(n);
            auto dloss = [&](float d) {
                const float a = std::fabs(d);
                return a < beta ? d / beta : (d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f));
            };
            if (prediction->requires_grad) {
                prediction->ensure_grad();
                for (size_t i = 0; i < n; ++i)
                    prediction->g[i] += scale * dloss(prediction->v[i] - target->v[i]);
            }
            if (target->requires_grad) {
                target->ensure_grad();
                for (size_t i = 0; i < n; ++i)
                    target->g[i] -= scale * dloss(prediction->v[i] - target->v[i]);
            }
        });
    }
    return y;
}

TensorPtr mse_loss(Tape& tape, const TensorPtr& prediction, const TensorPtr& target) {
    if (!prediction->same_shape(*target))
        throw std::invalid_argument("mse_loss: shape mismatch");
    const size_t n = prediction->v.size();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = prediction->v[i] - target->v[i];
        acc += d * d;
    }
    auto y = make_tensor({1}, {static_cast<float>(acc / static_cast<double>(n))});
    if (prediction->requires_grad || target->requires_grad) {
        y->requires_grad = true;
        tape.record([=]() {
            if (y->g.empty()) return;
            const float scale = 2.0f * y->g[0] / static_cast<float>(n);
            if (prediction->requires_grad) {
                prediction->ensure_grad();
                for (size_t i = 0; i < n; ++i)
                    prediction->g[i] += scale * (prediction->v[i] - target->v[i]);
            }
            if (target->requires_grad) {
                target->ensure_grad();
                for (size_t i = 0; i < n; ++i)
                    target->g[i] -= scale * (prediction->v[i] - target->v[i]);
            }
        });
    }
    return y;
}

TensorPtr add_scalars(Tape& tape, const std::vector<TensorPtr>& scalars) {
    if (scalars.empty()) throw std::invalid_argument("add_scalars: no inputs");
    float s = 0.0f;
    bool needs_grad = false;
    for (const auto& t : scalars) {
        if (t->numel() != 1) throw std::invalid_argument("add_scalars: inputs must be scalar");
        s += t->v[0];
        needs_grad = needs_grad || t->requires_grad;
    }
    auto y = make_tensor({1}, {s});
    if (needs_grad) {
        y->requires_grad = true;
        tape.record([=]() {
            if (y->g.empty()) return;
            for (const auto& t : scalars)
                if (t->requires_grad) {
                    t->ensure_grad();
                    t->g[0] += y->g[0];
                }
        });
    }
    return y;
}

}  // namespace sg
