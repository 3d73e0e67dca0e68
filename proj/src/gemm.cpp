#include "sparsegrasp/detail/gemm.hpp"

#include <algorithm>
#include <cstring>

namespace sg::detail {

namespace {

constexpr int kRowTile = 4;
constexpr int kColTile = 32;

// Full 4x32 tile: accumulators live in registers, B row segments are reused
// across the four A rows.
inline void kernel_4x32(int K, const float* A0, const float* A1, const float* A2,
                        const float* A3, const float* B, int ldb, float* acc) {
    for (int k = 0; k < K; ++k) {
        const float* b = B + static_cast<int64_t>(k) * ldb;
        const float a0 = A0[k], a1 = A1[k], a2 = A2[k], a3 = A3[k];
        for (int j = 0; j < kColTile; ++j) {
            acc[0 * kColTile + j] += a0 * b[j];
            acc[1 * kColTile + j] += a1 * b[j];
            acc[2 * kColTile + j] += a2 * b[j];
            acc[3 * kColTile + j] += a3 * b[j];
        }
    }
}

inline void kernel_generic(int K, int ib, int jb, const float* A, int lda, const float* B,
                           int ldb, float* acc) {
    for (int k = 0; k < K; ++k) {
        const float* b = B + static_cast<int64_t>(k) * ldb;
        for (int i = 0; i < ib; ++i) {
            const float a = A[static_cast<int64_t>(i) * lda + k];
            for (int j = 0; j < jb; ++j) acc[i * kColTile + j] += a * b[j];
        }
    }
}

}  // namespace

void gemm(int M, int N, int K, const float* A, const float* B, float* C, bool accumulate) {
    float acc[kRowTile * kColTile];
    for (int i0 = 0; i0 < M; i0 += kRowTile) {
        const int ib = std::min(kRowTile, M - i0);
        for (int j0 = 0; j0 < N; j0 += kColTile) {
            const int jb = std::min(kColTile, N - j0);
            if (accumulate) {
                for (int i = 0; i < ib; ++i)
                    for (int j = 0; j < jb; ++j)
                        acc[i * kColTile + j] = C[static_cast<int64_t>(i0 + i) * N + j0 + j];
            } else {
                std::memset(acc, 0, sizeof(acc));
            }
            if (ib == kRowTile && jb == kColTile) {
                const float* a = A + static_cast<int64_t>(i0) * K;
                kernel_4x32(K, a, a + K, a + 2 * K, a + 3 * K, B + j0, N, acc);
            } else {
                kernel_generic(K, ib, jb, A + static_cast<int64_t>(i0) * K, K, B + j0, N, acc);
            }
            for (int i = 0; i < ib; ++i)
                for (int j = 0; j < jb; ++j)
                    C[static_cast<int64_t>(i0 + i) * N + j0 + j] = acc[i * kColTile + j];
        }
    }
}

void gemm_abt_acc(int M, int N, int K, const float* A, const float* B, float* C) {
    constexpr int kLanes = 16;
    for (int i = 0; i < M; ++i) {
        const float* a = A + static_cast<int64_t>(i) * K;
        for (int j = 0; j < N; ++j) {
            const float* b = B + static_cast<int64_t>(j) * K;
            float lanes[kLanes] = {0};
            const int kv = K - K % kLanes;
            for (int k = 0; k < kv; k += kLanes)
                for (int l = 0; l < kLanes; ++l) lanes[l] += a[k + l] * b[k + l];
            for (int k = kv; k < K; ++k) lanes[k - kv] += a[k] * b[k];
            float sum = 0.0f;
            for (int l = 0; l < kLanes; ++l) sum += lanes[l];
            C[static_cast<int64_t>(i) * N + j] += sum;
        }
    }
}

void im2col(const float* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            float* col, int Ho, int Wo) {
    const int64_t N = static_cast<int64_t>(Ho) * Wo;
    int64_t row = 0;
    for (int c = 0; c < C; ++c) {
        const float* xc = x + static_cast<int64_t>(c) * H * W;
        for (int u = 0; u < kh; ++u) {
            for (int v = 0; v < kw; ++v, ++row) {
                float* dst = col + row * N;
                for (int ho = 0; ho < Ho; ++ho) {
                    const int h = ho * stride - pad + u;
                    float* d = dst + static_cast<int64_t>(ho) * Wo;
                    if (h < 0 || h >= H) {
                        std::memset(d, 0, sizeof(float) * Wo);
                        continue;
                    }
                    const float* xr = xc + static_cast<int64_t>(h) * W;
                    for (int wo = 0; wo < Wo; ++wo) {
                        const int w = wo * stride - pad + v;
                        d[wo] = (w < 0 || w >= W) ? 0.0f : xr[w];
                    }
                }
            }
        }
    }
}

void col2im_acc(const float* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                float* y, int Ho, int Wo) {
    const int64_t N = static_cast<int64_t>(Ho) * Wo;
    int64_t row = 0;
    for (int c = 0; c < C; ++c) {
        float* yc = y + static_cast<int64_t>(c) * H * W;
        for (int u = 0; u < kh; ++u) {
            for (int v = 0; v < kw; ++v, ++row) {
                const float* src = col + row * N;
                for (int ho = 0; ho < Ho; ++ho) {
                    const int h = ho * stride - pad + u;
                    if (h < 0 || h >= H) continue;
                    float* yr = yc + static_cast<int64_t>(h) * W;
                    const float* s = src + static_cast<int64_t>(ho) * Wo;
                    for (int wo = 0; wo < Wo; ++wo) {
                        const int w = wo * stride - pad + v;
                        if (w >= 0 && w < W) yr[w] += s[wo];
                    }
                }
            }
        }
    }
}

}  // namespace sg::detail
