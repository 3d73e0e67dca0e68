#pragma once

#include <cstdint>

namespace sg::detail {

// C[M x N] = (accumulate ? C : 0) + A[M x K] * B[K x N], all row-major.
// Per output element the k-summation order is fixed, independent of sizes,
// so repeated runs are bitwise identical.
void gemm(int M, int N, int K, const float* A, const float* B, float* C, bool accumulate);

// C[M x N] += A[M x K] * B^T where B is [N x K] row-major. Reduction over k
// uses a fixed 16-lane partial-sum scheme (same order every run).
void gemm_abt_acc(int M, int N, int K, const float* A, const float* B, float* C);

// Patch matrix for a conv with kernel (kh,kw), stride s, zero padding p.
// col is [C*kh*kw x Ho*Wo] row-major; x is one image [C x H x W].
void im2col(const float* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            float* col, int Ho, int Wo);

// Scatter-add inverse of im2col: y[C x H x W] += unfold(col).
void col2im_acc(const float* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                float* y, int Ho, int Wo);

}  // namespace sg::detail
