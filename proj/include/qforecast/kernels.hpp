#pragma once

#include <cstdint>
#include <string>

// Dense double-precision kernels behind the tensor engine. Every entry has a
// portable scalar reference implementation; on x86 with AVX2+FMA a vectorized
// variant is selected at startup (overridable via select() or the QF_KERNELS
// environment variable). Scalar and SIMD variants are equivalence-tested:
// elementwise kernels match bit-for-bit, accumulation and transcendental
// kernels match to a few ulp.
//
// All matrices are row-major. ld* parameters are leading dimensions (row
// strides) so kernels can address submatrices in place.

namespace qf::kern {

enum class Isa { scalar, avx2 };

struct Ops {
    // C[m x n] = A[m x k] * B[k x n]; acc accumulates into C instead of overwriting.
    void (*gemm_nn)(double* C, std::int64_t ldc, const double* A, std::int64_t lda,
                    const double* B, std::int64_t ldb,
                    std::int64_t m, std::int64_t k, std::int64_t n, bool acc);
    // C[m x n] = A[m x k] * B^T, B stored [n x k].
    void (*gemm_nt)(double* C, std::int64_t ldc, const double* A, std::int64_t lda,
                    const double* B, std::int64_t ldb,
                    std::int64_t m, std::int64_t k, std::int64_t n, bool acc);
    // C[m x n] = A^T * B, A stored [k x m], B stored [k x n].
    void (*gemm_tn)(double* C, std::int64_t ldc, const double* A, std::int64_t lda,
                    const double* B, std::int64_t ldb,
                    std::int64_t m, std::int64_t k, std::int64_t n, bool acc);

    void (*add)(double* dst, const double* a, const double* b, std::int64_t n);
    void (*sub)(double* dst, const double* a, const double* b, std::int64_t n);
    void (*mul)(double* dst, const double* a, const double* b, std::int64_t n);
    void (*scale)(double* dst, const double* x, double c, std::int64_t n);
    // dst += c * x
    void (*axpy)(double* dst, double c, const double* x, std::int64_t n);

    void (*relu)(double* dst, const double* x, std::int64_t n);
    // dst += dy where x > 0 (gradient at exactly 0 is 0)
    void (*relu_bwd)(double* dst, const double* x, const double* dy, std::int64_t n);

    // dst = exp(clamp(x, -700, 700)); clamping keeps 2^n scaling in the
    // normal range, and softmax consumers see values <= 0 anyway.
    void (*vexp)(double* dst, const double* x, std::int64_t n);

    double (*sum)(const double* x, std::int64_t n);
    double (*maxv)(const double* x, std::int64_t n); // n >= 1
    double (*dot)(const double* a, const double* b, std::int64_t n);
    double (*sq_diff_sum)(const double* a, const double* b, std::int64_t n);
    bool (*all_finite)(const double* x, std::int64_t n);

    // dst[j] = (acc ? dst[j] : 0) + sum_i x[i * cols + j]
    void (*colsum)(double* dst, const double* x, std::int64_t rows, std::int64_t cols, bool acc);

    // Row-wise softmax: y[i,:] = exp(x[i,:] - max) / sum.
    void (*softmax_rows)(double* y, const double* x, std::int64_t rows, std::int64_t cols);
    // dx += (dy - dot(dy, y)) * y, row-wise.
    void (*softmax_rows_bwd)(double* dx, const double* y, const double* dy,
                             std::int64_t rows, std::int64_t cols);

    // Row-wise layer norm with population variance:
    //   xhat[i,:] = (x - mean) / sqrt(var + eps),  y = gain * xhat + bias.
    // rstd[i] = 1 / sqrt(var + eps) is saved for the backward pass.
    void (*layernorm_rows)(double* y, double* xhat, double* rstd, const double* x,
                           const double* gain, const double* bias,
                           std::int64_t rows, std::int64_t cols, double eps);
    // dx += rstd * (g*dy - mean(g*dy) - xhat * mean(g*dy*xhat));
    // dgain += sum_rows(dy * xhat); dbias += sum_rows(dy).
    void (*layernorm_rows_bwd)(double* dx, double* dgain, double* dbias,
                               const double* xhat, const double* rstd,
                               const double* gain, const double* dy,
                               std::int64_t rows, std::int64_t cols);

    // Fused Adam update with precomputed 1/(1-beta^t) corrections.
    void (*adam)(double* p, double* m, double* v, const double* g, std::int64_t n,
                 double lr, double beta1, double beta2, double eps,
                 double inv_bc1, double inv_bc2);
};

// Active table. First call resolves the ISA: QF_KERNELS=scalar|avx2 if set,
// otherwise the best the CPU supports.
const Ops& ops();
Isa active_isa();
const char* isa_name(Isa);

// Explicit override; throws qf::ConfigError if the ISA is unavailable.
void select(Isa);

bool cpu_has_avx2();
const Ops& scalar_ops();
// Only valid to call through when cpu_has_avx2(); falls back to scalar table
// in builds without AVX2 support.
const Ops& avx2_ops();

} // namespace qf::kern
