// AVX2+FMA variants of the dense kernels. This translation unit is compiled
// with -mavx2 -mfma and is only reachable through the dispatch table after a
// runtime CPUID check, so the rest of the binary stays runnable on machines
// without AVX2.
//
// Equivalence contract with the scalar reference:
//   - elementwise kernels (add/sub/mul/scale/axpy/relu/adam/colsum) are
//     bit-exact: same operations in the same per-element order, no FMA
//     contraction;
//   - reductions and GEMM use multiple accumulators, so they agree to
//     rounding only;
//   - vexp uses a polynomial expansion accurate to a few ulp of std::exp.

#include "qforecast/kernels.hpp"

#ifndef __AVX2__
#error "this file must be compiled with -mavx2 -mfma"
#endif

#include <immintrin.h>

#include <cmath>
#include <cstring>

namespace qf::kern {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    const __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

inline double hmax(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_max_pd(lo, hi);
    const __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_max_sd(lo, sh));
}

// Transposing reduction: lane i of the result is the total of accumulator i.
inline __m256d hsum4(__m256d a, __m256d b, __m256d c, __m256d d) {
    const __m256d t0 = _mm256_hadd_pd(a, b);
    const __m256d t1 = _mm256_hadd_pd(c, d);
    const __m256d lo = _mm256_permute2f128_pd(t0, t1, 0x20);
    const __m256d hi = _mm256_permute2f128_pd(t0, t1, 0x31);
    return _mm256_add_pd(lo, hi);
}

void kernel_gemm_nn_avx2(double* C, std::int64_t ldc, const double* A, std::int64_t lda,
                         const double* B, std::int64_t ldb,
                         std::int64_t m, std::int64_t k, std::int64_t n, bool acc) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* a = A + i * lda;
        double* c = C + i * ldc;
        std::int64_t j = 0;
        for (; j + 16 <= n; j += 16) {
            __m256d acc0, acc1, acc2, acc3;
            if (acc) {
                acc0 = _mm256_loadu_pd(c + j);
                acc1 = _mm256_loadu_pd(c + j + 4);
                acc2 = _mm256_loadu_pd(c + j + 8);
                acc3 = _mm256_loadu_pd(c + j + 12);
            } else {
                acc0 = acc1 = acc2 = acc3 = _mm256_setzero_pd();
            }
            for (std::int64_t p = 0; p < k; ++p) {
                const __m256d av = _mm256_set1_pd(a[p]);
                const double* b = B + p * ldb + j;
                acc0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b), acc0);
                acc1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + 4), acc1);
                acc2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + 8), acc2);
                acc3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + 12), acc3);
            }
            _mm256_storeu_pd(c + j, acc0);
            _mm256_storeu_pd(c + j + 4, acc1);
            _mm256_storeu_pd(c + j + 8, acc2);
            _mm256_storeu_pd(c + j + 12, acc3);
        }
        for (; j + 4 <= n; j += 4) {
            __m256d s = acc ? _mm256_loadu_pd(c + j) : _mm256_setzero_pd();
            for (std::int64_t p = 0; p < k; ++p)
                s = _mm256_fmadd_pd(_mm256_set1_pd(a[p]), _mm256_loadu_pd(B + p * ldb + j), s);
            _mm256_storeu_pd(c + j, s);
        }
        for (; j < n; ++j) {
            double s = acc ? c[j] : 0.0;
            for (std::int64_t p = 0; p < k; ++p) s += a[p] * B[p * ldb + j];
            c[j] = s;
        }
    }
}

void kernel_gemm_nt_avx2(double* C, std::int64_t ldc, const double* A, std::int64_t lda,
                         const double* B, std::int64_t ldb,
                         std::int64_t m, std::int64_t k, std::int64_t n, bool acc) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* a = A + i * lda;
        double* c = C + i * ldc;
        std::int64_t j = 0;
        for (; j + 4 <= n; j += 4) {
            const double* b0 = B + j * ldb;
            const double* b1 = b0 + ldb;
            const double* b2 = b1 + ldb;
            const double* b3 = b2 + ldb;
            __m256d s0 = _mm256_setzero_pd(), s1 = s0, s2 = s0, s3 = s0;
            std::int64_t p = 0;
            for (; p + 4 <= k; p += 4) {
                const __m256d va = _mm256_loadu_pd(a + p);
                s0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b0 + p), s0);
                s1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b1 + p), s1);
                s2 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b2 + p), s2);
                s3 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b3 + p), s3);
            }
            __m256d sums = hsum4(s0, s1, s2, s3);
            if (p < k) {
                double t[4] = {0, 0, 0, 0};
                for (; p < k; ++p) {
                    t[0] += a[p] * b0[p];
                    t[1] += a[p] * b1[p];
                    t[2] += a[p] * b2[p];
                    t[3] += a[p] * b3[p];
                }
                sums = _mm256_add_pd(sums, _mm256_loadu_pd(t));
            }
            if (acc) sums = _mm256_add_pd(sums, _mm256_loadu_pd(c + j));
            _mm256_storeu_pd(c + j, sums);
        }
        for (; j < n; ++j) {
            const double* b = B + j * ldb;
            __m256d sv = _mm256_setzero_pd();
            std::int64_t p = 0;
            for (; p + 4 <= k; p += 4)
                sv = _mm256_fmadd_pd(_mm256_loadu_pd(a + p), _mm256_loadu_pd(b + p), sv);
            double s = hsum(sv);
            for (; p < k; ++p) s += a[p] * b[p];
            c[j] = acc ? c[j] + s : s;
        }
    }
}

void kernel_gemm_tn_avx2(double* C, std::int64_t ldc, const double* A, std::int64_t lda,
                         const double* B, std::int64_t ldb,
                         std::int64_t m, std::int64_t k, std::int64_t n, bool acc) {
    if (!acc)
        for (std::int64_t i = 0; i < m; ++i)
            std::memset(C + i * ldc, 0, static_cast<std::size_t>(n) * sizeof(double));
    for (std::int64_t p = 0; p < k; ++p) {
        const double* a = A + p * lda;
        const double* b = B + p * ldb;
        for (std::int64_t i = 0; i < m; ++i) {
            const __m256d av = _mm256_set1_pd(a[i]);
            double* c = C + i * ldc;
            std::int64_t j = 0;
            for (; j + 8 <= n; j += 8) {
                _mm256_storeu_pd(c + j, _mm256_fmadd_pd(av, _mm256_loadu_pd(b + j),
                                                        _mm256_loadu_pd(c + j)));
                _mm256_storeu_pd(c + j + 4, _mm256_fmadd_pd(av, _mm256_loadu_pd(b + j + 4),
                                                            _mm256_loadu_pd(c + j + 4)));
            }
            for (; j + 4 <= n; j += 4)
                _mm256_storeu_pd(c + j, _mm256_fmadd_pd(av, _mm256_loadu_pd(b + j),
                                                        _mm256_loadu_pd(c + j)));
            const double as = a[i];
            for (; j < n; ++j) c[j] += as * b[j];
        }
    }
}

void kernel_add_avx2(double* dst, const double* a, const double* b, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
        _mm256_storeu_pd(dst + i + 4,
                         _mm256_add_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4)));
    }
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) dst[i] = a[i] + b[i];
}

void kernel_sub_avx2(double* dst, const double* a, const double* b, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(dst + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) dst[i] = a[i] - b[i];
}

void kernel_mul_avx2(double* dst, const double* a, const double* b, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(dst + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) dst[i] = a[i] * b[i];
}

void kernel_scale_avx2(double* dst, const double* x, double c, std::int64_t n) {
    const __m256d cv = _mm256_set1_pd(c);
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(dst + i, _mm256_mul_pd(cv, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) dst[i] = c * x[i];
}

// No FMA here: keeps the result bit-identical to the scalar reference.
void kernel_axpy_avx2(double* dst, double c, const double* x, std::int64_t n) {
    const __m256d cv = _mm256_set1_pd(c);
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d t = _mm256_mul_pd(cv, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(dst + i), t));
    }
    for (; i < n; ++i) dst[i] += c * x[i];
}

void kernel_relu_avx2(double* dst, const double* x, std::int64_t n) {
    const __m256d z = _mm256_setzero_pd();
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(dst + i, _mm256_max_pd(_mm256_loadu_pd(x + i), z));
    for (; i < n; ++i) dst[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void kernel_relu_bwd_avx2(double* dst, const double* x, const double* dy, std::int64_t n) {
    const __m256d z = _mm256_setzero_pd();
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), z, _CMP_GT_OQ);
        const __m256d g = _mm256_and_pd(mask, _mm256_loadu_pd(dy + i));
        _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(dst + i), g));
    }
    for (; i < n; ++i)
        if (x[i] > 0.0) dst[i] += dy[i];
}

// exp via range reduction x = n*ln2 + r and a rational expansion of e^r
// (Cephes coefficients). Relative error a few ulp over the clamped range.
inline __m256d exp4(__m256d x) {
    const __m256d clamp = _mm256_set1_pd(700.0);
    x = _mm256_min_pd(_mm256_max_pd(x, _mm256_sub_pd(_mm256_setzero_pd(), clamp)), clamp);

    const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
    const __m256d nf = _mm256_round_pd(_mm256_mul_pd(x, log2e),
                                       _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    x = _mm256_fnmadd_pd(nf, _mm256_set1_pd(6.93145751953125e-1), x);
    x = _mm256_fnmadd_pd(nf, _mm256_set1_pd(1.42860682030941723212e-6), x);

    const __m256d xx = _mm256_mul_pd(x, x);
    __m256d px = _mm256_set1_pd(1.26177193074810590878e-4);
    px = _mm256_fmadd_pd(px, xx, _mm256_set1_pd(3.02994407707441961300e-2));
    px = _mm256_fmadd_pd(px, xx, _mm256_set1_pd(9.99999999999999999910e-1));
    px = _mm256_mul_pd(px, x);
    __m256d qx = _mm256_set1_pd(3.00198505138664455042e-6);
    qx = _mm256_fmadd_pd(qx, xx, _mm256_set1_pd(2.52448340349684104192e-3));
    qx = _mm256_fmadd_pd(qx, xx, _mm256_set1_pd(2.27265548208155028766e-1));
    qx = _mm256_fmadd_pd(qx, xx, _mm256_set1_pd(2.0));
    __m256d e = _mm256_div_pd(px, _mm256_sub_pd(qx, px));
    e = _mm256_fmadd_pd(_mm256_set1_pd(2.0), e, _mm256_set1_pd(1.0));

    // scale by 2^n through the exponent field; |n| <= 1011 stays normal
    const __m128i n32 = _mm256_cvtpd_epi32(nf);
    __m256i n64 = _mm256_cvtepi32_epi64(n32);
    n64 = _mm256_slli_epi64(_mm256_add_epi64(n64, _mm256_set1_epi64x(1023)), 52);
    return _mm256_mul_pd(e, _mm256_castsi256_pd(n64));
}

void kernel_vexp_avx2(double* dst, const double* x, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(dst + i, exp4(_mm256_loadu_pd(x + i)));
    if (i < n) {
        double in[4] = {0, 0, 0, 0}, out[4];
        for (std::int64_t r = i; r < n; ++r) in[r - i] = x[r];
        _mm256_storeu_pd(out, exp4(_mm256_loadu_pd(in)));
        for (std::int64_t r = i; r < n; ++r) dst[r] = out[r - i];
    }
}

double kernel_sum_avx2(const double* x, std::int64_t n) {
    __m256d s0 = _mm256_setzero_pd(), s1 = s0;
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 = _mm256_add_pd(s0, _mm256_loadu_pd(x + i));
        s1 = _mm256_add_pd(s1, _mm256_loadu_pd(x + i + 4));
    }
    for (; i + 4 <= n; i += 4) s0 = _mm256_add_pd(s0, _mm256_loadu_pd(x + i));
    double s = hsum(_mm256_add_pd(s0, s1));
    for (; i < n; ++i) s += x[i];
    return s;
}

double kernel_maxv_avx2(const double* x, std::int64_t n) {
    if (n < 4) {
        double m = x[0];
        for (std::int64_t i = 1; i < n; ++i)
            if (x[i] > m) m = x[i];
        return m;
    }
    __m256d mv = _mm256_loadu_pd(x);
    std::int64_t i = 4;
    for (; i + 4 <= n; i += 4) mv = _mm256_max_pd(mv, _mm256_loadu_pd(x + i));
    double m = hmax(mv);
    for (; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}

double kernel_dot_avx2(const double* a, const double* b, std::int64_t n) {
    __m256d s0 = _mm256_setzero_pd(), s1 = s0;
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
    }
    for (; i + 4 <= n; i += 4)
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    double s = hsum(_mm256_add_pd(s0, s1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

double kernel_sq_diff_sum_avx2(const double* a, const double* b, std::int64_t n) {
    __m256d s0 = _mm256_setzero_pd();
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        s0 = _mm256_fmadd_pd(d, d, s0);
    }
    double s = hsum(s0);
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

bool kernel_all_finite_avx2(const double* x, std::int64_t n) {
    const __m256i expmask = _mm256_set1_epi64x(0x7ff0000000000000LL);
    std::int64_t i = 0;
    while (i + 4 <= n) {
        const std::int64_t chunk_end = i + 1024 <= n ? i + 1024 : (n & ~3LL);
        __m256i bad = _mm256_setzero_si256();
        for (; i + 4 <= chunk_end; i += 4) {
            const __m256i bits = _mm256_castpd_si256(_mm256_loadu_pd(x + i));
            const __m256i e = _mm256_and_si256(bits, expmask);
            bad = _mm256_or_si256(bad, _mm256_cmpeq_epi64(e, expmask));
        }
        if (_mm256_movemask_pd(_mm256_castsi256_pd(bad)) != 0) return false;
    }
    for (; i < n; ++i)
        if (!std::isfinite(x[i])) return false;
    return true;
}

void kernel_colsum_avx2(double* dst, const double* x, std::int64_t rows, std::int64_t cols,
                        bool acc) {
    if (!acc) std::memset(dst, 0, static_cast<std::size_t>(cols) * sizeof(double));
    for (std::int64_t i = 0; i < rows; ++i) {
        const double* r = x + i * cols;
        std::int64_t j = 0;
        for (; j + 4 <= cols; j += 4)
            _mm256_storeu_pd(dst + j,
                             _mm256_add_pd(_mm256_loadu_pd(dst + j), _mm256_loadu_pd(r + j)));
        for (; j < cols; ++j) dst[j] += r[j];
    }
}

void kernel_softmax_rows_avx2(double* y, const double* x, std::int64_t rows, std::int64_t cols) {
    for (std::int64_t i = 0; i < rows; ++i) {
        const double* xr = x + i * cols;
        double* yr = y + i * cols;
        const double m = kernel_maxv_avx2(xr, cols);
        const __m256d mv = _mm256_set1_pd(m);
        __m256d sv = _mm256_setzero_pd();
        std::int64_t j = 0;
        for (; j + 4 <= cols; j += 4) {
            const __m256d e = exp4(_mm256_sub_pd(_mm256_loadu_pd(xr + j), mv));
            _mm256_storeu_pd(yr + j, e);
            sv = _mm256_add_pd(sv, e);
        }
        double s = hsum(sv);
        for (; j < cols; ++j) {
            double in[4] = {xr[j] - m, 0, 0, 0}, out[4];
            _mm256_storeu_pd(out, exp4(_mm256_loadu_pd(in)));
            yr[j] = out[0];
            s += out[0];
        }
        const __m256d inv = _mm256_set1_pd(1.0 / s);
        j = 0;
        for (; j + 4 <= cols; j += 4)
            _mm256_storeu_pd(yr + j, _mm256_mul_pd(inv, _mm256_loadu_pd(yr + j)));
        for (; j < cols; ++j) yr[j] *= 1.0 / s;
    }
}

void kernel_softmax_rows_bwd_avx2(double* dx, const double* y, const double* dy,
                                  std::int64_t rows, std::int64_t cols) {
    for (std::int64_t i = 0; i < rows; ++i) {
        const double* yr = y + i * cols;
        const double* dyr = dy + i * cols;
        double* dxr = dx + i * cols;
        const double s = kernel_dot_avx2(yr, dyr, cols);
        const __m256d sv = _mm256_set1_pd(s);
        std::int64_t j = 0;
        for (; j + 4 <= cols; j += 4) {
            const __m256d t = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(dyr + j), sv),
                                            _mm256_loadu_pd(yr + j));
            _mm256_storeu_pd(dxr + j, _mm256_add_pd(_mm256_loadu_pd(dxr + j), t));
        }
        for (; j < cols; ++j) dxr[j] += (dyr[j] - s) * yr[j];
    }
}

void kernel_layernorm_rows_avx2(double* y, double* xhat, double* rstd, const double* x,
                                const double* gain, const double* bias,
                                std::int64_t rows, std::int64_t cols, double eps) {
    const double invn = 1.0 / static_cast<double>(cols);
    for (std::int64_t i = 0; i < rows; ++i) {
        const double* xr = x + i * cols;
        double* yr = y + i * cols;
        double* hr = xhat + i * cols;
        const double mean = kernel_sum_avx2(xr, cols) * invn;
        const __m256d meanv = _mm256_set1_pd(mean);
        __m256d vv = _mm256_setzero_pd();
        std::int64_t j = 0;
        for (; j + 4 <= cols; j += 4) {
            const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(xr + j), meanv);
            vv = _mm256_fmadd_pd(d, d, vv);
        }
        double var = hsum(vv);
        for (; j < cols; ++j) {
            const double d = xr[j] - mean;
            var += d * d;
        }
        var *= invn;
        const double r = 1.0 / std::sqrt(var + eps);
        rstd[i] = r;
        const __m256d rv = _mm256_set1_pd(r);
        j = 0;
        for (; j + 4 <= cols; j += 4) {
            const __m256d h = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(xr + j), meanv), rv);
            _mm256_storeu_pd(hr + j, h);
            const __m256d t = _mm256_mul_pd(_mm256_loadu_pd(gain + j), h);
            _mm256_storeu_pd(yr + j, _mm256_add_pd(t, _mm256_loadu_pd(bias + j)));
        }
        for (; j < cols; ++j) {
            hr[j] = (xr[j] - mean) * r;
            yr[j] = gain[j] * hr[j] + bias[j];
        }
    }
}

void kernel_layernorm_rows_bwd_avx2(double* dx, double* dgain, double* dbias,
                                    const double* xhat, const double* rstd,
                                    const double* gain, const double* dy,
                                    std::int64_t rows, std::int64_t cols) {
    const double invn = 1.0 / static_cast<double>(cols);
    for (std::int64_t i = 0; i < rows; ++i) {
        const double* hr = xhat + i * cols;
        const double* dyr = dy + i * cols;
        double* dxr = dx + i * cols;
        __m256d sgv = _mm256_setzero_pd(), sghv = _mm256_setzero_pd();
        std::int64_t j = 0;
        for (; j + 4 <= cols; j += 4) {
            const __m256d dyv = _mm256_loadu_pd(dyr + j);
            const __m256d hv = _mm256_loadu_pd(hr + j);
            const __m256d g = _mm256_mul_pd(_mm256_loadu_pd(gain + j), dyv);
            sgv = _mm256_add_pd(sgv, g);
            sghv = _mm256_fmadd_pd(g, hv, sghv);
            _mm256_storeu_pd(dgain + j, _mm256_add_pd(_mm256_loadu_pd(dgain + j),
                                                      _mm256_mul_pd(dyv, hv)));
            _mm256_storeu_pd(dbias + j, _mm256_add_pd(_mm256_loadu_pd(dbias + j), dyv));
        }
        double sg = hsum(sgv), sgh = hsum(sghv);
        for (; j < cols; ++j) {
            const double g = gain[j] * dyr[j];
            sg += g;
            sgh += g * hr[j];
            dgain[j] += dyr[j] * hr[j];
            dbias[j] += dyr[j];
        }
        sg *= invn;
        sgh *= invn;
        const __m256d sgvb = _mm256_set1_pd(sg), sghvb = _mm256_set1_pd(sgh);
        const __m256d rv = _mm256_set1_pd(rstd[i]);
        j = 0;
        for (; j + 4 <= cols; j += 4) {
            const __m256d g = _mm256_mul_pd(_mm256_loadu_pd(gain + j), _mm256_loadu_pd(dyr + j));
            const __m256d t = _mm256_sub_pd(_mm256_sub_pd(g, sgvb),
                                            _mm256_mul_pd(_mm256_loadu_pd(hr + j), sghvb));
            _mm256_storeu_pd(dxr + j,
                             _mm256_add_pd(_mm256_loadu_pd(dxr + j), _mm256_mul_pd(rv, t)));
        }
        for (; j < cols; ++j)
            dxr[j] += rstd[i] * (gain[j] * dyr[j] - sg - hr[j] * sgh);
    }
}

// Mirrors the scalar operation order exactly (no FMA), so updates are
// bit-identical across ISAs.
void kernel_adam_avx2(double* p, double* m, double* v, const double* g, std::int64_t n,
                      double lr, double beta1, double beta2, double eps,
                      double inv_bc1, double inv_bc2) {
    const __m256d b1 = _mm256_set1_pd(beta1), om1 = _mm256_set1_pd(1.0 - beta1);
    const __m256d b2 = _mm256_set1_pd(beta2), om2 = _mm256_set1_pd(1.0 - beta2);
    const __m256d lrv = _mm256_set1_pd(lr), epsv = _mm256_set1_pd(eps);
    const __m256d c1 = _mm256_set1_pd(inv_bc1), c2 = _mm256_set1_pd(inv_bc2);
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d gv = _mm256_loadu_pd(g + i);
        __m256d mv = _mm256_loadu_pd(m + i);
        __m256d vv = _mm256_loadu_pd(v + i);
        mv = _mm256_add_pd(_mm256_mul_pd(b1, mv), _mm256_mul_pd(om1, gv));
        vv = _mm256_add_pd(_mm256_mul_pd(b2, vv), _mm256_mul_pd(om2, _mm256_mul_pd(gv, gv)));
        _mm256_storeu_pd(m + i, mv);
        _mm256_storeu_pd(v + i, vv);
        const __m256d mh = _mm256_mul_pd(mv, c1);
        const __m256d vh = _mm256_mul_pd(vv, c2);
        const __m256d upd = _mm256_div_pd(_mm256_mul_pd(lrv, mh),
                                          _mm256_add_pd(_mm256_sqrt_pd(vh), epsv));
        _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), upd));
    }
    for (; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
        const double mh = m[i] * inv_bc1;
        const double vh = v[i] * inv_bc2;
        p[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
}

constexpr Ops kAvx2Ops = {
    kernel_gemm_nn_avx2,
    kernel_gemm_nt_avx2,
    kernel_gemm_tn_avx2,
    kernel_add_avx2,
    kernel_sub_avx2,
    kernel_mul_avx2,
    kernel_scale_avx2,
    kernel_axpy_avx2,
    kernel_relu_avx2,
    kernel_relu_bwd_avx2,
    kernel_vexp_avx2,
    kernel_sum_avx2,
    kernel_maxv_avx2,
    kernel_dot_avx2,
    kernel_sq_diff_sum_avx2,
    kernel_all_finite_avx2,
    kernel_colsum_avx2,
    kernel_softmax_rows_avx2,
    kernel_softmax_rows_bwd_avx2,
    kernel_layernorm_rows_avx2,
    kernel_layernorm_rows_bwd_avx2,
    kernel_adam_avx2,
};

} // namespace

const Ops& avx2_ops() { return kAvx2Ops; }

} // namespace qf::kern
