#include "qforecast/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>

#include "qforecast/errors.hpp"

#if defined(__x86_64__) || defined(_M_X64) || defined(__i386__)
#define QF_X86 1
#else
#define QF_X86 0
#endif

#if QF_X86
#include <cpuid.h>
#endif

namespace qf::kern {
namespace {

// ---------------------------------------------------------------- scalar ---
// Reference kernels. Plain loops, no FMA contraction (the build sets
// -ffp-contract=off), so these are the portable ground truth the SIMD
// variants are tested against.

void kernel_gemm_nn_scalar(double* C, std::int64_t ldc, const double* A, std::int64_t lda,
                           const double* B, std::int64_t ldb,
                           std::int64_t m, std::int64_t k, std::int64_t n, bool acc) {
    for (std::int64_t i = 0; i < m; ++i) {
        double* c = C + i * ldc;
        if (!acc)
            for (std::int64_t j = 0; j < n; ++j) c[j] = 0.0;
        const double* a = A + i * lda;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = a[p];
            const double* b = B + p * ldb;
            for (std::int64_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

void kernel_gemm_nt_scalar(double* C, std::int64_t ldc, const double* A, std::int64_t lda,
                           const double* B, std::int64_t ldb,
                           std::int64_t m, std::int64_t k, std::int64_t n, bool acc) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* a = A + i * lda;
        double* c = C + i * ldc;
        for (std::int64_t j = 0; j < n; ++j) {
            const double* b = B + j * ldb;
            double s = 0.0;
            for (std::int64_t p = 0; p < k; ++p) s += a[p] * b[p];
            c[j] = acc ? c[j] + s : s;
        }
    }
}

void kernel_gemm_tn_scalar(double* C, std::int64_t ldc, const double* A, std::int64_t lda,
                           const double* B, std::int64_t ldb,
                           std::int64_t m, std::int64_t k, std::int64_t n, bool acc) {
    if (!acc)
        for (std::int64_t i = 0; i < m; ++i)
            std::memset(C + i * ldc, 0, static_cast<std::size_t>(n) * sizeof(double));
    for (std::int64_t p = 0; p < k; ++p) {
        const double* a = A + p * lda;
        const double* b = B + p * ldb;
        for (std::int64_t i = 0; i < m; ++i) {
            const double av = a[i];
            double* c = C + i * ldc;
            for (std::int64_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

void kernel_add_scalar(double* dst, const double* a, const double* b, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] = a[i] + b[i];
}

void kernel_sub_scalar(double* dst, const double* a, const double* b, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] = a[i] - b[i];
}

void kernel_mul_scalar(double* dst, const double* a, const double* b, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] = a[i] * b[i];
}

void kernel_scale_scalar(double* dst, const double* x, double c, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] = c * x[i];
}

void kernel_axpy_scalar(double* dst, double c, const double* x, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] += c * x[i];
}

void kernel_relu_scalar(double* dst, const double* x, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void kernel_relu_bwd_scalar(double* dst, const double* x, const double* dy, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i)
        if (x[i] > 0.0) dst[i] += dy[i];
}

constexpr double kExpClamp = 700.0;

void kernel_vexp_scalar(double* dst, const double* x, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) {
        double v = x[i];
        if (v > kExpClamp) v = kExpClamp;
        if (v < -kExpClamp) v = -kExpClamp;
        dst[i] = std::exp(v);
    }
}

double kernel_sum_scalar(const double* x, std::int64_t n) {
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += x[i];
    return s;
}

double kernel_maxv_scalar(const double* x, std::int64_t n) {
    double m = x[0];
    for (std::int64_t i = 1; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}

double kernel_dot_scalar(const double* a, const double* b, std::int64_t n) {
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double kernel_sq_diff_sum_scalar(const double* a, const double* b, std::int64_t n) {
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

bool kernel_all_finite_scalar(const double* x, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i)
        if (!std::isfinite(x[i])) return false;
    return true;
}

void kernel_colsum_scalar(double* dst, const double* x, std::int64_t rows, std::int64_t cols,
                          bool acc) {
    if (!acc)
        std::memset(dst, 0, static_cast<std::size_t>(cols) * sizeof(double));
    for (std::int64_t i = 0; i < rows; ++i) {
        const double* r = x + i * cols;
        for (std::int64_t j = 0; j < cols; ++j) dst[j] += r[j];
    }
}

void kernel_softmax_rows_scalar(double* y, const double* x, std::int64_t rows, std::int64_t cols) {
    for (std::int64_t i = 0; i < rows; ++i) {
        const double* xr = x + i * cols;
        double* yr = y + i * cols;
        const double m = kernel_maxv_scalar(xr, cols);
        double s = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - m);
            s += yr[j];
        }
        const double inv = 1.0 / s;
        for (std::int64_t j = 0; j < cols; ++j) yr[j] *= inv;
    }
}

void kernel_softmax_rows_bwd_scalar(double* dx, const double* y, const double* dy,
                                    std::int64_t rows, std::int64_t cols) {
    for (std::int64_t i = 0; i < rows; ++i) {
        const double* yr = y + i * cols;
        const double* dyr = dy + i * cols;
        double* dxr = dx + i * cols;
        const double s = kernel_dot_scalar(yr, dyr, cols);
        for (std::int64_t j = 0; j < cols; ++j) dxr[j] += (dyr[j] - s) * yr[j];
    }
}

void kernel_layernorm_rows_scalar(double* y, double* xhat, double* rstd, const double* x,
                                  const double* gain, const double* bias,
                                  std::int64_t rows, std::int64_t cols, double eps) {
    const double invn = 1.0 / static_cast<double>(cols);
    for (std::int64_t i = 0; i < rows; ++i) {
        const double* xr = x + i * cols;
        double* yr = y + i * cols;
        double* hr = xhat + i * cols;
        const double mean = kernel_sum_scalar(xr, cols) * invn;
        double var = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) {
            const double d = xr[j] - mean;
            var += d * d;
        }
        var *= invn;
        const double r = 1.0 / std::sqrt(var + eps);
        rstd[i] = r;
        for (std::int64_t j = 0; j < cols; ++j) {
            hr[j] = (xr[j] - mean) * r;
            yr[j] = gain[j] * hr[j] + bias[j];
        }
    }
}

void kernel_layernorm_rows_bwd_scalar(double* dx, double* dgain, double* dbias,
                                      const double* xhat, const double* rstd,
                                      const double* gain, const double* dy,
                                      std::int64_t rows, std::int64_t cols) {
    const double invn = 1.0 / static_cast<double>(cols);
    for (std::int64_t i = 0; i < rows; ++i) {
        const double* hr = xhat + i * cols;
        const double* dyr = dy + i * cols;
        double* dxr = dx + i * cols;
        double sg = 0.0, sgh = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) {
            const double g = gain[j] * dyr[j];
            sg += g;
            sgh += g * hr[j];
            dgain[j] += dyr[j] * hr[j];
            dbias[j] += dyr[j];
        }
        sg *= invn;
        sgh *= invn;
        const double r = rstd[i];
        for (std::int64_t j = 0; j < cols; ++j)
            dxr[j] += r * (gain[j] * dyr[j] - sg - hr[j] * sgh);
    }
}

void kernel_adam_scalar(double* p, double* m, double* v, const double* g, std::int64_t n,
                        double lr, double beta1, double beta2, double eps,
                        double inv_bc1, double inv_bc2) {
    const double om1 = 1.0 - beta1;
    const double om2 = 1.0 - beta2;
    for (std::int64_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + om1 * g[i];
        v[i] = beta2 * v[i] + om2 * (g[i] * g[i]);
        const double mh = m[i] * inv_bc1;
        const double vh = v[i] * inv_bc2;
        p[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
}

constexpr Ops kScalarOps = {
    kernel_gemm_nn_scalar,
    kernel_gemm_nt_scalar,
    kernel_gemm_tn_scalar,
    kernel_add_scalar,
    kernel_sub_scalar,
    kernel_mul_scalar,
    kernel_scale_scalar,
    kernel_axpy_scalar,
    kernel_relu_scalar,
    kernel_relu_bwd_scalar,
    kernel_vexp_scalar,
    kernel_sum_scalar,
    kernel_maxv_scalar,
    kernel_dot_scalar,
    kernel_sq_diff_sum_scalar,
    kernel_all_finite_scalar,
    kernel_colsum_scalar,
    kernel_softmax_rows_scalar,
    kernel_softmax_rows_bwd_scalar,
    kernel_layernorm_rows_scalar,
    kernel_layernorm_rows_bwd_scalar,
    kernel_adam_scalar,
};

// ------------------------------------------------------------- dispatch ---

#if QF_X86 && defined(QF_HAVE_AVX2_TU)
std::uint64_t read_xcr0() {
    std::uint32_t lo = 0, hi = 0;
    __asm__ volatile("xgetbv" : "=a"(lo), "=d"(hi) : "c"(0));
    return (static_cast<std::uint64_t>(hi) << 32) | lo;
}
#endif

bool detect_avx2() {
#if QF_X86 && defined(QF_HAVE_AVX2_TU)
    unsigned eax = 0, ebx = 0, ecx = 0, edx = 0;
    if (!__get_cpuid(1, &eax, &ebx, &ecx, &edx)) return false;
    const bool fma = (ecx & bit_FMA) != 0;
    const bool osxsave = (ecx & bit_OSXSAVE) != 0;
    if (!fma || !osxsave) return false;
    if (__get_cpuid_count(7, 0, &eax, &ebx, &ecx, &edx) == 0) return false;
    const bool avx2 = (ebx & bit_AVX2) != 0;
    if (!avx2) return false;
    // OS must save YMM state.
    return (read_xcr0() & 0x6) == 0x6;
#else
    return false;
#endif
}

Isa resolve_initial() {
    if (const char* env = std::getenv("QF_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Isa::scalar;
        if (std::strcmp(env, "avx2") == 0 && detect_avx2()) return Isa::avx2;
        if (std::strcmp(env, "avx2") == 0) return Isa::scalar;
    }
    return detect_avx2() ? Isa::avx2 : Isa::scalar;
}

Isa g_isa = resolve_initial();

} // namespace

bool cpu_has_avx2() { return detect_avx2(); }

const Ops& scalar_ops() { return kScalarOps; }

#if !defined(QF_HAVE_AVX2_TU)
const Ops& avx2_ops() { return kScalarOps; }
#endif

const Ops& ops() { return g_isa == Isa::avx2 ? avx2_ops() : scalar_ops(); }

Isa active_isa() { return g_isa; }

const char* isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

void select(Isa isa) {
    if (isa == Isa::avx2 && !cpu_has_avx2())
        throw ConfigError("kernel ISA avx2 not available on this CPU/build");
    g_isa = isa;
}

} // namespace qf::kern
