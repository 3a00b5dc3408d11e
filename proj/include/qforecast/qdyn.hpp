#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace qf::qdyn {

using complexd = std::complex<double>;

// 2x2 complex matrix, row major, over the basis {|0>, |1>} with
// sigma_z|0> = +|0>. |0> is the excited state of the decay channel:
// the jump operator sigma_minus maps |0> to |1>.
struct Mat2 {
    std::array<complexd, 4> m{};

    complexd& operator()(int r, int c) { return m[static_cast<std::size_t>(r * 2 + c)]; }
    const complexd& operator()(int r, int c) const {
        return m[static_cast<std::size_t>(r * 2 + c)];
    }
};

using DensityMatrix = Mat2;
using Observable = Mat2;
using BlochVector = std::array<double, 3>;

Mat2 operator+(const Mat2& a, const Mat2& b);
Mat2 operator-(const Mat2& a, const Mat2& b);
Mat2 operator*(const Mat2& a, const Mat2& b);
Mat2 operator*(complexd s, const Mat2& a);
Mat2 operator*(double s, const Mat2& a);

Mat2 adjoint(const Mat2& a);
complexd trace(const Mat2& a);
Mat2 hermitized(const Mat2& a);
double max_abs_diff(const Mat2& a, const Mat2& b);

const Mat2& identity();
const Mat2& sigma_x();
const Mat2& sigma_y();
const Mat2& sigma_z();
const Mat2& sigma_minus();

// rho = (I + r . sigma) / 2. InvalidState if |r| > 1 + 1e-12.
DensityMatrix from_bloch(const BlochVector& r);
BlochVector bloch(const DensityMatrix& rho);

// Bloch vectors of the named initial states:
// plus (1,0,0), minus (-1,0,0), zero (0,0,1), one (0,0,-1), l (0,-1,0).
std::optional<BlochVector> named_state_bloch(std::string_view name);

// Hermitian 2x2 eigendecomposition, closed form: M = U diag(lam) U^dagger,
// eigenvalues ascending, U unitary.
void eig_hermitian(const Mat2& m, std::array<double, 2>& lam, Mat2& u);

// Eigenvalue clamp + trace renormalization, no questions asked. For states
// reconstructed from predicted distributions, which can land well outside
// the physical cone after long autoregressive chains.
DensityMatrix clamp_physical(const DensityMatrix& rho);

// Same projection, but InvalidState if an eigenvalue is below -1e-6 (more
// negative than numerical noise can explain).
DensityMatrix project_psd(const DensityMatrix& rho);

bool is_physical(const DensityMatrix& rho, double tol);
double purity(const DensityMatrix& rho);

enum class Axis { Z, X };

// d rho/dt = -i[H, rho] + (gamma/2)(2 L rho L^+ - {L^+ L, rho}),
// H = g * sigma_axis, L = sigma_minus.
struct LindbladModel {
    double gamma = 0.0;
    double g = 1.0;
    Axis axis = Axis::Z;
};

struct Trajectory {
    double dt = 0.0;
    std::vector<DensityMatrix> states; // n_steps + 1 entries, states[0] = rho0
    // Largest |Tr rho - 1| observed before per-step renormalization.
    double max_trace_drift = 0.0;

    double time_at(std::int64_t i) const { return dt * static_cast<double>(i); }
    std::int64_t n_steps() const { return static_cast<std::int64_t>(states.size()) - 1; }
};

Mat2 lindblad_rhs(const LindbladModel& model, const DensityMatrix& rho);

// Fixed-step RK4. Each state is re-Hermitized and trace-renormalized; a state
// eigenvalue below -1e-6 raises StepSizeError.
Trajectory evolve_rk4(const LindbladModel& model, const DensityMatrix& rho0, double dt,
                      std::int64_t n_steps);

// Closed form for axis Z (UnsupportedModel otherwise):
//   rho00(t) = rho00(0) e^{-gamma t}
//   rho01(t) = rho01(0) e^{-gamma t / 2} e^{-2 i g t}
// The coherence phase sign matches lindblad_rhs; the one-step agreement with
// evolve_rk4 is covered by tests.
Trajectory analytic_trajectory(const LindbladModel& model, const DensityMatrix& rho0, double dt,
                               std::int64_t n_steps);

// Null vector of the vectorized generator (4x4 Liouvillian, column stacking),
// reshaped, Hermitized, trace-normalized. UnsupportedModel if gamma <= 0;
// DegenerateSteadyState if the null space is not one-dimensional (second
// singular value below 1e-8).
DensityMatrix steady_state(const LindbladModel& model);

double expectation(const DensityMatrix& rho, const Observable& obs);

// Uhlmann fidelity Tr sqrt(sqrt(a) b sqrt(a)), evaluated in the exact 2x2
// closed form so it is symmetric in its arguments to the last bit. Inputs
// are PSD-projected first (clamp + renormalize); InvalidState if an
// eigenvalue < -1e-6.
double fidelity(const DensityMatrix& a, const DensityMatrix& b);

} // namespace qf::qdyn
