#include "qforecast/qdyn.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "qforecast/errors.hpp"

namespace qf::qdyn {

namespace {
constexpr complexd kI{0.0, 1.0};
constexpr double kEigTol = 1e-6;
} // namespace

Mat2 operator+(const Mat2& a, const Mat2& b) {
    Mat2 r;
    for (int i = 0; i < 4; ++i) r.m[i] = a.m[i] + b.m[i];
    return r;
}

Mat2 operator-(const Mat2& a, const Mat2& b) {
    Mat2 r;
    for (int i = 0; i < 4; ++i) r.m[i] = a.m[i] - b.m[i];
    return r;
}

Mat2 operator*(const Mat2& a, const Mat2& b) {
    Mat2 r;
    r(0, 0) = a(0, 0) * b(0, 0) + a(0, 1) * b(1, 0);
    r(0, 1) = a(0, 0) * b(0, 1) + a(0, 1) * b(1, 1);
    r(1, 0) = a(1, 0) * b(0, 0) + a(1, 1) * b(1, 0);
    r(1, 1) = a(1, 0) * b(0, 1) + a(1, 1) * b(1, 1);
    return r;
}

Mat2 operator*(complexd s, const Mat2& a) {
    Mat2 r;
    for (int i = 0; i < 4; ++i) r.m[i] = s * a.m[i];
    return r;
}

Mat2 operator*(double s, const Mat2& a) { return complexd{s, 0.0} * a; }

Mat2 adjoint(const Mat2& a) {
    Mat2 r;
    r(0, 0) = std::conj(a(0, 0));
    r(0, 1) = std::conj(a(1, 0));
    r(1, 0) = std::conj(a(0, 1));
    r(1, 1) = std::conj(a(1, 1));
    return r;
}

complexd trace(const Mat2& a) { return a(0, 0) + a(1, 1); }

Mat2 hermitized(const Mat2& a) {
    Mat2 r = a + adjoint(a);
    return 0.5 * r;
}

double max_abs_diff(const Mat2& a, const Mat2& b) {
    double r = 0.0;
    for (int i = 0; i < 4; ++i) r = std::max(r, std::abs(a.m[i] - b.m[i]));
    return r;
}

const Mat2& identity() {
    static const Mat2 m{{complexd{1, 0}, complexd{0, 0}, complexd{0, 0}, complexd{1, 0}}};
    return m;
}
const Mat2& sigma_x() {
    static const Mat2 m{{complexd{0, 0}, complexd{1, 0}, complexd{1, 0}, complexd{0, 0}}};
    return m;
}
const Mat2& sigma_y() {
    static const Mat2 m{{complexd{0, 0}, complexd{0, -1}, complexd{0, 1}, complexd{0, 0}}};
    return m;
}
const Mat2& sigma_z() {
    static const Mat2 m{{complexd{1, 0}, complexd{0, 0}, complexd{0, 0}, complexd{-1, 0}}};
    return m;
}
const Mat2& sigma_minus() {
    // (sigma_x - i sigma_y) / 2: lowers |0> to |1>
    static const Mat2 m{{complexd{0, 0}, complexd{0, 0}, complexd{1, 0}, complexd{0, 0}}};
    return m;
}

DensityMatrix from_bloch(const BlochVector& r) {
    const double n2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    if (n2 > 1.0 + 1e-12)
        throw InvalidState("Bloch vector has norm " + std::to_string(std::sqrt(n2)) + " > 1");
    DensityMatrix rho;
    rho(0, 0) = complexd{0.5 * (1.0 + r[2]), 0.0};
    rho(1, 1) = complexd{0.5 * (1.0 - r[2]), 0.0};
    rho(0, 1) = complexd{0.5 * r[0], -0.5 * r[1]};
    rho(1, 0) = std::conj(rho(0, 1));
    return rho;
}

BlochVector bloch(const DensityMatrix& rho) {
    return {2.0 * rho(0, 1).real(), -2.0 * rho(0, 1).imag(),
            rho(0, 0).real() - rho(1, 1).real()};
}

std::optional<BlochVector> named_state_bloch(std::string_view name) {
    if (name == "plus") return BlochVector{1, 0, 0};
    if (name == "minus") return BlochVector{-1, 0, 0};
    if (name == "zero") return BlochVector{0, 0, 1};
    if (name == "one") return BlochVector{0, 0, -1};
    if (name == "l") return BlochVector{0, -1, 0};
    return std::nullopt;
}

void eig_hermitian(const Mat2& mat, std::array<double, 2>& lam, Mat2& u) {
    const double a = mat(0, 0).real();
    const double b = mat(1, 1).real();
    const complexd c = mat(0, 1);
    const double half_diff = 0.5 * (a - b);
    const double r = std::sqrt(half_diff * half_diff + std::norm(c));
    const double mean = 0.5 * (a + b);
    lam = {mean - r, mean + r};

    if (std::abs(c) < 1e-300 || r < 1e-300) {
        // effectively diagonal; order columns by eigenvalue
        u = identity();
        if (a > b) {
            u(0, 0) = u(1, 1) = complexd{0, 0};
            u(0, 1) = u(1, 0) = complexd{1, 0};
        }
        return;
    }
    // eigenvector for lam[1]: (c, lam1 - a), its orthogonal complement for lam[0]
    const double d = lam[1] - a;
    const double nrm = 1.0 / std::sqrt(std::norm(c) + d * d);
    u(0, 1) = nrm * c;
    u(1, 1) = complexd{nrm * d, 0.0};
    u(0, 0) = complexd{-nrm * d, 0.0};
    u(1, 0) = nrm * std::conj(c);
}

namespace {

Mat2 from_eig(const std::array<double, 2>& lam, const Mat2& u) {
    Mat2 d;
    d(0, 0) = complexd{lam[0], 0.0};
    d(1, 1) = complexd{lam[1], 0.0};
    return u * d * adjoint(u);
}

} // namespace

DensityMatrix clamp_physical(const DensityMatrix& rho) {
    const Mat2 h = hermitized(rho);
    std::array<double, 2> lam;
    Mat2 u;
    eig_hermitian(h, lam, u);
    std::array<double, 2> cl = {std::max(0.0, lam[0]), std::max(0.0, lam[1])};
    const double tr = cl[0] + cl[1];
    if (tr <= 0.0) throw InvalidState("matrix has no positive weight after projection");
    cl[0] /= tr;
    cl[1] /= tr;
    return from_eig(cl, u);
}

DensityMatrix project_psd(const DensityMatrix& rho) {
    const Mat2 h = hermitized(rho);
    std::array<double, 2> lam;
    Mat2 u;
    eig_hermitian(h, lam, u);
    if (lam[0] < -kEigTol)
        throw InvalidState("matrix eigenvalue " + std::to_string(lam[0]) +
                           " below PSD tolerance");
    return clamp_physical(rho);
}

bool is_physical(const DensityMatrix& rho, double tol) {
    if (max_abs_diff(rho, hermitized(rho)) > tol) return false;
    if (std::abs(trace(rho) - complexd{1.0, 0.0}) > tol) return false;
    std::array<double, 2> lam;
    Mat2 u;
    eig_hermitian(hermitized(rho), lam, u);
    return lam[0] >= -tol;
}

double purity(const DensityMatrix& rho) { return trace(rho * rho).real(); }

namespace {

Mat2 hamiltonian(const LindbladModel& model) {
    return model.g * (model.axis == Axis::Z ? sigma_z() : sigma_x());
}

void validate_model(const LindbladModel& model) {
    if (model.gamma < 0.0) throw InvalidState("gamma must be >= 0");
    if (!std::isfinite(model.gamma) || !std::isfinite(model.g))
        throw InvalidState("model parameters must be finite");
}

} // namespace

Mat2 lindblad_rhs(const LindbladModel& model, const DensityMatrix& rho) {
    validate_model(model);
    const Mat2 h = hamiltonian(model);
    const Mat2& l = sigma_minus();
    const Mat2 ld = adjoint(l);
    const Mat2 ldl = ld * l;
    const Mat2 comm = h * rho - rho * h;
    const Mat2 jump = l * rho * ld;
    const Mat2 anti = ldl * rho + rho * ldl;
    return (-kI) * comm + (0.5 * model.gamma) * (2.0 * jump - anti);
}

Trajectory evolve_rk4(const LindbladModel& model, const DensityMatrix& rho0, double dt,
                      std::int64_t n_steps) {
    validate_model(model);
    if (dt <= 0.0) throw InvalidState("dt must be > 0");
    if (n_steps < 0) throw InvalidState("n_steps must be >= 0");
    if (!is_physical(rho0, 1e-9)) throw InvalidState("initial state is not a density matrix");

    Trajectory traj;
    traj.dt = dt;
    traj.states.reserve(static_cast<std::size_t>(n_steps) + 1);
    traj.states.push_back(hermitized(rho0));

    DensityMatrix rho = traj.states.back();
    for (std::int64_t s = 0; s < n_steps; ++s) {
        const Mat2 k1 = lindblad_rhs(model, rho);
        const Mat2 k2 = lindblad_rhs(model, rho + (0.5 * dt) * k1);
        const Mat2 k3 = lindblad_rhs(model, rho + (0.5 * dt) * k2);
        const Mat2 k4 = lindblad_rhs(model, rho + dt * k3);
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

        rho = hermitized(rho);
        const double tr = trace(rho).real();
        traj.max_trace_drift = std::max(traj.max_trace_drift, std::abs(tr - 1.0));
        rho = (1.0 / tr) * rho;

        std::array<double, 2> lam;
        Mat2 u;
        eig_hermitian(rho, lam, u);
        if (lam[0] < -kEigTol)
            throw StepSizeError("state eigenvalue " + std::to_string(lam[0]) + " at step " +
                                std::to_string(s + 1) + "; decrease dt");
        traj.states.push_back(rho);
    }
    return traj;
}

Trajectory analytic_trajectory(const LindbladModel& model, const DensityMatrix& rho0, double dt,
                               std::int64_t n_steps) {
    validate_model(model);
    if (model.axis != Axis::Z)
        throw UnsupportedModel("closed form implemented for the Z axis only");
    if (dt <= 0.0) throw InvalidState("dt must be > 0");
    if (!is_physical(rho0, 1e-9)) throw InvalidState("initial state is not a density matrix");

    const double p0 = rho0(0, 0).real();
    const complexd c0 = rho0(0, 1);

    Trajectory traj;
    traj.dt = dt;
    traj.states.reserve(static_cast<std::size_t>(n_steps) + 1);
    for (std::int64_t s = 0; s <= n_steps; ++s) {
        const double t = dt * static_cast<double>(s);
        const double pop = p0 * std::exp(-model.gamma * t);
        const complexd coh =
            c0 * std::exp(-0.5 * model.gamma * t) * std::exp(-kI * (2.0 * model.g * t));
        DensityMatrix rho;
        rho(0, 0) = complexd{pop, 0.0};
        rho(1, 1) = complexd{1.0 - pop, 0.0};
        rho(0, 1) = coh;
        rho(1, 0) = std::conj(coh);
        traj.states.push_back(rho);
    }
    return traj;
}

DensityMatrix steady_state(const LindbladModel& model) {
    validate_model(model);
    if (model.gamma <= 0.0)
        throw UnsupportedModel("steady state requires gamma > 0 (unitary dynamics has none)");

    using Eigen::Matrix2cd;
    using Eigen::Matrix4cd;

    const Mat2 hm = hamiltonian(model);
    Matrix2cd h, l;
    h << hm(0, 0), hm(0, 1), hm(1, 0), hm(1, 1);
    l << 0, 0, 1, 0;
    const Matrix2cd ldl = l.adjoint() * l;
    const Matrix2cd id = Matrix2cd::Identity();

    // column stacking: vec(A X B) = (B^T kron A) vec(X)
    const auto kron = [](const Matrix2cd& a, const Matrix2cd& b) {
        Matrix4cd k;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) k.block<2, 2>(2 * i, 2 * j) = a(i, j) * b;
        return k;
    };

    const Matrix4cd liouv =
        -kI * (kron(id, h) - kron(h.transpose(), id)) +
        model.gamma * (kron(l.conjugate(), l) -
                       0.5 * kron(id, ldl) - 0.5 * kron(ldl.transpose(), id));

    Eigen::JacobiSVD<Matrix4cd> svd(liouv, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv(2) < 1e-8)
        throw DegenerateSteadyState("null space dimension > 1 (second singular value " +
                                    std::to_string(sv(2)) + ")");
    const Eigen::Vector4cd v = svd.matrixV().col(3);

    DensityMatrix rho;
    rho(0, 0) = v(0);
    rho(1, 0) = v(1);
    rho(0, 1) = v(2);
    rho(1, 1) = v(3);
    rho = hermitized(rho);
    const double tr = trace(rho).real();
    if (std::abs(tr) < 1e-12)
        throw DegenerateSteadyState("null vector is traceless; no normalizable steady state");
    return (1.0 / tr) * rho;
}

double expectation(const DensityMatrix& rho, const Observable& obs) {
    return trace(rho * obs).real();
}

double fidelity(const DensityMatrix& a, const DensityMatrix& b) {
    const DensityMatrix pa = project_psd(a);
    const DensityMatrix pb = project_psd(b);
    // Tr sqrt(sqrt(a) b sqrt(a)) evaluated through the 2x2 identity
    // F^2 = Tr(ab) + 2 sqrt(det a det b): the inner matrix has trace Tr(ab)
    // and determinant det(a)det(b), and F is the sum of the square roots of
    // its eigenvalues. Every term below pairs one element of each argument
    // through a commutative product, so F(a,b) == F(b,a) to the last bit; an
    // explicit matrix square root cannot keep that promise near F = 0, where
    // the rank-deficient eigenvalue is all rounding noise.
    const double tr_ab = pa(0, 0).real() * pb(0, 0).real() +
                         pa(1, 1).real() * pb(1, 1).real() +
                         2.0 * (pa(0, 1).real() * pb(0, 1).real() +
                                pa(0, 1).imag() * pb(0, 1).imag());
    const double det_a =
        pa(0, 0).real() * pa(1, 1).real() - std::norm(pa(0, 1));
    const double det_b =
        pb(0, 0).real() * pb(1, 1).real() - std::norm(pb(0, 1));
    const double cross = std::sqrt(std::max(0.0, det_a) * std::max(0.0, det_b));
    return std::sqrt(std::max(0.0, tr_ab + 2.0 * cross));
}

} // namespace qf::qdyn
