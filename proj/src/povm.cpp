#include "qforecast/povm.hpp"

#include <cmath>
#include <string>

#include "qforecast/errors.hpp"

namespace qf::povm {

using qdyn::Mat2;

void ProbVector::validate() const {
    double sum = 0.0;
    for (int a = 0; a < 4; ++a) {
        if (!(p[static_cast<std::size_t>(a)] >= -1e-12))
            throw InvalidState("probability " + std::to_string(a) + " = " +
                               std::to_string(p[static_cast<std::size_t>(a)]) + " is negative");
        sum += p[static_cast<std::size_t>(a)];
    }
    if (std::abs(sum - 1.0) > 1e-10)
        throw InvalidState("probabilities sum to " + std::to_string(sum));
}

namespace {

// Gauss-Jordan with partial pivoting; adequate for a well-conditioned 4x4.
std::array<std::array<double, 4>, 4> invert4(std::array<std::array<double, 4>, 4> a) {
    std::array<std::array<double, 4>, 4> inv{};
    for (int i = 0; i < 4; ++i) inv[i][i] = 1.0;
    for (int col = 0; col < 4; ++col) {
        int piv = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (std::abs(a[piv][col]) < 1e-14)
            throw InvalidState("overlap matrix is singular; directions are not informationally complete");
        std::swap(a[piv], a[col]);
        std::swap(inv[piv], inv[col]);
        const double d = 1.0 / a[col][col];
        for (int j = 0; j < 4; ++j) {
            a[col][j] *= d;
            inv[col][j] *= d;
        }
        for (int r = 0; r < 4; ++r) {
            if (r == col) continue;
            const double f = a[r][col];
            if (f == 0.0) continue;
            for (int j = 0; j < 4; ++j) {
                a[r][j] -= f * a[col][j];
                inv[r][j] -= f * inv[col][j];
            }
        }
    }
    return inv;
}

double frob(const std::array<std::array<double, 4>, 4>& m) {
    double s = 0.0;
    for (const auto& row : m)
        for (double v : row) s += v * v;
    return std::sqrt(s);
}

} // namespace

PovmSet::PovmSet(const Directions& directions) : dirs_(directions) {
    for (const auto& n : dirs_) {
        const double norm = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
        if (std::abs(norm - 1.0) > 1e-12)
            throw InvalidState("POVM direction has norm " + std::to_string(norm));
    }
    for (int a = 0; a < 4; ++a) {
        const auto& n = dirs_[static_cast<std::size_t>(a)];
        const Mat2 s = n[0] * qdyn::sigma_x() + n[1] * qdyn::sigma_y() + n[2] * qdyn::sigma_z();
        effects_[static_cast<std::size_t>(a)] = 0.25 * (qdyn::identity() + s);
    }
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
            t_[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = qdyn::trace(
                effect(a) * effect(b)).real();
    tinv_ = invert4(t_);
    cond_bound_ = frob(t_) * frob(tinv_);
    if (cond_bound_ >= 100.0)
        throw InvalidState("overlap matrix condition bound " + std::to_string(cond_bound_) +
                           " >= 100");
}

const PovmSet& PovmSet::tetrahedral() {
    static const PovmSet povm(Directions{
        qdyn::BlochVector{0.0, 0.0, 1.0},
        qdyn::BlochVector{2.0 * std::sqrt(2.0) / 3.0, 0.0, -1.0 / 3.0},
        qdyn::BlochVector{-std::sqrt(2.0) / 3.0, std::sqrt(6.0) / 3.0, -1.0 / 3.0},
        qdyn::BlochVector{-std::sqrt(2.0) / 3.0, -std::sqrt(6.0) / 3.0, -1.0 / 3.0},
    });
    return povm;
}

ProbVector rho_to_probs(const PovmSet& povm, const qdyn::DensityMatrix& rho) {
    ProbVector out;
    for (int a = 0; a < 4; ++a) out[a] = qdyn::trace(rho * povm.effect(a)).real();
    return out;
}

qdyn::DensityMatrix probs_to_rho(const PovmSet& povm, const ProbVector& probs) {
    probs.validate();
    const auto& tinv = povm.overlap_inv();
    Mat2 rho;
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
            const double w = probs[a] * tinv[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
            rho = rho + w * povm.effect(b);
        }
    rho = qdyn::hermitized(rho);
    const double tr = qdyn::trace(rho).real();
    return (1.0 / tr) * rho;
}

double expectation_from_probs(const PovmSet& povm, const ProbVector& probs,
                              const qdyn::Observable& obs) {
    probs.validate();
    const auto& tinv = povm.overlap_inv();
    std::array<double, 4> tro{};
    for (int b = 0; b < 4; ++b)
        tro[static_cast<std::size_t>(b)] = qdyn::trace(obs * povm.effect(b)).real();
    double out = 0.0;
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
            out += probs[a] * tro[static_cast<std::size_t>(b)] *
                   tinv[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)];
    return out;
}

std::vector<ProbVector> trajectory_probs(const PovmSet& povm, const qdyn::Trajectory& traj) {
    std::vector<ProbVector> out;
    out.reserve(traj.states.size());
    for (const auto& rho : traj.states) out.push_back(rho_to_probs(povm, rho));
    return out;
}

} // namespace qf::povm
