#pragma once

#include <array>
#include <vector>

#include "qforecast/qdyn.hpp"

namespace qf::povm {

// Probability row over the four POVM outcomes. Entries may carry rounding
// noise; validate() enforces entries >= -1e-12 and sum within 1e-10 of 1.
struct ProbVector {
    std::array<double, 4> p{};

    double& operator[](int i) { return p[static_cast<std::size_t>(i)]; }
    double operator[](int i) const { return p[static_cast<std::size_t>(i)]; }
    void validate() const;
};

// Informationally complete four-outcome measurement with effects
// M(a) = (I + n_a . sigma) / 4 and pairwise overlap matrix
// T[a][b] = Tr(M(a) M(b)). T^{-1} is computed once at construction; the
// Frobenius bound on its condition number is asserted < 100.
class PovmSet {
public:
    using Directions = std::array<qdyn::BlochVector, 4>;

    explicit PovmSet(const Directions& directions);

    // Vertices of the standard tetrahedron:
    //   (0, 0, 1), (2*sqrt2/3, 0, -1/3),
    //   (-sqrt2/3, +sqrt6/3, -1/3), (-sqrt2/3, -sqrt6/3, -1/3).
    static const PovmSet& tetrahedral();

    const Directions& directions() const { return dirs_; }
    const qdyn::Mat2& effect(int a) const { return effects_[static_cast<std::size_t>(a)]; }
    const std::array<std::array<double, 4>, 4>& overlap() const { return t_; }
    const std::array<std::array<double, 4>, 4>& overlap_inv() const { return tinv_; }
    double condition_bound() const { return cond_bound_; }

private:
    Directions dirs_;
    std::array<qdyn::Mat2, 4> effects_;
    std::array<std::array<double, 4>, 4> t_{};
    std::array<std::array<double, 4>, 4> tinv_{};
    double cond_bound_ = 0.0;
};

// P(a) = Tr(rho M(a)).
ProbVector rho_to_probs(const PovmSet& povm, const qdyn::DensityMatrix& rho);

// rho = sum_{a,b} P(a) T^{-1}[a][b] M(b), Hermitized and trace-normalized.
// Probabilities outside the image of a physical state reconstruct to a
// Hermitian trace-1 matrix that need not be PSD; no projection here.
qdyn::DensityMatrix probs_to_rho(const PovmSet& povm, const ProbVector& probs);

// <O> = sum_{a,b} P(a) Tr(O M(b)) T^{-1}[b][a], evaluated without
// reconstructing rho.
double expectation_from_probs(const PovmSet& povm, const ProbVector& probs,
                              const qdyn::Observable& obs);

std::vector<ProbVector> trajectory_probs(const PovmSet& povm, const qdyn::Trajectory& traj);

} // namespace qf::povm
