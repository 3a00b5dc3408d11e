#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>

#include "qforecast/errors.hpp"
#include "qforecast/qdyn.hpp"

using namespace qf;
using qdyn::Axis;
using qdyn::LindbladModel;

namespace {

qdyn::DensityMatrix named(const char* name) {
    return qdyn::from_bloch(*qdyn::named_state_bloch(name));
}

double bloch_dist(const qdyn::BlochVector& a, const qdyn::BlochVector& b) {
    double d2 = 0.0;
    for (int i = 0; i < 3; ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(d2);
}

double max_abs(const qdyn::Mat2& m) {
    double v = 0.0;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) v = std::max(v, std::abs(m(i, j)));
    return v;
}

} // namespace

TEST_CASE("Bloch round trip and named states") {
    for (const char* name : {"plus", "minus", "zero", "one", "l"}) {
        const auto r = *qdyn::named_state_bloch(name);
        const auto rho = qdyn::from_bloch(r);
        CHECK(qdyn::is_physical(rho, 1e-12));
        CHECK(bloch_dist(qdyn::bloch(rho), r) < 1e-14);
    }
    CHECK_FALSE(qdyn::named_state_bloch("nonsense").has_value());
    CHECK_THROWS_AS(qdyn::from_bloch({1.0, 1.0, 1.0}), InvalidState);
}

TEST_CASE("expectations of the Pauli observables") {
    // I/2 has zero expectation along every axis
    const auto mixed = qdyn::from_bloch({0.0, 0.0, 0.0});
    CHECK(qdyn::expectation(mixed, qdyn::sigma_x()) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(qdyn::expectation(mixed, qdyn::sigma_y()) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(qdyn::expectation(mixed, qdyn::sigma_z()) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(qdyn::expectation(named("plus"), qdyn::sigma_x()) == doctest::Approx(1.0));
    CHECK(qdyn::expectation(named("one"), qdyn::sigma_z()) == doctest::Approx(-1.0));
}

TEST_CASE("master equation right-hand side on basis cases") {
    // ground state: dark state of the lowering operator, commutes with sigma_z
    const auto ground = named("one");
    const auto rhs0 = qdyn::lindblad_rhs({0.7, 2.3, Axis::Z}, ground);
    CHECK(max_abs(rhs0) < 1e-15);

    // pure decay of the maximally mixed state: diag(-1/2, +1/2) at gamma=1
    const auto mixed = qdyn::from_bloch({0.0, 0.0, 0.0});
    const auto rhs1 = qdyn::lindblad_rhs({1.0, 0.0, Axis::Z}, mixed);
    CHECK(std::abs(rhs1(0, 0) - std::complex<double>(-0.5, 0.0)) < 1e-15);
    CHECK(std::abs(rhs1(1, 1) - std::complex<double>(0.5, 0.0)) < 1e-15);
    CHECK(std::abs(rhs1(0, 1)) < 1e-15);

    // unitary-only |+><+|: zero diagonal, off-diagonal magnitude 2|rho01| = 1
    const auto rhs2 = qdyn::lindblad_rhs({0.0, 1.0, Axis::Z}, named("plus"));
    CHECK(std::abs(rhs2(0, 0)) < 1e-15);
    CHECK(std::abs(rhs2(1, 1)) < 1e-15);
    CHECK(std::abs(rhs2(0, 1)) == doctest::Approx(1.0).epsilon(1e-12));

    // the generator is trace-free and Hermiticity-preserving
    const auto rhs3 = qdyn::lindblad_rhs({0.5, 1.0, Axis::X}, named("l"));
    CHECK(std::abs(rhs3(0, 0) + rhs3(1, 1)) < 1e-14);
    CHECK(std::abs(rhs3(0, 1) - std::conj(rhs3(1, 0))) < 1e-14);
}

TEST_CASE("zero generator freezes the trajectory") {
    const auto traj = qdyn::evolve_rk4({0.0, 0.0, Axis::Z}, named("l"), 1.0 / 240.0, 100);
    REQUIRE(traj.states.size() == 101);
    for (const auto& s : traj.states)
        CHECK(bloch_dist(qdyn::bloch(s), *qdyn::named_state_bloch("l")) < 1e-14);
}

TEST_CASE("integrator matches the damped-oscillation closed form") {
    const LindbladModel model{0.5, 1.0, Axis::Z};
    const auto traj = qdyn::evolve_rk4(model, named("plus"), 1.0 / 240.0, 2400);
    const double t = 10.0;
    const auto r = qdyn::bloch(traj.states.back());
    CHECK(std::abs(r[0] - std::exp(-model.gamma * t / 2.0) * std::cos(2.0 * model.g * t)) <
          1e-6);

    // excited-state population decays as e^{-gamma t}
    const auto decay = qdyn::evolve_rk4({0.5, 1.0, Axis::Z}, named("zero"), 1.0 / 240.0, 2400);
    CHECK(std::abs(decay.states.back()(0, 0).real() - std::exp(-0.5 * 10.0)) < 1e-6);
}

TEST_CASE("closed form: fixed points and the t=2 hand values") {
    const LindbladModel model{0.5, 1.0, Axis::Z};
    // t = 0 reproduces the initial state exactly
    const auto t0 = qdyn::analytic_trajectory(model, named("l"), 0.25, 0);
    CHECK(max_abs(t0.states.back() - named("l")) < 1e-15);
    // the ground state is stationary
    const auto fixed = qdyn::analytic_trajectory(model, named("one"), 0.1, 50);
    for (const auto& s : fixed.states) CHECK(max_abs(s - named("one")) < 1e-14);

    // |+>, gamma=0.5, g=1, t=2: x = e^{-1/2} cos 4, z = e^{-1} - 1, |y| = e^{-1/2} |sin 4|
    const auto tr = qdyn::analytic_trajectory(model, named("plus"), 2.0, 1);
    const auto r = qdyn::bloch(tr.states.back());
    CHECK(r[0] == doctest::Approx(std::exp(-0.5) * std::cos(4.0)).epsilon(1e-12));
    CHECK(std::abs(r[1]) == doctest::Approx(std::exp(-0.5) * std::abs(std::sin(4.0))).epsilon(1e-12));
    CHECK(r[2] == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-12));

    CHECK_THROWS_AS(qdyn::analytic_trajectory({0.5, 1.0, Axis::X}, named("plus"), 0.1, 1),
                    UnsupportedModel);
}

TEST_CASE("coherence phase sign agrees with the integrator after one step") {
    // One RK4 step has local error O(dt^5) ~ 1e-12; a wrong phase sign would
    // show up at O(dt) ~ 4e-3. This pins the e^{-2igt} convention.
    const LindbladModel model{0.5, 1.0, Axis::Z};
    const double dt = 1.0 / 240.0;
    const auto rk = qdyn::evolve_rk4(model, named("plus"), dt, 1);
    const auto cf = qdyn::analytic_trajectory(model, named("plus"), dt, 1);
    CHECK(max_abs(rk.states.back() - cf.states.back()) < 1e-10);

    // and stays in lockstep over a full 40-unit horizon
    const auto rk_long = qdyn::evolve_rk4(model, named("plus"), dt, 9600);
    const auto cf_long = qdyn::analytic_trajectory(model, named("plus"), dt, 9600);
    double worst = 0.0;
    for (std::size_t k = 0; k < rk_long.states.size(); ++k)
        worst = std::max(worst,
                         bloch_dist(qdyn::bloch(rk_long.states[k]), qdyn::bloch(cf_long.states[k])));
    CHECK(worst < 1e-6);
}

TEST_CASE("trace stays pinned and pre-renormalization drift is tiny") {
    const auto traj = qdyn::evolve_rk4({1.0, 1.0, Axis::X}, named("plus"), 1.0 / 240.0, 2400);
    CHECK(traj.max_trace_drift < 1e-8);
    for (const auto& s : traj.states) {
        const auto tr = s(0, 0) + s(1, 1);
        CHECK(std::abs(tr - std::complex<double>(1.0, 0.0)) < 1e-10);
    }
}

TEST_CASE("unitary dynamics conserves purity") {
    const auto traj = qdyn::evolve_rk4({0.0, 1.0, Axis::Z}, named("plus"), 1.0 / 240.0, 2400);
    const double p0 = qdyn::purity(traj.states.front());
    for (const auto& s : traj.states) CHECK(std::abs(qdyn::purity(s) - p0) < 1e-9);
}

TEST_CASE("dissipation drives diagonal states to the pure ground state") {
    for (double z0 : {1.0, 0.25, -0.5}) {
        const auto traj =
            qdyn::evolve_rk4({0.75, 1.0, Axis::Z}, qdyn::from_bloch({0.0, 0.0, z0}),
                             1.0 / 240.0, 9600);
        CHECK(std::abs(qdyn::purity(traj.states.back()) - 1.0) < 1e-6);
        CHECK(bloch_dist(qdyn::bloch(traj.states.back()), {0.0, 0.0, -1.0}) < 1e-6);
    }
}

TEST_CASE("a crude step size trips the physicality guard") {
    CHECK_THROWS_AS(qdyn::evolve_rk4({100.0, 0.0, Axis::Z}, named("zero"), 0.1, 3),
                    StepSizeError);
}

TEST_CASE("steady state from the Liouvillian null space") {
    // undriven: unique dark state is the ground state, for either axis
    for (double g : {0.0, 0.3, 2.0}) {
        const auto rho = qdyn::steady_state({1.0, g, Axis::Z});
        CHECK(bloch_dist(qdyn::bloch(rho), {0.0, 0.0, -1.0}) < 1e-12);
    }
    const auto undriven_x = qdyn::steady_state({1.0, 0.0, Axis::X});
    CHECK(bloch_dist(qdyn::bloch(undriven_x), {0.0, 0.0, -1.0}) < 1e-12);

    // driven X: closed form x*=0, y* = 4 g gamma / (8g^2 + gamma^2),
    // z* = -gamma^2 / (8g^2 + gamma^2)
    for (double ratio : {0.25, 0.5, 1.0, 1.75}) {
        const double gamma = 1.0, g = ratio * gamma;
        const auto rho = qdyn::steady_state({gamma, g, Axis::X});
        const double den = 8.0 * g * g + gamma * gamma;
        CHECK(bloch_dist(qdyn::bloch(rho), {0.0, 4.0 * g * gamma / den, -gamma * gamma / den}) <
              1e-12);
    }

    // dual oracle: long-time integration lands on the null-space state
    const auto exact = qdyn::steady_state({1.0, 1.0, Axis::X});
    const auto run = qdyn::evolve_rk4({1.0, 1.0, Axis::X}, named("zero"), 1.0 / 240.0, 12000);
    CHECK(bloch_dist(qdyn::bloch(exact), qdyn::bloch(run.states.back())) < 1e-10);

    // the generator annihilates it
    const auto rhs = qdyn::lindblad_rhs({1.0, 1.0, Axis::X}, exact);
    CHECK(max_abs(rhs) < 1e-10);

    CHECK_THROWS_AS(qdyn::steady_state({0.0, 1.0, Axis::Z}), UnsupportedModel);
}

TEST_CASE("fidelity basics and hand values") {
    const auto plus = named("plus");
    const auto ground = named("one");
    const auto excited = named("zero");
    const auto mixed = qdyn::from_bloch({0.0, 0.0, 0.0});

    CHECK(qdyn::fidelity(plus, plus) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(qdyn::fidelity(ground, excited) == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(qdyn::fidelity(excited, mixed) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));

    // symmetry and bounds across a small grid of states
    const qdyn::DensityMatrix states[] = {plus, ground, excited, mixed, named("l"),
                                          qdyn::from_bloch({0.3, -0.4, 0.5})};
    for (const auto& a : states)
        for (const auto& b : states) {
            const double f = qdyn::fidelity(a, b);
            CHECK(f >= 0.0);
            CHECK(f <= 1.0 + 1e-12);
            CHECK(std::abs(f - qdyn::fidelity(b, a)) < 1e-10);
        }
}

TEST_CASE("fidelity rejects states deep outside the physical cone") {
    // eigenvalues 1.001 and -0.001: beyond what projection may silently fix
    qdyn::DensityMatrix bad{};
    bad(0, 0) = 1.001;
    bad(1, 1) = -0.001;
    CHECK_THROWS_AS(qdyn::fidelity(bad, named("plus")), InvalidState);
    // but the unconditional clamp accepts it
    const auto fixed = qdyn::clamp_physical(bad);
    CHECK(qdyn::is_physical(fixed, 1e-12));
    CHECK(qdyn::fidelity(fixed, fixed) == doctest::Approx(1.0));
}

TEST_CASE("projection clamps slightly negative eigenvalues and renormalizes") {
    qdyn::DensityMatrix near{};
    near(0, 0) = 1.0 + 5e-7;
    near(1, 1) = -5e-7;
    const auto fixed = qdyn::project_psd(near);
    CHECK(qdyn::is_physical(fixed, 1e-12));
    CHECK(std::abs(fixed(0, 0).real() - 1.0) < 1e-6);
    CHECK(fixed(1, 1).real() >= 0.0);
}
