#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "qforecast/errors.hpp"
#include "qforecast/forecast.hpp"
#include "qforecast/povm.hpp"
#include "qforecast/qdyn.hpp"
#include "qforecast/training.hpp"
#include "qforecast/transformer.hpp"

using namespace qf;
using namespace forecast;

namespace {

transformer::Model tiny_model(std::int64_t window, std::uint64_t seed) {
    transformer::ModelConfig mc;
    mc.d_model = 8;
    mc.n_heads = 2;
    mc.d_ff = 16;
    mc.seq_len = window;
    return transformer::make_model(mc, seed);
}

std::vector<povm::ProbVector> measured_series(const qdyn::Trajectory& traj) {
    const auto& povm = povm::PovmSet::tetrahedral();
    return povm::trajectory_probs(povm, traj);
}

povm::ProbVector constant_row() {
    povm::ProbVector p;
    p[0] = 0.4;
    p[1] = 0.2;
    p[2] = 0.2;
    p[3] = 0.2;
    return p;
}

double max_abs_row_diff(const povm::ProbVector& a, const povm::ProbVector& b) {
    double v = 0.0;
    for (int j = 0; j < 4; ++j) v = std::max(v, std::abs(a[j] - b[j]));
    return v;
}

} // namespace

TEST_CASE("horizon classification follows the window-length threshold") {
    CHECK(classify_horizon(1, 30) == HorizonKind::short_term);
    CHECK(classify_horizon(29, 30) == HorizonKind::short_term);
    CHECK(classify_horizon(30, 30) == HorizonKind::long_term);
    CHECK(classify_horizon(120, 30) == HorizonKind::long_term);
    CHECK(std::string(horizon_name(HorizonKind::short_term)) == "short_term");
    CHECK(std::string(horizon_name(HorizonKind::long_term)) == "long_term");

    // property sweep: every pair agrees with the definition
    for (std::int64_t window : {1, 2, 5, 30, 64}) {
        for (std::int64_t n = 1; n <= 2 * window + 1; ++n) {
            const auto kind = classify_horizon(n, window);
            CHECK((kind == HorizonKind::long_term) == (n >= window));
        }
    }
}

TEST_CASE("rollout window discipline") {
    // at step k <= L the window must hold seed[k..L) then the first k
    // predictions; afterwards predictions only
    const std::int64_t L = 6;
    auto model = tiny_model(L, 3);
    auto traj = qdyn::evolve_rk4({0.5, 1.0, qdyn::Axis::Z}, qdyn::from_bloch({1.0, 0.0, 0.0}),
                                 1.0 / 240.0, 40);
    auto series = measured_series(traj);
    std::vector<povm::ProbVector> seed(series.begin(), series.begin() + L);

    std::vector<std::vector<povm::ProbVector>> windows_seen;
    auto result = rollout(model, seed, 2 * L,
                          [&](std::int64_t, const std::vector<povm::ProbVector>& w) {
                              windows_seen.push_back(w);
                          });
    REQUIRE(windows_seen.size() == static_cast<std::size_t>(2 * L));
    REQUIRE(result.predicted.size() == static_cast<std::size_t>(2 * L));

    for (std::int64_t k = 1; k <= 2 * L; ++k) {
        const auto& w = windows_seen[static_cast<std::size_t>(k - 1)];
        REQUIRE(w.size() == static_cast<std::size_t>(L));
        for (std::int64_t i = 0; i < L; ++i) {
            // window row i at step k: seed[k+i] while k+i < L, else prediction k+i-L
            const std::int64_t global = k + i;
            const auto& expect =
                global < L ? seed[static_cast<std::size_t>(global)]
                           : result.predicted[static_cast<std::size_t>(global - L)];
            CHECK(max_abs_row_diff(w[static_cast<std::size_t>(i)], expect) == 0.0);
        }
    }

    // at step L the window shares nothing with the seed
    const auto& at_L = windows_seen[static_cast<std::size_t>(L - 1)];
    for (std::int64_t i = 0; i < L; ++i)
        CHECK(max_abs_row_diff(at_L[static_cast<std::size_t>(i)],
                               result.predicted[static_cast<std::size_t>(i)]) == 0.0);
}

TEST_CASE("a single-step rollout equals one forward call") {
    const std::int64_t L = 8;
    auto model = tiny_model(L, 7);
    auto traj = qdyn::evolve_rk4({0.75, 1.0, qdyn::Axis::Z}, qdyn::from_bloch({0.0, -1.0, 0.0}),
                                 1.0 / 240.0, 20);
    auto series = measured_series(traj);
    std::vector<povm::ProbVector> seed(series.begin(), series.begin() + L);

    auto result = rollout(model, seed, 1);
    REQUIRE(result.predicted.size() == 1);
    CHECK(result.horizon == HorizonKind::short_term);

    tensor::Tensor x = tensor::Tensor::zeros({L, 4});
    for (std::int64_t i = 0; i < L; ++i)
        for (std::int64_t j = 0; j < 4; ++j)
            x.at(i, j) = seed[static_cast<std::size_t>(i)][j];
    tensor::Tape tape;
    auto y = transformer::forward_windows(tape, model, x, 1);
    for (int j = 0; j < 4; ++j) CHECK(result.predicted[0][j] == y.value(j));
}

TEST_CASE("rollouts are deterministic and classify their horizon") {
    const std::int64_t L = 6;
    auto model = tiny_model(L, 11);
    auto traj = qdyn::evolve_rk4({1.0, 1.0, qdyn::Axis::Z}, qdyn::from_bloch({1.0, 0.0, 0.0}),
                                 1.0 / 240.0, 30);
    auto series = measured_series(traj);
    std::vector<povm::ProbVector> seed(series.begin(), series.begin() + L);

    auto a = rollout(model, seed, L - 1);
    auto b = rollout(model, seed, L - 1);
    CHECK(a.horizon == HorizonKind::short_term);
    REQUIRE(a.predicted.size() == b.predicted.size());
    for (std::size_t k = 0; k < a.predicted.size(); ++k)
        CHECK(max_abs_row_diff(a.predicted[k], b.predicted[k]) == 0.0);

    auto c = rollout(model, seed, L);
    CHECK(c.horizon == HorizonKind::long_term);
    CHECK(c.seed_window.size() == static_cast<std::size_t>(L));
}

TEST_CASE("rollout validates its inputs") {
    auto model = tiny_model(6, 1);
    std::vector<povm::ProbVector> short_seed(5, constant_row());
    CHECK_THROWS_AS(rollout(model, short_seed, 3), ShapeMismatch);
    std::vector<povm::ProbVector> seed(6, constant_row());
    CHECK_THROWS_AS(rollout(model, seed, 0), ConfigError);
}

TEST_CASE("fidelity of exact predictions is one") {
    // feed the true future as the "prediction": fidelity 1 within 1e-10
    const std::int64_t L = 10, n = 25;
    auto traj = qdyn::evolve_rk4({0.5, 1.0, qdyn::Axis::Z}, qdyn::from_bloch({1.0, 0.0, 0.0}),
                                 1.0 / 240.0, L + n);
    auto series = measured_series(traj);

    RolloutResult fake;
    fake.seed_window.assign(series.begin(), series.begin() + L);
    fake.predicted.assign(series.begin() + L, series.begin() + L + n);
    fake.horizon = classify_horizon(n, L);

    const auto& povm = povm::PovmSet::tetrahedral();
    auto curve = fidelity_curve(fake, traj, povm);
    REQUIRE(curve.fidelity.size() == static_cast<std::size_t>(n));
    REQUIRE(curve.steps.size() == static_cast<std::size_t>(n));
    for (std::size_t k = 0; k < curve.fidelity.size(); ++k) {
        CHECK(curve.steps[k] == static_cast<std::int64_t>(k) + 1);
        CHECK(curve.fidelity[k] == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(curve.fidelity[k] <= 1.0 + 1e-12);
    }

    // the matching report scores perfect prediction as zero error
    auto report = evaluate_rollout(fake, traj, povm);
    CHECK(report.mse_sx < 1e-20);
    CHECK(report.mse_sy < 1e-20);
    CHECK(report.mse_sz < 1e-20);
    CHECK(report.min_fidelity == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(report.mean_fidelity == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(report.horizon == fake.horizon);
}

TEST_CASE("fidelity curve rejects a trajectory that ends too early") {
    const std::int64_t L = 10, n = 25;
    auto traj = qdyn::evolve_rk4({0.5, 1.0, qdyn::Axis::Z}, qdyn::from_bloch({1.0, 0.0, 0.0}),
                                 1.0 / 240.0, L + n);
    auto series = measured_series(traj);

    RolloutResult fake;
    fake.seed_window.assign(series.begin(), series.begin() + L);
    fake.predicted.assign(series.begin() + L, series.begin() + L + n);

    auto short_traj = qdyn::evolve_rk4({0.5, 1.0, qdyn::Axis::Z},
                                       qdyn::from_bloch({1.0, 0.0, 0.0}), 1.0 / 240.0,
                                       L + n - 2);
    const auto& povm = povm::PovmSet::tetrahedral();
    CHECK_THROWS_AS(fidelity_curve(fake, short_traj, povm), IndexMismatch);
}

TEST_CASE("mildly unphysical predictions still score") {
    // a prediction row mapping to a small negative eigenvalue must be clamped
    // into the fidelity, not rejected
    const std::int64_t L = 4, n = 1;
    auto traj = qdyn::evolve_rk4({0.5, 1.0, qdyn::Axis::Z}, qdyn::from_bloch({0.0, 0.0, 1.0}),
                                 1.0 / 240.0, L + n);
    auto series = measured_series(traj);

    RolloutResult fake;
    fake.seed_window.assign(series.begin(), series.begin() + L);
    povm::ProbVector outside;
    outside[0] = 0.62; // Bloch norm > 1: outside the physical cone
    outside[1] = 0.38;
    outside[2] = 0.0;
    outside[3] = 0.0;
    fake.predicted.assign(1, outside);

    const auto& povm = povm::PovmSet::tetrahedral();
    auto curve = fidelity_curve(fake, traj, povm);
    REQUIRE(curve.fidelity.size() == 1);
    CHECK(curve.fidelity[0] > 0.0);
    CHECK(curve.fidelity[0] <= 1.0 + 1e-12);
}

TEST_CASE("steady detector fires exactly at the run length on constant input") {
    ConvergenceOptions opt;
    opt.tv_threshold = 1e-5;
    opt.run_length = 50;
    SteadyDetector det(opt, constant_row());
    for (int k = 1; k < 50; ++k) {
        CHECK_FALSE(det.feed(constant_row()));
        CHECK_FALSE(det.steady());
    }
    CHECK(det.feed(constant_row()));
    CHECK(det.steady());
}

TEST_CASE("steady detector resets its run on a jump") {
    ConvergenceOptions opt;
    opt.tv_threshold = 0.01;
    opt.run_length = 3;
    SteadyDetector det(opt, constant_row());
    CHECK_FALSE(det.feed(constant_row()));
    CHECK_FALSE(det.feed(constant_row()));
    // a jump of total variation 0.1 breaks the run
    povm::ProbVector jump = constant_row();
    jump[0] += 0.1;
    jump[1] -= 0.1;
    CHECK_FALSE(det.feed(jump));
    CHECK_FALSE(det.feed(jump)); // run restarts: 1 of 3
    CHECK_FALSE(det.feed(jump));
    CHECK(det.feed(jump));
}

TEST_CASE("total variation uses half the L1 distance") {
    ConvergenceOptions opt;
    opt.tv_threshold = 0.05; // L1 distance 0.08 -> TV 0.04 stays under
    opt.run_length = 1;
    SteadyDetector det(opt, constant_row());
    povm::ProbVector near = constant_row();
    near[0] += 0.04;
    near[1] -= 0.04;
    CHECK(det.feed(near)); // TV = 0.04 < 0.05: steady on the first sample

    SteadyDetector det2(opt, constant_row());
    povm::ProbVector far = constant_row();
    far[0] += 0.06;
    far[1] -= 0.06;
    CHECK_FALSE(det2.feed(far)); // TV = 0.06 > 0.05
}

TEST_CASE("window_from_series slices rows and checks bounds") {
    tensor::Tensor series = tensor::Tensor::zeros({10, 4});
    for (std::int64_t i = 0; i < 10; ++i)
        for (std::int64_t j = 0; j < 4; ++j) series.at(i, j) = 0.25 + 0.001 * (i - j);
    auto rows = window_from_series(series, 2, 7);
    REQUIRE(rows.size() == 5);
    for (std::int64_t i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(rows[static_cast<std::size_t>(i)][j] == series.at(i + 2, j));

    CHECK_THROWS_AS(window_from_series(series, 5, 5), IndexMismatch);
    CHECK_THROWS_AS(window_from_series(series, -1, 4), IndexMismatch);
    CHECK_THROWS_AS(window_from_series(series, 6, 11), IndexMismatch);
}

TEST_CASE("an untrained model rolls out without leaving the simplex") {
    // documents the untrained baseline: predictions are valid distributions
    // even though they are nowhere near the dynamics
    const std::int64_t L = 30;
    auto model = transformer::make_model(transformer::ModelConfig{}, 1);
    auto traj = qdyn::evolve_rk4({0.75, 1.0, qdyn::Axis::Z}, qdyn::from_bloch({1.0, 0.0, 0.0}),
                                 1.0 / 240.0, 200);
    auto series = measured_series(traj);
    std::vector<povm::ProbVector> seed(series.begin(), series.begin() + L);

    auto result = rollout(model, seed, 60);
    for (const auto& row : result.predicted) CHECK_NOTHROW(row.validate());

    const auto& povm = povm::PovmSet::tetrahedral();
    auto curve = fidelity_curve(result, traj, povm);
    for (double f : curve.fidelity) {
        CHECK(f >= 0.0);
        CHECK(f <= 1.0 + 1e-12);
    }
}

TEST_CASE("run_to_convergence stops a constant-output model at the run length") {
    // a model trained to emit one fixed row converges as soon as the detector
    // window fills; cap generously above the run length
    tensor::Tensor series = tensor::Tensor::zeros({40, 4});
    for (std::int64_t i = 0; i < 40; ++i)
        for (std::int64_t j = 0; j < 4; ++j) series.at(i, j) = (j == 0) ? 0.4 : 0.2;
    auto data = training::make_dataset(series, 0.1, 5);
    auto model = tiny_model(5, 1);
    training::TrainOptions topt;
    topt.lr = 1e-2;
    topt.max_epochs = 150;
    topt.patience = 150;
    training::train(model, data, topt);

    ConvergenceOptions opt;
    opt.tv_threshold = 1e-5;
    opt.run_length = 50;
    opt.step_cap = 500;
    auto seed = window_from_series(series, 0, 5);
    auto result = run_to_convergence(model, seed, opt);
    CHECK(result.converged);
    // the first prediction may sit just off the training row, costing at most
    // a few settle steps before the run of 50 begins
    CHECK(result.predicted.size() >= 50);
    CHECK(result.predicted.size() <= 60);

    // a run length beyond the cap can never fire: the cap wins
    ConvergenceOptions harsh = opt;
    harsh.run_length = 100;
    harsh.step_cap = 60;
    auto capped = run_to_convergence(model, seed, harsh);
    CHECK_FALSE(capped.converged);
    CHECK(capped.predicted.size() == 60);
}

TEST_CASE("evaluate_rollout localizes the fidelity minimum") {
    // hand-build predictions: exact everywhere except a dent at step 7
    const std::int64_t L = 5, n = 12;
    auto traj = qdyn::evolve_rk4({0.5, 1.0, qdyn::Axis::Z}, qdyn::from_bloch({1.0, 0.0, 0.0}),
                                 1.0 / 240.0, L + n);
    auto series = measured_series(traj);

    RolloutResult fake;
    fake.seed_window.assign(series.begin(), series.begin() + L);
    fake.predicted.assign(series.begin() + L, series.begin() + L + n);
    auto& dent = fake.predicted[6]; // step 7
    dent[0] = std::max(0.0, dent[0] - 0.05);
    dent[1] += 0.05;

    const auto& povm = povm::PovmSet::tetrahedral();
    auto report = evaluate_rollout(fake, traj, povm);
    CHECK(report.argmin_step == 7);
    CHECK(report.min_fidelity < 1.0 - 1e-4);
    CHECK(report.mean_fidelity > report.min_fidelity);
    CHECK(report.mse_sy > 0.0);
}
