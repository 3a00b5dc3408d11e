#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "qforecast/povm.hpp"
#include "qforecast/qdyn.hpp"
#include "qforecast/training.hpp"
#include "qforecast/transformer.hpp"

// Autoregressive forecasting on top of a trained model: rollouts, fidelity
// against exact trajectories, steady-state detection, and the driven-qubit
// steady-state sweep.

namespace qf::forecast {

// A rollout shorter than the window length never leaves the seed data behind;
// one at least as long eventually feeds on its own predictions only.
enum class HorizonKind { short_term, long_term };

const char* horizon_name(HorizonKind kind);
HorizonKind classify_horizon(std::int64_t n_steps, std::int64_t window);

struct RolloutResult {
    std::vector<povm::ProbVector> predicted;   // one entry per step
    std::vector<povm::ProbVector> seed_window; // the L rows the rollout started from
    HorizonKind horizon = HorizonKind::short_term;
};

// Called after each prediction with the step number (1-based) and the working
// window contents at that moment: rows seed[k..L) followed by the first k
// predictions while k <= L, predictions only afterwards.
using WindowObserver =
    std::function<void(std::int64_t step, const std::vector<povm::ProbVector>& window)>;

// Predict n_steps rows one at a time, each time appending the prediction and
// dropping the oldest row. Deterministic: fixed weights and seed give an
// identical result. The model must have d_input = 4 and seq_len = seed size.
RolloutResult rollout(const transformer::Model& model,
                      const std::vector<povm::ProbVector>& seed, std::int64_t n_steps,
                      const WindowObserver& observer = {});

struct FidelityCurve {
    std::vector<std::int64_t> steps; // 1-based prediction steps
    std::vector<double> fidelity;    // entries in [0, 1 + 1e-12]
};

// Prediction k is reconstructed (probs_to_rho, then clamped onto the physical
// cone) and compared against exact.states[L-1+k], i.e. the rollout seed is
// taken to be the first L states of `exact`. IndexMismatch if the trajectory
// is too short for every predicted step.
FidelityCurve fidelity_curve(const RolloutResult& rollout, const qdyn::Trajectory& exact,
                             const povm::PovmSet& povm);

struct ConvergenceOptions {
    double tv_threshold = 1e-5;   // total variation between successive predictions
    std::int64_t run_length = 50; // consecutive small steps required
    std::int64_t step_cap = 5000;
};

// Flags a series as steady once `run_length` consecutive increments each stay
// below tv_threshold in total variation (half the L1 distance). Fed a
// constant series it fires on exactly the run_length-th sample.
class SteadyDetector {
public:
    SteadyDetector(const ConvergenceOptions& options, const povm::ProbVector& initial);

    bool feed(const povm::ProbVector& next); // true once steady
    bool steady() const { return steady_; }

private:
    ConvergenceOptions opt_;
    povm::ProbVector prev_;
    std::int64_t run_ = 0;
    bool steady_ = false;
};

struct ConvergenceResult {
    std::vector<povm::ProbVector> predicted;
    bool converged = false; // false means the step cap was hit first
};

// Rolls out until the detector fires or the cap is reached. The first
// prediction is compared against the last seed row.
ConvergenceResult run_to_convergence(const transformer::Model& model,
                                     const std::vector<povm::ProbVector>& seed,
                                     const ConvergenceOptions& options);

struct SweepPoint {
    double g_over_gamma = 0.0;
    std::array<double, 3> predicted{}; // <sx>, <sy>, <sz> of the final prediction
    std::array<double, 3> exact{};     // same expectations of the Liouvillian steady state
    bool converged = false;
};

struct SweepOptions {
    double gamma = 1.0;
    double dt = 1.0 / 240.0;
    std::int64_t trajectory_steps = 2400; // training data length per grid point
    qdyn::BlochVector initial_state{0.0, 0.0, 1.0};
    std::int64_t seed_begin = 30; // rollout seed rows [seed_begin, seed_end)
    std::int64_t seed_end = 60;
    transformer::ModelConfig model; // seq_len must equal seed_end - seed_begin
    std::uint64_t model_seed = 1;
    training::TrainOptions train;
    ConvergenceOptions convergence;
};

// One grid point of the sigma_x-driven steady-state experiment: simulate with
// g = ratio * gamma, train a fresh model on that trajectory, roll out from
// the configured seed rows until steady, and report predicted vs exact
// steady-state expectations. NoConvergence never throws here; the row is
// emitted with converged = false.
SweepPoint sweep_point(const SweepOptions& options, double g_over_gamma);

std::vector<SweepPoint> steady_state_sweep(
    const SweepOptions& options, const std::vector<double>& grid,
    const std::function<void(const SweepPoint&)>& on_point = {});

struct EvalReport {
    double mse_sx = 0.0, mse_sy = 0.0, mse_sz = 0.0; // expectation MSE over all steps
    double mean_fidelity = 0.0, min_fidelity = 0.0;
    std::int64_t argmin_step = 0; // 1-based step of the fidelity minimum
    HorizonKind horizon = HorizonKind::short_term;
};

// Scores a rollout against the exact trajectory it shadows (same alignment
// rules as fidelity_curve).
EvalReport evaluate_rollout(const RolloutResult& rollout, const qdyn::Trajectory& exact,
                            const povm::PovmSet& povm);

// Rows [begin, end) of a [n x 4] probability series as window rows.
// IndexMismatch when the range is empty or out of bounds.
std::vector<povm::ProbVector> window_from_series(const tensor::Tensor& series,
                                                 std::int64_t begin, std::int64_t end);

} // namespace qf::forecast
