#include "qforecast/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "qforecast/errors.hpp"
#include "qforecast/tensor.hpp"

namespace qf::forecast {

using povm::ProbVector;
using tensor::Tensor;
using transformer::Model;

const char* horizon_name(HorizonKind kind) {
    return kind == HorizonKind::short_term ? "short_term" : "long_term";
}

HorizonKind classify_horizon(std::int64_t n_steps, std::int64_t window) {
    return n_steps < window ? HorizonKind::short_term : HorizonKind::long_term;
}

namespace {

void check_rollout_model(const Model& model, std::size_t seed_rows) {
    if (model.config.d_input != 4)
        throw ShapeMismatch("rollout needs a 4-output model, config has d_input " +
                            std::to_string(model.config.d_input));
    if (static_cast<std::int64_t>(seed_rows) != model.config.seq_len)
        throw ShapeMismatch("seed window has " + std::to_string(seed_rows) +
                            " rows, model expects " + std::to_string(model.config.seq_len));
}

ProbVector predict_one(const Model& model, const std::vector<ProbVector>& window) {
    const std::int64_t L = static_cast<std::int64_t>(window.size());
    Tensor x = Tensor::zeros({L, 4});
    for (std::int64_t i = 0; i < L; ++i)
        std::memcpy(x.data() + i * 4, window[static_cast<std::size_t>(i)].p.data(),
                    4 * sizeof(double));
    tensor::Tape tape;
    Tensor out = transformer::forward_windows(tape, model, x, 1);
    ProbVector p{out.value(0), out.value(1), out.value(2), out.value(3)};
    p.validate();
    return p;
}

} // namespace

RolloutResult rollout(const Model& model, const std::vector<ProbVector>& seed,
                      std::int64_t n_steps, const WindowObserver& observer) {
    check_rollout_model(model, seed.size());
    if (n_steps < 1) throw ConfigError("rollout needs n_steps >= 1");

    RolloutResult result;
    result.seed_window = seed;
    result.horizon = classify_horizon(n_steps, model.config.seq_len);
    std::vector<ProbVector> window = seed;
    for (std::int64_t k = 1; k <= n_steps; ++k) {
        const ProbVector p = predict_one(model, window);
        result.predicted.push_back(p);
        window.erase(window.begin());
        window.push_back(p);
        if (observer) observer(k, window);
    }
    return result;
}

FidelityCurve fidelity_curve(const RolloutResult& rollout, const qdyn::Trajectory& exact,
                             const povm::PovmSet& povm) {
    const std::int64_t L = static_cast<std::int64_t>(rollout.seed_window.size());
    const std::int64_t n = static_cast<std::int64_t>(rollout.predicted.size());
    if (static_cast<std::int64_t>(exact.states.size()) < L + n)
        throw IndexMismatch("exact trajectory has " + std::to_string(exact.states.size()) +
                            " states; rollout needs " + std::to_string(L + n));

    FidelityCurve curve;
    for (std::int64_t k = 1; k <= n; ++k) {
        const qdyn::DensityMatrix raw =
            povm::probs_to_rho(povm, rollout.predicted[static_cast<std::size_t>(k - 1)]);
        const qdyn::DensityMatrix rho = qdyn::clamp_physical(raw);
        curve.steps.push_back(k);
        curve.fidelity.push_back(
            qdyn::fidelity(exact.states[static_cast<std::size_t>(L - 1 + k)], rho));
    }
    return curve;
}

SteadyDetector::SteadyDetector(const ConvergenceOptions& options, const ProbVector& initial)
    : opt_(options), prev_(initial) {
    if (!(opt_.tv_threshold > 0.0)) throw ConfigError("tv_threshold must be positive");
    if (opt_.run_length < 1) throw ConfigError("run_length must be >= 1");
    if (opt_.step_cap < 1) throw ConfigError("step_cap must be >= 1");
}

bool SteadyDetector::feed(const ProbVector& next) {
    double l1 = 0.0;
    for (int a = 0; a < 4; ++a) l1 += std::abs(next[a] - prev_[a]);
    prev_ = next;
    run_ = (0.5 * l1 < opt_.tv_threshold) ? run_ + 1 : 0;
    if (run_ >= opt_.run_length) steady_ = true;
    return steady_;
}

ConvergenceResult run_to_convergence(const Model& model, const std::vector<ProbVector>& seed,
                                     const ConvergenceOptions& options) {
    check_rollout_model(model, seed.size());
    if (seed.empty()) throw ShapeMismatch("empty seed window");

    ConvergenceResult result;
    SteadyDetector detector(options, seed.back());
    std::vector<ProbVector> window = seed;
    for (std::int64_t k = 1; k <= options.step_cap; ++k) {
        const ProbVector p = predict_one(model, window);
        result.predicted.push_back(p);
        window.erase(window.begin());
        window.push_back(p);
        if (detector.feed(p)) {
            result.converged = true;
            break;
        }
    }
    return result;
}

SweepPoint sweep_point(const SweepOptions& options, double g_over_gamma) {
    if (!(options.gamma > 0.0)) throw ConfigError("sweep needs gamma > 0");
    if (options.seed_begin < 0 || options.seed_end <= options.seed_begin)
        throw ConfigError("sweep seed range is empty");
    if (options.model.seq_len != options.seed_end - options.seed_begin)
        throw ConfigError("sweep seed range length must equal the model window");

    const qdyn::LindbladModel phys{options.gamma, g_over_gamma * options.gamma, qdyn::Axis::X};
    const qdyn::DensityMatrix rho0 = qdyn::from_bloch(options.initial_state);
    const qdyn::Trajectory traj =
        qdyn::evolve_rk4(phys, rho0, options.dt, options.trajectory_steps);
    const povm::PovmSet tetra = povm::PovmSet::tetrahedral();

    training::Dataset data = training::build_dataset(traj, tetra, options.model.seq_len);
    Model net = transformer::make_model(options.model, options.model_seed);
    training::train(net, data, options.train);

    const std::vector<ProbVector> seed =
        window_from_series(data.series, options.seed_begin, options.seed_end);
    const ConvergenceResult conv = run_to_convergence(net, seed, options.convergence);
    const ProbVector& last = conv.predicted.back();

    SweepPoint point;
    point.g_over_gamma = g_over_gamma;
    point.converged = conv.converged;
    point.predicted = {povm::expectation_from_probs(tetra, last, qdyn::sigma_x()),
                       povm::expectation_from_probs(tetra, last, qdyn::sigma_y()),
                       povm::expectation_from_probs(tetra, last, qdyn::sigma_z())};
    const qdyn::DensityMatrix steady = qdyn::steady_state(phys);
    point.exact = {qdyn::expectation(steady, qdyn::sigma_x()),
                   qdyn::expectation(steady, qdyn::sigma_y()),
                   qdyn::expectation(steady, qdyn::sigma_z())};
    return point;
}

std::vector<SweepPoint> steady_state_sweep(const SweepOptions& options,
                                           const std::vector<double>& grid,
                                           const std::function<void(const SweepPoint&)>& on_point) {
    if (grid.empty()) throw ConfigError("sweep grid is empty");
    std::vector<SweepPoint> table;
    table.reserve(grid.size());
    for (double ratio : grid) {
        table.push_back(sweep_point(options, ratio));
        if (on_point) on_point(table.back());
    }
    return table;
}

EvalReport evaluate_rollout(const RolloutResult& rollout, const qdyn::Trajectory& exact,
                            const povm::PovmSet& povm) {
    const FidelityCurve curve = fidelity_curve(rollout, exact, povm);
    const std::int64_t L = static_cast<std::int64_t>(rollout.seed_window.size());
    const std::int64_t n = static_cast<std::int64_t>(rollout.predicted.size());

    EvalReport report;
    report.horizon = rollout.horizon;
    double se_x = 0.0, se_y = 0.0, se_z = 0.0;
    for (std::int64_t k = 1; k <= n; ++k) {
        const ProbVector& p = rollout.predicted[static_cast<std::size_t>(k - 1)];
        const qdyn::DensityMatrix& ex = exact.states[static_cast<std::size_t>(L - 1 + k)];
        const double dx =
            povm::expectation_from_probs(povm, p, qdyn::sigma_x()) - qdyn::expectation(ex, qdyn::sigma_x());
        const double dy =
            povm::expectation_from_probs(povm, p, qdyn::sigma_y()) - qdyn::expectation(ex, qdyn::sigma_y());
        const double dz =
            povm::expectation_from_probs(povm, p, qdyn::sigma_z()) - qdyn::expectation(ex, qdyn::sigma_z());
        se_x += dx * dx;
        se_y += dy * dy;
        se_z += dz * dz;
    }
    report.mse_sx = se_x / static_cast<double>(n);
    report.mse_sy = se_y / static_cast<double>(n);
    report.mse_sz = se_z / static_cast<double>(n);

    const auto min_it = std::min_element(curve.fidelity.begin(), curve.fidelity.end());
    report.min_fidelity = *min_it;
    report.argmin_step = curve.steps[static_cast<std::size_t>(
        std::distance(curve.fidelity.begin(), min_it))];
    double sum = 0.0;
    for (double f : curve.fidelity) sum += f;
    report.mean_fidelity = sum / static_cast<double>(curve.fidelity.size());
    return report;
}

std::vector<ProbVector> window_from_series(const Tensor& series, std::int64_t begin,
                                           std::int64_t end) {
    if (series.ndim() != 2 || series.cols() != 4)
        throw ShapeMismatch("series must be [n x 4]");
    if (begin < 0 || end <= begin || end > series.rows())
        throw IndexMismatch("window rows [" + std::to_string(begin) + ", " +
                            std::to_string(end) + ") outside series of " +
                            std::to_string(series.rows()) + " rows");
    std::vector<ProbVector> out;
    out.reserve(static_cast<std::size_t>(end - begin));
    for (std::int64_t i = begin; i < end; ++i)
        out.push_back(ProbVector{series.value(i * 4 + 0), series.value(i * 4 + 1),
                                 series.value(i * 4 + 2), series.value(i * 4 + 3)});
    return out;
}

} // namespace qf::forecast
