// qforecast: simulate single-qubit open dynamics, train the forecaster on the
// measured probability series, and reproduce the rollout and steady-state
// experiments. Every command reads one JSON config, writes CSV artifacts plus
// a manifest into the output directory, and is byte-for-byte reproducible
// given the same config and seed.

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "qforecast/config.hpp"
#include "qforecast/csv.hpp"
#include "qforecast/errors.hpp"
#include "qforecast/forecast.hpp"
#include "qforecast/kernels.hpp"
#include "qforecast/povm.hpp"
#include "qforecast/qdyn.hpp"
#include "qforecast/tensor.hpp"
#include "qforecast/threadpool.hpp"
#include "qforecast/training.hpp"
#include "qforecast/transformer.hpp"
#include "qforecast/version.hpp"

namespace fs = std::filesystem;
using namespace qf;

namespace {

std::string g17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string out_path(const config::ExperimentConfig& cfg, const char* name) {
    return (fs::path(cfg.out_dir) / name).string();
}

void ensure_out_dir(const config::ExperimentConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw FileError("cannot create output directory " + cfg.out_dir + ": " + ec.message());
}

void write_manifest(const config::ExperimentConfig& cfg, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& extra = {}) {
    const std::string canon = config::canonical_json(cfg);
    nlohmann::json doc;
    doc["command"] = command;
    doc["config"] = nlohmann::json::parse(canon);
    char hex[24];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(config::fnv1a64(canon)));
    doc["config_hash"] = std::string("fnv1a64:") + hex;
    doc["seed"] = cfg.seed;
    doc["code_version"] = kVersion;
    for (const auto& [k, v] : extra) doc[k] = v;
    const std::string path = out_path(cfg, "manifest.json");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileError("cannot write " + path);
    out << doc.dump(2) << '\n';
    if (!out) throw FileError("failed while writing " + path);
    std::printf("wrote: %s\n", path.c_str());
}

tensor::Tensor probs_tensor(const std::vector<povm::ProbVector>& rows) {
    auto t = tensor::Tensor::zeros({static_cast<std::int64_t>(rows.size()), 4});
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i].p.begin(), rows[i].p.end(), t.data() + 4 * i);
    return t;
}

std::string checkpoint_path(const config::ExperimentConfig& cfg) {
    return cfg.checkpoint.empty() ? out_path(cfg, "checkpoint.json") : cfg.checkpoint;
}

void cmd_simulate(const config::ExperimentConfig& cfg) {
    ensure_out_dir(cfg);
    const auto phys = cfg.physics();
    const auto rho0 = qdyn::from_bloch(cfg.initial_state);
    const auto traj = qdyn::evolve_rk4(phys, rho0, cfg.dt, cfg.trajectory_steps());
    const auto povm = povm::PovmSet::tetrahedral();
    const auto probs = povm::trajectory_probs(povm, traj);

    const auto final_bloch = qdyn::bloch(traj.states.back());
    const double purity0 = qdyn::purity(traj.states.front());
    const double purity1 = qdyn::purity(traj.states.back());
    std::printf("steps: %lld\n", static_cast<long long>(traj.n_steps()));
    std::printf("dt: %s\n", g17(traj.dt).c_str());
    std::printf("final_bloch: %s %s %s\n", g17(final_bloch[0]).c_str(),
                g17(final_bloch[1]).c_str(), g17(final_bloch[2]).c_str());
    std::printf("purity_initial: %s\n", g17(purity0).c_str());
    std::printf("purity_final: %s\n", g17(purity1).c_str());
    std::printf("purity_drift: %s\n", g17(std::abs(purity1 - purity0)).c_str());
    try {
        const auto steady = qdyn::steady_state(phys);
        const auto sb = qdyn::bloch(steady);
        double d2 = 0.0;
        for (int i = 0; i < 3; ++i) d2 += (final_bloch[i] - sb[i]) * (final_bloch[i] - sb[i]);
        std::printf("steady_distance: %s\n", g17(std::sqrt(d2)).c_str());
    } catch (const UnsupportedModel&) {
        std::printf("steady_state: undefined (gamma <= 0, dynamics are unitary)\n");
    } catch (const DegenerateSteadyState&) {
        std::printf("steady_state: degenerate (not unique)\n");
    }
    std::printf("max_trace_drift: %s\n", g17(traj.max_trace_drift).c_str());

    csv::write_trajectory(out_path(cfg, "trajectory.csv"), traj);
    std::printf("wrote: %s\n", out_path(cfg, "trajectory.csv").c_str());
    csv::write_expectations(out_path(cfg, "expectations.csv"), traj);
    std::printf("wrote: %s\n", out_path(cfg, "expectations.csv").c_str());
    csv::write_probabilities(out_path(cfg, "probabilities.csv"), probs_tensor(probs), traj.dt);
    std::printf("wrote: %s\n", out_path(cfg, "probabilities.csv").c_str());
    write_manifest(cfg, "simulate");
}

void cmd_train(const config::ExperimentConfig& cfg, const std::string& data_csv, bool resume) {
    ensure_out_dir(cfg);
    const auto povm = povm::PovmSet::tetrahedral();
    const std::string ck_path = checkpoint_path(cfg);

    transformer::Model model;
    training::TrainerState state;
    if (resume) {
        auto ck = training::load_checkpoint(ck_path);
        if (!ck.trainer)
            throw FormatError("checkpoint " + ck_path + " has no trainer state to resume from");
        model = ck.model;
        state = *ck.trainer;
    } else {
        model = transformer::make_model(cfg.model, cfg.seed);
    }

    training::Dataset data;
    if (!data_csv.empty()) {
        const auto ps = csv::read_probabilities(data_csv);
        data = training::make_dataset(ps.series, ps.dt, model.config.seq_len);
    } else {
        const auto traj = qdyn::evolve_rk4(cfg.physics(), qdyn::from_bloch(cfg.initial_state),
                                           cfg.dt, cfg.trajectory_steps());
        data = training::build_dataset(traj, povm, model.config.seq_len);
    }
    std::printf("windows: %lld (train %zu, val %zu)\n",
                static_cast<long long>(data.n_windows()), data.train_starts.size(),
                data.val_starts.size());

    const std::string loss_path = out_path(cfg, "loss.csv");
    std::vector<training::EpochStats> history = state.history;
    const auto on_epoch = [&](const training::EpochStats& s) {
        history.push_back(s);
        csv::write_loss_history(loss_path, history);
        if (s.epoch % 25 == 0 || s.epoch == 1)
            std::printf("epoch %lld: train_mse %s val_mse %s\n",
                        static_cast<long long>(s.epoch), g17(s.train_mse).c_str(),
                        g17(s.val_mse).c_str());
    };

    const auto result = training::train(model, data, cfg.train, &state, on_epoch);
    csv::write_loss_history(loss_path, result.history);
    std::printf("wrote: %s\n", loss_path.c_str());
    training::save_checkpoint(ck_path, model, &state);
    std::printf("wrote: %s\n", ck_path.c_str());

    std::printf("epochs_run: %lld\n", static_cast<long long>(state.epochs_done));
    if (result.best_epoch >= 1) {
        std::printf("best_epoch: %lld\n", static_cast<long long>(result.best_epoch));
        std::printf("best_val_mse: %s\n", g17(result.best_val).c_str());
    } else {
        std::printf("best_epoch: none\n");
    }
    std::printf("stopped: %s\n", result.reached_target        ? "target reached"
                                 : result.stopped_by_patience ? "patience exhausted"
                                                              : "epoch budget");
    write_manifest(cfg, "train");
}

void print_report(const forecast::EvalReport& report, std::int64_t n_steps, FILE* to) {
    std::fprintf(to, "horizon: %s\n", forecast::horizon_name(report.horizon));
    std::fprintf(to, "steps: %lld\n", static_cast<long long>(n_steps));
    std::fprintf(to, "mse_sx: %s\n", g17(report.mse_sx).c_str());
    std::fprintf(to, "mse_sy: %s\n", g17(report.mse_sy).c_str());
    std::fprintf(to, "mse_sz: %s\n", g17(report.mse_sz).c_str());
    std::fprintf(to, "mean_fidelity: %s\n", g17(report.mean_fidelity).c_str());
    std::fprintf(to, "min_fidelity: %s\n", g17(report.min_fidelity).c_str());
    std::fprintf(to, "argmin_step: %lld\n", static_cast<long long>(report.argmin_step));
}

// Shared tail of predict/evaluate: score the rollout against the exact
// trajectory and emit curves, report, and manifest.
void score_and_write(const config::ExperimentConfig& cfg, const std::string& command,
                     const forecast::RolloutResult& roll, const qdyn::Trajectory& traj,
                     const povm::PovmSet& povm) {
    const auto curve = forecast::fidelity_curve(roll, traj, povm);
    const auto report = forecast::evaluate_rollout(roll, traj, povm);
    const auto n_steps = static_cast<std::int64_t>(roll.predicted.size());

    csv::write_fidelity_curve(out_path(cfg, "fidelity.csv"), curve);
    std::printf("wrote: %s\n", out_path(cfg, "fidelity.csv").c_str());
    csv::write_prediction_expectations(out_path(cfg, "predicted_expectations.csv"), roll, traj,
                                       povm);
    std::printf("wrote: %s\n", out_path(cfg, "predicted_expectations.csv").c_str());

    const std::string report_path = out_path(cfg, "report.txt");
    FILE* rf = std::fopen(report_path.c_str(), "wb");
    if (!rf) throw FileError("cannot write " + report_path);
    print_report(report, n_steps, rf);
    std::fclose(rf);
    std::printf("wrote: %s\n", report_path.c_str());

    print_report(report, n_steps, stdout);
    write_manifest(cfg, command,
                   {{"horizon_kind", forecast::horizon_name(report.horizon)}});
}

void cmd_predict(const config::ExperimentConfig& cfg) {
    ensure_out_dir(cfg);
    const auto ck = training::load_checkpoint(checkpoint_path(cfg));
    const auto& model = ck.model;
    const std::int64_t window = model.config.seq_len;
    const auto povm = povm::PovmSet::tetrahedral();

    const auto traj = qdyn::evolve_rk4(cfg.physics(), qdyn::from_bloch(cfg.initial_state),
                                       cfg.dt, window + cfg.n_steps - 1);
    const auto probs = povm::trajectory_probs(povm, traj);
    const std::vector<povm::ProbVector> seed(probs.begin(), probs.begin() + window);
    const auto roll = forecast::rollout(model, seed, cfg.n_steps);

    std::vector<povm::ProbVector> full = roll.seed_window;
    full.insert(full.end(), roll.predicted.begin(), roll.predicted.end());
    csv::write_probabilities(out_path(cfg, "predictions.csv"), probs_tensor(full), cfg.dt);
    std::printf("wrote: %s\n", out_path(cfg, "predictions.csv").c_str());

    score_and_write(cfg, "predict", roll, traj, povm);
}

void cmd_evaluate(const config::ExperimentConfig& cfg) {
    ensure_out_dir(cfg);
    const auto povm = povm::PovmSet::tetrahedral();

    forecast::RolloutResult roll;
    double dt = cfg.dt;
    std::int64_t window = cfg.model.seq_len;
    if (!cfg.predictions_csv.empty()) {
        const auto ps = csv::read_probabilities(cfg.predictions_csv);
        if (std::abs(ps.t0) > 1e-12)
            throw FormatError(cfg.predictions_csv + ": predictions must start at t = 0");
        const std::int64_t rows = ps.series.rows();
        if (rows < window + 1)
            throw SeriesTooShort(cfg.predictions_csv + ": need at least " +
                                 std::to_string(window + 1) + " rows (L seed rows + predictions)");
        roll.seed_window = forecast::window_from_series(ps.series, 0, window);
        roll.predicted = forecast::window_from_series(ps.series, window, rows);
        roll.horizon = forecast::classify_horizon(rows - window, window);
        dt = ps.dt;
    } else {
        const auto ck = training::load_checkpoint(checkpoint_path(cfg));
        window = ck.model.config.seq_len;
        const auto warm = qdyn::evolve_rk4(cfg.physics(), qdyn::from_bloch(cfg.initial_state),
                                           cfg.dt, window - 1);
        const auto probs = povm::trajectory_probs(povm, warm);
        roll = forecast::rollout(ck.model, probs, cfg.n_steps);
    }

    const auto n_steps = static_cast<std::int64_t>(roll.predicted.size());
    const auto traj = qdyn::evolve_rk4(cfg.physics(), qdyn::from_bloch(cfg.initial_state), dt,
                                       window + n_steps - 1);
    score_and_write(cfg, "evaluate", roll, traj, povm);
}

void cmd_sweep(const config::ExperimentConfig& cfg) {
    ensure_out_dir(cfg);
    forecast::SweepOptions so;
    so.dt = cfg.dt;
    so.trajectory_steps = cfg.trajectory_steps();
    so.seed_begin = cfg.sweep_seed_begin;
    so.seed_end = cfg.sweep_seed_end;
    so.model = cfg.model;
    so.model_seed = cfg.seed;
    so.train = cfg.train;
    so.convergence = cfg.convergence;
    if (so.seed_end - so.seed_begin != so.model.seq_len)
        throw ConfigError("config key \"sweep_seed_end\": seed window length " +
                          std::to_string(so.seed_end - so.seed_begin) + " must equal L = " +
                          std::to_string(so.model.seq_len));

    const auto table = forecast::steady_state_sweep(so, cfg.sweep_grid, [](const auto& pt) {
        std::printf("g/gamma %s: predicted %s %s %s exact %s %s %s converged %s\n",
                    g17(pt.g_over_gamma).c_str(), g17(pt.predicted[0]).c_str(),
                    g17(pt.predicted[1]).c_str(), g17(pt.predicted[2]).c_str(),
                    g17(pt.exact[0]).c_str(), g17(pt.exact[1]).c_str(), g17(pt.exact[2]).c_str(),
                    pt.converged ? "yes" : "no");
        std::fflush(stdout);
    });

    double max_err = 0.0;
    std::int64_t n_converged = 0;
    for (const auto& pt : table) {
        for (int i = 0; i < 3; ++i)
            max_err = std::max(max_err, std::abs(pt.predicted[i] - pt.exact[i]));
        n_converged += pt.converged ? 1 : 0;
    }
    std::printf("max_abs_error: %s\n", g17(max_err).c_str());
    std::printf("converged: %lld/%zu\n", static_cast<long long>(n_converged), table.size());

    csv::write_sweep(out_path(cfg, "sweep.csv"), table);
    std::printf("wrote: %s\n", out_path(cfg, "sweep.csv").c_str());
    write_manifest(cfg, "sweep");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"single-qubit open-dynamics forecasting"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint, data_csv, predictions_csv;
    std::uint64_t seed = 0;
    int threads = 0;
    bool resume = false;

    app.add_option("--config", config_path, "JSON experiment config (defaults apply if omitted)");
    auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
    app.add_option("--threads", threads, "worker threads (default: all cores)")
        ->check(CLI::PositiveNumber);
    app.add_option("--out", out_dir, "override the config output directory");

    auto* sim = app.add_subcommand("simulate", "integrate the master equation, write CSVs");
    auto* tr = app.add_subcommand("train", "fit the forecaster, write checkpoint + loss history");
    tr->add_option("--data", data_csv, "probability CSV to train on (default: simulate)");
    tr->add_flag("--resume", resume, "continue from the checkpoint's trainer state");
    auto* pr = app.add_subcommand("predict", "autoregressive rollout from a checkpoint");
    auto* ev = app.add_subcommand("evaluate", "score predictions against the exact trajectory");
    ev->add_option("--predictions", predictions_csv,
                   "probability CSV to score (default: roll out from the checkpoint)");
    auto* sw = app.add_subcommand("sweep", "steady-state sweep over the g/gamma grid");
    for (auto* s : {sim, tr, pr, ev, sw}) s->fallthrough();
    for (auto* s : {tr, pr, ev})
        s->add_option("--checkpoint", checkpoint, "checkpoint path (default: <out>/checkpoint.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        config::ExperimentConfig cfg =
            config_path.empty() ? config::parse_config("{}", "<defaults>")
                                : config::load_config(config_path);
        if (seed_opt->count() > 0) {
            cfg.seed = seed;
            cfg.train.seed = seed;
        }
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
        if (!predictions_csv.empty()) cfg.predictions_csv = predictions_csv;
        set_worker_threads(threads);

        if (sim->parsed()) cmd_simulate(cfg);
        else if (tr->parsed()) cmd_train(cfg, data_csv, resume);
        else if (pr->parsed()) cmd_predict(cfg);
        else if (ev->parsed()) cmd_evaluate(cfg);
        else cmd_sweep(cfg);
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return 2;
    } catch (const FileError& e) {
        std::fprintf(stderr, "file error: %s\n", e.what());
        return 4;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 3;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 3;
    } catch (const StepSizeError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 3;
    } catch (const InvalidState& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 3;
    } catch (const DegenerateSteadyState& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 3;
    } catch (const UnsupportedModel& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 1;
    }
}
