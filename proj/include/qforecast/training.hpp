#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qforecast/povm.hpp"
#include "qforecast/qdyn.hpp"
#include "qforecast/tensor.hpp"
#include "qforecast/transformer.hpp"

// Sliding-window supervision over probability time series, Adam training of
// the forecaster, and versioned checkpoints that resume exactly.

namespace qf::training {

// A series of probability rows on a uniform time grid plus the chronological
// train/validation split of its sliding windows. Window starting at s covers
// rows [s, s+window) and is supervised by row s+window; there are
// series_rows - window such windows, split 90/10 with validation last.
struct Dataset {
    tensor::Tensor series; // [n x d_input]
    double dt = 1.0 / 240.0;
    std::int64_t window = 30;
    std::vector<std::int64_t> train_starts;
    std::vector<std::int64_t> val_starts;

    std::int64_t n_windows() const {
        return static_cast<std::int64_t>(train_starts.size() + val_starts.size());
    }
};

// SeriesTooShort unless the series has at least window+1 rows. val_fraction
// of the windows (floored) become validation; with few windows that may be
// zero, in which case training MSE doubles as the monitored metric.
Dataset make_dataset(tensor::Tensor series, double dt, std::int64_t window,
                     double val_fraction = 0.1);

// Convenience: measure every trajectory state first, then window it.
Dataset build_dataset(const qdyn::Trajectory& trajectory, const povm::PovmSet& povm,
                      std::int64_t window, double val_fraction = 0.1);

struct TrainOptions {
    std::int64_t batch_size = 64;
    std::int64_t max_epochs = 2000;
    std::int64_t patience = 100; // epochs without validation improvement before stopping
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double target_val_mse = 0.0; // stop once the monitored MSE <= this; 0 disables
    std::uint64_t seed = 1;      // shuffle stream only; model init has its own seed

    void validate() const; // ConfigError
};

// Bias-corrected Adam over a fixed list of parameter buffers:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   p <- p - lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)
class Adam {
public:
    Adam(std::vector<std::int64_t> param_sizes, double lr, double beta1, double beta2,
         double eps);

    // One update; params/grads must match the construction sizes in order.
    void step(const std::vector<double*>& params, const std::vector<const double*>& grads);

    std::int64_t step_count() const { return step_; }
    const std::vector<std::vector<double>>& m() const { return m_; }
    const std::vector<std::vector<double>>& v() const { return v_; }

    // Restores a serialized trace; sizes must match construction. ShapeMismatch otherwise.
    void set_state(std::int64_t step, std::vector<std::vector<double>> m,
                   std::vector<std::vector<double>> v);

private:
    std::vector<std::int64_t> sizes_;
    double lr_, beta1_, beta2_, eps_;
    std::int64_t step_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct EpochStats {
    std::int64_t epoch = 0; // 1-based
    double train_mse = 0.0;
    double val_mse = 0.0;
};

// Everything needed to continue a run exactly where it stopped: optimizer
// moments, shuffle generator state, best/patience bookkeeping, and the
// last-epoch weights (train() leaves the model holding the best-validation
// weights, so resuming restores last_weights first). Weight vectors are in
// parameter_refs order.
struct TrainerState {
    bool initialized = false;
    std::int64_t epochs_done = 0;
    std::int64_t best_epoch = -1; // 0 = initialization counts as best yet
    double best_val = 0.0;
    std::int64_t epochs_since_best = 0;
    std::vector<EpochStats> history;
    std::vector<std::vector<double>> best_weights;
    std::vector<std::vector<double>> last_weights;
    std::int64_t adam_step = 0;
    std::vector<std::vector<double>> adam_m, adam_v;
    std::array<std::uint64_t, 4> rng_state{};
};

struct TrainResult {
    std::vector<EpochStats> history; // full history, including any resumed prefix
    std::int64_t best_epoch = -1;
    double best_val = 0.0;
    bool reached_target = false;
    bool stopped_by_patience = false;
};

// Minimizes MSE(forward(window), next row) over shuffled mini-batches.
// Chronologically later windows are the validation set; the monitored metric
// is validation MSE (training MSE when the validation split is empty). The
// model ends holding the best-monitored weights seen. Deterministic given
// (model weights, dataset, options): identical runs produce bit-identical
// loss histories and weights, and a run interrupted through `state` continues
// as if it had never stopped.
//
// Throws DivergenceError (with epoch/batch index) if any forward or backward
// quantity stops being finite; completed epochs remain visible through
// `state` and `on_epoch`.
TrainResult train(transformer::Model& model, const Dataset& data, const TrainOptions& options,
                  TrainerState* state = nullptr,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

// Mean MSE of one-step predictions over the given window starts.
double evaluate_mse(const transformer::Model& model, const Dataset& data,
                    const std::vector<std::int64_t>& starts, std::int64_t batch_size);

// Checkpoint: versioned JSON holding the model config, named weight arrays,
// and optionally the trainer state. Doubles are serialized with
// shortest-round-trip precision, so save -> load -> forward is bit-exact.
void save_checkpoint(const std::string& path, const transformer::Model& model,
                     const TrainerState* state = nullptr);

struct Checkpoint {
    transformer::Model model;
    std::optional<TrainerState> trainer;
};

// FileError if unreadable; FormatError for wrong format_version, malformed
// JSON, missing fields, or weight shapes inconsistent with the config.
Checkpoint load_checkpoint(const std::string& path);

} // namespace qf::training
