#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qforecast/forecast.hpp"
#include "qforecast/qdyn.hpp"
#include "qforecast/training.hpp"
#include "qforecast/transformer.hpp"

// Experiment configuration: one strict JSON document shared by every command.
// Unknown keys are fatal, so a typo in a physics parameter cannot silently
// fall back to a default.

namespace qf::config {

struct ExperimentConfig {
    // physics
    double gamma = 0.5;
    double g = 1.0;
    qdyn::Axis hamiltonian_axis = qdyn::Axis::Z;
    std::string initial_state_name = "plus"; // named state, or "bloch" with the vector below
    qdyn::BlochVector initial_state{1.0, 0.0, 0.0};
    double dt = 1.0 / 240.0;
    double horizon_units = 10.0;

    // model (seq_len is the config key "L")
    transformer::ModelConfig model;

    // training
    training::TrainOptions train;
    std::uint64_t seed = 1;

    // rollout / evaluation
    std::int64_t n_steps = 120;
    std::string checkpoint;      // consumed by predict/evaluate, produced by train
    std::string predictions_csv; // evaluate may score an existing file instead of rolling out

    // sweep
    std::vector<double> sweep_grid{0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0};
    std::int64_t sweep_seed_begin = 30;
    std::int64_t sweep_seed_end = 60;
    forecast::ConvergenceOptions convergence;

    std::string out_dir = "out";

    std::int64_t trajectory_steps() const; // horizon_units / dt, rounded
    qdyn::LindbladModel physics() const;
    void validate() const; // ConfigError naming the offending field
};

// Parses a JSON config document. Every key is optional (defaults above), but
// unknown keys, type errors, and out-of-range values raise ConfigError naming
// the key. "dt" and "samples_per_unit" are mutually exclusive spellings of the
// grid spacing. FileError if the file cannot be read; FormatError if it is
// not JSON at all.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& text, const std::string& origin);

// Canonical JSON echo of the effective configuration: every accepted key with
// its effective value, keys sorted. Feeding this back through parse_config
// reproduces the same configuration, which is what makes run manifests
// self-contained.
std::string canonical_json(const ExperimentConfig& config);

// FNV-1a 64-bit hash, used to fingerprint canonical configs in manifests.
std::uint64_t fnv1a64(const std::string& text);

} // namespace qf::config
