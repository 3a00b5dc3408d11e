#include "qforecast/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "qforecast/errors.hpp"

namespace qf::config {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& what) {
    throw ConfigError("config key \"" + key + "\": " + what);
}

double want_number(const json& v, const std::string& key) {
    if (!v.is_number()) bad(key, "expected a number, got " + std::string(v.type_name()));
    return v.get<double>();
}

std::int64_t want_int(const json& v, const std::string& key) {
    if (!v.is_number_integer()) bad(key, "expected an integer, got " + std::string(v.type_name()));
    return v.get<std::int64_t>();
}

std::uint64_t want_uint(const json& v, const std::string& key) {
    if (!v.is_number_integer()) bad(key, "expected an integer, got " + std::string(v.type_name()));
    if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
        bad(key, "must be non-negative");
    return v.get<std::uint64_t>();
}

std::string want_string(const json& v, const std::string& key) {
    if (!v.is_string()) bad(key, "expected a string, got " + std::string(v.type_name()));
    return v.get<std::string>();
}

qdyn::Axis parse_axis(const std::string& name) {
    if (name == "z" || name == "Z") return qdyn::Axis::Z;
    if (name == "x" || name == "X") return qdyn::Axis::X;
    bad("hamiltonian_axis", "unknown axis \"" + name + "\" (expected \"z\" or \"x\")");
}

std::string axis_name(qdyn::Axis axis) { return axis == qdyn::Axis::Z ? "z" : "x"; }

} // namespace

std::int64_t ExperimentConfig::trajectory_steps() const {
    return static_cast<std::int64_t>(std::llround(horizon_units / dt));
}

qdyn::LindbladModel ExperimentConfig::physics() const {
    return qdyn::LindbladModel{gamma, g, hamiltonian_axis};
}

void ExperimentConfig::validate() const {
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) bad("gamma", "must be finite and >= 0");
    if (!std::isfinite(g)) bad("g", "must be finite");
    if (!(dt > 0.0) || !std::isfinite(dt)) bad("dt", "must be finite and > 0");
    if (!(horizon_units > 0.0) || !std::isfinite(horizon_units))
        bad("horizon_units", "must be finite and > 0");
    if (trajectory_steps() < 1) bad("horizon_units", "horizon shorter than one step");
    double norm2 = 0.0;
    for (double c : initial_state) {
        if (!std::isfinite(c)) bad("initial_state", "components must be finite");
        norm2 += c * c;
    }
    if (norm2 > 1.0 + 1e-9) bad("initial_state", "Bloch vector must satisfy |r| <= 1");
    model.validate();
    train.validate();
    if (n_steps < 1) bad("n_steps", "must be >= 1");
    if (sweep_grid.empty()) bad("sweep_grid", "must be non-empty");
    for (double r : sweep_grid)
        if (!(r >= 0.0) || !std::isfinite(r)) bad("sweep_grid", "ratios must be finite and >= 0");
    if (sweep_seed_begin < 0) bad("sweep_seed_begin", "must be >= 0");
    if (sweep_seed_end <= sweep_seed_begin) bad("sweep_seed_end", "must exceed sweep_seed_begin");
    if (!(convergence.tv_threshold > 0.0)) bad("tv_threshold", "must be > 0");
    if (convergence.run_length < 1) bad("tv_run_length", "must be >= 1");
    if (convergence.step_cap < convergence.run_length)
        bad("step_cap", "must be >= tv_run_length");
    if (out_dir.empty()) bad("out_dir", "must be non-empty");
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(origin + ": not valid JSON: " + e.what());
    }
    if (!doc.is_object()) throw FormatError(origin + ": config root must be a JSON object");

    ExperimentConfig cfg;
    bool saw_dt = false;
    bool saw_spu = false;

    for (const auto& [key, v] : doc.items()) {
        if (key == "gamma") {
            cfg.gamma = want_number(v, key);
        } else if (key == "g") {
            cfg.g = want_number(v, key);
        } else if (key == "hamiltonian_axis") {
            cfg.hamiltonian_axis = parse_axis(want_string(v, key));
        } else if (key == "initial_state") {
            if (v.is_string()) {
                const std::string name = v.get<std::string>();
                auto r = qdyn::named_state_bloch(name);
                if (!r) bad(key, "unknown state name \"" + name + "\"");
                cfg.initial_state_name = name;
                cfg.initial_state = *r;
            } else if (v.is_array() && v.size() == 3) {
                for (int i = 0; i < 3; ++i) cfg.initial_state[i] = want_number(v[i], key);
                cfg.initial_state_name = "bloch";
            } else {
                bad(key, "expected a state name or a 3-element Bloch vector");
            }
        } else if (key == "dt") {
            cfg.dt = want_number(v, key);
            saw_dt = true;
        } else if (key == "samples_per_unit") {
            double spu = want_number(v, key);
            if (!(spu > 0.0)) bad(key, "must be > 0");
            cfg.dt = 1.0 / spu;
            saw_spu = true;
        } else if (key == "horizon_units") {
            cfg.horizon_units = want_number(v, key);
        } else if (key == "L") {
            cfg.model.seq_len = want_int(v, key);
        } else if (key == "d_model") {
            cfg.model.d_model = want_int(v, key);
        } else if (key == "n_heads") {
            cfg.model.n_heads = want_int(v, key);
        } else if (key == "d_ff") {
            cfg.model.d_ff = want_int(v, key);
        } else if (key == "n_encoder_layers") {
            cfg.model.n_encoder_layers = want_int(v, key);
        } else if (key == "n_decoder_layers") {
            cfg.model.n_decoder_layers = want_int(v, key);
        } else if (key == "dropout") {
            cfg.model.dropout = want_number(v, key);
        } else if (key == "pe_parity") {
            cfg.model.pe_parity = transformer::parse_pe_parity(want_string(v, key));
        } else if (key == "lr") {
            cfg.train.lr = want_number(v, key);
        } else if (key == "batch_size") {
            cfg.train.batch_size = want_int(v, key);
        } else if (key == "epochs") {
            cfg.train.max_epochs = want_int(v, key);
        } else if (key == "patience") {
            cfg.train.patience = want_int(v, key);
        } else if (key == "target_val_mse") {
            cfg.train.target_val_mse = want_number(v, key);
        } else if (key == "seed") {
            cfg.seed = want_uint(v, key);
        } else if (key == "n_steps") {
            cfg.n_steps = want_int(v, key);
        } else if (key == "checkpoint") {
            cfg.checkpoint = want_string(v, key);
        } else if (key == "predictions_csv") {
            cfg.predictions_csv = want_string(v, key);
        } else if (key == "sweep_grid") {
            if (!v.is_array()) bad(key, "expected an array of ratios");
            cfg.sweep_grid.clear();
            for (const auto& r : v) cfg.sweep_grid.push_back(want_number(r, key));
        } else if (key == "sweep_seed_begin") {
            cfg.sweep_seed_begin = want_int(v, key);
        } else if (key == "sweep_seed_end") {
            cfg.sweep_seed_end = want_int(v, key);
        } else if (key == "tv_threshold") {
            cfg.convergence.tv_threshold = want_number(v, key);
        } else if (key == "tv_run_length") {
            cfg.convergence.run_length = want_int(v, key);
        } else if (key == "step_cap") {
            cfg.convergence.step_cap = want_int(v, key);
        } else if (key == "out_dir") {
            cfg.out_dir = want_string(v, key);
        } else {
            throw ConfigError("unknown config key \"" + key + "\"");
        }
    }
    if (saw_dt && saw_spu)
        throw ConfigError("config keys \"dt\" and \"samples_per_unit\" are mutually exclusive");

    cfg.train.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileError("cannot read config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path);
}

std::string canonical_json(const ExperimentConfig& config) {
    json doc;
    doc["gamma"] = config.gamma;
    doc["g"] = config.g;
    doc["hamiltonian_axis"] = axis_name(config.hamiltonian_axis);
    if (config.initial_state_name == "bloch") {
        doc["initial_state"] =
            json::array({config.initial_state[0], config.initial_state[1], config.initial_state[2]});
    } else {
        doc["initial_state"] = config.initial_state_name;
    }
    doc["dt"] = config.dt;
    doc["horizon_units"] = config.horizon_units;
    doc["L"] = config.model.seq_len;
    doc["d_model"] = config.model.d_model;
    doc["n_heads"] = config.model.n_heads;
    doc["d_ff"] = config.model.d_ff;
    doc["n_encoder_layers"] = config.model.n_encoder_layers;
    doc["n_decoder_layers"] = config.model.n_decoder_layers;
    doc["dropout"] = config.model.dropout;
    doc["pe_parity"] = transformer::pe_parity_name(config.model.pe_parity);
    doc["lr"] = config.train.lr;
    doc["batch_size"] = config.train.batch_size;
    doc["epochs"] = config.train.max_epochs;
    doc["patience"] = config.train.patience;
    doc["target_val_mse"] = config.train.target_val_mse;
    doc["seed"] = config.seed;
    doc["n_steps"] = config.n_steps;
    doc["checkpoint"] = config.checkpoint;
    doc["predictions_csv"] = config.predictions_csv;
    doc["sweep_grid"] = config.sweep_grid;
    doc["sweep_seed_begin"] = config.sweep_seed_begin;
    doc["sweep_seed_end"] = config.sweep_seed_end;
    doc["tv_threshold"] = config.convergence.tv_threshold;
    doc["tv_run_length"] = config.convergence.run_length;
    doc["step_cap"] = config.convergence.step_cap;
    doc["out_dir"] = config.out_dir;
    return doc.dump(2);
}

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace qf::config
