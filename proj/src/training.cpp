#include "qforecast/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "qforecast/errors.hpp"
#include "qforecast/kernels.hpp"
#include "qforecast/rng.hpp"
#include "qforecast/version.hpp"

namespace qf::training {

using tensor::Tensor;
using transformer::Model;
using json = nlohmann::json;

Dataset make_dataset(Tensor series, double dt, std::int64_t window, double val_fraction) {
    if (series.ndim() != 2) throw ShapeMismatch("series must be 2-D [steps x d_input]");
    if (window < 1) throw ConfigError("window must be >= 1");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
        throw ConfigError("val_fraction must lie in [0,1)");
    const std::int64_t n = series.rows();
    if (n < window + 1)
        throw SeriesTooShort("series has " + std::to_string(n) + " rows; need at least " +
                             std::to_string(window + 1) + " for window length " +
                             std::to_string(window));

    Dataset d;
    d.series = std::move(series);
    d.dt = dt;
    d.window = window;
    const std::int64_t n_windows = n - window;
    const std::int64_t n_val =
        static_cast<std::int64_t>(static_cast<double>(n_windows) * val_fraction);
    for (std::int64_t s = 0; s < n_windows - n_val; ++s) d.train_starts.push_back(s);
    for (std::int64_t s = n_windows - n_val; s < n_windows; ++s) d.val_starts.push_back(s);
    return d;
}

Dataset build_dataset(const qdyn::Trajectory& trajectory, const povm::PovmSet& povm,
                      std::int64_t window, double val_fraction) {
    const std::int64_t n = static_cast<std::int64_t>(trajectory.states.size());
    Tensor series = Tensor::zeros({n, 4});
    double* out = series.data();
    for (std::int64_t i = 0; i < n; ++i) {
        const povm::ProbVector p =
            povm::rho_to_probs(povm, trajectory.states[static_cast<std::size_t>(i)]);
        for (std::int64_t a = 0; a < 4; ++a) out[i * 4 + a] = p[a];
    }
    return make_dataset(std::move(series), trajectory.dt, window, val_fraction);
}

void TrainOptions::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 0) throw ConfigError("epochs must be >= 0");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ConfigError("Adam betas must lie in [0,1)");
    if (!(eps > 0.0)) throw ConfigError("Adam eps must be positive");
    if (!(target_val_mse >= 0.0)) throw ConfigError("target_val_mse must be >= 0");
}

// -------------------------------------------------------------------- Adam

Adam::Adam(std::vector<std::int64_t> param_sizes, double lr, double beta1, double beta2,
           double eps)
    : sizes_(std::move(param_sizes)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(sizes_.size());
    v_.reserve(sizes_.size());
    for (auto n : sizes_) {
        m_.emplace_back(static_cast<std::size_t>(n), 0.0);
        v_.emplace_back(static_cast<std::size_t>(n), 0.0);
    }
}

void Adam::step(const std::vector<double*>& params, const std::vector<const double*>& grads) {
    if (params.size() != sizes_.size() || grads.size() != sizes_.size())
        throw ShapeMismatch("Adam step with mismatched parameter list");
    ++step_;
    const double t = static_cast<double>(step_);
    const double inv_bc1 = 1.0 / (1.0 - std::pow(beta1_, t));
    const double inv_bc2 = 1.0 / (1.0 - std::pow(beta2_, t));
    for (std::size_t i = 0; i < sizes_.size(); ++i)
        kern::ops().adam(params[i], m_[i].data(), v_[i].data(), grads[i], sizes_[i], lr_,
                         beta1_, beta2_, eps_, inv_bc1, inv_bc2);
}

void Adam::set_state(std::int64_t step, std::vector<std::vector<double>> m,
                     std::vector<std::vector<double>> v) {
    if (m.size() != sizes_.size() || v.size() != sizes_.size())
        throw ShapeMismatch("Adam state has wrong parameter count");
    for (std::size_t i = 0; i < sizes_.size(); ++i)
        if (static_cast<std::int64_t>(m[i].size()) != sizes_[i] ||
            static_cast<std::int64_t>(v[i].size()) != sizes_[i])
            throw ShapeMismatch("Adam state moment " + std::to_string(i) + " has wrong size");
    step_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
}

// ------------------------------------------------------------------- train

namespace {

void fill_batch(const Dataset& d, const std::vector<std::int64_t>& starts, std::size_t lo,
                std::size_t hi, Tensor& xb, Tensor& yb) {
    const std::int64_t L = d.window;
    const std::int64_t dm = d.series.cols();
    const double* src = d.series.data();
    for (std::size_t i = lo; i < hi; ++i) {
        const std::int64_t s = starts[i];
        const std::int64_t row = static_cast<std::int64_t>(i - lo);
        std::memcpy(xb.data() + row * L * dm, src + s * dm,
                    static_cast<std::size_t>(L * dm) * sizeof(double));
        std::memcpy(yb.data() + row * dm, src + (s + L) * dm,
                    static_cast<std::size_t>(dm) * sizeof(double));
    }
}

std::vector<std::vector<double>> snapshot(
    const std::vector<std::pair<std::string, Tensor*>>& refs) {
    std::vector<std::vector<double>> out;
    out.reserve(refs.size());
    for (const auto& [name, t] : refs)
        out.emplace_back(t->data(), t->data() + t->numel());
    return out;
}

void restore(const std::vector<std::pair<std::string, Tensor*>>& refs,
             const std::vector<std::vector<double>>& weights) {
    if (weights.size() != refs.size())
        throw ShapeMismatch("weight snapshot has wrong parameter count");
    for (std::size_t i = 0; i < refs.size(); ++i) {
        Tensor* t = refs[i].second;
        if (static_cast<std::int64_t>(weights[i].size()) != t->numel())
            throw ShapeMismatch("weight snapshot entry " + refs[i].first + " has wrong size");
        std::memcpy(t->data(), weights[i].data(), weights[i].size() * sizeof(double));
    }
}

} // namespace

double evaluate_mse(const Model& model, const Dataset& data,
                    const std::vector<std::int64_t>& starts, std::int64_t batch_size) {
    if (starts.empty()) return 0.0;
    const std::int64_t L = data.window;
    const std::int64_t dm = data.series.cols();
    double weighted = 0.0;
    for (std::size_t lo = 0; lo < starts.size();
         lo += static_cast<std::size_t>(batch_size)) {
        const std::size_t hi = std::min(starts.size(), lo + static_cast<std::size_t>(batch_size));
        const std::int64_t bs = static_cast<std::int64_t>(hi - lo);
        Tensor xb = Tensor::zeros({bs * L, dm});
        Tensor yb = Tensor::zeros({bs, dm});
        fill_batch(data, starts, lo, hi, xb, yb);
        tensor::Tape tape;
        Tensor pred = transformer::forward_windows(tape, model, xb, bs);
        weighted += tape.mse_loss(pred, yb).scalar() * static_cast<double>(bs);
    }
    return weighted / static_cast<double>(starts.size());
}

TrainResult train(Model& model, const Dataset& data, const TrainOptions& options,
                  TrainerState* state, const std::function<void(const EpochStats&)>& on_epoch) {
    options.validate();
    if (model.config.seq_len != data.window)
        throw ShapeMismatch("model window " + std::to_string(model.config.seq_len) +
                            " != dataset window " + std::to_string(data.window));
    if (model.config.d_input != data.series.cols())
        throw ShapeMismatch("model d_input != dataset feature count");
    if (data.train_starts.empty()) throw SeriesTooShort("dataset has no training windows");

    auto refs = parameter_refs(model);
    std::vector<std::int64_t> sizes;
    sizes.reserve(refs.size());
    for (const auto& [name, t] : refs) sizes.push_back(t->numel());

    TrainerState local;
    TrainerState& s = state != nullptr ? *state : local;
    Adam adam(sizes, options.lr, options.beta1, options.beta2, options.eps);
    // Shuffle stream decorrelated from the weight-init stream for equal seeds.
    std::uint64_t shuffle_seed = options.seed ^ 0x7261696e2d726e67ull;
    Rng rng(splitmix64(shuffle_seed));
    if (s.initialized) {
        restore(refs, s.last_weights);
        adam.set_state(s.adam_step, s.adam_m, s.adam_v);
        rng.set_state(s.rng_state);
    } else {
        s.initialized = true;
        s.best_val = std::numeric_limits<double>::infinity();
        s.best_epoch = -1;
    }

    const std::int64_t L = data.window;
    const std::int64_t dm = data.series.cols();
    std::vector<std::int64_t> order = data.train_starts;
    std::vector<double*> param_ptrs(refs.size());
    for (std::size_t i = 0; i < refs.size(); ++i) param_ptrs[i] = refs[i].second->data();

    TrainResult result;
    for (std::int64_t epoch = s.epochs_done + 1; epoch <= options.max_epochs; ++epoch) {
        order = data.train_starts;
        rng.shuffle(order);

        double weighted_loss = 0.0;
        for (std::size_t lo = 0; lo < order.size();
             lo += static_cast<std::size_t>(options.batch_size)) {
            const std::size_t hi =
                std::min(order.size(), lo + static_cast<std::size_t>(options.batch_size));
            const std::int64_t bs = static_cast<std::int64_t>(hi - lo);
            Tensor xb = Tensor::zeros({bs * L, dm});
            Tensor yb = Tensor::zeros({bs, dm});
            fill_batch(data, order, lo, hi, xb, yb);
            try {
                tensor::Tape tape;
                Model bound = transformer::bind(tape, model);
                Tensor pred = transformer::forward_windows(tape, bound, xb, bs);
                Tensor loss = tape.mse_loss(pred, yb);
                tape.backward(loss);
                weighted_loss += loss.scalar() * static_cast<double>(bs);

                auto bound_refs = parameter_refs(bound);
                std::vector<const double*> grad_ptrs(bound_refs.size());
                for (std::size_t i = 0; i < bound_refs.size(); ++i) {
                    const std::vector<double>* g = tape.grad_data(*bound_refs[i].second);
                    if (g == nullptr) throw NumericalError("parameter missing from tape");
                    grad_ptrs[i] = g->data();
                }
                adam.step(param_ptrs, grad_ptrs);
            } catch (const NumericalError& e) {
                throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                                      ", batch " +
                                      std::to_string(lo / static_cast<std::size_t>(
                                                              options.batch_size)) +
                                      ": " + e.what());
            }
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_mse = weighted_loss / static_cast<double>(order.size());
        stats.val_mse = data.val_starts.empty()
                            ? stats.train_mse
                            : evaluate_mse(model, data, data.val_starts, options.batch_size);
        const double monitored = stats.val_mse;
        s.history.push_back(stats);
        s.epochs_done = epoch;
        if (on_epoch) on_epoch(stats);

        if (monitored < s.best_val) {
            s.best_val = monitored;
            s.best_epoch = epoch;
            s.best_weights = snapshot(refs);
            s.epochs_since_best = 0;
        } else {
            ++s.epochs_since_best;
        }

        if (options.target_val_mse > 0.0 && monitored < options.target_val_mse) {
            result.reached_target = true;
            break;
        }
        if (s.epochs_since_best >= options.patience) {
            result.stopped_by_patience = true;
            break;
        }
    }

    s.last_weights = snapshot(refs);
    s.rng_state = rng.state();
    s.adam_step = adam.step_count();
    s.adam_m = adam.m();
    s.adam_v = adam.v();
    if (s.best_epoch >= 1 && !s.best_weights.empty()) restore(refs, s.best_weights);

    result.history = s.history;
    result.best_epoch = s.best_epoch;
    result.best_val = s.best_epoch >= 1 ? s.best_val : 0.0;
    return result;
}

// ------------------------------------------------------------- checkpoints

namespace {

const json& require(const json& j, const char* key, const char* where) {
    auto it = j.find(key);
    if (it == j.end())
        throw FormatError("checkpoint missing field \"" + std::string(key) + "\" in " + where);
    return *it;
}

std::vector<double> weights_of(const Tensor& t) {
    return std::vector<double>(t.data(), t.data() + t.numel());
}

json weight_map(const std::vector<std::pair<std::string, const Tensor*>>& refs) {
    json out = json::object();
    for (const auto& [name, t] : refs)
        out[name] = json{{"shape", t->shape()}, {"data", weights_of(*t)}};
    return out;
}

json named_arrays(const std::vector<std::pair<std::string, const Tensor*>>& refs,
                  const std::vector<std::vector<double>>& values) {
    json out = json::object();
    for (std::size_t i = 0; i < refs.size(); ++i) out[refs[i].first] = values[i];
    return out;
}

std::vector<std::vector<double>> read_named_arrays(
    const json& j, const std::vector<std::pair<std::string, Tensor*>>& refs,
    const char* where) {
    std::vector<std::vector<double>> out;
    out.reserve(refs.size());
    for (const auto& [name, t] : refs) {
        auto it = j.find(name);
        if (it == j.end())
            throw FormatError("checkpoint missing array \"" + name + "\" in " + where);
        std::vector<double> v = it->get<std::vector<double>>();
        if (static_cast<std::int64_t>(v.size()) != t->numel())
            throw FormatError("checkpoint array \"" + name + "\" in " + std::string(where) +
                              " has " + std::to_string(v.size()) + " values, expected " +
                              std::to_string(t->numel()));
        out.push_back(std::move(v));
    }
    return out;
}

} // namespace

void save_checkpoint(const std::string& path, const Model& model, const TrainerState* state) {
    const auto refs = parameter_refs(model);

    json j;
    j["format_version"] = 1;
    j["code_version"] = kVersion;
    json cfg;
    cfg["d_input"] = model.config.d_input;
    cfg["d_model"] = model.config.d_model;
    cfg["n_heads"] = model.config.n_heads;
    cfg["n_encoder_layers"] = model.config.n_encoder_layers;
    cfg["n_decoder_layers"] = model.config.n_decoder_layers;
    cfg["d_ff"] = model.config.d_ff;
    cfg["seq_len"] = model.config.seq_len;
    cfg["dropout"] = model.config.dropout;
    cfg["pe_parity"] = transformer::pe_parity_name(model.config.pe_parity);
    j["model"] = json{{"config", cfg}, {"weights", weight_map(refs)}};

    if (state != nullptr && state->initialized) {
        json ts;
        ts["epochs_done"] = state->epochs_done;
        ts["best_epoch"] = state->best_epoch;
        if (state->best_epoch >= 1) ts["best_val"] = state->best_val;
        ts["epochs_since_best"] = state->epochs_since_best;
        json hist = json::array();
        for (const auto& e : state->history)
            hist.push_back(json::array({e.epoch, e.train_mse, e.val_mse}));
        ts["history"] = std::move(hist);
        if (!state->best_weights.empty())
            ts["best_weights"] = named_arrays(refs, state->best_weights);
        ts["last_weights"] = named_arrays(refs, state->last_weights);
        ts["adam"] = json{{"step", state->adam_step},
                          {"m", named_arrays(refs, state->adam_m)},
                          {"v", named_arrays(refs, state->adam_v)}};
        ts["rng"] = state->rng_state;
        j["training"] = std::move(ts);
    } else {
        j["training"] = nullptr;
    }

    std::ofstream out(path);
    if (!out) throw FileError("cannot write checkpoint: " + path);
    out << j.dump();
    out << '\n';
    if (!out) throw FileError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot read checkpoint: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("checkpoint is not valid JSON: " + std::string(e.what()));
    }

    try {
        const std::int64_t version = require(j, "format_version", "root").get<std::int64_t>();
        if (version != 1)
            throw FormatError("unsupported checkpoint format_version " +
                              std::to_string(version) + " (this build reads version 1)");

        const json& jm = require(j, "model", "root");
        const json& jc = require(jm, "config", "model");
        transformer::ModelConfig cfg;
        cfg.d_input = require(jc, "d_input", "config").get<std::int64_t>();
        cfg.d_model = require(jc, "d_model", "config").get<std::int64_t>();
        cfg.n_heads = require(jc, "n_heads", "config").get<std::int64_t>();
        cfg.n_encoder_layers = require(jc, "n_encoder_layers", "config").get<std::int64_t>();
        cfg.n_decoder_layers = require(jc, "n_decoder_layers", "config").get<std::int64_t>();
        cfg.d_ff = require(jc, "d_ff", "config").get<std::int64_t>();
        cfg.seq_len = require(jc, "seq_len", "config").get<std::int64_t>();
        cfg.dropout = require(jc, "dropout", "config").get<double>();
        cfg.pe_parity =
            transformer::parse_pe_parity(require(jc, "pe_parity", "config").get<std::string>());
        try {
            cfg.validate();
        } catch (const ConfigError& e) {
            throw FormatError("checkpoint config invalid: " + std::string(e.what()));
        }

        Checkpoint ck{transformer::make_model(cfg, 0), std::nullopt};
        auto refs = parameter_refs(ck.model);
        const json& jw = require(jm, "weights", "model");
        for (auto& [name, t] : refs) {
            auto it = jw.find(name);
            if (it == jw.end()) throw FormatError("checkpoint missing weight \"" + name + "\"");
            const json& entry = *it;
            const auto shape = require(entry, "shape", name.c_str())
                                   .get<std::vector<std::int64_t>>();
            if (shape != t->shape())
                throw FormatError("checkpoint weight \"" + name +
                                  "\" shape disagrees with config");
            std::vector<double> values =
                require(entry, "data", name.c_str()).get<std::vector<double>>();
            if (static_cast<std::int64_t>(values.size()) != t->numel())
                throw FormatError("checkpoint weight \"" + name + "\" has wrong value count");
            *t = Tensor::from(t->shape(), std::move(values));
        }

        const json& jt = require(j, "training", "root");
        if (!jt.is_null()) {
            TrainerState ts;
            ts.initialized = true;
            ts.epochs_done = require(jt, "epochs_done", "training").get<std::int64_t>();
            ts.best_epoch = require(jt, "best_epoch", "training").get<std::int64_t>();
            ts.best_val = ts.best_epoch >= 1
                              ? require(jt, "best_val", "training").get<double>()
                              : std::numeric_limits<double>::infinity();
            ts.epochs_since_best =
                require(jt, "epochs_since_best", "training").get<std::int64_t>();
            for (const auto& row : require(jt, "history", "training")) {
                EpochStats e;
                e.epoch = row.at(0).get<std::int64_t>();
                e.train_mse = row.at(1).get<double>();
                e.val_mse = row.at(2).get<double>();
                ts.history.push_back(e);
            }
            if (jt.contains("best_weights"))
                ts.best_weights = read_named_arrays(jt["best_weights"], refs, "best_weights");
            ts.last_weights =
                read_named_arrays(require(jt, "last_weights", "training"), refs, "last_weights");
            const json& ja = require(jt, "adam", "training");
            ts.adam_step = require(ja, "step", "adam").get<std::int64_t>();
            ts.adam_m = read_named_arrays(require(ja, "m", "adam"), refs, "adam.m");
            ts.adam_v = read_named_arrays(require(ja, "v", "adam"), refs, "adam.v");
            const auto rng = require(jt, "rng", "training").get<std::vector<std::uint64_t>>();
            if (rng.size() != 4) throw FormatError("checkpoint rng state must have 4 words");
            std::copy(rng.begin(), rng.end(), ts.rng_state.begin());
            ck.trainer = std::move(ts);
        }
        return ck;
    } catch (const json::exception& e) {
        throw FormatError("checkpoint field has wrong type: " + std::string(e.what()));
    }
}

} // namespace qf::training
