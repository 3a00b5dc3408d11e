#include "qforecast/csv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "qforecast/errors.hpp"

namespace qf::csv {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FileError("cannot write " + path);
    return out;
}

void finish(std::ofstream& out, const std::string& path) {
    out.flush();
    if (!out) throw FileError("write failed: " + path);
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

double parse_cell(const std::string& cell, std::size_t line_no, const std::string& path) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(cell, &used);
    } catch (const std::exception&) {
        throw FormatError(path + ":" + std::to_string(line_no) + ": non-numeric cell \"" +
                          cell + "\"");
    }
    if (used != cell.size())
        throw FormatError(path + ":" + std::to_string(line_no) + ": trailing junk in cell \"" +
                          cell + "\"");
    return v;
}

} // namespace

void write_trajectory(const std::string& path, const qdyn::Trajectory& trajectory) {
    auto out = open_out(path);
    out << "t,re_rho00,im_rho00,re_rho01,im_rho01,re_rho10,im_rho10,re_rho11,im_rho11\n";
    for (std::size_t k = 0; k < trajectory.states.size(); ++k) {
        const qdyn::Mat2& s = trajectory.states[k];
        out << fmt(trajectory.time_at(static_cast<std::int64_t>(k)));
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                out << ',' << fmt(s(i, j).real()) << ',' << fmt(s(i, j).imag());
        out << '\n';
    }
    finish(out, path);
}

void write_expectations(const std::string& path, const qdyn::Trajectory& trajectory) {
    auto out = open_out(path);
    out << "t,sx,sy,sz\n";
    for (std::size_t k = 0; k < trajectory.states.size(); ++k) {
        const qdyn::Mat2& s = trajectory.states[k];
        out << fmt(trajectory.time_at(static_cast<std::int64_t>(k))) << ','
            << fmt(qdyn::expectation(s, qdyn::sigma_x())) << ','
            << fmt(qdyn::expectation(s, qdyn::sigma_y())) << ','
            << fmt(qdyn::expectation(s, qdyn::sigma_z())) << '\n';
    }
    finish(out, path);
}

void write_probabilities(const std::string& path, const tensor::Tensor& series, double dt,
                         std::int64_t first_row) {
    if (series.ndim() != 2 || series.cols() != 4)
        throw ShapeMismatch("probability series must be [n x 4]");
    auto out = open_out(path);
    out << "t,p0,p1,p2,p3\n";
    for (std::int64_t k = 0; k < series.rows(); ++k) {
        out << fmt(static_cast<double>(first_row + k) * dt);
        for (std::int64_t a = 0; a < 4; ++a) out << ',' << fmt(series.value(k * 4 + a));
        out << '\n';
    }
    finish(out, path);
}

void write_loss_history(const std::string& path,
                        const std::vector<training::EpochStats>& history) {
    auto out = open_out(path);
    out << "epoch,train_mse,val_mse\n";
    for (const auto& e : history)
        out << e.epoch << ',' << fmt(e.train_mse) << ',' << fmt(e.val_mse) << '\n';
    finish(out, path);
}

void write_fidelity_curve(const std::string& path, const forecast::FidelityCurve& curve) {
    auto out = open_out(path);
    out << "step,fidelity\n";
    for (std::size_t i = 0; i < curve.steps.size(); ++i)
        out << curve.steps[i] << ',' << fmt(curve.fidelity[i]) << '\n';
    finish(out, path);
}

void write_prediction_expectations(const std::string& path,
                                   const forecast::RolloutResult& rollout,
                                   const qdyn::Trajectory& exact, const povm::PovmSet& povm) {
    const std::int64_t L = static_cast<std::int64_t>(rollout.seed_window.size());
    const std::int64_t n = static_cast<std::int64_t>(rollout.predicted.size());
    if (static_cast<std::int64_t>(exact.states.size()) < L + n)
        throw IndexMismatch("exact trajectory too short for the rollout");

    auto out = open_out(path);
    out << "t,sx_pred,sy_pred,sz_pred,sx_exact,sy_exact,sz_exact\n";
    for (std::int64_t k = 1; k <= n; ++k) {
        const povm::ProbVector& p = rollout.predicted[static_cast<std::size_t>(k - 1)];
        const qdyn::Mat2& ex = exact.states[static_cast<std::size_t>(L - 1 + k)];
        out << fmt(exact.time_at(L - 1 + k)) << ','
            << fmt(povm::expectation_from_probs(povm, p, qdyn::sigma_x())) << ','
            << fmt(povm::expectation_from_probs(povm, p, qdyn::sigma_y())) << ','
            << fmt(povm::expectation_from_probs(povm, p, qdyn::sigma_z())) << ','
            << fmt(qdyn::expectation(ex, qdyn::sigma_x())) << ','
            << fmt(qdyn::expectation(ex, qdyn::sigma_y())) << ','
            << fmt(qdyn::expectation(ex, qdyn::sigma_z())) << '\n';
    }
    finish(out, path);
}

void write_sweep(const std::string& path, const std::vector<forecast::SweepPoint>& table) {
    auto out = open_out(path);
    out << "g_over_gamma,sx_pred,sy_pred,sz_pred,sx_exact,sy_exact,sz_exact,converged\n";
    for (const auto& row : table) {
        out << fmt(row.g_over_gamma);
        for (double v : row.predicted) out << ',' << fmt(v);
        for (double v : row.exact) out << ',' << fmt(v);
        out << ',' << (row.converged ? 1 : 0) << '\n';
    }
    finish(out, path);
}

ProbabilitySeries read_probabilities(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot read " + path);

    std::string line;
    if (!std::getline(in, line)) throw FormatError(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "t,p0,p1,p2,p3")
        throw FormatError(path + ": expected header \"t,p0,p1,p2,p3\", got \"" + line + "\"");

    std::vector<double> times;
    std::vector<double> values;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_line(line);
        if (cells.size() != 5)
            throw FormatError(path + ":" + std::to_string(line_no) + ": expected 5 cells, got " +
                              std::to_string(cells.size()));
        times.push_back(parse_cell(cells[0], line_no, path));
        for (int a = 1; a <= 4; ++a) values.push_back(parse_cell(cells[static_cast<std::size_t>(a)], line_no, path));
    }
    if (times.size() < 2) throw FormatError(path + ": need at least 2 data rows");

    const double dt = times[1] - times[0];
    if (!(dt > 0.0)) throw FormatError(path + ": time column must be strictly increasing");
    for (std::size_t k = 1; k < times.size(); ++k)
        if (std::abs(times[k] - times[k - 1] - dt) > 1e-9 * std::max(1.0, std::abs(times[k])))
            throw FormatError(path + ": non-uniform time grid at row " + std::to_string(k + 1));

    ProbabilitySeries out;
    out.dt = dt;
    out.t0 = times[0];
    out.series =
        tensor::Tensor::from({static_cast<std::int64_t>(times.size()), 4}, std::move(values));
    return out;
}

} // namespace qf::csv
