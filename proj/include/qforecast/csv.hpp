#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qforecast/forecast.hpp"
#include "qforecast/qdyn.hpp"
#include "qforecast/tensor.hpp"
#include "qforecast/training.hpp"

// CSV writers and readers for every artifact the commands exchange. All
// floats are written with 17 significant digits, so a read-back is
// bit-exact and repeated runs produce byte-identical files.

namespace qf::csv {

// t,re_rho00,im_rho00,re_rho01,im_rho01,re_rho10,im_rho10,re_rho11,im_rho11
void write_trajectory(const std::string& path, const qdyn::Trajectory& trajectory);

// t,sx,sy,sz
void write_expectations(const std::string& path, const qdyn::Trajectory& trajectory);

// t,p0,p1,p2,p3 with t = (first_row + k) * dt.
void write_probabilities(const std::string& path, const tensor::Tensor& series, double dt,
                         std::int64_t first_row = 0);

// epoch,train_mse,val_mse
void write_loss_history(const std::string& path,
                        const std::vector<training::EpochStats>& history);

// step,fidelity
void write_fidelity_curve(const std::string& path, const forecast::FidelityCurve& curve);

// t,sx_pred,sy_pred,sz_pred,sx_exact,sy_exact,sz_exact; prediction k sits at
// t = (L-1+k) * dt against the matching exact state.
void write_prediction_expectations(const std::string& path,
                                   const forecast::RolloutResult& rollout,
                                   const qdyn::Trajectory& exact, const povm::PovmSet& povm);

// g_over_gamma,sx_pred,sy_pred,sz_pred,sx_exact,sy_exact,sz_exact,converged
void write_sweep(const std::string& path, const std::vector<forecast::SweepPoint>& table);

struct ProbabilitySeries {
    tensor::Tensor series; // [n x 4]
    double dt = 0.0;       // spacing of the t column
    double t0 = 0.0;       // first t value
};

// Reads a t,p0,p1,p2,p3 file back. FileError if unreadable; FormatError on a
// wrong header, non-numeric cells, ragged rows, or a non-uniform time grid.
ProbabilitySeries read_probabilities(const std::string& path);

} // namespace qf::csv
