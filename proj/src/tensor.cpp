#include "qforecast/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <string>

#include "qforecast/errors.hpp"
#include "qforecast/kernels.hpp"
#include "qforecast/threadpool.hpp"

namespace qf::tensor {

namespace {

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

void validate_shape(const Shape& s) {
    if (s.empty() || s.size() > 2)
        throw ShapeMismatch("tensors are 1-D or 2-D, got rank " + std::to_string(s.size()));
    for (auto d : s)
        if (d < 1) throw ShapeMismatch("shape dimensions must be >= 1");
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Chunk size targeting ~0.4 MFLOP per task so the pool is only engaged when
// there is real work to split.
std::int64_t row_grain(std::int64_t flops_per_row) {
    const std::int64_t g = 400000 / std::max<std::int64_t>(1, flops_per_row);
    return std::max<std::int64_t>(1, g);
}

void pgemm_nn(double* C, std::int64_t ldc, const double* A, std::int64_t lda, const double* B,
              std::int64_t ldb, std::int64_t m, std::int64_t k, std::int64_t n, bool acc) {
    parallel_for(m, row_grain(2 * k * n), [&](std::int64_t b, std::int64_t e) {
        kern::ops().gemm_nn(C + b * ldc, ldc, A + b * lda, lda, B, ldb, e - b, k, n, acc);
    });
}

void pgemm_nt(double* C, std::int64_t ldc, const double* A, std::int64_t lda, const double* B,
              std::int64_t ldb, std::int64_t m, std::int64_t k, std::int64_t n, bool acc) {
    parallel_for(m, row_grain(2 * k * n), [&](std::int64_t b, std::int64_t e) {
        kern::ops().gemm_nt(C + b * ldc, ldc, A + b * lda, lda, B, ldb, e - b, k, n, acc);
    });
}

// Parallel over output rows = columns of A.
void pgemm_tn(double* C, std::int64_t ldc, const double* A, std::int64_t lda, const double* B,
              std::int64_t ldb, std::int64_t m, std::int64_t k, std::int64_t n, bool acc) {
    parallel_for(m, row_grain(2 * k * n), [&](std::int64_t b, std::int64_t e) {
        kern::ops().gemm_tn(C + b * ldc, ldc, A + b, lda, B, ldb, e - b, k, n, acc);
    });
}

void transpose_into(double* dst, const double* src, std::int64_t rows, std::int64_t cols) {
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

std::atomic<std::uint64_t> g_tape_counter{1};

} // namespace

// ------------------------------------------------------------------ Tensor

Tensor Tensor::zeros(const Shape& s) {
    validate_shape(s);
    Tensor t;
    t.shape_ = s;
    t.storage_ = std::make_shared<std::vector<double>>(
        static_cast<std::size_t>(shape_numel(s)), 0.0);
    return t;
}

Tensor Tensor::full(const Shape& s, double v) {
    Tensor t = zeros(s);
    std::fill(t.storage_->begin(), t.storage_->end(), v);
    return t;
}

Tensor Tensor::from(const Shape& s, std::vector<double> values) {
    validate_shape(s);
    if (static_cast<std::int64_t>(values.size()) != shape_numel(s))
        throw ShapeMismatch("value count " + std::to_string(values.size()) +
                            " does not fill shape " + shape_str(s));
    Tensor t;
    t.shape_ = s;
    t.storage_ = std::make_shared<std::vector<double>>(std::move(values));
    return t;
}

Tensor Tensor::uniform(const Shape& s, double lo, double hi, Rng& rng) {
    Tensor t = zeros(s);
    for (auto& v : *t.storage_) v = rng.uniform(lo, hi);
    return t;
}

std::int64_t Tensor::numel() const {
    return storage_ ? static_cast<std::int64_t>(storage_->size()) : 0;
}

std::int64_t Tensor::rows() const {
    if (ndim() != 2) throw ShapeMismatch("rows() on tensor of shape " + shape_str(shape_));
    return shape_[0];
}

std::int64_t Tensor::cols() const {
    if (ndim() != 2) throw ShapeMismatch("cols() on tensor of shape " + shape_str(shape_));
    return shape_[1];
}

double Tensor::scalar() const {
    if (numel() != 1) throw NotScalar("tensor of shape " + shape_str(shape_) + " is not scalar");
    return (*storage_)[0];
}

Tensor Tensor::clone() const {
    if (!defined()) return Tensor{};
    Tensor t;
    t.shape_ = shape_;
    t.storage_ = std::make_shared<std::vector<double>>(*storage_);
    return t;
}

// -------------------------------------------------------------------- Tape

Tape::Tape() : id_(g_tape_counter.fetch_add(1)) {}

int Tape::input_node(const Tensor& t) const {
    return (t.tape_id_ == id_) ? t.node_ : -1;
}

void Tape::check_finite(const Tensor& t, const char* opname) const {
    if (!kern::ops().all_finite(t.data(), t.numel()))
        throw NumericalError(std::string(opname) + " produced a non-finite value (shape " +
                             shape_str(t.shape()) + ")");
}

Tensor Tape::make_node(Shape s, const char*) {
    Tensor t = Tensor::zeros(s);
    t.tape_id_ = id_;
    t.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{std::move(s), nullptr});
    return t;
}

Tensor Tape::leaf(const Tensor& value) {
    if (!value.defined()) throw Error("leaf() on an undefined tensor");
    check_finite(value, "leaf");
    Tensor t = value; // shares storage
    t.tape_id_ = id_;
    t.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{value.shape(), nullptr});
    return t;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
        throw ShapeMismatch("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = make_node({m, n}, "matmul");
    pgemm_nn(out.data(), n, a.data(), k, b.data(), n, m, k, n, false);
    check_finite(out, "matmul");

    const int an = input_node(a), bn = input_node(b), on = out.node_;
    auto av = a.storage_, bv = b.storage_;
    nodes_[static_cast<std::size_t>(on)].bwd = [=](Tape& tp) {
        const double* gout = tp.grad_ptr(on);
        if (an >= 0) pgemm_nt(tp.grad_ptr(an), k, gout, n, bv->data(), n, m, n, k, true);
        if (bn >= 0) pgemm_tn(tp.grad_ptr(bn), n, av->data(), k, gout, n, k, m, n, true);
    };
    return out;
}

Tensor Tape::linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1 || x.cols() != w.cols() ||
        w.rows() != b.shape()[0])
        throw ShapeMismatch("linear x" + shape_str(x.shape()) + " W" + shape_str(w.shape()) +
                            " b" + shape_str(b.shape()));
    const std::int64_t m = x.rows(), k = x.cols(), n = w.rows();
    Tensor out = make_node({m, n}, "linear");
    pgemm_nt(out.data(), n, x.data(), k, w.data(), k, m, k, n, false);
    {
        double* od = out.data();
        const double* bd = b.data();
        parallel_for(m, row_grain(n), [&](std::int64_t rb, std::int64_t re) {
            for (std::int64_t i = rb; i < re; ++i)
                kern::ops().add(od + i * n, od + i * n, bd, n);
        });
    }
    check_finite(out, "linear");

    const int xn = input_node(x), wn = input_node(w), bn = input_node(b), on = out.node_;
    auto xv = x.storage_, wv = w.storage_;
    nodes_[static_cast<std::size_t>(on)].bwd = [=](Tape& tp) {
        const double* gout = tp.grad_ptr(on);
        if (xn >= 0) pgemm_nn(tp.grad_ptr(xn), k, gout, n, wv->data(), k, m, n, k, true);
        if (wn >= 0) pgemm_tn(tp.grad_ptr(wn), k, gout, n, xv->data(), k, n, m, k, true);
        if (bn >= 0) kern::ops().colsum(tp.grad_ptr(bn), gout, m, n, true);
    };
    return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    const bool same = a.shape() == b.shape();
    const bool bcast_b = a.ndim() == 2 && b.ndim() == 1 && b.shape()[0] == a.cols();
    const bool bcast_a = b.ndim() == 2 && a.ndim() == 1 && a.shape()[0] == b.cols();
    if (!same && !bcast_b && !bcast_a)
        throw ShapeMismatch("add " + shape_str(a.shape()) + " + " + shape_str(b.shape()));

    const Tensor& big = bcast_a ? b : a;
    Tensor out = make_node(big.shape(), "add");
    if (same) {
        kern::ops().add(out.data(), a.data(), b.data(), out.numel());
    } else {
        const Tensor& row = bcast_a ? a : b;
        const std::int64_t m = big.rows(), n = big.cols();
        double* od = out.data();
        const double* bigd = big.data();
        const double* rowd = row.data();
        parallel_for(m, row_grain(n), [&](std::int64_t rb, std::int64_t re) {
            for (std::int64_t i = rb; i < re; ++i)
                kern::ops().add(od + i * n, bigd + i * n, rowd, n);
        });
    }
    check_finite(out, "add");

    const int an = input_node(a), bn = input_node(b), on = out.node_;
    const std::int64_t total = out.numel();
    const std::int64_t m = same ? 0 : big.rows(), n = same ? 0 : big.cols();
    nodes_[static_cast<std::size_t>(on)].bwd = [=](Tape& tp) {
        const double* gout = tp.grad_ptr(on);
        const auto side = [&](int node, bool is_row) {
            if (node < 0) return;
            if (!is_row)
                kern::ops().axpy(tp.grad_ptr(node), 1.0, gout, total);
            else
                kern::ops().colsum(tp.grad_ptr(node), gout, m, n, true);
        };
        side(an, bcast_a);
        side(bn, bcast_b);
    };
    return out;
}

Tensor Tape::scale(const Tensor& x, double c) {
    if (!x.defined()) throw Error("scale() on an undefined tensor");
    Tensor out = make_node(x.shape(), "scale");
    kern::ops().scale(out.data(), x.data(), c, x.numel());
    check_finite(out, "scale");

    const int xn = input_node(x), on = out.node_;
    const std::int64_t total = x.numel();
    nodes_[static_cast<std::size_t>(on)].bwd = [=](Tape& tp) {
        if (xn >= 0) kern::ops().axpy(tp.grad_ptr(xn), c, tp.grad_ptr(on), total);
    };
    return out;
}

Tensor Tape::relu(const Tensor& x) {
    if (!x.defined()) throw Error("relu() on an undefined tensor");
    Tensor out = make_node(x.shape(), "relu");
    kern::ops().relu(out.data(), x.data(), x.numel());
    check_finite(out, "relu");

    const int xn = input_node(x), on = out.node_;
    const std::int64_t total = x.numel();
    auto xv = x.storage_;
    nodes_[static_cast<std::size_t>(on)].bwd = [=](Tape& tp) {
        if (xn >= 0) kern::ops().relu_bwd(tp.grad_ptr(xn), xv->data(), tp.grad_ptr(on), total);
    };
    return out;
}

Tensor Tape::softmax(const Tensor& x, int axis) {
    if (!x.defined()) throw Error("softmax() on an undefined tensor");
    const int nd = x.ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd)
        throw ShapeMismatch("softmax axis out of range for " + shape_str(x.shape()));
    const bool along_rows = (nd == 1) || axis == 1;
    const std::int64_t rows = nd == 1 ? 1 : x.rows();
    const std::int64_t cols = nd == 1 ? x.numel() : x.cols();

    Tensor out = make_node(x.shape(), "softmax");
    if (along_rows) {
        kern::ops().softmax_rows(out.data(), x.data(), rows, cols);
    } else {
        std::vector<double> tmp(static_cast<std::size_t>(x.numel()));
        std::vector<double> tmpy(static_cast<std::size_t>(x.numel()));
        transpose_into(tmp.data(), x.data(), rows, cols);
        kern::ops().softmax_rows(tmpy.data(), tmp.data(), cols, rows);
        transpose_into(out.data(), tmpy.data(), cols, rows);
    }
    check_finite(out, "softmax");

    const int xn = input_node(x), on = out.node_;
    auto yv = out.storage_;
    nodes_[static_cast<std::size_t>(on)].bwd = [=](Tape& tp) {
        if (xn < 0) return;
        const double* gout = tp.grad_ptr(on);
        if (along_rows) {
            kern::ops().softmax_rows_bwd(tp.grad_ptr(xn), yv->data(), gout, rows, cols);
        } else {
            const std::size_t total = yv->size();
            std::vector<double> yt(total), gt(total), dxt(total, 0.0);
            transpose_into(yt.data(), yv->data(), rows, cols);
            transpose_into(gt.data(), gout, rows, cols);
            kern::ops().softmax_rows_bwd(dxt.data(), yt.data(), gt.data(), cols, rows);
            double* dx = tp.grad_ptr(xn);
            for (std::int64_t i = 0; i < rows; ++i)
                for (std::int64_t j = 0; j < cols; ++j) dx[i * cols + j] += dxt[j * rows + i];
        }
    };
    return out;
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::int64_t rows = x.ndim() == 1 ? 1 : x.rows();
    const std::int64_t cols = x.ndim() == 1 ? x.numel() : x.cols();
    if (gain.ndim() != 1 || bias.ndim() != 1 || gain.shape()[0] != cols ||
        bias.shape()[0] != cols)
        throw ShapeMismatch("layer_norm x" + shape_str(x.shape()) + " gain" +
                            shape_str(gain.shape()) + " bias" + shape_str(bias.shape()));

    Tensor out = make_node(x.shape(), "layer_norm");
    auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.numel()));
    auto rstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    {
        double* od = out.data();
        const double* xd = x.data();
        const double* gd = gain.data();
        const double* bd = bias.data();
        parallel_for(rows, row_grain(8 * cols), [&](std::int64_t rb, std::int64_t re) {
            kern::ops().layernorm_rows(od + rb * cols, xhat->data() + rb * cols,
                                       rstd->data() + rb, xd + rb * cols, gd, bd, re - rb,
                                       cols, eps);
        });
    }
    check_finite(out, "layer_norm");

    const int xn = input_node(x), gn = input_node(gain), bn = input_node(bias), on = out.node_;
    auto gv = gain.storage_;
    nodes_[static_cast<std::size_t>(on)].bwd = [=](Tape& tp) {
        const double* gout = tp.grad_ptr(on);
        // dgain/dbias accumulate across all rows; single pass keeps the
        // reduction order fixed.
        std::vector<double> dg(static_cast<std::size_t>(cols), 0.0);
        std::vector<double> db(static_cast<std::size_t>(cols), 0.0);
        std::vector<double> dx_local;
        double* dx = nullptr;
        if (xn >= 0) {
            dx = tp.grad_ptr(xn);
        } else {
            dx_local.assign(static_cast<std::size_t>(rows * cols), 0.0);
            dx = dx_local.data();
        }
        kern::ops().layernorm_rows_bwd(dx, dg.data(), db.data(), xhat->data(), rstd->data(),
                                       gv->data(), gout, rows, cols);
        if (gn >= 0) kern::ops().axpy(tp.grad_ptr(gn), 1.0, dg.data(), cols);
        if (bn >= 0) kern::ops().axpy(tp.grad_ptr(bn), 1.0, db.data(), cols);
    };
    return out;
}

Tensor Tape::attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttnLayout& lay,
                       std::vector<Tensor>* probs_out) {
    if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2)
        throw ShapeMismatch("attention expects 2-D Q, K, V");
    const std::int64_t d = q.cols();
    if (k.cols() != d || v.cols() != d)
        throw ShapeMismatch("attention feature dims disagree: Q" + shape_str(q.shape()) + " K" +
                            shape_str(k.shape()) + " V" + shape_str(v.shape()));
    if (lay.n_heads < 1 || d % lay.n_heads != 0)
        throw ShapeMismatch("feature dim " + std::to_string(d) + " not divisible by " +
                            std::to_string(lay.n_heads) + " heads");
    if (q.rows() != lay.windows * lay.q_rows || k.rows() != lay.windows * lay.kv_rows ||
        v.rows() != lay.windows * lay.kv_rows)
        throw ShapeMismatch("attention row counts do not match layout");

    const std::int64_t W = lay.windows, H = lay.n_heads, qr = lay.q_rows, kr = lay.kv_rows;
    const std::int64_t dh = d / H;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::int64_t slot = qr * kr;

    Tensor out = make_node({W * qr, d}, "attention");
    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(W * H * slot));
    {
        const double* qd = q.data();
        const double* kd = k.data();
        const double* vd = v.data();
        double* od = out.data();
        double* pd = probs->data();
        parallel_for(W, row_grain(2 * H * slot * dh * 2), [&](std::int64_t wb, std::int64_t we) {
            for (std::int64_t w = wb; w < we; ++w)
                for (std::int64_t h = 0; h < H; ++h) {
                    const double* qs = qd + w * qr * d + h * dh;
                    const double* ks = kd + w * kr * d + h * dh;
                    const double* vs = vd + w * kr * d + h * dh;
                    double* ps = pd + (w * H + h) * slot;
                    kern::ops().gemm_nt(ps, kr, qs, d, ks, d, qr, dh, kr, false);
                    kern::ops().scale(ps, ps, inv_sqrt, slot);
                    kern::ops().softmax_rows(ps, ps, qr, kr);
                    kern::ops().gemm_nn(od + w * qr * d + h * dh, d, ps, kr, vs, d, qr, kr, dh,
                                        false);
                }
        });
    }
    check_finite(out, "attention");

    if (probs_out != nullptr) {
        probs_out->clear();
        for (std::int64_t i = 0; i < W * H; ++i) {
            Tensor p = Tensor::zeros({qr, kr});
            std::memcpy(p.data(), probs->data() + i * slot,
                        static_cast<std::size_t>(slot) * sizeof(double));
            probs_out->push_back(std::move(p));
        }
    }

    const int qn = input_node(q), kn = input_node(k), vn = input_node(v), on = out.node_;
    auto qv = q.storage_, kv = k.storage_, vv = v.storage_;
    nodes_[static_cast<std::size_t>(on)].bwd = [=](Tape& tp) {
        const double* gout = tp.grad_ptr(on);
        double* dq = qn >= 0 ? tp.grad_ptr(qn) : nullptr;
        double* dk = kn >= 0 ? tp.grad_ptr(kn) : nullptr;
        double* dv = vn >= 0 ? tp.grad_ptr(vn) : nullptr;
        const double* qd = qv->data();
        const double* kd = kv->data();
        const double* vd = vv->data();
        const double* pd = probs->data();
        parallel_for(W, row_grain(6 * H * slot * dh), [&](std::int64_t wb, std::int64_t we) {
            thread_local std::vector<double> dp, ds;
            dp.resize(static_cast<std::size_t>(slot));
            ds.resize(static_cast<std::size_t>(slot));
            for (std::int64_t w = wb; w < we; ++w)
                for (std::int64_t h = 0; h < H; ++h) {
                    const double* qs = qd + w * qr * d + h * dh;
                    const double* ks = kd + w * kr * d + h * dh;
                    const double* vs = vd + w * kr * d + h * dh;
                    const double* ps = pd + (w * H + h) * slot;
                    const double* gs = gout + w * qr * d + h * dh;
                    kern::ops().gemm_nt(dp.data(), kr, gs, d, vs, d, qr, dh, kr, false);
                    if (dv != nullptr)
                        kern::ops().gemm_tn(dv + w * kr * d + h * dh, d, ps, kr, gs, d, kr, qr,
                                            dh, true);
                    std::fill(ds.begin(), ds.end(), 0.0);
                    kern::ops().softmax_rows_bwd(ds.data(), ps, dp.data(), qr, kr);
                    kern::ops().scale(ds.data(), ds.data(), inv_sqrt, slot);
                    if (dq != nullptr)
                        kern::ops().gemm_nn(dq + w * qr * d + h * dh, d, ds.data(), kr, ks, d,
                                            qr, kr, dh, true);
                    if (dk != nullptr)
                        kern::ops().gemm_tn(dk + w * kr * d + h * dh, d, ds.data(), kr, qs, d,
                                            kr, qr, dh, true);
                }
        });
    };
    return out;
}

Tensor Tape::gather_rows(const Tensor& x, std::vector<std::int64_t> rows) {
    if (x.ndim() != 2) throw ShapeMismatch("gather_rows expects a 2-D tensor");
    if (rows.empty()) throw ShapeMismatch("gather_rows needs at least one row");
    const std::int64_t xr = x.rows(), n = x.cols();
    for (auto r : rows)
        if (r < 0 || r >= xr)
            throw IndexMismatch("gather_rows index " + std::to_string(r) + " outside [0, " +
                                std::to_string(xr) + ")");

    const std::int64_t m = static_cast<std::int64_t>(rows.size());
    Tensor out = make_node({m, n}, "gather_rows");
    for (std::int64_t i = 0; i < m; ++i)
        std::memcpy(out.data() + i * n, x.data() + rows[static_cast<std::size_t>(i)] * n,
                    static_cast<std::size_t>(n) * sizeof(double));
    check_finite(out, "gather_rows");

    const int xn = input_node(x), on = out.node_;
    auto idx = std::make_shared<std::vector<std::int64_t>>(std::move(rows));
    nodes_[static_cast<std::size_t>(on)].bwd = [=](Tape& tp) {
        if (xn < 0) return;
        const double* gout = tp.grad_ptr(on);
        double* dx = tp.grad_ptr(xn);
        for (std::int64_t i = 0; i < m; ++i)
            kern::ops().axpy(dx + (*idx)[static_cast<std::size_t>(i)] * n, 1.0, gout + i * n, n);
    };
    return out;
}

Tensor Tape::sum(const Tensor& x) {
    if (!x.defined()) throw Error("sum() on an undefined tensor");
    Tensor out = make_node({1}, "sum");
    out.data()[0] = kern::ops().sum(x.data(), x.numel());
    check_finite(out, "sum");

    const int xn = input_node(x), on = out.node_;
    const std::int64_t total = x.numel();
    nodes_[static_cast<std::size_t>(on)].bwd = [=](Tape& tp) {
        if (xn < 0) return;
        const double g = tp.grad_ptr(on)[0];
        double* dx = tp.grad_ptr(xn);
        for (std::int64_t i = 0; i < total; ++i) dx[i] += g;
    };
    return out;
}

Tensor Tape::mse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw ShapeMismatch("mse_loss " + shape_str(pred.shape()) + " vs " +
                            shape_str(target.shape()));
    const std::int64_t total = pred.numel();
    Tensor out = make_node({1}, "mse_loss");
    out.data()[0] = kern::ops().sq_diff_sum(pred.data(), target.data(), total) /
                    static_cast<double>(total);
    check_finite(out, "mse_loss");

    const int pn = input_node(pred), tn = input_node(target), on = out.node_;
    auto pv = pred.storage_, tv = target.storage_;
    nodes_[static_cast<std::size_t>(on)].bwd = [=](Tape& tp) {
        const double c = tp.grad_ptr(on)[0] * 2.0 / static_cast<double>(total);
        const double* p = pv->data();
        const double* t = tv->data();
        if (pn >= 0) {
            double* dp = tp.grad_ptr(pn);
            for (std::int64_t i = 0; i < total; ++i) dp[i] += c * (p[i] - t[i]);
        }
        if (tn >= 0) {
            double* dt = tp.grad_ptr(tn);
            for (std::int64_t i = 0; i < total; ++i) dt[i] -= c * (p[i] - t[i]);
        }
    };
    return out;
}

void Tape::backward(const Tensor& loss) {
    if (loss.tape_id_ != id_ || loss.node_ < 0)
        throw Error("backward() on a tensor not recorded by this tape");
    if (loss.numel() != 1)
        throw NotScalar("backward() requires a scalar, got " + shape_str(loss.shape()));
    if (backward_done_) throw Error("backward() already run on this tape");
    backward_done_ = true;

    grads_.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        grads_[i].assign(static_cast<std::size_t>(shape_numel(nodes_[i].shape)), 0.0);
    grads_[static_cast<std::size_t>(loss.node_)][0] = 1.0;

    for (std::size_t i = nodes_.size(); i-- > 0;)
        if (nodes_[i].bwd) nodes_[i].bwd(*this);
}

const std::vector<double>* Tape::grad_data(const Tensor& t) const {
    if (!backward_done_) throw Error("gradients requested before backward()");
    if (t.tape_id_ != id_ || t.node_ < 0) return nullptr;
    return &grads_[static_cast<std::size_t>(t.node_)];
}

Tensor Tape::grad(const Tensor& t) const {
    const std::vector<double>* g = grad_data(t);
    if (g == nullptr) return Tensor::zeros(t.shape());
    return Tensor::from(t.shape(), *g);
}

double grad_check(const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> params, double step) {
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        std::vector<Tensor> leaves;
        leaves.reserve(params.size());
        for (const auto& p : params) leaves.push_back(tape.leaf(p));
        Tensor loss = f(tape, leaves);
        if (loss.numel() != 1) throw NotScalar("grad_check needs a scalar function");
        tape.backward(loss);
        for (const auto& l : leaves) analytic.push_back(*tape.grad_data(l));
    }

    const auto eval = [&]() {
        Tape tape;
        std::vector<Tensor> leaves;
        leaves.reserve(params.size());
        for (const auto& p : params) leaves.push_back(tape.leaf(p));
        return f(tape, leaves).scalar();
    };

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        double* data = params[pi].data();
        for (std::int64_t j = 0; j < params[pi].numel(); ++j) {
            const double orig = data[j];
            data[j] = orig + step;
            const double lp = eval();
            data[j] = orig - step;
            const double lm = eval();
            data[j] = orig;
            const double numeric = (lp - lm) / (2.0 * step);
            const double exact = analytic[pi][static_cast<std::size_t>(j)];
            const double rel = std::abs(numeric - exact) /
                               std::max({std::abs(numeric), std::abs(exact), 1e-6});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

} // namespace qf::tensor
