#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "qforecast/rng.hpp"

namespace qf::tensor {

using Shape = std::vector<std::int64_t>;

// Dense 64-bit float tensor (1-D or 2-D). Handles share storage; clone()
// deep-copies. A tensor returned by a Tape op (or registered via
// Tape::leaf) also carries the tape node id used for gradient lookup.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& s);
    static Tensor full(const Shape& s, double v);
    static Tensor from(const Shape& s, std::vector<double> values);
    static Tensor uniform(const Shape& s, double lo, double hi, Rng& rng);

    const Shape& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    std::int64_t numel() const;
    std::int64_t rows() const; // 2-D only
    std::int64_t cols() const;

    double* data() { return storage_->data(); }
    const double* data() const { return storage_->data(); }
    double& at(std::int64_t r, std::int64_t c) { return storage_->at(
        static_cast<std::size_t>(r * cols() + c)); }
    double value(std::int64_t flat) const { return storage_->at(static_cast<std::size_t>(flat)); }
    double scalar() const; // NotScalar unless numel() == 1

    Tensor clone() const;
    bool defined() const { return static_cast<bool>(storage_); }

    int node() const { return node_; }

private:
    friend class Tape;
    Shape shape_;
    std::shared_ptr<std::vector<double>> storage_;
    std::uint64_t tape_id_ = 0;
    int node_ = -1;
};

// Window-block structure of a batched attention call: row ranges
// [w*q_rows, (w+1)*q_rows) of Q attend to rows [w*kv_rows, (w+1)*kv_rows)
// of K/V, independently per window, per head.
struct AttnLayout {
    std::int64_t n_heads = 1;
    std::int64_t windows = 1;
    std::int64_t q_rows = 1;
    std::int64_t kv_rows = 1;
};

// Define-by-run gradient tape. Each op validates shapes, checks its output
// for NaN/Inf (NumericalError), and registers a backward closure. backward()
// may be called once, on a scalar.
class Tape {
public:
    Tape();

    // Registers a differentiable input; shares the value's storage.
    Tensor leaf(const Tensor& value);

    // C = A B, 2-D.
    Tensor matmul(const Tensor& a, const Tensor& b);
    // y = x W^T + b with x [m,k], W [n,k], b [n].
    Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
    // Same shape, or broadcast of a 1-D row over the rows of a 2-D tensor.
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor scale(const Tensor& x, double c);
    Tensor relu(const Tensor& x);
    // axis: -1 for last; 2-D supports axis 0 (down columns) and 1 (along rows).
    Tensor softmax(const Tensor& x, int axis);
    Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                      double eps = 1e-5);
    // Scaled dot-product attention over window blocks, all heads at once:
    // per window and head, softmax(Q K^T / sqrt(head_dim)) V; head outputs
    // occupy their column block (concatenation is implicit). probs_out, if
    // given, receives the windows*heads attention weight matrices.
    Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttnLayout& lay,
                     std::vector<Tensor>* probs_out = nullptr);
    Tensor gather_rows(const Tensor& x, std::vector<std::int64_t> rows);
    Tensor sum(const Tensor& x);
    Tensor mse_loss(const Tensor& pred, const Tensor& target);

    void backward(const Tensor& loss);
    // Gradient of the backward() loss w.r.t. t; zeros if no gradient flows.
    Tensor grad(const Tensor& t) const;
    const std::vector<double>* grad_data(const Tensor& t) const;

    std::size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        Shape shape;
        std::function<void(Tape&)> bwd;
    };

    Tensor make_node(Shape s, const char* opname);
    int input_node(const Tensor& t) const;
    void check_finite(const Tensor& t, const char* opname) const;
    double* grad_ptr(int node) { return grads_[static_cast<std::size_t>(node)].data(); }

    std::uint64_t id_;
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    bool backward_done_ = false;
};

// Max relative error between reverse-mode and central-difference gradients
// of a scalar function over every coordinate of params. Relative error uses
// |a - b| / max(|a|, |b|, 1e-6); the floor absorbs double-precision roundoff
// of the loss evaluations, which otherwise dominates coordinates whose true
// gradient is near zero. The function must be differentiable at the
// evaluation point (keep relu inputs away from 0).
double grad_check(const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> params, double step);

} // namespace qf::tensor
