#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qforecast/tensor.hpp"

// Encoder-decoder forecaster for short probability time series. One window of
// L probability rows goes in; one predicted probability row comes out.

namespace qf::transformer {

// Which trigonometric function lands on the even feature columns of the
// positional encoding. even_sin is the conventional layout; odd_sin swaps the
// pair. The two differ only by a fixed permutation of hidden features, so the
// model class is identical either way; the flag exists so both layouts can be
// exercised and checkpoints stay self-describing.
enum class PeParity { even_sin, odd_sin };

const char* pe_parity_name(PeParity parity);
PeParity parse_pe_parity(const std::string& name); // ConfigError on unknown name

struct ModelConfig {
    std::int64_t d_input = 4;  // probability vector length per time step
    std::int64_t d_model = 32; // hidden width
    std::int64_t n_heads = 8;
    std::int64_t n_encoder_layers = 1;
    std::int64_t n_decoder_layers = 1;
    std::int64_t d_ff = 128;
    std::int64_t seq_len = 30; // window length L
    double dropout = 0.0;      // accepted in [0,1); only 0 is implemented
    PeParity pe_parity = PeParity::even_sin;

    // ConfigError unless: d_model divisible by n_heads, seq_len >= 1,
    // d_input >= 1, d_model >= 2, layer counts >= 1, dropout in [0,1).
    void validate() const;
};

struct AttentionWeights {
    tensor::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct FeedForwardWeights {
    tensor::Tensor w1, b1, w2, b2;
};

struct NormWeights {
    tensor::Tensor gain, bias;
};

struct EncoderLayer {
    AttentionWeights attn;
    NormWeights norm1;
    FeedForwardWeights ff;
    NormWeights norm2;
};

struct DecoderLayer {
    AttentionWeights self_attn;
    NormWeights norm1;
    AttentionWeights cross_attn;
    NormWeights norm2;
    FeedForwardWeights ff;
    NormWeights norm3;
};

// Weight tensors share storage on copy; clone parameters explicitly when a
// detached snapshot is needed. pos_enc is derived from the config, not a
// trainable parameter, and is never serialized.
struct Model {
    ModelConfig config;
    tensor::Tensor w_emb, b_emb; // d_input -> d_model
    std::vector<EncoderLayer> encoder;
    std::vector<DecoderLayer> decoder;
    tensor::Tensor w_head, b_head; // d_model -> d_input
    tensor::Tensor pos_enc;        // [seq_len x d_model]
};

// PE[p, i] = sin(p / 10000^(2*floor(i/2)/d_model)) on the parity's sine
// columns and cos of the same argument on the others. Deterministic,
// recomputable to the bit.
tensor::Tensor positional_encoding(std::int64_t length, std::int64_t d_model, PeParity parity);

// Fresh model with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights and
// biases drawn in parameter_refs order from one seeded generator; norm gains
// start at 1, norm biases at 0 (no draws consumed). Same seed + config gives
// bit-identical weights.
Model make_model(const ModelConfig& config, std::uint64_t seed);

// Canonical flat view of every trainable parameter. Order and names are
// stable: w_emb, b_emb, enc{i}.{attn.wq..bo, norm1, ff.w1..b2, norm2},
// dec{i}.{self.wq..bo, norm1, cross.wq..bo, norm2, ff.w1..b2, norm3},
// w_head, b_head. Checkpoints, the optimizer, and gradient collection all
// key off this order.
std::vector<std::pair<std::string, tensor::Tensor*>> parameter_refs(Model& model);
std::vector<std::pair<std::string, const tensor::Tensor*>> parameter_refs(const Model& model);

// Copy of the model whose parameters are leaves of the given tape, sharing
// storage with the original. Forwarding through the bound copy makes
// gradients reachable via tape.grad on each bound parameter.
Model bind(tensor::Tape& tape, const Model& model);

// Attention probability matrices captured during a forward pass, one
// [q_rows x kv_rows] block per (window, head) pair in window-major order,
// one vector per layer. Rows sum to 1 by construction.
struct ForwardTrace {
    std::vector<std::vector<tensor::Tensor>> encoder_attn;
    std::vector<std::vector<tensor::Tensor>> decoder_self_attn;
    std::vector<std::vector<tensor::Tensor>> decoder_cross_attn;
};

// Batched forward pass. x holds `windows` stacked [L x d_input] blocks;
// the result is [windows x d_input] with softmax rows (entries >= 0, each
// row sums to 1 within 1e-12 for any finite weights).
//
// Per window: embed rows to d_model, add the positional encoding, run the
// encoder stack (post-norm residual layout). The decoder consumes a single
// query token, the embedded last row of the window (positional encoding
// index L-1), applies self-attention over itself, cross-attention over that
// window's encoder output, the feed-forward block, a norm after each
// residual, then the linear head and softmax.
tensor::Tensor forward_windows(tensor::Tape& tape, const Model& model, const tensor::Tensor& x,
                               std::int64_t windows, ForwardTrace* trace = nullptr);

} // namespace qf::transformer
