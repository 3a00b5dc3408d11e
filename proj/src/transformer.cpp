#include "qforecast/transformer.hpp"

#include <cmath>
#include <cstring>

#include "qforecast/errors.hpp"
#include "qforecast/rng.hpp"

namespace qf::transformer {

using tensor::Tape;
using tensor::Tensor;

const char* pe_parity_name(PeParity parity) {
    return parity == PeParity::even_sin ? "even_sin" : "odd_sin";
}

PeParity parse_pe_parity(const std::string& name) {
    if (name == "even_sin") return PeParity::even_sin;
    if (name == "odd_sin") return PeParity::odd_sin;
    throw ConfigError("pe_parity must be \"even_sin\" or \"odd_sin\", got \"" + name + "\"");
}

void ModelConfig::validate() const {
    if (d_input < 1) throw ConfigError("d_input must be >= 1");
    if (d_model < 2) throw ConfigError("d_model must be >= 2");
    if (n_heads < 1) throw ConfigError("n_heads must be >= 1");
    if (d_model % n_heads != 0)
        throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                          std::to_string(n_heads));
    if (n_encoder_layers < 1 || n_decoder_layers < 1)
        throw ConfigError("layer counts must be >= 1");
    if (d_ff < 1) throw ConfigError("d_ff must be >= 1");
    if (seq_len < 1) throw ConfigError("seq_len must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
}

Tensor positional_encoding(std::int64_t length, std::int64_t d_model, PeParity parity) {
    if (length < 1 || d_model < 2)
        throw ConfigError("positional encoding needs length >= 1 and d_model >= 2");
    Tensor pe = Tensor::zeros({length, d_model});
    double* out = pe.data();
    const bool sin_even = parity == PeParity::even_sin;
    for (std::int64_t p = 0; p < length; ++p)
        for (std::int64_t i = 0; i < d_model; ++i) {
            const double expo = static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model);
            const double angle = static_cast<double>(p) / std::pow(10000.0, expo);
            const bool use_sin = ((i % 2 == 0) == sin_even);
            out[p * d_model + i] = use_sin ? std::sin(angle) : std::cos(angle);
        }
    return pe;
}

namespace {

template <class ModelT, class Fn>
void visit_params(ModelT& m, Fn&& fn) {
    fn("w_emb", m.w_emb);
    fn("b_emb", m.b_emb);
    const auto attn = [&](const std::string& prefix, auto& a) {
        fn(prefix + ".wq", a.wq);
        fn(prefix + ".bq", a.bq);
        fn(prefix + ".wk", a.wk);
        fn(prefix + ".bk", a.bk);
        fn(prefix + ".wv", a.wv);
        fn(prefix + ".bv", a.bv);
        fn(prefix + ".wo", a.wo);
        fn(prefix + ".bo", a.bo);
    };
    const auto norm = [&](const std::string& prefix, auto& nw) {
        fn(prefix + ".gain", nw.gain);
        fn(prefix + ".bias", nw.bias);
    };
    const auto ff = [&](const std::string& prefix, auto& f) {
        fn(prefix + ".w1", f.w1);
        fn(prefix + ".b1", f.b1);
        fn(prefix + ".w2", f.w2);
        fn(prefix + ".b2", f.b2);
    };
    for (std::size_t i = 0; i < m.encoder.size(); ++i) {
        const std::string p = "enc" + std::to_string(i);
        auto& layer = m.encoder[i];
        attn(p + ".attn", layer.attn);
        norm(p + ".norm1", layer.norm1);
        ff(p + ".ff", layer.ff);
        norm(p + ".norm2", layer.norm2);
    }
    for (std::size_t i = 0; i < m.decoder.size(); ++i) {
        const std::string p = "dec" + std::to_string(i);
        auto& layer = m.decoder[i];
        attn(p + ".self", layer.self_attn);
        norm(p + ".norm1", layer.norm1);
        attn(p + ".cross", layer.cross_attn);
        norm(p + ".norm2", layer.norm2);
        ff(p + ".ff", layer.ff);
        norm(p + ".norm3", layer.norm3);
    }
    fn("w_head", m.w_head);
    fn("b_head", m.b_head);
}

Tensor init_uniform(const tensor::Shape& shape, std::int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return Tensor::uniform(shape, -bound, bound, rng);
}

AttentionWeights make_attention(std::int64_t d_model, Rng& rng) {
    AttentionWeights a;
    a.wq = init_uniform({d_model, d_model}, d_model, rng);
    a.bq = init_uniform({d_model}, d_model, rng);
    a.wk = init_uniform({d_model, d_model}, d_model, rng);
    a.bk = init_uniform({d_model}, d_model, rng);
    a.wv = init_uniform({d_model, d_model}, d_model, rng);
    a.bv = init_uniform({d_model}, d_model, rng);
    a.wo = init_uniform({d_model, d_model}, d_model, rng);
    a.bo = init_uniform({d_model}, d_model, rng);
    return a;
}

FeedForwardWeights make_ff(std::int64_t d_model, std::int64_t d_ff, Rng& rng) {
    FeedForwardWeights f;
    f.w1 = init_uniform({d_ff, d_model}, d_model, rng);
    f.b1 = init_uniform({d_ff}, d_model, rng);
    f.w2 = init_uniform({d_model, d_ff}, d_ff, rng);
    f.b2 = init_uniform({d_model}, d_ff, rng);
    return f;
}

NormWeights make_norm(std::int64_t d_model) {
    return {Tensor::full({d_model}, 1.0), Tensor::zeros({d_model})};
}

// Stack `copies` copies of a [r x c] block vertically.
Tensor tile_rows(const Tensor& block, std::int64_t copies) {
    const std::int64_t r = block.rows(), c = block.cols();
    Tensor out = Tensor::zeros({r * copies, c});
    for (std::int64_t i = 0; i < copies; ++i)
        std::memcpy(out.data() + i * r * c, block.data(),
                    static_cast<std::size_t>(r * c) * sizeof(double));
    return out;
}

Tensor multi_head(Tape& tp, const AttentionWeights& a, const Tensor& query_in,
                  const Tensor& kv_in, const tensor::AttnLayout& layout,
                  std::vector<Tensor>* probs) {
    Tensor q = tp.linear(query_in, a.wq, a.bq);
    Tensor k = tp.linear(kv_in, a.wk, a.bk);
    Tensor v = tp.linear(kv_in, a.wv, a.bv);
    Tensor mixed = tp.attention(q, k, v, layout, probs);
    return tp.linear(mixed, a.wo, a.bo);
}

Tensor feed_forward(Tape& tp, const FeedForwardWeights& f, const Tensor& x) {
    return tp.linear(tp.relu(tp.linear(x, f.w1, f.b1)), f.w2, f.b2);
}

Tensor add_norm(Tape& tp, const NormWeights& n, const Tensor& residual, const Tensor& delta) {
    return tp.layer_norm(tp.add(residual, delta), n.gain, n.bias);
}

} // namespace

Model make_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    if (config.dropout != 0.0)
        throw ConfigError("dropout is fixed at 0 in this implementation");

    Model m;
    m.config = config;
    Rng rng(seed);
    m.w_emb = init_uniform({config.d_model, config.d_input}, config.d_input, rng);
    m.b_emb = init_uniform({config.d_model}, config.d_input, rng);
    for (std::int64_t i = 0; i < config.n_encoder_layers; ++i) {
        EncoderLayer layer;
        layer.attn = make_attention(config.d_model, rng);
        layer.norm1 = make_norm(config.d_model);
        layer.ff = make_ff(config.d_model, config.d_ff, rng);
        layer.norm2 = make_norm(config.d_model);
        m.encoder.push_back(std::move(layer));
    }
    for (std::int64_t i = 0; i < config.n_decoder_layers; ++i) {
        DecoderLayer layer;
        layer.self_attn = make_attention(config.d_model, rng);
        layer.norm1 = make_norm(config.d_model);
        layer.cross_attn = make_attention(config.d_model, rng);
        layer.norm2 = make_norm(config.d_model);
        layer.ff = make_ff(config.d_model, config.d_ff, rng);
        layer.norm3 = make_norm(config.d_model);
        m.decoder.push_back(std::move(layer));
    }
    m.w_head = init_uniform({config.d_input, config.d_model}, config.d_model, rng);
    m.b_head = init_uniform({config.d_input}, config.d_model, rng);
    m.pos_enc = positional_encoding(config.seq_len, config.d_model, config.pe_parity);
    return m;
}

std::vector<std::pair<std::string, Tensor*>> parameter_refs(Model& model) {
    std::vector<std::pair<std::string, Tensor*>> out;
    visit_params(model, [&](const std::string& name, Tensor& t) { out.emplace_back(name, &t); });
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> parameter_refs(const Model& model) {
    std::vector<std::pair<std::string, const Tensor*>> out;
    visit_params(model,
                 [&](const std::string& name, const Tensor& t) { out.emplace_back(name, &t); });
    return out;
}

Model bind(Tape& tape, const Model& model) {
    Model bound = model;
    visit_params(bound, [&](const std::string&, Tensor& t) { t = tape.leaf(t); });
    return bound;
}

Tensor forward_windows(Tape& tp, const Model& m, const Tensor& x, std::int64_t windows,
                       ForwardTrace* trace) {
    const ModelConfig& cfg = m.config;
    const std::int64_t L = cfg.seq_len;
    if (windows < 1) throw ShapeMismatch("forward needs at least one window");
    if (x.ndim() != 2 || x.rows() != windows * L || x.cols() != cfg.d_input)
        throw ShapeMismatch("forward input must be [windows*" + std::to_string(L) + " x " +
                            std::to_string(cfg.d_input) + "]");

    if (trace != nullptr) {
        trace->encoder_attn.clear();
        trace->decoder_self_attn.clear();
        trace->decoder_cross_attn.clear();
    }
    using TraceField = std::vector<std::vector<Tensor>> ForwardTrace::*;
    const auto capture = [&](TraceField field) -> std::vector<Tensor>* {
        if (trace == nullptr) return nullptr;
        auto& dst = trace->*field;
        dst.emplace_back();
        return &dst.back();
    };

    Tensor embedded = tp.add(tp.linear(x, m.w_emb, m.b_emb), tile_rows(m.pos_enc, windows));

    const tensor::AttnLayout enc_layout{cfg.n_heads, windows, L, L};
    Tensor src = embedded;
    for (const EncoderLayer& layer : m.encoder) {
        Tensor mixed =
            multi_head(tp, layer.attn, src, src, enc_layout, capture(&ForwardTrace::encoder_attn));
        src = add_norm(tp, layer.norm1, src, mixed);
        src = add_norm(tp, layer.norm2, src, feed_forward(tp, layer.ff, src));
    }

    std::vector<std::int64_t> last_rows(static_cast<std::size_t>(windows));
    for (std::int64_t w = 0; w < windows; ++w)
        last_rows[static_cast<std::size_t>(w)] = w * L + (L - 1);
    Tensor tgt = tp.gather_rows(embedded, std::move(last_rows));

    const tensor::AttnLayout self_layout{cfg.n_heads, windows, 1, 1};
    const tensor::AttnLayout cross_layout{cfg.n_heads, windows, 1, L};
    for (const DecoderLayer& layer : m.decoder) {
        Tensor self = multi_head(tp, layer.self_attn, tgt, tgt, self_layout,
                                 capture(&ForwardTrace::decoder_self_attn));
        tgt = add_norm(tp, layer.norm1, tgt, self);
        Tensor cross = multi_head(tp, layer.cross_attn, tgt, src, cross_layout,
                                  capture(&ForwardTrace::decoder_cross_attn));
        tgt = add_norm(tp, layer.norm2, tgt, cross);
        tgt = add_norm(tp, layer.norm3, tgt, feed_forward(tp, layer.ff, tgt));
    }

    return tp.softmax(tp.linear(tgt, m.w_head, m.b_head), -1);
}

} // namespace qf::transformer
