#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "qforecast/errors.hpp"
#include "qforecast/transformer.hpp"

using namespace qf;
using tensor::Tape;
using tensor::Tensor;
using namespace transformer;

namespace {

Tensor random_windows(const ModelConfig& mc, std::int64_t windows, Rng& rng) {
    // softmax-like rows: positive entries summing to 1
    Tensor x = Tensor::zeros({windows * mc.seq_len, mc.d_input});
    for (std::int64_t i = 0; i < x.rows(); ++i) {
        double s = 0.0;
        std::vector<double> row(static_cast<std::size_t>(mc.d_input));
        for (auto& v : row) {
            v = rng.uniform(0.05, 1.0);
            s += v;
        }
        for (std::int64_t j = 0; j < mc.d_input; ++j)
            x.at(i, j) = row[static_cast<std::size_t>(j)] / s;
    }
    return x;
}

bool same_values(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(),
                       static_cast<std::size_t>(a.numel()) * sizeof(double)) == 0;
}

} // namespace

TEST_CASE("positional encoding hand values, conventional parity") {
    auto pe = positional_encoding(4, 6, PeParity::even_sin);
    // position 0: sin(0)=0 on even columns, cos(0)=1 on odd columns
    for (std::int64_t i = 0; i < 6; i += 2) CHECK(pe.value(i) == 0.0);
    for (std::int64_t i = 1; i < 6; i += 2) CHECK(pe.value(i) == 1.0);
    // position 1, column 0: sin(1)
    CHECK(pe.at(1, 0) == std::sin(1.0));
    CHECK(pe.at(1, 1) == std::cos(1.0));
    // column pair 2,3 shares the frequency 10000^(-2/6)
    const double w = std::pow(10000.0, -2.0 / 6.0);
    CHECK(pe.at(3, 2) == doctest::Approx(std::sin(3.0 * w)).epsilon(1e-16));
    CHECK(pe.at(3, 3) == doctest::Approx(std::cos(3.0 * w)).epsilon(1e-16));
}

TEST_CASE("positional encoding swapped parity puts cosine on even columns") {
    auto pe = positional_encoding(4, 6, PeParity::odd_sin);
    for (std::int64_t i = 0; i < 6; i += 2) CHECK(pe.value(i) == 1.0);
    for (std::int64_t i = 1; i < 6; i += 2) CHECK(pe.value(i) == 0.0);
    CHECK(pe.at(1, 1) == std::sin(1.0));
    CHECK(pe.at(1, 0) == std::cos(1.0));
}

TEST_CASE("positional encoding recomputes to the bit for the default geometry") {
    const std::int64_t L = 30, d = 32;
    for (PeParity parity : {PeParity::even_sin, PeParity::odd_sin}) {
        auto pe = positional_encoding(L, d, parity);
        REQUIRE(pe.rows() == L);
        REQUIRE(pe.cols() == d);
        for (std::int64_t p = 0; p < L; ++p) {
            for (std::int64_t i = 0; i < d; ++i) {
                const double arg =
                    static_cast<double>(p) /
                    std::pow(10000.0, 2.0 * std::floor(static_cast<double>(i) / 2.0) /
                                          static_cast<double>(d));
                const bool sin_col =
                    (parity == PeParity::even_sin) ? (i % 2 == 0) : (i % 2 == 1);
                const double want = sin_col ? std::sin(arg) : std::cos(arg);
                CHECK(pe.at(p, i) == want); // exact: same expression, same order
            }
        }
        // values bounded and not all alike
        double lo = 2.0, hi = -2.0;
        for (std::int64_t k = 0; k < pe.numel(); ++k) {
            lo = std::min(lo, pe.value(k));
            hi = std::max(hi, pe.value(k));
        }
        CHECK(lo >= -1.0);
        CHECK(hi <= 1.0);
        CHECK(hi - lo > 1.0);
    }
}

TEST_CASE("pe parity names round trip") {
    CHECK(std::string(pe_parity_name(PeParity::even_sin)) == "even_sin");
    CHECK(std::string(pe_parity_name(PeParity::odd_sin)) == "odd_sin");
    CHECK(parse_pe_parity("even_sin") == PeParity::even_sin);
    CHECK(parse_pe_parity("odd_sin") == PeParity::odd_sin);
    CHECK_THROWS_AS(parse_pe_parity("sin_even"), ConfigError);
}

TEST_CASE("config validation") {
    ModelConfig mc;
    CHECK_NOTHROW(mc.validate());
    SUBCASE("head divisibility") {
        mc.n_heads = 5;
        CHECK_THROWS_AS(mc.validate(), ConfigError);
    }
    SUBCASE("dropout range") {
        mc.dropout = 1.0;
        CHECK_THROWS_AS(mc.validate(), ConfigError);
        mc.dropout = -0.1;
        CHECK_THROWS_AS(mc.validate(), ConfigError);
    }
    SUBCASE("nonzero dropout is rejected at model build") {
        mc.dropout = 0.25;
        CHECK_NOTHROW(mc.validate());
        CHECK_THROWS_AS(make_model(mc, 1), ConfigError);
    }
    SUBCASE("layer counts") {
        mc.n_encoder_layers = 0;
        CHECK_THROWS_AS(mc.validate(), ConfigError);
    }
    SUBCASE("width bounds") {
        mc.d_model = 1;
        CHECK_THROWS_AS(mc.validate(), ConfigError);
    }
}

TEST_CASE("fresh models are seed-deterministic with bounded weights") {
    ModelConfig mc;
    auto a = make_model(mc, 42);
    auto b = make_model(mc, 42);
    auto c = make_model(mc, 43);

    auto ra = parameter_refs(a);
    auto rb = parameter_refs(b);
    auto rc = parameter_refs(c);
    REQUIRE(ra.size() == rb.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        CHECK(ra[i].first == rb[i].first);
        CHECK(same_values(*ra[i].second, *rb[i].second));
        if (!same_values(*ra[i].second, *rc[i].second)) any_diff = true;
    }
    CHECK(any_diff);

    // init bounds: every drawn weight within +-1/sqrt(fan_in); embedding
    // fan_in is d_input, attention fan_in is d_model
    const double emb_bound = 1.0 / std::sqrt(static_cast<double>(mc.d_input));
    for (std::int64_t k = 0; k < a.w_emb.numel(); ++k)
        CHECK(std::abs(a.w_emb.value(k)) <= emb_bound);
    const double attn_bound = 1.0 / std::sqrt(static_cast<double>(mc.d_model));
    for (std::int64_t k = 0; k < a.encoder[0].attn.wq.numel(); ++k)
        CHECK(std::abs(a.encoder[0].attn.wq.value(k)) <= attn_bound);
    // norm parameters start as identity
    for (std::int64_t k = 0; k < mc.d_model; ++k) {
        CHECK(a.encoder[0].norm1.gain.value(k) == 1.0);
        CHECK(a.encoder[0].norm1.bias.value(k) == 0.0);
        CHECK(a.decoder[0].norm3.gain.value(k) == 1.0);
    }
}

TEST_CASE("parameter enumeration is canonical") {
    ModelConfig mc;
    mc.n_encoder_layers = 2;
    mc.n_decoder_layers = 1;
    auto m = make_model(mc, 7);
    auto refs = parameter_refs(m);
    // 2 embedding + 16 per encoder layer + 26 per decoder layer + 2 head
    REQUIRE(refs.size() == 2 + 16 * 2 + 26 + 2);
    CHECK(refs.front().first == "w_emb");
    CHECK(refs[1].first == "b_emb");
    CHECK(refs[2].first == "enc0.attn.wq");
    CHECK(refs.back().first == "b_head");
    CHECK(refs[refs.size() - 2].first == "w_head");
    // every name unique
    std::vector<std::string> names;
    for (auto& [n, t] : refs) names.push_back(n);
    auto sorted = names;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
    // spot names for the decoder blocks
    CHECK(std::find(names.begin(), names.end(), "dec0.self.wq") != names.end());
    CHECK(std::find(names.begin(), names.end(), "dec0.cross.wo") != names.end());
    CHECK(std::find(names.begin(), names.end(), "dec0.norm3.bias") != names.end());
    CHECK(std::find(names.begin(), names.end(), "enc1.ff.w2") != names.end());
}

TEST_CASE("forward emits one probability row per window") {
    ModelConfig mc;
    mc.seq_len = 8;
    mc.d_model = 16;
    mc.n_heads = 4;
    mc.d_ff = 32;
    auto model = make_model(mc, 5);
    Rng rng(17);

    for (std::int64_t windows : {1, 2, 5}) {
        auto x = random_windows(mc, windows, rng);
        Tape tape;
        auto y = forward_windows(tape, model, x, windows);
        REQUIRE(y.rows() == windows);
        REQUIRE(y.cols() == mc.d_input);
        for (std::int64_t w = 0; w < windows; ++w) {
            double s = 0.0;
            for (std::int64_t j = 0; j < mc.d_input; ++j) {
                const double p = y.value(w * mc.d_input + j);
                CHECK(p >= 0.0);
                s += p;
            }
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("forward rejects ragged input") {
    ModelConfig mc;
    mc.seq_len = 4;
    mc.d_model = 8;
    mc.n_heads = 2;
    mc.d_ff = 16;
    auto model = make_model(mc, 1);
    Tape tape;
    CHECK_THROWS_AS(forward_windows(tape, model, Tensor::zeros({7, 4}), 2), ShapeMismatch);
    CHECK_THROWS_AS(forward_windows(tape, model, Tensor::zeros({4, 3}), 1), ShapeMismatch);
    CHECK_THROWS_AS(forward_windows(tape, model, Tensor::zeros({4, 4}), 0), ShapeMismatch);
}

TEST_CASE("forward is deterministic and batching does not change values") {
    ModelConfig mc;
    mc.seq_len = 6;
    mc.d_model = 8;
    mc.n_heads = 2;
    mc.d_ff = 16;
    auto model = make_model(mc, 9);
    Rng rng(23);
    auto x = random_windows(mc, 3, rng);

    Tape t1, t2;
    auto y1 = forward_windows(t1, model, x, 3);
    auto y2 = forward_windows(t2, model, x, 3);
    CHECK(same_values(y1, y2));

    // each window alone reproduces its batched row
    for (std::int64_t w = 0; w < 3; ++w) {
        Tensor one = Tensor::zeros({mc.seq_len, mc.d_input});
        for (std::int64_t i = 0; i < mc.seq_len; ++i)
            for (std::int64_t j = 0; j < mc.d_input; ++j)
                one.at(i, j) = x.value((w * mc.seq_len + i) * mc.d_input + j);
        Tape tape;
        auto yw = forward_windows(tape, model, one, 1);
        for (std::int64_t j = 0; j < mc.d_input; ++j)
            CHECK(yw.value(j) ==
                  doctest::Approx(y1.value(w * mc.d_input + j)).epsilon(1e-13));
    }
}

TEST_CASE("attention traces are row-stochastic and shaped by the layout") {
    ModelConfig mc;
    mc.seq_len = 5;
    mc.d_model = 8;
    mc.n_heads = 2;
    mc.d_ff = 16;
    auto model = make_model(mc, 3);
    Rng rng(31);
    const std::int64_t windows = 2;
    auto x = random_windows(mc, windows, rng);

    Tape tape;
    ForwardTrace trace;
    (void)forward_windows(tape, model, x, windows, &trace);

    REQUIRE(trace.encoder_attn.size() == 1);
    REQUIRE(trace.decoder_self_attn.size() == 1);
    REQUIRE(trace.decoder_cross_attn.size() == 1);

    // encoder: windows*heads LxL blocks
    REQUIRE(trace.encoder_attn[0].size() ==
            static_cast<std::size_t>(windows * mc.n_heads));
    for (const auto& p : trace.encoder_attn[0]) {
        REQUIRE(p.rows() == mc.seq_len);
        REQUIRE(p.cols() == mc.seq_len);
        for (std::int64_t i = 0; i < p.rows(); ++i) {
            double s = 0.0;
            for (std::int64_t j = 0; j < p.cols(); ++j) {
                CHECK(p.value(i * p.cols() + j) >= 0.0);
                s += p.value(i * p.cols() + j);
            }
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
    }
    // decoder self-attention: one query over itself, weight exactly 1
    for (const auto& p : trace.decoder_self_attn[0]) {
        REQUIRE(p.rows() == 1);
        REQUIRE(p.cols() == 1);
        CHECK(std::abs(p.value(0) - 1.0) < 1e-12);
    }
    // cross-attention: one query row over L encoder positions
    for (const auto& p : trace.decoder_cross_attn[0]) {
        REQUIRE(p.rows() == 1);
        REQUIRE(p.cols() == mc.seq_len);
        double s = 0.0;
        for (std::int64_t j = 0; j < mc.seq_len; ++j) s += p.value(j);
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("attention output is invariant under key/value permutation") {
    // softmax(Q K^T) V is a sum over key/value pairs; reordering them inside
    // a window must not change the output.
    Rng rng(57);
    const std::int64_t n = 6, d = 4;
    auto qv = Tensor::uniform({2, d}, -1.0, 1.0, rng);
    auto kv = Tensor::uniform({n, d}, -1.0, 1.0, rng);
    auto vv = Tensor::uniform({n, d}, -1.0, 1.0, rng);
    const std::vector<std::int64_t> perm{3, 0, 5, 1, 4, 2};
    auto kp = Tensor::zeros({n, d}), vp = Tensor::zeros({n, d});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t c = 0; c < d; ++c) {
            kp.at(i, c) = kv.value(perm[static_cast<std::size_t>(i)] * d + c);
            vp.at(i, c) = vv.value(perm[static_cast<std::size_t>(i)] * d + c);
        }
    Tape t1, t2;
    auto base = t1.attention(t1.leaf(qv), t1.leaf(kv), t1.leaf(vv), {1, 1, 2, n});
    auto perm_out = t2.attention(t2.leaf(qv), t2.leaf(kp), t2.leaf(vp), {1, 1, 2, n});
    for (std::int64_t i = 0; i < base.numel(); ++i)
        CHECK(base.value(i) == doctest::Approx(perm_out.value(i)).epsilon(1e-12));
}

TEST_CASE("full-model gradients agree with central differences") {
    ModelConfig mc;
    mc.seq_len = 3;
    mc.d_model = 4;
    mc.n_heads = 2;
    mc.d_ff = 8;
    auto model = make_model(mc, 11);
    Rng rng(13);
    auto x = random_windows(mc, 2, rng);

    // Target rows sit near the model's own output: a small loss keeps the
    // central-difference roundoff (|loss|*eps/2h) well under the tolerance
    // while leaving every gradient path exercised.
    Tensor t;
    {
        Tape tape;
        t = forward_windows(tape, model, x, 2).clone();
        for (std::int64_t i = 0; i < 2; ++i) {
            double s = 0.0;
            for (std::int64_t j = 0; j < 4; ++j) {
                t.at(i, j) += rng.uniform(0.0, 0.02);
                s += t.at(i, j);
            }
            for (std::int64_t j = 0; j < 4; ++j) t.at(i, j) /= s;
        }
    }

    auto refs = parameter_refs(model);
    std::vector<Tensor> params;
    for (auto& [name, ptr] : refs) params.push_back(*ptr);

    const double err = tensor::grad_check(
        [&](Tape& tape, const std::vector<Tensor>& p) {
            // p entries are already leaves of this tape; swap them in directly
            Model probe = model;
            auto probe_refs = parameter_refs(probe);
            for (std::size_t i = 0; i < probe_refs.size(); ++i) *probe_refs[i].second = p[i];
            return tape.mse_loss(forward_windows(tape, probe, x, 2), t);
        },
        params, 1e-6);
    CHECK(err < 1e-5);
}

TEST_CASE("bound models expose gradients for every parameter") {
    ModelConfig mc;
    mc.seq_len = 4;
    mc.d_model = 8;
    mc.n_heads = 2;
    mc.d_ff = 16;
    auto model = make_model(mc, 21);
    Rng rng(22);
    auto x = random_windows(mc, 2, rng);
    auto t = Tensor::from({2, 4}, {0.3, 0.3, 0.2, 0.2, 0.25, 0.25, 0.25, 0.25});

    Tape tape;
    auto bound = bind(tape, model);
    tape.backward(tape.mse_loss(forward_windows(tape, bound, x, 2), t));

    // The decoder's self-attention sees a single query token, so its softmax
    // is identically 1 and the query/key projections carry no gradient. All
    // other parameters must receive signal.
    std::vector<std::string> zero_names;
    auto brefs = parameter_refs(bound);
    for (auto& [name, ptr] : brefs) {
        auto g = tape.grad(*ptr);
        REQUIRE(g.shape() == ptr->shape());
        bool any = false;
        for (std::int64_t k = 0; k < g.numel(); ++k)
            if (g.value(k) != 0.0) {
                any = true;
                break;
            }
        if (!any) zero_names.push_back(name);
    }
    const std::vector<std::string> expect{"dec0.self.wq", "dec0.self.bq", "dec0.self.wk",
                                          "dec0.self.bk"};
    CHECK(zero_names == expect);
}
