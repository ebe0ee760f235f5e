#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "shefu/tensor.hpp"

namespace shefu {

struct FunnelConfig {
    size_t layers = 2;       // L
    size_t d_model = 32;
    size_t heads = 4;        // A^(1)
    size_t ffn_mult = 4;
    double dropout = 0.1;
};

// Per-layer (sequence length, head count). Layer 1 keeps (S1, A1); from layer
// 2 on both are floor-halved, heads clamped at 1. S1 must satisfy
// S1 >= 2^(L-1) so no layer pools a length-1 sequence.
inline std::vector<std::pair<size_t, size_t>> halving_schedule(size_t layers, size_t s1, size_t a1) {
    if (layers < 1) throw ConfigError("halving_schedule: need at least one layer");
    if (a1 < 1) throw ConfigError("halving_schedule: need at least one head");
    size_t min_s1 = size_t{1} << (layers - 1);
    if (s1 < min_s1)
        throw ConfigError("halving_schedule: S1=" + std::to_string(s1) + " underflows with L=" +
                          std::to_string(layers) + " (need S1 >= " + std::to_string(min_s1) + ")");
    std::vector<std::pair<size_t, size_t>> sched;
    size_t s = s1, a = a1;
    sched.emplace_back(s, a);
    for (size_t l = 2; l <= layers; ++l) {
        s = s / 2;
        a = std::max<size_t>(1, a / 2);
        if (s == 0) throw ConfigError("halving_schedule: sequence length reached 0");
        sched.emplace_back(s, a);
    }
    return sched;
}

inline void validate_funnel_config(const FunnelConfig& cfg, size_t s1) {
    auto sched = halving_schedule(cfg.layers, s1, cfg.heads);
    for (auto [s, a] : sched)
        if (cfg.d_model % a != 0)
            throw ConfigError("d_model=" + std::to_string(cfg.d_model) +
                              " not divisible by head count " + std::to_string(a));
}

template <typename S>
struct FunnelLayerParamsT {
    // no key bias: a constant added to every key cancels in the row softmax
    ParamT<S> wq, bq, wk, wv, bv, wo, bo;
    ParamT<S> ln1_g, ln1_b, ln2_g, ln2_b;
    ParamT<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;

    void collect(std::vector<ParamT<S>*>& out) {
        for (ParamT<S>* p : {&wq, &bq, &wk, &wv, &bv, &wo, &bo, &ln1_g, &ln1_b, &ln2_g, &ln2_b,
                             &ffn_w1, &ffn_b1, &ffn_w2, &ffn_b2})
            out.push_back(p);
    }
};

// Optional per-run instrumentation: realized lengths/heads and attention
// probabilities, for tests that verify the schedule and row-sum invariants.
template <typename S>
struct EncodeTrace {
    std::vector<size_t> lengths;  // output length of each layer
    std::vector<size_t> heads;
    std::vector<TensorT<S>> attention;  // one [A*S x S] block per layer
};

namespace detail {

template <typename S>
TensorT<S> attention_bias(const std::vector<uint8_t>& mask) {
    size_t s = mask.size();
    TensorT<S> bias({s, s});
    for (size_t q = 0; q < s; ++q)
        for (size_t kk = 0; kk < s; ++kk) bias.data[q * s + kk] = mask[kk] ? S(0) : S(-1e9);
    return bias;
}

}  // namespace detail

// One funnel layer. For layers after the first the input (and its mask, by
// pairwise OR) is max-pooled before the Q/K/V projections, so query, key and
// value are all computed from the pooled sequence. Residuals connect from the
// pooled input.
template <typename S>
std::pair<VarT<S>, std::vector<uint8_t>> attention_layer(
    TapeT<S>& tape, VarT<S> h_in, const std::vector<uint8_t>& mask_in,
    const FunnelLayerParamsT<S>& p, size_t heads, bool pool, double dropout, Rng* rng,
    bool train_mode, TensorT<S>* attn_out = nullptr) {
    const size_t d = h_in.shape()[1];
    if (d % heads != 0) throw ContractError("attention_layer: d_model not divisible by heads");
    const size_t dh = d / heads;

    VarT<S> x = h_in;
    std::vector<uint8_t> mask = mask_in;
    if (pool) {
        x = tape.seq_max_pool_op(x);
        std::vector<uint8_t> pooled((mask_in.size()) / 2);
        for (size_t i = 0; i < pooled.size(); ++i)
            pooled[i] = mask_in[2 * i] || mask_in[2 * i + 1];
        mask = std::move(pooled);
        x = tape.mask_rows(x, mask);
    }
    const size_t s = x.shape()[0];

    VarT<S> q = tape.add_rowvec(tape.matmul(x, tape.param(p.wq)), tape.param(p.bq));
    VarT<S> k = tape.matmul(x, tape.param(p.wk));
    VarT<S> v = tape.add_rowvec(tape.matmul(x, tape.param(p.wv)), tape.param(p.bv));

    TensorT<S> bias = detail::attention_bias<S>(mask);
    if (attn_out) *attn_out = TensorT<S>({heads * s, s});

    std::vector<VarT<S>> head_outs;
    head_outs.reserve(heads);
    const S inv_sqrt = S(1.0 / std::sqrt(static_cast<double>(dh)));
    for (size_t a = 0; a < heads; ++a) {
        VarT<S> qa = tape.slice_cols(q, a * dh, (a + 1) * dh);
        VarT<S> ka = tape.slice_cols(k, a * dh, (a + 1) * dh);
        VarT<S> va = tape.slice_cols(v, a * dh, (a + 1) * dh);
        VarT<S> scores = tape.scale(tape.matmul(qa, tape.transpose(ka)), inv_sqrt);
        scores = tape.add_const(scores, bias);
        VarT<S> probs = tape.softmax_rows(scores);
        if (attn_out)
            std::copy(probs.value().data.begin(), probs.value().data.end(),
                      attn_out->data.begin() + static_cast<long>(a * s * s));
        head_outs.push_back(tape.matmul(probs, va));
    }
    VarT<S> attn = head_outs.size() == 1 ? head_outs[0] : tape.concat_cols(head_outs);
    attn = tape.add_rowvec(tape.matmul(attn, tape.param(p.wo)), tape.param(p.bo));
    attn = tape.dropout(attn, dropout, rng, train_mode);

    VarT<S> h1 = tape.layer_norm_rows(tape.add(x, attn), tape.param(p.ln1_g), tape.param(p.ln1_b),
                                      S(1e-5));

    VarT<S> f = tape.add_rowvec(tape.matmul(h1, tape.param(p.ffn_w1)), tape.param(p.ffn_b1));
    f = tape.gelu(f);
    f = tape.add_rowvec(tape.matmul(f, tape.param(p.ffn_w2)), tape.param(p.ffn_b2));
    f = tape.dropout(f, dropout, rng, train_mode);

    VarT<S> out = tape.layer_norm_rows(tape.add(h1, f), tape.param(p.ln2_g), tape.param(p.ln2_b),
                                       S(1e-5));
    out = tape.mask_rows(out, mask);
    return {out, mask};
}

// Full L-layer encoder following the halving schedule.
template <typename S>
VarT<S> encode(TapeT<S>& tape, VarT<S> h_in, const std::vector<uint8_t>& mask,
               const FunnelConfig& cfg, const std::vector<FunnelLayerParamsT<S>>& layers,
               bool train_mode = false, Rng* rng = nullptr, EncodeTrace<S>* trace = nullptr) {
    if (layers.size() != cfg.layers) throw ContractError("encode: layer parameter count mismatch");
    auto sched = halving_schedule(cfg.layers, h_in.shape()[0], cfg.heads);
    VarT<S> h = h_in;
    std::vector<uint8_t> m = mask;
    for (size_t l = 0; l < cfg.layers; ++l) {
        TensorT<S> attn;
        auto [nh, nm] = attention_layer(tape, h, m, layers[l], sched[l].second,
                                        /*pool=*/l > 0, cfg.dropout, rng, train_mode,
                                        trace ? &attn : nullptr);
        h = nh;
        m = std::move(nm);
        if (trace) {
            trace->lengths.push_back(h.shape()[0]);
            trace->heads.push_back(sched[l].second);
            trace->attention.push_back(std::move(attn));
        }
    }
    return h;
}

}  // namespace shefu
