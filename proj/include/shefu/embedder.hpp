#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "shefu/dataset.hpp"
#include "shefu/geometry.hpp"
#include "shefu/tensor.hpp"
#include "shefu/text.hpp"

namespace shefu {

// Which referent a forward pass predicts.
enum class Mode { target, destination };

// [x1/W, y1/H, x2/W, y2/H, w/W, h/H, wh/(WH)]
inline std::array<double, 7> positional_encode(const BBox& b) {
    b.validate();
    return {b.x1 / b.W,          b.y1 / b.H,           b.x2 / b.W, b.y2 / b.H,
            b.width() / b.W,     b.height() / b.H,     (b.width() * b.height()) / (b.W * b.H)};
}

// A region as the model consumes it: visual vector with the positional
// 7-vector appended. Zero-filling for the switching head happens on this
// representation so it covers both parts.
struct EncodedRegion {
    std::vector<double> values;  // d_f + 7

    static EncodedRegion zeros(size_t d_f) {
        EncodedRegion r;
        r.values.assign(d_f + 7, 0.0);
        return r;
    }
    static EncodedRegion from(const RegionFeature& rf) {
        EncodedRegion r;
        r.values.reserve(rf.visual.size() + 7);
        for (float v : rf.visual) r.values.push_back(static_cast<double>(v));
        for (double v : positional_encode(rf.bbox)) r.values.push_back(v);
        return r;
    }
    size_t size() const { return values.size(); }
};

// The switching head: the candidate that is irrelevant in the current mode is
// replaced by a zero vector.
inline std::pair<EncodedRegion, EncodedRegion> switching_head(const EncodedRegion& targ,
                                                              const EncodedRegion& dest,
                                                              Mode mode) {
    if (targ.size() != dest.size())
        throw ContractError("switching_head: candidate encodings must have equal width");
    EncodedRegion zero = EncodedRegion::zeros(targ.size() - 7);
    if (mode == Mode::target) return {targ, zero};
    return {zero, dest};
}

template <typename S>
struct EmbedderParamsT {
    ParamT<S> region_w, region_b;    // (d_f+7) x d_model, d_model
    ParamT<S> region_ln_g, region_ln_b;
    ParamT<S> tok_emb;               // d_v x d_model
    ParamT<S> pos_emb;               // d_l x d_model
    ParamT<S> txt_ln_g, txt_ln_b;

    void collect(std::vector<ParamT<S>*>& out) {
        for (ParamT<S>* p : {&region_w, &region_b, &region_ln_g, &region_ln_b, &tok_emb, &pos_emb,
                             &txt_ln_g, &txt_ln_b})
            out.push_back(p);
    }
};

struct EmbedderConfig {
    size_t d_f = 64;
    size_t k = 6;
    size_t d_l = 14;
    size_t d_v = 48;
    size_t d_model = 32;
    double dropout = 0.1;

    size_t seq_len() const { return k + d_l + 2; }  // targ + dest + K regions + D_l tokens
};

template <typename S>
struct EmbeddedSequence {
    VarT<S> h;                   // [seq_len x d_model]
    std::vector<uint8_t> mask;   // true = attendable slot
};

// Build h_in^(1): sequence order [targ, dest, det_1..det_K, txt_1..txt_Dl].
// Regions go through one shared FC over (visual ++ positional), then layer
// norm; text is token embedding + learned position embedding, then layer
// norm. Padded region slots and PAD tokens are masked out of attention and
// zeroed so downstream layers never see their content.
template <typename S>
EmbeddedSequence<S> embed(TapeT<S>& tape, const EmbedderConfig& cfg,
                          const EmbedderParamsT<S>& params, const EncodedRegion& targ,
                          const EncodedRegion& dest,
                          const std::vector<EncodedRegion>& context, const TokenSequence& tokens,
                          bool train_mode = false, Rng* dropout_rng = nullptr) {
    if (targ.size() != cfg.d_f + 7 || dest.size() != cfg.d_f + 7)
        throw ContractError("embed: candidate width must be d_f+7");
    if (context.size() > cfg.k)
        throw ContractError("embed: more than k context regions");
    if (tokens.length() != cfg.d_l) throw ContractError("embed: token sequence must have length d_l");

    const size_t r = cfg.k + 2;
    TensorT<S> region_in({r, cfg.d_f + 7});
    std::vector<uint8_t> mask(cfg.seq_len(), 0);
    auto put_row = [&](size_t row, const EncodedRegion& reg) {
        for (size_t j = 0; j < reg.size(); ++j)
            region_in.data[row * (cfg.d_f + 7) + j] = static_cast<S>(reg.values[j]);
    };
    put_row(0, targ);
    put_row(1, dest);
    mask[0] = mask[1] = 1;  // candidate slots stay attendable; zero-fill is the mode signal
    for (size_t i = 0; i < context.size(); ++i) {
        if (context[i].size() != cfg.d_f + 7)
            throw ContractError("embed: context region width must be d_f+7");
        put_row(2 + i, context[i]);
        mask[2 + i] = 1;
    }
    for (size_t t = 0; t < cfg.d_l; ++t) mask[r + t] = tokens.mask[t];

    VarT<S> reg = tape.matmul(tape.leaf(std::move(region_in)), tape.param(params.region_w));
    reg = tape.add_rowvec(reg, tape.param(params.region_b));
    reg = tape.layer_norm_rows(reg, tape.param(params.region_ln_g), tape.param(params.region_ln_b),
                               S(1e-5));
    reg = tape.dropout(reg, cfg.dropout, dropout_rng, train_mode);

    VarT<S> tok = tape.embedding_rows(tape.param(params.tok_emb), tokens.ids);
    VarT<S> pos = tape.embedding_rows(tape.param(params.pos_emb), tokens.positions);
    VarT<S> txt = tape.add(tok, pos);
    txt = tape.layer_norm_rows(txt, tape.param(params.txt_ln_g), tape.param(params.txt_ln_b),
                               S(1e-5));
    txt = tape.dropout(txt, cfg.dropout, dropout_rng, train_mode);

    VarT<S> h = tape.concat_rows({reg, txt});
    h = tape.mask_rows(h, mask);
    return {h, mask};
}

}  // namespace shefu
