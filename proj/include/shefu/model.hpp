#pragma once

#include <atomic>
#include <optional>
#include <string>
#include <vector>

#include "shefu/dataset.hpp"
#include "shefu/embedder.hpp"
#include "shefu/funnel.hpp"
#include "shefu/heads.hpp"

namespace shefu {

enum class VariantSpec { shefu, no_switching_head, no_switching_tail, paired_baseline };

inline std::string variant_name(VariantSpec v) {
    switch (v) {
        case VariantSpec::shefu: return "shefu";
        case VariantSpec::no_switching_head: return "no_switching_head";
        case VariantSpec::no_switching_tail: return "no_switching_tail";
        case VariantSpec::paired_baseline: return "paired_baseline";
    }
    throw ContractError("variant_name: bad enum");
}

inline VariantSpec variant_from_name(const std::string& s) {
    if (s == "shefu") return VariantSpec::shefu;
    if (s == "no_switching_head") return VariantSpec::no_switching_head;
    if (s == "no_switching_tail") return VariantSpec::no_switching_tail;
    if (s == "paired_baseline") return VariantSpec::paired_baseline;
    throw ConfigError("unknown variant '" + s + "'");
}

// A model-ready sample: candidate encodings (visual ++ positional 7-vector),
// per-image context, and the tokenized instruction.
struct ModelInput {
    EncodedRegion targ, dest;
    std::vector<EncodedRegion> targ_ctx, dest_ctx;
    TokenSequence tokens;
};

struct ModelConfig {
    size_t d_f = 64;
    size_t k = 6;
    size_t d_l = 14;
    size_t d_v = 48;
    size_t d_model = 32;
    size_t layers = 2;
    size_t heads = 4;
    size_t ffn_mult = 4;
    double dropout = 0.1;
    VariantSpec variant = VariantSpec::shefu;

    size_t seq_len() const { return k + d_l + 2; }
    size_t final_len() const { return halving_schedule(layers, seq_len(), heads).back().first; }
    size_t head_input() const { return final_len() * d_model; }

    EmbedderConfig embedder() const { return {d_f, k, d_l, d_v, d_model, dropout}; }
    FunnelConfig funnel() const { return {layers, d_model, heads, ffn_mult, dropout}; }

    void validate() const {
        if (d_v < 2) throw ConfigError("d_v must cover UNK and PAD");
        if (d_l < 1 || k < 1) throw ConfigError("k and d_l must be positive");
        validate_funnel_config(funnel(), seq_len());
    }
};

inline ModelInput make_input(const Sample& s, const Vocabulary& vocab, size_t d_l) {
    ModelInput in;
    in.targ = EncodedRegion::from(s.target_candidate);
    in.dest = EncodedRegion::from(s.dest_candidate);
    for (const auto& r : s.target_context) in.targ_ctx.push_back(EncodedRegion::from(r));
    for (const auto& r : s.dest_context) in.dest_ctx.push_back(EncodedRegion::from(r));
    in.tokens = tokenize(s.instruction, vocab, d_l);
    return in;
}

template <typename S>
class ModelT {
public:
    ModelConfig cfg;
    EmbedderParamsT<S> emb;
    std::vector<FunnelLayerParamsT<S>> layers;
    // which heads exist depends on the variant
    std::optional<HeadParamsT<S>> target_head, dest_head, shared_head, joint_head;

    explicit ModelT(const ModelConfig& c, uint64_t init_seed = 1) : cfg(c) {
        cfg.validate();
        Rng rng(init_seed ^ 0x5eedf00d);
        const size_t din = cfg.d_f + 7, d = cfg.d_model;

        emb.region_w = make_xavier("embedder.region_w", {din, d}, rng);
        emb.region_b = make_zeros("embedder.region_b", {d});
        emb.region_ln_g = make_ones("embedder.region_ln_g", {d});
        emb.region_ln_b = make_zeros("embedder.region_ln_b", {d});
        emb.tok_emb = make_gaussian("embedder.tok_emb", {cfg.d_v, d}, rng, 0.02);
        emb.pos_emb = make_gaussian("embedder.pos_emb", {cfg.d_l, d}, rng, 0.02);
        emb.txt_ln_g = make_ones("embedder.txt_ln_g", {d});
        emb.txt_ln_b = make_zeros("embedder.txt_ln_b", {d});

        for (size_t l = 0; l < cfg.layers; ++l) {
            FunnelLayerParamsT<S> lp;
            std::string pre = "funnel." + std::to_string(l) + ".";
            lp.wq = make_xavier(pre + "wq", {d, d}, rng);
            lp.bq = make_zeros(pre + "bq", {d});
            lp.wk = make_xavier(pre + "wk", {d, d}, rng);
            lp.wv = make_xavier(pre + "wv", {d, d}, rng);
            lp.bv = make_zeros(pre + "bv", {d});
            lp.wo = make_xavier(pre + "wo", {d, d}, rng);
            lp.bo = make_zeros(pre + "bo", {d});
            lp.ln1_g = make_ones(pre + "ln1_g", {d});
            lp.ln1_b = make_zeros(pre + "ln1_b", {d});
            lp.ln2_g = make_ones(pre + "ln2_g", {d});
            lp.ln2_b = make_zeros(pre + "ln2_b", {d});
            lp.ffn_w1 = make_xavier(pre + "ffn_w1", {d, cfg.ffn_mult * d}, rng);
            lp.ffn_b1 = make_zeros(pre + "ffn_b1", {cfg.ffn_mult * d});
            lp.ffn_w2 = make_xavier(pre + "ffn_w2", {cfg.ffn_mult * d, d}, rng);
            lp.ffn_b2 = make_zeros(pre + "ffn_b2", {d});
            layers.push_back(std::move(lp));
        }

        const size_t hin = cfg.head_input();
        auto make_head = [&](const std::string& name) {
            HeadParamsT<S> h;
            h.w = make_xavier("tail." + name + ".w", {hin, 2}, rng);
            h.b = make_zeros("tail." + name + ".b", {2});
            return h;
        };
        switch (cfg.variant) {
            case VariantSpec::shefu:
            case VariantSpec::no_switching_head:
                target_head = make_head("target");
                dest_head = make_head("dest");
                break;
            case VariantSpec::no_switching_tail:
                shared_head = make_head("shared");
                break;
            case VariantSpec::paired_baseline:
                joint_head = make_head("joint");
                break;
        }
    }

    std::vector<ParamT<S>*> params() {
        std::vector<ParamT<S>*> out;
        emb.collect(out);
        for (auto& l : layers) l.collect(out);
        for (auto* h : {&target_head, &dest_head, &shared_head, &joint_head})
            if (h->has_value()) (*h)->collect(out);
        return out;
    }

    std::vector<const ParamT<S>*> params() const {
        auto mut = const_cast<ModelT*>(this)->params();
        return {mut.begin(), mut.end()};
    }

    size_t param_count() const {
        size_t n = 0;
        for (const auto* p : params()) n += p->value.numel();
        return n;
    }

    // Full forward pass for one sample in one mode. Returns the 2-class
    // probability distribution (index 1 = positive). Increments `counter`
    // once per invocation when provided.
    VarT<S> forward(TapeT<S>& tape, const ModelInput& in, Mode mode, bool train_mode = false,
                    Rng* rng = nullptr, std::atomic<uint64_t>* counter = nullptr) const {
        if (counter) counter->fetch_add(1, std::memory_order_relaxed);

        EncodedRegion t = in.targ, d = in.dest;
        const std::vector<EncodedRegion>* ctx = nullptr;
        std::vector<EncodedRegion> mixed;
        switch (cfg.variant) {
            case VariantSpec::shefu:
            case VariantSpec::no_switching_tail: {
                auto [st, sd] = switching_head(in.targ, in.dest, mode);
                t = std::move(st);
                d = std::move(sd);
                ctx = mode == Mode::target ? &in.targ_ctx : &in.dest_ctx;
                break;
            }
            case VariantSpec::no_switching_head:
                // input duplication instead of zero-fill
                if (mode == Mode::target) {
                    d = in.targ;
                    ctx = &in.targ_ctx;
                } else {
                    t = in.dest;
                    ctx = &in.dest_ctx;
                }
                break;
            case VariantSpec::paired_baseline: {
                // both candidates live in a single pass; context interleaves
                // the two images within the same K slots
                size_t i = 0, j = 0;
                while (mixed.size() < cfg.k && (i < in.targ_ctx.size() || j < in.dest_ctx.size())) {
                    if (i < in.targ_ctx.size()) mixed.push_back(in.targ_ctx[i++]);
                    if (mixed.size() < cfg.k && j < in.dest_ctx.size())
                        mixed.push_back(in.dest_ctx[j++]);
                }
                ctx = &mixed;
                break;
            }
        }

        auto seq = embed(tape, cfg.embedder(), emb, t, d, *ctx, in.tokens, train_mode, rng);
        VarT<S> h = encode(tape, seq.h, seq.mask, cfg.funnel(), layers, train_mode, rng);
        return predict_dist(tape, h, head_for(mode));
    }

    // Positive-class probability without gradient tracking.
    double predict_prob(const ModelInput& in, Mode mode,
                        std::atomic<uint64_t>* counter = nullptr) const {
        TapeT<S> tape(/*grad_enabled=*/false);
        VarT<S> dist = forward(tape, in, mode, false, nullptr, counter);
        return static_cast<double>(dist.value().data[1]);
    }

    const HeadParamsT<S>& head_for(Mode mode) const {
        switch (cfg.variant) {
            case VariantSpec::shefu:
            case VariantSpec::no_switching_head:
                return mode == Mode::target ? *target_head : *dest_head;
            case VariantSpec::no_switching_tail: return *shared_head;
            case VariantSpec::paired_baseline: return *joint_head;
        }
        throw ContractError("head_for: bad variant");
    }

private:
    ParamT<S> make_xavier(const std::string& name, Shape sh, Rng& rng) {
        TensorT<S> t(sh);
        double fan_in = static_cast<double>(sh[0]);
        double fan_out = static_cast<double>(sh.size() > 1 ? sh[1] : sh[0]);
        double bound = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& v : t.data) v = static_cast<S>(rng.uniform(-bound, bound));
        return ParamT<S>(name, std::move(t));
    }
    ParamT<S> make_gaussian(const std::string& name, Shape sh, Rng& rng, double sigma) {
        TensorT<S> t(sh);
        for (auto& v : t.data) v = static_cast<S>(rng.normal() * sigma);
        return ParamT<S>(name, std::move(t));
    }
    ParamT<S> make_zeros(const std::string& name, Shape sh) {
        return ParamT<S>(name, TensorT<S>::zeros(std::move(sh)));
    }
    ParamT<S> make_ones(const std::string& name, Shape sh) {
        return ParamT<S>(name, TensorT<S>::full(std::move(sh), S(1)));
    }
};

using Model = ModelT<float>;

}  // namespace shefu
