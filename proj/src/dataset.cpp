#include "shefu/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>

namespace shefu {

namespace {

constexpr double kImgW = 640, kImgH = 480;

const std::vector<std::string>& color_words() {
    static const std::vector<std::string> w{"red",   "green", "blue",   "yellow",
                                            "white", "black", "purple", "pink"};
    return w;
}
const std::vector<std::string>& object_words() {
    static const std::vector<std::string> w{"cup", "bottle", "plate", "book", "ball",
                                            "box", "can",    "mug",   "bowl", "toy"};
    return w;
}
const std::vector<std::string>& furniture_words() {
    static const std::vector<std::string> w{"table", "chair",   "shelf", "sofa",  "bed",
                                            "desk",  "rack",    "bin",   "cabinet", "stand"};
    return w;
}
const std::vector<std::string>& spatial_words() {
    static const std::vector<std::string> w{"left", "middle", "right"};
    return w;
}

const FeatureLayout kLayout{};

constexpr size_t kMaxVocab = 646;

}  // namespace

const char* const kInstructionTemplates[] = {
    "move the {tc} {to} to the {fc} {ff}",
    "put the {tc} {to} on the {fc} {ff}",
    "take the {tc} {to} and place it on the {fc} {ff}",
    "bring the {tc} {to} to the {fc} {ff} on the {fs}",
};

std::string neg_method_name(NegMethod m) {
    switch (m) {
        case NegMethod::none: return "none";
        case NegMethod::region_swap: return "region_swap";
        case NegMethod::instruction_swap: return "instruction_swap";
        case NegMethod::both: return "both";
        case NegMethod::random_choice: return "random";
    }
    throw ContractError("neg_method_name: bad enum");
}

NegMethod neg_method_from_name(const std::string& s) {
    if (s == "none") return NegMethod::none;
    if (s == "region_swap") return NegMethod::region_swap;
    if (s == "instruction_swap") return NegMethod::instruction_swap;
    if (s == "both") return NegMethod::both;
    if (s == "random") return NegMethod::random_choice;
    throw ParseError("unknown negative method '" + s + "'");
}

const std::vector<Sample>& Dataset::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ContractError("unknown split '" + name + "'");
}

std::vector<RegionFeature> make_positive(const std::vector<RegionFeature>& detections,
                                         const BBox& gt) {
    std::vector<RegionFeature> out;
    for (const auto& d : detections)
        if (iou(d.bbox, gt) >= 0.7) out.push_back(d);
    return out;
}

Sample make_negative(const Sample& positive, NegMethod method,
                     const std::vector<std::string>& instruction_donors, uint64_t rng_seed) {
    Rng rng(rng_seed);
    if (method == NegMethod::random_choice) {
        static const NegMethod kChoices[3] = {NegMethod::region_swap, NegMethod::instruction_swap,
                                              NegMethod::both};
        method = kChoices[rng.uniform_int(3)];
    }
    if (method == NegMethod::none) throw ContractError("make_negative: method must not be 'none'");

    Sample s = positive;
    s.neg_method = method;

    if (method == NegMethod::region_swap || method == NegMethod::both) {
        bool swap_target = rng.uniform_int(2) == 0;
        const auto& ctx = swap_target ? s.target_context : s.dest_context;
        const BBox& gt = swap_target ? s.gt_target : s.gt_dest;
        std::vector<size_t> eligible;
        for (size_t i = 0; i < ctx.size(); ++i)
            if (iou(ctx[i].bbox, gt) <= 0.3) eligible.push_back(i);
        if (eligible.empty())
            throw SamplingExhaustedError("make_negative: no region with IoU <= 0.3 on the " +
                                         std::string(swap_target ? "target" : "destination") +
                                         " side");
        const RegionFeature& donor = ctx[eligible[rng.uniform_int(eligible.size())]];
        if (swap_target) {
            s.target_candidate = donor;
            s.y_targ = false;
        } else {
            s.dest_candidate = donor;
            s.y_dest = false;
        }
    }
    if (method == NegMethod::instruction_swap || method == NegMethod::both) {
        if (instruction_donors.empty())
            throw SamplingExhaustedError("make_negative: empty instruction donor pool");
        s.instruction = instruction_donors[rng.uniform_int(instruction_donors.size())];
        s.y_targ = false;
        s.y_dest = false;
    }
    return s;
}

std::vector<Sample> balance(const std::vector<Sample>& samples, uint64_t seed) {
    std::vector<size_t> pos, neg;
    for (size_t i = 0; i < samples.size(); ++i)
        (samples[i].joint_label() ? pos : neg).push_back(i);
    if (pos.empty() || neg.empty())
        throw ContractError("balance: need at least one positive and one negative");
    if (pos.size() == neg.size()) return samples;

    std::vector<size_t>& majority = pos.size() > neg.size() ? pos : neg;
    size_t keep_n = std::min(pos.size(), neg.size());
    Rng rng(seed);
    rng.shuffle(majority);
    std::set<size_t> drop(majority.begin() + static_cast<long>(keep_n), majority.end());
    std::vector<Sample> out;
    out.reserve(samples.size() - drop.size());
    for (size_t i = 0; i < samples.size(); ++i)
        if (!drop.count(i)) out.push_back(samples[i]);
    return out;
}

std::vector<std::string> builtin_vocab_words() {
    std::vector<std::string> words{"<unk>", "<pad>"};
    auto add = [&](const std::vector<std::string>& v) { words.insert(words.end(), v.begin(), v.end()); };
    add(color_words());
    add(object_words());
    add(furniture_words());
    add(spatial_words());
    add({"move", "put", "take", "bring", "the", "to", "on", "and", "place", "it", "in", "a"});
    return words;
}

Vocabulary generation_vocab(const GenConfig& cfg) {
    std::vector<std::string> words = cfg.vocab_words.empty() ? builtin_vocab_words() : cfg.vocab_words;
    if (words.size() > kMaxVocab)
        throw ConfigError("vocabulary larger than the " + std::to_string(kMaxVocab) + "-entry cap");
    Vocabulary v = Vocabulary::from_tokens(std::move(words));
    // the grammar must be fully covered, otherwise generated text degrades to UNK
    std::vector<std::string> required{"move", "put", "take", "bring", "the", "to",
                                      "on",   "and", "place", "it"};
    for (const auto& grp : {color_words(), object_words(), furniture_words(), spatial_words()})
        required.insert(required.end(), grp.begin(), grp.end());
    for (const auto& w : required)
        if (!v.contains(w)) throw ConfigError("vocabulary miss: grammar word '" + w + "' not in vocabulary");
    return v;
}

namespace {

struct EntityDraft {
    SceneRegion region;
    bool masked = false;  // attributes zeroed in the feature vector
};

struct DetDraft {
    RegionFeature feat;
    double conf = 0;
};

int spatial_of(const BBox& b) {
    double cx = 0.5 * (b.x1 + b.x2);
    if (cx < b.W / 3) return 0;
    if (cx < 2 * b.W / 3) return 1;
    return 2;
}

BBox grid_box(size_t cell, bool furniture, Rng& rng) {
    size_t col = cell % 4, row = cell / 4;
    double x0, y0, w, h;
    if (furniture) {
        x0 = col * 160.0 + 8 + rng.uniform(0, 20);
        w = rng.uniform(100, 130);
        y0 = 30 + row * 210.0 + rng.uniform(0, 30);
        h = rng.uniform(120, 170);
    } else {
        x0 = col * 160.0 + 8 + rng.uniform(0, 30);
        w = rng.uniform(70, 110);
        y0 = 30 + row * 210.0 + rng.uniform(0, 40);
        h = rng.uniform(90, 150);
    }
    BBox b{x0, y0, x0 + w, y0 + h, kImgW, kImgH};
    b.validate();
    return b;
}

// Random box near `src` whose IoU with it lands inside [lo, hi].
std::optional<BBox> jitter_box(const BBox& src, double lo, double hi, Rng& rng) {
    double w = src.width(), h = src.height();
    // shift/scale ranges roughly matched to the requested band
    double shift = hi >= 0.7 ? 0.08 : (lo > 0.3 ? 0.3 : 0.8);
    for (int attempt = 0; attempt < 300; ++attempt) {
        double dx = rng.uniform(-shift, shift) * w;
        double dy = rng.uniform(-shift, shift) * h;
        double sw = rng.uniform(0.9, 1.1), sh = rng.uniform(0.9, 1.1);
        BBox b{src.x1 + dx, src.y1 + dy, src.x1 + dx + w * sw, src.y1 + dy + h * sh, src.W, src.H};
        b.x1 = std::max(0.0, b.x1);
        b.y1 = std::max(0.0, b.y1);
        b.x2 = std::min(src.W, b.x2);
        b.y2 = std::min(src.H, b.y2);
        if (!(b.x1 < b.x2 && b.y1 < b.y2)) continue;
        double v = iou(b, src);
        if (v >= lo && v <= hi) return b;
    }
    return std::nullopt;
}

std::vector<float> entity_feature(const SceneRegion& r, bool masked, uint32_t d_f, double sigma,
                                  Rng& rng) {
    std::vector<float> f(d_f, 0.0f);
    if (!masked) {
        f[kLayout.color_off + static_cast<size_t>(r.color)] = kLayout.scale;
        if (r.furniture)
            f[kLayout.furniture_off + static_cast<size_t>(r.category)] = kLayout.scale;
        else
            f[kLayout.object_off + static_cast<size_t>(r.category)] = kLayout.scale;
        f[kLayout.spatial_off + static_cast<size_t>(r.spatial)] = kLayout.scale;
        f[kLayout.flag_off] = r.furniture ? kLayout.scale : 0.0f;
    }
    if (sigma > 0)
        for (auto& v : f) v += static_cast<float>(rng.normal() * sigma);
    return f;
}

struct SceneDraft {
    Scene scene;                       // true regions of both images together
    uint64_t target_image_id = 0, dest_image_id = 0;
    BBox gt_target, gt_dest;
    std::vector<DetDraft> target_dets, dest_dets;  // all detections per image
    std::vector<size_t> target_pos, dest_pos;      // det indices with IoU >= 0.7
    std::vector<std::string> instructions;
    int t_col = 0, t_cat = 0, f_col = 0, f_cat = 0;  // referent attributes
};

std::string fill_template(const std::string& tpl, const std::string& tc, const std::string& to,
                          const std::string& fc, const std::string& ff, const std::string& fs) {
    std::string out = tpl;
    auto rep = [&](const std::string& key, const std::string& val) {
        size_t p = out.find(key);
        if (p != std::string::npos) out.replace(p, key.size(), val);
    };
    rep("{tc}", tc);
    rep("{to}", to);
    rep("{fc}", fc);
    rep("{ff}", ff);
    rep("{fs}", fs);
    return out;
}

SceneDraft build_scene(const GenConfig& cfg, uint64_t scene_index, Rng rng) {
    SceneDraft d;
    d.target_image_id = (scene_index + 1) * 10;
    d.dest_image_id = (scene_index + 1) * 10 + 1;
    uint64_t next_region_id = (scene_index + 1) * 10000;
    const size_t det_cap = cfg.k + 1;  // keeps swap donors alive after truncation

    const size_t n_col = color_words().size(), n_obj = object_words().size(),
                 n_furn = furniture_words().size();

    d.t_col = static_cast<int>(rng.uniform_int(n_col));
    d.t_cat = static_cast<int>(rng.uniform_int(n_obj));
    d.f_col = static_cast<int>(rng.uniform_int(n_col));
    d.f_cat = static_cast<int>(rng.uniform_int(n_furn));

    // --- target image entities: the target object plus distractors that share
    // exactly one attribute, so (color, category) identifies the referent.
    std::vector<EntityDraft> t_entities;
    std::vector<size_t> cells{0, 1, 2, 3, 4, 5, 6, 7};
    rng.shuffle(cells);
    size_t cell_i = 0;
    auto place = [&](int cat, int col, bool furn, bool masked = false) {
        SceneRegion r;
        r.category = cat;
        r.color = col;
        r.furniture = furn;
        r.bbox = grid_box(cells[cell_i++], furn, rng);
        r.spatial = spatial_of(r.bbox);
        return EntityDraft{r, masked};
    };

    t_entities.push_back(place(d.t_cat, d.t_col, false));  // index 0: ground truth
    int other_col = static_cast<int>((d.t_col + 1 + rng.uniform_int(n_col - 1)) % n_col);
    int other_cat = static_cast<int>((d.t_cat + 1 + rng.uniform_int(n_obj - 1)) % n_obj);
    t_entities.push_back(place(d.t_cat, other_col, false));  // same category, other color
    t_entities.push_back(place(other_cat, d.t_col, false));  // same color, other category
    if (cfg.k >= 6) t_entities.push_back(place(static_cast<int>(rng.uniform_int(n_obj)),
                                               static_cast<int>(rng.uniform_int(n_col)), false));

    // --- destination image entities: furniture plus the (masked) target object.
    std::vector<EntityDraft> f_entities;
    rng.shuffle(cells);
    cell_i = 0;
    f_entities.push_back(place(d.f_cat, d.f_col, true));  // index 0: ground truth
    int fother_col = static_cast<int>((d.f_col + 1 + rng.uniform_int(n_col - 1)) % n_col);
    int fother_cat = static_cast<int>((d.f_cat + 1 + rng.uniform_int(n_furn - 1)) % n_furn);
    f_entities.push_back(place(d.f_cat, fother_col, true));
    f_entities.push_back(place(fother_cat, d.f_col, true));
    f_entities.push_back(place(d.t_cat, d.t_col, false, /*masked=*/true));  // placed target, masked

    d.gt_target = t_entities[0].region.bbox;
    d.gt_dest = f_entities[0].region.bbox;

    for (auto& e : t_entities) d.scene.regions.push_back(e.region);
    d.scene.gt_target_idx = 0;
    size_t dest_base = d.scene.regions.size();
    for (auto& e : f_entities) d.scene.regions.push_back(e.region);
    d.scene.gt_dest_idx = dest_base;

    // --- detections
    auto detect = [&](const std::vector<EntityDraft>& entities, const BBox& gt,
                      std::vector<DetDraft>& dets, std::vector<size_t>& pos_idx) {
        // two high-IoU detections of the ground truth
        for (int i = 0; i < 2; ++i) {
            auto box = jitter_box(gt, 0.7, 1.0, rng);
            if (!box) throw SamplingExhaustedError("could not jitter a positive detection");
            SceneRegion r = entities[0].region;
            r.bbox = *box;
            r.spatial = spatial_of(*box);
            DetDraft dd;
            dd.feat.id = next_region_id++;
            dd.feat.bbox = *box;
            dd.feat.visual = entity_feature(r, entities[0].masked, cfg.d_f, cfg.noise_sigma, rng);
            dd.conf = rng.uniform(0.7, 1.0);
            pos_idx.push_back(dets.size());
            dets.push_back(std::move(dd));
        }
        // one detection per distractor entity
        for (size_t e = 1; e < entities.size() && dets.size() < det_cap; ++e) {
            auto box = jitter_box(entities[e].region.bbox, 0.7, 1.0, rng);
            if (!box) continue;
            if (iou(*box, gt) > 0.3) continue;  // keep distractors in the swap-donor band
            SceneRegion r = entities[e].region;
            r.bbox = *box;
            r.spatial = spatial_of(*box);
            DetDraft dd;
            dd.feat.id = next_region_id++;
            dd.feat.bbox = *box;
            dd.feat.visual = entity_feature(r, entities[e].masked, cfg.d_f, cfg.noise_sigma, rng);
            dd.conf = rng.uniform(0.5, 1.0);
            dets.push_back(std::move(dd));
        }
        // occasionally a mid-band detection: context only, neither class
        if (dets.size() < det_cap && rng.uniform() < 0.5) {
            auto box = jitter_box(gt, 0.31, 0.69, rng);
            if (box) {
                SceneRegion r = entities[0].region;
                r.bbox = *box;
                r.spatial = spatial_of(*box);
                DetDraft dd;
                dd.feat.id = next_region_id++;
                dd.feat.bbox = *box;
                dd.feat.visual = entity_feature(r, entities[0].masked, cfg.d_f, cfg.noise_sigma, rng);
                dd.conf = rng.uniform(0.4, 0.8);
                dets.push_back(std::move(dd));
            }
        }
    };
    detect(t_entities, d.gt_target, d.target_dets, d.target_pos);
    detect(f_entities, d.gt_dest, d.dest_dets, d.dest_pos);

    // --- instructions
    size_t n_instr = 2 + rng.uniform_int(2);
    for (size_t i = 0; i < n_instr; ++i) {
        const char* tpl = kInstructionTemplates[rng.uniform_int(4)];
        d.instructions.push_back(fill_template(
            tpl, color_words()[static_cast<size_t>(d.t_col)], object_words()[static_cast<size_t>(d.t_cat)],
            color_words()[static_cast<size_t>(d.f_col)], furniture_words()[static_cast<size_t>(d.f_cat)],
            spatial_words()[static_cast<size_t>(f_entities[0].region.spatial)]));
    }
    return d;
}

// Context regions of one image: confidence-descending, truncated to K.
std::vector<RegionFeature> context_of(const std::vector<DetDraft>& dets, uint32_t k) {
    std::vector<size_t> order(dets.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return dets[a].conf > dets[b].conf; });
    std::vector<RegionFeature> ctx;
    for (size_t i = 0; i < order.size() && i < k; ++i) ctx.push_back(dets[order[i]].feat);
    return ctx;
}

}  // namespace

Dataset generate_synthetic(const GenConfig& cfg) {
    if (cfg.d_f < kLayout.used)
        throw ConfigError("d_f must be >= " + std::to_string(kLayout.used) +
                          " to hold the attribute subspaces");
    if (cfg.k < 4) throw ConfigError("k must be >= 4");
    if (cfg.n_scenes < 10) throw ConfigError("n_scenes must be >= 10");
    generation_vocab(cfg);  // validates grammar coverage

    Rng base(cfg.seed);
    const size_t n_val_scenes = static_cast<size_t>(std::lround(cfg.val_scene_frac * cfg.n_scenes));
    const size_t n_test_scenes = static_cast<size_t>(std::lround(cfg.test_scene_frac * cfg.n_scenes));
    if (n_val_scenes + n_test_scenes >= cfg.n_scenes)
        throw ConfigError("scene split fractions leave no training scenes");
    const size_t n_train_scenes = cfg.n_scenes - n_val_scenes - n_test_scenes;

    // phase 1: scenes (per-scene independent streams)
    std::vector<SceneDraft> drafts;
    drafts.reserve(cfg.n_scenes);
    for (size_t s = 0; s < cfg.n_scenes; ++s) drafts.push_back(build_scene(cfg, s, base.fork(s)));

    // phase 2: per-scene positives and negatives
    struct Pool {
        std::vector<Sample> pos, neg;
    };
    std::array<Pool, 3> pools;  // train/val/test
    auto split_of = [&](size_t scene) -> size_t {
        if (scene < n_train_scenes) return 0;
        if (scene < n_train_scenes + n_val_scenes) return 1;
        return 2;
    };

    for (size_t s = 0; s < cfg.n_scenes; ++s) {
        SceneDraft& d = drafts[s];
        Rng rng = base.fork(cfg.n_scenes + s);

        std::vector<std::string> donors;
        for (size_t o = 0; o < drafts.size(); ++o) {
            if (o == s) continue;
            const SceneDraft& od = drafts[o];
            bool t_differs = od.t_col != d.t_col || od.t_cat != d.t_cat;
            bool f_differs = od.f_col != d.f_col || od.f_cat != d.f_cat;
            if (t_differs && f_differs)
                donors.insert(donors.end(), od.instructions.begin(), od.instructions.end());
        }

        auto t_ctx = context_of(d.target_dets, cfg.k);
        auto f_ctx = context_of(d.dest_dets, cfg.k);

        std::vector<RegionFeature> t_all, f_all;
        for (auto& dd : d.target_dets) t_all.push_back(dd.feat);
        for (auto& dd : d.dest_dets) f_all.push_back(dd.feat);
        auto t_good = make_positive(t_all, d.gt_target);
        auto f_good = make_positive(f_all, d.gt_dest);
        if (t_good.size() < 2 || f_good.size() < 2)
            throw SamplingExhaustedError("scene lost its positive detections");

        const std::array<std::pair<size_t, size_t>, 3> combos{{{0, 0}, {1, 1}, {0, 1}}};
        size_t pool = split_of(s);
        for (size_t i = 0; i < combos.size(); ++i) {
            Sample p;
            p.instruction = d.instructions[i % d.instructions.size()];
            p.target_candidate = t_good[combos[i].first];
            p.dest_candidate = f_good[combos[i].second];
            p.target_context = t_ctx;
            p.dest_context = f_ctx;
            p.y_targ = p.y_dest = true;
            p.neg_method = NegMethod::none;
            p.gt_target = d.gt_target;
            p.gt_dest = d.gt_dest;
            p.target_image_id = d.target_image_id;
            p.dest_image_id = d.dest_image_id;
            pools[pool].pos.push_back(p);
            pools[pool].neg.push_back(
                make_negative(p, NegMethod::random_choice, donors, rng.next_u64()));
        }
    }

    // phase 3: per split, balance then trim to the exact requested sizes
    Dataset ds;
    ds.d_f = cfg.d_f;
    ds.k = cfg.k;
    const std::array<size_t, 3> want{cfg.train_samples, cfg.val_samples, cfg.test_samples};
    const std::array<std::vector<Sample>*, 3> out{&ds.train, &ds.val, &ds.test};
    const char* names[3] = {"train", "val", "test"};
    uint64_t next_sample_id = 1;
    for (size_t p = 0; p < 3; ++p) {
        size_t need_pos = (want[p] + 1) / 2, need_neg = want[p] / 2;
        if (pools[p].pos.size() < need_pos || pools[p].neg.size() < need_neg)
            throw ConfigError(std::string("not enough generated samples for split '") + names[p] +
                              "': have " + std::to_string(pools[p].pos.size()) + "+" +
                              std::to_string(pools[p].neg.size()) + ", want " +
                              std::to_string(want[p]) + " (increase n_scenes)");
        Rng rng = base.fork(900000 + p);
        rng.shuffle(pools[p].pos);
        rng.shuffle(pools[p].neg);
        std::vector<Sample> chosen(pools[p].pos.begin(), pools[p].pos.begin() + static_cast<long>(need_pos));
        chosen.insert(chosen.end(), pools[p].neg.begin(), pools[p].neg.begin() + static_cast<long>(need_neg));
        // for odd sizes the positive class keeps the extra sample (|diff| = 1)
        if (want[p] % 2 == 0) chosen = balance(chosen, rng.next_u64());
        rng.shuffle(chosen);
        for (auto& smp : chosen) smp.id = next_sample_id++;
        *out[p] = std::move(chosen);
    }
    return ds;
}

}  // namespace shefu
