#pragma once

// Shared fixtures for the model-level test suites.

#include <string>
#include <vector>

#include "shefu/dataset.hpp"
#include "shefu/model.hpp"

namespace shefu::testing {

inline Vocabulary tiny_vocab() {
    return Vocabulary::from_tokens({"<unk>", "<pad>", "move", "the", "red", "cup", "to", "blue",
                                    "table", "green", "ball", "shelf", "on", "put"});
}

inline ModelConfig tiny_config(VariantSpec v = VariantSpec::shefu) {
    ModelConfig c;
    c.d_f = 16;
    c.k = 3;
    c.d_l = 6;
    c.d_v = tiny_vocab().size();
    c.d_model = 8;
    c.layers = 2;
    c.heads = 2;
    c.ffn_mult = 4;
    c.dropout = 0.1;
    c.variant = v;
    return c;
}

inline RegionFeature toy_region(uint64_t id, double x1, double y1, double x2, double y2,
                                size_t d_f, uint64_t seed) {
    RegionFeature r;
    r.id = id;
    r.bbox = BBox{x1, y1, x2, y2, 640, 480};
    Rng rng(seed);
    r.visual.resize(d_f);
    for (auto& v : r.visual) v = static_cast<float>(rng.normal());
    return r;
}

inline Sample toy_sample(size_t d_f, uint64_t seed = 99) {
    Sample s;
    s.id = 1;
    s.instruction = "move the red cup to the blue table";
    s.target_candidate = toy_region(10, 50, 50, 150, 160, d_f, seed);
    s.dest_candidate = toy_region(20, 300, 200, 500, 400, d_f, seed + 1);
    s.target_context = {toy_region(11, 200, 60, 290, 170, d_f, seed + 2),
                        toy_region(12, 400, 40, 520, 180, d_f, seed + 3)};
    s.dest_context = {toy_region(21, 40, 250, 180, 420, d_f, seed + 4)};
    s.gt_target = s.target_candidate.bbox;
    s.gt_dest = s.dest_candidate.bbox;
    s.y_targ = s.y_dest = true;
    s.target_image_id = 100;
    s.dest_image_id = 101;
    return s;
}

}  // namespace shefu::testing
