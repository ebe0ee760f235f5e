#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "shefu/common.hpp"
#include "shefu/geometry.hpp"
#include "shefu/text.hpp"

namespace shefu {

// A candidate region: visual feature vector plus geometry. The id ties the
// region to its record in the feature blob.
struct RegionFeature {
    uint64_t id = 0;
    std::vector<float> visual;
    BBox bbox;

    bool operator==(const RegionFeature& o) const {
        return id == o.id && visual == o.visual && bbox == o.bbox;
    }
};

enum class NegMethod { none, region_swap, instruction_swap, both, random_choice };

std::string neg_method_name(NegMethod m);
NegMethod neg_method_from_name(const std::string& s);

// One training/evaluation sample: an instruction, a target-object candidate
// with the context regions of its image, and a destination candidate with the
// context regions of its image.
struct Sample {
    uint64_t id = 0;
    std::string instruction;
    RegionFeature target_candidate;
    RegionFeature dest_candidate;
    std::vector<RegionFeature> target_context;  // <= K, confidence-descending
    std::vector<RegionFeature> dest_context;
    bool y_targ = false;
    bool y_dest = false;
    NegMethod neg_method = NegMethod::none;
    BBox gt_target, gt_dest;
    uint64_t target_image_id = 0, dest_image_id = 0;

    bool joint_label() const { return y_targ && y_dest; }

    bool operator==(const Sample& o) const {
        return id == o.id && instruction == o.instruction && target_candidate == o.target_candidate &&
               dest_candidate == o.dest_candidate && target_context == o.target_context &&
               dest_context == o.dest_context && y_targ == o.y_targ && y_dest == o.y_dest &&
               neg_method == o.neg_method && gt_target == o.gt_target && gt_dest == o.gt_dest &&
               target_image_id == o.target_image_id && dest_image_id == o.dest_image_id;
    }
};

struct Dataset {
    uint32_t d_f = 0;
    uint32_t k = 0;  // max context regions per image
    std::vector<Sample> train, val, test;

    const std::vector<Sample>& split(const std::string& name) const;
    bool operator==(const Dataset& o) const {
        return d_f == o.d_f && k == o.k && train == o.train && val == o.val && test == o.test;
    }
};

// Synthetic scene: true regions with attribute metadata plus the indices of
// the ground-truth target object and destination furniture.
struct SceneRegion {
    int category = 0;  // object or furniture category index
    int color = 0;
    int spatial = 0;  // 0 left / 1 middle / 2 right, from the box center
    bool furniture = false;
    BBox bbox;
};

struct Scene {
    std::vector<SceneRegion> regions;
    size_t gt_target_idx = 0;
    size_t gt_dest_idx = 0;
};

// Where attributes live inside the visual vector. Disjoint one-hot subspaces;
// everything after `used` is noise-only.
struct FeatureLayout {
    size_t color_off = 0;
    size_t n_colors = 8;
    size_t object_off = 8;
    size_t n_objects = 10;
    size_t furniture_off = 18;
    size_t n_furniture = 10;
    size_t spatial_off = 28;
    size_t n_spatial = 3;
    size_t flag_off = 31;
    size_t used = 32;
    float scale = 2.0f;  // one-hot magnitude
};

struct GenConfig {
    uint64_t seed = 1;
    size_t n_scenes = 1099;
    uint32_t k = 6;
    uint32_t d_f = 64;
    double noise_sigma = 0.35;
    size_t train_samples = 4420;
    size_t val_samples = 642;
    size_t test_samples = 686;
    // scene split fractions (by count, train gets the remainder)
    double val_scene_frac = 0.15;
    double test_scene_frac = 0.17;
    std::vector<std::string> vocab_words;  // empty -> builtin vocabulary
};

// --- sampling ops -----------------------------------------------------------

// Detections whose IoU with the ground truth is >= 0.7, labeled positive.
std::vector<RegionFeature> make_positive(const std::vector<RegionFeature>& detections,
                                         const BBox& gt);

// Derive a negative from a positive sample by one of the three methods.
// Region donors come from the sample's own context regions (IoU <= 0.3 with
// the swapped side's ground truth); instruction donors are supplied by the
// caller and must refer to different objects/furniture.
Sample make_negative(const Sample& positive, NegMethod method,
                     const std::vector<std::string>& instruction_donors, uint64_t rng_seed);

// Subsample the majority class (by joint label) so |#pos - #neg| <= 1.
std::vector<Sample> balance(const std::vector<Sample>& samples, uint64_t seed);

// --- generation ---------------------------------------------------------------

extern const char* const kInstructionTemplates[];
std::vector<std::string> builtin_vocab_words();

Dataset generate_synthetic(const GenConfig& cfg);
Vocabulary generation_vocab(const GenConfig& cfg);

// --- io ----------------------------------------------------------------------

// Directory layout: {train,val,test}.jsonl + features.bin + vocab.txt + meta.json.
void save_dataset(const std::string& dir, const Dataset& ds, const Vocabulary& vocab,
                  const std::string& config_hash);
Dataset load_dataset(const std::string& dir);
Vocabulary load_vocab(const std::string& path);
void save_vocab(const std::string& path, const Vocabulary& vocab);

}  // namespace shefu
