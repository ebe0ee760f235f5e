#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "shefu/dataset.hpp"

namespace shefu {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kFeatMagic[8] = {'S', 'H', 'F', 'U', 'F', 'E', 'A', 'T'};
constexpr uint32_t kFeatVersion = 1;

template <typename T>
void write_le(std::ostream& os, T v) {
    // little-endian host assumed (checked in meta loading path via magic)
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_le(std::istream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return static_cast<bool>(is);
}

json bbox_to_json(const BBox& b) { return json::array({b.x1, b.y1, b.x2, b.y2, b.W, b.H}); }

BBox bbox_from_json(const json& j) {
    if (!j.is_array() || j.size() != 6) throw SchemaError("bbox must be [x1,y1,x2,y2,W,H]");
    BBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
           j[3].get<double>(), j[4].get<double>(), j[5].get<double>()};
    b.validate();
    return b;
}

void collect_regions(const Sample& s, std::map<uint64_t, const RegionFeature*>& regions) {
    auto put = [&](const RegionFeature& r) {
        auto [it, inserted] = regions.emplace(r.id, &r);
        if (!inserted && !(*it->second == r))
            throw ContractError("region id " + std::to_string(r.id) + " has conflicting payloads");
    };
    put(s.target_candidate);
    put(s.dest_candidate);
    for (const auto& r : s.target_context) put(r);
    for (const auto& r : s.dest_context) put(r);
}

void write_split_jsonl(const fs::path& path, const std::vector<Sample>& samples) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open " + path.string() + " for writing");
    for (const Sample& s : samples) {
        json line;
        line["id"] = s.id;
        line["instruction"] = s.instruction;
        line["target_image_id"] = s.target_image_id;
        line["dest_image_id"] = s.dest_image_id;
        line["target_region_id"] = s.target_candidate.id;
        line["dest_region_id"] = s.dest_candidate.id;
        line["target_bbox"] = bbox_to_json(s.target_candidate.bbox);
        line["dest_bbox"] = bbox_to_json(s.dest_candidate.bbox);
        line["y_targ"] = s.y_targ;
        line["y_dest"] = s.y_dest;
        json ctx_ids = json::array();
        json tctx = json::array(), dctx = json::array();
        json ctx_boxes = json::object();
        for (const auto& r : s.target_context) {
            ctx_ids.push_back(r.id);
            tctx.push_back(r.id);
            ctx_boxes[std::to_string(r.id)] = bbox_to_json(r.bbox);
        }
        for (const auto& r : s.dest_context) {
            ctx_ids.push_back(r.id);
            dctx.push_back(r.id);
            ctx_boxes[std::to_string(r.id)] = bbox_to_json(r.bbox);
        }
        line["context_region_ids"] = ctx_ids;
        line["target_context_ids"] = tctx;
        line["dest_context_ids"] = dctx;
        line["context_bboxes"] = ctx_boxes;
        line["gt_target_bbox"] = bbox_to_json(s.gt_target);
        line["gt_dest_bbox"] = bbox_to_json(s.gt_dest);
        line["neg_method"] = neg_method_name(s.neg_method);
        os << line.dump() << '\n';
    }
}

RegionFeature region_from(uint64_t id, const BBox& box,
                          const std::map<uint64_t, std::vector<float>>& blob,
                          const std::string& where) {
    auto it = blob.find(id);
    if (it == blob.end())
        throw SchemaError(where + ": region id " + std::to_string(id) + " missing from feature blob");
    return RegionFeature{id, it->second, box};
}

std::vector<Sample> read_split_jsonl(const fs::path& path,
                                     const std::map<uint64_t, std::vector<float>>& blob,
                                     uint32_t k) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open " + path.string());
    std::vector<Sample> out;
    std::string linebuf;
    size_t lineno = 0;
    while (std::getline(is, linebuf)) {
        ++lineno;
        if (linebuf.empty()) continue;
        const std::string where = path.filename().string() + " line " + std::to_string(lineno);
        json j;
        try {
            j = json::parse(linebuf);
        } catch (const json::exception& e) {
            throw ParseError(where + ": " + e.what());
        }
        try {
            Sample s;
            s.id = j.at("id").get<uint64_t>();
            s.instruction = j.at("instruction").get<std::string>();
            s.target_image_id = j.at("target_image_id").get<uint64_t>();
            s.dest_image_id = j.at("dest_image_id").get<uint64_t>();
            s.y_targ = j.at("y_targ").get<bool>();
            s.y_dest = j.at("y_dest").get<bool>();
            uint64_t trid = j.at("target_region_id").get<uint64_t>();
            uint64_t drid = j.at("dest_region_id").get<uint64_t>();
            s.target_candidate = region_from(trid, bbox_from_json(j.at("target_bbox")), blob, where);
            s.dest_candidate = region_from(drid, bbox_from_json(j.at("dest_bbox")), blob, where);

            json ctx_boxes = j.value("context_bboxes", json::object());
            auto load_ctx = [&](const json& ids, std::vector<RegionFeature>& dst) {
                for (const auto& idj : ids) {
                    uint64_t rid = idj.get<uint64_t>();
                    std::string key = std::to_string(rid);
                    BBox box;
                    if (ctx_boxes.contains(key)) {
                        box = bbox_from_json(ctx_boxes[key]);
                    } else {
                        // degraded user file without geometry: whole-image box
                        box = BBox{0, 0, 640, 480, 640, 480};
                    }
                    dst.push_back(region_from(rid, box, blob, where));
                }
                if (dst.size() > k)
                    throw SchemaError(where + ": more than k=" + std::to_string(k) +
                                      " context regions");
            };
            if (j.contains("target_context_ids") && j.contains("dest_context_ids")) {
                load_ctx(j["target_context_ids"], s.target_context);
                load_ctx(j["dest_context_ids"], s.dest_context);
            } else {
                // minimal schema: one shared context list serves both images
                load_ctx(j.at("context_region_ids"), s.target_context);
                s.dest_context = s.target_context;
            }
            if (j.contains("gt_target_bbox")) s.gt_target = bbox_from_json(j["gt_target_bbox"]);
            else s.gt_target = s.target_candidate.bbox;
            if (j.contains("gt_dest_bbox")) s.gt_dest = bbox_from_json(j["gt_dest_bbox"]);
            else s.gt_dest = s.dest_candidate.bbox;
            s.neg_method = neg_method_from_name(j.value("neg_method", std::string("none")));
            out.push_back(std::move(s));
        } catch (const json::exception& e) {
            throw ParseError(where + ": " + e.what());
        }
    }
    return out;
}

}  // namespace

void save_vocab(const std::string& path, const Vocabulary& vocab) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open " + path + " for writing");
    for (const auto& t : vocab.tokens) os << t << '\n';
}

Vocabulary load_vocab(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open vocabulary file " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(is, line)) tokens.push_back(line);
    if (tokens.size() < 2)
        throw SchemaError("vocabulary " + path + " must reserve line 0 for UNK and line 1 for PAD");
    return Vocabulary::from_tokens(std::move(tokens));
}

void save_dataset(const std::string& dir, const Dataset& ds, const Vocabulary& vocab,
                  const std::string& config_hash) {
    fs::create_directories(dir);
    const fs::path root(dir);

    std::map<uint64_t, const RegionFeature*> regions;
    for (const auto* split : {&ds.train, &ds.val, &ds.test})
        for (const Sample& s : *split) collect_regions(s, regions);

    for (const auto& [id, r] : regions)
        if (r->visual.size() != ds.d_f)
            throw SchemaError("region " + std::to_string(id) + " has feature length " +
                              std::to_string(r->visual.size()) + ", dataset d_f is " +
                              std::to_string(ds.d_f));

    {
        std::ofstream os(root / "features.bin", std::ios::binary);
        if (!os) throw ConfigError("cannot open features.bin for writing");
        os.write(kFeatMagic, 8);
        write_le<uint32_t>(os, kFeatVersion);
        write_le<uint32_t>(os, ds.d_f);
        write_le<uint32_t>(os, static_cast<uint32_t>(regions.size()));
        for (const auto& [id, r] : regions) {
            write_le<uint64_t>(os, id);
            os.write(reinterpret_cast<const char*>(r->visual.data()),
                     static_cast<std::streamsize>(sizeof(float) * ds.d_f));
        }
    }

    write_split_jsonl(root / "train.jsonl", ds.train);
    write_split_jsonl(root / "val.jsonl", ds.val);
    write_split_jsonl(root / "test.jsonl", ds.test);
    save_vocab((root / "vocab.txt").string(), vocab);

    json meta;
    meta["config_hash"] = config_hash;
    meta["d_f"] = ds.d_f;
    meta["k"] = ds.k;
    meta["train_samples"] = ds.train.size();
    meta["val_samples"] = ds.val.size();
    meta["test_samples"] = ds.test.size();
    std::ofstream ms(root / "meta.json", std::ios::binary);
    ms << meta.dump(2) << '\n';
}

Dataset load_dataset(const std::string& dir) {
    const fs::path root(dir);

    std::map<uint64_t, std::vector<float>> blob;
    uint32_t d_f = 0;
    {
        std::ifstream is(root / "features.bin", std::ios::binary);
        if (!is) throw ConfigError("cannot open " + (root / "features.bin").string());
        char magic[8];
        is.read(magic, 8);
        if (!is || std::memcmp(magic, kFeatMagic, 8) != 0)
            throw SchemaError("features.bin: bad magic");
        uint32_t version = 0, count = 0;
        if (!read_le(is, version) || version != kFeatVersion)
            throw SchemaError("features.bin: unsupported version");
        if (!read_le(is, d_f) || d_f == 0) throw SchemaError("features.bin: bad d_f");
        if (!read_le(is, count)) throw SchemaError("features.bin: truncated header");
        for (uint32_t i = 0; i < count; ++i) {
            uint64_t id = 0;
            std::vector<float> v(d_f);
            if (!read_le(is, id) ||
                !is.read(reinterpret_cast<char*>(v.data()),
                         static_cast<std::streamsize>(sizeof(float) * d_f)))
                throw SchemaError("features.bin: record " + std::to_string(i) + " of " +
                                  std::to_string(count) + " truncated");
            blob.emplace(id, std::move(v));
        }
        char extra;
        if (is.read(&extra, 1))
            throw SchemaError("features.bin: trailing bytes after record " + std::to_string(count - 1));
    }

    uint32_t k = 0;
    {
        std::ifstream ms(root / "meta.json");
        if (ms) {
            json meta = json::parse(ms, nullptr, /*allow_exceptions=*/false);
            if (meta.is_discarded()) throw ParseError("meta.json: invalid JSON");
            if (meta.contains("d_f") && meta["d_f"].get<uint32_t>() != d_f)
                throw SchemaError("meta.json d_f=" + meta["d_f"].dump() +
                                  " does not match features.bin d_f=" + std::to_string(d_f));
            k = meta.value("k", 0u);
        }
    }
    if (k == 0) k = 64;  // permissive cap when meta is absent

    Dataset ds;
    ds.d_f = d_f;
    ds.k = k;
    ds.train = read_split_jsonl(root / "train.jsonl", blob, k);
    ds.val = read_split_jsonl(root / "val.jsonl", blob, k);
    ds.test = read_split_jsonl(root / "test.jsonl", blob, k);
    return ds;
}

}  // namespace shefu
