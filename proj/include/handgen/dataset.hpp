#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hand_renderer.hpp"
#include "image.hpp"
#include "rng.hpp"
#include "tokenizer.hpp"

namespace handgen {

struct BBox {
    real x = 0, y = 0, w = 0, h = 0;
};

// Square crop window with a corner-anchored affine map between global and
// local pixel coordinates: local = (global - origin) * (out_size / side).
struct CropRect {
    real x0 = 0, y0 = 0, side = 0;
    int out_size = 0;

    real scale() const { return static_cast<real>(out_size) / side; }
    std::array<real, 2> global_to_local(real gx, real gy) const {
        return {(gx - x0) * scale(), (gy - y0) * scale()};
    }
    std::array<real, 2> local_to_global(real lx, real ly) const {
        return {x0 + lx / scale(), y0 + ly / scale()};
    }
};

struct LocalCrop {
    Image image;
    CropRect rect;
};

// Expand the bbox to a square with `margin` extra per side, clamp into the
// image, then bilinear-resample to out_size x out_size.
inline LocalCrop crop_local(const Image& img, const BBox& box, int out_size, real margin = 0.15) {
    if (!(box.w > 0) || !(box.h > 0)) throw ValidationError("crop_local: zero-area bbox");
    if (out_size <= 0) throw ValidationError("crop_local: bad out_size");
    real s = static_cast<real>(img.w);
    if (img.h != img.w) throw ValidationError("crop_local: expected square image");

    real side = std::max(box.w, box.h) * (1.0 + 2.0 * margin);
    side = std::min(side, s);
    real cx = box.x + box.w / 2, cy = box.y + box.h / 2;
    real x0 = std::clamp(cx - side / 2, 0.0, s - side);
    real y0 = std::clamp(cy - side / 2, 0.0, s - side);

    CropRect rect{x0, y0, side, out_size};
    LocalCrop out{Image(out_size, out_size), rect};
    real step = side / out_size;
    for (int y = 0; y < out_size; ++y)
        for (int x = 0; x < out_size; ++x) {
            real sx = x0 + x * step;
            real sy = y0 + y * step;
            for (int c = 0; c < 3; ++c) out.image.at(c, y, x) = bilinear_sample(img, c, sy, sx);
        }
    return out;
}

/*------------------------------- prompts --------------------------------*/

inline std::string make_prompt(const SyntheticHandPose& pose, RandomStream& rng) {
    const auto& bank =
        pose.hand_type == HandType::both ? both_hands_templates() : single_hand_templates();
    std::string tpl = bank[static_cast<size_t>(rng.uniform_int(static_cast<int>(bank.size())))];
    const auto& objs = prompt_objects();
    const std::string& obj = objs[static_cast<size_t>(rng.uniform_int(static_cast<int>(objs.size())))];
    std::string side = pose.hand_type == HandType::left ? "left" : "right";
    return replace_all(replace_all(tpl, "{obj}", obj), "{side}", side);
}

/*-------------------------------- samples -------------------------------*/

struct Sample {
    std::string id;
    Image rgb_global, mesh_global;
    BBox bbox;
    std::string prompt;
    std::vector<std::array<real, 2>> keypoints; // 21 x 2
    HandType hand_type = HandType::right;
    Image rgb_local, mesh_local; // derived via crop_local
};

namespace detail_dataset {

inline BBox bbox_from_geometry(const handgeom::HandGeometry& geo, int canvas) {
    auto e = handgeom::geometry_extent(geo, canvas);
    real x0 = std::floor(e.x0), y0 = std::floor(e.y0);
    real x1 = std::ceil(e.x1), y1 = std::ceil(e.y1);
    x1 = std::min(x1, static_cast<real>(canvas));
    y1 = std::min(y1, static_cast<real>(canvas));
    return BBox{x0, y0, x1 - x0, y1 - y0};
}

// IoU between the thresholded silhouette and the bbox rectangle
inline real silhouette_bbox_iou(const Image& mesh, const BBox& box, real threshold = 0.2) {
    int64_t inter = 0, uni = 0;
    for (int y = 0; y < mesh.h; ++y)
        for (int x = 0; x < mesh.w; ++x) {
            bool fg = mesh.luminance(y, x) > threshold;
            bool in_box = x >= box.x && x < box.x + box.w && y >= box.y && y < box.y + box.h;
            if (fg && in_box) ++inter;
            if (fg || in_box) ++uni;
        }
    return uni == 0 ? 0.0 : static_cast<real>(inter) / static_cast<real>(uni);
}

} // namespace detail_dataset

// Draw one internally consistent sample: pose, appearance, prompt, renders,
// bbox and keypoints. Poses whose hand fills too little of the bbox are
// rejected and resampled.
inline Sample make_sample(uint64_t seed, int index, int canvas) {
    RandomStream rng = derived_stream(seed, "sample", static_cast<uint64_t>(index));
    for (int attempt = 0; attempt < 200; ++attempt) {
        SyntheticHandPose pose = sample_pose(rng, canvas);
        auto geo = handgeom::hand_geometry(pose);
        BBox box = detail_dataset::bbox_from_geometry(geo, canvas);
        if (box.w < 10 || box.h < 10) continue;
        Image mesh = render_condition(pose);
        if (detail_dataset::silhouette_bbox_iou(mesh, box) < 0.22) continue;

        Sample s;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "s%04d", index);
        s.id = buf;
        s.mesh_global = std::move(mesh);
        s.rgb_global = render_rgb(pose, sample_appearance(rng));
        s.bbox = box;
        s.prompt = make_prompt(pose, rng);
        s.keypoints = hand_keypoints(pose);
        s.hand_type = pose.hand_type;
        return s;
    }
    throw std::runtime_error("make_sample: could not sample a valid pose");
}

inline void derive_local_crops(Sample& s, int out_size, real margin = 0.15) {
    s.rgb_local = crop_local(s.rgb_global, s.bbox, out_size, margin).image;
    s.mesh_local = crop_local(s.mesh_global, s.bbox, out_size, margin).image;
}

// Dataset layout:
//   <dir>/samples.jsonl   one record per line
//   <dir>/rgb/<id>.png    global RGB image
//   <dir>/mesh/<id>.png   global condition image
inline void generate_dataset(int n, uint64_t seed, const std::string& out_dir, int canvas = 64) {
    if (n < 1) throw ValidationError("generate_dataset: n must be >= 1");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir + "/rgb", ec);
    fs::create_directories(out_dir + "/mesh", ec);
    if (ec) throw std::runtime_error("generate_dataset: cannot create " + out_dir);

    std::ofstream jsonl(out_dir + "/samples.jsonl", std::ios::binary);
    if (!jsonl) throw std::runtime_error("generate_dataset: cannot write to " + out_dir);

    for (int i = 0; i < n; ++i) {
        Sample s = make_sample(seed, i, canvas);
        save_png(s.rgb_global, out_dir + "/rgb/" + s.id + ".png");
        save_png(s.mesh_global, out_dir + "/mesh/" + s.id + ".png");

        nlohmann::json rec;
        rec["id"] = s.id;
        rec["prompt"] = s.prompt;
        rec["bbox"] = {s.bbox.x, s.bbox.y, s.bbox.w, s.bbox.h};
        nlohmann::json kps = nlohmann::json::array();
        for (const auto& kp : s.keypoints) kps.push_back({kp[0], kp[1]});
        rec["keypoints"] = kps;
        rec["hand_type"] = hand_type_name(s.hand_type);
        jsonl << rec.dump() << "\n";
    }
}

inline std::vector<Sample> load_dataset(const std::string& dir, int local_out_size,
                                        real margin = 0.15, int limit = -1) {
    std::ifstream jsonl(dir + "/samples.jsonl");
    if (!jsonl) throw ValidationError("load_dataset: missing " + dir + "/samples.jsonl");
    std::vector<Sample> out;
    std::string line;
    while (std::getline(jsonl, line)) {
        if (line.empty()) continue;
        auto rec = nlohmann::json::parse(line);
        Sample s;
        s.id = rec.at("id").get<std::string>();
        s.prompt = rec.at("prompt").get<std::string>();
        auto bb = rec.at("bbox");
        s.bbox = BBox{bb[0].get<real>(), bb[1].get<real>(), bb[2].get<real>(), bb[3].get<real>()};
        for (const auto& kp : rec.at("keypoints"))
            s.keypoints.push_back({kp[0].get<real>(), kp[1].get<real>()});
        s.hand_type = hand_type_from_name(rec.at("hand_type").get<std::string>());
        s.rgb_global = load_png(dir + "/rgb/" + s.id + ".png");
        s.mesh_global = load_png(dir + "/mesh/" + s.id + ".png");
        derive_local_crops(s, local_out_size, margin);
        out.push_back(std::move(s));
        if (limit > 0 && static_cast<int>(out.size()) >= limit) break;
    }
    if (out.empty()) throw ValidationError("load_dataset: empty dataset in " + dir);
    return out;
}

} // namespace handgen
