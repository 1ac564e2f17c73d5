#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "image.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace handgen {

enum class HandType { left, right, both };

inline std::string hand_type_name(HandType t) {
    switch (t) {
        case HandType::left: return "left";
        case HandType::right: return "right";
        default: return "both";
    }
}

inline HandType hand_type_from_name(const std::string& s) {
    if (s == "left") return HandType::left;
    if (s == "right") return HandType::right;
    if (s == "both") return HandType::both;
    throw ValidationError("unknown hand type: " + s);
}

// Articulated 2D hand: 21 joints (wrist + 5 fingers x 4). joint_angles layout:
//   [0]            wrist orientation (radians, 0 = fingers up)
//   [1+4f .. 4+4f] finger f in (thumb,index,middle,ring,pinky):
//                  spread offset, then three segment bend angles
struct SyntheticHandPose {
    std::vector<real> joint_angles; // 21 values
    real root_x = 0, root_y = 0;    // wrist position, pixels
    real scale = 0;                 // palm length, pixels
    HandType hand_type = HandType::right;
    int canvas_size = 64;
};

namespace handgeom {

constexpr int kNumFingers = 5;
constexpr int kJointCount = 21;

// canonical spread (radians from the hand axis) and proportions of `scale`
constexpr real kSpread[kNumFingers] = {-1.05, -0.28, 0.0, 0.26, 0.52};
constexpr real kBaseLen[kNumFingers] = {0.38, 0.98, 1.02, 0.98, 0.88};
constexpr real kSegLen[kNumFingers][3] = {{0.40, 0.30, 0.24},
                                          {0.48, 0.30, 0.22},
                                          {0.52, 0.33, 0.24},
                                          {0.48, 0.30, 0.22},
                                          {0.36, 0.23, 0.17}};
constexpr real kMaxSpreadOffset = 0.45;
constexpr real kMinBend = -0.15;
constexpr real kMaxBend = 1.9;

struct Vec2 {
    real x = 0, y = 0;
};

struct Capsule {
    Vec2 a, b;
    real radius = 0;
    int part = 0; // bone index, used for shading
};

inline real dist_point_segment(real px, real py, const Vec2& a, const Vec2& b) {
    real dx = b.x - a.x, dy = b.y - a.y;
    real len2 = dx * dx + dy * dy;
    real t = len2 > 0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    real qx = a.x + t * dx - px, qy = a.y + t * dy - py;
    return std::sqrt(qx * qx + qy * qy);
}

struct HandGeometry {
    std::vector<Capsule> capsules;
    std::vector<Vec2> keypoints; // 21 for the primary hand
};

inline void validate_pose(const SyntheticHandPose& pose) {
    if (pose.canvas_size < 32) throw ValidationError("pose: canvas too small");
    if (!(pose.scale > 0)) throw ValidationError("pose: scale must be positive");
    if (pose.scale < 5.0 || pose.scale > 0.5 * pose.canvas_size)
        throw ValidationError("pose: scale out of range");
    if (pose.joint_angles.size() != kJointCount)
        throw ValidationError("pose: expected 21 joint angles");
    if (std::abs(pose.joint_angles[0]) > 3.2) throw ValidationError("pose: orientation out of range");
    for (int f = 0; f < kNumFingers; ++f) {
        if (std::abs(pose.joint_angles[1 + 4 * f]) > kMaxSpreadOffset)
            throw ValidationError("pose: finger spread out of range");
        for (int s = 0; s < 3; ++s) {
            real b = pose.joint_angles[2 + 4 * f + s];
            if (b < kMinBend || b > kMaxBend) throw ValidationError("pose: bend out of range");
        }
    }
    if (pose.root_x < 0 || pose.root_x >= pose.canvas_size || pose.root_y < 0 ||
        pose.root_y >= pose.canvas_size)
        throw ValidationError("pose: root outside canvas");
}

// Build capsules for one hand. chirality +1 = right, -1 = left (mirrored).
inline void build_one_hand(const SyntheticHandPose& pose, Vec2 root, real scale, int chirality,
                           bool record_keypoints, HandGeometry& out) {
    real theta = pose.joint_angles[0];
    // local frame: fingers along -y, rotated by theta, x mirrored for left hands
    auto point_at = [&](real angle_local, real len, const Vec2& from) {
        real lx = chirality * std::sin(angle_local) * len;
        real ly = -std::cos(angle_local) * len;
        return Vec2{from.x + lx * std::cos(theta) - ly * std::sin(theta),
                    from.y + lx * std::sin(theta) + ly * std::cos(theta)};
    };

    if (record_keypoints) out.keypoints.push_back(root);

    std::array<Vec2, kNumFingers> bases;
    int part = 0;
    for (int f = 0; f < kNumFingers; ++f) {
        real spread = kSpread[f] + pose.joint_angles[1 + 4 * f];
        Vec2 base = point_at(spread, kBaseLen[f] * scale, root);
        bases[static_cast<size_t>(f)] = base;

        // palm bone
        out.capsules.push_back({root, base, (f == 0 ? 0.13 : 0.165) * scale, part++});

        real ang = spread;
        Vec2 prev = base;
        if (record_keypoints) out.keypoints.push_back(base);
        const real radii[3] = {0.105, 0.095, 0.085};
        for (int s = 0; s < 3; ++s) {
            ang += pose.joint_angles[2 + 4 * f + s];
            Vec2 next = point_at(ang, kSegLen[f][s] * scale, prev);
            out.capsules.push_back({prev, next, radii[s] * scale * (f == 0 ? 1.25 : 1.0), part++});
            if (record_keypoints) out.keypoints.push_back(next);
            prev = next;
        }
    }
    // knuckle bridges close the palm silhouette
    for (int f = 0; f < kNumFingers - 1; ++f)
        out.capsules.push_back(
            {bases[static_cast<size_t>(f)], bases[static_cast<size_t>(f + 1)], (f == 0 ? 0.12 : 0.15) * scale, part++});
}

inline HandGeometry hand_geometry(const SyntheticHandPose& pose) {
    validate_pose(pose);
    HandGeometry geo;
    int chir = pose.hand_type == HandType::left ? -1 : 1;
    Vec2 root{pose.root_x, pose.root_y};
    build_one_hand(pose, root, pose.scale, chir, /*record_keypoints=*/true, geo);
    if (pose.hand_type == HandType::both) {
        real theta = pose.joint_angles[0];
        real ox = 1.5 * pose.scale, oy = 0.12 * pose.scale;
        Vec2 root2{root.x + ox * std::cos(theta) - oy * std::sin(theta),
                   root.y + ox * std::sin(theta) + oy * std::cos(theta)};
        build_one_hand(pose, root2, pose.scale * 0.96, -1, /*record_keypoints=*/false, geo);
    }
    return geo;
}

// axis-aligned extent of all capsules, clamped to the canvas
struct Extent {
    real x0, y0, x1, y1;
};

inline Extent geometry_extent(const HandGeometry& geo, int canvas) {
    Extent e{1e30, 1e30, -1e30, -1e30};
    for (const auto& c : geo.capsules) {
        e.x0 = std::min({e.x0, c.a.x - c.radius, c.b.x - c.radius});
        e.y0 = std::min({e.y0, c.a.y - c.radius, c.b.y - c.radius});
        e.x1 = std::max({e.x1, c.a.x + c.radius, c.b.x + c.radius});
        e.y1 = std::max({e.y1, c.a.y + c.radius, c.b.y + c.radius});
    }
    e.x0 = std::clamp(e.x0, 0.0, static_cast<real>(canvas - 1));
    e.y0 = std::clamp(e.y0, 0.0, static_cast<real>(canvas - 1));
    e.x1 = std::clamp(e.x1, 0.0, static_cast<real>(canvas));
    e.y1 = std::clamp(e.y1, 0.0, static_cast<real>(canvas));
    return e;
}

} // namespace handgeom

struct HandAppearance {
    real skin_r = 0.84, skin_g = 0.64, skin_b = 0.50;
    real brightness = 1.0;        // hand-wide multiplier
    real bg_top = 0.05, bg_bottom = 0.12; // background gradient endpoints (per-channel base)
    real bg_tint_r = 1.0, bg_tint_g = 1.0, bg_tint_b = 1.0;
};

namespace detail_render {

// per-bone flat shading factor, fixed pseudo-random pattern
inline real part_shade(int part) {
    uint64_t h = mix64(static_cast<uint64_t>(part) * 0x9e3779b97f4a7c15ULL + 17);
    return 0.88 + 0.14 * static_cast<real>(h >> 11) * 0x1.0p-53;
}

template <typename ColorFn, typename BgFn>
Image render_capsules(const handgeom::HandGeometry& geo, int canvas, ColorFn hand_color, BgFn bg_color) {
    Image img(canvas, canvas);
    for (int y = 0; y < canvas; ++y)
        for (int x = 0; x < canvas; ++x) {
            real px = x + 0.5, py = y + 0.5;
            real best = 1e30;
            int best_part = 0;
            for (const auto& c : geo.capsules) {
                real d = handgeom::dist_point_segment(px, py, c.a, c.b) - c.radius;
                if (d < best) {
                    best = d;
                    best_part = c.part;
                }
            }
            real cover = std::clamp(0.5 - best, 0.0, 1.0); // 1 px feathered edge
            real hr, hg, hb, br, bg, bb;
            hand_color(best_part, hr, hg, hb);
            bg_color(y, x, br, bg, bb);
            img.at(0, y, x) = cover * hr + (1 - cover) * br;
            img.at(1, y, x) = cover * hg + (1 - cover) * bg;
            img.at(2, y, x) = cover * hb + (1 - cover) * bb;
        }
    return img;
}

} // namespace detail_render

// Condition image: flat light-gray hand on black, silhouette recoverable by
// thresholding. Deterministic in the pose alone.
constexpr real kConditionGray = 0.82;

inline Image render_condition(const SyntheticHandPose& pose) {
    auto geo = handgeom::hand_geometry(pose);
    return detail_render::render_capsules(
        geo, pose.canvas_size,
        [](int, real& r, real& g, real& b) { r = g = b = kConditionGray; },
        [](int, int, real& r, real& g, real& b) { r = g = b = 0.0; });
}

// Photo stand-in: skin-toned hand over a dark gradient background. The
// background stays under the 0.2 luminance threshold by construction.
inline Image render_rgb(const SyntheticHandPose& pose, const HandAppearance& ap) {
    auto geo = handgeom::hand_geometry(pose);
    int canvas = pose.canvas_size;
    return detail_render::render_capsules(
        geo, canvas,
        [&](int part, real& r, real& g, real& b) {
            real s = ap.brightness * detail_render::part_shade(part);
            r = std::min(1.0, ap.skin_r * s);
            g = std::min(1.0, ap.skin_g * s);
            b = std::min(1.0, ap.skin_b * s);
        },
        [&](int y, int x, real& r, real& g, real& b) {
            real t = static_cast<real>(y) / canvas;
            real base = ap.bg_top + (ap.bg_bottom - ap.bg_top) * t;
            real ripple = 0.015 * std::sin(0.35 * x) * std::cos(0.22 * y);
            real v = std::max(0.0, base + ripple);
            r = std::min(0.18, v * ap.bg_tint_r);
            g = std::min(0.18, v * ap.bg_tint_g);
            b = std::min(0.18, v * ap.bg_tint_b);
        });
}

inline std::vector<std::array<real, 2>> hand_keypoints(const SyntheticHandPose& pose) {
    auto geo = handgeom::hand_geometry(pose);
    std::vector<std::array<real, 2>> kp;
    kp.reserve(geo.keypoints.size());
    for (const auto& p : geo.keypoints) kp.push_back({p.x, p.y});
    return kp;
}

/*----------------------------- pose sampling ----------------------------*/

inline SyntheticHandPose sample_pose(RandomStream& rng, int canvas) {
    SyntheticHandPose pose;
    pose.canvas_size = canvas;
    real u = rng.uniform();
    pose.hand_type = u < 0.4 ? HandType::left : (u < 0.8 ? HandType::right : HandType::both);
    pose.scale = rng.uniform(0.17, 0.26) * canvas;
    pose.joint_angles.resize(handgeom::kJointCount);
    pose.joint_angles[0] = rng.uniform(-0.7, 0.7);
    for (int f = 0; f < handgeom::kNumFingers; ++f) {
        pose.joint_angles[1 + 4 * f] = rng.uniform(-0.12, 0.12);
        real curl = rng.uniform(0.0, 1.0); // shared tendency per finger
        for (int s = 0; s < 3; ++s)
            pose.joint_angles[2 + 4 * f + s] = std::clamp(
                curl * rng.uniform(0.1, 0.9) + rng.uniform(-0.05, 0.1), handgeom::kMinBend,
                handgeom::kMaxBend);
    }
    // keep the whole silhouette comfortably inside the canvas
    real reach = pose.scale * 2.1;
    real lo = std::min(reach, canvas * 0.45);
    pose.root_x = rng.uniform(lo * 0.8, canvas - lo * (pose.hand_type == HandType::both ? 1.1 : 0.55));
    pose.root_y = rng.uniform(lo, canvas - pose.scale * 0.6);
    pose.root_x = std::clamp(pose.root_x, 2.0, canvas - 2.0);
    pose.root_y = std::clamp(pose.root_y, 2.0, canvas - 2.0);
    return pose;
}

inline HandAppearance sample_appearance(RandomStream& rng) {
    HandAppearance ap;
    real tone = rng.uniform(0.75, 1.05);
    ap.skin_r = std::min(1.0, 0.84 * tone);
    ap.skin_g = std::min(1.0, 0.64 * tone);
    ap.skin_b = std::min(1.0, 0.50 * tone);
    ap.brightness = rng.uniform(0.92, 1.08);
    ap.bg_top = rng.uniform(0.02, 0.08);
    ap.bg_bottom = rng.uniform(0.06, 0.14);
    ap.bg_tint_r = rng.uniform(0.7, 1.0);
    ap.bg_tint_g = rng.uniform(0.7, 1.0);
    ap.bg_tint_b = rng.uniform(0.7, 1.0);
    return ap;
}

} // namespace handgen
