#pragma once

// Random flat-ground road layouts in the ego frame (x forward, y left, meters)
// and their BEV class raster.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bevseg/losses.hpp"
#include "bevseg/rng.hpp"

namespace bevseg::synth {

enum ClassId : std::uint8_t { kBackground = 0, kDivider = 1, kPedCrossing = 2, kBoundary = 3 };

inline const std::array<const char*, 4> kClassNames{"background", "divider", "ped_crossing", "boundary"};

struct Point2 {
    double x = 0;
    double y = 0;
    bool operator==(const Point2&) const = default;
};

struct Polyline {
    std::vector<Point2> points;
    std::uint8_t class_id = kDivider;
    bool operator==(const Polyline&) const = default;
};

using Scene = std::vector<Polyline>;

// BEV window and raster. Row r covers x = x_max - r * res, column c covers
// y = y_max - c * res (pixel indices sit on those coordinates).
struct BEVSpec {
    double x_min = -30, x_max = 30;
    double y_min = -15, y_max = 15;
    std::size_t height = 160;  // H_g, along x
    std::size_t width = 80;    // W_g, along y
    std::array<double, 4> line_width_px{0, 5, 5, 5};  // per class; background unused

    double resolution() const { return (x_max - x_min) / static_cast<double>(height); }

    void validate() const {
        if (!(x_max > x_min && y_max > y_min) || height == 0 || width == 0)
            throw std::invalid_argument("bev: empty extent or raster");
        const double rx = (x_max - x_min) / static_cast<double>(height);
        const double ry = (y_max - y_min) / static_cast<double>(width);
        if (std::abs(rx - ry) > 1e-9 * std::max(rx, ry)) throw std::invalid_argument("bev: cells must be square");
        for (std::size_t c = 1; c < line_width_px.size(); ++c)
            if (line_width_px[c] < 1) throw std::invalid_argument("bev: line widths must be >= 1 px");
    }

    // Continuous raster coordinates (row, col) of an ego point.
    double row_of(double x) const { return (x_max - x) / resolution(); }
    double col_of(double y) const { return (y_max - y) / resolution(); }
    double x_of(double row) const { return x_max - row * resolution(); }
    double y_of(double col) const { return y_max - col * resolution(); }
};

struct SceneOptions {
    int min_lines = 2;
    int max_lines = 6;
    int max_crossings = 2;
    double margin = 0.75;  // meters kept clear of the lateral window edge
    double point_step = 1.0;
    bool single_class = false;  // every line becomes class 1 (two-class "lane" task)
};

// Deterministic per seed: 2-6 roughly parallel longitudinal lines (the outer
// two are boundaries, the rest dividers) and 0-2 transverse crossings spanning
// the road between the boundaries.
inline Scene generate_scene(std::uint64_t seed, const BEVSpec& spec, const SceneOptions& opt = {}) {
    Rng rng(mix_seed(seed, 0x5ce7e));
    const int n = rng.uniform_int(opt.min_lines, opt.max_lines);
    const double lateral = (spec.y_max - spec.y_min) - 2 * opt.margin;
    double lane = rng.uniform(3.0, 4.5);
    const double amp_max = std::min(1.5, 0.08 * lateral);
    if (n > 1) lane = std::min(lane, (lateral - 2 * amp_max) / (n - 1));
    const double span = lane * (n - 1);
    const double slack = std::max(0.0, (lateral - 2 * amp_max - span) / 2);
    const double center = (spec.y_min + spec.y_max) / 2 + rng.uniform(-slack, slack);
    const double amp = rng.uniform(-amp_max, amp_max);
    const double wavelength = rng.uniform(80.0, 200.0);
    const double phase = rng.uniform(0.0, 6.283185307179586);
    const double lo = spec.y_min + opt.margin, hi = spec.y_max - opt.margin;

    auto lateral_at = [&](int i, double x) {
        const double y = center - span / 2 + lane * i + amp * std::sin(6.283185307179586 * x / wavelength + phase);
        return std::clamp(y, lo, hi);
    };

    Scene scene;
    const int steps = static_cast<int>(std::floor((spec.x_max - spec.x_min) / opt.point_step + 1e-9));
    for (int i = 0; i < n; ++i) {
        Polyline line;
        line.class_id = (i == 0 || i == n - 1) ? kBoundary : kDivider;
        for (int s = 0; s <= steps; ++s) {
            const double x = std::max(spec.x_max - s * opt.point_step, spec.x_min);
            line.points.push_back({x, lateral_at(i, x)});
        }
        scene.push_back(std::move(line));
    }
    // dividers first so boundaries, then crossings, overwrite them
    std::stable_partition(scene.begin(), scene.end(), [](const Polyline& p) { return p.class_id == kDivider; });

    const int crossings = rng.uniform_int(0, opt.max_crossings);
    std::vector<double> placed;
    for (int k = 0; k < crossings; ++k) {
        const double x = rng.uniform(spec.x_min + 4.0, spec.x_max - 4.0);
        bool clash = false;
        for (double p : placed) clash = clash || std::abs(p - x) < 8.0;
        if (clash) continue;
        placed.push_back(x);
        Polyline cross;
        cross.class_id = kPedCrossing;
        const double y0 = lateral_at(0, x), y1 = lateral_at(n - 1, x);
        const int pts = 8;
        for (int j = 0; j <= pts; ++j) cross.points.push_back({x, y0 + (y1 - y0) * j / pts});
        scene.push_back(std::move(cross));
    }
    if (opt.single_class)
        for (auto& line : scene) line.class_id = kDivider;
    return scene;
}

namespace detail {

// Distance from p to segment ab.
inline double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double dx = bx - ax, dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = ax + t * dx - px, ey = ay + t * dy - py;
    return std::sqrt(ex * ex + ey * ey);
}

}  // namespace detail

// Paints every pixel whose index point lies within (w-1)/2 pixels of the
// polyline centerline, so a straight line is exactly w pixels across.
// Polylines are drawn in order; later ones overwrite earlier ones.
inline ClassRaster rasterize_bev(const Scene& scene, const BEVSpec& spec) {
    spec.validate();
    ClassRaster out(spec.height, spec.width, kBackground);
    constexpr double kEps = 1e-9;
    for (const auto& line : scene) {
        if (line.class_id >= spec.line_width_px.size())
            throw std::invalid_argument("rasterize_bev: class id " + std::to_string(line.class_id));
        const double radius = (spec.line_width_px[line.class_id] - 1) / 2;
        for (std::size_t s = 0; s + 1 < line.points.size() || (line.points.size() == 1 && s == 0); ++s) {
            const auto& a = line.points[s];
            const auto& b = line.points.size() == 1 ? a : line.points[s + 1];
            const double ra = spec.row_of(a.x), ca = spec.col_of(a.y);
            const double rb = spec.row_of(b.x), cb = spec.col_of(b.y);
            const long r0 = std::max(0L, static_cast<long>(std::floor(std::min(ra, rb) - radius)));
            const long r1 = std::min(static_cast<long>(spec.height) - 1, static_cast<long>(std::ceil(std::max(ra, rb) + radius)));
            const long c0 = std::max(0L, static_cast<long>(std::floor(std::min(ca, cb) - radius)));
            const long c1 = std::min(static_cast<long>(spec.width) - 1, static_cast<long>(std::ceil(std::max(ca, cb) + radius)));
            for (long r = r0; r <= r1; ++r)
                for (long c = c0; c <= c1; ++c)
                    if (detail::segment_distance(static_cast<double>(r), static_cast<double>(c), ra, ca, rb, cb) <=
                        radius + kEps)
                        out.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = line.class_id;
        }
    }
    return out;
}

// Distance in meters from a ground point to the nearest polyline of each class
// (infinity when the class is absent).
inline std::array<double, 4> class_distances(const Scene& scene, double x, double y) {
    std::array<double, 4> best;
    best.fill(INFINITY);
    for (const auto& line : scene) {
        double& d = best[line.class_id];
        for (std::size_t s = 0; s + 1 < line.points.size(); ++s) {
            const auto& a = line.points[s];
            const auto& b = line.points[s + 1];
            // cheap reject on the bounding box
            if (x < std::min(a.x, b.x) - d || x > std::max(a.x, b.x) + d || y < std::min(a.y, b.y) - d ||
                y > std::max(a.y, b.y) + d)
                continue;
            d = std::min(d, detail::segment_distance(x, y, a.x, a.y, b.x, b.y));
        }
    }
    return best;
}

// Mirrors a scene laterally (y -> y_min + y_max - y).
inline Scene flip_lateral(const Scene& scene, const BEVSpec& spec) {
    Scene out = scene;
    for (auto& line : out)
        for (auto& p : line.points) p.y = spec.y_min + spec.y_max - p.y;
    return out;
}

}  // namespace bevseg::synth
