#pragma once

// Ray-cast renderer: each pixel ray is intersected with the ground plane z = 0
// and shaded from a checkerboard texture, the scene's painted lines and a
// distance fog. 2x2 supersampling per pixel; output quantized to 8 bits.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "bevseg/synth/camera.hpp"
#include "bevseg/synth/scene.hpp"
#include "bevseg/tensor.hpp"

namespace bevseg::synth {

using Rgb = std::array<double, 3>;

struct RenderOptions {
    double checker_size = 2.0;  // meters
    Rgb ground_dark{0.28, 0.29, 0.31};
    Rgb ground_light{0.42, 0.42, 0.44};
    Rgb sky{0.62, 0.74, 0.90};
    Rgb fog{0.70, 0.74, 0.80};
    double fog_distance = 90.0;  // meters for 1/e attenuation
    std::array<Rgb, 4> class_color{Rgb{0, 0, 0}, Rgb{0.95, 0.82, 0.10}, Rgb{0.90, 0.15, 0.12},
                                   Rgb{0.97, 0.97, 0.97}};
    int supersample = 2;
};

// Camera images plus, per camera, the class painted at each pixel center
// (background where no line is hit).
struct RenderResult {
    Tensor<float> images;  // [N_c, 3, H, W], values k/255
    std::vector<ClassRaster> labels;
};

namespace detail {

struct GroundHit {
    bool hit = false;
    double x = 0, y = 0, dist = 0;
};

inline GroundHit cast_ray(const Camera& cam, const Mat3& R, double u, double v) {
    const double a = (u - cam.K.cx) / cam.K.fx, b = (v - cam.K.cy) / cam.K.fy;
    // ego-frame direction = R^T (a, b, 1)
    const Vec3 d{R[0][0] * a + R[1][0] * b + R[2][0], R[0][1] * a + R[1][1] * b + R[2][1],
                 R[0][2] * a + R[1][2] * b + R[2][2]};
    if (d[2] >= -1e-9) return {};
    const double t = -cam.pose.position[2] / d[2];
    return {true, cam.pose.position[0] + t * d[0], cam.pose.position[1] + t * d[1],
            t * std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])};
}

// Painted class at a ground point; later-drawn classes win as in the raster.
inline std::uint8_t painted_class(const Scene& scene, const BEVSpec& spec, double x, double y) {
    const double res = spec.resolution();
    std::uint8_t out = kBackground;
    for (const auto& line : scene) {
        const double half = spec.line_width_px[line.class_id] * res / 2;
        for (std::size_t s = 0; s + 1 < line.points.size(); ++s) {
            const auto& a = line.points[s];
            const auto& b = line.points[s + 1];
            if (x < std::min(a.x, b.x) - half || x > std::max(a.x, b.x) + half || y < std::min(a.y, b.y) - half ||
                y > std::max(a.y, b.y) + half)
                continue;
            if (segment_distance(x, y, a.x, a.y, b.x, b.y) <= half) {
                out = line.class_id;
                break;
            }
        }
    }
    return out;
}

inline Rgb shade(const Scene& scene, const BEVSpec& spec, const RenderOptions& opt, const GroundHit& g,
                 std::uint8_t* cls) {
    if (!g.hit) {
        if (cls) *cls = kBackground;
        return opt.sky;
    }
    const long ix = static_cast<long>(std::floor(g.x / opt.checker_size));
    const long iy = static_cast<long>(std::floor(g.y / opt.checker_size));
    Rgb c = ((ix + iy) & 1) ? opt.ground_light : opt.ground_dark;
    const std::uint8_t k = painted_class(scene, spec, g.x, g.y);
    if (k != kBackground) c = opt.class_color[k];
    if (cls) *cls = k;
    const double f = std::exp(-g.dist / opt.fog_distance);
    for (int i = 0; i < 3; ++i) c[i] = f * c[i] + (1 - f) * opt.fog[i];
    return c;
}

}  // namespace detail

inline RenderResult render_views(const Scene& scene, const CameraRig& rig, const BEVSpec& spec,
                                 const RenderOptions& opt = {}) {
    rig.validate();
    const std::size_t n = rig.size(), h = rig.cameras[0].height, w = rig.cameras[0].width;
    RenderResult out{Tensor<float>({n, 3, h, w}), {}};
    auto img = out.images.data();
    const int ss = std::max(1, opt.supersample);
    for (std::size_t c = 0; c < n; ++c) {
        const Camera& cam = rig.cameras[c];
        const Mat3 R = cam.rotation();
        ClassRaster labels(h, w);
        for (std::size_t v = 0; v < h; ++v)
            for (std::size_t u = 0; u < w; ++u) {
                Rgb acc{0, 0, 0};
                for (int sy = 0; sy < ss; ++sy)
                    for (int sx = 0; sx < ss; ++sx) {
                        const double du = (sx + 0.5) / ss - 0.5, dv = (sy + 0.5) / ss - 0.5;
                        auto g = detail::cast_ray(cam, R, static_cast<double>(u) + du, static_cast<double>(v) + dv);
                        const Rgb s = detail::shade(scene, spec, opt, g, nullptr);
                        for (int i = 0; i < 3; ++i) acc[i] += s[i];
                    }
                std::uint8_t center = kBackground;
                detail::shade(scene, spec, opt,
                              detail::cast_ray(cam, R, static_cast<double>(u), static_cast<double>(v)), &center);
                labels.at(v, u) = center;
                for (int i = 0; i < 3; ++i) {
                    const double val = std::clamp(acc[i] / (ss * ss), 0.0, 1.0);
                    img[((c * 3 + i) * h + v) * w + u] = static_cast<float>(std::lround(val * 255.0)) / 255.0f;
                }
            }
        out.labels.push_back(std::move(labels));
    }
    return out;
}

}  // namespace bevseg::synth
