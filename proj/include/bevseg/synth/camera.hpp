#pragma once

// Pinhole cameras on a rig in the ego frame. Used only to render data; the
// model never sees any of this.

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bevseg::synth {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<Vec3, 3>;  // row-major

inline Vec3 cross3(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

struct Intrinsics {
    double fx = 100, fy = 100, cx = 50, cy = 50;
};

struct Pose {
    Vec3 position{0, 0, 1.5};  // ego frame, meters
    double yaw_deg = 0;        // 0 looks along +x, positive turns toward +y
    double pitch_deg = 10;     // positive tilts down
};

struct Camera {
    std::string name = "cam";
    Intrinsics K;
    Pose pose;
    std::size_t width = 224, height = 128;

    // World-to-camera rotation; rows are the camera right, down and forward
    // axes expressed in the ego frame.
    Mat3 rotation() const {
        const double yaw = pose.yaw_deg * M_PI / 180.0, pitch = pose.pitch_deg * M_PI / 180.0;
        const Vec3 fwd{std::cos(yaw) * std::cos(pitch), std::sin(yaw) * std::cos(pitch), -std::sin(pitch)};
        const Vec3 right{std::sin(yaw), -std::cos(yaw), 0.0};
        const Vec3 down = cross3(fwd, right);
        return {right, down, fwd};
    }

    Vec3 to_camera(const Vec3& p) const {
        const Mat3 R = rotation();
        const Vec3 d{p[0] - pose.position[0], p[1] - pose.position[1], p[2] - pose.position[2]};
        return {dot3(R[0], d), dot3(R[1], d), dot3(R[2], d)};
    }

    void validate() const {
        if (!(K.fx > 0 && K.fy > 0)) throw std::invalid_argument("camera " + name + ": focal lengths must be positive");
        if (width == 0 || height == 0 || width % 32 != 0 || height % 32 != 0)
            throw std::invalid_argument("camera " + name + ": image dims must be positive multiples of 32");
    }
};

struct PixelCoord {
    double u = 0;
    double v = 0;
};

// Pinhole projection of a camera-frame point; nullopt behind the camera.
inline std::optional<PixelCoord> project_camera_point(const Intrinsics& K, const Vec3& pc, double min_depth = 1e-6) {
    if (pc[2] <= min_depth) return std::nullopt;
    return PixelCoord{K.fx * pc[0] / pc[2] + K.cx, K.fy * pc[1] / pc[2] + K.cy};
}

// Projection of an ego-frame point; nullopt behind the camera.
inline std::optional<PixelCoord> project(const Camera& cam, const Vec3& p) {
    return project_camera_point(cam.K, cam.to_camera(p));
}

inline bool in_image(const Camera& cam, const PixelCoord& px) {
    return px.u >= 0 && px.v >= 0 && px.u <= static_cast<double>(cam.width) - 1 &&
           px.v <= static_cast<double>(cam.height) - 1;
}

struct CameraRig {
    std::vector<Camera> cameras;

    std::size_t size() const { return cameras.size(); }
    void validate() const {
        if (cameras.empty()) throw std::invalid_argument("rig: no cameras");
        for (const auto& c : cameras) {
            c.validate();
            if (c.width != cameras[0].width || c.height != cameras[0].height)
                throw std::invalid_argument("rig: all cameras must share image dims");
        }
    }
};

// Front and rear cameras with deliberately different mounting and optics.
inline CameraRig desk_rig(std::size_t width = 224, std::size_t height = 128) {
    const double sx = static_cast<double>(width) / 224.0, sy = static_cast<double>(height) / 128.0;
    Camera front{"front", {78 * sx, 78 * sy, width / 2.0, height / 2.0}, {{1.0, 0, 1.5}, 0, 10}, width, height};
    Camera rear{"rear", {90 * sx, 90 * sy, width / 2.0, height / 2.0}, {{-1.0, 0, 1.8}, 180, 14}, width, height};
    return {{front, rear}};
}

// Front and rear cameras that are exact mirror images of each other.
inline CameraRig desk_symmetric_rig(std::size_t width = 224, std::size_t height = 128) {
    const double sx = static_cast<double>(width) / 224.0, sy = static_cast<double>(height) / 128.0;
    Camera front{"front", {78 * sx, 78 * sy, width / 2.0, height / 2.0}, {{1.0, 0, 1.5}, 0, 10}, width, height};
    Camera rear{"rear", {78 * sx, 78 * sy, width / 2.0, height / 2.0}, {{-1.0, 0, 1.5}, 180, 10}, width, height};
    return {{front, rear}};
}

// Six cameras at 60 degree yaw steps, 1.5 m high, mild pitch.
inline CameraRig surround_rig(std::size_t width = 800, std::size_t height = 448) {
    CameraRig rig;
    const char* names[] = {"front", "front_left", "back_left", "back", "back_right", "front_right"};
    for (int i = 0; i < 6; ++i) {
        const double yaw = 60.0 * i;
        const double r = 1.0;
        Camera c{names[i],
                 {0.55 * static_cast<double>(width), 0.55 * static_cast<double>(width), width / 2.0, height / 2.0},
                 {{r * std::cos(yaw * M_PI / 180), r * std::sin(yaw * M_PI / 180), 1.5}, yaw, 8},
                 width,
                 height};
        rig.cameras.push_back(c);
    }
    return rig;
}

// One forward camera.
inline CameraRig front_rig(std::size_t width = 800, std::size_t height = 448) {
    Camera c{"front",
             {0.6 * static_cast<double>(width), 0.6 * static_cast<double>(width), width / 2.0, height / 2.0},
             {{1.0, 0, 1.5}, 0, 8},
             width,
             height};
    return {{c}};
}

}  // namespace bevseg::synth
