#pragma once

// On-disk dataset:
//   <root>/classes.txt              "<id> <name>" per line
//   <root>/manifest.txt             one scene seed per line
//   <root>/scenes/<seed>/cam<i>.ppm 8-bit binary PPM (P6)
//   <root>/scenes/<seed>/gt.pgm     8-bit binary PGM (P5), pixel = class id
//   <root>/scenes/<seed>/meta.txt   key = value, rig and BEV window (renderer only)

#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bevseg/losses.hpp"
#include "bevseg/synth/camera.hpp"
#include "bevseg/synth/render.hpp"
#include "bevseg/synth/scene.hpp"

namespace bevseg::synth {

struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SceneSample {
    Tensor<float> images;  // [N_c, 3, H, W] in [0, 1], multiples of 1/255
    ClassRaster gt;
    std::uint64_t seed = 0;
};

// ---- PNM ------------------------------------------------------------------

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DatasetError("cannot open '" + path.string() + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DatasetError("write failed for '" + path.string() + "'");
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DatasetError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Next header token, skipping whitespace and '#' comments.
inline std::string pnm_token(const std::string& b, std::size_t& pos) {
    for (;;) {
        while (pos < b.size() && std::isspace(static_cast<unsigned char>(b[pos]))) ++pos;
        if (pos < b.size() && b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
            continue;
        }
        break;
    }
    std::size_t start = pos;
    while (pos < b.size() && !std::isspace(static_cast<unsigned char>(b[pos]))) ++pos;
    return b.substr(start, pos - start);
}

}  // namespace detail

struct PnmImage {
    std::size_t width = 0, height = 0, channels = 1;
    std::vector<std::uint8_t> pixels;  // interleaved
};

inline std::string encode_pnm(const PnmImage& img) {
    if (img.channels != 1 && img.channels != 3) throw DatasetError("pnm: channels must be 1 or 3");
    if (img.pixels.size() != img.width * img.height * img.channels) throw DatasetError("pnm: pixel count mismatch");
    std::string out = (img.channels == 3 ? "P6\n" : "P5\n") + std::to_string(img.width) + " " +
                      std::to_string(img.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
    return out;
}

inline PnmImage decode_pnm(const std::string& b, const std::string& what = "image") {
    std::size_t pos = 0;
    const std::string magic = detail::pnm_token(b, pos);
    PnmImage img;
    if (magic == "P6")
        img.channels = 3;
    else if (magic == "P5")
        img.channels = 1;
    else
        throw DatasetError(what + ": corrupt header (magic '" + magic + "')");
    try {
        img.width = std::stoul(detail::pnm_token(b, pos));
        img.height = std::stoul(detail::pnm_token(b, pos));
        const unsigned long maxval = std::stoul(detail::pnm_token(b, pos));
        if (maxval != 255) throw DatasetError(what + ": only maxval 255 is supported");
    } catch (const std::logic_error&) {
        throw DatasetError(what + ": corrupt header");
    }
    ++pos;  // single whitespace after maxval
    const std::size_t n = img.width * img.height * img.channels;
    if (img.width == 0 || img.height == 0 || b.size() < pos || b.size() - pos != n)
        throw DatasetError(what + ": expected " + std::to_string(n) + " pixel bytes");
    img.pixels.assign(b.begin() + static_cast<long>(pos), b.end());
    return img;
}

// ---- class map and meta ---------------------------------------------------

inline std::string classes_text(const std::vector<std::string>& names) {
    std::string s;
    for (std::size_t i = 0; i < names.size(); ++i) s += std::to_string(i) + " " + names[i] + "\n";
    return s;
}

inline std::string meta_text(const CameraRig& rig, const BEVSpec& spec, std::uint64_t seed) {
    std::ostringstream m;
    m << std::setprecision(17);
    m << "seed = " << seed << "\n";
    m << "bev.x_min = " << spec.x_min << "\nbev.x_max = " << spec.x_max << "\nbev.y_min = " << spec.y_min
      << "\nbev.y_max = " << spec.y_max << "\nbev.height = " << spec.height << "\nbev.width = " << spec.width << "\n";
    m << "cameras = " << rig.size() << "\n";
    for (std::size_t i = 0; i < rig.size(); ++i) {
        const auto& c = rig.cameras[i];
        const std::string p = "cam" + std::to_string(i) + ".";
        m << p << "name = " << c.name << "\n"
          << p << "fx = " << c.K.fx << "\n"
          << p << "fy = " << c.K.fy << "\n"
          << p << "cx = " << c.K.cx << "\n"
          << p << "cy = " << c.K.cy << "\n"
          << p << "x = " << c.pose.position[0] << "\n"
          << p << "y = " << c.pose.position[1] << "\n"
          << p << "z = " << c.pose.position[2] << "\n"
          << p << "yaw_deg = " << c.pose.yaw_deg << "\n"
          << p << "pitch_deg = " << c.pose.pitch_deg << "\n"
          << p << "width = " << c.width << "\n"
          << p << "height = " << c.height << "\n";
    }
    return m.str();
}

// ---- samples --------------------------------------------------------------

inline SceneSample make_sample(std::uint64_t seed, const CameraRig& rig, const BEVSpec& spec,
                               const SceneOptions& scene_opt = {}, const RenderOptions& render_opt = {}) {
    const Scene scene = generate_scene(seed, spec, scene_opt);
    return {render_views(scene, rig, spec, render_opt).images, rasterize_bev(scene, spec), seed};
}

inline std::filesystem::path scene_dir(const std::filesystem::path& root, std::uint64_t seed) {
    return root / "scenes" / std::to_string(seed);
}

inline void write_sample(const std::filesystem::path& root, const SceneSample& s, const CameraRig& rig,
                         const BEVSpec& spec) {
    const auto dir = scene_dir(root, s.seed);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DatasetError("cannot create '" + dir.string() + "': " + ec.message());
    const std::size_t n = s.images.dim(0), h = s.images.dim(2), w = s.images.dim(3);
    auto v = s.images.data();
    for (std::size_t c = 0; c < n; ++c) {
        PnmImage img{w, h, 3, std::vector<std::uint8_t>(w * h * 3)};
        for (std::size_t ch = 0; ch < 3; ++ch)
            for (std::size_t p = 0; p < h * w; ++p)
                img.pixels[p * 3 + ch] = static_cast<std::uint8_t>(std::lround(v[(c * 3 + ch) * h * w + p] * 255.0f));
        detail::write_file(dir / ("cam" + std::to_string(c) + ".ppm"), encode_pnm(img));
    }
    detail::write_file(dir / "gt.pgm", encode_pnm(PnmImage{s.gt.width, s.gt.height, 1, s.gt.ids}));
    detail::write_file(dir / "meta.txt", meta_text(rig, spec, s.seed));
}

// Reads one scene; `cameras`, image and GT dims are checked against the caller's config.
inline SceneSample read_sample(const std::filesystem::path& root, std::uint64_t seed, std::size_t cameras,
                               std::size_t height, std::size_t width, std::size_t gt_height, std::size_t gt_width) {
    const auto dir = scene_dir(root, seed);
    SceneSample s;
    s.seed = seed;
    s.images = Tensor<float>({cameras, 3, height, width});
    auto v = s.images.data();
    for (std::size_t c = 0; c < cameras; ++c) {
        const auto path = dir / ("cam" + std::to_string(c) + ".ppm");
        const PnmImage img = decode_pnm(detail::read_file(path), path.string());
        if (img.channels != 3 || img.width != width || img.height != height)
            throw DatasetError(path.string() + ": dims " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                               " do not match configured " + std::to_string(width) + "x" + std::to_string(height));
        for (std::size_t ch = 0; ch < 3; ++ch)
            for (std::size_t p = 0; p < height * width; ++p)
                v[(c * 3 + ch) * height * width + p] = static_cast<float>(img.pixels[p * 3 + ch]) / 255.0f;
    }
    const auto gt_path = dir / "gt.pgm";
    const PnmImage gt = decode_pnm(detail::read_file(gt_path), gt_path.string());
    if (gt.channels != 1 || gt.width != gt_width || gt.height != gt_height)
        throw DatasetError(gt_path.string() + ": dims do not match configured GT " + std::to_string(gt_height) + "x" +
                           std::to_string(gt_width));
    s.gt = ClassRaster(gt_height, gt_width);
    s.gt.ids = gt.pixels;
    return s;
}

inline std::vector<std::uint64_t> read_manifest(const std::filesystem::path& root) {
    std::istringstream in(detail::read_file(root / "manifest.txt"));
    std::vector<std::uint64_t> seeds;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        try {
            seeds.push_back(std::stoull(line));
        } catch (const std::logic_error&) {
            throw DatasetError("manifest: bad line '" + line + "'");
        }
    }
    if (seeds.empty()) throw DatasetError("manifest: no scenes listed in " + root.string());
    return seeds;
}

// Renders and writes `count` scenes with seeds first_seed, first_seed+1, ...
inline std::vector<std::uint64_t> write_dataset(const std::filesystem::path& root, std::uint64_t first_seed,
                                                std::size_t count, const CameraRig& rig, const BEVSpec& spec,
                                                const SceneOptions& scene_opt = {},
                                                const RenderOptions& render_opt = {}) {
    std::vector<std::uint64_t> seeds;
    std::string manifest;
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t seed = first_seed + i;
        write_sample(root, make_sample(seed, rig, spec, scene_opt, render_opt), rig, spec);
        seeds.push_back(seed);
        manifest += std::to_string(seed) + "\n";
    }
    std::vector<std::string> names{"background", "lane"};
    if (!scene_opt.single_class) names.assign(kClassNames.begin(), kClassNames.end());
    detail::write_file(root / "classes.txt", classes_text(names));
    detail::write_file(root / "manifest.txt", manifest);
    return seeds;
}

// Per-channel standardization over all cameras of one sample.
template <typename T>
Tensor<T> normalize_images(const Tensor<float>& images) {
    const std::size_t n = images.dim(0), hw = images.dim(2) * images.dim(3);
    Tensor<T> out(images.shape());
    auto src = images.data();
    auto dst = out.data();
    for (std::size_t ch = 0; ch < 3; ++ch) {
        double s = 0, s2 = 0;
        for (std::size_t c = 0; c < n; ++c)
            for (std::size_t p = 0; p < hw; ++p) {
                const double x = src[(c * 3 + ch) * hw + p];
                s += x;
                s2 += x * x;
            }
        const double count = static_cast<double>(n * hw);
        const double mu = s / count;
        const double sd = std::sqrt(std::max(s2 / count - mu * mu, 0.0) + 1e-6);
        for (std::size_t c = 0; c < n; ++c)
            for (std::size_t p = 0; p < hw; ++p)
                dst[(c * 3 + ch) * hw + p] = static_cast<T>((src[(c * 3 + ch) * hw + p] - mu) / sd);
    }
    return out;
}

}  // namespace bevseg::synth
