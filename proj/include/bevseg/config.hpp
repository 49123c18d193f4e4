#pragma once

// Run configuration: flat typed "key = value" text. Every key is listed in the
// field table below; unknown keys and malformed values are rejected.

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "bevseg/model.hpp"
#include "bevseg/synth/camera.hpp"
#include "bevseg/synth/render.hpp"
#include "bevseg/synth/scene.hpp"

namespace bevseg {

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct OptimConfig {
    double lr_backbone = 1e-5;
    double lr_transformer = 1e-4;
    double lr_drop_factor = 0.1;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 0.0;  // global L2 norm; 0 disables
};

struct TrainConfig {
    std::size_t epochs = 120;
    std::size_t lr_drop_epoch = 100;
    std::size_t max_steps = 0;  // 0: run all epochs
    std::size_t batch_size = 1;
    std::size_t checkpoint_every = 10;  // epochs; 0 disables periodic checkpoints
    std::size_t eval_every = 10;        // epochs; 0 disables periodic eval
    std::size_t log_every = 1;          // steps
    std::size_t loss_window = 16;       // steps averaged into the reported loss
};

struct AugmentConfig {
    bool enabled = false;
    bool flip = true;
    double brightness = 0.2;
    double contrast = 0.2;
    double hue = 0.05;
    bool swap_channels = true;
    bool flip_reverses_cameras = true;
};

struct DataConfig {
    std::string rig = "desk";  // desk | desk-symmetric | surround | front
    std::size_t image_height = 128;
    std::size_t image_width = 224;
    std::size_t scenes = 16;
    std::uint64_t first_seed = 1000;
    std::size_t classes = 4;  // 4: background/divider/ped_crossing/boundary, 2: background/lane
    int min_lines = 2;
    int max_lines = 6;
    int max_crossings = 2;
};

struct RunConfig {
    std::string preset = "desk";
    std::uint64_t seed = 7;
    bool deterministic = true;
    DataConfig data;
    synth::BEVSpec bev;
    ModelConfig model;
    std::vector<double> loss_weights{1, 15, 15, 15};
    OptimConfig optim;
    TrainConfig train;
    AugmentConfig augment;
    BatchNormOptions bn{0.9, 1e-5, true};

    void validate();
    bool operator==(const RunConfig& o) const;
};

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

inline std::string fmt_double(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& key, const std::string& s) {
    double v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v))
        throw ConfigError("config: '" + key + "' expects a real number, got '" + s + "'");
    return v;
}

template <typename I>
I parse_int(const std::string& key, const std::string& s) {
    I v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw ConfigError("config: '" + key + "' expects an integer, got '" + s + "'");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("config: '" + key + "' expects true/false, got '" + s + "'");
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(trim(cur));
    return out;
}

inline AttentionKind parse_attention(const std::string& key, const std::string& s) {
    if (s == "deformable") return AttentionKind::deformable;
    if (s == "standard") return AttentionKind::standard;
    throw ConfigError("config: '" + key + "' expects deformable|standard, got '" + s + "'");
}

struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <typename I>
Field int_field(std::string key, std::function<I&(RunConfig&)> ref) {
    auto k = key;
    return {key, [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
            [ref, k](RunConfig& c, const std::string& v) { ref(c) = parse_int<I>(k, v); }};
}

inline Field real_field(std::string key, std::function<double&(RunConfig&)> ref) {
    auto k = key;
    return {key, [ref](const RunConfig& c) { return fmt_double(ref(const_cast<RunConfig&>(c))); },
            [ref, k](RunConfig& c, const std::string& v) { ref(c) = parse_double(k, v); }};
}

inline Field bool_field(std::string key, std::function<bool&(RunConfig&)> ref) {
    auto k = key;
    return {key, [ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); },
            [ref, k](RunConfig& c, const std::string& v) { ref(c) = parse_bool(k, v); }};
}

inline Field string_field(std::string key, std::function<std::string&(RunConfig&)> ref) {
    return {key, [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); },
            [ref](RunConfig& c, const std::string& v) { ref(c) = v; }};
}

inline Field attention_field(std::string key, std::function<AttentionKind&(RunConfig&)> ref) {
    auto k = key;
    return {key, [ref](const RunConfig& c) { return std::string(to_string(ref(const_cast<RunConfig&>(c)))); },
            [ref, k](RunConfig& c, const std::string& v) { ref(c) = parse_attention(k, v); }};
}

using Z = std::size_t;

inline const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back(string_field("preset", [](RunConfig& c) -> std::string& { return c.preset; }));
        f.push_back(int_field<std::uint64_t>("seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }));
        f.push_back(bool_field("deterministic", [](RunConfig& c) -> bool& { return c.deterministic; }));

        f.push_back(string_field("data.rig", [](RunConfig& c) -> std::string& { return c.data.rig; }));
        f.push_back(int_field<Z>("data.image_height", [](RunConfig& c) -> Z& { return c.data.image_height; }));
        f.push_back(int_field<Z>("data.image_width", [](RunConfig& c) -> Z& { return c.data.image_width; }));
        f.push_back(int_field<Z>("data.scenes", [](RunConfig& c) -> Z& { return c.data.scenes; }));
        f.push_back(int_field<std::uint64_t>("data.first_seed", [](RunConfig& c) -> std::uint64_t& { return c.data.first_seed; }));
        f.push_back(int_field<Z>("data.classes", [](RunConfig& c) -> Z& { return c.data.classes; }));
        f.push_back(int_field<int>("data.min_lines", [](RunConfig& c) -> int& { return c.data.min_lines; }));
        f.push_back(int_field<int>("data.max_lines", [](RunConfig& c) -> int& { return c.data.max_lines; }));
        f.push_back(int_field<int>("data.max_crossings", [](RunConfig& c) -> int& { return c.data.max_crossings; }));

        f.push_back(real_field("bev.x_min", [](RunConfig& c) -> double& { return c.bev.x_min; }));
        f.push_back(real_field("bev.x_max", [](RunConfig& c) -> double& { return c.bev.x_max; }));
        f.push_back(real_field("bev.y_min", [](RunConfig& c) -> double& { return c.bev.y_min; }));
        f.push_back(real_field("bev.y_max", [](RunConfig& c) -> double& { return c.bev.y_max; }));
        f.push_back(int_field<Z>("bev.height", [](RunConfig& c) -> Z& { return c.bev.height; }));
        f.push_back(int_field<Z>("bev.width", [](RunConfig& c) -> Z& { return c.bev.width; }));
        f.push_back(real_field("bev.line_width_px", [](RunConfig& c) -> double& { return c.bev.line_width_px[1]; }));

        f.push_back({"backbone.widths",
                     [](const RunConfig& c) {
                         const auto& w = c.model.backbone.widths;
                         return std::to_string(w[0]) + "," + std::to_string(w[1]) + "," + std::to_string(w[2]);
                     },
                     [](RunConfig& c, const std::string& v) {
                         auto parts = split_list(v);
                         if (parts.size() != 3) throw ConfigError("config: 'backbone.widths' expects 3 integers");
                         for (int i = 0; i < 3; ++i) c.model.backbone.widths[i] = parse_int<Z>("backbone.widths", parts[i]);
                     }});
        f.push_back(int_field<Z>("backbone.blocks", [](RunConfig& c) -> Z& { return c.model.backbone.blocks_per_stage; }));

        f.push_back(int_field<Z>("model.dim", [](RunConfig& c) -> Z& { return c.model.decoder.dim; }));
        f.push_back(int_field<Z>("model.ffn_dim", [](RunConfig& c) -> Z& { return c.model.decoder.ffn_dim; }));

        f.push_back(int_field<Z>("encoder.layers", [](RunConfig& c) -> Z& { return c.model.encoder.num_layers; }));
        f.push_back(int_field<Z>("encoder.heads", [](RunConfig& c) -> Z& { return c.model.encoder.heads; }));
        f.push_back(int_field<Z>("encoder.points", [](RunConfig& c) -> Z& { return c.model.encoder.points; }));
        f.push_back(attention_field("encoder.attention", [](RunConfig& c) -> AttentionKind& { return c.model.encoder.attention; }));
        f.push_back(bool_field("encoder.cross_scale", [](RunConfig& c) -> bool& { return c.model.encoder.cross_scale; }));
        f.push_back(real_field("encoder.dropout", [](RunConfig& c) -> double& { return c.model.encoder.dropout; }));

        f.push_back(int_field<Z>("decoder.layers", [](RunConfig& c) -> Z& { return c.model.decoder.num_layers; }));
        f.push_back(int_field<Z>("decoder.heads", [](RunConfig& c) -> Z& { return c.model.decoder.heads; }));
        f.push_back(int_field<Z>("decoder.points", [](RunConfig& c) -> Z& { return c.model.decoder.points; }));
        f.push_back(attention_field("decoder.attention", [](RunConfig& c) -> AttentionKind& { return c.model.decoder.attention; }));
        f.push_back({"decoder.camera_embedding",
                     [](const RunConfig& c) {
                         const auto& ce = c.model.decoder.camera_embedding;
                         return std::string(!ce ? "auto" : (*ce ? "true" : "false"));
                     },
                     [](RunConfig& c, const std::string& v) {
                         if (v == "auto")
                             c.model.decoder.camera_embedding.reset();
                         else
                             c.model.decoder.camera_embedding = parse_bool("decoder.camera_embedding", v);
                     }});
        f.push_back(bool_field("decoder.query_self_attn", [](RunConfig& c) -> bool& { return c.model.decoder.query_self_attn; }));
        f.push_back(real_field("decoder.dropout", [](RunConfig& c) -> double& { return c.model.decoder.dropout; }));

        f.push_back(int_field<Z>("query.rows", [](RunConfig& c) -> Z& { return c.model.decoder.query_rows; }));
        f.push_back(int_field<Z>("query.cols", [](RunConfig& c) -> Z& { return c.model.decoder.query_cols; }));

        f.push_back(real_field("head.dropout", [](RunConfig& c) -> double& { return c.model.head.dropout; }));
        f.push_back(real_field("head.background_prior", [](RunConfig& c) -> double& { return c.model.head.background_prior; }));
        f.push_back(bool_field("head.final_resize_to_gt", [](RunConfig& c) -> bool& { return c.model.head.final_resize_to_gt; }));

        f.push_back({"loss.weights",
                     [](const RunConfig& c) {
                         std::string s;
                         for (std::size_t i = 0; i < c.loss_weights.size(); ++i)
                             s += (i ? "," : "") + fmt_double(c.loss_weights[i]);
                         return s;
                     },
                     [](RunConfig& c, const std::string& v) {
                         c.loss_weights.clear();
                         for (const auto& p : split_list(v)) c.loss_weights.push_back(parse_double("loss.weights", p));
                     }});

        f.push_back(real_field("optim.lr_backbone", [](RunConfig& c) -> double& { return c.optim.lr_backbone; }));
        f.push_back(real_field("optim.lr_transformer", [](RunConfig& c) -> double& { return c.optim.lr_transformer; }));
        f.push_back(real_field("optim.lr_drop_factor", [](RunConfig& c) -> double& { return c.optim.lr_drop_factor; }));
        f.push_back(real_field("optim.weight_decay", [](RunConfig& c) -> double& { return c.optim.weight_decay; }));
        f.push_back(real_field("optim.beta1", [](RunConfig& c) -> double& { return c.optim.beta1; }));
        f.push_back(real_field("optim.beta2", [](RunConfig& c) -> double& { return c.optim.beta2; }));
        f.push_back(real_field("optim.eps", [](RunConfig& c) -> double& { return c.optim.eps; }));
        f.push_back(real_field("optim.grad_clip", [](RunConfig& c) -> double& { return c.optim.grad_clip; }));

        f.push_back(int_field<Z>("train.epochs", [](RunConfig& c) -> Z& { return c.train.epochs; }));
        f.push_back(int_field<Z>("train.lr_drop_epoch", [](RunConfig& c) -> Z& { return c.train.lr_drop_epoch; }));
        f.push_back(int_field<Z>("train.max_steps", [](RunConfig& c) -> Z& { return c.train.max_steps; }));
        f.push_back(int_field<Z>("train.batch_size", [](RunConfig& c) -> Z& { return c.train.batch_size; }));
        f.push_back(int_field<Z>("train.checkpoint_every", [](RunConfig& c) -> Z& { return c.train.checkpoint_every; }));
        f.push_back(int_field<Z>("train.eval_every", [](RunConfig& c) -> Z& { return c.train.eval_every; }));
        f.push_back(int_field<Z>("train.log_every", [](RunConfig& c) -> Z& { return c.train.log_every; }));
        f.push_back(int_field<Z>("train.loss_window", [](RunConfig& c) -> Z& { return c.train.loss_window; }));

        f.push_back(bool_field("augment.enabled", [](RunConfig& c) -> bool& { return c.augment.enabled; }));
        f.push_back(bool_field("augment.flip", [](RunConfig& c) -> bool& { return c.augment.flip; }));
        f.push_back(real_field("augment.brightness", [](RunConfig& c) -> double& { return c.augment.brightness; }));
        f.push_back(real_field("augment.contrast", [](RunConfig& c) -> double& { return c.augment.contrast; }));
        f.push_back(real_field("augment.hue", [](RunConfig& c) -> double& { return c.augment.hue; }));
        f.push_back(bool_field("augment.swap_channels", [](RunConfig& c) -> bool& { return c.augment.swap_channels; }));
        f.push_back(bool_field("augment.flip_reverses_cameras", [](RunConfig& c) -> bool& { return c.augment.flip_reverses_cameras; }));

        f.push_back(real_field("bn.momentum", [](RunConfig& c) -> double& { return c.bn.momentum; }));
        f.push_back(real_field("bn.eps", [](RunConfig& c) -> double& { return c.bn.eps; }));
        f.push_back(bool_field("bn.eval_batch_stats", [](RunConfig& c) -> bool& { return c.bn.eval_batch_stats; }));
        return f;
    }();
    return table;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
    std::vector<std::string> k;
    for (const auto& f : detail::fields()) k.push_back(f.key);
    return k;
}

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& f : detail::fields())
        if (f.key == key) {
            f.set(cfg, value);
            return;
        }
    throw ConfigError("config: unknown key '" + key + "'");
}

inline std::string get_config_value(const RunConfig& cfg, const std::string& key) {
    for (const auto& f : detail::fields())
        if (f.key == key) return f.get(cfg);
    throw ConfigError("config: unknown key '" + key + "'");
}

// ---- presets ----------------------------------------------------------------

inline RunConfig desk_preset() {
    RunConfig c;
    c.preset = "desk";
    c.data = DataConfig{};
    c.bev = synth::BEVSpec{};  // [-30,30] x [-15,15], 160 x 80, 5 px lines
    auto& m = c.model;
    m.backbone.widths = {32, 64, 128};
    m.backbone.blocks_per_stage = 2;
    m.encoder.num_layers = 2;
    m.encoder.heads = 2;
    m.encoder.points = 4;
    m.decoder.num_layers = 2;
    m.decoder.heads = 2;
    m.decoder.points = 4;
    m.decoder.dim = 64;
    m.decoder.ffn_dim = 128;
    m.decoder.query_rows = 40;
    m.decoder.query_cols = 20;
    m.head.dropout = 0.1;
    c.loss_weights = {1, 15, 15, 15};
    // Faster schedule for the 16-scene overfit task: 125 epochs of 16 steps.
    c.optim.lr_backbone = 1e-3;
    c.optim.lr_transformer = 1e-3;
    c.train.epochs = 125;
    c.train.lr_drop_epoch = 105;
    c.train.checkpoint_every = 25;
    c.train.eval_every = 25;
    return c;
}

inline RunConfig desk_symmetric_preset() {
    RunConfig c = desk_preset();
    c.preset = "desk-symmetric";
    c.data.rig = "desk-symmetric";
    return c;
}

inline RunConfig paper_surround_preset() {
    RunConfig c;
    c.preset = "paper-surround";
    c.data.rig = "surround";
    c.data.image_height = 448;
    c.data.image_width = 800;
    c.bev = synth::BEVSpec{-30, 30, -15, 15, 400, 200, {0, 5, 5, 5}};
    auto& m = c.model;
    m.backbone.widths = {128, 256, 512};
    m.encoder.num_layers = 4;
    m.encoder.heads = 8;
    m.encoder.points = 4;
    m.decoder.num_layers = 4;
    m.decoder.heads = 8;
    m.decoder.points = 16;
    m.decoder.dim = 256;
    m.decoder.ffn_dim = 512;
    m.decoder.query_rows = 100;
    m.decoder.query_cols = 50;
    m.encoder.dropout = 0.1;
    m.decoder.dropout = 0.1;
    m.head.dropout = 0.1;
    c.loss_weights = {1, 15, 15, 15};
    c.optim = OptimConfig{};
    c.train.epochs = 120;
    c.train.lr_drop_epoch = 100;
    c.augment.enabled = true;
    return c;
}

inline RunConfig paper_front_preset() {
    RunConfig c = paper_surround_preset();
    c.preset = "paper-front";
    c.data.rig = "front";
    c.bev = synth::BEVSpec{0, 60, -15, 15, 400, 200, {0, 5, 5, 5}};
    c.model.decoder.query_rows = 100;
    c.model.decoder.query_cols = 50;
    c.augment.flip_reverses_cameras = false;
    return c;
}

inline RunConfig nullmax_front_preset() {
    RunConfig c = paper_surround_preset();
    c.preset = "nullmax-front";
    c.data.rig = "front";
    c.data.image_height = 384;
    c.data.image_width = 640;
    c.data.classes = 2;
    c.bev = synth::BEVSpec{0, 80, -10, 10, 512, 128, {0, 3, 3, 3}};
    c.model.decoder.query_rows = 128;
    c.model.decoder.query_cols = 32;
    c.loss_weights = {1, 15};
    c.augment.flip_reverses_cameras = false;
    return c;
}

inline std::vector<std::string> preset_names() {
    return {"desk", "desk-symmetric", "paper-surround", "paper-front", "nullmax-front"};
}

inline RunConfig preset(const std::string& name) {
    if (name == "desk") return desk_preset();
    if (name == "desk-symmetric") return desk_symmetric_preset();
    if (name == "paper-surround") return paper_surround_preset();
    if (name == "paper-front") return paper_front_preset();
    if (name == "nullmax-front") return nullmax_front_preset();
    throw ConfigError("config: unknown preset '" + name + "'");
}

// ---- derived objects ------------------------------------------------------

inline synth::CameraRig make_rig(const RunConfig& c) {
    const auto w = c.data.image_width, h = c.data.image_height;
    if (c.data.rig == "desk") return synth::desk_rig(w, h);
    if (c.data.rig == "desk-symmetric") return synth::desk_symmetric_rig(w, h);
    if (c.data.rig == "surround") return synth::surround_rig(w, h);
    if (c.data.rig == "front") return synth::front_rig(w, h);
    throw ConfigError("config: unknown rig '" + c.data.rig + "'");
}

inline synth::SceneOptions make_scene_options(const RunConfig& c) {
    synth::SceneOptions o;
    o.min_lines = c.data.min_lines;
    o.max_lines = c.data.max_lines;
    o.max_crossings = c.data.max_crossings;
    o.single_class = c.data.classes == 2;
    return o;
}

inline std::vector<std::string> class_names(const RunConfig& c) {
    if (c.data.classes == 2) return {"background", "lane"};
    return {synth::kClassNames.begin(), synth::kClassNames.end()};
}

inline void RunConfig::validate() {
    auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
    if (data.classes != 2 && data.classes != 4) fail("data.classes must be 2 or 4");
    if (data.scenes == 0) fail("data.scenes must be >= 1");
    if (data.min_lines < 2 || data.max_lines < data.min_lines) fail("data.min_lines/max_lines invalid");
    if (data.max_crossings < 0) fail("data.max_crossings must be >= 0");
    bev.line_width_px[2] = bev.line_width_px[3] = bev.line_width_px[1];
    try {
        bev.validate();
        make_rig(*this).validate();
        model.backbone.image_height = data.image_height;
        model.backbone.image_width = data.image_width;
        model.encoder.dim = model.decoder.dim;
        model.encoder.ffn_dim = model.decoder.ffn_dim;
        model.decoder.cameras = make_rig(*this).size();
        model.head.classes = data.classes;
        model.head.gt_height = bev.height;
        model.head.gt_width = bev.width;
        model.backbone.bn = bn;
        model.head.bn = bn;
        model.backbone.validate();
        model.sync_and_validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        fail(e.what());
    }
    if (!model.head.final_resize_to_gt &&
        (4 * model.decoder.query_rows != bev.height || 4 * model.decoder.query_cols != bev.width))
        fail("query grid x4 must equal the GT size unless head.final_resize_to_gt is true");
    if (loss_weights.size() != data.classes) fail("loss.weights needs one weight per class");
    for (double w : loss_weights)
        if (!(w > 0)) fail("loss.weights must be positive");
    if (!(optim.lr_backbone >= 0 && optim.lr_transformer >= 0)) fail("learning rates must be >= 0");
    if (!(optim.lr_drop_factor > 0 && optim.lr_drop_factor <= 1)) fail("optim.lr_drop_factor must lie in (0,1]");
    if (!(optim.weight_decay >= 0)) fail("optim.weight_decay must be >= 0");
    if (!(optim.beta1 >= 0 && optim.beta1 < 1 && optim.beta2 >= 0 && optim.beta2 < 1)) fail("optim betas must lie in [0,1)");
    if (!(optim.eps > 0)) fail("optim.eps must be > 0");
    if (!(optim.grad_clip >= 0)) fail("optim.grad_clip must be >= 0");
    if (train.epochs == 0) fail("train.epochs must be >= 1");
    if (train.batch_size == 0) fail("train.batch_size must be >= 1");
    if (train.log_every == 0) fail("train.log_every must be >= 1");
    if (train.loss_window == 0) fail("train.loss_window must be >= 1");
    if (!(augment.brightness >= 0 && augment.brightness < 1 && augment.contrast >= 0 && augment.contrast < 1 &&
          augment.hue >= 0 && augment.hue <= 0.5))
        fail("augmentation magnitudes out of range");
    if (!(bn.momentum >= 0 && bn.momentum < 1 && bn.eps > 0)) fail("bn.momentum must lie in [0,1), bn.eps > 0");
}

inline std::string to_text(const RunConfig& c) {
    std::string s;
    for (const auto& f : detail::fields()) s += f.key + " = " + f.get(c) + "\n";
    return s;
}

inline bool RunConfig::operator==(const RunConfig& o) const { return to_text(*this) == to_text(o); }

// Parses key = value lines on top of `base` (a preset key, if present, must
// come first and replaces the base). Later keys override earlier ones.
inline RunConfig parse_config(const std::string& text, RunConfig base = desk_preset()) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool first_key = true;
    std::map<std::string, std::size_t> seen;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
        if (seen.count(key))
            throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        seen[key] = lineno;
        if (key == "preset") {
            if (!first_key) throw ConfigError("config line " + std::to_string(lineno) + ": 'preset' must come first");
            base = preset(value);
        } else {
            try {
                set_config_value(base, key, value);
            } catch (const ConfigError& e) {
                throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
            }
        }
        first_key = false;
    }
    base.validate();
    return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = desk_preset()) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

}  // namespace bevseg
