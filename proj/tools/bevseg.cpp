// bevseg command-line tool: synth, train, eval, infer, attention, gradcheck.
// Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 I/O error.

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "bevseg/config.hpp"
#include "bevseg/grad_suite.hpp"
#include "bevseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace bevseg;

namespace {

enum Exit { kOk = 0, kValidation = 1, kNumerical = 2, kIo = 3 };

struct IoFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
    std::string preset_name;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "config file (key = value lines)");
    cmd->add_option("--seed", f.seed, "override the run seed");
    cmd->add_flag("--deterministic", f.deterministic, "force deterministic mode");
    cmd->add_option("--preset", f.preset_name, "base preset: " + [] {
        std::string s;
        for (const auto& n : preset_names()) s += (s.empty() ? "" : ", ") + n;
        return s;
    }());
}

void require_file(const std::string& path) {
    if (!fs::is_regular_file(path)) throw IoFailure("no such file: '" + path + "'");
}

// Preset, then config file (or the run's echoed config next to a checkpoint),
// then command-line overrides.
RunConfig resolve_config(const CommonFlags& f, const std::string& checkpoint = {}) {
    RunConfig base = f.preset_name.empty() ? desk_preset() : preset(f.preset_name);
    std::string path = f.config_path;
    if (path.empty() && !checkpoint.empty()) {
        const auto echoed = fs::path(checkpoint).parent_path().parent_path() / "config.txt";
        if (fs::is_regular_file(echoed)) path = echoed.string();
    }
    RunConfig cfg = base;
    if (!path.empty()) {
        require_file(path);
        cfg = load_config(path, base);
    }
    if (f.seed) cfg.seed = *f.seed;
    if (f.deterministic) cfg.deterministic = true;
    cfg.validate();
    return cfg;
}

void write_bytes(const fs::path& path, const std::string& bytes) { synth::detail::write_file(path, bytes); }

Tensor<float> read_images(const std::vector<std::string>& paths, const RunConfig& cfg) {
    const std::size_t cams = make_rig(cfg).size();
    if (paths.size() != cams)
        throw ConfigError("expected " + std::to_string(cams) + " camera images, got " + std::to_string(paths.size()));
    const std::size_t h = cfg.data.image_height, w = cfg.data.image_width;
    Tensor<float> images({cams, 3, h, w});
    auto v = images.data();
    for (std::size_t c = 0; c < cams; ++c) {
        require_file(paths[c]);
        const auto img = synth::decode_pnm(synth::detail::read_file(paths[c]), paths[c]);
        if (img.width != w || img.height != h)
            throw DimensionError(paths[c] + ": " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                 " does not match configured " + std::to_string(w) + "x" + std::to_string(h));
        for (std::size_t ch = 0; ch < 3; ++ch)
            for (std::size_t p = 0; p < h * w; ++p)
                v[(c * 3 + ch) * h * w + p] =
                    static_cast<float>(img.pixels[p * img.channels + (img.channels == 3 ? ch : 0)]) / 255.0f;
    }
    return images;
}

int cmd_synth(const CommonFlags& f, const std::string& out, std::optional<std::size_t> count) {
    RunConfig cfg = resolve_config(f);
    if (count) cfg.data.scenes = *count;
    cfg.validate();
    const auto seeds = synth::write_dataset(out, cfg.data.first_seed, cfg.data.scenes, make_rig(cfg), cfg.bev,
                                            make_scene_options(cfg));
    write_bytes(fs::path(out) / "config.txt", to_text(cfg));
    std::cout << "wrote " << seeds.size() << " scenes to " << out << "\n";
    return kOk;
}

int cmd_train(const CommonFlags& f, const std::string& data_dir, const std::string& run_dir,
              const std::string& val_dir, const std::string& resume, std::optional<std::size_t> max_steps, bool quiet) {
    RunConfig cfg = resolve_config(f);
    if (max_steps) cfg.train.max_steps = *max_steps;
    const Dataset data = load_dataset(data_dir, cfg);
    std::optional<Dataset> val;
    if (!val_dir.empty()) val = load_dataset(val_dir, cfg);
    Trainer trainer(cfg, data);
    TrainOptions o;
    o.run_dir = run_dir;
    if (!resume.empty()) {
        require_file(resume);
        o.resume_from = resume;
    }
    o.val = val ? &*val : nullptr;
    if (!quiet) o.progress = &std::cout;
    std::cout << "training " << trainer.model().num_trainable() << " parameters on " << data.samples.size()
              << " scenes for " << trainer.total_steps() << " steps\n";
    const auto res = trainer.train(o);
    if (!res.epochs.empty() && res.epochs.back().report)
        std::cout << res.epochs.back().report->to_table();
    std::cout << "finished at step " << res.final_step << ", best all_merged IoU " << res.best_iou << "\n";
    return kOk;
}

int cmd_eval(const CommonFlags& f, const std::string& checkpoint, const std::string& data_dir, const std::string& out) {
    require_file(checkpoint);
    const RunConfig cfg = resolve_config(f, checkpoint);
    const Model model = load_model(cfg, checkpoint);
    const Dataset data = load_dataset(data_dir, cfg);
    const auto report = evaluate(model, data);
    std::cout << report.to_table();
    if (!out.empty()) {
        fs::create_directories(out);
        write_bytes(fs::path(out) / "metrics.txt", report.to_key_values());
        write_bytes(fs::path(out) / "metrics.csv", report.to_table());
    }
    return kOk;
}

int cmd_infer(const CommonFlags& f, const std::string& checkpoint, const std::vector<std::string>& images,
              const std::string& gt_path, const std::string& out) {
    require_file(checkpoint);
    const RunConfig cfg = resolve_config(f, checkpoint);
    const Model model = load_model(cfg, checkpoint);
    const auto pred = predict(model, read_images(images, cfg));
    std::optional<ClassRaster> gt;
    if (!gt_path.empty()) {
        require_file(gt_path);
        const auto g = synth::decode_pnm(synth::detail::read_file(gt_path), gt_path);
        if (g.channels != 1 || g.width != pred.width || g.height != pred.height)
            throw DimensionError(gt_path + ": dims do not match the prediction");
        gt = ClassRaster(g.height, g.width);
        gt->ids = g.pixels;
    }
    fs::create_directories(out);
    write_bytes(fs::path(out) / "pred.pgm", synth::encode_pnm(raster_to_pgm(pred)));
    write_bytes(fs::path(out) / "pred_color.ppm", synth::encode_pnm(color_overlay(pred, gt ? &*gt : nullptr)));
    std::cout << "prediction " << pred.height << "x" << pred.width << " written to " << out << "\n";
    if (gt) {
        MetricAccumulator acc(class_names(cfg), structure_classes(cfg.data.classes));
        acc.add(pred, *gt);
        std::cout << acc.report().to_table();
    }
    return kOk;
}

int cmd_attention(const CommonFlags& f, const std::string& checkpoint, const std::string& data_dir,
                  std::uint64_t scene, std::size_t row, std::size_t col, std::optional<std::size_t> layer,
                  const std::string& out) {
    const RunConfig cfg = checkpoint.empty() ? resolve_config(f) : resolve_config(f, checkpoint);
    Model model;
    if (checkpoint.empty()) {
        Rng init(mix_seed(cfg.seed, kInitSalt));
        model = Model(cfg.model, init);
    } else {
        require_file(checkpoint);
        model = load_model(cfg, checkpoint);
    }
    const auto sample = synth::read_sample(data_dir, scene, make_rig(cfg).size(), cfg.data.image_height,
                                           cfg.data.image_width, cfg.bev.height, cfg.bev.width);
    const std::size_t l = layer.value_or(cfg.model.decoder.num_layers - 1);
    const auto ex = export_attention(model, sample.images, row, col, l);
    fs::create_directories(out);
    write_bytes(fs::path(out) / "attention.csv", ex.to_csv());
    for (std::size_t c = 0; c < ex.heatmaps.size(); ++c)
        write_bytes(fs::path(out) / ("heatmap_cam" + std::to_string(c) + ".pgm"), synth::encode_pnm(ex.heatmaps[c]));
    std::cout << std::setprecision(8) << "rows " << ex.rows.size() << "\n";
    for (std::size_t m = 0; m < ex.head_sums.size(); ++m) std::cout << "head " << m << " weight sum " << ex.head_sums[m] << "\n";
    for (std::size_t c = 0; c < ex.camera_mass.size(); ++c)
        std::cout << "camera " << c << " mass " << ex.camera_mass[c] / static_cast<double>(ex.head_sums.size()) << "\n";
    return kOk;
}

int cmd_gradcheck(std::size_t probes) {
    const auto results = run_gradient_suite(probes);
    bool ok = true;
    std::cout << std::left << std::setw(40) << "case" << std::setw(8) << "result" << std::setw(14) << "max_rel"
              << std::setw(10) << "tol" << "seconds\n";
    for (const auto& r : results) {
        ok = ok && r.passed();
        std::cout << std::left << std::setw(40) << r.name << std::setw(8) << (r.passed() ? "PASS" : "FAIL")
                  << std::setw(14) << std::setprecision(3) << r.result.max_rel_error << std::setw(10) << r.tolerance
                  << std::setprecision(3) << r.seconds << "\n";
    }
    return ok ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"BEV semantic segmentation from multi-camera images"};
    app.require_subcommand(1);
    CommonFlags flags;

    auto* synth_cmd = app.add_subcommand("synth", "render a synthetic dataset");
    std::string synth_out;
    std::optional<std::size_t> synth_count;
    add_common(synth_cmd, flags);
    synth_cmd->add_option("--out", synth_out, "dataset directory")->required();
    synth_cmd->add_option("--count", synth_count, "number of scenes (default data.scenes)");

    auto* train_cmd = app.add_subcommand("train", "train a model");
    std::string train_data, train_run, train_val, train_resume;
    std::optional<std::size_t> train_steps;
    bool train_quiet = false;
    add_common(train_cmd, flags);
    train_cmd->add_option("--data", train_data, "training dataset directory")->required();
    train_cmd->add_option("--run", train_run, "run directory")->required();
    train_cmd->add_option("--val", train_val, "validation dataset directory (default: training set)");
    train_cmd->add_option("--resume", train_resume, "training checkpoint to continue from");
    train_cmd->add_option("--max-steps", train_steps, "stop after this many optimizer steps");
    train_cmd->add_flag("--quiet", train_quiet, "no per-step progress lines");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string eval_ckpt, eval_data, eval_out;
    add_common(eval_cmd, flags);
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file; the config comes from the run directory unless given")->required();
    eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
    eval_cmd->add_option("--out", eval_out, "directory for metrics.txt and metrics.csv");

    auto* infer_cmd = app.add_subcommand("infer", "predict a BEV raster from camera images");
    std::string infer_ckpt, infer_gt, infer_out;
    std::vector<std::string> infer_images;
    add_common(infer_cmd, flags);
    infer_cmd->add_option("--checkpoint", infer_ckpt, "checkpoint file; the config comes from the run directory unless given")->required();
    infer_cmd->add_option("--images", infer_images, "one PPM/PGM per camera, in rig order")->required();
    infer_cmd->add_option("--gt", infer_gt, "optional GT raster for scoring and overlay");
    infer_cmd->add_option("--out", infer_out, "directory for pred.pgm and pred_color.ppm")->required();

    auto* attn_cmd = app.add_subcommand("attention", "export decoder sampling points and weights of one query");
    std::string attn_ckpt, attn_data, attn_out;
    std::uint64_t attn_scene = 0;
    std::size_t attn_row = 0, attn_col = 0;
    std::optional<std::size_t> attn_layer;
    add_common(attn_cmd, flags);
    attn_cmd->add_option("--checkpoint", attn_ckpt, "omit to use freshly initialized weights");
    attn_cmd->add_option("--data", attn_data, "dataset directory")->required();
    attn_cmd->add_option("--scene", attn_scene, "scene seed")->required();
    attn_cmd->add_option("--row", attn_row, "query row")->required();
    attn_cmd->add_option("--col", attn_col, "query column")->required();
    attn_cmd->add_option("--layer", attn_layer, "decoder layer (default: last)");
    attn_cmd->add_option("--out", attn_out, "directory for attention.csv and per-camera heatmaps")->required();

    auto* grad_cmd = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
    std::size_t grad_probes = 48;
    grad_cmd->add_option("--probes", grad_probes, "coordinates probed per input");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kValidation;
    }

    try {
        if (*synth_cmd) return cmd_synth(flags, synth_out, synth_count);
        if (*train_cmd)
            return cmd_train(flags, train_data, train_run, train_val, train_resume, train_steps, train_quiet);
        if (*eval_cmd) return cmd_eval(flags, eval_ckpt, eval_data, eval_out);
        if (*infer_cmd) return cmd_infer(flags, infer_ckpt, infer_images, infer_gt, infer_out);
        if (*attn_cmd)
            return cmd_attention(flags, attn_ckpt, attn_data, attn_scene, attn_row, attn_col, attn_layer, attn_out);
        if (*grad_cmd) return cmd_gradcheck(grad_probes);
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const IoFailure& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const synth::DatasetError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kValidation;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kValidation;
    } catch (const std::runtime_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    }
    return kValidation;
}
