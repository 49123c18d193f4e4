#pragma once

// Training loop, evaluation, inference and attention export on top of the
// model, loss and dataset headers. Training runs in f32.
//
// Run directory:
//   config.txt               fully resolved config (re-parses to the same config)
//   steps.csv                step,epoch,loss,loss_avg,lr_backbone,lr_transformer
//   log.csv                  epoch,step,loss,iou.<class>...,all_merged,all_mean
//   checkpoints/epoch_<e>.bin, best.bin, last.bin

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bevseg/adamw.hpp"
#include "bevseg/checkpoint.hpp"
#include "bevseg/config.hpp"
#include "bevseg/losses.hpp"
#include "bevseg/metrics.hpp"
#include "bevseg/model.hpp"
#include "bevseg/synth/dataset_io.hpp"

namespace bevseg {

using Model = BEVSegFormer<float>;

// Stream salts for the seeded random sources of a run.
inline constexpr std::uint64_t kInitSalt = 0x1a17;
inline constexpr std::uint64_t kEpochSalt = 0xe90c0000;
inline constexpr std::uint64_t kStepSalt = 0x57e90000000ULL;

// ---- data -------------------------------------------------------------------

struct Dataset {
    std::vector<synth::SceneSample> samples;
    std::vector<std::string> class_names;
};

inline std::vector<std::string> read_class_names(const std::filesystem::path& root) {
    std::istringstream in(synth::detail::read_file(root / "classes.txt"));
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::size_t id = 0;
        std::string name;
        if (!(ls >> id >> name) || id != names.size())
            throw synth::DatasetError("classes.txt: bad line '" + line + "'");
        names.push_back(name);
    }
    return names;
}

// Loads every scene listed in the manifest; dims and class count must match `cfg`.
inline Dataset load_dataset(const std::filesystem::path& root, const RunConfig& cfg) {
    Dataset d;
    d.class_names = read_class_names(root);
    if (d.class_names.size() != cfg.data.classes)
        throw ConfigError("dataset has " + std::to_string(d.class_names.size()) + " classes, config expects " +
                          std::to_string(cfg.data.classes));
    const std::size_t cams = make_rig(cfg).size();
    for (auto seed : synth::read_manifest(root)) {
        auto s = synth::read_sample(root, seed, cams, cfg.data.image_height, cfg.data.image_width, cfg.bev.height,
                                    cfg.bev.width);
        for (auto id : s.gt.ids)
            if (id >= cfg.data.classes)
                throw synth::DatasetError("scene " + std::to_string(seed) + ": class id " + std::to_string(id) +
                                          " out of range");
        d.samples.push_back(std::move(s));
    }
    return d;
}

inline Dataset synthesize_dataset(const RunConfig& cfg) {
    Dataset d;
    d.class_names = class_names(cfg);
    const auto rig = make_rig(cfg);
    const auto opt = make_scene_options(cfg);
    for (std::size_t i = 0; i < cfg.data.scenes; ++i)
        d.samples.push_back(synth::make_sample(cfg.data.first_seed + i, rig, cfg.bev, opt));
    return d;
}

// Structure classes: every class but background.
inline std::vector<std::uint8_t> structure_classes(std::size_t classes) {
    std::vector<std::uint8_t> ids;
    for (std::size_t k = 1; k < classes; ++k) ids.push_back(static_cast<std::uint8_t>(k));
    return ids;
}

// ---- augmentation -----------------------------------------------------------

namespace detail {

inline void flip_columns(std::span<float> plane, std::size_t h, std::size_t w) {
    for (std::size_t r = 0; r < h; ++r) std::reverse(plane.begin() + r * w, plane.begin() + (r + 1) * w);
}

}  // namespace detail

// Photometric changes are shared by all cameras of a sample. A horizontal flip
// mirrors every image, reverses the GT columns (lateral mirror), and when
// `flip_reverses_cameras` is set moves camera i to slot (N - i) mod N, which is
// the mirrored camera for rigs ordered by increasing yaw from the front.
inline synth::SceneSample augment_sample(const synth::SceneSample& in, const AugmentConfig& a, Rng& rng) {
    synth::SceneSample s{in.images.detach(), in.gt, in.seed};
    const std::size_t n = s.images.dim(0), h = s.images.dim(2), w = s.images.dim(3), hw = h * w;
    auto v = s.images.data();
    if (a.flip && rng.bernoulli(0.5)) {
        for (std::size_t p = 0; p < n * 3; ++p) detail::flip_columns(v.subspan(p * hw, hw), h, w);
        if (a.flip_reverses_cameras && n > 1) {
            std::vector<float> copy(v.begin(), v.end());
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t src = (n - i) % n;
                std::copy_n(copy.begin() + static_cast<long>(src * 3 * hw), 3 * hw, v.begin() + static_cast<long>(i * 3 * hw));
            }
        }
        for (std::size_t r = 0; r < s.gt.height; ++r)
            std::reverse(s.gt.ids.begin() + static_cast<long>(r * s.gt.width),
                         s.gt.ids.begin() + static_cast<long>((r + 1) * s.gt.width));
    }
    const double bright = 1.0 + rng.uniform(-a.brightness, a.brightness);
    const double contrast = 1.0 + rng.uniform(-a.contrast, a.contrast);
    const double hue = rng.uniform(-a.hue, a.hue) * 6.283185307179586;
    std::array<std::size_t, 3> perm{0, 1, 2};
    if (a.swap_channels && rng.bernoulli(0.5))
        for (std::size_t i = 2; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);

    // hue: rotate chroma in YIQ space
    const double ch = std::cos(hue), sh = std::sin(hue);
    for (std::size_t c = 0; c < n; ++c) {
        float* base = v.data() + c * 3 * hw;
        double mean = 0;
        for (std::size_t p = 0; p < 3 * hw; ++p) mean += base[p];
        mean /= static_cast<double>(3 * hw);
        for (std::size_t p = 0; p < hw; ++p) {
            double r = base[p], g = base[hw + p], b = base[2 * hw + p];
            const double y = 0.299 * r + 0.587 * g + 0.114 * b;
            const double i0 = 0.596 * r - 0.274 * g - 0.322 * b;
            const double q0 = 0.211 * r - 0.523 * g + 0.312 * b;
            const double i1 = ch * i0 - sh * q0, q1 = sh * i0 + ch * q0;
            std::array<double, 3> px{y + 0.956 * i1 + 0.621 * q1, y - 0.272 * i1 - 0.647 * q1, y - 1.106 * i1 + 1.703 * q1};
            for (std::size_t k = 0; k < 3; ++k) {
                const double x = ((px[perm[k]] * bright) - mean) * contrast + mean;
                base[k * hw + p] = static_cast<float>(std::clamp(x, 0.0, 1.0));
            }
        }
    }
    return s;
}

// ---- evaluation and inference ----------------------------------------------

inline Tensor<float> model_input(const Tensor<float>& images) { return synth::normalize_images<float>(images); }

inline Tensor<float> predict_logits(const Model& model, const Tensor<float>& images) {
    NoGradScope<float> no_grad;
    return model(model_input(images), ForwardMode{false, nullptr});
}

inline ClassRaster predict(const Model& model, const Tensor<float>& images) {
    return rasterize_prediction(predict_logits(model, images));
}

inline MetricReport evaluate(const Model& model, const Dataset& data) {
    MetricAccumulator acc(data.class_names, structure_classes(data.class_names.size()));
    for (const auto& s : data.samples) acc.add(predict(model, s.images), s.gt);
    return acc.report();
}

// ---- checkpoints ------------------------------------------------------------

struct TrainState {
    std::uint64_t step = 0;  // optimizer steps taken
    double best_iou = -1;
    std::vector<double> recent_losses;  // last loss_window per-step losses
};

inline void save_training_checkpoint(const std::string& path, const Model& model, const AdamW<float>& opt,
                                     const std::vector<std::string>& opt_names, const TrainState& st) {
    Checkpoint ck;
    model.save_to(ck);
    for (std::size_t i = 0; i < opt_names.size(); ++i) {
        const auto& p = opt.params()[i];
        const auto& m = opt.state().m[i];
        const auto& v = opt.state().v[i];
        ck.put_values("opt/m/" + opt_names[i], p.shape(), {m.begin(), m.end()}, DType::f32);
        ck.put_values("opt/v/" + opt_names[i], p.shape(), {v.begin(), v.end()}, DType::f32);
    }
    // counters stored as f64; exact below 2^53
    ck.put_values("opt/step", {1}, {static_cast<double>(opt.state().step)}, DType::f64);
    ck.put_values("train/step", {1}, {static_cast<double>(st.step)}, DType::f64);
    ck.put_values("train/best_iou", {1}, {st.best_iou}, DType::f64);
    ck.put_values("train/recent_losses", {st.recent_losses.size()}, st.recent_losses, DType::f64);
    ck.save(path);
}

inline void load_model_checkpoint(const std::string& path, Model& model) { model.load_from(Checkpoint::load(path)); }

inline TrainState load_training_checkpoint(const std::string& path, Model& model, AdamW<float>& opt,
                                           const std::vector<std::string>& opt_names) {
    const Checkpoint ck = Checkpoint::load(path);
    model.load_from(ck);
    for (std::size_t i = 0; i < opt_names.size(); ++i) {
        for (const char* kind : {"m", "v"}) {
            const auto* a = ck.find(std::string("opt/") + kind + "/" + opt_names[i]);
            auto& dst = kind[0] == 'm' ? opt.state().m[i] : opt.state().v[i];
            if (!a || a->values.size() != dst.size())
                throw CheckpointError("checkpoint: optimizer state missing or mismatched for " + opt_names[i]);
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<float>(a->values[j]);
        }
    }
    auto scalar = [&](const std::string& name) {
        const auto* a = ck.find(name);
        if (!a || a->values.size() != 1) throw CheckpointError("checkpoint: missing '" + name + "'");
        return a->values[0];
    };
    opt.state().step = static_cast<std::uint64_t>(scalar("opt/step"));
    TrainState st;
    st.step = static_cast<std::uint64_t>(scalar("train/step"));
    st.best_iou = scalar("train/best_iou");
    if (const auto* a = ck.find("train/recent_losses")) st.recent_losses = a->values;
    return st;
}

// ---- training ---------------------------------------------------------------

struct TrainOptions {
    std::filesystem::path run_dir;            // empty: nothing written to disk
    std::optional<std::string> resume_from;   // training checkpoint to continue
    std::optional<std::size_t> stop_at_step;  // overrides train.max_steps
    const Dataset* val = nullptr;             // defaults to the training set
    std::ostream* progress = nullptr;         // one line per logged step
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    std::uint64_t step = 0;
    double loss = 0;
    std::optional<MetricReport> report;
};

struct TrainResult {
    std::vector<double> losses;       // per optimizer step taken in this call
    std::vector<double> avg_losses;   // trailing loss_window average at each step
    std::uint64_t first_step = 0;     // step index of losses[0]
    std::uint64_t final_step = 0;
    std::vector<EpochRecord> epochs;
    double best_iou = -1;
};

class Trainer {
public:
    Trainer(RunConfig cfg, const Dataset& data) : cfg_(std::move(cfg)), data_(data) {
        cfg_.validate();
        if (data_.samples.empty()) throw ConfigError("training set is empty");
        Rng init(mix_seed(cfg_.seed, kInitSalt));
        model_ = Model(cfg_.model, init);
        std::vector<Tensor<float>> params;
        std::vector<std::size_t> groups;
        for (const auto& p : model_.parameters())
            if (p.trainable) {
                params.push_back(p.tensor);
                groups.push_back(static_cast<std::size_t>(p.group));
                names_.push_back(p.name);
            }
        AdamWOptions o;
        o.lr = cfg_.optim.lr_transformer;
        o.beta1 = cfg_.optim.beta1;
        o.beta2 = cfg_.optim.beta2;
        o.eps = cfg_.optim.eps;
        o.weight_decay = cfg_.optim.weight_decay;
        opt_.emplace(std::move(params), std::move(groups), o);
    }

    std::size_t steps_per_epoch() const {
        return (data_.samples.size() + cfg_.train.batch_size - 1) / cfg_.train.batch_size;
    }

    std::uint64_t total_steps() const {
        const std::uint64_t all = cfg_.train.epochs * steps_per_epoch();
        return cfg_.train.max_steps ? std::min<std::uint64_t>(all, cfg_.train.max_steps) : all;
    }

    // Learning-rate multiplier for the epoch containing `step`.
    double lr_factor(std::uint64_t step) const {
        return step / steps_per_epoch() >= cfg_.train.lr_drop_epoch ? cfg_.optim.lr_drop_factor : 1.0;
    }

    // Sample order of one epoch; a pure function of (seed, epoch).
    std::vector<std::size_t> epoch_order(std::uint64_t epoch) const {
        std::vector<std::size_t> order(data_.samples.size());
        std::iota(order.begin(), order.end(), 0);
        Rng rng(mix_seed(cfg_.seed, kEpochSalt + epoch));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        return order;
    }

    TrainResult train(const TrainOptions& o = {}) {
        namespace fs = std::filesystem;
        const bool to_disk = !o.run_dir.empty();
        if (to_disk) {
            fs::create_directories(o.run_dir / "checkpoints");
            write_text(o.run_dir / "config.txt", to_text(cfg_));
        }
        if (o.resume_from) state_ = load_training_checkpoint(*o.resume_from, model_, *opt_, names_);

        const std::uint64_t end = o.stop_at_step ? std::min<std::uint64_t>(*o.stop_at_step, total_steps()) : total_steps();
        const std::size_t spe = steps_per_epoch();
        std::ofstream steps_csv, log_csv;
        if (to_disk) {
            const bool fresh = state_.step == 0;
            steps_csv.open(o.run_dir / "steps.csv", fresh ? std::ios::trunc : std::ios::app);
            log_csv.open(o.run_dir / "log.csv", fresh ? std::ios::trunc : std::ios::app);
            if (!steps_csv || !log_csv) throw synth::DatasetError("cannot write logs in " + o.run_dir.string());
            if (fresh) {
                steps_csv << "step,epoch,loss,loss_avg,lr_backbone,lr_transformer\n";
                log_csv << "epoch,step,loss";
                for (const auto& n : data_.class_names) log_csv << ",iou." << n;
                log_csv << ",all_merged,all_mean\n";
            }
            steps_csv << std::setprecision(9);
            log_csv << std::setprecision(9);
        }

        TrainResult res;
        res.first_step = state_.step;
        std::deque<double> window(state_.recent_losses.begin(), state_.recent_losses.end());
        double epoch_loss = 0;
        std::size_t epoch_count = 0;
        std::vector<std::size_t> order;
        std::uint64_t order_epoch = UINT64_MAX;

        while (state_.step < end) {
            const std::uint64_t step = state_.step;
            const std::uint64_t epoch = step / spe;
            if (epoch != order_epoch) {
                order = epoch_order(epoch);
                order_epoch = epoch;
            }
            const double f = lr_factor(step);
            opt_->set_group_lr(static_cast<std::size_t>(ParamGroup::backbone), cfg_.optim.lr_backbone * f);
            opt_->set_group_lr(static_cast<std::size_t>(ParamGroup::transformer), cfg_.optim.lr_transformer * f);

            Rng rng(mix_seed(cfg_.seed, kStepSalt + step));
            opt_->zero_grad();
            const std::size_t first = (step % spe) * cfg_.train.batch_size;
            const std::size_t last = std::min(first + cfg_.train.batch_size, order.size());
            double loss = 0;
            for (std::size_t b = first; b < last; ++b) {
                const auto& sample = data_.samples[order[b]];
                const double l = sample_step(sample, rng, 1.0 / static_cast<double>(last - first));
                if (!std::isfinite(l))
                    throw NumericalError("non-finite loss at step " + std::to_string(step) + " (scene " +
                                         std::to_string(sample.seed) + ")");
                loss += l / static_cast<double>(last - first);
            }
            clip_gradients();
            opt_->step();
            ++state_.step;

            window.push_back(loss);
            while (window.size() > cfg_.train.loss_window) window.pop_front();
            const double avg = std::accumulate(window.begin(), window.end(), 0.0) / static_cast<double>(window.size());
            res.losses.push_back(loss);
            res.avg_losses.push_back(avg);
            epoch_loss += loss;
            ++epoch_count;
            if (to_disk && state_.step % cfg_.train.log_every == 0)
                steps_csv << state_.step << "," << epoch + 1 << "," << loss << "," << avg << ","
                          << cfg_.optim.lr_backbone * f << "," << cfg_.optim.lr_transformer * f << "\n";
            if (o.progress && state_.step % cfg_.train.log_every == 0)
                *o.progress << "step " << state_.step << " epoch " << epoch + 1 << " loss " << loss << " avg " << avg
                            << "\n";

            const bool epoch_done = state_.step % spe == 0 || state_.step == end;
            if (epoch_done) {
                state_.recent_losses.assign(window.begin(), window.end());
                EpochRecord rec{static_cast<std::size_t>(epoch + 1), state_.step, epoch_loss / static_cast<double>(epoch_count), {}};
                const bool full_epoch = state_.step % spe == 0;
                const bool periodic_eval = cfg_.train.eval_every && full_epoch && (epoch + 1) % cfg_.train.eval_every == 0;
                if (periodic_eval || state_.step == end) rec.report = evaluate(model_, o.val ? *o.val : data_);
                if (to_disk) {
                    log_csv << rec.epoch << "," << rec.step << "," << rec.loss;
                    if (rec.report) {
                        for (const auto& c : rec.report->classes) log_csv << "," << c.iou;
                        log_csv << "," << rec.report->all_merged << "," << rec.report->all_mean << "\n";
                    } else {
                        for (std::size_t k = 0; k < data_.class_names.size() + 2; ++k) log_csv << ",";
                        log_csv << "\n";
                    }
                    log_csv.flush();
                    steps_csv.flush();
                }
                if (rec.report && rec.report->all_merged > state_.best_iou) {
                    state_.best_iou = rec.report->all_merged;
                    if (to_disk) save(o.run_dir / "checkpoints" / "best.bin");
                }
                if (to_disk && full_epoch && cfg_.train.checkpoint_every && (epoch + 1) % cfg_.train.checkpoint_every == 0)
                    save(o.run_dir / "checkpoints" / ("epoch_" + std::to_string(epoch + 1) + ".bin"));
                res.epochs.push_back(std::move(rec));
                epoch_loss = 0;
                epoch_count = 0;
            }
        }
        state_.recent_losses.assign(window.begin(), window.end());
        if (to_disk) save(o.run_dir / "checkpoints" / "last.bin");
        res.final_step = state_.step;
        res.best_iou = state_.best_iou;
        return res;
    }

    void save(const std::filesystem::path& path) const {
        save_training_checkpoint(path.string(), model_, *opt_, names_, state_);
    }

    const RunConfig& config() const { return cfg_; }
    Model& model() { return model_; }
    const Model& model() const { return model_; }
    const TrainState& state() const { return state_; }

private:
    // Forward + backward for one sample; gradients accumulate scaled by `scale`.
    double sample_step(const synth::SceneSample& sample, Rng& rng, double scale) {
        const synth::SceneSample s = cfg_.augment.enabled ? augment_sample(sample, cfg_.augment, rng) : sample;
        Tape<float> tape;
        Tensor<float> loss;
        {
            TapeScope<float> scope(tape);
            auto logits = model_(model_input(s.images), ForwardMode{true, &rng});
            loss = weighted_cross_entropy(logits, s.gt, cfg_.loss_weights);
            if (scale != 1.0) loss = bevseg::scale(loss, static_cast<float>(scale));
        }
        const double value = loss.item() / scale;
        if (std::isfinite(value)) tape.backward(loss);
        return value;
    }

    void clip_gradients() {
        if (cfg_.optim.grad_clip <= 0) return;
        double sq = 0;
        for (const auto& p : opt_->params())
            for (float g : p.grad()) sq += static_cast<double>(g) * g;
        const double norm = std::sqrt(sq);
        if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
        if (norm <= cfg_.optim.grad_clip) return;
        const float k = static_cast<float>(cfg_.optim.grad_clip / norm);
        for (const auto& p : opt_->params())
            for (float& g : p.grad()) g *= k;
    }

    static void write_text(const std::filesystem::path& path, const std::string& text) {
        synth::detail::write_file(path, text);
    }

    RunConfig cfg_;
    const Dataset& data_;
    Model model_;
    std::vector<std::string> names_;
    std::optional<AdamW<float>> opt_;
    TrainState state_;
};

// Builds a model for evaluation/inference from a config and checkpoint.
inline Model load_model(const RunConfig& cfg, const std::string& checkpoint) {
    RunConfig c = cfg;
    c.validate();
    Rng init(mix_seed(c.seed, kInitSalt));
    Model m(c.model, init);
    load_model_checkpoint(checkpoint, m);
    return m;
}

// ---- raster outputs ---------------------------------------------------------

inline synth::PnmImage raster_to_pgm(const ClassRaster& r) { return {r.width, r.height, 1, r.ids}; }

// Class colors over a dimmed copy of the GT (if given): predicted pixels take
// their class color, GT-only structure pixels show dark gray.
inline synth::PnmImage color_overlay(const ClassRaster& pred, const ClassRaster* gt = nullptr) {
    static const std::array<std::array<std::uint8_t, 3>, 4> colors{
        {{0, 0, 0}, {242, 209, 26}, {230, 38, 31}, {247, 247, 247}}};
    synth::PnmImage img{pred.width, pred.height, 3, std::vector<std::uint8_t>(pred.size() * 3)};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        std::array<std::uint8_t, 3> c = colors[std::min<std::size_t>(pred.ids[i], 3)];
        if (pred.ids[i] == 0 && gt && gt->ids[i] != 0) c = {70, 70, 70};
        for (std::size_t k = 0; k < 3; ++k) img.pixels[i * 3 + k] = c[k];
    }
    return img;
}

// ---- attention export -------------------------------------------------------

struct AttentionRow {
    std::size_t camera = 0, head = 0, point = 0;
    double x = 0, y = 0;  // image pixels
    double weight = 0;
};

struct AttentionExport {
    std::vector<AttentionRow> rows;         // one per (head, camera, point)
    std::vector<double> camera_mass;        // summed weight per camera
    std::vector<double> head_sums;          // per head; each 1 up to rounding
    std::vector<synth::PnmImage> heatmaps;  // per camera, image size
    std::vector<std::array<double, 2>> reference;  // per (head, camera), image pixels

    std::string to_csv() const {
        std::ostringstream o;
        o << std::setprecision(10) << "camera,head,point,x,y,weight\n";
        for (const auto& r : rows)
            o << r.camera << "," << r.head << "," << r.point << "," << r.x << "," << r.y << "," << r.weight << "\n";
        return o.str();
    }
};

// Sampling points and weights of one BEV query in decoder layer `layer`
// (clamped to the last layer). Deformable decoder only.
inline AttentionExport export_attention(const Model& model, const Tensor<float>& images, std::size_t query_row,
                                        std::size_t query_col, std::size_t layer) {
    const auto& dc = model.config().decoder;
    if (dc.attention != AttentionKind::deformable)
        throw ConfigError("attention export needs the deformable decoder");
    if (query_row >= dc.query_rows || query_col >= dc.query_cols)
        throw ConfigError("query (" + std::to_string(query_row) + "," + std::to_string(query_col) +
                          ") outside the " + std::to_string(dc.query_rows) + "x" + std::to_string(dc.query_cols) +
                          " grid");
    if (layer >= dc.num_layers) throw ConfigError("decoder layer " + std::to_string(layer) + " out of range");
    DecoderTrace<float> trace;
    trace.layer = layer;
    {
        NoGradScope<float> no_grad;
        model(model_input(images), ForwardMode{false, nullptr}, &trace);
    }
    const std::size_t q = query_row * dc.query_cols + query_col;
    const std::size_t M = trace.weights.dim(1), N = trace.weights.dim(2), K = trace.weights.dim(3);
    const std::size_t H = images.dim(2), W = images.dim(3);
    const std::size_t fh = (H + 31) / 32, fw = (W + 31) / 32;
    const double sx = static_cast<double>(W) / static_cast<double>(fw);
    const double sy = static_cast<double>(H) / static_cast<double>(fh);
    auto to_image = [&](double fx, double fy) {
        return std::array<double, 2>{(fx + 0.5) * sx - 0.5, (fy + 0.5) * sy - 0.5};
    };

    AttentionExport ex;
    ex.camera_mass.assign(N, 0.0);
    ex.head_sums.assign(M, 0.0);
    std::vector<std::vector<double>> heat(N, std::vector<double>(H * W, 0.0));
    auto w = trace.weights.data();
    auto loc = trace.locations.data();
    auto ref = trace.reference.data();
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t c = 0; c < N; ++c) {
            const std::size_t rb = ((q * M + m) * N + c) * 2;
            ex.reference.push_back(to_image(ref[rb] * static_cast<double>(fw - 1), ref[rb + 1] * static_cast<double>(fh - 1)));
            for (std::size_t k = 0; k < K; ++k) {
                const std::size_t i = ((q * M + m) * N + c) * K + k;
                const auto p = to_image(loc[i * 2], loc[i * 2 + 1]);
                const double a = w[i];
                ex.rows.push_back({c, m, k, p[0], p[1], a});
                ex.camera_mass[c] += a;
                ex.head_sums[m] += a;
                // bilinear splat
                const double x0 = std::floor(p[0]), y0 = std::floor(p[1]);
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const double xx = x0 + dx, yy = y0 + dy;
                        if (xx < 0 || yy < 0 || xx >= static_cast<double>(W) || yy >= static_cast<double>(H)) continue;
                        const double f = (1 - std::abs(p[0] - xx)) * (1 - std::abs(p[1] - yy));
                        heat[c][static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)] += a * f;
                    }
            }
        }
    for (std::size_t c = 0; c < N; ++c) {
        // spread each splat over a small disc so it is visible, then scale to 8 bits
        std::vector<double> blur(H * W, 0.0);
        const int rad = 3;
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const double v = heat[c][y * W + x];
                if (v == 0) continue;
                for (int dy = -rad; dy <= rad; ++dy)
                    for (int dx = -rad; dx <= rad; ++dx) {
                        const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
                        if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                        if (dx * dx + dy * dy > rad * rad) continue;
                        blur[static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)] += v;
                    }
            }
        const double peak = std::max(1e-12, *std::max_element(blur.begin(), blur.end()));
        // gray camera image underneath, heat on top
        synth::PnmImage img{W, H, 1, std::vector<std::uint8_t>(H * W)};
        auto src = images.data();
        for (std::size_t p = 0; p < H * W; ++p) {
            const double gray = (src[(c * 3 + 0) * H * W + p] + src[(c * 3 + 1) * H * W + p] + src[(c * 3 + 2) * H * W + p]) / 3.0;
            const double v = 0.35 * gray + 0.65 * blur[p] / peak;
            img.pixels[p] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
        ex.heatmaps.push_back(std::move(img));
    }
    return ex;
}

}  // namespace bevseg
