#include "test_util.hpp"

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "bevseg/trainer.hpp"

using namespace bevseg;
using namespace bevseg::testing;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("bevseg_test_trainer_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

RunConfig tiny_config() {
    return parse_config(
        "data.image_height = 64\n"
        "data.image_width = 96\n"
        "data.scenes = 3\n"
        "bev.height = 32\n"
        "bev.width = 16\n"
        "bev.line_width_px = 3\n"
        "query.rows = 8\n"
        "query.cols = 4\n"
        "backbone.widths = 8,8,16\n"
        "backbone.blocks = 1\n"
        "model.dim = 16\n"
        "model.ffn_dim = 32\n"
        "train.epochs = 4\n"
        "train.lr_drop_epoch = 2\n"
        "train.eval_every = 2\n"
        "train.checkpoint_every = 2\n"
        "augment.enabled = true\n");
}

std::vector<float> flat_params(const Model& m) {
    std::vector<float> out;
    for (const auto& p : m.parameters()) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

std::vector<std::string> read_lines(const fs::path& p) {
    std::ifstream f(p);
    std::vector<std::string> lines;
    for (std::string l; std::getline(f, l);) lines.push_back(l);
    return lines;
}

AugmentConfig flip_only() {
    AugmentConfig a;
    a.enabled = true;
    a.brightness = a.contrast = a.hue = 0;
    a.swap_channels = false;
    return a;
}

}  // namespace

TEST(Trainer, ResumeMatchesUninterruptedRun) {
    const auto cfg = tiny_config();
    const auto data = synthesize_dataset(cfg);
    auto dir = temp_dir("resume");

    Trainer full(cfg, data);
    TrainOptions o10;
    o10.stop_at_step = 10;
    const auto r10 = full.train(o10);
    ASSERT_EQ(r10.final_step, 10u);

    Trainer first(cfg, data);
    TrainOptions o5;
    o5.run_dir = dir;
    o5.stop_at_step = 5;
    first.train(o5);
    Trainer second(cfg, data);
    TrainOptions rest;
    rest.run_dir = dir;
    rest.resume_from = (dir / "checkpoints" / "last.bin").string();
    rest.stop_at_step = 10;
    const auto r = second.train(rest);
    EXPECT_EQ(r.first_step, 5u);
    EXPECT_EQ(r.final_step, 10u);

    const auto a = flat_params(full.model()), b = flat_params(second.model());
    ASSERT_EQ(a.size(), b.size());
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(double(a[i]) - b[i]));
    EXPECT_LT(worst, 1e-6);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(r.losses[i], r10.losses[5 + i]);
    EXPECT_EQ(r.avg_losses.back(), r10.avg_losses.back());
    // steps.csv continues across the resume
    EXPECT_EQ(read_lines(dir / "steps.csv").size(), 11u);
    fs::remove_all(dir);
}

TEST(Trainer, SameSeedGivesBitwiseIdenticalRuns) {
    const auto cfg = tiny_config();
    const auto data = synthesize_dataset(cfg);
    Trainer a(cfg, data), b(cfg, data);
    TrainOptions o;
    o.stop_at_step = 6;
    const auto ra = a.train(o), rb = b.train(o);
    EXPECT_EQ(ra.losses, rb.losses);
    EXPECT_EQ(flat_params(a.model()), flat_params(b.model()));
    EXPECT_EQ(evaluate(a.model(), data).to_key_values(), evaluate(b.model(), data).to_key_values());

    auto other = cfg;
    other.seed = cfg.seed + 1;
    Trainer c(other, data);
    EXPECT_NE(c.train(o).losses, ra.losses);
}

TEST(Trainer, LearningRateDropsAtConfiguredEpoch) {
    const auto cfg = tiny_config();
    const auto data = synthesize_dataset(cfg);
    Trainer t(cfg, data);
    EXPECT_EQ(t.steps_per_epoch(), 3u);
    EXPECT_EQ(t.total_steps(), 12u);
    for (std::uint64_t s = 0; s < 12; ++s) EXPECT_EQ(t.lr_factor(s), s < 6 ? 1.0 : 0.1) << s;

    auto dir = temp_dir("lr");
    TrainOptions o;
    o.run_dir = dir;
    t.train(o);
    const auto lines = read_lines(dir / "steps.csv");
    ASSERT_EQ(lines.size(), 13u);
    EXPECT_EQ(lines[0], "step,epoch,loss,loss_avg,lr_backbone,lr_transformer");
    EXPECT_NE(lines[6].find(",0.001,0.001"), std::string::npos) << lines[6];
    EXPECT_NE(lines[7].find(",0.0001,0.0001"), std::string::npos) << lines[7];
    fs::remove_all(dir);
}

TEST(Trainer, PaperScheduleDropsTransformerLrTenfold) {
    auto cfg = paper_surround_preset();
    EXPECT_DOUBLE_EQ(cfg.optim.lr_transformer * cfg.optim.lr_drop_factor, 1e-5);
    EXPECT_DOUBLE_EQ(cfg.optim.lr_backbone * cfg.optim.lr_drop_factor, 1e-6);
}

TEST(Trainer, EpochOrderIsASeededPermutation) {
    const auto cfg = tiny_config();
    const auto data = synthesize_dataset(cfg);
    Trainer t(cfg, data);
    for (std::uint64_t e = 0; e < 5; ++e) {
        auto o = t.epoch_order(e);
        EXPECT_EQ(o, t.epoch_order(e));
        std::sort(o.begin(), o.end());
        EXPECT_EQ(o, (std::vector<std::size_t>{0, 1, 2}));
    }
}

TEST(Trainer, RunDirectoryContents) {
    const auto cfg = tiny_config();
    const auto data = synthesize_dataset(cfg);
    auto dir = temp_dir("run");
    Trainer t(cfg, data);
    TrainOptions o;
    o.run_dir = dir;
    const auto res = t.train(o);
    EXPECT_TRUE(parse_config(synth::detail::read_file(dir / "config.txt")) == cfg);
    for (const char* f : {"epoch_2.bin", "epoch_4.bin", "best.bin", "last.bin"})
        EXPECT_TRUE(fs::is_regular_file(dir / "checkpoints" / f)) << f;
    EXPECT_FALSE(fs::exists(dir / "checkpoints" / "epoch_1.bin"));
    const auto log = read_lines(dir / "log.csv");
    ASSERT_EQ(log.size(), 5u);
    EXPECT_EQ(log[0],
              "epoch,step,loss,iou.background,iou.divider,iou.ped_crossing,iou.boundary,all_merged,all_mean");
    EXPECT_EQ(log[1].substr(0, 4), "1,3,");
    EXPECT_NE(log[1].find(",,,,,,"), std::string::npos);  // no eval in epoch 1
    EXPECT_EQ(log[2].find(",,"), std::string::npos);
    ASSERT_EQ(res.epochs.size(), 4u);
    EXPECT_TRUE(res.epochs[1].report.has_value());
    EXPECT_FALSE(res.epochs[2].report.has_value());

    // the saved last checkpoint reproduces the in-memory model
    const Model loaded = load_model(cfg, (dir / "checkpoints" / "last.bin").string());
    EXPECT_TRUE(bitwise_equal(predict_logits(loaded, data.samples[0].images),
                              predict_logits(t.model(), data.samples[0].images)));
    fs::remove_all(dir);
}

TEST(Trainer, NonFiniteLossAborts) {
    const auto cfg = tiny_config();
    auto data = synthesize_dataset(cfg);
    for (auto& s : data.samples) s.images.data()[0] = std::numeric_limits<float>::quiet_NaN();
    Trainer t(cfg, data);
    EXPECT_THROW(t.train(), NumericalError);
}

TEST(Trainer, DatasetOnDiskMatchesSynthesizedDataset) {
    const auto cfg = tiny_config();
    auto dir = temp_dir("data");
    synth::write_dataset(dir, cfg.data.first_seed, cfg.data.scenes, make_rig(cfg), cfg.bev, make_scene_options(cfg));
    const auto disk = load_dataset(dir, cfg);
    const auto mem = synthesize_dataset(cfg);
    ASSERT_EQ(disk.samples.size(), 3u);
    EXPECT_EQ(disk.class_names, mem.class_names);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_TRUE(bitwise_equal(disk.samples[i].images, mem.samples[i].images));
        EXPECT_EQ(disk.samples[i].gt, mem.samples[i].gt);
    }
    auto two = cfg;
    two.data.classes = 2;
    two.loss_weights = {1, 15};
    EXPECT_THROW(load_dataset(dir, two), ConfigError);
    fs::remove_all(dir);
}

TEST(Augment, FlipMirrorsImagesAndGtTogether) {
    const auto cfg = tiny_config();
    const auto s = synthesize_dataset(cfg).samples[0];
    const std::size_t h = 64, w = 96, gw = 16;
    int flipped = 0, kept = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const auto out = augment_sample(s, flip_only(), rng);
        const bool gt_flipped = out.gt != s.gt;
        for (std::size_t r = 0; r < s.gt.height; ++r)
            for (std::size_t c = 0; c < gw; ++c)
                ASSERT_EQ(out.gt.at(r, c), s.gt.at(r, gt_flipped ? gw - 1 - c : c));
        double worst = 0;
        for (std::size_t p = 0; p < 2 * 3 * h; ++p)
            for (std::size_t c = 0; c < w; ++c)
                worst = std::max(worst, double(std::abs(out.images[p * w + c] - s.images[p * w + (gt_flipped ? w - 1 - c : c)])));
        EXPECT_LT(worst, 5e-3);  // colour-space round trip only
        (gt_flipped ? flipped : kept)++;
    }
    EXPECT_GT(flipped, 0);
    EXPECT_GT(kept, 0);
}

TEST(Augment, FlipMovesCamerasToTheirMirrorSlots) {
    Tensor<float> img({3, 3, 2, 2});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 12; ++i) img[c * 12 + i] = 0.1f + 0.3f * float(c);
    synth::SceneSample s{img, ClassRaster(2, 2), 0};
    for (std::uint64_t seed = 0;; ++seed) {
        Rng rng(seed);
        auto out = augment_sample(s, flip_only(), rng);
        if (std::abs(out.images[12] - img[12]) < 1e-3) continue;  // not flipped
        EXPECT_NEAR(out.images[0], img[0], 5e-3);
        EXPECT_NEAR(out.images[12], img[24], 5e-3);
        EXPECT_NEAR(out.images[24], img[12], 5e-3);
        break;
    }
}

TEST(Augment, PhotometricChangeIsSharedAndSeeded) {
    const auto cfg = tiny_config();
    auto s = synthesize_dataset(cfg).samples[0];
    // two identical cameras stay identical
    std::copy_n(s.images.data().begin(), 3 * 64 * 96, s.images.data().begin() + 3 * 64 * 96);
    AugmentConfig a;
    a.enabled = true;
    a.flip = false;
    Rng r1(3), r2(3);
    const auto x = augment_sample(s, a, r1), y = augment_sample(s, a, r2);
    EXPECT_TRUE(bitwise_equal(x.images, y.images));
    EXPECT_TRUE(bitwise_equal(slice(x.images, 0, 1), slice(x.images, 1, 2)));
    EXPECT_FALSE(bitwise_equal(x.images, s.images));
    EXPECT_EQ(x.gt, s.gt);
    for (float v : x.images.values()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(Attention, FreshModelExportsUniformWeights) {
    const auto cfg = tiny_config();
    const auto data = synthesize_dataset(cfg);
    Rng init(mix_seed(cfg.seed, kInitSalt));
    const Model model(cfg.model, init);
    const auto ex = export_attention(model, data.samples[0].images, 3, 2, 1);
    const std::size_t M = 2, Nc = 2, K = 4;
    EXPECT_EQ(ex.rows.size(), M * Nc * K);
    for (const auto& r : ex.rows) EXPECT_NEAR(r.weight, 1.0 / double(Nc * K), 1e-6);
    for (double s : ex.head_sums) EXPECT_NEAR(s, 1.0, 1e-6);
    ASSERT_EQ(ex.heatmaps.size(), Nc);
    EXPECT_EQ(ex.heatmaps[0].width, 96u);
    EXPECT_EQ(ex.heatmaps[0].height, 64u);
    EXPECT_EQ(ex.reference.size(), M * Nc);
    const auto csv = ex.to_csv();
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), long(M * Nc * K + 1));
    EXPECT_THROW(export_attention(model, data.samples[0].images, 8, 0, 0), ConfigError);
    EXPECT_THROW(export_attention(model, data.samples[0].images, 0, 4, 0), ConfigError);
    EXPECT_THROW(export_attention(model, data.samples[0].images, 0, 0, 2), ConfigError);

    auto std_cfg = cfg;
    std_cfg.model.decoder.attention = AttentionKind::standard;
    std_cfg.validate();
    Rng r2(1);
    EXPECT_THROW(export_attention(Model(std_cfg.model, r2), data.samples[0].images, 0, 0, 0), ConfigError);
}

TEST(Evaluate, RandomWeightsScoreNearZeroOnStructure) {
    auto cfg = desk_preset();
    cfg.data.scenes = 4;
    cfg.validate();
    const auto data = synthesize_dataset(cfg);
    Rng init(mix_seed(cfg.seed, kInitSalt));
    const Model model(cfg.model, init);
    const auto report = evaluate(model, data);
    for (std::size_t k = 1; k < 4; ++k) EXPECT_LT(report.classes[k].iou, 0.05) << report.classes[k].name;
    EXPECT_LT(report.all_merged, 0.05);
    EXPECT_NE(report.to_table().find("All (merged)"), std::string::npos);
    EXPECT_NE(report.to_table().find("All (mean)"), std::string::npos);
}
