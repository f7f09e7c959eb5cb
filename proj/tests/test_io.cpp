#include "rsplat/binary.hpp"
#include "rsplat/io.hpp"
#include "fixtures.hpp"
#include "test_helpers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace rsplat;
using rsplat::testing::temp_dir;
using rsplat::testing::tiny_config;
using rsplat::testing::tiny_dataset;
namespace fs = std::filesystem;

namespace {

std::string error_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

TrainState trained_state(int steps) {
    const auto& data = tiny_dataset();
    TrainConfig cfg = tiny_config();
    cfg.total_iters = steps;
    cfg.densify_start_iter = std::min(cfg.densify_start_iter, steps);
    cfg.densify_end_iter = std::min(cfg.densify_end_iter, steps);
    cfg.prune_start_iter = std::min(cfg.prune_start_iter, steps);
    cfg.opacity_reset_start_iter = std::min(cfg.opacity_reset_start_iter, steps);
    TrainState st = init_state(data, cfg, AblationFlags::full());
    run_training(st, data, prepare_views(data, cfg));
    return st;
}

}  // namespace

TEST(Png, RoundTripQuantizesToEightBits) {
    const auto dir = temp_dir("png");
    Rng rng(1);
    const ImageBuffer img = rsplat::testing::random_image(13, 7, rng);
    write_png((dir / "a.png").string(), img);
    const ImageBuffer back = read_png((dir / "a.png").string());
    ASSERT_EQ(back.width, 13);
    ASSERT_EQ(back.height, 7);
    for (std::size_t i = 0; i < img.values.size(); ++i) EXPECT_NEAR(back.values[i], img.values[i], 0.5 / 255 + 1e-12);

    TransientMask m(5, 3, 0.0);
    m.values[4] = 1.0;
    m.values[7] = 0.5;
    write_mask_png((dir / "m.png").string(), m);
    const TransientMask mb = read_mask_png((dir / "m.png").string());
    EXPECT_EQ(mb.values[4], 1.0);
    EXPECT_EQ(mb.values[0], 0.0);
    EXPECT_NEAR(mb.values[7], 128.0 / 255.0, 1e-15);
    EXPECT_THROW(read_png((dir / "missing.png").string()), IoError);
}

TEST(Dataset, RoundTripPreservesCamerasImagesAndMasks) {
    const auto dir = temp_dir("dataset_rt");
    const auto& data = tiny_dataset();
    write_dataset(dir.string(), data);
    const DatasetBundle back = read_dataset(dir.string());
    EXPECT_EQ(last_reorthonormalized_count(), 0u);
    ASSERT_EQ(back.train.size(), data.train.size());
    ASSERT_EQ(back.test.size(), data.test.size());
    for (std::size_t i = 0; i < data.train.size(); ++i) {
        const auto& a = data.train[i].camera;
        const auto& b = back.train[i].camera;
        EXPECT_EQ(back.train[i].camera_id, data.train[i].camera_id);
        EXPECT_LT((a.rotation - b.rotation).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_LT((a.translation - b.translation).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_NEAR(a.fx, b.fx, 1e-9);
        EXPECT_EQ(back.train[i].gt_mask, data.train[i].gt_mask);
        for (std::size_t k = 0; k < data.train[i].image.values.size(); ++k)
            ASSERT_NEAR(back.train[i].image.values[k], data.train[i].image.values[k], 0.5 / 255 + 1e-12);
    }
    EXPECT_EQ(back.test[0].camera_id, data.test[0].camera_id);
    ASSERT_EQ(back.points.size(), data.points.size());
    EXPECT_LT((back.points[3].position - data.points[3].position).norm(), 1e-9);
}

TEST(Dataset, MissingCamerasFileIsNamed) {
    const auto dir = temp_dir("dataset_missing");
    write_dataset(dir.string(), tiny_dataset());
    fs::remove(dir / "cameras.txt");
    const std::string msg = error_of([&] { read_dataset(dir.string()); });
    EXPECT_NE(msg.find("cameras.txt"), std::string::npos) << msg;
    EXPECT_THROW(read_dataset(dir.string()), IoError);
}

TEST(Dataset, WrongMaskDimensionsNameTheView) {
    const auto dir = temp_dir("dataset_mask");
    const auto& data = tiny_dataset();
    write_dataset(dir.string(), data);
    write_mask_png((dir / "train_mask" / "0003.png").string(), TransientMask(32, 64, 1.0));
    EXPECT_THROW(read_dataset(dir.string()), ShapeError);
    const std::string msg = error_of([&] { read_dataset(dir.string()); });
    EXPECT_NE(msg.find("view 3"), std::string::npos) << msg;
}

TEST(Dataset, MalformedCameraLineCitesLineNumber) {
    const auto dir = temp_dir("dataset_line");
    write_dataset(dir.string(), tiny_dataset());
    std::string text = read_text_file((dir / "cameras.txt").string());
    std::vector<std::string> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        lines.push_back(text.substr(pos, nl - pos));
        pos = nl == std::string::npos ? text.size() : nl + 1;
    }
    // Break the third non-comment line.
    int seen = 0;
    std::size_t target = 0;
    for (std::size_t i = 0; i < lines.size(); ++i)
        if (!lines[i].empty() && lines[i][0] != '#' && ++seen == 3) target = i;
    lines[target] = "2 1 1";
    std::string out;
    for (const auto& l : lines) out += l + "\n";
    write_text_file((dir / "cameras.txt").string(), out);
    const std::string msg = error_of([&] { read_dataset(dir.string()); });
    EXPECT_NE(msg.find("cameras.txt:" + std::to_string(target + 1)), std::string::npos) << msg;
}

TEST(Dataset, DriftingRotationIsReorthonormalized) {
    const auto dir = temp_dir("dataset_drift");
    DatasetBundle data = tiny_dataset();
    data.train[1].camera.rotation(0, 0) += 1e-4;
    write_dataset(dir.string(), data);
    const DatasetBundle back = read_dataset(dir.string());
    EXPECT_EQ(last_reorthonormalized_count(), 1u);
    const Mat3& r = back.train[1].camera.rotation;
    EXPECT_LT((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Checkpoint, ByteIdenticalReserialization) {
    const TrainState st = trained_state(50);
    const auto bytes = serialize_checkpoint(st);
    const TrainState back = deserialize_checkpoint(bytes);
    EXPECT_TRUE(back == st);
    EXPECT_EQ(serialize_checkpoint(back), bytes);

    const auto dir = temp_dir("ckpt");
    save_checkpoint(st, (dir / "c.rspl").string());
    EXPECT_EQ(binary::read_file((dir / "c.rspl").string()), bytes);
    EXPECT_TRUE(load_checkpoint((dir / "c.rspl").string()) == st);
}

TEST(Checkpoint, HeaderLayout) {
    const auto bytes = serialize_checkpoint(trained_state(1));
    ASSERT_GT(bytes.size(), 8u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "RSPL");
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[5], 0);
    EXPECT_EQ(bytes[6], 0);
    EXPECT_EQ(bytes[7], 0);
}

TEST(Checkpoint, RejectsBadMagicVersionAndTruncation) {
    const auto bytes = serialize_checkpoint(trained_state(3));
    auto bad = bytes;
    bad[1] = 'Q';
    EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
    bad = bytes;
    bad[4] = 2;
    EXPECT_THROW(deserialize_checkpoint(bad), VersionError);
    const std::string msg = error_of([&] { deserialize_checkpoint(bad); });
    EXPECT_NE(msg.find("version 2"), std::string::npos) << msg;
    for (std::size_t cut : {std::size_t{2}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
        bad.assign(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        EXPECT_THROW(deserialize_checkpoint(bad), FormatError) << "cut at " << cut;
    }
    bad = bytes;
    bad.push_back(0);
    EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
    EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.rspl"), IoError);
}

TEST(ConfigFile, EmptyTextGivesDefaults) {
    const TrainConfig cfg = parse_config_text("");
    EXPECT_EQ(cfg, TrainConfig::defaults());
    EXPECT_EQ(cfg.lambda_reg, 2.0);
    EXPECT_EQ(cfg.lambda_dssim, 0.2);
    EXPECT_EQ(cfg.tau_u, 0.6);
    EXPECT_EQ(cfg.tau_l, 0.8);
}

TEST(ConfigFile, ParsesValuesCommentsAndScale) {
    const TrainConfig cfg = parse_config_text("# comment\nlambda_cos = 0.25  # trailing\n\nseed=42\nbackground_color = 1 0.5 0\n");
    EXPECT_EQ(cfg.lambda_cos, 0.25);
    EXPECT_EQ(cfg.seed, 42u);
    EXPECT_EQ(cfg.background_color, Vec3(1, 0.5, 0));
    const TrainConfig scaled = parse_config_text("schedule_scale = 0.1\n");
    EXPECT_EQ(scaled.total_iters, 3000);
    EXPECT_EQ(scaled.densify_start_iter, 1000);
}

TEST(ConfigFile, InvariantViolationIsReported) {
    EXPECT_THROW(parse_config_text("tau_u = 0.9\n"), ConfigError);
    const std::string msg = error_of([] { parse_config_text("tau_u = 0.9\n", "run.cfg"); });
    EXPECT_NE(msg.find("tau_u"), std::string::npos) << msg;
}

TEST(ConfigFile, DuplicateKeyCitesBothLines) {
    const std::string msg = error_of([] { parse_config_text("lambda_cos = 0.1\n# x\nlambda_cos = 0.2\n", "a.cfg"); });
    EXPECT_NE(msg.find("1"), std::string::npos);
    EXPECT_NE(msg.find("3"), std::string::npos);
    EXPECT_NE(msg.find("duplicate"), std::string::npos) << msg;
}

TEST(ConfigFile, UnknownKeyAndBadValueCiteTheLine) {
    std::string msg = error_of([] { parse_config_text("\nbogus = 1\n", "b.cfg"); });
    EXPECT_NE(msg.find("b.cfg:2"), std::string::npos) << msg;
    msg = error_of([] { parse_config_text("lambda_cos = 0.1\ntotal_iters = many\n", "c.cfg"); });
    EXPECT_NE(msg.find("c.cfg:2"), std::string::npos) << msg;
    EXPECT_THROW(parse_config_text("no equals sign\n"), ConfigError);
    EXPECT_THROW(parse_config("/nonexistent/x.cfg"), IoError);
}

TEST(ConfigFile, FormatRoundTrips) {
    TrainConfig cfg = TrainConfig::defaults(0.05);
    cfg.lambda_cos = 0.123456789012345;
    cfg.seed = 987654321987654321ull;
    cfg.background_color = Vec3(0.1, 0.2, 0.3);
    EXPECT_EQ(parse_config_text(format_config(cfg)), cfg);
}
