// SPDX-License-Identifier: Apache-2.0
#include "prtg/io.hpp"

#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "test_models.hpp"

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("prtg_io_" + std::to_string(std::random_device{}()) + "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

prtg::Image random_image(std::mt19937_64& rng, int w, int h, float lo = 0.0f, float hi = 4.0f) {
    std::uniform_real_distribution<float> u(lo, hi);
    prtg::Image img(w, h);
    for (auto& v : img.values()) v = u(rng);
    return img;
}

std::uint64_t format_offset(const std::vector<unsigned char>& bytes) {
    try {
        (void)prtg::decode_model(bytes);
    } catch (const prtg::FormatError& e) {
        return e.offset();
    }
    ADD_FAILURE() << "decode_model accepted malformed bytes";
    return 0;
}

}  // namespace

TEST(Pfm, SinglePixelLayout) {
    prtg::Image img(1, 1);
    img.at(0, 0, 0) = 1.0f;
    img.at(0, 0, 1) = 0.5f;
    img.at(0, 0, 2) = -2.0f;
    const auto bytes = prtg::encode_pfm(img);
    const std::string header = "PF\n1 1\n-1.0\n";
    ASSERT_EQ(bytes.size(), header.size() + 12);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + header.size()), header);
    EXPECT_EQ(prtg::decode_pfm(bytes), img);
}

TEST(Pfm, RowsStoredBottomUp) {
    prtg::Image img(1, 2);
    img.at(0, 0, 0) = 1.0f;  // top row
    img.at(0, 1, 0) = 2.0f;
    const auto bytes = prtg::encode_pfm(img);
    const std::size_t raster = bytes.size() - 24;
    EXPECT_EQ(prtg::detail::get_f32(bytes.data() + raster), 2.0f);
    EXPECT_EQ(prtg::detail::get_f32(bytes.data() + raster + 12), 1.0f);
    EXPECT_EQ(prtg::decode_pfm(bytes), img);
}

TEST(Pfm, RandomRoundTripThroughFile) {
    std::mt19937_64 rng(1);
    const auto img = random_image(rng, 128, 128, -10.0f, 10.0f);
    TempDir dir;
    prtg::write_pfm(img, dir.path / "a.pfm");
    EXPECT_EQ(prtg::read_pfm(dir.path / "a.pfm"), img);
}

TEST(Pfm, GreyscaleAndBigEndian) {
    std::string s = "Pf\n2 1\n1.0\n";
    std::vector<unsigned char> bytes(s.begin(), s.end());
    for (float f : {0.25f, 3.0f}) {
        const auto u = std::bit_cast<std::uint32_t>(f);
        for (int i = 3; i >= 0; --i) bytes.push_back(static_cast<unsigned char>(u >> (8 * i)));
    }
    const auto img = prtg::decode_pfm(bytes);
    EXPECT_EQ(img.at(0, 0, 1), 0.25f);
    EXPECT_EQ(img.at(1, 0, 2), 3.0f);
}

TEST(Pfm, RejectsMalformed) {
    auto bytes = prtg::encode_pfm(prtg::Image(2, 2, 1.0f));
    auto bad = bytes;
    bad[1] = 'X';
    EXPECT_THROW((void)prtg::decode_pfm(bad), prtg::FormatError);
    bad = bytes;
    bad.pop_back();
    try {
        (void)prtg::decode_pfm(bad);
        FAIL();
    } catch (const prtg::FormatError& e) {
        EXPECT_EQ(e.offset(), bad.size());
    }
    bad = bytes;
    bad.push_back(0);
    EXPECT_THROW((void)prtg::decode_pfm(bad), prtg::FormatError);
    const std::string junk = "PF\nfoo 2\n-1\n";
    EXPECT_THROW((void)prtg::decode_pfm({junk.begin(), junk.end()}), prtg::FormatError);
    EXPECT_THROW((void)prtg::read_pfm("/nonexistent/x.pfm"), prtg::IoError);
}

TEST(Png, SrgbRoundTrip) {
    for (double v : {0.0, 0.001, 0.0031308, 0.2, 0.5, 1.0}) EXPECT_NEAR(prtg::srgb_to_linear(prtg::linear_to_srgb(v)), v, 1e-12);
    EXPECT_NEAR(prtg::linear_to_srgb(0.5), 0.735356983052449, 1e-9);

    std::mt19937_64 rng(2);
    const auto img = random_image(rng, 17, 9, 0.0f, 1.0f);
    TempDir dir;
    prtg::write_image(img, dir.path / "a.png");
    const auto back = prtg::read_image(dir.path / "a.png");
    ASSERT_EQ(back.width(), 17);
    ASSERT_EQ(back.height(), 9);
    for (std::size_t i = 0; i < img.values().size(); ++i) {
        // 8-bit sRGB quantization: half a code value.
        EXPECT_NEAR(prtg::linear_to_srgb(back.values()[i]), prtg::linear_to_srgb(img.values()[i]), 0.5 / 255 + 1e-6);
    }
    EXPECT_THROW((void)prtg::read_image(dir.path / "missing.png"), prtg::IoError);
}

TEST(Model, FileSizes) {
    EXPECT_EQ(prtg::prtg_file_size(0, 9), 28u);
    EXPECT_EQ(prtg::prtg_file_size(1, 9), 408u);
    prtg::GaussianModel empty;
    empty.sh_order = 9;
    EXPECT_EQ(prtg::encode_model(empty).size(), 28u);
    std::mt19937_64 rng(3);
    EXPECT_EQ(prtg::encode_model(prtg::testing::random_model(rng, 1, 9)).size(), 408u);
}

TEST(Model, HeaderFields) {
    std::mt19937_64 rng(4);
    auto m = prtg::testing::random_model(rng, 2, 3);
    m.background = Eigen::Vector3d(0.25, 0.5, 1.0);
    const auto bytes = prtg::encode_model(m);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "PRTG");
    EXPECT_EQ(prtg::detail::get_u32(bytes.data() + 4), 1u);
    EXPECT_EQ(prtg::detail::get_u32(bytes.data() + 8), 2u);
    EXPECT_EQ(prtg::detail::get_u32(bytes.data() + 12), 3u);
    EXPECT_EQ(prtg::detail::get_f32(bytes.data() + 24), 1.0f);
    // First record: position then quaternion (w, x, y, z).
    EXPECT_EQ(prtg::detail::get_f32(bytes.data() + 28), static_cast<float>(m.gaussians[0].position.x()));
    EXPECT_EQ(prtg::detail::get_f32(bytes.data() + 40), static_cast<float>(m.gaussians[0].rotation.w()));
}

TEST(Model, ThousandGaussiansBitExact) {
    std::mt19937_64 rng(5);
    const auto model = prtg::quantize_model(prtg::testing::random_model(rng, 1000, 9, 2.0));
    const auto bytes = prtg::encode_model(model);
    TempDir dir;
    prtg::export_model(model, dir.path / "m.prtg");
    const auto back = prtg::import_model(dir.path / "m.prtg");
    EXPECT_EQ(prtg::encode_model(back), bytes);
    EXPECT_EQ(fs::file_size(dir.path / "m.prtg"), prtg::prtg_file_size(1000, 9));
    for (std::size_t k = 0; k < model.size(); ++k) {
        EXPECT_EQ(back.gaussians[k].transfer, model.gaussians[k].transfer);
        EXPECT_EQ(back.gaussians[k].position, model.gaussians[k].position);
    }
}

TEST(Model, QuantizedRenderMatches) {
    std::mt19937_64 rng(6);
    const auto model = prtg::testing::random_model(rng, 200, 5);
    const auto back = prtg::quantize_model(model);
    const auto cam = prtg::testing::front_camera(64, 64, 80.0);
    const auto light = prtg::testing::random_light(rng, 5);
    const auto a = prtg::render<float>(model, cam, light), b = prtg::render<float>(back, cam, light);
    double peak = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i) peak = std::max<double>(peak, std::abs(a.values()[i] - b.values()[i]));
    EXPECT_LT(peak, 1e-4);
}

TEST(Model, RejectsMalformed) {
    std::mt19937_64 rng(7);
    const auto bytes = prtg::encode_model(prtg::testing::random_model(rng, 3, 2));
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_EQ(format_offset(bad), 0u);
    bad = bytes;
    bad[4] = 2;
    EXPECT_EQ(format_offset(bad), 4u);
    bad = bytes;
    bad[12] = 0;
    EXPECT_EQ(format_offset(bad), 12u);
    bad = bytes;
    bad.resize(bytes.size() - 5);
    EXPECT_EQ(format_offset(bad), bad.size());
    bad = bytes;
    bad.push_back(0);
    EXPECT_EQ(format_offset(bad), bytes.size());
    bad = bytes;
    bad.resize(10);
    EXPECT_EQ(format_offset(bad), 10u);
    // Opacity of the first Gaussian is at 28 + 10 * 4.
    bad = bytes;
    const auto two = std::bit_cast<std::uint32_t>(2.0f);
    for (int i = 0; i < 4; ++i) bad[68 + i] = static_cast<unsigned char>(two >> (8 * i));
    EXPECT_EQ(format_offset(bad), 68u);
    EXPECT_THROW((void)prtg::import_model("/nonexistent/m.prtg"), prtg::IoError);
}

TEST(Json, SceneRoundTrip) {
    prtg::SceneSpec s;
    s.primitives.push_back({prtg::Sphere{Eigen::Vector3d(0, 0, 0.6), 0.5}, Eigen::Vector3d(0.8, 0.6, 0.4)});
    s.primitives.push_back({prtg::Plane{Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ(), 1.5}, Eigen::Vector3d::Constant(0.7)});
    s.primitives.push_back({prtg::Box{Eigen::Vector3d(1, 0, 0.2), Eigen::Vector3d(0.2, 0.3, 0.2),
                                      Eigen::Quaterniond(Eigen::AngleAxisd(0.4, Eigen::Vector3d::UnitZ()))},
                            Eigen::Vector3d::Constant(0.5)});
    const auto back = prtg::scene_from_json(prtg::Json::parse(prtg::scene_to_json(s).dump()));
    ASSERT_EQ(back.primitives.size(), 3u);
    EXPECT_EQ(prtg::scene_to_json(back), prtg::scene_to_json(s));
    EXPECT_THROW((void)prtg::scene_from_json(prtg::Json::parse(R"({"primitives":[{"type":"torus"}]})")), prtg::InputError);
}

TEST(Json, CameraForms) {
    const auto cam = prtg::Camera::look_at(Eigen::Vector3d(1, 2, 3), Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ(), 64, 48, 50.0);
    const auto back = prtg::camera_from_json(prtg::camera_to_json(cam));
    EXPECT_TRUE(back.rotation.isApprox(cam.rotation, 1e-12));
    EXPECT_TRUE(back.translation.isApprox(cam.translation, 1e-12));
    EXPECT_EQ(back.width, 64);
    EXPECT_EQ(back.height, 48);
    const auto j = prtg::Json::parse(R"({"eye":[1,2,3],"target":[0,0,0],"up":[0,0,1],"width":64,"height":48,"focal":50})");
    const auto la = prtg::camera_from_json(j);
    EXPECT_TRUE(la.rotation.isApprox(cam.rotation, 1e-12));
    EXPECT_NEAR(la.fx, 50.0, 0.0);
    auto skew = prtg::camera_to_json(cam);
    skew["world_to_camera"][0] = 3.0;
    EXPECT_THROW((void)prtg::camera_from_json(skew), prtg::InputError);
}

TEST(Dataset, SaveLoadRoundTrip) {
    prtg::SceneSpec s;
    s.primitives.push_back({prtg::Sphere{Eigen::Vector3d(0, 0, 0.6), 0.5}, Eigen::Vector3d(0.8, 0.6, 0.4)});
    prtg::SynthConfig cfg;
    cfg.cameras = 2;
    cfg.lights = 3;
    cfg.resolution = 12;
    const auto ds = prtg::synth_dataset(s, cfg);
    TempDir dir;
    prtg::save_dataset(ds, dir.path);
    EXPECT_TRUE(fs::exists(dir.path / "img_001_002.pfm"));
    const auto back = prtg::load_dataset(dir.path);
    EXPECT_EQ(back.images, ds.images);
    ASSERT_EQ(back.lights.size(), 3u);
    EXPECT_TRUE(back.lights[2].direction.isApprox(ds.lights[2].direction, 1e-12));
    EXPECT_TRUE(back.cameras[1].rotation.isApprox(ds.cameras[1].rotation, 1e-12));
    ASSERT_TRUE(back.scene);
    fs::remove(dir.path / "img_000_001.pfm");
    EXPECT_THROW((void)prtg::load_dataset(dir.path), prtg::IoError);
    EXPECT_NO_THROW((void)prtg::load_dataset(dir.path, true));
    {
        std::ofstream f(dir.path / "meta.json");
        f << "{not json";
    }
    EXPECT_THROW((void)prtg::load_dataset(dir.path), prtg::FormatError);
}

TEST(Report, JsonAndCsv) {
    prtg::FitReport r;
    r.loss_curve = {0.5, 0.25};
    r.psnr_curve = {20.0, 25.0};
    r.train_psnr = 30.0;
    r.gaussian_count = 7;
    const auto j = prtg::report_to_json(r);
    EXPECT_EQ(j["gaussian_count"], 7);
    EXPECT_TRUE(j["heldout"]["psnr"].is_null());
    EXPECT_EQ(j["config"]["backend"], "lstsq");
    ASSERT_EQ(j["loss_curve"].size(), 2u);
    EXPECT_EQ(j["loss_curve"][1]["loss"], 0.25);
    EXPECT_EQ(prtg::loss_curve_csv(r), "iteration,loss,psnr\n0,0.5,20\n1,0.25,25\n");
}
