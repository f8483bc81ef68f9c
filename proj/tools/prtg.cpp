// SPDX-License-Identifier: Apache-2.0
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "prtg/io.hpp"
#include "prtg/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using prtg::InputError;

Eigen::Vector3d parse_vec3(const std::string& text, const char* what) {
    const auto fail = [&] { return InputError(std::string(what) + ": expected x,y,z but got '" + text + "'"); };
    std::vector<std::string> parts;
    std::stringstream in(text);
    for (std::string part; std::getline(in, part, ',');) parts.push_back(part);
    if (parts.size() != 3 || text.back() == ',') throw fail();
    Eigen::Vector3d v;
    for (int i = 0; i < 3; ++i) {
        const std::string& p = parts[static_cast<std::size_t>(i)];
        try {
            std::size_t used = 0;
            v[i] = std::stod(p, &used);
            if (used != p.size()) throw fail();
        } catch (const std::logic_error&) {
            throw fail();
        }
    }
    return v;
}

prtg::SceneSpec load_scene(const std::string& path) { return prtg::scene_from_json(prtg::read_json_file(path)); }

/// A camera index into --data, an inline JSON object, or a JSON file.
prtg::Camera resolve_camera(const std::string& arg, const std::string& data_dir) {
    int index = 0;
    const auto [end, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), index);
    if (ec == std::errc() && end == arg.data() + arg.size()) {
        if (data_dir.empty()) throw InputError("--camera " + arg + " is an index; it needs --data");
        const auto ds = prtg::load_dataset(data_dir, true);
        if (index < 0 || static_cast<std::size_t>(index) >= ds.cameras.size()) {
            throw InputError("--camera index " + arg + " out of range");
        }
        return ds.cameras[static_cast<std::size_t>(index)];
    }
    if (!arg.empty() && arg.front() == '{') {
        try {
            return prtg::camera_from_json(prtg::Json::parse(arg));
        } catch (const prtg::Json::parse_error& e) {
            throw prtg::FormatError(std::string("--camera: ") + e.what(), e.byte);
        }
    }
    return prtg::camera_from_json(prtg::read_json_file(arg));
}

std::vector<int> iota(std::size_t n) {
    std::vector<int> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<int>(i);
    return v;
}

void write_text(const std::string& text, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw prtg::IoError("cannot write '" + path.string() + "'");
    out << text;
}

prtg::Json eval_json(const prtg::EvalResult& e) {
    return {{"psnr", prtg::detail::number_or_null(e.psnr)},
            {"ssim", prtg::detail::number_or_null(e.ssim)},
            {"loss", prtg::detail::number_or_null(e.loss)},
            {"pairs", e.pairs}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prtg: relightable Gaussian splatting with precomputed radiance transfer"};
    app.require_subcommand(1);

    struct {
        std::string scene, out, intensity = "1,1,1";
        int cams = 25, lights = 200, res = 128;
    } synth;
    auto* synth_cmd = app.add_subcommand("synth", "Ray-trace an OLAT dataset of a scene");
    synth_cmd->add_option("--scene", synth.scene, "Scene JSON")->required();
    synth_cmd->add_option("--cams", synth.cams, "Number of cameras")->capture_default_str();
    synth_cmd->add_option("--lights", synth.lights, "Number of directional lights")->capture_default_str();
    synth_cmd->add_option("--res", synth.res, "Image resolution (square)")->capture_default_str();
    synth_cmd->add_option("--intensity", synth.intensity, "Light rgb intensity")->capture_default_str();
    synth_cmd->add_option("--out", synth.out, "Dataset directory")->required();

    struct {
        std::string data, out, report, csv, init = "surface", points, backend = "lstsq";
        prtg::FitConfig cfg;
        std::size_t gaussians = 10000;
        int refine_iters = 200;
        prtg::InitConfig init_defaults;
    } fit;
    auto* fit_cmd = app.add_subcommand("fit", "Initialize Gaussians and fit transfer to an OLAT dataset");
    fit_cmd->add_option("--data", fit.data, "Dataset directory")->required();
    fit_cmd->add_option("--order", fit.cfg.sh_order, "SH order")->capture_default_str();
    fit_cmd->add_option("--lambda", fit.cfg.lambda, "D-SSIM weight")->capture_default_str();
    fit_cmd->add_option("--backend", fit.backend, "gradient or lstsq")
        ->check(CLI::IsMember({"gradient", "lstsq"}))
        ->capture_default_str();
    fit_cmd->add_option("--iters", fit.cfg.iterations, "Adam iterations (gradient backend)")->capture_default_str();
    fit_cmd->add_option("--init", fit.init, "Geometry source: surface, points or cube")
        ->check(CLI::IsMember({"surface", "points", "cube"}))
        ->capture_default_str();
    fit_cmd->add_option("--points", fit.points, "Point cloud file for --init points");
    fit_cmd->add_option("--gaussians", fit.gaussians, "Gaussian count for surface and cube init")->capture_default_str();
    fit_cmd->add_option("--refine-iters", fit.refine_iters, "Photometric refinement iterations")->capture_default_str();
    fit_cmd->add_option("--init-scale", fit.init_defaults.scale_factor, "Multiplier on nearest-neighbour scales")
        ->capture_default_str();
    fit_cmd->add_option("--init-flatten", fit.init_defaults.normal_flatten, "Scale multiplier along known normals")
        ->capture_default_str();
    fit_cmd->add_option("--heldout", fit.cfg.heldout_fraction, "Held-out fraction of cameras and lights")
        ->capture_default_str();
    fit_cmd->add_option("--seed", fit.cfg.seed, "Random seed")->capture_default_str();
    fit_cmd->add_option("--lr-transfer", fit.cfg.lr_transfer, "Transfer learning rate")->capture_default_str();
    fit_cmd->add_option("--lr-albedo", fit.cfg.lr_albedo, "Albedo learning rate")->capture_default_str();
    fit_cmd->add_option("--batch-cameras", fit.cfg.batch_cameras, "Cameras per gradient step")->capture_default_str();
    fit_cmd->add_option("--batch-lights", fit.cfg.batch_lights, "Lights per camera per gradient step")
        ->capture_default_str();
    fit_cmd->add_flag("--refine-geometry", fit.cfg.refine_geometry, "Also optimize opacity and scale (gradient)");
    fit_cmd->add_option("--tikhonov", fit.cfg.tikhonov, "Relative ridge weight (lstsq)")->capture_default_str();
    fit_cmd->add_option("--out", fit.out, "Output .prtg model")->required();
    fit_cmd->add_option("--report", fit.report, "Output report JSON");
    fit_cmd->add_option("--csv", fit.csv, "Output loss curve CSV");

    struct {
        std::string model, camera, data, dir = "0,0,1", rgb = "1,1,1", out;
    } render;
    auto* render_cmd = app.add_subcommand("render", "Render a model under one directional light");
    render_cmd->add_option("--model", render.model, "Model .prtg")->required();
    render_cmd->add_option("--camera", render.camera, "Camera index into --data, JSON object or JSON file")->required();
    render_cmd->add_option("--data", render.data, "Dataset directory for camera indices");
    render_cmd->add_option("--light-dir", render.dir, "Direction towards the light")->capture_default_str();
    render_cmd->add_option("--light-rgb", render.rgb, "Light rgb intensity")->capture_default_str();
    render_cmd->add_option("--out", render.out, "Output .pfm or .png")->required();

    struct {
        std::string model, envmap, camera, data, out;
    } relight;
    auto* relight_cmd = app.add_subcommand("relight", "Render a model under an equirectangular environment map");
    relight_cmd->add_option("--model", relight.model, "Model .prtg")->required();
    relight_cmd->add_option("--envmap", relight.envmap, "Envmap .pfm or .png")->required();
    relight_cmd->add_option("--camera", relight.camera, "Camera index into --data, JSON object or JSON file")->required();
    relight_cmd->add_option("--data", relight.data, "Dataset directory for camera indices");
    relight_cmd->add_option("--out", relight.out, "Output .pfm or .png")->required();

    struct {
        std::string scene, point, normal;
        int order = 9, samples = 16384;
        std::uint64_t seed = prtg::kDefaultBakeSeed;
    } bake;
    auto* bake_cmd = app.add_subcommand("bake", "Print the Monte Carlo transfer vector at a surface point");
    bake_cmd->add_option("--scene", bake.scene, "Scene JSON")->required();
    bake_cmd->add_option("--order", bake.order, "SH order")->capture_default_str();
    bake_cmd->add_option("--samples", bake.samples, "Sphere samples")->capture_default_str();
    bake_cmd->add_option("--point", bake.point, "Surface point x,y,z")->required();
    bake_cmd->add_option("--normal", bake.normal, "Surface normal x,y,z")->required();
    bake_cmd->add_option("--seed", bake.seed, "Sample seed")->capture_default_str();

    struct {
        std::string scene, camera, data, dir = "0,0,1", rgb = "1,1,1", out;
        int order = 9, samples = 4096;
    } ref;
    auto* ref_cmd = app.add_subcommand("refrender", "Render the SH-truncated reference image of a scene");
    ref_cmd->add_option("--scene", ref.scene, "Scene JSON")->required();
    ref_cmd->add_option("--camera", ref.camera, "Camera index into --data, JSON object or JSON file")->required();
    ref_cmd->add_option("--data", ref.data, "Dataset directory for camera indices");
    ref_cmd->add_option("--light-dir", ref.dir, "Direction towards the light")->capture_default_str();
    ref_cmd->add_option("--light-rgb", ref.rgb, "Light rgb intensity")->capture_default_str();
    ref_cmd->add_option("--order", ref.order, "SH order")->capture_default_str();
    ref_cmd->add_option("--samples", ref.samples, "Sphere samples per pixel")->capture_default_str();
    ref_cmd->add_option("--out", ref.out, "Output .pfm or .png")->required();

    struct {
        std::string model, data, split = "heldout";
        double lambda = 0.2, heldout = 0.1;
        std::uint64_t seed = 0;
    } eval;
    auto* eval_cmd = app.add_subcommand("eval", "Print PSNR / SSIM of a model against a dataset as JSON");
    eval_cmd->add_option("--model", eval.model, "Model .prtg")->required();
    eval_cmd->add_option("--data", eval.data, "Dataset directory")->required();
    eval_cmd->add_option("--split", eval.split, "heldout, train or all")
        ->check(CLI::IsMember({"heldout", "train", "all"}))
        ->capture_default_str();
    eval_cmd->add_option("--heldout", eval.heldout, "Held-out fraction used by fit")->capture_default_str();
    eval_cmd->add_option("--seed", eval.seed, "Seed used by fit")->capture_default_str();
    eval_cmd->add_option("--lambda", eval.lambda, "D-SSIM weight for the reported loss")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth_cmd) {
            prtg::SynthConfig cfg;
            cfg.cameras = synth.cams;
            cfg.lights = synth.lights;
            cfg.resolution = synth.res;
            cfg.intensity = parse_vec3(synth.intensity, "--intensity");
            const auto ds = prtg::synth_dataset(load_scene(synth.scene), cfg);
            prtg::save_dataset(ds, synth.out);
            std::cout << "wrote " << ds.images.size() << " images to " << synth.out << "\n";
        } else if (*fit_cmd) {
            const auto ds = prtg::load_dataset(fit.data);
            fit.cfg.backend = fit.backend == "gradient" ? prtg::Backend::gradient : prtg::Backend::least_squares;
            prtg::InitConfig init = fit.init_defaults;
            init.source = fit.init == "surface"  ? prtg::InitSource::scene_surface
                          : fit.init == "points" ? prtg::InitSource::point_cloud_file
                                                 : prtg::InitSource::random_cube;
            if (init.source == prtg::InitSource::point_cloud_file && fit.points.empty()) {
                throw InputError("--init points needs --points <file>");
            }
            if (init.source != prtg::InitSource::point_cloud_file && !ds.scene) {
                throw InputError("dataset has no scene; use --init points");
            }
            init.point_cloud_path = fit.points;
            init.target_count = fit.gaussians;
            init.refine_iterations = fit.refine_iters;
            init.lambda = fit.cfg.lambda;
            const auto result = prtg::run_pipeline(ds, init, fit.cfg);
            prtg::export_model(result.model, fit.out);
            if (!fit.report.empty()) prtg::write_json_file(prtg::report_to_json(result.report), fit.report);
            if (!fit.csv.empty()) write_text(prtg::loss_curve_csv(result.report), fit.csv);
            std::cout << "gaussians " << result.model.size() << ", train PSNR " << result.report.train_psnr
                      << " dB, held-out PSNR " << result.report.heldout_psnr << " dB (" << result.report.duration_seconds
                      << " s)\n";
        } else if (*render_cmd) {
            const auto model = prtg::import_model(render.model);
            const auto cam = resolve_camera(render.camera, render.data);
            const Eigen::Vector3d dir = parse_vec3(render.dir, "--light-dir");
            if (!(dir.norm() > 0.0)) throw InputError("--light-dir must be non-zero");
            const auto light =
                prtg::project_delta_light(dir.normalized(), parse_vec3(render.rgb, "--light-rgb"), model.sh_order);
            prtg::write_image(prtg::render<float>(model, cam, light), render.out);
        } else if (*relight_cmd) {
            const auto model = prtg::import_model(relight.model);
            const auto cam = resolve_camera(relight.camera, relight.data);
            const auto light = prtg::project_envmap(prtg::read_image(relight.envmap), model.sh_order);
            prtg::write_image(prtg::render<float>(model, cam, light), relight.out);
        } else if (*bake_cmd) {
            const Eigen::Vector3d n = parse_vec3(bake.normal, "--normal");
            if (!(n.norm() > 0.0)) throw InputError("--normal must be non-zero");
            const auto t = prtg::bake_transfer(load_scene(bake.scene), parse_vec3(bake.point, "--point"), n.normalized(),
                                               bake.order, bake.samples, bake.seed);
            std::cout << prtg::Json(std::vector<double>(t.coeffs.begin(), t.coeffs.end())).dump() << "\n";
        } else if (*ref_cmd) {
            const auto scene = load_scene(ref.scene);
            const auto cam = resolve_camera(ref.camera, ref.data);
            const Eigen::Vector3d dir = parse_vec3(ref.dir, "--light-dir");
            if (!(dir.norm() > 0.0)) throw InputError("--light-dir must be non-zero");
            const auto light = prtg::project_delta_light(dir.normalized(), parse_vec3(ref.rgb, "--light-rgb"), ref.order);
            prtg::write_image(prtg::render_sh_reference(scene, cam, light, ref.order, ref.samples), ref.out);
        } else if (*eval_cmd) {
            const auto model = prtg::import_model(eval.model);
            const auto ds = prtg::load_dataset(eval.data);
            const auto split = prtg::make_split(static_cast<int>(ds.cameras.size()), static_cast<int>(ds.lights.size()),
                                                eval.heldout, eval.seed);
            std::vector<int> cams = iota(ds.cameras.size()), lights = iota(ds.lights.size());
            std::string used = "all";
            if (eval.split == "heldout" && !split.heldout_cameras.empty()) {
                cams = split.heldout_cameras;
                lights = split.heldout_lights;
                used = "heldout";
            } else if (eval.split == "train") {
                cams = split.train_cameras;
                lights = split.train_lights;
                used = "train";
            }
            const auto r = prtg::evaluate(model, ds, cams, lights, eval.lambda);
            prtg::Json out = eval_json(r);
            out["split"] = used;
            std::cout << out.dump(2) << "\n";
        }
    } catch (const prtg::NumericalError& e) {
        std::cerr << "prtg: numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "prtg: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
