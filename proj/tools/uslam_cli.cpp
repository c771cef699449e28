#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "uslam/core/io.hpp"
#include "uslam/pipeline.hpp"

using namespace uslam;

namespace {

simworld::SyntheticScene scene_from_sequence(const std::string& dir) {
    return simworld::generate_scene(simworld::load_scene_config(dir + "/scene.json"));
}

int cmd_simulate(const std::string& scene_file, const std::string& out,
                 int64_t seed) {
    simworld::SceneConfig config = simworld::load_scene_config(scene_file);
    if (seed >= 0) config.seed = uint64_t(seed);
    simworld::SyntheticScene scene = simworld::generate_scene(config);
    simworld::write_sequence(scene, out);
    std::cout << "wrote " << scene.n_frames() << " frames to " << out << "\n";
    return 0;
}

int cmd_slam(const std::string& config_file, const std::string& sequence,
             const std::string& out, bool resume) {
    pipeline::PipelineConfig config = pipeline::load_config(config_file);
    simworld::SyntheticScene scene = scene_from_sequence(sequence);
    pipeline::RunReport report = pipeline::run_slam(config, scene, out, resume);
    std::printf("keyframes=%d gaussians=%llu ate_full=%.6g m psnr=%.4g dB\n",
                report.metrics.keyframes,
                static_cast<unsigned long long>(report.metrics.gaussians),
                report.metrics.ate_full, report.metrics.psnr);
    std::cout << "report: " << report.report_path << "\n";
    return 0;
}

int cmd_eval(const std::string& est_file, const std::string& gt_file,
             const std::string& renders, const std::string& gt_renders,
             const std::string& out) {
    evalkit::Trajectory est = evalkit::read_tum(est_file);
    evalkit::Trajectory gt = evalkit::read_tum(gt_file);
    double ate = evalkit::ate_rmse(est, gt);

    double psnr = 0, ssim = 0;
    int n_pairs = 0;
    if (!renders.empty() && !gt_renders.empty()) {
        for (const auto& entry : std::filesystem::directory_iterator(renders)) {
            if (entry.path().extension() != ".png") continue;
            auto gt_path = std::filesystem::path(gt_renders) / entry.path().filename();
            if (!std::filesystem::exists(gt_path)) continue;
            GridD a = io::read_png(entry.path().string());
            GridD b = io::read_png(gt_path.string());
            psnr += evalkit::psnr(a, b);
            ssim += evalkit::ssim(a, b);
            ++n_pairs;
        }
        if (n_pairs > 0) {
            psnr /= n_pairs;
            ssim /= n_pairs;
        }
    }

    std::ostream* s = &std::cout;
    std::ofstream file;
    if (!out.empty()) {
        file.open(out);
        if (!file) throw IoError("cannot write metrics: " + out);
        s = &file;
    }
    char line[256];
    std::snprintf(line, sizeof(line), "metric,value\nate_rmse,%.9g\n", ate);
    *s << line;
    if (n_pairs > 0) {
        std::snprintf(line, sizeof(line), "psnr,%.9g\nssim,%.9g\nviews,%d\n", psnr,
                      ssim, n_pairs);
        *s << line;
    }
    return 0;
}

int cmd_ablate(const std::string& config_file, const std::string& sequence,
               const std::string& toggles_csv, const std::string& out) {
    pipeline::PipelineConfig config = pipeline::load_config(config_file);
    simworld::SyntheticScene scene = scene_from_sequence(sequence);

    std::vector<std::string> toggles;
    std::string tok;
    for (char ch : toggles_csv) {
        if (ch == ',') {
            if (!tok.empty()) toggles.push_back(tok);
            tok.clear();
        } else {
            tok.push_back(ch);
        }
    }
    if (!tok.empty()) toggles.push_back(tok);

    auto rows = pipeline::run_ablation(config, toggles, scene, out);
    std::printf("%-22s %-7s %-12s %-10s %-8s\n", "variant", "failed", "ate_full",
                "psnr", "auroc");
    for (const auto& r : rows)
        std::printf("%-22s %-7s %-12.6g %-10.4g %-8.4g\n", r.name.c_str(),
                    r.failed ? "yes" : "no", r.metrics.ate_full, r.metrics.psnr,
                    r.metrics.auroc);
    return 0;
}

int cmd_render(const std::string& map_file, const std::string& poses_file,
               const std::string& out, const std::string& scene_file, double scale) {
    splat::GaussianMap map = splat::load_map(map_file);
    evalkit::Trajectory poses = evalkit::read_tum(poses_file);
    geom::CameraIntrinsics K{160.0, 160.0, 80.0, 60.0, 160, 120};
    if (!scene_file.empty()) K = simworld::load_scene_config(scene_file).intrinsics;
    K = K.scaled(scale);

    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    if (ec) throw IoError("cannot create directory: " + out);
    char name[64];
    for (size_t i = 0; i < poses.size(); ++i) {
        auto render = splat::rasterize(map, poses.poses[i], K);
        std::snprintf(name, sizeof(name), "/render_%04zu.png", i);
        io::write_png(out + name, render.color);
        std::snprintf(name, sizeof(name), "/depth_%04zu.pfm", i);
        io::write_pfm(out + name, render.depth);
    }
    std::cout << "rendered " << poses.size() << " views to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"monocular SLAM with an uncertainty-weighted Gaussian map"};
    app.require_subcommand(1);

    std::string scene_file, out_dir, config_file, sequence_dir;
    std::string est_file, gt_file, renders_dir, gt_renders_dir, eval_out;
    std::string map_file, poses_file, toggles = "a,b,d";
    int64_t seed = -1;
    bool resume = false;
    double render_scale = 1.0;

    auto* simulate = app.add_subcommand("simulate", "generate a synthetic sequence");
    simulate->add_option("--scene", scene_file, "scene config JSON")->required();
    simulate->add_option("--out", out_dir, "output directory")->required();
    simulate->add_option("--seed", seed, "override the scene seed");

    auto* slam = app.add_subcommand("slam", "run the full pipeline");
    slam->add_option("--config", config_file, "pipeline config JSON")->required();
    slam->add_option("--sequence", sequence_dir, "sequence directory")->required();
    slam->add_option("--out", out_dir, "output directory")->required();
    slam->add_flag("--resume", resume, "resume from the post-BA checkpoint");

    auto* eval = app.add_subcommand("eval", "trajectory and render metrics");
    eval->add_option("--est", est_file, "estimated trajectory (TUM)")->required();
    eval->add_option("--gt", gt_file, "ground-truth trajectory (TUM)")->required();
    eval->add_option("--renders", renders_dir, "estimated renders directory");
    eval->add_option("--gt-renders", gt_renders_dir, "reference renders directory");
    eval->add_option("--out", eval_out, "metrics CSV path (default stdout)");

    auto* ablate = app.add_subcommand("ablate", "side-by-side toggle study");
    ablate->add_option("--config", config_file, "pipeline config JSON")->required();
    ablate->add_option("--sequence", sequence_dir, "sequence directory")->required();
    ablate->add_option("--toggles", toggles, "comma-separated letters (a,b,d)");
    ablate->add_option("--out", out_dir, "output directory")->required();

    auto* render = app.add_subcommand("render", "offline view synthesis");
    render->add_option("--map", map_file, "Gaussian map file")->required();
    render->add_option("--poses", poses_file, "camera trajectory (TUM)")->required();
    render->add_option("--out", out_dir, "output directory")->required();
    render->add_option("--scene", scene_file, "scene config for the intrinsics");
    render->add_option("--scale", render_scale, "intrinsics scale factor");

    try {
        app.parse(argc, argv);
        if (simulate->parsed()) return cmd_simulate(scene_file, out_dir, seed);
        if (slam->parsed()) return cmd_slam(config_file, sequence_dir, out_dir, resume);
        if (eval->parsed())
            return cmd_eval(est_file, gt_file, renders_dir, gt_renders_dir, eval_out);
        if (ablate->parsed())
            return cmd_ablate(config_file, sequence_dir, toggles, out_dir);
        if (render->parsed())
            return cmd_render(map_file, poses_file, out_dir, scene_file, render_scale);
        return 2;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const InvalidConfig& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const SingularSystem& e) {
        std::cerr << "tracking failure: " << e.what() << "\n";
        return 3;
    } catch (const DisconnectedGraph& e) {
        std::cerr << "tracking failure: " << e.what() << "\n";
        return 3;
    } catch (const InsufficientFrames& e) {
        std::cerr << "tracking failure: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
