// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0
//
// handsplat command-line tool.

#include <handsplat/commands.hpp>
#include <handsplat/config.hpp>
#include <handsplat/fit.hpp>
#include <handsplat/gradcheck.hpp>
#include <handsplat/synthetic.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

using namespace handsplat;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string precision;
    std::string out;
};

void add_common(CLI::App *cmd, Common &c, bool outRequired) {
    cmd->add_option("--config", c.config, "TOML run configuration");
    cmd->add_option("--seed", c.seed, "override the configured seed");
    cmd->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--precision", c.precision, "rasterizer precision")->check(CLI::IsMember({"f32", "f64"}));
    auto *o = cmd->add_option("--out", c.out, "output path");
    if (outRequired)
        o->required();
}

RunConfig resolve(const Common &c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
    if (c.seed)
        cfg.seed = *c.seed;
    if (c.threads)
        cfg.render.threads = *c.threads;
    if (!c.precision.empty())
        cfg.render.precision = parse_precision(c.precision);
    cfg.validate();
    return cfg;
}

struct PoseSource {
    std::string dataset;
    std::string poses;
    std::string cameras;

    void add(CLI::App *cmd) {
        cmd->add_option("--dataset", dataset, "dataset directory supplying poses.json and cameras.json");
        cmd->add_option("--poses", poses, "poses.json");
        cmd->add_option("--cameras", cameras, "cameras.json");
    }
    std::vector<PoseFrame> load_poses() const {
        if (!poses.empty())
            return read_poses(poses);
        if (!dataset.empty())
            return read_poses(fs::path(dataset) / "poses.json");
        throw ConfigError("give --poses or --dataset");
    }
    std::vector<CameraView> load_cameras() const {
        if (!cameras.empty())
            return read_cameras(cameras);
        if (!dataset.empty())
            return read_cameras(fs::path(dataset) / "cameras.json");
        throw ConfigError("give --cameras or --dataset");
    }
};

void write_file(const fs::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text))
        throw IoError("cannot write " + path.string());
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Mesh-anchored relightable Gaussian avatars"};
    app.require_subcommand(1);

    // config init
    Common cfgCommon;
    auto *config = app.add_subcommand("config", "configuration utilities");
    auto *configInit = config->add_subcommand("init", "write the commented default configuration");
    configInit->add_option("--out", cfgCommon.out, "destination (stdout when omitted)");
    config->require_subcommand(1);

    // make-synthetic
    Common synCommon;
    std::string synKind;
    auto *synth = app.add_subcommand("make-synthetic", "generate a dataset with a known ground truth");
    synth->add_option("kind", synKind, "quad | icosphere | two-bone-cylinder")->required();
    add_common(synth, synCommon, true);

    // fit
    Common fitCommon;
    std::string fitDataset, fitInit;
    auto *fitCmd = app.add_subcommand("fit", "fit an avatar to a dataset");
    fitCmd->add_option("dataset", fitDataset, "dataset directory")->required();
    fitCmd->add_option("--init", fitInit, "start from this checkpoint");
    add_common(fitCmd, fitCommon, true);

    // render / relight
    Common renCommon;
    std::string renCkpt;
    bool renRaw = false;
    PoseSource renSrc;
    auto *render = app.add_subcommand("render", "render a checkpoint for a pose and camera sequence");
    render->add_option("checkpoint", renCkpt)->required();
    render->add_flag("--raw", renRaw, "also write unclamped radiance as PFM");
    renSrc.add(render);
    add_common(render, renCommon, true);

    Common relCommon;
    std::string relCkpt, relSh;
    bool relRaw = false;
    PoseSource relSrc;
    auto *relight = app.add_subcommand("relight", "render with overridden SH environments");
    relight->add_option("checkpoint", relCkpt)->required();
    relight->add_option("--sh", relSh, "sh_override.json")->required();
    relight->add_flag("--raw", relRaw, "also write unclamped radiance as PFM");
    relSrc.add(relight);
    add_common(relight, relCommon, true);

    // composite
    Common compCommon;
    std::string compRendered, compBackground, compMasks;
    auto *composite = app.add_subcommand("composite", "paste rendered frames onto backgrounds");
    composite->add_option("--rendered", compRendered)->required();
    composite->add_option("--background", compBackground)->required();
    composite->add_option("--masks", compMasks)->required();
    add_common(composite, compCommon, true);

    // eval
    Common evalCommon;
    std::string evalRendered, evalTarget;
    auto *eval = app.add_subcommand("eval", "per-frame PSNR and SSIM");
    eval->add_option("--rendered", evalRendered)->required();
    eval->add_option("--target", evalTarget)->required();
    add_common(eval, evalCommon, false);

    // gradcheck
    Common gcCommon;
    int gcScenes = 10;
    auto *gc = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
    gc->add_option("--scenes", gcScenes, "randomized scenes")->check(CLI::PositiveNumber);
    add_common(gc, gcCommon, false);

    // bench
    Common benchCommon;
    std::string benchCkpt;
    int benchFrames = 10, benchSplats = 20000, benchSize = 512, benchView = 0;
    PoseSource benchSrc;
    auto *bench = app.add_subcommand("bench", "rendering throughput");
    bench->add_option("checkpoint", benchCkpt, "checkpoint (procedural icosphere when omitted)");
    bench->add_option("--frames", benchFrames)->check(CLI::NonNegativeNumber);
    bench->add_option("--splats", benchSplats, "Gaussians of the procedural scene");
    bench->add_option("--size", benchSize, "image size of the procedural scene");
    bench->add_option("--view", benchView, "camera index when a checkpoint is given");
    benchSrc.add(bench);
    add_common(bench, benchCommon, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (configInit->parsed()) {
            if (cfgCommon.out.empty())
                std::cout << config_template();
            else
                write_file(cfgCommon.out, config_template());
        } else if (synth->parsed()) {
            const RunConfig cfg = resolve(synCommon);
            const SyntheticScene s = make_synthetic(parse_synthetic_kind(synKind), synCommon.out, cfg.seed);
            std::printf("wrote %s: %zu frames, %zu views, %zu Gaussians\n", synCommon.out.c_str(), s.poses.size(),
                        s.views.size(), s.ground_truth.gaussians.size());
        } else if (fitCmd->parsed()) {
            const RunConfig cfg = resolve(fitCommon);
            const Dataset data = load_dataset(fitDataset, cfg.data.palm_axis);
            FitOptions opts;
            opts.out_dir = fitCommon.out;
            std::optional<Checkpoint> init;
            if (!fitInit.empty()) {
                init = load_checkpoint(fitInit);
                opts.initial = &init->model;
            }
            const int every = std::max(1, cfg.optim.iterations / 20);
            opts.on_step = [&](int step, const LossReport &loss) {
                if (step % every == 0 || step + 1 == cfg.optim.iterations)
                    std::printf("step %6d  loss %.6f  l1 %.6f  dssim %.6f\n", step, loss.total, loss.l1, loss.dssim);
            };
            const FitResult res = fit(data, cfg, opts);
            std::printf("final checkpoint %s (%zu Gaussians)\n", (fs::path(fitCommon.out) / "final.ckpt").c_str(),
                        res.model.gaussians.size());
        } else if (render->parsed() || relight->parsed()) {
            const bool isRelight = relight->parsed();
            const Common &c = isRelight ? relCommon : renCommon;
            const PoseSource &src = isRelight ? relSrc : renSrc;
            const RunConfig cfg = resolve(c);
            const Checkpoint ck = load_checkpoint(isRelight ? relCkpt : renCkpt);
            SequenceOptions opts;
            opts.settings = cfg.render;
            opts.raw = isRelight ? relRaw : renRaw;
            DualEnvironment env;
            if (isRelight) {
                env = read_environment_json(relSh);
                opts.environment = &env;
                opts.dump_environment = true;
            }
            const int n = render_sequence(ck.model, src.load_poses(), src.load_cameras(), c.out, opts);
            std::printf("wrote %d images to %s\n", n, c.out.c_str());
        } else if (composite->parsed()) {
            const int n = composite_directory(compRendered, compBackground, compMasks, compCommon.out);
            std::printf("composited %d frames\n", n);
        } else if (eval->parsed()) {
            const std::vector<EvalRow> rows = evaluate_directory(evalRendered, evalTarget);
            const std::string csv = eval_csv(rows);
            if (evalCommon.out.empty())
                std::cout << csv;
            else
                write_file(evalCommon.out, csv);
        } else if (gc->parsed()) {
            const RunConfig cfg = resolve(gcCommon);
            Rng rng(cfg.seed);
            int failures = 0;
            for (int s = 0; s < gcScenes; ++s) {
                const GradcheckScene scene = make_gradcheck_scene(rng);
                const GradcheckReport rep = gradcheck(scene);
                for (const auto &[name, b] : rep.blocks)
                    std::printf("scene %d %-36s checked %4zu  failures %2zu  max_rel %.2e  max_abs %.2e\n", s,
                                name.c_str(), b.checked, b.failures, b.max_rel_error, b.max_abs_error);
                failures += rep.failures;
            }
            std::printf("gradcheck: %d failures\n", failures);
            if (failures > 0)
                return 4;
        } else if (bench->parsed()) {
            const RunConfig cfg = resolve(benchCommon);
            AvatarModel model;
            Camera cam;
            PoseFrame pose;
            if (benchCkpt.empty()) {
                BenchScene scene = make_bench_scene(benchSplats, benchSize, cfg.seed);
                model = std::move(scene.model);
                cam = scene.camera;
                pose = PoseFrame::zero(model.mesh.joint_count());
            } else {
                model = load_checkpoint(benchCkpt).model;
                const std::vector<CameraView> views = benchSrc.load_cameras();
                cam = views.at(static_cast<std::size_t>(benchView)).camera;
                pose = benchSrc.poses.empty() && benchSrc.dataset.empty() ? PoseFrame::zero(model.mesh.joint_count())
                                                                          : benchSrc.load_poses().at(0);
            }
            const BenchReport rep = run_bench(model, pose, cam, cfg.render, benchFrames);
            char line[256];
            std::snprintf(line, sizeof(line),
                          "frames %d  splats %zu  seconds %.4f  fps %.3f  splats_per_sec %.0f  threads %d  %dx%d\n",
                          rep.frames, rep.splats, rep.seconds, rep.fps, rep.splats_per_second, cfg.render.threads,
                          cam.width, cam.height);
            std::cout << line;
            if (!benchCommon.out.empty())
                write_file(benchCommon.out, line);
        }
    } catch (const Error &e) {
        std::fprintf(stderr, "%s\n", e.what());
        return e.exit_code();
    } catch (const fs::filesystem_error &e) {
        std::fprintf(stderr, "I/O error: %s\n", e.what());
        return 5;
    } catch (const std::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
