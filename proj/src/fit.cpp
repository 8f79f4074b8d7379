// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include <handsplat/fit.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

namespace handsplat {

namespace {

// Values per Gaussian in each Gaussian block.
int gaussian_stride(const std::string &block) {
    if (block == "gaussians.bary_logits" || block == "gaussians.albedo_logits")
        return 3;
    if (block == "gaussians.log_scales")
        return 2;
    return 1;
}

bool is_gaussian_block(const std::string &name) { return name.rfind("gaussians.", 0) == 0; }

class CsvLog {
  public:
    CsvLog() = default;
    CsvLog(const std::filesystem::path &path, const std::string &header) : mOut(path, std::ios::trunc) {
        if (!mOut)
            throw IoError("cannot write " + path.string());
        mOut << header << '\n';
    }
    bool open() const { return mOut.is_open(); }
    std::ofstream &stream() { return mOut; }
    void flush() { mOut.flush(); }

  private:
    std::ofstream mOut;
};

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

std::vector<int> training_frames(const Dataset &data, const RunConfig &cfg) {
    const std::set<int> held(cfg.data.holdout_frames.begin(), cfg.data.holdout_frames.end());
    std::vector<int> out;
    for (int t = 0; t < data.frame_count(); ++t)
        if (!held.count(t))
            out.push_back(t);
    if (out.empty())
        throw ConfigError("every frame is held out; nothing to fit");
    return out;
}

AvatarModel initial_model(const Dataset &data, const RunConfig &cfg) {
    Rng rng(cfg.seed);
    return create_model(data.mesh, data.frame_count(), cfg.model, rng);
}

OptimizerState remap_optimizer(const OptimizerState &state, const ParameterLayout &from,
                               const ParameterLayout &to, std::span<const int> provenance) {
    OptimizerState out;
    out.reset(to.size());
    out.step = state.step;
    for (const auto &nb : to.blocks()) {
        const ParameterBlock &ob = from.block(nb.name);
        if (is_gaussian_block(nb.name)) {
            const std::size_t stride = static_cast<std::size_t>(gaussian_stride(nb.name));
            for (std::size_t i = 0; i < provenance.size(); ++i) {
                const std::size_t src = static_cast<std::size_t>(provenance[i]);
                for (std::size_t k = 0; k < stride; ++k) {
                    out.m[nb.offset + i * stride + k] = state.m[ob.offset + src * stride + k];
                    out.v[nb.offset + i * stride + k] = state.v[ob.offset + src * stride + k];
                }
            }
        } else {
            if (ob.size != nb.size)
                throw DimensionError("block " + nb.name + " changed size across a control cycle");
            std::copy_n(state.m.begin() + static_cast<std::ptrdiff_t>(ob.offset), nb.size,
                        out.m.begin() + static_cast<std::ptrdiff_t>(nb.offset));
            std::copy_n(state.v.begin() + static_cast<std::ptrdiff_t>(ob.offset), nb.size,
                        out.v.begin() + static_cast<std::ptrdiff_t>(nb.offset));
        }
    }
    return out;
}

FitResult fit(const Dataset &data, const RunConfig &cfg, const FitOptions &options) {
    cfg.validate();
    const std::vector<int> train = training_frames(data, cfg);
    Rng rng(cfg.seed);
    FitResult res;
    if (options.initial) {
        res.model = *options.initial;
        if (static_cast<int>(res.model.pose_refinements.size()) != data.frame_count())
            res.model.reset_refinements(data.frame_count());
    } else {
        res.model = create_model(data.mesh, data.frame_count(), cfg.model, rng);
    }
    AvatarModel &model = res.model;
    model.validate();

    const bool writing = !options.out_dir.empty();
    CsvLog lossLog, controlLog;
    if (writing) {
        std::filesystem::create_directories(options.out_dir);
        lossLog = CsvLog(options.out_dir / "loss.csv",
                         "step,frame,view,total,l1,dssim,pose_refinement,vertex_offset,gaussians");
        controlLog = CsvLog(options.out_dir / "control.csv",
                            "step,clones,splits,prunes,reassigned,clamp_warnings,floor_warnings,gaussians");
    }
    const std::string configEcho = config_to_toml(cfg);
    auto checkpoint = [&](const AvatarModel &m, const OptimizerState *opt, std::int64_t step,
                          const std::filesystem::path &path) {
        Checkpoint ck;
        ck.model = m;
        if (opt)
            ck.optimizer = *opt;
        ck.config_toml = configEcho;
        ck.seed = cfg.seed;
        ck.step = step;
        save_checkpoint(path, ck);
    };

    RenderSettings render = cfg.render;
    render.precision = Precision::f64;

    ParameterLayout layout(model);
    res.optimizer.reset(layout.size());
    GradStats stats;
    stats.reset(model.gaussians.size());
    std::vector<double> grad;

    for (int step = 0; step < cfg.optim.iterations; ++step) {
        const int frame = train[rng.index(train.size())];
        const int view = static_cast<int>(rng.index(static_cast<std::size_t>(data.view_count())));
        grad.assign(layout.size(), 0.0);
        FrameEvaluation ev;
        try {
            ev = evaluate_frame(model, layout, data.poses[frame], frame, data.camera(view, frame),
                                data.frames[view][frame], render, cfg.loss, grad);
            if (!std::isfinite(ev.loss.total))
                throw NumericError("loss became non-finite at step " + std::to_string(step));
        } catch (const NumericError &) {
            if (writing)
                checkpoint(model, &res.optimizer, step, options.out_dir / "last_good.ckpt");
            throw;
        }
        for (std::size_t i = 0; i < model.gaussians.size(); ++i)
            if (ev.visible[i])
                stats.add(i, ev.mean2d_grad_norm[i]);

        if (lossLog.open() && step % cfg.optim.log_interval == 0) {
            lossLog.stream() << step << ',' << frame << ',' << view << ',' << fmt(ev.loss.total) << ','
                             << fmt(ev.loss.l1) << ',' << fmt(ev.loss.dssim) << ','
                             << fmt(ev.loss.regularizers["pose_refinement"]) << ','
                             << fmt(ev.loss.regularizers["vertex_offset"]) << ',' << model.gaussians.size() << '\n';
        }
        res.losses.push_back(ev.loss.total);
        if (options.on_step)
            options.on_step(step, ev.loss);

        const bool frozen = step < cfg.optim.freeze_geometry_until;
        const std::vector<double> rates = expand_learning_rates(layout, cfg.optim.block_rates(frozen));
        std::vector<double> x = layout.gather(model);
        adam_step(x, grad, res.optimizer, rates, cfg.optim.adam);
        layout.scatter(x, model);

        const int done = step + 1;
        if (done >= cfg.schedule.control_start && done <= cfg.schedule.control_stop &&
            done % cfg.control.control_interval == 0) {
            ControlReport report;
            const DeformedMesh canonical = model.canonical_surface();
            ControlResult cr =
                control_cycle(model.gaussians, stats, canonical, cfg.control, model.surface.z_max, rng, &report);
            model.gaussians = std::move(cr.set);
            const ParameterLayout next(model);
            res.optimizer = remap_optimizer(res.optimizer, layout, next, cr.provenance);
            layout = next;
            res.control_reports.push_back(report);
            if (controlLog.open()) {
                controlLog.stream() << done << ',' << report.clones << ',' << report.splits << ',' << report.prunes
                                    << ',' << report.reassigned << ',' << report.clamp_warnings << ','
                                    << report.floor_warnings << ',' << model.gaussians.size() << '\n';
            }
        }
        if (writing && cfg.optim.checkpoint_interval > 0 && done % cfg.optim.checkpoint_interval == 0) {
            char name[48];
            std::snprintf(name, sizeof(name), "step_%06d.ckpt", done);
            checkpoint(model, &res.optimizer, done, options.out_dir / "checkpoints" / name);
        }
    }
    if (writing) {
        lossLog.flush();
        controlLog.flush();
        checkpoint(model, &res.optimizer, cfg.optim.iterations, options.out_dir / "final.ckpt");
    }
    return res;
}

} // namespace handsplat
