// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include <handsplat/config.hpp>

#include <toml.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace handsplat {

std::map<std::string, double> OptimSettings::block_rates(bool geometryFrozen) const {
    return {
        {"gaussians.bary_logits", lr_bary},
        {"gaussians.log_scales", lr_scale},
        {"gaussians.rotation_phi", lr_rotation},
        {"gaussians.offset_logit", lr_offset},
        {"gaussians.albedo_logits", lr_albedo},
        {"gaussians.opacity_logit", lr_opacity},
        {"canonical_vertex_offsets", geometryFrozen ? 0.0 : lr_vertex_offsets},
        {"lighting_net.*", lr_lighting},
        {"pose_refinements.*", geometryFrozen ? 0.0 : lr_pose},
    };
}

Precision parse_precision(const std::string &name) {
    if (name == "f32")
        return Precision::f32;
    if (name == "f64")
        return Precision::f64;
    throw ConfigError("precision must be f32 or f64, got '" + name + "'");
}

namespace {

std::string fmt_real(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    std::string s(buf, res.ptr);
    if (s.find_first_of(".eEn") == std::string::npos)
        s += ".0";
    return s;
}

std::string quote(const std::string &s) { return "\"" + s + "\""; }

struct Entry {
    std::string section;
    std::string key;
    std::string doc;
    std::function<void(RunConfig &, const toml::node &)> read;
    std::function<std::string(const RunConfig &)> show;
};

[[noreturn]] void type_error(const Entry &e, const char *want) {
    throw ConfigError(e.section + "." + e.key + " must be " + want);
}

template <typename Get>
Entry real(std::string section, std::string key, std::string doc, Get get) {
    Entry e{std::move(section), std::move(key), std::move(doc), nullptr, nullptr};
    e.read = [get, e](RunConfig &c, const toml::node &n) {
        if (!n.is_number())
            type_error(e, "a number");
        get(c) = *n.value<double>();
    };
    e.show = [get](const RunConfig &c) { return fmt_real(get(const_cast<RunConfig &>(c))); };
    return e;
}

template <typename Get>
Entry integer(std::string section, std::string key, std::string doc, Get get) {
    Entry e{std::move(section), std::move(key), std::move(doc), nullptr, nullptr};
    e.read = [get, e](RunConfig &c, const toml::node &n) {
        if (!n.is_integer())
            type_error(e, "an integer");
        using T = std::remove_reference_t<decltype(get(c))>;
        get(c) = static_cast<T>(*n.value<std::int64_t>());
    };
    e.show = [get](const RunConfig &c) { return std::to_string(get(const_cast<RunConfig &>(c))); };
    return e;
}

template <typename Get>
Entry boolean(std::string section, std::string key, std::string doc, Get get) {
    Entry e{std::move(section), std::move(key), std::move(doc), nullptr, nullptr};
    e.read = [get, e](RunConfig &c, const toml::node &n) {
        if (!n.is_boolean())
            type_error(e, "a boolean");
        get(c) = *n.value<bool>();
    };
    e.show = [get](const RunConfig &c) { return std::string(get(const_cast<RunConfig &>(c)) ? "true" : "false"); };
    return e;
}

template <typename Get>
Entry vec3(std::string section, std::string key, std::string doc, Get get) {
    Entry e{std::move(section), std::move(key), std::move(doc), nullptr, nullptr};
    e.read = [get, e](RunConfig &c, const toml::node &n) {
        const auto *arr = n.as_array();
        if (!arr || arr->size() != 3)
            type_error(e, "an array of 3 numbers");
        Vec3 v;
        for (int i = 0; i < 3; ++i) {
            if (!(*arr)[i].is_number())
                type_error(e, "an array of 3 numbers");
            v[i] = *(*arr)[i].value<double>();
        }
        get(c) = v;
    };
    e.show = [get](const RunConfig &c) {
        const Vec3 v = get(const_cast<RunConfig &>(c));
        return "[" + fmt_real(v.x()) + ", " + fmt_real(v.y()) + ", " + fmt_real(v.z()) + "]";
    };
    return e;
}

template <typename Get>
Entry int_list(std::string section, std::string key, std::string doc, Get get) {
    Entry e{std::move(section), std::move(key), std::move(doc), nullptr, nullptr};
    e.read = [get, e](RunConfig &c, const toml::node &n) {
        const auto *arr = n.as_array();
        if (!arr)
            type_error(e, "an array of integers");
        std::vector<int> out;
        for (const auto &x : *arr) {
            if (!x.is_integer())
                type_error(e, "an array of integers");
            out.push_back(static_cast<int>(*x.value<std::int64_t>()));
        }
        get(c) = out;
    };
    e.show = [get](const RunConfig &c) {
        std::string s = "[";
        const auto &v = get(const_cast<RunConfig &>(c));
        for (std::size_t i = 0; i < v.size(); ++i)
            s += (i ? ", " : "") + std::to_string(v[i]);
        return s + "]";
    };
    return e;
}

template <typename Get, typename Parse, typename Show>
Entry text(std::string section, std::string key, std::string doc, Get get, Parse parse, Show showFn) {
    Entry e{std::move(section), std::move(key), std::move(doc), nullptr, nullptr};
    e.read = [get, parse, e](RunConfig &c, const toml::node &n) {
        if (!n.is_string())
            type_error(e, "a string");
        get(c) = parse(*n.value<std::string>());
    };
    e.show = [get, showFn](const RunConfig &c) { return quote(showFn(get(const_cast<RunConfig &>(c)))); };
    return e;
}

const std::vector<Entry> &registry() {
    static const std::vector<Entry> entries = [] {
        std::vector<Entry> r;
        r.push_back(integer("run", "seed", "Seed for initialization, frame sampling and densification jitter.",
                            [](RunConfig &c) -> std::uint64_t & { return c.seed; }));

        r.push_back(integer("model", "sh_order", "Spherical-harmonics order of the lighting (0-4).",
                            [](RunConfig &c) -> int & { return c.model.sh_order; }));
        r.push_back(int_list("model", "hidden", "Hidden layer widths of the pose-to-lighting network.",
                             [](RunConfig &c) -> std::vector<int> & { return c.model.hidden; }));
        r.push_back(text(
            "model", "activation", "Hidden activation: softplus, tanh or relu.",
            [](RunConfig &c) -> Activation & { return c.model.activation; },
            [](const std::string &s) { return parse_activation(s); }, [](Activation a) { return to_string(a); }));
        r.push_back(boolean("model", "include_root_translation",
                            "Feed the root translation to the lighting network as well.",
                            [](RunConfig &c) -> bool & { return c.model.include_root_translation; }));
        r.push_back(real("model", "output_weight_scale", "Initial scale of the lighting network's output weights.",
                         [](RunConfig &c) -> double & { return c.model.output_weight_scale; }));
        r.push_back(vec3("model", "base_irradiance", "Initial constant irradiance predicted for both sides.",
                         [](RunConfig &c) -> Vec3 & { return c.model.base_irradiance; }));
        r.push_back(real("model", "z_max", "Largest normal offset of a Gaussian, meters.",
                         [](RunConfig &c) -> double & { return c.model.surface.z_max; }));
        r.push_back(real("model", "det_epsilon", "Smallest |det| accepted for edge matrices and deformation gradients.",
                         [](RunConfig &c) -> double & { return c.model.surface.det_epsilon; }));
        r.push_back(integer("model", "gaussians_per_face", "Gaussians created per face at initialization.",
                            [](RunConfig &c) -> int & { return c.model.surface.gaussians_per_face; }));
        r.push_back(real("model", "init_scale_factor", "Initial scale as a multiple of sqrt(face area).",
                         [](RunConfig &c) -> double & { return c.model.surface.init_scale_factor; }));
        r.push_back(real("model", "init_opacity", "Initial opacity.",
                         [](RunConfig &c) -> double & { return c.model.surface.init_opacity; }));
        r.push_back(real("model", "init_albedo", "Initial gray albedo.",
                         [](RunConfig &c) -> double & { return c.model.surface.init_albedo; }));

        r.push_back(real("render", "alpha_max", "Per-splat alpha clamp.",
                         [](RunConfig &c) -> double & { return c.render.alpha_max; }));
        r.push_back(real("render", "transmittance_min", "Compositing stops once transmittance drops below this.",
                         [](RunConfig &c) -> double & { return c.render.transmittance_min; }));
        r.push_back(integer("render", "tile_size", "Tile edge in pixels.",
                            [](RunConfig &c) -> int & { return c.render.tile_size; }));
        r.push_back(real("render", "cov_epsilon", "Added to the projected covariance diagonal, pixels^2.",
                         [](RunConfig &c) -> double & { return c.render.cov_epsilon; }));
        r.push_back(real("render", "near_plane", "Splats at or before this camera depth are culled, meters.",
                         [](RunConfig &c) -> double & { return c.render.near_plane; }));
        r.push_back(real("render", "alpha_cutoff", "Tiled compositor skips a splat where its alpha is below this.",
                         [](RunConfig &c) -> double & { return c.render.alpha_cutoff; }));
        r.push_back(integer("render", "threads", "Worker threads for rasterization.",
                            [](RunConfig &c) -> int & { return c.render.threads; }));
        r.push_back(text(
            "render", "precision", "Forward compositor precision for render/relight/bench: f32 or f64.",
            [](RunConfig &c) -> Precision & { return c.render.precision; },
            [](const std::string &s) { return parse_precision(s); },
            [](Precision p) { return std::string(p == Precision::f32 ? "f32" : "f64"); }));

        r.push_back(real("loss", "lambda_dssim", "Weight of (1 - SSIM); L1 gets 1 - lambda.",
                         [](RunConfig &c) -> double & { return c.loss.lambda_dssim; }));
        r.push_back(real("loss", "pose_refinement_weight", "L2 weight on the sampled frame's pose refinement.",
                         [](RunConfig &c) -> double & { return c.loss.pose_refinement; }));
        r.push_back(real("loss", "vertex_offset_weight", "L2 weight on canonical vertex offsets.",
                         [](RunConfig &c) -> double & { return c.loss.vertex_offset; }));

        r.push_back(integer("optim", "iterations", "Optimization steps.",
                            [](RunConfig &c) -> int & { return c.optim.iterations; }));
        r.push_back(real("optim", "beta1", "Adam first-moment decay.",
                         [](RunConfig &c) -> double & { return c.optim.adam.beta1; }));
        r.push_back(real("optim", "beta2", "Adam second-moment decay.",
                         [](RunConfig &c) -> double & { return c.optim.adam.beta2; }));
        r.push_back(real("optim", "epsilon", "Adam denominator epsilon.",
                         [](RunConfig &c) -> double & { return c.optim.adam.epsilon; }));
        r.push_back(real("optim", "lr_bary", "Learning rate of barycentric logits.",
                         [](RunConfig &c) -> double & { return c.optim.lr_bary; }));
        r.push_back(real("optim", "lr_scale", "Learning rate of log scales.",
                         [](RunConfig &c) -> double & { return c.optim.lr_scale; }));
        r.push_back(real("optim", "lr_rotation", "Learning rate of in-plane rotations.",
                         [](RunConfig &c) -> double & { return c.optim.lr_rotation; }));
        r.push_back(real("optim", "lr_offset", "Learning rate of normal-offset logits.",
                         [](RunConfig &c) -> double & { return c.optim.lr_offset; }));
        r.push_back(real("optim", "lr_albedo", "Learning rate of albedo logits.",
                         [](RunConfig &c) -> double & { return c.optim.lr_albedo; }));
        r.push_back(real("optim", "lr_opacity", "Learning rate of opacity logits.",
                         [](RunConfig &c) -> double & { return c.optim.lr_opacity; }));
        r.push_back(real("optim", "lr_vertex_offsets", "Learning rate of canonical vertex offsets.",
                         [](RunConfig &c) -> double & { return c.optim.lr_vertex_offsets; }));
        r.push_back(real("optim", "lr_lighting", "Learning rate of the lighting network.",
                         [](RunConfig &c) -> double & { return c.optim.lr_lighting; }));
        r.push_back(real("optim", "lr_pose", "Learning rate of per-frame pose refinements.",
                         [](RunConfig &c) -> double & { return c.optim.lr_pose; }));
        r.push_back(integer("optim", "freeze_geometry_until",
                            "Vertex offsets and pose refinements are frozen before this step.",
                            [](RunConfig &c) -> int & { return c.optim.freeze_geometry_until; }));
        r.push_back(integer("optim", "checkpoint_interval", "Steps between periodic checkpoints (0 disables).",
                            [](RunConfig &c) -> int & { return c.optim.checkpoint_interval; }));
        r.push_back(integer("optim", "log_interval", "Steps between loss-log rows.",
                            [](RunConfig &c) -> int & { return c.optim.log_interval; }));

        r.push_back(integer("control", "interval", "Steps between control cycles.",
                            [](RunConfig &c) -> int & { return c.control.control_interval; }));
        r.push_back(integer("control", "start", "First step eligible for a control cycle.",
                            [](RunConfig &c) -> int & { return c.schedule.control_start; }));
        r.push_back(integer("control", "stop", "No control cycles after this step.",
                            [](RunConfig &c) -> int & { return c.schedule.control_stop; }));
        r.push_back(real("control", "grad_threshold", "Mean screen-space positional gradient that triggers densification.",
                         [](RunConfig &c) -> double & { return c.control.grad_threshold; }));
        r.push_back(real("control", "split_scale_threshold",
                         "Larger canonical scale above which a Gaussian splits instead of cloning (0: 1.5x median edge).",
                         [](RunConfig &c) -> double & { return c.control.split_scale_threshold; }));
        r.push_back(real("control", "prune_opacity", "Gaussians below this opacity are pruned.",
                         [](RunConfig &c) -> double & { return c.control.prune_opacity; }));
        r.push_back(real("control", "max_scale_factor", "Prune when the larger scale exceeds this multiple of the median edge.",
                         [](RunConfig &c) -> double & { return c.control.max_scale_factor; }));
        r.push_back(integer("control", "max_gaussians", "Population cap.",
                            [](RunConfig &c) -> int & { return c.control.max_gaussians; }));
        r.push_back(integer("control", "min_gaussians", "Population floor for pruning.",
                            [](RunConfig &c) -> int & { return c.control.min_gaussians; }));
        r.push_back(real("control", "split_factor", "Scale divisor applied to split children.",
                         [](RunConfig &c) -> double & { return c.control.split_factor; }));

        r.push_back(int_list("data", "holdout_frames", "Frames excluded from fitting.",
                             [](RunConfig &c) -> std::vector<int> & { return c.data.holdout_frames; }));
        r.push_back(vec3("data", "palm_axis",
                         "Rest-space axis labelling palm faces when the rig has no face_side_labels.",
                         [](RunConfig &c) -> Vec3 & { return c.data.palm_axis; }));
        return r;
    }();
    return entries;
}

std::string render_toml(const RunConfig &cfg, bool withDocs) {
    std::ostringstream os;
    if (withDocs)
        os << "# handsplat run configuration. Every key is optional; values shown are the defaults.\n";
    std::string section;
    for (const auto &e : registry()) {
        if (e.section != section) {
            section = e.section;
            os << (os.tellp() > 0 ? "\n" : "") << "[" << section << "]\n";
        }
        if (withDocs)
            os << "# " << e.doc << "\n";
        os << e.key << " = " << e.show(cfg) << "\n";
    }
    return os.str();
}

} // namespace

void RunConfig::validate() const {
    if (model.sh_order < 0 || model.sh_order > kMaxShOrder)
        throw ConfigError("model.sh_order must lie in [0, 4]");
    for (int h : model.hidden)
        if (h <= 0)
            throw ConfigError("model.hidden widths must be positive");
    if (!(model.surface.z_max > 0.0))
        throw ConfigError("model.z_max must be positive");
    if (!(model.surface.det_epsilon > 0.0))
        throw ConfigError("model.det_epsilon must be positive");
    if (model.surface.gaussians_per_face < 1)
        throw ConfigError("model.gaussians_per_face must be at least 1");
    if (!(model.surface.init_scale_factor > 0.0))
        throw ConfigError("model.init_scale_factor must be positive");
    if (!(model.surface.init_opacity > 0.0 && model.surface.init_opacity < 1.0))
        throw ConfigError("model.init_opacity must lie in (0, 1)");
    if (!(model.surface.init_albedo > 0.0 && model.surface.init_albedo < 1.0))
        throw ConfigError("model.init_albedo must lie in (0, 1)");
    if (!(render.alpha_max > 0.0 && render.alpha_max < 1.0))
        throw ConfigError("render.alpha_max must lie in (0, 1)");
    if (!(render.transmittance_min >= 0.0 && render.transmittance_min < 1.0))
        throw ConfigError("render.transmittance_min must lie in [0, 1)");
    if (render.tile_size < 1)
        throw ConfigError("render.tile_size must be positive");
    if (!(render.cov_epsilon >= 0.0) || !(render.near_plane > 0.0))
        throw ConfigError("render.cov_epsilon must be >= 0 and render.near_plane > 0");
    if (!(render.alpha_cutoff > 0.0 && render.alpha_cutoff < 1.0))
        throw ConfigError("render.alpha_cutoff must lie in (0, 1)");
    if (render.threads < 1)
        throw ConfigError("render.threads must be positive");
    if (!(loss.lambda_dssim >= 0.0 && loss.lambda_dssim <= 1.0))
        throw ConfigError("loss.lambda_dssim must lie in [0, 1]");
    if (loss.pose_refinement < 0.0 || loss.vertex_offset < 0.0)
        throw ConfigError("loss regularizer weights must be non-negative");
    if (optim.iterations < 0)
        throw ConfigError("optim.iterations must be non-negative");
    if (!(optim.adam.beta1 >= 0.0 && optim.adam.beta1 < 1.0) || !(optim.adam.beta2 >= 0.0 && optim.adam.beta2 < 1.0))
        throw ConfigError("optim.beta1 and optim.beta2 must lie in [0, 1)");
    if (!(optim.adam.epsilon > 0.0))
        throw ConfigError("optim.epsilon must be positive");
    for (double lr : {optim.lr_bary, optim.lr_scale, optim.lr_rotation, optim.lr_offset, optim.lr_albedo,
                      optim.lr_opacity, optim.lr_vertex_offsets, optim.lr_lighting, optim.lr_pose})
        if (!(lr >= 0.0))
            throw ConfigError("learning rates must be non-negative");
    if (optim.checkpoint_interval < 0 || optim.log_interval < 1)
        throw ConfigError("optim.checkpoint_interval must be >= 0 and optim.log_interval >= 1");
    control.validate();
    if (data.palm_axis.norm() <= 0.0)
        throw ConfigError("data.palm_axis must be non-zero");
}

RunConfig parse_config(const std::string &text) {
    toml::table tbl;
    try {
        tbl = toml::parse(text);
    } catch (const toml::parse_error &e) {
        throw ConfigError(std::string("TOML syntax: ") + std::string(e.description()));
    }
    RunConfig cfg;
    const auto &entries = registry();
    for (const auto &[secKey, secNode] : tbl) {
        const std::string section(secKey.str());
        const auto *sec = secNode.as_table();
        if (!sec)
            throw ConfigError("unknown top-level key '" + section + "'");
        bool knownSection = false;
        for (const auto &e : entries)
            knownSection = knownSection || e.section == section;
        if (!knownSection)
            throw ConfigError("unknown section [" + section + "]");
        for (const auto &[key, node] : *sec) {
            const std::string k(key.str());
            const Entry *match = nullptr;
            for (const auto &e : entries)
                if (e.section == section && e.key == k)
                    match = &e;
            if (!match)
                throw ConfigError("unknown key " + section + "." + k);
            try {
                match->read(cfg, node);
            } catch (const ConfigError &) {
                throw;
            } catch (const Error &e) {
                throw ConfigError(section + "." + k + ": " + e.what());
            }
        }
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_template() { return render_toml(RunConfig{}, true); }

std::string config_to_toml(const RunConfig &cfg) { return render_toml(cfg, false); }

} // namespace handsplat
