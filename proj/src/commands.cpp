// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include <handsplat/commands.hpp>

#include <handsplat/synthetic.hpp>

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace handsplat {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string read_text(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text))
        throw IoError("cannot write " + path.string());
}

ShCoefficients parse_side(const json &j, int order, const char *name) {
    ShCoefficients sh = ShCoefficients::zeros(order);
    const json &rows = j.at(name);
    if (!rows.is_array() || rows.size() != 3)
        throw ConfigError(std::string("environment '") + name + "' needs 3 channel rows");
    for (int c = 0; c < 3; ++c) {
        const json &row = rows[static_cast<std::size_t>(c)];
        if (!row.is_array() || static_cast<int>(row.size()) != sh.basis_count())
            throw ConfigError(std::string("environment '") + name + "' rows need " +
                              std::to_string(sh.basis_count()) + " coefficients");
        for (int k = 0; k < sh.basis_count(); ++k)
            sh.at(c, k) = row[static_cast<std::size_t>(k)].get<double>();
    }
    sh.validate();
    return sh;
}

json side_json(const ShCoefficients &sh) {
    json rows = json::array();
    for (int c = 0; c < 3; ++c) {
        json row = json::array();
        for (int k = 0; k < sh.basis_count(); ++k)
            row.push_back(sh.at(c, k));
        rows.push_back(row);
    }
    return rows;
}

std::vector<fs::path> png_files(const fs::path &dir) {
    if (!fs::is_directory(dir))
        throw IoError("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto &e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png")
            out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

Image rgb_of(const Image &img) {
    if (img.channels == 3)
        return img;
    if (img.channels < 3)
        throw DimensionError("expected an RGB or RGBA image");
    Image out(img.width, img.height, 3);
    for (std::size_t i = 0; i < img.pixel_count(); ++i)
        for (int c = 0; c < 3; ++c)
            out.data[i * 3 + c] = img.data[i * img.channels + c];
    return out;
}

} // namespace

DualEnvironment read_environment_json(const fs::path &path) {
    try {
        const json j = json::parse(read_text(path));
        const int order = j.at("order").get<int>();
        if (order < 0 || order > 4)
            throw ConfigError("environment order must be in [0, 4]");
        return {parse_side(j, order, "palm"), parse_side(j, order, "back")};
    } catch (const json::exception &e) {
        throw ConfigError("bad environment file " + path.string() + ": " + e.what());
    }
}

std::string environment_to_json(const DualEnvironment &env) {
    json j{{"order", env.palm.order}, {"palm", side_json(env.palm)}, {"back", side_json(env.back)}};
    return j.dump(1) + "\n";
}

int render_sequence(const AvatarModel &model, std::span<const PoseFrame> poses, std::span<const CameraView> views,
                    const fs::path &out, const SequenceOptions &options) {
    RenderOptions ropt;
    ropt.environment_override = options.environment;
    int written = 0;
    for (const auto &view : views) {
        const fs::path dir = out / view.name;
        fs::create_directories(dir);
        for (std::size_t t = 0; t < poses.size(); ++t) {
            const int frame = static_cast<int>(t);
            Camera cam = view.camera;
            if (!view.per_frame_world_to_camera.empty())
                cam.world_to_camera = view.per_frame_world_to_camera.at(t);
            const FrameRender fr = render_frame(model, poses[t], frame, cam, options.settings, ropt);
            const std::string name = frame_file_name(frame);
            const std::string stem = name.substr(0, name.size() - 4);
            write_png(dir / name, fr.image.rgba(), PngDepth::sixteen);
            if (options.raw)
                write_pfm(dir / (stem + ".pfm"), fr.image.color());
            if (options.dump_environment)
                write_text(dir / (stem + "_sh.json"), environment_to_json(fr.environment));
            ++written;
        }
    }
    return written;
}

int composite_directory(const fs::path &rendered, const fs::path &background, const fs::path &masks,
                        const fs::path &out) {
    fs::create_directories(out);
    int count = 0;
    for (const fs::path &file : png_files(rendered)) {
        const Image rgba = read_png(file);
        if (rgba.channels != 4)
            throw DimensionError(file.string() + " is not RGBA");
        RenderedImage r(rgba.width, rgba.height);
        for (std::size_t i = 0; i < rgba.pixel_count(); ++i) {
            for (int c = 0; c < 3; ++c)
                r.rgb[i * 3 + c] = rgba.data[i * 4 + c];
            r.alpha[i] = rgba.data[i * 4 + 3];
        }
        const std::string stem = file.stem().string();
        const Image bg = rgb_of(read_png(background / file.filename()));
        const fs::path maskPath = masks / (stem + "_object.png");
        const Image mask = fs::exists(maskPath) ? read_png(maskPath) : Image(rgba.width, rgba.height, 1, 0.0);
        write_png(out / file.filename(), composite_overlay(r, bg, mask), PngDepth::eight);
        ++count;
    }
    return count;
}

std::vector<EvalRow> evaluate_directory(const fs::path &rendered, const fs::path &target) {
    std::vector<EvalRow> rows;
    for (const fs::path &file : png_files(rendered)) {
        const Image a = rgb_of(read_png(file));
        const Image b = rgb_of(read_png(target / file.filename()));
        if (!a.same_shape(b))
            throw DimensionError(file.filename().string() + " differs in size from its target");
        rows.push_back({file.filename().string(), psnr(a, b), ssim(a, b)});
    }
    return rows;
}

std::string eval_csv(std::span<const EvalRow> rows) {
    std::ostringstream out;
    out << "frame,psnr,ssim\n";
    double sp = 0.0, ss = 0.0;
    char buf[128];
    for (const auto &r : rows) {
        std::snprintf(buf, sizeof(buf), ",%.6f,%.6f\n", r.psnr, r.ssim);
        out << r.name << buf;
        sp += r.psnr;
        ss += r.ssim;
    }
    const double n = rows.empty() ? 1.0 : static_cast<double>(rows.size());
    std::snprintf(buf, sizeof(buf), "mean,%.6f,%.6f\n", sp / n, ss / n);
    out << buf;
    return out.str();
}

BenchReport run_bench(const AvatarModel &model, const PoseFrame &pose, const Camera &cam,
                      const RenderSettings &settings, int frames) {
    BenchReport rep;
    if (frames <= 0)
        return rep;
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    for (int i = 0; i < frames; ++i) {
        const FrameRender fr = render_frame(model, pose, -1, cam, settings);
        rep.splats = fr.splats.size();
    }
    rep.seconds = std::chrono::duration<double>(clock::now() - start).count();
    rep.frames = frames;
    rep.fps = frames / std::max(rep.seconds, 1e-12);
    rep.splats_per_second = rep.fps * static_cast<double>(rep.splats);
    return rep;
}

BenchScene make_bench_scene(int gaussians, int size, std::uint64_t seed) {
    if (gaussians < 1 || size < 1)
        throw DomainError("bench scene needs positive Gaussian count and size");
    BenchScene scene;
    AvatarModel &m = scene.model;
    const double radius = 0.05;
    int levels = 0;
    while (20 * (1 << (2 * levels)) * 4 < gaussians && levels < 7)
        ++levels;
    icosphere(levels, radius, m.mesh.rest_vertices, m.mesh.faces);
    m.mesh.joint_parents = {-1};
    m.mesh.joint_rest_transforms = {RigidTransform::identity()};
    m.mesh.skin_weights.assign(m.mesh.rest_vertices.size(), {JointWeight{0, 1.0}});
    m.mesh.face_side_labels = label_face_sides(m.mesh, Vec3::UnitZ());
    m.vertex_offsets.assign(m.mesh.rest_vertices.size(), Vec3::Zero());
    const DeformedMesh canonical = m.canonical_surface();
    const int faces = canonical.face_count();
    Rng rng(seed);
    for (int i = 0; i < gaussians; ++i) {
        SurfaceGaussian g;
        g.face_id = i % faces;
        const int perFace = (gaussians + faces - 1) / faces;
        for (int k = 0; k < 3; ++k)
            g.bary_logits[k] = rng.uniform(-1.0, 1.0);
        const double s = 0.7 * std::sqrt(canonical.face_areas[g.face_id] / perFace);
        g.log_scales = Vec2(std::log(s * rng.uniform(0.8, 1.2)), std::log(s * rng.uniform(0.8, 1.2)));
        g.rotation_phi = rng.uniform(0.0, kPi);
        g.offset_logit = rng.uniform(-2.0, 2.0);
        g.albedo_logits = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        g.opacity_logit = logit(0.9);
        m.gaussians.push_back(g);
    }
    const ShCoefficients env = constant_environment(2, Vec3::Constant(0.9));
    DenseLayer out;
    out.weight = Eigen::MatrixXd::Zero(2 * static_cast<Eigen::Index>(env.coeffs.size()), 3);
    out.bias.resize(out.weight.rows());
    for (std::size_t i = 0; i < env.coeffs.size(); ++i)
        out.bias[static_cast<Eigen::Index>(i)] = out.bias[static_cast<Eigen::Index>(i + env.coeffs.size())] =
            env.coeffs[i];
    m.lighting = LightingNet::from_layers(1, 2, Activation::softplus, false, {out});
    m.reset_refinements(0);

    Camera &cam = scene.camera;
    cam.width = cam.height = size;
    cam.cx = cam.cy = 0.5 * (size - 1);
    const double distance = 0.25;
    // The sphere spans about 80% of the frame.
    cam.fx = cam.fy = 0.4 * size * distance / radius;
    cam.world_to_camera = look_at(Vec3(0.0, -distance, 0.05), Vec3::Zero(), Vec3::UnitZ());
    m.validate();
    return scene;
}

} // namespace handsplat
