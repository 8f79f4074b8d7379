// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include <handsplat/commands.hpp>
#include <handsplat/config.hpp>
#include <handsplat/fit.hpp>
#include <handsplat/gradcheck.hpp>
#include <handsplat/synthetic.hpp>

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace handsplat;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image to_image(const Array &a) {
    if (a.ndim() != 2 && a.ndim() != 3)
        throw DimensionError("image arrays are (H, W) or (H, W, C)");
    const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
    const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
    Image img(w, h, c);
    std::copy(a.data(), a.data() + a.size(), img.data.begin());
    return img;
}

Array from_image(const Image &img) {
    Array a({img.height, img.width, img.channels});
    std::copy(img.data.begin(), img.data.end(), a.mutable_data());
    return a;
}

std::vector<ScreenSplat> to_splats(const Array &means, const Array &covs, const Array &depths, const Array &colors,
                                   const Array &opacities) {
    const auto n = static_cast<std::size_t>(means.shape(0));
    if (means.ndim() != 2 || means.shape(1) != 2 || covs.ndim() != 3 || static_cast<std::size_t>(covs.shape(0)) != n ||
        static_cast<std::size_t>(depths.size()) != n || static_cast<std::size_t>(colors.size()) != 3 * n ||
        static_cast<std::size_t>(opacities.size()) != n)
        throw DimensionError("splat arrays disagree: means (N,2), covs (N,2,2), depths (N), colors (N,3), opacities (N)");
    std::vector<ScreenSplat> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].mean2d = Vec2(means.at(i, 0), means.at(i, 1));
        out[i].cov2d << covs.at(i, 0, 0), covs.at(i, 0, 1), covs.at(i, 1, 0), covs.at(i, 1, 1);
        out[i].depth = depths.data()[i];
        out[i].color = Vec3(colors.data()[3 * i], colors.data()[3 * i + 1], colors.data()[3 * i + 2]);
        out[i].opacity = opacities.data()[i];
    }
    return out;
}

py::tuple rendered_arrays(const RenderedImage &r) {
    Array rgb({r.height, r.width, 3});
    Array alpha({r.height, r.width});
    std::copy(r.rgb.begin(), r.rgb.end(), rgb.mutable_data());
    std::copy(r.alpha.begin(), r.alpha.end(), alpha.mutable_data());
    return py::make_tuple(rgb, alpha);
}

Camera make_camera(double fx, double fy, double cx, double cy, int width, int height) {
    Camera c;
    c.fx = fx;
    c.fy = fy;
    c.cx = cx;
    c.cy = cy;
    c.width = width;
    c.height = height;
    c.validate();
    return c;
}

} // namespace

PYBIND11_MODULE(_handsplat, m) {
    m.doc() = "Mesh-anchored relightable Gaussian avatars";

    auto base = py::register_exception<Error>(m, "HandsplatError", PyExc_RuntimeError);
    py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
    py::register_exception<DomainError>(m, "DomainError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<DatasetError>(m, "DatasetError", base.ptr());
    py::register_exception<DegenerateTriangleError>(m, "DegenerateTriangleError", base.ptr());
    py::register_exception<DegenerateDeformationError>(m, "DegenerateDeformationError", base.ptr());
    py::register_exception<RenderError>(m, "RenderError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());

    // surface-anchored Gaussians
    m.def("barycentric_weights", &barycentric_weights, py::arg("logits"));
    m.def("gram_schmidt_frame", [](const Vec3 &e1, const Vec3 &e2) {
        const FaceFrame f = gram_schmidt_frame(e1, e2);
        return py::make_tuple(f.u, f.v);
    });
    m.def("edge_projection", &edge_projection, py::arg("v1"), py::arg("v2"), py::arg("v3"));
    m.def("deformation_gradient", &deformation_gradient, py::arg("m_canon"), py::arg("m_deform"),
          py::arg("det_epsilon") = 1e-10);
    m.def("ellipse_quadratic", [](const Vec2 &s, double phi) { return ellipse_quadratic(s, phi).q; },
          py::arg("scales"), py::arg("phi"));
    m.def(
        "transform_ellipse",
        [](const Mat2 &q, const Mat2 &a, double referencePhi) {
            const EllipseParams p = transform_ellipse({q}, a, referencePhi);
            return py::make_tuple(p.scales, p.phi);
        },
        py::arg("q"), py::arg("a"), py::arg("reference_phi") = 0.0);

    // lighting
    m.def("sh_basis", &sh_basis, py::arg("direction"), py::arg("order"));
    m.def(
        "shade",
        [](const Vec3 &albedo, int order, const std::vector<double> &coeffs, const Vec3 &normal) {
            ShCoefficients l;
            l.order = order;
            l.coeffs = coeffs;
            l.validate();
            return shade(albedo, l, normal);
        },
        py::arg("albedo"), py::arg("order"), py::arg("coeffs"), py::arg("normal"));

    // images and rasterization
    m.def("psnr", [](const Array &a, const Array &b) { return psnr(to_image(a), to_image(b)); });
    m.def("ssim", [](const Array &a, const Array &b) { return ssim(to_image(a), to_image(b)); });
    m.def("read_png", [](const std::filesystem::path &p) { return from_image(read_png(p)); });
    m.def(
        "rasterize",
        [](const Array &means, const Array &covs, const Array &depths, const Array &colors, const Array &opacities,
           int width, int height, bool reference) {
            const auto splats = to_splats(means, covs, depths, colors, opacities);
            const Camera cam = make_camera(1.0, 1.0, 0.5 * width, 0.5 * height, width, height);
            const RenderSettings settings;
            return rendered_arrays(reference ? rasterize_reference(splats, cam, settings)
                                             : rasterize(splats, cam, settings));
        },
        py::arg("means"), py::arg("covs"), py::arg("depths"), py::arg("colors"), py::arg("opacities"),
        py::arg("width"), py::arg("height"), py::arg("reference") = false);

    // workflows
    m.def("config_template", &config_template);
    m.def(
        "make_synthetic",
        [](const std::string &kind, const std::filesystem::path &out, std::uint64_t seed) {
            const SyntheticScene s = make_synthetic(parse_synthetic_kind(kind), out, seed);
            return py::dict(py::arg("frames") = s.poses.size(), py::arg("views") = s.views.size(),
                            py::arg("gaussians") = s.ground_truth.gaussians.size(),
                            py::arg("holdout_frames") = s.holdout_frames);
        },
        py::arg("kind"), py::arg("out"), py::arg("seed") = 0);
    m.def(
        "load_dataset",
        [](const std::filesystem::path &root) {
            const Dataset d = load_dataset(root);
            return py::dict(py::arg("frames") = d.frame_count(), py::arg("views") = d.view_count(),
                            py::arg("vertices") = d.mesh.vertex_count(), py::arg("faces") = d.mesh.face_count(),
                            py::arg("joints") = d.mesh.joint_count());
        },
        py::arg("root"));
    m.def(
        "fit",
        [](const std::filesystem::path &dataset, const std::string &configToml, const std::filesystem::path &out) {
            const RunConfig cfg = parse_config(configToml);
            const Dataset d = load_dataset(dataset, cfg.data.palm_axis);
            FitOptions opts;
            opts.out_dir = out;
            FitResult r;
            {
                py::gil_scoped_release release;
                r = fit(d, cfg, opts);
            }
            return py::dict(py::arg("losses") = r.losses, py::arg("gaussians") = r.model.gaussians.size());
        },
        py::arg("dataset"), py::arg("config_toml") = "", py::arg("out") = std::filesystem::path());
    m.def(
        "render",
        [](const std::filesystem::path &checkpoint, const std::filesystem::path &dataset, int view, int frame) {
            const Checkpoint ck = load_checkpoint(checkpoint);
            const auto poses = read_poses(dataset / "poses.json");
            const auto views = read_cameras(dataset / "cameras.json");
            const CameraView &cv = views.at(static_cast<std::size_t>(view));
            Camera cam = cv.camera;
            if (!cv.per_frame_world_to_camera.empty())
                cam.world_to_camera = cv.per_frame_world_to_camera.at(static_cast<std::size_t>(frame));
            const FrameRender fr =
                render_frame(ck.model, poses.at(static_cast<std::size_t>(frame)), frame, cam, RenderSettings{});
            return rendered_arrays(fr.image);
        },
        py::arg("checkpoint"), py::arg("dataset"), py::arg("view") = 0, py::arg("frame") = 0);
    m.def(
        "checkpoint_roundtrip",
        [](const std::filesystem::path &path) {
            const std::string bytes = serialize_checkpoint(load_checkpoint(path));
            return serialize_checkpoint(deserialize_checkpoint(bytes)) == bytes;
        },
        py::arg("path"));
    m.def(
        "gradcheck",
        [](int scenes, std::uint64_t seed) {
            Rng rng(seed);
            py::dict out;
            std::size_t failures = 0;
            double maxRel = 0.0;
            for (int s = 0; s < scenes; ++s) {
                const GradcheckReport rep = gradcheck(make_gradcheck_scene(rng));
                failures += rep.failures;
                for (const auto &[name, b] : rep.blocks)
                    maxRel = std::max(maxRel, b.max_rel_error);
            }
            out["failures"] = failures;
            out["max_rel_error"] = maxRel;
            return out;
        },
        py::arg("scenes") = 1, py::arg("seed") = 0);
    m.def(
        "bench",
        [](int gaussians, int size, int frames, int threads) {
            const BenchScene scene = make_bench_scene(gaussians, size);
            RenderSettings settings;
            settings.threads = threads;
            const BenchReport r =
                run_bench(scene.model, PoseFrame::zero(scene.model.mesh.joint_count()), scene.camera, settings, frames);
            return py::dict(py::arg("frames") = r.frames, py::arg("splats") = r.splats, py::arg("seconds") = r.seconds,
                            py::arg("fps") = r.fps);
        },
        py::arg("gaussians") = 2000, py::arg("size") = 128, py::arg("frames") = 1, py::arg("threads") = 1);
}
