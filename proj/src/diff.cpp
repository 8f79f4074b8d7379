// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include <handsplat/diff.hpp>

#include <algorithm>
#include <cmath>

namespace handsplat {

namespace {

Image rgb_of(const Image &img) {
    if (img.channels < 3)
        throw DimensionError("target image needs at least 3 channels");
    if (img.channels == 3)
        return img;
    Image out(img.width, img.height, 3);
    for (std::size_t i = 0; i < img.pixel_count(); ++i)
        for (int c = 0; c < 3; ++c)
            out.data[i * 3 + c] = img.data[i * img.channels + c];
    return out;
}

LossReport loss_impl(const RenderedImage &rendered, const Image &target, double lambda,
                     std::vector<double> *gradRgb) {
    if (rendered.width != target.width || rendered.height != target.height)
        throw DimensionError("rendered and target images differ in size");
    const Image a = rendered.color();
    const Image b = rgb_of(target);
    const double n = static_cast<double>(a.data.size());
    double l1 = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        l1 += std::abs(a.data[i] - b.data[i]);
    l1 /= n;
    LossReport r;
    r.l1 = l1;
    if (gradRgb) {
        std::vector<double> gs;
        r.dssim = 1.0 - ssim_with_gradient(a, b, gs);
        gradRgb->assign(a.data.size(), 0.0);
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            const double d = a.data[i] - b.data[i];
            const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            (*gradRgb)[i] = (1.0 - lambda) * sign / n - lambda * gs[i];
        }
    } else {
        r.dssim = 1.0 - ssim(a, b);
    }
    r.total = (1.0 - lambda) * r.l1 + lambda * r.dssim;
    return r;
}

// Columns of the canonical edge projection as explicit functions of the edges:
// [[|e1|, e1.e2/|e1|], [0, |e1 x e2|/|e1|]].
Mat2 edge_matrix(const Vec3 &e1, const Vec3 &e2) {
    const double l1 = e1.norm();
    Mat2 m;
    m << l1, e1.dot(e2) / l1, 0.0, e1.cross(e2).norm() / l1;
    return m;
}

void edge_matrix_backward(const Vec3 &e1, const Vec3 &e2, const Mat2 &g, Vec3 &ge1, Vec3 &ge2) {
    const double l1 = e1.norm(), l1c = l1 * l1 * l1;
    const Vec3 x = e1.cross(e2);
    const double xn = x.norm();
    const Vec3 xh = x / xn;
    const double d = e1.dot(e2);
    ge1 += g(0, 0) * e1 / l1;
    ge1 += g(0, 1) * (e2 / l1 - d * e1 / l1c);
    ge2 += g(0, 1) * e1 / l1;
    ge1 += g(1, 1) * (e2.cross(xh) / l1 - xn * e1 / l1c);
    ge2 += g(1, 1) * (xh.cross(e1) / l1);
}

// Geometry of one Gaussian in the posed configuration.
struct SplatState {
    int face = 0;
    Vec3 w;
    double offsetSig = 0.0, offset = 0.0;
    Vec3 e1c, e2c, e1d, e2d;
    Vec3 x; // e1d x e2d
    double xn = 0.0;
    Vec3 normal;
    Mat2 minv; // canonical edge matrix inverse
    Mat32 k;   // E_d * M_c^-1
    Mat2 rot;
    Vec2 s;
    Mat2 sigmaC;
    Vec3 center;
    Mat3 cov;
    Vec3 albedo;
    double opacity = 0.0;
    Vec3 irradiance;
    Vec3 color;
    FaceSide side = FaceSide::palm;
};

SplatState splat_state(const AvatarModel &model, int index, std::span<const Vec3> canon,
                       std::span<const Vec3> posed, const DualEnvironment &env) {
    const SurfaceGaussian &g = model.gaussians[index];
    const auto &f = model.mesh.faces[g.face_id];
    SplatState st;
    st.face = g.face_id;
    st.w = barycentric_weights(g.bary_logits);
    st.offsetSig = sigmoid(g.offset_logit);
    st.offset = model.surface.z_max * st.offsetSig;
    st.e1c = canon[f[1]] - canon[f[0]];
    st.e2c = canon[f[2]] - canon[f[0]];
    st.e1d = posed[f[1]] - posed[f[0]];
    st.e2d = posed[f[2]] - posed[f[0]];
    const double eps = model.surface.det_epsilon;
    if (!(st.e1c.cross(st.e2c).norm() > 2.0 * kDefaultAreaEpsilon) || !(st.e1c.norm() > 0.0))
        throw DegenerateTriangleError("canonical face " + std::to_string(st.face));
    st.x = st.e1d.cross(st.e2d);
    st.xn = st.x.norm();
    if (!(st.xn > 2.0 * kDefaultAreaEpsilon))
        throw DegenerateDeformationError("posed face " + std::to_string(st.face));
    st.normal = st.x / st.xn;
    const Mat2 mc = edge_matrix(st.e1c, st.e2c);
    if (!(std::abs(mc.determinant()) > eps))
        throw DegenerateTriangleError("canonical face " + std::to_string(st.face) + " frame is singular");
    st.minv = mc.inverse();
    Mat32 ed;
    ed.col(0) = st.e1d;
    ed.col(1) = st.e2d;
    st.k = ed * st.minv;
    st.rot = rotation2(g.rotation_phi);
    st.s = g.log_scales.array().exp().matrix();
    st.sigmaC = st.rot * Vec2(st.s.x() * st.s.x(), st.s.y() * st.s.y()).asDiagonal() * st.rot.transpose();
    st.center = st.w[0] * posed[f[0]] + st.w[1] * posed[f[1]] + st.w[2] * posed[f[2]] + st.offset * st.normal;
    st.cov = st.k * st.sigmaC * st.k.transpose();
    st.cov = 0.5 * (st.cov + st.cov.transpose()).eval();
    for (int c = 0; c < 3; ++c)
        st.albedo[c] = sigmoid(g.albedo_logits[c]);
    st.opacity = sigmoid(g.opacity_logit);
    st.side = model.mesh.face_side_labels.empty() ? FaceSide::palm : model.mesh.face_side_labels[st.face];
    st.irradiance = sh_irradiance(env.side(st.side), st.normal);
    for (int c = 0; c < 3; ++c)
        st.color[c] = st.albedo[c] * std::max(0.0, st.irradiance[c]);
    return st;
}

struct PosedMesh {
    std::vector<RigidTransform> world;
    std::vector<RigidTransform> skin;
    std::vector<RigidTransform> restWorld;
    std::vector<Vec3> canon;
    std::vector<Vec3> posed;
};

PosedMesh pose_mesh(const AvatarModel &model, const PoseFrame &pose) {
    PosedMesh pm;
    pm.world = forward_kinematics(model.mesh, pose);
    pm.restWorld = rest_world_transforms(model.mesh);
    pm.skin.resize(pm.world.size());
    for (std::size_t j = 0; j < pm.world.size(); ++j)
        pm.skin[j] = pm.world[j] * pm.restWorld[j].inverse();
    pm.canon = model.canonical_vertices();
    pm.posed.resize(pm.canon.size());
    for (std::size_t v = 0; v < pm.canon.size(); ++v) {
        Vec3 acc = Vec3::Zero();
        for (const auto &jw : model.mesh.skin_weights[v])
            acc += jw.weight * pm.skin[jw.joint].apply(pm.canon[v]);
        pm.posed[v] = acc;
    }
    return pm;
}

struct ForwardPass {
    PosedMesh mesh;
    DualEnvironment env;
    LightingNet::Trace trace;
    std::vector<SplatState> states;
    std::vector<ScreenSplat> splats;
    std::vector<int> splatGaussian;
    RenderedImage image;
};

ForwardPass run_forward(const AvatarModel &model, const PoseFrame &pose, const Camera &cam,
                        const RenderSettings &settings, const RenderOptions &options) {
    ForwardPass fp;
    fp.mesh = pose_mesh(model, pose);
    if (options.environment_override) {
        fp.env = *options.environment_override;
    } else {
        const Eigen::VectorXd out = model.lighting.forward(model.lighting.features(pose), &fp.trace);
        fp.env = model.lighting.split(out);
    }
    fp.states.reserve(model.gaussians.size());
    for (std::size_t i = 0; i < model.gaussians.size(); ++i) {
        fp.states.push_back(splat_state(model, static_cast<int>(i), fp.mesh.canon, fp.mesh.posed, fp.env));
        const SplatState &st = fp.states.back();
        auto ss = project_gaussian(cam, st.center, st.cov, st.color, st.opacity, settings);
        if (ss) {
            fp.splats.push_back(*ss);
            fp.splatGaussian.push_back(static_cast<int>(i));
        }
    }
    fp.image = options.reference ? rasterize_reference(fp.splats, cam, settings)
                                 : rasterize(fp.splats, cam, settings);
    return fp;
}

double frobenius(const Mat3 &a, const Mat3 &b) { return (a.array() * b.array()).sum(); }

} // namespace

LossReport reconstruction_loss(const RenderedImage &rendered, const Image &target, double lambda) {
    return loss_impl(rendered, target, lambda, nullptr);
}

LossReport reconstruction_loss(const RenderedImage &rendered, const Image &target, double lambda,
                               std::vector<double> &gradRgb) {
    return loss_impl(rendered, target, lambda, &gradRgb);
}

std::vector<Vec3> AvatarModel::canonical_vertices() const {
    std::vector<Vec3> out = mesh.rest_vertices;
    if (vertex_offsets.size() == out.size())
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] += vertex_offsets[i];
    return out;
}

DeformedMesh AvatarModel::canonical_surface() const { return build_surface(mesh.faces, canonical_vertices()); }

PoseFrame AvatarModel::refined_pose(const PoseFrame &pose, int frame) const {
    PoseFrame out = pose;
    if (frame < 0 || frame >= static_cast<int>(pose_refinements.size()))
        return out;
    const PoseRefinement &r = pose_refinements[frame];
    for (std::size_t j = 0; j < out.joint_rotations.size() && j < r.joints.size(); ++j)
        out.joint_rotations[j] += r.joints[j];
    out.root_translation += r.root;
    return out;
}

void AvatarModel::reset_refinements(int frameCount) {
    pose_refinements.assign(static_cast<std::size_t>(frameCount), {});
    for (auto &r : pose_refinements)
        r.joints.assign(static_cast<std::size_t>(mesh.joint_count()), Vec3::Zero());
}

void AvatarModel::validate() const {
    mesh.validate();
    if (vertex_offsets.size() != mesh.rest_vertices.size())
        throw DimensionError("vertex offset count differs from vertex count");
    for (const auto &o : vertex_offsets)
        if (!o.allFinite())
            throw NumericError("non-finite canonical vertex offset");
    validate_gaussians(gaussians, mesh.face_count());
    lighting.validate();
    if (lighting.joint_count() != mesh.joint_count())
        throw DimensionError("lighting net joint count differs from the rig");
    for (const auto &r : pose_refinements) {
        if (static_cast<int>(r.joints.size()) != mesh.joint_count())
            throw DimensionError("pose refinement joint count differs from the rig");
        for (const auto &v : r.joints)
            if (!v.allFinite())
                throw NumericError("non-finite pose refinement");
        if (!r.root.allFinite())
            throw NumericError("non-finite pose refinement");
    }
}

AvatarModel create_model(const ArticulatedMesh &mesh, int frameCount, const ModelOptions &options, Rng &rng) {
    AvatarModel m;
    m.mesh = mesh;
    if (m.mesh.face_side_labels.empty())
        m.mesh.face_side_labels.assign(mesh.faces.size(), FaceSide::palm);
    m.surface = options.surface;
    m.vertex_offsets.assign(mesh.rest_vertices.size(), Vec3::Zero());
    m.gaussians = initialize_gaussians(m.canonical_surface(), options.surface);
    const ShCoefficients base = constant_environment(options.sh_order, options.base_irradiance);
    m.lighting = LightingNet::create(mesh.joint_count(), options.sh_order, options.hidden, options.activation,
                                     options.include_root_translation, rng, {base, base},
                                     options.output_weight_scale);
    m.reset_refinements(frameCount);
    return m;
}

// ---------------------------------------------------------------------------

ParameterLayout::ParameterLayout(const AvatarModel &model) {
    mGaussians = model.gaussians.size();
    mVertices = model.mesh.rest_vertices.size();
    mFrames = model.pose_refinements.size();
    mJoints = static_cast<std::size_t>(model.mesh.joint_count());
    auto add = [&](std::string name, std::size_t n) {
        mBlocks.push_back({std::move(name), mSize, n});
        mSize += n;
    };
    add("gaussians.bary_logits", mGaussians * 3);
    add("gaussians.log_scales", mGaussians * 2);
    add("gaussians.rotation_phi", mGaussians);
    add("gaussians.offset_logit", mGaussians);
    add("gaussians.albedo_logits", mGaussians * 3);
    add("gaussians.opacity_logit", mGaussians);
    add("canonical_vertex_offsets", mVertices * 3);
    const auto &layers = model.lighting.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        add("lighting_net.layer" + std::to_string(i) + ".weight", static_cast<std::size_t>(layers[i].weight.size()));
        add("lighting_net.layer" + std::to_string(i) + ".bias", static_cast<std::size_t>(layers[i].bias.size()));
    }
    add("pose_refinements.joints", mFrames * mJoints * 3);
    add("pose_refinements.root", mFrames * 3);
}

const ParameterBlock &ParameterLayout::block(const std::string &name) const {
    for (const auto &b : mBlocks)
        if (b.name == name)
            return b;
    throw DomainError("unknown parameter block " + name);
}

const std::string &ParameterLayout::block_of(std::size_t index) const {
    for (const auto &b : mBlocks)
        if (index >= b.offset && index < b.offset + b.size)
            return b.name;
    throw DimensionError("parameter index out of range");
}

std::vector<double> ParameterLayout::gather(const AvatarModel &model) const {
    if (model.gaussians.size() != mGaussians || model.pose_refinements.size() != mFrames)
        throw DimensionError("model does not match the parameter layout");
    std::vector<double> out(mSize);
    double *p = out.data();
    for (const auto &g : model.gaussians)
        for (int k = 0; k < 3; ++k)
            *p++ = g.bary_logits[k];
    for (const auto &g : model.gaussians)
        for (int k = 0; k < 2; ++k)
            *p++ = g.log_scales[k];
    for (const auto &g : model.gaussians)
        *p++ = g.rotation_phi;
    for (const auto &g : model.gaussians)
        *p++ = g.offset_logit;
    for (const auto &g : model.gaussians)
        for (int k = 0; k < 3; ++k)
            *p++ = g.albedo_logits[k];
    for (const auto &g : model.gaussians)
        *p++ = g.opacity_logit;
    for (const auto &o : model.vertex_offsets)
        for (int k = 0; k < 3; ++k)
            *p++ = o[k];
    const std::size_t np = static_cast<std::size_t>(model.lighting.parameter_count());
    model.lighting.gather(std::span<double>(p, np));
    p += np;
    for (const auto &r : model.pose_refinements)
        for (const auto &v : r.joints)
            for (int k = 0; k < 3; ++k)
                *p++ = v[k];
    for (const auto &r : model.pose_refinements)
        for (int k = 0; k < 3; ++k)
            *p++ = r.root[k];
    return out;
}

void ParameterLayout::scatter(std::span<const double> values, AvatarModel &model) const {
    if (values.size() != mSize || model.gaussians.size() != mGaussians || model.pose_refinements.size() != mFrames)
        throw DimensionError("values do not match the parameter layout");
    const double *p = values.data();
    for (auto &g : model.gaussians)
        for (int k = 0; k < 3; ++k)
            g.bary_logits[k] = *p++;
    for (auto &g : model.gaussians)
        for (int k = 0; k < 2; ++k)
            g.log_scales[k] = *p++;
    for (auto &g : model.gaussians)
        g.rotation_phi = *p++;
    for (auto &g : model.gaussians)
        g.offset_logit = *p++;
    for (auto &g : model.gaussians)
        for (int k = 0; k < 3; ++k)
            g.albedo_logits[k] = *p++;
    for (auto &g : model.gaussians)
        g.opacity_logit = *p++;
    for (auto &o : model.vertex_offsets)
        for (int k = 0; k < 3; ++k)
            o[k] = *p++;
    const std::size_t np = static_cast<std::size_t>(model.lighting.parameter_count());
    model.lighting.scatter(std::span<const double>(p, np));
    p += np;
    for (auto &r : model.pose_refinements)
        for (auto &v : r.joints)
            for (int k = 0; k < 3; ++k)
                v[k] = *p++;
    for (auto &r : model.pose_refinements)
        for (int k = 0; k < 3; ++k)
            r.root[k] = *p++;
}

std::vector<double> expand_learning_rates(const ParameterLayout &layout,
                                          const std::map<std::string, double> &rates) {
    std::vector<double> out(layout.size(), 0.0);
    for (const auto &b : layout.blocks()) {
        double lr = 0.0;
        std::size_t best = 0;
        bool found = false;
        for (const auto &[key, value] : rates) {
            bool match = false;
            if (!key.empty() && key.back() == '*')
                match = b.name.compare(0, key.size() - 1, key, 0, key.size() - 1) == 0;
            else
                match = key == b.name;
            if (match && (!found || key.size() > best)) {
                lr = value;
                best = key.size();
                found = true;
            }
        }
        std::fill(out.begin() + static_cast<std::ptrdiff_t>(b.offset),
                  out.begin() + static_cast<std::ptrdiff_t>(b.offset + b.size), lr);
    }
    return out;
}

// ---------------------------------------------------------------------------

FrameRender render_frame(const AvatarModel &model, const PoseFrame &pose, int frame, const Camera &cam,
                         const RenderSettings &settings, const RenderOptions &options) {
    cam.validate();
    ForwardPass fp = run_forward(model, model.refined_pose(pose, frame), cam, settings, options);
    FrameRender out;
    out.image = std::move(fp.image);
    out.splats = std::move(fp.splats);
    out.splat_gaussian = std::move(fp.splatGaussian);
    out.environment = std::move(fp.env);
    return out;
}

FrameEvaluation evaluate_frame(const AvatarModel &model, const ParameterLayout &layout, const PoseFrame &pose,
                               int frame, const Camera &cam, const Image &target,
                               const RenderSettings &settings, const LossWeights &weights,
                               std::span<double> grad) {
    cam.validate();
    const PoseFrame refined = model.refined_pose(pose, frame);
    ForwardPass fp = run_forward(model, refined, cam, settings, {});
    const bool wantGrad = !grad.empty();
    if (wantGrad && grad.size() != layout.size())
        throw DimensionError("gradient buffer does not match the parameter layout");

    FrameEvaluation ev;
    std::vector<double> gradRgb;
    ev.loss = wantGrad ? reconstruction_loss(fp.image, target, weights.lambda_dssim, gradRgb)
                       : reconstruction_loss(fp.image, target, weights.lambda_dssim);

    const bool hasFrame = frame >= 0 && frame < static_cast<int>(model.pose_refinements.size());
    double poseReg = 0.0;
    if (hasFrame) {
        const PoseRefinement &r = model.pose_refinements[frame];
        for (const auto &v : r.joints)
            poseReg += v.squaredNorm();
        poseReg += r.root.squaredNorm();
    }
    double offsetReg = 0.0;
    for (const auto &o : model.vertex_offsets)
        offsetReg += o.squaredNorm();
    ev.loss.regularizers["pose_refinement"] = weights.pose_refinement * poseReg;
    ev.loss.regularizers["vertex_offset"] = weights.vertex_offset * offsetReg;
    ev.loss.total += weights.pose_refinement * poseReg + weights.vertex_offset * offsetReg;
    ev.image = std::move(fp.image);

    const std::size_t ng = model.gaussians.size();
    ev.mean2d_grad_norm.assign(ng, 0.0);
    ev.visible.assign(ng, 0);
    for (int gi : fp.splatGaussian)
        ev.visible[gi] = 1;
    if (!wantGrad)
        return ev;

    const std::size_t nv = model.mesh.rest_vertices.size();
    const int nj = model.mesh.joint_count();
    const int nb = sh_basis_count(model.lighting.order());
    const auto blk = [&](const char *name) { return layout.block(name).offset; };
    const std::size_t oBary = blk("gaussians.bary_logits"), oScale = blk("gaussians.log_scales"),
                      oPhi = blk("gaussians.rotation_phi"), oOffset = blk("gaussians.offset_logit"),
                      oAlbedo = blk("gaussians.albedo_logits"), oOpacity = blk("gaussians.opacity_logit"),
                      oVerts = blk("canonical_vertex_offsets"), oJoints = blk("pose_refinements.joints"),
                      oRoot = blk("pose_refinements.root");
    const std::size_t oNet = layout.block("lighting_net.layer0.weight").offset;

    // Regularizers.
    if (hasFrame) {
        const PoseRefinement &r = model.pose_refinements[frame];
        for (int j = 0; j < nj; ++j)
            for (int k = 0; k < 3; ++k)
                grad[oJoints + (static_cast<std::size_t>(frame) * nj + j) * 3 + k] +=
                    2.0 * weights.pose_refinement * r.joints[j][k];
        for (int k = 0; k < 3; ++k)
            grad[oRoot + static_cast<std::size_t>(frame) * 3 + k] += 2.0 * weights.pose_refinement * r.root[k];
    }
    for (std::size_t v = 0; v < nv; ++v)
        for (int k = 0; k < 3; ++k)
            grad[oVerts + v * 3 + k] += 2.0 * weights.vertex_offset * model.vertex_offsets[v][k];

    const std::vector<SplatGradient> sg = rasterize_backward(fp.splats, cam, settings, gradRgb);

    std::vector<Vec3> gCanon(nv, Vec3::Zero()), gPosed(nv, Vec3::Zero());
    std::vector<double> gEnv(static_cast<std::size_t>(model.lighting.output_size()), 0.0);
    std::vector<double> basis(static_cast<std::size_t>(nb));
    std::vector<Vec3> basisGrad(static_cast<std::size_t>(nb));

    for (std::size_t si = 0; si < fp.splats.size(); ++si) {
        const int gi = fp.splatGaussian[si];
        const SplatState &st = fp.states[gi];
        const SurfaceGaussian &g = model.gaussians[gi];
        const auto &face = model.mesh.faces[st.face];
        ev.mean2d_grad_norm[gi] = sg[si].mean2d.norm();

        const ProjectionGradient pg =
            project_gaussian_backward(cam, st.center, st.cov, sg[si].mean2d, sg[si].cov2d);
        const Vec3 dColor = sg[si].color;

        // Shading.
        Vec3 dNormal = Vec3::Zero();
        Vec3 dIrr = Vec3::Zero();
        for (int c = 0; c < 3; ++c) {
            const double irr = std::max(0.0, st.irradiance[c]);
            grad[oAlbedo + gi * 3 + c] += dColor[c] * irr * st.albedo[c] * (1.0 - st.albedo[c]);
            if (st.irradiance[c] > 0.0)
                dIrr[c] = dColor[c] * st.albedo[c];
        }
        if (dIrr.squaredNorm() > 0.0) {
            sh_basis_eval(st.normal, model.lighting.order(), basis, basisGrad);
            const ShCoefficients &l = fp.env.side(st.side);
            const std::size_t envBase = st.side == FaceSide::palm ? 0 : static_cast<std::size_t>(3 * nb);
            for (int c = 0; c < 3; ++c) {
                if (dIrr[c] == 0.0)
                    continue;
                for (int k = 0; k < nb; ++k) {
                    gEnv[envBase + static_cast<std::size_t>(c * nb + k)] += dIrr[c] * basis[k];
                    dNormal += dIrr[c] * l.at(c, k) * basisGrad[k];
                }
            }
        }
        grad[oOpacity + gi] += sg[si].opacity * st.opacity * (1.0 - st.opacity);

        // Center.
        const Vec3 &dC = pg.center;
        Vec3 dw;
        for (int i = 0; i < 3; ++i) {
            dw[i] = dC.dot(fp.mesh.posed[face[i]]);
            gPosed[face[i]] += st.w[i] * dC;
        }
        const double wdw = st.w.dot(dw);
        for (int i = 0; i < 3; ++i)
            grad[oBary + gi * 3 + i] += st.w[i] * (dw[i] - wdw);
        grad[oOffset + gi] += dC.dot(st.normal) * model.surface.z_max * st.offsetSig * (1.0 - st.offsetSig);
        dNormal += st.offset * dC;

        // Covariance K Sigma_c K^T.
        const Mat3 gCov = 0.5 * (pg.covariance + pg.covariance.transpose());
        const Mat32 dK = 2.0 * gCov * st.k * st.sigmaC;
        const Mat2 dSigma = st.k.transpose() * gCov * st.k;
        for (int i = 0; i < 2; ++i) {
            const Vec2 r = st.rot.col(i);
            grad[oScale + gi * 2 + i] += 2.0 * st.s[i] * st.s[i] * r.dot(dSigma * r);
        }
        Mat2 drot;
        drot << -std::sin(g.rotation_phi), -std::cos(g.rotation_phi), std::cos(g.rotation_phi),
            -std::sin(g.rotation_phi);
        const Mat2 d = Vec2(st.s.x() * st.s.x(), st.s.y() * st.s.y()).asDiagonal();
        grad[oPhi + gi] += 2.0 * (dSigma.array() * (drot * d * st.rot.transpose()).array()).sum();

        const Mat32 dEd = dK * st.minv.transpose();
        Mat32 ed;
        ed.col(0) = st.e1d;
        ed.col(1) = st.e2d;
        const Mat2 dN = ed.transpose() * dK;
        const Mat2 dM = -st.minv.transpose() * dN * st.minv.transpose();
        Vec3 ge1c = Vec3::Zero(), ge2c = Vec3::Zero();
        edge_matrix_backward(st.e1c, st.e2c, dM, ge1c, ge2c);
        gCanon[face[0]] -= ge1c + ge2c;
        gCanon[face[1]] += ge1c;
        gCanon[face[2]] += ge2c;

        // Normal.
        const Vec3 dx = (dNormal - st.normal * st.normal.dot(dNormal)) / st.xn;
        Vec3 ge1d = dEd.col(0) + st.e2d.cross(dx);
        Vec3 ge2d = dEd.col(1) + dx.cross(st.e1d);
        gPosed[face[0]] -= ge1d + ge2d;
        gPosed[face[1]] += ge1d;
        gPosed[face[2]] += ge2d;
    }

    // Skinning.
    std::vector<Mat3> gSkinR(static_cast<std::size_t>(nj), Mat3::Zero());
    std::vector<Vec3> gSkinT(static_cast<std::size_t>(nj), Vec3::Zero());
    for (std::size_t v = 0; v < nv; ++v) {
        if (gPosed[v].squaredNorm() == 0.0)
            continue;
        for (const auto &jw : model.mesh.skin_weights[v]) {
            const RigidTransform &s = fp.mesh.skin[jw.joint];
            gCanon[v] += jw.weight * (s.rotation.transpose() * gPosed[v]);
            gSkinR[jw.joint] += jw.weight * gPosed[v] * fp.mesh.canon[v].transpose();
            gSkinT[jw.joint] += jw.weight * gPosed[v];
        }
    }
    for (std::size_t v = 0; v < nv; ++v)
        for (int k = 0; k < 3; ++k)
            grad[oVerts + v * 3 + k] += gCanon[v][k];

    // S = W B^-1: R_S = R_W R_B^T, t_S = t_W - R_W R_B^T t_B.
    std::vector<Mat3> gWR(static_cast<std::size_t>(nj));
    std::vector<Vec3> gWT(static_cast<std::size_t>(nj));
    for (int j = 0; j < nj; ++j) {
        const RigidTransform &b = fp.mesh.restWorld[j];
        gWT[j] = gSkinT[j];
        gWR[j] = gSkinR[j] * b.rotation - gSkinT[j] * (b.rotation.transpose() * b.translation).transpose();
    }

    // Lighting net.
    std::vector<Vec3> gOmega(static_cast<std::size_t>(nj), Vec3::Zero());
    Vec3 gRootT = Vec3::Zero();
    {
        const Eigen::VectorXd outGrad = Eigen::Map<const Eigen::VectorXd>(gEnv.data(), static_cast<Eigen::Index>(gEnv.size()));
        const std::size_t np = static_cast<std::size_t>(model.lighting.parameter_count());
        const Eigen::VectorXd gin = model.lighting.backward(fp.trace, outGrad, grad.subspan(oNet, np));
        for (int j = 0; j < nj; ++j)
            gOmega[j] += gin.segment<3>(3 * j);
        if (model.lighting.include_root_translation())
            gRootT += gin.tail<3>();
    }

    // Forward kinematics, children before parents.
    const std::vector<int> order = model.mesh.joint_order();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const int j = *it;
        const RigidTransform &local = model.mesh.joint_rest_transforms[j];
        const Vec3 &omega = refined.joint_rotations[j];
        const Mat3 rot = axis_angle_to_matrix(omega);
        const auto dRot = axis_angle_jacobian(omega);
        const int p = model.mesh.joint_parents[j];
        const Mat3 parentR = p < 0 ? Mat3::Identity() : fp.mesh.world[p].rotation;
        const Mat3 gRot = (parentR * local.rotation).transpose() * gWR[j];
        for (int k = 0; k < 3; ++k)
            gOmega[j][k] += frobenius(gRot, dRot[k]);
        if (p < 0) {
            gRootT += gWT[j];
        } else {
            gWR[p] += gWR[j] * (local.rotation * rot).transpose() + gWT[j] * local.translation.transpose();
            gWT[p] += gWT[j];
        }
    }
    if (hasFrame) {
        for (int j = 0; j < nj; ++j)
            for (int k = 0; k < 3; ++k)
                grad[oJoints + (static_cast<std::size_t>(frame) * nj + j) * 3 + k] += gOmega[j][k];
        for (int k = 0; k < 3; ++k)
            grad[oRoot + static_cast<std::size_t>(frame) * 3 + k] += gRootT[k];
    }

    for (const auto &b : layout.blocks())
        for (std::size_t i = b.offset; i < b.offset + b.size; ++i)
            if (!std::isfinite(grad[i]))
                throw NumericError("non-finite gradient in block " + b.name);
    return ev;
}

double finite_difference(const std::function<double(std::span<const double>)> &f, std::vector<double> &x,
                         std::size_t index, double h) {
    if (!(h > 0.0))
        throw DomainError("finite-difference step must be positive");
    if (index >= x.size())
        throw DimensionError("finite-difference index out of range");
    const double x0 = x[index];
    x[index] = x0 + h;
    const double fp = f(x);
    x[index] = x0 - h;
    const double fm = f(x);
    x[index] = x0;
    return (fp - fm) / (2.0 * h);
}

void adam_step(std::span<double> params, std::span<const double> grads, OptimizerState &state,
               std::span<const double> learningRates, const AdamSettings &settings) {
    const std::size_t n = params.size();
    if (grads.size() != n || learningRates.size() != n)
        throw DimensionError("adam inputs differ in length");
    if (state.m.size() != n || state.v.size() != n)
        throw DimensionError("optimizer moments differ from parameter count");
    ++state.step;
    const double bc1 = 1.0 - std::pow(settings.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(settings.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < n; ++i) {
        state.m[i] = settings.beta1 * state.m[i] + (1.0 - settings.beta1) * grads[i];
        state.v[i] = settings.beta2 * state.v[i] + (1.0 - settings.beta2) * grads[i] * grads[i];
        if (learningRates[i] == 0.0)
            continue;
        const double mh = state.m[i] / bc1, vh = state.v[i] / bc2;
        params[i] -= learningRates[i] * mh / (std::sqrt(vh) + settings.epsilon);
    }
}

} // namespace handsplat
