// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include <handsplat/checkpoint.hpp>

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace handsplat {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'H', 'S', 'P', 'L', 'A', 'T', 'C', 'K'};

template <typename T>
void put_le(std::string &out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(b, b + sizeof(T));
    out.append(reinterpret_cast<const char *>(b), sizeof(T));
}

template <typename T>
T get_le(const char *p) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

class BlobWriter {
  public:
    void f64(const std::string &name, std::vector<std::size_t> shape, const std::vector<double> &data) {
        add(name, "f64", std::move(shape), data.size());
        for (double v : data)
            put_le(mData, v);
    }
    void i64(const std::string &name, std::vector<std::size_t> shape, const std::vector<std::int64_t> &data) {
        add(name, "i64", std::move(shape), data.size());
        for (std::int64_t v : data)
            put_le(mData, v);
    }
    json manifest() const { return mManifest; }
    const std::string &data() const { return mData; }

  private:
    void add(const std::string &name, const char *dtype, std::vector<std::size_t> shape, std::size_t count) {
        std::size_t expect = 1;
        for (std::size_t s : shape)
            expect *= s;
        if (expect != count)
            throw DimensionError("blob " + name + " shape does not match its data");
        mManifest[name] = {{"dtype", dtype}, {"shape", shape}, {"offset", mData.size()}, {"count", count}};
    }
    json mManifest = json::object();
    std::string mData;
};

class BlobReader {
  public:
    BlobReader(const json &manifest, const char *data, std::size_t size)
        : mManifest(manifest), mData(data), mSize(size) {}

    std::vector<double> f64(const std::string &name, std::size_t expectCount) const {
        const auto [off, count] = locate(name, "f64", expectCount);
        std::vector<double> out(count);
        for (std::size_t i = 0; i < count; ++i)
            out[i] = get_le<double>(mData + off + 8 * i);
        return out;
    }
    std::vector<std::int64_t> i64(const std::string &name, std::size_t expectCount) const {
        const auto [off, count] = locate(name, "i64", expectCount);
        std::vector<std::int64_t> out(count);
        for (std::size_t i = 0; i < count; ++i)
            out[i] = get_le<std::int64_t>(mData + off + 8 * i);
        return out;
    }
    bool has(const std::string &name) const { return mManifest.contains(name); }

  private:
    std::pair<std::size_t, std::size_t> locate(const std::string &name, const char *dtype,
                                               std::size_t expectCount) const {
        if (!mManifest.contains(name))
            throw IoError("checkpoint lacks blob " + name);
        const json &b = mManifest.at(name);
        if (b.at("dtype").get<std::string>() != dtype)
            throw IoError("checkpoint blob " + name + " has the wrong type");
        const std::size_t off = b.at("offset").get<std::size_t>(), count = b.at("count").get<std::size_t>();
        if (expectCount != static_cast<std::size_t>(-1) && count != expectCount)
            throw IoError("checkpoint blob " + name + " has " + std::to_string(count) + " values, expected " +
                          std::to_string(expectCount));
        if (off > mSize || count > (mSize - off) / 8)
            throw IoError("checkpoint blob " + name + " runs past the end of the file");
        return {off, count};
    }
    const json &mManifest;
    const char *mData;
    std::size_t mSize;
};

constexpr std::size_t kAny = static_cast<std::size_t>(-1);

} // namespace

std::string serialize_checkpoint(const Checkpoint &ckpt) {
    const AvatarModel &m = ckpt.model;
    const std::size_t nv = m.mesh.rest_vertices.size(), nf = m.mesh.faces.size(),
                      nj = static_cast<std::size_t>(m.mesh.joint_count()), ng = m.gaussians.size(),
                      nt = m.pose_refinements.size();
    BlobWriter w;
    {
        std::vector<double> v;
        for (const auto &p : m.mesh.rest_vertices)
            v.insert(v.end(), {p.x(), p.y(), p.z()});
        w.f64("mesh.rest_vertices", {nv, 3}, v);
        std::vector<std::int64_t> f;
        for (const auto &t : m.mesh.faces)
            f.insert(f.end(), {t[0], t[1], t[2]});
        w.i64("mesh.faces", {nf, 3}, f);
        w.i64("mesh.joint_parents", {nj}, {m.mesh.joint_parents.begin(), m.mesh.joint_parents.end()});
        std::vector<double> rt;
        for (const auto &t : m.mesh.joint_rest_transforms)
            for (int r = 0; r < 3; ++r)
                rt.insert(rt.end(), {t.rotation(r, 0), t.rotation(r, 1), t.rotation(r, 2), t.translation[r]});
        w.f64("mesh.joint_rest_transforms", {nj, 12}, rt);
        std::vector<std::int64_t> rows{0}, joints;
        std::vector<double> weights;
        for (const auto &row : m.mesh.skin_weights) {
            for (const auto &jw : row) {
                joints.push_back(jw.joint);
                weights.push_back(jw.weight);
            }
            rows.push_back(static_cast<std::int64_t>(joints.size()));
        }
        w.i64("mesh.skin_weight_rows", {rows.size()}, rows);
        w.i64("mesh.skin_weight_joints", {joints.size()}, joints);
        w.f64("mesh.skin_weight_values", {weights.size()}, weights);
        std::vector<std::int64_t> sides;
        for (FaceSide s : m.mesh.face_side_labels)
            sides.push_back(static_cast<std::int64_t>(s));
        w.i64("mesh.face_side_labels", {sides.size()}, sides);
    }
    {
        std::vector<double> v;
        for (const auto &p : m.vertex_offsets)
            v.insert(v.end(), {p.x(), p.y(), p.z()});
        w.f64("vertex_offsets", {m.vertex_offsets.size(), 3}, v);
    }
    {
        std::vector<std::int64_t> faces;
        std::vector<double> params;
        for (const auto &g : m.gaussians) {
            faces.push_back(g.face_id);
            params.insert(params.end(), {g.bary_logits.x(), g.bary_logits.y(), g.bary_logits.z(), g.log_scales.x(),
                                         g.log_scales.y(), g.rotation_phi, g.offset_logit, g.albedo_logits.x(),
                                         g.albedo_logits.y(), g.albedo_logits.z(), g.opacity_logit});
        }
        w.i64("gaussians.face_id", {ng}, faces);
        w.f64("gaussians.params", {ng, static_cast<std::size_t>(kGaussianParamCount)}, params);
    }
    json layers = json::array();
    const auto &net = m.lighting.layers();
    for (std::size_t i = 0; i < net.size(); ++i) {
        const auto rows = static_cast<std::size_t>(net[i].weight.rows()),
                   cols = static_cast<std::size_t>(net[i].weight.cols());
        std::vector<double> wv;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
                wv.push_back(net[i].weight(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
        w.f64("lighting.layer" + std::to_string(i) + ".weight", {rows, cols}, wv);
        w.f64("lighting.layer" + std::to_string(i) + ".bias", {rows},
              std::vector<double>(net[i].bias.data(), net[i].bias.data() + rows));
        layers.push_back({rows, cols});
    }
    {
        std::vector<double> joints, root;
        for (const auto &r : m.pose_refinements) {
            for (const auto &v : r.joints)
                joints.insert(joints.end(), {v.x(), v.y(), v.z()});
            root.insert(root.end(), {r.root.x(), r.root.y(), r.root.z()});
        }
        w.f64("pose_refinements.joints", {nt, nj, 3}, joints);
        w.f64("pose_refinements.root", {nt, 3}, root);
    }
    json manifest;
    manifest["format"] = "handsplat-checkpoint";
    manifest["version"] = kCheckpointVersion;
    manifest["seed"] = ckpt.seed;
    manifest["step"] = ckpt.step;
    manifest["config"] = ckpt.config_toml;
    manifest["surface"] = {{"z_max", m.surface.z_max},
                           {"det_epsilon", m.surface.det_epsilon},
                           {"gaussians_per_face", m.surface.gaussians_per_face},
                           {"init_scale_factor", m.surface.init_scale_factor},
                           {"init_opacity", m.surface.init_opacity},
                           {"init_albedo", m.surface.init_albedo}};
    manifest["lighting"] = {{"order", m.lighting.order()},
                            {"activation", to_string(m.lighting.activation())},
                            {"include_root_translation", m.lighting.include_root_translation()},
                            {"joint_count", m.lighting.joint_count()},
                            {"layers", layers}};
    manifest["counts"] = {{"vertices", nv}, {"faces", nf}, {"joints", nj}, {"gaussians", ng}, {"frames", nt}};
    if (ckpt.optimizer) {
        const OptimizerState &o = *ckpt.optimizer;
        w.f64("optimizer.m", {o.m.size()}, o.m);
        w.f64("optimizer.v", {o.v.size()}, o.v);
        manifest["optimizer_step"] = o.step;
    }
    manifest["blobs"] = w.manifest();

    const std::string text = manifest.dump();
    std::string out(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, text.size());
    out += text;
    out += w.data();
    return out;
}

Checkpoint deserialize_checkpoint(const std::string &bytes) {
    constexpr std::size_t header = sizeof(kMagic) + 4 + 8;
    if (bytes.size() < header || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw IoError("not a checkpoint file");
    const auto version = get_le<std::uint32_t>(bytes.data() + 8);
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    const auto mlen = get_le<std::uint64_t>(bytes.data() + 12);
    if (mlen > bytes.size() - header)
        throw IoError("truncated checkpoint manifest");
    json manifest;
    try {
        manifest = json::parse(bytes.begin() + header, bytes.begin() + static_cast<std::ptrdiff_t>(header + mlen));
    } catch (const json::exception &e) {
        throw IoError(std::string("bad checkpoint manifest: ") + e.what());
    }
    const char *data = bytes.data() + header + mlen;
    const std::size_t dataSize = bytes.size() - header - mlen;

    Checkpoint ck;
    try {
        const BlobReader r(manifest.at("blobs"), data, dataSize);
        const json &counts = manifest.at("counts");
        const std::size_t nv = counts.at("vertices"), nf = counts.at("faces"), nj = counts.at("joints"),
                          ng = counts.at("gaussians"), nt = counts.at("frames");
        ck.seed = manifest.at("seed").get<std::uint64_t>();
        ck.step = manifest.at("step").get<std::int64_t>();
        ck.config_toml = manifest.at("config").get<std::string>();
        AvatarModel &m = ck.model;
        const json &s = manifest.at("surface");
        m.surface.z_max = s.at("z_max");
        m.surface.det_epsilon = s.at("det_epsilon");
        m.surface.gaussians_per_face = s.at("gaussians_per_face");
        m.surface.init_scale_factor = s.at("init_scale_factor");
        m.surface.init_opacity = s.at("init_opacity");
        m.surface.init_albedo = s.at("init_albedo");

        const auto rv = r.f64("mesh.rest_vertices", nv * 3);
        for (std::size_t i = 0; i < nv; ++i)
            m.mesh.rest_vertices.emplace_back(rv[3 * i], rv[3 * i + 1], rv[3 * i + 2]);
        const auto fv = r.i64("mesh.faces", nf * 3);
        for (std::size_t i = 0; i < nf; ++i)
            m.mesh.faces.push_back({static_cast<int>(fv[3 * i]), static_cast<int>(fv[3 * i + 1]),
                                    static_cast<int>(fv[3 * i + 2])});
        for (auto p : r.i64("mesh.joint_parents", nj))
            m.mesh.joint_parents.push_back(static_cast<int>(p));
        const auto rt = r.f64("mesh.joint_rest_transforms", nj * 12);
        for (std::size_t j = 0; j < nj; ++j) {
            RigidTransform t;
            for (int row = 0; row < 3; ++row) {
                for (int c = 0; c < 3; ++c)
                    t.rotation(row, c) = rt[j * 12 + row * 4 + c];
                t.translation[row] = rt[j * 12 + row * 4 + 3];
            }
            m.mesh.joint_rest_transforms.push_back(t);
        }
        const auto rows = r.i64("mesh.skin_weight_rows", nv + 1);
        const auto joints = r.i64("mesh.skin_weight_joints", kAny);
        const auto weights = r.f64("mesh.skin_weight_values", joints.size());
        for (std::size_t v = 0; v < nv; ++v) {
            std::vector<JointWeight> row;
            if (rows[v] < 0 || rows[v + 1] < rows[v] || static_cast<std::size_t>(rows[v + 1]) > joints.size())
                throw IoError("corrupt skin weight rows");
            for (auto k = rows[v]; k < rows[v + 1]; ++k)
                row.push_back({static_cast<int>(joints[k]), weights[k]});
            m.mesh.skin_weights.push_back(std::move(row));
        }
        for (auto sd : r.i64("mesh.face_side_labels", kAny))
            m.mesh.face_side_labels.push_back(sd == 0 ? FaceSide::palm : FaceSide::back);

        const auto off = r.f64("vertex_offsets", nv * 3);
        for (std::size_t i = 0; i < nv; ++i)
            m.vertex_offsets.emplace_back(off[3 * i], off[3 * i + 1], off[3 * i + 2]);

        const auto gf = r.i64("gaussians.face_id", ng);
        const auto gp = r.f64("gaussians.params", ng * kGaussianParamCount);
        for (std::size_t i = 0; i < ng; ++i) {
            const double *p = &gp[i * kGaussianParamCount];
            SurfaceGaussian g;
            g.face_id = static_cast<int>(gf[i]);
            g.bary_logits = Vec3(p[0], p[1], p[2]);
            g.log_scales = Vec2(p[3], p[4]);
            g.rotation_phi = p[5];
            g.offset_logit = p[6];
            g.albedo_logits = Vec3(p[7], p[8], p[9]);
            g.opacity_logit = p[10];
            m.gaussians.push_back(g);
        }

        const json &lj = manifest.at("lighting");
        std::vector<DenseLayer> layers;
        const json &shapes = lj.at("layers");
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            const std::size_t rowsN = shapes[i][0], cols = shapes[i][1];
            const auto wv = r.f64("lighting.layer" + std::to_string(i) + ".weight", rowsN * cols);
            const auto bv = r.f64("lighting.layer" + std::to_string(i) + ".bias", rowsN);
            DenseLayer layer{Eigen::MatrixXd(rowsN, cols), Eigen::VectorXd(rowsN)};
            for (std::size_t a = 0; a < rowsN; ++a) {
                for (std::size_t b = 0; b < cols; ++b)
                    layer.weight(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = wv[a * cols + b];
                layer.bias[static_cast<Eigen::Index>(a)] = bv[a];
            }
            layers.push_back(std::move(layer));
        }
        m.lighting = LightingNet::from_layers(lj.at("joint_count"), lj.at("order"),
                                              parse_activation(lj.at("activation").get<std::string>()),
                                              lj.at("include_root_translation"), std::move(layers));

        const auto pj = r.f64("pose_refinements.joints", nt * nj * 3);
        const auto pr = r.f64("pose_refinements.root", nt * 3);
        for (std::size_t t = 0; t < nt; ++t) {
            PoseRefinement ref;
            for (std::size_t j = 0; j < nj; ++j) {
                const double *p = &pj[(t * nj + j) * 3];
                ref.joints.emplace_back(p[0], p[1], p[2]);
            }
            ref.root = Vec3(pr[3 * t], pr[3 * t + 1], pr[3 * t + 2]);
            m.pose_refinements.push_back(std::move(ref));
        }
        if (manifest.contains("optimizer_step")) {
            OptimizerState o;
            o.m = r.f64("optimizer.m", kAny);
            o.v = r.f64("optimizer.v", o.m.size());
            o.step = manifest.at("optimizer_step");
            ck.optimizer = std::move(o);
        }
    } catch (const json::exception &e) {
        throw IoError(std::string("bad checkpoint manifest: ") + e.what());
    }
    try {
        ck.model.validate();
    } catch (const Error &e) {
        throw IoError(std::string("checkpoint holds an invalid model: ") + e.what());
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ckpt) {
    const std::string bytes = serialize_checkpoint(ckpt);
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out)
            throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        throw IoError("cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot read checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str());
}

} // namespace handsplat
