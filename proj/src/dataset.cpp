// Copyright Contributors to the handsplat project
// SPDX-License-Identifier: Apache-2.0

#include <handsplat/dataset.hpp>

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace handsplat {

using nlohmann::json;

namespace {

json read_json(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DatasetError("missing_file", "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception &e) {
        throw DatasetError("parse", path.filename().string() + ": " + e.what());
    }
}

void write_text(const std::filesystem::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << text;
    if (!out)
        throw IoError("write failed for " + path.string());
}

Vec3 vec3_of(const json &j, const char *what) {
    if (!j.is_array() || j.size() != 3)
        throw DatasetError("parse", std::string(what) + " must be a 3-vector");
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json json_of(const Vec3 &v) { return json::array({v.x(), v.y(), v.z()}); }

RigidTransform transform_of(const json &j, const char *what) {
    if (!j.is_array() || j.size() != 12)
        throw DatasetError("parse", std::string(what) + " must hold 12 numbers (row-major 3x4)");
    RigidTransform t;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c)
            t.rotation(r, c) = j[r * 4 + c].get<double>();
        t.translation[r] = j[r * 4 + 3].get<double>();
    }
    return t;
}

json json_of(const RigidTransform &t) {
    json a = json::array();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c)
            a.push_back(t.rotation(r, c));
        a.push_back(t.translation[r]);
    }
    return a;
}

void check_rotation(const RigidTransform &t, const std::string &what) {
    const Mat3 &r = t.rotation;
    if (!r.allFinite() || !t.translation.allFinite() || (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
        r.determinant() < 0.0)
        throw DatasetError("rig", what + " is not a rigid transform");
}

template <typename Fn>
auto json_guard(const std::filesystem::path &path, Fn fn) {
    try {
        return fn();
    } catch (const json::exception &e) {
        throw DatasetError("parse", path.filename().string() + ": " + e.what());
    }
}

bool is_binary(const Image &m) {
    for (double v : m.data)
        if (v != 0.0 && v != 1.0)
            return false;
    return true;
}

} // namespace

Camera Dataset::camera(int view, int frame) const {
    const CameraView &v = views.at(static_cast<std::size_t>(view));
    Camera c = v.camera;
    if (!v.per_frame_world_to_camera.empty())
        c.world_to_camera = v.per_frame_world_to_camera.at(static_cast<std::size_t>(frame));
    return c;
}

void read_obj(const std::filesystem::path &path, std::vector<Vec3> &vertices,
              std::vector<std::array<int, 3>> &faces) {
    std::ifstream in(path);
    if (!in)
        throw DatasetError("missing_file", "cannot open " + path.string());
    vertices.clear();
    faces.clear();
    std::string line;
    int lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#')
            continue;
        if (tag == "v") {
            Vec3 v;
            if (!(ls >> v.x() >> v.y() >> v.z()) || !v.allFinite())
                throw DatasetError("parse", "bad vertex on OBJ line " + std::to_string(lineNo));
            vertices.push_back(v);
        } else if (tag == "f") {
            std::vector<long> idx;
            std::string tok;
            while (ls >> tok) {
                try {
                    idx.push_back(std::stol(tok.substr(0, tok.find('/'))));
                } catch (const std::exception &) {
                    throw DatasetError("parse", "bad face index on OBJ line " + std::to_string(lineNo));
                }
            }
            if (idx.size() != 3)
                throw DatasetError("mesh", "OBJ line " + std::to_string(lineNo) + " is not a triangle");
            std::array<int, 3> f{};
            for (int k = 0; k < 3; ++k) {
                const long i = idx[k] < 0 ? static_cast<long>(vertices.size()) + idx[k] : idx[k] - 1;
                f[k] = static_cast<int>(i);
            }
            faces.push_back(f);
        }
    }
}

void write_obj(const std::filesystem::path &path, std::span<const Vec3> vertices,
               std::span<const std::array<int, 3>> faces) {
    std::ostringstream os;
    os.precision(17);
    for (const auto &v : vertices)
        os << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const auto &f : faces)
        os << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    write_text(path, os.str());
}

Rig read_rig(const std::filesystem::path &path) {
    const json j = read_json(path);
    return json_guard(path, [&] {
        Rig rig;
        rig.joint_parents = j.at("joint_parents").get<std::vector<int>>();
        for (const auto &t : j.at("joint_rest_transforms"))
            rig.joint_rest_transforms.push_back(transform_of(t, "joint_rest_transforms entry"));
        if (rig.joint_rest_transforms.size() != rig.joint_parents.size())
            throw DatasetError("rig", "joint_rest_transforms and joint_parents differ in length");
        int maxVertex = -1;
        std::vector<std::tuple<int, int, double>> triplets;
        for (const auto &t : j.at("skin_weights")) {
            if (!t.is_array() || t.size() != 3)
                throw DatasetError("parse", "skin_weights entries must be [vertex, joint, weight]");
            triplets.emplace_back(t[0].get<int>(), t[1].get<int>(), t[2].get<double>());
            maxVertex = std::max(maxVertex, std::get<0>(triplets.back()));
        }
        rig.skin_weights.resize(static_cast<std::size_t>(maxVertex + 1));
        for (const auto &[v, jt, w] : triplets) {
            if (v < 0)
                throw DatasetError("skin_weights", "negative vertex index");
            rig.skin_weights[v].push_back({jt, w});
        }
        if (j.contains("face_side_labels")) {
            for (const auto &s : j.at("face_side_labels")) {
                const std::string v = s.get<std::string>();
                if (v == "palm")
                    rig.face_side_labels.push_back(FaceSide::palm);
                else if (v == "back")
                    rig.face_side_labels.push_back(FaceSide::back);
                else
                    throw DatasetError("rig", "face side label must be palm or back");
            }
        }
        if (j.contains("palm_axis"))
            rig.palm_axis = vec3_of(j.at("palm_axis"), "palm_axis");
        return rig;
    });
}

void write_rig(const std::filesystem::path &path, const ArticulatedMesh &mesh, const std::optional<Vec3> &palmAxis) {
    json j;
    j["joint_parents"] = mesh.joint_parents;
    json rt = json::array();
    for (const auto &t : mesh.joint_rest_transforms)
        rt.push_back(json_of(t));
    j["joint_rest_transforms"] = rt;
    json sw = json::array();
    for (std::size_t v = 0; v < mesh.skin_weights.size(); ++v)
        for (const auto &w : mesh.skin_weights[v])
            sw.push_back(json::array({static_cast<int>(v), w.joint, w.weight}));
    j["skin_weights"] = sw;
    if (!mesh.face_side_labels.empty()) {
        json fl = json::array();
        for (FaceSide s : mesh.face_side_labels)
            fl.push_back(s == FaceSide::palm ? "palm" : "back");
        j["face_side_labels"] = fl;
    }
    if (palmAxis)
        j["palm_axis"] = json_of(*palmAxis);
    write_text(path, j.dump(1) + "\n");
}

std::vector<PoseFrame> read_poses(const std::filesystem::path &path) {
    const json j = read_json(path);
    return json_guard(path, [&] {
        std::vector<PoseFrame> out;
        for (const auto &f : j.at("frames")) {
            PoseFrame p;
            for (const auto &r : f.at("joint_rotations"))
                p.joint_rotations.push_back(vec3_of(r, "joint rotation"));
            if (f.contains("root_translation"))
                p.root_translation = vec3_of(f.at("root_translation"), "root_translation");
            try {
                p.normalize();
            } catch (const Error &e) {
                throw DatasetError("pose", "frame " + std::to_string(out.size()) + ": " + e.what());
            }
            out.push_back(std::move(p));
        }
        return out;
    });
}

void write_poses(const std::filesystem::path &path, std::span<const PoseFrame> poses) {
    json frames = json::array();
    for (const auto &p : poses) {
        json rots = json::array();
        for (const auto &r : p.joint_rotations)
            rots.push_back(json_of(r));
        frames.push_back({{"joint_rotations", rots}, {"root_translation", json_of(p.root_translation)}});
    }
    write_text(path, json{{"frames", frames}}.dump(1) + "\n");
}

std::vector<CameraView> read_cameras(const std::filesystem::path &path) {
    const json j = read_json(path);
    return json_guard(path, [&] {
        std::vector<CameraView> out;
        for (const auto &v : j.at("views")) {
            CameraView cv;
            cv.name = v.at("name").get<std::string>();
            if (cv.name.empty() || cv.name.find_first_of("/\\") != std::string::npos || cv.name == "." || cv.name == "..")
                throw DatasetError("camera", "invalid view name '" + cv.name + "'");
            cv.camera.fx = v.at("fx").get<double>();
            cv.camera.fy = v.at("fy").get<double>();
            cv.camera.cx = v.at("cx").get<double>();
            cv.camera.cy = v.at("cy").get<double>();
            cv.camera.width = v.at("width").get<int>();
            cv.camera.height = v.at("height").get<int>();
            cv.camera.world_to_camera = transform_of(v.at("world_to_camera"), "world_to_camera");
            if (v.contains("per_frame_world_to_camera"))
                for (const auto &t : v.at("per_frame_world_to_camera"))
                    cv.per_frame_world_to_camera.push_back(transform_of(t, "per_frame_world_to_camera entry"));
            try {
                cv.camera.validate();
            } catch (const Error &e) {
                throw DatasetError("camera", "view " + cv.name + ": " + e.what());
            }
            out.push_back(std::move(cv));
        }
        if (out.empty())
            throw DatasetError("camera", "no camera views");
        return out;
    });
}

void write_cameras(const std::filesystem::path &path, std::span<const CameraView> views) {
    json arr = json::array();
    for (const auto &v : views) {
        json c{{"name", v.name},
               {"fx", v.camera.fx},
               {"fy", v.camera.fy},
               {"cx", v.camera.cx},
               {"cy", v.camera.cy},
               {"width", v.camera.width},
               {"height", v.camera.height},
               {"world_to_camera", json_of(v.camera.world_to_camera)}};
        if (!v.per_frame_world_to_camera.empty()) {
            json pf = json::array();
            for (const auto &t : v.per_frame_world_to_camera)
                pf.push_back(json_of(t));
            c["per_frame_world_to_camera"] = pf;
        }
        arr.push_back(c);
    }
    write_text(path, json{{"views", arr}}.dump(1) + "\n");
}

ArticulatedMesh load_articulated_mesh(const std::filesystem::path &objPath, const std::filesystem::path &rigPath,
                                      const Vec3 &defaultPalmAxis, std::optional<Vec3> *palmAxisOut) {
    ArticulatedMesh mesh;
    read_obj(objPath, mesh.rest_vertices, mesh.faces);
    for (std::size_t f = 0; f < mesh.faces.size(); ++f)
        for (int k = 0; k < 3; ++k)
            if (mesh.faces[f][k] < 0 || mesh.faces[f][k] >= mesh.vertex_count())
                throw DatasetError("bad_face_index", "face " + std::to_string(f) + " references vertex " +
                                                         std::to_string(mesh.faces[f][k] + 1) + " of " +
                                                         std::to_string(mesh.vertex_count()));
    Rig rig = read_rig(rigPath);
    if (rig.skin_weights.size() > mesh.rest_vertices.size())
        throw DatasetError("skin_weights", "skin weights reference a vertex beyond the mesh");
    rig.skin_weights.resize(mesh.rest_vertices.size());
    for (std::size_t j = 0; j < rig.joint_rest_transforms.size(); ++j)
        check_rotation(rig.joint_rest_transforms[j], "joint " + std::to_string(j) + " rest transform");
    mesh.joint_parents = rig.joint_parents;
    mesh.joint_rest_transforms = rig.joint_rest_transforms;
    mesh.skin_weights = rig.skin_weights;
    for (std::size_t v = 0; v < mesh.skin_weights.size(); ++v) {
        double sum = 0.0;
        for (const auto &w : mesh.skin_weights[v]) {
            if (w.joint < 0 || w.joint >= mesh.joint_count())
                throw DatasetError("skin_weights", "vertex " + std::to_string(v) + " references a missing joint");
            if (!(w.weight >= 0.0))
                throw DatasetError("skin_weights", "negative weight on vertex " + std::to_string(v));
            sum += w.weight;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw DatasetError("skin_weights", "weights of vertex " + std::to_string(v) + " sum to " +
                                                   std::to_string(sum));
    }
    const Vec3 axis = rig.palm_axis.value_or(defaultPalmAxis);
    if (palmAxisOut)
        *palmAxisOut = rig.palm_axis;
    if (!rig.face_side_labels.empty()) {
        if (rig.face_side_labels.size() != mesh.faces.size())
            throw DatasetError("rig", "face_side_labels length differs from face count");
        mesh.face_side_labels = rig.face_side_labels;
    }
    try {
        mesh.validate();
    } catch (const DatasetError &) {
        throw;
    } catch (const Error &e) {
        throw DatasetError("mesh", e.what());
    }
    if (mesh.face_side_labels.empty())
        mesh.face_side_labels = label_face_sides(mesh, axis);
    return mesh;
}

std::string frame_file_name(int frame) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d.png", frame);
    return buf;
}

Dataset load_dataset(const std::filesystem::path &root, const Vec3 &defaultPalmAxis) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root))
        throw DatasetError("missing_file", "dataset directory " + root.string() + " does not exist");
    Dataset ds;
    ds.root = root;
    ds.mesh = load_articulated_mesh(root / "mesh.obj", root / "rig.json", defaultPalmAxis, &ds.palm_axis);
    ds.poses = read_poses(root / "poses.json");
    if (ds.poses.empty())
        throw DatasetError("frame_count", "poses.json has no frames");
    for (std::size_t t = 0; t < ds.poses.size(); ++t)
        if (static_cast<int>(ds.poses[t].joint_rotations.size()) != ds.mesh.joint_count())
            throw DatasetError("joint_count", "frame " + std::to_string(t) + " has " +
                                                  std::to_string(ds.poses[t].joint_rotations.size()) +
                                                  " joints, rig has " + std::to_string(ds.mesh.joint_count()));
    ds.views = read_cameras(root / "cameras.json");
    const int nt = ds.frame_count();
    for (const auto &v : ds.views)
        if (!v.per_frame_world_to_camera.empty() && static_cast<int>(v.per_frame_world_to_camera.size()) != nt)
            throw DatasetError("frame_count", "view " + v.name + " has per-frame extrinsics for " +
                                                  std::to_string(v.per_frame_world_to_camera.size()) +
                                                  " frames, poses have " + std::to_string(nt));

    ds.frames.resize(ds.views.size());
    for (std::size_t vi = 0; vi < ds.views.size(); ++vi) {
        const CameraView &v = ds.views[vi];
        const fs::path dir = root / "frames" / v.name;
        if (!fs::is_directory(dir))
            throw DatasetError("missing_file", "missing frame directory " + dir.string());
        int pngCount = 0;
        for (const auto &entry : fs::directory_iterator(dir))
            if (entry.path().extension() == ".png")
                ++pngCount;
        if (pngCount != nt)
            throw DatasetError("frame_count", "view " + v.name + " has " + std::to_string(pngCount) +
                                                  " frames, poses have " + std::to_string(nt));
        for (int t = 0; t < nt; ++t) {
            const fs::path p = dir / frame_file_name(t);
            if (!fs::exists(p))
                throw DatasetError("frame_count", "missing frame " + p.string());
            Image img;
            try {
                img = read_png(p);
            } catch (const Error &e) {
                throw DatasetError("parse", e.what());
            }
            if (img.width != v.camera.width || img.height != v.camera.height)
                throw DatasetError("image_size", p.string() + " is " + std::to_string(img.width) + "x" +
                                                     std::to_string(img.height) + ", camera expects " +
                                                     std::to_string(v.camera.width) + "x" +
                                                     std::to_string(v.camera.height));
            if (img.channels < 3)
                throw DatasetError("image_size", p.string() + " must be RGB or RGBA");
            ds.frames[vi].push_back(std::move(img));
        }
    }

    const Camera &primary = ds.views.front().camera;
    ds.object_masks.resize(static_cast<std::size_t>(nt));
    ds.hand_masks.resize(static_cast<std::size_t>(nt));
    for (int t = 0; t < nt; ++t) {
        const std::string stem = frame_file_name(t).substr(0, 4);
        for (auto [suffix, slot] : {std::pair{"_object.png", &ds.object_masks[t]}, std::pair{"_hand.png", &ds.hand_masks[t]}}) {
            const fs::path p = root / "masks" / (stem + suffix);
            if (!fs::exists(p))
                continue;
            Image m;
            try {
                m = read_png(p);
            } catch (const Error &e) {
                throw DatasetError("parse", e.what());
            }
            if (m.width != primary.width || m.height != primary.height)
                throw DatasetError("image_size", p.string() + " differs from the primary camera size");
            if (!is_binary(m))
                throw DatasetError("mask_not_binary", p.string() + " has values other than 0 and 1");
            *slot = std::move(m);
        }
    }
    return ds;
}

} // namespace handsplat
