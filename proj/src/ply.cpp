#include "nvs/ply.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nvs/common.hpp"
#include "nvs/hexplane.hpp"

namespace nvs {

namespace {

constexpr float kShC0 = 0.28209479177387814f;

// A camera guaranteed to keep every anchor (with padding) inside the frustum.
Cameraf coverage_camera(const Model& model) {
    Vec3f lo{0, 0, 0}, hi{0, 0, 0};
    float pad = 0.f;
    bool first = true;
    for (const auto& a : model.anchors) {
        if (first) {
            lo = hi = a.center;
            first = false;
        }
        for (int i = 0; i < 3; ++i) {
            lo[i] = std::min(lo[i], a.center[i]);
            hi[i] = std::max(hi[i], a.center[i]);
        }
        pad = std::max(pad, a.scale.max_component());
    }
    const Vec3f center = (lo + hi) * 0.5f;
    const float radius = std::max(0.5f * (hi - lo).norm() + pad, 1e-3f);

    Cameraf cam;
    cam.width = cam.height = 256;
    cam.fx = cam.fy = 256.f;
    cam.cx = cam.cy = 127.5f;
    // Half field of view is atan(0.5); keep the bounding sphere well inside.
    const float dist = 6.f * radius;
    cam.near_plane = std::max(dist - 2.f * radius, 1e-4f);
    cam.far_plane = dist + 2.f * radius;
    look_at(cam, center + Vec3f{0.f, 0.f, -dist}, center);
    return cam;
}

template <typename T>
void write_scalar(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

std::size_t export_gaussians(const Model& model, float t, const std::filesystem::path& path) {
    if (!(t >= 0.f && t <= 1.f)) throw std::invalid_argument("export: time must lie in [0, 1]");

    std::vector<NeuralGaussian<float>> gaussians;
    if (!model.anchors.empty()) {
        const Cameraf cam = coverage_camera(model);
        const auto visible = cull_visible(model.anchors, cam);
        const auto spawned = spawn_gaussians(model.anchors, visible, model.heads, cam);
        const auto deformed = deform_gaussians(spawned.gaussians, model.field, model.decoders, t,
                                               model.config.scale_floor);
        gaussians = deformed.gaussians.empty() ? spawned.gaussians : deformed.gaussians;
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("ply: cannot write " + path.string());

    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << gaussians.size() << "\n";
    for (const char* p : {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2",
                          "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
                          "rot_3"})
        out << "property float " << p << "\n";
    out << "end_header\n";

    for (const auto& g : gaussians) {
        write_scalar(out, g.position.x);
        write_scalar(out, g.position.y);
        write_scalar(out, g.position.z);
        write_scalar(out, 0.f);
        write_scalar(out, 0.f);
        write_scalar(out, 0.f);
        write_scalar(out, (g.color.x - 0.5f) / kShC0);
        write_scalar(out, (g.color.y - 0.5f) / kShC0);
        write_scalar(out, (g.color.z - 0.5f) / kShC0);
        write_scalar(out, logit(g.opacity));
        write_scalar(out, std::log(g.scale.x));
        write_scalar(out, std::log(g.scale.y));
        write_scalar(out, std::log(g.scale.z));
        write_scalar(out, g.rotation.w);
        write_scalar(out, g.rotation.x);
        write_scalar(out, g.rotation.y);
        write_scalar(out, g.rotation.z);
    }
    if (!out) throw DataError("ply: write failure " + path.string());
    return gaussians.size();
}

std::vector<ExportedGaussian> read_gaussian_ply(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("ply: cannot open " + path.string());

    std::string line;
    std::size_t count = 0;
    int properties = 0;
    bool header_done = false;
    if (!std::getline(in, line) || line != "ply") throw DataError("ply: bad header");
    while (std::getline(in, line)) {
        if (line == "end_header") {
            header_done = true;
            break;
        }
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        if (word == "element") {
            ss >> word >> count;
        } else if (word == "property") {
            ++properties;
        }
    }
    if (!header_done) throw DataError("ply: missing end_header");
    if (properties != 17) throw DataError("ply: unexpected property layout");

    std::vector<ExportedGaussian> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        float rec[17];
        in.read(reinterpret_cast<char*>(rec), sizeof(rec));
        if (!in) throw DataError("ply: truncated records");
        ExportedGaussian g;
        g.position = {rec[0], rec[1], rec[2]};
        g.color = {rec[6] * kShC0 + 0.5f, rec[7] * kShC0 + 0.5f, rec[8] * kShC0 + 0.5f};
        g.opacity = sigmoid(rec[9]);
        g.scale = {std::exp(rec[10]), std::exp(rec[11]), std::exp(rec[12])};
        g.rotation = {rec[13], rec[14], rec[15], rec[16]};
        out.push_back(g);
    }
    return out;
}

}  // namespace nvs
