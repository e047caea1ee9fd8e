#include "nvs/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "nvs/common.hpp"

namespace nvs {

using ordered_json = nlohmann::ordered_json;

void Dataset::compute_bounds() {
    bb_min = {std::numeric_limits<float>::max(), std::numeric_limits<float>::max(),
              std::numeric_limits<float>::max()};
    bb_max = {std::numeric_limits<float>::lowest(), std::numeric_limits<float>::lowest(),
              std::numeric_limits<float>::lowest()};
    for (const auto& p : points)
        for (int i = 0; i < 3; ++i) {
            bb_min[i] = std::min(bb_min[i], p[i]);
            bb_max[i] = std::max(bb_max[i], p[i]);
        }
}

std::vector<float> normalize_timestamps(const std::vector<double>& raw) {
    if (raw.empty()) return {};
    if (raw.size() == 1) return {0.f};
    const double lo = *std::min_element(raw.begin(), raw.end());
    const double hi = *std::max_element(raw.begin(), raw.end());
    if (hi == lo) throw std::domain_error("dataset: degenerate timestamp range");
    std::vector<float> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = float((raw[i] - lo) / (hi - lo));
    return out;
}

namespace {

const ordered_json& require(const ordered_json& j, const char* key, const std::string& where) {
    const auto it = j.find(key);
    if (it == j.end()) throw DataError("transforms.json: " + where + " missing '" + key + "'");
    return *it;
}

template <typename T>
T field_as(const ordered_json& j, const char* key, const std::string& where) {
    try {
        return require(j, key, where).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw DataError("transforms.json: " + where + " has ill-formed '" + key + "'");
    }
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& directory) {
    const auto json_path = directory / "transforms.json";
    std::ifstream in(json_path);
    if (!in) throw DataError("dataset: cannot open " + json_path.string());
    ordered_json root;
    try {
        root = ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("transforms.json: parse failure: ") + e.what());
    }

    Dataset ds;
    const auto& frames = require(root, "frames", "top level");
    if (!frames.is_array() || frames.empty())
        throw DataError("transforms.json: 'frames' must be a non-empty array");

    std::vector<double> raw_times;
    for (std::size_t fi = 0; fi < frames.size(); ++fi) {
        const std::string where = "frame " + std::to_string(fi);
        const auto& f = frames[fi];

        DatasetEntry e;
        e.image_path = field_as<std::string>(f, "file_path", where);
        raw_times.push_back(field_as<double>(f, "time", where));

        Cameraf& cam = e.camera;
        cam.fx = field_as<float>(f, "fl_x", where);
        cam.fy = field_as<float>(f, "fl_y", where);
        cam.cx = field_as<float>(f, "cx", where);
        cam.cy = field_as<float>(f, "cy", where);
        cam.width = field_as<int>(f, "w", where);
        cam.height = field_as<int>(f, "h", where);

        const auto& tm = require(f, "transform_matrix", where);
        if (!tm.is_array() || tm.size() != 4)
            throw DataError("transforms.json: " + where + " has ill-formed 'transform_matrix'");
        Mat3f c2w;
        Vec3f eye;
        for (int r = 0; r < 4; ++r) {
            const auto& row = tm[r];
            if (!row.is_array() || row.size() != 4)
                throw DataError("transforms.json: " + where +
                                " has ill-formed 'transform_matrix'");
            if (r < 3) {
                for (int c = 0; c < 3; ++c) c2w(r, c) = row[c].get<float>();
                eye[r] = row[3].get<float>();
            }
        }
        cam.rotation = c2w.transposed();
        cam.translation = -(cam.rotation * eye);
        e.eye = eye;

        if (auto it = f.find("near"); it != f.end()) cam.near_plane = it->get<float>();
        if (auto it = f.find("far"); it != f.end()) cam.far_plane = it->get<float>();
        cam.validate();

        const auto img_path = directory / e.image_path;
        if (!std::filesystem::exists(img_path))
            throw DataError("transforms.json: " + where + " references missing image '" +
                            e.image_path + "'");
        e.image = read_png(img_path);
        if (e.image.width != cam.width || e.image.height != cam.height)
            throw DataError("transforms.json: " + where + " image size does not match 'w'/'h'");
        ds.entries.push_back(std::move(e));
    }

    const auto times = normalize_timestamps(raw_times);
    for (std::size_t i = 0; i < ds.entries.size(); ++i) {
        ds.entries[i].time = times[i];
        ds.entries[i].camera.timestamp = times[i];
    }

    const auto& points = require(root, "points", "top level");
    if (!points.is_array() || points.empty())
        throw DataError("transforms.json: 'points' must be a non-empty array");
    for (std::size_t pi = 0; pi < points.size(); ++pi) {
        const auto& p = points[pi];
        if (!p.is_array() || p.size() != 3)
            throw DataError("transforms.json: point " + std::to_string(pi) + " is ill-formed");
        ds.points.push_back({p[0].get<float>(), p[1].get<float>(), p[2].get<float>()});
    }
    ds.compute_bounds();
    return ds;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& directory) {
    std::filesystem::create_directories(directory / "frames");

    ordered_json root;
    root["frames"] = ordered_json::array();
    for (const auto& e : dataset.entries) {
        const Cameraf& cam = e.camera;
        ordered_json f;
        f["file_path"] = e.image_path;
        f["time"] = double(e.time);
        const Mat3f c2w = cam.rotation.transposed();
        const Vec3f eye = e.eye;
        ordered_json tm = ordered_json::array();
        for (int r = 0; r < 4; ++r) {
            ordered_json row = ordered_json::array();
            for (int c = 0; c < 4; ++c) {
                if (r == 3)
                    row.push_back(c == 3 ? 1.0 : 0.0);
                else
                    row.push_back(c == 3 ? double(eye[r]) : double(c2w(r, c)));
            }
            tm.push_back(row);
        }
        f["transform_matrix"] = tm;
        f["fl_x"] = double(cam.fx);
        f["fl_y"] = double(cam.fy);
        f["cx"] = double(cam.cx);
        f["cy"] = double(cam.cy);
        f["w"] = cam.width;
        f["h"] = cam.height;
        f["near"] = double(cam.near_plane);
        f["far"] = double(cam.far_plane);
        root["frames"].push_back(std::move(f));

        write_png(e.image, directory / e.image_path);
    }
    root["points"] = ordered_json::array();
    for (const auto& p : dataset.points)
        root["points"].push_back({double(p.x), double(p.y), double(p.z)});

    std::ofstream out(directory / "transforms.json");
    if (!out) throw DataError("dataset: cannot write " + (directory / "transforms.json").string());
    out << root.dump(2) << "\n";
}

}  // namespace nvs
