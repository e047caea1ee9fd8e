// Command-line front end: synth / train / render / eval / export.
// Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "nvs/checkpoint.hpp"
#include "nvs/common.hpp"
#include "nvs/config.hpp"
#include "nvs/dataset.hpp"
#include "nvs/image.hpp"
#include "nvs/losses.hpp"
#include "nvs/pipeline.hpp"
#include "nvs/ply.hpp"
#include "nvs/synthetic.hpp"

namespace fs = std::filesystem;
using namespace nvs;

namespace {

int cmd_synth(const std::string& spec_path, std::uint64_t seed, const std::string& out_dir) {
    const SceneSpec spec = load_scene_spec(spec_path);
    const SyntheticScene scene = generate_synthetic_scene(spec, seed);
    write_dataset(scene.dataset, out_dir);
    std::cout << "wrote " << scene.dataset.entries.size() << " frames and "
              << scene.dataset.points.size() << " points to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_dir, const std::string& resume) {
    const Dataset dataset = load_dataset(data_dir);
    fs::create_directories(out_dir);

    Model model = [&] {
        if (!resume.empty()) {
            std::cout << "resuming from " << resume << "\n";
            return load_checkpoint(resume);
        }
        TrainConfig config = config_path.empty() ? TrainConfig{} : load_config(config_path);
        return Model::initialize(config, dataset.points, dataset.bb_min, dataset.bb_max);
    }();

    std::ofstream metrics(fs::path(out_dir) / "metrics.csv",
                          resume.empty() ? std::ios::trunc : std::ios::app);
    if (!metrics) throw DataError("train: cannot write metrics.csv");
    if (resume.empty())
        metrics << "iteration,stage,view,total,color,l1,ssim,tv,vol,psnr,anchors,gaussians,flags\n";

    const MetricsSink sink = [&](const IterationMetrics& m) {
        metrics << m.iteration << ',' << m.stage << ',' << m.view << ',' << m.total << ','
                << m.color << ',' << m.l1 << ',' << m.ssim << ',' << m.tv << ',' << m.vol << ','
                << m.psnr << ',' << m.anchor_count << ',' << m.gaussian_count << ',' << m.flags
                << '\n';
        if (m.iteration % 100 == 0)
            std::cout << "stage " << m.stage << " iter " << m.iteration << " loss " << m.total
                      << " psnr " << m.psnr << " anchors " << m.anchor_count << "\n";
    };
    const auto on_stage_end = [&](int stage) {
        const fs::path path = fs::path(out_dir) / ("stage" + std::to_string(stage) + ".ckpt");
        save_checkpoint(model, path);
        std::cout << "stage " << stage << " complete, checkpoint " << path << "\n";
    };

    train(model, dataset, sink, on_stage_end);
    save_checkpoint(model, fs::path(out_dir) / "final.ckpt");
    std::cout << "training complete: " << model.anchors.size() << " anchors, "
              << model.trainable_parameter_count() << " trainable parameters\n";
    return 0;
}

Cameraf camera_from_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("render: cannot open camera file " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("render: camera file parse failure: ") + e.what());
    }
    Cameraf cam;
    try {
        cam.fx = j.at("fl_x").get<float>();
        cam.fy = j.at("fl_y").get<float>();
        cam.cx = j.at("cx").get<float>();
        cam.cy = j.at("cy").get<float>();
        cam.width = j.at("w").get<int>();
        cam.height = j.at("h").get<int>();
        const auto& tm = j.at("transform_matrix");
        Mat3f c2w;
        Vec3f eye;
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) c2w(r, c) = tm.at(r).at(c).get<float>();
            eye[r] = tm.at(r).at(3).get<float>();
        }
        cam.rotation = c2w.transposed();
        cam.translation = -(cam.rotation * eye);
        if (j.contains("near")) cam.near_plane = j["near"].get<float>();
        if (j.contains("far")) cam.far_plane = j["far"].get<float>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("render: camera file missing field: ") + e.what());
    }
    cam.validate();
    return cam;
}

int cmd_render(const std::string& ckpt, const std::string& camera_arg, float time,
               const std::string& out_path, const std::string& data_dir) {
    const Model model = load_checkpoint(ckpt);

    Cameraf camera;
    bool is_index = !camera_arg.empty() &&
                    camera_arg.find_first_not_of("0123456789") == std::string::npos;
    if (is_index) {
        if (data_dir.empty())
            throw DataError("render: camera index requires --data to resolve the camera");
        const Dataset dataset = load_dataset(data_dir);
        const std::size_t idx = std::stoul(camera_arg);
        if (idx >= dataset.entries.size())
            throw DataError("render: camera index out of range");
        camera = dataset.entries[idx].camera;
    } else {
        camera = camera_from_json_file(camera_arg);
    }

    const ViewRender vr = render_view(model, camera, time, true);
    Image img;
    img.width = camera.width;
    img.height = camera.height;
    img.rgb = vr.render.image;
    write_png(img, out_path);
    std::cout << "rendered " << vr.splats.size() << " splats to " << out_path << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& out_csv) {
    const Model model = load_checkpoint(ckpt);
    const Dataset dataset = load_dataset(data_dir);

    std::ofstream out(out_csv);
    if (!out) throw DataError("eval: cannot write " + out_csv);
    out << "view,time,psnr,ssim,ms_ssim\n";
    double mean_psnr = 0, mean_ssim = 0, mean_ms = 0;
    for (std::size_t v = 0; v < dataset.entries.size(); ++v) {
        const auto& entry = dataset.entries[v];
        const ViewRender vr = render_view(model, entry.camera, entry.time, true);
        const float p = psnr<float>(vr.render.image, entry.image.rgb);
        const float s = ssim<float>(vr.render.image, entry.image.rgb, entry.camera.height,
                                    entry.camera.width, 3);
        const float ms = ms_ssim<float>(vr.render.image, entry.image.rgb, entry.camera.height,
                                        entry.camera.width);
        out << v << ',' << entry.time << ',' << p << ',' << s << ',' << ms << '\n';
        mean_psnr += p;
        mean_ssim += s;
        mean_ms += ms;
    }
    const double n = double(dataset.entries.size());
    out << "mean,," << mean_psnr / n << ',' << mean_ssim / n << ',' << mean_ms / n << '\n';
    std::cout << "evaluated " << dataset.entries.size() << " views, mean psnr "
              << mean_psnr / n << " dB\n";
    return 0;
}

int cmd_export(const std::string& ckpt, float time, const std::string& out_path) {
    const Model model = load_checkpoint(ckpt);
    const std::size_t count = export_gaussians(model, time, out_path);
    std::cout << "exported " << count << " gaussians to " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"4D neural voxel splatting"};
    app.require_subcommand(1);

    std::string spec_path, out_dir, data_dir, config_path, resume, ckpt, camera_arg, out_path;
    std::uint64_t seed = 0;
    float time = 0.f;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--spec", spec_path, "scene spec json")->required();
    synth->add_option("--seed", seed, "rng seed");
    synth->add_option("--out", out_dir, "output dataset directory")->required();

    auto* train_cmd = app.add_subcommand("train", "run the three-stage schedule");
    train_cmd->add_option("--data", data_dir, "dataset directory")->required();
    train_cmd->add_option("--config", config_path, "training config json");
    train_cmd->add_option("--out", out_dir, "output directory")->required();
    train_cmd->add_option("--resume", resume, "checkpoint to resume from");

    auto* render_cmd = app.add_subcommand("render", "render one view from a checkpoint");
    render_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
    render_cmd->add_option("--camera", camera_arg, "dataset view index or camera json file")
        ->required();
    render_cmd->add_option("--time", time, "normalized timestamp in [0,1]")->required();
    render_cmd->add_option("--out", out_path, "output png")->required();
    render_cmd->add_option("--data", data_dir, "dataset directory (for index cameras)");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint against a dataset");
    eval_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
    eval_cmd->add_option("--out", out_path, "output csv")->required();

    auto* export_cmd = app.add_subcommand("export", "export gaussians at a timestamp as ply");
    export_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
    export_cmd->add_option("--time", time, "normalized timestamp in [0,1]")->required();
    export_cmd->add_option("--out", out_path, "output ply")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(spec_path, seed, out_dir);
        if (train_cmd->parsed()) return cmd_train(data_dir, config_path, out_dir, resume);
        if (render_cmd->parsed()) return cmd_render(ckpt, camera_arg, time, out_path, data_dir);
        if (eval_cmd->parsed()) return cmd_eval(ckpt, data_dir, out_path);
        if (export_cmd->parsed()) return cmd_export(ckpt, time, out_path);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::domain_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
