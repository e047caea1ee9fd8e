#include "nvs/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nvs/common.hpp"

namespace nvs {

namespace {

constexpr char kMagic[4] = {'N', 'V', 'S', '4'};
constexpr std::uint32_t kVersion = 1;

class ByteWriter {
public:
    void raw(const void* data, std::size_t n) {
        const char* p = static_cast<const char*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    template <typename T>
    void scalar(T v) {
        raw(&v, sizeof(T));
    }
    void floats(const std::vector<float>& v) {
        scalar<std::uint64_t>(v.size());
        raw(v.data(), v.size() * sizeof(float));
    }
    void ints(const std::vector<int>& v) {
        scalar<std::uint64_t>(v.size());
        raw(v.data(), v.size() * sizeof(int));
    }
    const std::vector<char>& bytes() const { return buf_; }

private:
    std::vector<char> buf_;
};

class ByteReader {
public:
    ByteReader(const char* data, std::size_t size) : data_(data), size_(size) {}

    void raw(void* out, std::size_t n) {
        if (off_ + n > size_) throw DataError("checkpoint: truncated file");
        std::memcpy(out, data_ + off_, n);
        off_ += n;
    }
    template <typename T>
    T scalar() {
        T v;
        raw(&v, sizeof(T));
        return v;
    }
    std::vector<float> floats() {
        const auto n = scalar<std::uint64_t>();
        if (n > size_) throw DataError("checkpoint: truncated file");
        std::vector<float> v(n);
        raw(v.data(), n * sizeof(float));
        return v;
    }
    std::vector<int> ints() {
        const auto n = scalar<std::uint64_t>();
        if (n > size_) throw DataError("checkpoint: truncated file");
        std::vector<int> v(n);
        raw(v.data(), n * sizeof(int));
        return v;
    }
    bool done() const { return off_ == size_; }

private:
    const char* data_;
    std::size_t size_;
    std::size_t off_ = 0;
};

void write_vec3(ByteWriter& w, const Vec3f& v) {
    w.scalar(v.x);
    w.scalar(v.y);
    w.scalar(v.z);
}
Vec3f read_vec3(ByteReader& r) {
    Vec3f v;
    v.x = r.scalar<float>();
    v.y = r.scalar<float>();
    v.z = r.scalar<float>();
    return v;
}

void write_mlp(ByteWriter& w, const Mlp<float>& net) {
    w.scalar<std::uint32_t>(std::uint32_t(net.layers.size()));
    for (const auto& l : net.layers) {
        w.scalar<std::int32_t>(l.in);
        w.scalar<std::int32_t>(l.out);
        w.scalar<std::uint8_t>(std::uint8_t(l.act));
        w.floats(l.w);
        w.floats(l.b);
    }
}

Mlp<float> read_mlp(ByteReader& r) {
    Mlp<float> net;
    const auto n = r.scalar<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
        typename Mlp<float>::Layer l;
        l.in = r.scalar<std::int32_t>();
        l.out = r.scalar<std::int32_t>();
        l.act = Activation(r.scalar<std::uint8_t>());
        l.w = r.floats();
        l.b = r.floats();
        if (l.w.size() != std::size_t(l.in) * l.out || l.b.size() != std::size_t(l.out))
            throw DataError("checkpoint: inconsistent mlp layer");
        net.layers.push_back(std::move(l));
    }
    return net;
}

void write_adam(ByteWriter& w, const AdamState<float>& st) {
    w.scalar<std::int64_t>(st.t);
    w.scalar(st.beta1);
    w.scalar(st.beta2);
    w.scalar(st.eps);
    w.floats(st.m);
    w.floats(st.v);
}

AdamState<float> read_adam(ByteReader& r) {
    AdamState<float> st;
    st.t = r.scalar<std::int64_t>();
    st.beta1 = r.scalar<float>();
    st.beta2 = r.scalar<float>();
    st.eps = r.scalar<float>();
    st.m = r.floats();
    st.v = r.floats();
    if (st.m.size() != st.v.size()) throw DataError("checkpoint: inconsistent optimizer state");
    return st;
}

void write_config(ByteWriter& w, const TrainConfig& c) {
    w.scalar(c.stage1_iters);
    w.scalar(c.stage2_iters);
    w.scalar(c.stage3_iters);
    w.scalar(c.lr_offsets);
    w.scalar(c.lr_offsets_final);
    w.scalar(c.lr_feature);
    w.scalar(c.lr_feature_final);
    w.scalar(c.lr_anchor_scale);
    w.scalar(c.lr_anchor_scale_final);
    w.scalar(c.lr_opacity_head);
    w.scalar(c.lr_opacity_head_final);
    w.scalar(c.lr_color_head);
    w.scalar(c.lr_color_head_final);
    w.scalar(c.lr_cov_heads);
    w.scalar(c.lr_cov_heads_final);
    w.scalar(c.lr_grid);
    w.scalar(c.lr_grid_final);
    w.scalar(c.lr_decoders);
    w.scalar(c.lr_decoders_final);
    w.scalar(c.lr_decay_steps);
    w.scalar(c.tau_grad);
    w.scalar(c.tau_grad_refine);
    w.scalar(c.tau_opacity);
    w.scalar(c.tau_opacity_refine);
    w.scalar(c.densify_start);
    w.scalar(c.densify_every);
    w.scalar(c.grow_until);
    w.scalar(c.lambda_ssim);
    w.scalar(c.lambda_tv);
    w.scalar(c.lambda_vol);
    w.scalar(c.gamma_start);
    w.scalar(c.gamma_end);
    w.scalar(c.ema_momentum);
    w.scalar(c.flag_warmup);
    w.scalar(c.voxel_size);
    w.scalar<std::int32_t>(c.gaussians_per_anchor);
    w.scalar<std::int32_t>(c.feature_dim);
    w.scalar<std::int32_t>(c.head_hidden);
    for (int r : c.field_resolution) w.scalar<std::int32_t>(r);
    w.scalar<std::uint32_t>(std::uint32_t(c.field_multipliers.size()));
    for (int m : c.field_multipliers) w.scalar<std::int32_t>(m);
    w.scalar<std::int32_t>(c.field_feature_dim);
    w.scalar<std::int32_t>(c.decoder_hidden);
    w.scalar<std::int32_t>(c.decoder_feature_dim);
    w.scalar(c.scale_floor);
    w.scalar(c.field_padding);
    for (float b : c.background) w.scalar(b);
    w.scalar(c.seed);
}

TrainConfig read_config(ByteReader& r) {
    TrainConfig c;
    c.stage1_iters = r.scalar<std::int64_t>();
    c.stage2_iters = r.scalar<std::int64_t>();
    c.stage3_iters = r.scalar<std::int64_t>();
    c.lr_offsets = r.scalar<float>();
    c.lr_offsets_final = r.scalar<float>();
    c.lr_feature = r.scalar<float>();
    c.lr_feature_final = r.scalar<float>();
    c.lr_anchor_scale = r.scalar<float>();
    c.lr_anchor_scale_final = r.scalar<float>();
    c.lr_opacity_head = r.scalar<float>();
    c.lr_opacity_head_final = r.scalar<float>();
    c.lr_color_head = r.scalar<float>();
    c.lr_color_head_final = r.scalar<float>();
    c.lr_cov_heads = r.scalar<float>();
    c.lr_cov_heads_final = r.scalar<float>();
    c.lr_grid = r.scalar<float>();
    c.lr_grid_final = r.scalar<float>();
    c.lr_decoders = r.scalar<float>();
    c.lr_decoders_final = r.scalar<float>();
    c.lr_decay_steps = r.scalar<std::int64_t>();
    c.tau_grad = r.scalar<float>();
    c.tau_grad_refine = r.scalar<float>();
    c.tau_opacity = r.scalar<float>();
    c.tau_opacity_refine = r.scalar<float>();
    c.densify_start = r.scalar<std::int64_t>();
    c.densify_every = r.scalar<std::int64_t>();
    c.grow_until = r.scalar<std::int64_t>();
    c.lambda_ssim = r.scalar<float>();
    c.lambda_tv = r.scalar<float>();
    c.lambda_vol = r.scalar<float>();
    c.gamma_start = r.scalar<float>();
    c.gamma_end = r.scalar<float>();
    c.ema_momentum = r.scalar<float>();
    c.flag_warmup = r.scalar<std::int64_t>();
    c.voxel_size = r.scalar<float>();
    c.gaussians_per_anchor = r.scalar<std::int32_t>();
    c.feature_dim = r.scalar<std::int32_t>();
    c.head_hidden = r.scalar<std::int32_t>();
    for (int& res : c.field_resolution) res = r.scalar<std::int32_t>();
    c.field_multipliers.resize(r.scalar<std::uint32_t>());
    for (int& m : c.field_multipliers) m = r.scalar<std::int32_t>();
    c.field_feature_dim = r.scalar<std::int32_t>();
    c.decoder_hidden = r.scalar<std::int32_t>();
    c.decoder_feature_dim = r.scalar<std::int32_t>();
    c.scale_floor = r.scalar<float>();
    c.field_padding = r.scalar<float>();
    for (float& b : c.background) b = r.scalar<float>();
    c.seed = r.scalar<std::uint64_t>();
    return c;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    ByteWriter w;
    w.raw(kMagic, 4);
    w.scalar<std::uint32_t>(kVersion);

    write_config(w, model.config);

    // Anchors.
    w.scalar<std::uint64_t>(model.anchors.size());
    w.scalar<std::int64_t>(model.next_anchor_id);
    for (const auto& a : model.anchors) {
        w.scalar<std::int64_t>(a.id);
        write_vec3(w, a.center);
        w.floats(a.feature);
        write_vec3(w, a.scale);
        w.scalar<std::uint32_t>(std::uint32_t(a.offsets.size()));
        for (const auto& o : a.offsets) write_vec3(w, o);
    }

    // Heads.
    w.scalar<std::int32_t>(model.heads.k);
    write_mlp(w, model.heads.opacity);
    write_mlp(w, model.heads.color);
    write_mlp(w, model.heads.scale);
    write_mlp(w, model.heads.rotation);

    // Field.
    write_vec3(w, model.field.bb_min);
    write_vec3(w, model.field.bb_max);
    for (int res : model.field.base_res) w.scalar<std::int32_t>(res);
    w.scalar<std::uint32_t>(std::uint32_t(model.field.multipliers.size()));
    for (int m : model.field.multipliers) w.scalar<std::int32_t>(m);
    w.scalar<std::int32_t>(model.field.feat_dim);
    w.scalar<std::uint32_t>(std::uint32_t(model.field.scales.size()));
    for (const auto& planes : model.field.scales)
        for (const auto& g : planes) {
            w.scalar<std::int32_t>(g.rows);
            w.scalar<std::int32_t>(g.cols);
            w.scalar<std::int32_t>(g.feat);
            w.floats(g.data);
        }

    // Decoders.
    write_mlp(w, model.decoders.fuser);
    write_mlp(w, model.decoders.position_head);
    write_mlp(w, model.decoders.rotation_head);
    write_mlp(w, model.decoders.scale_head);

    // Optimizer.
    write_adam(w, model.opt_feature);
    write_adam(w, model.opt_offsets);
    write_adam(w, model.opt_anchor_scale);
    write_adam(w, model.opt_opacity_head);
    write_adam(w, model.opt_color_head);
    write_adam(w, model.opt_scale_head);
    write_adam(w, model.opt_rotation_head);
    write_adam(w, model.opt_grid);
    write_adam(w, model.opt_decoders);

    // Densify window.
    w.floats(model.stats.grad_sum);
    w.ints(model.stats.grad_count);
    w.floats(model.stats.opacity_sum);
    w.ints(model.stats.opacity_count);
    w.scalar<std::int64_t>(model.stats.window_start);

    // Detector trackers and refinement stack.
    w.scalar(model.psnr_tracker.value);
    w.scalar<std::uint8_t>(model.psnr_tracker.initialized ? 1 : 0);
    w.scalar(model.grad_tracker.value);
    w.scalar<std::uint8_t>(model.grad_tracker.initialized ? 1 : 0);
    w.scalar<std::uint64_t>(model.stack.entries.size());
    for (const auto& e : model.stack.entries) {
        w.scalar<std::int32_t>(e.camera_id);
        w.scalar<std::uint8_t>(std::uint8_t(e.type));
        w.scalar(e.severity);
        w.scalar<std::int32_t>(e.hits);
        w.scalar<std::int64_t>(e.detected_at);
    }

    // Cursor and RNG.
    w.scalar<std::int32_t>(model.stage);
    w.scalar<std::int64_t>(model.step);
    for (std::uint64_t word : model.rng.state()) w.scalar(word);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot write " + path.string());
    out.write(w.bytes().data(), std::streamsize(w.bytes().size()));
    if (!out) throw DataError("checkpoint: write failure " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    ByteReader r(bytes.data(), bytes.size());

    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("checkpoint: bad magic bytes");
    const auto version = r.scalar<std::uint32_t>();
    if (version != kVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version));

    Model m;
    m.config = read_config(r);

    const auto n_anchors = r.scalar<std::uint64_t>();
    m.next_anchor_id = r.scalar<std::int64_t>();
    m.anchors.reserve(n_anchors);
    for (std::uint64_t i = 0; i < n_anchors; ++i) {
        Anchor<float> a;
        a.id = r.scalar<std::int64_t>();
        a.center = read_vec3(r);
        a.feature = r.floats();
        a.scale = read_vec3(r);
        a.offsets.resize(r.scalar<std::uint32_t>());
        for (auto& o : a.offsets) o = read_vec3(r);
        m.anchors.push_back(std::move(a));
    }

    m.heads.k = r.scalar<std::int32_t>();
    m.heads.opacity = read_mlp(r);
    m.heads.color = read_mlp(r);
    m.heads.scale = read_mlp(r);
    m.heads.rotation = read_mlp(r);

    m.field.bb_min = read_vec3(r);
    m.field.bb_max = read_vec3(r);
    for (int& res : m.field.base_res) res = r.scalar<std::int32_t>();
    m.field.multipliers.resize(r.scalar<std::uint32_t>());
    for (int& mult : m.field.multipliers) mult = r.scalar<std::int32_t>();
    m.field.feat_dim = r.scalar<std::int32_t>();
    const auto n_scales = r.scalar<std::uint32_t>();
    m.field.scales.resize(n_scales);
    for (auto& planes : m.field.scales)
        for (auto& g : planes) {
            g.rows = r.scalar<std::int32_t>();
            g.cols = r.scalar<std::int32_t>();
            g.feat = r.scalar<std::int32_t>();
            g.data = r.floats();
            if (g.data.size() != std::size_t(g.rows) * g.cols * g.feat)
                throw DataError("checkpoint: inconsistent field grid");
        }

    m.decoders.fuser = read_mlp(r);
    m.decoders.position_head = read_mlp(r);
    m.decoders.rotation_head = read_mlp(r);
    m.decoders.scale_head = read_mlp(r);

    m.opt_feature = read_adam(r);
    m.opt_offsets = read_adam(r);
    m.opt_anchor_scale = read_adam(r);
    m.opt_opacity_head = read_adam(r);
    m.opt_color_head = read_adam(r);
    m.opt_scale_head = read_adam(r);
    m.opt_rotation_head = read_adam(r);
    m.opt_grid = read_adam(r);
    m.opt_decoders = read_adam(r);

    m.stats.grad_sum = r.floats();
    m.stats.grad_count = r.ints();
    m.stats.opacity_sum = r.floats();
    m.stats.opacity_count = r.ints();
    m.stats.window_start = r.scalar<std::int64_t>();

    m.psnr_tracker.value = r.scalar<float>();
    m.psnr_tracker.initialized = r.scalar<std::uint8_t>() != 0;
    m.grad_tracker.value = r.scalar<float>();
    m.grad_tracker.initialized = r.scalar<std::uint8_t>() != 0;
    const auto n_entries = r.scalar<std::uint64_t>();
    for (std::uint64_t i = 0; i < n_entries; ++i) {
        RefinementEntry e;
        e.camera_id = r.scalar<std::int32_t>();
        e.type = FailureType(r.scalar<std::uint8_t>());
        e.severity = r.scalar<float>();
        e.hits = r.scalar<std::int32_t>();
        e.detected_at = r.scalar<std::int64_t>();
        m.stack.entries.push_back(e);
    }

    m.stage = r.scalar<std::int32_t>();
    m.step = r.scalar<std::int64_t>();
    std::array<std::uint64_t, 4> rng_state;
    for (auto& word : rng_state) word = r.scalar<std::uint64_t>();
    m.rng.set_state(rng_state);

    if (!r.done()) throw DataError("checkpoint: trailing bytes");
    return m;
}

}  // namespace nvs
