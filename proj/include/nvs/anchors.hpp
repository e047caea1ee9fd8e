#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "nvs/camera.hpp"
#include "nvs/common.hpp"
#include "nvs/mlp.hpp"
#include "nvs/quaternion.hpp"
#include "nvs/vec.hpp"

namespace nvs {

// Persistent neural voxel: lattice-aligned center, learned feature, per-axis
// extent and k learnable offsets. Centers are not trainable.
template <typename T>
struct Anchor {
    Vec3<T> center{};
    std::vector<T> feature;
    Vec3<T> scale{T(1), T(1), T(1)};  // l_v, strictly positive
    std::vector<Vec3<T>> offsets;
    std::int64_t id = 0;
};

template <typename T>
struct NeuralGaussian {
    Vec3<T> position{};
    Quat<T> rotation{};
    Vec3<T> scale{};
    Vec3<T> color{};
    T opacity{};
    int anchor_index = -1;  // index into the anchor list this was spawned from
    int slot = 0;
};

// Raw MLP scale outputs are clamped to this range before exponentiation.
inline constexpr double kRawScaleClamp = 10.0;

// The four attribute decoders. Head input is concat(f_v, delta_vc, d_vc).
template <typename T>
struct GaussianHeads {
    int k = 10;
    Mlp<T> opacity;   // k outputs,  sigmoid applied at the call site
    Mlp<T> color;     // 3k outputs, sigmoid
    Mlp<T> scale;     // 3k outputs, exp(clamped) * l_v
    Mlp<T> rotation;  // 4k outputs, normalized quaternion

    static GaussianHeads make(int feature_dim, int k, int hidden, Rng& rng) {
        const int in = feature_dim + 4;
        GaussianHeads h;
        h.k = k;
        h.opacity = Mlp<T>::make({in, hidden, k}, Activation::Relu, rng);
        h.color = Mlp<T>::make({in, hidden, 3 * k}, Activation::Relu, rng);
        h.scale = Mlp<T>::make({in, hidden, 3 * k}, Activation::Relu, rng);
        h.rotation = Mlp<T>::make({in, hidden, 4 * k}, Activation::Relu, rng);
        // Start near identity rotations and sub-voxel scales.
        for (int i = 0; i < k; ++i) h.rotation.layers.back().b[4 * i] = T(1);
        for (int i = 0; i < 3 * k; ++i) h.scale.layers.back().b[i] = T(-0.7);
        return h;
    }

    int input_dim() const { return opacity.input_dim(); }

    std::size_t parameter_count() const {
        return opacity.parameter_count() + color.parameter_count() + scale.parameter_count() +
               rotation.parameter_count();
    }

    void check_finite() const {
        opacity.check_finite();
        color.check_finite();
        scale.check_finite();
        rotation.check_finite();
    }

    template <typename U>
    GaussianHeads<U> cast() const {
        GaussianHeads<U> h;
        h.k = k;
        h.opacity = opacity.template cast<U>();
        h.color = color.template cast<U>();
        h.scale = scale.template cast<U>();
        h.rotation = rotation.template cast<U>();
        return h;
    }
};

// ---------------------------------------------------------------------------
// Voxelization

namespace detail {
template <typename T>
std::array<std::int64_t, 3> lattice_key(const Vec3<T>& p, T eps) {
    return {std::llround(double(p.x) / double(eps)), std::llround(double(p.y) / double(eps)),
            std::llround(double(p.z) / double(eps))};
}

template <typename T>
Vec3<T> lattice_center(const std::array<std::int64_t, 3>& key, T eps) {
    return {T(key[0]) * eps, T(key[1]) * eps, T(key[2]) * eps};
}
}  // namespace detail

// Deduplicated lattice centers of the input points, in lexicographic order.
// Ties at cell midpoints round away from zero.
template <typename T>
std::vector<Vec3<T>> voxelize(std::span<const Vec3<T>> points, T eps) {
    if (points.empty()) throw std::domain_error("voxelize: empty point set");
    if (!(eps > T(0))) throw std::domain_error("voxelize: voxel size must be positive");
    std::set<std::array<std::int64_t, 3>> keys;
    for (const auto& p : points) keys.insert(detail::lattice_key(p, eps));
    std::vector<Vec3<T>> centers;
    centers.reserve(keys.size());
    for (const auto& k : keys) centers.push_back(detail::lattice_center(k, eps));
    return centers;
}

// ---------------------------------------------------------------------------
// Frustum culling

// An anchor is kept iff its center, padded by max(l_v), lies inside all six
// frustum planes. Input order is preserved.
template <typename T>
std::vector<int> cull_visible(const std::vector<Anchor<T>>& anchors, const Camera<T>& camera) {
    camera.validate();

    // Side-plane normals in camera space, pointing inward, unit length.
    const auto plane = [](T a, T b, T c) {
        const T len = std::sqrt(a * a + b * b + c * c);
        return Vec3<T>{a / len, b / len, c / len};
    };
    const std::array<Vec3<T>, 4> sides = {
        plane(camera.fx, T(0), camera.cx),
        plane(-camera.fx, T(0), T(camera.width) - camera.cx),
        plane(T(0), camera.fy, camera.cy),
        plane(T(0), -camera.fy, T(camera.height) - camera.cy),
    };

    std::vector<char> keep(anchors.size(), 0);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < std::int64_t(anchors.size()); ++i) {
        const auto& a = anchors[i];
        const Vec3<T> p = camera.to_camera(a.center);
        const T pad = a.scale.max_component();
        bool inside = p.z >= camera.near_plane - pad && p.z <= camera.far_plane + pad;
        for (const auto& n : sides) inside = inside && n.dot(p) >= -pad;
        keep[i] = inside ? 1 : 0;
    }

    std::vector<int> visible;
    for (std::size_t i = 0; i < anchors.size(); ++i)
        if (keep[i]) visible.push_back(int(i));
    return visible;
}

// ---------------------------------------------------------------------------
// Spawning

template <typename T>
struct SpawnResult {
    std::vector<int> anchor_indices;              // the visible subset that spawned
    std::vector<NeuralGaussian<T>> gaussians;     // anchor-major, slot-minor
    std::vector<std::array<MlpTrace<T>, 4>> traces;  // opacity, color, scale, rotation
    std::vector<T> head_inputs;                   // per visible anchor, input_dim each
};

template <typename T>
struct GaussianGrad {
    Vec3<T> d_position{};
    Quat<T> d_rotation{T(0), T(0), T(0), T(0)};
    Vec3<T> d_scale{};
    Vec3<T> d_color{};
    T d_opacity{};
};

// Full-anchor-list gradient rows for the trainable anchor parameters.
template <typename T>
struct AnchorGrads {
    int feature_dim = 0;
    int k = 0;
    std::vector<T> feature;  // n * feature_dim
    std::vector<T> offsets;  // n * k * 3
    std::vector<T> scale;    // n * 3

    void resize(std::size_t n, int feature_dim_, int k_) {
        feature_dim = feature_dim_;
        k = k_;
        feature.assign(n * feature_dim, T(0));
        offsets.assign(n * std::size_t(k) * 3, T(0));
        scale.assign(n * 3, T(0));
    }
    void zero() {
        std::fill(feature.begin(), feature.end(), T(0));
        std::fill(offsets.begin(), offsets.end(), T(0));
        std::fill(scale.begin(), scale.end(), T(0));
    }
};

template <typename T>
struct HeadsGrads {
    MlpGrads<T> opacity, color, scale, rotation;

    explicit HeadsGrads(const GaussianHeads<T>& heads)
        : opacity(heads.opacity), color(heads.color), scale(heads.scale), rotation(heads.rotation) {}

    void zero() {
        opacity.zero();
        color.zero();
        scale.zero();
        rotation.zero();
    }
    void add(const HeadsGrads& o) {
        opacity.add(o.opacity);
        color.add(o.color);
        scale.add(o.scale);
        rotation.add(o.rotation);
    }
};

// Spawns k neural Gaussians per visible anchor. Positions follow
// mu_i = x_v + O_i (.) l_v; attributes are decoded from concat(f_v, delta, d).
template <typename T>
SpawnResult<T> spawn_gaussians(const std::vector<Anchor<T>>& anchors,
                               const std::vector<int>& visible, const GaussianHeads<T>& heads,
                               const Camera<T>& camera) {
    heads.check_finite();
    const int k = heads.k;
    const int feature_dim = heads.input_dim() - 4;
    const Vec3<T> cam_center = camera.center();

    SpawnResult<T> result;
    result.anchor_indices = visible;
    result.gaussians.resize(visible.size() * k);
    result.traces.resize(visible.size());
    result.head_inputs.assign(visible.size() * heads.input_dim(), T(0));

    // Serial prepass: head inputs and degeneracy checks.
    for (std::size_t vi = 0; vi < visible.size(); ++vi) {
        const auto& a = anchors[visible[vi]];
        if (int(a.feature.size()) != feature_dim)
            throw std::invalid_argument("anchor feature dim does not match heads");
        if (int(a.offsets.size()) != k)
            throw std::invalid_argument("anchor offset count does not match heads");
        const Vec3<T> diff = a.center - cam_center;
        const T dist = diff.norm();
        if (dist == T(0)) throw std::domain_error("spawn: anchor coincides with camera center");
        T* in = result.head_inputs.data() + vi * heads.input_dim();
        for (int f = 0; f < feature_dim; ++f) in[f] = a.feature[f];
        in[feature_dim] = dist;
        in[feature_dim + 1] = diff.x / dist;
        in[feature_dim + 2] = diff.y / dist;
        in[feature_dim + 3] = diff.z / dist;
    }

    std::string error;
#pragma omp parallel for schedule(dynamic, 8)
    for (std::int64_t vi = 0; vi < std::int64_t(visible.size()); ++vi) {
        try {
            const int ai = visible[vi];
            const auto& a = anchors[ai];
            const std::span<const T> in(result.head_inputs.data() + vi * heads.input_dim(),
                                        std::size_t(heads.input_dim()));
            auto& tr = result.traces[vi];
            std::vector<T> raw_o, raw_c, raw_s, raw_r;
            mlp_forward(heads.opacity, in, tr[0], raw_o);
            mlp_forward(heads.color, in, tr[1], raw_c);
            mlp_forward(heads.scale, in, tr[2], raw_s);
            mlp_forward(heads.rotation, in, tr[3], raw_r);

            for (int i = 0; i < k; ++i) {
                NeuralGaussian<T>& g = result.gaussians[vi * k + i];
                g.anchor_index = ai;
                g.slot = i;
                g.position = a.center + a.offsets[i].cwise(a.scale);
                g.opacity = sigmoid(raw_o[i]);
                g.color = {sigmoid(raw_c[3 * i]), sigmoid(raw_c[3 * i + 1]),
                           sigmoid(raw_c[3 * i + 2])};
                for (int j = 0; j < 3; ++j) {
                    const T r = std::clamp(raw_s[3 * i + j], T(-kRawScaleClamp), T(kRawScaleClamp));
                    g.scale[j] = std::exp(r) * a.scale[j];
                }
                const Quat<T> raw{raw_r[4 * i], raw_r[4 * i + 1], raw_r[4 * i + 2],
                                  raw_r[4 * i + 3]};
                g.rotation = raw.normalized();
            }
        } catch (const std::exception& e) {
#pragma omp critical
            if (error.empty()) error = e.what();
        }
    }
    if (!error.empty()) throw NumericError("spawn: " + error);
    return result;
}

// Backward of spawn_gaussians. Per-anchor rows are disjoint; the shared head
// parameters are accumulated in fixed 32-anchor chunks merged in chunk order,
// so results do not depend on the thread count.
template <typename T>
void spawn_backward(const std::vector<Anchor<T>>& anchors, const GaussianHeads<T>& heads,
                    const SpawnResult<T>& fwd, std::span<const GaussianGrad<T>> gauss_grads,
                    AnchorGrads<T>& anchor_grads, HeadsGrads<T>& head_grads) {
    const int k = heads.k;
    const int feature_dim = heads.input_dim() - 4;
    if (gauss_grads.size() != fwd.gaussians.size())
        throw std::invalid_argument("spawn_backward: gradient count mismatch");

    const std::size_t chunk = 32;
    const std::size_t n_chunks = (fwd.anchor_indices.size() + chunk - 1) / chunk;
    std::vector<HeadsGrads<T>> chunk_grads(n_chunks, HeadsGrads<T>(heads));

#pragma omp parallel for schedule(dynamic)
    for (std::int64_t c = 0; c < std::int64_t(n_chunks); ++c) {
        HeadsGrads<T>& hg = chunk_grads[c];
        const std::size_t begin = c * chunk;
        const std::size_t end = std::min(begin + chunk, fwd.anchor_indices.size());
        std::vector<T> d_raw_o(k), d_raw_c(3 * k), d_raw_s(3 * k), d_raw_r(4 * k);
        std::vector<T> d_in;
        for (std::size_t vi = begin; vi < end; ++vi) {
            const int ai = fwd.anchor_indices[vi];
            const auto& a = anchors[ai];
            const auto& tr = fwd.traces[vi];
            const std::vector<T>& raw_s = tr[2].acts.back();
            std::fill(d_raw_o.begin(), d_raw_o.end(), T(0));
            std::fill(d_raw_c.begin(), d_raw_c.end(), T(0));
            std::fill(d_raw_s.begin(), d_raw_s.end(), T(0));
            std::fill(d_raw_r.begin(), d_raw_r.end(), T(0));

            T* d_off = anchor_grads.offsets.data() + std::size_t(ai) * k * 3;
            T* d_lv = anchor_grads.scale.data() + std::size_t(ai) * 3;

            for (int i = 0; i < k; ++i) {
                const NeuralGaussian<T>& g = fwd.gaussians[vi * k + i];
                const GaussianGrad<T>& gg = gauss_grads[vi * k + i];

                // mu = x_v + O_i (.) l_v
                for (int j = 0; j < 3; ++j) {
                    d_off[3 * i + j] += gg.d_position[j] * a.scale[j];
                    d_lv[j] += gg.d_position[j] * a.offsets[i][j];
                }
                // opacity / color through sigmoid
                d_raw_o[i] = gg.d_opacity * sigmoid_grad_from_value(g.opacity);
                for (int j = 0; j < 3; ++j)
                    d_raw_c[3 * i + j] = gg.d_color[j] * sigmoid_grad_from_value(g.color[j]);
                // scale = exp(clamp(raw)) * l_v
                for (int j = 0; j < 3; ++j) {
                    const T raw = raw_s[3 * i + j];
                    const bool open = raw > T(-kRawScaleClamp) && raw < T(kRawScaleClamp);
                    if (open) d_raw_s[3 * i + j] = gg.d_scale[j] * g.scale[j];
                    const T e = std::exp(std::clamp(raw, T(-kRawScaleClamp), T(kRawScaleClamp)));
                    d_lv[j] += gg.d_scale[j] * e;
                }
                // rotation = normalize(raw quaternion)
                const std::vector<T>& raw_r = tr[3].acts.back();
                const Quat<T> raw{raw_r[4 * i], raw_r[4 * i + 1], raw_r[4 * i + 2],
                                  raw_r[4 * i + 3]};
                const Quat<T> dq = normalize_backward(raw, gg.d_rotation);
                d_raw_r[4 * i] += dq.w;
                d_raw_r[4 * i + 1] += dq.x;
                d_raw_r[4 * i + 2] += dq.y;
                d_raw_r[4 * i + 3] += dq.z;
            }

            T* d_feat = anchor_grads.feature.data() + std::size_t(ai) * feature_dim;
            mlp_backward(heads.opacity, tr[0], std::span<const T>(d_raw_o), hg.opacity, d_in);
            for (int f = 0; f < feature_dim; ++f) d_feat[f] += d_in[f];
            mlp_backward(heads.color, tr[1], std::span<const T>(d_raw_c), hg.color, d_in);
            for (int f = 0; f < feature_dim; ++f) d_feat[f] += d_in[f];
            mlp_backward(heads.scale, tr[2], std::span<const T>(d_raw_s), hg.scale, d_in);
            for (int f = 0; f < feature_dim; ++f) d_feat[f] += d_in[f];
            mlp_backward(heads.rotation, tr[3], std::span<const T>(d_raw_r), hg.rotation, d_in);
            for (int f = 0; f < feature_dim; ++f) d_feat[f] += d_in[f];
            // delta_vc and d_vc reach no trainable parameter; their grads stop here.
        }
    }
    for (auto& cg : chunk_grads) head_grads.add(cg);
}

// ---------------------------------------------------------------------------
// Density control

// Per-window accumulators driving growth (image-space position gradients) and
// pruning (decoded opacities).
struct DensifyStats {
    std::vector<float> grad_sum;     // n * k
    std::vector<int> grad_count;     // n * k
    std::vector<float> opacity_sum;  // n
    std::vector<int> opacity_count;  // n
    std::int64_t window_start = 0;

    void resize(std::size_t n_anchors, int k) {
        grad_sum.assign(n_anchors * k, 0.f);
        grad_count.assign(n_anchors * k, 0);
        opacity_sum.assign(n_anchors, 0.f);
        opacity_count.assign(n_anchors, 0);
    }

    bool window_empty() const {
        for (int c : grad_count)
            if (c) return false;
        for (int c : opacity_count)
            if (c) return false;
        return true;
    }
};

// Adds one anchor per distinct unoccupied voxel reached by a Gaussian whose
// mean accumulated image-space gradient exceeds tau_g. Returns the grown list;
// the consumed gradient window is cleared.
template <typename T>
std::vector<Anchor<T>> grow_anchors(const std::vector<Anchor<T>>& anchors, DensifyStats& stats,
                                    T eps, T tau_g, std::int64_t& next_id) {
    const std::size_t n = anchors.size();
    if (n == 0) return {};
    const int k = int(anchors.front().offsets.size());

    std::set<std::array<std::int64_t, 3>> occupied;
    for (const auto& a : anchors) occupied.insert(detail::lattice_key(a.center, eps));

    std::vector<Anchor<T>> grown = anchors;
    for (std::size_t a = 0; a < n; ++a) {
        for (int i = 0; i < k; ++i) {
            const std::size_t idx = a * k + i;
            if (stats.grad_count[idx] == 0) continue;
            const float mean = stats.grad_sum[idx] / float(stats.grad_count[idx]);
            if (!(mean > float(tau_g))) continue;
            const Vec3<T> mu = anchors[a].center + anchors[a].offsets[i].cwise(anchors[a].scale);
            const auto key = detail::lattice_key(mu, eps);
            if (!occupied.insert(key).second) continue;
            Anchor<T> fresh;
            fresh.center = detail::lattice_center(key, eps);
            fresh.feature = anchors[a].feature;
            fresh.scale = {eps, eps, eps};
            fresh.offsets.assign(k, Vec3<T>{});
            fresh.id = next_id++;
            grown.push_back(std::move(fresh));
        }
    }
    std::fill(stats.grad_sum.begin(), stats.grad_sum.end(), 0.f);
    std::fill(stats.grad_count.begin(), stats.grad_count.end(), 0);
    return grown;
}

// Removes anchors whose mean decoded opacity over the window fell below
// tau_alpha. Unobserved anchors are kept. The consumed opacity window is
// cleared; `keep_out` reports the surviving rows so optimizer state can follow.
template <typename T>
std::vector<Anchor<T>> prune_anchors(const std::vector<Anchor<T>>& anchors, DensifyStats& stats,
                                     T tau_alpha, std::vector<char>* keep_out = nullptr) {
    std::vector<char> keep(anchors.size(), 1);
    for (std::size_t a = 0; a < anchors.size(); ++a) {
        if (a < stats.opacity_count.size() && stats.opacity_count[a] > 0) {
            const float mean = stats.opacity_sum[a] / float(stats.opacity_count[a]);
            if (mean < float(tau_alpha)) keep[a] = 0;
        }
    }
    std::vector<Anchor<T>> surviving;
    surviving.reserve(anchors.size());
    for (std::size_t a = 0; a < anchors.size(); ++a)
        if (keep[a]) surviving.push_back(anchors[a]);
    std::fill(stats.opacity_sum.begin(), stats.opacity_sum.end(), 0.f);
    std::fill(stats.opacity_count.begin(), stats.opacity_count.end(), 0);
    if (keep_out) *keep_out = std::move(keep);
    return surviving;
}

}  // namespace nvs
