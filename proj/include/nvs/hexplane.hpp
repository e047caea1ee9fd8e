#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "nvs/anchors.hpp"
#include "nvs/common.hpp"
#include "nvs/mlp.hpp"
#include "nvs/quaternion.hpp"
#include "nvs/rng.hpp"
#include "nvs/vec.hpp"

namespace nvs {

// Axis pairs of the six planes: three spatial, three space-time (axis 3 = t).
inline constexpr std::array<std::array<int, 2>, 6> kPlaneAxes = {
    {{0, 1}, {0, 2}, {1, 2}, {0, 3}, {1, 3}, {2, 3}}};

template <typename T>
struct PlaneGrid {
    int rows = 0;  // first axis
    int cols = 0;  // second axis
    int feat = 0;
    std::vector<T> data;  // (r * cols + c) * feat + f

    T* node(int r, int c) { return data.data() + (std::size_t(r) * cols + c) * feat; }
    const T* node(int r, int c) const { return data.data() + (std::size_t(r) * cols + c) * feat; }
};

// Six 2D feature planes per resolution scale over a fixed bounding box and the
// [0, 1] time range. Plane features are summed within a scale and the scales
// are concatenated, so the query feature size is feat_dim * n_scales.
template <typename T>
struct HexPlaneField {
    Vec3<T> bb_min{}, bb_max{};
    std::array<int, 4> base_res{};
    std::vector<int> multipliers;
    int feat_dim = 0;
    std::vector<std::array<PlaneGrid<T>, 6>> scales;

    int feature_size() const { return feat_dim * int(scales.size()); }

    static HexPlaneField make(const Vec3<T>& bb_min, const Vec3<T>& bb_max,
                              const std::array<int, 4>& base_res,
                              const std::vector<int>& multipliers, int feat_dim, Rng& rng,
                              T init_range = T(0.1)) {
        if (!(bb_max.x > bb_min.x && bb_max.y > bb_min.y && bb_max.z > bb_min.z))
            throw std::invalid_argument("hexplane: degenerate bounding box");
        if (multipliers.empty()) throw std::invalid_argument("hexplane: no resolution scales");
        HexPlaneField f;
        f.bb_min = bb_min;
        f.bb_max = bb_max;
        f.base_res = base_res;
        f.multipliers = multipliers;
        f.feat_dim = feat_dim;
        for (int mult : multipliers) {
            std::array<PlaneGrid<T>, 6> planes;
            for (int p = 0; p < 6; ++p) {
                PlaneGrid<T>& g = planes[p];
                g.rows = base_res[kPlaneAxes[p][0]] * mult;
                g.cols = base_res[kPlaneAxes[p][1]] * mult;
                g.feat = feat_dim;
                if (g.rows < 2 || g.cols < 2)
                    throw std::invalid_argument("hexplane: each plane needs at least 2 nodes per axis");
                g.data.resize(std::size_t(g.rows) * g.cols * feat_dim);
                for (auto& v : g.data) v = T(rng.uniform(-double(init_range), double(init_range)));
            }
            f.scales.push_back(std::move(planes));
        }
        return f;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& planes : scales)
            for (const auto& g : planes) n += g.data.size();
        return n;
    }

    template <typename U>
    HexPlaneField<U> cast() const {
        HexPlaneField<U> f;
        f.bb_min = bb_min.template cast<U>();
        f.bb_max = bb_max.template cast<U>();
        f.base_res = base_res;
        f.multipliers = multipliers;
        f.feat_dim = feat_dim;
        for (const auto& planes : scales) {
            std::array<PlaneGrid<U>, 6> out;
            for (int p = 0; p < 6; ++p) {
                out[p].rows = planes[p].rows;
                out[p].cols = planes[p].cols;
                out[p].feat = planes[p].feat;
                out[p].data.assign(planes[p].data.begin(), planes[p].data.end());
            }
            f.scales.push_back(std::move(out));
        }
        return f;
    }
};

template <typename T>
struct FieldGrads {
    std::vector<std::array<std::vector<T>, 6>> scales;

    explicit FieldGrads(const HexPlaneField<T>& f) {
        for (const auto& planes : f.scales) {
            std::array<std::vector<T>, 6> g;
            for (int p = 0; p < 6; ++p) g[p].assign(planes[p].data.size(), T(0));
            scales.push_back(std::move(g));
        }
    }
    FieldGrads() = default;

    void zero() {
        for (auto& planes : scales)
            for (auto& g : planes) std::fill(g.begin(), g.end(), T(0));
    }
};

// Normalized coordinates plus clamp gates, cached at query time.
template <typename T>
struct HexQueryTrace {
    // Per scale: interpolation coordinate along each of the four axes, and the
    // derivative of that coordinate w.r.t. the world coordinate (0 for t and
    // for clamped spatial axes).
    std::vector<std::array<T, 4>> coords;
    std::vector<std::array<T, 4>> coord_grads;
};

namespace detail {
template <typename T>
void bilinear_setup(T u, int res, int& i0, T& frac) {
    int i = int(std::floor(u));
    if (i > res - 2) i = res - 2;
    if (i < 0) i = 0;
    i0 = i;
    frac = u - T(i);
}
}  // namespace detail

// Bilinear interpolation on each plane; plane features are summed within each
// scale and scales are concatenated into `out` (size field.feature_size()).
template <typename T>
void hexplane_query(const HexPlaneField<T>& field, const Vec3<T>& position, T t,
                    std::span<T> out, HexQueryTrace<T>* trace = nullptr) {
    if (!is_finite(position.x) || !is_finite(position.y) || !is_finite(position.z) ||
        !is_finite(t))
        throw NumericError("hexplane query: non-finite coordinate");
    if (int(out.size()) != field.feature_size())
        throw std::invalid_argument("hexplane query: output size mismatch");

    std::array<T, 4> norm{};
    std::array<char, 4> gate{};
    for (int axis = 0; axis < 3; ++axis) {
        const T lo = field.bb_min[axis];
        const T hi = field.bb_max[axis];
        T n = (position[axis] - lo) / (hi - lo);
        gate[axis] = (n > T(0) && n < T(1)) ? 1 : 0;
        norm[axis] = std::clamp(n, T(0), T(1));
    }
    norm[3] = std::clamp(t, T(0), T(1));
    gate[3] = 0;  // time is not a trainable input

    if (trace) {
        trace->coords.assign(field.scales.size(), {});
        trace->coord_grads.assign(field.scales.size(), {});
    }
    std::fill(out.begin(), out.end(), T(0));

    for (std::size_t s = 0; s < field.scales.size(); ++s) {
        const auto& planes = field.scales[s];
        std::array<T, 4> coord{}, cgrad{};
        for (int axis = 0; axis < 4; ++axis) {
            const int res = field.base_res[axis] * field.multipliers[s];
            coord[axis] = norm[axis] * T(res - 1);
            if (axis < 3) {
                const T extent = field.bb_max[axis] - field.bb_min[axis];
                cgrad[axis] = gate[axis] ? T(res - 1) / extent : T(0);
            }
        }
        if (trace) {
            trace->coords[s] = coord;
            trace->coord_grads[s] = cgrad;
        }

        T* slice = out.data() + s * field.feat_dim;
        for (int p = 0; p < 6; ++p) {
            const PlaneGrid<T>& g = planes[p];
            int i0, j0;
            T fu, fv;
            detail::bilinear_setup(coord[kPlaneAxes[p][0]], g.rows, i0, fu);
            detail::bilinear_setup(coord[kPlaneAxes[p][1]], g.cols, j0, fv);
            const T* n00 = g.node(i0, j0);
            const T* n10 = g.node(i0 + 1, j0);
            const T* n01 = g.node(i0, j0 + 1);
            const T* n11 = g.node(i0 + 1, j0 + 1);
            const T w00 = (T(1) - fu) * (T(1) - fv);
            const T w10 = fu * (T(1) - fv);
            const T w01 = (T(1) - fu) * fv;
            const T w11 = fu * fv;
            for (int c = 0; c < g.feat; ++c)
                slice[c] += w00 * n00[c] + w10 * n10[c] + w01 * n01[c] + w11 * n11[c];
        }
    }
}

// One bilinear-corner gradient contribution: `node` indexes the plane grid
// node (row-major), values live in a parallel flat array of feat_dim entries.
struct CornerRef {
    int scale;
    int plane;
    int node;
};

template <typename T>
struct QueryBackward {
    Vec3<T> d_position{};
    std::vector<CornerRef> corners;
    std::vector<T> corner_values;  // corners.size() * feat_dim
};

// Gradient of hexplane_query w.r.t. grid nodes (as corner contributions, so
// callers can scatter them in a deterministic order) and the query position.
template <typename T>
QueryBackward<T> hexplane_query_backward(const HexPlaneField<T>& field,
                                         const HexQueryTrace<T>& trace, std::span<const T> d_out) {
    QueryBackward<T> result;
    result.corners.reserve(field.scales.size() * 24);
    result.corner_values.reserve(field.scales.size() * 24 * field.feat_dim);

    for (std::size_t s = 0; s < field.scales.size(); ++s) {
        const auto& planes = field.scales[s];
        const auto& coord = trace.coords[s];
        const auto& cgrad = trace.coord_grads[s];
        const T* d_slice = d_out.data() + s * field.feat_dim;

        for (int p = 0; p < 6; ++p) {
            const PlaneGrid<T>& g = planes[p];
            const int au = kPlaneAxes[p][0];
            const int av = kPlaneAxes[p][1];
            int i0, j0;
            T fu, fv;
            detail::bilinear_setup(coord[au], g.rows, i0, fu);
            detail::bilinear_setup(coord[av], g.cols, j0, fv);

            const std::array<std::array<T, 3>, 4> corners = {{
                {T(1) - fu, T(1) - fv, T(i0 * g.cols + j0)},
                {fu, T(1) - fv, T((i0 + 1) * g.cols + j0)},
                {T(1) - fu, fv, T(i0 * g.cols + j0 + 1)},
                {fu, fv, T((i0 + 1) * g.cols + j0 + 1)},
            }};
            for (const auto& cn : corners) {
                const T w = cn[0] * cn[1];
                result.corners.push_back({int(s), p, int(cn[2])});
                for (int c = 0; c < field.feat_dim; ++c)
                    result.corner_values.push_back(w * d_slice[c]);
            }

            // Coordinate gradient: d(out_c)/du and /dv contracted with d_out.
            const T* n00 = g.node(i0, j0);
            const T* n10 = g.node(i0 + 1, j0);
            const T* n01 = g.node(i0, j0 + 1);
            const T* n11 = g.node(i0 + 1, j0 + 1);
            T du = T(0), dv = T(0);
            for (int c = 0; c < g.feat; ++c) {
                du += d_slice[c] * ((n10[c] - n00[c]) * (T(1) - fv) + (n11[c] - n01[c]) * fv);
                dv += d_slice[c] * ((n01[c] - n00[c]) * (T(1) - fu) + (n11[c] - n10[c]) * fu);
            }
            if (au < 3) result.d_position[au] += du * cgrad[au];
            if (av < 3) result.d_position[av] += dv * cgrad[av];
        }
    }
    return result;
}

template <typename T>
void scatter_corner_grads(const QueryBackward<T>& qb, int feat_dim, FieldGrads<T>& grads) {
    for (std::size_t i = 0; i < qb.corners.size(); ++i) {
        const CornerRef& ref = qb.corners[i];
        T* dst = grads.scales[ref.scale][ref.plane].data() + std::size_t(ref.node) * feat_dim;
        const T* src = qb.corner_values.data() + i * feat_dim;
        for (int c = 0; c < feat_dim; ++c) dst[c] += src[c];
    }
}

// ---------------------------------------------------------------------------
// Total variation

// Mean squared difference between adjacent nodes along both plane axes, summed
// over all planes and scales. Gradients (scaled by `weight`) are accumulated
// when `grads` is given.
template <typename T>
T tv_loss(const HexPlaneField<T>& field, FieldGrads<T>* grads = nullptr, T weight = T(1)) {
    T total = T(0);
    for (std::size_t s = 0; s < field.scales.size(); ++s) {
        for (int p = 0; p < 6; ++p) {
            const PlaneGrid<T>& g = field.scales[s][p];
            const std::size_t pairs =
                (std::size_t(g.rows - 1) * g.cols + std::size_t(g.rows) * (g.cols - 1)) * g.feat;
            const T inv = T(1) / T(pairs);
            T sum = T(0);
            T* gd = grads ? grads->scales[s][p].data() : nullptr;
            for (int r = 0; r < g.rows; ++r) {
                for (int c = 0; c < g.cols; ++c) {
                    const T* a = g.node(r, c);
                    if (r + 1 < g.rows) {
                        const T* b = g.node(r + 1, c);
                        for (int f = 0; f < g.feat; ++f) {
                            const T d = b[f] - a[f];
                            sum += d * d;
                            if (gd) {
                                const T gdv = T(2) * d * inv * weight;
                                gd[(std::size_t(r + 1) * g.cols + c) * g.feat + f] += gdv;
                                gd[(std::size_t(r) * g.cols + c) * g.feat + f] -= gdv;
                            }
                        }
                    }
                    if (c + 1 < g.cols) {
                        const T* b = g.node(r, c + 1);
                        for (int f = 0; f < g.feat; ++f) {
                            const T d = b[f] - a[f];
                            sum += d * d;
                            if (gd) {
                                const T gdv = T(2) * d * inv * weight;
                                gd[(std::size_t(r) * g.cols + c + 1) * g.feat + f] += gdv;
                                gd[(std::size_t(r) * g.cols + c) * g.feat + f] -= gdv;
                            }
                        }
                    }
                }
            }
            total += sum * inv;
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// Deformation decoders

// phi_d fuses the field feature; the three single-layer heads start at exact
// zero so deformation is the identity until trained.
template <typename T>
struct DeformationDecoders {
    Mlp<T> fuser;
    Mlp<T> position_head;  // 3
    Mlp<T> rotation_head;  // 4
    Mlp<T> scale_head;     // 3

    static DeformationDecoders make(int field_feature, int hidden, int fd_dim, Rng& rng) {
        DeformationDecoders d;
        d.fuser = Mlp<T>::make({field_feature, hidden, fd_dim}, Activation::Relu, rng);
        d.position_head = Mlp<T>::zeros({fd_dim, 3});
        d.rotation_head = Mlp<T>::zeros({fd_dim, 4});
        d.scale_head = Mlp<T>::zeros({fd_dim, 3});
        return d;
    }

    std::size_t parameter_count() const {
        return fuser.parameter_count() + position_head.parameter_count() +
               rotation_head.parameter_count() + scale_head.parameter_count();
    }

    void check_finite() const {
        fuser.check_finite();
        position_head.check_finite();
        rotation_head.check_finite();
        scale_head.check_finite();
    }

    template <typename U>
    DeformationDecoders<U> cast() const {
        DeformationDecoders<U> d;
        d.fuser = fuser.template cast<U>();
        d.position_head = position_head.template cast<U>();
        d.rotation_head = rotation_head.template cast<U>();
        d.scale_head = scale_head.template cast<U>();
        return d;
    }
};

template <typename T>
struct DecoderGrads {
    MlpGrads<T> fuser, position, rotation, scale;

    explicit DecoderGrads(const DeformationDecoders<T>& d)
        : fuser(d.fuser), position(d.position_head), rotation(d.rotation_head),
          scale(d.scale_head) {}

    void zero() {
        fuser.zero();
        position.zero();
        rotation.zero();
        scale.zero();
    }
    void add(const DecoderGrads& o) {
        fuser.add(o.fuser);
        position.add(o.position);
        rotation.add(o.rotation);
        scale.add(o.scale);
    }
};

template <typename T>
struct DeformTrace {
    HexQueryTrace<T> query;
    MlpTrace<T> fuser_tr, pos_tr, rot_tr, scale_tr;
    Vec3<T> delta_position{};
    Quat<T> delta_rotation{T(0), T(0), T(0), T(0)};
    Vec3<T> delta_scale{};
};

template <typename T>
struct DeformResult {
    std::vector<NeuralGaussian<T>> gaussians;
    std::vector<DeformTrace<T>> traces;
    std::int64_t scale_clamps = 0;
    T time = T(0);
};

// Applies the decoded deformation to geometry only; color and opacity are
// copied bit-exactly. Exact-zero deltas short-circuit the rotation
// renormalization and the scale floor so an untrained field is a true
// identity.
template <typename T>
DeformResult<T> deform_gaussians(const std::vector<NeuralGaussian<T>>& gaussians,
                                 const HexPlaneField<T>& field,
                                 const DeformationDecoders<T>& decoders, T t,
                                 T scale_floor = T(1e-6)) {
    if (!(t >= T(0) && t <= T(1)))
        throw std::invalid_argument("deform: timestamp must lie in [0, 1]");
    DeformResult<T> result;
    result.time = t;
    if (gaussians.empty()) return result;
    decoders.check_finite();

    result.gaussians.resize(gaussians.size());
    result.traces.resize(gaussians.size());
    std::vector<std::int64_t> clamp_counts(gaussians.size(), 0);
    std::vector<T> feature(std::size_t(field.feature_size()) * gaussians.size());

    std::string error;
#pragma omp parallel for schedule(dynamic, 16)
    for (std::int64_t i = 0; i < std::int64_t(gaussians.size()); ++i) {
        try {
            const NeuralGaussian<T>& g = gaussians[i];
            NeuralGaussian<T>& out = result.gaussians[i];
            DeformTrace<T>& tr = result.traces[i];

            std::span<T> fh(feature.data() + std::size_t(i) * field.feature_size(),
                            std::size_t(field.feature_size()));
            hexplane_query(field, g.position, t, fh, &tr.query);

            std::vector<T> fd, dmu, drot, dscale;
            mlp_forward(decoders.fuser, std::span<const T>(fh.data(), fh.size()), tr.fuser_tr, fd);
            mlp_forward(decoders.position_head, std::span<const T>(fd), tr.pos_tr, dmu);
            mlp_forward(decoders.rotation_head, std::span<const T>(fd), tr.rot_tr, drot);
            mlp_forward(decoders.scale_head, std::span<const T>(fd), tr.scale_tr, dscale);

            tr.delta_position = {dmu[0], dmu[1], dmu[2]};
            tr.delta_rotation = {drot[0], drot[1], drot[2], drot[3]};
            tr.delta_scale = {dscale[0], dscale[1], dscale[2]};

            out = g;  // carries color, opacity, anchor_index, slot unchanged
            out.position = g.position + tr.delta_position;

            const Quat<T>& dq = tr.delta_rotation;
            if (dq.w != T(0) || dq.x != T(0) || dq.y != T(0) || dq.z != T(0))
                out.rotation = (g.rotation + dq).normalized();

            for (int j = 0; j < 3; ++j) {
                const T ds = tr.delta_scale[j];
                if (ds == T(0)) continue;
                T s = g.scale[j] + ds;
                if (s < scale_floor) {
                    s = scale_floor;
                    ++clamp_counts[i];
                }
                out.scale[j] = s;
            }
        } catch (const std::exception& e) {
#pragma omp critical
            if (error.empty()) error = e.what();
        }
    }
    if (!error.empty()) throw NumericError("deform: " + error);
    for (std::int64_t c : clamp_counts) result.scale_clamps += c;
    return result;
}

// Backward of deform_gaussians. Upstream color/opacity gradients pass through
// untouched; geometry gradients reach the input Gaussians, the grid nodes and
// the decoder parameters. Decoder gradients are accumulated in fixed chunks
// and grid-node contributions are scattered in Gaussian order, so results do
// not depend on the thread count.
template <typename T>
void deform_backward(const std::vector<NeuralGaussian<T>>& inputs, const HexPlaneField<T>& field,
                     const DeformationDecoders<T>& decoders, const DeformResult<T>& fwd,
                     std::span<const GaussianGrad<T>> upstream,
                     std::vector<GaussianGrad<T>>& d_inputs, FieldGrads<T>& field_grads,
                     DecoderGrads<T>& decoder_grads, T scale_floor = T(1e-6)) {
    if (upstream.size() != inputs.size())
        throw std::invalid_argument("deform_backward: gradient count mismatch");
    d_inputs.assign(inputs.size(), GaussianGrad<T>{});
    if (inputs.empty()) return;

    std::vector<QueryBackward<T>> query_grads(inputs.size());

    const std::size_t chunk = 64;
    const std::size_t n_chunks = (inputs.size() + chunk - 1) / chunk;
    std::vector<DecoderGrads<T>> chunk_grads(n_chunks, DecoderGrads<T>(decoders));

#pragma omp parallel for schedule(dynamic)
    for (std::int64_t c = 0; c < std::int64_t(n_chunks); ++c) {
        DecoderGrads<T>& dg = chunk_grads[c];
        const std::size_t begin = c * chunk;
        const std::size_t end = std::min(begin + chunk, inputs.size());
        std::vector<T> d_fd, d_fd_head, d_fh, d_raw(4);
        for (std::size_t i = begin; i < end; ++i) {
            const NeuralGaussian<T>& g = inputs[i];
            const DeformTrace<T>& tr = fwd.traces[i];
            const GaussianGrad<T>& up = upstream[i];
            GaussianGrad<T>& din = d_inputs[i];

            din.d_color = up.d_color;
            din.d_opacity = up.d_opacity;

            // mu' = mu + dmu
            din.d_position += up.d_position;
            const Vec3<T> d_dmu = up.d_position;

            // r' = normalize(r + dr)
            const Quat<T> q_sum = g.rotation + tr.delta_rotation;
            const Quat<T> dq_sum = normalize_backward(q_sum, up.d_rotation);
            din.d_rotation = dq_sum;
            const Quat<T> d_drot = dq_sum;

            // s' = max(s + ds, floor); exact-zero deltas keep derivative 1
            Vec3<T> d_dscale{};
            for (int j = 0; j < 3; ++j) {
                const T ds = tr.delta_scale[j];
                const bool open = ds == T(0) || g.scale[j] + ds > scale_floor;
                const T gd = open ? up.d_scale[j] : T(0);
                din.d_scale[j] = gd;
                d_dscale[j] = gd;
            }

            // Heads -> f_d
            std::vector<T> head_in(4);
            head_in = {d_dmu.x, d_dmu.y, d_dmu.z, T(0)};
            mlp_backward(decoders.position_head, tr.pos_tr,
                         std::span<const T>(head_in.data(), 3), dg.position, d_fd);
            d_raw = {d_drot.w, d_drot.x, d_drot.y, d_drot.z};
            mlp_backward(decoders.rotation_head, tr.rot_tr, std::span<const T>(d_raw), dg.rotation,
                         d_fd_head);
            for (std::size_t v = 0; v < d_fd.size(); ++v) d_fd[v] += d_fd_head[v];
            head_in = {d_dscale.x, d_dscale.y, d_dscale.z, T(0)};
            mlp_backward(decoders.scale_head, tr.scale_tr,
                         std::span<const T>(head_in.data(), 3), dg.scale, d_fd_head);
            for (std::size_t v = 0; v < d_fd.size(); ++v) d_fd[v] += d_fd_head[v];

            // f_d -> f_h -> grid nodes + query position
            mlp_backward(decoders.fuser, tr.fuser_tr, std::span<const T>(d_fd), dg.fuser, d_fh);
            query_grads[i] = hexplane_query_backward(field, tr.query, std::span<const T>(d_fh));
            din.d_position += query_grads[i].d_position;
        }
    }

    for (auto& cg : chunk_grads) decoder_grads.add(cg);
    for (const auto& qb : query_grads) scatter_corner_grads(qb, field.feat_dim, field_grads);
}

}  // namespace nvs
