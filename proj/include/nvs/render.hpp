#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "nvs/camera.hpp"
#include "nvs/common.hpp"
#include "nvs/vec.hpp"

namespace nvs {

// Rasterization constants (3D-GS conventions). Pixel x' = (ix, iy) uses plain
// integer coordinates. Splats are truncated at the 3-sigma ellipse in BOTH the
// tiled and the reference path, which makes the two bit-identical.
inline constexpr int kTileSize = 16;
inline constexpr double kAlphaSkip = 1.0 / 255.0;
inline constexpr double kTransmittanceCutoff = 1e-4;
inline constexpr double kMahalanobisCutoff = 9.0;  // (3 sigma)^2
inline constexpr double kCovarianceFloor = 0.3;    // px^2, added by projection

template <typename T>
struct Splat2D {
    Vec2<T> mean{};                      // pixels
    T cov_xx{}, cov_xy{}, cov_yy{};      // pixels^2, low-pass padded
    T depth{};                           // view-space z
    Vec3<T> color{};
    T opacity{};
    int source = 0;                      // source Gaussian index (sort tie-break)
};

template <typename T>
struct SplatGrad {
    Vec2<T> d_mean{};
    T d_cov_xx{}, d_cov_xy{}, d_cov_yy{};
    Vec3<T> d_color{};
    T d_opacity{};
};

// ---------------------------------------------------------------------------
// Projection

// EWA-style projection of one 3D Gaussian. Returns nullopt when the center
// depth falls outside (near, far).
template <typename T>
std::optional<Splat2D<T>> project_gaussian(const Vec3<T>& mu, const Mat3<T>& cov3,
                                           const Camera<T>& camera, int source = 0) {
    const Vec3<T> p = camera.to_camera(mu);
    if (!(p.z > camera.near_plane && p.z < camera.far_plane)) return std::nullopt;

    Splat2D<T> s;
    s.source = source;
    s.depth = p.z;
    s.mean = {camera.fx * p.x / p.z + camera.cx, camera.fy * p.y / p.z + camera.cy};

    // M = J * R, J the perspective Jacobian at p.
    const T j00 = camera.fx / p.z;
    const T j02 = -camera.fx * p.x / (p.z * p.z);
    const T j11 = camera.fy / p.z;
    const T j12 = -camera.fy * p.y / (p.z * p.z);
    const auto& r = camera.rotation;
    T m[2][3];
    for (int c = 0; c < 3; ++c) {
        m[0][c] = j00 * r(0, c) + j02 * r(2, c);
        m[1][c] = j11 * r(1, c) + j12 * r(2, c);
    }
    // cov2 = M cov3 M^T + floor * I
    T tmp[2][3];
    for (int i = 0; i < 2; ++i)
        for (int c = 0; c < 3; ++c)
            tmp[i][c] = m[i][0] * cov3(0, c) + m[i][1] * cov3(1, c) + m[i][2] * cov3(2, c);
    s.cov_xx = tmp[0][0] * m[0][0] + tmp[0][1] * m[0][1] + tmp[0][2] * m[0][2] + T(kCovarianceFloor);
    s.cov_xy = tmp[0][0] * m[1][0] + tmp[0][1] * m[1][1] + tmp[0][2] * m[1][2];
    s.cov_yy = tmp[1][0] * m[1][0] + tmp[1][1] * m[1][1] + tmp[1][2] * m[1][2] + T(kCovarianceFloor);
    return s;
}

// Gradients of the projected mean and 2D covariance back to the world mean and
// 3D covariance, including the Jacobian's own dependence on the view position.
template <typename T>
void project_gaussian_backward(const Vec3<T>& mu, const Mat3<T>& cov3, const Camera<T>& camera,
                               const Vec2<T>& d_mean, T d_cov_xx, T d_cov_xy, T d_cov_yy,
                               Vec3<T>& d_mu, Mat3<T>& d_cov3) {
    const Vec3<T> p = camera.to_camera(mu);
    const T z2 = p.z * p.z;
    const T j00 = camera.fx / p.z;
    const T j02 = -camera.fx * p.x / z2;
    const T j11 = camera.fy / p.z;
    const T j12 = -camera.fy * p.y / z2;
    const auto& r = camera.rotation;
    T m[2][3];
    for (int c = 0; c < 3; ++c) {
        m[0][c] = j00 * r(0, c) + j02 * r(2, c);
        m[1][c] = j11 * r(1, c) + j12 * r(2, c);
    }

    // G = dL/dcov2 as a symmetric matrix (cov_xy appears in both off-diagonals).
    const T g00 = d_cov_xx, g11 = d_cov_yy, g01 = d_cov_xy / T(2);

    // d cov3 = M^T G M
    T gm[2][3];
    for (int c = 0; c < 3; ++c) {
        gm[0][c] = g00 * m[0][c] + g01 * m[1][c];
        gm[1][c] = g01 * m[0][c] + g11 * m[1][c];
    }
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) d_cov3(i, j) = m[0][i] * gm[0][j] + m[1][i] * gm[1][j];

    // dM = (G + G^T) M cov3 = 2 G M cov3
    T mc[2][3];
    for (int i = 0; i < 2; ++i)
        for (int c = 0; c < 3; ++c)
            mc[i][c] = m[i][0] * cov3(0, c) + m[i][1] * cov3(1, c) + m[i][2] * cov3(2, c);
    T dm[2][3];
    for (int c = 0; c < 3; ++c) {
        dm[0][c] = T(2) * (g00 * mc[0][c] + g01 * mc[1][c]);
        dm[1][c] = T(2) * (g01 * mc[0][c] + g11 * mc[1][c]);
    }
    // dJ = dM R^T; only entries (0,0), (0,2), (1,1), (1,2) are nonzero in J.
    const T dj00 = dm[0][0] * r(0, 0) + dm[0][1] * r(0, 1) + dm[0][2] * r(0, 2);
    const T dj02 = dm[0][0] * r(2, 0) + dm[0][1] * r(2, 1) + dm[0][2] * r(2, 2);
    const T dj11 = dm[1][0] * r(1, 0) + dm[1][1] * r(1, 1) + dm[1][2] * r(1, 2);
    const T dj12 = dm[1][0] * r(2, 0) + dm[1][1] * r(2, 1) + dm[1][2] * r(2, 2);

    // Mean path plus the Jacobian path, in camera space.
    Vec3<T> dp{};
    dp.x = d_mean.x * j00;
    dp.y = d_mean.y * j11;
    dp.z = -d_mean.x * camera.fx * p.x / z2 - d_mean.y * camera.fy * p.y / z2;
    const T z3 = z2 * p.z;
    dp.x += dj02 * (-camera.fx / z2);
    dp.y += dj12 * (-camera.fy / z2);
    dp.z += dj00 * (-camera.fx / z2) + dj02 * (T(2) * camera.fx * p.x / z3) +
            dj11 * (-camera.fy / z2) + dj12 * (T(2) * camera.fy * p.y / z3);

    d_mu = camera.rotation.t_times(dp);
}

// ---------------------------------------------------------------------------
// Rasterization

template <typename T>
struct RenderOutput {
    int width = 0, height = 0;
    Vec3<T> background{};
    std::vector<T> image;        // h * w * 3
    std::vector<T> alpha;        // h * w, accumulated alpha
    std::vector<T> final_transmittance;  // h * w
    std::vector<int> n_contrib;  // h * w, composited splats per pixel
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<int>> tile_splats;  // per tile, sorted front-to-back
    std::int64_t skipped_singular = 0;
};

namespace detail {

template <typename T>
struct SplatPre {
    T conic_xx, conic_xy, conic_yy;
    int radius;
    bool valid;
};

template <typename T>
SplatPre<T> precompute_splat(const Splat2D<T>& s) {
    SplatPre<T> pre{};
    const T det = s.cov_xx * s.cov_yy - s.cov_xy * s.cov_xy;
    if (!(det > T(0))) {
        pre.valid = false;
        return pre;
    }
    pre.valid = true;
    pre.conic_xx = s.cov_yy / det;
    pre.conic_xy = -s.cov_xy / det;
    pre.conic_yy = s.cov_xx / det;
    const T mid = (s.cov_xx + s.cov_yy) / T(2);
    const T disc = std::sqrt(std::max(T(0), mid * mid - det));
    const T lambda_max = mid + disc;
    pre.radius = int(std::ceil(T(3) * std::sqrt(lambda_max)));
    return pre;
}

// One compositing step shared by the tiled and reference paths. Returns false
// once the transmittance cutoff terminates the pixel.
template <typename T, typename Emit>
bool composite_step(const Splat2D<T>& s, const SplatPre<T>& pre, T px, T py, Vec3<T>& color,
                    T& transmit, int& contrib, Emit&& emit) {
    const T dx = px - s.mean.x;
    const T dy = py - s.mean.y;
    const T q = pre.conic_xx * dx * dx + T(2) * pre.conic_xy * dx * dy + pre.conic_yy * dy * dy;
    if (q > T(kMahalanobisCutoff)) return true;
    const T gauss = std::exp(T(-0.5) * q);
    const T a = s.opacity * gauss;
    if (a < T(kAlphaSkip)) return true;
    const T next_transmit = transmit * (T(1) - a);
    if (next_transmit < T(kTransmittanceCutoff)) return false;
    color += s.color * (a * transmit);
    emit(a, gauss, dx, dy, transmit);
    transmit = next_transmit;
    ++contrib;
    return true;
}

struct NoEmit {
    template <typename... Args>
    void operator()(Args&&...) const {}
};

template <typename T>
bool splat_order(const std::vector<Splat2D<T>>& splats, int a, int b) {
    if (splats[a].depth != splats[b].depth) return splats[a].depth < splats[b].depth;
    if (splats[a].source != splats[b].source) return splats[a].source < splats[b].source;
    return a < b;
}

}  // namespace detail

// Tile-based forward rasterizer (Eq.-2 alpha blending front to back). Tiles
// own disjoint pixels, so the tile loop parallelizes without any ordering
// caveat.
template <typename T>
RenderOutput<T> rasterize(const std::vector<Splat2D<T>>& splats, int height, int width,
                          const Vec3<T>& background) {
    if (width <= 0 || height <= 0) throw std::invalid_argument("rasterize: empty image");
    for (const auto& s : splats) {
        if (!is_finite(s.mean.x) || !is_finite(s.mean.y) || !is_finite(s.depth) ||
            !is_finite(s.cov_xx) || !is_finite(s.cov_xy) || !is_finite(s.cov_yy) ||
            !is_finite(s.opacity))
            throw std::invalid_argument("rasterize: non-finite splat");
    }

    RenderOutput<T> out;
    out.width = width;
    out.height = height;
    out.background = background;
    out.tiles_x = (width + kTileSize - 1) / kTileSize;
    out.tiles_y = (height + kTileSize - 1) / kTileSize;
    out.tile_splats.assign(std::size_t(out.tiles_x) * out.tiles_y, {});
    out.image.assign(std::size_t(height) * width * 3, T(0));
    out.alpha.assign(std::size_t(height) * width, T(0));
    out.final_transmittance.assign(std::size_t(height) * width, T(1));
    out.n_contrib.assign(std::size_t(height) * width, 0);

    std::vector<detail::SplatPre<T>> pre(splats.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < std::int64_t(splats.size()); ++i)
        pre[i] = detail::precompute_splat(splats[i]);

    // Tile assignment from the 3-sigma bounding box (serial, keeps list order
    // canonical before the per-tile sort).
    for (std::size_t i = 0; i < splats.size(); ++i) {
        if (!pre[i].valid) {
            ++out.skipped_singular;
            continue;
        }
        const auto& s = splats[i];
        const int r = pre[i].radius;
        const int x0 = std::max(0, int(std::floor(s.mean.x)) - r);
        const int x1 = std::min(width - 1, int(std::ceil(s.mean.x)) + r);
        const int y0 = std::max(0, int(std::floor(s.mean.y)) - r);
        const int y1 = std::min(height - 1, int(std::ceil(s.mean.y)) + r);
        if (x0 > x1 || y0 > y1) continue;
        for (int ty = y0 / kTileSize; ty <= y1 / kTileSize; ++ty)
            for (int tx = x0 / kTileSize; tx <= x1 / kTileSize; ++tx)
                out.tile_splats[std::size_t(ty) * out.tiles_x + tx].push_back(int(i));
    }

#pragma omp parallel for schedule(dynamic)
    for (std::int64_t tile = 0; tile < std::int64_t(out.tile_splats.size()); ++tile) {
        auto& list = out.tile_splats[tile];
        std::sort(list.begin(), list.end(),
                  [&](int a, int b) { return detail::splat_order(splats, a, b); });

        const int tx = int(tile % out.tiles_x);
        const int ty = int(tile / out.tiles_x);
        const int px0 = tx * kTileSize;
        const int py0 = ty * kTileSize;
        const int px1 = std::min(width, px0 + kTileSize);
        const int py1 = std::min(height, py0 + kTileSize);

        for (int py = py0; py < py1; ++py) {
            for (int px = px0; px < px1; ++px) {
                Vec3<T> color{};
                T transmit = T(1);
                int contrib = 0;
                for (int idx : list) {
                    if (!detail::composite_step(splats[idx], pre[idx], T(px), T(py), color,
                                                transmit, contrib, detail::NoEmit{}))
                        break;
                }
                const std::size_t pix = std::size_t(py) * width + px;
                out.image[pix * 3 + 0] = color.x + background.x * transmit;
                out.image[pix * 3 + 1] = color.y + background.y * transmit;
                out.image[pix * 3 + 2] = color.z + background.z * transmit;
                out.alpha[pix] = T(1) - transmit;
                out.final_transmittance[pix] = transmit;
                out.n_contrib[pix] = contrib;
            }
        }
    }
    return out;
}

// Naive per-pixel rasterizer over a single global sort; the correctness oracle
// for the tiled path. Kept deliberately serial.
template <typename T>
std::vector<T> rasterize_reference(const std::vector<Splat2D<T>>& splats, int height, int width,
                                   const Vec3<T>& background) {
    std::vector<int> order;
    std::vector<detail::SplatPre<T>> pre(splats.size());
    for (std::size_t i = 0; i < splats.size(); ++i) {
        pre[i] = detail::precompute_splat(splats[i]);
        if (pre[i].valid) order.push_back(int(i));
    }
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return detail::splat_order(splats, a, b); });

    std::vector<T> image(std::size_t(height) * width * 3);
    for (int py = 0; py < height; ++py) {
        for (int px = 0; px < width; ++px) {
            Vec3<T> color{};
            T transmit = T(1);
            int contrib = 0;
            for (int idx : order) {
                if (!detail::composite_step(splats[idx], pre[idx], T(px), T(py), color, transmit,
                                            contrib, detail::NoEmit{}))
                    break;
            }
            const std::size_t pix = std::size_t(py) * width + px;
            image[pix * 3 + 0] = color.x + background.x * transmit;
            image[pix * 3 + 1] = color.y + background.y * transmit;
            image[pix * 3 + 2] = color.z + background.z * transmit;
        }
    }
    return image;
}

// Exact reverse of the forward compositing; skip and termination thresholds
// act as hard gates. Per-splat contributions from different tiles are merged
// in tile order, so accumulation is deterministic for any thread count.
template <typename T>
std::vector<SplatGrad<T>> rasterize_backward(const std::vector<Splat2D<T>>& splats,
                                             const RenderOutput<T>& fwd,
                                             std::span<const T> d_image) {
    if (fwd.width <= 0 || fwd.height <= 0 || fwd.tile_splats.empty())
        throw std::invalid_argument("rasterize_backward: forward buffers missing");
    if (d_image.size() != fwd.image.size())
        throw std::invalid_argument("rasterize_backward: gradient size mismatch");

    std::vector<detail::SplatPre<T>> pre(splats.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < std::int64_t(splats.size()); ++i)
        pre[i] = detail::precompute_splat(splats[i]);

    const std::size_t n_tiles = fwd.tile_splats.size();
    std::vector<std::vector<SplatGrad<T>>> tile_grads(n_tiles);

    struct Step {
        int idx;
        T alpha, gauss, dx, dy, transmit;
    };

#pragma omp parallel for schedule(dynamic)
    for (std::int64_t tile = 0; tile < std::int64_t(n_tiles); ++tile) {
        const auto& list = fwd.tile_splats[tile];
        if (list.empty()) continue;
        auto& grads = tile_grads[tile];
        grads.assign(list.size(), SplatGrad<T>{});
        std::vector<int> list_pos(list.size());
        for (std::size_t i = 0; i < list.size(); ++i) list_pos[i] = int(i);

        const int tx = int(tile % fwd.tiles_x);
        const int ty = int(tile / fwd.tiles_x);
        const int px0 = tx * kTileSize;
        const int py0 = ty * kTileSize;
        const int px1 = std::min(fwd.width, px0 + kTileSize);
        const int py1 = std::min(fwd.height, py0 + kTileSize);

        std::vector<Step> steps;
        steps.reserve(list.size());

        for (int py = py0; py < py1; ++py) {
            for (int px = px0; px < px1; ++px) {
                const std::size_t pix = std::size_t(py) * fwd.width + px;
                const Vec3<T> dc{d_image[pix * 3 + 0], d_image[pix * 3 + 1], d_image[pix * 3 + 2]};
                if (dc.x == T(0) && dc.y == T(0) && dc.z == T(0)) continue;

                // Replay the forward walk to recover each contributor's state.
                steps.clear();
                {
                    Vec3<T> color{};
                    T transmit = T(1);
                    int contrib = 0;
                    for (std::size_t li = 0; li < list.size(); ++li) {
                        const int idx = list[li];
                        bool cont = detail::composite_step(
                            splats[idx], pre[idx], T(px), T(py), color, transmit, contrib,
                            [&](T a, T gauss, T dx, T dy, T t_before) {
                                steps.push_back({int(li), a, gauss, dx, dy, t_before});
                            });
                        if (!cont) break;
                    }
                }

                // Suffix color behind each contributor, seeded by the background.
                Vec3<T> suffix = fwd.background * fwd.final_transmittance[pix];
                for (int si = int(steps.size()) - 1; si >= 0; --si) {
                    const Step& st = steps[si];
                    const Splat2D<T>& s = splats[list[st.idx]];
                    SplatGrad<T>& g = grads[st.idx];

                    const T at = st.alpha * st.transmit;
                    g.d_color += dc * at;

                    const T d_alpha = (dc.dot(s.color) * st.transmit) -
                                      dc.dot(suffix) / (T(1) - st.alpha);
                    g.d_opacity += d_alpha * st.gauss;
                    const T d_q = d_alpha * st.alpha * T(-0.5);

                    const detail::SplatPre<T>& pc = pre[list[st.idx]];
                    // q = xx*dx^2 + 2 xy dx dy + yy dy^2 over the conic
                    const T d_cxx = d_q * st.dx * st.dx;
                    const T d_cxy = d_q * T(2) * st.dx * st.dy;
                    const T d_cyy = d_q * st.dy * st.dy;
                    const T ddx = d_q * (T(2) * pc.conic_xx * st.dx + T(2) * pc.conic_xy * st.dy);
                    const T ddy = d_q * (T(2) * pc.conic_yy * st.dy + T(2) * pc.conic_xy * st.dx);
                    g.d_mean.x -= ddx;
                    g.d_mean.y -= ddy;

                    // conic = cov^{-1}: dCov = -conic * dConic * conic.
                    const T q00 = pc.conic_xx, q01 = pc.conic_xy, q11 = pc.conic_yy;
                    const T h00 = d_cxx, h01 = d_cxy / T(2), h11 = d_cyy;
                    const T a00 = q00 * h00 + q01 * h01, a01 = q00 * h01 + q01 * h11;
                    const T a10 = q01 * h00 + q11 * h01, a11 = q01 * h01 + q11 * h11;
                    const T c00 = -(a00 * q00 + a01 * q01);
                    const T c01 = -(a00 * q01 + a01 * q11);
                    const T c10 = -(a10 * q00 + a11 * q01);
                    const T c11 = -(a10 * q01 + a11 * q11);
                    g.d_cov_xx += c00;
                    g.d_cov_xy += c01 + c10;
                    g.d_cov_yy += c11;

                    suffix += s.color * at;
                }
            }
        }
    }

    // Deterministic merge in tile order.
    std::vector<SplatGrad<T>> result(splats.size());
    for (std::size_t tile = 0; tile < n_tiles; ++tile) {
        const auto& list = fwd.tile_splats[tile];
        const auto& grads = tile_grads[tile];
        for (std::size_t li = 0; li < grads.size(); ++li) {
            SplatGrad<T>& dst = result[list[li]];
            const SplatGrad<T>& src = grads[li];
            dst.d_mean += src.d_mean;
            dst.d_cov_xx += src.d_cov_xx;
            dst.d_cov_xy += src.d_cov_xy;
            dst.d_cov_yy += src.d_cov_yy;
            dst.d_color += src.d_color;
            dst.d_opacity += src.d_opacity;
        }
    }
    return result;
}

}  // namespace nvs
