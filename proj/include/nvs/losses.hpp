#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "nvs/common.hpp"
#include "nvs/hexplane.hpp"
#include "nvs/vec.hpp"

namespace nvs {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;  // (K1 L)^2, L = 1
inline constexpr double kSsimC2 = 0.03 * 0.03;

namespace detail {
template <typename T>
std::array<T, kSsimWindow * kSsimWindow> ssim_window() {
    std::array<T, kSsimWindow * kSsimWindow> w{};
    double onedim[kSsimWindow];
    double norm = 0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        onedim[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        norm += onedim[i];
    }
    for (int i = 0; i < kSsimWindow; ++i) onedim[i] /= norm;
    for (int i = 0; i < kSsimWindow; ++i)
        for (int j = 0; j < kSsimWindow; ++j) w[i * kSsimWindow + j] = T(onedim[i] * onedim[j]);
    return w;
}
}  // namespace detail

// Mean SSIM over the valid (fully covered) window positions, 11x11 Gaussian
// window, sigma 1.5. When `d_x` is non-null, `upstream * dSSIM/dx` is
// accumulated into it. Images are interleaved h*w*channels.
template <typename T>
T ssim(std::span<const T> x, std::span<const T> y, int h, int w, int channels,
       std::span<T> d_x = {}, T upstream = T(1)) {
    if (x.size() != y.size() || x.size() != std::size_t(h) * w * channels)
        throw std::invalid_argument("ssim: image shape mismatch");
    if (h < kSsimWindow || w < kSsimWindow)
        throw std::domain_error("ssim: image smaller than the filter window");

    static const auto win = detail::ssim_window<T>();
    const int vh = h - kSsimWindow + 1;
    const int vw = w - kSsimWindow + 1;
    const std::size_t n_valid = std::size_t(vh) * vw * channels;
    const bool want_grad = !d_x.empty();

    // Per-window gradients w.r.t. the three windowed moments of x.
    std::vector<T> gm1, gm2, gm3;
    if (want_grad) {
        gm1.assign(n_valid, T(0));
        gm2.assign(n_valid, T(0));
        gm3.assign(n_valid, T(0));
    }

    // Row-partial sums merged serially in row order keep the value identical
    // for any thread count.
    std::vector<T> row_totals(vh, T(0));
#pragma omp parallel for schedule(static)
    for (int r = 0; r < vh; ++r) {
        T& total = row_totals[r];
        for (int c = 0; c < vw; ++c) {
            for (int ch = 0; ch < channels; ++ch) {
                T m1 = 0, m2 = 0, m3 = 0, muy = 0, m2y = 0;
                for (int i = 0; i < kSsimWindow; ++i) {
                    const std::size_t row = (std::size_t(r + i) * w + c) * channels + ch;
                    for (int j = 0; j < kSsimWindow; ++j) {
                        const T wt = win[i * kSsimWindow + j];
                        const T xv = x[row + std::size_t(j) * channels];
                        const T yv = y[row + std::size_t(j) * channels];
                        m1 += wt * xv;
                        m2 += wt * xv * xv;
                        m3 += wt * xv * yv;
                        muy += wt * yv;
                        m2y += wt * yv * yv;
                    }
                }
                const T sx2 = m2 - m1 * m1;
                const T sy2 = m2y - muy * muy;
                const T sxy = m3 - m1 * muy;
                const T a1 = T(2) * m1 * muy + T(kSsimC1);
                const T a2 = T(2) * sxy + T(kSsimC2);
                const T b1 = m1 * m1 + muy * muy + T(kSsimC1);
                const T b2 = sx2 + sy2 + T(kSsimC2);
                const T s = (a1 * a2) / (b1 * b2);
                total += s;

                if (want_grad) {
                    const T g_a1 = a2 / (b1 * b2);
                    const T g_a2 = a1 / (b1 * b2);
                    const T g_b1 = -s / b1;
                    const T g_b2 = -s / b2;
                    const T g_sxy = T(2) * g_a2;
                    const T g_sx2 = g_b2;
                    T g_m1 = T(2) * muy * g_a1 + T(2) * m1 * g_b1;
                    g_m1 += -T(2) * m1 * g_sx2 - muy * g_sxy;
                    const std::size_t vi = (std::size_t(r) * vw + c) * channels + ch;
                    gm1[vi] = g_m1;
                    gm2[vi] = g_sx2;
                    gm3[vi] = g_sxy;
                }
            }
        }
    }

    T total = T(0);
    for (T rt : row_totals) total += rt;
    const T value = total / T(n_valid);
    if (want_grad) {
        const T scale = upstream / T(n_valid);
        // Gather: each pixel collects from every window that covers it.
#pragma omp parallel for schedule(static) collapse(2)
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                for (int ch = 0; ch < channels; ++ch) {
                    const std::size_t pi = (std::size_t(r) * w + c) * channels + ch;
                    const T xv = x[pi];
                    const T yv = y[pi];
                    T acc = T(0);
                    const int i_lo = std::max(0, r - vh + 1);
                    const int i_hi = std::min(kSsimWindow - 1, r);
                    const int j_lo = std::max(0, c - vw + 1);
                    const int j_hi = std::min(kSsimWindow - 1, c);
                    for (int i = i_lo; i <= i_hi; ++i) {
                        for (int j = j_lo; j <= j_hi; ++j) {
                            const std::size_t vi =
                                (std::size_t(r - i) * vw + (c - j)) * channels + ch;
                            const T wt = win[i * kSsimWindow + j];
                            acc += wt * (gm1[vi] + T(2) * xv * gm2[vi] + yv * gm3[vi]);
                        }
                    }
                    d_x[pi] += scale * acc;
                }
            }
        }
    }
    return value;
}

// L_color = L1 + lambda_ssim * (1 - SSIM).
template <typename T>
struct ColorLoss {
    T total{}, l1{}, ssim_value{};
};

template <typename T>
ColorLoss<T> color_loss(std::span<const T> rendered, std::span<const T> target, int h, int w,
                        T lambda_ssim, std::span<T> d_rendered = {}) {
    if (rendered.size() != target.size() || rendered.size() != std::size_t(h) * w * 3)
        throw std::invalid_argument("color_loss: image shape mismatch");
    ColorLoss<T> out;
    const T inv_n = T(1) / T(rendered.size());
    std::vector<T> row_l1(h, T(0));
#pragma omp parallel for schedule(static)
    for (int r = 0; r < h; ++r) {
        T& l1 = row_l1[r];
        for (std::size_t i = std::size_t(r) * w * 3; i < std::size_t(r + 1) * w * 3; ++i) {
            const T d = rendered[i] - target[i];
            l1 += std::abs(d);
            if (!d_rendered.empty() && d != T(0)) d_rendered[i] += (d > T(0) ? inv_n : -inv_n);
        }
    }
    T l1 = T(0);
    for (T rl : row_l1) l1 += rl;
    out.l1 = l1 * inv_n;
    if (h >= kSsimWindow && w >= kSsimWindow) {
        out.ssim_value = ssim(rendered, target, h, w, 3, d_rendered, -lambda_ssim);
    } else {
        // Images below the filter window carry no structural term.
        out.ssim_value = T(1);
    }
    out.total = out.l1 + lambda_ssim * (T(1) - out.ssim_value);
    return out;
}

// Sum over Gaussians of sx*sy*sz; discourages oversized primitives.
template <typename T>
T volume_regularization(std::span<const Vec3<T>> scales, std::span<Vec3<T>> d_scales = {},
                        T upstream = T(1)) {
    T total = T(0);
    for (std::size_t i = 0; i < scales.size(); ++i) {
        const Vec3<T>& s = scales[i];
        total += s.x * s.y * s.z;
        if (!d_scales.empty()) {
            d_scales[i].x += upstream * s.y * s.z;
            d_scales[i].y += upstream * s.x * s.z;
            d_scales[i].z += upstream * s.x * s.y;
        }
    }
    return total;
}

template <typename T>
struct LossWeights {
    T lambda_ssim = T(0.2);
    T lambda_tv = T(0.0002);
    T lambda_vol = T(0.015);
};

template <typename T>
struct TotalLoss {
    T total{}, color{}, l1{}, ssim_value{}, tv{}, vol{};
    std::vector<T> d_image;
    std::vector<Vec3<T>> d_scales;
};

// L = L_color + lambda_tv * L_tv + lambda_vol * L_vol. The TV term is skipped
// when `field` is null (stage 1 trains without the deformation module).
template <typename T>
TotalLoss<T> total_loss(std::span<const T> rendered, std::span<const T> target, int h, int w,
                        const HexPlaneField<T>* field, FieldGrads<T>* field_grads,
                        std::span<const Vec3<T>> scales, const LossWeights<T>& weights) {
    TotalLoss<T> out;
    out.d_image.assign(rendered.size(), T(0));
    out.d_scales.assign(scales.size(), Vec3<T>{});

    const ColorLoss<T> cl =
        color_loss<T>(rendered, target, h, w, weights.lambda_ssim, std::span<T>(out.d_image));
    out.color = cl.total;
    out.l1 = cl.l1;
    out.ssim_value = cl.ssim_value;
    if (field) out.tv = tv_loss(*field, field_grads, weights.lambda_tv);
    out.vol = volume_regularization<T>(scales, std::span<Vec3<T>>(out.d_scales), weights.lambda_vol);
    out.total = out.color + weights.lambda_tv * out.tv + weights.lambda_vol * out.vol;
    return out;
}

// 10 log10(1 / MSE), capped at 100 dB for exact matches.
template <typename T>
T psnr(std::span<const T> rendered, std::span<const T> target) {
    if (rendered.size() != target.size() || rendered.empty())
        throw std::invalid_argument("psnr: image shape mismatch");
    double mse = 0;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        const double d = double(rendered[i]) - double(target[i]);
        mse += d * d;
    }
    mse /= double(rendered.size());
    if (mse == 0) return T(100);  // exact-match cap
    return T(10.0 * std::log10(1.0 / mse));
}

// Multi-scale SSIM with the scale count adapted to the image size and the
// standard per-scale weights renormalized to the usable scales.
template <typename T>
T ms_ssim(std::span<const T> rendered, std::span<const T> target, int h, int w, int channels = 3) {
    static constexpr std::array<double, 5> kWeights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    int scales = 0;
    for (int s = 0; s < 5; ++s) {
        if (std::min(h, w) >> s >= kSsimWindow) scales = s + 1;
    }
    if (scales == 0) throw std::domain_error("ms_ssim: image smaller than the filter window");

    double weight_sum = 0;
    for (int s = 0; s < scales; ++s) weight_sum += kWeights[s];

    std::vector<T> x(rendered.begin(), rendered.end());
    std::vector<T> y(target.begin(), target.end());
    int ch = h, cw = w;
    double result = 1.0;
    for (int s = 0; s < scales; ++s) {
        // Per-scale contrast-structure statistic; luminance enters at the
        // coarsest scale only.
        const int vh = ch - kSsimWindow + 1;
        const int vw = cw - kSsimWindow + 1;
        static const auto win = detail::ssim_window<T>();
        double cs_sum = 0, ssim_sum = 0;
        for (int r = 0; r < vh; ++r) {
            for (int c = 0; c < vw; ++c) {
                for (int k = 0; k < channels; ++k) {
                    T mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
                    for (int i = 0; i < kSsimWindow; ++i)
                        for (int j = 0; j < kSsimWindow; ++j) {
                            const T wt = win[i * kSsimWindow + j];
                            const T xv = x[(std::size_t(r + i) * cw + c + j) * channels + k];
                            const T yv = y[(std::size_t(r + i) * cw + c + j) * channels + k];
                            mx += wt * xv;
                            my += wt * yv;
                            mxx += wt * xv * xv;
                            myy += wt * yv * yv;
                            mxy += wt * xv * yv;
                        }
                    const T sx2 = mxx - mx * mx;
                    const T sy2 = myy - my * my;
                    const T sxy = mxy - mx * my;
                    const double cs = (2.0 * sxy + kSsimC2) / (double(sx2) + double(sy2) + kSsimC2);
                    const double lum =
                        (2.0 * mx * my + kSsimC1) / (double(mx) * mx + double(my) * my + kSsimC1);
                    cs_sum += cs;
                    ssim_sum += lum * cs;
                }
            }
        }
        const double count = double(vh) * vw * channels;
        const double mean_cs = std::max(0.0, cs_sum / count);
        const double mean_ssim = std::max(0.0, ssim_sum / count);
        const double wgt = kWeights[s] / weight_sum;
        result *= std::pow(s + 1 == scales ? mean_ssim : mean_cs, wgt);

        if (s + 1 < scales) {
            // 2x2 average pooling.
            const int nh = ch / 2, nw = cw / 2;
            std::vector<T> nx(std::size_t(nh) * nw * channels), ny(nx.size());
            for (int r = 0; r < nh; ++r)
                for (int c = 0; c < nw; ++c)
                    for (int k = 0; k < channels; ++k) {
                        const auto at = [&](const std::vector<T>& im, int rr, int cc) {
                            return im[(std::size_t(rr) * cw + cc) * channels + k];
                        };
                        const std::size_t di = (std::size_t(r) * nw + c) * channels + k;
                        nx[di] = (at(x, 2 * r, 2 * c) + at(x, 2 * r + 1, 2 * c) +
                                  at(x, 2 * r, 2 * c + 1) + at(x, 2 * r + 1, 2 * c + 1)) /
                                 T(4);
                        ny[di] = (at(y, 2 * r, 2 * c) + at(y, 2 * r + 1, 2 * c) +
                                  at(y, 2 * r, 2 * c + 1) + at(y, 2 * r + 1, 2 * c + 1)) /
                                 T(4);
                    }
            x.swap(nx);
            y.swap(ny);
            ch = nh;
            cw = nw;
        }
    }
    return T(result);
}

}  // namespace nvs
