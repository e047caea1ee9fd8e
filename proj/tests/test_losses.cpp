#include <doctest.h>

#include <cmath>
#include <vector>

#include "fd_check.hpp"
#include "nvs/losses.hpp"
#include "nvs/rng.hpp"

using namespace nvs;

namespace {

std::vector<double> random_image(Rng& rng, int h, int w) {
    std::vector<double> img(std::size_t(h) * w * 3);
    for (auto& v : img) v = rng.uniform();
    return img;
}

// Straightforward SSIM re-implementation (direct double loops, no sharing with
// the production code path beyond the constants).
double ssim_oracle(const std::vector<double>& x, const std::vector<double>& y, int h, int w) {
    const int win = 11;
    const double sigma = 1.5;
    std::vector<double> kernel(win * win);
    double norm = 0;
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
            const double di = i - 5, dj = j - 5;
            kernel[i * win + j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
            norm += kernel[i * win + j];
        }
    for (auto& k : kernel) k /= norm;

    double total = 0;
    int count = 0;
    for (int r = 0; r + win <= h; ++r)
        for (int c = 0; c + win <= w; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
                for (int i = 0; i < win; ++i)
                    for (int j = 0; j < win; ++j) {
                        const double k = kernel[i * win + j];
                        const double xv = x[((r + i) * std::size_t(w) + c + j) * 3 + ch];
                        const double yv = y[((r + i) * std::size_t(w) + c + j) * 3 + ch];
                        mx += k * xv;
                        my += k * yv;
                        mxx += k * xv * xv;
                        myy += k * yv * yv;
                        mxy += k * xv * yv;
                    }
                const double vx = mxx - mx * mx, vy = myy - my * my, vxy = mxy - mx * my;
                const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
                total += ((2 * mx * my + c1) * (2 * vxy + c2)) /
                         ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
    return total / count;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("color loss vanishes on identical images") {
    Rng rng(1);
    const auto img = random_image(rng, 16, 16);
    const auto out = color_loss<double>(img, img, 16, 16, 0.2);
    CHECK(out.total == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(out.l1 == 0.0);
    CHECK(out.ssim_value == doctest::Approx(1.0));
}

TEST_CASE("constant offset drives the L1 term") {
    std::vector<double> a(16 * 16 * 3, 0.5), b(16 * 16 * 3, 0.6);
    const auto out = color_loss<double>(a, b, 16, 16, 0.2);
    CHECK(out.l1 == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("ssim matches an independently coded oracle") {
    Rng rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        const auto x = random_image(rng, 20, 24);
        const auto y = random_image(rng, 20, 24);
        const double mine = ssim<double>(x, y, 20, 24, 3);
        const double oracle = ssim_oracle(x, y, 20, 24);
        CHECK(std::abs(mine - oracle) < 1e-6);
    }
}

TEST_CASE("color loss gradient matches finite differences") {
    Rng rng(3);
    testing::GradChecker gc(1e-4);
    auto x = random_image(rng, 14, 14);
    const auto y = random_image(rng, 14, 14);

    const auto loss = [&] { return color_loss<double>(x, y, 14, 14, 0.2).total; };
    std::vector<double> grad(x.size(), 0.0);
    color_loss<double>(x, y, 14, 14, 0.2, std::span<double>(grad));
    for (std::size_t i = 0; i < x.size(); i += 7) gc.check(loss, &x[i], grad[i], "color d_img");
    CHECK(gc.failures() == 0);
    CHECK(gc.checked() > 80);
}

TEST_CASE("volume regularization: unit and hand-product cases") {
    std::vector<Vec3<double>> unit(5, Vec3<double>{1, 1, 1});
    CHECK(volume_regularization<double>(unit) == doctest::Approx(5.0));

    std::vector<Vec3<double>> one{Vec3<double>{2, 3, 4}};
    CHECK(volume_regularization<double>(one) == doctest::Approx(24.0));
}

TEST_CASE("volume regularization gradient matches finite differences") {
    Rng rng(4);
    testing::GradChecker gc(1e-6);
    std::vector<Vec3<double>> scales(8);
    for (auto& s : scales) s = {rng.uniform(0.1, 2), rng.uniform(0.1, 2), rng.uniform(0.1, 2)};
    const auto loss = [&] { return volume_regularization<double>(scales); };
    std::vector<Vec3<double>> grads(scales.size());
    volume_regularization<double>(scales, std::span<Vec3<double>>(grads));
    for (std::size_t i = 0; i < scales.size(); ++i)
        for (int j = 0; j < 3; ++j) gc.check(loss, &scales[i][j], grads[i][j], "vol d_scale");
    CHECK(gc.failures() == 0);
}

TEST_CASE("total loss composes the weighted sum exactly") {
    // Components (0.5, 10.0, 2.0) with paper weights: 0.5 + 0.002 + 0.03.
    const double total = 0.5 + 0.0002 * 10.0 + 0.015 * 2.0;
    CHECK(total == doctest::Approx(0.532).epsilon(1e-12));

    Rng rng(5);
    auto field = HexPlaneField<double>::make({-1, -1, -1}, {1, 1, 1}, {3, 3, 3, 2}, {1}, 2, rng);
    const auto rendered = random_image(rng, 16, 16);
    const auto target = random_image(rng, 16, 16);
    std::vector<Vec3<double>> scales(6);
    for (auto& s : scales) s = {rng.uniform(0.1, 1), rng.uniform(0.1, 1), rng.uniform(0.1, 1)};

    LossWeights<double> weights;
    FieldGrads<double> fg(field);
    const auto out = total_loss<double>(rendered, target, 16, 16, &field, &fg, scales, weights);

    const double color = color_loss<double>(rendered, target, 16, 16, weights.lambda_ssim).total;
    const double tv = tv_loss(field);
    const double vol = volume_regularization<double>(scales);
    CHECK(out.total ==
          doctest::Approx(color + weights.lambda_tv * tv + weights.lambda_vol * vol)
              .epsilon(1e-12));

    // Linearity in each lambda at fixed components.
    LossWeights<double> w2 = weights;
    w2.lambda_vol = 2 * weights.lambda_vol;
    const auto out2 = total_loss<double>(rendered, target, 16, 16, &field, &fg, scales, w2);
    CHECK(out2.total - out.total == doctest::Approx(weights.lambda_vol * vol).epsilon(1e-9));
}

TEST_CASE("psnr closed forms and MSE scaling") {
    std::vector<double> a(300, 0.5);
    CHECK(psnr<double>(a, a) == doctest::Approx(100.0));

    std::vector<double> b(300, 0.6);  // MSE = 0.01
    CHECK(psnr<double>(a, b) == doctest::Approx(20.0).epsilon(1e-9));
    CHECK(psnr<double>(b, a) == doctest::Approx(20.0).epsilon(1e-9));  // symmetric

    Rng rng(6);
    std::vector<double> x(300), y(300);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = rng.uniform();
        y[i] = rng.uniform();
    }
    double mse = 0;
    for (std::size_t i = 0; i < x.size(); ++i) mse += (x[i] - y[i]) * (x[i] - y[i]);
    mse /= double(x.size());
    CHECK(psnr<double>(x, y) == doctest::Approx(10 * std::log10(1 / mse)).epsilon(1e-9));

    // Doubling the MSE costs 10 log10(2) dB.
    std::vector<double> z(300, 0.5);
    std::vector<double> z2(300, 0.5);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += (i % 2 ? 0.1 : -0.1);
    for (std::size_t i = 0; i < z2.size(); ++i) z2[i] += (i % 2 ? 0.1 : -0.1) * std::sqrt(2.0);
    const double drop = psnr<double>(z, z2) - 0;  // silence unused warnings
    (void)drop;
    const double p1 = psnr<double>(a, z);
    const double p2 = psnr<double>(a, z2);
    CHECK(p1 - p2 == doctest::Approx(10 * std::log10(2.0)).epsilon(1e-9));
}

TEST_CASE("ms-ssim basics and ordering") {
    Rng rng(7);
    const auto x = random_image(rng, 48, 48);
    CHECK(ms_ssim<double>(x, x, 48, 48) == doctest::Approx(1.0));

    std::vector<double> inv(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) inv[i] = 1.0 - x[i];
    CHECK(ms_ssim<double>(x, inv, 48, 48) < 1.0);

    std::vector<double> tiny(8 * 8 * 3, 0.5);
    CHECK_THROWS_AS(ms_ssim<double>(tiny, tiny, 8, 8), std::domain_error);
}

TEST_CASE("ms-ssim matches a direct reference at single scale count") {
    // At 20x20 only one scale is usable, so MS-SSIM reduces to mean(lum * cs)
    // over the valid windows; verify against the plain SSIM oracle.
    Rng rng(8);
    const auto x = random_image(rng, 20, 20);
    const auto y = random_image(rng, 20, 20);
    const double ms = ms_ssim<double>(x, y, 20, 20);
    const double oracle = ssim_oracle(x, y, 20, 20);
    CHECK(std::abs(ms - oracle) < 1e-4);
}

}  // TEST_SUITE
