#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fd_check.hpp"
#include "nvs/quaternion.hpp"
#include "nvs/render.hpp"
#include "nvs/rng.hpp"

using namespace nvs;

namespace {

Camera<double> axis_camera() {
    Camera<double> cam;
    cam.fx = cam.fy = 30.0;
    cam.cx = 15.5;
    cam.cy = 16.5;
    cam.width = cam.height = 32;
    cam.near_plane = 0.1;
    cam.far_plane = 100.0;
    return cam;  // identity pose, looking down +z
}

// Well-conditioned random splats with margin from the skip/termination gates.
std::vector<Splat2D<double>> random_scene(Rng& rng, int count, double extent) {
    std::vector<Splat2D<double>> splats(count);
    for (int i = 0; i < count; ++i) {
        auto& s = splats[i];
        s.mean = {rng.uniform(2.0, extent - 2.0), rng.uniform(2.0, extent - 2.0)};
        const double l1 = rng.uniform(1.5, 8.0);
        const double l2 = rng.uniform(1.5, 8.0);
        const double ang = rng.uniform(0.0, M_PI);
        const double c = std::cos(ang), sn = std::sin(ang);
        s.cov_xx = c * c * l1 + sn * sn * l2;
        s.cov_yy = sn * sn * l1 + c * c * l2;
        s.cov_xy = c * sn * (l1 - l2);
        s.depth = rng.uniform(0.5, 10.0);
        s.color = {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
        s.opacity = rng.uniform(0.25, 0.85);
        s.source = i;
    }
    return splats;
}

}  // namespace

TEST_SUITE("renderer") {

TEST_CASE("projection maps on-axis Gaussians to the principal point") {
    const auto cam = axis_camera();
    const Mat3<double> cov = Mat3<double>::identity() * 0.01;
    const auto s = project_gaussian(Vec3<double>{0, 0, 4.0}, cov, cam);
    REQUIRE(s.has_value());
    CHECK(s->mean.x == doctest::Approx(cam.cx));
    CHECK(s->mean.y == doctest::Approx(cam.cy));
    CHECK(s->depth == doctest::Approx(4.0));
}

TEST_CASE("projection of isotropic covariance matches the pinhole formula") {
    const auto cam = axis_camera();
    const double sigma = 0.2, z = 5.0;
    const Mat3<double> cov = Mat3<double>::identity() * (sigma * sigma);
    const auto s = project_gaussian(Vec3<double>{0, 0, z}, cov, cam);
    REQUIRE(s.has_value());
    const double expect = std::pow(cam.fx * sigma / z, 2) + kCovarianceFloor;
    CHECK(s->cov_xx == doctest::Approx(expect).epsilon(1e-12));
    CHECK(s->cov_yy == doctest::Approx(expect).epsilon(1e-12));
    CHECK(s->cov_xy == doctest::Approx(0.0));
}

TEST_CASE("projection culls outside the depth range") {
    const auto cam = axis_camera();
    const Mat3<double> cov = Mat3<double>::identity() * 0.01;
    CHECK(!project_gaussian(Vec3<double>{0, 0, -1.0}, cov, cam).has_value());
    CHECK(!project_gaussian(Vec3<double>{0, 0, 1000.0}, cov, cam).has_value());
}

TEST_CASE("projection gradients match finite differences") {
    Rng rng(71);
    testing::GradChecker gc(1e-4);
    for (int trial = 0; trial < 30; ++trial) {
        Camera<double> cam = axis_camera();
        Quat<double> cq{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        if (cq.norm() < 0.1) cq = {1, 0, 0, 0};
        cam.rotation = quaternion_to_rotation(cq);
        cam.translation = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};

        Vec3<double> mu = cam.rotation.t_times(
            Vec3<double>{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(3, 8)} -
            cam.translation);
        const Vec3<double> scale{rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5),
                                 rng.uniform(0.1, 0.5)};
        Quat<double> q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        if (q.norm() < 0.1) q = {1, 0, 0, 0};
        Mat3<double> cov = covariance_from_scale_rotation(scale, q);

        const Vec2<double> d_mean{rng.normal(), rng.normal()};
        const double d_xx = rng.normal(), d_xy = rng.normal(), d_yy = rng.normal();

        const auto loss = [&] {
            // Symmetrize so FD perturbations of one entry stay symmetric.
            Mat3<double> c2 = (cov + cov.transposed()) * 0.5;
            const auto s = project_gaussian(mu, c2, cam);
            REQUIRE(s.has_value());
            return s->mean.x * d_mean.x + s->mean.y * d_mean.y + s->cov_xx * d_xx +
                   s->cov_xy * d_xy + s->cov_yy * d_yy;
        };

        Vec3<double> d_mu;
        Mat3<double> d_cov;
        project_gaussian_backward(mu, cov, cam, d_mean, d_xx, d_xy, d_yy, d_mu, d_cov);

        for (int i = 0; i < 3; ++i) gc.check(loss, &mu[i], d_mu[i], "project d_mu");
        // Unique components: symmetric perturbation halves across the diagonal.
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                const double expect = (i == j) ? d_cov(i, i) : (d_cov(i, j) + d_cov(j, i)) / 2.0;
                gc.check(loss, &cov.m[i * 3 + j], expect, "project d_cov");
            }
    }
    CHECK(gc.failures() == 0);
}

TEST_CASE("empty splat list renders the background") {
    const Vec3<double> bg{0.1, 0.2, 0.3};
    const auto out = rasterize(std::vector<Splat2D<double>>{}, 8, 8, bg);
    for (int i = 0; i < 64; ++i) {
        CHECK(out.image[i * 3 + 0] == bg.x);
        CHECK(out.image[i * 3 + 1] == bg.y);
        CHECK(out.image[i * 3 + 2] == bg.z);
        CHECK(out.alpha[i] == 0.0);
    }
}

TEST_CASE("single splat at its mean blends c*a + bg*(1-a)") {
    Splat2D<double> s;
    s.mean = {8.0, 8.0};
    s.cov_xx = s.cov_yy = 4.0;
    s.cov_xy = 0.0;
    s.depth = 1.0;
    s.color = {1.0, 0.0, 0.0};
    s.opacity = 0.6;
    const Vec3<double> bg{0.0, 0.0, 1.0};
    const auto out = rasterize(std::vector<Splat2D<double>>{s}, 16, 16, bg);
    const std::size_t pix = 8 * 16 + 8;
    CHECK(out.image[pix * 3 + 0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(out.image[pix * 3 + 1] == doctest::Approx(0.0));
    CHECK(out.image[pix * 3 + 2] == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(out.alpha[pix] == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("two overlapping splats composite per the blending equation") {
    Splat2D<double> front, back;
    front.mean = back.mean = {5.0, 5.0};
    front.cov_xx = front.cov_yy = back.cov_xx = back.cov_yy = 9.0;
    front.cov_xy = back.cov_xy = 0.0;
    front.depth = 1.0;
    back.depth = 2.0;
    front.color = {0.9, 0.1, 0.2};
    back.color = {0.1, 0.8, 0.3};
    front.opacity = 0.5;
    back.opacity = 0.7;
    front.source = 0;
    back.source = 1;
    const Vec3<double> bg{0.2, 0.2, 0.2};

    const auto out = rasterize(std::vector<Splat2D<double>>{back, front}, 12, 12, bg);
    const std::size_t pix = 5 * 12 + 5;
    for (int c = 0; c < 3; ++c) {
        const double expect = front.color[c] * 0.5 + back.color[c] * 0.7 * 0.5 +
                              bg[c] * 0.5 * 0.3;
        CHECK(out.image[pix * 3 + c] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("tiled rasterizer equals the naive reference on random scenes") {
    Rng rng(404);
    double max_diff = 0;
    for (int scene = 0; scene < 100; ++scene) {
        const int n = 1 + int(rng.uniform_index(64));
        const auto splats = random_scene(rng, n, 32.0);
        const Vec3<double> bg{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
        const auto tiled = rasterize(splats, 32, 32, bg);
        const auto naive = rasterize_reference(splats, 32, 32, bg);
        for (std::size_t i = 0; i < naive.size(); ++i)
            max_diff = std::max(max_diff, std::abs(tiled.image[i] - naive[i]));
    }
    CHECK(max_diff <= 1e-5);
}

TEST_CASE("single splat matches the reference bit-for-bit") {
    Rng rng(405);
    const auto splats = random_scene(rng, 1, 16.0);
    const auto tiled = rasterize(splats, 16, 16, Vec3<double>{0, 0, 0});
    const auto naive = rasterize_reference(splats, 16, 16, Vec3<double>{0, 0, 0});
    CHECK(tiled.tile_splats.size() == 1);
    for (std::size_t i = 0; i < naive.size(); ++i) CHECK(tiled.image[i] == naive[i]);
}

TEST_CASE("input order never changes the output") {
    Rng rng(406);
    auto splats = random_scene(rng, 40, 32.0);
    const auto base = rasterize(splats, 32, 32, Vec3<double>{0, 0, 0});
    for (int round = 0; round < 3; ++round) {
        for (std::size_t i = splats.size() - 1; i > 0; --i)
            std::swap(splats[i], splats[rng.uniform_index(i + 1)]);
        const auto shuffled = rasterize(splats, 32, 32, Vec3<double>{0, 0, 0});
        for (std::size_t i = 0; i < base.image.size(); ++i)
            CHECK(base.image[i] == shuffled.image[i]);
    }
}

TEST_CASE("energy bound: accumulated alpha and pixels stay in [0, 1]") {
    Rng rng(407);
    for (int scene = 0; scene < 10; ++scene) {
        const auto splats = random_scene(rng, 64, 32.0);
        const auto out = rasterize(splats, 32, 32, Vec3<double>{0, 0, 0});
        for (double a : out.alpha) {
            CHECK(a >= 0.0);
            CHECK(a <= 1.0);
        }
        for (double v : out.image) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("singular 2D covariance is skipped with a diagnostic count") {
    Splat2D<double> s;
    s.mean = {4.0, 4.0};
    s.cov_xx = 1.0;
    s.cov_yy = 1.0;
    s.cov_xy = 5.0;  // det < 0
    s.depth = 1.0;
    s.color = {1, 1, 1};
    s.opacity = 0.9;
    const auto out = rasterize(std::vector<Splat2D<double>>{s}, 8, 8, Vec3<double>{0, 0, 0});
    CHECK(out.skipped_singular == 1);
    for (double v : out.image) CHECK(v == 0.0);
}

TEST_CASE("zero upstream gradient produces zero splat gradients") {
    Rng rng(408);
    const auto splats = random_scene(rng, 8, 16.0);
    const auto out = rasterize(splats, 16, 16, Vec3<double>{0, 0, 0});
    std::vector<double> d_image(out.image.size(), 0.0);
    const auto grads = rasterize_backward(splats, out, std::span<const double>(d_image));
    for (const auto& g : grads) {
        CHECK(g.d_mean.norm() == 0.0);
        CHECK(g.d_opacity == 0.0);
        CHECK(g.d_color.norm() == 0.0);
    }
}

TEST_CASE("fully occluded splats receive zero gradient") {
    // A huge, almost opaque splat in front drives transmittance below the
    // cutoff; the one behind never composites.
    Splat2D<double> front, back;
    front.mean = back.mean = {8.0, 8.0};
    front.cov_xx = front.cov_yy = 1e6;
    front.cov_xy = 0.0;
    front.opacity = 0.9999;  // sigma is huge, alpha ~ opacity across the image
    front.depth = 1.0;
    front.color = {1, 0, 0};
    front.source = 0;
    back.cov_xx = back.cov_yy = 9.0;
    back.cov_xy = 0.0;
    back.opacity = 0.8;
    back.depth = 2.0;
    back.color = {0, 1, 0};
    back.source = 1;

    std::vector<Splat2D<double>> twice{front, front, back};
    twice[1].source = 2;  // two stacked fronts: T = (1 - 0.9999)^2 = 1e-8 < cutoff
    const auto out = rasterize(twice, 16, 16, Vec3<double>{0, 0, 0});
    std::vector<double> d_image(out.image.size(), 1.0);
    const auto grads = rasterize_backward(twice, out, std::span<const double>(d_image));
    CHECK(grads[2].d_mean.norm() == 0.0);
    CHECK(grads[2].d_opacity == 0.0);
    CHECK(grads[2].d_color.norm() == 0.0);
    CHECK(grads[0].d_opacity != 0.0);
}

TEST_CASE("rasterize_backward matches finite differences") {
    Rng rng(409);
    testing::GradChecker gc(1e-3);
    for (int trial = 0; trial < 8; ++trial) {
        auto splats = random_scene(rng, 10, 16.0);
        std::vector<double> probe(16 * 16 * 3);
        for (auto& v : probe) v = rng.normal();
        const Vec3<double> bg{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};

        const auto loss = [&] {
            const auto out = rasterize(splats, 16, 16, bg);
            double acc = 0;
            for (std::size_t i = 0; i < out.image.size(); ++i) acc += out.image[i] * probe[i];
            return acc;
        };

        const auto out = rasterize(splats, 16, 16, bg);
        const auto grads = rasterize_backward(splats, out, std::span<const double>(probe));

        for (std::size_t i = 0; i < splats.size(); ++i) {
            gc.check(loss, &splats[i].mean.x, grads[i].d_mean.x, "raster d_mean_x");
            gc.check(loss, &splats[i].mean.y, grads[i].d_mean.y, "raster d_mean_y");
            gc.check(loss, &splats[i].cov_xx, grads[i].d_cov_xx, "raster d_cov_xx");
            gc.check(loss, &splats[i].cov_xy, grads[i].d_cov_xy, "raster d_cov_xy");
            gc.check(loss, &splats[i].cov_yy, grads[i].d_cov_yy, "raster d_cov_yy");
            gc.check(loss, &splats[i].opacity, grads[i].d_opacity, "raster d_opacity");
            gc.check(loss, &splats[i].color.x, grads[i].d_color.x, "raster d_color");
        }
    }
    CHECK(gc.failures() == 0);
    CHECK(gc.checked() > 500);
}

TEST_CASE("rasterize_backward requires the forward buffers") {
    RenderOutput<double> empty;
    std::vector<double> d;
    CHECK_THROWS_AS(
        rasterize_backward(std::vector<Splat2D<double>>{}, empty, std::span<const double>(d)),
        std::invalid_argument);
}

}  // TEST_SUITE
