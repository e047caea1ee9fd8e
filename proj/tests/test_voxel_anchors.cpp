#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "fd_check.hpp"
#include "nvs/anchors.hpp"
#include "nvs/camera.hpp"
#include "nvs/rng.hpp"

using namespace nvs;

namespace {

Camera<double> test_camera() {
    Camera<double> cam;
    cam.fx = cam.fy = 40.0;
    cam.cx = cam.cy = 16.0;
    cam.width = cam.height = 32;
    cam.near_plane = 0.05;
    cam.far_plane = 50.0;
    look_at(cam, Vec3<double>{0, 0, -5}, Vec3<double>{0, 0, 0});
    return cam;
}

Anchor<double> make_anchor(Rng& rng, int feature_dim, int k, const Vec3<double>& center) {
    Anchor<double> a;
    a.center = center;
    a.feature.resize(feature_dim);
    for (auto& f : a.feature) f = rng.normal() * 0.3;
    a.scale = {rng.uniform(0.2, 0.6), rng.uniform(0.2, 0.6), rng.uniform(0.2, 0.6)};
    a.offsets.resize(k);
    for (auto& o : a.offsets) o = {rng.normal() * 0.5, rng.normal() * 0.5, rng.normal() * 0.5};
    return a;
}

// Independent frustum oracle: side planes from cross products of the corner
// rays, oriented inward by the optical axis.
bool oracle_inside(const Camera<double>& cam, const Vec3<double>& center, double pad) {
    const Vec3<double> p = cam.to_camera(center);
    if (p.z < cam.near_plane - pad || p.z > cam.far_plane + pad) return false;
    const auto ray = [&](double u, double v) {
        return Vec3<double>{(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
    };
    const Vec3<double> r00 = ray(0, 0), r10 = ray(cam.width, 0), r01 = ray(0, cam.height),
                       r11 = ray(cam.width, cam.height);
    const std::vector<std::pair<Vec3<double>, Vec3<double>>> edges = {
        {r00, r01},  // left
        {r10, r11},  // right
        {r00, r10},  // top
        {r01, r11},  // bottom
    };
    for (const auto& [a, b] : edges) {
        Vec3<double> n = a.cross(b).normalized();
        if (n.dot(Vec3<double>{0, 0, 1}) < 0) n = -n;
        if (n.dot(p) < -pad) return false;
    }
    return true;
}

}  // namespace

TEST_SUITE("voxel_anchors") {

TEST_CASE("voxelize rounds to cell centers and deduplicates") {
    const std::vector<Vec3<double>> pts{{0.26, -0.13, 0.49}};
    const auto centers = voxelize(std::span<const Vec3<double>>(pts), 0.5);
    REQUIRE(centers.size() == 1);
    CHECK(centers[0].x == doctest::Approx(0.5));
    CHECK(centers[0].y == doctest::Approx(0.0));
    CHECK(centers[0].z == doctest::Approx(0.5));

    const std::vector<Vec3<double>> close{{0.1, 0, 0}, {0.12, 0, 0}};
    const auto dedup = voxelize(std::span<const Vec3<double>>(close), 0.5);
    REQUIRE(dedup.size() == 1);
    CHECK(dedup[0].x == doctest::Approx(0.0));

    CHECK_THROWS_AS(voxelize(std::span<const Vec3<double>>{}, 0.5), std::domain_error);
    CHECK_THROWS_AS(voxelize(std::span<const Vec3<double>>(pts), 0.0), std::domain_error);
}

TEST_CASE("voxelize: random cloud is lattice-aligned, unique, lexicographic") {
    Rng rng(17);
    std::vector<Vec3<double>> pts(1000);
    for (auto& p : pts) p = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const double eps = 0.1;
    const auto centers = voxelize(std::span<const Vec3<double>>(pts), eps);

    // Brute-force dedup oracle.
    std::set<std::array<long long, 3>> keys;
    for (const auto& p : pts)
        keys.insert({std::llround(p.x / eps), std::llround(p.y / eps), std::llround(p.z / eps)});
    CHECK(centers.size() == keys.size());

    std::array<long long, 3> prev{};
    bool first = true;
    for (const auto& c : centers) {
        std::array<long long, 3> k{};
        for (int i = 0; i < 3; ++i) {
            const double ratio = c[i] / eps;
            CHECK(std::abs(ratio - std::round(ratio)) < 1e-9);
            k[i] = std::llround(ratio);
        }
        CHECK(keys.count(k) == 1);
        if (!first) CHECK(prev < k);
        prev = k;
        first = false;
    }
}

TEST_CASE("culling keeps on-axis anchors and drops those behind the camera") {
    const auto cam = test_camera();
    Rng rng(5);
    std::vector<Anchor<double>> anchors;
    anchors.push_back(make_anchor(rng, 4, 2, {0, 0, -4}));   // 1 unit in front
    anchors.push_back(make_anchor(rng, 4, 2, {0, 0, -10}));  // behind
    const auto visible = cull_visible(anchors, cam);
    REQUIRE(visible.size() == 1);
    CHECK(visible[0] == 0);
}

TEST_CASE("culling matches the six-plane oracle on random anchors") {
    const auto cam = test_camera();
    Rng rng(31);
    std::vector<Anchor<double>> anchors;
    for (int i = 0; i < 200; ++i) {
        anchors.push_back(make_anchor(
            rng, 4, 2,
            {rng.uniform(-8, 8), rng.uniform(-8, 8), rng.uniform(-12, 8)}));
    }
    const auto visible = cull_visible(anchors, cam);
    std::set<int> visible_set(visible.begin(), visible.end());
    for (int i = 0; i < 200; ++i) {
        const bool expect = oracle_inside(cam, anchors[i].center, anchors[i].scale.max_component());
        CHECK(visible_set.count(i) == std::size_t(expect));
    }
    // Order preserved.
    CHECK(std::is_sorted(visible.begin(), visible.end()));
}

TEST_CASE("spawn positions follow mu = x_v + O (.) l_v") {
    const auto cam = test_camera();
    Rng rng(9);
    GaussianHeads<double> heads = GaussianHeads<double>::make(8, 10, 8, rng);

    Anchor<double> a = make_anchor(rng, 8, 10, {0, 0, 0});
    for (auto& o : a.offsets) o = {0, 0, 0};
    std::vector<Anchor<double>> anchors{a};
    auto result = spawn_gaussians(anchors, {0}, heads, cam);
    REQUIRE(result.gaussians.size() == 10);  // exactly k
    for (const auto& g : result.gaussians) {
        CHECK(g.position.x == doctest::Approx(0.0));
        CHECK(g.position.y == doctest::Approx(0.0));
        CHECK(g.position.z == doctest::Approx(0.0));
        CHECK(g.opacity > 0.0);
        CHECK(g.opacity < 1.0);
        CHECK(g.rotation.norm() == doctest::Approx(1.0));
        CHECK(g.scale.x > 0.0);
    }

    anchors[0].offsets[0] = {1, 0, 0};
    anchors[0].scale = {0.1, 0.1, 0.1};
    result = spawn_gaussians(anchors, {0}, heads, cam);
    CHECK(result.gaussians[0].position.x == doctest::Approx(0.1));
    CHECK(result.gaussians[0].position.y == doctest::Approx(0.0));
}

TEST_CASE("spawn rejects an anchor at the camera center") {
    const auto cam = test_camera();
    Rng rng(10);
    GaussianHeads<double> heads = GaussianHeads<double>::make(4, 2, 8, rng);
    std::vector<Anchor<double>> anchors{make_anchor(rng, 4, 2, cam.center())};
    CHECK_THROWS_AS(spawn_gaussians(anchors, {0}, heads, cam), std::domain_error);
}

TEST_CASE("spawn gradients match finite differences") {
    const auto cam = test_camera();
    Rng rng(77);
    testing::GradChecker gc(1e-4);

    for (int trial = 0; trial < 5; ++trial) {
        const int k = 3, feat = 6, hidden = 8;
        GaussianHeads<double> heads = GaussianHeads<double>::make(feat, k, hidden, rng);
        std::vector<Anchor<double>> anchors{
            make_anchor(rng, feat, k, {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)})};

        std::vector<GaussianGrad<double>> probes(k);
        for (auto& p : probes) {
            p.d_position = {rng.normal(), rng.normal(), rng.normal()};
            p.d_rotation = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
            p.d_scale = {rng.normal(), rng.normal(), rng.normal()};
            p.d_color = {rng.normal(), rng.normal(), rng.normal()};
            p.d_opacity = rng.normal();
        }

        const auto loss = [&] {
            const auto res = spawn_gaussians(anchors, {0}, heads, cam);
            double acc = 0;
            for (int i = 0; i < k; ++i) {
                const auto& g = res.gaussians[i];
                const auto& p = probes[i];
                acc += g.position.dot(p.d_position) + g.scale.dot(p.d_scale) +
                       g.color.dot(p.d_color) + g.opacity * p.d_opacity;
                for (int j = 0; j < 4; ++j) acc += g.rotation[j] * p.d_rotation[j];
            }
            return acc;
        };

        const auto fwd = spawn_gaussians(anchors, {0}, heads, cam);
        AnchorGrads<double> agrads;
        agrads.resize(1, feat, k);
        HeadsGrads<double> hgrads(heads);
        spawn_backward(anchors, heads, fwd, std::span<const GaussianGrad<double>>(probes), agrads,
                       hgrads);

        for (int f = 0; f < feat; ++f)
            gc.check(loss, &anchors[0].feature[f], agrads.feature[f], "spawn d_feature");
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < 3; ++j)
                gc.check(loss, &anchors[0].offsets[i][j], agrads.offsets[3 * i + j],
                         "spawn d_offset");
        for (int j = 0; j < 3; ++j)
            gc.check(loss, &anchors[0].scale[j], agrads.scale[j], "spawn d_lv");

        auto check_mlp = [&](Mlp<double>& net, MlpGrads<double>& g, const char* label) {
            for (std::size_t l = 0; l < net.layers.size(); ++l) {
                for (std::size_t i = 0; i < net.layers[l].w.size(); i += 7)
                    gc.check(loss, &net.layers[l].w[i], g.w[l][i], label);
                for (std::size_t i = 0; i < net.layers[l].b.size(); i += 3)
                    gc.check(loss, &net.layers[l].b[i], g.b[l][i], label);
            }
        };
        check_mlp(heads.opacity, hgrads.opacity, "spawn opacity head");
        check_mlp(heads.color, hgrads.color, "spawn color head");
        check_mlp(heads.scale, hgrads.scale, "spawn scale head");
        check_mlp(heads.rotation, hgrads.rotation, "spawn rotation head");
    }
    CHECK(gc.failures() == 0);
    CHECK(gc.checked() > 300);
}

TEST_CASE("grow adds anchors only over threshold and into free voxels") {
    Rng rng(41);
    const int k = 3;
    const double eps = 0.5;
    std::vector<Anchor<double>> anchors{make_anchor(rng, 4, k, {0, 0, 0})};
    anchors[0].scale = {1, 1, 1};
    anchors[0].offsets = {{2.1, 0, 0}, {2.2, 0, 0}, {0, 2.1, 0}};

    DensifyStats stats;
    stats.resize(1, k);
    std::int64_t next_id = 1;

    SUBCASE("all gradients below threshold: no growth") {
        for (int i = 0; i < k; ++i) {
            stats.grad_sum[i] = 0.00011f;
            stats.grad_count[i] = 1;
        }
        const auto grown = grow_anchors(anchors, stats, eps, 0.0002, next_id);
        CHECK(grown.size() == 1);
    }

    SUBCASE("occupied voxel is not duplicated") {
        anchors[0].offsets[0] = {0.05, 0, 0};  // quantizes onto the existing anchor voxel
        stats.grad_sum[0] = 1.f;
        stats.grad_count[0] = 1;
        const auto grown = grow_anchors(anchors, stats, eps, 0.0002, next_id);
        CHECK(grown.size() == 1);
    }

    SUBCASE("three hot Gaussians in two distinct voxels grow exactly two anchors") {
        // offsets 0 and 1 land in the same voxel (2.0, 0, 0); offset 2 in (0, 2.0, 0).
        for (int i = 0; i < k; ++i) {
            stats.grad_sum[i] = 1.f;
            stats.grad_count[i] = 1;
        }
        const auto grown = grow_anchors(anchors, stats, eps, 0.0002, next_id);
        REQUIRE(grown.size() == 3);
        CHECK(grown[1].center.x == doctest::Approx(2.0));
        CHECK(grown[2].center.y == doctest::Approx(2.0));
        // New anchors copy the parent feature, zero offsets, voxel-size extent.
        CHECK(grown[1].feature == anchors[0].feature);
        for (const auto& o : grown[1].offsets) CHECK(o.norm() == 0.0);
        CHECK(grown[1].scale.x == doctest::Approx(eps));
        // Stats window consumed.
        CHECK(stats.grad_sum[0] == 0.f);
        CHECK(stats.grad_count[0] == 0);
    }
}

TEST_CASE("prune removes only anchors with low mean opacity") {
    Rng rng(43);
    std::vector<Anchor<double>> anchors;
    for (int i = 0; i < 6; ++i) anchors.push_back(make_anchor(rng, 4, 2, {double(i), 0, 0}));
    DensifyStats stats;
    stats.resize(6, 2);

    SUBCASE("all means above threshold: no-op") {
        for (int i = 0; i < 6; ++i) {
            stats.opacity_sum[i] = 0.5f;
            stats.opacity_count[i] = 1;
        }
        const auto kept = prune_anchors(anchors, stats, 0.05);
        CHECK(kept.size() == 6);
    }

    SUBCASE("forced removal at mean 0.01 < 0.05") {
        for (int i = 0; i < 6; ++i) {
            stats.opacity_sum[i] = i == 2 ? 0.01f : 0.5f;
            stats.opacity_count[i] = 1;
        }
        std::vector<char> keep;
        const auto kept = prune_anchors(anchors, stats, 0.05, &keep);
        CHECK(kept.size() == 5);
        CHECK(keep[2] == 0);
        CHECK(stats.opacity_sum[0] == 0.f);
    }

    SUBCASE("mixed population equals the brute-force filter") {
        std::vector<float> means(6);
        for (int i = 0; i < 6; ++i) {
            means[i] = float(rng.uniform(0.0, 0.12));
            stats.opacity_sum[i] = means[i] * 4;
            stats.opacity_count[i] = 4;
        }
        const auto kept = prune_anchors(anchors, stats, 0.05);
        std::size_t expect = 0;
        for (int i = 0; i < 6; ++i)
            if (!(means[i] < 0.05f)) ++expect;
        CHECK(kept.size() == expect);
    }

    SUBCASE("unobserved anchors are kept") {
        const auto kept = prune_anchors(anchors, stats, 0.05);
        CHECK(kept.size() == 6);
    }
}

TEST_CASE("lattice invariant survives voxelize + grow sequences") {
    Rng rng(59);
    const double eps = 0.25;
    std::vector<Vec3<double>> pts(200);
    for (auto& p : pts) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const auto centers = voxelize(std::span<const Vec3<double>>(pts), eps);

    std::vector<Anchor<double>> anchors;
    std::int64_t next_id = 0;
    for (const auto& c : centers) {
        Anchor<double> a = make_anchor(rng, 4, 3, c);
        a.id = next_id++;
        anchors.push_back(a);
    }
    for (int round = 0; round < 3; ++round) {
        DensifyStats stats;
        stats.resize(anchors.size(), 3);
        for (std::size_t i = 0; i < stats.grad_sum.size(); ++i) {
            stats.grad_sum[i] = float(rng.uniform(0.0, 0.001));
            stats.grad_count[i] = 1;
        }
        anchors = grow_anchors(anchors, stats, eps, 0.0002, next_id);
    }

    std::set<std::array<long long, 3>> seen;
    for (const auto& a : anchors) {
        std::array<long long, 3> key{};
        for (int i = 0; i < 3; ++i) {
            const double ratio = a.center[i] / eps;
            CHECK(std::abs(ratio - std::round(ratio)) < 1e-9);
            key[i] = std::llround(ratio);
        }
        CHECK(seen.insert(key).second);  // pairwise distinct
    }
}

}  // TEST_SUITE
