#include "doctest.h"

#include "vortexlab/diagnostics.hpp"
#include "vortexlab/patch_sim.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace vortexlab;

namespace {

// n particles uniform in the unit disk, positive strengths summing to about 1
ParticleCloud scattered_disk(long n, std::uint64_t seed, double blob = 0.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ParticleCloud c;
    c.blob_radius = blob;
    c.positions.resize(2, n);
    c.strengths.resize(n);
    for (long p = 0; p < n; ++p) {
        const double r = std::sqrt(u(rng)), a = 2.0 * std::numbers::pi * u(rng);
        c.positions.col(p) = Vec2d(r * std::cos(a), r * std::sin(a));
        c.strengths(p) = 2.0 * u(rng) / static_cast<double>(n);
    }
    return c;
}

double relative_error(const Matrix2X<double>& approx, const Matrix2X<double>& exact) {
    return (approx - exact).colwise().norm().maxCoeff() / exact.colwise().norm().maxCoeff();
}

}  // namespace

TEST_CASE("tiny opening angle degenerates to the direct sum") {
    const std::vector<ParticleCloud> clouds{scattered_disk(2000, 1, 0.01)};
    TreeParams p;
    p.opening_angle = 1e-9;
    const auto d = DirectBackend().particle_velocities(clouds);
    const auto t = TreeBackend(p).particle_velocities(clouds);
    CHECK(relative_error(t, d) <= 1e-12);
}

TEST_CASE("10^4 particles at opening angle 0.5, order 4") {
    const std::vector<ParticleCloud> clouds{scattered_disk(10000, 2)};
    const auto d = DirectBackend().particle_velocities(clouds);
    const auto t = TreeBackend(TreeParams{0.5, 16, 4, 10.0}).particle_velocities(clouds);
    const double err = relative_error(t, d);
    MESSAGE("theta 0.5 relative error " << err);
    CHECK(err <= 1e-4);
}

TEST_CASE("opening angle 0.3 regression") {
    const std::vector<ParticleCloud> clouds{scattered_disk(10000, 2)};
    const auto d = DirectBackend().particle_velocities(clouds);
    const auto t = TreeBackend(TreeParams{0.3, 16, 4, 10.0}).particle_velocities(clouds);
    const double err = relative_error(t, d);
    MESSAGE("theta 0.3 relative error " << err);
    CHECK(err <= 1e-6);
}

TEST_CASE("error falls with expansion order") {
    const std::vector<ParticleCloud> clouds{scattered_disk(5000, 3)};
    const auto d = DirectBackend().particle_velocities(clouds);
    double prev = INFINITY;
    for (int order : {0, 2, 4, 6}) {
        const double err = relative_error(TreeBackend(TreeParams{0.5, 16, order, 10.0}).particle_velocities(clouds), d);
        CHECK(err < prev);
        prev = err;
    }
}

TEST_CASE("mixed-sign clouds with their own blob radii") {
    std::vector<ParticleCloud> clouds;
    for (int i = 0; i < 3; ++i) {
        clouds.push_back(discretize_patch({Vec2d(4.0 * i, 2.0 * (i % 2)), 1.0, i == 2 ? 1.0 : -2.0, Profile::uniform, 1500},
                                          0.005 * (i + 1)));
    }
    const auto d = DirectBackend().particle_velocities(clouds);
    const auto t = TreeBackend().particle_velocities(clouds);
    CHECK(relative_error(t, d) <= 1e-4);
    // and at free evaluation points with a common blob
    Matrix2X<double> pts = Matrix2X<double>::Random(2, 500) * 6.0;
    const auto di = induced_velocity(clouds, pts, 0.02);
    const auto ti = induced_velocity_tree(clouds, pts, 0.02, TreeParams{});
    CHECK(relative_error(ti, di) <= 1e-4);
}

TEST_CASE("tree results do not depend on the thread count") {
    const std::vector<ParticleCloud> clouds{scattered_disk(3000, 4, 0.001)};
    const auto a = TreeBackend(TreeParams{}, 1).particle_velocities(clouds);
    const auto b = TreeBackend(TreeParams{}, 3).particle_velocities(clouds);
    CHECK((a.array() == b.array()).all());
}

TEST_CASE("tree parameter validation") {
    const std::vector<ParticleCloud> clouds{scattered_disk(10, 5)};
    CHECK_THROWS_AS(TreeBackend(TreeParams{0.0, 16, 4, 10.0}).particle_velocities(clouds), ValidationError);
    CHECK_THROWS_AS(TreeBackend(TreeParams{1.0, 16, 4, 10.0}).particle_velocities(clouds), ValidationError);
    CHECK_THROWS_AS(TreeBackend(TreeParams{0.5, 0, 4, 10.0}).particle_velocities(clouds), ValidationError);
    CHECK_THROWS_AS(TreeBackend(TreeParams{0.5, 16, -1, 10.0}).particle_velocities(clouds), ValidationError);
}

TEST_CASE("tree-driven patch run tracks the direct run") {
    RunConfig cfg;
    cfg.reference = make_system({-2, -2, 1}, {Vec2d(-1, 0), Vec2d(1, 0), Vec2d(1, std::sqrt(2.0))});
    cfg.t0 = 100;
    cfg.t_end = 102;
    cfg.particles_per_patch = 300;
    cfg.snapshot_cadence = 1.0;
    const auto a = run(cfg, DirectBackend());
    const auto b = run(cfg, TreeBackend());
    REQUIRE(a.size() == b.size());
    const double scale = 10.0 * effective_reference(cfg).positions.colwise().norm().maxCoeff();
    for (std::size_t k = 0; k < a.size(); ++k) {
        for (std::size_t i = 0; i < 3; ++i) {
            const double drift = (center_of_mass(a[k].clouds[i]) - center_of_mass(b[k].clouds[i])).norm();
            // 10x the velocity tolerance per unit time, relative to the system scale
            CHECK(drift <= 10 * 1e-4 * scale * (a[k].time - cfg.t0) + 1e-12);
        }
    }
}
