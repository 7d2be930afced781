#include "vortexlab/patch_sim.hpp"

#include "vortexlab/config_lab.hpp"
#include "vortexlab/detail/flat_sources.hpp"
#include "vortexlab/point_vortex.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace vortexlab {

BlowUp::BlowUp(double t, double s)
    : NumericalError("particle speed " + std::to_string(s) + " exceeds bound at t=" +
                     std::to_string(t)),
      time(t),
      speed(s) {}

double default_blob_radius(double radius, int n) {
    return 0.2 * radius / std::sqrt(static_cast<double>(std::max(n, 1)));
}

namespace {

// Cumulative mass fraction of the profile inside radius fraction u = r^2 / rho^2, and
// the matching cumulative second moment divided by rho^2.
double mass_fraction(Profile p, double u) {
    return p == Profile::uniform ? u : 2.0 * u - u * u;
}

double second_moment(Profile p, double u) {
    return p == Profile::uniform ? 0.5 * u * u : u * u - (2.0 / 3.0) * u * u * u;
}

std::vector<int> ring_counts(int n, int m) {
    std::vector<int> k(static_cast<std::size_t>(m));
    int used = 0;
    for (int j = 1; j < m; ++j) {
        const double target = static_cast<double>(n) * (2.0 * j - 1.0) / (double(m) * m);
        k[static_cast<std::size_t>(j - 1)] = std::max(2, static_cast<int>(std::lround(target)));
        used += k[static_cast<std::size_t>(j - 1)];
    }
    k.back() = n - used;
    return k;
}

}  // namespace

ParticleCloud discretize_patch(const PatchSpec& spec, double blob_radius,
                               std::optional<std::uint64_t> jitter_seed) {
    if (!(spec.radius > 0.0)) throw ValidationError("patch radius must be positive");
    if (spec.particles_per_patch < 1) throw ValidationError("particles_per_patch must be >= 1");
    if (spec.circulation == 0.0 || !std::isfinite(spec.circulation)) {
        throw ValidationError("patch circulation must be finite and nonzero");
    }
    const int n = spec.particles_per_patch;
    ParticleCloud cloud;
    cloud.sign = spec.circulation > 0.0 ? 1 : -1;
    cloud.blob_radius = blob_radius < 0.0 ? default_blob_radius(spec.radius, n) : blob_radius;
    cloud.positions.resize(2, n);
    cloud.strengths.resize(n);

    if (n == 1) {
        cloud.positions.col(0) = spec.center;
        cloud.strengths(0) = spec.circulation;
        return cloud;
    }

    int m = std::max(1, static_cast<int>(std::lround(std::sqrt(n / std::numbers::pi))));
    std::vector<int> counts = ring_counts(n, m);
    while (m > 1 && counts.back() < 2) counts = ring_counts(n, --m);

    std::mt19937_64 rng(jitter_seed.value_or(0));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Eigen::Index p = 0;
    for (int j = 1; j <= m; ++j) {
        const int k = counts[static_cast<std::size_t>(j - 1)];
        const double ua = std::pow((j - 1.0) / m, 2), ub = std::pow(double(j) / m, 2);
        const double w = mass_fraction(spec.profile, ub) - mass_fraction(spec.profile, ua);
        const double r = spec.radius *
                         std::sqrt((second_moment(spec.profile, ub) - second_moment(spec.profile, ua)) / w);
        const double spacing = 2.0 * std::numbers::pi / k;
        const double phase = jitter_seed ? spacing * unit(rng) : (j % 2 == 0 ? 0.5 * spacing : 0.0);
        const double strength = spec.circulation * w / k;
        for (int l = 0; l < k; ++l, ++p) {
            const double a = phase + spacing * l;
            cloud.positions(0, p) = spec.center.x() + r * std::cos(a);
            cloud.positions(1, p) = spec.center.y() + r * std::sin(a);
            cloud.strengths(p) = strength;
        }
    }

    // Make the sequential sum hit the circulation exactly.
    double rest = 0.0;
    for (Eigen::Index q = 0; q + 1 < n; ++q) rest += cloud.strengths(q);
    double last = spec.circulation - rest;
    for (int tries = 0; tries < 64 && rest + last != spec.circulation; ++tries) {
        last = std::nextafter(last, rest + last < spec.circulation ? INFINITY : -INFINITY);
    }
    cloud.strengths(n - 1) = last;
    return cloud;
}

namespace detail {

FlatSources flatten(const std::vector<ParticleCloud>& clouds, const double* delta_override) {
    FlatSources f;
    const Eigen::Index n = [&] {
        Eigen::Index c = 0;
        for (const auto& cl : clouds) c += cl.size();
        return c;
    }();
    f.x.reserve(static_cast<std::size_t>(n));
    f.y.reserve(static_cast<std::size_t>(n));
    f.g.reserve(static_cast<std::size_t>(n));
    for (const auto& cl : clouds) {
        const std::size_t begin = f.x.size();
        for (Eigen::Index p = 0; p < cl.size(); ++p) {
            f.x.push_back(cl.positions(0, p));
            f.y.push_back(cl.positions(1, p));
            f.g.push_back(cl.strengths(p));
        }
        const double d = delta_override ? *delta_override : cl.blob_radius;
        f.ranges.push_back({begin, f.x.size(), d * d});
    }
    return f;
}

// Targets are processed in blocks of kLanes so the inner loop vectorizes across
// targets while every target still accumulates its sources in index order.
void direct_sum(const FlatSources& src, const double* tx, const double* ty, std::size_t begin,
                std::size_t end, double* ux, double* uy) {
    constexpr std::size_t kLanes = 8;
    constexpr double kSelfFloor = 1e-290;
    using Lanes = Eigen::Array<double, kLanes, 1>;
    std::size_t i = begin;
    for (; i + kLanes <= end; i += kLanes) {
        const Lanes px = Eigen::Map<const Lanes>(tx + i);
        const Lanes py = Eigen::Map<const Lanes>(ty + i);
        Lanes ax = Lanes::Zero(), ay = Lanes::Zero();
        for (const auto& r : src.ranges) {
            const double d2 = r.delta2;
            for (std::size_t q = r.begin; q < r.end; ++q) {
                const Lanes dx = px - src.x[q];
                const Lanes dy = py - src.y[q];
                const Lanes r2 = dx * dx + dy * dy + d2;
                // The self pair has dx = dy = 0, so flooring r2 zeroes it without a branch.
                const Lanes inv = src.g[q] / r2.max(kSelfFloor);
                ax -= dy * inv;
                ay += dx * inv;
            }
        }
        Eigen::Map<Lanes>(ux + i) = ax;
        Eigen::Map<Lanes>(uy + i) = ay;
    }
    for (; i < end; ++i) {
        double ax = 0.0, ay = 0.0;
        for (const auto& r : src.ranges) {
            for (std::size_t q = r.begin; q < r.end; ++q) {
                const double dx = tx[i] - src.x[q];
                const double dy = ty[i] - src.y[q];
                const double r2 = dx * dx + dy * dy + r.delta2;
                const double inv = src.g[q] / std::max(r2, kSelfFloor);
                ax -= dy * inv;
                ay += dx * inv;
            }
        }
        ux[i] = ax;
        uy[i] = ay;
    }
}

}  // namespace detail

namespace {

Matrix2X<double> direct_at(const detail::FlatSources& src, const std::vector<double>& tx,
                           const std::vector<double>& ty, int threads) {
    const std::size_t n = tx.size();
    std::vector<double> ux(n), uy(n);
    detail::parallel_blocks(n, threads, [&](std::size_t b, std::size_t e) {
        detail::direct_sum(src, tx.data(), ty.data(), b, e, ux.data(), uy.data());
    });
    Matrix2X<double> out(2, static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        out(0, static_cast<Eigen::Index>(i)) = ux[i];
        out(1, static_cast<Eigen::Index>(i)) = uy[i];
    }
    return out;
}

}  // namespace

void detail::check_no_coincidence(const FlatSources& src, const Matrix2X<double>& pts) {
    for (Eigen::Index i = 0; i < pts.cols(); ++i) {
        for (const auto& r : src.ranges) {
            if (r.delta2 > 0.0) continue;
            for (std::size_t q = r.begin; q < r.end; ++q) {
                if (pts(0, i) == src.x[q] && pts(1, i) == src.y[q]) {
                    throw SingularEvaluation("evaluation point coincides with a particle at zero blob radius");
                }
            }
        }
    }
}

Matrix2X<double> induced_velocity(const std::vector<ParticleCloud>& clouds,
                                  const Matrix2X<double>& eval_points, double delta, int threads) {
    if (!(delta >= 0.0)) throw ValidationError("blob radius must be >= 0");
    const auto src = detail::flatten(clouds, &delta);
    detail::check_no_coincidence(src, eval_points);
    std::vector<double> tx(static_cast<std::size_t>(eval_points.cols())),
        ty(static_cast<std::size_t>(eval_points.cols()));
    for (Eigen::Index i = 0; i < eval_points.cols(); ++i) {
        tx[static_cast<std::size_t>(i)] = eval_points(0, i);
        ty[static_cast<std::size_t>(i)] = eval_points(1, i);
    }
    return direct_at(src, tx, ty, threads);
}

Matrix2X<double> DirectBackend::particle_velocities(const std::vector<ParticleCloud>& clouds) const {
    const auto src = detail::flatten(clouds, nullptr);
    return direct_at(src, src.x, src.y, threads_);
}

Matrix2X<double> TreeBackend::particle_velocities(const std::vector<ParticleCloud>& clouds) const {
    const auto src = detail::flatten(clouds, nullptr);
    Matrix2X<double> pts(2, static_cast<Eigen::Index>(src.x.size()));
    for (std::size_t i = 0; i < src.x.size(); ++i) {
        pts(0, static_cast<Eigen::Index>(i)) = src.x[i];
        pts(1, static_cast<Eigen::Index>(i)) = src.y[i];
    }
    return detail::tree_sum(src, pts, params_, threads_);
}

namespace {

Matrix2X<double> gather_positions(const SimulationState& s) {
    Matrix2X<double> x(2, s.particle_count());
    Eigen::Index o = 0;
    for (const auto& c : s.clouds) {
        x.middleCols(o, c.size()) = c.positions;
        o += c.size();
    }
    return x;
}

std::vector<ParticleCloud> with_positions(const std::vector<ParticleCloud>& clouds,
                                          const Matrix2X<double>& x) {
    std::vector<ParticleCloud> out = clouds;
    Eigen::Index o = 0;
    for (auto& c : out) {
        c.positions = x.middleCols(o, c.size());
        o += c.size();
    }
    return out;
}

SimulationState rk4_step(const SimulationState& state, double dt, const VelocityBackend& backend,
                         double* max_speed) {
    const Matrix2X<double> x0 = gather_positions(state);
    const Matrix2X<double> k1 = backend.particle_velocities(state.clouds);
    if (max_speed) *max_speed = k1.cols() ? k1.colwise().norm().maxCoeff() : 0.0;
    const Matrix2X<double> k2 =
        backend.particle_velocities(with_positions(state.clouds, x0 + (dt / 2) * k1));
    const Matrix2X<double> k3 =
        backend.particle_velocities(with_positions(state.clouds, x0 + (dt / 2) * k2));
    const Matrix2X<double> k4 = backend.particle_velocities(with_positions(state.clouds, x0 + dt * k3));
    SimulationState next;
    next.clouds = with_positions(state.clouds, x0 + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4));
    next.time = state.time + dt;
    return next;
}

}  // namespace

SimulationState step(const SimulationState& state, double dt, const VelocityBackend& backend) {
    if (!(dt > 0.0)) throw ValidationError("step needs dt > 0");
    return rk4_step(state, dt, backend, nullptr);
}

void validate(const RunConfig& c) {
    validate(c.reference);
    if (!(c.t0 > 0.0)) throw ValidationError("run needs t0 > 0");
    if (!(c.t_end >= c.t0)) throw ValidationError("run needs t_end >= t0");
    if (!(c.patch_radius > 0.0)) throw ValidationError("patch radius must be positive");
    if (c.particles_per_patch < 1) throw ValidationError("particles_per_patch must be >= 1");
    if (!(c.max_speed > 0.0)) throw ValidationError("max_speed must be positive");
}

PointVortexSystemd effective_reference(const RunConfig& config) {
    PointVortexSystemd ref = config.reference;
    if (config.recentre_initial) ref = recentre(ref);
    if (config.normalize_reference) ref = normalize_expansion_rate(ref, 0.5);
    return ref;
}

double default_dt(const RunConfig& config) {
    const PointVortexSystemd ref = effective_reference(config);
    const double dmin = std::sqrt(config.t0) * min_separation(ref);
    const double wmax = ref.circulations.cwiseAbs().maxCoeff();
    double dt = 0.02 * dmin * dmin / wmax;
    if (config.particles_per_patch > 1) {
        dt = std::min(dt, 0.1 * config.patch_radius * config.patch_radius / wmax);
    }
    return dt;
}

long snapshot_count(const RunConfig& config) {
    if (config.t_end == config.t0) return 1;
    const double cadence = config.snapshot_cadence > 0.0 ? config.snapshot_cadence : 0.0;
    if (cadence <= 0.0) {
        // one snapshot per step of the fixed default
        const double dt = config.dt > 0.0 ? config.dt : default_dt(config);
        return 1 + static_cast<long>(std::ceil((config.t_end - config.t0) / dt - 1e-9));
    }
    return 1 + static_cast<long>(std::ceil((config.t_end - config.t0) / cadence - 1e-9));
}

double snapshot_time(const RunConfig& config, long k) {
    const double cadence = config.snapshot_cadence > 0.0
                               ? config.snapshot_cadence
                               : (config.dt > 0.0 ? config.dt : default_dt(config));
    return std::min(config.t0 + static_cast<double>(k) * cadence, config.t_end);
}

SimulationState initial_state(const RunConfig& config) {
    validate(config);
    const PointVortexSystemd ref = effective_reference(config);
    SimulationState s;
    s.time = config.t0;
    const double scale = std::sqrt(config.t0);
    for (Eigen::Index i = 0; i < ref.size(); ++i) {
        PatchSpec spec;
        spec.center = scale * ref.position(i);
        spec.radius = config.patch_radius;
        spec.circulation = ref.circulations(i);
        spec.profile = config.profile;
        spec.particles_per_patch = config.particles_per_patch;
        std::optional<std::uint64_t> seed;
        if (config.jitter_seed) seed = *config.jitter_seed + static_cast<std::uint64_t>(i);
        s.clouds.push_back(discretize_patch(spec, config.blob_radius, seed));
    }
    if (config.recentre_initial) {
        Vec2d moment = Vec2d::Zero();
        double total = 0.0;
        for (const auto& c : s.clouds) {
            moment += c.positions * c.strengths;
            total += c.total_strength();
        }
        const Vec2d shift = moment / total;
        for (auto& c : s.clouds) c.positions.colwise() -= shift;
    }
    return s;
}

void advance(const RunConfig& config, SimulationState state, long index,
             const VelocityBackend& backend, const SnapshotObserver& observer) {
    validate(config);
    const long count = snapshot_count(config);
    const double dt0 = config.dt > 0.0 ? config.dt : default_dt(config);
    for (long k = index; k + 1 < count; ++k) {
        const double ta = snapshot_time(config, k);
        const double tb = snapshot_time(config, k + 1);
        double dt = dt0;
        if (config.dt_policy == DtPolicy::scaled) dt = dt0 * ta / config.t0;
        dt = std::min(dt, config.dt_max);
        const long m = std::max(1L, static_cast<long>(std::ceil((tb - ta) / dt - 1e-9)));
        const double h = (tb - ta) / static_cast<double>(m);
        for (long s = 0; s < m; ++s) {
            double speed = 0.0;
            state = rk4_step(state, h, backend, &speed);
            if (!(speed <= config.max_speed)) throw BlowUp(state.time - h, speed);
        }
        state.time = tb;
        observer(k + 1, state);
    }
}

void run(const RunConfig& config, const VelocityBackend& backend, const SnapshotObserver& observer) {
    SimulationState s = initial_state(config);
    observer(0, s);
    advance(config, std::move(s), 0, backend, observer);
}

std::vector<SimulationState> run(const RunConfig& config, const VelocityBackend& backend) {
    std::vector<SimulationState> out;
    run(config, backend, [&](long, const SimulationState& s) { out.push_back(s); });
    return out;
}

}  // namespace vortexlab
