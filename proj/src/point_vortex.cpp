#include "vortexlab/point_vortex.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

namespace vortexlab {

NearCollision::NearCollision(double t, Eigen::Index i, Eigen::Index j, double sep)
    : NumericalError("near collision of vortices " + std::to_string(i) + " and " +
                     std::to_string(j) + " at t=" + std::to_string(t)),
      time(t),
      first(i),
      second(j),
      separation(sep) {}

StepSizeUnderflow::StepSizeUnderflow(double t)
    : NumericalError("step size underflow at t=" + std::to_string(t)), time(t) {}

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
// b - bhat (error weights)
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

using State = Matrix2X<double>;

struct Rhs {
    const Eigen::VectorXd& w;
    State operator()(const State& x) const {
        PointVortexSystemd s{x, w};
        return rhs(s);
    }
};

std::vector<double> prepare_samples(std::vector<double> samples, double t0, double t1) {
    samples.erase(std::remove_if(samples.begin(), samples.end(),
                                 [&](double t) { return !(t > t0 && t <= t1); }),
                  samples.end());
    std::sort(samples.begin(), samples.end());
    samples.erase(std::unique(samples.begin(), samples.end()), samples.end());
    if (samples.empty() || samples.back() != t1) samples.push_back(t1);
    return samples;
}

void check_separation(const PointVortexSystemd& s, double t, double floor, StepStats& stats) {
    Eigen::Index i = 0, j = 0;
    const double d = min_separation(s, &i, &j);
    stats.min_separation = std::min(stats.min_separation, d);
    if (d < floor) throw NearCollision(t, i, j, d);
}

}  // namespace

Trajectory integrate(const PointVortexSystemd& system, double t0, double t1, double tol,
                     const IntegrateOptions& options) {
    validate(system);
    if (!(t1 > t0) || !(t0 >= 0.0)) throw ValidationError("integrate needs t1 > t0 >= 0");
    if (!(tol > 0.0)) throw ValidationError("integrate needs tol > 0");

    const Rhs f{system.circulations};
    const auto samples = prepare_samples(options.sample_times, t0, t1);

    Trajectory traj;
    traj.times.push_back(t0);
    traj.states.push_back(system);

    const double floor =
        system.size() > 1 ? options.collision_floor_factor * min_separation(system) : 0.0;
    traj.step_stats.min_separation = system.size() > 1 ? min_separation(system)
                                                       : std::numeric_limits<double>::infinity();

    State y = system.positions;
    State k1 = f(y);
    double t = t0;

    auto scaled_norm = [&](const State& err, const State& ya, const State& yb) {
        const Eigen::ArrayXXd scale =
            tol * (1.0 + ya.array().abs().max(yb.array().abs()));
        return std::sqrt((err.array() / scale).square().mean());
    };

    double h = options.initial_step;
    if (h <= 0.0) {
        const double vmax = k1.colwise().norm().maxCoeff();
        const double len = system.size() > 1 ? min_separation(system) : 1.0;
        h = vmax > 0.0 ? 0.01 * len / vmax : (t1 - t0);
        h = std::min(h, t1 - t0);
    }

    constexpr double safety = 0.9, fac_min = 0.2, fac_max = 5.0;
    constexpr double beta = 0.04;           // PI stabilization
    constexpr double alpha = 0.2 - 0.75 * beta;
    double err_prev = 1e-4;
    bool last_rejected = false;
    long steps = 0;

    for (double target : samples) {
        while (t < target) {
            if (++steps > options.max_steps) throw NumericalError("integrate exceeded max_steps");
            bool hit = false;
            double hs = h;
            if (t + hs >= target) {
                hs = target - t;
                hit = true;
            }
            if (hs < 1e-14 * std::max(1.0, std::abs(t))) throw StepSizeUnderflow(t);

            const State k2 = f(y + hs * (a21 * k1));
            const State k3 = f(y + hs * (a31 * k1 + a32 * k2));
            const State k4 = f(y + hs * (a41 * k1 + a42 * k2 + a43 * k3));
            const State k5 = f(y + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
            const State k6 = f(y + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
            const State ynew =
                y + hs * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
            const State k7 = f(ynew);
            const State err =
                hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
            const double en = scaled_norm(err, y, ynew);

            if (std::isfinite(en) && en <= 1.0) {
                t = hit ? target : t + hs;
                y = ynew;
                k1 = k7;
                ++traj.step_stats.accepted;
                if (system.size() > 1) {
                    check_separation(PointVortexSystemd{y, system.circulations}, t, floor,
                                     traj.step_stats);
                }
                double fac = en == 0.0 ? fac_max
                                       : safety * std::pow(en, -alpha) * std::pow(err_prev, beta);
                fac = std::clamp(fac, fac_min, last_rejected ? 1.0 : fac_max);
                err_prev = std::max(en, 1e-4);
                if (!hit || fac * hs > h) h = hs * fac;
                last_rejected = false;
            } else {
                ++traj.step_stats.rejected;
                const double fac = std::isfinite(en)
                                       ? std::max(fac_min, safety * std::pow(en, -alpha))
                                       : fac_min;
                h = hs * fac;
                last_rejected = true;
            }
        }
        traj.times.push_back(t);
        traj.states.push_back(PointVortexSystemd{y, system.circulations});
    }
    return traj;
}

Trajectory integrate_rk4(const PointVortexSystemd& system, double t0, double t1, double dt,
                         const std::vector<double>& sample_times) {
    validate(system);
    if (!(t1 > t0)) throw ValidationError("integrate_rk4 needs t1 > t0");
    if (!(dt > 0.0)) throw ValidationError("integrate_rk4 needs dt > 0");
    const Rhs f{system.circulations};
    const auto samples = prepare_samples(sample_times, t0, t1);

    Trajectory traj;
    traj.times.push_back(t0);
    traj.states.push_back(system);
    traj.step_stats.min_separation = min_separation(system);

    State y = system.positions;
    // Step k lands on t0 + k*dt; times are never accumulated.
    long k = 0;
    double t = t0;
    for (double target : samples) {
        while (t < target) {
            const double tn = std::min(t0 + static_cast<double>(k + 1) * dt, target);
            const double hs = tn - t;
            const State s1 = f(y);
            const State s2 = f(y + (hs / 2) * s1);
            const State s3 = f(y + (hs / 2) * s2);
            const State s4 = f(y + hs * s3);
            y = y + (hs / 6) * (s1 + 2 * s2 + 2 * s3 + s4);
            if (tn == t0 + static_cast<double>(k + 1) * dt) ++k;
            t = tn;
            ++traj.step_stats.accepted;
            traj.step_stats.min_separation =
                std::min(traj.step_stats.min_separation,
                         min_separation(PointVortexSystemd{y, system.circulations}));
        }
        traj.times.push_back(t);
        traj.states.push_back(PointVortexSystemd{y, system.circulations});
    }
    return traj;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
    if (traj.states.empty()) return;
    const Eigen::Index n = traj.states.front().size();
    os << "t";
    for (Eigen::Index i = 1; i <= n; ++i) os << ",x" << i << "x,x" << i << "y";
    os << ",X_x,X_y,I,E\n";
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << buf;
    };
    for (std::size_t k = 0; k < traj.states.size(); ++k) {
        const auto& s = traj.states[k];
        const auto inv = invariants(s);
        put(traj.times[k]);
        for (Eigen::Index i = 0; i < n; ++i) {
            os << ',';
            put(s.positions(0, i));
            os << ',';
            put(s.positions(1, i));
        }
        os << ',';
        put(inv.X.x());
        os << ',';
        put(inv.X.y());
        os << ',';
        put(inv.I);
        os << ',';
        put(inv.E);
        os << '\n';
    }
}

}  // namespace vortexlab
