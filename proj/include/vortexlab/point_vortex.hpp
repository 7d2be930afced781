#pragma once

#include "vortexlab/core.hpp"

#include <cmath>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

namespace vortexlab {

template <typename Scalar>
struct InvariantReport {
    Vec2<Scalar> X = Vec2<Scalar>::Zero();  // linear impulse
    Scalar I = 0;                           // angular impulse
    Scalar E = 0;                           // ordered-pair interaction energy
    Scalar tildeI = 0;                      // sum_i sum_j W_i W_j |x_i - x_j|^2
};

/// Velocity of each vortex: sum over j != i of W_j K(x_i - x_j).
template <typename Scalar>
Matrix2X<Scalar> rhs(const PointVortexSystem<Scalar>& s) {
    const Eigen::Index n = s.size();
    Matrix2X<Scalar> v = Matrix2X<Scalar>::Zero(2, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        Scalar vx = 0, vy = 0;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == i) continue;
            const Scalar dx = s.positions(0, i) - s.positions(0, j);
            const Scalar dy = s.positions(1, i) - s.positions(1, j);
            const Scalar r2 = dx * dx + dy * dy;
            if (r2 == Scalar(0)) {
                throw SingularEvaluation("coincident vortices " + std::to_string(i) + " and " +
                                         std::to_string(j));
            }
            vx += s.circulations(j) * (-dy / r2);
            vy += s.circulations(j) * (dx / r2);
        }
        v(0, i) = vx;
        v(1, i) = vy;
    }
    return v;
}

/// X, I, E and tilde-I. E counts every unordered pair twice.
template <typename Scalar>
InvariantReport<Scalar> invariants(const PointVortexSystem<Scalar>& s) {
    using std::log;
    InvariantReport<Scalar> r;
    const Eigen::Index n = s.size();
    for (Eigen::Index i = 0; i < n; ++i) {
        const Scalar w = s.circulations(i);
        r.X += w * s.positions.col(i);
        r.I += w * s.positions.col(i).squaredNorm();
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const Scalar d2 = (s.positions.col(i) - s.positions.col(j)).squaredNorm();
            if (d2 == Scalar(0)) {
                throw SingularEvaluation("coincident vortices in energy evaluation");
            }
            const Scalar ww = s.circulations(i) * s.circulations(j);
            r.E += ww * log(d2) / Scalar(2);
            r.tildeI += ww * d2;
        }
    }
    return r;
}

/// Minimum pairwise separation and the pair achieving it.
template <typename Scalar>
Scalar min_separation(const PointVortexSystem<Scalar>& s, Eigen::Index* pi = nullptr,
                      Eigen::Index* pj = nullptr) {
    Scalar best = std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        for (Eigen::Index j = i + 1; j < s.size(); ++j) {
            const Scalar d = (s.positions.col(i) - s.positions.col(j)).norm();
            if (d < best) {
                best = d;
                if (pi) *pi = i;
                if (pj) *pj = j;
            }
        }
    }
    return best;
}

struct StepStats {
    long accepted = 0;
    long rejected = 0;
    double min_separation = std::numeric_limits<double>::infinity();
};

struct Trajectory {
    std::vector<double> times;
    std::vector<PointVortexSystemd> states;
    StepStats step_stats;
};

struct IntegrateOptions {
    // Sample times in (t0, t1]; t0 is always recorded. Empty means only t1.
    std::vector<double> sample_times;
    // Abort once any pair is closer than this fraction of the initial minimum separation.
    double collision_floor_factor = 1e-6;
    double initial_step = 0.0;  // 0 picks a step from the velocity scale
    long max_steps = 10'000'000;
};

class NearCollision : public NumericalError {
public:
    NearCollision(double t, Eigen::Index i, Eigen::Index j, double separation);
    double time;
    Eigen::Index first, second;
    double separation;
};

class StepSizeUnderflow : public NumericalError {
public:
    explicit StepSizeUnderflow(double t);
    double time;
};

/// Adaptive Dormand-Prince 5(4) integration of the point-vortex ODE with a PI step
/// controller. tol bounds the estimated local error of each step (mixed abs/rel).
Trajectory integrate(const PointVortexSystemd& system, double t0, double t1, double tol,
                     const IntegrateOptions& options = {});

/// Classical fixed-step RK4; the last step is shortened to land on t1.
Trajectory integrate_rk4(const PointVortexSystemd& system, double t0, double t1, double dt,
                         const std::vector<double>& sample_times = {});

/// CSV with header t,x1x,x1y,...,X_x,X_y,I,E and 17 significant digits.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);

}  // namespace vortexlab
