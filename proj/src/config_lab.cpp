#include "vortexlab/config_lab.hpp"

#include "vortexlab/point_vortex.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>

namespace vortexlab {

namespace {

void require_three(const PointVortexSystemd& s, const char* who) {
    if (s.size() != 3) throw ValidationError(std::string(who) + " needs exactly three vortices");
}

std::array<double, 3> pair_distances(const PointVortexSystemd& s) {
    return {(s.position(0) - s.position(1)).norm(), (s.position(0) - s.position(2)).norm(),
            (s.position(1) - s.position(2)).norm()};
}

double wedge_of_gradients(const PointVortexSystemd& s) {
    const auto d = pair_distances(s);
    const auto& w = s.circulations;
    const Eigen::Vector3d ww(w(0) * w(1), w(0) * w(2), w(1) * w(2));
    Eigen::Vector3d gE, gI;
    for (int k = 0; k < 3; ++k) {
        gE(k) = ww(k) / d[k];
        gI(k) = 2.0 * ww(k) * d[k];
    }
    const double nE = gE.norm(), nI = gI.norm();
    if (nE == 0.0 || nI == 0.0 || !std::isfinite(nE)) return 0.0;
    return (gE / nE).cross(gI / nI).norm();
}

}  // namespace

bool LemmaReport::passes(const LemmaThresholds& th) const {
    return std::abs(harmonic_residual) <= th.harmonic && sum_omega != 0.0 &&
           X_norm <= th.centre && std::abs(I_value) <= th.angular_impulse &&
           collinearity > th.collinearity && equilaterality > th.equilaterality &&
           grad_parallelism > th.parallelism;
}

double check_harmonic(const std::array<double, 3>& w) {
    return w[0] * w[1] + w[0] * w[2] + w[1] * w[2];
}

PointVortexSystemd recentre(const PointVortexSystemd& system) {
    const double total = system.circulations.sum();
    if (total == 0.0) throw ValidationError("recentre needs nonzero total circulation");
    const Vec2d X = system.positions * system.circulations;
    PointVortexSystemd out = system;
    out.positions.colwise() -= X / total;
    return out;
}

SelfSimilarFit self_similarity_fit(const PointVortexSystemd& system) {
    validate(system);
    const Matrix2X<double> v = rhs(system);
    double sxx = 0.0, sxv = 0.0, sjv = 0.0, wsum = 0.0;
    for (Eigen::Index i = 0; i < system.size(); ++i) {
        const double w = std::abs(system.circulations(i));
        const Vec2d x = system.position(i);
        sxx += w * x.squaredNorm();
        sxv += w * x.dot(v.col(i));
        sjv += w * perp(x).dot(v.col(i));
        wsum += w;
    }
    if (sxx == 0.0) throw NumericalError("self-similarity fit is degenerate (all vortices at origin)");
    SelfSimilarFit fit;
    fit.alpha = sxv / sxx;
    fit.beta_rate = sjv / sxx;
    double r2 = 0.0;
    for (Eigen::Index i = 0; i < system.size(); ++i) {
        const double w = std::abs(system.circulations(i));
        const Vec2d x = system.position(i);
        const Vec2d r = v.col(i) - fit.alpha * x - fit.beta_rate * perp(x);
        r2 += w * r.squaredNorm();
        fit.max_speed = std::max(fit.max_speed, v.col(i).norm());
    }
    fit.residual = std::sqrt(r2 / wsum);
    return fit;
}

PointVortexSystemd normalize_expansion_rate(const PointVortexSystemd& system, double target_alpha) {
    if (!(target_alpha > 0.0)) throw ValidationError("target expansion rate must be positive");
    const auto fit = self_similarity_fit(system);
    if (!(fit.alpha > 0.0)) throw ValidationError("configuration is not expanding (alpha <= 0)");
    PointVortexSystemd out = system;
    out.positions *= std::sqrt(fit.alpha / target_alpha);
    return out;
}

double collinearity(const PointVortexSystemd& s) {
    require_three(s, "collinearity");
    const Vec2d a = s.position(1) - s.position(0);
    const Vec2d b = s.position(2) - s.position(0);
    const auto d = pair_distances(s);
    const double dmax = std::max({d[0], d[1], d[2]});
    if (dmax == 0.0) return 0.0;
    return std::abs(a.x() * b.y() - a.y() * b.x()) / (dmax * dmax);
}

double equilaterality(const PointVortexSystemd& s) {
    require_three(s, "equilaterality");
    const auto d = pair_distances(s);
    const double mean = (d[0] + d[1] + d[2]) / 3.0;
    if (mean == 0.0) return 0.0;
    return (std::max({d[0], d[1], d[2]}) - std::min({d[0], d[1], d[2]})) / mean;
}

double gradient_parallelism(const PointVortexSystemd& s) {
    require_three(s, "gradient_parallelism");
    const auto d = pair_distances(s);
    if (d[0] == 0.0 || d[1] == 0.0 || d[2] == 0.0 || collinearity(s) < 1e-14) {
        throw ValidationError("gradient_parallelism needs a non-degenerate triangle");
    }
    return wedge_of_gradients(s);
}

LemmaReport lemma_hypotheses(const PointVortexSystemd& s) {
    require_three(s, "lemma_hypotheses");
    const auto& w = s.circulations;
    LemmaReport r;
    r.harmonic_residual = check_harmonic({w(0), w(1), w(2)});
    r.sum_omega = w.sum();
    r.sum_identity_residual =
        r.sum_omega * r.sum_omega - w.squaredNorm() - 2.0 * r.harmonic_residual;
    const Vec2d X = s.positions * w;
    r.X_norm = X.norm();
    for (Eigen::Index i = 0; i < 3; ++i) r.I_value += w(i) * s.position(i).squaredNorm();
    r.collinearity = collinearity(s);
    r.equilaterality = equilaterality(s);
    const auto d = pair_distances(s);
    r.grad_parallelism = (d[0] > 0.0 && d[1] > 0.0 && d[2] > 0.0) ? wedge_of_gradients(s) : 0.0;
    return r;
}

namespace {

// Residual of the self-similar search: weighted fit residuals (6), X (2), I (1),
// gauge x1 - x2 (2).
Eigen::VectorXd search_residual(const Eigen::VectorXd& q, const Eigen::Vector3d& w,
                                const Vec2d& gauge) {
    PointVortexSystemd s;
    s.positions = Eigen::Map<const Matrix2X<double>>(q.data(), 2, 3);
    s.circulations = w;
    Eigen::VectorXd r(11);
    const Matrix2X<double> v = rhs(s);
    double sxx = 0.0, sxv = 0.0, sjv = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double wi = std::abs(w(i));
        const Vec2d x = s.position(i);
        sxx += wi * x.squaredNorm();
        sxv += wi * x.dot(v.col(i));
        sjv += wi * perp(x).dot(v.col(i));
    }
    const double alpha = sxv / sxx, beta = sjv / sxx;
    for (int i = 0; i < 3; ++i) {
        const Vec2d x = s.position(i);
        r.segment<2>(2 * i) =
            std::sqrt(std::abs(w(i))) * (v.col(i) - alpha * x - beta * perp(x));
    }
    r.segment<2>(6) = s.positions * w;
    double I = 0.0;
    for (int i = 0; i < 3; ++i) I += w(i) * s.position(i).squaredNorm();
    r(8) = I;
    r.segment<2>(9) = (s.position(0) - s.position(1)) - gauge;
    return r;
}

bool converged(const Eigen::VectorXd& q, const Eigen::Vector3d& w, double tol) {
    PointVortexSystemd s{Eigen::Map<const Matrix2X<double>>(q.data(), 2, 3), w};
    const auto fit = self_similarity_fit(s);
    const auto inv = invariants(s);
    return fit.residual <= tol * fit.max_speed && inv.X.norm() <= tol && std::abs(inv.I) <= tol;
}

}  // namespace

FindResult find_expanding_config(const std::array<double, 3>& circulations,
                                 const std::array<Vec2d, 3>& seed_positions,
                                 const FindOptions& options) {
    const double harmonic = check_harmonic(circulations);
    if (!(std::abs(harmonic) <= 1e-12)) {
        throw ValidationError("harmonic residual " + std::to_string(harmonic) +
                              " != 0: circulations cannot expand self-similarly");
    }
    const Eigen::Vector3d w(circulations[0], circulations[1], circulations[2]);
    if (w.sum() == 0.0) throw ValidationError("total circulation is zero");

    PointVortexSystemd seed = make_system({w(0), w(1), w(2)},
                                          {seed_positions[0], seed_positions[1], seed_positions[2]});
    validate(seed);
    seed = recentre(seed);
    const Vec2d gauge = seed.position(0) - seed.position(1);
    const double scale = seed.positions.colwise().norm().maxCoeff();

    Eigen::VectorXd q = Eigen::Map<const Eigen::VectorXd>(seed.positions.data(), 6);
    Eigen::VectorXd r = search_residual(q, w, gauge);
    FindResult result;
    int it = 0;
    for (; it <= options.max_iterations; ++it) {
        if (converged(q, w, options.tolerance)) break;
        if (it == options.max_iterations) break;
        // Central-difference Jacobian.
        Eigen::MatrixXd J(11, 6);
        const double h = 1e-6 * std::max(scale, 1e-300);
        for (int c = 0; c < 6; ++c) {
            Eigen::VectorXd qp = q, qm = q;
            qp(c) += h;
            qm(c) -= h;
            J.col(c) = (search_residual(qp, w, gauge) - search_residual(qm, w, gauge)) / (2 * h);
        }
        const Eigen::VectorXd step = J.completeOrthogonalDecomposition().solve(-r);
        double lambda = 1.0;
        bool improved = false;
        for (int ls = 0; ls < 30; ++ls) {
            const Eigen::VectorXd qn = q + lambda * step;
            const Eigen::VectorXd rn = search_residual(qn, w, gauge);
            if (rn.allFinite() && rn.norm() < r.norm()) {
                q = qn;
                r = rn;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!improved) break;
    }
    result.system = PointVortexSystemd{Eigen::Map<const Matrix2X<double>>(q.data(), 2, 3), w};
    result.iterations = it;
    result.final_residual = r.norm();
    if (!converged(q, w, options.tolerance)) {
        throw NonConvergence("self-similar search did not converge (residual " +
                                 std::to_string(result.final_residual) + ")",
                             result.final_residual);
    }
    const auto lemma = lemma_hypotheses(result.system);
    if (!(lemma.collinearity > options.thresholds.collinearity)) {
        throw NumericalError("self-similar search converged to a collinear configuration");
    }
    if (!(lemma.equilaterality > options.thresholds.equilaterality)) {
        throw NumericalError("self-similar search converged to an equilateral configuration");
    }
    return result;
}

SimilarityDecomposition similarity_decompose(const std::array<Vec2d, 3>& centers,
                                             const PointVortexSystemd& reference) {
    require_three(reference, "similarity_decompose");
    using C = std::complex<double>;
    const auto& w = reference.circulations;
    Vec2d X = Vec2d::Zero();
    double scale = 0.0;
    for (int i = 0; i < 3; ++i) {
        X += w(i) * centers[i];
        scale += std::abs(w(i)) * centers[i].norm();
    }
    if (X.norm() > 1e-6 * std::max(scale, 1e-300)) {
        throw ValidationError("similarity_decompose needs centers with X = 0");
    }
    C num = 0.0;
    double den = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double wi = std::abs(w(i));
        const C y(reference.positions(0, i), reference.positions(1, i));
        const C x(centers[i].x(), centers[i].y());
        num += wi * std::conj(y) * x;
        den += wi * std::norm(y);
    }
    if (den == 0.0) throw NumericalError("similarity_decompose: reference has zero norm");
    const C ratio = num / den;
    SimilarityDecomposition out;
    out.gamma = std::abs(ratio);
    out.beta = std::arg(ratio);
    PointVortexSystemd zs = reference;
    for (int i = 0; i < 3; ++i) {
        const C z = C(centers[i].x(), centers[i].y()) / ratio;
        out.z[i] = Vec2d(z.real(), z.imag());
        zs.positions.col(i) = out.z[i];
        out.deviation = std::max(out.deviation, (out.z[i] - reference.position(i)).norm());
    }
    const auto inv = invariants(zs);
    out.I_z = inv.I;
    out.E_z = inv.E;
    return out;
}

}  // namespace vortexlab
