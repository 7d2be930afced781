#pragma once

#include "vortexlab/core.hpp"

#include <array>

namespace vortexlab {

/// Least-squares fit V_i ~ (alpha Id + beta J) x_i weighted by |W_i|.
struct SelfSimilarFit {
    double alpha = 0.0;      // radial rate; > 0 expanding
    double beta_rate = 0.0;  // angular rate
    double residual = 0.0;   // weighted RMS of the fit residual
    double max_speed = 0.0;  // max_i |V_i|, the natural scale for residual
};

struct LemmaThresholds {
    double harmonic = 1e-12;
    double centre = 1e-10;
    double angular_impulse = 1e-10;
    double collinearity = 1e-6;
    double equilaterality = 1e-6;
    double parallelism = 1e-8;
};

struct LemmaReport {
    double harmonic_residual = 0.0;
    double sum_omega = 0.0;
    double sum_identity_residual = 0.0;  // (sum W)^2 - sum W^2 - 2 sum_{i<j} W_i W_j
    double X_norm = 0.0;
    double I_value = 0.0;
    double collinearity = 0.0;
    double equilaterality = 0.0;
    double grad_parallelism = 0.0;

    bool passes(const LemmaThresholds& th = {}) const;
};

struct SimilarityDecomposition {
    double beta = 0.0;
    double gamma = 1.0;
    std::array<Vec2d, 3> z{};
    double I_z = 0.0;
    double E_z = 0.0;
    double deviation = 0.0;
};

double check_harmonic(const std::array<double, 3>& circulations);

/// Translate so that X = sum W_i x_i vanishes.
PointVortexSystemd recentre(const PointVortexSystemd& system);

SelfSimilarFit self_similarity_fit(const PointVortexSystemd& system);

/// Scale a recentred self-similar configuration so that alpha = target. With the
/// default 1/2 the self-similar solution through y at t = 1 is sqrt(t) R(t) y, so
/// placing sqrt(t0) y at time t0 continues the same solution.
PointVortexSystemd normalize_expansion_rate(const PointVortexSystemd& system,
                                            double target_alpha = 0.5);

struct FindOptions {
    int max_iterations = 50;
    double tolerance = 1e-10;
    LemmaThresholds thresholds{};
};

struct FindResult {
    PointVortexSystemd system;
    int iterations = 0;
    double final_residual = 0.0;
};

class NonConvergence : public NumericalError {
public:
    NonConvergence(const std::string& what, double residual)
        : NumericalError(what), residual(residual) {}
    double residual;
};

/// Gauss-Newton search for a recentred self-similar three-vortex configuration near
/// the seed. Gauge: x1 - x2 is pinned to its seed value (rotation and scale).
FindResult find_expanding_config(const std::array<double, 3>& circulations,
                                 const std::array<Vec2d, 3>& seed_positions,
                                 const FindOptions& options = {});

LemmaReport lemma_hypotheses(const PointVortexSystemd& system);

/// Wedge norm of the normalized gradients of E and tilde-I in pairwise-distance
/// coordinates. Zero exactly when the three distances agree.
double gradient_parallelism(const PointVortexSystemd& system);

/// |(x2 - x1) ^ (x3 - x1)| / (max pairwise distance)^2.
double collinearity(const PointVortexSystemd& system);

/// (max d_ij - min d_ij) / mean d_ij.
double equilaterality(const PointVortexSystemd& system);

/// Weighted complex Procrustes fit x_i ~ gamma e^{i beta} y_i.
SimilarityDecomposition similarity_decompose(const std::array<Vec2d, 3>& centers,
                                             const PointVortexSystemd& reference);

}  // namespace vortexlab
