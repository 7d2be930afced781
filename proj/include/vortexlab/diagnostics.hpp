#pragma once

#include "vortexlab/config_lab.hpp"
#include "vortexlab/core.hpp"

#include <iosfwd>
#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace vortexlab {

// Moments, f-moments and concentration weight particles by |strength|, so they are
// non-negative for either patch sign. Signed-vorticity moments are sign(W_i) times these.

struct MomentReport {
    int patch_id = 0;
    Vec2d center = Vec2d::Zero();
    std::vector<std::pair<int, double>> moments;  // (k, I_k)
    double support_radius = 0.0;
};

struct ConcentrationReport {
    int patch_id = 0;
    Vec2d x_tilde = Vec2d::Zero();
    double R = 0.0;
    double delta = 0.0;
    double offcenter = 0.0;
};

struct ExponentFit {
    double exponent = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    double t_lo = 0.0, t_hi = 0.0;
    int samples = 0;
};

/// Strength-weighted centre sum(g x) / sum(g).
Vec2d center_of_mass(const ParticleCloud& cloud);

/// sum |g_p| |x_p - c|^k about the centre of mass; k even and >= 2.
double moment(const ParticleCloud& cloud, int k);

/// Largest particle distance from the centre of mass.
double support_radius(const ParticleCloud& cloud);

MomentReport moment_report(const ParticleCloud& cloud, int patch_id, const std::vector<int>& ks);

/// sum |g_p| (-cos 2 theta_p) |x_p - c|^(k+2), theta_p the counterclockwise angle from
/// (axis_from - axis_to) to (x_p - c).
double f_moment(const ParticleCloud& cloud, const Vec2d& axis_from, const Vec2d& axis_to, int k);

/// sum |g_p| 2 sin(2 theta_p) |x_p - c|^k with the same angle convention.
double sin_moment(const ParticleCloud& cloud, const Vec2d& axis_from, const Vec2d& axis_to, int k);

/// Per-snapshot ingredients of the renormalization identity.
struct RenormalizationSample {
    double t = 0.0;
    double f = 0.0;      // f_moment of the patch
    double g = 0.0;      // sin_moment of the patch
    double omega = 0.0;  // signed circulation of the patch
};

struct RenormalizationResult {
    double lhs = 0.0;       // (F(t_hi) - F(t_lo)) / (t_hi - t_lo)
    double rhs = 0.0;       // W times the trapezoid mean of the sin-moment
    double residual = 0.0;  // |lhs - rhs|
    double t_lo = 0.0, t_hi = 0.0;
};

RenormalizationSample renormalization_sample(const SimulationState& state, int patch_id,
                                             int other_patch_id, int k);

/// Window of >= 3 uniformly spaced samples. With three samples the lhs is the centred
/// second-order difference.
RenormalizationResult renormalization_from_samples(std::span<const RenormalizationSample> window);

RenormalizationResult renormalization_check(std::span<const SimulationState> snapshots, int patch_id,
                                            int other_patch_id, int k);

/// Ordered-pair energy sum_{p != q} g_p g_q log max(|x_p - x_q|, blob) over all clouds.
double interaction_energy(const SimulationState& state);

/// Concentration point and radius leaving at most delta^4 |W| of |vorticity| outside.
ConcentrationReport concentration_radius(const ParticleCloud& cloud, double delta, int patch_id = 0);

/// OLS of log(value) on log(t) over samples with t in [t_lo, t_hi].
ExponentFit growth_exponent(std::span<const std::pair<double, double>> series,
                            double t_lo = -std::numeric_limits<double>::infinity(),
                            double t_hi = std::numeric_limits<double>::infinity());

struct BootstrapOptions {
    std::vector<int> ks{2, 4};
    bool energy = true;               // L is O(N^2)
    double concentration_delta = 0.0; // 0 skips the concentration columns
};

struct BootstrapRow {
    double time = 0.0;
    std::vector<Vec2d> centers;
    SimilarityDecomposition similarity;
    std::vector<double> z_deviation;             // |z_i - y_i|
    std::vector<std::vector<double>> moments;    // [patch][index into ks]
    std::vector<double> support;
    std::vector<double> offcenter;               // |x~_i - x_i| (if requested)
    std::vector<double> concentration_R;
    std::vector<double> circulation;             // sequential sum of each cloud
    Vec2d impulse = Vec2d::Zero();               // sum over all particles of g x
    double I_x = 0.0;
    double E_centers = 0.0;
    double L = std::numeric_limits<double>::quiet_NaN();
};

BootstrapRow bootstrap_row(const SimulationState& state, const PointVortexSystemd& reference,
                           const BootstrapOptions& options = {});

std::vector<BootstrapRow> bootstrap_report(std::span<const SimulationState> snapshots,
                                           const PointVortexSystemd& reference,
                                           const BootstrapOptions& options = {});

/// Header, then one row per snapshot, 17 significant digits. z and deviation columns are
/// NaN unless there are exactly three patches; L is NaN where it was skipped.
void write_bootstrap_header(std::ostream& os, std::size_t patches, const BootstrapOptions& options);
void write_bootstrap_row(std::ostream& os, const BootstrapRow& row, const BootstrapOptions& options);
void write_bootstrap_csv(std::ostream& os, std::span<const BootstrapRow> rows,
                         const BootstrapOptions& options);

/// Scaling fits and conservation drifts over a bootstrap table.
struct RunSummary {
    std::vector<ExponentFit> support_fits;  // per patch; empty when supports are all 0
    std::vector<ExponentFit> I2_fits;       // per patch, when k = 2 was requested
    double max_gamma_error = 0.0;           // max |gamma(t)/gamma(t0) / sqrt(t/t0) - 1|
    double max_z_deviation = 0.0;
    double min_reference_separation = 0.0;
    bool circulation_exact = true;          // every cloud total bit-identical to the first row
    double impulse_drift = 0.0;             // max |P(t) - P(t0)|
    double system_scale = 0.0;              // max |x_i(t0)|
    double I_x_drift = 0.0;                 // max |I_x(t) - I_x(t0)|
    double L_drift_rate = std::numeric_limits<double>::quiet_NaN();  // max |dL| / |L0| / (t_end - t0)
};

RunSummary summarize(std::span<const BootstrapRow> rows, const PointVortexSystemd& reference,
                     const BootstrapOptions& options,
                     double fit_lo = -std::numeric_limits<double>::infinity(),
                     double fit_hi = std::numeric_limits<double>::infinity());

void validate_moment_order(int k);

}  // namespace vortexlab
