#pragma once

#include "vortexlab/core.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace vortexlab {

enum class Profile { uniform, radial_bump };

struct PatchSpec {
    Vec2d center = Vec2d::Zero();
    double radius = 1.0;
    double circulation = 1.0;
    Profile profile = Profile::uniform;
    int particles_per_patch = 1;
};

/// Default blob radius 0.2 * rho / sqrt(n).
double default_blob_radius(double radius, int particles_per_patch);

/// Concentric-ring quadrature of a definite-sign patch. Ring weights integrate the
/// profile exactly over each annulus and ring radii match the annulus second moment,
/// so a uniform patch reproduces W rho^2 / 2 exactly. The strengths sum to the
/// circulation bit-exactly. blob_radius < 0 selects the default. A jitter seed rotates
/// every ring by a random angle (ring symmetry, hence the centre, is preserved).
ParticleCloud discretize_patch(const PatchSpec& spec, double blob_radius = -1.0,
                               std::optional<std::uint64_t> jitter_seed = std::nullopt);

struct TreeParams {
    double opening_angle = 0.5;
    int leaf_capacity = 16;
    int expansion_order = 4;
    // Cells closer than this many blob radii are summed directly.
    double blob_guard = 10.0;
};

/// Direct strength-weighted kernel sum at arbitrary points. Summation is cloud-major,
/// particle-index order. delta = 0 throws SingularEvaluation on coincidence.
Matrix2X<double> induced_velocity(const std::vector<ParticleCloud>& clouds,
                                  const Matrix2X<double>& eval_points, double delta,
                                  int threads = 1);

/// Barnes-Hut quadtree with complex multipoles (terms 0..expansion_order).
Matrix2X<double> induced_velocity_tree(const std::vector<ParticleCloud>& clouds,
                                       const Matrix2X<double>& eval_points, double delta,
                                       const TreeParams& params, int threads = 1);

/// Velocity of every particle (cloud-major order) induced by all particles, with each
/// source using its own cloud's blob radius. The self term is zero.
class VelocityBackend {
public:
    virtual ~VelocityBackend() = default;
    virtual Matrix2X<double> particle_velocities(const std::vector<ParticleCloud>& clouds) const = 0;
    virtual std::string name() const = 0;
};

class DirectBackend final : public VelocityBackend {
public:
    explicit DirectBackend(int threads = 1) : threads_(threads) {}
    Matrix2X<double> particle_velocities(const std::vector<ParticleCloud>& clouds) const override;
    std::string name() const override { return "direct"; }

private:
    int threads_;
};

class TreeBackend final : public VelocityBackend {
public:
    explicit TreeBackend(TreeParams params = {}, int threads = 1)
        : params_(params), threads_(threads) {}
    Matrix2X<double> particle_velocities(const std::vector<ParticleCloud>& clouds) const override;
    std::string name() const override { return "tree"; }

private:
    TreeParams params_;
    int threads_;
};

/// One classical RK4 step of every particle. Strengths are untouched.
SimulationState step(const SimulationState& state, double dt, const VelocityBackend& backend);

enum class DtPolicy { fixed, scaled };

struct RunConfig {
    PointVortexSystemd reference;  // y_i, W_i
    double t0 = 100.0;
    double t_end = 400.0;
    double patch_radius = 1.0;
    Profile profile = Profile::uniform;
    int particles_per_patch = 1;
    double blob_radius = -1.0;  // < 0: default_blob_radius
    DtPolicy dt_policy = DtPolicy::fixed;
    double dt = 0.0;            // <= 0: default_dt
    double dt_max = std::numeric_limits<double>::infinity();
    double snapshot_cadence = 0.0;  // <= 0: one snapshot per step
    bool recentre_initial = true;
    bool normalize_reference = true;  // rescale y so that alpha = 1/2
    double max_speed = 1e6;
    std::optional<std::uint64_t> jitter_seed;
};

class BlowUp : public NumericalError {
public:
    BlowUp(double t, double speed);
    double time, speed;
};

/// Reference actually used by the run (recentred / normalized per the flags).
PointVortexSystemd effective_reference(const RunConfig& config);

/// 0.02 d_min^2 / max|W| with d_min the minimum initial centre separation; when
/// patches carry more than one particle it is further capped by 0.1 rho^2 / max|W|
/// so the patch rotation is resolved.
double default_dt(const RunConfig& config);

/// Time of snapshot k: t0 + k * cadence, clipped to t_end.
double snapshot_time(const RunConfig& config, long k);
long snapshot_count(const RunConfig& config);

SimulationState initial_state(const RunConfig& config);

using SnapshotObserver = std::function<void(long index, const SimulationState&)>;

/// Advance from snapshot `index` (state must be that snapshot) to t_end, reporting
/// every later snapshot. Deterministic: restarting from any emitted snapshot replays
/// the same arithmetic.
void advance(const RunConfig& config, SimulationState state, long index,
             const VelocityBackend& backend, const SnapshotObserver& observer);

/// Full run from t0; the observer sees the initial snapshot as index 0.
void run(const RunConfig& config, const VelocityBackend& backend, const SnapshotObserver& observer);

std::vector<SimulationState> run(const RunConfig& config, const VelocityBackend& backend);

void validate(const RunConfig& config);

}  // namespace vortexlab
