#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace vortexlab {

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Matrix2X = Eigen::Matrix<Scalar, 2, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Vec2d = Vec2<double>;

// Error taxonomy. The CLI maps these onto exit codes
// (validation 2, numerical 3, io 4).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class SingularEvaluation : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Counterclockwise quarter turn: (x, y) -> (-y, x).
template <typename Derived>
Vec2<typename Derived::Scalar> perp(const Eigen::MatrixBase<Derived>& v) {
    return {-v.y(), v.x()};
}

/// Regularized Biot-Savart kernel perp(x - y) / (|x - y|^2 + delta^2).
/// delta = 0 gives the singular kernel K(x - y) = (x - y)^perp / |x - y|^2.
template <typename Scalar>
Vec2<Scalar> kernel(const Vec2<Scalar>& x, const Vec2<Scalar>& y, Scalar delta) {
    const Scalar dx = x.x() - y.x();
    const Scalar dy = x.y() - y.y();
    const Scalar r2 = dx * dx + dy * dy + delta * delta;
    if (r2 == Scalar(0)) {
        throw SingularEvaluation("kernel evaluated at coincident points with zero blob radius");
    }
    return {-dy / r2, dx / r2};
}

/// N ideal point vortices. Circulations are in rescaled-time units (no 2*pi).
template <typename Scalar>
struct PointVortexSystem {
    Matrix2X<Scalar> positions;
    VectorX<Scalar> circulations;

    Eigen::Index size() const { return circulations.size(); }
    Vec2<Scalar> position(Eigen::Index i) const { return positions.col(i); }
};

using PointVortexSystemd = PointVortexSystem<double>;

inline PointVortexSystemd make_system(const std::vector<double>& circulations,
                                      const std::vector<Vec2d>& positions) {
    if (circulations.size() != positions.size()) {
        throw ValidationError("circulation and position counts differ");
    }
    PointVortexSystemd s;
    s.positions.resize(2, static_cast<Eigen::Index>(positions.size()));
    s.circulations.resize(static_cast<Eigen::Index>(circulations.size()));
    for (std::size_t i = 0; i < positions.size(); ++i) {
        s.positions.col(static_cast<Eigen::Index>(i)) = positions[i];
        s.circulations(static_cast<Eigen::Index>(i)) = circulations[i];
    }
    return s;
}

/// Throws ValidationError unless the system satisfies the PointVortexSystem invariants:
/// N >= 1, matching sizes, finite data, nonzero circulations, distinct positions.
template <typename Scalar>
void validate(const PointVortexSystem<Scalar>& s) {
    using std::isfinite;
    if (s.size() < 1 || s.positions.cols() != s.size()) {
        throw ValidationError("point-vortex system needs N >= 1 positions matching circulations");
    }
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (!isfinite(s.circulations(i)) || !isfinite(s.positions(0, i)) ||
            !isfinite(s.positions(1, i))) {
            throw ValidationError("non-finite value in point-vortex system");
        }
        if (s.circulations(i) == Scalar(0)) {
            throw ValidationError("zero circulation in point-vortex system");
        }
        for (Eigen::Index j = 0; j < i; ++j) {
            if (s.positions.col(i) == s.positions.col(j)) {
                throw ValidationError("coincident vortex positions");
            }
        }
    }
}

/// Blob discretization of one definite-sign patch.
struct ParticleCloud {
    Matrix2X<double> positions;
    VectorX<double> strengths;
    double blob_radius = 0.0;
    int sign = 1;

    Eigen::Index size() const { return strengths.size(); }
    double total_strength() const {
        double s = 0.0;
        for (Eigen::Index p = 0; p < strengths.size(); ++p) s += strengths(p);
        return s;
    }
};

/// Three (or in general several) clouds advected together.
struct SimulationState {
    std::vector<ParticleCloud> clouds;
    double time = 0.0;

    Eigen::Index particle_count() const {
        Eigen::Index n = 0;
        for (const auto& c : clouds) n += c.size();
        return n;
    }
};

}  // namespace vortexlab
