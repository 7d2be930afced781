#include "vortexlab/diagnostics.hpp"

#include "vortexlab/point_vortex.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace vortexlab {

void validate_moment_order(int k) {
    if (k < 2 || k % 2 != 0) {
        throw ValidationError("moment order k must be an even integer >= 2 (got " +
                              std::to_string(k) + ")");
    }
}

Vec2d center_of_mass(const ParticleCloud& cloud) {
    const double total = cloud.total_strength();
    if (total == 0.0) throw ValidationError("center_of_mass of a cloud with zero circulation");
    Vec2d m = Vec2d::Zero();
    for (Eigen::Index p = 0; p < cloud.size(); ++p) m += cloud.strengths(p) * cloud.positions.col(p);
    return m / total;
}

namespace {

// |d|^k for even k without pow.
double even_power(double r2, int k) {
    double out = 1.0;
    for (int i = 0; i < k / 2; ++i) out *= r2;
    return out;
}

// cos(2 theta) |d|^2 and sin(2 theta) |d|^2 for the angle from a to d.
void double_angle(const Vec2d& a, const Vec2d& d, double& c2, double& s2) {
    const double a2 = a.squaredNorm();
    const double dot = a.dot(d);
    const double cross = a.x() * d.y() - a.y() * d.x();
    c2 = (dot * dot - cross * cross) / a2;
    s2 = 2.0 * dot * cross / a2;
}

}  // namespace

double moment(const ParticleCloud& cloud, int k) {
    validate_moment_order(k);
    const Vec2d c = center_of_mass(cloud);
    double s = 0.0;
    for (Eigen::Index p = 0; p < cloud.size(); ++p) {
        s += std::abs(cloud.strengths(p)) * even_power((cloud.positions.col(p) - c).squaredNorm(), k);
    }
    return s;
}

double support_radius(const ParticleCloud& cloud) {
    const Vec2d c = center_of_mass(cloud);
    double r2 = 0.0;
    for (Eigen::Index p = 0; p < cloud.size(); ++p) {
        r2 = std::max(r2, (cloud.positions.col(p) - c).squaredNorm());
    }
    return std::sqrt(r2);
}

MomentReport moment_report(const ParticleCloud& cloud, int patch_id, const std::vector<int>& ks) {
    MomentReport r;
    r.patch_id = patch_id;
    r.center = center_of_mass(cloud);
    for (int k : ks) r.moments.emplace_back(k, moment(cloud, k));
    r.support_radius = support_radius(cloud);
    return r;
}

double f_moment(const ParticleCloud& cloud, const Vec2d& axis_from, const Vec2d& axis_to, int k) {
    validate_moment_order(k);
    const Vec2d a = axis_from - axis_to;
    if (a.squaredNorm() == 0.0) throw ValidationError("f_moment axis is degenerate");
    const Vec2d c = center_of_mass(cloud);
    double s = 0.0;
    for (Eigen::Index p = 0; p < cloud.size(); ++p) {
        const Vec2d d = cloud.positions.col(p) - c;
        double c2 = 0.0, s2 = 0.0;
        double_angle(a, d, c2, s2);
        s += std::abs(cloud.strengths(p)) * (-c2) * even_power(d.squaredNorm(), k);
    }
    return s;
}

double sin_moment(const ParticleCloud& cloud, const Vec2d& axis_from, const Vec2d& axis_to, int k) {
    validate_moment_order(k);
    const Vec2d a = axis_from - axis_to;
    if (a.squaredNorm() == 0.0) throw ValidationError("sin_moment axis is degenerate");
    const Vec2d c = center_of_mass(cloud);
    double s = 0.0;
    for (Eigen::Index p = 0; p < cloud.size(); ++p) {
        const Vec2d d = cloud.positions.col(p) - c;
        const double r2 = d.squaredNorm();
        if (r2 == 0.0) continue;
        double c2 = 0.0, s2 = 0.0;
        double_angle(a, d, c2, s2);
        // s2 = sin(2 theta) |d|^2
        s += std::abs(cloud.strengths(p)) * 2.0 * s2 * even_power(r2, k - 2);
    }
    return s;
}

RenormalizationSample renormalization_sample(const SimulationState& state, int patch_id,
                                             int other_patch_id, int k) {
    const auto n = static_cast<int>(state.clouds.size());
    if (patch_id < 0 || patch_id >= n || other_patch_id < 0 || other_patch_id >= n ||
        patch_id == other_patch_id) {
        throw ValidationError("renormalization needs two distinct valid patch ids");
    }
    const auto& cloud = state.clouds[static_cast<std::size_t>(patch_id)];
    const Vec2d x1 = center_of_mass(cloud);
    const Vec2d x2 = center_of_mass(state.clouds[static_cast<std::size_t>(other_patch_id)]);
    RenormalizationSample s;
    s.t = state.time;
    s.f = f_moment(cloud, x1, x2, k);
    s.g = sin_moment(cloud, x1, x2, k);
    s.omega = cloud.total_strength();
    return s;
}

RenormalizationResult renormalization_from_samples(std::span<const RenormalizationSample> w) {
    if (w.size() < 3) throw ValidationError("renormalization_check needs at least 3 snapshots");
    const double h = (w.back().t - w.front().t) / static_cast<double>(w.size() - 1);
    if (!(h > 0.0)) throw ValidationError("renormalization snapshots must advance in time");
    for (std::size_t i = 1; i < w.size(); ++i) {
        if (std::abs((w[i].t - w[i - 1].t) - h) > 1e-6 * h) {
            throw ValidationError("renormalization snapshots must have a uniform cadence");
        }
    }
    RenormalizationResult r;
    r.t_lo = w.front().t;
    r.t_hi = w.back().t;
    r.lhs = (w.back().f - w.front().f) / (r.t_hi - r.t_lo);
    double trap = 0.5 * (w.front().g + w.back().g);
    for (std::size_t i = 1; i + 1 < w.size(); ++i) trap += w[i].g;
    r.rhs = w.front().omega * trap / static_cast<double>(w.size() - 1);
    r.residual = std::abs(r.lhs - r.rhs);
    return r;
}

RenormalizationResult renormalization_check(std::span<const SimulationState> snapshots, int patch_id,
                                            int other_patch_id, int k) {
    if (snapshots.size() < 3) throw ValidationError("renormalization_check needs at least 3 snapshots");
    std::vector<RenormalizationSample> s;
    s.reserve(snapshots.size());
    for (const auto& st : snapshots) s.push_back(renormalization_sample(st, patch_id, other_patch_id, k));
    return renormalization_from_samples(s);
}

double interaction_energy(const SimulationState& state) {
    std::vector<double> x, y, g, b2;
    for (const auto& c : state.clouds) {
        for (Eigen::Index p = 0; p < c.size(); ++p) {
            x.push_back(c.positions(0, p));
            y.push_back(c.positions(1, p));
            g.push_back(c.strengths(p));
            b2.push_back(c.blob_radius * c.blob_radius);
        }
    }
    const std::size_t n = x.size();
    double total = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        double row = 0.0;
        for (std::size_t q = p + 1; q < n; ++q) {
            const double dx = x[p] - x[q], dy = y[p] - y[q];
            const double r2 = std::max(dx * dx + dy * dy, std::max(b2[p], b2[q]));
            row += g[q] * std::log(r2);
        }
        total += g[p] * row;
    }
    // Each unordered pair counts twice; log r = log(r^2) / 2.
    return total;
}

ConcentrationReport concentration_radius(const ParticleCloud& cloud, double delta, int patch_id) {
    if (!(delta > 0.0 && delta < 1.0)) throw ValidationError("concentration delta must lie in (0, 1)");
    ConcentrationReport rep;
    rep.patch_id = patch_id;
    rep.delta = delta;
    const Eigen::Index n = cloud.size();
    double mass = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) mass += std::abs(cloud.strengths(p));
    const double allowance = delta * delta * delta * delta * mass;

    std::vector<std::pair<double, double>> dm(static_cast<std::size_t>(n));
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index best_p = 0;
    for (Eigen::Index c = 0; c < n; ++c) {
        for (Eigen::Index p = 0; p < n; ++p) {
            dm[static_cast<std::size_t>(p)] = {
                (cloud.positions.col(p) - cloud.positions.col(c)).squaredNorm(),
                std::abs(cloud.strengths(p))};
        }
        std::sort(dm.begin(), dm.end());
        // Walk outward; R is the first distance whose exterior mass fits the allowance.
        double inside = 0.0;
        double R2 = dm.back().first;
        for (std::size_t i = 0; i < dm.size(); ++i) {
            inside += dm[i].second;
            if (i + 1 < dm.size() && dm[i + 1].first == dm[i].first) continue;
            if (mass - inside <= allowance) {
                R2 = dm[i].first;
                break;
            }
        }
        if (R2 < best) {
            best = R2;
            best_p = c;
        }
    }
    rep.R = std::sqrt(best);
    rep.x_tilde = cloud.positions.col(best_p);
    rep.offcenter = (rep.x_tilde - center_of_mass(cloud)).norm();
    return rep;
}

ExponentFit growth_exponent(std::span<const std::pair<double, double>> series, double t_lo,
                            double t_hi) {
    std::vector<double> lx, ly;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& [t, v] : series) {
        if (t < t_lo || t > t_hi) continue;
        if (!(t > 0.0) || !(v > 0.0)) throw ValidationError("growth_exponent needs t > 0 and values > 0");
        lx.push_back(std::log(t));
        ly.push_back(std::log(v));
        lo = std::min(lo, t);
        hi = std::max(hi, t);
    }
    if (lx.size() < 10) throw ValidationError("growth_exponent needs at least 10 samples in the window");
    const double n = static_cast<double>(lx.size());
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n;
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
        syy += (ly[i] - my) * (ly[i] - my);
    }
    if (sxx == 0.0) throw ValidationError("growth_exponent needs distinct sample times");
    ExponentFit fit;
    fit.exponent = sxy / sxx;
    fit.intercept = my - fit.exponent * mx;
    // a flat series is fit perfectly; rounding in the mean can leave syy at a few ulps
    const double flat = n * std::pow(64.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(my)), 2);
    fit.r_squared = syy <= flat ? 1.0 : (sxy * sxy) / (sxx * syy);
    fit.t_lo = lo;
    fit.t_hi = hi;
    fit.samples = static_cast<int>(lx.size());
    return fit;
}

BootstrapRow bootstrap_row(const SimulationState& state, const PointVortexSystemd& reference,
                           const BootstrapOptions& options) {
    for (int k : options.ks) validate_moment_order(k);
    if (state.clouds.size() != static_cast<std::size_t>(reference.size())) {
        throw ValidationError("snapshot and reference have different patch counts");
    }
    BootstrapRow row;
    row.time = state.time;
    PointVortexSystemd centers = reference;
    for (std::size_t i = 0; i < state.clouds.size(); ++i) {
        const auto& c = state.clouds[i];
        row.centers.push_back(center_of_mass(c));
        centers.positions.col(static_cast<Eigen::Index>(i)) = row.centers.back();
        std::vector<double> m;
        for (int k : options.ks) m.push_back(moment(c, k));
        row.moments.push_back(std::move(m));
        row.support.push_back(support_radius(c));
        row.circulation.push_back(c.total_strength());
        row.impulse += c.positions * c.strengths;
        if (options.concentration_delta > 0.0) {
            const auto conc = concentration_radius(c, options.concentration_delta, static_cast<int>(i));
            row.offcenter.push_back(conc.offcenter);
            row.concentration_R.push_back(conc.R);
        }
    }
    if (reference.size() == 3) {
        row.similarity = similarity_decompose({row.centers[0], row.centers[1], row.centers[2]}, reference);
        for (int i = 0; i < 3; ++i) {
            row.z_deviation.push_back((row.similarity.z[static_cast<std::size_t>(i)] - reference.position(i)).norm());
        }
    }
    const auto inv = invariants(centers);
    row.I_x = inv.I;
    row.E_centers = inv.E;
    if (options.energy) row.L = interaction_energy(state);
    return row;
}

std::vector<BootstrapRow> bootstrap_report(std::span<const SimulationState> snapshots,
                                           const PointVortexSystemd& reference,
                                           const BootstrapOptions& options) {
    std::vector<BootstrapRow> rows;
    rows.reserve(snapshots.size());
    for (const auto& s : snapshots) rows.push_back(bootstrap_row(s, reference, options));
    return rows;
}

void write_bootstrap_header(std::ostream& os, std::size_t np, const BootstrapOptions& options) {
    os << "t";
    for (std::size_t i = 1; i <= np; ++i) os << ",x" << i << "x,x" << i << "y";
    os << ",beta,gamma";
    for (std::size_t i = 1; i <= np; ++i) os << ",z" << i << "x,z" << i << "y,dev" << i;
    os << ",I_z,E_z";
    for (std::size_t i = 1; i <= np; ++i) {
        for (int k : options.ks) os << ",I" << k << "_" << i;
        os << ",support" << i;
        if (options.concentration_delta > 0.0) os << ",R" << i << ",offcenter" << i;
    }
    for (std::size_t i = 1; i <= np; ++i) os << ",W" << i;
    os << ",P_x,P_y,I_x,E_centers,L\n";
}

void write_bootstrap_row(std::ostream& os, const BootstrapRow& r, const BootstrapOptions& options) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const std::size_t np = r.centers.size();
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, ",%.17g", v);
        os << buf;
    };
    std::snprintf(buf, sizeof buf, "%.17g", r.time);
    os << buf;
    for (const auto& c : r.centers) {
        put(c.x());
        put(c.y());
    }
    put(r.similarity.beta);
    put(r.similarity.gamma);
    for (std::size_t i = 0; i < np; ++i) {
        const bool has = i < r.z_deviation.size();
        put(has ? r.similarity.z[i].x() : nan);
        put(has ? r.similarity.z[i].y() : nan);
        put(has ? r.z_deviation[i] : nan);
    }
    put(r.similarity.I_z);
    put(r.similarity.E_z);
    for (std::size_t i = 0; i < np; ++i) {
        for (double m : r.moments[i]) put(m);
        put(r.support[i]);
        if (options.concentration_delta > 0.0) {
            put(r.concentration_R[i]);
            put(r.offcenter[i]);
        }
    }
    for (double w : r.circulation) put(w);
    put(r.impulse.x());
    put(r.impulse.y());
    put(r.I_x);
    put(r.E_centers);
    put(r.L);
    os << '\n';
}

void write_bootstrap_csv(std::ostream& os, std::span<const BootstrapRow> rows,
                         const BootstrapOptions& options) {
    if (rows.empty()) return;
    write_bootstrap_header(os, rows.front().centers.size(), options);
    for (const auto& r : rows) write_bootstrap_row(os, r, options);
}

RunSummary summarize(std::span<const BootstrapRow> rows, const PointVortexSystemd& reference,
                     const BootstrapOptions& options, double fit_lo, double fit_hi) {
    RunSummary out;
    if (rows.empty()) return out;
    const auto& r0 = rows.front();
    const std::size_t np = r0.centers.size();
    out.min_reference_separation = min_separation(reference);
    for (const auto& c : r0.centers) out.system_scale = std::max(out.system_scale, c.norm());

    int k2 = -1;
    for (std::size_t j = 0; j < options.ks.size(); ++j)
        if (options.ks[j] == 2) k2 = static_cast<int>(j);

    for (std::size_t i = 0; i < np; ++i) {
        std::vector<std::pair<double, double>> sup, i2;
        for (const auto& r : rows) {
            if (r.support[i] > 0.0) sup.emplace_back(r.time, r.support[i]);
            if (k2 >= 0 && r.moments[i][static_cast<std::size_t>(k2)] > 0.0) {
                i2.emplace_back(r.time, r.moments[i][static_cast<std::size_t>(k2)]);
            }
        }
        // too-short runs simply have no fits
        auto fittable = [&](const std::vector<std::pair<double, double>>& s) {
            if (s.size() != rows.size()) return false;
            return std::count_if(s.begin(), s.end(), [&](const auto& p) {
                       return p.first >= fit_lo && p.first <= fit_hi;
                   }) >= 10;
        };
        if (fittable(sup)) out.support_fits.push_back(growth_exponent(sup, fit_lo, fit_hi));
        if (k2 >= 0 && fittable(i2)) out.I2_fits.push_back(growth_exponent(i2, fit_lo, fit_hi));
    }

    const double t_span = rows.back().time - r0.time;
    const bool have_L = std::isfinite(r0.L);
    double L_dev = 0.0;
    for (const auto& r : rows) {
        if (np == 3 && r0.similarity.gamma > 0.0) {
            const double ratio = r.similarity.gamma / r0.similarity.gamma;
            out.max_gamma_error =
                std::max(out.max_gamma_error, std::abs(ratio / std::sqrt(r.time / r0.time) - 1.0));
        }
        for (double d : r.z_deviation) out.max_z_deviation = std::max(out.max_z_deviation, d);
        for (std::size_t i = 0; i < np; ++i) {
            if (r.circulation[i] != r0.circulation[i]) out.circulation_exact = false;
        }
        out.impulse_drift = std::max(out.impulse_drift, (r.impulse - r0.impulse).norm());
        out.I_x_drift = std::max(out.I_x_drift, std::abs(r.I_x - r0.I_x));
        if (have_L && std::isfinite(r.L)) L_dev = std::max(L_dev, std::abs(r.L - r0.L));
    }
    if (have_L && t_span > 0.0) out.L_drift_rate = L_dev / std::abs(r0.L) / t_span;
    return out;
}

}  // namespace vortexlab
