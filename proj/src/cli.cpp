#include "vortexlab/cli.hpp"

#include "vortexlab/config_lab.hpp"
#include "vortexlab/diagnostics.hpp"
#include "vortexlab/io.hpp"
#include "vortexlab/patch_sim.hpp"
#include "vortexlab/point_vortex.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

namespace vortexlab::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Raised for outcomes that are not exceptions of the library but still end the run.
struct Failure {
    int code;
    json error;
};

json fit_json(const ExponentFit& f) {
    return {{"exponent", f.exponent},
            {"intercept", f.intercept},
            {"r_squared", f.r_squared},
            {"window", {f.t_lo, f.t_hi}},
            {"samples", f.samples}};
}

json nan_or(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::array<Vec2d, 3> three_positions(const PointVortexSystemd& s) {
    if (s.size() != 3) throw ValidationError("configuration needs exactly three vortices");
    return {s.position(0), s.position(1), s.position(2)};
}

// ---------------------------------------------------------------- config-find

struct FindArgs {
    std::vector<double> circulations;
    std::vector<double> seed;
    std::string seed_file;
    std::string out = "config.json";
    std::string report;
    int max_iterations = 50;
    double tolerance = 1e-10;
};

int config_find(const FindArgs& a, std::ostream& out) {
    std::array<double, 3> w{-2.0, -2.0, 1.0};
    std::array<Vec2d, 3> seed{Vec2d(-1.0, 0.0), Vec2d(1.0, 0.0), Vec2d(1.0, std::sqrt(2.0))};
    if (!a.seed_file.empty()) {
        const auto s = read_system(a.seed_file);
        seed = three_positions(s);
        for (int i = 0; i < 3; ++i) w[static_cast<std::size_t>(i)] = s.circulations(i);
    }
    if (!a.circulations.empty()) {
        if (a.circulations.size() != 3) throw ValidationError("--circulations takes three values");
        std::copy(a.circulations.begin(), a.circulations.end(), w.begin());
    }
    if (!a.seed.empty()) {
        if (a.seed.size() != 6) throw ValidationError("--seed takes six values x1 y1 x2 y2 x3 y3");
        for (std::size_t i = 0; i < 3; ++i) seed[i] = Vec2d(a.seed[2 * i], a.seed[2 * i + 1]);
    }
    FindOptions opt;
    opt.max_iterations = a.max_iterations;
    opt.tolerance = a.tolerance;
    const FindResult found = find_expanding_config(w, seed, opt);
    const LemmaReport lem = lemma_hypotheses(found.system);
    const SelfSimilarFit fit = self_similarity_fit(found.system);

    write_text_atomic(a.out, system_to_json(found.system));

    std::ostringstream rep;
    char buf[160];
    auto line = [&](const char* name, double v) {
        std::snprintf(buf, sizeof buf, "%-24s % .6e\n", name, v);
        rep << buf;
    };
    rep << "configuration  " << a.out << "\n";
    for (int i = 0; i < 3; ++i) {
        std::snprintf(buf, sizeof buf, "  W%d = % .6g  x%d = (% .15g, % .15g)\n", i + 1,
                      found.system.circulations(i), i + 1, found.system.positions(0, i),
                      found.system.positions(1, i));
        rep << buf;
    }
    rep << "newton iterations       " << found.iterations << "\n";
    line("final residual", found.final_residual);
    line("harmonic residual", lem.harmonic_residual);
    line("sum W", lem.sum_omega);
    line("|X|", lem.X_norm);
    line("I", lem.I_value);
    line("collinearity", lem.collinearity);
    line("equilaterality", lem.equilaterality);
    line("grad parallelism", lem.grad_parallelism);
    line("alpha", fit.alpha);
    line("beta rate", fit.beta_rate);
    line("fit residual", fit.residual);
    rep << "hypotheses              " << (lem.passes() ? "pass" : "FAIL") << "\n";
    if (a.report.empty()) {
        out << rep.str();
    } else {
        write_text_atomic(a.report, rep.str());
    }
    if (!lem.passes() || !(fit.alpha > 0.0)) {
        throw Failure{numerical,
                      {{"error", "numerical"},
                       {"type", "hypotheses_failed"},
                       {"message", "configuration does not satisfy every hypothesis"},
                       {"alpha", fit.alpha},
                       {"I", lem.I_value},
                       {"X_norm", lem.X_norm},
                       {"collinearity", lem.collinearity},
                       {"equilaterality", lem.equilaterality}}};
    }
    return ok;
}

// ---------------------------------------------------------------- pv-run

struct PvArgs {
    std::string config;
    double t0 = 1.0, t1 = 100.0, tol = 1e-10;
    int samples = 200;
    std::string method = "dp45";
    double dt = 0.0;
    std::string out = "trajectory.csv";
    std::string summary;
};

int pv_run(const PvArgs& a, std::ostream& out) {
    const PointVortexSystemd sys = read_system(a.config);
    if (!(a.t1 > a.t0)) throw ValidationError("pv-run needs t1 > t0");
    if (a.samples < 1) throw ValidationError("--samples must be >= 1");
    std::vector<double> times;
    for (int k = 1; k <= a.samples; ++k) {
        times.push_back(k == a.samples ? a.t1 : a.t0 + (a.t1 - a.t0) * k / a.samples);
    }
    Trajectory traj;
    if (a.method == "dp45") {
        IntegrateOptions opt;
        opt.sample_times = times;
        traj = integrate(sys, a.t0, a.t1, a.tol, opt);
    } else if (a.method == "rk4") {
        if (!(a.dt > 0.0)) throw ValidationError("rk4 needs --dt > 0");
        traj = integrate_rk4(sys, a.t0, a.t1, a.dt, times);
    } else {
        throw ValidationError("unknown method '" + a.method + "'");
    }
    {
        std::ostringstream os;
        write_trajectory_csv(os, traj);
        write_text_atomic(a.out, os.str());
    }
    const auto i0 = invariants(traj.states.front());
    double dX = 0, dI = 0, dE = 0, dratio = 0, min_sep = INFINITY;
    const auto d0 = traj.states.front();
    auto dist = [](const PointVortexSystemd& s, int i, int j) { return (s.position(i) - s.position(j)).norm(); };
    for (const auto& s : traj.states) {
        const auto inv = invariants(s);
        dX = std::max(dX, (inv.X - i0.X).norm());
        dI = std::max(dI, std::abs(inv.I - i0.I));
        dE = std::max(dE, std::abs(inv.E - i0.E));
        min_sep = std::min(min_sep, min_separation(s));
        if (s.size() == 3) {
            // pairwise distance ratios relative to d12
            const double r = dist(s, 0, 1);
            const double r0 = dist(d0, 0, 1);
            dratio = std::max(dratio, std::abs(dist(s, 0, 2) / r - dist(d0, 0, 2) / r0));
            dratio = std::max(dratio, std::abs(dist(s, 1, 2) / r - dist(d0, 1, 2) / r0));
        }
    }
    json sum = {{"method", a.method},
                {"t0", a.t0},
                {"t1", a.t1},
                {"tol", a.tol},
                {"samples", traj.times.size()},
                {"accepted_steps", traj.step_stats.accepted},
                {"rejected_steps", traj.step_stats.rejected},
                {"min_separation", min_sep},
                {"initial", {{"X", {i0.X.x(), i0.X.y()}}, {"I", i0.I}, {"E", i0.E}}},
                {"max_drift", {{"X", dX}, {"I", dI}, {"E", dE}, {"distance_ratio", dratio}}}};
    if (a.summary.empty()) {
        out << sum.dump() << "\n";
    } else {
        write_text_atomic(a.summary, dump(sum));
    }
    return ok;
}

// ---------------------------------------------------------------- patch-run / diag

json summary_json(const RunSummary& s) {
    json j;
    j["support_fits"] = json::array();
    for (const auto& f : s.support_fits) j["support_fits"].push_back(fit_json(f));
    j["I2_fits"] = json::array();
    for (const auto& f : s.I2_fits) j["I2_fits"].push_back(fit_json(f));
    j["max_deviations"] = {{"gamma_vs_sqrt_t", s.max_gamma_error},
                           {"z_minus_y", s.max_z_deviation},
                           {"min_reference_separation", s.min_reference_separation}};
    j["conservation"] = {{"circulation_bit_exact", s.circulation_exact},
                         {"impulse_drift", s.impulse_drift},
                         {"system_scale", s.system_scale},
                         {"I_x_drift", s.I_x_drift},
                         {"L_relative_drift_per_time", nan_or(s.L_drift_rate)}};
    return j;
}

BootstrapOptions row_options(const ExperimentConfig& c, long index) {
    BootstrapOptions o = c.diagnostics;
    o.energy = c.energy_stride > 0 && index % c.energy_stride == 0;
    return o;
}

std::unique_ptr<VelocityBackend> make_backend(const ExperimentConfig& c) {
    if (c.backend == "tree") return std::make_unique<TreeBackend>(c.tree, c.threads);
    return std::make_unique<DirectBackend>(c.threads);
}

std::string snapshot_name(long k, SnapshotFormat f) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "snap_%06ld.%s", k, f == SnapshotFormat::csv ? "csv" : "bin");
    return buf;
}

std::string checkpoint_name(long k) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "checkpoint_%06ld.bin", k);
    return buf;
}

std::pair<double, double> fit_bounds(const ExperimentConfig& c) {
    if (c.fit_window) return *c.fit_window;
    return {-INFINITY, INFINITY};
}

json log_line(long k, const BootstrapRow& r) {
    double sup = 0.0;
    for (double s : r.support) sup = std::max(sup, s);
    return {{"snapshot", k}, {"t", r.time}, {"I_x", r.I_x}, {"L", nan_or(r.L)}, {"max_support", sup}};
}

std::vector<fs::path> list_snapshots(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("missing snapshot directory " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (name.rfind("snap_", 0) == 0 && (e.path().extension() == ".csv" || e.path().extension() == ".bin")) {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no snapshots in " + dir.string());
    return files;
}

// Keeps the header and the first `rows` data lines.
void truncate_table(const fs::path& path, long rows) {
    std::istringstream is(read_text(path));
    std::string line, kept;
    long n = -1;
    while (n < rows && std::getline(is, line)) {
        kept += line + "\n";
        ++n;
    }
    if (n < rows) throw IoError(path.string() + " has fewer rows than the checkpoint");
    write_text_atomic(path, kept);
}

struct PatchArgs {
    std::string config;
    bool resume = false;
};

int patch_run(ExperimentConfig cfg, bool resume, int threads_override, std::ostream& out) {
    const fs::path dir = cfg.output_dir;
    const fs::path snaps = dir / "snapshots";
    SimulationState state;
    long index = 0;
    std::vector<BootstrapRow> rows;

    if (resume) {
        const json ck = [&] {
            try {
                return json::parse(read_text(dir / "checkpoint.json"));
            } catch (const json::exception& e) {
                throw IoError(std::string("corrupt checkpoint: ") + e.what());
            }
        }();
        if (ck.value("format_version", 0) != kSnapshotFormatVersion) {
            throw IoError("unsupported checkpoint format_version");
        }
        cfg = config_from_json(ck.at("config").dump());
        if (threads_override > 0) cfg.threads = threads_override;
        index = ck.at("snapshot_index").get<long>();
        state = read_snapshot(dir / ck.at("snapshot_file").get<std::string>());
        truncate_table(dir / "bootstrap.csv", index + 1);
        const auto ref = effective_reference(cfg.run);
        const auto files = list_snapshots(snaps);
        if (static_cast<long>(files.size()) < index + 1) throw IoError("snapshots missing before checkpoint");
        for (long k = 0; k <= index; ++k) {
            rows.push_back(bootstrap_row(read_snapshot(files[static_cast<std::size_t>(k)]), ref, row_options(cfg, k)));
        }
    } else {
        cfg = resolve(cfg);
        fs::create_directories(snaps);
        write_text_atomic(dir / "config.json", config_to_json(cfg));
        std::ofstream(dir / "bootstrap.csv", std::ios::trunc);
    }

    const auto ref = effective_reference(cfg.run);
    const long last = snapshot_count(cfg.run) - 1;
    const auto backend = make_backend(cfg);
    std::ofstream table(dir / "bootstrap.csv", std::ios::app | std::ios::binary);
    if (!table) throw IoError("cannot open " + (dir / "bootstrap.csv").string());
    long checkpointed = resume ? index : -1;

    auto checkpoint = [&](long k, const SimulationState& s) {
        write_snapshot(dir / checkpoint_name(k), s, SnapshotFormat::binary);
        json ck = {{"format_version", kSnapshotFormatVersion},
                   {"snapshot_index", k},
                   {"time", s.time},
                   {"snapshot_file", checkpoint_name(k)},
                   {"config", json::parse(config_to_json(cfg))}};
        write_text_atomic(dir / "checkpoint.json", dump(ck));
        if (checkpointed >= 0 && checkpointed != k) fs::remove(dir / checkpoint_name(checkpointed));
        checkpointed = k;
    };

    auto observe = [&](long k, const SimulationState& s) {
        write_snapshot(snaps / snapshot_name(k, cfg.snapshot_format), s, cfg.snapshot_format);
        const auto opts = row_options(cfg, k);
        if (k == 0) write_bootstrap_header(table, s.clouds.size(), opts);
        rows.push_back(bootstrap_row(s, ref, opts));
        write_bootstrap_row(table, rows.back(), opts);
        table.flush();
        if (!table) throw IoError("cannot append to bootstrap.csv");
        out << log_line(k, rows.back()).dump() << "\n" << std::flush;
        if (k % cfg.checkpoint_every == 0 || k == last) checkpoint(k, s);
    };

    try {
        if (resume) {
            advance(cfg.run, std::move(state), index, *backend, observe);
        } else {
            run(cfg.run, *backend, observe);
        }
    } catch (const BlowUp& e) {
        throw Failure{numerical,
                      {{"error", "numerical"},
                       {"type", "blow_up"},
                       {"message", e.what()},
                       {"t", e.time},
                       {"speed", e.speed},
                       {"checkpoint_index", checkpointed}}};
    }
    const auto [lo, hi] = fit_bounds(cfg);
    const auto sum = summarize(rows, ref, cfg.diagnostics, lo, hi);
    write_text_atomic(dir / "summary.json", dump(summary_json(sum)));
    return ok;
}

struct DiagArgs {
    std::string run_dir;
    std::string out;
    int renorm_k = 2;
    std::vector<int> renorm_patches{0, 1};
};

int diag(ExperimentConfig cfg, const DiagArgs& a, std::ostream& out) {
    const fs::path dir = a.run_dir;
    const fs::path outdir = a.out.empty() ? dir / "diag" : fs::path(a.out);
    validate_moment_order(a.renorm_k);
    if (a.renorm_patches.size() != 2 || a.renorm_patches[0] == a.renorm_patches[1]) {
        throw ValidationError("--renorm-patches takes two distinct patch ids");
    }
    const auto files = list_snapshots(dir / "snapshots");
    const auto ref = effective_reference(cfg.run);
    const int np = static_cast<int>(ref.size());
    for (int p : a.renorm_patches) {
        if (p < 0 || p >= np) throw ValidationError("renormalization patch id out of range");
    }

    std::vector<BootstrapRow> rows;
    std::vector<RenormalizationSample> samples;
    for (std::size_t k = 0; k < files.size(); ++k) {
        const auto s = read_snapshot(files[k]);
        rows.push_back(bootstrap_row(s, ref, row_options(cfg, static_cast<long>(k))));
        samples.push_back(renormalization_sample(s, a.renorm_patches[0], a.renorm_patches[1], a.renorm_k));
    }
    fs::create_directories(outdir);
    {
        std::ostringstream os;
        write_bootstrap_header(os, static_cast<std::size_t>(np), cfg.diagnostics);
        for (std::size_t k = 0; k < rows.size(); ++k) {
            write_bootstrap_row(os, rows[k], row_options(cfg, static_cast<long>(k)));
        }
        write_text_atomic(outdir / "bootstrap.csv", os.str());
    }
    {
        // centred three-point windows; scale = I_k / t of the tracked patch
        int kidx = -1;
        for (std::size_t j = 0; j < cfg.diagnostics.ks.size(); ++j) {
            if (cfg.diagnostics.ks[j] == a.renorm_k) kidx = static_cast<int>(j);
        }
        std::ostringstream os;
        os << "t,lhs,rhs,residual,scale\n";
        char buf[160];
        for (std::size_t k = 1; k + 1 < samples.size(); ++k) {
            const auto r = renormalization_from_samples(std::span(samples).subspan(k - 1, 3));
            const double ik = kidx >= 0 ? rows[k].moments[static_cast<std::size_t>(a.renorm_patches[0])][static_cast<std::size_t>(kidx)]
                                        : moment(read_snapshot(files[k]).clouds[static_cast<std::size_t>(a.renorm_patches[0])], a.renorm_k);
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", samples[k].t, r.lhs, r.rhs,
                          r.residual, ik / samples[k].t);
            os << buf;
        }
        write_text_atomic(outdir / "renormalization.csv", os.str());
    }
    const auto [lo, hi] = fit_bounds(cfg);
    const auto sum = summarize(rows, ref, cfg.diagnostics, lo, hi);
    write_text_atomic(outdir / "summary.json", dump(summary_json(sum)));
    out << json{{"snapshots", rows.size()}, {"out", outdir.string()}}.dump() << "\n";
    return ok;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
    std::vector<long> sizes{1000, 10000};
    TreeParams tree;
    int threads = 1;
    std::uint64_t seed = 1;
    std::string out;
};

int bench(const BenchArgs& a, std::ostream& out) {
    std::ostringstream table;
    table << "n,direct_s,tree_s,speedup,max_rel_err\n";
    for (long n : a.sizes) {
        if (n < 1) throw ValidationError("bench sizes must be positive");
        std::mt19937_64 rng(a.seed);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        ParticleCloud c;
        c.blob_radius = 0.0;
        c.positions.resize(2, n);
        c.strengths.resize(n);
        for (long p = 0; p < n; ++p) {
            c.positions(0, p) = u(rng);
            c.positions(1, p) = u(rng);
            c.strengths(p) = u(rng) / static_cast<double>(n);
        }
        const std::vector<ParticleCloud> clouds{c};
        using clock = std::chrono::steady_clock;
        const auto t0 = clock::now();
        const auto ud = DirectBackend(a.threads).particle_velocities(clouds);
        const auto t1 = clock::now();
        const auto ut = TreeBackend(a.tree, a.threads).particle_velocities(clouds);
        const auto t2 = clock::now();
        const double ds = std::chrono::duration<double>(t1 - t0).count();
        const double ts = std::chrono::duration<double>(t2 - t1).count();
        const double err = (ut - ud).colwise().norm().maxCoeff() / ud.colwise().norm().maxCoeff();
        char buf[200];
        std::snprintf(buf, sizeof buf, "%ld,%.6g,%.6g,%.4g,%.3e\n", n, ds, ts, ds / ts, err);
        table << buf;
    }
    if (a.out.empty()) {
        out << table.str();
    } else {
        write_text_atomic(a.out, table.str());
    }
    return ok;
}

json error_json(const char* kind, const char* type, const std::string& msg) {
    return {{"error", kind}, {"type", type}, {"message", msg}};
}

}  // namespace

int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"vortexlab: point vortices, vortex patches and their diagnostics", "vortexlab"};
    app.require_subcommand(1);

    FindArgs fa;
    auto* find = app.add_subcommand("config-find", "search for an expanding three-vortex configuration");
    find->add_option("--circulations", fa.circulations, "three circulations")->expected(3);
    find->add_option("--seed", fa.seed, "seed positions x1 y1 x2 y2 x3 y3")->expected(6);
    find->add_option("--seed-file", fa.seed_file, "seed system JSON");
    find->add_option("--out", fa.out, "configuration JSON to write")->capture_default_str();
    find->add_option("--report", fa.report, "report file (default stdout)");
    find->add_option("--max-iterations", fa.max_iterations)->capture_default_str();
    find->add_option("--tolerance", fa.tolerance)->capture_default_str();

    PvArgs pa;
    auto* pv = app.add_subcommand("pv-run", "integrate a point-vortex system");
    pv->add_option("--config", pa.config, "system JSON")->required();
    pv->add_option("--t0", pa.t0)->capture_default_str();
    pv->add_option("--t1", pa.t1)->capture_default_str();
    pv->add_option("--tol", pa.tol)->capture_default_str();
    pv->add_option("--samples", pa.samples, "uniformly spaced output samples")->capture_default_str();
    pv->add_option("--method", pa.method, "dp45 or rk4")->capture_default_str();
    pv->add_option("--dt", pa.dt, "rk4 step");
    pv->add_option("--out", pa.out, "trajectory CSV")->capture_default_str();
    pv->add_option("--summary", pa.summary, "drift summary JSON (default stdout)");

    // patch-run flags mirror the config file; they are applied after it is read
    std::string pconfig, reference, output_dir, profile, dt_policy, backend, snapshot_format;
    double t0 = 0, t_end = 0, radius = 0, blob = 0, dt = 0, dt_max = 0, cadence = 0, theta = 0, delta = 0,
           max_speed = 0, guard = 0;
    int particles = 0, threads = 0, order = 0, leaf = 0, energy_stride = 0, checkpoint_every = 0;
    std::vector<int> ks;
    std::vector<double> window;
    std::uint64_t seed = 0;
    bool resume = false;
    auto* patch = app.add_subcommand("patch-run", "run the vortex-patch simulation");
    std::vector<std::pair<std::string, CLI::Option*>> pflags;
    auto flag = [&](CLI::App* sub, const std::string& name, auto& target, const std::string& help) {
        auto* o = sub->add_option(name, target, help);
        pflags.emplace_back(name, o);
        return o;
    };
    patch->add_option("--config", pconfig, "experiment config JSON");
    patch->add_flag("--resume", resume, "continue from the checkpoint in the output directory");
    auto add_run_flags = [&](CLI::App* sub) {
        flag(sub, "--reference", reference, "reference system JSON");
        flag(sub, "--output-dir", output_dir, "output directory");
        flag(sub, "--t0", t0, "start time");
        flag(sub, "--t-end", t_end, "end time");
        flag(sub, "--particles", particles, "particles per patch");
        flag(sub, "--radius", radius, "patch radius");
        flag(sub, "--profile", profile, "uniform or radial_bump");
        flag(sub, "--blob-radius", blob, "blob radius");
        flag(sub, "--dt", dt, "time step");
        flag(sub, "--dt-policy", dt_policy, "fixed or scaled");
        flag(sub, "--dt-max", dt_max, "largest step");
        flag(sub, "--cadence", cadence, "snapshot cadence");
        flag(sub, "--max-speed", max_speed, "blow-up guard");
        flag(sub, "--backend", backend, "direct or tree");
        flag(sub, "--threads", threads, "worker threads");
        flag(sub, "--theta", theta, "tree opening angle");
        flag(sub, "--order", order, "tree expansion order");
        flag(sub, "--leaf", leaf, "tree leaf capacity");
        flag(sub, "--blob-guard", guard, "tree near-field guard in blob radii");
        flag(sub, "--k", ks, "moment orders")->delimiter(',');
        flag(sub, "--delta", delta, "concentration delta (0 skips)");
        flag(sub, "--energy-stride", energy_stride, "compute L every n-th snapshot (0 never)");
        flag(sub, "--fit-window", window, "fit window t_lo t_hi")->expected(2);
        flag(sub, "--checkpoint-every", checkpoint_every, "snapshots between checkpoints");
        flag(sub, "--snapshot-format", snapshot_format, "csv or binary");
        flag(sub, "--seed", seed, "jitter seed");
    };
    add_run_flags(patch);

    DiagArgs da;
    auto* dg = app.add_subcommand("diag", "recompute diagnostics from stored snapshots");
    dg->add_option("--run", da.run_dir, "run directory")->required();
    dg->add_option("--out", da.out, "output directory (default RUN/diag)");
    dg->add_option("--renorm-k", da.renorm_k)->capture_default_str();
    dg->add_option("--renorm-patches", da.renorm_patches)->expected(2);
    auto* dk = dg->add_option("--k", ks, "moment orders")->delimiter(',');
    auto* dd = dg->add_option("--delta", delta, "concentration delta");
    auto* de = dg->add_option("--energy-stride", energy_stride);
    auto* dw = dg->add_option("--fit-window", window)->expected(2);

    BenchArgs ba;
    auto* bn = app.add_subcommand("bench", "tree versus direct timing table");
    bn->add_option("--n", ba.sizes, "particle counts")->delimiter(',');
    bn->add_option("--theta", ba.tree.opening_angle)->capture_default_str();
    bn->add_option("--order", ba.tree.expansion_order)->capture_default_str();
    bn->add_option("--leaf", ba.tree.leaf_capacity)->capture_default_str();
    bn->add_option("--threads", ba.threads)->capture_default_str();
    bn->add_option("--seed", ba.seed)->capture_default_str();
    bn->add_option("--out", ba.out, "CSV file (default stdout)");

    auto given = [&](const std::string& name) {
        for (const auto& [n, o] : pflags)
            if (n == name) return o->count() > 0;
        return false;
    };

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        try {
            app.parse(rev);
        } catch (const CLI::CallForHelp&) {
            out << app.help();
            return ok;
        } catch (const CLI::CallForAllHelp&) {
            out << app.help("", CLI::AppFormatMode::All);
            return ok;
        } catch (const CLI::ParseError& e) {
            err << error_json("validation", "usage", e.what()).dump() << "\n";
            return validation;
        }

        if (find->parsed()) return config_find(fa, out);
        if (pv->parsed()) return pv_run(pa, out);
        if (bn->parsed()) return bench(ba, out);

        if (dg->parsed()) {
            ExperimentConfig cfg = read_config(fs::path(da.run_dir) / "config.json");
            if (dk->count()) cfg.diagnostics.ks = ks;
            if (dd->count()) cfg.diagnostics.concentration_delta = delta;
            if (de->count()) {
                if (energy_stride < 0) throw ValidationError("energy_stride must be >= 0");
                cfg.energy_stride = energy_stride;
            }
            if (dw->count()) cfg.fit_window = std::make_pair(window[0], window[1]);
            for (int k : cfg.diagnostics.ks) validate_moment_order(k);
            return diag(cfg, da, out);
        }

        ExperimentConfig cfg;
        if (!pconfig.empty()) cfg = read_config(pconfig);
        if (given("--reference")) cfg.run.reference = read_system(reference);
        if (given("--output-dir")) cfg.output_dir = output_dir;
        if (resume) {
            if (pconfig.empty() && !given("--output-dir")) {
                throw ValidationError("--resume needs --config or --output-dir to locate the run");
            }
            return patch_run(cfg, true, given("--threads") ? threads : 0, out);
        }
        if (given("--t0")) cfg.run.t0 = t0;
        if (given("--t-end")) cfg.run.t_end = t_end;
        if (given("--particles")) cfg.run.particles_per_patch = particles;
        if (given("--radius")) cfg.run.patch_radius = radius;
        if (given("--blob-radius")) cfg.run.blob_radius = blob;
        if (given("--dt")) cfg.run.dt = dt;
        if (given("--dt-max")) cfg.run.dt_max = dt_max;
        if (given("--cadence")) cfg.run.snapshot_cadence = cadence;
        if (given("--max-speed")) cfg.run.max_speed = max_speed;
        if (given("--theta")) cfg.tree.opening_angle = theta;
        if (given("--order")) cfg.tree.expansion_order = order;
        if (given("--leaf")) cfg.tree.leaf_capacity = leaf;
        if (given("--blob-guard")) cfg.tree.blob_guard = guard;
        if (given("--k")) cfg.diagnostics.ks = ks;
        if (given("--delta")) cfg.diagnostics.concentration_delta = delta;
        if (given("--fit-window")) cfg.fit_window = std::make_pair(window[0], window[1]);
        if (given("--seed")) {
            cfg.seed = seed;
            cfg.run.jitter_seed = seed;
        }
        if (cfg.run.reference.size() == 0) throw ValidationError("patch-run needs a reference system");
        // re-validate the enumerated and bounded fields through the parser
        json patchj = json::parse(config_to_json(cfg));
        if (given("--profile")) patchj["patches"]["profile"] = profile;
        if (given("--dt-policy")) patchj["run"]["dt_policy"] = dt_policy;
        if (given("--backend")) patchj["run"]["backend"] = backend;
        if (given("--snapshot-format")) patchj["run"]["snapshot_format"] = snapshot_format;
        if (given("--threads")) patchj["run"]["threads"] = threads;
        if (given("--energy-stride")) patchj["diagnostics"]["energy_stride"] = energy_stride;
        if (given("--checkpoint-every")) patchj["run"]["checkpoint_every"] = checkpoint_every;
        cfg = config_from_json(patchj.dump());
        return patch_run(cfg, false, 0, out);
    } catch (const Failure& f) {
        err << f.error.dump() << "\n";
        return f.code;
    } catch (const NearCollision& e) {
        err << json{{"error", "numerical"},
                    {"type", "near_collision"},
                    {"message", e.what()},
                    {"t", e.time},
                    {"i", e.first},
                    {"j", e.second},
                    {"separation", e.separation}}
                   .dump()
            << "\n";
        return numerical;
    } catch (const ValidationError& e) {
        err << error_json("validation", "invalid_input", e.what()).dump() << "\n";
        return validation;
    } catch (const NumericalError& e) {
        err << error_json("numerical", "numerical_abort", e.what()).dump() << "\n";
        return numerical;
    } catch (const IoError& e) {
        err << error_json("io", "io", e.what()).dump() << "\n";
        return io;
    } catch (const fs::filesystem_error& e) {
        err << error_json("io", "filesystem", e.what()).dump() << "\n";
        return io;
    } catch (const Error& e) {
        err << error_json("numerical", "error", e.what()).dump() << "\n";
        return numerical;
    }
}

}  // namespace vortexlab::cli
