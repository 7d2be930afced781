#include "vortexlab/io.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace vortexlab {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'V', 'L', 'A', 'B', 'S', 'N', 'A', 'P'};

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const fs::path& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
        throw IoError("truncated snapshot " + path.string());
    }
    return v;
}

void write_csv_snapshot(std::ostream& os, const SimulationState& s) {
    json meta;
    meta["format_version"] = kSnapshotFormatVersion;
    meta["time"] = s.time;
    meta["clouds"] = json::array();
    for (const auto& c : s.clouds) {
        meta["clouds"].push_back({{"sign", c.sign}, {"blob_radius", c.blob_radius}, {"count", c.size()}});
    }
    // the json dump of a double is round-trip exact as well
    os << "# " << meta.dump() << "\n" << "cloud_id,gamma,x,y\n";
    for (std::size_t i = 0; i < s.clouds.size(); ++i) {
        const auto& c = s.clouds[i];
        for (Eigen::Index p = 0; p < c.size(); ++p) {
            os << i << ',' << fmt(c.strengths(p)) << ',' << fmt(c.positions(0, p)) << ','
               << fmt(c.positions(1, p)) << '\n';
        }
    }
}

SimulationState read_csv_snapshot(std::istream& is, const fs::path& path) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("# ", 0) != 0) {
        throw IoError("snapshot " + path.string() + " lacks a metadata line");
    }
    json meta;
    try {
        meta = json::parse(line.substr(2));
    } catch (const json::exception& e) {
        throw IoError("corrupt snapshot metadata in " + path.string() + ": " + e.what());
    }
    if (meta.value("format_version", 0) != kSnapshotFormatVersion) {
        throw IoError("unsupported snapshot format_version in " + path.string());
    }
    if (!std::getline(is, line) || line != "cloud_id,gamma,x,y") {
        throw IoError("snapshot " + path.string() + " has an unexpected column header");
    }
    SimulationState s;
    s.time = meta.at("time").get<double>();
    for (const auto& c : meta.at("clouds")) {
        ParticleCloud cloud;
        cloud.sign = c.at("sign").get<int>();
        cloud.blob_radius = c.at("blob_radius").get<double>();
        const auto n = c.at("count").get<Eigen::Index>();
        cloud.positions.resize(2, n);
        cloud.strengths.resize(n);
        s.clouds.push_back(std::move(cloud));
    }
    std::vector<Eigen::Index> filled(s.clouds.size(), 0);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::size_t id = 0;
        double g = 0, x = 0, y = 0;
        char tail = 0;
        if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf%c", &id, &g, &x, &y, &tail) != 4 ||
            id >= s.clouds.size() || filled[id] >= s.clouds[id].size()) {
            throw IoError("corrupt snapshot row in " + path.string() + ": " + line);
        }
        auto& c = s.clouds[id];
        c.strengths(filled[id]) = g;
        c.positions(0, filled[id]) = x;
        c.positions(1, filled[id]) = y;
        ++filled[id];
    }
    for (std::size_t i = 0; i < s.clouds.size(); ++i) {
        if (filled[i] != s.clouds[i].size()) throw IoError("truncated snapshot " + path.string());
    }
    return s;
}

void write_binary_snapshot(std::ostream& os, const SimulationState& s) {
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, kSnapshotFormatVersion);
    put<double>(os, s.time);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.clouds.size()));
    for (const auto& c : s.clouds) {
        put<std::int32_t>(os, c.sign);
        put<double>(os, c.blob_radius);
        put<std::uint64_t>(os, static_cast<std::uint64_t>(c.size()));
        for (Eigen::Index p = 0; p < c.size(); ++p) {
            put<double>(os, c.strengths(p));
            put<double>(os, c.positions(0, p));
            put<double>(os, c.positions(1, p));
        }
    }
}

SimulationState read_binary_snapshot(std::istream& is, const fs::path& path) {
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw IoError("not a snapshot file: " + path.string());
    }
    if (get<std::uint32_t>(is, path) != kSnapshotFormatVersion) {
        throw IoError("unsupported snapshot format_version in " + path.string());
    }
    SimulationState s;
    s.time = get<double>(is, path);
    const auto nc = get<std::uint32_t>(is, path);
    for (std::uint32_t i = 0; i < nc; ++i) {
        ParticleCloud c;
        c.sign = get<std::int32_t>(is, path);
        c.blob_radius = get<double>(is, path);
        const auto n = get<std::uint64_t>(is, path);
        if (n > (1ULL << 32)) throw IoError("corrupt snapshot particle count in " + path.string());
        c.positions.resize(2, static_cast<Eigen::Index>(n));
        c.strengths.resize(static_cast<Eigen::Index>(n));
        for (Eigen::Index p = 0; p < c.size(); ++p) {
            c.strengths(p) = get<double>(is, path);
            c.positions(0, p) = get<double>(is, path);
            c.positions(1, p) = get<double>(is, path);
        }
        s.clouds.push_back(std::move(c));
    }
    if (is.peek() != std::char_traits<char>::eof()) {
        throw IoError("trailing bytes in snapshot " + path.string());
    }
    return s;
}

json system_json(const PointVortexSystemd& s) {
    json j;
    j["circulations"] = json::array();
    j["positions"] = json::array();
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        j["circulations"].push_back(s.circulations(i));
        j["positions"].push_back({s.positions(0, i), s.positions(1, i)});
    }
    return j;
}

PointVortexSystemd system_of(const json& j) {
    const auto w = j.at("circulations").get<std::vector<double>>();
    std::vector<Vec2d> pos;
    for (const auto& q : j.at("positions")) {
        if (!q.is_array() || q.size() != 2) throw ValidationError("each position must be [x, y]");
        pos.emplace_back(q[0].get<double>(), q[1].get<double>());
    }
    if (w.size() != pos.size()) {
        throw ValidationError("circulations and positions have different lengths");
    }
    auto s = make_system(w, pos);
    validate(s);
    return s;
}

// Infinity is not representable in JSON; null stands for "unbounded".
json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

const char* profile_name(Profile p) { return p == Profile::uniform ? "uniform" : "radial_bump"; }

Profile profile_of(const std::string& s) {
    if (s == "uniform") return Profile::uniform;
    if (s == "radial_bump") return Profile::radial_bump;
    throw ValidationError("unknown profile '" + s + "'");
}

}  // namespace

void write_snapshot(const fs::path& path, const SimulationState& state, SnapshotFormat format) {
    std::ostringstream os(format == SnapshotFormat::csv ? std::ios::out
                                                        : std::ios::out | std::ios::binary);
    if (format == SnapshotFormat::csv) {
        write_csv_snapshot(os, state);
    } else {
        write_binary_snapshot(os, state);
    }
    write_text_atomic(path, os.str());
}

SimulationState read_snapshot(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open snapshot " + path.string());
    char first = 0;
    is.get(first);
    is.unget();
    try {
        return first == kMagic[0] ? read_binary_snapshot(is, path) : read_csv_snapshot(is, path);
    } catch (const json::exception& e) {
        throw IoError("corrupt snapshot metadata in " + path.string() + ": " + e.what());
    }
}

std::string system_to_json(const PointVortexSystemd& system, int indent) {
    return system_json(system).dump(indent) + "\n";
}

PointVortexSystemd system_from_json(const std::string& text) {
    try {
        return system_of(json::parse(text));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed system JSON: ") + e.what());
    }
}

PointVortexSystemd read_system(const fs::path& path) { return system_from_json(read_text(path)); }

ExperimentConfig config_from_json(const std::string& text, const fs::path& base_dir) {
    ExperimentConfig c;
    try {
        const json j = json::parse(text);
        if (!j.is_object()) throw ValidationError("config must be a JSON object");
        c.schema_version = j.value("schema_version", kConfigSchemaVersion);
        if (c.schema_version != kConfigSchemaVersion) {
            throw ValidationError("unsupported schema_version " + std::to_string(c.schema_version));
        }
        if (j.contains("reference")) {
            c.run.reference = system_of(j.at("reference"));
        } else if (j.contains("reference_file")) {
            fs::path p = j.at("reference_file").get<std::string>();
            if (p.is_relative()) p = base_dir / p;
            c.run.reference = read_system(p);
        }
        if (j.contains("patches")) {
            const auto& p = j.at("patches");
            c.run.patch_radius = p.value("radius", c.run.patch_radius);
            c.run.profile = profile_of(p.value("profile", std::string(profile_name(c.run.profile))));
            c.run.particles_per_patch = p.value("particles_per_patch", c.run.particles_per_patch);
            if (p.contains("blob_radius") && !p.at("blob_radius").is_null()) {
                c.run.blob_radius = p.at("blob_radius").get<double>();
            }
        }
        if (j.contains("run")) {
            const auto& r = j.at("run");
            c.run.t0 = r.value("t0", c.run.t0);
            c.run.t_end = r.value("t_end", c.run.t_end);
            if (r.contains("dt") && !r.at("dt").is_null()) c.run.dt = r.at("dt").get<double>();
            const std::string pol = r.value("dt_policy", std::string("fixed"));
            if (pol != "fixed" && pol != "scaled") throw ValidationError("unknown dt_policy '" + pol + "'");
            c.run.dt_policy = pol == "fixed" ? DtPolicy::fixed : DtPolicy::scaled;
            if (r.contains("dt_max") && !r.at("dt_max").is_null()) c.run.dt_max = r.at("dt_max").get<double>();
            c.run.snapshot_cadence = r.value("snapshot_cadence", c.run.snapshot_cadence);
            c.run.recentre_initial = r.value("recentre_initial", c.run.recentre_initial);
            c.run.normalize_reference = r.value("normalize_reference", c.run.normalize_reference);
            c.run.max_speed = r.value("max_speed", c.run.max_speed);
            c.backend = r.value("backend", c.backend);
            c.threads = r.value("threads", c.threads);
            c.checkpoint_every = r.value("checkpoint_every", c.checkpoint_every);
            const std::string sf = r.value("snapshot_format", std::string("csv"));
            if (sf != "csv" && sf != "binary") throw ValidationError("unknown snapshot_format '" + sf + "'");
            c.snapshot_format = sf == "csv" ? SnapshotFormat::csv : SnapshotFormat::binary;
            if (r.contains("tree")) {
                const auto& t = r.at("tree");
                c.tree.opening_angle = t.value("opening_angle", c.tree.opening_angle);
                c.tree.leaf_capacity = t.value("leaf_capacity", c.tree.leaf_capacity);
                c.tree.expansion_order = t.value("expansion_order", c.tree.expansion_order);
                c.tree.blob_guard = t.value("blob_guard", c.tree.blob_guard);
            }
        }
        if (j.contains("diagnostics")) {
            const auto& d = j.at("diagnostics");
            c.diagnostics.ks = d.value("k", c.diagnostics.ks);
            c.diagnostics.concentration_delta = d.value("delta", c.diagnostics.concentration_delta);
            c.energy_stride = d.value("energy_stride", c.energy_stride);
            if (d.contains("fit_window") && !d.at("fit_window").is_null()) {
                const auto w = d.at("fit_window").get<std::array<double, 2>>();
                c.fit_window = std::make_pair(w[0], w[1]);
            }
        }
        c.output_dir = j.value("output_dir", c.output_dir);
        if (j.contains("seed") && !j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed config: ") + e.what());
    }
    c.run.jitter_seed = c.seed;
    for (int k : c.diagnostics.ks) validate_moment_order(k);
    if (c.backend != "direct" && c.backend != "tree") {
        throw ValidationError("unknown backend '" + c.backend + "'");
    }
    if (c.energy_stride < 0) throw ValidationError("energy_stride must be >= 0");
    if (c.checkpoint_every < 1) throw ValidationError("checkpoint_every must be >= 1");
    if (c.threads < 1) throw ValidationError("threads must be >= 1");
    c.diagnostics.energy = c.energy_stride > 0;
    return c;
}

ExperimentConfig read_config(const fs::path& path) {
    return config_from_json(read_text(path), path.parent_path());
}

ExperimentConfig resolve(ExperimentConfig c) {
    validate(c.run);
    if (c.run.dt <= 0.0) c.run.dt = default_dt(c.run);
    if (c.run.blob_radius < 0.0) {
        c.run.blob_radius = default_blob_radius(c.run.patch_radius, c.run.particles_per_patch);
    }
    if (c.run.snapshot_cadence <= 0.0) c.run.snapshot_cadence = c.run.dt;
    return c;
}

std::string config_to_json(const ExperimentConfig& c) {
    json j;
    j["schema_version"] = c.schema_version;
    j["reference"] = system_json(c.run.reference);
    j["patches"] = {{"radius", c.run.patch_radius},
                    {"profile", profile_name(c.run.profile)},
                    {"particles_per_patch", c.run.particles_per_patch},
                    {"blob_radius", c.run.blob_radius}};
    j["run"] = {{"t0", c.run.t0},
                {"t_end", c.run.t_end},
                {"dt", c.run.dt},
                {"dt_policy", c.run.dt_policy == DtPolicy::fixed ? "fixed" : "scaled"},
                {"dt_max", finite_or_null(c.run.dt_max)},
                {"snapshot_cadence", c.run.snapshot_cadence},
                {"recentre_initial", c.run.recentre_initial},
                {"normalize_reference", c.run.normalize_reference},
                {"max_speed", finite_or_null(c.run.max_speed)},
                {"backend", c.backend},
                {"threads", c.threads},
                {"checkpoint_every", c.checkpoint_every},
                {"snapshot_format", c.snapshot_format == SnapshotFormat::csv ? "csv" : "binary"},
                {"tree",
                 {{"opening_angle", c.tree.opening_angle},
                  {"leaf_capacity", c.tree.leaf_capacity},
                  {"expansion_order", c.tree.expansion_order},
                  {"blob_guard", c.tree.blob_guard}}}};
    j["diagnostics"] = {{"k", c.diagnostics.ks},
                        {"delta", c.diagnostics.concentration_delta},
                        {"energy_stride", c.energy_stride},
                        {"fit_window", c.fit_window ? json::array({c.fit_window->first, c.fit_window->second})
                                                    : json(nullptr)}};
    j["output_dir"] = c.output_dir;
    j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
    return j.dump(2) + "\n";
}

std::string read_text(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    if (is.bad()) throw IoError("cannot read " + path.string());
    return ss.str();
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write " + tmp.string());
        os.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!os) throw IoError("cannot write " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

}  // namespace vortexlab
