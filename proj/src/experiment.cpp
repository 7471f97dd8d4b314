#include "fluxsim/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace fluxsim {
namespace {

constexpr const char* kVersion = "fluxsim 1.0";

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double to_double(const std::string& v, const std::string& key, int line) {
    std::size_t used = 0;
    double out = 0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("value of '" + key + "' is not a number: " + v, key,
                          line);
    }
    if (used != v.size())
        throw ConfigError("trailing characters in '" + key + "': " + v, key,
                          line);
    return out;
}

long to_int(const std::string& v, const std::string& key, int line) {
    const double d = to_double(v, key, line);
    if (d != std::floor(d))
        throw ConfigError("'" + key + "' must be an integer", key, line);
    return long(d);
}

bool to_bool(const std::string& v, const std::string& key, int line) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("'" + key + "' must be true or false", key, line);
}

std::vector<double> to_list(const std::string& v, const std::string& key,
                            int line) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(to_double(trim(item), key, line));
    if (out.empty())
        throw ConfigError("'" + key + "' needs at least one value", key, line);
    return out;
}

struct Entry {
    std::string value;
    int line = 0;
};

using Section = std::map<std::string, Entry>;

std::map<std::string, Section> parse_ini(const std::string& text) {
    std::map<std::string, Section> sections;
    std::string current;
    int line_no = 0;
    std::stringstream ss(text);
    std::string raw;
    while (std::getline(ss, raw)) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("unterminated section header", "", line_no);
            current = trim(line.substr(1, line.size() - 2));
            sections[current];
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected 'key = value'", "", line_no);
        const std::string key = trim(line.substr(0, eq));
        if (current.empty())
            throw ConfigError("key outside any [section]: " + key, key, line_no);
        sections[current][key] = {trim(line.substr(eq + 1)), line_no};
    }
    return sections;
}

const std::map<std::string, std::vector<std::string>> kSchema = {
    {"circuit",
     {"model", "ec_ghz", "el_ghz", "ej_ghz", "phi_dc_rad", "basis_size",
      "f01_ghz"}},
    {"drive",
     {"scheme", "lattice", "t_x_ns", "t_x_tau_l", "gap_ns", "rise_fall_ns",
      "plateau_ns"}},
    {"coherence", {"t1_ns", "t2e_ns"}},
    {"distortion",
     {"charge_amp_scale", "flux_amp_scale", "flux_delay_skew_ns",
      "flux_phase_offset_rad", "freq_offset_ghz", "stark_shift_ghz"}},
    {"experiment",
     {"name", "seeds", "shots", "seed", "sweep_points", "durations_tau_l",
      "rb_lengths", "calibrate_first", "rb_mode", "output_dir"}},
};

void check_schema(const std::map<std::string, Section>& sections) {
    for (const auto& [name, section] : sections) {
        const auto it = kSchema.find(name);
        if (it == kSchema.end())
            throw ConfigError("unknown section [" + name + "]", name, 0);
        for (const auto& [key, entry] : section)
            if (std::find(it->second.begin(), it->second.end(), key) ==
                it->second.end())
                throw ConfigError("unknown key '" + key + "' in [" + name +
                                      "] (check the unit suffix)",
                                  key, entry.line);
    }
}

std::string now_stamp() {
    const std::time_t t =
        std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%S", std::gmtime(&t));
    return buf;
}

std::string content_hash(const std::string& text) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%08zx",
                  std::hash<std::string>{}(text) & 0xffffffffu);
    return buf;
}

/// Atomic write: temp file in the same directory, then rename.
void write_file(const fs::path& dir, const std::string& name,
                const std::string& content, std::vector<std::string>& manifest) {
    const fs::path final_path = dir / name;
    const fs::path tmp_path = dir / (name + ".tmp");
    {
        std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
        if (!out) throw BackendError("cannot write " + tmp_path.string());
        out << content;
    }
    fs::rename(tmp_path, final_path);
    manifest.push_back(name);
}

std::string csv_header(std::initializer_list<const char*> cols) {
    std::string out;
    for (const char* c : cols) {
        if (!out.empty()) out += ",";
        out += c;
    }
    return out + "\n";
}

struct RunContext {
    const ExperimentConfig& config;
    EigenSystem eig;
    QubitFrame frame;
    fs::path dir;
    std::vector<std::string> files;

    LadderConfig ladder_config() const {
        LadderConfig lc;
        lc.timing.t_x = config.resolved_t_x(frame);
        lc.timing.gap = config.timing.gap;
        lc.mode = config.lattice;
        lc.scheme = config.scheme;
        lc.sweep_points = config.sweep_points;
        return lc;
    }

    SimBackend backend() const {
        SimBackend b(eig, config.distortion, config.shots, config.seed);
        b.coherence = config.coherence;
        return b;
    }

    PulseParams gate_params(SimBackend& b) const {
        const LadderConfig lc = ladder_config();
        PulseParams params = nominal_params(eig, lc);
        params.rise_fall = config.rise_fall_ns;
        params.plateau = config.plateau_ns;
        if (config.calibrate_first) {
            const CalibrationReport report = run_full_ladder(b, lc, params);
            return report.params;
        }
        return params;
    }
};

void run_rabi_phase_sweep(RunContext& ctx) {
    // Rectangle pulses of increasing length at each relative phase; the p1
    // oscillation frequency maps out the two-line interference law.
    const LadderConfig lc = ctx.ladder_config();
    PulseParams params = nominal_params(ctx.eig, lc);
    SimBackend backend = ctx.backend();

    const double n01 = std::abs(ctx.eig.n_elem(0, 1));
    const double omega_rabi = 2.0 * params.amp_charge * n01;
    const double t_max = 6.0 * kTwoPi / omega_rabi;
    const int n_t = 96;
    const int n_phi = std::max(ctx.config.sweep_points, 16);

    std::ostringstream grid, law;
    grid << csv_header({"rel_phase_rad", "t_ns", "p1"});
    law << csv_header({"rel_phase_rad", "rabi_rad_ns"});
    grid.precision(12);
    law.precision(12);
    std::vector<double> times(n_t), p1(n_t);
    for (int k = 0; k < n_t; ++k) times[k] = t_max * (k + 1) / double(n_t);
    for (int i = 0; i < n_phi; ++i) {
        const double phi = kTwoPi * i / double(n_phi);
        for (int k = 0; k < n_t; ++k) {
            DrivePulse pulse;
            pulse.amp_charge = params.amp_charge;
            pulse.amp_flux = params.amp_flux;
            pulse.rel_phase = phi;
            pulse.carrier_freq = params.carrier_freq;
            pulse.carrier_phase = params.carrier_phase;
            pulse.duration = times[k];
            pulse.plateau = times[k];
            GateSchedule s;
            s.pulses.push_back(pulse);
            s.duration = times[k];
            p1[k] = backend.measure_p1(s);
            grid << phi << "," << times[k] << "," << p1[k] << "\n";
        }
        law << phi << "," << kTwoPi / 2.0 * dominant_frequency(times, p1)
            << "\n";
    }
    write_file(ctx.dir, "p1_vs_phase_and_time.csv", grid.str(), ctx.files);
    write_file(ctx.dir, "rabi_vs_phase.csv", law.str(), ctx.files);
}

DriveConfig drive_config(const RunContext& ctx) {
    DriveConfig dc;
    dc.eig = &ctx.eig;
    dc.frame = ctx.frame;
    dc.scheme = ctx.config.scheme;
    dc.rise_fall = ctx.config.rise_fall_ns;
    dc.plateau = ctx.config.plateau_ns;
    return dc;
}

void run_rotation_vs_start(RunContext& ctx) {
    const DriveConfig dc = drive_config(ctx);
    const double t_g = ctx.config.resolved_t_x(ctx.frame);
    std::ostringstream out;
    out.precision(12);
    out << csv_header({"t0_ns", "rotation_angle_rad"});
    const int n = std::max(ctx.config.sweep_points, 32);
    for (int k = 0; k < n; ++k) {
        const double t0 = ctx.frame.tau_l * k / double(n);
        out << t0 << "," << rotation_angle_vs_start(dc, t_g, t0) << "\n";
    }
    write_file(ctx.dir, "rotation_vs_start.csv", out.str(), ctx.files);
}

void run_rotation_range(RunContext& ctx) {
    const DriveConfig dc = drive_config(ctx);
    std::vector<double> factors = ctx.config.durations_tau_l;
    if (factors.empty()) factors = {1.0, 1.5, 2.0, 3.0};
    std::ostringstream out;
    out.precision(12);
    out << csv_header({"t_g_tau_l", "rotation_range_rad"});
    for (double f : factors)
        out << f << "," << rotation_range(dc, f * ctx.frame.tau_l) << "\n";
    write_file(ctx.dir, "rotation_range.csv", out.str(), ctx.files);
}

void run_calibrate(RunContext& ctx) {
    SimBackend backend = ctx.backend();
    const LadderConfig lc = ctx.ladder_config();
    const CalibrationReport report =
        run_full_ladder(backend, lc, nominal_params(ctx.eig, lc));
    write_file(ctx.dir, "calibration.json", report.to_json(), ctx.files);
    for (std::size_t k = 0; k < report.results.size(); ++k) {
        std::ostringstream name;
        name << "sweep_" << k << "_" << report.results[k].parameter << ".csv";
        write_file(ctx.dir, name.str(), report.results[k].sweep.to_csv(),
                   ctx.files);
    }
}

RBConfig rb_config(const ExperimentConfig& config) {
    RBConfig rc;
    rc.lengths = config.rb_lengths;
    rc.seeds = config.seeds;
    rc.base_seed = config.seed;
    if (config.rb_mode == "interleaved") rc.mode = RBMode::Interleaved;
    else if (config.rb_mode == "purity") rc.mode = RBMode::Purity;
    else rc.mode = RBMode::Standard;
    return rc;
}

void run_rb_experiment(RunContext& ctx) {
    SimBackend backend = ctx.backend();
    const PulseParams params = ctx.gate_params(backend);
    const CliffordTable table = build_clifford_table();
    PulseExecutor exec(backend, params, ctx.ladder_config().timing,
                       ctx.config.lattice);
    const RBConfig rc = rb_config(ctx.config);
    const RBDataset data = run_rb(exec, table, rc);
    write_file(ctx.dir, "rb_dataset.json", data.to_json(), ctx.files);
    write_file(ctx.dir, "rb_curve.csv", data.to_csv(), ctx.files);
    const RBFit fit = fit_rb(data);
    write_file(ctx.dir, "rb_fit.json", fit.to_json(), ctx.files);
    if (rc.mode == RBMode::Purity)
        write_file(ctx.dir, "purity_fit.json", fit_purity(data).to_json(),
                   ctx.files);
}

void run_rb_duration_sweep(RunContext& ctx) {
    std::vector<double> factors = ctx.config.durations_tau_l;
    if (factors.empty()) factors = {1.0, 1.5, 2.0};
    const CliffordTable table = build_clifford_table();
    std::ostringstream out;
    out.precision(12);
    out << csv_header(
        {"t_x_tau_l", "epsilon_gate", "ci_low", "ci_high", "residual_norm"});
    for (double f : factors) {
        ExperimentConfig point = ctx.config;
        point.t_x_factor = f;
        RunContext sub{point, ctx.eig, ctx.frame, ctx.dir, {}};
        SimBackend backend = sub.backend();
        const PulseParams params = sub.gate_params(backend);
        PulseExecutor exec(backend, params, sub.ladder_config().timing,
                           point.lattice);
        const RBDataset data = run_rb(exec, table, rb_config(point));
        const RBFit fit = fit_rb(data);
        out << f << "," << fit.epsilon_gate << "," << fit.ci_low << ","
            << fit.ci_high << "," << fit.diag.residual_norm << "\n";
    }
    write_file(ctx.dir, "rb_vs_duration.csv", out.str(), ctx.files);
}

void run_trajectory(RunContext& ctx) {
    SimBackend backend = ctx.backend();
    const PulseParams params = ctx.gate_params(backend);
    const std::vector<GateSpec> gates{GateSpec::xp()};
    const GateSchedule schedule = compile(
        gates, ctx.config.lattice, ctx.ladder_config().timing, params, ctx.frame);
    std::ostringstream out;
    out.precision(12);
    out << csv_header({"t_ns", "x", "y", "z"});
    StateVector psi = StateVector::Zero(ctx.eig.dim);
    psi(0) = 1.0;
    const double h = ctx.frame.tau_l / 256.0;
    propagate(ctx.eig, schedule, psi, h,
              [&](double t, const StateVector& state) {
                  const BlochVector b =
                      bloch(to_rotating_frame(state, ctx.frame.omega01, t));
                  out << t << "," << b.x << "," << b.y << "," << b.z << "\n";
              });
    write_file(ctx.dir, "trajectory.csv", out.str(), ctx.files);
}

using Runner = void (*)(RunContext&);

const std::vector<std::tuple<std::string, std::string, Runner>>& registry() {
    static const std::vector<std::tuple<std::string, std::string, Runner>> r = {
        {"rabi-phase-sweep",
         "Rabi frequency vs charge-flux relative phase (rectangle pulses)",
         run_rabi_phase_sweep},
        {"rotation-vs-start",
         "Rotation angle of one pulse vs its start time within a Larmor period",
         run_rotation_vs_start},
        {"rotation-range",
         "Start-time spread of the rotation angle vs gate duration",
         run_rotation_range},
        {"calibrate", "Full calibration ladder against the configured backend",
         run_calibrate},
        {"rb", "Clifford randomized benchmarking with compiled pulses",
         run_rb_experiment},
        {"rb-duration-sweep",
         "Benchmarked error per gate vs pulse duration",
         run_rb_duration_sweep},
        {"trajectory", "Rotating-frame Bloch trajectory of a single X gate",
         run_trajectory},
    };
    return r;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();

    ExperimentConfig config;
    config.source_path = path;
    config.source_text = buffer.str();

    const auto sections = parse_ini(config.source_text);
    check_schema(sections);

    auto get = [&](const std::string& section,
                   const std::string& key) -> const Entry* {
        const auto s = sections.find(section);
        if (s == sections.end()) return nullptr;
        const auto k = s->second.find(key);
        return k == s->second.end() ? nullptr : &k->second;
    };
    auto number = [&](const std::string& s, const std::string& k, double& out) {
        if (const Entry* e = get(s, k)) out = to_double(e->value, k, e->line);
    };

    if (const Entry* e = get("circuit", "model")) {
        config.model = e->value;
        if (config.model != "fluxonium" && config.model != "two-level")
            throw ConfigError("model must be fluxonium or two-level", "model",
                              e->line);
    }
    number("circuit", "ec_ghz", config.circuit.ec_ghz);
    number("circuit", "el_ghz", config.circuit.el_ghz);
    number("circuit", "ej_ghz", config.circuit.ej_ghz);
    number("circuit", "phi_dc_rad", config.circuit.phi_dc);
    if (const Entry* e = get("circuit", "basis_size"))
        config.circuit.basis_size = int(to_int(e->value, "basis_size", e->line));
    number("circuit", "f01_ghz", config.f01_ghz);

    if (const Entry* e = get("drive", "scheme")) {
        if (e->value == "charge") config.scheme = DriveScheme::Charge;
        else if (e->value == "flux") config.scheme = DriveScheme::Flux;
        else if (e->value == "circular") config.scheme = DriveScheme::Circular;
        else
            throw ConfigError("scheme must be charge, flux, or circular",
                              "scheme", e->line);
    }
    if (const Entry* e = get("drive", "lattice")) {
        if (e->value == "commensurate") config.lattice = LatticeMode::Commensurate;
        else if (e->value == "incommensurate")
            config.lattice = LatticeMode::Incommensurate;
        else
            throw ConfigError("lattice must be commensurate or incommensurate",
                              "lattice", e->line);
    }
    number("drive", "t_x_ns", config.timing.t_x);
    number("drive", "t_x_tau_l", config.t_x_factor);
    number("drive", "gap_ns", config.timing.gap);
    number("drive", "rise_fall_ns", config.rise_fall_ns);
    number("drive", "plateau_ns", config.plateau_ns);

    if (sections.count("coherence")) {
        CoherenceParams coh;
        number("coherence", "t1_ns", coh.t1_ns);
        number("coherence", "t2e_ns", coh.t2e_ns);
        config.coherence = coh;
    }
    number("distortion", "charge_amp_scale", config.distortion.charge_amp_scale);
    number("distortion", "flux_amp_scale", config.distortion.flux_amp_scale);
    number("distortion", "flux_delay_skew_ns", config.distortion.flux_delay_skew);
    number("distortion", "flux_phase_offset_rad",
           config.distortion.flux_phase_offset);
    number("distortion", "freq_offset_ghz", config.distortion.freq_offset_ghz);
    number("distortion", "stark_shift_ghz", config.distortion.stark_shift_ghz);

    if (const Entry* e = get("experiment", "name")) config.name = e->value;
    else throw ConfigError("[experiment] name is required", "name");
    if (const Entry* e = get("experiment", "seeds"))
        config.seeds = int(to_int(e->value, "seeds", e->line));
    if (const Entry* e = get("experiment", "shots"))
        config.shots = int(to_int(e->value, "shots", e->line));
    if (const Entry* e = get("experiment", "seed"))
        config.seed = std::uint64_t(to_int(e->value, "seed", e->line));
    if (const Entry* e = get("experiment", "sweep_points"))
        config.sweep_points = int(to_int(e->value, "sweep_points", e->line));
    if (const Entry* e = get("experiment", "durations_tau_l"))
        config.durations_tau_l = to_list(e->value, "durations_tau_l", e->line);
    if (const Entry* e = get("experiment", "rb_lengths")) {
        config.rb_lengths.clear();
        for (double v : to_list(e->value, "rb_lengths", e->line))
            config.rb_lengths.push_back(int(v));
    }
    if (const Entry* e = get("experiment", "calibrate_first"))
        config.calibrate_first = to_bool(e->value, "calibrate_first", e->line);
    if (const Entry* e = get("experiment", "rb_mode")) {
        config.rb_mode = e->value;
        if (config.rb_mode != "standard" && config.rb_mode != "interleaved" &&
            config.rb_mode != "purity")
            throw ConfigError("rb_mode must be standard, interleaved, or purity",
                              "rb_mode", e->line);
    }
    if (const Entry* e = get("experiment", "output_dir"))
        config.output_dir = e->value;
    return config;
}

EigenSystem ExperimentConfig::build_eigensystem() const {
    if (model == "two-level") return EigenSystem::two_level(f01_ghz);
    return diagonalize(circuit);
}

double ExperimentConfig::resolved_t_x(const QubitFrame& frame) const {
    if (t_x_factor > 0) return t_x_factor * frame.tau_l;
    return timing.t_x;
}

std::vector<std::pair<std::string, std::string>> list_experiments() {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [name, desc, fn] : registry()) out.emplace_back(name, desc);
    return out;
}

std::vector<std::string> validate(const std::string& path) {
    std::vector<std::string> errors;
    ExperimentConfig config;
    try {
        config = ExperimentConfig::parse(path);
    } catch (const ConfigError& e) {
        errors.push_back(e.what());
        return errors;
    }

    bool known = false;
    for (const auto& [name, desc] : list_experiments())
        if (name == config.name) known = true;
    if (!known) errors.push_back("unknown experiment name: " + config.name);

    if (config.coherence) {
        try {
            config.coherence->check();
        } catch (const std::exception& e) {
            errors.push_back(std::string("coherence: ") + e.what());
        }
    }

    EigenSystem eig;
    try {
        eig = config.build_eigensystem();
    } catch (const std::exception& e) {
        errors.push_back(std::string("circuit: ") + e.what());
        return errors;
    }
    const QubitFrame frame = qubit_frame(eig);
    const double t_x = config.resolved_t_x(frame);
    if (t_x <= 0) errors.push_back("drive: t_x_ns (or t_x_tau_l) must be set");
    if (config.lattice == LatticeMode::Commensurate && t_x > 0) {
        const double frac = t_x / frame.tau_half;
        if (std::abs(frac - std::round(frac)) * frame.tau_half > 1e-6)
            errors.push_back(
                "drive: commensurate mode requires t_x to be a multiple of "
                "tau_L/2");
    }
    if (config.seeds < 1) errors.push_back("experiment: seeds must be >= 1");
    return errors;
}

ResultBundle run(const std::string& config_path) {
    const std::vector<std::string> errors = validate(config_path);
    if (!errors.empty()) throw ConfigError(errors.front());
    const ExperimentConfig config = ExperimentConfig::parse(config_path);

    std::string root = config.output_dir;
    if (root.empty())
        if (const char* env = std::getenv("FLUXSIM_OUTPUT_ROOT")) root = env;
    if (root.empty()) root = ".";

    const std::string stamp = now_stamp();
    const std::string hash = content_hash(config.source_text);
    const fs::path dir =
        fs::path(root) / (config.name + "-" + stamp + "-" + hash);
    fs::create_directories(dir);

    RunContext ctx{config, config.build_eigensystem(), QubitFrame{}, dir, {}};
    ctx.frame = qubit_frame(ctx.eig);
    write_file(ctx.dir, "config.ini", config.source_text, ctx.files);

    const Runner* runner = nullptr;
    for (const auto& [name, desc, fn] : registry())
        if (name == config.name) runner = &fn;
    if (!runner) throw ConfigError("unknown experiment name: " + config.name);
    try {
        (*runner)(ctx);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw BackendError("experiment '" + config.name + "' failed: " +
                           e.what());
    }

    nlohmann::json manifest;
    manifest["version"] = kVersion;
    manifest["experiment"] = config.name;
    manifest["timestamp"] = stamp;
    manifest["config_hash"] = hash;
    manifest["seed"] = config.seed;
    manifest["files"] = ctx.files;
    std::vector<std::string> all = ctx.files;
    write_file(ctx.dir, "manifest.json", manifest.dump(2), all);

    ResultBundle bundle;
    bundle.directory = dir.string();
    bundle.files = all;
    bundle.manifest_path = (dir / "manifest.json").string();
    return bundle;
}

}  // namespace fluxsim
