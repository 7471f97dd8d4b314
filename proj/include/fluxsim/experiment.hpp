#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fluxsim/calibration.hpp"
#include "fluxsim/rb.hpp"

namespace fluxsim {

/// Config parse or validation failure, carrying the offending key/line.
struct ConfigError : std::runtime_error {
    std::string key;
    int line = 0;
    ConfigError(const std::string& message, std::string key_ = "", int line_ = 0)
        : std::runtime_error(message), key(std::move(key_)), line(line_) {}
};

/// Backend failure while executing an experiment, with run context.
struct BackendError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Declarative run description parsed from an INI-style file with mandatory
/// unit suffixes (_ghz, _ns, _rad) on dimensioned keys.
struct ExperimentConfig {
    // [circuit]
    std::string model = "fluxonium";  // or "two-level"
    CircuitParams circuit{};
    double f01_ghz = 0.243;  // two-level model only

    // [drive]
    DriveScheme scheme = DriveScheme::Circular;
    LatticeMode lattice = LatticeMode::Commensurate;
    GateTiming timing{};
    double rise_fall_ns = 0;
    double plateau_ns = 0;
    double t_x_factor = 0;  // t_x as a multiple of tau_L; 0 = use t_x_ns

    // [coherence], optional
    std::optional<CoherenceParams> coherence;

    // [distortion], optional (calibration experiments)
    DistortionConfig distortion{};

    // [experiment]
    std::string name;
    int seeds = 10;
    int shots = 0;
    std::uint64_t seed = 1;
    int sweep_points = 41;
    std::vector<double> durations_tau_l;  // rotation-range / rb-duration-sweep
    std::vector<int> rb_lengths{1, 2, 4, 8, 16, 32, 64, 128};
    bool calibrate_first = false;
    std::string rb_mode = "standard";  // standard|interleaved|purity
    std::string output_dir;            // empty: cwd or FLUXSIM_OUTPUT_ROOT

    std::string source_path;
    std::string source_text;

    static ExperimentConfig parse(const std::string& path);

    EigenSystem build_eigensystem() const;
    /// Gate duration in ns after resolving t_x_factor against the model.
    double resolved_t_x(const QubitFrame& frame) const;
};

/// Registered experiment names with one-line descriptions, stable order.
std::vector<std::pair<std::string, std::string>> list_experiments();

/// Schema plus physics validation; empty list means the config is runnable.
std::vector<std::string> validate(const std::string& path);

struct ResultBundle {
    std::string directory;
    std::vector<std::string> files;  // relative to directory, manifest last
    std::string manifest_path;
};

/// Execute the configured experiment and persist all artifacts (atomic
/// temp-then-rename writes; the manifest is written once everything else is
/// on disk).
ResultBundle run(const std::string& config_path);

}  // namespace fluxsim
