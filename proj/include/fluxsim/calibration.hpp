#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fluxsim/dynamics.hpp"
#include "fluxsim/fit.hpp"
#include "fluxsim/pulse.hpp"

namespace fluxsim {

/// Control-line imperfections injected between the requested schedule and the
/// simulated device.
struct DistortionConfig {
    double charge_amp_scale = 1.0;
    double flux_amp_scale = 1.0;
    double flux_delay_skew = 0.0;   // ns added to the flux line
    double flux_phase_offset = 0.0; // rad added to the flux carrier
    double freq_offset_ghz = 0.0;   // static qubit frequency shift
    double stark_shift_ghz = 0.0;   // drive-gated (AC-Stark-like) shift
};

/// measure(schedule) -> p1, the excited-state population after the schedule.
class MeasurementBackend {
  public:
    virtual ~MeasurementBackend() = default;
    virtual double measure_p1(const GateSchedule& schedule) = 0;
    /// Nominal (undistorted) model the calibrations build pulses against.
    virtual const EigenSystem& eigensystem() const = 0;
    virtual const QubitFrame& frame() const = 0;
};

class SimBackend : public MeasurementBackend {
  public:
    explicit SimBackend(EigenSystem nominal, DistortionConfig distortion = {},
                        int shots = 0, std::uint64_t seed = 1);

    double measure_p1(const GateSchedule& schedule) override;
    const EigenSystem& eigensystem() const override { return nominal_; }
    const QubitFrame& frame() const override { return frame_; }

    /// Schedule as the device sees it, distortions applied.
    GateSchedule distort(const GateSchedule& schedule) const;
    /// Rotating-frame unitary of the distorted schedule (no shot noise).
    Unitary rotating_unitary(const GateSchedule& schedule) const;
    /// Full-dimension density matrix after the schedule, rotated into the
    /// qubit frame, with the coherence channel applied when configured.
    DensityMatrix final_density(const GateSchedule& schedule);

    /// Re-derive the scheduling frame (Larmor lattice and rotating frame)
    /// from a calibrated drive frequency, e.g. carrier_freq - detuning after
    /// a strong drive shifted the effective qubit frequency.
    void retime(double omega_drive);

    DistortionConfig distortion;
    int shots = 0;  // 0 = exact populations
    std::optional<CoherenceParams> coherence;
    double step = 0;  // integration step, 0 = tau_l/256

  private:
    EigenSystem nominal_;
    EigenSystem distorted_;
    QubitFrame frame_;
    std::mt19937_64 rng_;
};

struct SweepAxis {
    std::string name;
    std::vector<double> values;
    std::string units;
};

/// Rectangular grid of measured populations, row-major with the first axis
/// slowest.
struct SweepGrid {
    std::vector<SweepAxis> axes;
    std::vector<double> p1;
    int shots = 0;

    std::size_t size() const;
    double& at(std::size_t row, std::size_t col);
    double at(std::size_t row, std::size_t col) const;
    std::string to_csv() const;
};

struct CalibrationResult {
    std::string parameter;
    double value = 0;
    std::string units;
    double uncertainty = 0;
    FitDiagnostics diagnostics;
    SweepGrid sweep;
};

/// Appendix-E style product fit: s(x) = prod_n (1 - p1[n][x]) over the train
/// axis, then a Gaussian a*exp(-(x-c)^2/2w^2)+b; returns the fitted peak.
struct ProductFit {
    double center = 0;
    double width = 0;
    FitDiagnostics diag;
};
ProductFit gaussian_product_fit(const SweepGrid& grid, const std::string& axis);

enum class DriveLine { Charge, Flux, Both };

/// Shared configuration of the ladder: gate geometry and sweep sizes.
struct LadderConfig {
    GateTiming timing{};                        // t_x and inter-pulse gap
    LatticeMode mode = LatticeMode::Commensurate;
    DriveScheme scheme = DriveScheme::Circular;
    int train_max = 5;        // N <= 5 pseudo-identity trains
    int sweep_points = 41;
    double detuning_span = kTwoPi * 2e-3;  // rad/ns, swept +/- around 0
};

CalibrationResult rough_amplitude(MeasurementBackend& backend,
                                  const LadderConfig& config, PulseParams& params,
                                  DriveLine line);
CalibrationResult detuning_calibration(MeasurementBackend& backend,
                                       const LadderConfig& config,
                                       PulseParams& params, int n_max);
CalibrationResult precise_amplitude(MeasurementBackend& backend,
                                    const LadderConfig& config,
                                    PulseParams& params);
CalibrationResult relative_phase_calibration(MeasurementBackend& backend,
                                             const LadderConfig& config,
                                             PulseParams& params);
CalibrationResult relative_delay_calibration(MeasurementBackend& backend,
                                             const LadderConfig& config,
                                             PulseParams& params);
CalibrationResult relative_amplitude_balance(MeasurementBackend& backend,
                                             const LadderConfig& config,
                                             PulseParams& params);

/// Golden-section search of the absolute carrier phase maximizing the mean
/// average-gate fidelity of a compiled X and Y gate. Needs unitary access, so
/// it runs against the simulator backend directly.
CalibrationResult optimize_carrier_phase(SimBackend& backend,
                                         const LadderConfig& config,
                                         PulseParams& params);

/// Final commensurate-only stage: Newton-polish detuning, overall amplitude
/// and carrier phase until the lattice-locked X pulse realizes the quarter
/// rotation exactly; Y and negative gates are translates of the same
/// waveform and inherit the result.
CalibrationResult refine_commensurate_gate(SimBackend& backend,
                                           const LadderConfig& config,
                                           PulseParams& params);

struct CalibrationReport {
    std::vector<CalibrationResult> results;
    PulseParams params;
    std::string started_at;
    std::string finished_at;
    std::string backend_hash;

    std::string to_json() const;
};

/// The full Appendix-style ladder in dependency order: per-line rough
/// amplitudes, detuning, precise amplitude, relative phase, relative delay,
/// amplitude balance, carrier phase.
CalibrationReport run_full_ladder(SimBackend& backend, const LadderConfig& config,
                                  PulseParams params);

/// Starting point derived from the nominal model: resonant carrier and
/// analytic per-line pi/2 amplitudes.
PulseParams nominal_params(const EigenSystem& eig, const LadderConfig& config);

}  // namespace fluxsim
