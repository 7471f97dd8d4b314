#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fluxsim/circuit.hpp"

namespace fluxsim {

/// One enveloped carrier. Amplitudes are peak drive strengths in rad/ns; the
/// shared envelope is a dimensionless profile with unit peak.
struct DrivePulse {
    double amp_charge = 0;     // Omega_c, rad/ns
    double amp_flux = 0;       // Omega_f, rad/ns
    double rel_phase = 0;      // Delta-phi between flux and charge carriers, rad
    double carrier_freq = 0;   // omega_d, rad/ns
    double carrier_phase = 0;  // phi, rad
    double detuning = 0;       // delta, rad/ns, applied as -delta*(t - start)
    double start = 0;          // t0, ns
    double duration = 0;       // t_g, ns
    double plateau = 0;        // flat-top length, ns (0 for pure cosine)
    double rise_fall = 0;      // total rise + fall when plateau > 0, ns
    double flux_delay = 0;     // flux line shifted later by this amount, ns
};

struct InvalidEnvelope : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Dimensionless envelope profile: pure cosine when plateau == 0, otherwise
/// cosine rise, flat top, cosine fall. Identically zero outside the window.
double envelope(const DrivePulse& pulse, double t);

/// Drive fields at time t: {charge, flux} in rad/ns. The flux carrier lags the
/// charge carrier by rel_phase; flux_delay shifts the flux envelope only.
struct DriveSample {
    double charge = 0;
    double flux = 0;
};
DriveSample waveform(const DrivePulse& pulse, double t);

enum class Axis { X, Y };

/// Allowed pulse start times: X gates on {n*period + offset_x}, Y gates on the
/// same lattice shifted by y_shift (tau_L/4 for resonant drives).
struct CommensurateLattice {
    double period = 0;    // tau_L/2 (resonant) or tau_d/2 (detuned carrier)
    double offset_x = 0;  // delta-t0
    double y_shift = 0;   // tau_L/4
    double timestamp_resolution = 1e-6;  // ns

    double snap(double requested_start, Axis axis) const;
    bool contains(double t0, Axis axis) const;
};

double snap_to_lattice(const CommensurateLattice& lattice, double requested_start,
                       Axis axis);

struct GateSpec {
    enum class Kind { I, Xp, Xm, Yp, Ym, Z };
    Kind kind = Kind::I;
    double angle = 0;  // used by Z only (frame phase)

    static GateSpec i() { return {Kind::I, 0}; }
    static GateSpec xp() { return {Kind::Xp, 0}; }
    static GateSpec xm() { return {Kind::Xm, 0}; }
    static GateSpec yp() { return {Kind::Yp, 0}; }
    static GateSpec ym() { return {Kind::Ym, 0}; }
    static GateSpec z(double theta) { return {Kind::Z, theta}; }
};

enum class LatticeMode { Commensurate, Incommensurate };

/// Calibrated knobs shared by every compiled pulse.
struct PulseParams {
    double amp_charge = 0;
    double amp_flux = 0;
    double rel_phase = 0;
    double carrier_freq = 0;
    double carrier_phase = 0;  // absolute carrier-phase offset
    double detuning = 0;
    double rise_fall = 0;  // 0 selects the pure-cosine envelope
    double plateau = 0;
    double flux_delay = 0;
};

struct GateTiming {
    double t_x = 0;    // X pi/2 pulse duration, ns
    double gap = 0.1;  // between adjacent pulses, ns
};

struct GateSchedule {
    std::vector<DrivePulse> pulses;
    double frame_phase = 0;  // accumulated virtual-Z, rad
    std::optional<CommensurateLattice> lattice;
    double gap = 0;
    double duration = 0;  // end of the last gate slot, ns
};

struct CommensurabilityViolation : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Compile a gate sequence into a drive timeline. In commensurate mode X
/// starts land on the X lattice and Y gates are padded by tau_L/4 on both
/// sides; Z gates advance the virtual frame phase only.
GateSchedule compile(std::span<const GateSpec> gates, LatticeMode mode,
                     const GateTiming& timing, const PulseParams& params,
                     const QubitFrame& frame);

struct ScheduleViolation {
    int pulse_index = -1;
    std::string rule;
};

std::vector<ScheduleViolation> verify_schedule(const GateSchedule& schedule);

/// JSON timeline of all pulse records.
std::string schedule_to_json(const GateSchedule& schedule);

/// Two-column CSV (t, amplitude) of one drive line sampled at `samples_per_ns`.
std::string sampled_waveform_csv(const GateSchedule& schedule, bool flux_line,
                                 double samples_per_ns = 64.0);

}  // namespace fluxsim
