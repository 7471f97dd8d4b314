#pragma once

#include <functional>
#include <optional>

#include "fluxsim/circuit.hpp"
#include "fluxsim/pulse.hpp"

namespace fluxsim {

using StateVector = Eigen::VectorXcd;
using DensityMatrix = Eigen::MatrixXcd;
using Unitary = Eigen::MatrixXcd;

/// Qubit relaxation and echo-coherence times in ns. Pure dephasing is derived
/// as 1/T_phi = 1/T2E - 1/(2 T1).
struct CoherenceParams {
    double t1_ns = 0;
    double t2e_ns = 0;

    double gamma1() const { return 1.0 / t1_ns; }
    double gamma_phi() const;
    void check() const;
};

struct BlochVector {
    double x = 0, y = 0, z = 0;
};

struct StepTooCoarse : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PropagationResult {
    StateVector state;
    Unitary unitary;  // lab frame, over [0, schedule.duration]
};

/// Observer invoked at integrator step boundaries with (t, lab-frame state).
using StepObserver = std::function<void(double, const StateVector&)>;

/// Lab-frame Schroedinger propagation of a schedule without the RWA.
/// Piecewise integration with a 4th-order commutator-free Magnus stepper over
/// pulse windows and exact diagonal evolution in between.
PropagationResult propagate(const EigenSystem& eig, const GateSchedule& schedule,
                            const StateVector& initial, double step,
                            const StepObserver& observer = nullptr);

/// As propagate, but certifies the step by halving it and requiring the
/// final-state fidelity to move by less than 1e-9. Throws StepTooCoarse.
PropagationResult propagate_certified(const EigenSystem& eig,
                                      const GateSchedule& schedule,
                                      const StateVector& initial, double step);

/// Density-matrix propagation with optional 0-1 amplitude-damping and
/// pure-dephasing collapse channels (first-order Lindblad splitting during
/// pulses, closed-form decay during free segments).
DensityMatrix propagate_density(const EigenSystem& eig,
                                const GateSchedule& schedule,
                                const DensityMatrix& initial, double step,
                                const std::optional<CoherenceParams>& decoherence);

/// Rotating-frame factor diag(e^{+i k omega t}) (harmonic ladder convention;
/// negate omega for the counter-rotating frame).
Unitary rotating_frame_factor(int dim, double omega, double t);

StateVector to_rotating_frame(const StateVector& state, double omega, double t);
/// For a lab-frame unitary over [t0, t1]: R(t1) U R(t0)^dagger.
Unitary to_rotating_frame(const Unitary& lab_unitary, double omega, double t0,
                          double t1);

BlochVector bloch(const StateVector& state);
BlochVector bloch(const DensityMatrix& rho);

/// Polar angle arccos(z) of the Bloch vector; 0 for |0>, pi for |1>.
double rotation_angle(const StateVector& state);

enum class DriveScheme { Charge, Flux, Circular };

/// Single-pulse drive description used by the start-time sweeps.
struct DriveConfig {
    const EigenSystem* eig = nullptr;
    QubitFrame frame;
    DriveScheme scheme = DriveScheme::Flux;
    double area = kTwoPi / 2.0;  // target rotation angle, rad (default pi)
    double rise_fall = 0;        // 0 selects the pure-cosine envelope
    double plateau = 0;
    double step = 0;             // 0: tau_L/256
};

/// Integral of the envelope profile over the pulse window (ns).
double envelope_integral(const DrivePulse& pulse);

/// Peak per-line amplitudes realizing a given RWA rotation area.
/// For Circular both lines satisfy Omega_c|n01| = Omega_f|phi01| = Omega/2.
void set_amplitudes_for_area(DrivePulse& pulse, const EigenSystem& eig,
                             DriveScheme scheme, double area);

/// Build the single test pulse described by config, starting at t0.
DrivePulse single_pulse(const DriveConfig& config, double t0, double duration);

double rotation_angle_vs_start(const DriveConfig& config, double t_g, double t0);

/// max - min of rotation_angle over a dense start-time grid spanning tau_L.
double rotation_range(const DriveConfig& config, double t_g, int grid_points = 96);

/// Average gate fidelity of `actual` (any dim, rotating frame) against a
/// two-level target: F = (|tr M|^2 + tr(M M^dag)) / 6 with M the projected
/// overlap. Leakage strictly reduces the second term.
double average_gate_fidelity(const Unitary& actual, const Eigen::Matrix2cd& target);

/// 1 - average fidelity of identity evolution of the given duration under the
/// Lindblad channel, averaged over the six cardinal Bloch states. Computed by
/// direct numerical integration of the dissipator.
double coherence_limited_error(const CoherenceParams& coh, double t_gate_ns);

}  // namespace fluxsim
