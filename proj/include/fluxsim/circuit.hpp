#pragma once

#include <Eigen/Dense>
#include <stdexcept>

namespace fluxsim {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

/// Fluxonium circuit energies (GHz*h) and static flux bias (radians).
struct CircuitParams {
    double ec_ghz = 1.30;
    double el_ghz = 0.59;
    double ej_ghz = 5.71;
    double phi_dc = kTwoPi / 2.0;
    int basis_size = 80;  // harmonic-oscillator levels retained

    void check() const;
};

/// Truncated eigenenergies plus charge/phase operator matrix elements in the
/// eigenbasis. Energies are in GHz with the ground state shifted to zero.
struct EigenSystem {
    Eigen::VectorXd energies_ghz;
    Eigen::MatrixXcd n_elem;
    Eigen::MatrixXcd phi_elem;
    int dim = 0;

    double f01_ghz() const { return energies_ghz(1) - energies_ghz(0); }
    double omega01() const { return kTwoPi * f01_ghz(); }  // rad/ns

    /// Ideal two-level system: n -> -i|0><1| + i|1><0|, phi -> |0><1| + |1><0|.
    static EigenSystem two_level(double f01_ghz);
};

/// Qubit rotating-frame timing constants derived from the 0-1 splitting.
struct QubitFrame {
    double omega01 = 0;      // rad/ns
    double tau_l = 0;        // Larmor period, ns
    double tau_half = 0;     // tau_l / 2
    double tau_quarter = 0;  // tau_l / 4
};

struct ConvergenceFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bare Hamiltonian 4*EC*n^2 + EL*phi^2/2 - EJ*cos(phi - phi_dc) in the
/// harmonic-oscillator basis of the linear part. Units: GHz*h.
Eigen::MatrixXcd build_hamiltonian(const CircuitParams& params);

/// Spectral decomposition of build_hamiltonian keeping `keep` eigenstates.
/// Certifies convergence by re-diagonalizing at basis_size + 20.
EigenSystem diagonalize(const CircuitParams& params, int keep = 6);

QubitFrame qubit_frame(const EigenSystem& eig);

}  // namespace fluxsim
