#include "fluxsim/circuit.hpp"

#include <cmath>
#include <complex>

namespace fluxsim {

using std::complex;

void CircuitParams::check() const {
    if (!(ec_ghz > 0 && el_ghz > 0 && ej_ghz >= 0))
        throw std::invalid_argument("circuit energies must be positive");
    if (basis_size < 10)
        throw std::invalid_argument("basis_size must be at least 10");
    if (!std::isfinite(phi_dc))
        throw std::invalid_argument("phi_dc must be finite");
}

namespace {

struct OscillatorOps {
    Eigen::MatrixXcd n;
    Eigen::MatrixXcd phi;
};

// Ladder operators of the (EC, EL) linear part: phi_zpf = (2 EC / EL)^(1/4).
OscillatorOps oscillator_ops(const CircuitParams& p, int size) {
    const double phi_zpf = std::pow(2.0 * p.ec_ghz / p.el_ghz, 0.25);
    Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(size, size);
    for (int k = 1; k < size; ++k) a(k - 1, k) = std::sqrt(double(k));
    OscillatorOps ops;
    ops.phi = phi_zpf * (a + a.adjoint());
    ops.n = complex<double>(0, 1) / (2.0 * phi_zpf) * (a.adjoint() - a);
    return ops;
}

Eigen::MatrixXcd hamiltonian_at(const CircuitParams& p, int size) {
    const OscillatorOps ops = oscillator_ops(p, size);

    // cos(phi - phi_dc) through the operator exponential of the Hermitian phi.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> phi_solver(ops.phi);
    Eigen::VectorXcd exp_eigs(size);
    for (int k = 0; k < size; ++k)
        exp_eigs(k) = std::exp(complex<double>(0, phi_solver.eigenvalues()(k)));
    const Eigen::MatrixXcd exp_iphi = phi_solver.eigenvectors() *
                                      exp_eigs.asDiagonal() *
                                      phi_solver.eigenvectors().adjoint();
    const complex<double> rot = std::exp(complex<double>(0, -p.phi_dc));
    const Eigen::MatrixXcd cos_shifted =
        0.5 * (rot * exp_iphi + std::conj(rot) * exp_iphi.adjoint());

    Eigen::MatrixXcd h = 4.0 * p.ec_ghz * ops.n * ops.n +
                         0.5 * p.el_ghz * ops.phi * ops.phi -
                         p.ej_ghz * cos_shifted;
    return 0.5 * (h + h.adjoint());
}

EigenSystem diagonalize_at(const CircuitParams& p, int size, int keep) {
    const OscillatorOps ops = oscillator_ops(p, size);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(hamiltonian_at(p, size));

    Eigen::MatrixXcd vecs = solver.eigenvectors().leftCols(keep);
    // Phase convention: <k|phi|k+1> real and non-negative. The ground state
    // keeps Eigen's phasing except for making its largest component real.
    int imax = 0;
    vecs.col(0).cwiseAbs().maxCoeff(&imax);
    vecs.col(0) *= std::polar(1.0, -std::arg(vecs.col(0)(imax)));
    for (int k = 0; k + 1 < keep; ++k) {
        const complex<double> elem = vecs.col(k).dot(ops.phi * vecs.col(k + 1));
        if (std::abs(elem) > 1e-14)
            vecs.col(k + 1) *= std::polar(1.0, -std::arg(elem));
    }

    EigenSystem eig;
    eig.dim = keep;
    eig.energies_ghz = solver.eigenvalues().head(keep).array() - solver.eigenvalues()(0);
    eig.n_elem = vecs.adjoint() * ops.n * vecs;
    eig.phi_elem = vecs.adjoint() * ops.phi * vecs;
    eig.n_elem = 0.5 * (eig.n_elem + eig.n_elem.adjoint()).eval();
    eig.phi_elem = 0.5 * (eig.phi_elem + eig.phi_elem.adjoint()).eval();
    return eig;
}

}  // namespace

Eigen::MatrixXcd build_hamiltonian(const CircuitParams& params) {
    params.check();
    return hamiltonian_at(params, params.basis_size);
}

EigenSystem diagonalize(const CircuitParams& params, int keep) {
    params.check();
    if (keep < 2 || keep > params.basis_size / 2)
        throw std::invalid_argument("keep must be in [2, basis_size/2]");

    EigenSystem eig = diagonalize_at(params, params.basis_size, keep);
    const EigenSystem check = diagonalize_at(params, params.basis_size + 20, keep);
    const double drift =
        (eig.energies_ghz - check.energies_ghz).cwiseAbs().maxCoeff();
    if (drift > 1e-9)
        throw ConvergenceFailure("basis_size too small: kept energies drift " +
                                 std::to_string(drift) + " GHz under basis growth");
    return eig;
}

EigenSystem EigenSystem::two_level(double f01_ghz) {
    EigenSystem eig;
    eig.dim = 2;
    eig.energies_ghz = Eigen::Vector2d(0.0, f01_ghz);
    eig.n_elem = Eigen::MatrixXcd::Zero(2, 2);
    // Conjugate-momentum sign: with <0|phi|1> real positive, <0|n|1> = -i.
    eig.n_elem(0, 1) = complex<double>(0, -1);
    eig.n_elem(1, 0) = complex<double>(0, 1);
    eig.phi_elem = Eigen::MatrixXcd::Zero(2, 2);
    eig.phi_elem(0, 1) = 1.0;
    eig.phi_elem(1, 0) = 1.0;
    return eig;
}

QubitFrame qubit_frame(const EigenSystem& eig) {
    if (eig.dim < 2) throw std::invalid_argument("need at least two levels");
    QubitFrame frame;
    frame.omega01 = eig.omega01();
    frame.tau_l = kTwoPi / frame.omega01;
    frame.tau_half = frame.tau_l / 2.0;
    frame.tau_quarter = frame.tau_l / 4.0;
    return frame;
}

}  // namespace fluxsim
