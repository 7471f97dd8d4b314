#include "fluxsim/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

namespace fluxsim {

using std::complex;
namespace {

constexpr complex<double> kI{0.0, 1.0};

// 4th-order commutator-free Magnus coefficients (Gauss-Legendre nodes).
constexpr double kNode1 = 0.5 - 0.28867513459481287;  // 1/2 - sqrt(3)/6
constexpr double kNode2 = 0.5 + 0.28867513459481287;
constexpr double kWeight1 = 0.25 - 0.28867513459481287;  // (3 - 2*sqrt(3))/12
constexpr double kWeight2 = 0.25 + 0.28867513459481287;

struct Window {
    double t0 = 0, t1 = 0;
    std::vector<const DrivePulse*> pulses;
};

std::vector<Window> pulse_windows(const GateSchedule& schedule) {
    std::vector<Window> raw;
    for (const DrivePulse& p : schedule.pulses) {
        Window w;
        w.t0 = p.start + std::min(0.0, p.flux_delay);
        w.t1 = p.start + p.duration + std::max(0.0, p.flux_delay);
        raw.push_back(w);
    }
    std::sort(raw.begin(), raw.end(),
              [](const Window& a, const Window& b) { return a.t0 < b.t0; });
    std::vector<Window> merged;
    for (const Window& w : raw) {
        if (!merged.empty() && w.t0 < merged.back().t1 + 1e-12)
            merged.back().t1 = std::max(merged.back().t1, w.t1);
        else
            merged.push_back(w);
    }
    for (Window& w : merged)
        for (const DrivePulse& p : schedule.pulses)
            if (p.start + p.duration + std::abs(p.flux_delay) >= w.t0 &&
                p.start - std::abs(p.flux_delay) <= w.t1)
                w.pulses.push_back(&p);
    return merged;
}

template <int N>
struct Engine {
    using Mat = Eigen::Matrix<complex<double>, N, N>;
    using Vec = Eigen::Matrix<complex<double>, N, 1>;

    const EigenSystem& eig;
    Mat hfree, n_op, phi_op;

    explicit Engine(const EigenSystem& e) : eig(e) {
        const int d = e.dim;
        hfree = Mat::Zero(d, d);
        for (int k = 0; k < d; ++k) hfree(k, k) = kTwoPi * e.energies_ghz(k);
        n_op = e.n_elem;
        phi_op = e.phi_elem;
    }

    void hamiltonian(double t, const std::vector<const DrivePulse*>& pulses,
                     Mat& out) const {
        out = hfree;
        for (const DrivePulse* p : pulses) {
            const DriveSample s = waveform(*p, t);
            if (s.charge != 0.0) out.noalias() += s.charge * n_op;
            if (s.flux != 0.0) out.noalias() += s.flux * phi_op;
        }
    }

    // exp(-i h dt) for Hermitian h.
    static Mat expm(const Mat& h, double dt) {
        if constexpr (N == 2) {
            const double c = 0.5 * std::real(h(0, 0) + h(1, 1));
            const double hz = 0.5 * std::real(h(0, 0) - h(1, 1));
            const complex<double> hoff = h(0, 1);  // hx - i*hy
            const double r =
                std::sqrt(hz * hz + std::norm(hoff));
            Mat u;
            const complex<double> phase = std::exp(-kI * c * dt);
            if (r < 1e-300) {
                u << phase, 0.0, 0.0, phase;
                return u;
            }
            const double cs = std::cos(r * dt), sn = std::sin(r * dt);
            const complex<double> f = -kI * sn / r;
            u(0, 0) = phase * (cs + f * hz);
            u(1, 1) = phase * (cs - f * hz);
            u(0, 1) = phase * f * hoff;
            u(1, 0) = phase * f * std::conj(hoff);
            return u;
        } else {
            Eigen::SelfAdjointEigenSolver<Mat> solver(h);
            Vec phases(h.rows());
            for (int k = 0; k < h.rows(); ++k)
                phases(k) = std::exp(-kI * solver.eigenvalues()(k) * dt);
            return solver.eigenvectors() * phases.asDiagonal() *
                   solver.eigenvectors().adjoint();
        }
    }

    Vec free_phases(double dt) const {
        Vec d(eig.dim);
        for (int k = 0; k < eig.dim; ++k)
            d(k) = std::exp(-kI * kTwoPi * eig.energies_ghz(k) * dt);
        return d;
    }

    Mat cf4_step(double t, double dt, const std::vector<const DrivePulse*>& pulses,
                 Mat& h1, Mat& h2) const {
        hamiltonian(t + kNode1 * dt, pulses, h1);
        hamiltonian(t + kNode2 * dt, pulses, h2);
        const Mat first = kWeight2 * h1 + kWeight1 * h2;
        const Mat second = kWeight1 * h1 + kWeight2 * h2;
        return expm(second, dt) * expm(first, dt);
    }

    PropagationResult run_state(const GateSchedule& schedule, const StateVector& initial,
                                double step, const StepObserver& observer) const {
        const int d = eig.dim;
        Vec psi = initial;
        Mat u = Mat::Identity(d, d);
        Mat h1(d, d), h2(d, d);
        double t = 0.0;
        auto free_advance = [&](double until) {
            if (until <= t) return;
            const Vec ph = free_phases(until - t);
            psi = ph.asDiagonal() * psi;
            u = ph.asDiagonal() * u;
            t = until;
            if (observer) observer(t, psi);
        };
        for (const Window& w : pulse_windows(schedule)) {
            free_advance(std::max(0.0, w.t0));
            const int nsteps = std::max(1, int(std::ceil((w.t1 - t) / step - 1e-12)));
            const double dt = (w.t1 - t) / nsteps;
            for (int k = 0; k < nsteps; ++k) {
                const Mat ustep = cf4_step(t, dt, w.pulses, h1, h2);
                psi = ustep * psi;
                u = ustep * u;
                t += dt;
                if (observer) observer(t, psi);
            }
        }
        free_advance(schedule.duration);
        PropagationResult result;
        result.state = psi;
        result.unitary = u;
        return result;
    }

    void dissipate(DensityMatrix& rho, double dt, double g1, double gphi) const {
        // First-order application of the 0-1 amplitude-damping and
        // pure-dephasing dissipators; levels >= 2 are undamped.
        const int d = rho.rows();
        DensityMatrix delta = DensityMatrix::Zero(d, d);
        delta(0, 0) += g1 * std::real(rho(1, 1));
        delta(1, 1) -= g1 * std::real(rho(1, 1));
        delta(0, 1) -= (0.5 * g1 + gphi) * rho(0, 1);
        delta(1, 0) -= (0.5 * g1 + gphi) * rho(1, 0);
        for (int k = 2; k < d; ++k) {
            delta(0, k) -= 0.25 * gphi * rho(0, k);
            delta(k, 0) -= 0.25 * gphi * rho(k, 0);
            delta(1, k) -= (0.5 * g1 + 0.25 * gphi) * rho(1, k);
            delta(k, 1) -= (0.5 * g1 + 0.25 * gphi) * rho(k, 1);
        }
        rho += dt * delta;
    }

    DensityMatrix run_density(const GateSchedule& schedule, const DensityMatrix& initial,
                              double step,
                              const std::optional<CoherenceParams>& coh) const {
        const int d = eig.dim;
        DensityMatrix rho = initial;
        Mat h1(d, d), h2(d, d);
        const double g1 = coh ? coh->gamma1() : 0.0;
        const double gphi = coh ? coh->gamma_phi() : 0.0;
        double t = 0.0;
        auto free_advance = [&](double until) {
            if (until <= t) return;
            const double dt = until - t;
            const Vec ph = free_phases(dt);
            rho = ph.asDiagonal() * rho * ph.conjugate().asDiagonal();
            if (coh) {
                // Closed-form decay matching the dissipator rates.
                const double e1 = std::exp(-g1 * dt);
                const double e2 = std::exp(-(0.5 * g1 + gphi) * dt);
                const double moved = std::real(rho(1, 1)) * (1.0 - e1);
                rho(0, 0) += moved;
                rho(1, 1) -= moved;
                rho(0, 1) *= e2;
                rho(1, 0) *= e2;
                for (int k = 2; k < d; ++k) {
                    const double ephi = std::exp(-0.25 * gphi * dt);
                    rho(0, k) *= ephi;
                    rho(k, 0) *= ephi;
                    rho(1, k) *= std::exp(-(0.5 * g1 + 0.25 * gphi) * dt) ;
                    rho(k, 1) *= std::exp(-(0.5 * g1 + 0.25 * gphi) * dt);
                }
            }
            t = until;
        };
        for (const Window& w : pulse_windows(schedule)) {
            free_advance(std::max(0.0, w.t0));
            const int nsteps = std::max(1, int(std::ceil((w.t1 - t) / step - 1e-12)));
            const double dt = (w.t1 - t) / nsteps;
            for (int k = 0; k < nsteps; ++k) {
                const Mat ustep = cf4_step(t, dt, w.pulses, h1, h2);
                rho = ustep * rho * ustep.adjoint();
                if (coh) dissipate(rho, dt, g1, gphi);
                t += dt;
            }
        }
        free_advance(schedule.duration);
        return rho;
    }
};

}  // namespace

double CoherenceParams::gamma_phi() const {
    return 1.0 / t2e_ns - 0.5 / t1_ns;
}

void CoherenceParams::check() const {
    if (!(t1_ns > 0 && t2e_ns > 0))
        throw std::invalid_argument("T1 and T2E must be positive");
    if (t2e_ns > 2.0 * t1_ns + 1e-9)
        throw std::invalid_argument("T2E must not exceed 2*T1");
}

PropagationResult propagate(const EigenSystem& eig, const GateSchedule& schedule,
                            const StateVector& initial, double step,
                            const StepObserver& observer) {
    if (step <= 0) throw std::invalid_argument("step must be positive");
    if (eig.dim == 2)
        return Engine<2>(eig).run_state(schedule, initial, step, observer);
    return Engine<Eigen::Dynamic>(eig).run_state(schedule, initial, step, observer);
}

PropagationResult propagate_certified(const EigenSystem& eig,
                                      const GateSchedule& schedule,
                                      const StateVector& initial, double step) {
    PropagationResult coarse = propagate(eig, schedule, initial, step);
    PropagationResult fine = propagate(eig, schedule, initial, 0.5 * step);
    const double fidelity = std::norm(fine.state.dot(coarse.state));
    if (std::abs(1.0 - fidelity) > 1e-9)
        throw StepTooCoarse("halving the step moves the final-state fidelity by " +
                            std::to_string(std::abs(1.0 - fidelity)));
    return fine;
}

DensityMatrix propagate_density(const EigenSystem& eig, const GateSchedule& schedule,
                                const DensityMatrix& initial, double step,
                                const std::optional<CoherenceParams>& decoherence) {
    if (step <= 0) throw std::invalid_argument("step must be positive");
    if (decoherence) decoherence->check();
    if (eig.dim == 2)
        return Engine<2>(eig).run_density(schedule, initial, step, decoherence);
    return Engine<Eigen::Dynamic>(eig).run_density(schedule, initial, step,
                                                   decoherence);
}

Unitary rotating_frame_factor(int dim, double omega, double t) {
    Unitary r = Unitary::Zero(dim, dim);
    for (int k = 0; k < dim; ++k) r(k, k) = std::exp(kI * (k * omega * t));
    return r;
}

StateVector to_rotating_frame(const StateVector& state, double omega, double t) {
    return rotating_frame_factor(int(state.size()), omega, t) * state;
}

Unitary to_rotating_frame(const Unitary& lab_unitary, double omega, double t0,
                          double t1) {
    const int d = int(lab_unitary.rows());
    return rotating_frame_factor(d, omega, t1) * lab_unitary *
           rotating_frame_factor(d, omega, t0).adjoint();
}

BlochVector bloch(const StateVector& state) {
    const complex<double> c = std::conj(state(0)) * state(1);
    return {2.0 * c.real(), 2.0 * c.imag(),
            std::norm(state(0)) - std::norm(state(1))};
}

BlochVector bloch(const DensityMatrix& rho) {
    return {2.0 * rho(0, 1).real(), -2.0 * rho(0, 1).imag(),
            std::real(rho(0, 0) - rho(1, 1))};
}

double rotation_angle(const StateVector& state) {
    const double p0 = std::norm(state(0));
    const double p1 = std::norm(state(1));
    const double z = (p0 - p1) / std::max(p0 + p1, 1e-300);
    return std::acos(std::clamp(z, -1.0, 1.0));
}

double envelope_integral(const DrivePulse& pulse) {
    if (pulse.plateau <= 0.0) return 0.5 * pulse.duration;
    return (pulse.duration - pulse.rise_fall) + 0.5 * pulse.rise_fall;
}

void set_amplitudes_for_area(DrivePulse& pulse, const EigenSystem& eig,
                             DriveScheme scheme, double area) {
    const double integral = envelope_integral(pulse);
    const double n01 = std::abs(eig.n_elem(0, 1));
    const double phi01 = std::abs(eig.phi_elem(0, 1));
    switch (scheme) {
        case DriveScheme::Charge:
            pulse.amp_charge = area / (n01 * integral);
            pulse.amp_flux = 0.0;
            break;
        case DriveScheme::Flux:
            pulse.amp_charge = 0.0;
            pulse.amp_flux = area / (phi01 * integral);
            break;
        case DriveScheme::Circular:
            pulse.amp_charge = area / (2.0 * n01 * integral);
            pulse.amp_flux = area / (2.0 * phi01 * integral);
            pulse.rel_phase = kTwoPi / 4.0;
            break;
    }
}

DrivePulse single_pulse(const DriveConfig& config, double t0, double duration) {
    DrivePulse pulse;
    pulse.start = t0;
    pulse.duration = duration;
    pulse.rise_fall = config.rise_fall;
    pulse.plateau = config.plateau;
    pulse.carrier_freq = config.frame.omega01;
    set_amplitudes_for_area(pulse, *config.eig, config.scheme, config.area);
    return pulse;
}

double rotation_angle_vs_start(const DriveConfig& config, double t_g, double t0) {
    GateSchedule schedule;
    schedule.pulses.push_back(single_pulse(config, t0, t_g));
    schedule.duration = t0 + t_g;
    StateVector ground = StateVector::Zero(config.eig->dim);
    ground(0) = 1.0;
    const double step = config.step > 0 ? config.step : config.frame.tau_l / 256.0;
    return rotation_angle(propagate(*config.eig, schedule, ground, step).state);
}

double rotation_range(const DriveConfig& config, double t_g, int grid_points) {
    if (t_g <= 0) throw std::invalid_argument("t_g must be positive");
    grid_points = std::max(grid_points, 64);
    double lo = kTwoPi, hi = 0.0;
    for (int k = 0; k < grid_points; ++k) {
        const double t0 = config.frame.tau_l * k / grid_points;
        const double angle = rotation_angle_vs_start(config, t_g, t0);
        lo = std::min(lo, angle);
        hi = std::max(hi, angle);
    }
    return hi - lo;
}

double average_gate_fidelity(const Unitary& actual, const Eigen::Matrix2cd& target) {
    const Eigen::Matrix2cd block = actual.topLeftCorner<2, 2>();
    const Eigen::Matrix2cd m = block.adjoint() * target;
    return (std::norm(m.trace()) + (m.adjoint() * m).trace().real()) / 6.0;
}

double coherence_limited_error(const CoherenceParams& coh, double t_gate_ns) {
    coh.check();
    const double g1 = coh.gamma1();
    const double gphi = coh.gamma_phi();
    auto dissipator = [&](const Eigen::Matrix2cd& rho) {
        Eigen::Matrix2cd d;
        d(0, 0) = g1 * rho(1, 1);
        d(1, 1) = -g1 * rho(1, 1);
        d(0, 1) = -(0.5 * g1 + gphi) * rho(0, 1);
        d(1, 0) = -(0.5 * g1 + gphi) * rho(1, 0);
        return d;
    };
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    const Eigen::Vector2cd cardinals[6] = {
        {1, 0}, {0, 1},
        {inv_sqrt2, inv_sqrt2}, {inv_sqrt2, -inv_sqrt2},
        {inv_sqrt2, kI * inv_sqrt2}, {inv_sqrt2, -kI * inv_sqrt2}};
    const int nsteps = 256;
    const double dt = t_gate_ns / nsteps;
    double fidelity_sum = 0.0;
    for (const Eigen::Vector2cd& psi : cardinals) {
        Eigen::Matrix2cd rho = psi * psi.adjoint();
        for (int k = 0; k < nsteps; ++k) {
            // Classic RK4 on drho/dt = D(rho).
            const Eigen::Matrix2cd k1 = dissipator(rho);
            const Eigen::Matrix2cd k2 = dissipator(rho + 0.5 * dt * k1);
            const Eigen::Matrix2cd k3 = dissipator(rho + 0.5 * dt * k2);
            const Eigen::Matrix2cd k4 = dissipator(rho + dt * k3);
            rho += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        fidelity_sum += std::real((psi.adjoint() * rho * psi)(0, 0));
    }
    return 1.0 - fidelity_sum / 6.0;
}

}  // namespace fluxsim
