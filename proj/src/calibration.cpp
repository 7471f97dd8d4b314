#include "fluxsim/calibration.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <functional>
#include <sstream>

#include <json.hpp>

namespace fluxsim {

namespace {

std::vector<double> linspace(double lo, double hi, int n) {
    std::vector<double> v(n);
    for (int k = 0; k < n; ++k) v[k] = lo + (hi - lo) * k / (n - 1);
    return v;
}

double grid_spacing(const std::vector<double>& v) {
    return v.size() > 1 ? (v.back() - v.front()) / double(v.size() - 1) : 0.0;
}

/// Location of the cosine maximum nearest `seed` inside [lo, hi].
double cosine_peak(const CosineFit& fit, double lo, double hi, double seed) {
    const double period = 1.0 / fit.freq;
    double best = lo;
    double best_dist = 1e300;
    const long k0 = std::lround((seed * fit.freq * kTwoPi + fit.phase) / kTwoPi);
    for (long k = k0 - 2; k <= k0 + 2; ++k) {
        const double a = (kTwoPi * k - fit.phase) / (kTwoPi * fit.freq);
        if (a < lo - 0.25 * period || a > hi + 0.25 * period) continue;
        if (std::abs(a - seed) < best_dist) {
            best_dist = std::abs(a - seed);
            best = a;
        }
    }
    return std::clamp(best, lo, hi);
}

std::string iso_now() {
    const std::time_t t =
        std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%FT%TZ", std::gmtime(&t));
    return buf;
}

/// Alternating-sign train selection (Appendix-style rule): Y trains when the
/// X duration is a whole number of periods, X trains on half-integer slots.
bool use_y_trains(const LadderConfig& config, const QubitFrame& frame) {
    const double frac = config.timing.t_x / frame.tau_l;
    return std::abs(frac - std::round(frac)) < 0.25;
}

double measure_train(MeasurementBackend& backend, const LadderConfig& config,
                     const PulseParams& params,
                     const std::vector<GateSpec>& gates) {
    const GateSchedule s = compile(gates, config.mode, config.timing, params,
                                   backend.frame());
    return backend.measure_p1(s);
}

CalibrationResult make_result(std::string name, double value, std::string units,
                              double uncertainty, FitDiagnostics diag,
                              SweepGrid grid) {
    CalibrationResult r;
    r.parameter = std::move(name);
    r.value = value;
    r.units = std::move(units);
    r.uncertainty = std::abs(uncertainty);
    r.diagnostics = diag;
    r.sweep = std::move(grid);
    return r;
}

/// Rows: train index 1..n_max. Columns: swept values with `apply` mutating a
/// copy of the base parameters.
SweepGrid sweep_trains(
    MeasurementBackend& backend, const LadderConfig& config,
    const PulseParams& base, int n_max,
    const std::function<std::vector<GateSpec>(int)>& train,
    const std::function<void(PulseParams&, double)>& apply,
    const std::string& axis_name, const std::vector<double>& values,
    const std::string& units) {
    SweepGrid grid;
    std::vector<double> rows(n_max);
    for (int n = 1; n <= n_max; ++n) rows[n - 1] = n;
    grid.axes.push_back({"train_length", rows, "trains"});
    grid.axes.push_back({axis_name, values, units});
    grid.p1.resize(std::size_t(n_max) * values.size());
    for (int n = 1; n <= n_max; ++n) {
        const std::vector<GateSpec> gates = train(n);
        for (std::size_t j = 0; j < values.size(); ++j) {
            PulseParams p = base;
            apply(p, values[j]);
            grid.at(n - 1, j) = measure_train(backend, config, p, gates);
        }
    }
    return grid;
}

}  // namespace

SimBackend::SimBackend(EigenSystem nominal, DistortionConfig d, int shots_,
                       std::uint64_t seed)
    : distortion(d),
      shots(shots_),
      nominal_(std::move(nominal)),
      distorted_(nominal_),
      frame_(qubit_frame(nominal_)),
      rng_(seed) {
    for (int k = 1; k < distorted_.dim; ++k)
        distorted_.energies_ghz(k) += distortion.freq_offset_ghz;
}

void SimBackend::retime(double omega_drive) {
    frame_.omega01 = omega_drive;
    frame_.tau_l = kTwoPi / omega_drive;
    frame_.tau_half = 0.5 * frame_.tau_l;
    frame_.tau_quarter = 0.25 * frame_.tau_l;
}

GateSchedule SimBackend::distort(const GateSchedule& schedule) const {
    GateSchedule out = schedule;
    for (DrivePulse& p : out.pulses) {
        p.amp_charge *= distortion.charge_amp_scale;
        p.amp_flux *= distortion.flux_amp_scale;
        p.flux_delay += distortion.flux_delay_skew;
        p.rel_phase -= distortion.flux_phase_offset;
        // Drive-gated frequency shift: equivalent to the drive appearing
        // detuned while the pulse is on.
        p.detuning -= kTwoPi * distortion.stark_shift_ghz;
    }
    return out;
}

double SimBackend::measure_p1(const GateSchedule& schedule) {
    // Distortions were fixed at construction; refresh the level shift in case
    // the caller edited the config afterwards.
    for (int k = 1; k < distorted_.dim; ++k)
        distorted_.energies_ghz(k) =
            nominal_.energies_ghz(k) + distortion.freq_offset_ghz;
    const GateSchedule seen = distort(schedule);
    const double h = step > 0 ? step : frame_.tau_l / 256.0;
    double p1;
    if (coherence) {
        DensityMatrix rho = DensityMatrix::Zero(distorted_.dim, distorted_.dim);
        rho(0, 0) = 1.0;
        rho = propagate_density(distorted_, seen, rho, h, coherence);
        p1 = std::clamp(std::real(rho(1, 1)), 0.0, 1.0);
    } else {
        StateVector psi = StateVector::Zero(distorted_.dim);
        psi(0) = 1.0;
        const PropagationResult r = propagate(distorted_, seen, psi, h);
        p1 = std::clamp(std::norm(r.state(1)), 0.0, 1.0);
    }
    if (shots <= 0) return p1;
    std::binomial_distribution<int> dist(shots, p1);
    return double(dist(rng_)) / shots;
}

DensityMatrix SimBackend::final_density(const GateSchedule& schedule) {
    for (int k = 1; k < distorted_.dim; ++k)
        distorted_.energies_ghz(k) =
            nominal_.energies_ghz(k) + distortion.freq_offset_ghz;
    const GateSchedule seen = distort(schedule);
    const double h = step > 0 ? step : frame_.tau_l / 256.0;
    DensityMatrix rho;
    if (coherence) {
        rho = DensityMatrix::Zero(distorted_.dim, distorted_.dim);
        rho(0, 0) = 1.0;
        rho = propagate_density(distorted_, seen, rho, h, coherence);
    } else {
        StateVector psi = StateVector::Zero(distorted_.dim);
        psi(0) = 1.0;
        const PropagationResult r = propagate(distorted_, seen, psi, h);
        rho = r.state * r.state.adjoint();
    }
    const Unitary r = rotating_frame_factor(distorted_.dim, frame_.omega01,
                                            schedule.duration);
    return r * rho * r.adjoint();
}

Unitary SimBackend::rotating_unitary(const GateSchedule& schedule) const {
    const GateSchedule seen = distort(schedule);
    const double h = step > 0 ? step : frame_.tau_l / 256.0;
    StateVector psi = StateVector::Zero(distorted_.dim);
    psi(0) = 1.0;
    const PropagationResult r = propagate(distorted_, seen, psi, h);
    return to_rotating_frame(r.unitary, frame_.omega01, 0.0, schedule.duration);
}

std::size_t SweepGrid::size() const {
    std::size_t n = axes.empty() ? 0 : 1;
    for (const SweepAxis& a : axes) n *= a.values.size();
    return n;
}

double& SweepGrid::at(std::size_t row, std::size_t col) {
    return p1[row * axes.at(1).values.size() + col];
}

double SweepGrid::at(std::size_t row, std::size_t col) const {
    return p1[row * axes.at(1).values.size() + col];
}

std::string SweepGrid::to_csv() const {
    std::ostringstream out;
    out.precision(12);
    for (std::size_t a = 0; a < axes.size(); ++a)
        out << axes[a].name << "_" << axes[a].units << ",";
    out << "p1\n";
    std::vector<std::size_t> idx(axes.size(), 0);
    for (std::size_t flat = 0; flat < p1.size(); ++flat) {
        std::size_t rest = flat;
        for (std::size_t a = axes.size(); a-- > 0;) {
            idx[a] = rest % axes[a].values.size();
            rest /= axes[a].values.size();
        }
        for (std::size_t a = 0; a < axes.size(); ++a)
            out << axes[a].values[idx[a]] << ",";
        out << p1[flat] << "\n";
    }
    return out.str();
}

ProductFit gaussian_product_fit(const SweepGrid& grid, const std::string& axis) {
    if (grid.axes.size() != 2)
        throw std::invalid_argument("gaussian_product_fit needs a 2-D grid");
    if (grid.axes[0].name != "train_length" || grid.axes[1].name != axis)
        throw std::invalid_argument("expected axes (train_length, " + axis + ")");
    const std::size_t rows = grid.axes[0].values.size();
    const std::size_t cols = grid.axes[1].values.size();
    std::vector<double> product(cols, 1.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            product[c] *= 1.0 - grid.at(r, c);
    // Fit the contiguous main lobe around the peak; asymmetric far wings of
    // the product would otherwise bias the Gaussian center.
    const std::size_t peak =
        std::max_element(product.begin(), product.end()) - product.begin();
    const double lo = *std::min_element(product.begin(), product.end());
    const double cut = lo + 0.2 * (product[peak] - lo);
    std::size_t first = peak, last = peak;
    while (first > 0 && product[first - 1] > cut) --first;
    while (last + 1 < cols && product[last + 1] > cut) ++last;
    std::vector<double> xs(grid.axes[1].values.begin() + first,
                           grid.axes[1].values.begin() + last + 1);
    std::vector<double> ys(product.begin() + first, product.begin() + last + 1);
    if (xs.size() < 7) {
        xs = grid.axes[1].values;
        ys = product;
    }
    const GaussianFit fit = fit_gaussian(xs, ys);
    if (fit.diag.residual_norm > 0.2)
        throw FitFailure("gaussian product fit residual too large");
    ProductFit out;
    out.center = fit.center;
    out.width = std::abs(fit.width);
    out.diag = fit.diag;
    return out;
}

PulseParams nominal_params(const EigenSystem& eig, const LadderConfig& config) {
    PulseParams p;
    p.carrier_freq = eig.omega01();
    p.carrier_phase = kTwoPi / 4.0;  // X axis under the realized convention
    DrivePulse proto;
    proto.duration = config.timing.t_x;
    proto.rise_fall = p.rise_fall;
    proto.plateau = p.plateau;
    set_amplitudes_for_area(proto, eig, config.scheme, kTwoPi / 4.0);
    p.amp_charge = proto.amp_charge;
    p.amp_flux = proto.amp_flux;
    p.rel_phase = proto.rel_phase;
    return p;
}

CalibrationResult rough_amplitude(MeasurementBackend& backend,
                                  const LadderConfig& config, PulseParams& params,
                                  DriveLine line) {
    const EigenSystem& eig = backend.eigensystem();
    // Analytic single-line pi/2 guess sets the sweep range.
    DrivePulse proto;
    proto.duration = config.timing.t_x;
    proto.rise_fall = params.rise_fall;
    proto.plateau = params.plateau;
    const DriveScheme guess_scheme =
        line == DriveLine::Flux ? DriveScheme::Flux : DriveScheme::Charge;
    set_amplitudes_for_area(proto, eig, guess_scheme, kTwoPi / 4.0);
    const double guess =
        line == DriveLine::Flux ? proto.amp_flux : proto.amp_charge;

    const bool scale_mode = line == DriveLine::Both;
    const std::vector<double> values =
        scale_mode ? linspace(0.2, 1.8, config.sweep_points)
                   : linspace(0.05 * guess, 2.0 * guess, config.sweep_points);

    SweepGrid grid;
    grid.axes.push_back({"train_length", {2.0}, "pulses"});
    grid.axes.push_back({scale_mode ? "amp_scale" : "amplitude", values,
                         scale_mode ? "ratio" : "rad/ns"});
    grid.p1.resize(values.size());
    const std::vector<GateSpec> gates{GateSpec::xp(), GateSpec::xp()};
    for (std::size_t j = 0; j < values.size(); ++j) {
        PulseParams p = params;
        switch (line) {
            case DriveLine::Charge:
                p.amp_charge = values[j];
                p.amp_flux = 0.0;
                break;
            case DriveLine::Flux:
                p.amp_charge = 0.0;
                p.amp_flux = values[j];
                break;
            case DriveLine::Both:
                p.amp_charge *= values[j];
                p.amp_flux *= values[j];
                break;
        }
        grid.at(0, j) = measure_train(backend, config, p, gates);
    }

    std::vector<double> y(grid.p1.begin(), grid.p1.end());
    const CosineFit fit = fit_cosine(values, y);
    if (fit.diag.r_squared < 0.9)
        throw FitFailure("rough amplitude cosine fit r^2 < 0.9");
    const std::size_t argmax =
        std::max_element(y.begin(), y.end()) - y.begin();
    const double peak = cosine_peak(fit, values.front(), values.back(),
                                    values[argmax]);
    const double unc =
        std::max(grid_spacing(values) * 0.05, fit.diag.residual_norm / fit.freq);

    // A single line alone must supply the full pi/2 area; in circular mode it
    // carries half of it, so the per-line setting is half the fitted peak.
    const double per_line =
        config.scheme == DriveScheme::Circular ? 0.5 * peak : peak;
    switch (line) {
        case DriveLine::Charge:
            params.amp_charge = per_line;
            break;
        case DriveLine::Flux:
            params.amp_flux = per_line;
            break;
        case DriveLine::Both:
            params.amp_charge *= peak;
            params.amp_flux *= peak;
            break;
    }
    const std::string name = line == DriveLine::Charge  ? "amp_charge"
                             : line == DriveLine::Flux  ? "amp_flux"
                                                        : "amp_scale";
    return make_result(name, peak, scale_mode ? "ratio" : "rad/ns", unc,
                       fit.diag, std::move(grid));
}

CalibrationResult detuning_calibration(MeasurementBackend& backend,
                                       const LadderConfig& config,
                                       PulseParams& params, int n_max) {
    const bool y_trains = use_y_trains(config, backend.frame());
    auto train = [&](int n) {
        std::vector<GateSpec> gates;
        for (int k = 0; k < n; ++k) {
            gates.push_back(y_trains ? GateSpec::yp() : GateSpec::xp());
            gates.push_back(y_trains ? GateSpec::ym() : GateSpec::xm());
        }
        return gates;
    };
    // Strong drives can push the optimum (Stark shift) outside the initial
    // window; re-center on the edge and sweep again until it is interior.
    std::vector<double> values;
    SweepGrid grid;
    ProductFit fit;
    double span = config.detuning_span;
    for (int attempt = 0; attempt < 12; ++attempt) {
        values = linspace(params.detuning - span, params.detuning + span,
                          config.sweep_points);
        grid = sweep_trains(
            backend, config, params, n_max, train,
            [](PulseParams& p, double d) { p.detuning = d; }, "detuning",
            values, "rad/ns");
        fit = gaussian_product_fit(grid, "detuning");
        params.detuning = std::clamp(fit.center, values.front(), values.back());
        const double step = grid_spacing(values);
        const bool interior = params.detuning > values.front() + step &&
                              params.detuning < values.back() - step;
        if (interior && span == config.detuning_span) break;
        // Railed: widen and re-center. Interior in a widened window: one more
        // sweep at the configured resolution.
        span = interior ? config.detuning_span
                        : std::min(2.0 * span, 64.0 * config.detuning_span);
    }
    const double unc = std::max(fit.width * fit.diag.residual_norm,
                                grid_spacing(values) * 0.02);
    return make_result("detuning", params.detuning, "rad/ns", unc, fit.diag,
                       grid);
}

CalibrationResult precise_amplitude(MeasurementBackend& backend,
                                    const LadderConfig& config,
                                    PulseParams& params) {
    // Pseudo-identity loop over {X+, Y+, X-, Y-}, truncated to 3n pulses.
    static const GateSpec cycle[4] = {GateSpec::xp(), GateSpec::yp(),
                                      GateSpec::xm(), GateSpec::ym()};
    auto train = [](int n) {
        std::vector<GateSpec> gates;
        for (int k = 0; k < 3 * n; ++k) gates.push_back(cycle[k % 4]);
        return gates;
    };
    const std::vector<double> values = linspace(0.97, 1.03, config.sweep_points);
    // If the rough setting is off by more than the +/-3% window, the optimum
    // rails at an edge; apply the clamped correction and sweep again.
    SweepGrid grid;
    ProductFit fit;
    double scale = 1.0;
    for (int attempt = 0; attempt < 6; ++attempt) {
        const double amp_c = params.amp_charge;
        const double amp_f = params.amp_flux;
        grid = sweep_trains(
            backend, config, params, config.train_max, train,
            [&](PulseParams& p, double s) {
                p.amp_charge = amp_c * s;
                p.amp_flux = amp_f * s;
            },
            "amp_scale", values, "ratio");
        fit = gaussian_product_fit(grid, "amp_scale");
        const double step_scale =
            std::clamp(fit.center, values.front(), values.back());
        params.amp_charge = amp_c * step_scale;
        params.amp_flux = amp_f * step_scale;
        scale *= step_scale;
        const double step = grid_spacing(values);
        if (step_scale > values.front() + step &&
            step_scale < values.back() - step)
            break;
    }
    const double unc = std::max(fit.width * fit.diag.residual_norm,
                                grid_spacing(values) * 0.02);
    return make_result("amp_scale", scale, "ratio", unc, fit.diag, grid);
}

CalibrationResult relative_phase_calibration(MeasurementBackend& backend,
                                             const LadderConfig& config,
                                             PulseParams& params) {
    const EigenSystem& eig = backend.eigensystem();
    const double n01 = std::abs(eig.n_elem(0, 1));
    const double omega_rabi = 2.0 * params.amp_charge * n01;  // at Delta-phi=90deg
    const int n_phases = 13;
    const int n_times = 33;
    const double t_max = 6.0 * kTwoPi / std::max(omega_rabi, 1e-6);

    SweepGrid grid;
    std::vector<double> phases(n_phases), times(n_times);
    for (int k = 0; k < n_phases; ++k) phases[k] = kTwoPi * k / n_phases;
    for (int k = 0; k < n_times; ++k) times[k] = t_max * (k + 1) / n_times;
    grid.axes.push_back({"rel_phase", phases, "rad"});
    grid.axes.push_back({"plateau", times, "ns"});
    grid.p1.resize(std::size_t(n_phases) * n_times);

    std::vector<double> rabi(n_phases);
    for (int i = 0; i < n_phases; ++i) {
        std::vector<double> p1(n_times);
        for (int k = 0; k < n_times; ++k) {
            DrivePulse pulse;
            pulse.amp_charge = params.amp_charge;
            pulse.amp_flux = params.amp_flux;
            pulse.rel_phase = phases[i];
            pulse.carrier_freq = params.carrier_freq;
            pulse.carrier_phase = params.carrier_phase;
            pulse.flux_delay = params.flux_delay;
            pulse.duration = times[k];
            pulse.plateau = times[k];  // rectangle
            GateSchedule s;
            s.pulses.push_back(pulse);
            s.duration = times[k];
            p1[k] = backend.measure_p1(s);
            grid.at(i, k) = p1[k];
        }
        // p1 oscillates at twice the generalized Rabi coupling.
        rabi[i] = kTwoPi / 2.0 * dominant_frequency(times, p1);
    }

    // Near the null p1 barely moves and its DFT frequency is meaningless;
    // only rows with a visible oscillation enter the fit.
    std::vector<double> fit_phases, fit_rabi;
    for (int i = 0; i < n_phases; ++i) {
        double lo = 1.0, hi = 0.0;
        for (int k = 0; k < n_times; ++k) {
            lo = std::min(lo, grid.at(i, k));
            hi = std::max(hi, grid.at(i, k));
        }
        if (hi - lo > 0.1) {
            fit_phases.push_back(phases[i]);
            fit_rabi.push_back(rabi[i]);
        }
    }
    if (fit_phases.size() < 5)
        throw FitFailure("relative phase sweep shows no Rabi oscillations");

    // Omega_tilde(phi) = (F/2) sqrt((1 + cos(phi - pi/2 - phi0)) / 2).
    auto model = [](const Eigen::VectorXd& q, double phi) {
        const double c = std::cos(phi - kTwoPi / 4.0 - q(1));
        return 0.5 * q(0) * std::sqrt(std::max(0.0, 0.5 * (1.0 + c)));
    };
    Eigen::VectorXd init(2);
    init << omega_rabi, 0.0;
    FitDiagnostics diag;
    const Eigen::VectorXd fitted =
        levenberg_marquardt(model, fit_phases, fit_rabi, init, &diag);
    double phi0 = std::remainder(fitted(1), kTwoPi);
    params.rel_phase = phi0 + kTwoPi / 4.0;
    const double unc = std::max(diag.residual_norm / std::abs(fitted(0)), 1e-4);
    return make_result("rel_phase", params.rel_phase, "rad", unc, diag, grid);
}

CalibrationResult relative_delay_calibration(MeasurementBackend& backend,
                                             const LadderConfig& config,
                                             PulseParams& params) {
    // A residual counter-rotating term makes the outcome of a single gate
    // depend on where the pulse starts within the Larmor period, while
    // co-rotating imperfections shift all start times together. The spread
    // of p1 over start offsets therefore isolates the counter-rotating
    // cancellation, which is best when the two line envelopes arrive
    // together, independent of any residual phase or detuning miscalibration.
    const double tau_l = backend.frame().tau_l;
    const std::vector<double> offsets = linspace(0.0, tau_l * 7.0 / 8.0, 8);
    const std::vector<double> values =
        linspace(params.flux_delay - 0.5, params.flux_delay + 0.5,
                 std::max(config.sweep_points, 61));

    auto p1_at = [&](double t0, double delay) {
        DrivePulse pulse;
        pulse.amp_charge = params.amp_charge;
        pulse.amp_flux = params.amp_flux;
        pulse.rel_phase = params.rel_phase;
        pulse.carrier_freq = params.carrier_freq;
        pulse.carrier_phase = params.carrier_phase;
        pulse.detuning = params.detuning;
        pulse.start = t0;
        pulse.duration = config.timing.t_x;
        pulse.flux_delay = delay;
        GateSchedule s;
        s.pulses.push_back(pulse);
        s.duration = t0 + pulse.duration;
        return backend.measure_p1(s);
    };
    auto spread_at = [&](double delay) {
        double lo = 1.0, hi = 0.0;
        for (double t0 : offsets) {
            const double v = p1_at(t0, delay);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        return hi - lo;
    };

    SweepGrid grid;
    grid.axes.push_back({"start_offset", offsets, "ns"});
    grid.axes.push_back({"flux_delay", values, "ns"});
    grid.p1.resize(offsets.size() * values.size());
    std::vector<double> spread(values.size());
    for (std::size_t j = 0; j < values.size(); ++j) {
        double lo = 1.0, hi = 0.0;
        for (std::size_t r = 0; r < offsets.size(); ++r) {
            const double v = p1_at(offsets[r], values[j]);
            grid.at(r, j) = v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        spread[j] = hi - lo;
    }

    const std::size_t jmin =
        std::min_element(spread.begin(), spread.end()) - spread.begin();
    if (jmin == 0 || jmin + 1 == values.size())
        throw FitFailure("delay sweep minimum at the edge of the scan");

    // Golden-section refinement of the spread minimum between the grid
    // neighbours of the coarse minimum.
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = values[jmin - 1], b = values[jmin + 1];
    double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
    double f1 = spread_at(x1), f2 = spread_at(x2);
    while (b - a > 1e-4) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - gr * (b - a);
            f1 = spread_at(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + gr * (b - a);
            f2 = spread_at(x2);
        }
    }
    params.flux_delay = 0.5 * (a + b);

    FitDiagnostics diag;
    diag.residual_norm = std::min(f1, f2);
    diag.r_squared = 1.0;
    const double unc = std::max(1e-3, 0.05 * grid_spacing(values));
    return make_result("flux_delay", params.flux_delay, "ns", unc, diag, grid);
}

CalibrationResult relative_amplitude_balance(MeasurementBackend& backend,
                                             const LadderConfig& config,
                                             PulseParams& params) {
    // Counter-rotating drive: co-rotating rel_phase minus pi; flat top equal
    // to three pulse widths.
    const double width = config.timing.t_x;
    const std::vector<double> values =
        linspace(0.8 * params.amp_flux, 1.2 * params.amp_flux,
                 std::max(config.sweep_points, 61));
    SweepGrid grid;
    grid.axes.push_back({"train_length", {1.0}, "pulses"});
    grid.axes.push_back({"amp_flux", values, "rad/ns"});
    grid.p1.resize(values.size());
    for (std::size_t j = 0; j < values.size(); ++j) {
        DrivePulse pulse;
        pulse.amp_charge = params.amp_charge;
        pulse.amp_flux = values[j];
        pulse.rel_phase = params.rel_phase - kTwoPi / 2.0;
        pulse.carrier_freq = params.carrier_freq;
        pulse.carrier_phase = params.carrier_phase;
        pulse.flux_delay = params.flux_delay;
        pulse.duration = 4.0 * width;
        pulse.plateau = 3.0 * width;
        pulse.rise_fall = width;
        GateSchedule s;
        s.pulses.push_back(pulse);
        s.duration = pulse.duration;
        grid.at(0, j) = backend.measure_p1(s);
    }
    std::vector<double> p0(values.size());
    for (std::size_t j = 0; j < values.size(); ++j) p0[j] = 1.0 - grid.at(0, j);
    const GaussianFit fit = fit_gaussian(values, p0);
    if (fit.a <= 0 || fit.diag.r_squared < 0.8)
        throw FitFailure("amplitude balance sweep has no null");
    params.amp_flux = std::clamp(fit.center, values.front(), values.back());
    const double unc = std::max(std::abs(fit.width) * fit.diag.residual_norm,
                                grid_spacing(values) * 0.02);
    return make_result("amp_flux", params.amp_flux, "rad/ns", unc, fit.diag,
                       grid);
}

CalibrationResult optimize_carrier_phase(SimBackend& backend,
                                         const LadderConfig& config,
                                         PulseParams& params) {
    const Eigen::Matrix2cd sx = (Eigen::Matrix2cd() << 0, 1, 1, 0).finished();
    const Eigen::Matrix2cd sy =
        (Eigen::Matrix2cd() << 0, std::complex<double>(0, -1),
         std::complex<double>(0, 1), 0)
            .finished();
    const std::complex<double> i1(0, 1);
    const Eigen::Matrix2cd target_x =
        (std::cos(kTwoPi / 8.0) * Eigen::Matrix2cd::Identity() -
         i1 * std::sin(kTwoPi / 8.0) * sx);
    const Eigen::Matrix2cd target_y =
        (std::cos(kTwoPi / 8.0) * Eigen::Matrix2cd::Identity() -
         i1 * std::sin(kTwoPi / 8.0) * sy);

    auto objective = [&](double phi) {
        PulseParams p = params;
        p.carrier_phase = phi;
        const std::vector<GateSpec> gx{GateSpec::xp()};
        const std::vector<GateSpec> gy{GateSpec::yp()};
        const Unitary ux = backend.rotating_unitary(
            compile(gx, config.mode, config.timing, p, backend.frame()));
        const Unitary uy = backend.rotating_unitary(
            compile(gy, config.mode, config.timing, p, backend.frame()));
        return 0.5 * (average_gate_fidelity(ux, target_x) +
                      average_gate_fidelity(uy, target_y));
    };

    // Coarse scan over one period, then golden-section refinement.
    const int coarse = 32;
    double best_phi = params.carrier_phase;
    double best_val = -1;
    for (int k = 0; k < coarse; ++k) {
        const double phi = params.carrier_phase - kTwoPi / 2.0 +
                           kTwoPi * k / coarse;
        const double v = objective(phi);
        if (v > best_val) {
            best_val = v;
            best_phi = phi;
        }
    }
    double lo = best_phi - kTwoPi / coarse;
    double hi = best_phi + kTwoPi / coarse;
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
    double fc = objective(c), fd = objective(d);
    int iters = 0;
    while (hi - lo > 1e-6 && iters < 60) {
        if (fc > fd) {
            hi = d;
            d = c;
            fd = fc;
            c = hi - gr * (hi - lo);
            fc = objective(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + gr * (hi - lo);
            fd = objective(d);
        }
        ++iters;
    }
    params.carrier_phase = 0.5 * (lo + hi);
    FitDiagnostics diag;
    diag.iterations = iters;
    diag.residual_norm = 1.0 - objective(params.carrier_phase);
    SweepGrid grid;
    grid.axes.push_back({"carrier_phase", {params.carrier_phase}, "rad"});
    return make_result("carrier_phase", params.carrier_phase, "rad",
                       0.5 * (hi - lo), diag, grid);
}

namespace {

/// Axis-angle decomposition of the qubit block of a rotating-frame unitary,
/// projected onto SU(2) so a little leakage does not spoil the residuals.
struct AxisAngle {
    double angle = 0;
    double nx = 0, ny = 0, nz = 0;
};

AxisAngle axis_angle(const Unitary& full) {
    Eigen::Matrix2cd u = full.topLeftCorner<2, 2>();
    const Eigen::JacobiSVD<Eigen::Matrix2cd> svd(
        u, Eigen::ComputeFullU | Eigen::ComputeFullV);
    u = svd.matrixU() * svd.matrixV().adjoint();
    u /= std::sqrt(u.determinant());
    AxisAngle out;
    const double c = std::clamp(u.trace().real() / 2.0, -1.0, 1.0);
    const double half = std::acos(c);
    out.angle = 2.0 * half;
    const double s = std::sin(half);
    if (std::abs(s) < 1e-12) return out;
    const std::complex<double> i1(0, 1);
    const Eigen::Matrix2cd v =
        (u - c * Eigen::Matrix2cd::Identity()) / (-i1 * s);
    out.nx = v(0, 1).real();
    out.ny = -v(0, 1).imag();
    out.nz = v(0, 0).real();
    return out;
}

}  // namespace

CalibrationResult refine_commensurate_gate(SimBackend& backend,
                                           const LadderConfig& config,
                                           PulseParams& params) {
    // Lattice-locked pulses share one rotating-frame unitary, so the X gate
    // can be driven onto the exact quarter rotation with the three knobs the
    // hardware exposes: per-pulse detuning (axis tilt), drive amplitude
    // (rotation angle) and absolute carrier phase (equatorial axis). Y and
    // negative gates are quarter-period translates of the same waveform and
    // inherit the result. Off the lattice the windowed unitary changes with
    // the start time, so no single-gate refinement is meaningful there.
    if (config.mode != LatticeMode::Commensurate)
        throw std::invalid_argument(
            "gate refinement requires commensurate scheduling");

    auto probe = [&](double detuning, double amp_scale,
                     double phase) -> Eigen::Vector3d {
        PulseParams p = params;
        p.detuning = detuning;
        p.amp_charge *= amp_scale;
        p.amp_flux *= amp_scale;
        p.carrier_phase = phase;
        const std::vector<GateSpec> gx{GateSpec::xp()};
        const AxisAngle a = axis_angle(backend.rotating_unitary(
            compile(gx, config.mode, config.timing, p, backend.frame())));
        return {a.angle - kTwoPi / 4.0, a.nz, a.ny};
    };

    // The drive-induced frequency shift can put the tilt zero far outside any
    // local neighbourhood of the incoming detuning; bracket it with a coarse
    // scan before handing over to Newton.
    const double omega = backend.frame().omega01;
    double seed = params.detuning;
    {
        const int n = 49;
        const double span = 0.3 * omega;
        double prev_d = 0, prev_nz = 0;
        bool have_prev = false, bracketed = false;
        double best_gap = std::numeric_limits<double>::infinity();
        double lo = 0, hi = 0;
        for (int k = 0; k < n; ++k) {
            const double d = params.detuning - span + 2.0 * span * k / (n - 1);
            const double nz = probe(d, 1.0, params.carrier_phase)[1];
            if (have_prev && prev_nz * nz <= 0.0) {
                const double mid = 0.5 * (prev_d + d);
                if (std::abs(mid - params.detuning) < best_gap) {
                    best_gap = std::abs(mid - params.detuning);
                    lo = prev_d;
                    hi = d;
                    bracketed = true;
                }
            }
            prev_d = d;
            prev_nz = nz;
            have_prev = true;
        }
        if (bracketed) {
            double flo = probe(lo, 1.0, params.carrier_phase)[1];
            for (int k = 0; k < 20; ++k) {
                const double mid = 0.5 * (lo + hi);
                const double fm = probe(mid, 1.0, params.carrier_phase)[1];
                if (flo * fm <= 0.0)
                    hi = mid;
                else {
                    lo = mid;
                    flo = fm;
                }
            }
            seed = 0.5 * (lo + hi);
        }
    }

    // Damped Newton on (detuning, amplitude scale, carrier phase) with a
    // finite-difference Jacobian; the knobs couple strongly because the
    // carrier phase reshapes the lattice-locked waveform.
    Eigen::Vector3d x(seed, 1.0, params.carrier_phase);
    auto resid = [&](const Eigen::Vector3d& v) {
        return probe(v[0], v[1], v[2]);
    };
    Eigen::Vector3d f = resid(x);
    const double initial = f.norm();
    int iters = 0;
    for (; iters < 40 && f.norm() > 1e-11; ++iters) {
        Eigen::Matrix3d jac;
        const double h = 1e-6;
        for (int k = 0; k < 3; ++k) {
            Eigen::Vector3d xh = x;
            xh[k] += h;
            jac.col(k) = (resid(xh) - f) / h;
        }
        const Eigen::Vector3d dx = jac.fullPivLu().solve(f);
        double damp = 1.0;
        while (damp > 1e-4 && resid(x - damp * dx).norm() > f.norm())
            damp *= 0.5;
        if (damp <= 1e-4) break;
        x -= damp * dx;
        f = resid(x);
    }
    if (f.norm() <= initial) {
        params.detuning = x[0];
        params.amp_charge *= x[1];
        params.amp_flux *= x[1];
        params.carrier_phase = x[2];
    } else {
        f = resid({params.detuning, 1.0, params.carrier_phase});
    }

    FitDiagnostics diag;
    diag.iterations = iters;
    diag.residual_norm = f.norm();
    SweepGrid grid;
    grid.axes.push_back({"detuning", {params.detuning}, "rad/ns"});
    return make_result("detuning", params.detuning, "rad/ns", std::abs(f[1]),
                       diag, grid);
}

CalibrationReport run_full_ladder(SimBackend& backend, const LadderConfig& config,
                                  PulseParams params) {
    CalibrationReport report;
    report.started_at = iso_now();

    if (config.scheme == DriveScheme::Circular) {
        report.results.push_back(
            rough_amplitude(backend, config, params, DriveLine::Charge));
        report.results.push_back(
            rough_amplitude(backend, config, params, DriveLine::Flux));
    } else {
        report.results.push_back(rough_amplitude(
            backend, config, params,
            config.scheme == DriveScheme::Charge ? DriveLine::Charge
                                                 : DriveLine::Flux));
    }
    report.results.push_back(
        detuning_calibration(backend, config, params, config.train_max));
    report.results.push_back(precise_amplitude(backend, config, params));
    if (config.scheme == DriveScheme::Circular) {
        report.results.push_back(
            relative_phase_calibration(backend, config, params));
        report.results.push_back(
            relative_delay_calibration(backend, config, params));
        report.results.push_back(
            relative_amplitude_balance(backend, config, params));
        // Balance rescales one line; re-center the overall rotation angle.
        report.results.push_back(precise_amplitude(backend, config, params));
    }
    report.results.push_back(optimize_carrier_phase(backend, config, params));
    if (config.mode == LatticeMode::Commensurate)
        report.results.push_back(
            refine_commensurate_gate(backend, config, params));

    report.params = params;
    report.finished_at = iso_now();
    std::ostringstream cfg;
    cfg << backend.distortion.charge_amp_scale << "|"
        << backend.distortion.flux_amp_scale << "|"
        << backend.distortion.flux_delay_skew << "|"
        << backend.distortion.flux_phase_offset << "|"
        << backend.distortion.freq_offset_ghz << "|" << backend.shots << "|"
        << backend.step;
    std::ostringstream hash;
    hash << std::hex << std::hash<std::string>{}(cfg.str());
    report.backend_hash = hash.str();
    return report;
}

std::string CalibrationReport::to_json() const {
    nlohmann::json j;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    j["backend_hash"] = backend_hash;
    j["params"] = {{"amp_charge_rad_ns", params.amp_charge},
                   {"amp_flux_rad_ns", params.amp_flux},
                   {"rel_phase_rad", params.rel_phase},
                   {"carrier_freq_rad_ns", params.carrier_freq},
                   {"carrier_phase_rad", params.carrier_phase},
                   {"detuning_rad_ns", params.detuning},
                   {"rise_fall_ns", params.rise_fall},
                   {"plateau_ns", params.plateau},
                   {"flux_delay_ns", params.flux_delay}};
    j["results"] = nlohmann::json::array();
    for (const CalibrationResult& r : results) {
        nlohmann::json axes = nlohmann::json::array();
        for (const SweepAxis& a : r.sweep.axes)
            axes.push_back({{"name", a.name},
                            {"units", a.units},
                            {"points", a.values.size()}});
        j["results"].push_back({{"parameter", r.parameter},
                                {"value", r.value},
                                {"units", r.units},
                                {"uncertainty", r.uncertainty},
                                {"residual_norm", r.diagnostics.residual_norm},
                                {"iterations", r.diagnostics.iterations},
                                {"r_squared", r.diagnostics.r_squared},
                                {"sweep_axes", axes},
                                {"shots", r.sweep.shots}});
    }
    return j.dump(2);
}

}  // namespace fluxsim
