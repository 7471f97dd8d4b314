#include "fluxsim/pulse.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace fluxsim {

double envelope(const DrivePulse& pulse, double t) {
    if (pulse.duration <= 0) throw InvalidEnvelope("duration must be positive");
    if (pulse.rise_fall > pulse.duration)
        throw InvalidEnvelope("rise_fall exceeds pulse duration");
    const double tp = t - pulse.start;
    if (tp < 0.0 || tp > pulse.duration) return 0.0;
    if (pulse.plateau <= 0.0)
        return 0.5 * (1.0 - std::cos(kTwoPi * tp / pulse.duration));
    const double rise = 0.5 * pulse.rise_fall;
    if (rise <= 0.0) return 1.0;  // rectangle
    if (tp < rise) return 0.5 * (1.0 - std::cos(kTwoPi / 2.0 * tp / rise));
    if (tp > pulse.duration - rise)
        return 0.5 * (1.0 - std::cos(kTwoPi / 2.0 * (pulse.duration - tp) / rise));
    return 1.0;
}

DriveSample waveform(const DrivePulse& pulse, double t) {
    DriveSample s;
    const double ec = envelope(pulse, t);
    // The carrier runs at carrier_freq referenced to absolute time; the
    // detuning is a per-pulse phase ramp starting from the pulse edge, so the
    // drive phase at every pulse start is just carrier_freq * start + phase.
    if (ec != 0.0) {
        const double phase = pulse.carrier_freq * t -
                             pulse.detuning * (t - pulse.start) +
                             pulse.carrier_phase;
        s.charge = pulse.amp_charge * ec * std::cos(phase);
    }
    // The delay moves the flux envelope only; the carrier phase is absolute
    // (an LO-referenced line), so pure phase offsets belong to rel_phase.
    const double ef = envelope(pulse, t - pulse.flux_delay);
    if (ef != 0.0) {
        const double phase = pulse.carrier_freq * t -
                             pulse.detuning * (t - pulse.start) +
                             pulse.carrier_phase - pulse.rel_phase;
        s.flux = pulse.amp_flux * ef * std::cos(phase);
    }
    return s;
}

double CommensurateLattice::snap(double requested_start, Axis axis) const {
    const double shift = offset_x + (axis == Axis::Y ? y_shift : 0.0);
    const double k =
        std::ceil((requested_start - shift) / period - timestamp_resolution / period);
    return std::max(0.0, k) * period + shift;
}

bool CommensurateLattice::contains(double t0, Axis axis) const {
    const double shift = offset_x + (axis == Axis::Y ? y_shift : 0.0);
    const double frac = (t0 - shift) / period;
    return std::abs(frac - std::round(frac)) * period <= timestamp_resolution;
}

double snap_to_lattice(const CommensurateLattice& lattice, double requested_start,
                       Axis axis) {
    return lattice.snap(requested_start, axis);
}

GateSchedule compile(std::span<const GateSpec> gates, LatticeMode mode,
                     const GateTiming& timing, const PulseParams& params,
                     const QubitFrame& frame) {
    if (timing.t_x <= 0) throw std::invalid_argument("t_x must be positive");

    GateSchedule schedule;
    schedule.gap = timing.gap;

    CommensurateLattice lattice;
    lattice.period = kTwoPi / 2.0 /
                     (params.carrier_freq != 0 ? params.carrier_freq : frame.omega01);
    lattice.offset_x = 0.0;
    lattice.y_shift = frame.tau_quarter;

    const bool comm = mode == LatticeMode::Commensurate;
    if (comm) {
        const double frac = timing.t_x / lattice.period;
        if (std::abs(frac - std::round(frac)) * lattice.period >
            lattice.timestamp_resolution)
            throw CommensurabilityViolation(
                "commensurate mode requires t_X to be a multiple of tau_L/2");
        schedule.lattice = lattice;
    }

    DrivePulse proto;
    proto.amp_charge = params.amp_charge;
    proto.amp_flux = params.amp_flux;
    proto.rel_phase = params.rel_phase;
    proto.carrier_freq = params.carrier_freq;
    proto.detuning = params.detuning;
    proto.duration = timing.t_x;
    proto.rise_fall = params.rise_fall;
    proto.plateau = params.plateau;
    proto.flux_delay = params.flux_delay;

    double cursor = 0.0;
    using Kind = GateSpec::Kind;
    for (const GateSpec& gate : gates) {
        switch (gate.kind) {
            case Kind::Z:
                schedule.frame_phase += gate.angle;
                break;
            case Kind::I:
                cursor = (comm ? lattice.snap(cursor, Axis::X) : cursor) +
                         timing.t_x + timing.gap;
                break;
            case Kind::Xp:
            case Kind::Xm: {
                DrivePulse pulse = proto;
                pulse.start = comm ? lattice.snap(cursor, Axis::X) : cursor;
                pulse.carrier_phase = params.carrier_phase - schedule.frame_phase +
                                      (gate.kind == Kind::Xm ? kTwoPi / 2.0 : 0.0);
                schedule.pulses.push_back(pulse);
                cursor = pulse.start + timing.t_x + timing.gap;
                break;
            }
            case Kind::Yp:
            case Kind::Ym: {
                DrivePulse pulse = proto;
                const double base_phase =
                    params.carrier_phase - schedule.frame_phase - kTwoPi / 4.0 +
                    (gate.kind == Kind::Ym ? kTwoPi / 2.0 : 0.0);
                if (comm) {
                    // tau_L/4 identity padding before and after the pulse, so
                    // the Y slot is tau_L/2 longer than an X slot.
                    const double slot = lattice.snap(cursor, Axis::X);
                    pulse.start = slot + frame.tau_quarter;
                    cursor = slot + timing.t_x + frame.tau_half + timing.gap;
                } else {
                    pulse.start = cursor;
                    cursor = pulse.start + timing.t_x + timing.gap;
                }
                pulse.carrier_phase = base_phase;
                schedule.pulses.push_back(pulse);
                break;
            }
        }
    }
    schedule.duration = cursor;
    return schedule;
}

std::vector<ScheduleViolation> verify_schedule(const GateSchedule& schedule) {
    std::vector<ScheduleViolation> violations;
    const auto& pulses = schedule.pulses;
    for (int i = 0; i < static_cast<int>(pulses.size()); ++i) {
        const DrivePulse& p = pulses[i];
        if (p.duration <= 0 || p.rise_fall > p.duration)
            violations.push_back({i, "Envelope"});
        if (i > 0) {
            const DrivePulse& prev = pulses[i - 1];
            if (p.start < prev.start + prev.duration)
                violations.push_back({i, "Ordering"});
            else if (schedule.gap > 0 &&
                     p.start - (prev.start + prev.duration) < schedule.gap - 1e-9)
                violations.push_back({i, "Gap"});
        }
        if (schedule.lattice) {
            if (!schedule.lattice->contains(p.start, Axis::X) &&
                !schedule.lattice->contains(p.start, Axis::Y))
                violations.push_back({i, "Commensurability"});
        }
    }
    return violations;
}

std::string schedule_to_json(const GateSchedule& schedule) {
    nlohmann::json j;
    j["frame_phase_rad"] = schedule.frame_phase;
    j["gap_ns"] = schedule.gap;
    j["duration_ns"] = schedule.duration;
    if (schedule.lattice) {
        j["lattice"] = {{"period_ns", schedule.lattice->period},
                        {"offset_x_ns", schedule.lattice->offset_x},
                        {"y_shift_ns", schedule.lattice->y_shift},
                        {"timestamp_resolution_ns",
                         schedule.lattice->timestamp_resolution}};
    }
    j["pulses"] = nlohmann::json::array();
    for (const DrivePulse& p : schedule.pulses) {
        j["pulses"].push_back({{"amp_charge_rad_ns", p.amp_charge},
                               {"amp_flux_rad_ns", p.amp_flux},
                               {"rel_phase_rad", p.rel_phase},
                               {"carrier_freq_rad_ns", p.carrier_freq},
                               {"carrier_phase_rad", p.carrier_phase},
                               {"detuning_rad_ns", p.detuning},
                               {"start_ns", p.start},
                               {"duration_ns", p.duration},
                               {"plateau_ns", p.plateau},
                               {"rise_fall_ns", p.rise_fall},
                               {"flux_delay_ns", p.flux_delay}});
    }
    return j.dump(2);
}

std::string sampled_waveform_csv(const GateSchedule& schedule, bool flux_line,
                                 double samples_per_ns) {
    std::ostringstream out;
    out.precision(12);
    out << "t_ns,amplitude_rad_ns\n";
    const long n = std::lround(schedule.duration * samples_per_ns);
    for (long k = 0; k <= n; ++k) {
        const double t = k / samples_per_ns;
        double amp = 0.0;
        for (const DrivePulse& p : schedule.pulses) {
            const DriveSample s = waveform(p, t);
            amp += flux_line ? s.flux : s.charge;
        }
        out << t << "," << amp << "\n";
    }
    return out.str();
}

}  // namespace fluxsim
