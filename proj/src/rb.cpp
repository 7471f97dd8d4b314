#include "fluxsim/rb.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

namespace fluxsim {
namespace {

using Eigen::Matrix2cd;
using std::complex;

Matrix2cd axis_rotation(double nx, double ny, double nz, double angle) {
    Matrix2cd n;
    n << complex<double>(nz, 0), complex<double>(nx, -ny),
        complex<double>(nx, ny), complex<double>(-nz, 0);
    return std::cos(angle / 2.0) * Matrix2cd::Identity() -
           complex<double>(0, std::sin(angle / 2.0)) * n;
}

/// Global-phase-invariant fingerprint: divide out the phase of the first
/// entry whose magnitude is within 1e-6 of the maximum, then round.
std::string phase_canonical_key(const Matrix2cd& u) {
    double peak = 0;
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) peak = std::max(peak, std::abs(u(r, c)));
    complex<double> phase = 1.0;
    bool found = false;
    for (int r = 0; r < 2 && !found; ++r)
        for (int c = 0; c < 2 && !found; ++c)
            if (std::abs(u(r, c)) > peak - 1e-6) {
                phase = u(r, c) / std::abs(u(r, c));
                found = true;
            }
    char buf[128];
    std::string key;
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) {
            const complex<double> v = u(r, c) / phase;
            const long re = std::lround(v.real() * 1e6);
            const long im = std::lround(v.imag() * 1e6);
            std::snprintf(buf, sizeof buf, "%ld,%ld;", re == 0 ? 0 : re,
                          im == 0 ? 0 : im);
            key += buf;
        }
    return key;
}

const std::array<GateSpec, 4> kGenerators = {GateSpec::xp(), GateSpec::xm(),
                                             GateSpec::yp(), GateSpec::ym()};

std::string gate_name(const GateSpec& g) {
    using Kind = GateSpec::Kind;
    switch (g.kind) {
        case Kind::I: return "I";
        case Kind::Xp: return "X+";
        case Kind::Xm: return "X-";
        case Kind::Yp: return "Y+";
        case Kind::Ym: return "Y-";
        case Kind::Z: return "Z";
    }
    return "?";
}

}  // namespace

Eigen::Matrix2cd ideal_unitary(const GateSpec& gate) {
    using Kind = GateSpec::Kind;
    const double q = kTwoPi / 4.0;  // quarter turn
    switch (gate.kind) {
        case Kind::I: return Matrix2cd::Identity();
        case Kind::Xp: return axis_rotation(1, 0, 0, q);
        case Kind::Xm: return axis_rotation(1, 0, 0, -q);
        case Kind::Yp: return axis_rotation(0, 1, 0, q);
        case Kind::Ym: return axis_rotation(0, 1, 0, -q);
        case Kind::Z: return axis_rotation(0, 0, 1, gate.angle);
    }
    return Matrix2cd::Identity();
}

double CliffordTable::mean_gates() const {
    std::size_t total = 0;
    for (const auto& d : gates) total += d.size();
    return double(total) / 24.0;
}

int CliffordTable::index_of(const Eigen::Matrix2cd& u) const {
    const std::string key = phase_canonical_key(u);
    for (int k = 0; k < 24; ++k)
        if (phase_canonical_key(unitary[k]) == key) return k;
    throw std::invalid_argument("unitary is not a Clifford element");
}

CliffordTable build_clifford_table() {
    CliffordTable table;
    std::map<std::string, int> seen;
    std::deque<int> frontier;

    table.unitary[0] = Matrix2cd::Identity();
    table.gates[0] = {GateSpec::i()};
    seen[phase_canonical_key(table.unitary[0])] = 0;
    frontier.push_back(0);
    int count = 1;

    while (count < 24 && !frontier.empty()) {
        const int base = frontier.front();
        frontier.pop_front();
        for (const GateSpec& g : kGenerators) {
            const Matrix2cd u = ideal_unitary(g) * table.unitary[base];
            const std::string key = phase_canonical_key(u);
            if (seen.count(key)) continue;
            seen[key] = count;
            table.unitary[count] = u;
            table.gates[count] =
                base == 0 ? std::vector<GateSpec>{} : table.gates[base];
            table.gates[count].push_back(g);
            frontier.push_back(count);
            ++count;
        }
    }
    if (count != 24)
        throw std::logic_error("Clifford generation closed early");

    for (int a = 0; a < 24; ++a) {
        for (int b = 0; b < 24; ++b) {
            const std::string key =
                phase_canonical_key(table.unitary[a] * table.unitary[b]);
            table.product[a][b] = seen.at(key);
        }
        table.inverse[a] = seen.at(phase_canonical_key(
            Matrix2cd(table.unitary[a].adjoint())));
    }
    return table;
}

RBSequence draw_sequence(const CliffordTable& table, int m, std::uint64_t seed,
                         std::optional<GateSpec> interleave) {
    if (m < 1) throw std::invalid_argument("sequence length must be >= 1");
    RBSequence seq;
    seq.interleave = interleave;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, 23);

    const int inter_idx =
        interleave ? table.index_of(ideal_unitary(*interleave)) : -1;
    int acc = 0;  // composed index in time order
    for (int k = 0; k < m; ++k) {
        const int c = pick(rng);
        seq.cliffords.push_back(c);
        acc = table.product[c][acc];
        if (inter_idx >= 0) acc = table.product[inter_idx][acc];
    }
    seq.recovery = table.inverse[acc];
    return seq;
}

std::vector<GateSpec> flatten(const CliffordTable& table, const RBSequence& seq) {
    std::vector<GateSpec> out;
    for (int c : seq.cliffords) {
        out.insert(out.end(), table.gates[c].begin(), table.gates[c].end());
        if (seq.interleave) out.push_back(*seq.interleave);
    }
    out.insert(out.end(), table.gates[seq.recovery].begin(),
               table.gates[seq.recovery].end());
    return out;
}

std::vector<GateSpec> rb_sequence(const CliffordTable& table, int m,
                                  std::uint64_t seed,
                                  std::optional<GateSpec> interleave) {
    return flatten(table, draw_sequence(table, m, seed, interleave));
}

Eigen::Matrix2cd SyntheticExecutor::run(const CliffordTable& table,
                                        const RBSequence& seq) {
    Matrix2cd rho = Matrix2cd::Zero();
    rho(0, 0) = 1.0;

    auto apply = [&](const GateSpec& g, double lambda) {
        using Kind = GateSpec::Kind;
        Matrix2cd u;
        const double q = kTwoPi / 4.0 + over_rotation;
        switch (g.kind) {
            case Kind::Xp: u = axis_rotation(1, 0, 0, q); break;
            case Kind::Xm: u = axis_rotation(1, 0, 0, -q); break;
            case Kind::Yp: u = axis_rotation(0, 1, 0, q); break;
            case Kind::Ym: u = axis_rotation(0, 1, 0, -q); break;
            default: u = ideal_unitary(g); break;
        }
        rho = u * rho * u.adjoint();
        if (lambda > 0)
            rho = (1.0 - lambda) * rho +
                  lambda * 0.5 * rho.trace() * Matrix2cd::Identity();
    };

    for (int c : seq.cliffords) {
        for (const GateSpec& g : table.gates[c]) apply(g, depolarizing);
        if (seq.interleave)
            apply(*seq.interleave, depolarizing + interleave_depolarizing);
    }
    for (const GateSpec& g : table.gates[seq.recovery]) apply(g, depolarizing);
    return rho;
}

Eigen::Matrix2cd PulseExecutor::run(const CliffordTable& table,
                                    const RBSequence& seq) {
    const std::vector<GateSpec> gates = flatten(table, seq);
    const GateSchedule schedule =
        compile(gates, mode_, timing_, params_, backend_.frame());
    const DensityMatrix rho = backend_.final_density(schedule);
    return rho.topLeftCorner<2, 2>();
}

RBDataset run_rb(RBExecutor& executor, const CliffordTable& table,
                 const RBConfig& config) {
    RBDataset data;
    data.lengths = config.lengths;
    data.mode = config.mode;
    if (config.mode == RBMode::Interleaved)
        data.interleave_tag = gate_name(config.interleave);

    const std::optional<GateSpec> interleave =
        config.mode == RBMode::Interleaved
            ? std::optional<GateSpec>(config.interleave)
            : std::nullopt;

    for (std::size_t li = 0; li < config.lengths.size(); ++li) {
        std::vector<double> row;
        std::vector<BlochVector> tomo;
        for (int s = 0; s < config.seeds; ++s) {
            const std::uint64_t seed =
                config.base_seed + 0x9e3779b97f4a7c15ULL * (li * 4096 + s + 1);
            const RBSequence seq =
                draw_sequence(table, config.lengths[li], seed, interleave);
            const Matrix2cd rho = executor.run(table, seq);
            row.push_back(std::clamp(std::real(rho(0, 0)), 0.0, 1.0));
            if (config.mode == RBMode::Purity) tomo.push_back(bloch(DensityMatrix(rho)));
        }
        data.survival.push_back(std::move(row));
        if (config.mode == RBMode::Purity) data.tomography.push_back(std::move(tomo));
    }
    return data;
}

double purity(const BlochVector& b) { return b.x * b.x + b.y * b.y + b.z * b.z; }

namespace {

std::vector<double> column_means(const std::vector<std::vector<double>>& rows,
                                 const std::vector<std::size_t>* pick) {
    std::vector<double> means;
    for (const std::vector<double>& row : rows) {
        double sum = 0;
        const std::size_t n = pick ? pick->size() : row.size();
        for (std::size_t k = 0; k < n; ++k) sum += row[pick ? (*pick)[k] : k];
        means.push_back(sum / double(n));
    }
    return means;
}

/// A + B u^m least squares. Data that does not move at all (a noiseless
/// purely coherent backend keeps purity at exactly 1) short-circuits to
/// u = 1 rather than leaving u unconstrained.
DecayFit fit_survival(const std::vector<int>& lengths,
                      const std::vector<double>& means) {
    const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
    if (*hi - *lo < 1e-9) {
        DecayFit flat;
        flat.a = *lo;
        flat.b = 0;
        flat.u = 1.0;
        return flat;
    }
    std::vector<double> m(lengths.begin(), lengths.end());
    const DecayFit fit = fit_decay(m, means);
    if (!(fit.u > 0.0) || fit.u > 1.0 + 1e-9)
        throw FitFailure("survival curve does not decay");
    return fit;
}

RBFit finish_fit(const std::vector<int>& lengths,
                 const std::vector<std::vector<double>>& values, bool is_purity,
                 int bootstrap, std::uint64_t seed) {
    const std::vector<double> means = column_means(values, nullptr);
    const DecayFit fit = fit_survival(lengths, means);

    RBFit out;
    out.a = fit.a;
    out.b = fit.b;
    out.u = std::min(fit.u, 1.0);
    out.diag = fit.diag;
    auto to_eps = [is_purity](double u) {
        return is_purity ? (1.0 - std::sqrt(std::max(u, 0.0))) / 2.0
                         : (1.0 - u) / 2.0;
    };
    out.epsilon = to_eps(out.u);
    out.epsilon_gate = out.epsilon / kGatesPerClifford;

    if (bootstrap > 0 && !values.empty() && values.front().size() > 1) {
        const std::size_t seeds = values.front().size();
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<std::size_t> pick(0, seeds - 1);
        std::vector<double> eps_samples, u_samples;
        for (int t = 0; t < bootstrap; ++t) {
            std::vector<std::size_t> idx(seeds);
            for (std::size_t& k : idx) k = pick(rng);
            try {
                const DecayFit f =
                    fit_survival(lengths, column_means(values, &idx));
                const double u = std::min(f.u, 1.0);
                u_samples.push_back(u);
                eps_samples.push_back(to_eps(u) / kGatesPerClifford);
            } catch (const FitFailure&) {
            }
        }
        if (eps_samples.size() >= 20) {
            std::sort(eps_samples.begin(), eps_samples.end());
            std::sort(u_samples.begin(), u_samples.end());
            const std::size_t n = eps_samples.size();
            out.ci_low = eps_samples[std::size_t(0.025 * n)];
            out.ci_high = eps_samples[std::min(n - 1, std::size_t(0.975 * n))];
            out.u_ci_low = u_samples[std::size_t(0.025 * n)];
            out.u_ci_high = u_samples[std::min(n - 1, std::size_t(0.975 * n))];
        }
    }
    return out;
}

}  // namespace

RBFit fit_rb(const RBDataset& dataset, int bootstrap, std::uint64_t seed) {
    if (dataset.lengths.size() < 3)
        throw FitFailure("need at least three sequence lengths");
    return finish_fit(dataset.lengths, dataset.survival, false, bootstrap, seed);
}

RBFit fit_purity(const RBDataset& dataset, int bootstrap, std::uint64_t seed) {
    if (dataset.tomography.empty())
        throw FitFailure("dataset has no tomography");
    std::vector<std::vector<double>> values;
    for (const std::vector<BlochVector>& row : dataset.tomography) {
        std::vector<double> p;
        for (const BlochVector& b : row) p.push_back(purity(b));
        values.push_back(std::move(p));
    }
    return finish_fit(dataset.lengths, values, true, bootstrap, seed);
}

InterleavedError interleaved_error(const RBFit& reference,
                                   const RBFit& interleaved) {
    const double hw_ref = (reference.u_ci_high - reference.u_ci_low) / 2.0;
    const double hw_int = (interleaved.u_ci_high - interleaved.u_ci_low) / 2.0;
    const double combined = std::sqrt(hw_ref * hw_ref + hw_int * hw_int);
    if (interleaved.u > reference.u + combined)
        throw DegenerateRatio("interleaved decay is slower than the reference");

    const double ratio = interleaved.u / reference.u;
    InterleavedError out;
    out.epsilon_gate = (1.0 - ratio) / 2.0;
    double rel = 0;
    if (hw_ref > 0 || hw_int > 0)
        rel = ratio * std::sqrt(std::pow(hw_ref / reference.u, 2) +
                                std::pow(hw_int / interleaved.u, 2));
    out.ci_low = out.epsilon_gate - rel / 2.0;
    out.ci_high = out.epsilon_gate + rel / 2.0;
    return out;
}

std::string RBDataset::to_json() const {
    nlohmann::json j;
    j["lengths"] = lengths;
    j["survival"] = survival;
    j["mode"] = mode == RBMode::Standard
                    ? "standard"
                    : (mode == RBMode::Interleaved ? "interleaved" : "purity");
    if (!interleave_tag.empty()) j["interleave"] = interleave_tag;
    if (!tomography.empty()) {
        nlohmann::json t = nlohmann::json::array();
        for (const auto& row : tomography) {
            nlohmann::json r = nlohmann::json::array();
            for (const BlochVector& b : row) r.push_back({b.x, b.y, b.z});
            t.push_back(r);
        }
        j["tomography"] = t;
    }
    return j.dump(2);
}

std::string RBDataset::to_csv() const {
    std::ostringstream out;
    out.precision(12);
    out << "m,mean,sem\n";
    for (std::size_t li = 0; li < lengths.size(); ++li) {
        const std::vector<double>& row = survival[li];
        double mean = 0;
        for (double v : row) mean += v;
        mean /= double(row.size());
        double var = 0;
        for (double v : row) var += (v - mean) * (v - mean);
        const double sem =
            row.size() > 1 ? std::sqrt(var / double(row.size() - 1) /
                                       double(row.size()))
                           : 0.0;
        out << lengths[li] << "," << mean << "," << sem << "\n";
    }
    return out.str();
}

std::string RBFit::to_json() const {
    nlohmann::json j;
    j["a"] = a;
    j["b"] = b;
    j["u"] = u;
    j["epsilon"] = epsilon;
    j["epsilon_gate"] = epsilon_gate;
    j["ci"] = {ci_low, ci_high};
    j["u_ci"] = {u_ci_low, u_ci_high};
    j["residual_norm"] = diag.residual_norm;
    return j.dump(2);
}

}  // namespace fluxsim
