#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fluxsim/calibration.hpp"

namespace fluxsim {

/// Physical pulses per Clifford with the native gate set
/// {I, +-X_pi/2, +-Y_pi/2}: 52 quarter-turn pulses across the 23 non-trivial
/// elements plus the identity Clifford's single I slot, averaged over 24.
inline constexpr double kGatesPerClifford = 53.0 / 24.0;

/// The 24 single-qubit Cliffords with minimal-length decompositions over the
/// native gate set, plus group multiplication and inversion tables. Element 0
/// is the identity; the ordering is the deterministic breadth-first discovery
/// order over generators (X+, X-, Y+, Y-).
struct CliffordTable {
    std::array<Eigen::Matrix2cd, 24> unitary;
    std::array<std::vector<GateSpec>, 24> gates;  // identity -> {I}
    std::array<std::array<int, 24>, 24> product;  // product[a][b]: b then a
    std::array<int, 24> inverse;

    /// Mean decomposition length (53/24 exactly).
    double mean_gates() const;
    /// Index of the element equal to u up to global phase; throws if absent.
    int index_of(const Eigen::Matrix2cd& u) const;
};

CliffordTable build_clifford_table();

/// Rotating-frame unitary realized by one native gate (quarter turns for
/// X/Y, frame rotation for Z).
Eigen::Matrix2cd ideal_unitary(const GateSpec& gate);

struct RBSequence {
    std::vector<int> cliffords;  // m uniformly random table indices
    int recovery = 0;            // inverse of the composition (time order)
    std::optional<GateSpec> interleave;
};

/// Deterministic sequence draw: m Cliffords (each followed by the interleaved
/// gate when present) and the recovery returning to |0> up to global phase.
RBSequence draw_sequence(const CliffordTable& table, int m, std::uint64_t seed,
                         std::optional<GateSpec> interleave = std::nullopt);

/// Flattened native-gate list of a sequence, recovery included.
std::vector<GateSpec> flatten(const CliffordTable& table, const RBSequence& seq);

/// draw_sequence + flatten.
std::vector<GateSpec> rb_sequence(const CliffordTable& table, int m,
                                  std::uint64_t seed,
                                  std::optional<GateSpec> interleave = std::nullopt);

/// Executes one sequence and returns the final two-level density matrix (in
/// the frame where the ideal composition is the identity).
class RBExecutor {
  public:
    virtual ~RBExecutor() = default;
    virtual Eigen::Matrix2cd run(const CliffordTable& table,
                                 const RBSequence& seq) = 0;
};

/// Ideal gate unitaries with optional synthetic error channels, composed as
/// 2x2 density matrices. The depolarizing channel applies after every gate
/// slot (the identity Clifford's I included); the interleaved extra applies
/// only after interleaved gates.
class SyntheticExecutor : public RBExecutor {
  public:
    double depolarizing = 0;             // lambda: rho -> (1-l) rho + l I/2
    double over_rotation = 0;            // rad added to every quarter turn
    double interleave_depolarizing = 0;  // extra channel on interleaved gates

    Eigen::Matrix2cd run(const CliffordTable& table,
                         const RBSequence& seq) override;
};

/// Compiles sequences into drive schedules and propagates them through the
/// simulator backend (leakage shows up as lost trace in the projected block).
class PulseExecutor : public RBExecutor {
  public:
    PulseExecutor(SimBackend& backend, PulseParams params, GateTiming timing,
                  LatticeMode mode)
        : backend_(backend), params_(params), timing_(timing), mode_(mode) {}

    Eigen::Matrix2cd run(const CliffordTable& table,
                         const RBSequence& seq) override;

  private:
    SimBackend& backend_;
    PulseParams params_;
    GateTiming timing_;
    LatticeMode mode_;
};

enum class RBMode { Standard, Interleaved, Purity };

struct RBConfig {
    std::vector<int> lengths{1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024};
    int seeds = 40;
    std::uint64_t base_seed = 1;
    RBMode mode = RBMode::Standard;
    GateSpec interleave = GateSpec::xp();  // used in Interleaved mode
};

struct RBDataset {
    std::vector<int> lengths;
    std::vector<std::vector<double>> survival;  // [length][seed], ground pop
    std::vector<std::vector<BlochVector>> tomography;  // Purity mode only
    RBMode mode = RBMode::Standard;
    std::string interleave_tag;  // empty when not interleaved

    std::string to_json() const;
    /// Per-length mean and standard error of the survival curve.
    std::string to_csv() const;
};

RBDataset run_rb(RBExecutor& executor, const CliffordTable& table,
                 const RBConfig& config);

struct RBFit {
    double a = 0;
    double b = 0;
    double u = 0;             // decay base per Clifford
    double epsilon = 0;       // (1-u)/2 per Clifford
    double epsilon_gate = 0;  // epsilon / (53/24)
    double ci_low = 0;        // bootstrap 2.5% on epsilon_gate
    double ci_high = 0;       // bootstrap 97.5%
    double u_ci_low = 0;
    double u_ci_high = 0;
    FitDiagnostics diag;

    std::string to_json() const;
};

/// Fit <p0> = A + B u^m to the survival means; seed-level bootstrap CIs.
RBFit fit_rb(const RBDataset& dataset, int bootstrap = 500,
             std::uint64_t seed = 7);

double purity(const BlochVector& b);

/// Fit <P> = A' + B' u'^m; epsilon_in = (1 - sqrt(u'))/2.
RBFit fit_purity(const RBDataset& dataset, int bootstrap = 500,
                 std::uint64_t seed = 7);

struct DegenerateRatio : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InterleavedError {
    double epsilon_gate = 0;  // (1 - u_int/u_ref)/2
    double ci_low = 0;
    double ci_high = 0;
};

/// Per-gate error of the interleaved gate; throws DegenerateRatio when
/// u_int exceeds u_ref beyond the combined confidence interval.
InterleavedError interleaved_error(const RBFit& reference,
                                   const RBFit& interleaved);

}  // namespace fluxsim
