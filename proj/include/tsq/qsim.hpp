#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace tsq::qsim {

using Complex = std::complex<double>;
using Amplitudes = Eigen::VectorXcd;
/// Row-major dense unitary of dimension 2, 4 or 2^n.
using UnitaryMatrix = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::size_t kMaxQubits = 24;
inline constexpr std::size_t kMaxDenseQubits = 6;

enum class GateKind : std::uint8_t { X, Y, Z, RX, RY, RZ, H, U1, U2, U3, CNOT, CZ, CRY };

inline constexpr std::array kAllGateKinds{
    GateKind::X,  GateKind::Y,  GateKind::Z,  GateKind::RX,   GateKind::RY, GateKind::RZ, GateKind::H,
    GateKind::U1, GateKind::U2, GateKind::U3, GateKind::CNOT, GateKind::CZ, GateKind::CRY};

constexpr std::size_t angle_arity(GateKind kind) noexcept {
    switch (kind) {
    case GateKind::RX:
    case GateKind::RY:
    case GateKind::RZ:
    case GateKind::U1:
    case GateKind::CRY:
        return 1;
    case GateKind::U2:
        return 2;
    case GateKind::U3:
        return 3;
    default:
        return 0;
    }
}

constexpr std::size_t qubit_arity(GateKind kind) noexcept {
    return (kind == GateKind::CNOT || kind == GateKind::CZ || kind == GateKind::CRY) ? 2 : 1;
}

std::string_view gate_name(GateKind kind) noexcept;
std::optional<GateKind> parse_gate_kind(std::string_view name) noexcept;

/**
 * One gate application. Only the first angle_arity(kind) angles and
 * qubit_arity(kind) qubits are meaningful. For two-qubit kinds the qubits are
 * [control, target].
 */
struct GateOp {
    GateKind kind = GateKind::X;
    std::array<double, 3> angles{};
    std::array<std::size_t, 2> qubits{};

    static GateOp single(GateKind kind, std::size_t qubit, std::span<const double> angles = {});
    static GateOp controlled(GateKind kind, std::size_t control, std::size_t target,
                             std::span<const double> angles = {});

    std::span<const double> params() const noexcept { return {angles.data(), angle_arity(kind)}; }
    std::span<const std::size_t> targets() const noexcept {
        return {qubits.data(), qubit_arity(kind)};
    }

    bool operator==(const GateOp &) const = default;
};

struct Circuit {
    std::size_t n_qubits = 1;
    std::vector<GateOp> ops;

    /// Throws IndexError if any op addresses a qubit outside the register.
    void validate() const;
    bool operator==(const Circuit &) const = default;
};

/// Little-endian register: basis index bit q is qubit q.
class StateVector {
  public:
    /// |0...0> on n qubits; CapacityError outside [1, kMaxQubits].
    static StateVector zero(std::size_t n_qubits);
    /// Wraps existing amplitudes; DimensionError unless length is 2^n.
    static StateVector from_amplitudes(Amplitudes amplitudes);

    std::size_t n_qubits() const noexcept { return n_qubits_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(amps_.size()); }
    const Amplitudes &amplitudes() const noexcept { return amps_; }
    Amplitudes &amplitudes() noexcept { return amps_; }
    double norm() const { return amps_.norm(); }

  private:
    StateVector(std::size_t n, Amplitudes a) : n_qubits_(n), amps_(std::move(a)) {}

    std::size_t n_qubits_ = 0;
    Amplitudes amps_;
};

/// Gate unitary. Two-qubit gates use the |control,target> ordering with the
/// control as the most significant bit. ParameterError on wrong arity.
UnitaryMatrix gate_matrix(GateKind kind, std::span<const double> params);
inline UnitaryMatrix gate_matrix(const GateOp &op) { return gate_matrix(op.kind, op.params()); }

bool is_unitary(const UnitaryMatrix &u, double tol);

void apply_gate_inplace(StateVector &state, const GateOp &op);
StateVector apply_gate(StateVector state, const GateOp &op);

/// Applies ops in list order; DimensionError when register sizes differ.
void run_circuit_inplace(const Circuit &circuit, StateVector &state);
StateVector run_circuit(const Circuit &circuit, StateVector state);

/// <Z_q> = P(bit q = 0) - P(bit q = 1).
double pauli_z_expectation(const StateVector &state, std::size_t qubit);

/// Full 2^n x 2^n unitary of the circuit built by embedding each gate's
/// matrix into the register and multiplying in order. Test oracle only;
/// CapacityError above kMaxDenseQubits.
UnitaryMatrix dense_circuit_matrix(const Circuit &circuit);

/// One op per line: `KIND q0[,q1] [angle...]`.
std::string to_text(const Circuit &circuit);
Circuit parse_circuit(std::string_view text, std::size_t n_qubits);

} // namespace tsq::qsim
