#include "tsq/qsim.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "tsq/errors.hpp"

namespace tsq::qsim {

namespace {

constexpr std::array<std::string_view, 13> kGateNames{"X",  "Y",  "Z",  "RX",   "RY", "RZ", "H",
                                                      "U1", "U2", "U3", "CNOT", "CZ", "CRY"};

constexpr Complex kI{0.0, 1.0};

using Block = Eigen::Matrix2cd;

Block mat2(Complex a, Complex b, Complex c, Complex d) {
    Block m;
    m << a, b, c, d;
    return m;
}

UnitaryMatrix controlled(const Block &u) {
    UnitaryMatrix m = UnitaryMatrix::Identity(4, 4);
    m.bottomRightCorner<2, 2>() = u;
    return m;
}

void check_qubit(std::size_t q, std::size_t n) {
    if (q >= n) {
        throw IndexError("qubit index " + std::to_string(q) + " out of range for " +
                         std::to_string(n) + "-qubit register");
    }
}

void check_op(const GateOp &op, std::size_t n) {
    for (auto q : op.targets()) {
        check_qubit(q, n);
    }
    if (qubit_arity(op.kind) == 2 && op.qubits[0] == op.qubits[1]) {
        throw IndexError("control and target must differ (qubit " + std::to_string(op.qubits[0]) +
                         ")");
    }
}

// u0 * a0 + u1 * a1 in plain real arithmetic. std::complex multiplication
// carries an inf/nan recovery branch that costs ~20x in this kernel.
inline Complex mul_add(Complex u0, Complex a0, Complex u1, Complex a1) {
    return {u0.real() * a0.real() - u0.imag() * a0.imag() + u1.real() * a1.real() - u1.imag() * a1.imag(),
            u0.real() * a0.imag() + u0.imag() * a0.real() + u1.real() * a1.imag() + u1.imag() * a1.real()};
}

// 2x2 block acting on the target: the gate itself for single-qubit kinds,
// the controlled block otherwise. Arity is checked by the caller.
Block target_block(GateKind kind, std::span<const double> params) {
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    switch (kind) {
    case GateKind::X:
        return mat2(0, 1, 1, 0);
    case GateKind::Y:
        return mat2(0, -kI, kI, 0);
    case GateKind::Z:
        return mat2(1, 0, 0, -1);
    case GateKind::H:
        return mat2(inv_sqrt2, inv_sqrt2, inv_sqrt2, -inv_sqrt2);
    case GateKind::RX: {
        const double c = std::cos(params[0] / 2), s = std::sin(params[0] / 2);
        return mat2(c, -kI * s, -kI * s, c);
    }
    case GateKind::RY:
    case GateKind::CRY: {
        const double c = std::cos(params[0] / 2), s = std::sin(params[0] / 2);
        return mat2(c, -s, s, c);
    }
    case GateKind::RZ:
        return mat2(std::polar(1.0, -params[0] / 2), 0, 0, std::polar(1.0, params[0] / 2));
    case GateKind::U1:
        return mat2(1, 0, 0, std::polar(1.0, params[0]));
    case GateKind::U2: {
        const double phi = params[0], lambda = params[1];
        return mat2(inv_sqrt2, -inv_sqrt2 * std::polar(1.0, lambda),
                    inv_sqrt2 * std::polar(1.0, phi), inv_sqrt2 * std::polar(1.0, phi + lambda));
    }
    case GateKind::U3: {
        const double theta = params[0], phi = params[1], lambda = params[2];
        const double c = std::cos(theta / 2), s = std::sin(theta / 2);
        return mat2(c, -std::polar(s, lambda), std::polar(s, phi), std::polar(c, phi + lambda));
    }
    case GateKind::CNOT:
        return mat2(0, 1, 1, 0);
    case GateKind::CZ:
        return mat2(1, 0, 0, -1);
    }
    return Block::Identity();
}

} // namespace

std::string_view gate_name(GateKind kind) noexcept {
    return kGateNames[static_cast<std::size_t>(kind)];
}

std::optional<GateKind> parse_gate_kind(std::string_view name) noexcept {
    for (std::size_t i = 0; i < kGateNames.size(); ++i) {
        if (kGateNames[i] == name) {
            return static_cast<GateKind>(i);
        }
    }
    return std::nullopt;
}

GateOp GateOp::single(GateKind kind, std::size_t qubit, std::span<const double> angles) {
    if (qubit_arity(kind) != 1) {
        throw ParameterError(std::string(gate_name(kind)) + " is a two-qubit gate");
    }
    if (angles.size() != angle_arity(kind)) {
        throw ParameterError(std::string(gate_name(kind)) + " takes " +
                             std::to_string(angle_arity(kind)) + " angle(s), got " +
                             std::to_string(angles.size()));
    }
    GateOp op;
    op.kind = kind;
    std::copy(angles.begin(), angles.end(), op.angles.begin());
    op.qubits = {qubit, 0};
    return op;
}

GateOp GateOp::controlled(GateKind kind, std::size_t control, std::size_t target,
                          std::span<const double> angles) {
    if (qubit_arity(kind) != 2) {
        throw ParameterError(std::string(gate_name(kind)) + " is a single-qubit gate");
    }
    if (angles.size() != angle_arity(kind)) {
        throw ParameterError(std::string(gate_name(kind)) + " takes " +
                             std::to_string(angle_arity(kind)) + " angle(s), got " +
                             std::to_string(angles.size()));
    }
    GateOp op;
    op.kind = kind;
    std::copy(angles.begin(), angles.end(), op.angles.begin());
    op.qubits = {control, target};
    return op;
}

void Circuit::validate() const {
    for (const auto &op : ops) {
        check_op(op, n_qubits);
    }
}

StateVector StateVector::zero(std::size_t n_qubits) {
    if (n_qubits < 1 || n_qubits > kMaxQubits) {
        throw CapacityError("register size " + std::to_string(n_qubits) + " outside [1, " +
                            std::to_string(kMaxQubits) + "]");
    }
    Amplitudes a = Amplitudes::Zero(Eigen::Index{1} << n_qubits);
    a[0] = 1.0;
    return {n_qubits, std::move(a)};
}

StateVector StateVector::from_amplitudes(Amplitudes amplitudes) {
    const auto len = static_cast<std::size_t>(amplitudes.size());
    if (len < 2 || (len & (len - 1)) != 0) {
        throw DimensionError("amplitude count " + std::to_string(len) + " is not 2^n, n >= 1");
    }
    const auto n = static_cast<std::size_t>(std::countr_zero(len));
    if (n > kMaxQubits) {
        throw CapacityError("register size " + std::to_string(n) + " exceeds cap");
    }
    return {n, std::move(amplitudes)};
}

UnitaryMatrix gate_matrix(GateKind kind, std::span<const double> params) {
    if (params.size() != angle_arity(kind)) {
        throw ParameterError(std::string(gate_name(kind)) + " takes " +
                             std::to_string(angle_arity(kind)) + " angle(s), got " +
                             std::to_string(params.size()));
    }
    const Block b = target_block(kind, params);
    return qubit_arity(kind) == 1 ? UnitaryMatrix(b) : controlled(b);
}

bool is_unitary(const UnitaryMatrix &u, double tol) {
    if (u.rows() != u.cols()) {
        return false;
    }
    const UnitaryMatrix residual = u.adjoint() * u - UnitaryMatrix::Identity(u.rows(), u.cols());
    return residual.cwiseAbs().maxCoeff() <= tol;
}

void apply_gate_inplace(StateVector &state, const GateOp &op) {
    check_op(op, state.n_qubits());
    const Block block = target_block(op.kind, op.params());
    const Complex u00 = block(0, 0), u01 = block(0, 1), u10 = block(1, 0), u11 = block(1, 1);
    Complex *amps = state.amplitudes().data();
    const std::size_t dim = state.size();

    if (qubit_arity(op.kind) == 1) {
        const std::size_t stride = std::size_t{1} << op.qubits[0];
        for (std::size_t base = 0; base < dim; base += 2 * stride) {
            for (std::size_t i = base; i < base + stride; ++i) {
                const Complex a0 = amps[i], a1 = amps[i + stride];
                amps[i] = mul_add(u00, a0, u01, a1);
                amps[i + stride] = mul_add(u10, a0, u11, a1);
            }
        }
        return;
    }

    const std::size_t cmask = std::size_t{1} << op.qubits[0];
    const std::size_t tmask = std::size_t{1} << op.qubits[1];
    for (std::size_t i = 0; i < dim; ++i) {
        if ((i & cmask) == 0 || (i & tmask) != 0) {
            continue;
        }
        const Complex a0 = amps[i], a1 = amps[i | tmask];
        amps[i] = mul_add(u00, a0, u01, a1);
        amps[i | tmask] = mul_add(u10, a0, u11, a1);
    }
}

StateVector apply_gate(StateVector state, const GateOp &op) {
    apply_gate_inplace(state, op);
    return state;
}

void run_circuit_inplace(const Circuit &circuit, StateVector &state) {
    if (circuit.n_qubits != state.n_qubits()) {
        throw DimensionError("circuit has " + std::to_string(circuit.n_qubits) +
                             " qubits, state has " + std::to_string(state.n_qubits()));
    }
    for (const auto &op : circuit.ops) {
        apply_gate_inplace(state, op);
    }
}

StateVector run_circuit(const Circuit &circuit, StateVector state) {
    run_circuit_inplace(circuit, state);
    return state;
}

double pauli_z_expectation(const StateVector &state, std::size_t qubit) {
    check_qubit(qubit, state.n_qubits());
    const std::size_t mask = std::size_t{1} << qubit;
    const Amplitudes &a = state.amplitudes();
    double plus = 0.0, minus = 0.0;
    for (std::size_t i = 0; i < state.size(); ++i) {
        const double p = std::norm(a[static_cast<Eigen::Index>(i)]);
        if (i & mask) {
            minus += p;
        } else {
            plus += p;
        }
    }
    return std::clamp(plus - minus, -1.0, 1.0);
}

UnitaryMatrix dense_circuit_matrix(const Circuit &circuit) {
    const std::size_t n = circuit.n_qubits;
    if (n < 1 || n > kMaxDenseQubits) {
        throw CapacityError("dense circuit matrix supports 1.." + std::to_string(kMaxDenseQubits) +
                            " qubits, got " + std::to_string(n));
    }
    circuit.validate();
    const Eigen::Index dim = Eigen::Index{1} << n;
    UnitaryMatrix total = UnitaryMatrix::Identity(dim, dim);

    for (const auto &op : circuit.ops) {
        const UnitaryMatrix local = gate_matrix(op);
        // Local index bits, most significant first: [q] or [control, target].
        const auto qs = op.targets();
        const std::size_t k = qs.size();
        std::size_t clear_mask = 0;
        for (auto q : qs) {
            clear_mask |= std::size_t{1} << q;
        }
        auto scatter = [&](std::size_t local_index) {
            std::size_t bits = 0;
            for (std::size_t b = 0; b < k; ++b) {
                if ((local_index >> (k - 1 - b)) & 1U) {
                    bits |= std::size_t{1} << qs[b];
                }
            }
            return bits;
        };
        auto gather = [&](std::size_t global) {
            std::size_t li = 0;
            for (std::size_t b = 0; b < k; ++b) {
                li = (li << 1) | ((global >> qs[b]) & 1U);
            }
            return li;
        };

        UnitaryMatrix lifted = UnitaryMatrix::Zero(dim, dim);
        for (std::size_t col = 0; col < static_cast<std::size_t>(dim); ++col) {
            const std::size_t lc = gather(col);
            const std::size_t base = col & ~clear_mask;
            for (std::size_t lr = 0; lr < (std::size_t{1} << k); ++lr) {
                lifted(static_cast<Eigen::Index>(base | scatter(lr)), static_cast<Eigen::Index>(col)) =
                    local(static_cast<Eigen::Index>(lr), static_cast<Eigen::Index>(lc));
            }
        }
        total = lifted * total;
    }
    return total;
}

std::string to_text(const Circuit &circuit) {
    std::string out;
    char buf[64];
    for (const auto &op : circuit.ops) {
        out += gate_name(op.kind);
        out += ' ';
        const auto qs = op.targets();
        for (std::size_t i = 0; i < qs.size(); ++i) {
            if (i) {
                out += ',';
            }
            out += std::to_string(qs[i]);
        }
        for (double a : op.params()) {
            auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), a);
            out += ' ';
            out.append(buf, end);
        }
        out += '\n';
    }
    return out;
}

Circuit parse_circuit(std::string_view text, std::size_t n_qubits) {
    Circuit circuit{n_qubits, {}};
    std::istringstream lines{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        std::istringstream fields(line);
        std::string name, qubit_field;
        if (!(fields >> name)) {
            continue;
        }
        const auto where = "circuit line " + std::to_string(lineno) + ": ";
        const auto kind = parse_gate_kind(name);
        if (!kind) {
            throw ParameterError(where + "unknown gate '" + name + "'");
        }
        if (!(fields >> qubit_field)) {
            throw ParameterError(where + "missing qubit list");
        }
        std::vector<std::size_t> qs;
        std::istringstream qstream(qubit_field);
        for (std::string q; std::getline(qstream, q, ',');) {
            std::size_t v = 0;
            auto [p, ec] = std::from_chars(q.data(), q.data() + q.size(), v);
            if (ec != std::errc{} || p != q.data() + q.size()) {
                throw ParameterError(where + "bad qubit index '" + q + "'");
            }
            qs.push_back(v);
        }
        std::vector<double> angles;
        for (std::string tok; fields >> tok;) {
            double v = 0;
            auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (ec != std::errc{} || p != tok.data() + tok.size()) {
                throw ParameterError(where + "bad angle '" + tok + "'");
            }
            angles.push_back(v);
        }
        if (qs.size() != qubit_arity(*kind)) {
            throw ParameterError(where + name + " expects " + std::to_string(qubit_arity(*kind)) +
                                 " qubit(s)");
        }
        circuit.ops.push_back(qs.size() == 1 ? GateOp::single(*kind, qs[0], angles)
                                             : GateOp::controlled(*kind, qs[0], qs[1], angles));
    }
    circuit.validate();
    return circuit;
}

} // namespace tsq::qsim
