#pragma once

// Scalar reverse-mode automatic differentiation.
//
// A Tape records nodes eagerly: every node's value is computed when it is
// recorded, so a forward pass is just ordinary arithmetic on Var handles.
// backward() walks the tape once in reverse and returns the gradient of a
// root node with respect to every node registered with Tape::param().

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowvi::ad {

enum class Op : std::uint8_t {
  Const,
  Param,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Exp,
  Log,
  PowConst,
  Sigmoid,
  Relu,
  Square,
  // Fused bilinear form: bias + sum_k a_k * b_k, each operand a node or a
  // constant. Covers dot products, linear combinations and scalar shifts.
  Dot,
  LogSigmoid,
};

const char* op_name(Op op);

using NodeId = std::uint32_t;

// Raised when a forward value leaves the real line (log of a non-positive
// number, division by zero, overflow to inf, NaN).
class NumericDomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// The finite-difference oracle could not be trusted (builder not deterministic).
class OracleInvalid : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Tape {
 public:
  // Operand of a Dot node: either an existing node or an inline constant.
  struct Operand {
    bool is_node;
    NodeId node;
    double constant;
  };

  struct Mark {
    std::size_t nodes, args, aux, params;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  NodeId record(Op op, std::span<const NodeId> inputs, double aux = 0.0);
  NodeId constant(double v) { return record(Op::Const, {}, v); }
  NodeId param(double v) { return record(Op::Param, {}, v); }
  NodeId dot(double bias, std::span<const Operand> lhs, std::span<const Operand> rhs);

  double value(NodeId id) const;
  Op op(NodeId id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }
  std::span<const NodeId> params() const { return params_; }

  // Gradient of `root` with respect to each registered param, in
  // registration order. Params the root does not depend on get 0.
  std::vector<double> backward(NodeId root) const;
  // Adjoint of every node for the given root.
  std::vector<double> adjoints(NodeId root) const;

  // Recomputes every node value from its recorded inputs.
  std::vector<double> replay() const;

  Mark mark() const { return {nodes_.size(), args_.size(), aux_.size(), params_.size()}; }
  void rewind(const Mark& m);
  void clear();
  void reserve(std::size_t nodes);

 private:
  struct Node {
    Op op;
    std::uint32_t arg_begin;
    std::uint32_t arg_count;
    std::uint32_t aux_begin;
  };

  static constexpr std::uint32_t kConstBit = 0x80000000u;

  double evaluate(const Node& n, const std::vector<double>& values) const;
  double operand_value(std::uint32_t encoded, const std::vector<double>& values) const;
  NodeId push(Node n, double v);

  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<std::uint32_t> args_;
  std::vector<double> aux_;
  std::vector<NodeId> params_;
};

// Handle to a tape node, or a plain constant when no tape is attached.
// Operations between constants fold to constants without touching a tape.
class Var {
 public:
  static constexpr NodeId kNoNode = 0xffffffffu;

  Var() = default;
  Var(double c) : value_(c) {}  // NOLINT(google-explicit-constructor)
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id), value_(tape->value(id)) {}

  double value() const { return value_; }
  bool is_constant() const { return tape_ == nullptr; }
  NodeId id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = kNoNode;
  double value_ = 0.0;
};

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }

Var exp(const Var& x);
Var log(const Var& x);
Var pow_const(const Var& x, double c);
Var sigmoid(const Var& x);
Var log_sigmoid(const Var& x);
Var relu(const Var& x);
Var square(const Var& x);

// bias + sum_k w[k] * u[k]. Structurally-zero constant terms are skipped.
Var dot(const Var& bias, std::span<const Var> w, std::span<const Var> u);
Var dot(double bias, std::span<const double> c, std::span<const Var> x);
Var sum(std::span<const Var> x);

// Central-difference gradient of a tape-building function. The builder is
// called on fresh tapes; it receives one param Var per entry of `params`.
using TapeBuilder = std::function<Var(Tape&, std::span<const Var>)>;
std::vector<double> finite_diff(const TapeBuilder& builder, std::span<const double> params,
                                double step);

// Reverse-mode gradient through the same builder, for symmetry with finite_diff.
std::vector<double> gradient(const TapeBuilder& builder, std::span<const double> params,
                             double* value_out = nullptr);

}  // namespace flowvi::ad
