#include "flowvi/ad.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace flowvi::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::Const: return "const";
    case Op::Param: return "param";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::PowConst: return "pow-const";
    case Op::Sigmoid: return "sigmoid";
    case Op::Relu: return "relu";
    case Op::Square: return "square";
    case Op::Dot: return "dot";
    case Op::LogSigmoid: return "log-sigmoid";
  }
  return "?";
}

namespace {

std::size_t arity(Op op) {
  switch (op) {
    case Op::Const:
    case Op::Param: return 0;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: return 2;
    case Op::Dot: return std::numeric_limits<std::size_t>::max();
    default: return 1;
  }
}

[[noreturn]] void domain_error(Op op, const std::string& what) {
  throw NumericDomainError(std::string(op_name(op)) + ": " + what);
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_log_sigmoid(double x) {
  // log(1 / (1 + e^{-x})) = -softplus(-x)
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

}  // namespace

double Tape::operand_value(std::uint32_t encoded, const std::vector<double>& values) const {
  if (encoded & kConstBit) return aux_[encoded & ~kConstBit];
  return values[encoded];
}

namespace {

double check_finite(Op op, double v) {
  if (!std::isfinite(v)) domain_error(op, "non-finite result " + std::to_string(v));
  return v;
}

double eval_unary(Op op, double x, double aux) {
  switch (op) {
    case Op::Neg: return -x;
    case Op::Exp: return std::exp(x);
    case Op::Log:
      if (!(x > 0.0)) domain_error(op, "non-positive argument " + std::to_string(x));
      return std::log(x);
    case Op::PowConst:
      if (x < 0.0 && aux != std::floor(aux)) domain_error(op, "negative base, fractional exponent");
      if (x == 0.0 && aux < 0.0) domain_error(op, "zero base, negative exponent");
      return std::pow(x, aux);
    case Op::Sigmoid: return stable_sigmoid(x);
    case Op::Relu: return x > 0.0 ? x : 0.0;
    case Op::Square: return x * x;
    case Op::LogSigmoid: return stable_log_sigmoid(x);
    default: throw UsageError(std::string("not a unary op: ") + op_name(op));
  }
}

double eval_binary(Op op, double a, double b) {
  switch (op) {
    case Op::Add: return a + b;
    case Op::Sub: return a - b;
    case Op::Mul: return a * b;
    case Op::Div:
      if (b == 0.0) domain_error(op, "division by zero");
      return a / b;
    default: throw UsageError(std::string("not a binary op: ") + op_name(op));
  }
}

}  // namespace

double Tape::evaluate(const Node& n, const std::vector<double>& values) const {
  const std::uint32_t* a = args_.data() + n.arg_begin;
  switch (n.op) {
    case Op::Const:
    case Op::Param: return aux_[n.aux_begin];
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: return eval_binary(n.op, values[a[0]], values[a[1]]);
    case Op::Dot: {
      double acc = aux_[n.aux_begin];
      for (std::uint32_t k = 0; k < n.arg_count; k += 2) {
        acc += operand_value(a[k], values) * operand_value(a[k + 1], values);
      }
      return acc;
    }
    default: return eval_unary(n.op, values[a[0]], aux_[n.aux_begin]);
  }
}

NodeId Tape::push(Node n, double v) {
  if (!std::isfinite(v)) {
    std::ostringstream msg;
    msg << "non-finite result " << v;
    // roll back the partially recorded node
    args_.resize(n.arg_begin);
    aux_.resize(n.aux_begin);
    domain_error(n.op, msg.str());
  }
  nodes_.push_back(n);
  values_.push_back(v);
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::record(Op op, std::span<const NodeId> inputs, double aux) {
  if (op == Op::Dot) throw UsageError("record: use Tape::dot for dot nodes");
  if (inputs.size() != arity(op)) {
    throw UsageError(std::string("record: wrong input count for ") + op_name(op));
  }
  for (NodeId in : inputs) {
    if (in >= nodes_.size()) throw UsageError("record: input node not on tape");
  }
  Node n{op, static_cast<std::uint32_t>(args_.size()), static_cast<std::uint32_t>(inputs.size()),
         static_cast<std::uint32_t>(aux_.size())};
  args_.insert(args_.end(), inputs.begin(), inputs.end());
  aux_.push_back(aux);
  double v;
  try {
    v = evaluate(n, values_);
  } catch (...) {
    args_.resize(n.arg_begin);
    aux_.resize(n.aux_begin);
    throw;
  }
  const NodeId id = push(n, v);
  if (op == Op::Param) params_.push_back(id);
  return id;
}

NodeId Tape::dot(double bias, std::span<const Operand> lhs, std::span<const Operand> rhs) {
  if (lhs.size() != rhs.size()) throw UsageError("dot: operand lists differ in length");
  Node n{Op::Dot, static_cast<std::uint32_t>(args_.size()),
         static_cast<std::uint32_t>(2 * lhs.size()), static_cast<std::uint32_t>(aux_.size())};
  aux_.push_back(bias);
  auto encode = [&](const Operand& o) -> std::uint32_t {
    if (o.is_node) {
      if (o.node >= nodes_.size()) throw UsageError("dot: operand node not on tape");
      return o.node;
    }
    aux_.push_back(o.constant);
    return static_cast<std::uint32_t>(aux_.size() - 1) | kConstBit;
  };
  try {
    for (std::size_t k = 0; k < lhs.size(); ++k) {
      args_.push_back(encode(lhs[k]));
      args_.push_back(encode(rhs[k]));
    }
  } catch (...) {
    args_.resize(n.arg_begin);
    aux_.resize(n.aux_begin);
    throw;
  }
  return push(n, evaluate(n, values_));
}

double Tape::value(NodeId id) const {
  if (id >= values_.size()) throw UsageError("value: node not on tape");
  return values_[id];
}

std::vector<double> Tape::adjoints(NodeId root) const {
  if (root >= nodes_.size()) throw UsageError("backward: root not on tape");
  std::vector<double> adj(root + 1, 0.0);
  adj[root] = 1.0;
  for (std::size_t idx = root + 1; idx-- > 0;) {
    const double g = adj[idx];
    if (g == 0.0) continue;
    const Node& n = nodes_[idx];
    const std::uint32_t* a = args_.data() + n.arg_begin;
    const double v = values_[idx];
    switch (n.op) {
      case Op::Const:
      case Op::Param: break;
      case Op::Add:
        adj[a[0]] += g;
        adj[a[1]] += g;
        break;
      case Op::Sub:
        adj[a[0]] += g;
        adj[a[1]] -= g;
        break;
      case Op::Mul:
        adj[a[0]] += g * values_[a[1]];
        adj[a[1]] += g * values_[a[0]];
        break;
      case Op::Div: {
        const double d = values_[a[1]];
        adj[a[0]] += g / d;
        adj[a[1]] -= g * v / d;
        break;
      }
      case Op::Neg: adj[a[0]] -= g; break;
      case Op::Exp: adj[a[0]] += g * v; break;
      case Op::Log: adj[a[0]] += g / values_[a[0]]; break;
      case Op::PowConst: {
        const double c = aux_[n.aux_begin];
        adj[a[0]] += g * c * std::pow(values_[a[0]], c - 1.0);
        break;
      }
      case Op::Sigmoid: adj[a[0]] += g * v * (1.0 - v); break;
      case Op::Relu:
        if (values_[a[0]] > 0.0) adj[a[0]] += g;
        break;
      case Op::Square: adj[a[0]] += 2.0 * g * values_[a[0]]; break;
      case Op::Dot:
        for (std::uint32_t k = 0; k < n.arg_count; k += 2) {
          const std::uint32_t l = a[k], r = a[k + 1];
          if (!(l & kConstBit)) adj[l] += g * operand_value(r, values_);
          if (!(r & kConstBit)) adj[r] += g * operand_value(l, values_);
        }
        break;
      case Op::LogSigmoid:
        // d/dx log sigmoid(x) = sigmoid(-x)
        adj[a[0]] += g * stable_sigmoid(-values_[a[0]]);
        break;
    }
  }
  return adj;
}

std::vector<double> Tape::backward(NodeId root) const {
  const std::vector<double> adj = adjoints(root);
  std::vector<double> grad(params_.size(), 0.0);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (params_[k] <= root) grad[k] = adj[params_[k]];
  }
  return grad;
}

std::vector<double> Tape::replay() const {
  std::vector<double> values;
  values.reserve(nodes_.size());
  for (const Node& n : nodes_) values.push_back(evaluate(n, values));
  return values;
}

void Tape::rewind(const Mark& m) {
  nodes_.resize(m.nodes);
  values_.resize(m.nodes);
  args_.resize(m.args);
  aux_.resize(m.aux);
  params_.resize(m.params);
}

void Tape::clear() { rewind({0, 0, 0, 0}); }

void Tape::reserve(std::size_t nodes) {
  nodes_.reserve(nodes);
  values_.reserve(nodes);
  args_.reserve(4 * nodes);
  aux_.reserve(2 * nodes);
}

// ---------------------------------------------------------------------------
// Var arithmetic

namespace {

Tape* tape_of(const Var& a, const Var& b) {
  if (a.tape() && b.tape() && a.tape() != b.tape()) {
    throw UsageError("operands live on different tapes");
  }
  return a.tape() ? a.tape() : b.tape();
}

Tape::Operand operand(const Var& v) {
  return v.is_constant() ? Tape::Operand{false, 0, v.value()} : Tape::Operand{true, v.id(), 0.0};
}

Var unary(Op op, const Var& x, double aux = 0.0) {
  if (x.is_constant()) return Var(check_finite(op, eval_unary(op, x.value(), aux)));
  const NodeId in = x.id();
  return Var(x.tape(), x.tape()->record(op, std::span<const NodeId>(&in, 1), aux));
}

Var binary(Op op, const Var& a, const Var& b) {
  Tape* t = tape_of(a, b);
  if (!t) return Var(check_finite(op, eval_binary(op, a.value(), b.value())));
  const NodeId ids[2] = {a.is_constant() ? t->constant(a.value()) : a.id(),
                         b.is_constant() ? t->constant(b.value()) : b.id()};
  return Var(t, t->record(op, ids));
}

// c0 + c1 * x for a tape-backed x
Var affine1(double c0, double c1, const Var& x) {
  const Tape::Operand l{false, 0, c1};
  const Tape::Operand r = operand(x);
  return Var(x.tape(), x.tape()->dot(c0, std::span(&l, 1), std::span(&r, 1)));
}

}  // namespace

Var operator+(const Var& a, const Var& b) {
  if (a.is_constant() && b.is_constant()) return binary(Op::Add, a, b);
  if (a.is_constant()) return a.value() == 0.0 ? b : affine1(a.value(), 1.0, b);
  if (b.is_constant()) return b.value() == 0.0 ? a : affine1(b.value(), 1.0, a);
  return binary(Op::Add, a, b);
}

Var operator-(const Var& a, const Var& b) {
  if (a.is_constant() && b.is_constant()) return binary(Op::Sub, a, b);
  if (a.is_constant()) return affine1(a.value(), -1.0, b);
  if (b.is_constant()) return b.value() == 0.0 ? a : affine1(-b.value(), 1.0, a);
  return binary(Op::Sub, a, b);
}

Var operator*(const Var& a, const Var& b) {
  if (a.is_constant() && b.is_constant()) return binary(Op::Mul, a, b);
  if (a.is_constant()) {
    if (a.value() == 0.0) return Var(0.0);
    return a.value() == 1.0 ? b : affine1(0.0, a.value(), b);
  }
  if (b.is_constant()) {
    if (b.value() == 0.0) return Var(0.0);
    return b.value() == 1.0 ? a : affine1(0.0, b.value(), a);
  }
  return binary(Op::Mul, a, b);
}

Var operator/(const Var& a, const Var& b) {
  if (b.is_constant() && !a.is_constant()) {
    if (b.value() == 0.0) domain_error(Op::Div, "division by zero");
    return affine1(0.0, 1.0 / b.value(), a);
  }
  return binary(Op::Div, a, b);
}

Var operator-(const Var& a) { return unary(Op::Neg, a); }

Var exp(const Var& x) { return unary(Op::Exp, x); }
Var log(const Var& x) { return unary(Op::Log, x); }
Var pow_const(const Var& x, double c) { return unary(Op::PowConst, x, c); }
Var sigmoid(const Var& x) { return unary(Op::Sigmoid, x); }
Var log_sigmoid(const Var& x) { return unary(Op::LogSigmoid, x); }
Var square(const Var& x) { return unary(Op::Square, x); }

Var relu(const Var& x) {
  if (!x.is_constant() && x.value() <= 0.0) return Var(0.0);
  return unary(Op::Relu, x);
}

Var dot(const Var& bias, std::span<const Var> w, std::span<const Var> u) {
  if (w.size() != u.size()) throw UsageError("dot: length mismatch");
  thread_local std::vector<Tape::Operand> lhs, rhs;
  lhs.clear();
  rhs.clear();
  Tape* t = bias.tape();
  double c0 = 0.0;
  if (bias.is_constant()) {
    c0 = bias.value();
  } else {
    lhs.push_back(operand(bias));
    rhs.push_back({false, 0, 1.0});
  }
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (w[k].is_constant() && u[k].is_constant()) {
      c0 += w[k].value() * u[k].value();
      continue;
    }
    if ((w[k].is_constant() && w[k].value() == 0.0) || (u[k].is_constant() && u[k].value() == 0.0)) {
      continue;
    }
    t = tape_of(w[k], u[k]) ? tape_of(w[k], u[k]) : t;
    lhs.push_back(operand(w[k]));
    rhs.push_back(operand(u[k]));
  }
  if (lhs.empty()) return Var(c0);
  return Var(t, t->dot(c0, lhs, rhs));
}

Var dot(double bias, std::span<const double> c, std::span<const Var> x) {
  if (c.size() != x.size()) throw UsageError("dot: length mismatch");
  thread_local std::vector<Tape::Operand> lhs, rhs;
  lhs.clear();
  rhs.clear();
  Tape* t = nullptr;
  double c0 = bias;
  for (std::size_t k = 0; k < c.size(); ++k) {
    if (x[k].is_constant()) {
      c0 += c[k] * x[k].value();
    } else if (c[k] != 0.0) {
      t = x[k].tape();
      lhs.push_back({false, 0, c[k]});
      rhs.push_back(operand(x[k]));
    }
  }
  if (lhs.empty()) return Var(c0);
  return Var(t, t->dot(c0, lhs, rhs));
}

Var sum(std::span<const Var> x) {
  thread_local std::vector<double> ones;
  ones.assign(x.size(), 1.0);
  return dot(0.0, std::span<const double>(ones), x);
}

// ---------------------------------------------------------------------------

namespace {

double evaluate_builder(const TapeBuilder& builder, std::span<const double> params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (double p : params) vars.emplace_back(&tape, tape.param(p));
  return builder(tape, vars).value();
}

}  // namespace

std::vector<double> finite_diff(const TapeBuilder& builder, std::span<const double> params,
                                double step) {
  if (!(step > 0.0)) throw UsageError("finite_diff: step must be positive");
  const double f0 = evaluate_builder(builder, params);
  const double f1 = evaluate_builder(builder, params);
  if (f0 != f1) throw OracleInvalid("finite_diff: builder is not deterministic");
  std::vector<double> x(params.begin(), params.end());
  std::vector<double> grad(params.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double orig = x[k];
    x[k] = orig + step;
    const double up = evaluate_builder(builder, x);
    x[k] = orig - step;
    const double down = evaluate_builder(builder, x);
    x[k] = orig;
    grad[k] = (up - down) / (2.0 * step);
  }
  return grad;
}

std::vector<double> gradient(const TapeBuilder& builder, std::span<const double> params,
                             double* value_out) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (double p : params) vars.emplace_back(&tape, tape.param(p));
  const Var root = builder(tape, vars);
  if (value_out) *value_out = root.value();
  if (root.is_constant()) return std::vector<double>(params.size(), 0.0);
  return tape.backward(root.id());
}

}  // namespace flowvi::ad
