#pragma once

// Plain-double counterparts of the ad:: primitives so numerical code can be
// written once as a template over the scalar type (double or ad::Var).

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>

#include "flowvi/ad.hpp"

namespace flowvi {

using ad::Var;

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.value(); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
inline double log_sigmoid(double x) {
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}
inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double square(double x) { return x * x; }
inline double pow_const(double x, double c) { return std::pow(x, c); }

inline double dot(double bias, std::span<const double> w, std::span<const double> u) {
  double acc = bias;
  for (std::size_t k = 0; k < w.size(); ++k) acc += w[k] * u[k];
  return acc;
}

inline double sum(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v;
  return acc;
}

using ad::dot;
using ad::log_sigmoid;
using ad::pow_const;
using ad::relu;
using ad::sigmoid;
using ad::square;
using ad::sum;

// Throws NumericDomainError when a plain-double computation went off the rails.
inline double require_finite(double v, const char* where) {
  if (!std::isfinite(v)) throw ad::NumericDomainError(std::string(where) + ": non-finite value");
  return v;
}
inline const Var& require_finite(const Var& v, const char*) { return v; }  // tape checks every node

// log N(x | mean, exp(log_sd)) with the scale carried on the log axis.
template <class T>
T normal_logpdf_logscale(const T& x, const T& mean, const T& log_sd) {
  using std::exp;
  using ad::exp;
  const T r = (x - mean) * exp(-log_sd);
  return T(-0.5) * square(r) - log_sd - T(kHalfLog2Pi);
}

inline double std_normal_logpdf(double x) { return -0.5 * x * x - kHalfLog2Pi; }

}  // namespace flowvi
