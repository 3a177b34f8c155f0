#pragma once

// Loss max-pooling: L_W(l) = max { w . l : ||w||_p <= gamma, ||w||_inf <= tau }
// with gamma = n^(-1/q) and tau = gamma * m^(-1/p). The solver computes the
// value, the optimal weighting w*, the dual threshold alpha*, the capped
// support J* and the dual variable lambda* in O(n log n).

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace lmp {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Pooling size m, given either as an absolute pixel count or as a fraction
/// of the number of (valid) losses it is applied to.
class PoolingSize {
 public:
  static PoolingSize absolute(double m) { return PoolingSize(m, false); }
  static PoolingSize fraction(double f) { return PoolingSize(f, true); }

  bool is_fraction() const { return is_fraction_; }
  double value() const { return value_; }

  /// Absolute m must lie in [1, n]; a fraction f in [0, 1] resolves to f*n
  /// clamped to [1, n].
  double resolve(std::size_t n) const;

 private:
  PoolingSize(double v, bool frac) : value_(v), is_fraction_(frac) {}
  double value_;
  bool is_fraction_;
};

struct PoolingConfig {
  double p = 1.3;
  PoolingSize m = PoolingSize::fraction(0.25);
};

/// Quantities derived from (p, m) for a loss vector of length n.
/// For p = 1, q = +inf and gamma = 1; for p = inf, q = 1 and tau = gamma = 1/n.
struct PoolingParameters {
  std::size_t n = 0;
  double p = 0.0;
  double q = 0.0;
  double m = 0.0;
  double gamma = 0.0;
  double tau = 0.0;

  bool is_max_pooling() const { return p == 1.0; }
  bool is_uniform() const { return p == kInfinity; }
};

PoolingParameters derive_parameters(double p, PoolingSize m, std::size_t n);

inline PoolingParameters derive_parameters(const PoolingConfig& config, std::size_t n) {
  return derive_parameters(config.p, config.m, n);
}

/// eta(alpha) = (m - |J_alpha|) alpha^q - sum_{l(u) <= alpha} l(u)^q,
/// J_alpha = { u : l(u) > alpha }. Requires q in [1, inf) and alpha >= 0.
double eta(double alpha, std::span<const double> losses, double q, double m);

enum class SolvePath {
  kZero,               // all losses zero
  kGeneral,            // p > 1 accumulation loop
  kExtendedPrecision,  // p > 1 with 1 < p < 1 + 1e-3 (very large q)
  kTopK,               // p = 1, or q beyond the cap
  kUniform,            // p = inf
};

struct SolveOutcome {
  double alpha_star = 0.0;
  std::vector<std::size_t> support;  // J*, ascending original indices
  double pooled_loss = 0.0;
  std::vector<double> weights;  // w*
  std::vector<double> dual;     // lambda*
  PoolingParameters params;
  SolvePath path = SolvePath::kGeneral;
};

/// Largest q handled by the accumulation loop; beyond it the p = 1
/// construction is used.
inline constexpr double kMaxDualExponent = 1e4;
/// Below p = 1 + kExtendedPrecisionBand the outcome is flagged kExtendedPrecision.
inline constexpr double kExtendedPrecisionBand = 1e-3;

/// Throws InvalidInput unless every loss is finite and non-negative and n >= 1.
void validate_losses(std::span<const double> losses);

SolveOutcome solve_pool(std::span<const double> losses, const PoolingConfig& config);

/// Divides by max(l), solves, and scales pooled_loss, alpha* and lambda* back.
/// Weights are scale-invariant and returned as computed.
SolveOutcome normalize_then_solve(std::span<const double> losses, const PoolingConfig& config);

/// Average pooling (the p = inf fast path).
SolveOutcome uniform_pool(std::span<const double> losses);

/// g(lambda) = tau * sum(lambda) + gamma * ||l - lambda||_q.
double dual_objective(std::span<const double> lambda, std::span<const double> losses,
                      const PoolingConfig& config);

/// dL_W / dl. Equals w*; used as the (sub)gradient where J* is not locally constant.
std::vector<double> gradient_wrt_losses(const SolveOutcome& outcome);

}  // namespace lmp
