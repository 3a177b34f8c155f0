#include "lmp/solver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "lmp/errors.hpp"

namespace lmp {
namespace {

std::vector<std::size_t> ascending_order(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  return order;
}

SolveOutcome zero_outcome(const PoolingParameters& params) {
  SolveOutcome out;
  out.params = params;
  out.path = SolvePath::kZero;
  out.weights.assign(params.n, 0.0);
  out.dual.assign(params.n, 0.0);
  return out;
}

void finish_support(SolveOutcome& out, const std::vector<std::size_t>& order,
                    std::size_t first) {
  out.support.assign(order.begin() + static_cast<std::ptrdiff_t>(first), order.end());
  std::sort(out.support.begin(), out.support.end());
}

// p > 1 on losses normalized to max 1.
SolveOutcome solve_dual_threshold(std::span<const double> x, const PoolingParameters& prm,
                                  double m) {
  const std::size_t n = x.size();
  const auto order = ascending_order(x);
  const long double q = prm.q;
  const long double offset = static_cast<long double>(m) - static_cast<long double>(n);

  // Walk losses in ascending order; the first i with eta_i > 0 starts J*.
  long double a = 0.0L;
  long double a_prev = 0.0L;
  long double c_prev = 0.0L;
  std::size_t i = 1;
  bool hit = false;
  for (; i <= n; ++i) {
    const long double c = offset + static_cast<long double>(i);
    const long double lq = std::pow(static_cast<long double>(x[order[i - 1]]), q);
    a_prev = a;
    a += lq;
    if (c * lq - a > 0.0L) {
      hit = true;
      c_prev = c - 1.0L;
      break;
    }
  }
  if (!hit) {
    i = n + 1;
    a_prev = a;
    c_prev = offset + static_cast<long double>(n);
  }

  SolveOutcome out;
  out.params = prm;
  out.path = prm.p < 1.0 + kExtendedPrecisionBand ? SolvePath::kExtendedPrecision
                                                   : SolvePath::kGeneral;
  const long double alpha = a_prev > 0.0L ? std::pow(a_prev / c_prev, 1.0L / q) : 0.0L;
  out.alpha_star = static_cast<double>(alpha);
  finish_support(out, order, i - 1);

  std::vector<char> capped(n, 0);
  long double capped_sum = 0.0L;
  for (std::size_t j = i - 1; j < n; ++j) {
    capped[order[j]] = 1;
    capped_sum += x[order[j]];
  }

  out.weights.assign(n, 0.0);
  out.dual.assign(n, 0.0);
  for (std::size_t u = 0; u < n; ++u) {
    if (capped[u]) {
      out.weights[u] = prm.tau;
    } else if (alpha > 0.0L) {
      const long double ratio = static_cast<long double>(x[u]) / alpha;
      out.weights[u] = std::min(prm.tau, static_cast<double>(prm.tau * std::pow(ratio, q - 1.0L)));
    }
    out.dual[u] = std::max(x[u] - out.alpha_star, 0.0);
  }
  const long double support_size = static_cast<long double>(out.support.size());
  out.pooled_loss =
      static_cast<double>(static_cast<long double>(prm.tau) *
                          (capped_sum + (static_cast<long double>(m) - support_size) * alpha));
  return out;
}

// p = 1: J* is the floor(m) largest losses, alpha* the next one. The residual
// mass tau*(m - floor(m)) is spread uniformly over the losses tied with alpha*.
SolveOutcome solve_top_k(std::span<const double> x, const PoolingParameters& prm) {
  const std::size_t n = x.size();
  const auto order = ascending_order(x);
  const auto k = std::min(n, static_cast<std::size_t>(std::floor(prm.m)));
  const std::size_t first = n - k;
  const double fractional = prm.m - static_cast<double>(k);

  SolveOutcome out;
  out.params = prm;
  out.path = SolvePath::kTopK;
  out.alpha_star = first > 0 ? x[order[first - 1]] : 0.0;
  finish_support(out, order, first);

  out.weights.assign(n, 0.0);
  out.dual.assign(n, 0.0);
  long double capped_sum = 0.0L;
  for (std::size_t j = first; j < n; ++j) {
    out.weights[order[j]] = prm.tau;
    capped_sum += x[order[j]];
  }
  if (out.alpha_star > 0.0 && fractional > 0.0) {
    std::size_t ties = 0;
    for (std::size_t j = 0; j < first; ++j) ties += x[order[j]] == out.alpha_star;
    const double share = prm.tau * fractional / static_cast<double>(ties);
    for (std::size_t j = 0; j < first; ++j) {
      if (x[order[j]] == out.alpha_star) out.weights[order[j]] = share;
    }
  }
  for (std::size_t u = 0; u < n; ++u) out.dual[u] = std::max(x[u] - out.alpha_star, 0.0);
  out.pooled_loss = static_cast<double>(
      static_cast<long double>(prm.tau) *
      (capped_sum + static_cast<long double>(fractional) * out.alpha_star));
  return out;
}

SolveOutcome solve_normalized(std::span<const double> x, const PoolingParameters& prm) {
  if (prm.is_uniform()) {
    // q = 1, tau = gamma: the loop with effective m = n; every weight is tau.
    auto out = solve_dual_threshold(x, prm, static_cast<double>(prm.n));
    std::fill(out.weights.begin(), out.weights.end(), prm.tau);
    out.path = SolvePath::kUniform;
    return out;
  }
  if (prm.is_max_pooling() || prm.q > kMaxDualExponent) return solve_top_k(x, prm);
  return solve_dual_threshold(x, prm, prm.m);
}

std::string describe(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

double PoolingSize::resolve(std::size_t n) const {
  const double count = static_cast<double>(n);
  if (is_fraction_) {
    if (!(value_ >= 0.0 && value_ <= 1.0)) {
      throw InvalidParameter("m fraction must lie in [0, 1], got " + describe(value_));
    }
    return std::clamp(value_ * count, 1.0, count);
  }
  if (!(value_ >= 1.0 && value_ <= count)) {
    throw InvalidParameter("m must lie in [1, n] = [1, " + std::to_string(n) + "], got " +
                           describe(value_));
  }
  return value_;
}

PoolingParameters derive_parameters(double p, PoolingSize m, std::size_t n) {
  if (n == 0) throw InvalidParameter("n must be positive");
  if (!(p >= 1.0)) throw InvalidParameter("p must be >= 1, got " + describe(p));

  PoolingParameters prm;
  prm.n = n;
  prm.p = p;
  prm.m = m.resolve(n);
  const double count = static_cast<double>(n);
  if (p == 1.0) {
    prm.q = kInfinity;
    prm.gamma = 1.0;
    prm.tau = 1.0 / prm.m;
  } else if (p == kInfinity) {
    prm.q = 1.0;
    prm.gamma = 1.0 / count;
    prm.tau = prm.gamma;
  } else {
    prm.q = p / (p - 1.0);
    prm.gamma = std::pow(count, -1.0 / prm.q);
    prm.tau = prm.gamma * std::pow(prm.m, -1.0 / p);
  }
  return prm;
}

double eta(double alpha, std::span<const double> losses, double q, double m) {
  if (!(q >= 1.0 && q < kInfinity)) throw InvalidParameter("eta requires q in [1, inf)");
  if (!(alpha >= 0.0)) throw InvalidParameter("eta requires alpha >= 0");
  long double above = 0.0L;
  long double below_sum = 0.0L;
  for (double l : losses) {
    if (l > alpha) {
      above += 1.0L;
    } else {
      below_sum += std::pow(static_cast<long double>(l), static_cast<long double>(q));
    }
  }
  const long double head =
      (static_cast<long double>(m) - above) *
      std::pow(static_cast<long double>(alpha), static_cast<long double>(q));
  return static_cast<double>(head - below_sum);
}

void validate_losses(std::span<const double> losses) {
  if (losses.empty()) throw InvalidInput("loss vector must not be empty");
  for (std::size_t u = 0; u < losses.size(); ++u) {
    const double l = losses[u];
    if (!std::isfinite(l)) {
      throw InvalidInput("loss at index " + std::to_string(u) + " is not finite");
    }
    if (l < 0.0) {
      throw InvalidInput("loss at index " + std::to_string(u) + " is negative (" +
                         describe(l) + "); losses must be non-negative");
    }
  }
}

SolveOutcome normalize_then_solve(std::span<const double> losses, const PoolingConfig& config) {
  validate_losses(losses);
  const auto prm = derive_parameters(config, losses.size());
  const double scale = *std::max_element(losses.begin(), losses.end());
  if (scale == 0.0) return zero_outcome(prm);

  std::vector<double> x(losses.begin(), losses.end());
  for (double& v : x) v /= scale;
  auto out = solve_normalized(x, prm);
  out.pooled_loss *= scale;
  out.alpha_star *= scale;
  for (double& v : out.dual) v *= scale;
  return out;
}

SolveOutcome solve_pool(std::span<const double> losses, const PoolingConfig& config) {
  return normalize_then_solve(losses, config);
}

SolveOutcome uniform_pool(std::span<const double> losses) {
  validate_losses(losses);
  const auto prm = derive_parameters(kInfinity, PoolingSize::fraction(1.0), losses.size());
  SolveOutcome out;
  out.params = prm;
  out.path = SolvePath::kUniform;
  out.weights.assign(losses.size(), prm.tau);
  out.dual.assign(losses.size(), 0.0);
  long double sum = 0.0L;
  for (double l : losses) sum += l;
  out.pooled_loss = static_cast<double>(sum / static_cast<long double>(losses.size()));
  return out;
}

double dual_objective(std::span<const double> lambda, std::span<const double> losses,
                      const PoolingConfig& config) {
  validate_losses(losses);
  if (lambda.size() != losses.size()) {
    throw InvalidParameter("lambda and losses must have the same length");
  }
  const auto prm = derive_parameters(config, losses.size());
  long double lambda_sum = 0.0L;
  long double residual = 0.0L;
  for (std::size_t u = 0; u < losses.size(); ++u) {
    if (!(lambda[u] >= 0.0)) {
      throw InvalidParameter("lambda at index " + std::to_string(u) + " is negative");
    }
    lambda_sum += lambda[u];
    const long double d = std::fabs(static_cast<long double>(losses[u]) - lambda[u]);
    if (prm.q == kInfinity) {
      residual = std::max(residual, d);
    } else {
      residual += std::pow(d, static_cast<long double>(prm.q));
    }
  }
  const long double norm =
      prm.q == kInfinity ? residual : std::pow(residual, 1.0L / static_cast<long double>(prm.q));
  return static_cast<double>(prm.tau * lambda_sum + prm.gamma * norm);
}

std::vector<double> gradient_wrt_losses(const SolveOutcome& outcome) { return outcome.weights; }

}  // namespace lmp
