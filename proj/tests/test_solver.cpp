#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "lmp/errors.hpp"
#include "lmp/solver.hpp"
#include "oracle.hpp"
#include "test_support.hpp"

using namespace lmp;
using namespace lmp::testing;
using doctest::Approx;

namespace {

PoolingConfig cfg(double p, double m) { return {p, PoolingSize::absolute(m)}; }

}  // namespace

TEST_CASE("derive_parameters") {
  SUBCASE("p=2, m=1, n=2") {
    const auto prm = derive_parameters(2.0, PoolingSize::absolute(1.0), 2);
    CHECK(prm.q == Approx(2.0));
    CHECK(prm.gamma == Approx(0.7071067811865476).epsilon(1e-14));
    CHECK(prm.tau == Approx(0.7071067811865476).epsilon(1e-14));
    CHECK(prm.m == 1.0);
  }
  SUBCASE("p=1 limit") {
    const auto prm = derive_parameters(1.0, PoolingSize::absolute(2.0), 4);
    CHECK(std::isinf(prm.q));
    CHECK(prm.gamma == 1.0);
    CHECK(prm.tau == 0.5);
  }
  SUBCASE("p=1.3, m=25% of 100") {
    // 40-digit reference values.
    const auto prm = derive_parameters(1.3, PoolingSize::fraction(0.25), 100);
    CHECK(prm.m == 25.0);
    CHECK(prm.q == Approx(4.333333333333333).epsilon(1e-14));
    CHECK(prm.gamma == Approx(0.3455107294592219).epsilon(1e-13));
    CHECK(prm.tau == Approx(0.02904845712228650).epsilon(1e-13));
  }
  SUBCASE("p=inf collapses to the uniform weighting") {
    const auto prm = derive_parameters(kInfinity, PoolingSize::absolute(3.0), 10);
    CHECK(prm.q == 1.0);
    CHECK(prm.gamma == Approx(0.1));
    CHECK(prm.tau == prm.gamma);
  }
  SUBCASE("m = (gamma/tau)^p") {
    for (double p : {1.1, 1.7, 3.0}) {
      const auto prm = derive_parameters(p, PoolingSize::absolute(7.5), 40);
      CHECK(std::pow(prm.gamma / prm.tau, p) == Approx(7.5).epsilon(1e-12));
    }
  }
  SUBCASE("fractions are clamped to [1, n]") {
    CHECK(derive_parameters(1.7, PoolingSize::fraction(0.0), 100).m == 1.0);
    CHECK(derive_parameters(1.7, PoolingSize::fraction(0.25), 3).m == 1.0);
    CHECK(derive_parameters(1.7, PoolingSize::fraction(1.0), 7).m == 7.0);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(derive_parameters(0.9, PoolingSize::absolute(1.0), 4), InvalidParameter);
    CHECK_THROWS_AS(derive_parameters(std::nan(""), PoolingSize::absolute(1.0), 4), InvalidParameter);
    CHECK_THROWS_AS(derive_parameters(2.0, PoolingSize::absolute(0.5), 4), InvalidParameter);
    CHECK_THROWS_AS(derive_parameters(2.0, PoolingSize::absolute(5.0), 4), InvalidParameter);
    CHECK_THROWS_AS(derive_parameters(2.0, PoolingSize::fraction(1.5), 4), InvalidParameter);
    CHECK_THROWS_AS(derive_parameters(2.0, PoolingSize::absolute(1.0), 0), InvalidParameter);
  }
}

TEST_CASE("eta") {
  const std::vector<double> x{1.0, 3.0};
  CHECK(eta(0.0, std::vector<double>{0.5, 2.0, 1.0}, 2.0, 1.5) == 0.0);
  CHECK(eta(3.0, x, 2.0, 1.0) == Approx(-1.0));
  CHECK(eta(std::sqrt(10.0), x, 2.0, 1.0) == Approx(0.0).epsilon(1e-12).scale(1.0));
  CHECK(eta(4.0, x, 2.0, 1.0) > 0.0);
  CHECK_THROWS_AS(eta(-1.0, x, 2.0, 1.0), InvalidParameter);
  CHECK_THROWS_AS(eta(1.0, x, kInfinity, 1.0), InvalidParameter);
}

TEST_CASE("solve_pool examples") {
  SUBCASE("m = n gives the mean") {
    const auto out = solve_pool(std::vector<double>{2.0, 4.0}, cfg(2.0, 2.0));
    CHECK(out.pooled_loss == Approx(3.0).epsilon(1e-14));
    CHECK(out.weights[0] == Approx(0.5).epsilon(1e-14));
    CHECK(out.weights[1] == Approx(0.5).epsilon(1e-14));
  }
  SUBCASE("[3,1], p=2, m=1: tau = gamma, value gamma * ||l||_2") {
    const auto out = solve_pool(std::vector<double>{3.0, 1.0}, cfg(2.0, 1.0));
    CHECK(out.alpha_star == Approx(3.1622776601683795).epsilon(1e-13));
    CHECK(out.support.empty());
    CHECK(out.pooled_loss == Approx(2.2360679774997897).epsilon(1e-13));
    CHECK(out.weights[0] == Approx(0.6708203932499369).epsilon(1e-13));
    CHECK(out.weights[1] == Approx(0.2236067977499790).epsilon(1e-13));
    CHECK(out.path == SolvePath::kGeneral);
  }
  SUBCASE("p = 1, m = 2 is the mean of the top two") {
    const auto out = solve_pool(std::vector<double>{4.0, 2.0, 1.0, 1.0}, cfg(1.0, 2.0));
    CHECK(out.support == std::vector<std::size_t>{0, 1});
    CHECK(out.alpha_star == 1.0);
    CHECK(out.params.tau == 0.5);
    CHECK(out.pooled_loss == 3.0);
    CHECK(out.path == SolvePath::kTopK);
  }
  SUBCASE("equal losses pool to the common value") {
    for (double p : {1.1, 1.5, 2.0, 6.0}) {
      for (double m : {1.0, 2.5, 7.0, 9.0}) {
        const std::vector<double> x(9, 0.37);
        CHECK(solve_pool(x, cfg(p, m)).pooled_loss == Approx(0.37).epsilon(1e-12));
      }
    }
  }
  SUBCASE("n = 1") {
    for (double p : {1.0, 1.5, kInfinity}) {
      const auto out = solve_pool(std::vector<double>{2.5}, cfg(p, 1.0));
      CHECK(out.pooled_loss == Approx(2.5).epsilon(1e-15));
      CHECK(out.weights[0] == Approx(1.0).epsilon(1e-15));
    }
  }
  SUBCASE("all-zero losses") {
    const auto out = solve_pool(std::vector<double>{0.0, 0.0, 0.0}, cfg(1.7, 2.0));
    CHECK(out.pooled_loss == 0.0);
    CHECK(out.alpha_star == 0.0);
    CHECK(out.support.empty());
    CHECK(out.weights == std::vector<double>{0.0, 0.0, 0.0});
    CHECK(out.path == SolvePath::kZero);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(solve_pool(std::vector<double>{1.0, -1.0}, cfg(2.0, 1.0)), InvalidInput);
    CHECK_THROWS_AS(solve_pool(std::vector<double>{1.0, NAN}, cfg(2.0, 1.0)), InvalidInput);
    CHECK_THROWS_AS(solve_pool(std::vector<double>{1.0, INFINITY}, cfg(2.0, 1.0)), InvalidInput);
    CHECK_THROWS_AS(solve_pool(std::vector<double>{}, cfg(2.0, 1.0)), InvalidInput);
    CHECK_THROWS_AS(solve_pool(std::vector<double>{1.0, 2.0}, cfg(2.0, 3.0)), InvalidParameter);
  }
}

TEST_CASE("p = 1 with fractional m spreads the residual mass over ties") {
  // J* = {5}, alpha* = 3 shared by indices 1 and 3; residual tau * 0.5.
  const std::vector<double> x{1.0, 3.0, 2.0, 3.0, 0.5, 5.0};
  const auto out = solve_pool(x, cfg(1.0, 1.5));
  const double tau = 1.0 / 1.5;
  CHECK(out.support == std::vector<std::size_t>{5});
  CHECK(out.alpha_star == 3.0);
  CHECK(out.weights[5] == Approx(tau));
  CHECK(out.weights[1] == Approx(tau * 0.25));
  CHECK(out.weights[3] == Approx(tau * 0.25));
  CHECK(out.weights[0] == 0.0);
  CHECK(out.pooled_loss == Approx(tau * (5.0 + 0.5 * 3.0)));
  CHECK(dot(out.weights, x) == Approx(out.pooled_loss).epsilon(1e-14));
}

TEST_CASE("p = inf and the uniform fast path") {
  const std::vector<double> x{0.0, 1.0, 5.0, 2.0};
  const auto slow = solve_pool(x, cfg(kInfinity, 2.0));
  const auto fast = uniform_pool(x);
  CHECK(slow.pooled_loss == Approx(2.0).epsilon(1e-15));
  CHECK(fast.pooled_loss == Approx(2.0).epsilon(1e-15));
  for (double w : slow.weights) CHECK(w == Approx(0.25));
  CHECK(slow.path == SolvePath::kUniform);
}

TEST_CASE("dual_objective") {
  const std::vector<double> x{3.0, 1.0};
  const auto c = cfg(2.0, 1.0);
  CHECK(dual_objective(std::vector<double>{0.0, 0.0}, x, c) == Approx(2.2360679774997897).epsilon(1e-13));
  CHECK(dual_objective(x, x, c) == Approx(2.8284271247461903).epsilon(1e-13));
  const auto out = solve_pool(x, c);
  CHECK(dual_objective(out.dual, x, c) == Approx(out.pooled_loss).epsilon(1e-12));
  CHECK_THROWS_AS(dual_objective(std::vector<double>{-0.1, 0.0}, x, c), InvalidParameter);
  CHECK_THROWS_AS(dual_objective(std::vector<double>{0.0}, x, c), InvalidParameter);
}

TEST_CASE("gradient_wrt_losses matches central differences") {
  auto check = [](const std::vector<double>& x, const PoolingConfig& c) {
    const auto grad = gradient_wrt_losses(solve_pool(x, c));
    const auto fd = central_differences(
        [&](std::span<const double> y) { return solve_pool(y, c).pooled_loss; }, x, 1e-6);
    CHECK(relative_sup_error(grad, fd) <= 1e-4);
    return grad;
  };
  const auto g1 = check({3.0, 1.0}, cfg(2.0, 1.0));
  CHECK(g1[0] == Approx(0.6708203932499369).epsilon(1e-12));
  CHECK(g1[1] == Approx(0.2236067977499790).epsilon(1e-12));
  const auto g2 = check({2.0, 4.0}, cfg(2.0, 2.0));
  CHECK(g2[0] == Approx(0.5));
  CHECK(g2[1] == Approx(0.5));
  const auto g3 = check({4.0, 2.0, 1.0, 1.0}, cfg(1.0, 2.0));
  CHECK(g3 == std::vector<double>{0.5, 0.5, 0.0, 0.0});
}

TEST_CASE("normalize_then_solve") {
  SUBCASE("zero losses") {
    const auto out = normalize_then_solve(std::vector<double>{0.0, 0.0, 0.0}, cfg(1.3, 1.5));
    CHECK(out.pooled_loss == 0.0);
    CHECK(out.weights == std::vector<double>{0.0, 0.0, 0.0});
  }
  SUBCASE("large q at large magnitude") {
    const auto big = normalize_then_solve(std::vector<double>{3e8, 1e8}, cfg(1.05, 1.0));
    const auto small = normalize_then_solve(std::vector<double>{3.0, 1.0}, cfg(1.05, 1.0));
    CHECK(std::fabs(big.pooled_loss - 1e8 * small.pooled_loss) <= 1e-9 * big.pooled_loss);
    // The oracle confirms the small-magnitude value.
    const auto ref = oracle::maximize_primal(std::vector<double>{3.0, 1.0}, cfg(1.05, 1.0));
    CHECK(ref.value == Approx(small.pooled_loss).epsilon(1e-8));
  }
  SUBCASE("exact doubling") {
    const auto a = normalize_then_solve(std::vector<double>{3.0, 1.0}, cfg(2.0, 1.0));
    const auto b = normalize_then_solve(std::vector<double>{6.0, 2.0}, cfg(2.0, 1.0));
    CHECK(b.pooled_loss == 2.0 * a.pooled_loss);
    CHECK(a.weights == b.weights);
  }
}

TEST_CASE("numerical guard for p close to 1") {
  const std::vector<double> x{0.2, 0.9, 0.4, 1.0, 0.7};
  const auto near = solve_pool(x, cfg(1.0005, 2.5));
  CHECK(near.path == SolvePath::kExtendedPrecision);
  CHECK(std::isfinite(near.pooled_loss));
  const auto capped = solve_pool(x, cfg(1.00005, 2.5));
  CHECK(capped.path == SolvePath::kTopK);
  const auto top = solve_pool(x, cfg(1.0, 2.5));
  CHECK(near.pooled_loss == Approx(top.pooled_loss).epsilon(1e-2));
  CHECK(capped.pooled_loss == Approx(top.pooled_loss).epsilon(1e-3));
}

TEST_CASE("invariants over random instances") {
  const auto instances = random_instances(2024, 300);
  for (const auto& inst : instances) {
    const auto& x = inst.losses;
    const auto out = solve_pool(x, inst.config);
    const auto& prm = out.params;
    CAPTURE(x.size());
    CAPTURE(inst.config.p);
    CAPTURE(prm.m);

    // Upper bound of the mean.
    CHECK(out.pooled_loss >= mean(x) * (1.0 - 1e-12));
    // Feasibility and primal consistency.
    CHECK(pnorm(out.weights, prm.p) <= prm.gamma * (1.0 + 1e-9));
    CHECK(max_of(out.weights) <= prm.tau * (1.0 + 1e-9));
    CHECK(std::fabs(dot(out.weights, x) - out.pooled_loss) <= 1e-9 * out.pooled_loss);
    // Strong duality and the KKT fixed point.
    CHECK(std::fabs(dual_objective(out.dual, x, inst.config) - out.pooled_loss) <=
          1e-7 * out.pooled_loss);
    std::vector<double> xn(x);
    const double s = max_of(x);
    for (double& v : xn) v /= s;
    std::vector<double> dn(out.dual);
    for (double& v : dn) v /= s;
    CHECK(oracle::kkt_residual(dn, xn, inst.config) <= 1e-7);
    // alpha* is the largest root of eta on the normalized losses.
    const double a = out.alpha_star / s;
    CHECK(std::fabs(eta(a, xn, prm.q, prm.m)) <= 1e-7);
    for (double bump : {1e-3, 1e-1, 1.0}) CHECK(eta(a * (1.0 + bump), xn, prm.q, prm.m) > 0.0);
    // Support bounds.
    CHECK(static_cast<double>(out.support.size()) < prm.m);
    const auto positive = std::count_if(out.weights.begin(), out.weights.end(),
                                         [](double w) { return w > 0.0; });
    CHECK(static_cast<double>(positive) >= std::ceil(prm.m));
    // Weights are monotone in the loss.
    for (std::size_t u = 0; u < x.size(); ++u) {
      for (std::size_t v = 0; v < x.size(); ++v) {
        if (x[u] > x[v]) CHECK(out.weights[u] >= out.weights[v]);
      }
    }
    // Capped pixels are exactly those above alpha*.
    for (std::size_t u : out.support) CHECK(out.weights[u] == prm.tau);
    for (std::size_t u = 0; u < x.size(); ++u) {
      CHECK(std::fabs(out.dual[u] - std::max(x[u] - out.alpha_star, 0.0)) <= 1e-12 * s);
    }
  }
}

TEST_CASE("permutation equivariance and tie invariance") {
  std::mt19937_64 rng(99);
  for (const auto& inst : random_instances(7, 60)) {
    auto x = inst.losses;
    // Introduce ties.
    if (x.size() > 3) x[1] = x[2] = x[3];
    std::vector<std::size_t> perm(x.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> y(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) y[k] = x[perm[k]];

    const auto a = solve_pool(x, inst.config);
    const auto b = solve_pool(y, inst.config);
    CHECK(b.pooled_loss == Approx(a.pooled_loss).epsilon(1e-12));
    for (std::size_t k = 0; k < x.size(); ++k) {
      // Weights follow the permutation wherever the loss is untied.
      const bool tied = std::count(x.begin(), x.end(), x[perm[k]]) > 1;
      if (!tied) CHECK(b.weights[k] == Approx(a.weights[perm[k]]).epsilon(1e-12));
    }
  }
}

TEST_CASE("positive homogeneity") {
  for (const auto& inst : random_instances(11, 100, {1.05, 1.3, 2.0, 4.0})) {
    const auto base = solve_pool(inst.losses, inst.config);
    for (double c : {1e-6, 3.0, 1e6}) {
      auto y = inst.losses;
      for (double& v : y) v *= c;
      const auto scaled = solve_pool(y, inst.config);
      CHECK(std::fabs(scaled.pooled_loss - c * base.pooled_loss) <= 1e-9 * c * base.pooled_loss);
      for (std::size_t k = 0; k < y.size(); ++k) {
        CHECK(scaled.weights[k] == Approx(base.weights[k]).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("limit behaviour in p and m") {
  std::mt19937_64 rng(5);
  const auto x = uniform_losses(rng, 40);
  SUBCASE("pooled loss does not increase with m") {
    for (double p : {1.0, 1.3, 2.0, 5.0}) {
      double prev = kInfinity;
      for (double m = 1.0; m <= 40.0; m += 0.5) {
        const double v = solve_pool(x, cfg(p, m)).pooled_loss;
        CHECK(v <= prev * (1.0 + 1e-12));
        prev = v;
      }
    }
  }
  SUBCASE("large p at m = n is nearly uniform") {
    const auto out = solve_pool(x, cfg(50.0, 40.0));
    for (double w : out.weights) CHECK(std::fabs(w - 1.0 / 40.0) <= 1e-2);
  }
}

TEST_CASE("special-case equivalences") {
  for (const auto& inst : random_instances(31, 100)) {
    const auto& x = inst.losses;
    const auto n = static_cast<double>(x.size());
    CHECK(solve_pool(x, cfg(1.0, 1.0)).pooled_loss == max_of(x));
    CHECK(std::fabs(solve_pool(x, cfg(inst.config.p, n)).pooled_loss - mean(x)) <= 1e-12 * mean(x));
    std::vector<double> sorted(x);
    std::sort(sorted.rbegin(), sorted.rend());
    const std::size_t k = 1 + x.size() / 3;
    const double top = std::accumulate(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), 0.0) /
                       static_cast<double>(k);
    CHECK(std::fabs(solve_pool(x, cfg(1.0, static_cast<double>(k))).pooled_loss - top) <= 1e-12 * top);
  }
}
