#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <sbm/bridge.hpp>
#include <sbm/random.hpp>

using namespace sbm;

namespace {

// Quadrature oracle: trapezoidal integration of g^2 over [0, t].
double sigma2_quadrature(const BridgeSchedule& s, double t, std::size_t n = 50000) {
  double acc = 0.0;
  const double h = t / static_cast<double>(n);
  for (std::size_t i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    acc += w * ve_g2(s, h * static_cast<double>(i));
  }
  return acc * h;
}

}  // namespace

TEST_CASE("schedule validation rejects bad parameters") {
  BridgeSchedule s;
  CHECK_NOTHROW(s.validate());
  s.c = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = BridgeSchedule{};
  s.k = 1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = BridgeSchedule{};
  s.kind = "vp";
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = BridgeSchedule{};
  s.t_eps = 2.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("ve_sigma2 matches trapezoidal quadrature of g^2") {
  RandomStream rng(3);
  for (int i = 0; i < 20; ++i) {
    BridgeSchedule s;
    s.c = rng.uniform(0.05, 2.0);
    s.k = rng.uniform(1.2, 5.0);
    const double t = rng.uniform(0.05, 1.0);
    const double got = ve_sigma2(s, t);
    const double want = sigma2_quadrature(s, t);
    CHECK(std::abs(got - want) / want < 1e-8);
  }
  BridgeSchedule s;
  CHECK_THROWS_AS(ve_sigma2(s, -0.1), DomainError);
  CHECK_THROWS_AS(ve_sigma2(s, 1.1), DomainError);
}

TEST_CASE("marginal boundaries are exact and weights sum to one") {
  BridgeSchedule s;
  auto m0 = marginal_coeffs(s, 0.0);
  CHECK(m0.w_x == 1.0);
  CHECK(m0.w_y == 0.0);
  CHECK(m0.sigma_x == 0.0);
  auto mT = marginal_coeffs(s, s.T);
  CHECK(mT.w_x == 0.0);
  CHECK(mT.w_y == 1.0);
  CHECK(mT.sigma_x == 0.0);
  double prev_wy = -1.0;
  for (int i = 0; i <= 64; ++i) {
    const double t = s.T * static_cast<double>(i) / 64.0;
    auto m = marginal_coeffs(s, t);
    CHECK(std::abs(m.w_x + m.w_y - 1.0) < 1e-12);
    CHECK(m.w_y >= prev_wy);  // interpolation monotonicity
    prev_wy = m.w_y;
  }
}

TEST_CASE("sample_state boundary exactness and interior formula") {
  BridgeSchedule sched;
  RandomStream rng(5);
  auto x = Tensor64::randn({2, 3}, rng);
  auto y = Tensor64::randn({2, 3}, rng);
  auto z = Tensor64::randn({2, 3}, rng);
  CHECK(sample_state(x, y, 0.0, z, sched).value() == x.value());
  CHECK(sample_state(x, y, sched.T, z, sched).value() == y.value());

  const double t = 0.4;
  auto m = marginal_coeffs(sched, t);
  auto got = sample_state(x, y, t, Tensor64::zeros({2, 3}), sched);
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(got.value()[i] ==
          doctest::Approx(m.w_x * x.value()[i] + m.w_y * y.value()[i]).epsilon(1e-12));

  CHECK_THROWS_AS(sample_state(x, y, t, Tensor64::zeros({3}), sched), DimensionError);
}

TEST_CASE("sample_state matches its marginal moments over many draws") {
  BridgeSchedule sched;
  RandomStream rng(7);
  const double t = 0.6;
  auto m = marginal_coeffs(sched, t);
  auto x = Tensor64::full({1}, 2.0);
  auto y = Tensor64::full({1}, -1.0);
  const std::size_t K = 100000;
  double sum = 0, sumsq = 0;
  for (std::size_t i = 0; i < K; ++i) {
    auto z = Tensor64::randn({1}, rng);
    const double v = sample_state(x, y, t, z, sched, ComplexConvention::full).item();
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / K;
  const double var = sumsq / K - mean * mean;
  const double want_mean = m.w_x * 2.0 + m.w_y * -1.0;
  const double want_var = m.sigma_x * m.sigma_x;
  const double se_mean = m.sigma_x / std::sqrt(static_cast<double>(K));
  const double se_var = want_var * std::sqrt(2.0 / static_cast<double>(K));
  CHECK(std::abs(mean - want_mean) < 3 * se_mean);
  CHECK(std::abs(var - want_var) < 3 * se_var);

  // split convention halves the per-plane variance
  double sumsq_split = 0, sum_split = 0;
  RandomStream rng2(9);
  for (std::size_t i = 0; i < K; ++i) {
    auto z = Tensor64::randn({1}, rng2);
    const double v = sample_state(x, y, t, z, sched, ComplexConvention::split).item();
    sum_split += v;
    sumsq_split += v * v;
  }
  const double mean_s = sum_split / K;
  const double var_split = sumsq_split / K - mean_s * mean_s;
  CHECK(std::abs(var_split - 0.5 * want_var) < 3 * se_var);
}

TEST_CASE("posterior_step ordering, s=0 exactness and the scalar ode example") {
  BridgeSchedule sched;
  RandomStream rng(11);
  auto x_t = Tensor64::randn({4}, rng);
  auto x_hat = Tensor64::randn({4}, rng);
  auto z = Tensor64::randn({4}, rng);
  CHECK_THROWS_AS(posterior_step(x_t, x_hat, 0.3, 0.3, z, sched, SampleMode::sde), ContractError);
  CHECK_THROWS_AS(posterior_step(x_t, x_hat, 0.3, 0.5, z, sched, SampleMode::sde), ContractError);

  auto at_zero = posterior_step(x_t, x_hat, 0.3, 0.0, z, sched, SampleMode::sde);
  CHECK(at_zero.value() == x_hat.value());
  auto at_zero_ode = posterior_step(x_t, x_hat, 0.3, 0.0, z, sched, SampleMode::ode);
  CHECK(at_zero_ode.value() == x_hat.value());

  // sigma^2(t)=2, sigma^2(s)=1, x_t=4, x_hat=0 -> 2.0: find times with that ratio.
  // r = 1/2, mean = 0.5 * 4 = 2. Use a schedule slice with matching variances.
  BridgeSchedule s2;
  const double t = 1.0;
  // pick s so that sigma^2(s)/sigma^2(t) = 1/2
  double lo = 0.0, hi = t;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (ve_sigma2(s2, mid) / ve_sigma2(s2, t) < 0.5 ? lo : hi) = mid;
  }
  const double s_half = 0.5 * (lo + hi);
  auto got = posterior_step(Tensor64::full({1}, 4.0), Tensor64::zeros({1}), t, s_half,
                            Tensor64::zeros({1}), s2, SampleMode::ode);
  CHECK(got.item() == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("identity model under ode mode is a fixed point of iterative sampling") {
  BridgeSchedule sched;
  RandomStream rng(13);
  auto y = Tensor64::randn({3, 2}, rng);
  BridgeModel<double> ident = [](const Tensor64& state, double) { return state; };
  auto res = iterative_sample(y, ident, 10, sched, SampleMode::ode, rng);
  CHECK(res.nfe == 10);
  for (std::size_t i = 0; i < y.size(); ++i)
    CHECK(res.output.value()[i] == doctest::Approx(y.value()[i]).epsilon(1e-12));
}

TEST_CASE("one_step_enhance equals one-step ode sampling and reports nfe") {
  BridgeSchedule sched;
  RandomStream rng(17);
  auto y = Tensor64::randn({2, 5}, rng);
  BridgeModel<double> model = [](const Tensor64& state, double t) {
    return state * std::cos(t) + 0.25;
  };
  auto direct = one_step_enhance(y, model, sched);
  auto iter = iterative_sample(y, model, 1, sched, SampleMode::ode, rng);
  CHECK(iter.nfe == 1);
  CHECK(direct.value() == iter.output.value());
  for (std::size_t n : {1u, 10u, 50u}) {
    RandomStream r2(5);
    CHECK(iterative_sample(y, model, n, sched, SampleMode::sde, r2).nfe == n);
  }
}

TEST_CASE("linear-Gaussian toy: sde endpoint moments within tolerance (reduced)") {
  // Smaller replica of the acceptance check: x ~ N(0,1), y = x + N(0,1),
  // y observed = 1 -> posterior N(0.5, 0.5). Exact conditional-mean model.
  BridgeSchedule sched;
  const double s2T = ve_sigma2(sched, sched.T);
  auto model = [&](const Tensor64& xt, double t) {
    const double st = ve_sigma2(sched, t);
    const double wy = st / s2T;
    const double sx2 = st * (s2T - st) / s2T;
    // regression of x on (x_t, y=1): solve 2x2 normal equations
    const double s11 = 1 + wy * wy + sx2, s12 = 1 + wy, s22 = 2.0;
    const double det = s11 * s22 - s12 * s12;
    double w0, w1;
    if (std::abs(det) < 1e-14) {
      w0 = 0.0;
      w1 = 0.5;
    } else {
      w0 = (s22 * 1.0 - s12 * 1.0) / det;
      w1 = (s11 * 1.0 - s12 * 1.0) / det;
    }
    return xt * w0 + w1 * 1.0;
  };
  const std::size_t K = 20000;
  RandomStream rng(23);
  auto y = Tensor64::full({K}, 1.0);
  auto res = iterative_sample<double>(y, model, 50, sched, SampleMode::sde, rng,
                                      ComplexConvention::full);
  double sum = 0, sumsq = 0;
  for (double v : res.output.value()) {
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / K, var = sumsq / K - mean * mean;
  CHECK(std::abs(mean - 0.5) < 0.05);
  CHECK(std::abs(var - 0.5) < 0.05);
}
