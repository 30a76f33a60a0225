#include "phaseflow/envelope.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace phaseflow;

using testing::brute_envelope;
using testing::objective;

TEST_CASE("envelope matches the brute-force oracle") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> lchi(std::log(0.01), std::log(2.0));
  std::uniform_real_distribution<double> uy(-3.0, 3.0);
  std::uniform_real_distribution<double> uyh(-4.0, 4.0);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double chi = std::exp(lchi(rng));
    const double yh = uyh(rng);
    const double y = uy(rng);
    const EnvelopePoint e = envelope(chi, yh, y);
    worst = std::max(worst, std::abs(e.value - brute_envelope(chi, yh, y)));
    CHECK(std::abs(e.value - objective(e.minimizer, chi, yh, y)) < 1e-12 * std::max(1.0, e.value));
  }
  CHECK(worst < 1e-9);
  CHECK(std::abs(envelope(0.5, 0.0, 1.0).value - brute_envelope(0.5, 0.0, 1.0)) < 1e-9);
}

TEST_CASE("envelope special values") {
  for (double chi : {0.01, 0.3, 5.0}) {
    for (double y : {-1.5, 0.0, 0.7}) {
      const EnvelopePoint e = envelope(chi, y, y);
      CHECK(e.value == doctest::Approx(0.0).epsilon(1e-14));
      CHECK(std::abs(e.minimizer - y) < 1e-12);
      CHECK(envelope(chi, -y, y).value < 1e-14);
    }
  }
  const EnvelopePoint small = envelope(1e-6, 2.0, 1.0);
  CHECK(std::abs(small.value - 9.0) < 1e-3);
  CHECK(small.value <= 9.0);
  const EnvelopeDerivs zero = envelope_derivs(0.4, 0.0, 0.0);
  CHECK(zero.d1 == 0.0);
  CHECK(zero.d2 == 0.0);
  const double chi = 0.3, y = 1.2;
  const double l2 = 8 * y * y;
  const EnvelopeDerivs at = envelope_derivs(chi, y, y);
  CHECK(at.d1 == doctest::Approx(0.0));
  CHECK(at.d2 == doctest::Approx((2 / chi) * l2 / (2 / chi + l2)).epsilon(1e-12));
}

TEST_CASE("envelope symmetries and monotonicity in chi") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int k = 0; k < 300; ++k) {
    const double yh = u(rng), y = u(rng);
    const double chi = 0.05 + std::abs(u(rng));
    const double v = envelope(chi, yh, y).value;
    CHECK(v >= 0.0);
    CHECK(envelope(chi, -yh, y).value == doctest::Approx(v).epsilon(1e-12));
    CHECK(envelope(chi, yh, -y).value == doctest::Approx(v).epsilon(1e-12));
    CHECK(envelope(chi * 1.5, yh, y).value <= v + 1e-12);
  }
}

TEST_CASE("envelope derivatives match finite differences") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> lchi(std::log(0.02), std::log(2.0));
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  int tested = 0;
  for (int k = 0; k < 500; ++k) {
    const double chi = std::exp(lchi(rng));
    const double yh = u(rng), y = u(rng);
    const double h = 1e-4;
    const EnvelopePoint m = envelope(chi, yh - h, y), c = envelope(chi, yh, y), p = envelope(chi, yh + h, y);
    // Skip points whose stencil straddles a branch jump.
    if (std::abs(p.minimizer - m.minimizer) > 0.1 || m.tie || c.tie || p.tie) continue;
    const EnvelopeDerivs d = envelope_derivs(chi, yh, y);
    if (d.flagged) continue;
    const double scale = std::max(1.0, std::abs(d.d2));
    CHECK(std::abs(d.d1 - (p.value - m.value) / (2 * h)) < 1e-5 * std::max(1.0, std::abs(d.d1)));
    CHECK(std::abs(d.d2 - (p.value - 2 * c.value + m.value) / (h * h)) < 1e-5 * scale);
    ++tested;
  }
  CHECK(tested > 400);
}

TEST_CASE("branch ties are flagged where the minimizer jumps") {
  // For y^2 > 1/(2 chi) the minimizer at yhat = 0 jumps between +-t0.
  const double chi = 0.5, y = 2.0;
  const EnvelopePoint e = envelope(chi, 0.0, y);
  CHECK(e.tie);
  CHECK(e.minimizer > 0.0);
  CHECK(std::abs(e.minimizer - prox::gap_edge(y, chi)) < 1e-9);
  CHECK(envelope_derivs(chi, 0.0, y).flagged);
  CHECK_FALSE(envelope(chi, 0.3, y).tie);
}

TEST_CASE("depressed cubic roots") {
  double r[3];
  CHECK(depressed_cubic_roots(-7.0, 6.0, r) == 3);  // (t-1)(t-2)(t+3)
  CHECK(r[0] == doctest::Approx(-3.0));
  CHECK(r[1] == doctest::Approx(1.0));
  CHECK(r[2] == doctest::Approx(2.0));
  CHECK(depressed_cubic_roots(1.0, -2.0, r) == 1);
  CHECK(r[0] * r[0] * r[0] + r[0] - 2.0 == doctest::Approx(0.0));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int k = 0; k < 1000; ++k) {
    const double p = u(rng), q = u(rng);
    const int n = depressed_cubic_roots(p, q, r);
    for (int i = 0; i < n; ++i) {
      const double t = r[i];
      CHECK(std::abs(t * t * t + p * t + q) < 1e-9 * std::max({1.0, std::abs(p * t), std::abs(q)}));
    }
  }
}

TEST_CASE("proximal branch inversion") {
  for (double chi : {0.05, 0.2, 1.0}) {
    for (double y : {0.0, 0.8, 3.0}) {
      for (double b : {0.5, 2.0, 8.0}) {
        const double t = prox::label_at(b, y, chi);
        CHECK(prox::cavity(t, y, chi) == doctest::Approx(b).epsilon(1e-12));
        CHECK(t >= prox::gap_edge(y, chi));
        CHECK(std::abs(envelope(chi, b, y).minimizer - t) < 1e-9);
      }
    }
  }
  CHECK(prox::gap_edge(0.5, 0.5) == 0.0);
  CHECK(prox::jacobian(0.3, 1.0, 0.2) == doctest::Approx(1.0 + 0.2 * (6 * 0.09 - 2)));
}
