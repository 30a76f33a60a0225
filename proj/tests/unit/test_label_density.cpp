#include "phaseflow/envelope.hpp"
#include "phaseflow/errors.hpp"
#include "phaseflow/label_density.hpp"
#include "common/oracle.hpp"

#include <doctest.h>

#include <random>

using namespace phaseflow;

namespace {

// Saddle at alpha = 6 and its frozen label moments.
constexpr double kChi = 0.11159645553030142;
constexpr double kZ = 0.1734263175483438;
const LabelMoments kMoments{0.8750287847938746, 1.963936317402349, 2.016499895329162, 0.9309365267385408};

double label_mass(const LabelDensity& d, double y) {
  const double t0 = prox::gap_edge(std::abs(y), d.chi());
  const double t1 = prox::label_at(testing::kL, std::abs(y), d.chi());
  return 2.0 * testing::integrate([&](double t) { return d.conditional_pdf(t, y); }, {t0, t1}, 0.0, 1e-10);
}

}  // namespace

TEST_CASE("analytic moments agree with the adaptive oracle") {
  const LabelDensity d = LabelDensity::analytic(kChi, kZ);
  const LabelMoments m = d.moments();
  CHECK(m.yhat2 == doctest::Approx(kMoments.yhat2).epsilon(1e-10));
  CHECK(m.yhat4 == doctest::Approx(kMoments.yhat4).epsilon(1e-10));
  CHECK(m.yhat2_y2 == doctest::Approx(kMoments.yhat2_y2).epsilon(1e-10));
  CHECK(m.loss == doctest::Approx(kMoments.loss).epsilon(1e-10));

  const testing::Oracle o{kChi, kZ};
  const double t2 = o.expect([](double yh, double y) {
    const double t = envelope(kChi, yh, y).minimizer;
    return t * t;
  });
  const double t2y2 = o.expect([](double yh, double y) {
    const double t = envelope(kChi, yh, y).minimizer;
    return t * t * y * y;
  });
  CHECK(t2 == doctest::Approx(kMoments.yhat2).epsilon(1e-7));
  CHECK(t2y2 == doctest::Approx(kMoments.yhat2_y2).epsilon(1e-7));
  CHECK(d.total_mass() == doctest::Approx(std::erf(testing::kL / std::sqrt(2.0))).epsilon(1e-12));
}

TEST_CASE("pointwise density is normalized with a Gaussian teacher marginal") {
  const LabelDensity d = LabelDensity::analytic(kChi, kZ);
  for (double y : {0.3, 1.0, 1.0 / std::sqrt(2.0 * kChi) + 0.05, 2.5}) {
    CHECK(label_mass(d, y) == doctest::Approx(1.0).epsilon(1e-6));
    const double t = prox::label_at(1.0, y, kChi);
    CHECK(d.pdf(t, y) == doctest::Approx(d.pdf(-t, y)).epsilon(1e-14));
    CHECK(d.pdf(t, y) == doctest::Approx(d.pdf(t, -y)).epsilon(1e-14));
    CHECK(d.pdf(t, y) == doctest::Approx(testing::gauss(y) * d.conditional_pdf(t, y)).epsilon(1e-12));
  }
  // Inside the gap the student label is never found.
  const double y = 2.5;
  CHECK(d.conditional_pdf(0.5 * prox::gap_edge(y, kChi), y) == 0.0);
  CHECK_THROWS_AS(LabelDensity::empirical({1.0}, {1.0}).pdf(0.0, 1.0), ParameterError);
}

TEST_CASE("samples reproduce the quadrature moments") {
  const LabelDensity d = LabelDensity::analytic(kChi, kZ);
  const auto draws = d.sample(20000, 11);
  std::vector<double> a, b;
  for (const auto& [t, y] : draws) {
    a.push_back(t);
    b.push_back(y);
  }
  const LabelDensity e = LabelDensity::empirical(a, b);
  const auto t2 = [](double t, double) { return t * t; };
  const auto t2y2 = [](double t, double y) { return t * t * y * y; };
  const auto loss = [](double t, double y) { return (t * t - y * y) * (t * t - y * y); };
  CHECK(std::abs(e.expect(t2) - d.expect(t2)) < 4.0 * e.standard_error(t2));
  CHECK(std::abs(e.expect(t2y2) - d.expect(t2y2)) < 4.0 * e.standard_error(t2y2));
  CHECK(std::abs(e.expect(loss) - d.expect(loss)) < 4.0 * e.standard_error(loss));
  CHECK(d.standard_error(t2) == 0.0);
  CHECK(d.sample(5, 3) == d.sample(5, 3));
}

TEST_CASE("importance-weighted Monte Carlo matches the quadrature") {
  // Independent Gaussian cavity fields reweighted by exp(-z V / 2),
  // self-normalized per teacher draw.
  const LabelDensity d = LabelDensity::analytic(kChi, kZ);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  double total = 0.0, var_acc = 0.0;
  const int ys = 4000, per = 64;
  std::vector<double> est;
  for (int k = 0; k < ys; ++k) {
    const double y = g(rng);
    double zw = 0.0, s = 0.0;
    for (int j = 0; j < per; ++j) {
      const double yh = g(rng);
      const EnvelopePoint p = envelope(kChi, yh, std::abs(y));
      const double w = std::exp(-0.5 * kZ * p.value);
      zw += w;
      s += w * p.minimizer * p.minimizer;
    }
    est.push_back(s / zw);
    total += s / zw;
  }
  const double mean = total / ys;
  for (double v : est) var_acc += (v - mean) * (v - mean);
  const double se = std::sqrt(var_acc / (ys - 1.0) / ys);
  // Self-normalization per y carries an O(1/per) bias well below the tolerance.
  CHECK(std::abs(mean - d.moments().yhat2) < 4.0 * se + 2e-3);
}

TEST_CASE("empirical constructors") {
  const LabelDensity e = LabelDensity::empirical({1.0, -2.0}, {-3.0, 0.5});
  CHECK(e.kind() == LabelDensity::Kind::empirical);
  CHECK(e.nodes()[0].y == 3.0);
  CHECK(e.moments().yhat2 == doctest::Approx(2.5));
  CHECK(e.moments().loss == doctest::Approx(0.5 * (64.0 + 3.75 * 3.75)));
  CHECK_THROWS_AS(LabelDensity::empirical({1.0}, {}), DimensionError);
  CHECK_THROWS_AS(LabelDensity::empirical({}, {}), ParameterError);

  const LabelDensity p = LabelDensity::pooled({e, LabelDensity::empirical({0.0}, {1.0})});
  CHECK(p.nodes().size() == 3);
  CHECK(p.total_mass() == doctest::Approx(1.0));
  CHECK_THROWS_AS(LabelDensity::pooled({LabelDensity::analytic(kChi, kZ)}), ParameterError);

  CHECK_THROWS_AS(LabelDensity::weighted({{0.0, 1.0, 0.5}}), ParameterError);
  CHECK_THROWS_AS(LabelDensity::weighted({{0.0, 1.0, 1.5}, {0.0, 1.0, -0.5}}), ParameterError);
  CHECK(LabelDensity::weighted({{0.0, 1.0, 0.25}, {1.0, 0.0, 0.75}}).moments().yhat2 == doctest::Approx(0.75));

  const Instance inst = generate_instance(8, 4.0, LabelMode::teacher, 1);
  const LabelDensity s = LabelDensity::from_state(inst, *inst.teacher);
  for (const LabelNode& n : s.nodes()) CHECK(std::abs(std::abs(n.yhat) - n.y) < 1e-12);
  CHECK_THROWS_AS(LabelDensity::from_state(inst, Vector::Ones(3)), DimensionError);
}
