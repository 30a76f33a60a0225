#include "phaseflow/label_density.hpp"

#include "phaseflow/envelope.hpp"
#include "phaseflow/errors.hpp"
#include "phaseflow/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace phaseflow {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

// Unnormalized density of t on [t0, t1] for a fixed |y|: the cavity
// weight gamma(yhat) exp(-z V / 2) carried through dyhat = J dt.
double label_weight(double t, double y, double chi, double z) {
  const double yh = prox::cavity(t, y, chi);
  const double j = prox::jacobian(t, y, chi);
  if (j <= 0.0) return 0.0;
  const double a = yh - t;
  const double b = t * t - y * y;
  const double v = a * a / chi + b * b;
  return j * std::exp(-0.5 * yh * yh - kLogSqrt2Pi - 0.5 * z * v);
}

}  // namespace

LabelDensity LabelDensity::analytic(double chi, double z, const QuadratureSpec& spec) {
  const ThresholdMeasure m = threshold_measure(chi, z, spec);
  LabelDensity d;
  d.kind_ = Kind::analytic;
  d.chi_ = chi;
  d.z_ = z;
  d.spec_ = spec;
  d.nodes_.reserve(m.nodes.size());
  for (const MeasureNode& n : m.nodes) d.nodes_.push_back({n.label, n.y, n.weight});
  return d;
}

LabelDensity LabelDensity::empirical(const std::vector<double>& yhat, const std::vector<double>& y) {
  if (yhat.size() != y.size()) throw DimensionError("yhat and y sample counts differ");
  if (yhat.empty()) throw ParameterError("empirical density needs at least one sample");
  LabelDensity d;
  d.kind_ = Kind::empirical;
  const double w = 1.0 / static_cast<double>(yhat.size());
  d.nodes_.reserve(yhat.size());
  for (std::size_t i = 0; i < yhat.size(); ++i) d.nodes_.push_back({yhat[i], std::abs(y[i]), w});
  return d;
}

LabelDensity LabelDensity::from_state(const Instance& instance, const Vector& w) {
  if (w.size() != instance.n) throw DimensionError("state dimension mismatch");
  const Vector yh = instance.sensing * w;
  std::vector<double> a(yh.data(), yh.data() + yh.size());
  std::vector<double> b(static_cast<std::size_t>(instance.labels.size()));
  for (Eigen::Index i = 0; i < instance.labels.size(); ++i) b[static_cast<std::size_t>(i)] = std::sqrt(instance.labels[i]);
  return empirical(a, b);
}

LabelDensity LabelDensity::pooled(const std::vector<LabelDensity>& parts) {
  std::vector<double> a, b;
  for (const LabelDensity& p : parts) {
    if (p.kind_ != Kind::empirical) throw ParameterError("only empirical densities can be pooled");
    for (const LabelNode& n : p.nodes_) {
      a.push_back(n.yhat);
      b.push_back(n.y);
    }
  }
  return empirical(a, b);
}

LabelDensity LabelDensity::weighted(std::vector<LabelNode> nodes) {
  double s = 0.0;
  for (const LabelNode& n : nodes) {
    if (!(n.weight >= 0.0)) throw ParameterError("node weights must be non-negative");
    s += n.weight;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ParameterError("node weights must sum to one");
  LabelDensity d;
  d.kind_ = Kind::empirical;
  d.nodes_ = std::move(nodes);
  return d;
}

double LabelDensity::total_mass() const {
  return expect([](double, double) { return 1.0; });
}

LabelMoments LabelDensity::moments() const {
  LabelMoments m;
  for (const LabelNode& n : nodes_) {
    const double a = n.yhat * n.yhat;
    const double b = n.y * n.y;
    m.yhat2 += n.weight * a;
    m.yhat4 += n.weight * a * a;
    m.yhat2_y2 += n.weight * a * b;
    m.loss += n.weight * (a - b) * (a - b);
  }
  return m;
}

double LabelDensity::conditional_pdf(double yhat, double y) const {
  if (kind_ != Kind::analytic) throw ParameterError("pointwise density needs the analytic kind");
  const double ay = std::abs(y);
  const double t = std::abs(yhat);
  if (ay > spec_.truncation) return 0.0;
  if (t < prox::gap_edge(ay, chi_)) return 0.0;
  if (prox::cavity(t, ay, chi_) > spec_.truncation) return 0.0;
  const ConditionalRule rule = conditional_rule(ay, chi_, z_, spec_);
  // Half the mass sits on each sign of yhat.
  return 0.5 * label_weight(t, ay, chi_, z_) * std::exp(-rule.log_half_partition);
}

double LabelDensity::pdf(double yhat, double y) const {
  return std::exp(-0.5 * y * y - kLogSqrt2Pi) * conditional_pdf(yhat, y);
}

std::vector<std::pair<double, double>> LabelDensity::sample(std::size_t count, std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::vector<std::pair<double, double>> out;
  out.reserve(count);
  if (kind_ == Kind::empirical) {
    std::vector<double> w;
    for (const LabelNode& n : nodes_) w.push_back(n.weight);
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    for (std::size_t i = 0; i < count; ++i) {
      const LabelNode& n = nodes_[pick(rng)];
      out.emplace_back(n.yhat, n.y);
    }
    return out;
  }
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double L = spec_.truncation;
  for (std::size_t s = 0; s < count; ++s) {
    double y;
    do {
      y = normal(rng);
    } while (std::abs(y) > L);
    const double ay = std::abs(y);
    const double t0 = prox::gap_edge(ay, chi_);
    const double t1 = prox::label_at(L, ay, chi_);
    const std::vector<double> edges = quad::graded_edges(t0, t1, spec_.panels, spec_.grading);
    std::vector<double> cum{0.0};
    for (std::size_t k = 0; k + 1 < edges.size(); ++k) {
      const quad::Rule r = quad::gauss_legendre(spec_.inner_order, edges[k], edges[k + 1]);
      double m = 0.0;
      for (std::size_t i = 0; i < r.size(); ++i) m += r.weights[i] * label_weight(r.nodes[i], ay, chi_, z_);
      cum.push_back(cum.back() + m);
    }
    const double u = unif(rng) * cum.back();
    const std::size_t k = std::min<std::size_t>(
        static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin()) - 1, edges.size() - 2);
    // Solve int_{a}^{t} q = u - cum[k] inside panel k by safeguarded Newton.
    const double a = edges[k];
    double lo = a, hi = edges[k + 1];
    const double target = u - cum[k];
    double t = 0.5 * (lo + hi);
    for (int it = 0; it < 60; ++it) {
      const quad::Rule r = quad::gauss_legendre(spec_.inner_order, a, t);
      double f = -target;
      for (std::size_t i = 0; i < r.size(); ++i) f += r.weights[i] * label_weight(r.nodes[i], ay, chi_, z_);
      (f < 0.0 ? lo : hi) = t;
      const double q = label_weight(t, ay, chi_, z_);
      double next = q > 0.0 ? t - f / q : 0.5 * (lo + hi);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (std::abs(next - t) <= 1e-13 * std::max(1.0, t)) {
        t = next;
        break;
      }
      t = next;
    }
    const double sign = unif(rng) < 0.5 ? -1.0 : 1.0;
    out.emplace_back(sign * t, y);
  }
  return out;
}

}  // namespace phaseflow
