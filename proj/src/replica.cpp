#include "phaseflow/replica.hpp"

#include "phaseflow/csv.hpp"
#include "phaseflow/envelope.hpp"
#include "phaseflow/errors.hpp"
#include "phaseflow/label_density.hpp"
#include "phaseflow/model.hpp"
#include "phaseflow/quadrature.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace phaseflow {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double gaussian(double x) { return std::exp(-0.5 * x * x - kLogSqrt2Pi); }

void check_positive(double chi, double z) {
  if (!(chi > 0.0) || !std::isfinite(chi)) throw ParameterError("chi must be positive and finite");
  if (!(z > 0.0) || !std::isfinite(z)) throw ParameterError("z must be positive and finite");
}

struct InnerNodes {
  std::vector<double> t, cavity, jacobian, potential, weight;  // weight: normalized
  double log_ratio = 0.0;  // log of int Dyhat e^{-zV/2} / int Dyhat over [0, L]
  double log_half_partition = 0.0;
};

InnerNodes inner_nodes(double y, double chi, double z, const QuadratureSpec& spec) {
  const double t0 = prox::gap_edge(y, chi);
  const double t1 = prox::label_at(spec.truncation, y, chi);
  const quad::Rule rule = quad::graded(t0, t1, spec.inner_order, spec.panels, spec.grading);
  InnerNodes in;
  const std::size_t n = rule.size();
  in.t = rule.nodes;
  in.cavity.resize(n);
  in.jacobian.resize(n);
  in.potential.resize(n);
  in.weight.resize(n);
  std::vector<double> logw(n);
  double mass = 0.0;
  double deficit = 0.0;  // int Dyhat (e^{-zV/2} - 1)
  double top = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = in.t[i];
    const double yh = prox::cavity(t, y, chi);
    const double j = std::max(prox::jacobian(t, y, chi), 0.0);
    const double a = yh - t;
    const double b = t * t - y * y;
    const double v = a * a / chi + b * b;
    in.cavity[i] = yh;
    in.jacobian[i] = j;
    in.potential[i] = v;
    const double base = rule.weights[i] * j * gaussian(yh);
    mass += base;
    deficit += base * std::expm1(-0.5 * z * v);
    logw[i] = std::log(rule.weights[i] * j) - 0.5 * yh * yh - kLogSqrt2Pi - 0.5 * z * v;
    top = std::max(top, logw[i]);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    in.weight[i] = std::exp(logw[i] - top);
    total += in.weight[i];
  }
  for (double& w : in.weight) w /= total;
  in.log_half_partition = top + std::log(total);
  // The expm1 form keeps log_ratio accurate as z -> 0.
  const double r = deficit / mass;
  in.log_ratio = r > -0.5 ? std::log1p(r) : in.log_half_partition - std::log(mass);
  return in;
}

}  // namespace

QuadratureSpec QuadratureSpec::refined() const {
  QuadratureSpec s = *this;
  s.outer_order *= 2;
  s.inner_order *= 2;
  s.panels += 4;
  return s;
}

ThresholdMeasure threshold_measure(double chi, double z, const QuadratureSpec& spec) {
  check_positive(chi, z);
  if (!(spec.truncation > 0.0)) throw ParameterError("truncation must be positive");
  ThresholdMeasure m;
  m.chi = chi;
  m.z = z;
  m.spec = spec;
  const double L = spec.truncation;
  const double yc = 1.0 / std::sqrt(2.0 * chi);
  if (yc < L) {
    // y = yc -+ s^2 resolves the square-root behaviour at the crest.
    const quad::Rule left = quad::gauss_legendre(spec.outer_order, 0.0, std::sqrt(yc));
    const quad::Rule right = quad::gauss_legendre(spec.outer_order, 0.0, std::sqrt(L - yc));
    for (std::size_t i = 0; i < left.size(); ++i) {
      const double s = left.nodes[i];
      m.outer_y.push_back(yc - s * s);
      m.outer_weight.push_back(left.weights[i] * 2.0 * s);
    }
    for (std::size_t i = 0; i < right.size(); ++i) {
      const double s = right.nodes[i];
      m.outer_y.push_back(yc + s * s);
      m.outer_weight.push_back(right.weights[i] * 2.0 * s);
    }
  } else {
    const quad::Rule r = quad::gauss_legendre(spec.outer_order, 0.0, L);
    m.outer_y = r.nodes;
    m.outer_weight = r.weights;
  }
  for (std::size_t k = 0; k < m.outer_y.size(); ++k) {
    const double y = m.outer_y[k];
    m.outer_weight[k] *= 2.0 * gaussian(y);
    const InnerNodes in = inner_nodes(y, chi, z, spec);
    m.log_partition += m.outer_weight[k] * in.log_ratio;
    for (std::size_t i = 0; i < in.t.size(); ++i) {
      m.nodes.push_back({y, in.t[i], in.cavity[i], in.jacobian[i], in.potential[i],
                         m.outer_weight[k] * in.weight[i]});
    }
  }
  return m;
}

ConditionalRule conditional_rule(double y, double chi, double z, const QuadratureSpec& spec) {
  check_positive(chi, z);
  InnerNodes in = inner_nodes(std::abs(y), chi, z, spec);
  return {std::move(in.t), std::move(in.weight), in.log_half_partition};
}

double free_energy(double alpha, const ThresholdMeasure& m) {
  return -std::log1p(m.z / m.chi) / (2.0 * m.z) - (alpha / m.z) * m.log_partition;
}

double free_energy(double alpha, double chi, double z, const QuadratureSpec& spec) {
  if (!(alpha > 0.0)) throw ParameterError("alpha must be positive");
  return free_energy(alpha, threshold_measure(chi, z, spec));
}

SaddleResiduals saddle_residuals(double alpha, const ThresholdMeasure& m) {
  double a = 0.0;
  double b = 0.0;
  for (const MeasureNode& n : m.nodes) {
    const double d1 = 4.0 * n.label * (n.label * n.label - n.y * n.y);
    const double l2 = 12.0 * n.label * n.label - 4.0 * n.y * n.y;
    const double d2 = n.jacobian > 0.0 ? l2 / n.jacobian : 0.0;
    a += n.weight * d1 * d1;
    b += n.weight * d2 * d2;
  }
  return {1.0 / (m.chi * (m.chi + m.z)) - 0.25 * alpha * a, 1.0 - 0.25 * alpha * m.chi * m.chi * b};
}

SaddleResiduals saddle_residuals(double alpha, double chi, double z, const QuadratureSpec& spec) {
  if (!(alpha >= 0.0)) throw ParameterError("alpha must be non-negative");
  return saddle_residuals(alpha, threshold_measure(chi, z, spec));
}

namespace {

// Dimensionless residuals used by Newton; both vanish with the raw ones.
Eigen::Vector2d scaled(double alpha, const Eigen::Vector2d& u, const QuadratureSpec& spec) {
  const double chi = std::exp(u[0]);
  const double z = std::exp(u[1]);
  const SaddleResiduals r = saddle_residuals(alpha, chi, z, spec);
  return {r.r_chi * chi * (chi + z), r.r_replicon};
}

struct NewtonResult {
  bool ok = false;
  Eigen::Vector2d u;
  int steps = 0;
};

NewtonResult newton(double alpha, Eigen::Vector2d u, const SaddleOptions& o, std::vector<double>& trace) {
  const double log_z_cap = std::log(o.z_cap);
  Eigen::Vector2d f = scaled(alpha, u, o.spec);
  NewtonResult res;
  for (int it = 0; it <= o.max_iterations; ++it) {
    trace.push_back(f.norm());
    if (!f.allFinite()) return res;
    const SaddleResiduals raw = saddle_residuals(alpha, std::exp(u[0]), std::exp(u[1]), o.spec);
    if (std::abs(raw.r_chi) < o.tolerance && std::abs(raw.r_replicon) < o.tolerance) {
      res.ok = true;
      res.u = u;
      res.steps = it;
      return res;
    }
    if (it == o.max_iterations) break;
    Eigen::Matrix2d jac;
    const double h = 1e-6;
    for (int c = 0; c < 2; ++c) {
      Eigen::Vector2d up = u, dn = u;
      up[c] += h;
      dn[c] -= h;
      jac.col(c) = (scaled(alpha, up, o.spec) - scaled(alpha, dn, o.spec)) / (2.0 * h);
    }
    Eigen::Vector2d delta = jac.fullPivLu().solve(-f);
    if (!delta.allFinite()) return res;
    const double big = delta.cwiseAbs().maxCoeff();
    if (big > 1.0) delta /= big;
    double damping = 1.0;
    Eigen::Vector2d trial;
    Eigen::Vector2d ft;
    for (int bt = 0; bt < 30; ++bt) {
      trial = u + damping * delta;
      trial[1] = std::min(trial[1], log_z_cap);
      ft = scaled(alpha, trial, o.spec);
      if (ft.allFinite() && ft.norm() < f.norm()) break;
      damping *= 0.5;
    }
    if (!(ft.allFinite() && ft.norm() < f.norm())) return res;
    u = trial;
    f = ft;
  }
  return res;
}

SaddleSolution finish(double alpha, const Eigen::Vector2d& u, int steps, const QuadratureSpec& spec) {
  SaddleSolution s;
  s.alpha = alpha;
  s.chi = std::exp(u[0]);
  s.z = std::exp(u[1]);
  s.spec = spec;
  const ThresholdMeasure m = threshold_measure(s.chi, s.z, spec);
  s.free_energy = free_energy(alpha, m);
  s.residuals = saddle_residuals(alpha, m);
  s.newton_steps = steps;
  double e = 0.0;
  for (const MeasureNode& n : m.nodes) {
    const double r = n.label * n.label - n.y * n.y;
    e += n.weight * r * r;
  }
  s.threshold_energy = 0.5 * alpha * e;
  return s;
}

}  // namespace

SaddleSolution solve_threshold(double alpha, const SaddleOptions& o) {
  if (!(alpha >= o.alpha_min && alpha <= o.alpha_max)) {
    throw ParameterError("alpha " + csv::format(alpha) + " outside the bracket [" + csv::format(o.alpha_min) +
                         ", " + csv::format(o.alpha_max) + "]");
  }
  std::vector<double> trace;
  if (o.guess) {
    const Eigen::Vector2d u0(std::log(o.guess->first), std::log(o.guess->second));
    const NewtonResult r = newton(alpha, u0, o, trace);
    if (r.ok) return finish(alpha, r.u, r.steps, o.spec);
  }
  // Cold start: scan a coarse grid with bounded z so that Newton starts on the
  // small-z branch, then try the best few cells.
  std::vector<std::pair<double, Eigen::Vector2d>> cells;
  for (int i = 0; i <= 16; ++i) {
    for (int j = 0; j <= 12; ++j) {
      const Eigen::Vector2d u(std::log(1e-3) + i * (std::log(10.0) - std::log(1e-3)) / 16.0,
                              std::log(1e-3) + j * (std::log(o.z_cap) - std::log(1e-3)) / 12.0);
      const Eigen::Vector2d f = scaled(alpha, u, o.spec);
      if (f.allFinite()) cells.emplace_back(f.norm(), u);
    }
  }
  std::sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t c = 0; c < std::min<std::size_t>(6, cells.size()); ++c) {
    const NewtonResult r = newton(alpha, cells[c].second, o, trace);
    if (r.ok) return finish(alpha, r.u, r.steps, o.spec);
  }
  throw ConvergenceError("no threshold saddle found at alpha = " + csv::format(alpha), trace);
}

double threshold_energy(const SaddleSolution& s) {
  return 0.5 * s.alpha * LabelDensity::analytic(s.chi, s.z, s.spec).expect(
                             [](double t, double y) { return pointwise::loss(t, y * y); });
}

std::vector<SaddleSolution> solve_branch(double alpha_min, double alpha_max, double step,
                                         const SaddleOptions& options) {
  if (!(step > 0.0)) throw ParameterError("continuation step must be positive");
  if (!(alpha_max >= alpha_min)) throw ParameterError("alpha_max must not be below alpha_min");
  std::vector<SaddleSolution> out;
  const long count = static_cast<long>(std::floor((alpha_max - alpha_min) / step + 1e-9));
  SaddleOptions o = options;
  for (long k = 0; k <= count; ++k) {
    const double alpha = alpha_min + static_cast<double>(k) * step;
    if (out.size() >= 2) {
      // Linear extrapolation in log variables along the branch.
      const auto& a = out[out.size() - 2];
      const auto& b = out.back();
      o.guess = std::make_pair(b.chi * (b.chi / a.chi), b.z * (b.z / a.z));
    } else if (!out.empty()) {
      o.guess = std::make_pair(out.back().chi, out.back().z);
    }
    out.push_back(solve_threshold(alpha, o));
  }
  return out;
}

void write_branch(const std::filesystem::path& path, const std::vector<SaddleSolution>& branch) {
  csv::Table t;
  t.header = {"alpha", "chi", "z", "free_energy", "threshold_energy", "r_chi", "r_replicon",
              "m_yhat2", "m_yhat4", "m_yhat2_y2", "m_loss"};
  for (const SaddleSolution& s : branch) {
    const LabelMoments mom = LabelDensity::analytic(s.chi, s.z, s.spec).moments();
    t.rows.push_back({csv::format(s.alpha), csv::format(s.chi), csv::format(s.z), csv::format(s.free_energy),
                      csv::format(s.threshold_energy), csv::format(s.residuals.r_chi),
                      csv::format(s.residuals.r_replicon), csv::format(mom.yhat2), csv::format(mom.yhat4),
                      csv::format(mom.yhat2_y2), csv::format(mom.loss)});
  }
  csv::write(path, t);
}

}  // namespace phaseflow
