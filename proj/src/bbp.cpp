#include "phaseflow/bbp.hpp"

#include "phaseflow/csv.hpp"
#include "phaseflow/envelope.hpp"
#include "phaseflow/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <tuple>

namespace phaseflow::bbp {

namespace {

double curvature(const LabelNode& n) { return 12.0 * n.yhat * n.yhat - 4.0 * n.y * n.y; }

void require_alpha(double alpha) {
  if (!(alpha > 0.0)) throw ParameterError("alpha must be positive");
}

void require_admissible(const LabelDensity& d, double alpha, double lambda, double margin) {
  const double m = admissible_margin(d, alpha, lambda);
  if (!(m > 0.0) || m < margin) {
    throw DomainError("lambda " + csv::format(lambda) + " outside the admissible domain (margin " +
                          csv::format(m) + ")",
                      m);
  }
}

}  // namespace

double pole_edge(const LabelDensity& d, double alpha) {
  double edge = -INFINITY;
  for (const LabelNode& n : d.nodes()) {
    if (n.weight > 0.0) edge = std::max(edge, -0.5 * alpha * curvature(n));
  }
  return edge;
}

double admissible_margin(const LabelDensity& d, double alpha, double lambda) {
  double lowest = INFINITY;
  for (const LabelNode& n : d.nodes()) {
    if (n.weight > 0.0) lowest = std::min(lowest, 2.0 * lambda + alpha * curvature(n));
  }
  return lowest / (2.0 * std::max(1.0, std::abs(lambda)));
}

double psi(const LabelDensity& d, double alpha, double lambda, double margin) {
  require_alpha(alpha);
  // The lambda prefactor vanishes, whatever the expectation does.
  if (lambda == 0.0) return 0.0;
  require_admissible(d, alpha, lambda, margin);
  const double e = d.expect([&](double yh, double y) {
    const double c = alpha * (12.0 * yh * yh - 4.0 * y * y);
    return c / (2.0 * lambda + c);
  });
  return lambda * (1.0 / alpha - e);
}

double phi(const LabelDensity& d, double alpha, double lambda, double margin) {
  require_alpha(alpha);
  if (lambda == 0.0) return 0.0;
  require_admissible(d, alpha, lambda, margin);
  const double e = d.expect([&](double yh, double y) {
    const double c = alpha * (12.0 * yh * yh - 4.0 * y * y);
    return c * y * y / (2.0 * lambda + c);
  });
  return -lambda * e;
}

double psi_prime(const LabelDensity& d, double alpha, double lambda) {
  const double e = d.expect([&](double yh, double y) {
    const double c = alpha * (12.0 * yh * yh - 4.0 * y * y);
    const double r = c / (2.0 * lambda + c);
    return r * r;
  });
  return 1.0 / alpha - e;
}

double psi_second(const LabelDensity& d, double alpha, double lambda) {
  // d/dl of -E[c^2 / (2l + c)^2] = 4 E[c^2 / (2l + c)^3].
  return 4.0 * d.expect([&](double yh, double y) {
    const double c = alpha * (12.0 * yh * yh - 4.0 * y * y);
    const double den = 2.0 * lambda + c;
    return c * c / (den * den * den);
  });
}

double psi_resolvent_form(const LabelDensity& d, double alpha, double lambda) {
  const double e = d.expect([&](double yh, double y) {
    const double t = -0.5 * alpha * (12.0 * yh * yh - 4.0 * y * y);
    return t / (lambda - t);
  });
  return lambda * (1.0 / alpha + e);
}

double phi_resolvent_form(const LabelDensity& d, double alpha, double lambda) {
  const double e = d.expect([&](double yh, double y) {
    const double t = -0.5 * alpha * (12.0 * yh * yh - 4.0 * y * y);
    return t * y * y / (lambda - t);
  });
  return lambda * e;
}

LambdaBar lambda_bar(const LabelDensity& d, double alpha) {
  require_alpha(alpha);
  const double edge = pole_edge(d, alpha);
  const double scale = std::max(1.0, std::abs(edge));
  const auto at = [&](double s) { return edge + scale * std::exp(s); };
  // Psi is convex on (edge, inf) and Psi' -> 1/alpha > 0 at infinity; an
  // interior minimum exists iff Psi' < 0 just above the edge.
  double s_lo = std::log(1e-13);
  if (psi_prime(d, alpha, at(s_lo)) >= 0.0) {
    throw DomainError("Psi has no interior minimum: Psi' >= 0 at the pole edge",
                      admissible_margin(d, alpha, at(s_lo)));
  }
  double s_hi = 0.0;
  while (psi_prime(d, alpha, at(s_hi)) <= 0.0) {
    s_hi += 2.0;
    if (s_hi > 60.0) throw DomainError("Psi' stays negative on the admissible domain", 0.0);
  }
  // Golden section on Psi over s, which is unimodal there.
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  const auto psi_s = [&](double s) { return psi(d, alpha, at(s), 0.0); };
  double a = s_lo, b = s_hi;
  double c = b - g * (b - a), e = a + g * (b - a);
  double fc = psi_s(c), fe = psi_s(e);
  for (int it = 0; it < 80 && b - a > 1e-8; ++it) {
    if (fc < fe) {
      b = e;
      e = c;
      fe = fc;
      c = b - g * (b - a);
      fc = psi_s(c);
    } else {
      a = c;
      c = e;
      fc = fe;
      e = a + g * (b - a);
      fe = psi_s(e);
    }
  }
  // Safeguarded Newton on Psi', keeping a sign bracket in lambda.
  double lo = at(s_lo), hi = at(s_hi);
  double lam = at(0.5 * (a + b));
  for (int it = 0; it < 100; ++it) {
    const double f = psi_prime(d, alpha, lam);
    (f < 0.0 ? lo : hi) = lam;
    if (std::abs(f) < 1e-13) break;
    const double fp = psi_second(d, alpha, lam);
    double next = fp > 0.0 ? lam - f / fp : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - lam) <= 1e-15 * std::abs(lam)) {
      lam = next;
      break;
    }
    lam = next;
  }
  LambdaBar out;
  out.lambda = lam;
  out.psi_prime = psi_prime(d, alpha, lam);
  out.margin = admissible_margin(d, alpha, lam);
  out.psi = psi(d, alpha, lam, 0.0);
  if (!(std::abs(out.psi_prime) < 1e-9)) {
    throw ConvergenceError("lambda_bar not certified: |Psi'| = " + csv::format(std::abs(out.psi_prime)),
                           {out.psi_prime});
  }
  return out;
}

double mu_from_density(const LabelDensity& d, double alpha) {
  return 0.5 * alpha * d.expect([](double yh, double y) { return pointwise::d1(yh, y * y) * yh; });
}

double jump_term(const LabelDensity& d, double alpha) {
  if (d.kind() != LabelDensity::Kind::analytic) throw ParameterError("jump term needs the analytic density");
  const double chi = d.chi();
  const double z = d.z();
  const ThresholdMeasure m = threshold_measure(chi, z, d.spec());
  double b = 0.0;
  for (std::size_t k = 0; k < m.outer_y.size(); ++k) {
    const double y = m.outer_y[k];
    const double t0 = prox::gap_edge(y, chi);
    if (t0 == 0.0) continue;
    const ConditionalRule rule = conditional_rule(y, chi, z, d.spec());
    const double v0 = t0 * t0 / chi + (t0 * t0 - y * y) * (t0 * t0 - y * y);
    // Cavity density at yhat = 0 over the full line (half mass per side).
    const double p0 = 0.5 * std::exp(-0.5 * z * v0 - 0.91893853320467274178 - rule.log_half_partition);
    b += m.outer_weight[k] * 2.0 * p0 * t0;
  }
  return alpha / chi * b;
}

Evaluation evaluate(const LabelDensity& d, double alpha) {
  const LambdaBar lb = lambda_bar(d, alpha);
  Evaluation ev;
  ev.alpha = alpha;
  ev.lambda_bar = lb.lambda;
  ev.psi_at_bar = lb.psi;
  ev.phi_at_bar = phi(d, alpha, lb.lambda, 0.0);
  ev.mu = mu_from_density(d, alpha);
  ev.compatibility = -ev.phi_at_bar - ev.mu;
  ev.residuals.stationarity = lb.psi_prime;
  ev.residuals.marginality = ev.mu + ev.phi_at_bar;
  ev.residuals.mu_consistency = ev.mu - mu_from_density(d, alpha);
  return ev;
}

DensityFamily analytic_family(const SaddleOptions& options) {
  // Continuation state: the nearest solved alpha seeds Newton.
  auto solved = std::make_shared<std::vector<SaddleSolution>>();
  return [options, solved](double alpha, SaddleSolution* out) {
    SaddleOptions o = options;
    if (!solved->empty()) {
      const auto nearest = std::min_element(solved->begin(), solved->end(), [&](const auto& a, const auto& b) {
        return std::abs(a.alpha - alpha) < std::abs(b.alpha - alpha);
      });
      o.guess = std::make_pair(nearest->chi, nearest->z);
    }
    const SaddleSolution s = solve_threshold(alpha, o);
    solved->push_back(s);
    if (out) *out = s;
    return LabelDensity::analytic(s);
  };
}

std::optional<double> last_sign_change(const std::vector<std::pair<double, double>>& curve) {
  std::vector<std::pair<double, double>> c = curve;
  std::sort(c.begin(), c.end());
  for (std::size_t i = c.size(); i-- > 1;) {
    const auto [a0, r0] = c[i - 1];
    const auto [a1, r1] = c[i];
    if (r0 == 0.0) return a0;
    if ((r0 < 0.0) != (r1 < 0.0)) return a0 + (a1 - a0) * r0 / (r0 - r1);
  }
  return std::nullopt;
}

Solution solve(const DensityFamily& family, const SolveOptions& o) {
  if (!(o.alpha_hi > o.alpha_lo) || o.scan_points < 2) throw ParameterError("invalid alpha bracket");
  Solution sol;
  const auto residual = [&](double alpha) {
    SaddleSolution s;
    const LabelDensity d = family(alpha, &s);
    return std::make_pair(evaluate(d, alpha), s);
  };
  // Scan from the top so continuation runs downward from large alpha.
  std::vector<std::pair<double, double>> curve;
  for (int i = o.scan_points - 1; i >= 0; --i) {
    const double alpha = o.alpha_lo + (o.alpha_hi - o.alpha_lo) * i / (o.scan_points - 1);
    curve.emplace_back(alpha, residual(alpha).first.compatibility);
  }
  std::sort(curve.begin(), curve.end());
  sol.curve = curve;
  std::optional<std::pair<double, double>> bracket;
  for (std::size_t i = curve.size(); i-- > 1;) {
    if ((curve[i - 1].second < 0.0) != (curve[i].second < 0.0)) {
      bracket = std::make_pair(curve[i - 1].first, curve[i].first);
      break;
    }
  }
  if (!bracket) throw NotFoundError("compatibility residual keeps its sign over the bracket", curve);
  double a = bracket->first, b = bracket->second;
  double fa = residual(a).first.compatibility;
  double fb = residual(b).first.compatibility;
  for (int it = 0; it < 8; ++it) {
    const double m = 0.5 * (a + b);
    const double fm = residual(m).first.compatibility;
    if ((fm < 0.0) == (fa < 0.0)) {
      a = m;
      fa = fm;
    } else {
      b = m;
      fb = fm;
    }
  }
  // Secant with the bracket kept (Illinois variant of regula falsi).
  int side = 0;
  double x = 0.5 * (a + b);
  Evaluation ev;
  SaddleSolution saddle;
  for (int it = 0; it < 60; ++it) {
    x = (a * fb - b * fa) / (fb - fa);
    std::tie(ev, saddle) = residual(x);
    const double fx = ev.compatibility;
    if (std::abs(fx) < 1e-12 || b - a < o.alpha_tolerance) break;
    if ((fx < 0.0) == (fa < 0.0)) {
      a = x;
      fa = fx;
      if (side == -1) fb *= 0.5;
      side = -1;
    } else {
      b = x;
      fb = fx;
      if (side == 1) fa *= 0.5;
      side = 1;
    }
  }
  sol.alpha_bbp = x;
  sol.lambda_bar = ev.lambda_bar;
  sol.mu = ev.mu;
  sol.psi_at_bar = ev.psi_at_bar;
  sol.residuals = ev.residuals;
  sol.saddle = saddle;
  const double worst = std::max({std::abs(ev.residuals.stationarity), std::abs(ev.residuals.marginality), std::abs(ev.residuals.mu_consistency)});
  if (!(worst < o.residual_tolerance)) {
    throw ConvergenceError("alpha_BBP residuals not certified (worst " + csv::format(worst) + ")",
                           {ev.residuals.stationarity, ev.residuals.marginality, ev.residuals.mu_consistency});
  }
  return sol;
}

Solution solve_analytic(const SolveOptions& options, const SaddleOptions& saddle) {
  Solution sol = solve(analytic_family(saddle), options);
  const LabelDensity d = LabelDensity::analytic(sol.saddle);
  const LambdaBar lb = lambda_bar(d, sol.alpha_bbp);
  sol.extras.emplace_back("chi", sol.saddle.chi);
  sol.extras.emplace_back("z", sol.saddle.z);
  sol.extras.emplace_back("threshold_energy", sol.saddle.threshold_energy);
  sol.extras.emplace_back("margin_at_lambda_bar", lb.margin);
  sol.extras.emplace_back("psi_plus_mu", sol.psi_at_bar + sol.mu);
  sol.extras.emplace_back("jump_term", jump_term(d, sol.alpha_bbp));
  sol.extras.emplace_back("truncation", saddle.spec.truncation);

  // The same solve at truncation 10, in a narrow bracket around the root.
  SaddleOptions wide = saddle;
  wide.spec.truncation = 10.0;
  wide.guess = std::make_pair(sol.saddle.chi, sol.saddle.z);
  SolveOptions narrow = options;
  narrow.alpha_lo = std::max(options.alpha_lo, sol.alpha_bbp - 0.5);
  narrow.alpha_hi = std::min(options.alpha_hi, sol.alpha_bbp + 0.5);
  narrow.scan_points = 3;
  try {
    const Solution alt = solve(analytic_family(wide), narrow);
    sol.extras.emplace_back("alpha_bbp_truncation_10", alt.alpha_bbp);
    sol.extras.emplace_back("lambda_bar_truncation_10", alt.lambda_bar);
    sol.extras.emplace_back("alpha_bbp_truncation_shift", alt.alpha_bbp - sol.alpha_bbp);
  } catch (const Error& e) {
    sol.extras.emplace_back("alpha_bbp_truncation_10", NAN);
  }
  return sol;
}

void write_report(const std::filesystem::path& path, const Solution& s) {
  nlohmann::ordered_json j;
  j["alpha_bbp"] = s.alpha_bbp;
  j["lambda_bar"] = s.lambda_bar;
  j["mu"] = s.mu;
  j["psi_at_lambda_bar"] = s.psi_at_bar;
  j["residuals"] = {{"stationarity", s.residuals.stationarity}, {"marginality", s.residuals.marginality}, {"mu_consistency", s.residuals.mu_consistency}};
  nlohmann::ordered_json extras = nlohmann::ordered_json::object();
  for (const auto& [k, v] : s.extras) {
    if (std::isfinite(v)) {
      extras[k] = v;
    } else {
      extras[k] = nullptr;
    }
  }
  j["extras"] = extras;
  nlohmann::ordered_json curve = nlohmann::ordered_json::array();
  for (const auto& [a, r] : s.curve) curve.push_back({{"alpha", a}, {"residual", r}});
  j["residual_curve"] = curve;
  csv::write_text(path, j.dump(2) + "\n");
}

}  // namespace phaseflow::bbp
