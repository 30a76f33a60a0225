#include "phaseflow/envelope.hpp"

#include "phaseflow/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace phaseflow {

namespace {

double objective(double chi, double y_hat, double y, double t) {
  const double a = y_hat - t;
  const double b = t * t - y * y;
  return a * a / chi + b * b;
}

double polish(double p, double q, double t) {
  for (int it = 0; it < 4; ++it) {
    const double f = (t * t + p) * t + q;
    const double df = 3.0 * t * t + p;
    if (df == 0.0) break;
    const double step = f / df;
    t -= step;
    if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(t))) break;
  }
  return t;
}

}  // namespace

int depressed_cubic_roots(double p, double q, double roots[3]) {
  int count = 0;
  const double disc = q * q / 4.0 + p * p * p / 27.0;
  if (disc > 0.0) {
    const double s = std::sqrt(disc);
    // Pick the non-cancelling sign for u, then v = -p / (3u).
    const double u = std::cbrt(-q / 2.0 + (q <= 0.0 ? s : -s));
    const double t = u == 0.0 ? 0.0 : u - p / (3.0 * u);
    roots[count++] = polish(p, q, t);
  } else if (p == 0.0) {
    roots[count++] = 0.0;
  } else {
    const double r = 2.0 * std::sqrt(-p / 3.0);
    const double arg = std::clamp(3.0 * q / (p * r), -1.0, 1.0);
    const double theta = std::acos(arg) / 3.0;
    for (int k = 0; k < 3; ++k) {
      roots[count++] = polish(p, q, r * std::cos(theta - 2.0 * std::numbers::pi * k / 3.0));
    }
  }
  std::sort(roots, roots + count);
  return count;
}

EnvelopePoint envelope(double chi, double y_hat, double y) {
  if (!(chi > 0.0)) throw ParameterError("chi must be positive");
  double roots[3];
  const int n = depressed_cubic_roots(1.0 / (2.0 * chi) - y * y, -y_hat / (2.0 * chi), roots);
  // For yhat != 0 the only stationary point with the sign of yhat is the
  // global minimizer: the roots sum to zero and their product is yhat / (2 chi).
  // At yhat = 0 the two outer roots tie and +t is taken.
  const double t = y_hat < 0.0 ? roots[0] : roots[n - 1];
  EnvelopePoint best{objective(chi, y_hat, y, t), t, false};
  if (n == 3) {
    const double other = objective(chi, y_hat, y, y_hat < 0.0 ? roots[2] : roots[0]);
    best.tie = std::abs(other - best.value) <= 1e-12 * std::max(1.0, best.value) &&
               roots[2] - roots[0] > 1e-6 * std::max(1.0, std::abs(t));
  }
  return best;
}

EnvelopeDerivs envelope_derivs(double chi, double y_hat, double y) {
  const EnvelopePoint e = envelope(chi, y_hat, y);
  const double t = e.minimizer;
  const double l2 = 12.0 * t * t - 4.0 * y * y;
  EnvelopeDerivs d;
  d.d1 = 2.0 * (y_hat - t) / chi;
  d.d2 = (2.0 / chi) * l2 / (2.0 / chi + l2);
  d.flagged = e.tie;
  return d;
}

namespace prox {

double gap_edge(double y, double chi) { return std::sqrt(std::max(0.0, y * y - 1.0 / (2.0 * chi))); }

double label_at(double bound, double y, double chi) {
  // cavity() increases on [gap_edge, inf) and cavity(|bound|) >= |bound| once
  // |bound| >= |y|; bisection there, then Newton.
  double lo = gap_edge(y, chi);
  double hi = std::max({std::abs(bound), std::abs(y), lo}) + 1.0;
  while (cavity(hi, y, chi) < bound) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (cavity(mid, y, chi) < bound ? lo : hi) = mid;
  }
  double t = 0.5 * (lo + hi);
  for (int it = 0; it < 3; ++it) {
    const double j = jacobian(t, y, chi);
    if (j <= 0.0) break;
    t -= (cavity(t, y, chi) - bound) / j;
  }
  return t;
}

}  // namespace prox

}  // namespace phaseflow
