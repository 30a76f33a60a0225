#pragma once
// Moreau envelope of the quartic loss,
//   V(yhat, y | chi) = min_t (yhat - t)^2 / chi + (t^2 - y^2)^2.
// Stationarity in t is the depressed cubic t^3 + p t + q = 0 with
// p = 1/(2 chi) - y^2 and q = -yhat / (2 chi).

namespace phaseflow {

struct EnvelopePoint {
  double value = 0.0;
  double minimizer = 0.0;
  /// Two cubic branches attain the minimum; the minimizer jumps here.
  bool tie = false;
};

EnvelopePoint envelope(double chi, double y_hat, double y);

struct EnvelopeDerivs {
  double d1 = 0.0;  // 2 (yhat - t*) / chi
  double d2 = 0.0;  // (2/chi) l'' / (2/chi + l''), l'' at t*
  /// At a branch jump the right-sided values are returned.
  bool flagged = false;
};

EnvelopeDerivs envelope_derivs(double chi, double y_hat, double y);

/// All real roots of t^3 + p t + q = 0, Newton-polished, ascending.
int depressed_cubic_roots(double p, double q, double roots[3]);

namespace prox {
// The proximal map restricted to its global branch is inverted in closed
// form: yhat(t) = t (1 + 2 chi (t^2 - y^2)).
inline double cavity(double t, double y, double chi) { return t * (1.0 + 2.0 * chi * (t * t - y * y)); }
/// d yhat / d t = 1 + chi l''(t, y) / 2.
inline double jacobian(double t, double y, double chi) { return 1.0 + chi * (6.0 * t * t - 2.0 * y * y); }
/// Smallest |t| reached by the global minimizer, sqrt(max(0, y^2 - 1/(2 chi))).
double gap_edge(double y, double chi);
/// Largest t with cavity(t) = bound.
double label_at(double bound, double y, double chi);
}  // namespace prox

}  // namespace phaseflow
