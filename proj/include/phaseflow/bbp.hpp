#pragma once
// Edge of the Hessian spectrum over a label density and the threshold system
// for the algorithmic transition:
//   Psi(l) = l [1/alpha - E(alpha l'' / (2 l + alpha l''))]
//   Phi(l) = -l E(alpha l'' y^2 / (2 l + alpha l''))
// with l'' = 12 yhat^2 - 4 y^2. lambda_bar minimizes Psi; alpha_BBP is the
// largest alpha at which -Phi(lambda_bar) equals mu = (alpha/2) E[l' yhat].

#include "phaseflow/label_density.hpp"
#include "phaseflow/replica.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace phaseflow::bbp {

/// Minimum relative margin min(2 l + alpha l'') / (2 max(1, |l|)) that psi and
/// phi accept.
inline constexpr double kDefaultMargin = 1e-6;

/// Relative distance of lambda from the pole set, as defined above.
double admissible_margin(const LabelDensity& density, double alpha, double lambda);
/// sup of T = -alpha l''/2 over the density's support.
double pole_edge(const LabelDensity& density, double alpha);

double psi(const LabelDensity& density, double alpha, double lambda, double margin = kDefaultMargin);
double phi(const LabelDensity& density, double alpha, double lambda, double margin = kDefaultMargin);
/// Psi'(l) = 1/alpha - E[(alpha l'' / (2 l + alpha l''))^2].
double psi_prime(const LabelDensity& density, double alpha, double lambda);
double psi_second(const LabelDensity& density, double alpha, double lambda);

/// The same functionals written with T = -(alpha/2) l'':
///   Psi = l [1/alpha + E(T/(l - T))], Phi = l E(T y^2 / (l - T)).
double psi_resolvent_form(const LabelDensity& density, double alpha, double lambda);
double phi_resolvent_form(const LabelDensity& density, double alpha, double lambda);

struct LambdaBar {
  double lambda = 0.0;
  double psi = 0.0;
  double psi_prime = 0.0;
  double margin = 0.0;
};

/// Minimizer of Psi on the admissible domain: golden section in log(l - edge)
/// followed by Newton on Psi'. Throws DomainError if Psi' does not change
/// sign on the domain, ConvergenceError if |Psi'| > 1e-9 at the end.
LambdaBar lambda_bar(const LabelDensity& density, double alpha);

/// (alpha/2) E[4 yhat^2 (yhat^2 - y^2)].
double mu_from_density(const LabelDensity& density, double alpha);

/// (alpha/chi) * 2 E_y[p(yhat = 0 | y) t0(y)] for the analytic density, where
/// t0 is the gap edge: the boundary term by which Psi(alpha/chi) + mu misses
/// zero. The student label jumps from -t0 to t0 as the cavity field crosses 0.
double jump_term(const LabelDensity& density, double alpha);

struct Residuals {
  double stationarity = 0.0;    // Psi'(lambda_bar) = 1/alpha - E[(alpha l'' / (2 l + alpha l''))^2]
  double marginality = 0.0;     // mu + Phi(lambda_bar)
  double mu_consistency = 0.0;  // mu - (alpha/2) E[l' yhat], identically zero for the closure used
};

struct Evaluation {
  double alpha = 0.0;
  double lambda_bar = 0.0;
  double psi_at_bar = 0.0;
  double phi_at_bar = 0.0;
  double mu = 0.0;
  double compatibility = 0.0;  // -Phi(lambda_bar) - mu
  Residuals residuals;
};

Evaluation evaluate(const LabelDensity& density, double alpha);

struct Solution {
  double alpha_bbp = 0.0;
  double lambda_bar = 0.0;
  double mu = 0.0;
  Residuals residuals;
  double psi_at_bar = 0.0;
  /// Residual curve scanned over the bracket: (alpha, compatibility).
  std::vector<std::pair<double, double>> curve;
  /// Extra report entries such as truncation sensitivity.
  std::vector<std::pair<std::string, double>> extras;
  SaddleSolution saddle;  // analytic family only
};

/// A family alpha -> density; the analytic one composes solve_threshold.
using DensityFamily = std::function<LabelDensity(double alpha, SaddleSolution* saddle)>;

DensityFamily analytic_family(const SaddleOptions& options = {});

struct SolveOptions {
  double alpha_lo = 8.0;
  double alpha_hi = 20.0;
  int scan_points = 13;
  double alpha_tolerance = 1e-10;
  double residual_tolerance = 1e-7;
};

/// Largest root of the compatibility residual in the bracket: a scan locates
/// the last sign change, bisection narrows it, secant polishes it. Throws
/// NotFoundError with the scanned curve when the residual keeps its sign.
Solution solve(const DensityFamily& family, const SolveOptions& options = {});

/// Analytic solve, plus alpha_bbp and lambda_bar re-solved at truncation 10.
Solution solve_analytic(const SolveOptions& options = {}, const SaddleOptions& saddle = {});

/// Root of linear interpolation through scattered (alpha, residual) points,
/// taking the last sign change; used for empirical families at a few alphas.
std::optional<double> last_sign_change(const std::vector<std::pair<double, double>>& curve);

void write_report(const std::filesystem::path& path, const Solution& solution);

}  // namespace phaseflow::bbp
