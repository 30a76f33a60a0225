#pragma once
// Zero-temperature 1RSB threshold states: free energy, saddle and replicon
// conditions, and their solution branch in alpha.
//
// All Gaussian integrals are taken in the label variable t = t*(yhat, y),
// where yhat = t (1 + 2 chi (t^2 - y^2)) and dyhat = J(t) dt. On the global
// branch J >= 0, vanishing only at (t, y) = (0, 1/sqrt(2 chi)); the inner
// rule is graded toward the gap edge and the outer y rule is split there
// with a quadratic substitution, so both integrable singularities are
// resolved. Integrands are even in yhat and in y, so only the positive
// quadrant is sampled and weights are doubled.

#include <filesystem>
#include <optional>
#include <vector>

namespace phaseflow {

struct QuadratureSpec {
  int outer_order = 40;   // Gauss-Legendre points per outer y segment
  int inner_order = 32;   // points per inner panel
  int panels = 12;        // graded panels toward the gap edge
  double grading = 0.2;
  double truncation = 8.0;  // |y|, |yhat| <= truncation

  QuadratureSpec refined() const;
};

/// One node of the joint threshold measure.
struct MeasureNode {
  double y = 0.0;       // teacher label, >= 0
  double label = 0.0;   // t*, the student label at the threshold state
  double cavity = 0.0;  // yhat, the cavity field
  double jacobian = 0.0;
  double potential = 0.0;  // V(yhat, y | chi)
  double weight = 0.0;     // sums to the truncated Gaussian mass of y
};

struct ThresholdMeasure {
  double chi = 0.0;
  double z = 0.0;
  QuadratureSpec spec;
  std::vector<MeasureNode> nodes;
  /// int Dy log int Dyhat exp(-z V / 2) over the truncated domain.
  double log_partition = 0.0;
  /// Outer y nodes and weights (weights include the doubled Gaussian).
  std::vector<double> outer_y;
  std::vector<double> outer_weight;
};

ThresholdMeasure threshold_measure(double chi, double z, const QuadratureSpec& spec = {});

/// The conditional rule for a single y: nodes over t >= gap edge with
/// normalized weights, plus log of int_0^L Dyhat exp(-z V/2).
struct ConditionalRule {
  std::vector<double> label;
  std::vector<double> weight;
  double log_half_partition = 0.0;
};

ConditionalRule conditional_rule(double y, double chi, double z, const QuadratureSpec& spec = {});

double free_energy(double alpha, double chi, double z, const QuadratureSpec& spec = {});
double free_energy(double alpha, const ThresholdMeasure& measure);

struct SaddleResiduals {
  double r_chi = 0.0;       // 1/(chi (chi + z)) - (alpha/4) E[V'^2]
  double r_replicon = 0.0;  // 1 - (alpha/4) chi^2 E[V''^2]
};

SaddleResiduals saddle_residuals(double alpha, double chi, double z, const QuadratureSpec& spec = {});
SaddleResiduals saddle_residuals(double alpha, const ThresholdMeasure& measure);

struct SaddleOptions {
  double alpha_min = 2.0;
  double alpha_max = 40.0;
  /// Starting point for Newton; when empty a coarse grid with z <= z_cap is scanned.
  std::optional<std::pair<double, double>> guess;
  double z_cap = 10.0;
  double tolerance = 1e-8;
  int max_iterations = 60;
  QuadratureSpec spec{};
};

struct SaddleSolution {
  double alpha = 0.0;
  double chi = 0.0;
  double z = 0.0;
  double free_energy = 0.0;
  double threshold_energy = 0.0;
  SaddleResiduals residuals;
  int newton_steps = 0;
  QuadratureSpec spec;
};

/// Solves the saddle and replicon conditions in (chi, z) by damped Newton in
/// log variables with a finite-difference Jacobian. Throws ParameterError
/// outside [alpha_min, alpha_max] and ConvergenceError (trace = residual norms
/// per iteration) when no certified root is found.
SaddleSolution solve_threshold(double alpha, const SaddleOptions& options = {});

/// (alpha / 2) E[l] under the threshold label density.
double threshold_energy(const SaddleSolution& solution);

/// Continuation along alpha_min, alpha_min + step, ..., alpha_max.
std::vector<SaddleSolution> solve_branch(double alpha_min, double alpha_max, double step,
                                         const SaddleOptions& options = {});

// CSV: alpha, chi, z, free_energy, threshold_energy, r_chi, r_replicon,
// m_yhat2, m_yhat4, m_yhat2_y2, m_loss
void write_branch(const std::filesystem::path& path, const std::vector<SaddleSolution>& branch);

}  // namespace phaseflow
