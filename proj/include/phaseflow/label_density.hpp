#pragma once
// Joint density of (student label, teacher label) at the threshold states,
// either the analytic 1RSB one or an empirical sample.
//
// The analytic density is the law of t*(yhat, y), the proximal label, when y
// is standard normal and yhat given y has density proportional to
// gamma(yhat) exp(-z V(yhat, y | chi) / 2).

#include "phaseflow/model.hpp"
#include "phaseflow/replica.hpp"

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace phaseflow {

struct LabelNode {
  double yhat = 0.0;
  double y = 0.0;
  double weight = 0.0;
};

struct LabelMoments {
  double yhat2 = 0.0;    // E[yhat^2]
  double yhat4 = 0.0;    // E[yhat^4]
  double yhat2_y2 = 0.0; // E[yhat^2 y^2]
  double loss = 0.0;     // E[(yhat^2 - y^2)^2]
};

class LabelDensity {
 public:
  enum class Kind { analytic, empirical };

  static LabelDensity analytic(double chi, double z, const QuadratureSpec& spec = {});
  static LabelDensity analytic(const SaddleSolution& s) { return analytic(s.chi, s.z, s.spec); }
  /// Equal-weight samples; y may be given signed or as |y|.
  static LabelDensity empirical(const std::vector<double>& yhat, const std::vector<double>& y);
  /// Student projections and |teacher labels| of one state.
  static LabelDensity from_state(const Instance& instance, const Vector& w);
  /// Pools several empirical densities with equal per-sample weight.
  static LabelDensity pooled(const std::vector<LabelDensity>& parts);
  /// Arbitrary weighted nodes, weights must sum to one within 1e-9.
  static LabelDensity weighted(std::vector<LabelNode> nodes);

  Kind kind() const { return kind_; }
  const std::vector<LabelNode>& nodes() const { return nodes_; }
  double total_mass() const;

  template <class F>
  double expect(F&& g) const {
    double s = 0.0;
    for (const LabelNode& n : nodes_) s += n.weight * g(n.yhat, n.y);
    return s;
  }

  /// Standard error of the sample mean of g; zero for the analytic kind.
  template <class F>
  double standard_error(F&& g) const {
    if (kind_ != Kind::empirical || nodes_.size() < 2) return 0.0;
    const double m = expect(g);
    double v = 0.0;
    for (const LabelNode& n : nodes_) {
      const double d = g(n.yhat, n.y) - m;
      v += n.weight * d * d;
    }
    const double count = static_cast<double>(nodes_.size());
    return std::sqrt(v * count / (count - 1.0) / count);
  }

  LabelMoments moments() const;

  /// Joint density in (yhat, y); analytic kind only.
  double pdf(double yhat, double y) const;
  /// Conditional density of yhat given y; analytic kind only.
  double conditional_pdf(double yhat, double y) const;

  /// Draws (yhat, y) pairs: inverse CDF in yhat given a Gaussian y for the
  /// analytic kind, resampling for the empirical kind.
  std::vector<std::pair<double, double>> sample(std::size_t count, std::uint64_t seed) const;

  double chi() const { return chi_; }
  double z() const { return z_; }
  const QuadratureSpec& spec() const { return spec_; }

 private:
  Kind kind_ = Kind::empirical;
  std::vector<LabelNode> nodes_;
  double chi_ = 0.0;
  double z_ = 0.0;
  QuadratureSpec spec_{};
};

}  // namespace phaseflow
