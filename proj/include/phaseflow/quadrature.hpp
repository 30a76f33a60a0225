#pragma once
// Gauss-Legendre rules and their composite variants.

#include <vector>

namespace phaseflow::quad {

struct Rule {
  std::vector<double> nodes;
  std::vector<double> weights;

  std::size_t size() const { return nodes.size(); }
  double sum() const;
};

/// order-point Gauss-Legendre rule on [a, b].
Rule gauss_legendre(int order, double a, double b);

/// Composite rule on [a, b] whose panels shrink geometrically toward a: the
/// panel edges are a, a + d r^K, ..., a + d r, b with d = b - a.
Rule graded(double a, double b, int order, int panels, double ratio);
std::vector<double> graded_edges(double a, double b, int panels, double ratio);

/// Appends src to dst.
void append(Rule& dst, const Rule& src);

}  // namespace phaseflow::quad
