#include "phaseflow/quadrature.hpp"

#include "phaseflow/errors.hpp"

#include <gsl/gsl_integration.h>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>

namespace phaseflow::quad {

namespace {

struct TableDeleter {
  void operator()(gsl_integration_glfixed_table* t) const { gsl_integration_glfixed_table_free(t); }
};

// Rules on [-1, 1], built once per order.
const Rule& reference_rule(int order) {
  static std::mutex mutex;
  static std::map<int, Rule> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(order);
  if (it != cache.end()) return it->second;
  std::unique_ptr<gsl_integration_glfixed_table, TableDeleter> table(
      gsl_integration_glfixed_table_alloc(static_cast<std::size_t>(order)));
  if (!table) throw ParameterError("cannot build Gauss-Legendre table of order " + std::to_string(order));
  Rule r;
  for (int i = 0; i < order; ++i) {
    double x = 0.0, w = 0.0;
    gsl_integration_glfixed_point(-1.0, 1.0, static_cast<std::size_t>(i), &x, &w, table.get());
    r.nodes.push_back(x);
    r.weights.push_back(w);
  }
  return cache.emplace(order, std::move(r)).first->second;
}

}  // namespace

double Rule::sum() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

Rule gauss_legendre(int order, double a, double b) {
  if (order < 1) throw ParameterError("quadrature order must be positive");
  const Rule& ref = reference_rule(order);
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (b + a);
  Rule r;
  r.nodes.reserve(ref.size());
  r.weights.reserve(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    r.nodes.push_back(mid + half * ref.nodes[i]);
    r.weights.push_back(half * ref.weights[i]);
  }
  return r;
}

std::vector<double> graded_edges(double a, double b, int panels, double ratio) {
  if (panels < 0) throw ParameterError("panel count must be non-negative");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ParameterError("grading ratio must lie in (0, 1)");
  const double d = b - a;
  std::vector<double> edges{a};
  for (int k = panels; k >= 1; --k) edges.push_back(a + d * std::pow(ratio, k));
  edges.push_back(b);
  return edges;
}

Rule graded(double a, double b, int order, int panels, double ratio) {
  const std::vector<double> edges = graded_edges(a, b, panels, ratio);
  Rule r;
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) append(r, gauss_legendre(order, edges[i], edges[i + 1]));
  return r;
}

void append(Rule& dst, const Rule& src) {
  dst.nodes.insert(dst.nodes.end(), src.nodes.begin(), src.nodes.end());
  dst.weights.insert(dst.weights.end(), src.weights.begin(), src.weights.end());
}

}  // namespace phaseflow::quad
