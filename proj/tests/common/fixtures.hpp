#pragma once
// Fixtures shared by the unit suites and the acceptance binary.

#include "phaseflow/model.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

namespace testing {

using namespace phaseflow;

inline Vector random_sphere(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = g(rng);
  return v * (std::sqrt(static_cast<double>(n)) / v.norm());
}

inline double rel_err(const Vector& a, const Vector& b) { return (a - b).norm() / std::max(1e-300, b.norm()); }

inline double raw_loss(const Instance& inst, const Vector& w) { return local_geometry(inst, w).loss; }

/// Central differences of the unconstrained loss.
inline Vector fd_gradient(const Instance& inst, const Vector& w, double h) {
  Vector g(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    Vector a = w, b = w;
    a[i] += h;
    b[i] -= h;
    g[i] = (raw_loss(inst, a) - raw_loss(inst, b)) / (2 * h);
  }
  return g;
}

inline double objective(double t, double chi, double yh, double y) {
  const double r = t * t - y * y;
  return (yh - t) * (yh - t) / chi + r * r;
}

inline double slope(double t, double chi, double yh, double y) { return 2 * (t - yh) / chi + 4 * t * (t * t - y * y); }

// Moreau envelope by grid scan followed by bisection on the slope inside every bracketing cell
// that holds a local grid minimum. Independent of the cubic formula.
inline double brute_envelope(double chi, double yh, double y) {
  const double reach = std::max(std::abs(yh), std::abs(y)) + 1.0;
  const int cells = 20000;
  const double h = 2 * reach / cells;
  double best = objective(yh, chi, yh, y);
  for (int i = 1; i < cells; ++i) {
    const double t = -reach + i * h;
    const double f = objective(t, chi, yh, y);
    if (f > objective(t - h, chi, yh, y) || f > objective(t + h, chi, yh, y)) continue;
    double lo = t - h, hi = t + h;
    if (slope(lo, chi, yh, y) > 0 || slope(hi, chi, yh, y) < 0) {
      best = std::min(best, f);
      continue;
    }
    for (int k = 0; k < 200 && hi - lo > 1e-16 * std::max(1.0, std::abs(t)); ++k) {
      const double mid = 0.5 * (lo + hi);
      (slope(mid, chi, yh, y) < 0 ? lo : hi) = mid;
    }
    best = std::min(best, objective(0.5 * (lo + hi), chi, yh, y));
  }
  return best;
}

/// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("phaseflow_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
