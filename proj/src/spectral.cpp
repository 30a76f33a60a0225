#include "phaseflow/spectral.hpp"

#include "phaseflow/csv.hpp"
#include "phaseflow/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>

namespace phaseflow {

SpectrumMode spectrum_mode_from_string(const std::string& s) {
  if (s == "dense") return SpectrumMode::dense;
  if (s == "iterative" || s == "lanczos") return SpectrumMode::iterative;
  throw ParameterError("unknown spectrum mode '" + s + "'");
}

Histogram freedman_diaconis(std::span<const double> values) {
  Histogram h;
  if (values.empty()) return h;
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  const double lo = v.front();
  const double hi = v.back();
  const double iqr = quantile(0.75) - quantile(0.25);
  double width = 2.0 * iqr / std::cbrt(static_cast<double>(v.size()));
  if (!(width > 0.0)) width = (hi > lo) ? (hi - lo) : 1.0;
  const auto bins = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil((hi - lo) / width)));
  std::vector<double> counts(bins, 0.0);
  for (double x : v) {
    auto b = static_cast<std::size_t>((x - lo) / width);
    counts[std::min(b, bins - 1)] += 1.0;
  }
  const double norm = 1.0 / (static_cast<double>(v.size()) * width);
  for (std::size_t b = 0; b < bins; ++b) {
    h.centers.push_back(lo + (static_cast<double>(b) + 0.5) * width);
    h.density.push_back(counts[b] * norm);
  }
  return h;
}

EigenPairs lanczos_smallest(const std::function<Vector(const Vector&)>& op, Eigen::Index n,
                            int k, double tolerance, Eigen::Index max_dimension,
                            std::uint64_t seed) {
  if (k < 1 || k > n) throw ParameterError("need 1 <= k <= n for Lanczos");
  max_dimension = std::min(max_dimension <= 0 ? n : max_dimension, n);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const auto random_unit = [&]() {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
    return Vector(v / v.norm());
  };

  Matrix basis(n, max_dimension);
  std::vector<double> diag;
  std::vector<double> offdiag;  // offdiag[j] couples j and j+1
  basis.col(0) = random_unit();
  Eigen::Index dim = 0;
  const Eigen::Index check_every = std::max<Eigen::Index>(10, k);
  Eigen::Index next_check = std::min<Eigen::Index>(max_dimension, std::max<Eigen::Index>(2 * k + 20, 40));

  const auto orthogonalize = [&](Vector& w, Eigen::Index upto) {
    // Two passes of classical Gram-Schmidt keep the basis orthogonal to
    // working precision.
    for (int pass = 0; pass < 2; ++pass) {
      const Vector c = basis.leftCols(upto).transpose() * w;
      w.noalias() -= basis.leftCols(upto) * c;
    }
  };

  EigenPairs out;
  while (true) {
    Vector w = op(basis.col(dim));
    const double a = basis.col(dim).dot(w);
    diag.push_back(a);
    ++dim;
    orthogonalize(w, dim);
    double b = w.norm();

    const bool full = dim == max_dimension;
    if (dim >= next_check || full || b < 1e-12) {
      Eigen::SelfAdjointEigenSolver<Matrix> tri;
      Vector dv = Eigen::Map<const Vector>(diag.data(), dim);
      Vector ov = dim > 1 ? Vector(Eigen::Map<const Vector>(offdiag.data(), dim - 1)) : Vector();
      tri.computeFromTridiagonal(dv, ov, Eigen::ComputeEigenvectors);
      const int want = static_cast<int>(std::min<Eigen::Index>(k, dim));
      Vector est(want);
      for (int i = 0; i < want; ++i) est[i] = std::abs(b * tri.eigenvectors()(dim - 1, i));
      const bool converged = want == k && (est.array() < tolerance).all();
      if (converged || full) {
        out.values = tri.eigenvalues().head(want);
        out.vectors = basis.leftCols(dim) * tri.eigenvectors().leftCols(want);
        out.residuals.resize(want);
        for (int i = 0; i < want; ++i) {
          out.vectors.col(i).normalize();
          out.residuals[i] = (op(out.vectors.col(i)) - out.values[i] * out.vectors.col(i)).norm();
        }
        out.krylov_dimension = static_cast<int>(dim);
        if ((out.residuals.array() < tolerance).all() && want == k) return out;
        if (full) {
          throw ConvergenceError("Lanczos did not converge within " + std::to_string(dim) +
                                     " vectors",
                                 std::vector<double>(out.residuals.data(), out.residuals.data() + want));
        }
      }
      next_check = std::min(max_dimension, dim + check_every);
    }

    if (b < 1e-12) {
      // Invariant subspace: continue from a fresh direction orthogonal to it.
      w = random_unit();
      orthogonalize(w, dim);
      b = 0.0;
      basis.col(dim) = w / w.norm();
    } else {
      basis.col(dim) = w / b;
    }
    offdiag.push_back(b);
  }
}

namespace {

void fill_overlaps(SpectrumReport& report, const Instance& instance, const Matrix& vectors) {
  if (!instance.teacher) return;
  const double tn = instance.teacher->norm();
  for (Eigen::Index i = 0; i < vectors.cols(); ++i) {
    const double c = std::abs(vectors.col(i).dot(*instance.teacher)) / (vectors.col(i).norm() * tn);
    report.overlaps.push_back(std::min(c, 1.0));
  }
}

}  // namespace

SpectrumReport low_spectrum(const Instance& instance, const Estimator& est,
                            const SpectrumOptions& options, long step) {
  if (options.k < 1) throw ParameterError("k must be at least 1");
  if (options.k > instance.n) throw ParameterError("k exceeds the dimension");
  SpectrumReport report;
  report.step = step;
  const HessianOperator op(instance, est);
  report.mu = op.mu();

  if (options.mode == SpectrumMode::dense) {
    const Matrix h = hessian_dense(instance, est, options.budget);
    Eigen::SelfAdjointEigenSolver<Matrix> solver(h);
    if (solver.info() != Eigen::Success) throw ConvergenceError("dense eigensolver failed");
    const Vector& vals = solver.eigenvalues();
    const Matrix vecs = solver.eigenvectors().leftCols(options.k);
    for (int i = 0; i < options.k; ++i) {
      report.eigenvalues.push_back(vals[i]);
      report.residuals.push_back((h * vecs.col(i) - vals[i] * vecs.col(i)).norm());
    }
    fill_overlaps(report, instance, vecs);
    if (options.histogram) {
      report.bulk = freedman_diaconis(std::span<const double>(vals.data(), static_cast<std::size_t>(vals.size())));
    }
  } else {
    const auto apply = [&op](const Vector& v) { return op.apply(v); };
    const EigenPairs pairs = lanczos_smallest(apply, instance.n, options.k, options.tolerance,
                                              options.max_krylov);
    for (int i = 0; i < options.k; ++i) {
      report.eigenvalues.push_back(pairs.values[i]);
      report.residuals.push_back(pairs.residuals[i]);
    }
    fill_overlaps(report, instance, pairs.vectors);
  }
  return report;
}

void write_spectra(const std::filesystem::path& path, const std::vector<SpectrumReport>& reports) {
  csv::Table t;
  std::size_t k = 0;
  for (const auto& r : reports) k = std::max(k, r.eigenvalues.size());
  t.header.push_back("step");
  for (std::size_t i = 1; i <= k; ++i) t.header.push_back("lambda_" + std::to_string(i));
  for (std::size_t i = 1; i <= k; ++i) t.header.push_back("overlap_" + std::to_string(i));
  t.header.push_back("mu");
  for (const auto& r : reports) {
    std::vector<std::string> row{csv::format(static_cast<long long>(r.step))};
    for (std::size_t i = 0; i < k; ++i) row.push_back(csv::format(i < r.eigenvalues.size() ? r.eigenvalues[i] : NAN));
    for (std::size_t i = 0; i < k; ++i) row.push_back(csv::format(i < r.overlaps.size() ? r.overlaps[i] : NAN));
    row.push_back(csv::format(r.mu));
    t.rows.push_back(std::move(row));
  }
  csv::write(path, t);
}

std::vector<SpectrumReport> read_spectra(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  std::size_t k = 0;
  while (true) {
    const std::string name = "lambda_" + std::to_string(k + 1);
    if (std::find(t.header.begin(), t.header.end(), name) == t.header.end()) break;
    ++k;
  }
  const std::size_t step_col = t.column("step");
  const std::size_t mu_col = t.column("mu");
  std::vector<SpectrumReport> out;
  for (const auto& row : t.rows) {
    SpectrumReport r;
    r.step = csv::parse_int(row[step_col]);
    r.mu = csv::parse_double(row[mu_col]);
    for (std::size_t i = 1; i <= k; ++i) {
      r.eigenvalues.push_back(csv::parse_double(row[t.column("lambda_" + std::to_string(i))]));
      const double ov = csv::parse_double(row[t.column("overlap_" + std::to_string(i))]);
      if (!std::isnan(ov)) r.overlaps.push_back(ov);
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_histogram(const std::filesystem::path& path, const Histogram& h) {
  csv::Table t;
  t.header = {"bin_center", "density"};
  for (std::size_t i = 0; i < h.centers.size(); ++i) {
    t.rows.push_back({csv::format(h.centers[i]), csv::format(h.density[i])});
  }
  csv::write(path, t);
}

}  // namespace phaseflow
