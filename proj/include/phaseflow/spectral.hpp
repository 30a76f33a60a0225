#pragma once
// Low end of the Hessian spectrum at one state, either from a full dense
// decomposition or from Lanczos on the matrix-free operator.

#include "phaseflow/model.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace phaseflow {

enum class SpectrumMode { dense, iterative };

SpectrumMode spectrum_mode_from_string(const std::string& s);

struct Histogram {
  std::vector<double> centers;
  std::vector<double> density;
};

/// Freedman-Diaconis binning over [min, max]; density integrates to one.
Histogram freedman_diaconis(std::span<const double> values);

struct SpectrumOptions {
  int k = 8;
  SpectrumMode mode = SpectrumMode::dense;
  bool histogram = false;  // dense mode only
  double tolerance = 1e-8;  // Lanczos residual |Hv - lambda v|
  int max_krylov = 0;       // 0: up to N
  DenseBudget budget{};
};

struct SpectrumReport {
  long step = 0;
  std::vector<double> eigenvalues;  // ascending, k smallest
  std::vector<double> overlaps;     // |<v_i, W*>| / (|v_i| |W*|); empty without teacher
  std::vector<double> residuals;    // |H v_i - lambda_i v_i| for unit v_i
  double mu = 0.0;
  std::optional<Histogram> bulk;
};

SpectrumReport low_spectrum(const Instance& instance, const Estimator& est,
                            const SpectrumOptions& options, long step = 0);

struct EigenPairs {
  Vector values;   // ascending
  Matrix vectors;  // unit columns
  Vector residuals;
  int krylov_dimension = 0;
};

/// k smallest eigenpairs of a symmetric operator of size n by Lanczos with full
/// reorthogonalisation. The Krylov basis is extended until every wanted Ritz
/// pair has residual below tolerance; throws ConvergenceError (trace = residual
/// norms) if max_dimension is reached first.
EigenPairs lanczos_smallest(const std::function<Vector(const Vector&)>& op, Eigen::Index n,
                            int k, double tolerance, Eigen::Index max_dimension,
                            std::uint64_t seed = 12345);

// CSV: step, lambda_1..lambda_k, overlap_1..overlap_k, mu
void write_spectra(const std::filesystem::path& path, const std::vector<SpectrumReport>& reports);
std::vector<SpectrumReport> read_spectra(const std::filesystem::path& path);
// CSV: bin_center, density
void write_histogram(const std::filesystem::path& path, const Histogram& h);

}  // namespace phaseflow
