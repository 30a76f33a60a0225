#pragma once
// Phase-retrieval instances and the pointwise quantities of the quartic loss
//   L(W) = 1/2 sum_m ((x_m . W)^2 - y_m^2)^2
// on the sphere |W|^2 = N.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace phaseflow {

using Vector = Eigen::VectorXd;
// Row-major so that one sample's sensing vector is contiguous.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = Eigen::MatrixXd;

enum class LabelMode {
  teacher,            // y_m = <x_m, W*>
  gaussian_shuffled,  // y_m ~ N(0,1) i.i.d., no teacher
  permuted_teacher,   // teacher labels under a random permutation
};

std::string to_string(LabelMode mode);
LabelMode label_mode_from_string(const std::string& s);

namespace pointwise {
// All take the squared label y2 = y^2, which is what the dataset stores.
inline double loss(double yhat, double y2) {
  const double r = yhat * yhat - y2;
  return r * r;
}
inline double d1(double yhat, double y2) { return 4.0 * yhat * (yhat * yhat - y2); }
inline double d2(double yhat, double y2) { return 12.0 * yhat * yhat - 4.0 * y2; }
}  // namespace pointwise

struct Instance {
  int n = 0;
  double alpha = 0.0;
  RowMatrix sensing;  // M x N, unit rows
  Vector labels;      // squared labels y_m^2
  std::optional<Vector> teacher;
  LabelMode label_mode = LabelMode::teacher;
  std::uint64_t seed = 0;

  Eigen::Index samples() const { return sensing.rows(); }
};

/// Number of samples for (n, alpha): round(alpha * n).
Eigen::Index sample_count(int n, double alpha);

Instance generate_instance(int n, double alpha, LabelMode mode, std::uint64_t seed);

/// Throws ParameterError if any stored invariant (unit rows, teacher norm,
/// label consistency) is violated.
void validate(const Instance& instance);

/// A point on the sphere of radius sqrt(N).
class Estimator {
 public:
  /// Accepts w only if |w|^2/N is within 1e-9 of one.
  explicit Estimator(Vector w);
  /// Rescales any nonzero vector onto the sphere.
  static Estimator normalized(const Vector& w);

  const Vector& w() const { return w_; }
  Eigen::Index n() const { return w_.size(); }

 private:
  Vector w_;
};

struct Evaluation {
  Vector yhat;   // projections <x_m, W>
  double loss;   // 1/2 sum_m l(yhat_m, y_m)
};

Evaluation evaluate(const Instance& instance, const Estimator& est);
double loss(const Instance& instance, const Estimator& est);

/// Euclidean gradient sum_m 2 yhat_m (yhat_m^2 - y_m^2) x_m.
Vector gradient(const Instance& instance, const Estimator& est);

/// mu = (2/N) sum_m yhat_m^2 (yhat_m^2 - y_m^2) = <W, grad L>/N.
double lagrange_multiplier(const Instance& instance, const Estimator& est);

/// Everything the flow needs from one pass over the data.
struct LocalGeometry {
  Vector yhat;
  double loss = 0.0;
  Vector gradient;
  double mu = 0.0;
  /// |grad L - mu W|, the tangent component of the gradient.
  double tangent_gradient_norm = 0.0;
};

LocalGeometry local_geometry(const Instance& instance, const Vector& w);

struct DenseBudget {
  int max_n = 4096;
};

Matrix hessian_dense(const Instance& instance, const Estimator& est,
                     DenseBudget budget = {});

/// Matrix-free H = 1/2 sum_m l''_m x_m x_m^T - mu I, frozen at one state.
class HessianOperator {
 public:
  HessianOperator(const Instance& instance, const Estimator& est);

  Vector apply(const Vector& v) const;
  Eigen::Index size() const { return sensing_->cols(); }
  double mu() const { return mu_; }
  /// trace(H) = sum_m 1/2 l''_m - N mu (rows have unit norm).
  double trace() const;
  /// An upper bound on the largest eigenvalue: sum of positive curvatures - mu.
  double upper_bound() const;

 private:
  const RowMatrix* sensing_;
  Vector half_curvature_;
  double mu_;
};

Vector hessian_matvec(const Instance& instance, const Estimator& est, const Vector& v);

/// Per-sample loss on n_fresh new sensing vectors against the same teacher.
double test_loss(const Instance& instance, const Estimator& est, int n_fresh,
                 std::uint64_t seed);

/// m = <W, W*>/N.
double teacher_overlap(const Instance& instance, const Estimator& est);

// Serialization: a CSV file whose leading "# key=value" lines carry the
// metadata (n, alpha, samples, seed, label_mode, teacher) followed by one row
// per sample: x_1,...,x_N,label. The teacher, if any, is a single
// "teacher," prefixed row before the samples.
void write_instance(const std::filesystem::path& path, const Instance& instance);
Instance read_instance(const std::filesystem::path& path);

}  // namespace phaseflow
