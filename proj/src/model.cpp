#include "phaseflow/model.hpp"

#include "phaseflow/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace phaseflow {

std::string to_string(LabelMode mode) {
  switch (mode) {
    case LabelMode::teacher: return "teacher";
    case LabelMode::gaussian_shuffled: return "gaussian_shuffled";
    case LabelMode::permuted_teacher: return "permuted_teacher";
  }
  return "unknown";
}

LabelMode label_mode_from_string(const std::string& s) {
  if (s == "teacher") return LabelMode::teacher;
  if (s == "gaussian_shuffled" || s == "shuffled") return LabelMode::gaussian_shuffled;
  if (s == "permuted_teacher" || s == "permuted") return LabelMode::permuted_teacher;
  throw ParameterError("unknown label mode '" + s + "'");
}

Eigen::Index sample_count(int n, double alpha) {
  return static_cast<Eigen::Index>(std::llround(alpha * n));
}

namespace {

Vector gaussian_vector(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> normal;
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

void check_dims(const Instance& instance, Eigen::Index n) {
  if (instance.sensing.cols() != n) {
    throw DimensionError("estimator has dimension " + std::to_string(n) +
                         " but instance has " + std::to_string(instance.sensing.cols()));
  }
}

}  // namespace

Instance generate_instance(int n, double alpha, LabelMode mode, std::uint64_t seed) {
  if (n < 2) throw ParameterError("instance dimension must be at least 2");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ParameterError("alpha must be positive");
  const Eigen::Index m = sample_count(n, alpha);
  if (m < 1) throw ParameterError("round(alpha * n) must be at least 1");

  std::mt19937_64 rng(seed);
  Instance inst;
  inst.n = n;
  inst.alpha = alpha;
  inst.label_mode = mode;
  inst.seed = seed;

  if (mode != LabelMode::gaussian_shuffled) {
    Vector t = gaussian_vector(rng, n);
    t *= std::sqrt(static_cast<double>(n)) / t.norm();
    inst.teacher = std::move(t);
  }

  inst.sensing.resize(m, n);
  std::normal_distribution<double> normal;
  for (Eigen::Index r = 0; r < m; ++r) {
    for (Eigen::Index c = 0; c < n; ++c) inst.sensing(r, c) = normal(rng);
    inst.sensing.row(r) /= inst.sensing.row(r).norm();
  }

  inst.labels.resize(m);
  if (mode == LabelMode::gaussian_shuffled) {
    for (Eigen::Index r = 0; r < m; ++r) {
      const double g = normal(rng);
      inst.labels[r] = g * g;
    }
  } else {
    const Vector y = inst.sensing * (*inst.teacher);
    inst.labels = y.array().square();
    if (mode == LabelMode::permuted_teacher) {
      std::vector<Eigen::Index> perm(static_cast<std::size_t>(m));
      std::iota(perm.begin(), perm.end(), Eigen::Index{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      Vector permuted(m);
      for (Eigen::Index r = 0; r < m; ++r) permuted[r] = inst.labels[perm[static_cast<std::size_t>(r)]];
      inst.labels = std::move(permuted);
    }
  }
  return inst;
}

void validate(const Instance& inst) {
  if (inst.n < 2 || inst.sensing.cols() != inst.n) throw ParameterError("inconsistent dimension n");
  if (inst.labels.size() != inst.sensing.rows()) throw ParameterError("label count differs from sample count");
  for (Eigen::Index r = 0; r < inst.sensing.rows(); ++r) {
    if (std::abs(inst.sensing.row(r).norm() - 1.0) > 1e-12) {
      throw ParameterError("sensing row " + std::to_string(r) + " is not unit norm");
    }
  }
  if ((inst.labels.array() < 0.0).any()) throw ParameterError("negative squared label");
  if (inst.teacher) {
    if (inst.teacher->size() != inst.n) throw ParameterError("teacher dimension mismatch");
    const double norm = inst.teacher->norm();
    if (std::abs(norm - std::sqrt(static_cast<double>(inst.n))) > 1e-9 * std::sqrt(inst.n)) {
      throw ParameterError("teacher norm is not sqrt(N)");
    }
    if (inst.label_mode == LabelMode::teacher) {
      const Vector y2 = (inst.sensing * (*inst.teacher)).array().square();
      if ((y2 - inst.labels).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + y2.cwiseAbs().maxCoeff())) {
        throw ParameterError("labels are not the teacher's squared projections");
      }
    }
  } else if (inst.label_mode != LabelMode::gaussian_shuffled) {
    throw ParameterError("teacher-labelled instance has no teacher");
  }
}

Estimator::Estimator(Vector w) : w_(std::move(w)) {
  const double n = static_cast<double>(w_.size());
  if (w_.size() < 1) throw ParameterError("empty estimator");
  const double ratio = w_.squaredNorm() / n;
  if (!(std::abs(ratio - 1.0) <= 1e-9)) {
    throw ParameterError("estimator is off the sphere: |w|^2/N = " + std::to_string(ratio));
  }
}

Estimator Estimator::normalized(const Vector& w) {
  const double norm = w.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw ParameterError("cannot normalize a zero or non-finite vector");
  return Estimator(w * (std::sqrt(static_cast<double>(w.size())) / norm));
}

Evaluation evaluate(const Instance& instance, const Estimator& est) {
  check_dims(instance, est.n());
  Evaluation ev;
  ev.yhat = instance.sensing * est.w();
  ev.loss = 0.0;
  for (Eigen::Index m = 0; m < ev.yhat.size(); ++m) {
    ev.loss += 0.5 * pointwise::loss(ev.yhat[m], instance.labels[m]);
  }
  return ev;
}

double loss(const Instance& instance, const Estimator& est) { return evaluate(instance, est).loss; }

LocalGeometry local_geometry(const Instance& instance, const Vector& w) {
  check_dims(instance, w.size());
  const Eigen::Index rows = instance.sensing.rows();
  LocalGeometry g;
  g.yhat.resize(rows);
  g.gradient = Vector::Zero(w.size());
  double mu_sum = 0.0;
  // One sweep over the data in blocks of rows small enough to stay in L1/L2
  // between the projection and the gradient accumulation.
  constexpr Eigen::Index block = 16;
  Eigen::Matrix<double, block, 1> coef;
  for (Eigen::Index m0 = 0; m0 < rows; m0 += block) {
    const Eigen::Index b = std::min(block, rows - m0);
    const auto rows_block = instance.sensing.middleRows(m0, b);
    g.yhat.segment(m0, b).noalias() = rows_block * w;
    for (Eigen::Index i = 0; i < b; ++i) {
      const double yh = g.yhat[m0 + i];
      const double r = yh * yh - instance.labels[m0 + i];
      coef[i] = 2.0 * yh * r;
      g.loss += 0.5 * r * r;
      mu_sum += coef[i] * yh;
    }
    g.gradient.noalias() += rows_block.transpose() * coef.head(b);
  }
  g.mu = mu_sum / static_cast<double>(w.size());
  g.tangent_gradient_norm = (g.gradient - g.mu * w).norm();
  return g;
}

Vector gradient(const Instance& instance, const Estimator& est) {
  return local_geometry(instance, est.w()).gradient;
}

double lagrange_multiplier(const Instance& instance, const Estimator& est) {
  const Evaluation ev = evaluate(instance, est);
  double s = 0.0;
  for (Eigen::Index m = 0; m < ev.yhat.size(); ++m) {
    s += pointwise::d1(ev.yhat[m], instance.labels[m]) * ev.yhat[m];
  }
  return s / (2.0 * static_cast<double>(est.n()));
}

Matrix hessian_dense(const Instance& instance, const Estimator& est, DenseBudget budget) {
  check_dims(instance, est.n());
  if (instance.n > budget.max_n) {
    throw CapacityError("dense Hessian for n=" + std::to_string(instance.n) +
                        " exceeds the budget n<=" + std::to_string(budget.max_n) +
                        "; use hessian_matvec instead");
  }
  const Evaluation ev = evaluate(instance, est);
  Vector half_curv(ev.yhat.size());
  for (Eigen::Index m = 0; m < ev.yhat.size(); ++m) {
    half_curv[m] = 0.5 * pointwise::d2(ev.yhat[m], instance.labels[m]);
  }
  const double mu = lagrange_multiplier(instance, est);
  const RowMatrix scaled = half_curv.asDiagonal() * instance.sensing;
  Matrix h = instance.sensing.transpose() * scaled;
  h.diagonal().array() -= mu;
  // Mirror the upper triangle so that H is symmetric bit for bit.
  h.triangularView<Eigen::StrictlyLower>() = h.transpose().triangularView<Eigen::StrictlyLower>();
  return h;
}

HessianOperator::HessianOperator(const Instance& instance, const Estimator& est)
    : sensing_(&instance.sensing), mu_(lagrange_multiplier(instance, est)) {
  const Evaluation ev = evaluate(instance, est);
  half_curvature_.resize(ev.yhat.size());
  for (Eigen::Index m = 0; m < ev.yhat.size(); ++m) {
    half_curvature_[m] = 0.5 * pointwise::d2(ev.yhat[m], instance.labels[m]);
  }
}

Vector HessianOperator::apply(const Vector& v) const {
  if (v.size() != sensing_->cols()) throw DimensionError("hessian matvec dimension mismatch");
  const Vector proj = (*sensing_) * v;
  Vector out = sensing_->transpose() * half_curvature_.cwiseProduct(proj);
  out -= mu_ * v;
  return out;
}

double HessianOperator::trace() const {
  return half_curvature_.sum() - static_cast<double>(size()) * mu_;
}

double HessianOperator::upper_bound() const {
  return half_curvature_.cwiseMax(0.0).sum() - mu_;
}

Vector hessian_matvec(const Instance& instance, const Estimator& est, const Vector& v) {
  check_dims(instance, est.n());
  return HessianOperator(instance, est).apply(v);
}

double test_loss(const Instance& instance, const Estimator& est, int n_fresh, std::uint64_t seed) {
  if (!instance.teacher) throw ParameterError("test loss needs a teacher");
  if (n_fresh <= 0) throw ParameterError("n_fresh must be positive");
  check_dims(instance, est.n());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Vector x(instance.n);
  double total = 0.0;
  for (int s = 0; s < n_fresh; ++s) {
    for (int i = 0; i < instance.n; ++i) x[i] = normal(rng);
    x /= x.norm();
    const double y = x.dot(*instance.teacher);
    total += pointwise::loss(x.dot(est.w()), y * y);
  }
  return total / n_fresh;
}

double teacher_overlap(const Instance& instance, const Estimator& est) {
  if (!instance.teacher) throw ParameterError("teacher overlap needs a teacher");
  check_dims(instance, est.n());
  return est.w().dot(*instance.teacher) / static_cast<double>(instance.n);
}

}  // namespace phaseflow
