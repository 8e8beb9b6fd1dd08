#include "sombrl/gp.hpp"

#include "sombrl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace sombrl {

namespace {

constexpr double kSqrt5 = 2.2360679774997896964;

void require_finite(const Eigen::Ref<const Eigen::MatrixXd>& m, const char* what) {
  if (!m.allFinite()) {
    throw InputError(std::string(what) + " contains non-finite values");
  }
}

// Rows of `a` divided elementwise by the lengthscales.
Eigen::MatrixXd scale_rows(const Eigen::Ref<const Eigen::MatrixXd>& a,
                           const Eigen::VectorXd& lengthscales) {
  return (a.array().rowwise() / lengthscales.transpose().array()).matrix();
}

// Applies the family's profile to squared scaled distances (stationary) or
// scaled inner products (linear), in place.
void apply_profile(KernelFamily family, double signal_variance, Eigen::MatrixXd& m) {
  switch (family) {
    case KernelFamily::RBF:
      m = signal_variance * (-0.5 * m.array().max(0.0)).exp();
      break;
    case KernelFamily::Matern52: {
      const Eigen::ArrayXXd r = m.array().max(0.0).sqrt();
      m = signal_variance * ((1.0 + kSqrt5 * r + (5.0 / 3.0) * r.square()) * (-kSqrt5 * r).exp());
      break;
    }
    case KernelFamily::Linear:
      m *= signal_variance;
      break;
  }
}

Eigen::MatrixXd scaled_cross(KernelFamily family, const Eigen::Ref<const Eigen::MatrixXd>& as,
                             const Eigen::Ref<const Eigen::VectorXd>& a_sq,
                             const Eigen::Ref<const Eigen::MatrixXd>& bs,
                             const Eigen::Ref<const Eigen::VectorXd>& b_sq) {
  Eigen::MatrixXd m = as * bs.transpose();
  if (family != KernelFamily::Linear) {
    m = ((-2.0 * m).colwise() + a_sq).rowwise() + b_sq.transpose();
  }
  return m;
}

Eigen::MatrixXd training_kernel(const KernelSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& x) {
  Eigen::MatrixXd k = kernel_matrix(spec, x, x);
  k = 0.5 * (k + k.transpose());
  k.diagonal() = kernel_diag(spec, x);
  return k;
}

}  // namespace

std::string to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::RBF:
      return "rbf";
    case KernelFamily::Linear:
      return "linear";
    case KernelFamily::Matern52:
      return "matern52";
  }
  return "unknown";
}

KernelFamily kernel_family_from_string(std::string_view name) {
  if (name == "rbf") return KernelFamily::RBF;
  if (name == "linear") return KernelFamily::Linear;
  if (name == "matern52") return KernelFamily::Matern52;
  throw InputError("unknown kernel family '" + std::string(name) + "'");
}

KernelSpec KernelSpec::isotropic(KernelFamily family, int input_dim, double lengthscale,
                                 double signal_variance) {
  KernelSpec spec;
  spec.family = family;
  spec.lengthscales = Eigen::VectorXd::Constant(input_dim, lengthscale);
  spec.signal_variance = signal_variance;
  spec.validate();
  return spec;
}

void KernelSpec::validate() const {
  if (lengthscales.size() == 0) throw InputError("kernel input_dim must be positive");
  if (!(lengthscales.array() > 0.0).all() || !lengthscales.allFinite()) {
    throw InputError("kernel lengthscales must be finite and > 0");
  }
  if (!(signal_variance > 0.0) || !std::isfinite(signal_variance)) {
    throw InputError("kernel signal_variance must be finite and > 0");
  }
}

bool KernelSpec::operator==(const KernelSpec& other) const {
  return family == other.family && lengthscales.size() == other.lengthscales.size() &&
         lengthscales == other.lengthscales && signal_variance == other.signal_variance;
}

double kernel_eval(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& a,
                   const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (a.size() != spec.input_dim() || b.size() != spec.input_dim()) {
    throw InputError("kernel_eval: expected vectors of length " +
                     std::to_string(spec.input_dim()) + ", got " + std::to_string(a.size()) +
                     " and " + std::to_string(b.size()));
  }
  const Eigen::ArrayXd as = a.array() / spec.lengthscales.array();
  const Eigen::ArrayXd bs = b.array() / spec.lengthscales.array();
  switch (spec.family) {
    case KernelFamily::RBF:
      return spec.signal_variance * std::exp(-0.5 * (as - bs).square().sum());
    case KernelFamily::Matern52: {
      const double r = std::sqrt((as - bs).square().sum());
      return spec.signal_variance * (1.0 + kSqrt5 * r + (5.0 / 3.0) * r * r) * std::exp(-kSqrt5 * r);
    }
    case KernelFamily::Linear:
      return spec.signal_variance * (as * bs).sum();
  }
  return 0.0;
}

Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& a,
                              const Eigen::Ref<const Eigen::MatrixXd>& b) {
  if (a.cols() != spec.input_dim() || b.cols() != spec.input_dim()) {
    throw InputError("kernel_matrix: input dimension mismatch");
  }
  const Eigen::MatrixXd as = scale_rows(a, spec.lengthscales);
  const Eigen::MatrixXd bs = scale_rows(b, spec.lengthscales);
  Eigen::MatrixXd m = scaled_cross(spec.family, as, as.rowwise().squaredNorm(), bs,
                                   bs.rowwise().squaredNorm());
  apply_profile(spec.family, spec.signal_variance, m);
  return m;
}

Eigen::VectorXd kernel_diag(const KernelSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& a) {
  if (a.cols() != spec.input_dim()) throw InputError("kernel_diag: input dimension mismatch");
  if (spec.family == KernelFamily::Linear) {
    return spec.signal_variance * scale_rows(a, spec.lengthscales).rowwise().squaredNorm();
  }
  return Eigen::VectorXd::Constant(a.rows(), spec.signal_variance);
}

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(int input_dim, int output_dim, double noise_variance)
    : input_dim_(input_dim), output_dim_(output_dim), noise_variance_(noise_variance) {
  if (input_dim <= 0 || output_dim <= 0) throw InputError("dataset dimensions must be positive");
  if (!(noise_variance > 0.0) || !std::isfinite(noise_variance)) {
    throw InputError("dataset noise variance must be finite and > 0");
  }
}

void Dataset::add(const Eigen::Ref<const Eigen::VectorXd>& input,
                  const Eigen::Ref<const Eigen::VectorXd>& target) {
  if (input.size() != input_dim_ || target.size() != output_dim_) {
    throw InputError("dataset row has wrong dimension");
  }
  require_finite(input, "dataset input");
  require_finite(target, "dataset target");
  inputs_.emplace_back(input);
  targets_.emplace_back(target);
}

void Dataset::append(const Dataset& other) {
  if (other.empty()) return;
  if (other.input_dim_ != input_dim_ || other.output_dim_ != output_dim_) {
    throw InputError("cannot append datasets of different dimensions");
  }
  inputs_.insert(inputs_.end(), other.inputs_.begin(), other.inputs_.end());
  targets_.insert(targets_.end(), other.targets_.begin(), other.targets_.end());
}

void Dataset::keep_most_recent(int max_size) {
  if (max_size < 0 || size() <= max_size) return;
  const auto drop = static_cast<std::ptrdiff_t>(size() - max_size);
  inputs_.erase(inputs_.begin(), inputs_.begin() + drop);
  targets_.erase(targets_.begin(), targets_.begin() + drop);
}

Eigen::MatrixXd Dataset::input_matrix() const {
  Eigen::MatrixXd m(size(), input_dim_);
  for (int i = 0; i < size(); ++i) m.row(i) = inputs_[static_cast<std::size_t>(i)].transpose();
  return m;
}

Eigen::MatrixXd Dataset::target_matrix() const {
  Eigen::MatrixXd m(size(), output_dim_);
  for (int i = 0; i < size(); ++i) m.row(i) = targets_[static_cast<std::size_t>(i)].transpose();
  return m;
}

Dataset Dataset::subset(const std::vector<int>& indices) const {
  Dataset out(input_dim_, output_dim_, noise_variance_);
  for (int i : indices) {
    if (i < 0 || i >= size()) throw InputError("dataset subset index out of range");
    out.inputs_.push_back(inputs_[static_cast<std::size_t>(i)]);
    out.targets_.push_back(targets_[static_cast<std::size_t>(i)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cholesky with jitter escalation

Eigen::MatrixXd robust_cholesky(const Eigen::Ref<const Eigen::MatrixXd>& a, double* jitter_used) {
  const Eigen::Index n = a.rows();
  if (n == 0) {
    if (jitter_used) *jitter_used = 0.0;
    return Eigen::MatrixXd(0, 0);
  }
  // Jitter levels are relative to the mean diagonal so that tiny-scale
  // targets are not swamped by an absolute 1e-6.
  const double scale = std::max(a.diagonal().mean(), std::numeric_limits<double>::min());
  Eigen::MatrixXd work = a;
  double jitter = 0.0;
  for (int level = -1; level <= 4; ++level) {
    jitter = level < 0 ? 0.0 : scale * std::pow(10.0, -10 + level);
    if (level >= 0) work.diagonal() = a.diagonal().array() + jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(work);
    if (llt.info() == Eigen::Success) {
      Eigen::MatrixXd l = llt.matrixL();
      if (l.allFinite() && (l.diagonal().array() > 0.0).all()) {
        if (jitter_used) *jitter_used = jitter;
        return l;
      }
    }
  }
  std::ostringstream msg;
  msg << "Cholesky failed after jitter escalation to " << jitter << " (n=" << n
      << ", min diag=" << a.diagonal().minCoeff() << ", max diag=" << a.diagonal().maxCoeff()
      << ", max |offdiag|=" << (a - Eigen::MatrixXd(a.diagonal().asDiagonal())).cwiseAbs().maxCoeff()
      << ")";
  throw NumericalError(msg.str());
}

// ---------------------------------------------------------------------------
// GPPosterior

GPPosterior::GPPosterior(int input_dim, double noise_variance, std::vector<KernelSpec> kernels)
    : input_dim_(input_dim), noise_variance_(noise_variance) {
  if (input_dim <= 0) throw InputError("posterior input_dim must be positive");
  if (!(noise_variance > 0.0)) throw InputError("noise variance must be > 0");
  if (kernels.empty()) throw InputError("posterior needs at least one output kernel");
  for (auto& k : kernels) {
    k.validate();
    if (k.input_dim() != input_dim) throw InputError("kernel input_dim does not match data");
    Output out;
    out.kernel = std::move(k);
    outputs_.push_back(std::move(out));
  }
  reserve(16);
}

std::vector<KernelSpec> GPPosterior::kernels() const {
  std::vector<KernelSpec> ks;
  ks.reserve(outputs_.size());
  for (const auto& o : outputs_) ks.push_back(o.kernel);
  return ks;
}

Eigen::MatrixXd GPPosterior::cholesky(int j) const {
  return outputs_[static_cast<std::size_t>(j)].chol.topLeftCorner(n_, n_).triangularView<Eigen::Lower>();
}

void GPPosterior::set_mean_weights(int j, Eigen::VectorXd w) {
  if (w.size() != n_) throw InputError("mean weights must have one entry per training point");
  outputs_[static_cast<std::size_t>(j)].mean_alpha = std::move(w);
}

void GPPosterior::reserve(int capacity) {
  if (x_.rows() >= capacity) return;
  x_.conservativeResize(capacity, input_dim_);
  y_.conservativeResize(capacity, output_dim());
  for (auto& o : outputs_) {
    o.chol.conservativeResize(capacity, capacity);
    o.chol_inv.conservativeResize(capacity, capacity);
    o.scaled_x.conservativeResize(capacity, input_dim_);
    o.scaled_sq_norms.conservativeResize(capacity);
  }
}

void GPPosterior::refresh_weights(Output& out) const {
  const auto l = out.chol.topLeftCorner(n_, n_).triangularView<Eigen::Lower>();
  const Eigen::Index j = &out - outputs_.data();
  Eigen::VectorXd w = l.solve(y_.col(j).head(n_));
  l.transpose().solveInPlace(w);
  out.alpha = w;
  out.mean_alpha = std::move(w);
}

void GPPosterior::factorize_all() {
  const Eigen::MatrixXd x = x_.topRows(n_);
  for (auto& o : outputs_) {
    o.scaled_x.topRows(n_) = scale_rows(x, o.kernel.lengthscales);
    o.scaled_sq_norms.head(n_) = o.scaled_x.topRows(n_).rowwise().squaredNorm();
    Eigen::MatrixXd k = training_kernel(o.kernel, x);
    k.diagonal().array() += noise_variance_;
    o.chol.topLeftCorner(n_, n_) = robust_cholesky(k, &o.jitter);
    o.chol_inv.topLeftCorner(n_, n_) = o.chol.topLeftCorner(n_, n_).triangularView<Eigen::Lower>().solve(
        Eigen::MatrixXd::Identity(n_, n_));
    refresh_weights(o);
  }
}

Eigen::MatrixXd GPPosterior::cross_kernel(const Output& out,
                                          const Eigen::Ref<const Eigen::MatrixXd>& z) const {
  const Eigen::MatrixXd zs = scale_rows(z, out.kernel.lengthscales);
  Eigen::MatrixXd m = scaled_cross(out.kernel.family, zs, zs.rowwise().squaredNorm(),
                                   out.scaled_x.topRows(n_), out.scaled_sq_norms.head(n_));
  apply_profile(out.kernel.family, out.kernel.signal_variance, m);
  return m;
}

Prediction GPPosterior::predict(const Eigen::Ref<const Eigen::VectorXd>& z) const {
  if (z.size() != input_dim_) throw InputError("predict: query has wrong dimension");
  Eigen::MatrixXd mean;
  Eigen::MatrixXd stddev;
  predict_batch(z.transpose(), mean, &stddev);
  return {mean.row(0).transpose(), stddev.row(0).transpose()};
}

void GPPosterior::predict_batch(const Eigen::Ref<const Eigen::MatrixXd>& z, Eigen::MatrixXd& mean,
                                Eigen::MatrixXd* stddev) const {
  if (z.cols() != input_dim_) throw InputError("predict: query has wrong dimension");
  const Eigen::Index m = z.rows();
  mean.resize(m, output_dim());
  if (stddev) stddev->resize(m, output_dim());
  for (std::size_t j = 0; j < outputs_.size(); ++j) {
    const Output& o = outputs_[j];
    const Eigen::VectorXd prior = kernel_diag(o.kernel, z);
    const auto col = static_cast<Eigen::Index>(j);
    if (n_ == 0) {
      mean.col(col).setZero();
      if (stddev) stddev->col(col) = prior.array().sqrt();
      continue;
    }
    const Eigen::MatrixXd kq = cross_kernel(o, z);
    mean.col(col).noalias() = kq * o.mean_alpha;
    if (stddev) {
      Eigen::MatrixXd v(m, n_);
      v.noalias() = kq * o.chol_inv.topLeftCorner(n_, n_).triangularView<Eigen::Lower>().transpose();
      const Eigen::ArrayXd var = prior.array() - v.rowwise().squaredNorm().array();
      stddev->col(col) = var.max(0.0).min(prior.array()).sqrt().matrix();
    }
  }
}

Eigen::VectorXd GPPosterior::variance(const Eigen::Ref<const Eigen::VectorXd>& z) const {
  const Prediction p = predict(z);
  return p.stddev.array().square();
}

Eigen::MatrixXd GPPosterior::covariance(const Eigen::Ref<const Eigen::MatrixXd>& z, int j) const {
  const Output& o = outputs_[static_cast<std::size_t>(j)];
  Eigen::MatrixXd prior = training_kernel(o.kernel, z);
  if (n_ == 0) return prior;
  const Eigen::MatrixXd kq = cross_kernel(o, z);
  const Eigen::MatrixXd v =
      o.chol.topLeftCorner(n_, n_).triangularView<Eigen::Lower>().solve(kq.transpose());
  Eigen::MatrixXd cov = prior - v.transpose() * v;
  return 0.5 * (cov + cov.transpose());
}

bool GPPosterior::try_append(const Eigen::Ref<const Eigen::VectorXd>& z,
                             const Eigen::Ref<const Eigen::VectorXd>& y, double min_std_ratio) {
  if (z.size() != input_dim_ || y.size() != output_dim()) {
    throw InputError("try_append: point has wrong dimension");
  }
  require_finite(z, "appended input");
  require_finite(y, "appended target");

  std::vector<Eigen::VectorXd> rows(outputs_.size());
  std::vector<double> post_var(outputs_.size());
  double best_ratio = 0.0;
  for (std::size_t j = 0; j < outputs_.size(); ++j) {
    const Output& o = outputs_[j];
    const double kzz = kernel_diag(o.kernel, z.transpose())(0);
    if (n_ > 0) {
      const Eigen::MatrixXd kq = cross_kernel(o, z.transpose());
      rows[j] = o.chol.topLeftCorner(n_, n_).triangularView<Eigen::Lower>().solve(kq.transpose());
      post_var[j] = std::max(0.0, kzz - rows[j].squaredNorm());
    } else {
      rows[j] = Eigen::VectorXd(0);
      post_var[j] = kzz;
    }
    best_ratio = std::max(best_ratio, std::sqrt(post_var[j] / noise_variance_));
  }
  if (min_std_ratio > 0.0 && best_ratio < min_std_ratio) return false;

  if (n_ + 1 > x_.rows()) reserve(std::max(16, 2 * static_cast<int>(x_.rows())));
  x_.row(n_) = z.transpose();
  y_.row(n_) = y.transpose();
  for (std::size_t j = 0; j < outputs_.size(); ++j) {
    Output& o = outputs_[j];
    o.scaled_x.row(n_) = (z.array() / o.kernel.lengthscales.array()).matrix().transpose();
    o.scaled_sq_norms(n_) = o.scaled_x.row(n_).squaredNorm();
    o.chol.row(n_).head(n_) = rows[j].transpose();
    o.chol.col(n_).head(n_).setZero();
    o.chol(n_, n_) = std::sqrt(post_var[j] + noise_variance_ + o.jitter);
    o.chol_inv.col(n_).head(n_).setZero();
    o.chol_inv.row(n_).head(n_).noalias() =
        -(rows[j].transpose() * o.chol_inv.topLeftCorner(n_, n_).triangularView<Eigen::Lower>()) / o.chol(n_, n_);
    o.chol_inv(n_, n_) = 1.0 / o.chol(n_, n_);
  }
  ++n_;
  for (auto& o : outputs_) refresh_weights(o);
  return true;
}

double GPPosterior::log_det(int j) const {
  const Output& o = outputs_[static_cast<std::size_t>(j)];
  return 2.0 * o.chol.topLeftCorner(n_, n_).diagonal().array().log().sum();
}

GPPosterior gp_fit(const Dataset& data, const KernelSpec& spec) {
  return gp_fit(data, std::vector<KernelSpec>(static_cast<std::size_t>(data.output_dim()), spec));
}

GPPosterior gp_fit(const Dataset& data, const std::vector<KernelSpec>& kernels) {
  if (static_cast<int>(kernels.size()) != data.output_dim()) {
    throw InputError("gp_fit: need one kernel per output dimension");
  }
  GPPosterior post(data.input_dim(), data.noise_variance(), kernels);
  post.reserve(std::max(16, data.size()));
  post.n_ = data.size();
  if (post.n_ > 0) {
    post.x_.topRows(post.n_) = data.input_matrix();
    post.y_.topRows(post.n_) = data.target_matrix();
  }
  post.factorize_all();
  return post;
}

Prediction gp_predict(const GPPosterior& posterior, const Eigen::Ref<const Eigen::VectorXd>& z) {
  if (!z.allFinite()) throw InputError("gp_predict: query is not finite");
  return posterior.predict(z);
}

// ---------------------------------------------------------------------------
// Marginal likelihood and hyperparameters

double log_marginal_likelihood(const Eigen::Ref<const Eigen::MatrixXd>& inputs,
                               const Eigen::Ref<const Eigen::VectorXd>& targets,
                               const KernelSpec& spec, double noise_variance) {
  const Eigen::Index n = inputs.rows();
  if (n == 0) throw InputError("log marginal likelihood needs at least one point");
  Eigen::MatrixXd k = training_kernel(spec, inputs);
  k.diagonal().array() += noise_variance;
  double jitter = 0.0;
  const Eigen::MatrixXd l = robust_cholesky(k, &jitter);
  const Eigen::VectorXd v = l.triangularView<Eigen::Lower>().solve(targets);
  return -0.5 * v.squaredNorm() - l.diagonal().array().log().sum() -
         0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

double log_marginal_likelihood(const Dataset& data, const KernelSpec& spec) {
  if (data.empty()) throw InputError("log marginal likelihood needs at least one point");
  const Eigen::MatrixXd x = data.input_matrix();
  const Eigen::MatrixXd y = data.target_matrix();
  double total = 0.0;
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    total += log_marginal_likelihood(x, y.col(j), spec, data.noise_variance());
  }
  return total;
}

HyperparameterBounds HyperparameterBounds::around(const KernelSpec& center, double factor) {
  HyperparameterBounds b;
  b.lengthscale_lower = center.lengthscales / factor;
  b.lengthscale_upper = center.lengthscales * factor;
  b.signal_variance_lower = center.signal_variance / factor;
  b.signal_variance_upper = center.signal_variance * factor;
  return b;
}

KernelSpec HyperparameterBounds::clamp(const KernelSpec& spec) const {
  KernelSpec out = spec;
  out.lengthscales = spec.lengthscales.cwiseMax(lengthscale_lower).cwiseMin(lengthscale_upper);
  out.signal_variance = std::clamp(spec.signal_variance, signal_variance_lower, signal_variance_upper);
  return out;
}

bool HyperparameterBounds::contains(const KernelSpec& spec) const {
  return (spec.lengthscales.array() >= lengthscale_lower.array()).all() &&
         (spec.lengthscales.array() <= lengthscale_upper.array()).all() &&
         spec.signal_variance >= signal_variance_lower && spec.signal_variance <= signal_variance_upper;
}

namespace {

struct LogBox {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

// Parameters in log space: lengthscales then signal variance.
Eigen::VectorXd to_log(const KernelSpec& spec) {
  Eigen::VectorXd p(spec.input_dim() + 1);
  p.head(spec.input_dim()) = spec.lengthscales.array().log().matrix();
  p(spec.input_dim()) = std::log(spec.signal_variance);
  return p;
}

KernelSpec from_log(KernelFamily family, const Eigen::VectorXd& p) {
  KernelSpec spec;
  spec.family = family;
  const Eigen::Index d = p.size() - 1;
  spec.lengthscales = p.head(d).array().exp().matrix();
  spec.signal_variance = std::exp(p(d));
  return spec;
}

class LineSearch {
 public:
  LineSearch(const FitOptions& options) : options_(options) {}

  // Golden-section maximisation of f over [a, b]. Only moves `x` when the
  // best probe strictly improves on `fx`.
  template <typename F>
  void maximize(F&& f, double a, double b, double& x, double& fx) const {
    if (!(b - a > options_.line_tolerance)) return;
    constexpr double kInvPhi = 0.6180339887498948482;
    double c = b - kInvPhi * (b - a);
    double d = a + kInvPhi * (b - a);
    double fc = f(c);
    double fd = f(d);
    for (int it = 0; it < options_.max_line_iterations && (b - a) > options_.line_tolerance; ++it) {
      if (fc > fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - kInvPhi * (b - a);
        fc = f(c);
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + kInvPhi * (b - a);
        fd = f(d);
      }
    }
    const double best = fc > fd ? c : d;
    const double fbest = std::max(fc, fd);
    if (fbest > fx) {
      x = best;
      fx = fbest;
    }
  }

 private:
  const FitOptions& options_;
};

}  // namespace

HyperparameterFit fit_hyperparameters(const Dataset& data, const KernelSpec& init,
                                      const HyperparameterBounds& bounds,
                                      const FitOptions& options) {
  init.validate();
  const int d = init.input_dim();
  if (data.input_dim() != d) throw InputError("fit_hyperparameters: kernel/data dimension mismatch");
  if (bounds.lengthscale_lower.size() != d || bounds.lengthscale_upper.size() != d) {
    throw InputError("fit_hyperparameters: bounds have wrong dimension");
  }
  if (!(bounds.lengthscale_lower.array() > 0.0).all() || !(bounds.signal_variance_lower > 0.0) ||
      !(bounds.lengthscale_lower.array() <= bounds.lengthscale_upper.array()).all() ||
      !(bounds.signal_variance_lower <= bounds.signal_variance_upper)) {
    throw InputError("fit_hyperparameters: invalid bounds");
  }

  HyperparameterFit result;
  const auto outputs = static_cast<std::size_t>(data.output_dim());
  if (data.size() < 5) {
    result.kernels.assign(outputs, init);
    result.log_likelihood.assign(outputs, std::numeric_limits<double>::quiet_NaN());
    return result;
  }

  const KernelSpec start = bounds.clamp(init);
  LogBox box{to_log(KernelSpec{init.family, bounds.lengthscale_lower, bounds.signal_variance_lower}),
             to_log(KernelSpec{init.family, bounds.lengthscale_upper, bounds.signal_variance_upper})};
  const Eigen::MatrixXd x = data.input_matrix();
  const Eigen::MatrixXd y = data.target_matrix();
  const LineSearch line(options);

  for (std::size_t j = 0; j < outputs; ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    auto objective = [&](const Eigen::VectorXd& p) {
      try {
        const double v = log_marginal_likelihood(x, y.col(col), from_log(init.family, p),
                                                 data.noise_variance());
        return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
      } catch (const NumericalError&) {
        return -std::numeric_limits<double>::infinity();
      }
    };

    const Eigen::VectorXd p_init = to_log(start);
    const double f_init = objective(p_init);
    Eigen::VectorXd best_p = p_init;
    double best_f = f_init;

    std::mt19937_64 rng(options.seed + 1000003ULL * j);
    for (int restart = 0; restart < std::max(1, options.restarts); ++restart) {
      Eigen::VectorXd p = p_init;
      if (restart > 0) {
        for (Eigen::Index i = 0; i < p.size(); ++i) {
          std::uniform_real_distribution<double> u(box.lower(i), box.upper(i));
          p(i) = box.lower(i) < box.upper(i) ? u(rng) : box.lower(i);
        }
      }
      double fp = objective(p);
      for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
        const double before = fp;
        for (Eigen::Index i = 0; i < p.size(); ++i) {
          auto along = [&](double v) {
            Eigen::VectorXd q = p;
            q(i) = v;
            return objective(q);
          };
          double xi = p(i);
          line.maximize(along, box.lower(i), box.upper(i), xi, fp);
          p(i) = xi;
        }
        if (!(fp - before > 1e-6)) break;
      }
      if (fp > best_f) {
        best_f = fp;
        best_p = p;
      }
    }

    if (!std::isfinite(best_f)) {
      result.warning = true;
      result.kernels.push_back(init);
      result.log_likelihood.push_back(best_f);
    } else {
      KernelSpec fitted = best_f > f_init ? from_log(init.family, best_p) : start;
      // Round-tripping through log/exp can step just outside the box.
      fitted = bounds.clamp(fitted);
      result.kernels.push_back(fitted);
      result.log_likelihood.push_back(std::max(best_f, f_init));
    }
  }
  return result;
}

double information_gain(const KernelSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& inputs,
                        double noise_variance) {
  if (inputs.rows() == 0) return 0.0;
  if (!(noise_variance > 0.0)) throw InputError("information_gain: noise variance must be > 0");
  require_finite(inputs, "information_gain inputs");
  Eigen::MatrixXd m = training_kernel(spec, inputs) / noise_variance;
  m.diagonal().array() += 1.0;
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw NumericalError("information_gain: I + K/noise not PD");
  return Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
}

}  // namespace sombrl
