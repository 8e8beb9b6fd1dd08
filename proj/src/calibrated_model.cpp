#include "sombrl/calibrated_model.hpp"

#include "sombrl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace sombrl {

BetaSchedule BetaSchedule::fixed(double value) {
  BetaSchedule s;
  s.mode = Mode::Fixed;
  s.value = value;
  s.validate();
  return s;
}

BetaSchedule BetaSchedule::theory(double rkhs_bound, double noise_std, double delta) {
  BetaSchedule s;
  s.mode = Mode::Theory;
  s.rkhs_bound = rkhs_bound;
  s.noise_std = noise_std;
  s.delta = delta;
  s.validate();
  return s;
}

void BetaSchedule::validate() const {
  if (mode == Mode::Fixed && !(value > 0.0)) throw InputError("beta: fixed value must be > 0");
  if (mode == Mode::Theory) {
    if (!(rkhs_bound > 0.0) || !(noise_std > 0.0)) {
      throw InputError("beta: theory parameters B and sigma must be > 0");
    }
    if (!(delta > 0.0 && delta <= 1.0)) throw InputError("beta: delta must lie in (0, 1]");
  }
}

double beta_schedule(const BetaSchedule& schedule, int n, double gamma_n) {
  if (n < 0) throw InputError("beta_schedule: n must be >= 0");
  if (!(gamma_n >= 0.0)) throw InputError("beta_schedule: gamma_n must be >= 0");
  schedule.validate();
  if (schedule.mode == BetaSchedule::Mode::Fixed) return schedule.value;
  return schedule.rkhs_bound +
         schedule.noise_std * std::sqrt(2.0 * (gamma_n + std::log(1.0 / schedule.delta)));
}

void ModelConfig::validate() const {
  if (!(noise_std > 0.0)) throw InputError("model.noise_std must be > 0");
  if (!(signal_variance > 0.0)) throw InputError("model.signal_variance must be > 0");
  if (lengthscales && !(lengthscales->array() > 0.0).all()) {
    throw InputError("model.lengthscales must be > 0");
  }
  if (fit_every < 1) throw InputError("model.fit_every must be >= 1");
  if (fit_max_points < 5) throw InputError("model.fit_max_points must be >= 5");
  if (!(fit_bound_factor >= 1.0)) throw InputError("model.fit_bound_factor must be >= 1");
  if (fit_restarts < 1) throw InputError("model.fit_restarts must be >= 1");
  if (max_points < 1) throw InputError("model.max_points must be >= 1");
  if (!(admit_std_ratio >= 0.0)) throw InputError("model.admit_std_ratio must be >= 0");
  if (!(rkhs_bound >= 0.0)) throw InputError("model.rkhs_bound must be >= 0");
  beta.validate();
}

bool ModelConfig::operator==(const ModelConfig& o) const {
  const bool same_scales = lengthscales.has_value() == o.lengthscales.has_value() &&
                           (!lengthscales || (lengthscales->size() == o.lengthscales->size() &&
                                              *lengthscales == *o.lengthscales));
  return kernel == o.kernel && same_scales && signal_variance == o.signal_variance && noise_std == o.noise_std &&
         fit_hyperparameters == o.fit_hyperparameters && fit_every == o.fit_every &&
         fit_max_points == o.fit_max_points && fit_bound_factor == o.fit_bound_factor &&
         fit_restarts == o.fit_restarts && max_points == o.max_points && admit_std_ratio == o.admit_std_ratio &&
         beta == o.beta && lipschitz_projection == o.lipschitz_projection && rkhs_bound == o.rkhs_bound;
}

// ---------------------------------------------------------------------------

CalibratedModel::CalibratedModel(int input_dim, int output_dim, ModelConfig config)
    : config_(std::move(config)) {
  config_.validate();
  if (config_.lengthscales && config_.lengthscales->size() != input_dim) {
    throw InputError("model.lengthscales must have one entry per model input");
  }
  data_ = Dataset(input_dim, output_dim, noise_variance());
  KernelSpec k = KernelSpec::isotropic(config_.kernel, input_dim, 1.0, config_.signal_variance);
  if (config_.lengthscales) k.lengthscales = *config_.lengthscales;
  reference_.assign(static_cast<std::size_t>(output_dim), k);
  posterior_ = GPPosterior(input_dim, noise_variance(), reference_);
  beta_ = beta_schedule(config_.beta, 0, 0.0);
}

Confidence CalibratedModel::predict_confidence(const Eigen::Ref<const Eigen::VectorXd>& z) const {
  const Prediction p = gp_predict(posterior_, z);
  return {p.mean, p.stddev, beta_};
}

std::vector<KernelSpec> CalibratedModel::initial_kernels(const Dataset& pool) const {
  const Eigen::MatrixXd x = pool.input_matrix();
  const Eigen::MatrixXd y = pool.target_matrix();
  std::vector<KernelSpec> out;
  KernelSpec k = KernelSpec::isotropic(config_.kernel, pool.input_dim(), 1.0, config_.signal_variance);
  if (pool.size() >= 2) {
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Eigen::VectorXd sd = ((x.rowwise() - mean).array().square().colwise().mean()).sqrt().transpose();
    k.lengthscales = sd.cwiseMax(1e-6);
  }
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    KernelSpec kj = k;
    if (pool.size() >= 2) {
      const double var = (y.col(j).array() - y.col(j).mean()).square().mean();
      kj.signal_variance = std::max(var, noise_variance());
    }
    out.push_back(kj);
  }
  return out;
}

void CalibratedModel::refit(const Dataset& pool) {
  const int m = std::min(pool.size(), config_.fit_max_points);
  std::vector<int> idx(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    idx[static_cast<std::size_t>(i)] =
        static_cast<int>((static_cast<long long>(i) * pool.size()) / m);
  }
  const Dataset sub = pool.subset(idx);
  const Eigen::MatrixXd x = sub.input_matrix();
  const Eigen::MatrixXd y = sub.target_matrix();

  FitOptions options;
  options.restarts = config_.fit_restarts;
  std::vector<KernelSpec> fitted;
  for (int j = 0; j < pool.output_dim(); ++j) {
    Dataset single(pool.input_dim(), 1, pool.noise_variance());
    for (Eigen::Index i = 0; i < x.rows(); ++i) single.add(x.row(i).transpose(), y.row(i).segment(j, 1));
    const auto bounds =
        HyperparameterBounds::around(reference_[static_cast<std::size_t>(j)], config_.fit_bound_factor);
    const HyperparameterFit fit = fit_hyperparameters(single, posterior_.kernel(j), bounds, options);
    fitted.push_back(fit.kernels.front());
  }
  posterior_ = gp_fit(data_, fitted);
}

void CalibratedModel::apply_projection() {
  if (!config_.lipschitz_projection || posterior_.size() == 0) return;
  for (int j = 0; j < posterior_.output_dim(); ++j) {
    posterior_.set_mean_weights(j, lipschitz_project(posterior_, j, config_.rkhs_bound).alpha);
  }
}

void CalibratedModel::update(const Dataset& transitions) {
  if ((transitions.input_dim() != input_dim() ||
                               transitions.output_dim() != output_dim())) {
    throw InputError("update_model: transitions have the wrong dimension");
  }
  ++episode_;
  if (!transitions.empty()) {
    if (!config_.lengthscales && !kernels_from_data_) {
      Dataset pool = data_;
      pool.append(transitions);
      reference_ = initial_kernels(pool);
      kernels_from_data_ = true;
      posterior_ = gp_fit(data_, reference_);
    }
    information_gain_ += batch_information_gain(posterior_, transitions.input_matrix());

    if (config_.fit_hyperparameters && episode_ % config_.fit_every == 0 &&
        data_.size() + transitions.size() >= 5) {
      Dataset pool = data_;
      pool.append(transitions);
      refit(pool);
    }
    for (int i = 0; i < transitions.size(); ++i) {
      if (posterior_.try_append(transitions.input(i), transitions.target(i), config_.admit_std_ratio)) {
        data_.add(transitions.input(i), transitions.target(i));
      }
    }
    if (data_.size() > config_.max_points) {
      data_.keep_most_recent(config_.max_points);
      posterior_ = gp_fit(data_, posterior_.kernels());
    }
  }
  beta_ = beta_schedule(config_.beta, episode_, information_gain_);
  apply_projection();
}

Confidence predict_confidence(const CalibratedModel& model, const Eigen::Ref<const Eigen::VectorXd>& z) {
  return model.predict_confidence(z);
}

CalibratedModel update_model(const CalibratedModel& model, const Dataset& new_transitions) {
  CalibratedModel next = model;
  next.update(new_transitions);
  return next;
}

double batch_information_gain(const GPPosterior& posterior, const Eigen::Ref<const Eigen::MatrixXd>& batch) {
  if (batch.rows() == 0) return 0.0;
  double total = 0.0;
  for (int j = 0; j < posterior.output_dim(); ++j) {
    Eigen::MatrixXd m = posterior.covariance(batch, j) / posterior.noise_variance();
    m.diagonal().array() += 1.0;
    double jitter = 0.0;
    total += robust_cholesky(m, &jitter).diagonal().array().log().sum();
  }
  return total;
}

// ---------------------------------------------------------------------------
// Bounded-norm projection

QpSolution lipschitz_project(const Eigen::Ref<const Eigen::MatrixXd>& k,
                             const Eigen::Ref<const Eigen::VectorXd>& alpha_n, double noise_variance,
                             double bound, const QpOptions& options) {
  const Eigen::Index n = k.rows();
  if (n == 0 || k.cols() != n || alpha_n.size() != n) {
    throw InputError("lipschitz_project: need a square kernel matrix matching the weights");
  }
  if (!(bound >= 0.0)) throw InputError("lipschitz_project: bound must be >= 0");
  if (!(noise_variance > 0.0)) throw InputError("lipschitz_project: noise variance must be > 0");

  QpSolution sol;
  const double b2 = bound * bound;
  const Eigen::MatrixXd ks = 0.5 * (k + k.transpose());
  const double norm2 = alpha_n.dot(ks * alpha_n);
  if (norm2 <= b2 * (1.0 + 1e-12)) {
    sol.alpha = alpha_n;
    sol.constraint_value = norm2;
    return sol;
  }
  sol.active = true;
  if (bound == 0.0) {
    sol.alpha = Eigen::VectorXd::Zero(n);
    sol.multiplier = std::numeric_limits<double>::infinity();
    return sol;
  }

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(ks);
  if (eig.info() != Eigen::Success) throw NumericalError("lipschitz_project: eigendecomposition failed");
  const Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(0.0);
  const Eigen::MatrixXd& q = eig.eigenvectors();
  const Eigen::VectorXd c_n = q.transpose() * alpha_n;
  const double cutoff = 1e-12 * std::max(lam.maxCoeff(), 1e-300);

  // Stationarity in the eigenbasis: c_i = a_i c_n,i / (a_i + nu), a_i = 1 + lam_i / noise.
  auto coefficients = [&](double nu) {
    Eigen::VectorXd c = c_n;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (lam(i) > cutoff) {
        const double a = 1.0 + lam(i) / noise_variance;
        c(i) = a * c_n(i) / (a + nu);
      }
    }
    return c;
  };
  auto norm_at = [&](double nu) {
    const Eigen::VectorXd c = coefficients(nu);
    return (lam.array() * c.array().square()).sum();
  };

  double lo = 0.0;
  double hi = 1.0;
  int doublings = 0;
  while (norm_at(hi) > b2) {
    lo = hi;
    hi *= 2.0;
    if (++doublings > 2000 || !std::isfinite(hi)) {
      throw NumericalError("lipschitz_project: could not bracket the multiplier");
    }
  }
  int it = 0;
  for (; it < options.max_iterations && (hi - lo) > options.tolerance * std::max(1.0, hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    (norm_at(mid) > b2 ? lo : hi) = mid;
  }
  sol.iterations = it;
  sol.multiplier = hi;
  sol.alpha = q * coefficients(hi);
  sol.constraint_value = sol.alpha.dot(ks * sol.alpha);
  const double residual = std::abs(sol.constraint_value - b2) / b2;
  if ((hi - lo) > options.tolerance * std::max(1.0, hi) && residual > 1e-6) {
    std::ostringstream msg;
    msg << "lipschitz_project: bisection did not converge after " << it
        << " iterations (relative constraint residual " << residual << ")";
    throw NumericalError(msg.str());
  }
  return sol;
}

QpSolution lipschitz_project(const GPPosterior& posterior, int output, double bound,
                             const QpOptions& options) {
  if (posterior.size() == 0) throw InputError("lipschitz_project: posterior has no training data");
  const Eigen::MatrixXd x = posterior.inputs();
  const Eigen::MatrixXd k = kernel_matrix(posterior.kernel(output), x, x);
  return lipschitz_project(k, posterior.weights(output), posterior.noise_variance(), bound, options);
}

}  // namespace sombrl
