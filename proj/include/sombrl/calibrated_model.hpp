#pragma once

#include "sombrl/gp.hpp"

#include <Eigen/Dense>

#include <optional>

namespace sombrl {

/// Confidence width beta_n(delta).
struct BetaSchedule {
  enum class Mode { Fixed, Theory };

  Mode mode = Mode::Fixed;
  double value = 2.0;       // Fixed
  double rkhs_bound = 1.0;  // Theory: B
  double noise_std = 0.1;   // Theory: sigma
  double delta = 0.1;       // Theory: confidence level in (0, 1]

  static BetaSchedule fixed(double value);
  static BetaSchedule theory(double rkhs_bound, double noise_std, double delta);
  void validate() const;
  bool operator==(const BetaSchedule& other) const = default;
};

/// Fixed: the configured value. Theory: B + sigma * sqrt(2 (gamma_n + ln(1/delta))).
double beta_schedule(const BetaSchedule& schedule, int n, double gamma_n);

struct ModelConfig {
  KernelFamily kernel = KernelFamily::RBF;
  /// Initial lengthscales; when unset they are taken from the per-input
  /// standard deviation of the first data seen.
  std::optional<Eigen::VectorXd> lengthscales;
  /// Initial signal variance; ignored in favour of the target variance
  /// when `lengthscales` is unset.
  double signal_variance = 1.0;
  double noise_std = 0.01;

  bool fit_hyperparameters = true;
  int fit_every = 1;        // refit every k-th update
  int fit_max_points = 150;  // evenly spaced subsample used for fitting
  double fit_bound_factor = 100.0;
  int fit_restarts = 5;

  int max_points = 2000;         // most-recent-window cap
  double admit_std_ratio = 0.0;  // 0 admits every transition

  BetaSchedule beta;
  bool lipschitz_projection = false;
  double rkhs_bound = 1.0;

  void validate() const;
  bool operator==(const ModelConfig& other) const;
};

struct Confidence {
  Eigen::VectorXd mean;
  Eigen::VectorXd sigma;
  double beta = 0.0;

  Eigen::VectorXd lower() const { return mean - beta * sigma; }
  Eigen::VectorXd upper() const { return mean + beta * sigma; }
};

/// GP posterior plus confidence width: the statistical model after n updates.
/// Predictions are read-only and safe to share across threads.
class CalibratedModel {
 public:
  CalibratedModel() = default;
  CalibratedModel(int input_dim, int output_dim, ModelConfig config);

  const GPPosterior& posterior() const { return posterior_; }
  const Dataset& data() const { return data_; }
  const ModelConfig& config() const { return config_; }
  int input_dim() const { return posterior_.input_dim(); }
  int output_dim() const { return posterior_.output_dim(); }
  double beta() const { return beta_; }
  int episode() const { return episode_; }
  /// Accumulated 0.5 log det(I + K / noise) over every transition passed to
  /// `update`, summed across outputs; each batch is scored under the model
  /// in force when it arrived.
  double information_gain() const { return information_gain_; }
  double noise_variance() const { return config_.noise_std * config_.noise_std; }

  Confidence predict_confidence(const Eigen::Ref<const Eigen::VectorXd>& z) const;

  /// Incorporates a batch of transitions and increments the episode index.
  void update(const Dataset& transitions);

 private:
  std::vector<KernelSpec> initial_kernels(const Dataset& pool) const;
  void refit(const Dataset& pool);
  void apply_projection();

  ModelConfig config_;
  Dataset data_;
  GPPosterior posterior_;
  std::vector<KernelSpec> reference_;  // centre of the hyperparameter box
  bool kernels_from_data_ = false;
  double beta_ = 0.0;
  int episode_ = 0;
  double information_gain_ = 0.0;
};

Confidence predict_confidence(const CalibratedModel& model, const Eigen::Ref<const Eigen::VectorXd>& z);
CalibratedModel update_model(const CalibratedModel& model, const Dataset& new_transitions);

/// 0.5 * sum_j log det(I + Sigma_j / noise) where Sigma_j is the posterior
/// covariance of output j among the rows of `batch`.
double batch_information_gain(const GPPosterior& posterior, const Eigen::Ref<const Eigen::MatrixXd>& batch);

struct QpOptions {
  int max_iterations = 100;
  double tolerance = 1e-10;
};

struct QpSolution {
  Eigen::VectorXd alpha;
  double multiplier = 0.0;
  int iterations = 0;
  bool active = false;
  double constraint_value = 0.0;  // alpha^T K alpha
};

/// Closest RKHS-norm-bounded function to the posterior mean:
///   min (a - a_n)^T K (I + K / noise) (a - a_n)  s.t.  a^T K a <= B^2.
/// K and K (I + K / noise) share eigenvectors, so the KKT system is diagonal
/// in that basis and the multiplier is found by bisection.
QpSolution lipschitz_project(const Eigen::Ref<const Eigen::MatrixXd>& k,
                             const Eigen::Ref<const Eigen::VectorXd>& alpha_n, double noise_variance,
                             double bound, const QpOptions& options = {});
/// Projection of output j of a fitted posterior.
QpSolution lipschitz_project(const GPPosterior& posterior, int output, double bound,
                             const QpOptions& options = {});

}  // namespace sombrl
