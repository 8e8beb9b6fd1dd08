#pragma once

// Exact Gaussian-process regression with one independent GP per output
// dimension. Inputs are rows of an n x d matrix throughout.

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace sombrl {

enum class KernelFamily { RBF, Linear, Matern52 };

std::string to_string(KernelFamily family);
KernelFamily kernel_family_from_string(std::string_view name);

/// Stationary (RBF, Matern52) or dot-product (Linear) kernel with per-input
/// lengthscales. For the stationary families k(z, z) = signal_variance.
struct KernelSpec {
  KernelFamily family = KernelFamily::RBF;
  Eigen::VectorXd lengthscales = Eigen::VectorXd::Ones(1);
  double signal_variance = 1.0;

  static KernelSpec isotropic(KernelFamily family, int input_dim, double lengthscale = 1.0,
                              double signal_variance = 1.0);

  int input_dim() const { return static_cast<int>(lengthscales.size()); }
  void validate() const;
  bool operator==(const KernelSpec& other) const;
};

double kernel_eval(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& a,
                   const Eigen::Ref<const Eigen::VectorXd>& b);

/// Cross-covariance between the rows of `a` (n x d) and `b` (m x d).
Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& a,
                              const Eigen::Ref<const Eigen::MatrixXd>& b);

/// k(z, z) for every row of `a`.
Eigen::VectorXd kernel_diag(const KernelSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& a);

/// Training set of (input, target) rows with a known homoscedastic noise variance.
class Dataset {
 public:
  Dataset() = default;
  Dataset(int input_dim, int output_dim, double noise_variance);

  void add(const Eigen::Ref<const Eigen::VectorXd>& input,
           const Eigen::Ref<const Eigen::VectorXd>& target);
  void append(const Dataset& other);
  /// Drops the oldest rows until at most `max_size` remain.
  void keep_most_recent(int max_size);

  int size() const { return static_cast<int>(inputs_.size()); }
  bool empty() const { return inputs_.empty(); }
  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }
  double noise_variance() const { return noise_variance_; }

  const Eigen::VectorXd& input(int i) const { return inputs_[static_cast<std::size_t>(i)]; }
  const Eigen::VectorXd& target(int i) const { return targets_[static_cast<std::size_t>(i)]; }
  Eigen::MatrixXd input_matrix() const;
  Eigen::MatrixXd target_matrix() const;

  /// Rows at the given indices, in order.
  Dataset subset(const std::vector<int>& indices) const;

 private:
  int input_dim_ = 0;
  int output_dim_ = 0;
  double noise_variance_ = 1.0;
  std::vector<Eigen::VectorXd> inputs_;
  std::vector<Eigen::VectorXd> targets_;
};

struct Prediction {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;
};

/// Posterior of d_out independent GPs sharing training inputs. Each output
/// keeps the lower Cholesky factor of K_j + (noise + jitter_j) I and the
/// weights (K_j + (noise + jitter_j) I)^-1 y_j.
///
/// Immutable once built except through `try_append`, which extends every
/// factor by one row in O(n^2).
class GPPosterior {
 public:
  GPPosterior() = default;
  /// Prior (no data).
  GPPosterior(int input_dim, double noise_variance, std::vector<KernelSpec> kernels);

  int size() const { return n_; }
  int input_dim() const { return input_dim_; }
  int output_dim() const { return static_cast<int>(outputs_.size()); }
  double noise_variance() const { return noise_variance_; }

  const KernelSpec& kernel(int j) const { return outputs_[static_cast<std::size_t>(j)].kernel; }
  std::vector<KernelSpec> kernels() const;
  double jitter(int j) const { return outputs_[static_cast<std::size_t>(j)].jitter; }
  Eigen::MatrixXd inputs() const { return x_.topRows(n_); }
  Eigen::MatrixXd targets() const { return y_.topRows(n_); }
  /// Lower-triangular factor of K_j + (noise + jitter_j) I.
  Eigen::MatrixXd cholesky(int j) const;
  /// (K_j + (noise + jitter_j) I)^-1 y_j.
  const Eigen::VectorXd& weights(int j) const {
    return outputs_[static_cast<std::size_t>(j)].alpha;
  }
  /// Weights used by the predictive mean; equal to `weights` unless overridden.
  const Eigen::VectorXd& mean_weights(int j) const {
    return outputs_[static_cast<std::size_t>(j)].mean_alpha;
  }
  void set_mean_weights(int j, Eigen::VectorXd w);

  Prediction predict(const Eigen::Ref<const Eigen::VectorXd>& z) const;

  /// Row-wise predictions for `z` (m x d). `stddev` may be null when only
  /// the mean is needed.
  void predict_batch(const Eigen::Ref<const Eigen::MatrixXd>& z, Eigen::MatrixXd& mean,
                     Eigen::MatrixXd* stddev) const;

  /// Per-output posterior variance at z.
  Eigen::VectorXd variance(const Eigen::Ref<const Eigen::VectorXd>& z) const;

  /// Posterior covariance of output j among the rows of z.
  Eigen::MatrixXd covariance(const Eigen::Ref<const Eigen::MatrixXd>& z, int j) const;

  /// Appends (z, y) to every output when some output's posterior standard
  /// deviation at z is at least `min_std_ratio * sqrt(noise)`. Returns
  /// whether the point was admitted. A ratio of 0 admits every point.
  bool try_append(const Eigen::Ref<const Eigen::VectorXd>& z,
                  const Eigen::Ref<const Eigen::VectorXd>& y, double min_std_ratio = 0.0);

  /// log det(K_j + (noise + jitter_j) I).
  double log_det(int j) const;

  friend GPPosterior gp_fit(const Dataset& data, const std::vector<KernelSpec>& kernels);

 private:
  struct Output {
    KernelSpec kernel;
    double jitter = 0.0;
    Eigen::MatrixXd chol;      // capacity x capacity; top-left n x n is valid
    Eigen::MatrixXd chol_inv;  // inverse of chol, same layout; turns variance solves into products
    Eigen::VectorXd alpha;
    Eigen::VectorXd mean_alpha;
    Eigen::MatrixXd scaled_x;  // capacity x d: inputs divided by lengthscales
    Eigen::VectorXd scaled_sq_norms;
  };

  void reserve(int capacity);
  void factorize_all();
  void refresh_weights(Output& out) const;
  Eigen::MatrixXd cross_kernel(const Output& out, const Eigen::Ref<const Eigen::MatrixXd>& z) const;

  int input_dim_ = 0;
  int n_ = 0;
  double noise_variance_ = 1.0;
  Eigen::MatrixXd x_;  // capacity x d
  Eigen::MatrixXd y_;  // capacity x d_out
  std::vector<Output> outputs_;
};

/// Cholesky of `a` with diagonal jitter escalation 1e-10 -> 1e-6 (x10 steps).
/// Returns the factor and writes the jitter used; throws NumericalError with
/// diagnostics when every level fails.
Eigen::MatrixXd robust_cholesky(const Eigen::Ref<const Eigen::MatrixXd>& a, double* jitter_used);

GPPosterior gp_fit(const Dataset& data, const KernelSpec& spec);
GPPosterior gp_fit(const Dataset& data, const std::vector<KernelSpec>& kernels);
Prediction gp_predict(const GPPosterior& posterior, const Eigen::Ref<const Eigen::VectorXd>& z);

/// Sum over output dimensions of log N(y_j | 0, K + noise I).
double log_marginal_likelihood(const Dataset& data, const KernelSpec& spec);
/// Single-output log marginal likelihood.
double log_marginal_likelihood(const Eigen::Ref<const Eigen::MatrixXd>& inputs,
                               const Eigen::Ref<const Eigen::VectorXd>& targets,
                               const KernelSpec& spec, double noise_variance);

/// Box in the natural (not log) scale.
struct HyperparameterBounds {
  Eigen::VectorXd lengthscale_lower;
  Eigen::VectorXd lengthscale_upper;
  double signal_variance_lower = 1e-6;
  double signal_variance_upper = 1e6;

  /// [value / factor, value * factor] around `center`.
  static HyperparameterBounds around(const KernelSpec& center, double factor);
  KernelSpec clamp(const KernelSpec& spec) const;
  bool contains(const KernelSpec& spec) const;
};

struct FitOptions {
  int restarts = 5;
  int max_sweeps = 3;
  int max_line_iterations = 40;
  double line_tolerance = 1e-3;  // in log units
  std::uint64_t seed = 7;
};

struct HyperparameterFit {
  std::vector<KernelSpec> kernels;  // one per output dimension
  std::vector<double> log_likelihood;
  bool warning = false;  // every restart failed; the initial spec was returned
};

/// Multi-start coordinate-wise golden-section search over log lengthscales
/// and log signal variance, independently per output dimension. Noise is
/// held at the dataset's value. With fewer than 5 points `init` is returned
/// unchanged.
HyperparameterFit fit_hyperparameters(const Dataset& data, const KernelSpec& init,
                                      const HyperparameterBounds& bounds,
                                      const FitOptions& options = {});

/// 0.5 * log det(I + K / noise) over the rows of `inputs`.
double information_gain(const KernelSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& inputs,
                        double noise_variance);

}  // namespace sombrl
