#pragma once

#include "risloc/channel.hpp"
#include "risloc/policy.hpp"
#include "risloc/scenario.hpp"

#include <Eigen/Dense>

#include <array>
#include <functional>

namespace risloc {

/// Discretized Bayesian posterior over candidate transmitter positions on
/// the known z-plane. Cell (ix, iy) center is
///   (x_min + (ix+0.5) dx, y_min + (iy+0.5) dy, z),
/// flattened as index iy * nx + ix. exp(log_weights) sums to one.
struct PosteriorGrid {
  int nx = 0, ny = 0;
  ServiceArea area;
  Eigen::VectorXd log_weights;

  int cells() const { return nx * ny; }
  Vec3 cell_center(int idx) const {
    const int ix = idx % nx;
    const int iy = idx / nx;
    const double dx = area.width_x() / nx;
    const double dy = area.width_y() / ny;
    return {area.x_min + (ix + 0.5) * dx, area.y_min + (iy + 0.5) * dy, area.z};
  }
  /// log sum exp of the weights; 0 for a normalized grid.
  double log_total() const;
  void renormalize();
};

PosteriorGrid uniform_grid(const ServiceArea& area, int nx, int ny);

/// Deterministic (LoS-mean) cascade channel of the single-RIS SISO model:
/// entries kappa(p) * xi * eps/(1+eps) * a_in(p)_n * conj(a_out)_n.
CVector cascade_los_mean(const ScenarioConfig& sc, const Vec3& p);

/// Deterministic direct-channel mean (zero when the scenario is flagged
/// NLoS-direct).
std::complex<double> direct_los_mean(const ScenarioConfig& sc, const Vec3& p);

/// Central finite-difference derivatives of cascade_los_mean w.r.t. the
/// estimated coordinates (x, y), step in meters.
std::array<CVector, 2> cascade_derivative(const ScenarioConfig& sc, const Vec3& p,
                                          double step = 1e-3);

/// Accumulated (prior) and incremental (data) Fisher information over the
/// estimated coordinates (x, y).
struct FisherState {
  Eigen::Matrix2d j_prior = Eigen::Matrix2d::Zero();
  Eigen::Matrix2d j_data = Eigen::Matrix2d::Zero();
  Eigen::Matrix2d total() const { return j_prior + j_data; }
};

/// Folds the current data term into the prior term (the recursion
/// J_P <- J_P + J_D with the uniform-area prior contributing zero).
FisherState fisher_prior_update(const FisherState& state);

/// Posterior-weighted Bayesian Fisher information of one measurement made
/// through reflection coefficients theta:
///   [J_D]_ij = sum_c w_c (2 P_u / sigma^2) Re( (d_i(c)^T theta)^* (d_j(c)^T theta) ).
/// Throws when the grid is not normalized.
Eigen::Matrix2d fisher_data(const CVector& theta, const PosteriorGrid& grid,
                            const ScenarioConfig& sc);

/// Per-cell tables reused across stages: cascade means, direct means and
/// coordinate derivatives evaluated at every cell center.
class CascadeTable {
 public:
  CascadeTable(const ScenarioConfig& sc, const PosteriorGrid& grid);

  const Eigen::MatrixXcd& cascade() const { return h_; }     // N x cells
  const Eigen::MatrixXcd& dx() const { return dx_; }         // N x cells
  const Eigen::MatrixXcd& dy() const { return dy_; }         // N x cells
  const Eigen::VectorXcd& direct() const { return direct_; } // cells
  double snr_factor() const { return snr_factor_; }          // 2 Pu / sigma^2
  double sqrt_pu() const { return sqrt_pu_; }
  double sigma2() const { return sigma2_; }

  Eigen::Matrix2d fisher_data(const CVector& theta, const Eigen::VectorXd& weights) const;

  /// Objective tr((J_D(theta) + j_prior + reg I)^-1) and its gradient with
  /// respect to (Re theta, Im theta), packed as a complex vector
  /// grad_re + j grad_im.
  double objective(const CVector& theta, const Eigen::VectorXd& weights,
                   const Eigen::Matrix2d& j_prior, CVector* grad = nullptr) const;

 private:
  Eigen::MatrixXcd h_, dx_, dy_;
  Eigen::VectorXcd direct_;
  double snr_factor_ = 0.0, sqrt_pu_ = 0.0, sigma2_ = 0.0;
};

struct PgdOptions {
  int iterations = 60;
  double step = 1.0;
  int restarts = 3;  // theta_init plus restarts-1 seeded random starts
};

/// Projected gradient descent for the next reflection vector, minimizing
/// tr((J_D(theta) + J_P)^-1) over unit-modulus theta. Falls back to a random
/// unit-modulus vector (with a warning on stderr) if the information matrix
/// stays singular.
CVector optimize_theta(const FisherState& state, const PosteriorGrid& grid,
                       const ScenarioConfig& sc, const CVector& theta_init,
                       const PgdOptions& opts = {});

CVector optimize_theta_with_table(const CascadeTable& table, const FisherState& state,
                                  const Eigen::VectorXd& weights, const CVector& theta_init,
                                  const PgdOptions& opts);

/// Bayes update of the grid with one received pilot (Gaussian likelihood at
/// the LoS-model mean), followed by renormalization.
PosteriorGrid posterior_update(const PosteriorGrid& grid, const Measurement& meas,
                               const CVector& theta, const ScenarioConfig& sc);

/// Center of the maximum-weight cell; ties break to the lowest cell index.
Vec3 map_estimate(const PosteriorGrid& grid);

struct BcrlbOptions {
  int grid_nx = 60;
  int grid_ny = 140;
  PgdOptions pgd;
  double regularization = 1e-9;
  /// Optional per-stage observer (posterior dumps, information tracking).
  std::function<void(int stage, const PosteriorGrid&, const FisherState&)> on_stage;
};

/// Greedy information-maximizing localization loop: measure, update the
/// posterior, accumulate Fisher information, optimize the next reflection
/// vector; position estimate by posterior maximum. Single-RIS SISO only.
Trajectory run_bcrlb_localization(const ScenarioConfig& sc, const ChannelRealization& ch,
                                  int stages, RandomStream& rng,
                                  const BcrlbOptions& opts = {});

}  // namespace risloc
