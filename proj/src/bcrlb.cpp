#include "risloc/bcrlb.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace risloc {

double PosteriorGrid::log_total() const {
  const double m = log_weights.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((log_weights.array() - m).exp().sum());
}

void PosteriorGrid::renormalize() {
  log_weights.array() -= log_total();
}

PosteriorGrid uniform_grid(const ServiceArea& area, int nx, int ny) {
  if (nx < 1 || ny < 1) throw std::invalid_argument("uniform_grid: empty resolution");
  PosteriorGrid g;
  g.nx = nx;
  g.ny = ny;
  g.area = area;
  g.log_weights = Eigen::VectorXd::Constant(nx * ny, -std::log(static_cast<double>(nx * ny)));
  return g;
}

namespace {

void require_siso(const ScenarioConfig& sc, const char* who) {
  if (sc.m_antennas != 1 || sc.num_ris() != 1)
    throw std::invalid_argument(std::string(who) + ": single-RIS SISO model only");
}

double los_power_weight(double eps) { return std::isinf(eps) ? 1.0 : eps / (1.0 + eps); }

}  // namespace

CVector cascade_los_mean(const ScenarioConfig& sc, const Vec3& p) {
  require_siso(sc, "cascade_los_mean");
  const double kappa = path_gain(distance(p, sc.ris_positions[0]), sc.pathloss_reflect);
  const double xi =
      path_gain(distance(sc.ris_positions[0], sc.bs_positions[0]), sc.pathloss_reflect);
  const AngleSet a = link_angles(sc, 0, p);
  const CVector in =
      planar_steering(a.phi_ris, a.psi_ris, sc.ris_elements[0], sc.ris_columns[0], sc.lambda_ris);
  const CVector out =
      planar_steering(a.eta_ris, a.theta_ris, sc.ris_elements[0], sc.ris_columns[0], sc.lambda_ris);
  return kappa * xi * los_power_weight(sc.rician_factor) * in.cwiseProduct(out.conjugate());
}

std::complex<double> direct_los_mean(const ScenarioConfig& sc, const Vec3& p) {
  require_siso(sc, "direct_los_mean");
  if (!sc.direct_los_present) return {0.0, 0.0};
  const double rho = path_gain(distance(p, sc.bs_positions[0]), sc.pathloss_direct);
  return rho * std::sqrt(los_power_weight(sc.rician_factor));
}

std::array<CVector, 2> cascade_derivative(const ScenarioConfig& sc, const Vec3& p, double step) {
  std::array<CVector, 2> d;
  for (int i = 0; i < 2; ++i) {
    Vec3 up = p, dn = p;
    up(i) += step;
    dn(i) -= step;
    d[i] = (cascade_los_mean(sc, up) - cascade_los_mean(sc, dn)) / (2.0 * step);
  }
  return d;
}

FisherState fisher_prior_update(const FisherState& state) {
  FisherState next;
  next.j_prior = state.j_prior + state.j_data;
  next.j_data.setZero();
  return next;
}

CascadeTable::CascadeTable(const ScenarioConfig& sc, const PosteriorGrid& grid) {
  require_siso(sc, "CascadeTable");
  const int n = sc.ris_elements[0];
  const int cells = grid.cells();
  h_.resize(n, cells);
  dx_.resize(n, cells);
  dy_.resize(n, cells);
  direct_.resize(cells);
  for (int c = 0; c < cells; ++c) {
    const Vec3 p = grid.cell_center(c);
    h_.col(c) = cascade_los_mean(sc, p);
    const auto d = cascade_derivative(sc, p);
    dx_.col(c) = d[0];
    dy_.col(c) = d[1];
    direct_(c) = direct_los_mean(sc, p);
  }
  sigma2_ = sc.noise_power_mw();
  sqrt_pu_ = std::sqrt(sc.tx_power_mw());
  snr_factor_ = 2.0 * sc.tx_power_mw() / sigma2_;
}

Eigen::Matrix2d CascadeTable::fisher_data(const CVector& theta,
                                          const Eigen::VectorXd& weights) const {
  const Eigen::VectorXcd zx = dx_.transpose() * theta;
  const Eigen::VectorXcd zy = dy_.transpose() * theta;
  Eigen::Matrix2d j;
  j(0, 0) = (weights.array() * zx.array().abs2()).sum();
  j(1, 1) = (weights.array() * zy.array().abs2()).sum();
  j(0, 1) = (weights.array() * (zx.conjugate().array() * zy.array()).real()).sum();
  j(1, 0) = j(0, 1);
  return snr_factor_ * j;
}

double CascadeTable::objective(const CVector& theta, const Eigen::VectorXd& weights,
                               const Eigen::Matrix2d& j_prior, CVector* grad) const {
  const Eigen::VectorXcd z[2] = {dx_.transpose() * theta, dy_.transpose() * theta};
  Eigen::Matrix2d j = j_prior;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      j(a, b) += snr_factor_ *
                 (weights.array() * (z[a].conjugate().array() * z[b].array()).real()).sum();
  const double det = j(0, 0) * j(1, 1) - j(0, 1) * j(1, 0);
  const double objective = (j(0, 0) + j(1, 1)) / det;
  if (grad) {
    Eigen::Matrix2d inv;
    inv << j(1, 1), -j(0, 1), -j(1, 0), j(0, 0);
    inv /= det;
    const Eigen::Matrix2d a2 = inv * inv;
    CVector g = CVector::Zero(theta.size());
    const Eigen::MatrixXcd* d[2] = {&dx_, &dy_};
    for (int a = 0; a < 2; ++a) {
      const Eigen::VectorXcd wz =
          (weights.array() * (a2(a, 0) * z[0].array() + a2(a, 1) * z[1].array())).matrix();
      g.noalias() -= snr_factor_ * (d[a]->conjugate() * wz);
    }
    *grad = 2.0 * g;  // d/dRe + j d/dIm
  }
  return objective;
}

Eigen::Matrix2d fisher_data(const CVector& theta, const PosteriorGrid& grid,
                            const ScenarioConfig& sc) {
  if (std::abs(grid.log_total()) > 1e-6)
    throw std::invalid_argument("fisher_data: grid is not normalized");
  const CascadeTable table(sc, grid);
  return table.fisher_data(theta, grid.log_weights.array().exp());
}

namespace {

CVector project_unit(const CVector& v) {
  CVector out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double r = std::abs(v(i));
    out(i) = r > 0.0 ? v(i) / r : std::complex<double>(1.0, 0.0);
  }
  return out;
}

struct PgdRun {
  CVector theta;
  double objective = std::numeric_limits<double>::infinity();
};

PgdRun pgd_from(const CascadeTable& table, const Eigen::VectorXd& weights,
                const Eigen::Matrix2d& j_prior, CVector theta, const PgdOptions& opts) {
  PgdRun run;
  theta = project_unit(theta);
  CVector grad(theta.size());
  double f = table.objective(theta, weights, j_prior, &grad);
  if (!std::isfinite(f)) return run;
  double step = opts.step;
  for (int it = 0; it < opts.iterations; ++it) {
    if (grad.norm() < 1e-14) break;
    bool accepted = false;
    for (int bt = 0; bt < 40; ++bt) {
      const CVector cand = project_unit(theta - step * grad);
      CVector cand_grad(theta.size());
      const double cand_f = table.objective(cand, weights, j_prior, &cand_grad);
      if (std::isfinite(cand_f) && cand_f < f) {
        theta = cand;
        f = cand_f;
        grad = cand_grad;
        step = std::min(step * 1.3, opts.step * 100.0);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  run.theta = theta;
  run.objective = f;
  return run;
}

}  // namespace

CVector optimize_theta_with_table(const CascadeTable& table, const FisherState& state,
                                  const Eigen::VectorXd& weights, const CVector& theta_init,
                                  const PgdOptions& opts) {
  const Eigen::Matrix2d j_prior = state.j_prior + 1e-9 * Eigen::Matrix2d::Identity();
  PgdRun best = pgd_from(table, weights, j_prior, theta_init, opts);
  RandomStream restart_rng = derive_stream(0x9d5bcf17a3e2c401ULL, "pgd-restart");
  for (int r = 1; r < opts.restarts; ++r) {
    CVector start(theta_init.size());
    for (Eigen::Index i = 0; i < start.size(); ++i) start(i) = restart_rng.unit_phase();
    const PgdRun run = pgd_from(table, weights, j_prior, start, opts);
    if (run.objective < best.objective) best = run;
  }
  if (!std::isfinite(best.objective)) {
    std::cerr << "optimize_theta: information matrix is singular, "
                 "falling back to a random unit-modulus configuration\n";
    CVector fallback(theta_init.size());
    for (Eigen::Index i = 0; i < fallback.size(); ++i) fallback(i) = restart_rng.unit_phase();
    return fallback;
  }
  return best.theta;
}

CVector optimize_theta(const FisherState& state, const PosteriorGrid& grid,
                       const ScenarioConfig& sc, const CVector& theta_init,
                       const PgdOptions& opts) {
  if (std::abs(grid.log_total()) > 1e-6)
    throw std::invalid_argument("optimize_theta: grid is not normalized");
  const CascadeTable table(sc, grid);
  return optimize_theta_with_table(table, state, grid.log_weights.array().exp(), theta_init,
                                   opts);
}

namespace {

PosteriorGrid posterior_update_with_table(const PosteriorGrid& grid, const CascadeTable& table,
                                          const Measurement& meas, const CVector& theta) {
  PosteriorGrid next = grid;
  const Eigen::VectorXcd mean =
      table.sqrt_pu() * (table.direct() + table.cascade().transpose() * theta);
  next.log_weights.array() -= (mean.array() - meas.y).abs2() / table.sigma2();
  next.renormalize();
  return next;
}

}  // namespace

PosteriorGrid posterior_update(const PosteriorGrid& grid, const Measurement& meas,
                               const CVector& theta, const ScenarioConfig& sc) {
  const CascadeTable table(sc, grid);
  return posterior_update_with_table(grid, table, meas, theta);
}

Vec3 map_estimate(const PosteriorGrid& grid) {
  int best = 0;
  for (int c = 1; c < grid.cells(); ++c)
    if (grid.log_weights(c) > grid.log_weights(best)) best = c;
  return grid.cell_center(best);
}

Trajectory run_bcrlb_localization(const ScenarioConfig& sc, const ChannelRealization& ch,
                                  int stages, RandomStream& rng, const BcrlbOptions& opts) {
  require_siso(sc, "run_bcrlb_localization");
  PosteriorGrid grid = uniform_grid(sc.ue_area, opts.grid_nx, opts.grid_ny);
  const CascadeTable table(sc, grid);

  SensingConfig cfg;
  cfg.w_per_bs.push_back(CVector::Ones(1));
  CVector theta(sc.ris_elements[0]);
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = rng.unit_phase();
  cfg.thetas.push_back(theta);

  FisherState fisher;
  const double pu = sc.tx_power_mw();
  const double sigma2 = sc.noise_power_mw();

  Trajectory traj;
  for (int t = 0; t < stages; ++t) {
    cfg.thetas[0] = theta;
    const Measurement meas = received_pilot(cfg, ch, pu, sigma2, rng, t);
    grid = posterior_update_with_table(grid, table, meas, theta);
    const Eigen::VectorXd weights = grid.log_weights.array().exp();
    fisher.j_data = table.fisher_data(theta, weights);
    fisher = fisher_prior_update(fisher);

    StageRecord rec;
    rec.config = cfg;
    rec.meas = {meas};
    rec.estimate = map_estimate(grid);
    traj.stages.push_back(std::move(rec));
    if (opts.on_stage) opts.on_stage(t, grid, fisher);

    if (t + 1 < stages)
      theta = optimize_theta_with_table(table, fisher, weights, theta, opts.pgd);
  }
  traj.final_estimate = map_estimate(grid);
  return traj;
}

}  // namespace risloc
