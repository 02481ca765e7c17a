#include "risloc/channel.hpp"

#include <stdexcept>

namespace risloc {

double SensingConfig::max_modulus_error() const {
  double e = 0.0;
  for (const auto& w : w_per_bs)
    for (Eigen::Index i = 0; i < w.size(); ++i) e = std::max(e, std::abs(std::abs(w(i)) - 1.0));
  for (const auto& th : thetas)
    for (Eigen::Index i = 0; i < th.size(); ++i) e = std::max(e, std::abs(std::abs(th(i)) - 1.0));
  return e;
}

LosComponents los_components(const ScenarioConfig& sc, const Vec3& p_ue) {
  LosComponents los;
  los.h_d_per_bs.reserve(sc.bs_positions.size());
  for (const Vec3& p_bs : sc.bs_positions) {
    const double psi_ue = elevation_to_array(p_ue, p_bs);
    los.h_d_per_bs.push_back(linear_steering(psi_ue, sc.m_antennas, sc.lambda_bs));
  }
  const int K = sc.num_ris();
  los.h_r.reserve(K);
  los.G_r.reserve(K);
  for (int k = 0; k < K; ++k) {
    const AngleSet a = link_angles(sc, k, p_ue);
    los.h_r.push_back(
        planar_steering(a.phi_ris, a.psi_ris, sc.ris_elements[k], sc.ris_columns[k], sc.lambda_ris));
    const CVector a_bs = linear_steering(a.psi_bs, sc.m_antennas, sc.lambda_bs);
    const CVector a_dep =
        planar_steering(a.eta_ris, a.theta_ris, sc.ris_elements[k], sc.ris_columns[k], sc.lambda_ris);
    los.G_r.push_back(a_bs * a_dep.adjoint());  // M x N_k
  }
  return los;
}

namespace {

CVector complex_gaussian_vector(Eigen::Index n, RandomStream& rng) {
  CVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.complex_normal();
  return v;
}

CMatrix complex_gaussian_matrix(Eigen::Index rows, Eigen::Index cols, RandomStream& rng) {
  CMatrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.complex_normal();
  return m;
}

}  // namespace

ChannelRealization sample_channel(const ScenarioConfig& sc, const Vec3& p_ue,
                                  RandomStream& rng) {
  const LosComponents los = los_components(sc, p_ue);
  const double eps = sc.rician_factor;
  // infinite Rician factor is the deterministic LoS-only limit
  const double w_los = std::isinf(eps) ? 1.0 : std::sqrt(eps / (1.0 + eps));
  const double w_nlos = std::isinf(eps) ? 0.0 : std::sqrt(1.0 / (1.0 + eps));

  ChannelRealization ch;
  for (int j = 0; j < sc.num_bs(); ++j) {
    const double rho = path_gain(distance(p_ue, sc.bs_positions[j]), sc.pathloss_direct);
    const CVector nlos = complex_gaussian_vector(sc.m_antennas, rng);
    if (sc.direct_los_present) {
      ch.h_d_per_bs.push_back(rho * (w_los * los.h_d_per_bs[j] + w_nlos * nlos));
    } else {
      ch.h_d_per_bs.push_back(rho * nlos);
    }
  }
  for (int k = 0; k < sc.num_ris(); ++k) {
    const double d_ru = distance(p_ue, sc.ris_positions[k]);
    const double d_br = distance(sc.ris_positions[k], sc.bs_positions.front());
    const double kappa = path_gain(d_ru, sc.pathloss_reflect);
    const double xi = path_gain(d_br, sc.pathloss_reflect);
    const CVector h_r =
        kappa * (w_los * los.h_r[k] + w_nlos * complex_gaussian_vector(sc.ris_elements[k], rng));
    const CMatrix G_r =
        xi * (w_los * los.G_r[k] +
              w_nlos * complex_gaussian_matrix(sc.m_antennas, sc.ris_elements[k], rng));
    ch.h_r.push_back(h_r);
    ch.G_r.push_back(G_r);
    ch.H_c.push_back(h_r.asDiagonal() * G_r.transpose());  // N_k x M
  }
  return ch;
}

std::vector<std::complex<double>> noiseless_pilots(const SensingConfig& cfg,
                                                   const ChannelRealization& ch,
                                                   double p_u_mw) {
  const std::size_t J = ch.h_d_per_bs.size();
  if (cfg.w_per_bs.size() != J)
    throw std::invalid_argument("received_pilots: beamformer count does not match BS count");
  if (cfg.thetas.size() != ch.H_c.size())
    throw std::invalid_argument("received_pilots: theta count does not match RIS count");

  const double amp = std::sqrt(p_u_mw);
  std::vector<std::complex<double>> out(J);
  for (std::size_t j = 0; j < J; ++j) {
    CVector effective = ch.h_d_per_bs[j];
    if (j == 0) {
      for (std::size_t k = 0; k < ch.H_c.size(); ++k) {
        if (cfg.thetas[k].size() != ch.H_c[k].rows())
          throw std::invalid_argument("received_pilots: theta length mismatch");
        effective += ch.H_c[k].transpose() * cfg.thetas[k];
      }
    }
    if (cfg.w_per_bs[j].size() != effective.size())
      throw std::invalid_argument("received_pilots: beamformer length mismatch");
    out[j] = amp * (cfg.w_per_bs[j].transpose() * effective).value();
  }
  return out;
}

std::vector<Measurement> received_pilots(const SensingConfig& cfg,
                                         const ChannelRealization& ch,
                                         double p_u_mw, double sigma2_mw,
                                         RandomStream& rng, int stage) {
  const auto means = noiseless_pilots(cfg, ch, p_u_mw);
  const double ns = std::sqrt(sigma2_mw);
  std::vector<Measurement> out(means.size());
  for (std::size_t j = 0; j < means.size(); ++j) {
    const std::complex<double> y = means[j] + ns * rng.complex_normal();
    out[j] = Measurement{y, std::norm(y), stage};
  }
  return out;
}

Measurement received_pilot(const SensingConfig& cfg, const ChannelRealization& ch,
                           double p_u_mw, double sigma2_mw, RandomStream& rng, int stage) {
  return received_pilots(cfg, ch, p_u_mw, sigma2_mw, rng, stage).front();
}

SensingConfig random_sensing_config(const ScenarioConfig& sc, RandomStream& rng) {
  SensingConfig cfg;
  for (int j = 0; j < sc.num_bs(); ++j) {
    CVector w(sc.m_antennas);
    for (int m = 0; m < sc.m_antennas; ++m) w(m) = rng.unit_phase();
    cfg.w_per_bs.push_back(w);
  }
  for (int k = 0; k < sc.num_ris(); ++k) {
    CVector th(sc.ris_elements[k]);
    for (int n = 0; n < sc.ris_elements[k]; ++n) th(n) = rng.unit_phase();
    cfg.thetas.push_back(th);
  }
  return cfg;
}

}  // namespace risloc
