#pragma once

#include "risloc/rng.hpp"
#include "risloc/scenario.hpp"

#include <vector>

namespace risloc {

/// One block-fading draw of every channel in the network. Reflected paths
/// terminate at the first BS; extra BSs carry direct channels only.
struct ChannelRealization {
  std::vector<CVector> h_d_per_bs;  // direct UE->BS channels, length M each
  std::vector<CVector> h_r;         // UE->RIS channels, length N_k
  std::vector<CMatrix> G_r;         // RIS->BS channels, M x N_k
  std::vector<CMatrix> H_c;         // cascades diag(h_r) * G_r^T, N_k x M
};

/// Sensing configuration for one pilot stage: analog beamformer per BS and
/// reflection coefficients per RIS, every entry unit modulus.
struct SensingConfig {
  std::vector<CVector> w_per_bs;  // length M each
  std::vector<CVector> thetas;    // length N_k each

  /// Largest deviation of any entry modulus from 1.
  double max_modulus_error() const;
};

/// One received pilot.
struct Measurement {
  std::complex<double> y{0.0, 0.0};
  double rss = 0.0;  // |y|^2
  int t = 0;         // stage index
};

/// Deterministic LoS components (unit-gain steering factors, before path
/// loss and Rician weighting) for a transmitter at p_ue.
struct LosComponents {
  std::vector<CVector> h_d_per_bs;
  std::vector<CVector> h_r;
  std::vector<CMatrix> G_r;
};

LosComponents los_components(const ScenarioConfig& sc, const Vec3& p_ue);

/// Samples one Rician block-fading realization for a transmitter at p_ue.
/// Each link is gain * (sqrt(eps/(1+eps)) LoS + sqrt(1/(1+eps)) NLoS) with
/// i.i.d. unit-variance circularly-symmetric Gaussian NLoS entries; when
/// direct_los_present is false the direct links are NLoS-only.
ChannelRealization sample_channel(const ScenarioConfig& sc, const Vec3& p_ue,
                                  RandomStream& rng);

/// Received pilots for one stage, one Measurement per BS:
///   y_j = sqrt(P_u) w_j^T (h_d_j + sum_k H_c_k^T theta_k) x + n_j,
/// with the reflected sum present only at the first BS and n_j drawn
/// independently as CN(0, sigma2). The pilot symbol x is fixed to 1.
std::vector<Measurement> received_pilots(const SensingConfig& cfg,
                                         const ChannelRealization& ch,
                                         double p_u_mw, double sigma2_mw,
                                         RandomStream& rng, int stage = 0);

/// Single-BS convenience wrapper.
Measurement received_pilot(const SensingConfig& cfg, const ChannelRealization& ch,
                           double p_u_mw, double sigma2_mw, RandomStream& rng,
                           int stage = 0);

/// Noiseless pilot means (the deterministic part of received_pilots).
std::vector<std::complex<double>> noiseless_pilots(const SensingConfig& cfg,
                                                   const ChannelRealization& ch,
                                                   double p_u_mw);

/// A uniformly random unit-modulus sensing configuration.
SensingConfig random_sensing_config(const ScenarioConfig& sc, RandomStream& rng);

}  // namespace risloc
