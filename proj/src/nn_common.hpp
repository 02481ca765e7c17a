#pragma once

// Internal helpers shared by the policy and baseline trainers: batched
// measurement physics expressed as tape operations, with the channel
// realizations and noise as constants so gradients flow only through the
// sensing vectors.

#include "risloc/autodiff.hpp"
#include "risloc/channel.hpp"
#include "risloc/policy.hpp"
#include "risloc/scenario.hpp"

#include <complex>
#include <vector>

namespace risloc::detail {

using ad::Matrix;
using ad::Tape;
using ad::Tensor;

struct CxTensor {
  Tensor re, im;
};

/// Per-batch constants bound to a tape. For RIS k and antenna m,
/// A[k][m](n, b) = H_c[k](n, m) of episode b.
struct PhysicsBatch {
  int B = 0, M = 1, J = 1, K = 0;
  std::vector<int> N;
  double sqrt_pu = 1.0;
  std::vector<CxTensor> h_d;                  // per BS, M x B
  std::vector<std::vector<CxTensor>> A;       // [k][m], N_k x B
  std::vector<std::vector<CxTensor>> noise;   // [stage][bs], 1 x B
  Tensor p_true;                              // 3 x B
  Tensor ones_row;                            // 1 x B
};

PhysicsBatch build_physics_batch(
    Tape& tp, const ScenarioConfig& sc,
    const std::vector<const ChannelRealization*>& channels,
    const std::vector<Vec3>& positions,
    const std::vector<std::vector<std::vector<std::complex<double>>>>& noise);
// noise[b][t][j]; all episodes must share the same stage count.

/// Unit-modulus sensing vectors recovered from raw head outputs.
/// theta_raw stacks per-RIS blocks [Re_k; Im_k] of height 2 N_k; w_raw
/// stacks per-BS blocks [Re_j; Im_j] of height 2 M.
struct StageSensing {
  std::vector<CxTensor> theta;  // per RIS, N_k x B
  std::vector<CxTensor> w;      // per BS, M x B
};

StageSensing normalize_sensing(Tape& tp, Tensor theta_raw, Tensor w_raw,
                               const std::vector<int>& ris_sizes, int m_antennas,
                               int num_bs);

/// Received pilots of one stage, per BS (reflected paths enter the first BS
/// only), including the stage's noise constants.
std::vector<CxTensor> measure_stage(Tape& tp, const PhysicsBatch& phys,
                                    const StageSensing& sensing, int stage);

/// Stacks per-BS pilot rows into the network input (J rows for RSS mode,
/// 2J rows for pilot mode), scaled by feature_scale.
Tensor stage_features(Tape& tp, const std::vector<CxTensor>& pilots, FeatureMode mode,
                      double feature_scale);

/// Broadcast of an n x 1 parameter across B columns.
Tensor broadcast_col(Tape& tp, Tensor col, Tensor ones_row);

/// relu(W x + b) stack; `linear_last` leaves the final layer linear.
Tensor mlp(Tape& tp, const std::vector<Tensor>& weights, const std::vector<Tensor>& biases,
           Tensor x, bool linear_last);

}  // namespace risloc::detail
