#pragma once

#include "risloc/autodiff.hpp"
#include "risloc/channel.hpp"
#include "risloc/rng.hpp"
#include "risloc/scenario.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace risloc {

using ad::Matrix;

/// What the recurrent cell sees each stage: received signal strength, or the
/// real/imaginary pilot components.
enum class FeatureMode { rss, pilot };

enum class LossMode { final_stage, weighted };

/// Reference layer widths (hidden 512, head 1024, position head 200) are
/// scaled by width_multiplier; 1/8 is the desk-scale default.
struct PolicyConfig {
  double width_multiplier = 0.125;
  FeatureMode feature_mode = FeatureMode::rss;
  int head_layers = 4;  // L
};

/// Every trainable tensor of the sensing policy. Biases are stored as n x 1
/// matrices. parameter_list() fixes the canonical ordering used by the
/// optimizer, the gradient checks and the checkpoint format:
///   u_c u_f u_i u_o r_c r_f r_i r_o b_c b_f b_i b_o,
///   head_w[0..L), head_b[0..L), theta_w theta_b beam_w beam_b,
///   pos_w[0..len), pos_b[0..len), init_theta init_w.
struct PolicyParams {
  // architecture
  int feature_dim = 1;
  int hidden = 64;
  int head_width = 128;
  int head_layers = 4;
  std::vector<int> pos_widths{25, 25};
  // scenario shape
  int m_antennas = 1;
  int num_bs = 1;
  std::vector<int> ris_sizes;  // N_k
  FeatureMode feature_mode = FeatureMode::rss;
  LossMode trained_loss_mode = LossMode::final_stage;  // metadata, set by train
  double feature_scale = 1.0;

  // recurrent cell
  Matrix u_c, u_f, u_i, u_o;  // hidden x feature
  Matrix r_c, r_f, r_i, r_o;  // hidden x hidden
  Matrix b_c, b_f, b_i, b_o;  // hidden x 1
  // sensing head (relu stack + linear outputs)
  std::vector<Matrix> head_w, head_b;
  Matrix theta_w, theta_b;  // 2*Delta x head_width, 2*Delta x 1
  Matrix beam_w, beam_b;    // 2*M*J x head_width, 2*M*J x 1
  // position head (relu stack + linear output to 3)
  std::vector<Matrix> pos_w, pos_b;
  // stage-0 sensing configuration, stored raw (normalized on use)
  Matrix init_theta;  // 2*Delta x 1
  Matrix init_w;      // 2*M*J x 1

  int delta() const {
    int d = 0;
    for (const int n : ris_sizes) d += n;
    return d;
  }

  std::vector<Matrix*> parameter_list();
  std::vector<const Matrix*> parameter_list() const;
  long parameter_count() const;

  /// Checks dimension consistency against a scenario.
  void validate(const ScenarioConfig& sc) const;
};

/// Recurrent state (hidden vector s, cell vector c).
struct HiddenState {
  Eigen::VectorXd s, c;
};

/// Record of one executed sensing stage.
struct StageRecord {
  Eigen::VectorXd feature;             // network input for this stage
  SensingConfig config;                // sensing vectors used
  std::vector<Measurement> meas;       // one per BS
  Vec3 estimate = Vec3::Zero();        // position estimate from this stage's cell state
};

struct Trajectory {
  std::vector<StageRecord> stages;
  Vec3 final_estimate = Vec3::Zero();
};

/// RMS normalization constant applied to raw pilot features so the network
/// sees O(1) inputs; deterministic Monte-Carlo probe of the scenario.
double estimate_feature_scale(const ScenarioConfig& sc, FeatureMode mode, int probes = 256);

/// Fresh policy with uniform Glorot weights (forget-gate bias +1, position
/// output bias at the service-area center).
PolicyParams init_policy(const ScenarioConfig& sc, const PolicyConfig& cfg,
                         std::uint64_t seed);

// ---- plain (tape-free) forward path ---------------------------------------

Eigen::VectorXd featurize(const std::vector<Measurement>& meas, const PolicyParams& p);

HiddenState lstm_step(const Eigen::VectorXd& pi, const HiddenState& prev,
                      const PolicyParams& p);

/// Sensing configuration for the next stage from the hidden state.
SensingConfig sensing_head(const Eigen::VectorXd& s, const PolicyParams& p);

/// Position estimate from a cell state.
Vec3 position_head(const Eigen::VectorXd& c, const PolicyParams& p);

/// Stage-0 configuration (the trained constant produced with no pilots yet).
SensingConfig initial_config(const PolicyParams& p);

/// Runs the closed sensing loop for `stages` pilot stages with explicit
/// per-stage noise (noise[t][j] for BS j). The loop measures, updates the
/// recurrent state, estimates, and derives the next configuration.
Trajectory rollout(const PolicyParams& p, const ScenarioConfig& sc,
                   const ChannelRealization& ch, int stages,
                   const std::vector<std::vector<std::complex<double>>>& noise);

/// Same but drawing noise from a stream.
Trajectory rollout(const PolicyParams& p, const ScenarioConfig& sc,
                   const ChannelRealization& ch, int stages, RandomStream& noise_rng);

// ---- losses ----------------------------------------------------------------

/// Mean over the batch of the squared distance between the final estimate
/// and the true position (m^2).
double loss_final(const std::vector<Trajectory>& trajs, const std::vector<Vec3>& p_true);

/// Batch mean of sum_t alpha_t ||p_hat_t - p||^2. Weights must be
/// nonnegative and sum to 1.
double loss_weighted(const std::vector<Trajectory>& trajs, const std::vector<Vec3>& p_true,
                     const std::vector<double>& alpha);

// ---- training ----------------------------------------------------------------

/// Loss of one batched rollout through the measurement physics, with the
/// channel realizations and per-stage noise held fixed, and optionally the
/// gradients for every parameter in parameter_list() order. noise[b][t][j]
/// is the additive noise of episode b, stage t, BS j.
double rollout_batch_loss(
    const PolicyParams& p, const ScenarioConfig& sc,
    const std::vector<const ChannelRealization*>& channels,
    const std::vector<Vec3>& positions,
    const std::vector<std::vector<std::vector<std::complex<double>>>>& noise, int stages,
    LossMode mode, const std::vector<double>& alpha, std::vector<Matrix>* grads_out);

struct TrainHyper {
  int episodes = 10000;    // training episode pool
  int batch = 256;
  int epochs = 40;
  int stages = 6;          // T
  double lr = 1e-3;
  double lr_decay = 0.1;   // final lr fraction (exponential schedule)
  double grad_clip = 10.0; // global-norm clip, <= 0 disables
  LossMode loss_mode = LossMode::final_stage;
  std::vector<double> alpha;  // weighted loss weights; empty = uniform
  int val_episodes = 500;
};

struct TrainEpochRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_mse_m2 = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  std::vector<TrainEpochRow> log;
  double initial_val_mse = 0.0;
  double final_val_mse = 0.0;
};

/// Adam training of the policy through the full measurement physics.
/// Deterministic given (params at entry, scenario, hyper, master_seed).
/// Throws std::runtime_error when the loss diverges to NaN.
TrainResult train_policy(PolicyParams& params, const ScenarioConfig& sc,
                         const TrainHyper& hyper, std::uint64_t master_seed,
                         std::ostream* progress = nullptr);

void write_training_log_csv(const std::string& path, const TrainResult& result);

// ---- evaluation ----------------------------------------------------------------

struct EvalResult {
  std::vector<double> sq_err;  // per-episode squared error, m^2
  double mse_m2 = 0.0;
  double stderr_m2 = 0.0;
  double rmse_m = 0.0;
};

/// Held-out evaluation over `episodes` fresh channel/noise draws.
EvalResult evaluate_policy(const PolicyParams& p, const ScenarioConfig& sc, int stages,
                           int episodes, std::uint64_t master_seed);

// ---- checkpoints ----------------------------------------------------------------

void save_policy(const std::string& path, const PolicyParams& p,
                 std::uint64_t scenario_hash);
PolicyParams load_policy(const std::string& path, std::uint64_t* scenario_hash_out = nullptr);

}  // namespace risloc
