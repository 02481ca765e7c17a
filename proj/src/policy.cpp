#include "risloc/policy.hpp"

#include "nn_common.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace risloc {

using ad::Tape;
using ad::Tensor;
using detail::CxTensor;

namespace {

constexpr double kNormEps = ad::kUnitModulusEps;

Matrix glorot(Eigen::Index out, Eigen::Index in, RandomStream& rng) {
  const double lim = std::sqrt(6.0 / static_cast<double>(in + out));
  Matrix w(out, in);
  for (Eigen::Index j = 0; j < in; ++j)
    for (Eigen::Index i = 0; i < out; ++i) w(i, j) = rng.uniform(-lim, lim);
  return w;
}

Matrix uniform_pm1(Eigen::Index n, RandomStream& rng) {
  Matrix v(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) v(i, 0) = rng.uniform(-1.0, 1.0);
  return v;
}

template <class P, class M>
std::vector<M*> list_params(P& p) {
  std::vector<M*> v{&p.u_c, &p.u_f, &p.u_i, &p.u_o, &p.r_c, &p.r_f, &p.r_i, &p.r_o,
                    &p.b_c, &p.b_f, &p.b_i, &p.b_o};
  for (auto& m : p.head_w) v.push_back(&m);
  for (auto& m : p.head_b) v.push_back(&m);
  v.push_back(&p.theta_w);
  v.push_back(&p.theta_b);
  v.push_back(&p.beam_w);
  v.push_back(&p.beam_b);
  for (auto& m : p.pos_w) v.push_back(&m);
  for (auto& m : p.pos_b) v.push_back(&m);
  v.push_back(&p.init_theta);
  v.push_back(&p.init_w);
  return v;
}

Eigen::ArrayXd logistic(const Eigen::VectorXd& x) {
  return 1.0 / (1.0 + (-x.array()).exp());
}

/// Unit-modulus complex vector from stacked raw (Re, Im) halves.
CVector normalize_block(const Eigen::VectorXd& raw) {
  const Eigen::Index n = raw.size() / 2;
  CVector out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double re = raw(i);
    const double im = raw(n + i);
    const double r = std::sqrt(re * re + im * im + kNormEps);
    out(i) = std::complex<double>(re / r, im / r);
  }
  return out;
}

SensingConfig config_from_raw(const Eigen::VectorXd& theta_raw,
                              const Eigen::VectorXd& w_raw, const PolicyParams& p) {
  SensingConfig cfg;
  Eigen::Index off = 0;
  for (const int n : p.ris_sizes) {
    cfg.thetas.push_back(normalize_block(theta_raw.segment(off, 2 * n)));
    off += 2 * n;
  }
  for (int j = 0; j < p.num_bs; ++j)
    cfg.w_per_bs.push_back(normalize_block(w_raw.segment(2 * p.m_antennas * j, 2 * p.m_antennas)));
  return cfg;
}

}  // namespace

std::vector<Matrix*> PolicyParams::parameter_list() { return list_params<PolicyParams, Matrix>(*this); }

std::vector<const Matrix*> PolicyParams::parameter_list() const {
  return list_params<const PolicyParams, const Matrix>(*this);
}

long PolicyParams::parameter_count() const {
  long n = 0;
  for (const Matrix* m : parameter_list()) n += static_cast<long>(m->size());
  return n;
}

void PolicyParams::validate(const ScenarioConfig& sc) const {
  if (m_antennas != sc.m_antennas || num_bs != sc.num_bs() || ris_sizes != sc.ris_elements)
    throw std::invalid_argument("policy: shape does not match scenario");
  const int expected_feature = num_bs * (feature_mode == FeatureMode::rss ? 1 : 2);
  if (feature_dim != expected_feature)
    throw std::invalid_argument("policy: feature width does not match mode");
  if (u_c.rows() != hidden || u_c.cols() != feature_dim || r_c.rows() != hidden ||
      r_c.cols() != hidden)
    throw std::invalid_argument("policy: recurrent dimensions inconsistent");
  if (theta_w.rows() != 2 * delta() || beam_w.rows() != 2 * m_antennas * num_bs)
    throw std::invalid_argument("policy: head output dimensions inconsistent");
}

double estimate_feature_scale(const ScenarioConfig& sc, FeatureMode mode, int probes) {
  RandomStream rng = derive_stream(scenario_hash(sc), "feature-scale-probe");
  const double pu = sc.tx_power_mw();
  const double sigma2 = sc.noise_power_mw();
  double acc = 0.0;
  long count = 0;
  for (int i = 0; i < probes; ++i) {
    const Vec3 p{rng.uniform(sc.ue_area.x_min, sc.ue_area.x_max),
                 rng.uniform(sc.ue_area.y_min, sc.ue_area.y_max), sc.ue_area.z};
    const ChannelRealization ch = sample_channel(sc, p, rng);
    const SensingConfig cfg = random_sensing_config(sc, rng);
    for (const Measurement& m : received_pilots(cfg, ch, pu, sigma2, rng)) {
      acc += m.rss;
      ++count;
    }
  }
  const double mean_rss = acc / static_cast<double>(count);
  if (!(mean_rss > 0.0)) return 1.0;
  return mode == FeatureMode::rss ? 1.0 / mean_rss : 1.0 / std::sqrt(0.5 * mean_rss);
}

PolicyParams init_policy(const ScenarioConfig& sc, const PolicyConfig& cfg, std::uint64_t seed) {
  sc.validate();
  PolicyParams p;
  p.feature_mode = cfg.feature_mode;
  p.m_antennas = sc.m_antennas;
  p.num_bs = sc.num_bs();
  p.ris_sizes = sc.ris_elements;
  p.feature_dim = p.num_bs * (cfg.feature_mode == FeatureMode::rss ? 1 : 2);
  const auto scaled = [&](int full) { return std::max(1, static_cast<int>(std::lround(full * cfg.width_multiplier))); };
  p.hidden = scaled(512);
  p.head_width = scaled(1024);
  p.head_layers = cfg.head_layers;
  p.pos_widths = {scaled(200), scaled(200)};
  p.feature_scale = estimate_feature_scale(sc, cfg.feature_mode);

  RandomStream rng = derive_stream(seed, "policy-init");
  const int H = p.hidden, F = p.feature_dim, W = p.head_width;
  p.u_c = glorot(H, F, rng);
  p.u_f = glorot(H, F, rng);
  p.u_i = glorot(H, F, rng);
  p.u_o = glorot(H, F, rng);
  p.r_c = glorot(H, H, rng);
  p.r_f = glorot(H, H, rng);
  p.r_i = glorot(H, H, rng);
  p.r_o = glorot(H, H, rng);
  p.b_c = Matrix::Zero(H, 1);
  p.b_f = Matrix::Constant(H, 1, 1.0);  // open forget gate at start
  p.b_i = Matrix::Zero(H, 1);
  p.b_o = Matrix::Zero(H, 1);

  p.head_w.push_back(glorot(W, H, rng));
  p.head_b.push_back(Matrix::Zero(W, 1));
  for (int l = 1; l < p.head_layers; ++l) {
    p.head_w.push_back(glorot(W, W, rng));
    p.head_b.push_back(Matrix::Zero(W, 1));
  }
  const int delta2 = 2 * p.delta();
  const int beam2 = 2 * p.m_antennas * p.num_bs;
  p.theta_w = glorot(delta2, W, rng);
  p.theta_b = Matrix::Zero(delta2, 1);
  p.beam_w = glorot(beam2, W, rng);
  p.beam_b = Matrix::Zero(beam2, 1);

  int prev = H;
  for (const int width : p.pos_widths) {
    p.pos_w.push_back(glorot(width, prev, rng));
    p.pos_b.push_back(Matrix::Zero(width, 1));
    prev = width;
  }
  p.pos_w.push_back(glorot(3, prev, rng));
  p.pos_b.push_back(Matrix(sc.ue_area.center()));  // start estimates at the area center

  p.init_theta = uniform_pm1(delta2, rng);
  p.init_w = uniform_pm1(beam2, rng);
  p.validate(sc);
  return p;
}

Eigen::VectorXd featurize(const std::vector<Measurement>& meas, const PolicyParams& p) {
  if (static_cast<int>(meas.size()) != p.num_bs)
    throw std::invalid_argument("featurize: measurement count does not match BS count");
  Eigen::VectorXd f(p.feature_dim);
  for (int j = 0; j < p.num_bs; ++j) {
    if (p.feature_mode == FeatureMode::rss) {
      f(j) = meas[j].rss * p.feature_scale;
    } else {
      f(2 * j) = meas[j].y.real() * p.feature_scale;
      f(2 * j + 1) = meas[j].y.imag() * p.feature_scale;
    }
  }
  return f;
}

HiddenState lstm_step(const Eigen::VectorXd& pi, const HiddenState& prev,
                      const PolicyParams& p) {
  if (pi.size() != p.feature_dim)
    throw std::invalid_argument("lstm_step: feature width mismatch");
  const Eigen::VectorXd& s = prev.s;
  const Eigen::ArrayXd f = logistic(p.u_f * pi + p.r_f * s + p.b_f.col(0));
  const Eigen::ArrayXd i = logistic(p.u_i * pi + p.r_i * s + p.b_i.col(0));
  const Eigen::ArrayXd o = logistic(p.u_o * pi + p.r_o * s + p.b_o.col(0));
  const Eigen::ArrayXd g = (p.u_c * pi + p.r_c * s + p.b_c.col(0)).array().tanh();
  HiddenState next;
  next.c = (f * prev.c.array() + i * g).matrix();
  next.s = (o * next.c.array().tanh()).matrix();
  return next;
}

SensingConfig sensing_head(const Eigen::VectorXd& s, const PolicyParams& p) {
  Eigen::VectorXd h = s;
  for (std::size_t l = 0; l < p.head_w.size(); ++l)
    h = (p.head_w[l] * h + p.head_b[l].col(0)).cwiseMax(0.0);
  const Eigen::VectorXd theta_raw = p.theta_w * h + p.theta_b.col(0);
  const Eigen::VectorXd w_raw = p.beam_w * h + p.beam_b.col(0);
  return config_from_raw(theta_raw, w_raw, p);
}

Vec3 position_head(const Eigen::VectorXd& c, const PolicyParams& p) {
  Eigen::VectorXd h = c;
  for (std::size_t l = 0; l + 1 < p.pos_w.size(); ++l)
    h = (p.pos_w[l] * h + p.pos_b[l].col(0)).cwiseMax(0.0);
  return p.pos_w.back() * h + p.pos_b.back().col(0);
}

SensingConfig initial_config(const PolicyParams& p) {
  return config_from_raw(p.init_theta.col(0), p.init_w.col(0), p);
}

Trajectory rollout(const PolicyParams& p, const ScenarioConfig& sc,
                   const ChannelRealization& ch, int stages,
                   const std::vector<std::vector<std::complex<double>>>& noise) {
  if (static_cast<int>(noise.size()) < stages)
    throw std::invalid_argument("rollout: need noise for every stage");
  const double pu = sc.tx_power_mw();
  Trajectory traj;
  HiddenState state{Eigen::VectorXd::Zero(p.hidden), Eigen::VectorXd::Zero(p.hidden)};
  SensingConfig cfg = initial_config(p);
  for (int t = 0; t < stages; ++t) {
    if (static_cast<int>(noise[t].size()) != p.num_bs)
      throw std::invalid_argument("rollout: noise entries must match BS count");
    const auto means = noiseless_pilots(cfg, ch, pu);
    StageRecord rec;
    rec.config = cfg;
    for (int j = 0; j < p.num_bs; ++j) {
      const std::complex<double> y = means[j] + noise[t][j];
      rec.meas.push_back(Measurement{y, std::norm(y), t});
    }
    rec.feature = featurize(rec.meas, p);
    state = lstm_step(rec.feature, state, p);
    rec.estimate = position_head(state.c, p);
    if (t + 1 < stages) cfg = sensing_head(state.s, p);
    traj.stages.push_back(std::move(rec));
  }
  traj.final_estimate = traj.stages.back().estimate;
  return traj;
}

Trajectory rollout(const PolicyParams& p, const ScenarioConfig& sc,
                   const ChannelRealization& ch, int stages, RandomStream& noise_rng) {
  const double ns = std::sqrt(sc.noise_power_mw());
  std::vector<std::vector<std::complex<double>>> noise(stages);
  for (int t = 0; t < stages; ++t)
    for (int j = 0; j < sc.num_bs(); ++j)
      noise[t].push_back(ns * noise_rng.complex_normal());
  return rollout(p, sc, ch, stages, noise);
}

double loss_final(const std::vector<Trajectory>& trajs, const std::vector<Vec3>& p_true) {
  if (trajs.empty() || trajs.size() != p_true.size())
    throw std::invalid_argument("loss_final: batch size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < trajs.size(); ++i)
    acc += (trajs[i].final_estimate - p_true[i]).squaredNorm();
  return acc / static_cast<double>(trajs.size());
}

double loss_weighted(const std::vector<Trajectory>& trajs, const std::vector<Vec3>& p_true,
                     const std::vector<double>& alpha) {
  if (trajs.empty() || trajs.size() != p_true.size())
    throw std::invalid_argument("loss_weighted: batch size mismatch");
  double total = 0.0;
  for (const double a : alpha) {
    if (a < 0.0) throw std::invalid_argument("loss_weighted: negative weight");
    total += a;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("loss_weighted: weights must sum to 1");
  double acc = 0.0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    if (trajs[i].stages.size() != alpha.size())
      throw std::invalid_argument("loss_weighted: weight count must equal stage count");
    for (std::size_t t = 0; t < alpha.size(); ++t)
      acc += alpha[t] * (trajs[i].stages[t].estimate - p_true[i]).squaredNorm();
  }
  return acc / static_cast<double>(trajs.size());
}

// ---- tape forward ----------------------------------------------------------

namespace {

struct PolicyLeaves {
  Tensor u_c, u_f, u_i, u_o, r_c, r_f, r_i, r_o, b_c, b_f, b_i, b_o;
  std::vector<Tensor> head_w, head_b;
  Tensor theta_w, theta_b, beam_w, beam_b;
  std::vector<Tensor> pos_w, pos_b;
  Tensor init_theta, init_w;
  std::vector<Tensor> ordered;  // parameter_list order
};

PolicyLeaves map_leaves(Tape& tp, const PolicyParams& p) {
  PolicyLeaves L;
  const auto in = [&](const Matrix& m) {
    const Tensor t = tp.input(m);
    L.ordered.push_back(t);
    return t;
  };
  L.u_c = in(p.u_c);
  L.u_f = in(p.u_f);
  L.u_i = in(p.u_i);
  L.u_o = in(p.u_o);
  L.r_c = in(p.r_c);
  L.r_f = in(p.r_f);
  L.r_i = in(p.r_i);
  L.r_o = in(p.r_o);
  L.b_c = in(p.b_c);
  L.b_f = in(p.b_f);
  L.b_i = in(p.b_i);
  L.b_o = in(p.b_o);
  for (const Matrix& m : p.head_w) L.head_w.push_back(in(m));
  for (const Matrix& m : p.head_b) L.head_b.push_back(in(m));
  L.theta_w = in(p.theta_w);
  L.theta_b = in(p.theta_b);
  L.beam_w = in(p.beam_w);
  L.beam_b = in(p.beam_b);
  for (const Matrix& m : p.pos_w) L.pos_w.push_back(in(m));
  for (const Matrix& m : p.pos_b) L.pos_b.push_back(in(m));
  L.init_theta = in(p.init_theta);
  L.init_w = in(p.init_w);
  return L;
}

Tensor rollout_loss(Tape& tp, const PolicyParams& p, const PolicyLeaves& L,
                    const detail::PhysicsBatch& phys, int stages, LossMode mode,
                    const std::vector<double>& alpha) {
  const int B = phys.B;
  const bool has_theta = p.delta() > 0;
  Tensor s_prev = tp.constant(Matrix::Zero(p.hidden, B));
  Tensor c_prev = tp.constant(Matrix::Zero(p.hidden, B));
  Tensor theta_raw, w_raw;
  if (has_theta) theta_raw = detail::broadcast_col(tp, L.init_theta, phys.ones_row);
  w_raw = detail::broadcast_col(tp, L.init_w, phys.ones_row);

  Tensor loss;
  bool have_loss = false;
  for (int t = 0; t < stages; ++t) {
    const detail::StageSensing sens =
        detail::normalize_sensing(tp, theta_raw, w_raw, p.ris_sizes, p.m_antennas, p.num_bs);
    const std::vector<CxTensor> pilots = detail::measure_stage(tp, phys, sens, t);
    const Tensor pi = detail::stage_features(tp, pilots, p.feature_mode, p.feature_scale);

    const auto gate = [&](Tensor wu, Tensor wr, Tensor b) {
      return ad::add_bias(tp, ad::add(tp, ad::matmul(tp, wu, pi), ad::matmul(tp, wr, s_prev)), b);
    };
    const Tensor f = ad::sigmoid(tp, gate(L.u_f, L.r_f, L.b_f));
    const Tensor i = ad::sigmoid(tp, gate(L.u_i, L.r_i, L.b_i));
    const Tensor o = ad::sigmoid(tp, gate(L.u_o, L.r_o, L.b_o));
    const Tensor g = ad::tanh(tp, gate(L.u_c, L.r_c, L.b_c));
    const Tensor c = ad::add(tp, ad::mul(tp, f, c_prev), ad::mul(tp, i, g));
    const Tensor s = ad::mul(tp, o, ad::tanh(tp, c));

    const bool need_estimate = mode == LossMode::weighted || t + 1 == stages;
    if (need_estimate) {
      const Tensor est = detail::mlp(tp, L.pos_w, L.pos_b, c, /*linear_last=*/true);
      const Tensor sq = ad::sum(tp, ad::square(tp, ad::sub(tp, est, phys.p_true)));
      const double weight =
          (mode == LossMode::weighted ? alpha[t] : 1.0) / static_cast<double>(B);
      const Tensor term = ad::scale(tp, sq, weight);
      loss = have_loss ? ad::add(tp, loss, term) : term;
      have_loss = true;
    }
    if (t + 1 < stages) {
      const Tensor gamma = detail::mlp(tp, L.head_w, L.head_b, s, /*linear_last=*/false);
      if (has_theta) theta_raw = ad::linear(tp, L.theta_w, gamma, L.theta_b);
      w_raw = ad::linear(tp, L.beam_w, gamma, L.beam_b);
    }
    s_prev = s;
    c_prev = c;
  }
  return loss;
}

std::vector<double> uniform_alpha(int stages) {
  return std::vector<double>(stages, 1.0 / static_cast<double>(stages));
}

struct EpisodeSet {
  std::vector<ChannelRealization> channels;
  std::vector<Vec3> positions;
  std::vector<std::vector<std::vector<std::complex<double>>>> noise;  // [ep][t][j]
};

EpisodeSet make_episode_set(const ScenarioConfig& sc, int count, int stages,
                        std::uint64_t master, const std::string& tag) {
  EpisodeSet set;
  const double ns = std::sqrt(sc.noise_power_mw());
  for (int e = 0; e < count; ++e) {
    RandomStream pos_rng = derive_stream(master, tag + "-pos", e);
    const Vec3 p{pos_rng.uniform(sc.ue_area.x_min, sc.ue_area.x_max),
                 pos_rng.uniform(sc.ue_area.y_min, sc.ue_area.y_max), sc.ue_area.z};
    RandomStream ch_rng = derive_stream(master, tag + "-chan", e);
    set.positions.push_back(p);
    set.channels.push_back(sample_channel(sc, p, ch_rng));
    RandomStream nz_rng = derive_stream(master, tag + "-noise", e);
    std::vector<std::vector<std::complex<double>>> noise(stages);
    for (int t = 0; t < stages; ++t)
      for (int j = 0; j < sc.num_bs(); ++j) noise[t].push_back(ns * nz_rng.complex_normal());
    set.noise.push_back(std::move(noise));
  }
  return set;
}

double final_stage_mse(const PolicyParams& p, const ScenarioConfig& sc, const EpisodeSet& set,
                       int stages) {
  double acc = 0.0;
  for (std::size_t e = 0; e < set.channels.size(); ++e) {
    const Trajectory traj = rollout(p, sc, set.channels[e], stages, set.noise[e]);
    acc += (traj.final_estimate - set.positions[e]).squaredNorm();
  }
  return acc / static_cast<double>(set.channels.size());
}

}  // namespace

double rollout_batch_loss(
    const PolicyParams& p, const ScenarioConfig& sc,
    const std::vector<const ChannelRealization*>& channels,
    const std::vector<Vec3>& positions,
    const std::vector<std::vector<std::vector<std::complex<double>>>>& noise, int stages,
    LossMode mode, const std::vector<double>& alpha, std::vector<Matrix>* grads_out) {
  std::vector<double> a = alpha;
  if (mode == LossMode::weighted && a.empty()) a = uniform_alpha(stages);
  Tape tape;
  const PolicyLeaves leaves = map_leaves(tape, p);
  const detail::PhysicsBatch phys = detail::build_physics_batch(tape, sc, channels, positions, noise);
  const Tensor loss = rollout_loss(tape, p, leaves, phys, stages, mode, a);
  const double value = tape.value(loss)(0, 0);
  if (grads_out) {
    tape.backward(loss);
    grads_out->clear();
    grads_out->reserve(leaves.ordered.size());
    for (const Tensor t : leaves.ordered) grads_out->push_back(tape.grad(t));
  }
  return value;
}

TrainResult train_policy(PolicyParams& params, const ScenarioConfig& sc,
                         const TrainHyper& hyper, std::uint64_t master_seed,
                         std::ostream* progress) {
  params.validate(sc);
  if (hyper.batch < 1 || hyper.episodes < hyper.batch)
    throw std::invalid_argument("train: need at least one full batch of episodes");
  if (hyper.stages < 1) throw std::invalid_argument("train: stages must be >= 1");
  std::vector<double> alpha = hyper.alpha;
  if (hyper.loss_mode == LossMode::weighted) {
    if (alpha.empty()) alpha = uniform_alpha(hyper.stages);
    double total = 0.0;
    for (const double a : alpha) {
      if (a < 0.0) throw std::invalid_argument("train: negative loss weight");
      total += a;
    }
    if (static_cast<int>(alpha.size()) != hyper.stages || std::abs(total - 1.0) > 1e-9)
      throw std::invalid_argument("train: loss weights must cover all stages and sum to 1");
  }

  const auto t0 = std::chrono::steady_clock::now();
  const double ns = std::sqrt(sc.noise_power_mw());

  // Training pool: fixed channels/positions, fresh noise each visit.
  EpisodeSet pool = make_episode_set(sc, hyper.episodes, hyper.stages, master_seed, "train");
  EpisodeSet val = make_episode_set(sc, hyper.val_episodes, hyper.stages, master_seed, "val");

  TrainResult result;
  result.initial_val_mse = final_stage_mse(params, sc, val, hyper.stages);

  ad::AdamOptimizer adam(ad::AdamConfig{hyper.lr, 0.9, 0.999, 1e-8});
  const std::vector<Matrix*> param_ptrs = params.parameter_list();
  const int num_batches = hyper.episodes / hyper.batch;

  std::vector<int> order(hyper.episodes);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    const double lr_e =
        hyper.epochs > 1
            ? hyper.lr * std::pow(hyper.lr_decay,
                                  static_cast<double>(epoch) / static_cast<double>(hyper.epochs - 1))
            : hyper.lr;
    RandomStream shuffle_rng = derive_stream(master_seed, "shuffle", epoch);
    for (int i = hyper.episodes - 1; i > 0; --i) {
      const int j = static_cast<int>(shuffle_rng.next_u64() % static_cast<std::uint64_t>(i + 1));
      std::swap(order[i], order[j]);
    }

    double epoch_loss = 0.0;
    for (int bi = 0; bi < num_batches; ++bi) {
      std::vector<const ChannelRealization*> channels;
      std::vector<Vec3> positions;
      std::vector<std::vector<std::vector<std::complex<double>>>> noise;
      RandomStream nz = derive_stream(master_seed, "batch-noise",
                                      static_cast<std::uint64_t>(epoch) * num_batches + bi);
      for (int b = 0; b < hyper.batch; ++b) {
        const int e = order[bi * hyper.batch + b];
        channels.push_back(&pool.channels[e]);
        positions.push_back(pool.positions[e]);
        std::vector<std::vector<std::complex<double>>> nz_ep(hyper.stages);
        for (int t = 0; t < hyper.stages; ++t)
          for (int j = 0; j < sc.num_bs(); ++j) nz_ep[t].push_back(ns * nz.complex_normal());
        noise.push_back(std::move(nz_ep));
      }

      std::vector<Matrix> grads;
      const double loss_value = rollout_batch_loss(params, sc, channels, positions, noise,
                                                   hyper.stages, hyper.loss_mode, alpha, &grads);
      if (!std::isfinite(loss_value))
        throw std::runtime_error("training diverged: loss is not finite at epoch " +
                                 std::to_string(epoch));
      epoch_loss += loss_value;
      double norm_sq = 0.0;
      for (const Matrix& g : grads) norm_sq += g.squaredNorm();
      if (hyper.grad_clip > 0.0 && norm_sq > hyper.grad_clip * hyper.grad_clip) {
        const double f = hyper.grad_clip / std::sqrt(norm_sq);
        for (Matrix& g : grads) g *= f;
      }
      adam.step(param_ptrs, grads, lr_e);
    }

    TrainEpochRow row;
    row.epoch = epoch;
    row.train_loss = epoch_loss / num_batches;
    row.val_mse_m2 = final_stage_mse(params, sc, val, hyper.stages);
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(row);
    if (progress)
      (*progress) << "epoch " << epoch << " train_loss " << row.train_loss << " val_mse "
                  << row.val_mse_m2 << " lr " << lr_e << " t " << row.wall_seconds << "s\n";
  }
  result.final_val_mse = result.log.empty() ? result.initial_val_mse : result.log.back().val_mse_m2;
  params.trained_loss_mode = hyper.loss_mode;
  return result;
}

void write_training_log_csv(const std::string& path, const TrainResult& result) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write training log: " + path);
  out << "epoch,train_loss,val_mse_m2,wall_seconds\n";
  char buf[256];
  for (const TrainEpochRow& r : result.log) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.3f\n", r.epoch, r.train_loss, r.val_mse_m2,
                  r.wall_seconds);
    out << buf;
  }
}

EvalResult evaluate_policy(const PolicyParams& p, const ScenarioConfig& sc, int stages,
                           int episodes, std::uint64_t master_seed) {
  const EpisodeSet set = make_episode_set(sc, episodes, stages, master_seed, "eval");
  EvalResult res;
  res.sq_err.reserve(episodes);
  for (int e = 0; e < episodes; ++e) {
    const Trajectory traj = rollout(p, sc, set.channels[e], stages, set.noise[e]);
    res.sq_err.push_back((traj.final_estimate - set.positions[e]).squaredNorm());
  }
  double mean = 0.0;
  for (const double v : res.sq_err) mean += v;
  mean /= episodes;
  double var = 0.0;
  for (const double v : res.sq_err) var += (v - mean) * (v - mean);
  var /= std::max(1, episodes - 1);
  res.mse_m2 = mean;
  res.stderr_m2 = std::sqrt(var / episodes);
  res.rmse_m = std::sqrt(mean);
  return res;
}

// ---- checkpoint ------------------------------------------------------------

namespace {

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
void write_f64(std::ostream& out, double v) { out.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
double read_f64(std::istream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

constexpr char kMagic[8] = {'R', 'L', 'O', 'C', 'P', 'O', 'L', '1'};

}  // namespace

void save_policy(const std::string& path, const PolicyParams& p, std::uint64_t scenario_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, 8);
  write_u32(out, 1);  // version
  write_u64(out, scenario_hash);
  write_u32(out, p.feature_mode == FeatureMode::rss ? 0u : 1u);
  write_u32(out, p.trained_loss_mode == LossMode::final_stage ? 0u : 1u);
  write_u32(out, static_cast<std::uint32_t>(p.m_antennas));
  write_u32(out, static_cast<std::uint32_t>(p.num_bs));
  write_u32(out, static_cast<std::uint32_t>(p.ris_sizes.size()));
  for (const int n : p.ris_sizes) write_u32(out, static_cast<std::uint32_t>(n));
  write_u32(out, static_cast<std::uint32_t>(p.feature_dim));
  write_u32(out, static_cast<std::uint32_t>(p.hidden));
  write_u32(out, static_cast<std::uint32_t>(p.head_width));
  write_u32(out, static_cast<std::uint32_t>(p.head_layers));
  write_u32(out, static_cast<std::uint32_t>(p.pos_widths.size()));
  for (const int w : p.pos_widths) write_u32(out, static_cast<std::uint32_t>(w));
  write_f64(out, p.feature_scale);
  const auto list = p.parameter_list();
  write_u64(out, list.size());
  for (const Matrix* m : list) {
    write_u32(out, static_cast<std::uint32_t>(m->rows()));
    write_u32(out, static_cast<std::uint32_t>(m->cols()));
    out.write(reinterpret_cast<const char*>(m->data()),
              static_cast<std::streamsize>(sizeof(double) * m->size()));
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

PolicyParams load_policy(const std::string& path, std::uint64_t* scenario_hash_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("not a policy checkpoint: " + path);
  const std::uint32_t version = read_u32(in);
  if (version != 1) throw std::runtime_error("unsupported checkpoint version");
  const std::uint64_t hash = read_u64(in);
  if (scenario_hash_out) *scenario_hash_out = hash;

  PolicyParams p;
  p.feature_mode = read_u32(in) == 0 ? FeatureMode::rss : FeatureMode::pilot;
  p.trained_loss_mode = read_u32(in) == 0 ? LossMode::final_stage : LossMode::weighted;
  p.m_antennas = static_cast<int>(read_u32(in));
  p.num_bs = static_cast<int>(read_u32(in));
  const std::uint32_t num_ris = read_u32(in);
  p.ris_sizes.clear();
  for (std::uint32_t k = 0; k < num_ris; ++k) p.ris_sizes.push_back(static_cast<int>(read_u32(in)));
  p.feature_dim = static_cast<int>(read_u32(in));
  p.hidden = static_cast<int>(read_u32(in));
  p.head_width = static_cast<int>(read_u32(in));
  p.head_layers = static_cast<int>(read_u32(in));
  const std::uint32_t pos_depth = read_u32(in);
  p.pos_widths.clear();
  for (std::uint32_t l = 0; l < pos_depth; ++l) p.pos_widths.push_back(static_cast<int>(read_u32(in)));
  p.feature_scale = read_f64(in);

  p.head_w.resize(p.head_layers);
  p.head_b.resize(p.head_layers);
  p.pos_w.resize(p.pos_widths.size() + 1);
  p.pos_b.resize(p.pos_widths.size() + 1);
  auto list = p.parameter_list();
  const std::uint64_t count = read_u64(in);
  if (count != list.size()) throw std::runtime_error("checkpoint parameter count mismatch");
  for (Matrix* m : list) {
    const std::uint32_t rows = read_u32(in);
    const std::uint32_t cols = read_u32(in);
    m->resize(rows, cols);
    in.read(reinterpret_cast<char*>(m->data()),
            static_cast<std::streamsize>(sizeof(double) * m->size()));
  }
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return p;
}

}  // namespace risloc
