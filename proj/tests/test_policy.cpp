#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "risloc/policy.hpp"

#include <cmath>
#include <fstream>

using namespace risloc;

namespace {

ScenarioConfig tiny_scenario() {
  ScenarioConfig sc;
  sc.bs_positions = {{0, 0, 0}};
  sc.ris_positions = {{-40, 40, 0}};
  sc.m_antennas = 1;
  sc.ris_elements = {4};
  sc.ris_columns = {2};
  sc.ue_area = {-35, -5, 5, 75, -20};
  sc.rician_factor = 10.0;
  sc.snr_db = 20.0;
  return sc;
}

PolicyParams tiny_policy(const ScenarioConfig& sc, FeatureMode mode = FeatureMode::rss,
                         std::uint64_t seed = 42) {
  PolicyConfig cfg;
  cfg.width_multiplier = 1.0 / 64.0;  // hidden 8, head 16
  cfg.feature_mode = mode;
  return init_policy(sc, cfg, seed);
}

std::vector<std::vector<std::complex<double>>> fixed_noise(int stages, int n_bs, double scale,
                                                           std::uint64_t seed) {
  RandomStream rng(seed);
  std::vector<std::vector<std::complex<double>>> noise(stages);
  for (int t = 0; t < stages; ++t)
    for (int j = 0; j < n_bs; ++j) noise[t].push_back(scale * rng.complex_normal());
  return noise;
}

// Straight-line scalar re-implementation of the gated recurrence.
HiddenState reference_lstm(const Eigen::VectorXd& pi, const HiddenState& prev,
                           const PolicyParams& p) {
  const int H = p.hidden;
  HiddenState out{Eigen::VectorXd(H), Eigen::VectorXd(H)};
  for (int i = 0; i < H; ++i) {
    double zf = p.b_f(i, 0), zi = p.b_i(i, 0), zo = p.b_o(i, 0), zc = p.b_c(i, 0);
    for (int j = 0; j < pi.size(); ++j) {
      zf += p.u_f(i, j) * pi(j);
      zi += p.u_i(i, j) * pi(j);
      zo += p.u_o(i, j) * pi(j);
      zc += p.u_c(i, j) * pi(j);
    }
    for (int j = 0; j < H; ++j) {
      zf += p.r_f(i, j) * prev.s(j);
      zi += p.r_i(i, j) * prev.s(j);
      zo += p.r_o(i, j) * prev.s(j);
      zc += p.r_c(i, j) * prev.s(j);
    }
    const double f = 1.0 / (1.0 + std::exp(-zf));
    const double ig = 1.0 / (1.0 + std::exp(-zi));
    const double o = 1.0 / (1.0 + std::exp(-zo));
    out.c(i) = f * prev.c(i) + ig * std::tanh(zc);
    out.s(i) = o * std::tanh(out.c(i));
  }
  return out;
}

}  // namespace

TEST_CASE("lstm with zero weights gives half gates and zero state") {
  const ScenarioConfig sc = tiny_scenario();
  PolicyParams p = tiny_policy(sc);
  for (Matrix* m : p.parameter_list()) m->setZero();
  const HiddenState prev{Eigen::VectorXd::Zero(p.hidden), Eigen::VectorXd::Zero(p.hidden)};
  Eigen::VectorXd pi(1);
  pi << 0.73;
  const HiddenState next = lstm_step(pi, prev, p);
  CHECK(next.c.norm() == 0.0);
  CHECK(next.s.norm() == 0.0);
}

TEST_CASE("saturated forget gate preserves the cell state") {
  const ScenarioConfig sc = tiny_scenario();
  PolicyParams p = tiny_policy(sc);
  for (Matrix* m : p.parameter_list()) m->setZero();
  p.b_f.setConstant(50.0);   // forget -> 1
  p.b_i.setConstant(-50.0);  // input -> 0
  HiddenState prev{Eigen::VectorXd::Zero(p.hidden), Eigen::VectorXd::Zero(p.hidden)};
  prev.c.setLinSpaced(p.hidden, -1.0, 1.0);
  Eigen::VectorXd pi(1);
  pi << 5.0;
  const HiddenState next = lstm_step(pi, prev, p);
  CHECK((next.c - prev.c).norm() < 1e-12);
}

TEST_CASE("lstm matches a straight-line reference recursion") {
  const ScenarioConfig sc = tiny_scenario();
  const PolicyParams p = tiny_policy(sc, FeatureMode::pilot, 7);
  RandomStream rng(123);
  HiddenState state{Eigen::VectorXd::Zero(p.hidden), Eigen::VectorXd::Zero(p.hidden)};
  HiddenState ref = state;
  for (int t = 0; t < 5; ++t) {
    Eigen::VectorXd pi(p.feature_dim);
    for (int i = 0; i < p.feature_dim; ++i) pi(i) = rng.uniform(-2.0, 2.0);
    state = lstm_step(pi, state, p);
    ref = reference_lstm(pi, ref, p);
    CHECK((state.c - ref.c).norm() < 1e-12);
    CHECK((state.s - ref.s).norm() < 1e-12);
  }
}

TEST_CASE("lstm rejects wrong feature widths") {
  const ScenarioConfig sc = tiny_scenario();
  const PolicyParams p = tiny_policy(sc);
  const HiddenState prev{Eigen::VectorXd::Zero(p.hidden), Eigen::VectorXd::Zero(p.hidden)};
  CHECK_THROWS_AS(lstm_step(Eigen::VectorXd::Zero(3), prev, p), std::invalid_argument);
}

TEST_CASE("raw head outputs are ordered per reflector and normalized pairwise") {
  ScenarioConfig sc = tiny_scenario();
  sc.ris_positions = {{-40, 20, 0}, {-40, 60, 0}};
  sc.ris_elements = {2, 1};
  sc.ris_columns = {2, 1};
  PolicyParams p = tiny_policy(sc);
  // blocks: [Re th1 (2), Im th1 (2), Re th2 (1), Im th2 (1)]
  p.init_theta << 3.0, 0.0, 4.0, 5.0, 1.0, 1.0;
  const SensingConfig cfg = initial_config(p);
  REQUIRE(cfg.thetas.size() == 2);
  CHECK(std::abs(cfg.thetas[0](0) - std::complex<double>(0.6, 0.8)) < 1e-9);
  CHECK(std::abs(cfg.thetas[0](1) - std::complex<double>(0.0, 1.0)) < 1e-9);
  CHECK(std::abs(cfg.thetas[1](0) - std::complex<double>(M_SQRT1_2, M_SQRT1_2)) < 1e-9);
  CHECK(cfg.max_modulus_error() < 1e-9);
}

TEST_CASE("rollout is deterministic and unit modulus at every stage") {
  const ScenarioConfig sc = tiny_scenario();
  const PolicyParams p = tiny_policy(sc);
  RandomStream ch_rng(5);
  const Vec3 p_ue{-20, 40, -20};
  const ChannelRealization ch = sample_channel(sc, p_ue, ch_rng);
  const auto noise = fixed_noise(4, 1, std::sqrt(sc.noise_power_mw()), 17);
  const Trajectory a = rollout(p, sc, ch, 4, noise);
  const Trajectory b = rollout(p, sc, ch, 4, noise);
  REQUIRE(a.stages.size() == 4);
  for (int t = 0; t < 4; ++t) {
    CHECK(a.stages[t].meas[0].y == b.stages[t].meas[0].y);
    CHECK((a.stages[t].estimate - b.stages[t].estimate).norm() == 0.0);
    CHECK(a.stages[t].config.max_modulus_error() < 1e-9);
  }
  CHECK((a.final_estimate - b.final_estimate).norm() == 0.0);
}

TEST_CASE("noise at stage t only influences later configurations") {
  const ScenarioConfig sc = tiny_scenario();
  const PolicyParams p = tiny_policy(sc);
  RandomStream ch_rng(6);
  const ChannelRealization ch = sample_channel(sc, {-25, 50, -20}, ch_rng);
  const int T = 5;
  auto noise = fixed_noise(T, 1, std::sqrt(sc.noise_power_mw()), 3);
  const Trajectory base = rollout(p, sc, ch, T, noise);
  const int tp = 2;
  noise[tp][0] += std::complex<double>(10.0 * std::sqrt(sc.noise_power_mw()), 0.0);
  const Trajectory pert = rollout(p, sc, ch, T, noise);
  for (int t = 0; t <= tp; ++t) {
    for (std::size_t k = 0; k < base.stages[t].config.thetas.size(); ++k)
      CHECK((base.stages[t].config.thetas[k] - pert.stages[t].config.thetas[k]).norm() == 0.0);
    for (std::size_t j = 0; j < base.stages[t].config.w_per_bs.size(); ++j)
      CHECK((base.stages[t].config.w_per_bs[j] - pert.stages[t].config.w_per_bs[j]).norm() == 0.0);
  }
  bool later_changed = false;
  for (int t = tp + 1; t < T; ++t)
    for (std::size_t k = 0; k < base.stages[t].config.thetas.size(); ++k)
      if ((base.stages[t].config.thetas[k] - pert.stages[t].config.thetas[k]).norm() > 0)
        later_changed = true;
  CHECK(later_changed);
}

TEST_CASE("final loss basics") {
  Trajectory t0, t1;
  t0.final_estimate = Vec3{1, 2, 3};
  t1.final_estimate = Vec3{0, 0, 0};
  CHECK(loss_final({t0}, {Vec3{1, 2, 3}}) == doctest::Approx(0.0));
  CHECK(loss_final({t0}, {Vec3{0, 2, 3}}) == doctest::Approx(1.0));
  CHECK(loss_final({t0, t1}, {Vec3{0, 2, 3}, Vec3{2, 0, 0}}) == doctest::Approx(2.5));
}

TEST_CASE("weighted loss reduces to the final loss for degenerate weights") {
  Trajectory tr;
  for (int t = 0; t < 3; ++t) {
    StageRecord r;
    r.estimate = Vec3{double(t), 0, 0};
    tr.stages.push_back(r);
  }
  tr.final_estimate = tr.stages.back().estimate;
  const std::vector<Vec3> truth{Vec3{0, 0, 0}};
  CHECK(loss_weighted({tr}, truth, {0, 0, 1}) == doctest::Approx(loss_final({tr}, truth)));

  Trajectory flat;
  for (int t = 0; t < 3; ++t) {
    StageRecord r;
    r.estimate = Vec3{2, 0, 0};
    flat.stages.push_back(r);
  }
  flat.final_estimate = flat.stages.back().estimate;
  const std::vector<double> uniform{1.0 / 3, 1.0 / 3, 1.0 / 3};
  CHECK(loss_weighted({flat}, truth, uniform) == doctest::Approx(loss_final({flat}, truth)));

  CHECK_THROWS_AS(loss_weighted({tr}, truth, {0.5, 0.2, 0.2}), std::invalid_argument);
  CHECK_THROWS_AS(loss_weighted({tr}, truth, {1.5, -0.5, 0.0}), std::invalid_argument);
}

TEST_CASE("batched tape loss equals the plain rollout loss") {
  const ScenarioConfig sc = tiny_scenario();
  const PolicyParams p = tiny_policy(sc, FeatureMode::pilot, 11);
  RandomStream ch_rng(8);
  std::vector<ChannelRealization> chs;
  std::vector<Vec3> ps;
  std::vector<std::vector<std::vector<std::complex<double>>>> noise;
  const int T = 3, B = 4;
  for (int b = 0; b < B; ++b) {
    const Vec3 pos{-30.0 + b * 5.0, 20.0 + b * 10.0, -20.0};
    ps.push_back(pos);
    chs.push_back(sample_channel(sc, pos, ch_rng));
    noise.push_back(fixed_noise(T, 1, std::sqrt(sc.noise_power_mw()), 100 + b));
  }
  std::vector<const ChannelRealization*> chp;
  for (const auto& c : chs) chp.push_back(&c);

  const double tape_loss =
      rollout_batch_loss(p, sc, chp, ps, noise, T, LossMode::final_stage, {}, nullptr);

  std::vector<Trajectory> trajs;
  for (int b = 0; b < B; ++b) trajs.push_back(rollout(p, sc, chs[b], T, noise[b]));
  CHECK(tape_loss == doctest::Approx(loss_final(trajs, ps)).epsilon(1e-12));

  const double tape_weighted =
      rollout_batch_loss(p, sc, chp, ps, noise, T, LossMode::weighted, {0.2, 0.3, 0.5}, nullptr);
  CHECK(tape_weighted == doctest::Approx(loss_weighted(trajs, ps, {0.2, 0.3, 0.5})).epsilon(1e-12));
}

TEST_CASE("end-to-end rollout gradients match finite differences") {
  const ScenarioConfig sc = tiny_scenario();
  PolicyParams p = tiny_policy(sc, FeatureMode::rss, 9);
  RandomStream ch_rng(12);
  std::vector<ChannelRealization> chs;
  std::vector<Vec3> ps;
  std::vector<std::vector<std::vector<std::complex<double>>>> noise;
  const int T = 2, B = 2;
  const Vec3 center = sc.ue_area.center();
  for (int b = 0; b < B; ++b) {
    const Vec3 pos{-15.0 - b * 10.0, 30.0 + b * 15.0, -20.0};
    // labels near the initial estimates keep the loss O(1), which keeps the
    // finite differences well conditioned
    ps.push_back(center + Vec3{0.8 * b - 0.5, 1.2 - b, 0.3});
    chs.push_back(sample_channel(sc, pos, ch_rng));
    noise.push_back(fixed_noise(T, 1, std::sqrt(sc.noise_power_mw()), 300 + b));
  }
  std::vector<const ChannelRealization*> chp;
  for (const auto& c : chs) chp.push_back(&c);

  std::vector<Matrix> grads;
  rollout_batch_loss(p, sc, chp, ps, noise, T, LossMode::final_stage, {}, &grads);
  const auto params = p.parameter_list();
  REQUIRE(grads.size() == params.size());

  RandomStream pick(77);
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Matrix* m = params[pi];
    if (m->size() == 0) continue;
    // probe a few entries of every parameter tensor
    const int probes = std::min<int>(3, static_cast<int>(m->size()));
    for (int q = 0; q < probes; ++q) {
      const Eigen::Index idx = static_cast<Eigen::Index>(pick.next_u64() % m->size());
      const double orig = m->data()[idx];
      const double h = 1e-5;
      m->data()[idx] = orig + h;
      const double up = rollout_batch_loss(p, sc, chp, ps, noise, T, LossMode::final_stage, {}, nullptr);
      m->data()[idx] = orig - h;
      const double dn = rollout_batch_loss(p, sc, chp, ps, noise, T, LossMode::final_stage, {}, nullptr);
      m->data()[idx] = orig;
      const double fd = (up - dn) / (2.0 * h);
      const double an = grads[pi].data()[idx];
      const double denom = std::max({1e-3, std::abs(fd), std::abs(an)});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("training on a tiny instance improves validation mse") {
  ScenarioConfig sc = tiny_scenario();
  sc.ris_elements = {16};
  sc.ris_columns = {4};
  PolicyConfig cfg;
  cfg.width_multiplier = 1.0 / 16.0;
  cfg.feature_mode = FeatureMode::pilot;
  PolicyParams p = init_policy(sc, cfg, 1);
  TrainHyper hyper;
  hyper.episodes = 512;
  hyper.batch = 64;
  hyper.epochs = 12;
  hyper.stages = 3;
  hyper.lr = 3e-3;
  hyper.val_episodes = 128;
  const TrainResult res = train_policy(p, sc, hyper, 4242);
  CHECK(res.final_val_mse < 0.8 * res.initial_val_mse);
  CHECK(res.log.size() == 12);
}

TEST_CASE("checkpoints round-trip bitwise") {
  const ScenarioConfig sc = tiny_scenario();
  const PolicyParams p = tiny_policy(sc, FeatureMode::pilot, 21);
  const std::string path = "/tmp/risloc_test_ckpt.bin";
  save_policy(path, p, scenario_hash(sc));
  std::uint64_t hash = 0;
  const PolicyParams q = load_policy(path, &hash);
  CHECK(hash == scenario_hash(sc));
  CHECK(q.feature_mode == p.feature_mode);
  CHECK(q.feature_scale == p.feature_scale);
  const auto pa = p.parameter_list();
  const auto pb = q.parameter_list();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK((*pa[i] - *pb[i]).norm() == 0.0);
}

TEST_CASE("loading garbage fails cleanly") {
  const std::string path = "/tmp/risloc_bad_ckpt.bin";
  std::ofstream(path) << "not a checkpoint";
  CHECK_THROWS_AS(load_policy(path), std::runtime_error);
}
