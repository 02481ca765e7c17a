#include "nn_common.hpp"

#include <stdexcept>

namespace risloc::detail {

PhysicsBatch build_physics_batch(
    Tape& tp, const ScenarioConfig& sc,
    const std::vector<const ChannelRealization*>& channels,
    const std::vector<Vec3>& positions,
    const std::vector<std::vector<std::vector<std::complex<double>>>>& noise) {
  const int B = static_cast<int>(channels.size());
  if (B == 0 || positions.size() != channels.size() || noise.size() != channels.size())
    throw std::invalid_argument("physics batch: episode lists disagree");

  PhysicsBatch phys;
  phys.B = B;
  phys.M = sc.m_antennas;
  phys.J = sc.num_bs();
  phys.K = sc.num_ris();
  phys.N = sc.ris_elements;
  phys.sqrt_pu = std::sqrt(sc.tx_power_mw());

  for (int j = 0; j < phys.J; ++j) {
    Matrix re(phys.M, B), im(phys.M, B);
    for (int b = 0; b < B; ++b)
      for (int m = 0; m < phys.M; ++m) {
        re(m, b) = channels[b]->h_d_per_bs[j](m).real();
        im(m, b) = channels[b]->h_d_per_bs[j](m).imag();
      }
    phys.h_d.push_back({tp.constant(std::move(re)), tp.constant(std::move(im))});
  }
  for (int k = 0; k < phys.K; ++k) {
    std::vector<CxTensor> per_antenna;
    for (int m = 0; m < phys.M; ++m) {
      Matrix re(phys.N[k], B), im(phys.N[k], B);
      for (int b = 0; b < B; ++b)
        for (int n = 0; n < phys.N[k]; ++n) {
          re(n, b) = channels[b]->H_c[k](n, m).real();
          im(n, b) = channels[b]->H_c[k](n, m).imag();
        }
      per_antenna.push_back({tp.constant(std::move(re)), tp.constant(std::move(im))});
    }
    phys.A.push_back(std::move(per_antenna));
  }

  const int stages = static_cast<int>(noise.front().size());
  phys.noise.resize(stages);
  for (int t = 0; t < stages; ++t) {
    for (int j = 0; j < phys.J; ++j) {
      Matrix re(1, B), im(1, B);
      for (int b = 0; b < B; ++b) {
        if (static_cast<int>(noise[b].size()) != stages ||
            static_cast<int>(noise[b][t].size()) != phys.J)
          throw std::invalid_argument("physics batch: ragged noise array");
        re(0, b) = noise[b][t][j].real();
        im(0, b) = noise[b][t][j].imag();
      }
      phys.noise[t].push_back({tp.constant(std::move(re)), tp.constant(std::move(im))});
    }
  }

  Matrix pt(3, B);
  for (int b = 0; b < B; ++b) pt.col(b) = positions[b];
  phys.p_true = tp.constant(std::move(pt));
  phys.ones_row = tp.constant(Matrix::Ones(1, B));
  return phys;
}

StageSensing normalize_sensing(Tape& tp, Tensor theta_raw, Tensor w_raw,
                               const std::vector<int>& ris_sizes, int m_antennas,
                               int num_bs) {
  StageSensing out;
  Eigen::Index off = 0;
  for (const int n : ris_sizes) {
    const Tensor block = ad::normalize_pairs(tp, ad::slice_rows(tp, theta_raw, off, 2 * n));
    out.theta.push_back({ad::slice_rows(tp, block, 0, n), ad::slice_rows(tp, block, n, n)});
    off += 2 * n;
  }
  for (int j = 0; j < num_bs; ++j) {
    const Tensor block =
        ad::normalize_pairs(tp, ad::slice_rows(tp, w_raw, 2 * m_antennas * j, 2 * m_antennas));
    out.w.push_back({ad::slice_rows(tp, block, 0, m_antennas),
                     ad::slice_rows(tp, block, m_antennas, m_antennas)});
  }
  return out;
}

std::vector<CxTensor> measure_stage(Tape& tp, const PhysicsBatch& phys,
                                    const StageSensing& sensing, int stage) {
  std::vector<CxTensor> pilots;
  for (int j = 0; j < phys.J; ++j) {
    Tensor u_re = phys.h_d[j].re;
    Tensor u_im = phys.h_d[j].im;
    if (j == 0) {
      for (int k = 0; k < phys.K; ++k) {
        const CxTensor& th = sensing.theta[k];
        std::vector<Tensor> rows_re, rows_im;
        for (int m = 0; m < phys.M; ++m) {
          const CxTensor& a = phys.A[k][m];
          rows_re.push_back(ad::colwise_sum(
              tp, ad::sub(tp, ad::mul(tp, a.re, th.re), ad::mul(tp, a.im, th.im))));
          rows_im.push_back(ad::colwise_sum(
              tp, ad::add(tp, ad::mul(tp, a.re, th.im), ad::mul(tp, a.im, th.re))));
        }
        u_re = ad::add(tp, u_re, ad::concat_rows(tp, rows_re));
        u_im = ad::add(tp, u_im, ad::concat_rows(tp, rows_im));
      }
    }
    const CxTensor& w = sensing.w[j];
    // y = sqrt(Pu) * sum_m w_m u_m + n
    Tensor y_re = ad::scale(
        tp,
        ad::colwise_sum(tp, ad::sub(tp, ad::mul(tp, w.re, u_re), ad::mul(tp, w.im, u_im))),
        phys.sqrt_pu);
    Tensor y_im = ad::scale(
        tp,
        ad::colwise_sum(tp, ad::add(tp, ad::mul(tp, w.re, u_im), ad::mul(tp, w.im, u_re))),
        phys.sqrt_pu);
    y_re = ad::add(tp, y_re, phys.noise[stage][j].re);
    y_im = ad::add(tp, y_im, phys.noise[stage][j].im);
    pilots.push_back({y_re, y_im});
  }
  return pilots;
}

Tensor stage_features(Tape& tp, const std::vector<CxTensor>& pilots, FeatureMode mode,
                      double feature_scale) {
  std::vector<Tensor> rows;
  for (const CxTensor& y : pilots) {
    if (mode == FeatureMode::rss) {
      rows.push_back(ad::scale(
          tp, ad::add(tp, ad::square(tp, y.re), ad::square(tp, y.im)), feature_scale));
    } else {
      rows.push_back(ad::scale(tp, y.re, feature_scale));
      rows.push_back(ad::scale(tp, y.im, feature_scale));
    }
  }
  return rows.size() == 1 ? rows.front() : ad::concat_rows(tp, rows);
}

Tensor broadcast_col(Tape& tp, Tensor col, Tensor ones_row) {
  return ad::matmul(tp, col, ones_row);
}

Tensor mlp(Tape& tp, const std::vector<Tensor>& weights, const std::vector<Tensor>& biases,
           Tensor x, bool linear_last) {
  Tensor h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h = ad::linear(tp, weights[l], h, biases[l]);
    if (!linear_last || l + 1 < weights.size()) h = ad::relu(tp, h);
  }
  return h;
}

}  // namespace risloc::detail
