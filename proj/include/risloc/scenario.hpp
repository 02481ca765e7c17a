#pragma once

#include "risloc/geometry.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace risloc {

/// Axis-aligned service area on a horizontal plane.
struct ServiceArea {
  double x_min = 0.0, x_max = 0.0;
  double y_min = 0.0, y_max = 0.0;
  double z = 0.0;

  double width_x() const { return x_max - x_min; }
  double width_y() const { return y_max - y_min; }
  Vec3 center() const { return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max), z}; }
  bool contains(const Vec3& p) const {
    return p.x() >= x_min && p.x() <= x_max && p.y() >= y_min && p.y() <= y_max;
  }
};

/// Complete physical description of one localization setup: anchor geometry,
/// array sizes, fading and path-loss laws, noise and transmit power.
/// All distances are meters, powers milliwatts, spectral densities dBm/Hz.
struct ScenarioConfig {
  std::vector<Vec3> bs_positions;        // receiving arrays
  std::vector<Vec3> ris_positions;       // planar reflectors
  int m_antennas = 1;                    // antennas per array
  std::vector<int> ris_elements;         // N_k per reflector
  std::vector<int> ris_columns;          // C_k per reflector
  ServiceArea ue_area;                   // transmitter plane
  double rician_factor = 10.0;           // LoS/NLoS power ratio
  double lambda_ris = 1.0;               // 2*pi*d_R/lambda_c
  double lambda_bs = 1.0;                // 2*pi*d_A/lambda_c
  PathLossLaw pathloss_direct{32.6, 36.7};
  PathLossLaw pathloss_reflect{30.0, 22.0};
  double noise_psd_dbm_hz = -170.0;
  double bandwidth_hz = 1.0e7;
  double snr_db = 20.0;
  bool direct_los_present = true;

  int num_bs() const { return static_cast<int>(bs_positions.size()); }
  int num_ris() const { return static_cast<int>(ris_positions.size()); }
  int total_ris_elements() const {  // Delta = sum_k N_k
    int d = 0;
    for (const int n : ris_elements) d += n;
    return d;
  }

  /// Noise power sigma_u^2 in mW: PSD integrated over the bandwidth.
  double noise_power_mw() const {
    return std::pow(10.0, (noise_psd_dbm_hz + 10.0 * std::log10(bandwidth_hz)) / 10.0);
  }

  /// Uplink transmit power P_u = 10^(SNR/10) mW.
  double tx_power_mw() const { return std::pow(10.0, snr_db / 10.0); }

  /// Throws std::invalid_argument when any structural invariant is violated.
  void validate() const;
};

/// All link angles for reflector k and a transmitter at p_ue, evaluated
/// against the first array anchor (reflected paths terminate there).
AngleSet link_angles(const ScenarioConfig& sc, int k, const Vec3& p_ue);

/// FNV-1a hash of the canonical serialization; identifies a scenario in
/// checkpoints, sweep outputs and radio-map sidecars.
std::uint64_t scenario_hash(const ScenarioConfig& sc);

/// JSON (de)serialization. Keys are documented in the README; load applies
/// the keys present in `text` on top of `base`, so a partial file acts as
/// an override of a preset.
std::string scenario_to_json(const ScenarioConfig& sc);
ScenarioConfig scenario_from_json(const std::string& text, const ScenarioConfig& base = {});
ScenarioConfig load_scenario_file(const std::string& path, const ScenarioConfig& base = {});

}  // namespace risloc
