#include "risloc/scenario.hpp"

#include <nlohmann/json.hpp>

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace risloc {

using nlohmann::json;

void ScenarioConfig::validate() const {
  if (bs_positions.empty()) throw std::invalid_argument("scenario: need at least one BS");
  if (m_antennas < 1) throw std::invalid_argument("scenario: m_antennas must be >= 1");
  if (ris_positions.size() != ris_elements.size() || ris_positions.size() != ris_columns.size())
    throw std::invalid_argument("scenario: RIS position/element/column lists disagree");
  for (std::size_t k = 0; k < ris_positions.size(); ++k) {
    const int n = ris_elements[k];
    const int c = ris_columns[k];
    if (n < 1 || c < 1 || n % c != 0)
      throw std::invalid_argument("scenario: RIS element count must be columns x rows");
  }
  if (rician_factor < 0.0) throw std::invalid_argument("scenario: rician_factor must be >= 0");
  if (ue_area.x_max <= ue_area.x_min || ue_area.y_max <= ue_area.y_min)
    throw std::invalid_argument("scenario: empty service area");
  if (bandwidth_hz <= 0.0) throw std::invalid_argument("scenario: bandwidth must be positive");

  std::vector<Vec3> anchors = bs_positions;
  anchors.insert(anchors.end(), ris_positions.begin(), ris_positions.end());
  for (std::size_t i = 0; i < anchors.size(); ++i)
    for (std::size_t j = i + 1; j < anchors.size(); ++j)
      if (distance(anchors[i], anchors[j]) <= 0.0)
        throw std::invalid_argument("scenario: coincident anchors");
}

AngleSet link_angles(const ScenarioConfig& sc, int k, const Vec3& p_ue) {
  const Vec3& p_ris = sc.ris_positions.at(k);
  const Vec3& p_bs = sc.bs_positions.front();
  const ArrivalAngles in = angles_to_anchor(p_ue, p_ris);
  const DepartureAngles out = angles_to_array(p_ris, p_bs);
  AngleSet a;
  a.phi_ris = in.phi;
  a.psi_ris = in.psi;
  a.eta_ris = out.eta;
  a.theta_ris = out.theta;
  a.psi_bs = out.psi_rx;
  a.psi_ue = elevation_to_array(p_ue, p_bs);
  return a;
}

namespace {

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json to_json(const ScenarioConfig& sc) {
  json j;
  j["bs_positions"] = json::array();
  for (const auto& p : sc.bs_positions) j["bs_positions"].push_back(vec3_to_json(p));
  j["ris_positions"] = json::array();
  for (const auto& p : sc.ris_positions) j["ris_positions"].push_back(vec3_to_json(p));
  j["m_antennas"] = sc.m_antennas;
  j["ris_elements"] = sc.ris_elements;
  j["ris_columns"] = sc.ris_columns;
  j["ue_area"] = {{"x_min", sc.ue_area.x_min}, {"x_max", sc.ue_area.x_max},
                  {"y_min", sc.ue_area.y_min}, {"y_max", sc.ue_area.y_max},
                  {"z", sc.ue_area.z}};
  j["rician_factor"] = sc.rician_factor;
  j["lambda_ris"] = sc.lambda_ris;
  j["lambda_bs"] = sc.lambda_bs;
  j["pathloss_direct"] = json::array({sc.pathloss_direct.a, sc.pathloss_direct.b});
  j["pathloss_reflect"] = json::array({sc.pathloss_reflect.a, sc.pathloss_reflect.b});
  j["noise_psd_dbm_hz"] = sc.noise_psd_dbm_hz;
  j["bandwidth_hz"] = sc.bandwidth_hz;
  j["snr_db"] = sc.snr_db;
  j["direct_los_present"] = sc.direct_los_present;
  return j;
}

}  // namespace

std::string scenario_to_json(const ScenarioConfig& sc) { return to_json(sc).dump(2); }

ScenarioConfig scenario_from_json(const std::string& text, const ScenarioConfig& base) {
  json j = json::parse(text);
  ScenarioConfig sc = base;
  if (j.contains("bs_positions")) {
    sc.bs_positions.clear();
    for (const auto& p : j["bs_positions"]) sc.bs_positions.push_back(vec3_from_json(p));
  }
  if (j.contains("ris_positions")) {
    sc.ris_positions.clear();
    for (const auto& p : j["ris_positions"]) sc.ris_positions.push_back(vec3_from_json(p));
  }
  if (j.contains("m_antennas")) sc.m_antennas = j["m_antennas"].get<int>();
  if (j.contains("ris_elements")) sc.ris_elements = j["ris_elements"].get<std::vector<int>>();
  if (j.contains("ris_columns")) sc.ris_columns = j["ris_columns"].get<std::vector<int>>();
  if (j.contains("ue_area")) {
    const auto& a = j["ue_area"];
    if (a.contains("x_min")) sc.ue_area.x_min = a["x_min"].get<double>();
    if (a.contains("x_max")) sc.ue_area.x_max = a["x_max"].get<double>();
    if (a.contains("y_min")) sc.ue_area.y_min = a["y_min"].get<double>();
    if (a.contains("y_max")) sc.ue_area.y_max = a["y_max"].get<double>();
    if (a.contains("z")) sc.ue_area.z = a["z"].get<double>();
  }
  if (j.contains("rician_factor")) sc.rician_factor = j["rician_factor"].get<double>();
  if (j.contains("lambda_ris")) sc.lambda_ris = j["lambda_ris"].get<double>();
  if (j.contains("lambda_bs")) sc.lambda_bs = j["lambda_bs"].get<double>();
  if (j.contains("pathloss_direct"))
    sc.pathloss_direct = {j["pathloss_direct"][0].get<double>(), j["pathloss_direct"][1].get<double>()};
  if (j.contains("pathloss_reflect"))
    sc.pathloss_reflect = {j["pathloss_reflect"][0].get<double>(), j["pathloss_reflect"][1].get<double>()};
  if (j.contains("noise_psd_dbm_hz")) sc.noise_psd_dbm_hz = j["noise_psd_dbm_hz"].get<double>();
  if (j.contains("bandwidth_hz")) sc.bandwidth_hz = j["bandwidth_hz"].get<double>();
  if (j.contains("snr_db")) sc.snr_db = j["snr_db"].get<double>();
  if (j.contains("direct_los_present")) sc.direct_los_present = j["direct_los_present"].get<bool>();
  sc.validate();
  return sc;
}

ScenarioConfig load_scenario_file(const std::string& path, const ScenarioConfig& base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return scenario_from_json(buf.str(), base);
}

std::uint64_t scenario_hash(const ScenarioConfig& sc) {
  // Canonical text: JSON with sorted keys and %.17g numbers (nlohmann dumps
  // shortest round-trip representation, which is stable).
  const std::string text = to_json(sc).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : text) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace risloc
