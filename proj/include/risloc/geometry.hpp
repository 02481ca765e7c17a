#pragma once

#include <Eigen/Core>

#include <cmath>
#include <complex>
#include <stdexcept>

namespace risloc {

using Vec3 = Eigen::Vector3d;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;

/// Azimuth/elevation pair describing the arrival direction of a point source
/// at a planar reflector, measured at the reflector.
struct ArrivalAngles {
  double phi = 0.0;  // azimuth, radians
  double psi = 0.0;  // elevation, radians
};

/// Departure angles from a reflector towards a receiving array, plus the
/// elevation of arrival seen at the array.
struct DepartureAngles {
  double eta = 0.0;     // azimuth of departure, radians
  double theta = 0.0;   // elevation of departure, radians
  double psi_rx = 0.0;  // elevation of arrival at the array, radians
};

/// Full set of link angles between a source position, a reflector and an
/// array anchor.
struct AngleSet {
  double phi_ris = 0.0;
  double psi_ris = 0.0;
  double eta_ris = 0.0;
  double theta_ris = 0.0;
  double psi_bs = 0.0;
  double psi_ue = 0.0;
};

inline double distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

/// Arrival angles of a transmitter at `p_src` seen by a reflector at
/// `p_anchor`. The direction cosines satisfy
///   cos(phi) sin(psi) = (x_src - x_a) / d
///   sin(phi) sin(psi) = (y_src - y_a) / d
///   cos(psi)          = (z_a - z_src) / d
/// with d the Euclidean distance. Throws on coincident points.
inline ArrivalAngles angles_to_anchor(const Vec3& p_src, const Vec3& p_anchor) {
  const double d = distance(p_src, p_anchor);
  if (d <= 0.0) throw std::invalid_argument("angles_to_anchor: degenerate geometry");
  const double dx = p_src.x() - p_anchor.x();
  const double dy = p_src.y() - p_anchor.y();
  ArrivalAngles a;
  a.psi = std::acos(std::clamp((p_anchor.z() - p_src.z()) / d, -1.0, 1.0));
  a.phi = std::atan2(dy, dx);
  return a;
}

/// Departure angles from a reflector at `p_ris` towards an array at `p_rx`:
///   sin(theta) cos(eta) = (x_ris - x_rx) / d
///   sin(theta) sin(eta) = (y_ris - y_rx) / d
///   sin(psi_rx)         = (z_ris - z_rx) / d
inline DepartureAngles angles_to_array(const Vec3& p_ris, const Vec3& p_rx) {
  const double d = distance(p_ris, p_rx);
  if (d <= 0.0) throw std::invalid_argument("angles_to_array: degenerate geometry");
  const double dx = p_ris.x() - p_rx.x();
  const double dy = p_ris.y() - p_rx.y();
  DepartureAngles a;
  a.eta = std::atan2(dy, dx);
  a.theta = std::asin(std::clamp(std::hypot(dx, dy) / d, -1.0, 1.0));
  a.psi_rx = std::asin(std::clamp((p_ris.z() - p_rx.z()) / d, -1.0, 1.0));
  return a;
}

/// Elevation of arrival of a source at `p_src` seen by an array at `p_rx`,
/// with the same z-convention as angles_to_array.
inline double elevation_to_array(const Vec3& p_src, const Vec3& p_rx) {
  const double d = distance(p_src, p_rx);
  if (d <= 0.0) throw std::invalid_argument("elevation_to_array: degenerate geometry");
  return std::asin(std::clamp((p_src.z() - p_rx.z()) / d, -1.0, 1.0));
}

/// Response of an N-element planar reflector with C columns to a plane wave
/// from azimuth `phi`, elevation `psi`. Element n (0-based) sits at column
/// n mod C, row n / C; its phase is
///   lambda_factor * { (n mod C) sin(phi) cos(psi) + (n / C) sin(psi) }.
inline CVector planar_steering(double phi, double psi, int n_elements, int n_columns,
                               double lambda_factor) {
  if (n_columns <= 0 || n_elements <= 0 || n_elements % n_columns != 0)
    throw std::invalid_argument("planar_steering: element count not divisible by columns");
  const double u = std::sin(phi) * std::cos(psi);
  const double v = std::sin(psi);
  CVector a(n_elements);
  for (int n = 0; n < n_elements; ++n) {
    const double phase = lambda_factor * ((n % n_columns) * u + (n / n_columns) * v);
    a(n) = std::complex<double>(std::cos(phase), std::sin(phase));
  }
  return a;
}

/// Response of an M-antenna uniform linear array to elevation `psi`;
/// element m has phase lambda_factor * m * cos(psi), first element is 1.
inline CVector linear_steering(double psi, int n_antennas, double lambda_factor) {
  if (n_antennas <= 0) throw std::invalid_argument("linear_steering: need at least one antenna");
  CVector a(n_antennas);
  const double c = lambda_factor * std::cos(psi);
  for (int m = 0; m < n_antennas; ++m) {
    a(m) = std::complex<double>(std::cos(c * m), std::sin(c * m));
  }
  return a;
}

/// dB path-loss coefficients; loss(d) = a + b log10(d).
struct PathLossLaw {
  double a = 0.0;
  double b = 0.0;
};

/// Linear amplitude gain of a link of length `d` meters:
/// 10^(-(a + b log10 d) / 20). The squared gain is the power attenuation.
inline double path_gain(double d, const PathLossLaw& law) {
  if (d <= 0.0) throw std::invalid_argument("path_gain: distance must be positive");
  return std::pow(10.0, -(law.a + law.b * std::log10(d)) / 20.0);
}

}  // namespace risloc
