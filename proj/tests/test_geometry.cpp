#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "risloc/geometry.hpp"
#include "risloc/rng.hpp"

#include <cmath>

using namespace risloc;

namespace {

// Residuals of the defining direction-cosine rows for arrival angles.
double arrival_residual(const ArrivalAngles& a, const Vec3& src, const Vec3& anchor) {
  const double d = distance(src, anchor);
  double r = 0.0;
  r = std::max(r, std::abs(std::cos(a.phi) * std::sin(a.psi) - (src.x() - anchor.x()) / d));
  r = std::max(r, std::abs(std::sin(a.phi) * std::sin(a.psi) - (src.y() - anchor.y()) / d));
  r = std::max(r, std::abs(std::cos(a.psi) - (anchor.z() - src.z()) / d));
  return r;
}

double departure_residual(const DepartureAngles& a, const Vec3& ris, const Vec3& rx) {
  const double d = distance(ris, rx);
  double r = 0.0;
  r = std::max(r, std::abs(std::sin(a.theta) * std::cos(a.eta) - (ris.x() - rx.x()) / d));
  r = std::max(r, std::abs(std::sin(a.theta) * std::sin(a.eta) - (ris.y() - rx.y()) / d));
  r = std::max(r, std::abs(std::sin(a.psi_rx) - (ris.z() - rx.z()) / d));
  return r;
}

}  // namespace

TEST_CASE("arrival angles: source directly below the anchor") {
  const auto a = angles_to_anchor({-40, 40, -20}, {-40, 40, 0});
  CHECK(a.psi == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("arrival angles: worked offset case") {
  const Vec3 src{-20, 40, -20}, anchor{-40, 40, 0};
  const auto a = angles_to_anchor(src, anchor);
  const double d = std::sqrt(400.0 + 400.0);
  CHECK(std::abs(std::sin(a.phi) * std::sin(a.psi)) < 1e-12);
  CHECK(std::cos(a.phi) * std::sin(a.psi) == doctest::Approx(20.0 / d).epsilon(1e-12));
  CHECK(arrival_residual(a, src, anchor) < 1e-12);
}

TEST_CASE("arrival angles: coincident points throw") {
  CHECK_THROWS_AS(angles_to_anchor({1, 2, 3}, {1, 2, 3}), std::invalid_argument);
}

TEST_CASE("departure angles: co-planar anchors have zero array elevation") {
  const auto a = angles_to_array({-40, 40, 0}, {0, 0, 0});
  CHECK(std::abs(std::sin(a.psi_rx)) < 1e-12);
}

TEST_CASE("angle substitution residuals over random anchor pairs") {
  RandomStream rng(7);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 a{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-30, 10)};
    const Vec3 b{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-30, 10)};
    if (distance(a, b) < 1e-6) continue;
    CHECK(arrival_residual(angles_to_anchor(a, b), a, b) < 1e-12);
    CHECK(departure_residual(angles_to_array(a, b), a, b) < 1e-12);
  }
}

TEST_CASE("arrival angles reconstruct the unit offset vector") {
  RandomStream rng(11);
  for (int i = 0; i < 500; ++i) {
    const Vec3 src{rng.uniform(-60, 60), rng.uniform(-60, 60), rng.uniform(-40, -1)};
    const Vec3 anchor{rng.uniform(-60, 60), rng.uniform(-60, 60), rng.uniform(0, 5)};
    const double d = distance(src, anchor);
    const auto a = angles_to_anchor(src, anchor);
    const Vec3 dir{std::cos(a.phi) * std::sin(a.psi), std::sin(a.phi) * std::sin(a.psi),
                   -std::cos(a.psi)};
    CHECK(((src - anchor) / d - dir).norm() < 1e-10);
  }
}

TEST_CASE("departure angles: coincident anchors throw") {
  CHECK_THROWS_AS(angles_to_array({0, 0, 0}, {0, 0, 0}), std::invalid_argument);
}

TEST_CASE("planar steering: first element is one for any angles") {
  const auto a = planar_steering(0.83, -0.41, 16, 4, 1.0);
  CHECK(std::abs(a(0) - std::complex<double>(1, 0)) < 1e-15);
}

TEST_CASE("planar steering: broadside gives the all-ones vector") {
  const auto a = planar_steering(0.0, 0.0, 12, 4, 1.0);
  for (int n = 0; n < 12; ++n) CHECK(std::abs(a(n) - std::complex<double>(1, 0)) < 1e-15);
}

TEST_CASE("planar steering: hand-evaluated 4-element case") {
  // phi = pi/2, psi = 0: phase = column index, elements [1, e^j, 1, e^j]
  const auto a = planar_steering(M_PI / 2, 0.0, 4, 2, 1.0);
  const std::complex<double> e1 = std::polar(1.0, 1.0);
  CHECK(std::abs(a(0) - 1.0) < 1e-12);
  CHECK(std::abs(a(1) - e1) < 1e-12);
  CHECK(std::abs(a(2) - 1.0) < 1e-12);
  CHECK(std::abs(a(3) - e1) < 1e-12);
}

TEST_CASE("planar steering: element count must divide into columns") {
  CHECK_THROWS_AS(planar_steering(0, 0, 7, 2, 1.0), std::invalid_argument);
}

TEST_CASE("steering vectors have unit modulus") {
  RandomStream rng(3);
  for (int i = 0; i < 200; ++i) {
    const double phi = rng.uniform(-M_PI, M_PI);
    const double psi = rng.uniform(-M_PI / 2, M_PI / 2);
    const auto a = planar_steering(phi, psi, 24, 6, rng.uniform(0.1, 3.0));
    for (Eigen::Index n = 0; n < a.size(); ++n) CHECK(std::abs(std::abs(a(n)) - 1.0) < 1e-12);
    const auto b = linear_steering(psi, 8, rng.uniform(0.1, 3.0));
    for (Eigen::Index m = 0; m < b.size(); ++m) CHECK(std::abs(std::abs(b(m)) - 1.0) < 1e-12);
  }
}

TEST_CASE("linear steering basics") {
  const auto ones = linear_steering(M_PI / 2, 5, 1.0);
  for (int m = 0; m < 5; ++m) CHECK(std::abs(ones(m) - std::complex<double>(1, 0)) < 1e-12);

  const auto single = linear_steering(0.37, 1, 1.0);
  CHECK(single.size() == 1);
  CHECK(std::abs(single(0) - std::complex<double>(1, 0)) < 1e-15);

  const auto a = linear_steering(0.0, 3, 1.0);
  CHECK(std::abs(a(1) - std::polar(1.0, 1.0)) < 1e-12);
  CHECK(std::abs(a(2) - std::polar(1.0, 2.0)) < 1e-12);
}

TEST_CASE("path gain: stated laws") {
  CHECK(path_gain(1.0, {30.0, 22.0}) == doctest::Approx(std::pow(10.0, -1.5)).epsilon(1e-14));
  CHECK(path_gain(10.0, {32.6, 36.7}) ==
        doctest::Approx(std::pow(10.0, -69.3 / 20.0)).epsilon(1e-14));
  CHECK_THROWS_AS(path_gain(0.0, {30.0, 22.0}), std::invalid_argument);
}

TEST_CASE("path gain decreases with distance for positive slope") {
  RandomStream rng(5);
  for (int i = 0; i < 200; ++i) {
    const double d1 = rng.uniform(0.5, 100.0);
    const double d2 = d1 + rng.uniform(0.01, 50.0);
    const PathLossLaw law{rng.uniform(0.0, 40.0), rng.uniform(0.1, 40.0)};
    CHECK(path_gain(d2, law) < path_gain(d1, law));
  }
}
