#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ctnav/geodesy.hpp"
#include "test_util.hpp"

using namespace ctnav::geodesy;

// Reference values computed by tests/oracles/geodesy_oracle.py (mpmath, 60
// significant digits) with the configured defaults ecc = 0.08181919,
// a = 6378137.
namespace {
constexpr double kOracleB = 6356752.314686384175436;
const Vec3 kOracleMidLat(4014920.18013447598592, 427182.6803732615457549,
                         4921168.810968927560956);
constexpr double kOraclePoleHeight = -0.00468638417543605843432;
}  // namespace

TEST_CASE("llh_to_ecef reference points") {
  CHECK((llh_to_ecef({0.0, 0.0, 0.0}) - Vec3(6378137, 0, 0)).norm() == 0.0);

  const Vec3 pole = llh_to_ecef({M_PI / 2, 1.23, 0.0});
  CHECK(std::abs(pole.x()) < 1e-8);
  CHECK(std::abs(pole.y()) < 1e-8);
  CHECK(pole.z() == doctest::Approx(kOracleB).epsilon(1e-12));

  const Vec3 mid = llh_to_ecef({0.8870, 0.1060, 200.0});
  CHECK((mid - kOracleMidLat).norm() < 1e-6);
}

TEST_CASE("ecef_to_llh reference points and errors") {
  const GeodeticCoord eq = ecef_to_llh(Vec3(6378137 + 100, 0, 0));
  CHECK(std::abs(eq.latitude_rad) < 1e-12);
  CHECK(std::abs(eq.longitude_rad) < 1e-12);
  CHECK(eq.height_m == doctest::Approx(100.0).epsilon(1e-9));

  const GeodeticCoord pole = ecef_to_llh(Vec3(0, 0, 6356752.31));
  CHECK(pole.latitude_rad == doctest::Approx(M_PI / 2).epsilon(1e-12));
  CHECK(pole.longitude_rad == 0.0);  // convention on the polar axis
  CHECK(pole.height_m == doctest::Approx(kOraclePoleHeight).epsilon(1e-6));

  CHECK_THROWS_AS(ecef_to_llh(Vec3(10, 10, 10)), ctnav::Error);
}

TEST_CASE("round trip over a lat/lon/height grid") {
  double worst_ecef = 0.0;
  double worst_ang = 0.0;
  for (int i = -4; i <= 4; ++i) {
    for (int j = -4; j <= 4; ++j) {
      for (double h : {-100.0, 0.0, 4321.0}) {
        GeodeticCoord p{i / 4.6 * M_PI / 2, j / 4.0 * M_PI, h};
        const Vec3 e = llh_to_ecef(p);
        const GeodeticCoord back = ecef_to_llh(e);
        worst_ang = std::max(worst_ang, std::abs(back.latitude_rad - p.latitude_rad));
        worst_ecef = std::max(worst_ecef, (llh_to_ecef(back) - e).norm());
      }
    }
  }
  CHECK(worst_ang < 1e-9);
  CHECK(worst_ecef < 1e-6);
}

TEST_CASE("llh_to_ecef monotone in height along the normal") {
  const GeodeticCoord p{0.73, -1.1, 0.0};
  double prev = llh_to_ecef(p).norm();
  for (double h = 10; h < 1e4; h *= 3) {
    const double n = llh_to_ecef({p.latitude_rad, p.longitude_rad, h}).norm();
    CHECK(n > prev);
    prev = n;
  }
}

TEST_CASE("NED DCM") {
  const Mat3 d0 = dcm_ecef_to_ned({0, 0, 0});
  Mat3 expect;
  expect << 0, 0, 1, 0, 1, 0, -1, 0, 0;
  CHECK((d0 - expect).norm() < 1e-15);

  std::mt19937_64 g(41);
  for (int i = 0; i < 10; ++i) {
    const GeodeticCoord o{testutil::unif(g, -1.5, 1.5), testutil::unif(g, -3.1, 3.1), 0.0};
    const Mat3 d = dcm_ecef_to_ned(o);
    CHECK((d * d.transpose() - Mat3::Identity()).norm() < 1e-12);
    CHECK(d.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    // Ellipsoid normal maps to pure Down = -1.
    const double sp = std::sin(o.latitude_rad), cp = std::cos(o.latitude_rad);
    const Vec3 up(cp * std::cos(o.longitude_rad), cp * std::sin(o.longitude_rad), sp);
    const Vec3 ned = d * up;
    CHECK(std::abs(ned.x()) < 1e-9);
    CHECK(std::abs(ned.y()) < 1e-9);
    CHECK(ned.z() == doctest::Approx(-1.0).epsilon(1e-9));
  }
}

TEST_CASE("ENU DCM and NED relation") {
  const Mat3 e0 = dcm_ecef_to_enu({0, 0, 0});
  Mat3 expect;
  expect << 0, 1, 0, 0, 0, 1, 1, 0, 0;
  CHECK((e0 - expect).norm() < 1e-15);

  std::mt19937_64 g(43);
  for (int i = 0; i < 10; ++i) {
    const GeodeticCoord o{testutil::unif(g, -1.5, 1.5), testutil::unif(g, -3.1, 3.1), 0.0};
    const Mat3 ned = dcm_ecef_to_ned(o);
    const Mat3 enu = dcm_ecef_to_enu(o);
    CHECK((enu.row(0) - ned.row(1)).norm() < 1e-12);  // E = N_2
    CHECK((enu.row(1) - ned.row(0)).norm() < 1e-12);  // N = N_1
    CHECK((enu.row(2) + ned.row(2)).norm() < 1e-12);  // U = -D
  }
}

TEST_CASE("euler extraction of body->NED rotation") {
  using ctnav::lie::exp_so3;
  const Vec3 rpy(0.21, -0.4, 1.9);
  const Mat3 r = exp_so3(Vec3(0, 0, rpy.z())) * exp_so3(Vec3(0, rpy.y(), 0)) *
                 exp_so3(Vec3(rpy.x(), 0, 0));
  CHECK((ned_euler(r) - rpy).norm() < 1e-12);
}
