#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hankel.hpp"
#include "model.hpp"

using namespace r2d;

namespace {

/// Scalar ramp grid y_{r,s} = r.
GridData ramp(int N, int M) {
  GridData g(1, N, M);
  for (int r = 0; r <= N; ++r)
    for (int s = 0; s <= M; ++s) g.at(r, s)(0) = r;
  return g;
}

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

RoesserModel innovations_scalar() {
  RoesserModel m;
  m.n_h = m.n_v = m.n_y = 1;
  m.A1 = scalar(0.5);
  m.A2 = scalar(0.2);
  m.A3 = scalar(0.1);
  m.A4 = scalar(0.4);
  m.C1 = scalar(1.0);
  m.C2 = scalar(0.7);
  m.K1 = scalar(0.3);
  m.K2 = scalar(-0.2);
  m.Re = scalar(1.0);
  return m;
}

}  // namespace

TEST_CASE("hankel block from a ramp grid") {
  GridData g = ramp(8, 0);
  SUBCASE("past block, r_start = 0") {
    Matrix h = build_hankel(g, 0, 0, 2, 3);
    Matrix expect(2, 3);
    expect << 0, 1, 2, 1, 2, 3;
    CHECK((h - expect).norm() == 0.0);
  }
  SUBCASE("future block, r_start = i = 2") {
    Matrix h = build_hankel(g, 0, 2, 2, 3);
    Matrix expect(2, 3);
    expect << 2, 3, 4, 3, 4, 5;
    CHECK((h - expect).norm() == 0.0);
  }
  SUBCASE("depth 1 degenerates to a row slice") {
    Matrix h = build_hankel(g, 0, 3, 1, 4);
    Matrix expect(1, 4);
    expect << 3, 4, 5, 6;
    CHECK((h - expect).norm() == 0.0);
  }
  SUBCASE("out-of-range bounds are named") {
    CHECK_THROWS_AS(build_hankel(g, 0, 6, 2, 3), std::out_of_range);
    CHECK_THROWS_AS(build_hankel(g, 1, 0, 2, 3), std::out_of_range);
  }
}

TEST_CASE("bold concatenation over k") {
  GridData g(1, 6, 2);
  for (int r = 0; r <= 6; ++r)
    for (int s = 0; s <= 2; ++s) g.at(r, s)(0) = 10.0 * s + r;
  Matrix bold = build_bold(g, 0, 2, 3, 2);
  CHECK(bold.cols() == 9);  // jbar = j (M+1)
  for (int k = 0; k <= 2; ++k) {
    Matrix blk = build_hankel(g, k, 0, 2, 3);
    CHECK((bold.middleCols(3 * k, 3) - blk).norm() == 0.0);
  }
  // M = 0 collapses to the single block
  CHECK((build_bold(g, 0, 2, 3, 0) - build_hankel(g, 0, 0, 2, 3)).norm() ==
        0.0);
}

TEST_CASE("star matrix is upper block-Toeplitz") {
  Matrix b0(1, 2), b1(1, 2);
  b0 << 1, 2;
  b1 << 3, 4;
  SUBCASE("single generator") {
    CHECK((build_star({b0}) - b0).norm() == 0.0);
  }
  SUBCASE("two generators") {
    Matrix star = build_star({b0, b1});
    Matrix expect(2, 4);
    expect << 1, 2, 3, 4, 0, 0, 1, 2;
    CHECK((star - expect).norm() == 0.0);
  }
  SUBCASE("mismatched blocks rejected") {
    CHECK_THROWS_AS(build_star({b0, Matrix::Zero(2, 2)}),
                    std::invalid_argument);
  }
}

TEST_CASE("empirical autocovariance: constant grid") {
  GridData g(2, 5, 5);
  Vector c(2);
  c << 1.0, -2.0;
  for (int r = 0; r <= 5; ++r)
    for (int s = 0; s <= 5; ++s) g.at(r, s) = c;
  Matrix expect = c * c.transpose();
  CHECK((empirical_autocovariance(g, 0, 0) - expect).norm() < 1e-14);
  CHECK((empirical_autocovariance(g, 2, 1) - expect).norm() < 1e-14);
}

TEST_CASE("empirical autocovariance: white noise has vanishing lag (1,0)") {
  RoesserModel white = innovations_scalar();
  white.A1 = white.A2 = white.A3 = white.A4 = scalar(0.0);
  white.K1 = white.K2 = scalar(0.0);
  auto sim = simulate(white, 200, 200, 11);
  int samples = 200 * 201;
  double lag = empirical_autocovariance(sim.y, 1, 0)(0, 0);
  // 3 sigma band for the mean of products of independent unit normals
  CHECK(std::abs(lag) < 3.0 / std::sqrt(static_cast<double>(samples)));
}

TEST_CASE("empirical autocovariance matches theory on a 1-D model") {
  // n_v made inert so the vertical zero boundary does not bias the sample.
  RoesserModel m = innovations_scalar();
  m.A2 = scalar(0.0);
  m.A3 = scalar(0.0);
  m.C2 = scalar(0.0);
  m.K2 = scalar(0.0);
  auto covs = compute_covariances(m);
  auto sim = simulate(m, 300, 300, 5);
  double hat = empirical_autocovariance(sim.y, 0, 0)(0, 0);
  double theory = covs.Lambda00(0, 0);
  CHECK(std::abs(hat - theory) / theory < 0.05);
}
