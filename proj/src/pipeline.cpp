#include "pipeline.hpp"

#include "operators.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <cmath>
#include <stdexcept>
#include <string>

namespace r2d {

namespace {

double rel(double num, double den) { return num / std::max(den, 1e-300); }

Matrix solve_spd(const Matrix& gram, const Matrix& rhs, const char* what) {
  if (numerical_rank(gram) < gram.rows()) {
    Eigen::JacobiSVD<Matrix> svd(gram);
    double cond = svd.singularValues()(0) /
                  std::max(svd.singularValues().tail(1)(0), 1e-300);
    throw NumericError(std::string(what) +
                       " is singular (condition ~ " + std::to_string(cond) +
                       ")");
  }
  return gram.ldlt().solve(rhs);
}

// Slice block k (of j columns) out of a bold matrix.
Matrix bold_block(const Matrix& bold, int k, int j) {
  return bold.middleCols(static_cast<Eigen::Index>(k) * j, j);
}

// Least squares X * W ~= T given regressors W (rows = features) and
// targets T; returns coefficient matrix T W^T (W W^T)^{-1}.
Matrix regress(const Matrix& targets, const Matrix& regressors,
               const char* what) {
  Matrix gram = regressors * regressors.transpose();
  return solve_spd(gram, regressors * targets.transpose(), what).transpose();
}

}  // namespace

ProjectionResult stage1_project(const GridData& y_in, int i, int j,
                                Direction dir, std::optional<int> order) {
  const GridData grid =
      dir == Direction::kVertical ? y_in.transposed() : y_in;
  if (i < 1 || j < 2) throw std::invalid_argument("need i >= 1 and j >= 2");
  const int need_n = 2 * i + j - 2;
  if (grid.extent_r != need_n)
    throw std::invalid_argument(
        "grid extent " + std::to_string(grid.extent_r) +
        " does not satisfy N = 2i+j-2 = " + std::to_string(need_n));
  const int M = grid.extent_s;
  const int nyi = grid.n * i;

  Matrix yp = build_bold(grid, 0, i, j, M);
  Matrix yf = build_bold(grid, i, i, j, M);
  ProjectionResult res;
  res.O = yp.norm() == 0.0 ? Matrix::Zero(nyi, yp.cols())
                           : row_space_project(yf, yp);

  Eigen::BDCSVD<Matrix> svd(res.O, Eigen::ComputeThinU | Eigen::ComputeThinV);
  res.singular_values = svd.singularValues();
  const auto& sv = res.singular_values;

  if (order) {
    if (*order < 0 || *order > nyi)
      throw std::invalid_argument("order exceeds n_y * i");
    res.order = *order;
  } else if (sv.size() == 0 || sv(0) < 1e-300) {
    res.order = 0;  // zero data
  } else {
    int best = -1;
    double best_ratio = 0;
    int limit = std::min<int>({10, nyi - 1, static_cast<int>(sv.size()) - 1});
    for (int n = 1; n <= limit; ++n) {
      double ratio = sv(n - 1) / std::max(sv(n), 1e-300);
      if (ratio > best_ratio) {
        best_ratio = ratio;
        best = n;
      }
    }
    if (best < 0 || best_ratio < 5.0)
      throw NumericError(
          "no clear singular-value gap; specify the model order explicitly");
    res.order = best;
  }

  const int n = res.order;
  Vector root = sv.head(n).cwiseSqrt();
  res.Gamma = svd.matrixU().leftCols(n) * root.asDiagonal();
  res.Xf = root.asDiagonal() * svd.matrixV().leftCols(n).transpose();
  return res;
}

RqBlocks stage2_rq(const Matrix& xf_vh, const Matrix& wp_h,
                   const Matrix& yf_h, int n_v_i, int n_y_i) {
  if (xf_vh.rows() != n_v_i || yf_h.rows() != n_y_i)
    throw std::invalid_argument("row blocks do not match declared sizes");
  if (xf_vh.cols() != wp_h.cols() || xf_vh.cols() != yf_h.cols())
    throw std::invalid_argument("column counts differ");
  const int mid = static_cast<int>(wp_h.rows());
  Matrix stack(n_v_i + mid + n_y_i, xf_vh.cols());
  stack << xf_vh, wp_h, yf_h;
  RqResult rq = rq_decompose(stack);
  RqBlocks out;
  out.R11 = rq.L.topLeftCorner(n_v_i, n_v_i);
  out.R21 = rq.L.block(n_v_i, 0, mid, n_v_i);
  out.R22 = rq.L.block(n_v_i, n_v_i, mid, mid);
  out.R31 = rq.L.block(n_v_i + mid, 0, n_y_i, n_v_i);
  out.R32 = rq.L.block(n_v_i + mid, n_v_i, n_y_i, mid);
  out.R33 = rq.L.bottomRightCorner(n_y_i, n_y_i);
  out.Q1 = rq.Q.topRows(n_v_i);
  out.Q2 = rq.Q.middleRows(n_v_i, mid);
  out.Q3 = rq.Q.bottomRows(n_y_i);
  return out;
}

RqBlocksSplit stage2_rq_split(const Matrix& xf_vh, const Matrix& xp_vh,
                              const Matrix& yp_h, const Matrix& yf_h,
                              int n_v_i, int n_y_i) {
  if (xf_vh.cols() != xp_vh.cols() || xf_vh.cols() != yp_h.cols() ||
      xf_vh.cols() != yf_h.cols())
    throw std::invalid_argument("column counts differ");
  Matrix stack(2 * n_v_i + 2 * n_y_i, xf_vh.cols());
  stack << xf_vh, xp_vh, yp_h, yf_h;
  RqResult rq = rq_decompose(stack);
  RqBlocksSplit out;
  const int a = n_v_i, b = n_v_i, c = n_y_i, d = n_y_i;
  out.R11 = rq.L.topLeftCorner(a, a);
  out.R21_1 = rq.L.block(a, 0, b, a);
  out.R22_1 = rq.L.block(a, a, b, b);
  out.R21_2 = rq.L.block(a + b, 0, c, a);
  out.R22_2 = rq.L.block(a + b, a, c, b);
  out.R22_3 = rq.L.block(a + b, a + b, c, c);
  out.R31 = rq.L.block(a + b + c, 0, d, a);
  out.R32_1 = rq.L.block(a + b + c, a, d, b);
  out.R32_2 = rq.L.block(a + b + c, a + b, d, c);
  out.R33 = rq.L.bottomRightCorner(d, d);
  out.Q1 = rq.Q.topRows(a);
  out.Q21 = rq.Q.middleRows(a, b);
  out.Q22 = rq.Q.middleRows(a + b, c);
  out.Q3 = rq.Q.bottomRows(d);
  return out;
}

namespace {

void require_invertible_triangular(const Matrix& r, const char* what) {
  double scale = std::max(1.0, r.cwiseAbs().maxCoeff());
  for (Eigen::Index t = 0; t < r.rows(); ++t)
    if (std::abs(r(t, t)) < kRankTolerance * scale)
      throw NumericError(std::string(what) + " is rank deficient");
}

}  // namespace

Matrix recover_gamma_vh(const RqBlocks& rq, int n_y, int n_v, int i) {
  require_invertible_triangular(rq.R11, "R11");
  require_invertible_triangular(rq.R22, "R22");
  Matrix rhs =
      rq.R31 - rq.R32 * rq.R22.partialPivLu().solve(rq.R21);
  return lttss(Matrix::Identity(n_y * i, n_y * i), rq.R11, rhs, n_y, n_v, i);
}

InnovationsRecovery recover_innovations_operator(const Matrix& e_f, int n_y,
                                                 int i, int j, int M) {
  if (j <= i) throw std::invalid_argument("need j > i");
  if (e_f.rows() != static_cast<Eigen::Index>(n_y) * i ||
      e_f.cols() != static_cast<Eigen::Index>(j) * (M + 1))
    throw std::invalid_argument("E_f has unexpected dimensions");
  const int nyi = n_y * i, w = j - i + 1;

  Matrix ef1(nyi, static_cast<Eigen::Index>(w) * (M + 1));
  Matrix ef2(nyi, static_cast<Eigen::Index>(w) * (M + 1));
  for (int k = 0; k <= M; ++k) {
    Matrix blk = bold_block(e_f, k, j);
    ef1.middleCols(static_cast<Eigen::Index>(k) * w, w) = blk.leftCols(w);
    // Hankel restack of the leading innovations row.
    for (int a = 0; a < i; ++a)
      for (int c = 0; c < w; ++c)
        ef2.block(a * n_y, static_cast<Eigen::Index>(k) * w + c, n_y, 1) =
            blk.block(0, a + c, n_y, 1);
  }
  const double denom = static_cast<double>(w) * (M + 1);
  Matrix v1 = ef1 * ef2.transpose() / denom;
  Matrix v2 = ef2 * ef2.transpose() / denom;
  if (numerical_rank(v2) < v2.rows())
    throw NumericError("innovations covariance V2 is singular");

  Matrix v = lttss(Matrix::Identity(nyi, nyi), v2, v1, n_y, n_y, i);
  Matrix k0 = v.topLeftCorner(n_y, n_y);
  if (numerical_rank(k0) < n_y)
    throw NumericError("leading block K0 is singular");
  Matrix k0_inv = k0.partialPivLu().solve(Matrix::Identity(n_y, n_y));

  InnovationsRecovery out;
  // Normalize and snap the diagonal blocks to the exact identity.
  out.K_i_h = Matrix::Zero(nyi, nyi);
  for (int a = 0; a < i; ++a)
    for (int b = 0; b <= a; ++b) {
      if (a == b)
        out.K_i_h.block(a * n_y, b * n_y, n_y, n_y) =
            Matrix::Identity(n_y, n_y);
      else
        out.K_i_h.block(a * n_y, b * n_y, n_y, n_y) =
            v.block((a - b) * n_y, 0, n_y, n_y) * k0_inv;
    }

  out.E_f_h.resize(nyi, e_f.cols());
  double num = 0, den = 0;
  Matrix eye_j = Matrix::Identity(j, j);
  for (int k = 0; k <= M; ++k) {
    Matrix blk = bold_block(e_f, k, j);
    Matrix efh = hss(out.K_i_h, eye_j, blk, n_y, 1, i, j);
    out.E_f_h.middleCols(static_cast<Eigen::Index>(k) * j, j) = efh;
    num += (out.K_i_h * efh - blk).squaredNorm();
    den += blk.squaredNorm();
  }
  out.residual = rel(std::sqrt(num), std::sqrt(den));
  return out;
}

Matrix recover_future_vertical(const Matrix& yf_h, const Matrix& gamma_xf_h,
                               const Matrix& k_i_h, const Matrix& e_f_h,
                               const Matrix& gamma_i_vh, int n_v, int i, int j,
                               int M) {
  Matrix z = yf_h - gamma_xf_h - k_i_h * e_f_h;
  Matrix out(static_cast<Eigen::Index>(n_v) * i, z.cols());
  Matrix eye_j = Matrix::Identity(j, j);
  for (int k = 0; k <= M; ++k)
    out.middleCols(static_cast<Eigen::Index>(k) * j, j) =
        hss(gamma_i_vh, eye_j, bold_block(z, k, j), n_v, 1, i, j);
  return out;
}

PastRecovery recover_past(const Matrix& yp_h, const RqBlocksSplit& rq,
                          const Matrix& gamma_i_h, const Matrix& gamma_i_vh,
                          const Matrix& k_i_h, int n_v, int i, int j, int M) {
  require_invertible_triangular(rq.R22_1, "R22 (vertical past block)");
  const int n_y = static_cast<int>(gamma_i_h.rows()) / i;
  Matrix r22i_r21 =
      rq.R22_1.triangularView<Eigen::Lower>().solve(rq.R21_1);
  Matrix zp = yp_h - (rq.R21_2 - rq.R22_2 * r22i_r21) * rq.Q1 -
              rq.R22_3 * rq.Q22;
  PastRecovery out;
  Matrix eye_j = Matrix::Identity(j, j);
  out.Xp_vh.resize(static_cast<Eigen::Index>(n_v) * i, yp_h.cols());
  for (int k = 0; k <= M; ++k)
    out.Xp_vh.middleCols(static_cast<Eigen::Index>(k) * j, j) =
        hss(gamma_i_vh, eye_j, bold_block(zp, k, j), n_v, 1, i, j);

  Matrix perp = orth_complement(gamma_i_h);
  Matrix yp_clean = yp_h - gamma_i_vh * out.Xp_vh;
  Matrix yp2 = perp * yp_clean;
  Matrix perp_k = perp * k_i_h;
  // The innovations seen through perp * K are determined only up to the
  // state dimension (trade-off against the window's initial state), so the
  // structured solve discards that many modes and takes the minimum-norm
  // completion.
  const int ambiguous = static_cast<int>(gamma_i_h.cols());
  out.Ep_h.resize(static_cast<Eigen::Index>(n_y) * i, yp_h.cols());
  for (int k = 0; k <= M; ++k)
    out.Ep_h.middleCols(static_cast<Eigen::Index>(k) * j, j) = hss(
        perp_k, eye_j, bold_block(yp2, k, j), n_y, 1, i, j, ambiguous);

  Matrix gamma_pinv = pseudo_inverse(gamma_i_h);
  out.Xp_h = gamma_pinv * (yp_clean - k_i_h * out.Ep_h);
  out.reconstruction_residual =
      rel((gamma_i_h * out.Xp_h + gamma_i_vh * out.Xp_vh +
           k_i_h * out.Ep_h - yp_h)
              .norm(),
          yp_h.norm());
  return out;
}

DynamicsRegression regress_dynamics(const Matrix& xf_h, const Matrix& xp_h,
                                    const Matrix& xp_vh, const Matrix& ep_h,
                                    int n_h, int n_v, int n_y, int i) {
  const double jbar = static_cast<double>(xf_h.cols());
  Matrix h(xp_h.rows() + xp_vh.rows() + ep_h.rows(), xp_h.cols());
  h << xp_h, xp_vh, ep_h;
  Matrix z1 = h * h.transpose() / jbar;
  Matrix z2 = xf_h * h.transpose() / jbar;
  DynamicsRegression out;
  out.J = solve_spd(z1, z2.transpose(), "regressor covariance Z1").transpose();
  out.A1_i = out.J.leftCols(n_h);
  out.Phi_i_vh = out.J.middleCols(n_h, static_cast<Eigen::Index>(n_v) * i);
  out.L_i_h = out.J.rightCols(static_cast<Eigen::Index>(n_y) * i);
  out.residual = rel((xf_h - out.J * h).norm(), xf_h.norm());
  return out;
}

AssembledStates assemble_states(const Matrix& xp_h, const Matrix& xm_h,
                                const Matrix& xf_plus_h, int n, int i, int j,
                                int M) {
  if (xp_h.rows() != n || xm_h.rows() != n || xf_plus_h.rows() != n)
    throw std::invalid_argument("state rows do not match order");
  const int N = 2 * i + j - 2;
  AssembledStates out;
  out.grid = GridData(n, N, M);
  double disc = 0;
  long disc_count = 0;
  for (int k = 0; k <= M; ++k) {
    Matrix past = bold_block(xp_h, k, j);
    Matrix mid = bold_block(xm_h, k, j);
    Matrix fut = bold_block(xf_plus_h, k, j);
    for (int r = 0; r <= N; ++r) {
      // Bands cover rows [0, j-1], [i, i+j-1], [2i, 2i+j-1]; prefer the
      // mid band, fall back to past for the leading edge and future for
      // the trailing edge, and track the disagreement on the overlaps.
      if (r < i) {
        out.grid.at(r, k) = past.col(r);
      } else if (r < i + j) {
        out.grid.at(r, k) = mid.col(r - i);
        if (r < j) {
          disc += (past.col(r) - mid.col(r - i)).squaredNorm();
          ++disc_count;
        }
        if (r >= 2 * i) {
          disc += (fut.col(r - 2 * i) - mid.col(r - i)).squaredNorm();
          ++disc_count;
        }
      } else {
        out.grid.at(r, k) = fut.col(r - 2 * i);
      }
    }
  }
  out.overlap_discrepancy =
      disc_count > 0 ? std::sqrt(disc / static_cast<double>(disc_count)) : 0.0;
  out.initial.resize(n, M + 1);
  for (int k = 0; k <= M; ++k) out.initial.col(k) = out.grid.at(0, k);
  return out;
}

FilterResult filter_states(const RoesserModel& m, const GridData& y) {
  m.check_dimensions();
  if (y.n != m.n_y) throw std::invalid_argument("output dimension mismatch");
  const int N = y.extent_r, M = y.extent_s;
  FilterResult out{GridData(m.n_h, N, M), GridData(m.n_v, N, M),
                   GridData(m.n_y, N, M)};
  for (int r = 0; r <= N; ++r)
    for (int s = 0; s <= M; ++s) {
      Vector xh = out.xh.at(r, s);
      Vector xv = out.xv.at(r, s);
      Vector e = y.at(r, s) - m.C1 * xh - m.C2 * xv;
      out.e.at(r, s) = e;
      if (r + 1 <= N) out.xh.at(r + 1, s) = m.A1 * xh + m.A2 * xv + m.K1 * e;
      if (s + 1 <= M) out.xv.at(r, s + 1) = m.A3 * xh + m.A4 * xv + m.K2 * e;
    }
  return out;
}

RoesserModel transposed_model(const RoesserModel& m) {
  RoesserModel t;
  t.n_h = m.n_v;
  t.n_v = m.n_h;
  t.n_y = m.n_y;
  t.A1 = m.A4;
  t.A2 = m.A3;
  t.A3 = m.A2;
  t.A4 = m.A1;
  t.C1 = m.C2;
  t.C2 = m.C1;
  t.K1 = m.K2;
  t.K2 = m.K1;
  t.Re = m.Re;
  return t;
}

IdentificationResult recover_parameters(const GridData& xh_grid,
                                        const GridData& xv_grid,
                                        const GridData& y) {
  const int N = y.extent_r, M = y.extent_s;
  if (xh_grid.extent_r != N || xh_grid.extent_s != M ||
      xv_grid.extent_r != N || xv_grid.extent_s != M)
    throw std::invalid_argument("grid extents differ");
  const int n_h = xh_grid.n, n_v = xv_grid.n, n_y = y.n;
  const long sites = static_cast<long>(N + 1) * (M + 1);

  Matrix states(n_h + n_v, sites), outs(n_y, sites);
  long c = 0;
  for (int r = 0; r <= N; ++r)
    for (int s = 0; s <= M; ++s, ++c) {
      states.col(c).head(n_h) = xh_grid.at(r, s);
      states.col(c).tail(n_v) = xv_grid.at(r, s);
      outs.col(c) = y.at(r, s);
    }
  Matrix cmat = regress(outs, states, "state covariance (output regression)");
  Matrix resid = outs - cmat * states;
  Matrix re = resid * resid.transpose() / static_cast<double>(sites);

  // Innovations per site for the dynamics regression.
  GridData e_grid(n_y, N, M);
  c = 0;
  for (int r = 0; r <= N; ++r)
    for (int s = 0; s <= M; ++s, ++c) e_grid.at(r, s) = resid.col(c);

  auto dyn = [&](bool horizontal) {
    const int rows = horizontal ? n_h : n_v;
    const long cnt = horizontal ? static_cast<long>(N) * (M + 1)
                                : static_cast<long>(N + 1) * M;
    Matrix reg(n_h + n_v + n_y, cnt), tgt(rows, cnt);
    long t = 0;
    for (int r = 0; r <= (horizontal ? N - 1 : N); ++r)
      for (int s = 0; s <= (horizontal ? M : M - 1); ++s, ++t) {
        reg.col(t).head(n_h) = xh_grid.at(r, s);
        reg.col(t).segment(n_h, n_v) = xv_grid.at(r, s);
        reg.col(t).tail(n_y) = e_grid.at(r, s);
        tgt.col(t) = horizontal ? Vector(xh_grid.at(r + 1, s))
                                : Vector(xv_grid.at(r, s + 1));
      }
    return regress(tgt, reg, "state covariance (dynamics regression)");
  };
  Matrix row_h = dyn(true), row_v = dyn(false);

  IdentificationResult out;
  RoesserModel& m = out.model;
  m.n_h = n_h;
  m.n_v = n_v;
  m.n_y = n_y;
  m.A1 = row_h.leftCols(n_h);
  m.A2 = row_h.middleCols(n_h, n_v);
  m.K1 = row_h.rightCols(n_y);
  m.A3 = row_v.leftCols(n_h);
  m.A4 = row_v.middleCols(n_h, n_v);
  m.K2 = row_v.rightCols(n_y);
  m.C1 = cmat.leftCols(n_h);
  m.C2 = cmat.rightCols(n_v);
  m.Re = re;
  m.R = re;
  m.S = m.K() * re;
  m.Q = m.K() * re * m.K().transpose();

  out.Pi = states * states.transpose() / static_cast<double>(sites);
  out.G = m.A() * out.Pi * m.C().transpose() + *m.S;
  out.Lambda00 = m.C() * out.Pi * m.C().transpose() + re;
  out.xh_grid = xh_grid;
  out.xv_grid = xv_grid;
  out.initial_h.resize(n_h, M + 1);
  for (int s = 0; s <= M; ++s) out.initial_h.col(s) = xh_grid.at(0, s);
  out.initial_v.resize(n_v, N + 1);
  for (int r = 0; r <= N; ++r) out.initial_v.col(r) = xv_grid.at(r, 0);
  out.diagnostics["output_regression_residual"] =
      rel(resid.norm(), outs.norm());
  return out;
}

namespace {

// One stage-2 refinement pass along the r direction of `y`, given the
// extended observability matrix from stage 1 (which fixes the state basis)
// and the current cross-direction state grid. Returns the refreshed
// along-r state grid plus diagnostics.
struct StageTwoPass {
  GridData grid;
  Matrix initial;
  std::map<std::string, double> diagnostics;
};

StageTwoPass stage2_pass(const GridData& y, const GridData& xv_grid,
                         const Matrix& gamma_i_h, int i, int j) {
  const int M = y.extent_s;
  const int n_y = y.n, n_v = xv_grid.n;
  const int n_h = static_cast<int>(gamma_i_h.cols());
  const int nyi = n_y * i, nvi = n_v * i;

  Matrix yp = build_bold(y, 0, i, j, M);
  Matrix yf = build_bold(y, i, i, j, M);
  Matrix xf_vh = build_bold(xv_grid, i, i, j, M);
  Matrix xp_vh_in = build_bold(xv_grid, 0, i, j, M);
  Matrix wp(xp_vh_in.rows() + yp.rows(), yp.cols());
  wp << xp_vh_in, yp;

  auto rq = stage2_rq(xf_vh, wp, yf, nvi, nyi);
  Matrix gamma_vh = recover_gamma_vh(rq, n_y, n_v, i);
  Matrix e_f = rq.R33 * rq.Q3;
  auto innov = recover_innovations_operator(e_f, n_y, i, j, M);
  Matrix gamma_xf =
      rq.R32 * rq.R22.triangularView<Eigen::Lower>().solve(wp);
  Matrix xf_vh_new = recover_future_vertical(
      yf, gamma_xf, innov.K_i_h, innov.E_f_h, gamma_vh, n_v, i, j, M);

  // Refine the own-direction observability basis on the cleaned future:
  // once the cross-state and innovations contributions are subtracted,
  // the residual is Gamma_i^h X_f^h plus noise, so its dominant left
  // singular subspace is a far better basis than the raw first-stage
  // projection (which the other channel's spatial correlation can
  // contaminate badly on short windows).
  Matrix cleaned = yf - gamma_vh * xf_vh_new - innov.K_i_h * innov.E_f_h;
  Matrix gamma_ref = gamma_i_h;
  {
    Eigen::BDCSVD<Matrix> svd(cleaned, Eigen::ComputeThinU);
    if (svd.singularValues()(n_h - 1) > 0.0)
      gamma_ref = svd.matrixU().leftCols(n_h) *
                  svd.singularValues().head(n_h).cwiseSqrt().asDiagonal();
  }

  auto rq2 = stage2_rq_split(xf_vh_new, xp_vh_in, yp, yf, nvi, nyi);
  auto past = recover_past(yp, rq2, gamma_ref, gamma_vh, innov.K_i_h,
                           n_v, i, j, M);

  Matrix gamma_pinv = pseudo_inverse(gamma_ref);
  Matrix hf(xf_vh_new.rows() + innov.E_f_h.rows() + yf.rows(), yf.cols());
  hf << xf_vh_new, innov.E_f_h, yf;
  Matrix t2(n_h, hf.rows());
  t2 << -gamma_pinv * gamma_vh, -gamma_pinv * innov.K_i_h, gamma_pinv;
  Matrix xf_h = t2 * hf;

  auto dynr = regress_dynamics(xf_h, past.Xp_h, past.Xp_vh, past.Ep_h, n_h,
                               n_v, n_y, i);
  Matrix t1(n_h, hf.rows());
  t1 << dynr.Phi_i_vh - dynr.A1_i * gamma_pinv * gamma_vh,
      dynr.L_i_h - dynr.A1_i * gamma_pinv * innov.K_i_h,
      dynr.A1_i * gamma_pinv;
  Matrix xf_plus = t1 * hf;

  auto assembled = assemble_states(past.Xp_h, xf_h, xf_plus, n_h, i, j, M);
  StageTwoPass out;
  out.grid = std::move(assembled.grid);
  out.initial = std::move(assembled.initial);
  out.diagnostics["overlap_discrepancy"] = assembled.overlap_discrepancy;
  out.diagnostics["innovations_residual"] = innov.residual;
  out.diagnostics["past_reconstruction_residual"] =
      past.reconstruction_residual;
  out.diagnostics["dynamics_residual"] = dynr.residual;
  return out;
}

}  // namespace

IdentificationResult identify(const GridData& y, const IdentifyOptions& opts) {
  const int N = y.extent_r, M = y.extent_s;
  const int i = opts.i;
  const int j = N + 2 - 2 * i;
  if (i < 1 || j < i + 1)
    throw std::invalid_argument(
        "grid too small along r: need N = 2i+j-2 with j > i (N = " +
        std::to_string(N) + ", i = " + std::to_string(i) + ")");
  int i_v = std::min(i, (M + 1) / 3);
  if (i_v < 1)
    throw std::invalid_argument("grid too small along s for a vertical pass");
  const int j_v = M + 2 - 2 * i_v;

  auto proj_h = stage1_project(y, i, j, Direction::kHorizontal, opts.order_h);
  auto proj_v = stage1_project(y, i_v, j_v, Direction::kVertical,
                               opts.order_v);
  const int n_h = proj_h.order, n_v = proj_v.order;
  if (n_h < 1 || n_v < 1)
    throw NumericError("selected order is zero; data carries no state");

  // Joint regression of the parameters on the overlap band where both
  // stage-1 state estimates exist: r in [i, i+j-1], s in [i_v, i_v+j_v-1].
  auto xh_at = [&](int r, int s) {
    return proj_h.Xf.col(static_cast<Eigen::Index>(s) * j + (r - i));
  };
  auto xv_at = [&](int r, int s) {
    return proj_v.Xf.col(static_cast<Eigen::Index>(r) * j_v + (s - i_v));
  };
  const long band = static_cast<long>(j) * j_v;
  Matrix states(n_h + n_v, band), outs(y.n, band);
  long c = 0;
  for (int r = i; r < i + j; ++r)
    for (int s = i_v; s < i_v + j_v; ++s, ++c) {
      states.col(c).head(n_h) = xh_at(r, s);
      states.col(c).tail(n_v) = xv_at(r, s);
      outs.col(c) = y.at(r, s);
    }
  Matrix cmat = regress(outs, states, "overlap-band state covariance");
  Matrix resid = outs - cmat * states;
  Matrix re = resid * resid.transpose() / static_cast<double>(band);
  auto e_at = [&](int r, int s) {
    return resid.col(static_cast<Eigen::Index>(r - i) * j_v + (s - i_v));
  };

  auto band_dyn = [&](bool horizontal) {
    const long cnt = horizontal ? static_cast<long>(j - 1) * j_v
                                : static_cast<long>(j) * (j_v - 1);
    const int rows = horizontal ? n_h : n_v;
    Matrix reg(n_h + n_v + y.n, cnt), tgt(rows, cnt);
    long t = 0;
    for (int r = i; r < i + j - (horizontal ? 1 : 0); ++r)
      for (int s = i_v; s < i_v + j_v - (horizontal ? 0 : 1); ++s, ++t) {
        reg.col(t).head(n_h) = xh_at(r, s);
        reg.col(t).segment(n_h, n_v) = xv_at(r, s);
        reg.col(t).tail(y.n) = e_at(r, s);
        tgt.col(t) = horizontal ? Vector(xh_at(r + 1, s))
                                : Vector(xv_at(r, s + 1));
      }
    return regress(tgt, reg, "overlap-band dynamics covariance");
  };
  Matrix row_h = band_dyn(true), row_v = band_dyn(false);

  RoesserModel m0;
  m0.n_h = n_h;
  m0.n_v = n_v;
  m0.n_y = y.n;
  m0.A1 = row_h.leftCols(n_h);
  m0.A2 = row_h.middleCols(n_h, n_v);
  m0.K1 = row_h.rightCols(y.n);
  m0.A3 = row_v.leftCols(n_h);
  m0.A4 = row_v.middleCols(n_h, n_v);
  m0.K2 = row_v.rightCols(y.n);
  m0.C1 = cmat.leftCols(n_h);
  m0.C2 = cmat.rightCols(n_v);
  m0.Re = 0.5 * (re + re.transpose());

  // Whitening filter rebuilds consistent full state grids in the stage-1
  // bases (the data's boundary states are zero by construction).
  auto filt = filter_states(m0, y);
  GridData xh_grid = std::move(filt.xh);
  GridData xv_grid = std::move(filt.xv);

  std::map<std::string, double> diags;
  diags["stage1_output_residual"] = rel(resid.norm(), outs.norm());
  for (int it = 0; it < opts.iterations; ++it) {
    GridData prev_h = xh_grid, prev_v = xv_grid;
    // The vertical pass runs first: the bootstrap filter produces a
    // reliable horizontal grid (the long-j geometry makes the first-stage
    // horizontal subspace well determined) while its vertical grid is
    // weak, so the pass whose cross-channel input is trustworthy must
    // refine the weak channel before the horizontal pass consumes it.
    auto pass_v = stage2_pass(y.transposed(), xh_grid.transposed(),
                              proj_v.Gamma, i_v, j_v);
    xv_grid = pass_v.grid.transposed();
    auto pass_h = stage2_pass(y, xv_grid, proj_h.Gamma, i, j);
    xh_grid = std::move(pass_h.grid);
    for (const auto& [k, v] : pass_h.diagnostics)
      diags["h_" + k] = v;
    for (const auto& [k, v] : pass_v.diagnostics)
      diags["v_" + k] = v;
    diags["state_change_h"] =
        rel((xh_grid.values - prev_h.values).norm(), prev_h.values.norm());
    diags["state_change_v"] =
        rel((xv_grid.values - prev_v.values).norm(), prev_v.values.norm());
    if (it + 1 < opts.iterations) {
      // Project the grids back onto an exactly model-consistent field
      // before the next refinement round; this keeps the alternating
      // passes from amplifying correlated state errors.
      auto refit = recover_parameters(xh_grid, xv_grid, y);
      auto refilt = filter_states(refit.model, y);
      xh_grid = std::move(refilt.xh);
      xv_grid = std::move(refilt.xv);
    }
  }

  auto result = recover_parameters(xh_grid, xv_grid, y);
  result.diagnostics.insert(diags.begin(), diags.end());
  return result;
}

}  // namespace r2d
