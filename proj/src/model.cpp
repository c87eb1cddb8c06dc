#include "model.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace r2d {

namespace {

constexpr int kMaxIterations = 100000;
constexpr double kFixedPointTol = 1e-13;

double min_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()),
                                           Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

bool is_positive_definite(const Matrix& m) { return min_eigenvalue(m) > 0; }

bool is_positive_semidefinite(const Matrix& m) {
  double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return min_eigenvalue(m) > -1e-10 * scale;
}

Matrix cholesky_factor(const Matrix& m, const char* what) {
  Eigen::LLT<Matrix> llt(0.5 * (m + m.transpose()));
  if (llt.info() != Eigen::Success)
    throw NumericError(std::string(what) + " is not positive definite");
  return llt.matrixL();
}

double rel_change(const Matrix& next, const Matrix& prev) {
  double denom = std::max(1.0, prev.norm());
  return (next - prev).norm() / denom;
}

// Keep only the (h,h) and (v,v) blocks; the constrained stationary and
// filtering covariances live in this block-diagonal subspace.
Matrix block_diag_part(const Matrix& x, int n_h) {
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  const int n_v = static_cast<int>(x.rows()) - n_h;
  out.topLeftCorner(n_h, n_h) = x.topLeftCorner(n_h, n_h);
  out.bottomRightCorner(n_v, n_v) = x.bottomRightCorner(n_v, n_v);
  return out;
}

// Coupled diagonal stationary solve for
//   X_h = A1 X_h A1^T + A2 X_v A2^T + W_hh
//   X_v = A3 X_h A3^T + A4 X_v A4^T + W_vv.
std::pair<Matrix, Matrix> diagonal_stationary(const RoesserModel& m,
                                              const Matrix& w_hh,
                                              const Matrix& w_vv,
                                              double* residual, int* iters) {
  Matrix xh = Matrix::Zero(m.n_h, m.n_h);
  Matrix xv = Matrix::Zero(m.n_v, m.n_v);
  int it = 0;
  for (; it < kMaxIterations; ++it) {
    Matrix nh = m.A1 * xh * m.A1.transpose() + m.A2 * xv * m.A2.transpose() +
                w_hh;
    Matrix nv = m.A3 * xh * m.A3.transpose() + m.A4 * xv * m.A4.transpose() +
                w_vv;
    double change = std::max(rel_change(nh, xh), rel_change(nv, xv));
    xh = nh;
    xv = nv;
    if (change < kFixedPointTol) break;
  }
  if (it >= kMaxIterations)
    throw NumericError("stationary covariance iteration did not converge");
  if (residual) {
    Matrix rh = xh - m.A1 * xh * m.A1.transpose() -
                m.A2 * xv * m.A2.transpose() - w_hh;
    Matrix rv = xv - m.A3 * xh * m.A3.transpose() -
                m.A4 * xv * m.A4.transpose() - w_vv;
    *residual = std::max(rh.norm(), rv.norm());
  }
  if (iters) *iters = it + 1;
  return {xh, xv};
}

}  // namespace

Matrix RoesserModel::A() const {
  Matrix a(n_x(), n_x());
  a << A1, A2, A3, A4;
  return a;
}

Matrix RoesserModel::C() const {
  Matrix c(n_y, n_x());
  c << C1, C2;
  return c;
}

Matrix RoesserModel::K() const {
  Matrix k(n_x(), n_y);
  k << K1, K2;
  return k;
}

void RoesserModel::check_dimensions() const {
  auto expect = [](const Matrix& m, int rows, int cols, const char* name) {
    if (m.rows() != rows || m.cols() != cols)
      throw std::invalid_argument(std::string("bad shape for ") + name);
  };
  if (n_h < 0 || n_v < 0 || n_y <= 0 || n_x() <= 0)
    throw std::invalid_argument("state and output orders must be positive");
  expect(A1, n_h, n_h, "A1");
  expect(A2, n_h, n_v, "A2");
  expect(A3, n_v, n_h, "A3");
  expect(A4, n_v, n_v, "A4");
  expect(C1, n_y, n_h, "C1");
  expect(C2, n_y, n_v, "C2");
  expect(K1, n_h, n_y, "K1");
  expect(K2, n_v, n_y, "K2");
  expect(Re, n_y, n_y, "Re");
  if (Q) expect(*Q, n_x(), n_x(), "Q");
  if (R) expect(*R, n_y, n_y, "R");
  if (S) expect(*S, n_x(), n_y, "S");
  if (Q.has_value() != R.has_value() || Q.has_value() != S.has_value())
    throw std::invalid_argument("Q, R, S must be supplied together");
}

ValidationReport validate_model(const RoesserModel& m) {
  m.check_dimensions();
  ValidationReport rep;
  rep.spectral_radius = m.A().eigenvalues().cwiseAbs().maxCoeff();
  rep.stable = rep.spectral_radius < 1.0;
  if (!rep.stable) rep.failures.push_back("spectral radius >= 1");
  rep.re_positive_definite = is_positive_definite(m.Re);
  if (!rep.re_positive_definite)
    rep.failures.push_back("innovations covariance not positive definite");
  if (m.Q) {
    Matrix joint(m.n_x() + m.n_y, m.n_x() + m.n_y);
    joint << *m.Q, *m.S, m.S->transpose(), *m.R;
    rep.joint_noise_psd = is_positive_semidefinite(joint);
    rep.q_psd = is_positive_semidefinite(*m.Q);
    rep.r_positive_definite = is_positive_definite(*m.R);
    if (!rep.joint_noise_psd)
      rep.failures.push_back("[[Q,S],[S',R]] not positive semidefinite");
    if (!rep.q_psd) rep.failures.push_back("Q not positive semidefinite");
    if (!rep.r_positive_definite)
      rep.failures.push_back("R not positive definite");
  }
  if (rep.stable) {
    auto lyap = solve_lyapunov(m);
    rep.pi_positive_definite =
        is_positive_definite(lyap.Pi_h) && is_positive_definite(lyap.Pi_v);
    if (!rep.pi_positive_definite)
      rep.failures.push_back("stationary state covariance not positive definite");
    Matrix q_hv = m.Q ? m.Q->topRightCorner(m.n_h, m.n_v)
                      : Matrix(m.K1 * m.Re * m.K2.transpose());
    rep.pi_hv_norm = (m.A1 * lyap.Pi_h * m.A3.transpose() +
                      m.A2 * lyap.Pi_v * m.A4.transpose() + q_hv)
                         .norm();
  } else {
    rep.pi_positive_definite = false;
  }
  rep.pass = rep.failures.empty();
  return rep;
}

LyapunovResult solve_lyapunov(const RoesserModel& m) {
  Matrix q = m.Q ? *m.Q : Matrix(m.K() * m.Re * m.K().transpose());
  LyapunovResult res;
  std::tie(res.Pi_h, res.Pi_v) = diagonal_stationary(
      m, q.topLeftCorner(m.n_h, m.n_h), q.bottomRightCorner(m.n_v, m.n_v),
      &res.residual, &res.iterations);
  return res;
}

Matrix state_update_covariance(const RoesserModel& m, const Matrix& pi_h,
                               const Matrix& pi_v) {
  Matrix pi = Matrix::Zero(m.n_x(), m.n_x());
  pi.topLeftCorner(m.n_h, m.n_h) = pi_h;
  pi.bottomRightCorner(m.n_v, m.n_v) = pi_v;
  Matrix q = m.Q ? *m.Q : Matrix(m.K() * m.Re * m.K().transpose());
  return m.A() * pi * m.A().transpose() + q;
}

RiccatiResult solve_riccati_forward(const RoesserModel& m,
                                    const Matrix& lambda00, const Matrix& g) {
  const Matrix a = m.A(), c = m.C();
  Matrix p = Matrix::Zero(m.n_x(), m.n_x());
  RiccatiResult res;
  int it = 0;
  for (; it < kMaxIterations; ++it) {
    Matrix re = lambda00 - c * p * c.transpose();
    if (min_eigenvalue(re) <= 0)
      throw NumericError("innovations covariance lost positive definiteness");
    Matrix gp = g - a * p * c.transpose();
    Matrix next = a * p * a.transpose() +
                  gp * re.ldlt().solve(gp.transpose());
    next = block_diag_part(0.5 * (next + next.transpose()), m.n_h);
    double change = rel_change(next, p);
    p = next;
    if (change < kFixedPointTol) break;
  }
  if (it >= kMaxIterations)
    throw NumericError("forward Riccati iteration did not converge");
  res.P = p;
  res.Re = lambda00 - c * p * c.transpose();
  Matrix gp = g - a * p * c.transpose();
  res.K = gp * res.Re.ldlt().solve(Matrix::Identity(m.n_y, m.n_y));
  res.residual =
      (p - block_diag_part(a * p * a.transpose() +
                               gp * res.Re.ldlt().solve(gp.transpose()),
                           m.n_h))
          .norm();
  res.iterations = it + 1;
  return res;
}

RiccatiResult solve_riccati_error(const RoesserModel& m) {
  if (!m.Q) throw std::invalid_argument("error Riccati requires Q, R, S");
  const Matrix a = m.A(), c = m.C();
  Matrix sigma = Matrix::Zero(m.n_x(), m.n_x());
  RiccatiResult res;
  int it = 0;
  for (; it < kMaxIterations; ++it) {
    Matrix rt = c * sigma * c.transpose() + *m.R;
    if (min_eigenvalue(rt) <= 0)
      throw NumericError("output covariance lost positive definiteness");
    Matrix gs = a * sigma * c.transpose() + *m.S;
    Matrix next = a * sigma * a.transpose() + *m.Q -
                  gs * rt.ldlt().solve(gs.transpose());
    next = block_diag_part(0.5 * (next + next.transpose()), m.n_h);
    double change = rel_change(next, sigma);
    sigma = next;
    if (change < kFixedPointTol) break;
  }
  if (it >= kMaxIterations)
    throw NumericError("error Riccati iteration did not converge");
  Matrix rt = c * sigma * c.transpose() + *m.R;
  Matrix gs = a * sigma * c.transpose() + *m.S;
  res.P = sigma;
  res.Re = rt;
  res.K = gs * rt.ldlt().solve(Matrix::Identity(m.n_y, m.n_y));
  res.residual =
      (sigma - block_diag_part(a * sigma * a.transpose() + *m.Q -
                                   gs * rt.ldlt().solve(gs.transpose()),
                               m.n_h))
          .norm();
  res.iterations = it + 1;
  return res;
}

CovarianceSet compute_covariances(const RoesserModel& m) {
  m.check_dimensions();
  CovarianceSet cs;
  auto lyap = solve_lyapunov(m);
  cs.Pi_h = lyap.Pi_h;
  cs.Pi_v = lyap.Pi_v;
  Matrix q_hv = m.Q ? m.Q->topRightCorner(m.n_h, m.n_v)
                    : Matrix(m.K1 * m.Re * m.K2.transpose());
  cs.Pi_hv = m.A1 * cs.Pi_h * m.A3.transpose() +
             m.A2 * cs.Pi_v * m.A4.transpose() + q_hv;

  Matrix pi = Matrix::Zero(m.n_x(), m.n_x());
  pi.topLeftCorner(m.n_h, m.n_h) = cs.Pi_h;
  pi.bottomRightCorner(m.n_v, m.n_v) = cs.Pi_v;

  if (m.Q) {
    cs.Lambda00 = m.C() * pi * m.C().transpose() + *m.R;
    cs.G = m.A() * pi * m.C().transpose() + *m.S;
    auto fwd = solve_riccati_forward(m, cs.Lambda00, cs.G);
    auto err = solve_riccati_error(m);
    cs.P_h = fwd.P.topLeftCorner(m.n_h, m.n_h);
    cs.P_v = fwd.P.bottomRightCorner(m.n_v, m.n_v);
    cs.Sigma_h = err.P.topLeftCorner(m.n_h, m.n_h);
    cs.Sigma_v = err.P.bottomRightCorner(m.n_v, m.n_v);
    cs.Re = fwd.Re;
    cs.K = fwd.K;
    cs.gain_agreement = (fwd.K - err.K).norm();
    cs.riccati_residual = std::max(
        {fwd.residual, err.residual, (pi - fwd.P - err.P).norm()});
  } else {
    // Innovations form: the state is its own estimate, so P coincides with
    // the stationary covariance above and the error covariance vanishes.
    cs.P_h = cs.Pi_h;
    cs.P_v = cs.Pi_v;
    cs.Sigma_h = Matrix::Zero(m.n_h, m.n_h);
    cs.Sigma_v = Matrix::Zero(m.n_v, m.n_v);
    cs.Re = m.Re;
    cs.K = m.K();
    cs.Lambda00 = m.C() * pi * m.C().transpose() + m.Re;
    cs.G = m.A() * pi * m.C().transpose() + m.K() * m.Re;
    auto fwd = solve_riccati_forward(m, cs.Lambda00, cs.G);
    cs.gain_agreement = (fwd.K - cs.K).norm();
    cs.riccati_residual =
        std::max(fwd.residual, (fwd.P - pi).norm());
  }
  cs.P_hv = m.A1 * cs.P_h * m.A3.transpose() +
            m.A2 * cs.P_v * m.A4.transpose() +
            cs.K.topRows(m.n_h) * cs.Re * cs.K.bottomRows(m.n_v).transpose();
  cs.G1 = cs.G.topRows(m.n_h);
  cs.G2 = cs.G.bottomRows(m.n_v);
  return cs;
}

Matrix markov_power(const RoesserModel& m, int k, int m_idx) {
  if (k < 0 || m_idx < 0) return Matrix::Zero(m.n_x(), m.n_x());
  const int nx = m.n_x();
  Matrix a10 = Matrix::Zero(nx, nx), a01 = Matrix::Zero(nx, nx);
  a10.topRows(m.n_h) << m.A1, m.A2;
  a01.bottomRows(m.n_v) << m.A3, m.A4;
  std::vector<std::vector<Matrix>> tab(
      k + 1, std::vector<Matrix>(m_idx + 1, Matrix::Zero(nx, nx)));
  tab[0][0] = Matrix::Identity(nx, nx);
  for (int a = 0; a <= k; ++a)
    for (int b = 0; b <= m_idx; ++b) {
      if (a == 0 && b == 0) continue;
      Matrix acc = Matrix::Zero(nx, nx);
      if (a > 0) acc += a10 * tab[a - 1][b];
      if (b > 0) acc += a01 * tab[a][b - 1];
      tab[a][b] = acc;
    }
  return tab[k][m_idx];
}

Matrix autocovariance(const RoesserModel& m, const CovarianceSet& covs, int k,
                      int m_idx) {
  if (k == 0 && m_idx == 0) return covs.Lambda00;
  if (m_idx == 0) {
    Matrix a1k = Matrix::Identity(m.n_h, m.n_h);
    for (int t = 0; t < k - 1; ++t) a1k = m.A1 * a1k;
    return m.C1 * a1k * covs.G1;
  }
  if (k == 0) {
    Matrix a4m = Matrix::Identity(m.n_v, m.n_v);
    for (int t = 0; t < m_idx - 1; ++t) a4m = m.A4 * a4m;
    return m.C2 * a4m * covs.G2;
  }
  Matrix g10 = Matrix::Zero(m.n_x(), m.n_y);
  Matrix g01 = Matrix::Zero(m.n_x(), m.n_y);
  g10.topRows(m.n_h) = covs.G1;
  g01.bottomRows(m.n_v) = covs.G2;
  return m.C() * markov_power(m, k - 1, m_idx) * g10 +
         m.C() * markov_power(m, k, m_idx - 1) * g01;
}

RoesserModel construct_uncorrelated(const RoesserModel& m) {
  m.check_dimensions();
  RoesserModel out = m;
  out.Q.reset();
  out.R.reset();
  out.S.reset();
  const Matrix k1re = m.K1 * m.Re;  // n_h x n_y
  const Matrix k1re_pinv = pseudo_inverse(k1re);
  for (int outer = 0; outer < kMaxIterations; ++outer) {
    Matrix w_hh = out.K1 * out.Re * out.K1.transpose();
    Matrix w_vv = out.K2 * out.Re * out.K2.transpose();
    auto [ph, pv] = diagonal_stationary(out, w_hh, w_vv, nullptr, nullptr);
    Matrix cross = out.A1 * ph * out.A3.transpose() +
                   out.A2 * pv * out.A4.transpose();
    // K1 Re K2' = -cross  =>  K2' from least squares in the K1 Re range.
    Matrix k2 = (-(k1re_pinv * cross)).transpose();
    double change = rel_change(k2, out.K2);
    out.K2 = k2;
    if (change < kFixedPointTol) {
      Matrix resid = cross + k1re * out.K2.transpose();
      double scale = std::max(1.0, cross.norm());
      if (resid.norm() > 1e-8 * scale)
        throw NumericError(
            "no gain exists that decorrelates the state update");
      return out;
    }
  }
  throw NumericError("decorrelating gain iteration did not converge");
}

std::uint64_t GaussianSampler::next_u64() {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double GaussianSampler::next() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  double radius = std::sqrt(-2.0 * std::log(u1));
  double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  have_spare_ = true;
  return radius * std::cos(angle);
}

SimulationResult simulate(const RoesserModel& m, int N, int M,
                          std::uint64_t seed, const SimulationOptions& opts) {
  m.check_dimensions();
  if (N < 0 || M < 0) throw std::invalid_argument("grid extents must be nonnegative");
  SimulationResult out{GridData(m.n_y, N, M), GridData(m.n_h, N, M),
                       GridData(m.n_v, N, M), GridData(m.n_y, N, M)};
  GaussianSampler rng(seed);
  // Re = 0 is the noise-free degenerate case, not an error.
  Matrix re_chol = m.Re.norm() == 0
                       ? Matrix::Zero(m.n_y, m.n_y)
                       : cholesky_factor(m.Re, "innovations covariance");

  if (opts.draw_initial_horizontal && m.n_h > 0) {
    auto lyap = solve_lyapunov(m);
    Matrix ph_chol = cholesky_factor(lyap.Pi_h, "stationary covariance");
    for (int s = 0; s <= M; ++s) {
      Vector z(m.n_h);
      for (int t = 0; t < m.n_h; ++t) z(t) = rng.next();
      out.xh.at(0, s) = ph_chol * z;
    }
  }

  Vector z(m.n_y);
  for (int r = 0; r <= N; ++r)
    for (int s = 0; s <= M; ++s) {
      for (int t = 0; t < m.n_y; ++t) z(t) = rng.next();
      Vector e = re_chol * z;
      out.e.at(r, s) = e;
      Vector xh = out.xh.at(r, s);
      Vector xv = out.xv.at(r, s);
      out.y.at(r, s) = m.C1 * xh + m.C2 * xv + e;
      if (r + 1 <= N) out.xh.at(r + 1, s) = m.A1 * xh + m.A2 * xv + m.K1 * e;
      if (s + 1 <= M) out.xv.at(r, s + 1) = m.A3 * xh + m.A4 * xv + m.K2 * e;
    }
  return out;
}

}  // namespace r2d
