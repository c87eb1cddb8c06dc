#include "operators.hpp"

#include "hankel.hpp"

#include <Eigen/Cholesky>

#include <stdexcept>

namespace r2d {

namespace {

std::vector<Matrix> powers_of(const Matrix& a, int count) {
  std::vector<Matrix> p;
  p.reserve(count);
  p.push_back(Matrix::Identity(a.rows(), a.cols()));
  for (int t = 1; t < count; ++t) p.push_back(a * p.back());
  return p;
}

Matrix kron_identity_left(int i, const Matrix& b) {
  Matrix out = Matrix::Zero(i * b.rows(), i * b.cols());
  for (int t = 0; t < i; ++t)
    out.block(t * b.rows(), t * b.cols(), b.rows(), b.cols()) = b;
  return out;
}

// Lower block-Toeplitz with diagonal block `diag` and subdiagonal blocks
// left * a1^{d-1} * right at block depth d >= 1.
Matrix lower_toeplitz(int i, const Matrix& diag, const Matrix& left,
                      const std::vector<Matrix>& a1_pow, const Matrix& right) {
  const Eigen::Index br = diag.rows(), bc = diag.cols();
  Matrix out = Matrix::Zero(i * br, i * bc);
  for (int a = 0; a < i; ++a)
    for (int b = 0; b <= a; ++b) {
      if (a == b)
        out.block(a * br, b * bc, br, bc) = diag;
      else
        out.block(a * br, b * bc, br, bc) = left * a1_pow[a - b - 1] * right;
    }
  return out;
}

void check_identity(const Matrix& built, const Matrix& factored,
                    const char* what) {
  double scale = std::max(1.0, built.norm());
  if ((built - factored).norm() > 1e-12 * scale)
    throw NumericError(std::string("operator factorization mismatch for ") +
                       what);
}

}  // namespace

StructuredOperators build_operators(const RoesserModel& m, int i, int M) {
  m.check_dimensions();
  if (i < 1 || M < 0) throw std::invalid_argument("need i >= 1 and M >= 0");
  StructuredOperators ops;
  ops.i = i;
  ops.M = M;
  const auto a1p = powers_of(m.A1, i + 1);

  ops.Gamma_i_h.resize(static_cast<Eigen::Index>(m.n_y) * i, m.n_h);
  ops.Theta_i_h.resize(static_cast<Eigen::Index>(m.n_h) * i, m.n_h);
  ops.Theta_i_vh.resize(static_cast<Eigen::Index>(m.n_v) * i, m.n_h);
  ops.Phi_i_h.resize(m.n_h, static_cast<Eigen::Index>(m.n_h) * i);
  ops.L_i_h.resize(m.n_h, static_cast<Eigen::Index>(m.n_y) * i);
  for (int t = 0; t < i; ++t) {
    ops.Gamma_i_h.middleRows(t * m.n_y, m.n_y) = m.C1 * a1p[t];
    ops.Theta_i_h.middleRows(t * m.n_h, m.n_h) = a1p[t];
    ops.Theta_i_vh.middleRows(t * m.n_v, m.n_v) = m.A3 * a1p[t];
    ops.Phi_i_h.middleCols(t * m.n_h, m.n_h) = a1p[i - 1 - t];
    ops.L_i_h.middleCols(t * m.n_y, m.n_y) = a1p[i - 1 - t] * m.K1;
  }
  ops.Phi_i_vh = ops.Phi_i_h * kron_identity_left(i, m.A2);

  ops.G_A1_h = Matrix::Zero(static_cast<Eigen::Index>(m.n_h) * i,
                            static_cast<Eigen::Index>(m.n_h) * i);
  for (int a = 0; a < i; ++a)
    for (int b = 0; b < a; ++b)
      ops.G_A1_h.block(a * m.n_h, b * m.n_h, m.n_h, m.n_h) = a1p[a - b - 1];

  ops.Gamma_i_vh = lower_toeplitz(i, m.C2, m.C1, a1p, m.A2);
  ops.K_i_h = lower_toeplitz(i, Matrix::Identity(m.n_y, m.n_y), m.C1, a1p,
                             m.K1);
  ops.A_i_vh = lower_toeplitz(i, m.A4, m.A3, a1p, m.A2);
  ops.K_i_vh = lower_toeplitz(i, m.K2, m.A3, a1p, m.K1);

  check_identity(ops.Theta_i_vh, kron_identity_left(i, m.A3) * ops.Theta_i_h,
                 "Theta_i_vh");
  check_identity(ops.Gamma_i_vh,
                 kron_identity_left(i, m.C1) * ops.G_A1_h *
                         kron_identity_left(i, m.A2) +
                     kron_identity_left(i, m.C2),
                 "Gamma_i_vh");
  check_identity(ops.K_i_h,
                 kron_identity_left(i, m.C1) * ops.G_A1_h *
                         kron_identity_left(i, m.K1) +
                     Matrix::Identity(ops.K_i_h.rows(), ops.K_i_h.cols()),
                 "K_i_h");
  check_identity(ops.A_i_vh,
                 kron_identity_left(i, m.A3) * ops.G_A1_h *
                         kron_identity_left(i, m.A2) +
                     kron_identity_left(i, m.A4),
                 "A_i_vh");
  check_identity(ops.K_i_vh,
                 kron_identity_left(i, m.A3) * ops.G_A1_h *
                         kron_identity_left(i, m.K1) +
                     kron_identity_left(i, m.K2),
                 "K_i_vh");
  check_identity(ops.Phi_i_vh, ops.Phi_i_h * kron_identity_left(i, m.A2),
                 "Phi_i_vh");

  const int nvi = m.n_v * i, nyi = m.n_y * i;
  const auto avh_pow = powers_of(ops.A_i_vh, M + 1);
  ops.bA_M_vh.resize(nvi, static_cast<Eigen::Index>(m.n_h) * M);
  ops.bK_M_vh.resize(nvi, static_cast<Eigen::Index>(nyi) * M);
  for (int t = 0; t < M; ++t) {
    ops.bA_M_vh.middleCols(t * m.n_h, m.n_h) = avh_pow[t] * ops.Theta_i_vh;
    ops.bK_M_vh.middleCols(t * nyi, nyi) = avh_pow[t] * ops.K_i_vh;
  }

  ops.bA_M_h = Matrix::Zero(static_cast<Eigen::Index>(m.n_h) * (M + 1),
                            static_cast<Eigen::Index>(m.n_h) * (M + 1));
  ops.bK_M_h = Matrix::Zero(static_cast<Eigen::Index>(m.n_h) * (M + 1),
                            static_cast<Eigen::Index>(nyi) * (M + 1));
  for (int a = 0; a <= M; ++a)
    for (int b = a; b <= M; ++b) {
      int d = b - a;
      if (d == 0) {
        ops.bA_M_h.block(a * m.n_h, b * m.n_h, m.n_h, m.n_h) = a1p[i];
        ops.bK_M_h.block(a * m.n_h, b * nyi, m.n_h, nyi) = ops.L_i_h;
      } else {
        ops.bA_M_h.block(a * m.n_h, b * m.n_h, m.n_h, m.n_h) =
            ops.Phi_i_vh * avh_pow[d - 1] * ops.Theta_i_vh;
        ops.bK_M_h.block(a * m.n_h, b * nyi, m.n_h, nyi) =
            ops.Phi_i_vh * avh_pow[d - 1] * ops.K_i_vh;
      }
    }

  ops.Q1 = Matrix::Zero(nvi, static_cast<Eigen::Index>(m.n_h) * (M + 1));
  ops.Q1.rightCols(static_cast<Eigen::Index>(m.n_h) * M) = ops.bA_M_vh;
  ops.Q2 = Matrix::Zero(nvi, static_cast<Eigen::Index>(nyi) * (M + 1));
  ops.Q2.rightCols(static_cast<Eigen::Index>(nyi) * M) = ops.bK_M_vh;
  ops.P1 = ops.Q1 * ops.bA_M_h;
  ops.P2 = ops.Q1 * ops.bK_M_h;
  return ops;
}

DeltaForms delta_markov(const RoesserModel& m, const CovarianceSet& covs,
                        int i) {
  auto ops = build_operators(m, i, 0);
  DeltaForms out;
  out.covariance_form =
      powers_of(m.A1, i + 1)[i] * covs.P_h * ops.Gamma_i_h.transpose() +
      ops.Phi_i_vh * kron_identity_left(i, covs.P_v) *
          ops.Gamma_i_vh.transpose() +
      ops.L_i_h * kron_identity_left(i, covs.Re) * ops.K_i_h.transpose();
  out.markov_form.resize(m.n_h, static_cast<Eigen::Index>(m.n_y) * i);
  const auto a1p = powers_of(m.A1, i);
  for (int t = 0; t < i; ++t)
    out.markov_form.middleCols(t * m.n_y, m.n_y) = a1p[i - 1 - t] * covs.G1;
  out.difference = (out.covariance_form - out.markov_form).norm();
  return out;
}

BiasTerms bias_closed_form(const RoesserModel& m, const CovarianceSet& covs,
                           int i, int M) {
  auto ops = build_operators(m, i, M);
  BiasTerms out;
  out.Delta_i_h = delta_markov(m, covs, i).markov_form;

  // Within the uncorrelated model class the update cross covariance is
  // exactly zero; snap sub-tolerance residue so the closed form is too.
  Matrix p_hv = covs.P_hv;
  double scale = std::max({1.0, covs.P_h.norm(), covs.P_v.norm()});
  if (p_hv.norm() < 1e-10 * scale) p_hv.setZero();
  Matrix p_vh = p_hv.transpose();

  out.P0 = ops.Theta_i_vh * ops.Phi_i_h * kron_identity_left(i, p_hv);
  out.Q0 = kron_identity_left(i, m.A3) * ops.G_A1_h *
               kron_identity_left(i, p_hv) +
           kron_identity_left(i, p_vh) * ops.G_A1_h.transpose() *
               kron_identity_left(i, m.A3.transpose());

  const int nvi = m.n_v * i;
  const auto avh_pow = powers_of(ops.A_i_vh, M + 1);
  const Matrix theta_phi = ops.Theta_i_vh * ops.Phi_i_vh;
  out.per_k.assign(M + 1, Matrix::Zero(nvi, nvi));
  for (int kk = 1; kk <= M; ++kk) {
    Matrix acc = Matrix::Zero(nvi, nvi);
    for (int t = 0; t < kk; ++t)
      acc += avh_pow[t] * out.P0 * avh_pow[t].transpose();
    for (int l = 1; l < kk; ++l)
      for (int t = 0; t + l < kk; ++t)
        acc += avh_pow[l - 1] * theta_phi * avh_pow[t] * out.Q0 *
               avh_pow[l + t].transpose();
    out.per_k[kk] = acc;
  }
  Matrix sum = Matrix::Zero(nvi, nvi);
  for (const Matrix& c : out.per_k) sum += c;
  out.crosscov = ops.Gamma_i_vh * sum * ops.Gamma_i_vh.transpose();
  out.crosscov_per_column = out.crosscov / static_cast<double>(M + 1);
  return out;
}

EmpiricalBias bias_empirical(const SimulationResult& sim,
                             const StructuredOperators& ops, int i, int j,
                             int M) {
  if (ops.i != i || ops.M != M)
    throw std::invalid_argument("operator set built for different (i, M)");
  const double jbar = static_cast<double>(j) * (M + 1);
  EmpiricalBias out;
  out.per_k.reserve(M + 1);
  Matrix xf = build_bold(sim.xv, i, i, j, M);
  Matrix xp = build_bold(sim.xv, 0, i, j, M);
  for (int kk = 0; kk <= M; ++kk) {
    Matrix f = build_hankel(sim.xv, kk, i, i, j);
    Matrix p = build_hankel(sim.xv, kk, 0, i, j);
    out.per_k.push_back(f * p.transpose() / static_cast<double>(j));
  }
  out.crosscov =
      ops.Gamma_i_vh * (xf * xp.transpose() / jbar) * ops.Gamma_i_vh.transpose();

  Matrix yp = build_bold(sim.y, 0, i, j, M);
  Matrix rpp = yp * yp.transpose() / jbar;
  Eigen::LDLT<Matrix> ldlt(rpp);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw NumericError("past output covariance is singular");
  out.bias = out.crosscov * ldlt.solve(yp);
  return out;
}

}  // namespace r2d
