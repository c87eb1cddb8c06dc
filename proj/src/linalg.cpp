#include "linalg.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <cmath>
#include <string>

namespace r2d {

int numerical_rank(const Matrix& m) {
  if (m.size() == 0) return 0;
  Eigen::BDCSVD<Matrix> svd(m);
  const auto& sv = svd.singularValues();
  const double cutoff = kRankTolerance * sv(0);
  int rank = 0;
  for (Eigen::Index k = 0; k < sv.size(); ++k)
    if (sv(k) > cutoff) ++rank;
  return rank;
}

RqResult rq_decompose(const Matrix& m) {
  const Eigen::Index rows = m.rows(), cols = m.cols();
  if (cols < rows)
    throw std::invalid_argument("rq_decompose: need cols >= rows");
  Eigen::HouseholderQR<Matrix> qr(m.transpose());
  Matrix qt = qr.householderQ() * Matrix::Identity(cols, rows);
  Matrix r = qr.matrixQR().topRows(rows).triangularView<Eigen::Upper>();
  RqResult out;
  out.L = r.transpose();
  out.Q = qt.transpose();
  // Normalize the diagonal of L to be nonnegative.
  for (Eigen::Index k = 0; k < rows; ++k) {
    if (out.L(k, k) < 0) {
      out.L.col(k) = -out.L.col(k);
      out.Q.row(k) = -out.Q.row(k);
    }
  }
  double dmax = 0;
  for (Eigen::Index k = 0; k < rows; ++k) dmax = std::max(dmax, out.L(k, k));
  for (Eigen::Index k = 0; k < rows; ++k)
    if (out.L(k, k) <= kRankTolerance * dmax) out.rank_deficient = true;
  return out;
}

Matrix row_space_project(const Matrix& f, const Matrix& p) {
  if (f.cols() != p.cols())
    throw std::invalid_argument("row_space_project: column counts differ");
  Matrix gram = p * p.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
  const auto& ev = es.eigenvalues();
  const double emax = ev(ev.size() - 1);
  if (emax <= 0)
    throw NumericError("row_space_project: P has no row energy");
  const double cond = emax / std::max(ev(0), 0.0);
  if (!(cond < 1e12)) {
    const double ridge = 1e-10 * gram.trace() / static_cast<double>(p.rows());
    gram.diagonal().array() += ridge;
  }
  Eigen::LDLT<Matrix> ldlt(gram);
  return (ldlt.solve(p * f.transpose())).transpose() * p;
}

Matrix pseudo_inverse(const Matrix& m) {
  if (m.size() == 0) return m.transpose();
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double cutoff = kRankTolerance * sv(0);
  Vector inv = Vector::Zero(sv.size());
  for (Eigen::Index k = 0; k < sv.size(); ++k)
    if (sv(k) > cutoff) inv(k) = 1.0 / sv(k);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

Matrix orth_complement(const Matrix& m) {
  const Eigen::Index rows = m.rows(), cols = m.cols();
  if (rows <= cols)
    throw std::invalid_argument("orth_complement: rows must exceed cols");
  if (numerical_rank(m) != cols)
    throw NumericError("orth_complement: input is column rank deficient");
  Eigen::HouseholderQR<Matrix> qr(m);
  Matrix q = qr.householderQ() * Matrix::Identity(rows, rows);
  return q.rightCols(rows - cols).transpose();
}

namespace {

StructureMap make_structure(StructureKind kind, int block_rows, int block_cols,
                            int i, int j) {
  StructureMap sm;
  sm.kind = kind;
  sm.block_rows = block_rows;
  sm.block_cols = block_cols;
  sm.i = i;
  sm.j = j;
  return sm;
}

}  // namespace

int StructureMap::compact_size() const {
  const int ngen = kind == StructureKind::kLowerBlockToeplitz ? i : i + j - 1;
  return block_rows * block_cols * ngen;
}

StructureMap structure_map(StructureKind kind, int block_rows, int block_cols,
                           int i, std::optional<int> j_opt) {
  if (i < 1) throw std::invalid_argument("structure_map: i must be >= 1");
  if (kind == StructureKind::kBlockHankel && (!j_opt || *j_opt < 1))
    throw std::invalid_argument("structure_map: Hankel kind needs j >= 1");
  StructureMap sm = make_structure(kind, block_rows, block_cols, i,
                                   j_opt.value_or(0));
  const int br = block_rows, bc = block_cols;
  const int fr = sm.full_rows(), fc = sm.full_cols();
  const int blk_cols = kind == StructureKind::kLowerBlockToeplitz ? i : sm.j;
  sm.map = Matrix::Zero(static_cast<Eigen::Index>(fr) * fc, sm.compact_size());
  for (int blk_r = 0; blk_r < i; ++blk_r)
    for (int blk_c = 0; blk_c < blk_cols; ++blk_c) {
      int gen;
      if (kind == StructureKind::kLowerBlockToeplitz) {
        if (blk_c > blk_r) continue;
        gen = blk_r - blk_c;
      } else {
        gen = blk_r + blk_c;
      }
      for (int b = 0; b < bc; ++b)
        for (int a = 0; a < br; ++a) {
          const Eigen::Index row =
              static_cast<Eigen::Index>(blk_c * bc + b) * fr + blk_r * br + a;
          sm.map(row, static_cast<Eigen::Index>(gen) * br * bc + b * br + a) =
              1.0;
        }
    }
  return sm;
}

Matrix StructureMap::expand(const Vector& compact) const {
  if (compact.size() != compact_size())
    throw std::invalid_argument("StructureMap::expand: size mismatch");
  const int br = block_rows, bc = block_cols;
  Matrix full = Matrix::Zero(full_rows(), full_cols());
  const int blk_cols = kind == StructureKind::kLowerBlockToeplitz ? i : j;
  for (int blk_r = 0; blk_r < i; ++blk_r)
    for (int blk_c = 0; blk_c < blk_cols; ++blk_c) {
      int gen;
      if (kind == StructureKind::kLowerBlockToeplitz) {
        if (blk_c > blk_r) continue;
        gen = blk_r - blk_c;
      } else {
        gen = blk_r + blk_c;
      }
      for (int b = 0; b < bc; ++b)
        for (int a = 0; a < br; ++a)
          full(blk_r * br + a, blk_c * bc + b) =
              compact(static_cast<Eigen::Index>(gen) * br * bc + b * br + a);
    }
  return full;
}

Vector StructureMap::extract(const Matrix& full) const {
  if (full.rows() != full_rows() || full.cols() != full_cols())
    throw std::invalid_argument("StructureMap::extract: shape mismatch");
  const int br = block_rows, bc = block_cols;
  const int ngen = kind == StructureKind::kLowerBlockToeplitz ? i : i + j - 1;
  Vector compact(static_cast<Eigen::Index>(ngen) * br * bc);
  for (int gen = 0; gen < ngen; ++gen) {
    int blk_r, blk_c;
    if (kind == StructureKind::kLowerBlockToeplitz) {
      blk_r = gen;
      blk_c = 0;
    } else {
      blk_r = std::min(gen, i - 1);
      blk_c = gen - blk_r;
    }
    for (int b = 0; b < bc; ++b)
      for (int a = 0; a < br; ++a)
        compact(static_cast<Eigen::Index>(gen) * br * bc + b * br + a) =
            full(blk_r * br + a, blk_c * bc + b);
  }
  return compact;
}

namespace {

// Structure-constrained least squares over the compact generator space.
// vec(A X B) = sum_g D_g vec(T_g) with D_g = sum_{(r,c) in occ(g)}
// B_c^T kron A_r; the normal equations are assembled from the Gram
// matrices A^T A, B B^T, and A^T C B^T, never from the Kronecker product.
Matrix solve_structured(const Matrix& a, const Matrix& b, const Matrix& c,
                        const StructureMap& sm, int drop_modes = 0) {
  const int br = sm.block_rows, bc = sm.block_cols;
  const bool toeplitz = sm.kind == StructureKind::kLowerBlockToeplitz;
  const int n_a = sm.i;                       // block columns of A
  const int n_b = toeplitz ? sm.i : sm.j;     // block rows of B
  const int ngen = toeplitz ? sm.i : sm.i + sm.j - 1;
  const int bs = br * bc;
  const Eigen::Index nunk = static_cast<Eigen::Index>(bs) * ngen;

  if (a.cols() != static_cast<Eigen::Index>(br) * n_a)
    throw std::invalid_argument("structured solve: A column count mismatch");
  if (b.rows() != static_cast<Eigen::Index>(bc) * n_b)
    throw std::invalid_argument("structured solve: B row count mismatch");
  if (c.rows() != a.rows() || c.cols() != b.cols())
    throw std::invalid_argument("structured solve: C shape mismatch");

  // Callers frequently pass B = I (plain column-wise structure); skip the
  // large Gram products in that case.
  const bool b_identity = b.rows() == b.cols() && b.isIdentity(0.0);
  const Matrix ata = a.transpose() * a;
  const Matrix bbt = b_identity ? Matrix() : Matrix(b * b.transpose());
  const Matrix acb = b_identity ? Matrix(a.transpose() * c)
                                : Matrix(a.transpose() * c * b.transpose());
  const Matrix id_bc = Matrix::Identity(bc, bc);

  // Sparsity of B B^T at block level prunes the accumulation.
  std::vector<std::vector<int>> bbt_nz(n_b);
  for (int cc = 0; cc < n_b; ++cc) {
    if (b_identity) {
      bbt_nz[cc].push_back(cc);
      continue;
    }
    for (int cp = 0; cp < n_b; ++cp)
      if (!bbt.block(cc * bc, cp * bc, bc, bc).isZero(0))
        bbt_nz[cc].push_back(cp);
  }

  auto gen_of = [&](int r, int cc) -> int {
    if (toeplitz) return r >= cc ? r - cc : -1;
    return r + cc;
  };

  Vector rhs = Vector::Zero(nunk);
  const bool use_sparse = nunk > 600;
  Matrix normal_dense;
  std::vector<Eigen::Triplet<double>> trips;
  if (!use_sparse) normal_dense = Matrix::Zero(nunk, nunk);

  auto add_normal = [&](int g, int gp, const Matrix& bb, const Matrix& aa) {
    // contribution kron(bb, aa) into block (g, gp)
    for (int q = 0; q < bc; ++q)
      for (int p = 0; p < bc; ++p)
        for (int y = 0; y < br; ++y)
          for (int x = 0; x < br; ++x) {
            const double v = bb(p, q) * aa(x, y);
            if (v == 0) continue;
            const Eigen::Index row = static_cast<Eigen::Index>(g) * bs + p * br + x;
            const Eigen::Index col = static_cast<Eigen::Index>(gp) * bs + q * br + y;
            if (use_sparse)
              trips.emplace_back(row, col, v);
            else
              normal_dense(row, col) += v;
          }
  };

  for (int r = 0; r < n_a; ++r)
    for (int cc = 0; cc < n_b; ++cc) {
      const int g = gen_of(r, cc);
      if (g < 0) continue;
      Matrix acc = acb.block(r * br, cc * bc, br, bc);
      for (int p = 0; p < bc; ++p)
        for (int x = 0; x < br; ++x)
          rhs(static_cast<Eigen::Index>(g) * bs + p * br + x) += acc(x, p);
      for (int cp : bbt_nz[cc]) {
        const Matrix bb =
            b_identity ? id_bc : Matrix(bbt.block(cc * bc, cp * bc, bc, bc));
        for (int rp = 0; rp < n_a; ++rp) {
          const int gp = gen_of(rp, cp);
          if (gp < 0) continue;
          add_normal(g, gp, bb, ata.block(r * br, rp * br, br, br));
        }
      }
    }

  Vector x;
  double resid;
  if (drop_modes > 0 && !use_sparse) {
    // Minimum-norm solve discarding the known ambiguous directions: the
    // smallest eigenmodes of the (symmetric PSD) normal matrix.
    Eigen::SelfAdjointEigenSolver<Matrix> es(normal_dense);
    const Vector& ev = es.eigenvalues();
    const double cutoff = kRankTolerance * std::max(ev.cwiseAbs().maxCoeff(), 1.0);
    Vector inv = Vector::Zero(nunk);
    for (Eigen::Index t = drop_modes; t < nunk; ++t)
      if (ev(t) > cutoff) inv(t) = 1.0 / ev(t);
    x = es.eigenvectors() * (inv.asDiagonal() * (es.eigenvectors().transpose() * rhs));
    return sm.expand(x);
  }
  if (use_sparse) {
    Eigen::SparseMatrix<double> normal(nunk, nunk);
    normal.setFromTriplets(trips.begin(), trips.end());
    // For long strips the ambiguous directions requested via drop_modes
    // carry a vanishing share of the solution energy, so the plain
    // factorization is used regardless.
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(normal);
    if (solver.info() != Eigen::Success)
      throw NumericError("structured solve: normal equations not factorable");
    x = solver.solve(rhs);
    resid = (normal * x - rhs).norm();
    if (!(resid <= 1e-6 * std::max(1.0, rhs.norm())) || !x.allFinite())
      throw NumericError(
          "structured solve: structurally singular system (large sparse "
          "path)");
  } else {
    const int rank = numerical_rank(normal_dense);
    if (rank < nunk)
      throw NumericError("structured solve: structurally singular system (" +
                         std::string("rank ") + std::to_string(rank) + " of " +
                         std::to_string(nunk) + ")");
    Eigen::LDLT<Matrix> solver(normal_dense);
    x = solver.solve(rhs);
    resid = (normal_dense * x - rhs).norm();
    if (!(resid <= 1e-6 * std::max(1.0, rhs.norm())))
      throw NumericError("structured solve: normal equations ill conditioned");
  }
  return sm.expand(x);
}

}  // namespace

Matrix lttss(const Matrix& a, const Matrix& b, const Matrix& c,
             int block_rows, int block_cols, int i) {
  return solve_structured(
      a, b, c,
      make_structure(StructureKind::kLowerBlockToeplitz, block_rows,
                     block_cols, i, 0));
}

Matrix hss(const Matrix& a, const Matrix& b, const Matrix& c,
           int block_rows, int block_cols, int i, int j, int drop_modes) {
  return solve_structured(
      a, b, c,
      make_structure(StructureKind::kBlockHankel, block_rows, block_cols, i,
                     j),
      drop_modes);
}

}  // namespace r2d
