#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <vector>

namespace r2d {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Thrown when a numerical procedure cannot produce a valid result
/// (rank failure, divergence, indefinite matrix, ...).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Relative singular-value cutoff used for every rank decision.
inline constexpr double kRankTolerance = 1e-10;

struct RqResult {
  Matrix L;  // lower triangular, nonnegative diagonal
  Matrix Q;  // orthonormal rows, same column count as the input
  bool rank_deficient = false;
};

/// Factor M = L*Q with L lower triangular and Q having orthonormal rows.
/// Requires cols >= rows. Rank-deficient inputs succeed with (near) zero
/// diagonal entries and the rank_deficient flag set.
RqResult rq_decompose(const Matrix& m);

/// Orthogonal projection of the rows of F onto the row space of P:
/// F/P = F P^T (P P^T)^{-1} P. When P P^T is ill conditioned
/// (condition > 1e12) a small ridge term is added before inverting.
Matrix row_space_project(const Matrix& f, const Matrix& p);

/// Moore-Penrose pseudo-inverse via SVD.
Matrix pseudo_inverse(const Matrix& m);

/// For a full-column-rank M with rows > cols, returns the
/// (rows - cols) x rows matrix with orthonormal rows spanning the
/// left null space, so that result * M == 0.
Matrix orth_complement(const Matrix& m);

enum class StructureKind { kLowerBlockToeplitz, kBlockHankel };

/// 0/1 matrix mapping a compact block-parameter vector to the vec of the
/// full structured matrix.
///
/// Lower block triangular Toeplitz: generators T_0..T_{i-1} (block_rows x
/// block_cols each); block (a,b) of the full matrix is T_{a-b} for a >= b
/// and zero above the diagonal. Block Hankel: generators H_0..H_{i+j-2};
/// block (a,b) is H_{a+b}.
struct StructureMap {
  StructureKind kind;
  int block_rows = 0;
  int block_cols = 0;
  int i = 0;
  int j = 0;  // Hankel only
  Matrix map;  // vec(full) = map * compact

  int compact_size() const;
  int full_rows() const { return block_rows * i; }
  int full_cols() const {
    return kind == StructureKind::kLowerBlockToeplitz ? block_cols * i
                                                      : block_cols * j;
  }

  /// Assemble the full structured matrix from the compact vector.
  Matrix expand(const Vector& compact) const;
  /// Extract the compact vector from a structured matrix (reads the first
  /// occurrence of each generator block).
  Vector extract(const Matrix& full) const;
};

StructureMap structure_map(StructureKind kind, int block_rows, int block_cols,
                           int i, std::optional<int> j = std::nullopt);

/// Least-squares solve of A*X*B = C with X constrained to be lower block
/// triangular Toeplitz (i blocks of size block_rows x block_cols).
Matrix lttss(const Matrix& a, const Matrix& b, const Matrix& c,
             int block_rows, int block_cols, int i);

/// Least-squares solve of A*X*B = C with X constrained to be block Hankel
/// (i x j blocks of size block_rows x block_cols, i+j-1 generators).
///
/// `drop_modes > 0` requests a minimum-norm solution with the smallest
/// `drop_modes` eigenmodes of the normal equations discarded. This is for
/// systems with a known ambiguity dimension (directions the data cannot
/// determine); the usual full-rank requirement is waived.
Matrix hss(const Matrix& a, const Matrix& b, const Matrix& c,
           int block_rows, int block_cols, int i, int j, int drop_modes = 0);

/// Numerical rank with the relative singular-value threshold.
int numerical_rank(const Matrix& m);

}  // namespace r2d
