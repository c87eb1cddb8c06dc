#pragma once

#include "linalg.hpp"

namespace r2d {

/// A field of n-vectors over (r, s) in [0, N] x [0, M]. Stored with one
/// column per s (a vertical scanline), so Hankel extraction over r walks
/// contiguous memory.
struct GridData {
  int n = 0;
  int extent_r = 0;  // N
  int extent_s = 0;  // M
  Matrix values;     // n*(N+1) rows, (M+1) columns

  GridData() = default;
  GridData(int n_, int N_, int M_)
      : n(n_), extent_r(N_), extent_s(M_),
        values(Matrix::Zero(static_cast<Eigen::Index>(n_) * (N_ + 1),
                            M_ + 1)) {}

  Eigen::Block<Matrix, Eigen::Dynamic, 1> at(int r, int s) {
    return values.block<Eigen::Dynamic, 1>(static_cast<Eigen::Index>(r) * n, s,
                                           n, 1);
  }
  Eigen::Block<const Matrix, Eigen::Dynamic, 1> at(int r, int s) const {
    return values.block<Eigen::Dynamic, 1>(static_cast<Eigen::Index>(r) * n, s,
                                           n, 1);
  }

  /// Swap the roles of r and s (vertical data processing runs on the
  /// transposed grid).
  GridData transposed() const;

  bool all_finite() const { return values.allFinite(); }
};

}  // namespace r2d
