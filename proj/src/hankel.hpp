#pragma once

#include "grid.hpp"

#include <vector>

namespace r2d {

/// Depth-i block Hankel matrix over the r direction at column index k:
/// block (a, b) = src(r_start + a + b, k), a in [0, i), b in [0, j).
Matrix build_hankel(const GridData& src, int k, int r_start, int i, int j);

/// Horizontal concatenation of build_hankel over k = 0..M (width j*(M+1)).
Matrix build_bold(const GridData& src, int r_start, int i, int j, int M);

/// Upper block-triangular Toeplitz matrix of the given per-k generator
/// blocks: block (a, b) = blocks[b - a] for b >= a, zero below.
Matrix build_star(const std::vector<Matrix>& blocks);

/// Sample estimate of E{y_{r+k,s+m} y_{r,s}^T}, averaged over every valid
/// (r, s) pair in the grid.
Matrix empirical_autocovariance(const GridData& y, int k, int m_idx);

}  // namespace r2d
