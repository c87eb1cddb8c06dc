#include "hankel.hpp"

#include <stdexcept>
#include <string>

namespace r2d {

Matrix build_hankel(const GridData& src, int k, int r_start, int i, int j) {
  if (i < 1 || j < 1) throw std::out_of_range("hankel depth and width must be >= 1");
  if (k < 0 || k > src.extent_s)
    throw std::out_of_range("column index " + std::to_string(k) +
                            " outside grid range [0, " +
                            std::to_string(src.extent_s) + "]");
  int top = r_start + i + j - 2;
  if (r_start < 0 || top > src.extent_r)
    throw std::out_of_range(
        "row range [" + std::to_string(r_start) + ", " + std::to_string(top) +
        "] exceeds grid extent N = " + std::to_string(src.extent_r) +
        " (need N >= r_start + i + j - 2)");
  Matrix h(static_cast<Eigen::Index>(src.n) * i, j);
  for (int a = 0; a < i; ++a)
    for (int b = 0; b < j; ++b)
      h.block(static_cast<Eigen::Index>(a) * src.n, b, src.n, 1) =
          src.at(r_start + a + b, k);
  return h;
}

Matrix build_bold(const GridData& src, int r_start, int i, int j, int M) {
  if (M < 0 || M > src.extent_s)
    throw std::out_of_range("bold range M = " + std::to_string(M) +
                            " outside grid range [0, " +
                            std::to_string(src.extent_s) + "]");
  Matrix bold(static_cast<Eigen::Index>(src.n) * i,
              static_cast<Eigen::Index>(j) * (M + 1));
  for (int k = 0; k <= M; ++k)
    bold.middleCols(static_cast<Eigen::Index>(k) * j, j) =
        build_hankel(src, k, r_start, i, j);
  return bold;
}

Matrix build_star(const std::vector<Matrix>& blocks) {
  if (blocks.empty()) throw std::invalid_argument("no generator blocks");
  const Eigen::Index br = blocks.front().rows(), bc = blocks.front().cols();
  for (const Matrix& b : blocks)
    if (b.rows() != br || b.cols() != bc)
      throw std::invalid_argument("generator blocks differ in size");
  const int n = static_cast<int>(blocks.size());
  Matrix star = Matrix::Zero(br * n, bc * n);
  for (int a = 0; a < n; ++a)
    for (int b = a; b < n; ++b)
      star.block(a * br, b * bc, br, bc) = blocks[b - a];
  return star;
}

Matrix empirical_autocovariance(const GridData& y, int k, int m_idx) {
  if (k < 0 || k > y.extent_r || m_idx < 0 || m_idx > y.extent_s)
    throw std::out_of_range("lag exceeds grid extent");
  Matrix acc = Matrix::Zero(y.n, y.n);
  long count = 0;
  for (int r = 0; r + k <= y.extent_r; ++r)
    for (int s = 0; s + m_idx <= y.extent_s; ++s) {
      acc += y.at(r + k, s + m_idx) * y.at(r, s).transpose();
      ++count;
    }
  if (count == 0) throw std::out_of_range("empty averaging set");
  return acc / static_cast<double>(count);
}

}  // namespace r2d
