#include "grid.hpp"

namespace r2d {

GridData GridData::transposed() const {
  GridData out(n, extent_s, extent_r);
  for (int r = 0; r <= extent_r; ++r)
    for (int s = 0; s <= extent_s; ++s) out.at(s, r) = at(r, s);
  return out;
}

}  // namespace r2d
