#pragma once

#include "model.hpp"

#include <iosfwd>
#include <stdexcept>
#include <string>

namespace r2d {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class GridFormat { kText, kBinary };

/// Grid file: text header "R2D1 n N M" followed by one line
/// "r s v_0 ... v_{n-1}" per site in r-outer order, 17 significant digits;
/// or binary magic "R2DB" with the same header fields and a little-endian
/// float64 payload in the same order.
void write_grid(std::ostream& os, const GridData& g, GridFormat fmt);
void write_grid_file(const std::string& path, const GridData& g,
                     GridFormat fmt);
GridData read_grid(std::istream& is);
GridData read_grid_file(const std::string& path);

/// Model JSON: {"n_h","n_v","n_y","A1"...,"Re"} with row-major nested
/// arrays; "Q","R","S" optional.
std::string model_to_json(const RoesserModel& m);
RoesserModel model_from_json(const std::string& text);
RoesserModel read_model_file(const std::string& path);
void write_model_file(const std::string& path, const RoesserModel& m);

}  // namespace r2d
