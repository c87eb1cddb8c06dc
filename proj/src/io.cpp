#include "io.hpp"

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace r2d {

namespace {

using nlohmann::json;

void write_le_double(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  if constexpr (std::endian::native == std::endian::big)
    bits = __builtin_bswap64(bits);
  os.write(reinterpret_cast<const char*>(&bits), sizeof bits);
}

double read_le_double(std::istream& is) {
  std::uint64_t bits = 0;
  is.read(reinterpret_cast<char*>(&bits), sizeof bits);
  if constexpr (std::endian::native == std::endian::big)
    bits = __builtin_bswap64(bits);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& rows, int want_rows, int want_cols,
                        const char* name) {
  if (!rows.is_array())
    throw IoError(std::string("field ") + name + " must be a nested array");
  Matrix m(want_rows, want_cols);
  if (static_cast<int>(rows.size()) != want_rows)
    throw IoError(std::string("field ") + name + " has wrong row count");
  for (int r = 0; r < want_rows; ++r) {
    const json& row = rows[r];
    if (!row.is_array() || static_cast<int>(row.size()) != want_cols)
      throw IoError(std::string("field ") + name + " has wrong column count");
    for (int c = 0; c < want_cols; ++c) m(r, c) = row[c].get<double>();
  }
  return m;
}

}  // namespace

void write_grid(std::ostream& os, const GridData& g, GridFormat fmt) {
  if (fmt == GridFormat::kText) {
    os << "R2D1 " << g.n << ' ' << g.extent_r << ' ' << g.extent_s << '\n';
    os << std::setprecision(17);
    for (int r = 0; r <= g.extent_r; ++r)
      for (int s = 0; s <= g.extent_s; ++s) {
        os << r << ' ' << s;
        auto v = g.at(r, s);
        for (int t = 0; t < g.n; ++t) os << ' ' << v(t);
        os << '\n';
      }
  } else {
    os << "R2DB " << g.n << ' ' << g.extent_r << ' ' << g.extent_s << '\n';
    for (int r = 0; r <= g.extent_r; ++r)
      for (int s = 0; s <= g.extent_s; ++s) {
        auto v = g.at(r, s);
        for (int t = 0; t < g.n; ++t) write_le_double(os, v(t));
      }
  }
  if (!os) throw IoError("failed writing grid stream");
}

void write_grid_file(const std::string& path, const GridData& g,
                     GridFormat fmt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_grid(os, g, fmt);
}

GridData read_grid(std::istream& is) {
  std::string magic;
  int n = 0, N = -1, M = -1;
  is >> magic >> n >> N >> M;
  if (!is || (magic != "R2D1" && magic != "R2DB"))
    throw IoError("not a grid file (bad magic/header)");
  if (n < 1 || N < 0 || M < 0) throw IoError("grid header out of range");
  GridData g(n, N, M);
  if (magic == "R2D1") {
    for (long line = 0; line < static_cast<long>(N + 1) * (M + 1); ++line) {
      int r, s;
      is >> r >> s;
      if (!is || r < 0 || r > N || s < 0 || s > M)
        throw IoError("bad grid data line " + std::to_string(line));
      auto v = g.at(r, s);
      for (int t = 0; t < n; ++t) is >> v(t);
    }
    if (!is) throw IoError("truncated grid file");
  } else {
    is.get();  // newline after the header
    for (int r = 0; r <= N; ++r)
      for (int s = 0; s <= M; ++s) {
        auto v = g.at(r, s);
        for (int t = 0; t < n; ++t) v(t) = read_le_double(is);
      }
    if (!is) throw IoError("truncated binary grid file");
  }
  return g;
}

GridData read_grid_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_grid(is);
}

std::string model_to_json(const RoesserModel& m) {
  json j;
  j["n_h"] = m.n_h;
  j["n_v"] = m.n_v;
  j["n_y"] = m.n_y;
  j["A1"] = matrix_to_json(m.A1);
  j["A2"] = matrix_to_json(m.A2);
  j["A3"] = matrix_to_json(m.A3);
  j["A4"] = matrix_to_json(m.A4);
  j["C1"] = matrix_to_json(m.C1);
  j["C2"] = matrix_to_json(m.C2);
  j["K1"] = matrix_to_json(m.K1);
  j["K2"] = matrix_to_json(m.K2);
  j["Re"] = matrix_to_json(m.Re);
  if (m.Q) j["Q"] = matrix_to_json(*m.Q);
  if (m.R) j["R"] = matrix_to_json(*m.R);
  if (m.S) j["S"] = matrix_to_json(*m.S);
  return j.dump(2);
}

RoesserModel model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("model JSON parse error: ") + e.what());
  }
  RoesserModel m;
  try {
    m.n_h = j.at("n_h").get<int>();
    m.n_v = j.at("n_v").get<int>();
    m.n_y = j.at("n_y").get<int>();
    m.A1 = matrix_from_json(j.at("A1"), m.n_h, m.n_h, "A1");
    m.A2 = matrix_from_json(j.at("A2"), m.n_h, m.n_v, "A2");
    m.A3 = matrix_from_json(j.at("A3"), m.n_v, m.n_h, "A3");
    m.A4 = matrix_from_json(j.at("A4"), m.n_v, m.n_v, "A4");
    m.C1 = matrix_from_json(j.at("C1"), m.n_y, m.n_h, "C1");
    m.C2 = matrix_from_json(j.at("C2"), m.n_y, m.n_v, "C2");
    m.K1 = matrix_from_json(j.at("K1"), m.n_h, m.n_y, "K1");
    m.K2 = matrix_from_json(j.at("K2"), m.n_v, m.n_y, "K2");
    m.Re = matrix_from_json(j.at("Re"), m.n_y, m.n_y, "Re");
    if (j.contains("Q"))
      m.Q = matrix_from_json(j.at("Q"), m.n_x(), m.n_x(), "Q");
    if (j.contains("R"))
      m.R = matrix_from_json(j.at("R"), m.n_y, m.n_y, "R");
    if (j.contains("S"))
      m.S = matrix_from_json(j.at("S"), m.n_x(), m.n_y, "S");
  } catch (const json::exception& e) {
    throw IoError(std::string("model JSON missing/invalid field: ") +
                  e.what());
  }
  m.check_dimensions();
  return m;
}

RoesserModel read_model_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return model_from_json(ss.str());
}

void write_model_file(const std::string& path, const RoesserModel& m) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << model_to_json(m) << '\n';
}

}  // namespace r2d
