#include "roesser2d.h"

#include <algorithm>
#include <cstring>
#include <exception>
#include <new>
#include <stdexcept>
#include <string>
#include <utility>

#include <json.hpp>

#include "grid.hpp"
#include "io.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "operators.hpp"
#include "pipeline.hpp"

using nlohmann::json;

struct r2d_model {
  r2d::RoesserModel m;
};

struct r2d_grid {
  r2d::GridData g;
};

namespace {

thread_local std::string g_last_error;

r2d_status fail(r2d_status code, const std::string& message) {
  g_last_error = message;
  return code;
}

// Runs fn() and maps the library's exception taxonomy onto status codes.
template <class Fn>
r2d_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return R2D_OK;
  } catch (const r2d::IoError& e) {
    return fail(R2D_ERR_IO, e.what());
  } catch (const r2d::NumericError& e) {
    return fail(R2D_ERR_NUMERIC, e.what());
  } catch (const json::exception& e) {
    return fail(R2D_ERR_IO, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(R2D_ERR_INVALID, e.what());
  } catch (const std::out_of_range& e) {
    return fail(R2D_ERR_INVALID, e.what());
  } catch (const std::bad_alloc&) {
    return fail(R2D_ERR_NUMERIC, "out of memory");
  } catch (const std::exception& e) {
    return fail(R2D_ERR_NUMERIC, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json matrix_json(const r2d::Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

extern "C" {

const char* r2d_last_error(void) { return g_last_error.c_str(); }

void r2d_string_free(char* s) { delete[] s; }
void r2d_model_free(r2d_model* m) { delete m; }
void r2d_grid_free(r2d_grid* g) { delete g; }

r2d_status r2d_model_from_json(const char* json_text, r2d_model** out) {
  if (json_text == nullptr || out == nullptr)
    return fail(R2D_ERR_INVALID, "null argument");
  return guarded([&] {
    *out = new r2d_model{r2d::model_from_json(json_text)};
  });
}

r2d_status r2d_model_from_file(const char* path, r2d_model** out) {
  if (path == nullptr || out == nullptr)
    return fail(R2D_ERR_INVALID, "null argument");
  return guarded([&] { *out = new r2d_model{r2d::read_model_file(path)}; });
}

r2d_status r2d_model_to_json(const r2d_model* m, char** out_json) {
  if (m == nullptr || out_json == nullptr)
    return fail(R2D_ERR_INVALID, "null argument");
  return guarded([&] { *out_json = dup_string(r2d::model_to_json(m->m)); });
}

r2d_status r2d_model_write_file(const r2d_model* m, const char* path) {
  if (m == nullptr || path == nullptr)
    return fail(R2D_ERR_INVALID, "null argument");
  return guarded([&] { r2d::write_model_file(path, m->m); });
}

r2d_status r2d_validate(const r2d_model* m, char** out_report_json) {
  if (m == nullptr || out_report_json == nullptr)
    return fail(R2D_ERR_INVALID, "null argument");
  return guarded([&] {
    auto rep = r2d::validate_model(m->m);
    json j;
    j["pass"] = rep.pass;
    j["spectral_radius"] = rep.spectral_radius;
    j["stable"] = rep.stable;
    j["re_positive_definite"] = rep.re_positive_definite;
    j["joint_noise_psd"] = rep.joint_noise_psd;
    j["q_psd"] = rep.q_psd;
    j["r_positive_definite"] = rep.r_positive_definite;
    j["pi_positive_definite"] = rep.pi_positive_definite;
    j["pi_hv_norm"] = rep.pi_hv_norm;
    j["failures"] = rep.failures;
    if (rep.pass) {
      auto covs = r2d::compute_covariances(m->m);
      j["riccati_residual"] = covs.riccati_residual;
      j["gain_agreement"] = covs.gain_agreement;
      j["lambda00"] = matrix_json(covs.Lambda00);
    }
    *out_report_json = dup_string(j.dump(2));
  });
}

r2d_status r2d_grid_read(const char* path, r2d_grid** out) {
  if (path == nullptr || out == nullptr)
    return fail(R2D_ERR_INVALID, "null argument");
  return guarded([&] { *out = new r2d_grid{r2d::read_grid_file(path)}; });
}

r2d_status r2d_grid_write(const r2d_grid* g, const char* path,
                          const char* format) {
  if (g == nullptr || path == nullptr)
    return fail(R2D_ERR_INVALID, "null argument");
  std::string fmt = format == nullptr ? "text" : format;
  r2d::GridFormat gf;
  if (fmt == "text")
    gf = r2d::GridFormat::kText;
  else if (fmt == "binary")
    gf = r2d::GridFormat::kBinary;
  else
    return fail(R2D_ERR_INVALID, "format must be \"text\" or \"binary\"");
  return guarded([&] { r2d::write_grid_file(path, g->g, gf); });
}

r2d_status r2d_grid_dims(const r2d_grid* g, int* n, int* extent_r,
                         int* extent_s) {
  if (g == nullptr) return fail(R2D_ERR_INVALID, "null grid");
  if (n) *n = g->g.n;
  if (extent_r) *extent_r = g->g.extent_r;
  if (extent_s) *extent_s = g->g.extent_s;
  return R2D_OK;
}

r2d_status r2d_grid_at(const r2d_grid* g, int r, int s, double* out) {
  if (g == nullptr || out == nullptr)
    return fail(R2D_ERR_INVALID, "null argument");
  if (r < 0 || r > g->g.extent_r || s < 0 || s > g->g.extent_s)
    return fail(R2D_ERR_INVALID, "grid index out of range");
  Eigen::VectorXd v = g->g.at(r, s);
  for (int k = 0; k < g->g.n; ++k) out[k] = v(k);
  return R2D_OK;
}

r2d_status r2d_simulate(const r2d_model* m, int N, int M, uint64_t seed,
                        r2d_grid** out_y, r2d_grid** out_xh,
                        r2d_grid** out_xv, r2d_grid** out_e) {
  if (m == nullptr || out_y == nullptr)
    return fail(R2D_ERR_INVALID, "null argument");
  return guarded([&] {
    auto sim = r2d::simulate(m->m, N, M, seed);
    *out_y = new r2d_grid{std::move(sim.y)};
    if (out_xh) *out_xh = new r2d_grid{std::move(sim.xh)};
    if (out_xv) *out_xv = new r2d_grid{std::move(sim.xv)};
    if (out_e) *out_e = new r2d_grid{std::move(sim.e)};
  });
}

r2d_status r2d_identify(const r2d_grid* y, const char* options_json,
                        r2d_model** out_model, char** out_report_json) {
  if (y == nullptr || out_model == nullptr)
    return fail(R2D_ERR_INVALID, "null argument");
  return guarded([&] {
    r2d::IdentifyOptions opts;
    if (options_json != nullptr && *options_json != '\0') {
      json jo = json::parse(std::string(options_json));
      if (jo.contains("i")) opts.i = jo.at("i").get<int>();
      if (jo.contains("order_h") && !jo.at("order_h").is_null())
        opts.order_h = jo.at("order_h").get<int>();
      if (jo.contains("order_v") && !jo.at("order_v").is_null())
        opts.order_v = jo.at("order_v").get<int>();
      if (jo.contains("iterations"))
        opts.iterations = jo.at("iterations").get<int>();
    }
    auto result = r2d::identify(y->g, opts);
    json report;
    report["model"] = json::parse(r2d::model_to_json(result.model));
    report["lambda00"] = matrix_json(result.Lambda00);
    report["pi"] = matrix_json(result.Pi);
    report["g"] = matrix_json(result.G);
    report["initial_h"] = matrix_json(result.initial_h);
    report["initial_v"] = matrix_json(result.initial_v);
    report["diagnostics"] = result.diagnostics;
    *out_model = new r2d_model{std::move(result.model)};
    if (out_report_json) *out_report_json = dup_string(report.dump(2));
  });
}

r2d_status r2d_bias_check(const r2d_model* m, const char* options_json,
                          char** out_report_json) {
  if (m == nullptr || out_report_json == nullptr)
    return fail(R2D_ERR_INVALID, "null argument");
  return guarded([&] {
    int i = 4, j = 500, M = 1, seeds = 20;
    uint64_t seed0 = 1;
    if (options_json != nullptr && *options_json != '\0') {
      json jo = json::parse(std::string(options_json));
      if (jo.contains("i")) i = jo.at("i").get<int>();
      if (jo.contains("j")) j = jo.at("j").get<int>();
      if (jo.contains("M")) M = jo.at("M").get<int>();
      if (jo.contains("seeds")) seeds = jo.at("seeds").get<int>();
      if (jo.contains("seed")) seed0 = jo.at("seed").get<uint64_t>();
    }
    if (i < 1 || j < 1 || M < 0 || seeds < 1)
      throw std::invalid_argument("bias-check options must be positive");
    auto covs = r2d::compute_covariances(m->m);
    auto ops = r2d::build_operators(m->m, i, M);
    auto closed = r2d::bias_closed_form(m->m, covs, i, M);

    const int N = 2 * i + j - 2;
    r2d::Matrix mean =
        r2d::Matrix::Zero(closed.crosscov.rows(), closed.crosscov.cols());
    r2d::Matrix mean_sq = mean;
    for (int s = 0; s < seeds; ++s) {
      auto sim = r2d::simulate(m->m, N, M, seed0 + s);
      auto emp = r2d::bias_empirical(sim, ops, i, j, M);
      mean += emp.crosscov;
      mean_sq += emp.crosscov.cwiseProduct(emp.crosscov);
    }
    mean /= seeds;
    mean_sq /= seeds;
    r2d::Matrix var = (mean_sq - mean.cwiseProduct(mean)).cwiseMax(0.0) *
                      (static_cast<double>(seeds) / std::max(1, seeds - 1));
    r2d::Matrix se = (var / seeds).cwiseSqrt();

    json report;
    report["i"] = i;
    report["j"] = j;
    report["M"] = M;
    report["seeds"] = seeds;
    report["closed_form_per_column"] = matrix_json(closed.crosscov_per_column);
    report["empirical_mean"] = matrix_json(mean);
    report["empirical_stderr"] = matrix_json(se);
    report["max_abs_deviation"] =
        (mean - closed.crosscov_per_column).cwiseAbs().maxCoeff();
    report["max_deviation_in_sigma"] =
        ((mean - closed.crosscov_per_column).cwiseAbs().array() /
         (se.array() + 1e-300))
            .maxCoeff();
    *out_report_json = dup_string(report.dump(2));
  });
}

}  // extern "C"
