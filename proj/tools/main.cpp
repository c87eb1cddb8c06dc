// Command-line front end. Talks to the library exclusively through the
// C interface so it doubles as a smoke test of that boundary.
#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "roesser2d.h"

using nlohmann::json;

namespace {

constexpr int kExitInput = 1;
constexpr int kExitNumeric = 2;

int exit_code_for(r2d_status st) {
  switch (st) {
    case R2D_OK:
      return 0;
    case R2D_ERR_NUMERIC:
      return kExitNumeric;
    default:
      return kExitInput;
  }
}

int report_failure(const std::string& what, r2d_status st) {
  std::cerr << what << ": " << r2d_last_error() << "\n";
  return exit_code_for(st);
}

// Takes ownership of a C string returned by the library.
std::string take_string(char* s) {
  std::string out = s ? s : "";
  r2d_string_free(s);
  return out;
}

int emit_report(const json& report, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << report.dump(2) << "\n";
    return 0;
  }
  std::ofstream os(out_path);
  if (!os) {
    std::cerr << "cannot open output file: " << out_path << "\n";
    return kExitInput;
  }
  os << report.dump(2) << "\n";
  return 0;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

struct Options {
  std::string model_path, data_path, out_path;
  std::string format = "text";
  int i = 6;
  int j = 0;
  int N = -1;
  int M = 0;
  std::optional<int> order_h, order_v;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool emit_states = false;
  int iterations = 2;
  int seeds = 20;
  int threads = 1;
};

json config_echo(const Options& o, const std::string& command) {
  json cfg;
  cfg["command"] = command;
  if (!o.model_path.empty()) cfg["model"] = o.model_path;
  if (!o.data_path.empty()) cfg["data"] = o.data_path;
  cfg["i"] = o.i;
  if (o.j > 0) cfg["j"] = o.j;
  if (o.M > 0) cfg["M"] = o.M;
  if (o.order_h) cfg["order_h"] = *o.order_h;
  if (o.order_v) cfg["order_v"] = *o.order_v;
  if (o.seed_given) cfg["seed"] = o.seed;
  cfg["iterations"] = o.iterations;
  cfg["threads"] = o.threads;
  return cfg;
}

int run_simulate(const Options& o) {
  if (!o.seed_given) {
    std::cerr << "simulate requires --seed\n";
    return kExitInput;
  }
  if (o.out_path.empty()) {
    std::cerr << "simulate requires --out (output grid path)\n";
    return kExitInput;
  }
  int N = o.N;
  if (N < 0) {
    if (o.j < 1) {
      std::cerr << "simulate needs --N or both --i and --j (N = 2i+j-2)\n";
      return kExitInput;
    }
    N = 2 * o.i + o.j - 2;
  }

  r2d_model* model = nullptr;
  r2d_status st = r2d_model_from_file(o.model_path.c_str(), &model);
  if (st != R2D_OK) return report_failure("cannot load model", st);

  char* validation = nullptr;
  st = r2d_validate(model, &validation);
  if (st != R2D_OK) {
    r2d_model_free(model);
    return report_failure("validation failed", st);
  }
  json vrep = json::parse(take_string(validation));
  if (!vrep.at("pass").get<bool>()) {
    std::cerr << "model failed validation:\n" << vrep.dump(2) << "\n";
    r2d_model_free(model);
    return kExitInput;
  }

  r2d_grid *y = nullptr, *xh = nullptr, *xv = nullptr, *e = nullptr;
  st = r2d_simulate(model, N, o.M, o.seed, &y, o.emit_states ? &xh : nullptr,
                    o.emit_states ? &xv : nullptr,
                    o.emit_states ? &e : nullptr);
  r2d_model_free(model);
  if (st != R2D_OK) return report_failure("simulation failed", st);

  const char* fmt = o.format == "binary" ? "binary" : "text";
  int rc = 0;
  st = r2d_grid_write(y, o.out_path.c_str(), fmt);
  if (st != R2D_OK) rc = report_failure("cannot write output grid", st);
  if (rc == 0 && o.emit_states) {
    struct {
      r2d_grid* g;
      const char* suffix;
    } extras[] = {{xh, ".xh"}, {xv, ".xv"}, {e, ".e"}};
    for (auto& ex : extras) {
      std::string path = o.out_path + ex.suffix;
      st = r2d_grid_write(ex.g, path.c_str(), fmt);
      if (st != R2D_OK) {
        rc = report_failure("cannot write state grid", st);
        break;
      }
    }
  }
  r2d_grid_free(y);
  r2d_grid_free(xh);
  r2d_grid_free(xv);
  r2d_grid_free(e);
  return rc;
}

int run_identify(const Options& o) {
  auto t0 = std::chrono::steady_clock::now();
  r2d_grid* y = nullptr;
  r2d_status st = r2d_grid_read(o.data_path.c_str(), &y);
  if (st != R2D_OK) return report_failure("cannot load data grid", st);

  json opts;
  opts["i"] = o.i;
  if (o.order_h) opts["order_h"] = *o.order_h;
  if (o.order_v) opts["order_v"] = *o.order_v;
  opts["iterations"] = o.iterations;

  r2d_model* model = nullptr;
  char* report_text = nullptr;
  st = r2d_identify(y, opts.dump().c_str(), &model, &report_text);
  r2d_grid_free(y);
  if (st != R2D_OK) return report_failure("identification failed", st);

  json report;
  report["schema"] = "roesser2d-report-1";
  report["config"] = config_echo(o, "identify");
  report["result"] = json::parse(take_string(report_text));
  report["elapsed_seconds"] = seconds_since(t0);
  r2d_model_free(model);
  return emit_report(report, o.out_path);
}

int run_bias_check(const Options& o) {
  auto t0 = std::chrono::steady_clock::now();
  r2d_model* model = nullptr;
  r2d_status st = r2d_model_from_file(o.model_path.c_str(), &model);
  if (st != R2D_OK) return report_failure("cannot load model", st);

  json opts;
  opts["i"] = o.i;
  opts["j"] = o.j > 0 ? o.j : 500;
  opts["M"] = o.M;
  opts["seeds"] = o.seeds;
  if (o.seed_given) opts["seed"] = o.seed;

  char* report_text = nullptr;
  st = r2d_bias_check(model, opts.dump().c_str(), &report_text);
  r2d_model_free(model);
  if (st != R2D_OK) return report_failure("bias check failed", st);

  json report;
  report["schema"] = "roesser2d-report-1";
  report["config"] = config_echo(o, "bias-check");
  report["result"] = json::parse(take_string(report_text));
  report["elapsed_seconds"] = seconds_since(t0);
  return emit_report(report, o.out_path);
}

int run_validate(const Options& o) {
  auto t0 = std::chrono::steady_clock::now();
  r2d_model* model = nullptr;
  r2d_status st = r2d_model_from_file(o.model_path.c_str(), &model);
  if (st != R2D_OK) return report_failure("cannot load model", st);

  char* report_text = nullptr;
  st = r2d_validate(model, &report_text);
  r2d_model_free(model);
  if (st != R2D_OK) return report_failure("validation failed", st);

  json report;
  report["schema"] = "roesser2d-report-1";
  report["config"] = config_echo(o, "validate");
  report["result"] = json::parse(take_string(report_text));
  report["elapsed_seconds"] = seconds_since(t0);
  return emit_report(report, o.out_path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"2-D Roesser stochastic subspace identification"};
  app.require_subcommand(1);

  Options o;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--i", o.i, "Past/future block depth (large-scale preset: 30)");
    cmd->add_option("--j", o.j, "Hankel column count per vertical index");
    cmd->add_option("--M", o.M, "Maximum vertical index of the grid");
    cmd->add_option("--out", o.out_path, "Output file (default: stdout report)");
    cmd->add_option("--format", o.format, "Grid format: text | binary | json")
        ->check(CLI::IsMember({"text", "binary", "json"}));
    cmd->add_option("--threads", o.threads,
                    "Cap on internal parallelism (current solver is serial)");
  };

  auto* sim = app.add_subcommand("simulate", "Draw a realization of a model");
  add_common(sim);
  sim->add_option("--model", o.model_path, "Model JSON file")->required();
  sim->add_option("--N", o.N, "Maximum horizontal index (overrides 2i+j-2)");
  sim->add_option("--seed", o.seed, "RNG seed")->each([&](const std::string&) {
    o.seed_given = true;
  });
  sim->add_flag("--emit-states", o.emit_states,
                "Also write state and innovation grids (.xh/.xv/.e)");

  auto* ident =
      app.add_subcommand("identify", "Recover a model from an output grid");
  add_common(ident);
  ident->add_option("--data", o.data_path, "Output grid file")->required();
  int order_h_val = -1, order_v_val = -1;
  ident->add_option("--order-h", order_h_val, "Fix the horizontal order");
  ident->add_option("--order-v", order_v_val, "Fix the vertical order");
  ident->add_option("--iterations", o.iterations,
                    "Stage-2 refinement passes (default 1)");

  auto* bias = app.add_subcommand(
      "bias-check", "Closed-form vs empirical projection bias");
  add_common(bias);
  bias->add_option("--model", o.model_path, "Model JSON file")->required();
  bias->add_option("--seed", o.seed, "Base RNG seed")
      ->each([&](const std::string&) { o.seed_given = true; });
  bias->add_option("--seeds", o.seeds, "Monte Carlo replicate count");

  auto* val = app.add_subcommand("validate", "Check a model file");
  add_common(val);
  val->add_option("--model", o.model_path, "Model JSON file")->required();

  CLI11_PARSE(app, argc, argv);

  if (order_h_val >= 0) o.order_h = order_h_val;
  if (order_v_val >= 0) o.order_v = order_v_val;

  try {
    if (sim->parsed()) return run_simulate(o);
    if (ident->parsed()) return run_identify(o);
    if (bias->parsed()) return run_bias_check(o);
    if (val->parsed()) return run_validate(o);
  } catch (const json::exception& e) {
    std::cerr << "report error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitInput;
}
