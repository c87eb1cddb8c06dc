#pragma once

#include "grid.hpp"
#include "linalg.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace r2d {

/// 2-D Roesser model in innovations form, optionally carrying the
/// process/measurement noise covariances {Q, R, S} of the underlying
/// state-space form.
struct RoesserModel {
  int n_h = 0, n_v = 0, n_y = 0;
  Matrix A1, A2, A3, A4;  // state blocks
  Matrix C1, C2;          // output blocks
  Matrix K1, K2;          // Kalman gain blocks
  Matrix Re;              // innovations covariance
  std::optional<Matrix> Q;  // n_x x n_x
  std::optional<Matrix> R;  // n_y x n_y
  std::optional<Matrix> S;  // n_x x n_y

  int n_x() const { return n_h + n_v; }
  Matrix A() const;
  Matrix C() const;
  Matrix K() const;

  /// Shape consistency; throws std::invalid_argument on mismatch.
  void check_dimensions() const;
};

struct ValidationReport {
  bool pass = false;
  double spectral_radius = 0;
  bool stable = false;
  bool re_positive_definite = false;
  bool joint_noise_psd = true;   // [[Q,S],[S^T,R]] >= 0 (when supplied)
  bool q_psd = true;
  bool r_positive_definite = true;
  bool pi_positive_definite = true;
  double pi_hv_norm = 0;  // constraint residual surfaced, not enforced
  std::vector<std::string> failures;
};

ValidationReport validate_model(const RoesserModel& m);

/// Stationary state covariances under the block-diagonal constraint:
/// Pi_h = A1 Pi_h A1^T + A2 Pi_v A2^T + Q_hh and the vertical twin.
/// Q defaults to K Re K^T (innovations form) when not supplied.
struct LyapunovResult {
  Matrix Pi_h, Pi_v;
  double residual = 0;
  int iterations = 0;
};
LyapunovResult solve_lyapunov(const RoesserModel& m);

/// Covariance of the state update (Pi', including the off-diagonal block
/// A1 Pi_h A3^T + A2 Pi_v A4^T + Q_hv).
Matrix state_update_covariance(const RoesserModel& m, const Matrix& pi_h,
                               const Matrix& pi_v);

struct RiccatiResult {
  Matrix P;   // n_x x n_x state-estimate covariance
  Matrix K;   // n_x x n_y gain
  Matrix Re;  // innovations covariance at the fixed point
  double residual = 0;
  int iterations = 0;
};

/// Forward Riccati iteration on {A, C, G, Lambda00}:
/// P <- A P A^T + (G - A P C^T)(Lambda00 - C P C^T)^{-1} (...)^T.
RiccatiResult solve_riccati_forward(const RoesserModel& m,
                                    const Matrix& lambda00, const Matrix& g);

/// Error-covariance Riccati on {A, C, Q, R, S} (quadratic term subtracted):
/// Sigma <- A Sigma A^T + Q - (A Sigma C^T + S)(C Sigma C^T + R)^{-1}(...)^T.
/// Returns Sigma in the P slot and the (K2)-form gain.
RiccatiResult solve_riccati_error(const RoesserModel& m);

/// Everything the identification theory needs in one bundle.
struct CovarianceSet {
  Matrix Pi_h, Pi_v, Pi_hv;
  Matrix P_h, P_v;
  Matrix P_hv;  // update cross term A1 P_h A3^T + A2 P_v A4^T + K1 Re K2^T
  Matrix Sigma_h, Sigma_v;
  Matrix G, G1, G2;
  Matrix Lambda00;
  Matrix Re;
  Matrix K;  // gain consistent with P
  double riccati_residual = 0;
  double gain_agreement = 0;  // ||K(Ric1 form) - K(Ric2 form)|| when both exist
};

CovarianceSet compute_covariances(const RoesserModel& m);

/// 2-D Markov parameter A^{k,m} from the split recursion with A^{0,0} = I.
Matrix markov_power(const RoesserModel& m, int k, int m_idx);

/// Theoretical output autocovariance Lambda_{k,m}.
Matrix autocovariance(const RoesserModel& m, const CovarianceSet& covs, int k,
                      int m_idx);

/// Given {A, C, K1, Re}, solve for K2 together with the stationary
/// state-estimate covariances so that the update cross covariance
/// P_hv vanishes. Throws when no cancelling K2 exists.
RoesserModel construct_uncorrelated(const RoesserModel& m);

/// Counter-based 64-bit generator (splitmix64 stream) feeding Box-Muller
/// pairs: deterministic, portable per implementation.
class GaussianSampler {
 public:
  explicit GaussianSampler(std::uint64_t seed) : state_(seed) {}
  double next();

 private:
  std::uint64_t next_u64();
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0;
};

struct SimulationOptions {
  bool draw_initial_horizontal = false;  // x^h_{0,s} ~ N(0, P_h)
};

struct SimulationResult {
  GridData y, xh, xv, e;
};

/// Simulate the innovations form over r in [0, N], s in [0, M] with zero
/// boundary states (x^h_{0,s} = 0, x^v_{r,0} = 0 unless overridden).
SimulationResult simulate(const RoesserModel& m, int N, int M,
                          std::uint64_t seed,
                          const SimulationOptions& opts = {});

}  // namespace r2d
