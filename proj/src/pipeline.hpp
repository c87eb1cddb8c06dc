#pragma once

#include "hankel.hpp"
#include "model.hpp"

#include <map>
#include <optional>
#include <string>

namespace r2d {

enum class Direction { kHorizontal, kVertical };

/// Stage-1 orthogonal projection of future outputs onto past outputs with
/// SVD factorization and order selection.
struct ProjectionResult {
  Matrix O;                 // n_y i x jbar projected matrix
  Vector singular_values;
  int order = 0;
  Matrix Gamma;             // n_y i x order
  Matrix Xf;                // order x jbar future state estimate
};
ProjectionResult stage1_project(const GridData& y, int i, int j, Direction dir,
                                std::optional<int> order = std::nullopt);

/// R and Q blocks of the first refinement decomposition of
/// [X_f^vh; W_p^h; Y_f^h] with W_p^h = [X_p^vh; Y_p^h].
struct RqBlocks {
  Matrix R11, R21, R22, R31, R32, R33;
  Matrix Q1, Q2, Q3;  // orthonormal rows
};
RqBlocks stage2_rq(const Matrix& xf_vh, const Matrix& wp_h,
                   const Matrix& yf_h, int n_v_i, int n_y_i);

/// Split decomposition of [X_f^vh; X_p^vh; Y_p^h; Y_f^h].
struct RqBlocksSplit {
  Matrix R11;
  Matrix R21_1, R21_2;           // below R11
  Matrix R22_1, R22_2, R22_3;    // middle band
  Matrix R31, R32_1, R32_2, R33;
  Matrix Q1, Q21, Q22, Q3;
};
RqBlocksSplit stage2_rq_split(const Matrix& xf_vh, const Matrix& xp_vh,
                              const Matrix& yp_h, const Matrix& yf_h,
                              int n_v_i, int n_y_i);

/// Structured solve for the vertical-coupling observability operator.
Matrix recover_gamma_vh(const RqBlocks& rq, int n_y, int n_v, int i);

/// Recover the innovations shaping operator and the block-Hankel
/// innovations matrices from the residual factor E_f = R33 Q3.
struct InnovationsRecovery {
  Matrix K_i_h;      // unit-diagonal lower block-Toeplitz
  Matrix E_f_h;      // bold block-Hankel innovations, n_y i x jbar
  double residual = 0;  // relative misfit of K_i_h E_f_h(k) vs E_f(k)
};
InnovationsRecovery recover_innovations_operator(const Matrix& e_f, int n_y,
                                                 int i, int j, int M);

/// Solve Z = Y_f - (Gamma_i^h X_f^h) - K_i^h E_f^h = Gamma_i^vh X_f^vh for
/// the block-Hankel future vertical states. gamma_xf_h is the product
/// Gamma_i^h X_f^h (available from the decomposition without knowing
/// X_f^h itself).
Matrix recover_future_vertical(const Matrix& yf_h, const Matrix& gamma_xf_h,
                               const Matrix& k_i_h, const Matrix& e_f_h,
                               const Matrix& gamma_i_vh, int n_v, int i, int j,
                               int M);

/// Past-side recovery: vertical states, innovations, then horizontal
/// states by pseudo-inverse.
struct PastRecovery {
  Matrix Xp_vh, Ep_h, Xp_h;
  double reconstruction_residual = 0;  // Y_p vs recomposed right side
};
PastRecovery recover_past(const Matrix& yp_h, const RqBlocksSplit& rq,
                          const Matrix& gamma_i_h, const Matrix& gamma_i_vh,
                          const Matrix& k_i_h, int n_v, int i, int j, int M);

/// Least squares for the i-step horizontal propagation row
/// [A1^i | Phi_i^vh | L_i^h] from covariances of the stacked regressors.
struct DynamicsRegression {
  Matrix J, A1_i, Phi_i_vh, L_i_h;
  double residual = 0;
};
DynamicsRegression regress_dynamics(const Matrix& xf_h, const Matrix& xp_h,
                                    const Matrix& xp_vh, const Matrix& ep_h,
                                    int n_h, int n_v, int n_y, int i);

/// Merge the three state-sequence bands (past at offset 0, direct future
/// at offset i, propagated future at offset 2i) into the full grid,
/// preferring the direct band on overlaps; the initial states are the
/// grid's first row.
struct AssembledStates {
  GridData grid;
  Matrix initial;  // n x (M+1), the r=0 row
  double overlap_discrepancy = 0;
};
AssembledStates assemble_states(const Matrix& xp_h, const Matrix& xm_h,
                                const Matrix& xf_plus_h,
                                int n, int i, int j, int M);

/// Run the innovations recurrences as a whitening filter over the output
/// grid with the given parameters and zero boundary states.
struct FilterResult {
  GridData xh, xv, e;
};
FilterResult filter_states(const RoesserModel& m, const GridData& y);

/// The model with the roles of the two directions exchanged (for
/// processing the transposed grid).
RoesserModel transposed_model(const RoesserModel& m);

struct IdentificationResult {
  RoesserModel model;          // recovered parameters (incl. Q, R, S)
  Matrix Pi;                   // sample state covariance
  Matrix G, Lambda00;
  GridData xh_grid, xv_grid;
  Matrix initial_h;            // x^h_{0,s} over s
  Matrix initial_v;            // x^v_{r,0} over r
  std::map<std::string, double> diagnostics;
};

/// Regress parameters from assembled state grids and the output grid.
IdentificationResult recover_parameters(const GridData& xh_grid,
                                        const GridData& xv_grid,
                                        const GridData& y);

struct IdentifyOptions {
  int i = 6;
  std::optional<int> order_h, order_v;
  int iterations = 2;  // stage-2 refinement passes
};

/// Full two-stage identification from an output grid.
IdentificationResult identify(const GridData& y, const IdentifyOptions& opts);

}  // namespace r2d
