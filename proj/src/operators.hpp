#pragma once

#include "model.hpp"

#include <vector>

namespace r2d {

/// All structured operators used by the horizontal data-processing theory:
/// extended observability / controllability stacks, the lower-triangular
/// block-Toeplitz innovations operators, and the bold propagation matrices
/// over the s direction.
struct StructuredOperators {
  int i = 0, M = 0;
  Matrix Gamma_i_h;   // n_y i x n_h    [C1; C1 A1; ...]
  Matrix Gamma_i_vh;  // n_y i x n_v i  lower block-Toeplitz, diag C2
  Matrix K_i_h;       // n_y i x n_y i  lower block-Toeplitz, unit diag
  Matrix Theta_i_h;   // n_h i x n_h    [I; A1; ...]
  Matrix Theta_i_vh;  // n_v i x n_h    [A3; A3 A1; ...]
  Matrix A_i_vh;      // n_v i x n_v i  lower block-Toeplitz, diag A4
  Matrix K_i_vh;      // n_v i x n_y i  lower block-Toeplitz, diag K2
  Matrix Phi_i_h;     // n_h x n_h i    [A1^{i-1} | ... | I]
  Matrix Phi_i_vh;    // n_h x n_v i    Phi_i_h (I (x) A2)
  Matrix L_i_h;       // n_h x n_y i    [A1^{i-1} K1 | ... | K1]
  Matrix G_A1_h;      // n_h i x n_h i  strictly lower, blocks A1^{a-b-1}
  Matrix bA_M_vh;     // n_v i x n_h M      [Theta | A Theta | ...]
  Matrix bK_M_vh;     // n_v i x n_y i M    [K | A K | ...]
  Matrix bA_M_h;      // n_h (M+1) square   upper block-Toeplitz, diag A1^i
  Matrix bK_M_h;      // n_h (M+1) x n_y i (M+1), diag L_i_h
  Matrix Q1, Q2, P1, P2;
};

/// Assemble the operators for the given block depth i and s-range M; every
/// Kronecker-product factorization of the definitions is verified
/// internally to 1e-12 before returning.
StructuredOperators build_operators(const RoesserModel& m, int i, int M);

/// The projection coefficient row in its two equivalent forms: the
/// covariance expression and the Markov-parameter row [A1^{i-1} G1 | ... | G1].
struct DeltaForms {
  Matrix covariance_form;
  Matrix markov_form;
  double difference = 0;
};
DeltaForms delta_markov(const RoesserModel& m, const CovarianceSet& covs,
                        int i);

/// Closed-form pieces of the projection bias produced by correlated
/// horizontal/vertical state updates.
struct BiasTerms {
  Matrix Delta_i_h;          // Markov form, n_h x n_y i
  Matrix P0, Q0;             // n_v i x n_v i
  std::vector<Matrix> per_k; // E{X_f^vh(k) X_p^vh(k)^T} / j for k = 0..M
  Matrix crosscov;           // sum_k of Gamma_i_vh-conjugated per_k terms
  Matrix crosscov_per_column;  // crosscov / (M+1): expectation at 1/jbar scale
  Matrix bias;               // filled by bias_empirical; empty here
};
BiasTerms bias_closed_form(const RoesserModel& m, const CovarianceSet& covs,
                           int i, int M);

/// The same quantities measured from simulated state/innovation grids.
struct EmpiricalBias {
  std::vector<Matrix> per_k;  // X_f^vh(k) X_p^vh(k)^T / j
  Matrix crosscov;            // Gamma X_f^vh X_p^vh^T Gamma^T / jbar
  Matrix bias;                // crosscov R_pp^{-1} Y_p
};
EmpiricalBias bias_empirical(const SimulationResult& sim,
                             const StructuredOperators& ops, int i, int j,
                             int M);

}  // namespace r2d
