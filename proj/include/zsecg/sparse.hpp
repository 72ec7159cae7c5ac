#pragma once

#include <span>
#include <string>
#include <vector>

#include "zsecg/types.hpp"

namespace zsecg::sparse {

struct Dictionary {
  Eigen::MatrixXd atoms;  // N x n, unit-norm columns, n < N
  std::string patient_id;
};

struct SparseCode {
  Eigen::VectorXd coeffs;
  int sparsity_bound = -1;  // k for greedy pursuit, -1 for lasso
  bool converged = true;
};

struct Annihilator {
  Eigen::MatrixXd basis;  // (N-n) x N, orthonormal rows, basis * atoms == 0
};

struct LsOperator {
  Eigen::MatrixXd matrix;  // n x N, (D^T D + lambda I)^-1 D^T
  double lambda = 1e-3;
};

enum class ResidualKind : std::uint8_t { Sae = 0, Npe = 1, Lae1 = 2, Lae2 = 3 };

struct ResidualReport {
  Eigen::VectorXd residual;
  double energy = 0.0;  // squared l2 norm of the residual
  long long flops = 0;
  ResidualKind kind = ResidualKind::Sae;
};

struct LassoOptions {
  double rho = 1.0;
  int max_iter = 500;
  double tol = 1e-6;  // max KKT violation accepted as converged
};

// Per-beat FLOP counts for each residual engine.
long long flops_sae(int n_dims, int n_atoms, int k);
long long flops_npe(int n_dims, int n_atoms);
long long flops_lae_precomputed(int n_dims);
long long flops_lae_chained(int n_dims, int n_atoms);

// min_x ||s - D x||_2^2 + lambda * ||x||_1 via ADMM with soft thresholding.
SparseCode admm_lasso(const Eigen::MatrixXd& dict, const Eigen::VectorXd& signal,
                      double lambda, const LassoOptions& opt = {});

struct BatchLassoResult {
  Eigen::MatrixXd codes;  // n x T
  bool converged = true;
  int iterations = 0;
};

// Column-wise lasso sharing one factorization; columns are independent problems.
BatchLassoResult admm_lasso_batch(const Eigen::MatrixXd& dict,
                                  const Eigen::MatrixXd& signals, double lambda,
                                  const LassoOptions& opt = {});

// Max violation of the lasso optimality conditions at x.
double lasso_kkt_residual(const Eigen::MatrixXd& dict, const Eigen::VectorXd& signal,
                          const Eigen::VectorXd& x, double lambda);

// Greedy pursuit with a least-squares refit over the selected atoms at each step.
SparseCode omp(const Eigen::MatrixXd& dict, const Eigen::VectorXd& signal, int k);

struct DictionaryLearnOptions {
  double lambda = 0.01;
  int iterations = 30;
  LassoOptions lasso;
};

struct DictionaryLearnResult {
  Dictionary dictionary;
  std::vector<double> objective_history;  // one entry per iteration, after coding
};

// Alternate batch lasso coding with a least-squares dictionary update.
DictionaryLearnResult learn_dictionary(const Eigen::MatrixXd& signals, int n_atoms,
                                       const DictionaryLearnOptions& opt = {});

// Orthonormal basis of the left null space of the dictionary.
Annihilator build_annihilator(const Dictionary& dict);

LsOperator make_ls_operator(const Dictionary& dict, double lambda = 1e-3);

ResidualReport residual_sae(const Dictionary& dict, const Eigen::VectorXd& signal,
                            int k = 5);
ResidualReport residual_npe(const Annihilator& ann, const Eigen::VectorXd& signal);
// variant 1 applies the precomputed projector I - D*L; variant 2 chains s - D*(L*s).
ResidualReport residual_lae(const Dictionary& dict, const LsOperator& ls,
                            const Eigen::VectorXd& signal, int variant = 2);

// Residual energies per column.
Eigen::VectorXd npe_energies(const Annihilator& ann, const Eigen::MatrixXd& signals);
Eigen::VectorXd sae_energies(const Dictionary& dict, const Eigen::MatrixXd& signals,
                             int k = 5);
Eigen::VectorXd lae_energies(const Dictionary& dict, const LsOperator& ls,
                             const Eigen::MatrixXd& signals);

// Rank-based AUC with tie correction; labels nonzero = positive.
double auc(std::span<const double> scores, std::span<const int> labels);

}  // namespace zsecg::sparse
