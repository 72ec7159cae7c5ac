#include "zsecg/sparse.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace zsecg::sparse {

namespace {

void require_unit_columns(const Eigen::MatrixXd& m, const char* what) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if (std::abs(m.col(j).norm() - 1.0) > 1e-6)
      throw std::invalid_argument(std::string(what) +
                                  " columns must have unit l2 norm");
  }
}

double kkt_violation(const Eigen::MatrixXd& gram, const Eigen::MatrixXd& dts,
                     const Eigen::MatrixXd& z, double lambda) {
  const Eigen::MatrixXd g = 2.0 * (gram * z - dts);
  double worst = 0.0;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double zi = z(i, j);
      const double gi = g(i, j);
      const double v = zi == 0.0 ? std::max(0.0, std::abs(gi) - lambda)
                                 : std::abs(gi + (zi > 0.0 ? lambda : -lambda));
      worst = std::max(worst, v);
    }
  }
  return worst;
}

}  // namespace

long long flops_sae(int n_dims, int n_atoms, int k) {
  const long long N = n_dims, n = n_atoms, kk = k;
  return N * kk * (2 * kk + 3) + 2 * kk * n * (N + 1) + (2 * n + 1) * N;
}

long long flops_npe(int n_dims, int n_atoms) {
  return 2LL * n_dims * (n_dims - n_atoms);
}

long long flops_lae_precomputed(int n_dims) { return 2LL * n_dims * n_dims; }

long long flops_lae_chained(int n_dims, int n_atoms) {
  return (4LL * n_atoms + 1) * n_dims;
}

BatchLassoResult admm_lasso_batch(const Eigen::MatrixXd& dict,
                                  const Eigen::MatrixXd& signals, double lambda,
                                  const LassoOptions& opt) {
  if (lambda <= 0.0) throw std::invalid_argument("lasso weight must be positive");
  if (dict.rows() != signals.rows())
    throw std::invalid_argument("signal dimension does not match dictionary");
  require_unit_columns(dict, "dictionary");

  const Eigen::Index n = dict.cols();
  const Eigen::Index T = signals.cols();
  const Eigen::MatrixXd gram = dict.transpose() * dict;
  const Eigen::MatrixXd dts = dict.transpose() * signals;
  const Eigen::LLT<Eigen::MatrixXd> llt(
      2.0 * gram + opt.rho * Eigen::MatrixXd::Identity(n, n));
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("lasso subproblem factorization failed");

  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(n, T);
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(n, T);
  const double kappa = lambda / opt.rho;

  BatchLassoResult out;
  out.converged = false;
  for (int iter = 1; iter <= opt.max_iter; ++iter) {
    const Eigen::MatrixXd x = llt.solve(2.0 * dts + opt.rho * (z - u));
    const Eigen::MatrixXd v = x + u;
    z = ((v.array().abs() - kappa).max(0.0) * v.array().sign()).matrix();
    u += x - z;
    out.iterations = iter;
    if (kkt_violation(gram, dts, z, lambda) <= opt.tol) {
      out.converged = true;
      break;
    }
  }
  out.codes = std::move(z);
  return out;
}

SparseCode admm_lasso(const Eigen::MatrixXd& dict, const Eigen::VectorXd& signal,
                      double lambda, const LassoOptions& opt) {
  BatchLassoResult batch = admm_lasso_batch(dict, signal, lambda, opt);
  SparseCode code;
  code.coeffs = batch.codes.col(0);
  code.sparsity_bound = -1;
  code.converged = batch.converged;
  return code;
}

double lasso_kkt_residual(const Eigen::MatrixXd& dict, const Eigen::VectorXd& signal,
                          const Eigen::VectorXd& x, double lambda) {
  const Eigen::MatrixXd gram = dict.transpose() * dict;
  const Eigen::MatrixXd dts = dict.transpose() * signal;
  return kkt_violation(gram, dts, x, lambda);
}

SparseCode omp(const Eigen::MatrixXd& dict, const Eigen::VectorXd& signal, int k) {
  const Eigen::Index n = dict.cols();
  if (k < 1 || k > n)
    throw std::invalid_argument("pursuit sparsity must be in [1, n_atoms]");
  if (dict.rows() != signal.size())
    throw std::invalid_argument("signal dimension does not match dictionary");

  std::vector<Eigen::Index> support;
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  Eigen::VectorXd residual = signal;
  Eigen::VectorXd sol;

  for (int step = 0; step < k; ++step) {
    if (residual.norm() <= 1e-12) break;
    const Eigen::VectorXd corr = dict.transpose() * residual;
    Eigen::Index best = -1;
    double best_val = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      const double v = std::abs(corr(j));
      if (best < 0 || v > best_val) {  // ties keep the lowest index
        best = j;
        best_val = v;
      }
    }
    if (best < 0 || best_val <= 1e-14) break;
    used[static_cast<std::size_t>(best)] = true;
    support.push_back(best);

    Eigen::MatrixXd sub(dict.rows(), static_cast<Eigen::Index>(support.size()));
    for (std::size_t i = 0; i < support.size(); ++i)
      sub.col(static_cast<Eigen::Index>(i)) = dict.col(support[i]);
    sol = sub.colPivHouseholderQr().solve(signal);
    residual = signal - sub * sol;
  }

  SparseCode code;
  code.coeffs = Eigen::VectorXd::Zero(n);
  for (std::size_t i = 0; i < support.size(); ++i)
    code.coeffs(support[i]) = sol(static_cast<Eigen::Index>(i));
  code.sparsity_bound = k;
  code.converged = true;
  return code;
}

DictionaryLearnResult learn_dictionary(const Eigen::MatrixXd& signals, int n_atoms,
                                       const DictionaryLearnOptions& opt) {
  const Eigen::Index N = signals.rows();
  const Eigen::Index T = signals.cols();
  if (n_atoms < 1 || n_atoms >= N)
    throw std::invalid_argument("atom count must satisfy 0 < n < signal dimension");
  if (T < n_atoms)
    throw std::invalid_argument("need at least as many training signals as atoms");
  if (opt.iterations < 1) throw std::invalid_argument("iterations must be positive");
  require_unit_columns(signals, "training signal");

  // Deterministic start: evenly spaced training columns.
  Eigen::MatrixXd atoms(N, n_atoms);
  for (int j = 0; j < n_atoms; ++j)
    atoms.col(j) = signals.col((static_cast<Eigen::Index>(j) * T) / n_atoms);

  DictionaryLearnResult out;
  out.objective_history.reserve(static_cast<std::size_t>(opt.iterations));

  for (int it = 0; it < opt.iterations; ++it) {
    const BatchLassoResult coded = admm_lasso_batch(atoms, signals, opt.lambda, opt.lasso);
    const Eigen::MatrixXd& codes = coded.codes;
    out.objective_history.push_back((signals - atoms * codes).squaredNorm() +
                                    opt.lambda * codes.cwiseAbs().sum());

    Eigen::MatrixXd xxt = codes * codes.transpose();
    double ridge = 1e-6 * xxt.trace() / n_atoms;
    if (!(ridge > 0.0)) ridge = 1e-12;
    xxt.diagonal().array() += ridge;
    atoms = xxt.ldlt().solve(codes * signals.transpose()).transpose();

    const Eigen::RowVectorXd rep_error =
        (signals - atoms * codes).colwise().squaredNorm();
    for (int j = 0; j < n_atoms; ++j) {
      const double nrm = atoms.col(j).norm();
      if (nrm < 1e-12) {
        Eigen::Index worst = 0;
        rep_error.maxCoeff(&worst);
        atoms.col(j) = signals.col(worst);
      } else {
        atoms.col(j) /= nrm;
      }
    }
  }

  out.dictionary.atoms = std::move(atoms);
  return out;
}

Annihilator build_annihilator(const Dictionary& dict) {
  const Eigen::MatrixXd& D = dict.atoms;
  const Eigen::Index N = D.rows();
  const Eigen::Index n = D.cols();
  if (n >= N)
    throw std::invalid_argument("annihilator needs a strictly tall dictionary");

  Eigen::BDCSVD<Eigen::MatrixXd> svd(D, Eigen::ComputeFullU);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv(n - 1) <= 1e-10 * sv(0))
    throw RankDeficient("dictionary is numerically rank deficient");

  Annihilator ann;
  ann.basis = svd.matrixU().rightCols(N - n).transpose();
  return ann;
}

LsOperator make_ls_operator(const Dictionary& dict, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("ridge weight must be nonnegative");
  const Eigen::MatrixXd& D = dict.atoms;
  Eigen::MatrixXd gram = D.transpose() * D;
  gram.diagonal().array() += lambda;
  LsOperator op;
  op.matrix = gram.ldlt().solve(D.transpose());
  op.lambda = lambda;
  return op;
}

ResidualReport residual_sae(const Dictionary& dict, const Eigen::VectorXd& signal,
                            int k) {
  const SparseCode code = omp(dict.atoms, signal, k);
  ResidualReport r;
  r.kind = ResidualKind::Sae;
  r.residual = dict.atoms * code.coeffs - signal;
  r.energy = r.residual.squaredNorm();
  r.flops = flops_sae(static_cast<int>(dict.atoms.rows()),
                      static_cast<int>(dict.atoms.cols()), k);
  return r;
}

ResidualReport residual_npe(const Annihilator& ann, const Eigen::VectorXd& signal) {
  ResidualReport r;
  r.kind = ResidualKind::Npe;
  r.residual = ann.basis * signal;
  r.energy = r.residual.squaredNorm();
  const int N = static_cast<int>(ann.basis.cols());
  r.flops = flops_npe(N, N - static_cast<int>(ann.basis.rows()));
  return r;
}

ResidualReport residual_lae(const Dictionary& dict, const LsOperator& ls,
                            const Eigen::VectorXd& signal, int variant) {
  const Eigen::MatrixXd& D = dict.atoms;
  const int N = static_cast<int>(D.rows());
  const int n = static_cast<int>(D.cols());
  ResidualReport r;
  if (variant == 1) {
    const Eigen::MatrixXd projector =
        Eigen::MatrixXd::Identity(N, N) - D * ls.matrix;
    r.residual = projector * signal;
    r.kind = ResidualKind::Lae1;
    r.flops = flops_lae_precomputed(N);
  } else if (variant == 2) {
    r.residual = signal - D * (ls.matrix * signal);
    r.kind = ResidualKind::Lae2;
    r.flops = flops_lae_chained(N, n);
  } else {
    throw std::invalid_argument("residual variant must be 1 or 2");
  }
  r.energy = r.residual.squaredNorm();
  return r;
}

Eigen::VectorXd npe_energies(const Annihilator& ann, const Eigen::MatrixXd& signals) {
  return (ann.basis * signals).colwise().squaredNorm().transpose();
}

Eigen::VectorXd sae_energies(const Dictionary& dict, const Eigen::MatrixXd& signals,
                             int k) {
  Eigen::VectorXd out(signals.cols());
  for (Eigen::Index j = 0; j < signals.cols(); ++j)
    out(j) = residual_sae(dict, signals.col(j), k).energy;
  return out;
}

Eigen::VectorXd lae_energies(const Dictionary& dict, const LsOperator& ls,
                             const Eigen::MatrixXd& signals) {
  return (signals - dict.atoms * (ls.matrix * signals))
      .colwise()
      .squaredNorm()
      .transpose();
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("scores and labels must have equal length");
  const std::size_t total = scores.size();
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  std::vector<double> rank(total);
  std::size_t i = 0;
  while (i < total) {
    std::size_t j = i;
    while (j + 1 < total && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = avg;
    i = j + 1;
  }

  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t t = 0; t < total; ++t) {
    if (labels[t] != 0) {
      pos_rank_sum += rank[t];
      ++n_pos;
    }
  }
  const std::size_t n_neg = total - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("auc needs at least one sample of each class");
  return (pos_rank_sum - 0.5 * static_cast<double>(n_pos) *
                             (static_cast<double>(n_pos) + 1.0)) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace zsecg::sparse
