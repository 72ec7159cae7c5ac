#include "zsecg/adaptation.hpp"

#include <Eigen/Cholesky>
#include <cmath>

namespace zsecg::adaptation {

namespace {

void require_unit_columns(const Eigen::MatrixXd& m, const char* what) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if (std::abs(m.col(j).norm() - 1.0) > 1e-6)
      throw std::invalid_argument(std::string(what) +
                                  " columns must have unit l2 norm");
  }
}

}  // namespace

Eigen::MatrixXd mtm_gradient(const Eigen::MatrixXd& q, const Eigen::MatrixXd& sources,
                             const Eigen::MatrixXd& dict_atoms,
                             const Eigen::MatrixXd& codes, double gamma) {
  const Eigen::MatrixXd sst = sources * sources.transpose();
  Eigen::MatrixXd anchor = (1.0 + gamma) * q;
  anchor.diagonal().array() -= gamma;
  return anchor * sst - dict_atoms * (codes * sources.transpose());
}

MorphTransform learn_mtm(const sparse::Dictionary& target_dict,
                         const Eigen::MatrixXd& source_beats, const MtmOptions& opt) {
  if (opt.gamma <= 0.0)
    throw std::invalid_argument("identity anchor weight must be positive");
  if (opt.eta <= 0.0) throw std::invalid_argument("step size must be positive");
  if (opt.epochs < 0) throw std::invalid_argument("epochs must be nonnegative");
  if (target_dict.atoms.rows() != source_beats.rows())
    throw std::invalid_argument("source beats do not match the dictionary dimension");
  if (source_beats.cols() == 0)
    throw EmptyTrainingSet("morphology transform needs source beats");
  require_unit_columns(source_beats, "source beat");

  const Eigen::Index n_dims = source_beats.rows();
  Eigen::MatrixXd q = Eigen::MatrixXd::Identity(n_dims, n_dims);

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    Eigen::MatrixXd mapped = q * source_beats;
    for (Eigen::Index j = 0; j < mapped.cols(); ++j) {
      const double norm = mapped.col(j).norm();
      if (!(norm > 1e-12)) throw MtmDiverged(epoch);
      mapped.col(j) /= norm;
    }
    const Eigen::MatrixXd codes =
        sparse::admm_lasso_batch(target_dict.atoms, mapped, opt.lambda, opt.lasso)
            .codes;
    q -= opt.eta * mtm_gradient(q, source_beats, target_dict.atoms, codes, opt.gamma);
    if (!q.allFinite()) throw MtmDiverged(epoch);
  }

  MorphTransform transform;
  transform.matrix = std::move(q);
  transform.target_id = target_dict.patient_id;
  transform.gamma = opt.gamma;
  transform.eta = opt.eta;
  transform.epochs = opt.epochs;
  return transform;
}

Eigen::VectorXd apply_mtm(const MorphTransform& transform, const Eigen::VectorXd& beat) {
  Eigen::VectorXd mapped = transform.matrix * beat;
  const double norm = mapped.norm();
  if (!(norm > 1e-12))
    throw InvalidSegment("morphology transform collapsed a beat");
  return mapped / norm;
}

Eigen::MatrixXd apply_mtm_columns(const MorphTransform& transform,
                                  const Eigen::MatrixXd& beats) {
  Eigen::MatrixXd mapped = transform.matrix * beats;
  for (Eigen::Index j = 0; j < mapped.cols(); ++j) {
    const double norm = mapped.col(j).norm();
    if (!(norm > 1e-12))
      throw InvalidSegment("morphology transform collapsed a beat");
    mapped.col(j) /= norm;
  }
  return mapped;
}

Eigen::VectorXd convolve_same(const Eigen::VectorXd& signal,
                              const Eigen::VectorXd& taps) {
  if (taps.size() < 1) throw std::invalid_argument("empty filter");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(signal.size());
  for (Eigen::Index t = 0; t < signal.size(); ++t) {
    double acc = 0.0;
    const Eigen::Index m_max = std::min<Eigen::Index>(taps.size() - 1, t);
    for (Eigen::Index m = 0; m <= m_max; ++m) acc += taps(m) * signal(t - m);
    out(t) = acc;
  }
  return out;
}

Eigen::VectorXd average_normal_beat(const Eigen::MatrixXd& normals) {
  if (normals.cols() == 0)
    throw EmptyTrainingSet("average beat needs at least one normal");
  const Eigen::VectorXd mean = normals.rowwise().mean();
  Eigen::Index best = 0;
  double best_dist = (normals.col(0) - mean).squaredNorm();
  for (Eigen::Index j = 1; j < normals.cols(); ++j) {
    const double d = (normals.col(j) - mean).squaredNorm();
    if (d < best_dist) {
      best = j;
      best_dist = d;
    }
  }
  return normals.col(best);
}

AbsFilter estimate_abs_filter(const Eigen::VectorXd& avg_normal,
                              const Eigen::VectorXd& abnormal, int filter_len,
                              double ridge) {
  const Eigen::Index n = avg_normal.size();
  if (filter_len < 1 || filter_len >= n)
    throw std::invalid_argument("filter length must be in [1, beat length)");
  if (abnormal.size() != n)
    throw std::invalid_argument("beat lengths do not match");
  if (ridge < 0.0) throw std::invalid_argument("ridge must be nonnegative");

  Eigen::MatrixXd conv(n, filter_len);
  for (Eigen::Index t = 0; t < n; ++t)
    for (int m = 0; m < filter_len; ++m)
      conv(t, m) = t >= m ? avg_normal(t - m) : 0.0;

  const Eigen::MatrixXd gram = conv.transpose() * conv;
  const Eigen::VectorXd rhs = conv.transpose() * abnormal;

  auto solve = [&](double reg) {
    Eigen::MatrixXd lhs = gram;
    lhs.diagonal().array() += reg;
    return Eigen::VectorXd(lhs.ldlt().solve(rhs));
  };

  Eigen::VectorXd taps = solve(ridge);
  if (!taps.allFinite()) {
    double floor = 1e-8 * gram.trace() / filter_len;
    if (!(floor > 0.0)) floor = 1e-12;
    taps = solve(std::max(ridge, floor));
  }

  AbsFilter filter;
  filter.taps = std::move(taps);
  return filter;
}

AbsLibrary build_abs_library(const std::vector<AbsSource>& sources, int filter_len,
                             double ridge, double prune_threshold) {
  AbsLibrary library;
  library.filter_len = filter_len;
  library.ridge = ridge;
  library.prune_threshold = prune_threshold;

  std::vector<AbsFilter> candidates;
  for (const AbsSource& source : sources) {
    if (source.normal_singles.cols() == 0 || source.abnormal_singles.empty())
      continue;
    const Eigen::VectorXd avg = average_normal_beat(source.normal_singles);
    for (const Beat& beat : source.abnormal_singles) {
      AbsFilter filter = estimate_abs_filter(avg, beat.values, filter_len, ridge);
      filter.source_id = source.patient_id;
      filter.source_origin = beat.origin_index;
      filter.source_class = beat.label;
      candidates.push_back(std::move(filter));
    }
  }

  for (AbsFilter& candidate : candidates) {
    const double norm = candidate.taps.norm();
    if (!(norm > 1e-12)) continue;
    if (prune_threshold < 1.0) {
      bool redundant = false;
      for (const AbsFilter& kept : library.filters) {
        const double cosine =
            candidate.taps.dot(kept.taps) / (norm * kept.taps.norm());
        if (cosine >= prune_threshold) {
          redundant = true;
          break;
        }
      }
      if (redundant) continue;
    }
    library.filters.push_back(std::move(candidate));
  }
  return library;
}

Beat synthesize_abnormal(const Eigen::VectorXd& avg_normal, const AbsFilter& filter) {
  Eigen::VectorXd values = convolve_same(avg_normal, filter.taps);
  const double norm = values.norm();
  if (!(norm > 1e-12))
    throw InvalidSegment("filter produced a degenerate beat");
  Beat beat;
  beat.values = values / norm;
  beat.label = filter.source_class;
  beat.patient_id = filter.source_id;
  beat.origin_index = -1;
  return beat;
}

}  // namespace zsecg::adaptation
