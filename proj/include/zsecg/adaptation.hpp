#pragma once

#include <string>
#include <vector>

#include "zsecg/sparse.hpp"
#include "zsecg/types.hpp"

namespace zsecg::adaptation {

struct MorphTransform {
  Eigen::MatrixXd matrix;  // N x N, maps source-beat columns to the target domain
  std::string source_id;
  std::string target_id;
  double gamma = 0.2;
  double eta = 0.002;
  int epochs = 25;
};

struct MtmOptions {
  double gamma = 0.2;  // pull toward the identity; must stay positive
  double eta = 0.002;
  int epochs = 25;
  double lambda = 0.01;
  sparse::LassoOptions lasso;
};

// Half the derivative of ||Q S - D X||_F^2 + gamma ||S - Q S||_F^2 in Q at fixed X.
Eigen::MatrixXd mtm_gradient(const Eigen::MatrixXd& q, const Eigen::MatrixXd& sources,
                             const Eigen::MatrixXd& dict_atoms,
                             const Eigen::MatrixXd& codes, double gamma);

// Gradient descent on Q starting from the identity; codes are refreshed per epoch.
MorphTransform learn_mtm(const sparse::Dictionary& target_dict,
                         const Eigen::MatrixXd& source_beats,
                         const MtmOptions& opt = {});

// Q * beat, re-normalized to unit energy.
Eigen::VectorXd apply_mtm(const MorphTransform& transform, const Eigen::VectorXd& beat);
Eigen::MatrixXd apply_mtm_columns(const MorphTransform& transform,
                                  const Eigen::MatrixXd& beats);

// Causal same-length convolution anchored at the filter's first tap.
Eigen::VectorXd convolve_same(const Eigen::VectorXd& signal,
                              const Eigen::VectorXd& taps);

struct AbsFilter {
  Eigen::VectorXd taps;
  std::string source_id;
  std::int64_t source_origin = -1;
  AamiClass source_class = AamiClass::V;
};

struct AbsLibrary {
  std::vector<AbsFilter> filters;
  int filter_len = 32;
  double ridge = 1e-6;
  double prune_threshold = 0.9;
};

// The actual beat closest in l2 to the per-coordinate mean; ties pick the lowest index.
Eigen::VectorXd average_normal_beat(const Eigen::MatrixXd& normals);

// Least-squares filter mapping avg_normal onto one abnormal beat.
AbsFilter estimate_abs_filter(const Eigen::VectorXd& avg_normal,
                              const Eigen::VectorXd& abnormal, int filter_len,
                              double ridge);

struct AbsSource {
  std::string patient_id;
  Eigen::MatrixXd normal_singles;  // one unit-norm beat per column
  std::vector<Beat> abnormal_singles;
};

// One filter per source abnormal beat, greedily pruned by cosine similarity.
// prune_threshold >= 1 keeps every filter.
AbsLibrary build_abs_library(const std::vector<AbsSource>& sources,
                             int filter_len = 32, double ridge = 1e-6,
                             double prune_threshold = 0.9);

// Push the target's average normal through a library filter.
Beat synthesize_abnormal(const Eigen::VectorXd& avg_normal, const AbsFilter& filter);

}  // namespace zsecg::adaptation
