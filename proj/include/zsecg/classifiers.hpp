#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "zsecg/cnn.hpp"
#include "zsecg/sparse.hpp"
#include "zsecg/types.hpp"

namespace zsecg::classifiers {

// Residual-energy detectors and the confidence-gated ensemble.

// energy > threshold reads as Abnormal.
Verdict threshold_classify(double energy, double threshold);

struct ExponentialModel {
  double mean = 0.0;  // MLE over normal-beat energies
};

struct GaussianModel {
  double mean = 0.0;
  double stddev = 0.0;  // population MLE, floored at 1e-6
  bool degenerate = false;
};

// Energies must be nonnegative; empty input throws EmptyTrainingSet.
ExponentialModel fit_exponential(std::span<const double> energies);
GaussianModel fit_gaussian(std::span<const double> energies);

double exponential_log_density(const ExponentialModel& model, double x);
double gaussian_log_density(const GaussianModel& model, double x);

// Likelihood-ratio rule: exponential for Normal, Gaussian for Abnormal.
// Negative energies and ties resolve to Abnormal.
Verdict prob_classify(const ExponentialModel& normal, const GaussianModel& abnormal, double energy);

struct ProbModel {
  ExponentialModel normal;
  GaussianModel abnormal;
};

// Confidence-gated two-expert rule: the network answers when its max-softmax
// confidence reaches the gate, otherwise the residual-energy likelihood rule
// answers. gate <= 0.5 is network-only, gate > 1 is likelihood-only.
struct EnsembleModel {
  cnn::CnnModel network;
  ProbModel densities;
  sparse::Annihilator annihilator;
  double confidence_gate = 0.5;
  bool npe_from_trio = false;  // residual energy computed from the trio window
};

struct EnsembleDecision {
  Verdict verdict = Verdict::Normal;
  double confidence = 0.0;
  double energy = 0.0;
  bool used_network = false;
};

EnsembleDecision ensemble_classify(const EnsembleModel& model, const Eigen::VectorXd& single,
                                   const Eigen::VectorXd& trio);

double ensemble_npe_energy(const EnsembleModel& model, const Eigen::VectorXd& single,
                           const Eigen::VectorXd& trio);

struct GridSelection {
  double value = 0.0;
  double f1 = 0.0;
};

// 50-point gate grid 0.50 + i*0.49/49; picks the best validation F1 and breaks
// ties toward the larger gate.
GridSelection select_confidence_gate(const EnsembleModel& model,
                                     const std::vector<BeatPair>& validation);

// 101-point threshold grid over [lo, hi]; best validation F1, ties toward the
// larger threshold.
GridSelection select_threshold(std::span<const double> energies, std::span<const int> labels,
                               double lo, double hi);

double f1_from_counts(long long tp, long long fp, long long fn);

}  // namespace zsecg::classifiers
