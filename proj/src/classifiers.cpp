#include "zsecg/classifiers.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace zsecg::classifiers {

Verdict threshold_classify(double energy, double threshold) {
  return energy > threshold ? Verdict::Abnormal : Verdict::Normal;
}

namespace {

void check_energies(std::span<const double> energies) {
  if (energies.empty()) throw EmptyTrainingSet("no energies to fit");
  for (double e : energies) {
    if (!(e >= 0.0)) throw InvalidTrainingSet("energies must be nonnegative");
  }
}

}  // namespace

ExponentialModel fit_exponential(std::span<const double> energies) {
  check_energies(energies);
  double sum = 0.0;
  for (double e : energies) sum += e;
  ExponentialModel model;
  // Floor keeps the log density finite when every training energy is zero.
  model.mean = std::max(sum / static_cast<double>(energies.size()), 1e-12);
  return model;
}

GaussianModel fit_gaussian(std::span<const double> energies) {
  check_energies(energies);
  const double n = static_cast<double>(energies.size());
  double mean = 0.0;
  for (double e : energies) mean += e;
  mean /= n;
  double var = 0.0;
  for (double e : energies) var += (e - mean) * (e - mean);
  var /= n;  // population MLE
  GaussianModel model;
  model.mean = mean;
  model.stddev = std::sqrt(var);
  if (model.stddev < 1e-6) {
    model.stddev = 1e-6;
    model.degenerate = true;
  }
  return model;
}

double exponential_log_density(const ExponentialModel& model, double x) {
  if (x < 0.0) return -std::numeric_limits<double>::infinity();
  return -std::log(model.mean) - x / model.mean;
}

double gaussian_log_density(const GaussianModel& model, double x) {
  const double z = (x - model.mean) / model.stddev;
  return -0.5 * std::log(2.0 * std::numbers::pi * model.stddev * model.stddev) - 0.5 * z * z;
}

Verdict prob_classify(const ExponentialModel& normal, const GaussianModel& abnormal,
                      double energy) {
  if (energy < 0.0) return Verdict::Abnormal;
  return gaussian_log_density(abnormal, energy) >= exponential_log_density(normal, energy)
             ? Verdict::Abnormal
             : Verdict::Normal;
}

double ensemble_npe_energy(const EnsembleModel& model, const Eigen::VectorXd& single,
                           const Eigen::VectorXd& trio) {
  return sparse::residual_npe(model.annihilator, model.npe_from_trio ? trio : single).energy;
}

EnsembleDecision ensemble_classify(const EnsembleModel& model, const Eigen::VectorXd& single,
                                   const Eigen::VectorXd& trio) {
  const cnn::CnnDecision network = cnn::cnn_classify(model.network, single, trio);
  EnsembleDecision decision;
  decision.confidence = network.confidence;
  decision.energy = ensemble_npe_energy(model, single, trio);
  if (network.confidence >= model.confidence_gate) {
    decision.verdict = network.verdict;
    decision.used_network = true;
  } else {
    decision.verdict = prob_classify(model.densities.normal, model.densities.abnormal,
                                     decision.energy);
  }
  return decision;
}

double f1_from_counts(long long tp, long long fp, long long fn) {
  const double precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  const double recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  if (precision + recall <= 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

GridSelection select_confidence_gate(const EnsembleModel& model,
                                     const std::vector<BeatPair>& validation) {
  if (validation.empty()) throw EmptyTrainingSet("empty validation set");
  struct Vote {
    Verdict network;
    Verdict fallback;
    double confidence;
    bool abnormal;
  };
  std::vector<Vote> votes;
  votes.reserve(validation.size());
  for (const BeatPair& beat : validation) {
    const cnn::CnnDecision network = cnn::cnn_classify(model.network, beat.single, beat.trio);
    const double energy = ensemble_npe_energy(model, beat.single, beat.trio);
    Vote vote;
    vote.network = network.verdict;
    vote.fallback = prob_classify(model.densities.normal, model.densities.abnormal, energy);
    vote.confidence = network.confidence;
    vote.abnormal = is_abnormal(beat.label);
    votes.push_back(vote);
  }
  GridSelection best;
  best.f1 = -1.0;
  for (int i = 0; i < 50; ++i) {
    const double gate = 0.50 + static_cast<double>(i) * 0.49 / 49.0;
    long long tp = 0, fp = 0, fn = 0;
    for (const Vote& vote : votes) {
      const Verdict verdict = vote.confidence >= gate ? vote.network : vote.fallback;
      const bool predicted = verdict == Verdict::Abnormal;
      if (predicted && vote.abnormal) ++tp;
      else if (predicted && !vote.abnormal) ++fp;
      else if (!predicted && vote.abnormal) ++fn;
    }
    const double f1 = f1_from_counts(tp, fp, fn);
    if (f1 >= best.f1) {  // ties move toward the larger gate
      best.f1 = f1;
      best.value = gate;
    }
  }
  return best;
}

GridSelection select_threshold(std::span<const double> energies, std::span<const int> labels,
                               double lo, double hi) {
  if (energies.size() != labels.size()) throw std::invalid_argument("size mismatch");
  if (energies.empty()) throw EmptyTrainingSet("empty validation set");
  if (!(hi >= lo)) throw std::invalid_argument("invalid threshold range");
  GridSelection best;
  best.f1 = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double threshold = lo + static_cast<double>(i) * (hi - lo) / 100.0;
    long long tp = 0, fp = 0, fn = 0;
    for (std::size_t j = 0; j < energies.size(); ++j) {
      const bool predicted = energies[j] > threshold;
      const bool abnormal = labels[j] != 0;
      if (predicted && abnormal) ++tp;
      else if (predicted && !abnormal) ++fp;
      else if (!predicted && abnormal) ++fn;
    }
    const double f1 = f1_from_counts(tp, fp, fn);
    if (f1 >= best.f1) {
      best.f1 = f1;
      best.value = threshold;
    }
  }
  return best;
}

}  // namespace zsecg::classifiers
