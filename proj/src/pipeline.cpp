#include "zsecg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <utility>

#include <json.hpp>

namespace zsecg::pipeline {

std::string strategy_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::Baseline: return "baseline";
    case StrategyKind::Abs: return "abs";
    case StrategyKind::DomainAdaptation: return "da";
  }
  throw std::invalid_argument("unknown strategy");
}

StrategyKind strategy_from_name(const std::string& name) {
  if (name == "baseline") return StrategyKind::Baseline;
  if (name == "abs") return StrategyKind::Abs;
  if (name == "da") return StrategyKind::DomainAdaptation;
  throw std::invalid_argument("unknown strategy: " + name);
}

void Confusion::add(bool predicted_abnormal, bool abnormal) {
  if (predicted_abnormal && abnormal) ++tp;
  else if (predicted_abnormal && !abnormal) ++fp;
  else if (!predicted_abnormal && abnormal) ++fn;
  else ++tn;
}

Confusion& Confusion::operator+=(const Confusion& other) {
  tp += other.tp;
  fp += other.fp;
  fn += other.fn;
  tn += other.tn;
  return *this;
}

Metrics metrics_from_confusion(const Confusion& c) {
  Metrics m;
  m.precision = c.tp + c.fp > 0 ? double(c.tp) / double(c.tp + c.fp) : 0.0;
  m.recall = c.tp + c.fn > 0 ? double(c.tp) / double(c.tp + c.fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  m.specificity = c.tn + c.fp > 0 ? double(c.tn) / double(c.tn + c.fp) : 0.0;
  m.accuracy = c.total() > 0 ? double(c.tp + c.tn) / double(c.total()) : 0.0;
  return m;
}

namespace {

Eigen::MatrixXd column_matrix(const std::vector<const Eigen::VectorXd*>& columns) {
  Eigen::MatrixXd m(kBeatLength, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 0; i < columns.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = *columns[i];
  return m;
}

Eigen::MatrixXd singles_of(const std::vector<BeatPair>& beats) {
  std::vector<const Eigen::VectorXd*> cols;
  cols.reserve(beats.size());
  for (const BeatPair& b : beats) cols.push_back(&b.single);
  return column_matrix(cols);
}

Eigen::MatrixXd trios_of(const std::vector<BeatPair>& beats) {
  std::vector<const Eigen::VectorXd*> cols;
  cols.reserve(beats.size());
  for (const BeatPair& b : beats) cols.push_back(&b.trio);
  return column_matrix(cols);
}

Eigen::MatrixXd item_inputs(const std::vector<DatasetItem>& items) {
  Eigen::MatrixXd m(2 * kBeatLength, static_cast<Eigen::Index>(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) {
    m.col(static_cast<Eigen::Index>(i)).head(kBeatLength) = items[i].single;
    m.col(static_cast<Eigen::Index>(i)).tail(kBeatLength) = items[i].trio;
  }
  return m;
}

std::vector<int> item_labels(const std::vector<DatasetItem>& items) {
  std::vector<int> labels;
  labels.reserve(items.size());
  for (const DatasetItem& item : items) labels.push_back(item.abnormal ? 1 : 0);
  return labels;
}

DatasetItem item_from_beat(const BeatPair& beat, const std::string& source_id) {
  DatasetItem item;
  item.single = beat.single;
  item.trio = beat.trio;
  item.abnormal = is_abnormal(beat.label);
  item.aami = beat.label;
  item.source_id = source_id;
  item.origin_index = beat.origin_index;
  return item;
}

// Three repetitions of a synthesized beat squeezed back into one window stand
// in for the missing surrounding rhythm.
Eigen::VectorXd tiled_trio(const Eigen::VectorXd& single) {
  Eigen::VectorXd tiled(3 * single.size());
  tiled << single, single, single;
  Eigen::VectorXd trio = ingest::resample_linear(tiled, kBeatLength);
  const double norm = trio.norm();
  if (norm <= 1e-12) throw InvalidTrainingSet("degenerate synthesized trio");
  return trio / norm;
}

struct DonorRef {
  std::size_t patient = 0;
  std::size_t beat = 0;
};

}  // namespace

StrategyPlan prepare_plan(const PatientSplit& target, const std::vector<PatientBeats>& others,
                          const RunOptions& opt) {
  if (target.train_normals.empty()) throw EmptyTrainingSet("no target training normals");
  StrategyPlan plan;
  plan.patient_id = target.patient_id;

  const Eigen::MatrixXd train_singles = singles_of(target.train_normals);
  const Eigen::MatrixXd train_trios = trios_of(target.train_normals);
  plan.dict_single = sparse::learn_dictionary(train_singles, opt.dict_atoms, opt.dict).dictionary;
  plan.dict_single.patient_id = target.patient_id;
  plan.dict_trio = sparse::learn_dictionary(train_trios, opt.dict_atoms, opt.dict).dictionary;
  plan.dict_trio.patient_id = target.patient_id;
  plan.ann_single = sparse::build_annihilator(plan.dict_single);
  plan.ann_trio = sparse::build_annihilator(plan.dict_trio);

  for (const BeatPair& beat : target.train_normals) {
    plan.fixed.push_back(item_from_beat(beat, target.patient_id));
  }

  if (opt.strategy == StrategyKind::Abs) {
    std::vector<adaptation::AbsSource> sources;
    for (const PatientBeats& donor : others) {
      adaptation::AbsSource source;
      source.patient_id = donor.patient_id;
      std::vector<const Eigen::VectorXd*> normals;
      for (const BeatPair& beat : donor.beats) {
        if (is_abnormal(beat.label)) {
          Beat abnormal;
          abnormal.values = beat.single;
          abnormal.label = beat.label;
          abnormal.patient_id = donor.patient_id;
          abnormal.origin_index = beat.origin_index;
          source.abnormal_singles.push_back(std::move(abnormal));
        } else {
          normals.push_back(&beat.single);
        }
      }
      source.normal_singles = column_matrix(normals);
      sources.push_back(std::move(source));
    }
    const adaptation::AbsLibrary library =
        adaptation::build_abs_library(sources, opt.abs_filter_len, opt.abs_ridge, opt.abs_prune);
    const Eigen::VectorXd avg_normal = adaptation::average_normal_beat(train_singles);
    for (const adaptation::AbsFilter& filter : library.filters) {
      const Beat synthesized = adaptation::synthesize_abnormal(avg_normal, filter);
      DatasetItem item;
      item.single = synthesized.values;
      item.trio = tiled_trio(synthesized.values);
      item.abnormal = true;
      item.aami = synthesized.label;
      item.source_id = synthesized.patient_id;
      item.origin_index = synthesized.origin_index;
      plan.fixed.push_back(std::move(item));
    }
    return plan;
  }

  // Baseline and domain adaptation share the same donor membership: every
  // donor abnormal, plus donor normals drawn to match the abnormal count.
  std::vector<DonorRef> abnormals;
  std::vector<DonorRef> normal_pool;
  for (std::size_t p = 0; p < others.size(); ++p) {
    for (std::size_t b = 0; b < others[p].beats.size(); ++b) {
      if (is_abnormal(others[p].beats[b].label)) abnormals.push_back({p, b});
      else normal_pool.push_back({p, b});
    }
  }
  plan.pool_draws = abnormals.size() > target.train_normals.size()
                        ? abnormals.size() - target.train_normals.size()
                        : 0;

  // Domain adaptation: one morphing transform per donor and window type,
  // learned from the donor's normal beats; donors without normals cannot be
  // morphed and contribute nothing.
  const bool adapt = opt.strategy == StrategyKind::DomainAdaptation;
  std::vector<bool> has_transform(others.size(), !adapt);
  std::vector<adaptation::MorphTransform> single_transform(others.size());
  std::vector<adaptation::MorphTransform> trio_transform(others.size());
  if (adapt) {
    for (std::size_t p = 0; p < others.size(); ++p) {
      std::vector<const Eigen::VectorXd*> normal_singles;
      std::vector<const Eigen::VectorXd*> normal_trios;
      for (const BeatPair& beat : others[p].beats) {
        if (!is_abnormal(beat.label)) {
          normal_singles.push_back(&beat.single);
          normal_trios.push_back(&beat.trio);
        }
      }
      if (normal_singles.empty()) continue;
      single_transform[p] =
          adaptation::learn_mtm(plan.dict_single, column_matrix(normal_singles), opt.mtm);
      single_transform[p].source_id = others[p].patient_id;
      single_transform[p].target_id = target.patient_id;
      trio_transform[p] =
          adaptation::learn_mtm(plan.dict_trio, column_matrix(normal_trios), opt.mtm);
      trio_transform[p].source_id = others[p].patient_id;
      trio_transform[p].target_id = target.patient_id;
      has_transform[p] = true;
    }
  }

  const auto planned = [&](const DonorRef& ref) {
    const BeatPair& beat = others[ref.patient].beats[ref.beat];
    PlannedItem planned_item;
    planned_item.item = item_from_beat(beat, others[ref.patient].patient_id);
    planned_item.usable = has_transform[ref.patient];
    if (adapt && planned_item.usable) {
      planned_item.item.single = adaptation::apply_mtm(single_transform[ref.patient], beat.single);
      planned_item.item.trio = adaptation::apply_mtm(trio_transform[ref.patient], beat.trio);
    }
    return planned_item;
  };
  for (const DonorRef& ref : abnormals) plan.donor_abnormals.push_back(planned(ref));
  for (const DonorRef& ref : normal_pool) plan.donor_pool.push_back(planned(ref));
  return plan;
}

StrategyContext compose_training(const StrategyPlan& plan, std::uint64_t seed) {
  StrategyContext ctx;
  ctx.patient_id = plan.patient_id;
  ctx.dict_single = plan.dict_single;
  ctx.dict_trio = plan.dict_trio;
  ctx.ann_single = plan.ann_single;
  ctx.ann_trio = plan.ann_trio;
  ctx.training = plan.fixed;
  for (const PlannedItem& planned : plan.donor_abnormals) {
    if (planned.usable) ctx.training.push_back(planned.item);
  }
  std::vector<std::size_t> order(plan.donor_pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t draws = std::min(plan.pool_draws, order.size());
  for (std::size_t i = 0; i < draws; ++i) {
    const PlannedItem& planned = plan.donor_pool[order[i]];
    if (planned.usable) ctx.training.push_back(planned.item);
  }
  return ctx;
}

StrategyContext prepare_strategy(const PatientSplit& target,
                                 const std::vector<PatientBeats>& others,
                                 const RunOptions& opt) {
  return compose_training(prepare_plan(target, others, opt), opt.subsample_seed);
}

TrainValSplit split_train_val(const std::vector<DatasetItem>& items, double fraction,
                              std::uint64_t seed) {
  if (items.empty()) throw EmptyTrainingSet("nothing to split");
  if (!(fraction > 0.0) || !(fraction <= 1.0)) {
    throw std::invalid_argument("train fraction must lie in (0, 1]");
  }
  std::vector<std::size_t> normals;
  std::vector<std::size_t> abnormals;
  for (std::size_t i = 0; i < items.size(); ++i) {
    (items[i].abnormal ? abnormals : normals).push_back(i);
  }
  std::mt19937_64 rng(seed);
  TrainValSplit split;
  for (std::vector<std::size_t>* group : {&normals, &abnormals}) {
    std::shuffle(group->begin(), group->end(), rng);
    const std::size_t n_train = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(group->size())));
    for (std::size_t i = 0; i < group->size(); ++i) {
      (i < n_train ? split.train : split.val).push_back(items[(*group)[i]]);
    }
  }
  return split;
}

PatientSeedResult run_seed(const StrategyContext& ctx, const PatientSplit& target,
                           const RunOptions& opt, std::uint64_t seed,
                           PatientSeedVotes* votes) {
  const TrainValSplit split = split_train_val(ctx.training, opt.train_fraction, seed);
  if (split.train.empty() || split.val.empty()) {
    throw InvalidTrainingSet("train/val split left one side empty");
  }

  cnn::CnnTrainOptions cnn_opt = opt.cnn;
  cnn_opt.seed = seed;
  const cnn::CnnTrainResult trained =
      cnn::cnn_train(item_inputs(split.train), item_labels(split.train),
                     item_inputs(split.val), item_labels(split.val), cnn_opt);

  const sparse::Annihilator& ann = opt.npe_from_trio ? ctx.ann_trio : ctx.ann_single;
  auto item_energy = [&](const DatasetItem& item) {
    return sparse::residual_npe(ann, opt.npe_from_trio ? item.trio : item.single).energy;
  };

  std::vector<double> normal_energies;
  std::vector<double> abnormal_energies;
  for (const DatasetItem& item : split.train) {
    (item.abnormal ? abnormal_energies : normal_energies).push_back(item_energy(item));
  }
  if (normal_energies.empty() || abnormal_energies.empty()) {
    throw InvalidTrainingSet("density fits need both classes in the train split");
  }

  classifiers::EnsembleModel model;
  model.network = trained.model;
  model.densities.normal = classifiers::fit_exponential(normal_energies);
  model.densities.abnormal = classifiers::fit_gaussian(abnormal_energies);
  model.annihilator = ann;
  model.npe_from_trio = opt.npe_from_trio;

  std::vector<BeatPair> val_beats;
  std::vector<double> val_energies;
  std::vector<int> val_labels;
  for (const DatasetItem& item : split.val) {
    BeatPair beat;
    beat.single = item.single;
    beat.trio = item.trio;
    beat.label = item.aami;
    beat.origin_index = item.origin_index;
    val_beats.push_back(std::move(beat));
    val_energies.push_back(item_energy(item));
    val_labels.push_back(item.abnormal ? 1 : 0);
  }
  const classifiers::GridSelection gate = classifiers::select_confidence_gate(model, val_beats);
  model.confidence_gate = gate.value;
  const classifiers::GridSelection threshold =
      classifiers::select_threshold(val_energies, val_labels, 0.0, 1.0);

  PatientSeedResult result;
  result.seed = seed;
  result.gate = gate.value;
  result.gate_val_f1 = gate.f1;
  result.threshold_value = threshold.value;
  result.threshold_val_f1 = threshold.f1;
  result.best_epoch = trained.best_epoch;
  result.best_val_loss = trained.best_val_loss;

  if (votes) {
    votes->patient_id = ctx.patient_id;
    votes->seed = seed;
    votes->gate = gate.value;
    votes->train_normal_energies = normal_energies;
  }

  for (const BeatPair& beat : target.test_beats) {
    const cnn::CnnDecision network = cnn::cnn_classify(model.network, beat.single, beat.trio);
    const sparse::ResidualReport report =
        sparse::residual_npe(ann, opt.npe_from_trio ? beat.trio : beat.single);
    const Verdict fallback =
        classifiers::prob_classify(model.densities.normal, model.densities.abnormal, report.energy);
    const Verdict ensemble =
        network.confidence >= model.confidence_gate ? network.verdict : fallback;
    const Verdict thresholded = classifiers::threshold_classify(report.energy, threshold.value);
    const bool abnormal = is_abnormal(beat.label);
    result.ensemble.add(ensemble == Verdict::Abnormal, abnormal);
    result.network.add(network.verdict == Verdict::Abnormal, abnormal);
    result.likelihood.add(fallback == Verdict::Abnormal, abnormal);
    result.threshold.add(thresholded == Verdict::Abnormal, abnormal);
    if (votes) {
      votes->npe_flops = report.flops;
      VoteRecord vote;
      vote.abnormal = abnormal;
      vote.confidence = network.confidence;
      vote.network = network.verdict;
      vote.fallback = fallback;
      vote.energy = report.energy;
      votes->test_votes.push_back(vote);
    }
  }
  return result;
}

PatientResult run_patient(const PatientSplit& target, const std::vector<PatientBeats>& others,
                          const RunOptions& opt, std::vector<PatientSeedVotes>* votes) {
  if (target.test_beats.empty()) throw InvalidTrainingSet("no held-out beats to score");
  const StrategyPlan plan = prepare_plan(target, others, opt);

  PatientResult result;
  result.patient_id = target.patient_id;
  result.train_normal_count = static_cast<int>(target.train_normals.size());
  result.test_count = static_cast<int>(target.test_beats.size());
  for (const BeatPair& beat : target.test_beats) {
    if (is_abnormal(beat.label)) ++result.test_abnormal_count;
  }

  if (result.test_abnormal_count > 0 && result.test_abnormal_count < result.test_count) {
    const Eigen::MatrixXd test_singles = singles_of(target.test_beats);
    std::vector<int> labels;
    labels.reserve(target.test_beats.size());
    for (const BeatPair& beat : target.test_beats) labels.push_back(is_abnormal(beat.label));
    const Eigen::VectorXd sae = sparse::sae_energies(plan.dict_single, test_singles);
    const Eigen::VectorXd npe = sparse::npe_energies(plan.ann_single, test_singles);
    const sparse::LsOperator ls = sparse::make_ls_operator(plan.dict_single);
    const Eigen::VectorXd lae = sparse::lae_energies(plan.dict_single, ls, test_singles);
    result.auc_sae = sparse::auc({sae.data(), static_cast<std::size_t>(sae.size())}, labels);
    result.auc_npe = sparse::auc({npe.data(), static_cast<std::size_t>(npe.size())}, labels);
    result.auc_lae = sparse::auc({lae.data(), static_cast<std::size_t>(lae.size())}, labels);
  }

  for (std::uint64_t seed : opt.seeds) {
    const StrategyContext ctx = compose_training(plan, opt.subsample_seed + seed);
    if (result.training_set_size == 0) {
      result.training_set_size = static_cast<int>(ctx.training.size());
    }
    if (votes) {
      PatientSeedVotes seed_votes;
      result.seeds.push_back(run_seed(ctx, target, opt, seed, &seed_votes));
      votes->push_back(std::move(seed_votes));
    } else {
      result.seeds.push_back(run_seed(ctx, target, opt, seed, nullptr));
    }
  }
  return result;
}

namespace {

Metrics mean_metrics(const std::vector<Metrics>& all) {
  Metrics mean;
  if (all.empty()) return mean;
  for (const Metrics& m : all) {
    mean.precision += m.precision;
    mean.recall += m.recall;
    mean.f1 += m.f1;
    mean.specificity += m.specificity;
    mean.accuracy += m.accuracy;
  }
  const double n = static_cast<double>(all.size());
  mean.precision /= n;
  mean.recall /= n;
  mean.f1 /= n;
  mean.specificity /= n;
  mean.accuracy /= n;
  return mean;
}

void aggregate_method(const std::vector<PatientResult>& patients,
                      const Confusion PatientSeedResult::* member, MethodAggregate& out) {
  std::vector<Metrics> per_patient;
  for (const PatientResult& patient : patients) {
    std::vector<Metrics> per_seed;
    for (const PatientSeedResult& seed : patient.seeds) {
      per_seed.push_back(metrics_from_confusion(seed.*member));
      out.pooled += seed.*member;
    }
    per_patient.push_back(mean_metrics(per_seed));
  }
  out.macro = mean_metrics(per_patient);
}

}  // namespace

ExperimentResult run_experiment(const std::vector<PatientBeats>& patients,
                                const RunOptions& opt) {
  ExperimentResult result;
  result.strategy = opt.strategy;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    std::vector<PatientBeats> others;
    others.reserve(patients.size() - 1);
    for (std::size_t j = 0; j < patients.size(); ++j) {
      if (j != i) others.push_back(patients[j]);
    }
    try {
      const PatientSplit split = ingest::make_patient_split(patients[i], opt.train_minutes);
      result.patients.push_back(
          run_patient(split, others, opt, opt.capture_votes ? &result.votes : nullptr));
    } catch (const std::exception& e) {
      result.skipped.push_back({patients[i].patient_id, e.what()});
    }
  }
  aggregate_method(result.patients, &PatientSeedResult::ensemble, result.ensemble);
  aggregate_method(result.patients, &PatientSeedResult::network, result.network);
  aggregate_method(result.patients, &PatientSeedResult::likelihood, result.likelihood);
  aggregate_method(result.patients, &PatientSeedResult::threshold, result.threshold);
  return result;
}

double cascade_threshold_from_energies(std::vector<double> train_normal_energies,
                                       double fraction) {
  if (train_normal_energies.empty()) throw EmptyTrainingSet("no calibration energies");
  if (fraction <= 0.0) return -std::numeric_limits<double>::infinity();
  if (fraction >= 1.0) return std::numeric_limits<double>::infinity();
  std::sort(train_normal_energies.begin(), train_normal_energies.end());
  const double m = static_cast<double>(train_normal_energies.size());
  std::size_t index = static_cast<std::size_t>(std::ceil(fraction * m));
  if (index > train_normal_energies.size()) index = train_normal_energies.size();
  if (index == 0) index = 1;
  return train_normal_energies[index - 1];
}

CascadeReport run_cascade(const PatientSeedVotes& votes, double threshold) {
  return run_cascade(votes, threshold, std::numeric_limits<double>::infinity());
}

CascadeReport run_cascade(const PatientSeedVotes& votes, double lower, double upper) {
  if (lower > upper) throw std::invalid_argument("cascade band is inverted");
  CascadeReport report;
  report.threshold = lower;
  report.upper_threshold = upper;
  report.total_beats = static_cast<long long>(votes.test_votes.size());
  const long long network_flops = cnn::cnn_forward_flops();
  for (const VoteRecord& vote : votes.test_votes) {
    Verdict verdict;
    if (vote.energy <= lower) {
      ++report.fast_path_beats;
      verdict = Verdict::Normal;
    } else if (vote.energy >= upper) {
      ++report.fast_path_beats;
      verdict = Verdict::Abnormal;
    } else {
      verdict = vote.confidence >= votes.gate ? vote.network : vote.fallback;
    }
    report.confusion.add(verdict == Verdict::Abnormal, vote.abnormal);
  }
  report.flops_full = report.total_beats * (network_flops + votes.npe_flops);
  report.flops_cascade = report.total_beats * votes.npe_flops +
                         (report.total_beats - report.fast_path_beats) * network_flops;
  report.flops_saved = report.flops_full - report.flops_cascade;
  return report;
}

namespace {

// Votes grouped by patient in first-seen order.
std::vector<std::vector<const PatientSeedVotes*>> votes_by_patient(
    const ExperimentResult& result) {
  std::vector<std::vector<const PatientSeedVotes*>> groups;
  std::vector<std::string> ids;
  for (const PatientSeedVotes& votes : result.votes) {
    const auto found = std::find(ids.begin(), ids.end(), votes.patient_id);
    if (found == ids.end()) {
      ids.push_back(votes.patient_id);
      groups.emplace_back();
      groups.back().push_back(&votes);
    } else {
      groups[static_cast<std::size_t>(found - ids.begin())].push_back(&votes);
    }
  }
  return groups;
}

void require_votes(const ExperimentResult& result) {
  if (result.votes.empty()) {
    throw std::invalid_argument("sweep needs an experiment run with capture_votes");
  }
}

}  // namespace

std::vector<SweepPoint> sweep_confidence(const ExperimentResult& result) {
  require_votes(result);
  const auto groups = votes_by_patient(result);
  std::vector<SweepPoint> points;
  for (int i = 0; i < 50; ++i) {
    const double gate = 0.50 + static_cast<double>(i) * 0.49 / 49.0;
    std::vector<Metrics> per_patient;
    for (const auto& group : groups) {
      std::vector<Metrics> per_seed;
      for (const PatientSeedVotes* votes : group) {
        Confusion confusion;
        for (const VoteRecord& vote : votes->test_votes) {
          const Verdict verdict = vote.confidence >= gate ? vote.network : vote.fallback;
          confusion.add(verdict == Verdict::Abnormal, vote.abnormal);
        }
        per_seed.push_back(metrics_from_confusion(confusion));
      }
      per_patient.push_back(mean_metrics(per_seed));
    }
    points.push_back({gate, mean_metrics(per_patient)});
  }
  return points;
}

std::vector<SweepPoint> sweep_threshold(const ExperimentResult& result) {
  require_votes(result);
  std::vector<SweepPoint> points;
  for (int i = 0; i <= 100; ++i) {
    const double threshold = static_cast<double>(i) / 100.0;
    Confusion confusion;
    for (const PatientSeedVotes& votes : result.votes) {
      for (const VoteRecord& vote : votes.test_votes) {
        confusion.add(vote.energy > threshold, vote.abnormal);
      }
    }
    points.push_back({threshold, metrics_from_confusion(confusion)});
  }
  return points;
}

std::vector<EfficiencyPoint> sweep_efficiency(const ExperimentResult& result,
                                              const std::vector<double>& fractions,
                                              double upper_fraction) {
  require_votes(result);
  std::vector<EfficiencyPoint> points;
  for (double fraction : fractions) {
    EfficiencyPoint point;
    point.fraction = fraction;
    Confusion confusion;
    for (const PatientSeedVotes& votes : result.votes) {
      const double threshold =
          cascade_threshold_from_energies(votes.train_normal_energies, fraction);
      const double upper =
          cascade_threshold_from_energies(votes.train_normal_energies, upper_fraction);
      const CascadeReport report = run_cascade(votes, threshold, std::max(threshold, upper));
      point.total_beats += report.total_beats;
      point.fast_path_beats += report.fast_path_beats;
      point.flops_full += report.flops_full;
      point.flops_cascade += report.flops_cascade;
      point.flops_saved += report.flops_saved;
      confusion += report.confusion;
    }
    point.metrics = metrics_from_confusion(confusion);
    point.saved_ratio = point.flops_full > 0
                            ? static_cast<double>(point.flops_saved) /
                                  static_cast<double>(point.flops_full)
                            : 0.0;
    points.push_back(point);
  }
  return points;
}

namespace {

std::string fmt(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

void write_metrics_cells(std::ofstream& out, const Metrics& m) {
  out << fmt(m.precision) << ',' << fmt(m.recall) << ',' << fmt(m.f1) << ','
      << fmt(m.specificity) << ',' << fmt(m.accuracy);
}

void write_method_row(std::ofstream& out, const std::string& patient, std::uint64_t seed,
                      const std::string& method, const Confusion& c,
                      const PatientSeedResult& sr) {
  const Metrics m = metrics_from_confusion(c);
  out << patient << ',' << seed << ',' << method << ',' << c.tp << ',' << c.fp << ',' << c.fn
      << ',' << c.tn << ',';
  write_metrics_cells(out, m);
  out << ',' << fmt(sr.gate) << ',' << fmt(sr.threshold_value) << '\n';
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

void emit_results(const ExperimentResult& result, const RunOptions& opt,
                  const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);

  std::ofstream summary = open_out(out_dir / "summary.csv");
  summary << "patient,seed,method,tp,fp,fn,tn,precision,recall,f1,specificity,accuracy,"
             "gate,threshold\n";
  for (const PatientResult& patient : result.patients) {
    for (const PatientSeedResult& seed : patient.seeds) {
      write_method_row(summary, patient.patient_id, seed.seed, "ensemble", seed.ensemble, seed);
      write_method_row(summary, patient.patient_id, seed.seed, "network", seed.network, seed);
      write_method_row(summary, patient.patient_id, seed.seed, "likelihood", seed.likelihood,
                       seed);
      write_method_row(summary, patient.patient_id, seed.seed, "threshold", seed.threshold, seed);
    }
  }

  std::ofstream macro = open_out(out_dir / "macro.csv");
  macro << "method,precision,recall,f1,specificity,accuracy,tp,fp,fn,tn\n";
  const std::vector<std::pair<std::string, const MethodAggregate*>> methods = {
      {"ensemble", &result.ensemble},
      {"network", &result.network},
      {"likelihood", &result.likelihood},
      {"threshold", &result.threshold},
  };
  for (const auto& [name, aggregate] : methods) {
    macro << name << ',';
    write_metrics_cells(macro, aggregate->macro);
    macro << ',' << aggregate->pooled.tp << ',' << aggregate->pooled.fp << ','
          << aggregate->pooled.fn << ',' << aggregate->pooled.tn << '\n';
  }

  std::ofstream patients = open_out(out_dir / "patients.csv");
  patients << "patient,train_normals,training_set,test_beats,test_abnormal,"
              "auc_sae,auc_npe,auc_lae\n";
  for (const PatientResult& patient : result.patients) {
    patients << patient.patient_id << ',' << patient.train_normal_count << ','
             << patient.training_set_size << ',' << patient.test_count << ','
             << patient.test_abnormal_count << ',' << fmt(patient.auc_sae) << ','
             << fmt(patient.auc_npe) << ',' << fmt(patient.auc_lae) << '\n';
  }

  nlohmann::json config;
  config["strategy"] = strategy_name(opt.strategy);
  config["train_minutes"] = opt.train_minutes;
  config["dict_atoms"] = opt.dict_atoms;
  config["dict_lambda"] = opt.dict.lambda;
  config["dict_iterations"] = opt.dict.iterations;
  config["mtm_gamma"] = opt.mtm.gamma;
  config["mtm_eta"] = opt.mtm.eta;
  config["mtm_epochs"] = opt.mtm.epochs;
  config["mtm_lambda"] = opt.mtm.lambda;
  config["abs_filter_len"] = opt.abs_filter_len;
  config["abs_ridge"] = opt.abs_ridge;
  config["abs_prune"] = opt.abs_prune;
  config["subsample_seed"] = opt.subsample_seed;
  config["train_fraction"] = opt.train_fraction;
  config["npe_from_trio"] = opt.npe_from_trio;
  config["seeds"] = opt.seeds;
  config["cnn"] = {
      {"learning_rate", opt.cnn.learning_rate},
      {"beta1", opt.cnn.beta1},
      {"beta2", opt.cnn.beta2},
      {"epsilon", opt.cnn.epsilon},
      {"weight_decay", opt.cnn.weight_decay},
      {"batch_size", opt.cnn.batch_size},
      {"max_epochs", opt.cnn.max_epochs},
      {"patience", opt.cnn.patience},
  };
  config["skipped"] = nlohmann::json::array();
  for (const SkippedPatient& skipped : result.skipped) {
    config["skipped"].push_back({{"patient", skipped.patient_id}, {"reason", skipped.reason}});
  }
  std::ofstream config_out = open_out(out_dir / "config.json");
  config_out << config.dump(2) << '\n';
}

void write_sweep_csv(const std::vector<SweepPoint>& points, const std::string& x_name,
                     const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << x_name << ",precision,recall,f1,specificity,accuracy\n";
  for (const SweepPoint& point : points) {
    out << fmt(point.x) << ',';
    write_metrics_cells(out, point.metrics);
    out << '\n';
  }
}

void write_efficiency_csv(const std::vector<EfficiencyPoint>& points,
                          const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "fraction,total_beats,fast_path_beats,flops_full,flops_cascade,flops_saved,"
         "saved_ratio,precision,recall,f1,specificity,accuracy\n";
  for (const EfficiencyPoint& point : points) {
    out << fmt(point.fraction) << ',' << point.total_beats << ',' << point.fast_path_beats << ','
        << point.flops_full << ',' << point.flops_cascade << ',' << point.flops_saved << ','
        << fmt(point.saved_ratio) << ',';
    write_metrics_cells(out, point.metrics);
    out << '\n';
  }
}

}  // namespace zsecg::pipeline
