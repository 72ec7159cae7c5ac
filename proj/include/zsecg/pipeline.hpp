#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "zsecg/adaptation.hpp"
#include "zsecg/classifiers.hpp"
#include "zsecg/cnn.hpp"
#include "zsecg/ingest.hpp"
#include "zsecg/sparse.hpp"
#include "zsecg/types.hpp"

namespace zsecg::pipeline {

// Per-patient zero-shot experiment: compose a training set without any target
// abnormal beats, train the network, calibrate on a validation slice, then
// score the target's held-out beats.

enum class StrategyKind : std::uint8_t { Baseline = 0, Abs = 1, DomainAdaptation = 2 };

std::string strategy_name(StrategyKind kind);
StrategyKind strategy_from_name(const std::string& name);

struct DatasetItem {
  Eigen::VectorXd single;
  Eigen::VectorXd trio;
  bool abnormal = false;
  AamiClass aami = AamiClass::N;
  std::string source_id;
  std::int64_t origin_index = -1;
};

struct Confusion {
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  long long tn = 0;

  void add(bool predicted_abnormal, bool abnormal);
  Confusion& operator+=(const Confusion& other);
  long long total() const { return tp + fp + fn + tn; }
};

// Abnormal counts as positive; every ratio falls back to 0 on an empty
// denominator.
struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double specificity = 0.0;
  double accuracy = 0.0;
};

Metrics metrics_from_confusion(const Confusion& c);

struct RunOptions {
  StrategyKind strategy = StrategyKind::Baseline;
  double train_minutes = 5.0;
  int dict_atoms = 20;
  sparse::DictionaryLearnOptions dict;
  adaptation::MtmOptions mtm;
  int abs_filter_len = 32;
  double abs_ridge = 1e-6;
  double abs_prune = 0.9;
  std::uint64_t subsample_seed = 0;  // offset added to the run seed for donor draws
  double train_fraction = 0.8;
  cnn::CnnTrainOptions cnn;  // the per-run seed overrides cnn.seed
  std::vector<std::uint64_t> seeds = {0};
  bool npe_from_trio = false;
  bool capture_votes = false;
};

// Artifacts shared by every seed of one target patient.
struct StrategyContext {
  std::string patient_id;
  sparse::Dictionary dict_single;
  sparse::Dictionary dict_trio;
  sparse::Annihilator ann_single;
  sparse::Annihilator ann_trio;
  std::vector<DatasetItem> training;
};

struct PlannedItem {
  DatasetItem item;
  bool usable = true;  // false when the strategy cannot use this donor's beats
};

// Seed-independent models plus the donor pools a seeded composition draws from.
struct StrategyPlan {
  std::string patient_id;
  sparse::Dictionary dict_single;
  sparse::Dictionary dict_trio;
  sparse::Annihilator ann_single;
  sparse::Annihilator ann_trio;
  std::vector<DatasetItem> fixed;           // target normals plus synthesized beats
  std::vector<PlannedItem> donor_abnormals;
  std::vector<PlannedItem> donor_pool;      // donor normals, subsampled per seed
  std::size_t pool_draws = 0;               // donor normals drawn per composition
};

// Learns dictionaries, transforms, and filter libraries; no randomness.
StrategyPlan prepare_plan(const PatientSplit& target, const std::vector<PatientBeats>& others,
                          const RunOptions& opt);

// Draws the donor-normal subsample for one seed and assembles the training set.
StrategyContext compose_training(const StrategyPlan& plan, std::uint64_t seed);

// Target normals plus donor abnormals; donors are rebalanced, morphed, or
// replaced by filter-synthesized beats depending on the strategy. Equivalent
// to composing the plan with opt.subsample_seed.
StrategyContext prepare_strategy(const PatientSplit& target,
                                 const std::vector<PatientBeats>& others,
                                 const RunOptions& opt);

struct TrainValSplit {
  std::vector<DatasetItem> train;
  std::vector<DatasetItem> val;
};

// Stratified per class: llround(fraction * n) beats of each class train, the
// rest validate; order within a class is shuffled by the seed.
TrainValSplit split_train_val(const std::vector<DatasetItem>& items, double fraction,
                              std::uint64_t seed);

struct VoteRecord {
  bool abnormal = false;
  double confidence = 0.0;
  Verdict network = Verdict::Normal;
  Verdict fallback = Verdict::Normal;
  double energy = 0.0;
};

struct PatientSeedVotes {
  std::string patient_id;
  std::uint64_t seed = 0;
  double gate = 0.5;
  long long npe_flops = 0;
  std::vector<VoteRecord> test_votes;
  std::vector<double> train_normal_energies;
};

struct PatientSeedResult {
  std::uint64_t seed = 0;
  Confusion ensemble;
  Confusion network;     // network verdict alone
  Confusion likelihood;  // residual-energy likelihood rule alone
  Confusion threshold;   // pure energy threshold
  double gate = 0.5;
  double gate_val_f1 = 0.0;
  double threshold_value = 0.0;
  double threshold_val_f1 = 0.0;
  int best_epoch = -1;
  double best_val_loss = 0.0;
};

struct PatientResult {
  std::string patient_id;
  int train_normal_count = 0;
  int training_set_size = 0;
  int test_count = 0;
  int test_abnormal_count = 0;
  double auc_sae = std::numeric_limits<double>::quiet_NaN();
  double auc_npe = std::numeric_limits<double>::quiet_NaN();
  double auc_lae = std::numeric_limits<double>::quiet_NaN();
  std::vector<PatientSeedResult> seeds;
};

struct SkippedPatient {
  std::string patient_id;
  std::string reason;
};

struct MethodAggregate {
  Metrics macro;     // mean over patients of per-patient seed means
  Confusion pooled;  // summed over every patient and seed
};

struct ExperimentResult {
  StrategyKind strategy = StrategyKind::Baseline;
  std::vector<PatientResult> patients;
  std::vector<SkippedPatient> skipped;
  MethodAggregate ensemble;
  MethodAggregate network;
  MethodAggregate likelihood;
  MethodAggregate threshold;
  std::vector<PatientSeedVotes> votes;  // filled when opt.capture_votes
};

PatientSeedResult run_seed(const StrategyContext& ctx, const PatientSplit& target,
                           const RunOptions& opt, std::uint64_t seed,
                           PatientSeedVotes* votes = nullptr);

PatientResult run_patient(const PatientSplit& target, const std::vector<PatientBeats>& others,
                          const RunOptions& opt, std::vector<PatientSeedVotes>* votes = nullptr);

// One pass with every patient as the target; patients whose split or training
// set is unusable are recorded as skipped, not fatal.
ExperimentResult run_experiment(const std::vector<PatientBeats>& patients, const RunOptions& opt);

// Quantile of the sorted donor-free normal energies: fraction <= 0 sits below
// every energy, fraction >= 1 above, otherwise the ceil(fraction*m)-th value.
double cascade_threshold_from_energies(std::vector<double> train_normal_energies,
                                       double fraction);

struct CascadeReport {
  double threshold = 0.0;
  double upper_threshold = std::numeric_limits<double>::infinity();
  long long total_beats = 0;
  long long fast_path_beats = 0;  // beats resolved from the residual energy alone
  long long flops_full = 0;       // every beat pays network + residual energy
  long long flops_cascade = 0;
  long long flops_saved = 0;
  Confusion confusion;
};

// Replays recorded votes through the two-stage rule: quiet beats are called
// Normal from the residual energy alone, the rest escalate to the gated pair.
CascadeReport run_cascade(const PatientSeedVotes& votes, double threshold);

// Two-sided variant: energies at or below lower resolve as Normal, at or
// above upper as Abnormal, and only the band in between escalates. The lower
// rule wins when the bounds coincide.
CascadeReport run_cascade(const PatientSeedVotes& votes, double lower, double upper);

struct SweepPoint {
  double x = 0.0;
  Metrics metrics;
};

// 50 gate settings, macro-averaged F1 (mean over seeds then over patients).
std::vector<SweepPoint> sweep_confidence(const ExperimentResult& result);

// 101 thresholds over [0, 1], pooled over every recorded vote.
std::vector<SweepPoint> sweep_threshold(const ExperimentResult& result);

struct EfficiencyPoint {
  double fraction = 0.0;
  long long total_beats = 0;
  long long fast_path_beats = 0;
  long long flops_full = 0;
  long long flops_cascade = 0;
  long long flops_saved = 0;
  double saved_ratio = 0.0;
  Metrics metrics;  // pooled over every vote set
};

// Per-vote-set calibration at each fraction; upper_fraction < 1 adds the
// abnormal shortcut of the two-sided cascade, 1 keeps it one-sided. The
// abnormal shortcut never undercuts the normal one: its threshold is clamped
// to at least the lower threshold.
std::vector<EfficiencyPoint> sweep_efficiency(const ExperimentResult& result,
                                              const std::vector<double>& fractions,
                                              double upper_fraction = 1.0);

// summary.csv, macro.csv, auc.csv and config.json under out_dir.
void emit_results(const ExperimentResult& result, const RunOptions& opt,
                  const std::filesystem::path& out_dir);

void write_sweep_csv(const std::vector<SweepPoint>& points, const std::string& x_name,
                     const std::filesystem::path& path);
void write_efficiency_csv(const std::vector<EfficiencyPoint>& points,
                          const std::filesystem::path& path);

}  // namespace zsecg::pipeline
