#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "test_util.hpp"
#include "zsecg/pipeline.hpp"
#include "zsecg/serialization.hpp"

using namespace zsecg;
using namespace zsecg::pipeline;

namespace {

std::vector<PatientBeats> synth_patients(std::uint64_t seed, int n_patients, int beats,
                                         double abnormal_rate) {
  std::vector<PatientBeats> patients;
  for (const EcgRecord& record : ingest::synth_corpus(seed, n_patients, beats, abnormal_rate)) {
    patients.push_back(ingest::extract_beat_pairs(record));
  }
  return patients;
}

RunOptions quick_options(StrategyKind strategy) {
  RunOptions opt;
  opt.strategy = strategy;
  opt.train_minutes = 1.5;
  opt.dict_atoms = 12;
  opt.dict.iterations = 8;
  opt.mtm.epochs = 10;
  opt.cnn.max_epochs = 25;
  opt.cnn.patience = 10;
  opt.seeds = {0};
  opt.capture_votes = true;
  return opt;
}

std::size_t count_abnormal(const std::vector<DatasetItem>& items) {
  return static_cast<std::size_t>(
      std::count_if(items.begin(), items.end(), [](const DatasetItem& i) { return i.abnormal; }));
}

}  // namespace

TEST_CASE("confusion counting and metric conventions") {
  Confusion c;
  c.add(true, true);
  c.add(true, false);
  c.add(false, true);
  c.add(false, false);
  CHECK(c.tp == 1);
  CHECK(c.fp == 1);
  CHECK(c.fn == 1);
  CHECK(c.tn == 1);
  CHECK(c.total() == 4);

  Confusion big;
  big.tp = 9054;
  big.fp = 218;
  big.fn = 4756;
  big.tn = 2932;
  const Metrics m = metrics_from_confusion(big);
  CHECK(m.precision == doctest::Approx(0.97648835202761).epsilon(1e-12));
  CHECK(m.recall == doctest::Approx(0.6556118754525706).epsilon(1e-12));
  CHECK(m.f1 == doctest::Approx(0.7845074083701585).epsilon(1e-12));
  CHECK(m.specificity == doctest::Approx(2932.0 / 3150.0).epsilon(1e-12));

  const Metrics empty = metrics_from_confusion(Confusion{});
  CHECK(empty.precision == 0.0);
  CHECK(empty.recall == 0.0);
  CHECK(empty.f1 == 0.0);
  CHECK(empty.specificity == 0.0);
  CHECK(empty.accuracy == 0.0);

  Confusion sum = big;
  sum += c;
  CHECK(sum.tp == 9055);
  CHECK(sum.tn == 2933);
}

TEST_CASE("strategy names round trip") {
  for (StrategyKind kind :
       {StrategyKind::Baseline, StrategyKind::Abs, StrategyKind::DomainAdaptation}) {
    CHECK(strategy_from_name(strategy_name(kind)) == kind);
  }
  CHECK(strategy_name(StrategyKind::DomainAdaptation) == "da");
  CHECK_THROWS_AS(strategy_from_name("bogus"), std::invalid_argument);
}

TEST_CASE("train/val split is stratified, rounded and seeded") {
  std::vector<DatasetItem> items;
  for (int i = 0; i < 25; ++i) {
    DatasetItem item;
    item.single = Eigen::VectorXd::Constant(kBeatLength, double(i));
    item.trio = item.single;
    item.abnormal = i < 7;  // 7 abnormal, 18 normal
    item.origin_index = i;
    items.push_back(item);
  }
  const TrainValSplit split = split_train_val(items, 0.8, 3);
  // llround(0.8 * 18) = 14 normals, llround(0.8 * 7) = 6 abnormals.
  CHECK(split.train.size() == 20);
  CHECK(split.val.size() == 5);
  CHECK(count_abnormal(split.train) == 6);
  CHECK(count_abnormal(split.val) == 1);

  // Same seed reproduces membership; a different seed moves it.
  const TrainValSplit again = split_train_val(items, 0.8, 3);
  std::set<std::int64_t> val_a, val_b;
  for (const DatasetItem& item : split.val) val_a.insert(item.origin_index);
  for (const DatasetItem& item : again.val) val_b.insert(item.origin_index);
  CHECK(val_a == val_b);
  bool any_differs = false;
  for (std::uint64_t seed = 4; seed < 10 && !any_differs; ++seed) {
    std::set<std::int64_t> other;
    for (const DatasetItem& item : split_train_val(items, 0.8, seed).val) {
      other.insert(item.origin_index);
    }
    any_differs = other != val_a;
  }
  CHECK(any_differs);

  CHECK_THROWS_AS(split_train_val({}, 0.8, 0), EmptyTrainingSet);
  CHECK_THROWS_AS(split_train_val(items, 0.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(split_train_val(items, 1.5, 0), std::invalid_argument);
}

TEST_CASE("baseline training set rebalances donor normals") {
  const std::vector<PatientBeats> patients = synth_patients(11, 3, 200, 0.3);
  const PatientSplit target = ingest::make_patient_split(patients[0], 1.5);
  const std::vector<PatientBeats> others(patients.begin() + 1, patients.end());
  RunOptions opt = quick_options(StrategyKind::Baseline);

  const StrategyContext ctx = prepare_strategy(target, others, opt);
  CHECK(ctx.dict_single.atoms.rows() == kBeatLength);
  CHECK(ctx.dict_single.atoms.cols() == opt.dict_atoms);
  CHECK(ctx.ann_single.basis.rows() == kBeatLength - opt.dict_atoms);

  std::size_t donor_abnormals = 0;
  std::size_t donor_normals = 0;
  for (const PatientBeats& donor : others) {
    for (const BeatPair& beat : donor.beats) {
      if (is_abnormal(beat.label)) ++donor_abnormals;
      else ++donor_normals;
    }
  }
  const std::size_t n_target = target.train_normals.size();
  const std::size_t expected_extra =
      donor_abnormals > n_target ? donor_abnormals - n_target : 0;
  CHECK(ctx.training.size() == n_target + donor_abnormals + expected_extra);
  CHECK(count_abnormal(ctx.training) == donor_abnormals);

  // Target items precede donors and none of the target's abnormals leak in.
  for (std::size_t i = 0; i < n_target; ++i) {
    CHECK(ctx.training[i].source_id == target.patient_id);
    CHECK(!ctx.training[i].abnormal);
  }
  for (std::size_t i = n_target; i < ctx.training.size(); ++i) {
    CHECK(ctx.training[i].source_id != target.patient_id);
  }

  // Subsampling is reproducible per seed.
  const StrategyContext again = prepare_strategy(target, others, opt);
  REQUIRE(again.training.size() == ctx.training.size());
  for (std::size_t i = 0; i < ctx.training.size(); ++i) {
    CHECK(again.training[i].source_id == ctx.training[i].source_id);
    CHECK(again.training[i].origin_index == ctx.training[i].origin_index);
  }
}

TEST_CASE("filter-library strategy synthesizes target-shaped abnormals") {
  const std::vector<PatientBeats> patients = synth_patients(12, 3, 200, 0.3);
  const PatientSplit target = ingest::make_patient_split(patients[0], 1.5);
  const std::vector<PatientBeats> others(patients.begin() + 1, patients.end());
  RunOptions opt = quick_options(StrategyKind::Abs);
  opt.abs_prune = 0.98;

  const StrategyContext ctx = prepare_strategy(target, others, opt);
  const std::size_t n_target = target.train_normals.size();
  REQUIRE(ctx.training.size() > n_target);
  for (std::size_t i = n_target; i < ctx.training.size(); ++i) {
    const DatasetItem& item = ctx.training[i];
    CHECK(item.abnormal);
    CHECK(item.origin_index == -1);
    CHECK(item.single.norm() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(item.trio.norm() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(item.source_id != target.patient_id);
  }
  // Synthesized count equals the pruned library size, bounded by donor abnormals.
  std::size_t donor_abnormals = 0;
  for (const PatientBeats& donor : others) {
    for (const BeatPair& beat : donor.beats) donor_abnormals += is_abnormal(beat.label);
  }
  CHECK(count_abnormal(ctx.training) <= donor_abnormals);
  CHECK(count_abnormal(ctx.training) >= 1);
}

TEST_CASE("adaptation strategy keeps donor membership but morphs every beat") {
  const std::vector<PatientBeats> patients = synth_patients(13, 3, 160, 0.3);
  const PatientSplit target = ingest::make_patient_split(patients[0], 1.5);
  const std::vector<PatientBeats> others(patients.begin() + 1, patients.end());

  RunOptions baseline_opt = quick_options(StrategyKind::Baseline);
  RunOptions da_opt = quick_options(StrategyKind::DomainAdaptation);
  const StrategyContext baseline = prepare_strategy(target, others, baseline_opt);
  const StrategyContext da = prepare_strategy(target, others, da_opt);

  REQUIRE(da.training.size() == baseline.training.size());
  const std::size_t n_target = target.train_normals.size();
  double moved = 0.0;
  for (std::size_t i = 0; i < da.training.size(); ++i) {
    CHECK(da.training[i].source_id == baseline.training[i].source_id);
    CHECK(da.training[i].origin_index == baseline.training[i].origin_index);
    CHECK(da.training[i].single.norm() == doctest::Approx(1.0).epsilon(1e-9));
    if (i < n_target) {
      // Target beats pass through untouched.
      CHECK((da.training[i].single - baseline.training[i].single).norm() <= 1e-15);
    } else {
      moved += (da.training[i].single - baseline.training[i].single).norm();
    }
  }
  CHECK(moved > 0.0);
}

TEST_CASE("seeded composition matches the one-shot strategy and redraws the donor pool") {
  const std::vector<PatientBeats> patients = synth_patients(17, 4, 200, 0.3);
  const PatientSplit target = ingest::make_patient_split(patients[0], 1.5);
  const std::vector<PatientBeats> others(patients.begin() + 1, patients.end());
  const RunOptions opt = quick_options(StrategyKind::Baseline);

  const StrategyPlan plan = prepare_plan(target, others, opt);
  const StrategyContext direct = prepare_strategy(target, others, opt);
  const StrategyContext composed = compose_training(plan, opt.subsample_seed);

  REQUIRE(composed.training.size() == direct.training.size());
  for (std::size_t i = 0; i < composed.training.size(); ++i) {
    CHECK(composed.training[i].source_id == direct.training[i].source_id);
    CHECK(composed.training[i].origin_index == direct.training[i].origin_index);
    CHECK((composed.training[i].single - direct.training[i].single).norm() == 0.0);
  }

  std::size_t fixed_count = plan.fixed.size();
  for (const PlannedItem& planned : plan.donor_abnormals) {
    if (planned.usable) ++fixed_count;
  }
  REQUIRE(plan.pool_draws > 0);
  REQUIRE(plan.pool_draws < plan.donor_pool.size());

  const StrategyContext redrawn = compose_training(plan, opt.subsample_seed + 1);
  REQUIRE(redrawn.training.size() == composed.training.size());
  auto tail_ids = [&](const StrategyContext& ctx) {
    std::set<std::pair<std::string, std::int64_t>> ids;
    for (std::size_t i = fixed_count; i < ctx.training.size(); ++i) {
      ids.emplace(ctx.training[i].source_id, ctx.training[i].origin_index);
    }
    return ids;
  };
  for (std::size_t i = 0; i < fixed_count; ++i) {
    CHECK(redrawn.training[i].source_id == composed.training[i].source_id);
    CHECK(redrawn.training[i].origin_index == composed.training[i].origin_index);
  }
  CHECK(tail_ids(redrawn) != tail_ids(composed));
}

TEST_CASE("cascade calibration picks sorted quantiles with saturating ends") {
  const std::vector<double> energies = {5.0, 1.0, 4.0, 2.0, 3.0};
  CHECK(cascade_threshold_from_energies(energies, 0.2) == 1.0);
  CHECK(cascade_threshold_from_energies(energies, 0.5) == 3.0);
  CHECK(cascade_threshold_from_energies(energies, 0.999) == 5.0);
  CHECK(cascade_threshold_from_energies(energies, 0.0) ==
        -std::numeric_limits<double>::infinity());
  CHECK(cascade_threshold_from_energies(energies, 1.0) ==
        std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(cascade_threshold_from_energies({}, 0.5), EmptyTrainingSet);
}

TEST_CASE("cascade replay short-circuits quiet beats and accounts flops") {
  PatientSeedVotes votes;
  votes.patient_id = "p01";
  votes.gate = 0.8;
  votes.npe_flops = 1000;
  auto add_vote = [&](double energy, double confidence, Verdict network, Verdict fallback,
                      bool abnormal) {
    VoteRecord vote;
    vote.energy = energy;
    vote.confidence = confidence;
    vote.network = network;
    vote.fallback = fallback;
    vote.abnormal = abnormal;
    votes.test_votes.push_back(vote);
  };
  add_vote(0.10, 0.99, Verdict::Abnormal, Verdict::Abnormal, false);  // fast path: Normal, tn
  add_vote(0.30, 0.99, Verdict::Abnormal, Verdict::Normal, true);     // boundary: fast, fn
  add_vote(0.60, 0.90, Verdict::Abnormal, Verdict::Normal, true);     // network answers: tp
  add_vote(0.90, 0.50, Verdict::Normal, Verdict::Abnormal, false);    // fallback answers: fp

  const CascadeReport report = run_cascade(votes, 0.30);
  CHECK(report.total_beats == 4);
  CHECK(report.fast_path_beats == 2);
  CHECK(report.confusion.tn == 1);
  CHECK(report.confusion.fn == 1);
  CHECK(report.confusion.tp == 1);
  CHECK(report.confusion.fp == 1);
  const long long network_flops = cnn::cnn_forward_flops();
  CHECK(report.flops_full == 4 * (network_flops + 1000));
  CHECK(report.flops_cascade == 4 * 1000 + 2 * network_flops);
  CHECK(report.flops_saved == 2 * network_flops);
}

TEST_CASE("two-sided cascade also short-circuits loud beats") {
  PatientSeedVotes votes;
  votes.patient_id = "p01";
  votes.gate = 0.8;
  votes.npe_flops = 1000;
  auto add_vote = [&](double energy, double confidence, Verdict network, Verdict fallback,
                      bool abnormal) {
    VoteRecord vote;
    vote.energy = energy;
    vote.confidence = confidence;
    vote.network = network;
    vote.fallback = fallback;
    vote.abnormal = abnormal;
    votes.test_votes.push_back(vote);
  };
  add_vote(0.10, 0.99, Verdict::Abnormal, Verdict::Abnormal, false);  // fast Normal: tn
  add_vote(0.30, 0.99, Verdict::Abnormal, Verdict::Abnormal, true);   // lower boundary: fn
  add_vote(0.80, 0.99, Verdict::Normal, Verdict::Normal, true);       // upper boundary: tp
  add_vote(0.95, 0.99, Verdict::Normal, Verdict::Normal, false);      // fast Abnormal: fp
  add_vote(0.60, 0.90, Verdict::Abnormal, Verdict::Normal, true);     // network answers: tp
  add_vote(0.50, 0.50, Verdict::Abnormal, Verdict::Normal, false);    // fallback answers: tn

  const CascadeReport report = run_cascade(votes, 0.30, 0.80);
  CHECK(report.threshold == 0.30);
  CHECK(report.upper_threshold == 0.80);
  CHECK(report.total_beats == 6);
  CHECK(report.fast_path_beats == 4);
  CHECK(report.confusion.tn == 2);
  CHECK(report.confusion.fn == 1);
  CHECK(report.confusion.tp == 2);
  CHECK(report.confusion.fp == 1);
  const long long network_flops = cnn::cnn_forward_flops();
  CHECK(report.flops_full == 6 * (network_flops + 1000));
  CHECK(report.flops_cascade == 6 * 1000 + 2 * network_flops);
  CHECK(report.flops_saved == 4 * network_flops);

  // Coincident bounds: the normal shortcut wins the tie.
  PatientSeedVotes tie;
  tie.patient_id = "p02";
  tie.gate = 0.8;
  tie.npe_flops = 1000;
  VoteRecord vote;
  vote.energy = 0.5;
  vote.confidence = 0.99;
  vote.network = Verdict::Abnormal;
  vote.fallback = Verdict::Abnormal;
  vote.abnormal = true;
  tie.test_votes.push_back(vote);
  const CascadeReport tied = run_cascade(tie, 0.5, 0.5);
  CHECK(tied.fast_path_beats == 1);
  CHECK(tied.confusion.fn == 1);

  CHECK_THROWS_AS(run_cascade(votes, 0.6, 0.5), std::invalid_argument);
}

TEST_CASE("a small experiment runs end to end with sweeps and result files") {
  const std::vector<PatientBeats> patients = synth_patients(21, 3, 240, 0.25);
  RunOptions opt = quick_options(StrategyKind::Baseline);
  opt.seeds = {0, 1};

  const ExperimentResult result = run_experiment(patients, opt);
  REQUIRE(result.skipped.empty());
  REQUIRE(result.patients.size() == 3);
  for (const PatientResult& patient : result.patients) {
    REQUIRE(patient.seeds.size() == 2);
    for (const PatientSeedResult& seed : patient.seeds) {
      CHECK(seed.ensemble.total() == patient.test_count);
      CHECK(seed.network.total() == patient.test_count);
      CHECK(seed.likelihood.total() == patient.test_count);
      CHECK(seed.threshold.total() == patient.test_count);
      CHECK(seed.gate >= 0.5);
      CHECK(seed.gate <= 0.99);
      CHECK(seed.threshold_value >= 0.0);
      CHECK(seed.threshold_value <= 1.0);
      CHECK(seed.best_epoch >= 0);
    }
    CHECK(std::isfinite(patient.auc_npe));
    CHECK(patient.auc_npe > 0.5);  // residual energies separate the classes
    CHECK(patient.test_abnormal_count > 0);
  }
  CHECK(result.votes.size() == 6);  // 3 patients x 2 seeds
  CHECK(result.ensemble.pooled.total() ==
        result.patients[0].test_count * 2 + result.patients[1].test_count * 2 +
            result.patients[2].test_count * 2);
  CHECK(result.ensemble.macro.f1 >= 0.0);
  CHECK(result.ensemble.macro.f1 <= 1.0);

  const std::vector<SweepPoint> gates = sweep_confidence(result);
  REQUIRE(gates.size() == 50);
  CHECK(gates.front().x == doctest::Approx(0.50).epsilon(1e-12));
  CHECK(gates.back().x == doctest::Approx(0.99).epsilon(1e-12));

  const std::vector<SweepPoint> thresholds = sweep_threshold(result);
  REQUIRE(thresholds.size() == 101);
  CHECK(thresholds.front().x == 0.0);
  CHECK(thresholds.back().x == 1.0);
  // Threshold 0 marks everything abnormal: recall 1; threshold 1 marks nothing.
  CHECK(thresholds.front().metrics.recall == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(thresholds.back().metrics.recall == 0.0);

  const std::vector<double> fractions = {0.0, 0.3, 0.6, 0.9};
  const std::vector<EfficiencyPoint> efficiency = sweep_efficiency(result, fractions);
  REQUIRE(efficiency.size() == 4);
  CHECK(efficiency[0].fast_path_beats == 0);
  CHECK(efficiency[0].flops_saved == 0);
  for (std::size_t i = 1; i < efficiency.size(); ++i) {
    CHECK(efficiency[i].fast_path_beats >= efficiency[i - 1].fast_path_beats);
    CHECK(efficiency[i].flops_saved >= efficiency[i - 1].flops_saved);
    CHECK(efficiency[i].saved_ratio >= 0.0);
    CHECK(efficiency[i].saved_ratio < 1.0);
  }

  const testutil::ScratchDir dir("zsecg-results");
  emit_results(result, opt, dir.path());
  write_sweep_csv(gates, "gate", dir.path() / "confidence_sweep.csv");
  write_sweep_csv(thresholds, "threshold", dir.path() / "threshold_sweep.csv");
  write_efficiency_csv(efficiency, dir.path() / "efficiency.csv");

  const serialization::CsvTable summary =
      serialization::read_csv_table(dir.path() / "summary.csv");
  CHECK(summary.rows.size() == 3 * 2 * 4);  // patients x seeds x methods
  CHECK(summary.number(0, "tp") + summary.number(0, "fp") + summary.number(0, "fn") +
            summary.number(0, "tn") ==
        doctest::Approx(double(result.patients[0].test_count)));

  const serialization::CsvTable macro = serialization::read_csv_table(dir.path() / "macro.csv");
  REQUIRE(macro.rows.size() == 4);
  CHECK(macro.cell(0, "method") == "ensemble");
  CHECK(macro.number(0, "f1") == doctest::Approx(result.ensemble.macro.f1).epsilon(1e-12));

  const serialization::CsvTable sweep =
      serialization::read_csv_table(dir.path() / "threshold_sweep.csv");
  CHECK(sweep.rows.size() == 101);
  const serialization::CsvTable patients_table =
      serialization::read_csv_table(dir.path() / "patients.csv");
  CHECK(patients_table.rows.size() == 3);
  CHECK(std::filesystem::exists(dir.path() / "config.json"));

  CHECK_THROWS_AS(sweep_confidence(ExperimentResult{}), std::invalid_argument);
}

TEST_CASE("unusable patients are skipped with a reason, not fatal") {
  std::vector<PatientBeats> patients = synth_patients(31, 2, 160, 0.25);
  PatientBeats tiny;
  tiny.patient_id = "p99";
  tiny.sampling_rate = 360.0;
  tiny.beats.push_back(patients[0].beats.front());  // one beat: split has no test half
  patients.push_back(tiny);

  RunOptions opt = quick_options(StrategyKind::Baseline);
  const ExperimentResult result = run_experiment(patients, opt);
  CHECK(result.patients.size() == 2);
  REQUIRE(result.skipped.size() == 1);
  CHECK(result.skipped[0].patient_id == "p99");
  CHECK(!result.skipped[0].reason.empty());
}

TEST_CASE("model files round trip exactly") {
  const testutil::ScratchDir dir("zsecg-models");

  sparse::Dictionary dict;
  dict.atoms = testutil::random_unit_columns(kBeatLength, 9, 71);
  dict.patient_id = "p07";
  serialization::save_dictionary(dict, dir.path() / "dict.json");
  const sparse::Dictionary dict2 = serialization::load_dictionary(dir.path() / "dict.json");
  CHECK(dict2.patient_id == "p07");
  CHECK(dict2.atoms == dict.atoms);

  adaptation::MorphTransform transform;
  transform.matrix = testutil::random_matrix(kBeatLength, kBeatLength, 72);
  transform.source_id = "p02";
  transform.target_id = "p01";
  transform.gamma = 0.25;
  transform.eta = 0.001;
  transform.epochs = 17;
  serialization::save_transform(transform, dir.path() / "mtm.json");
  const adaptation::MorphTransform transform2 =
      serialization::load_transform(dir.path() / "mtm.json");
  CHECK(transform2.matrix == transform.matrix);
  CHECK(transform2.source_id == "p02");
  CHECK(transform2.target_id == "p01");
  CHECK(transform2.gamma == 0.25);
  CHECK(transform2.epochs == 17);

  adaptation::AbsLibrary library;
  library.filter_len = 16;
  library.ridge = 1e-5;
  library.prune_threshold = 0.85;
  adaptation::AbsFilter filter;
  filter.taps = testutil::random_matrix(16, 1, 73).col(0);
  filter.source_id = "p03";
  filter.source_origin = 4242;
  filter.source_class = AamiClass::V;
  library.filters.push_back(filter);
  serialization::save_abs_library(library, dir.path() / "abs.json");
  const adaptation::AbsLibrary library2 =
      serialization::load_abs_library(dir.path() / "abs.json");
  REQUIRE(library2.filters.size() == 1);
  CHECK(library2.filters[0].taps == filter.taps);
  CHECK(library2.filters[0].source_origin == 4242);
  CHECK(library2.filters[0].source_class == AamiClass::V);
  CHECK(library2.filter_len == 16);

  const cnn::CnnModel model = cnn::CnnModel::init(99);
  serialization::save_cnn(model, dir.path() / "cnn.json");
  const cnn::CnnModel model2 = serialization::load_cnn(dir.path() / "cnn.json");
  CHECK(model2.conv1.weight == model.conv1.weight);
  CHECK(model2.conv2.bias == model.conv2.bias);
  CHECK(model2.conv3.weight == model.conv3.weight);
  CHECK(model2.fc1.weight == model.fc1.weight);
  CHECK(model2.fc2.bias == model.fc2.bias);
  const Eigen::MatrixXd probe = testutil::random_matrix(2 * kBeatLength, 2, 74);
  CHECK(cnn::cnn_log_probs(model2, probe) == cnn::cnn_log_probs(model, probe));

  CHECK_THROWS_AS(serialization::load_dictionary(dir.path() / "cnn.json"), ParseError);
  CHECK_THROWS_AS(serialization::load_cnn(dir.path() / "missing.json"), ParseError);
}

TEST_CASE("binary beat and dataset stores round trip exactly") {
  const testutil::ScratchDir dir("zsecg-bin");
  const std::vector<PatientBeats> patients = synth_patients(41, 2, 60, 0.3);

  serialization::save_beats(patients, dir.path() / "beats.bin");
  const std::vector<PatientBeats> loaded = serialization::load_beats(dir.path() / "beats.bin");
  REQUIRE(loaded.size() == patients.size());
  for (std::size_t p = 0; p < patients.size(); ++p) {
    CHECK(loaded[p].patient_id == patients[p].patient_id);
    CHECK(loaded[p].sampling_rate == patients[p].sampling_rate);
    REQUIRE(loaded[p].beats.size() == patients[p].beats.size());
    for (std::size_t b = 0; b < patients[p].beats.size(); ++b) {
      CHECK(loaded[p].beats[b].single == patients[p].beats[b].single);
      CHECK(loaded[p].beats[b].trio == patients[p].beats[b].trio);
      CHECK(loaded[p].beats[b].label == patients[p].beats[b].label);
      CHECK(loaded[p].beats[b].origin_index == patients[p].beats[b].origin_index);
    }
  }

  std::vector<DatasetItem> items;
  for (const BeatPair& beat : patients[0].beats) {
    DatasetItem item;
    item.single = beat.single;
    item.trio = beat.trio;
    item.abnormal = is_abnormal(beat.label);
    item.aami = beat.label;
    item.source_id = patients[0].patient_id;
    item.origin_index = beat.origin_index;
    items.push_back(std::move(item));
  }
  serialization::save_dataset(items, dir.path() / "dataset.bin");
  const std::vector<DatasetItem> loaded_items =
      serialization::load_dataset(dir.path() / "dataset.bin");
  REQUIRE(loaded_items.size() == items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    CHECK(loaded_items[i].single == items[i].single);
    CHECK(loaded_items[i].trio == items[i].trio);
    CHECK(loaded_items[i].abnormal == items[i].abnormal);
    CHECK(loaded_items[i].aami == items[i].aami);
    CHECK(loaded_items[i].source_id == items[i].source_id);
    CHECK(loaded_items[i].origin_index == items[i].origin_index);
  }

  // Wrong magic and truncation both fail loudly.
  CHECK_THROWS_AS(serialization::load_beats(dir.path() / "dataset.bin"), ParseError);
  std::ofstream truncated(dir.path() / "short.bin", std::ios::binary);
  truncated.write("ZSECGB1\n\x05", 9);
  truncated.close();
  CHECK_THROWS_AS(serialization::load_beats(dir.path() / "short.bin"), ParseError);
}

TEST_CASE("csv reader handles comments, headers and ragged rows") {
  const testutil::ScratchDir dir("zsecg-csv");
  {
    std::ofstream out(dir.path() / "table.csv");
    out << "# comment line\n";
    out << "name,value,score\n";
    out << "alpha,1.5,2\n";
    out << "beta,-3.25,7\n";
  }
  const serialization::CsvTable table = serialization::read_csv_table(dir.path() / "table.csv");
  REQUIRE(table.columns.size() == 3);
  REQUIRE(table.rows.size() == 2);
  CHECK(table.cell(0, "name") == "alpha");
  CHECK(table.number(1, "value") == -3.25);
  CHECK(table.number(0, "score") == 2.0);
  CHECK_THROWS_AS(table.cell(0, "missing"), std::out_of_range);

  {
    std::ofstream out(dir.path() / "ragged.csv");
    out << "a,b\n1,2,3\n";
  }
  CHECK_THROWS_AS(serialization::read_csv_table(dir.path() / "ragged.csv"), ParseError);
}
