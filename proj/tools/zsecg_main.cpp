#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "zsecg/adaptation.hpp"
#include "zsecg/classifiers.hpp"
#include "zsecg/cnn.hpp"
#include "zsecg/ingest.hpp"
#include "zsecg/pipeline.hpp"
#include "zsecg/serialization.hpp"
#include "zsecg/sparse.hpp"
#include "zsecg/types.hpp"

namespace {

using namespace zsecg;

struct DataArgs {
  std::string beats_path;
  std::string data_dir;
  std::string format = "csv";
  int channel = 0;
  bool apply_exclusions = false;
};

void add_data_options(CLI::App* cmd, DataArgs& args) {
  auto* beats =
      cmd->add_option("--beats", args.beats_path, "Beat store written by ingest or synth");
  auto* dir = cmd->add_option("--data-dir", args.data_dir, "Record directory to ingest");
  cmd->add_option("--format", args.format, "Record format: csv or wfdb")
      ->check(CLI::IsMember({"csv", "wfdb"}));
  cmd->add_option("--channel", args.channel, "Signal channel for wfdb records");
  cmd->add_flag("--apply-exclusions", args.apply_exclusions,
                "Drop the standard excluded record ids");
  beats->excludes(dir);
}

std::vector<PatientBeats> load_patients(const DataArgs& args) {
  if (!args.beats_path.empty()) return serialization::load_beats(args.beats_path);
  if (args.data_dir.empty()) {
    throw std::runtime_error("either --beats or --data-dir is required");
  }
  const ingest::CorpusFormat format =
      args.format == "wfdb" ? ingest::CorpusFormat::Wfdb : ingest::CorpusFormat::Csv;
  ingest::IngestReport report;
  const std::vector<EcgRecord> records =
      ingest::load_corpus(args.data_dir, format, args.channel, args.apply_exclusions, &report);
  std::vector<PatientBeats> patients;
  for (const EcgRecord& record : records) {
    patients.push_back(ingest::extract_beat_pairs(record));
  }
  return patients;
}

std::vector<std::uint64_t> parse_seed_spec(const std::string& spec) {
  std::vector<std::uint64_t> seeds;
  const std::size_t range = spec.find("..");
  if (range != std::string::npos) {
    const std::uint64_t lo = std::stoull(spec.substr(0, range));
    const std::uint64_t hi = std::stoull(spec.substr(range + 2));
    if (hi < lo) throw std::runtime_error("seed range is reversed: " + spec);
    for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
    return seeds;
  }
  std::size_t start = 0;
  while (start <= spec.size()) {
    const std::size_t comma = spec.find(',', start);
    const std::string token =
        spec.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (token.empty()) throw std::runtime_error("bad seed list: " + spec);
    seeds.push_back(std::stoull(token));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return seeds;
}

std::vector<PatientBeats> filter_patients(std::vector<PatientBeats> patients,
                                          const std::string& spec) {
  if (spec == "all") return patients;
  std::set<std::string> wanted;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const std::size_t comma = spec.find(',', start);
    const std::string token =
        spec.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!token.empty()) wanted.insert(token);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (wanted.empty()) throw std::runtime_error("empty patient list");
  std::vector<PatientBeats> kept;
  for (PatientBeats& patient : patients) {
    if (wanted.erase(patient.patient_id) > 0) kept.push_back(std::move(patient));
  }
  if (!wanted.empty()) {
    throw std::runtime_error("unknown patient id: " + *wanted.begin());
  }
  return kept;
}

struct ExperimentArgs {
  DataArgs data;
  std::string strategy = "baseline";
  std::string patients = "all";
  int runs = 1;
  std::string seeds_spec;
  std::string out_dir = "results";
  double train_minutes = 5.0;
  int dict_atoms = 20;
  double dict_lambda = 0.01;
  int dict_iterations = 30;
  double mtm_gamma = 0.2;
  double mtm_eta = 0.002;
  int mtm_epochs = 25;
  double mtm_lambda = 0.01;
  int abs_filter_len = 32;
  double abs_ridge = 1e-6;
  double abs_prune = 0.9;
  std::uint64_t subsample_seed = 0;
  double train_fraction = 0.8;
  int cnn_epochs = 500;
  int cnn_patience = 15;
  int cnn_batch = 128;
  double cnn_lr = 1e-3;
  double cnn_weight_decay = 1e-2;
  bool npe_from_trio = false;
};

void add_model_options(CLI::App* cmd, ExperimentArgs& args) {
  cmd->add_option("--train-minutes", args.train_minutes,
                  "Leading minutes of normal beats kept for personalization");
  cmd->add_option("--dict-atoms", args.dict_atoms, "Dictionary atoms per patient");
  cmd->add_option("--dict-lambda", args.dict_lambda, "Sparse coding penalty");
  cmd->add_option("--dict-iterations", args.dict_iterations, "Dictionary learning iterations");
  cmd->add_option("--mtm-gamma", args.mtm_gamma, "Morphing identity pull");
  cmd->add_option("--mtm-eta", args.mtm_eta, "Morphing learning rate");
  cmd->add_option("--mtm-epochs", args.mtm_epochs, "Morphing epochs");
  cmd->add_option("--mtm-lambda", args.mtm_lambda, "Morphing sparse coding penalty");
  cmd->add_option("--abs-filter-len", args.abs_filter_len, "Synthesis filter taps");
  cmd->add_option("--abs-ridge", args.abs_ridge, "Synthesis filter ridge weight");
  cmd->add_option("--abs-prune", args.abs_prune,
                  "Cosine similarity above which a filter is redundant (>=1 keeps all)");
  cmd->add_option("--subsample-seed", args.subsample_seed, "Donor normal subsampling seed");
  cmd->add_option("--train-fraction", args.train_fraction, "Train share of the training set");
  cmd->add_option("--cnn-epochs", args.cnn_epochs, "Network epoch cap");
  cmd->add_option("--cnn-patience", args.cnn_patience, "Early stopping patience");
  cmd->add_option("--cnn-batch", args.cnn_batch, "Mini-batch size");
  cmd->add_option("--cnn-lr", args.cnn_lr, "Learning rate");
  cmd->add_option("--cnn-weight-decay", args.cnn_weight_decay, "Decoupled weight decay");
  cmd->add_flag("--npe-from-trio", args.npe_from_trio,
                "Compute residual energies from the trio window");
}

void add_experiment_options(CLI::App* cmd, ExperimentArgs& args) {
  add_data_options(cmd, args.data);
  cmd->add_option("--strategy", args.strategy, "baseline, abs or da")
      ->check(CLI::IsMember({"baseline", "abs", "da"}));
  cmd->add_option("--patients", args.patients, "all or a comma-separated id list");
  cmd->add_option("--runs", args.runs, "Number of runs; seeds default to 0..runs-1")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--seeds", args.seeds_spec, "Seed list: 0..9 or 1,4,7");
  cmd->add_option("--out", args.out_dir, "Output directory");
  add_model_options(cmd, args);
}

pipeline::RunOptions to_run_options(const ExperimentArgs& args, bool capture_votes) {
  pipeline::RunOptions opt;
  opt.strategy = pipeline::strategy_from_name(args.strategy);
  opt.train_minutes = args.train_minutes;
  opt.dict_atoms = args.dict_atoms;
  opt.dict.lambda = args.dict_lambda;
  opt.dict.iterations = args.dict_iterations;
  opt.mtm.gamma = args.mtm_gamma;
  opt.mtm.eta = args.mtm_eta;
  opt.mtm.epochs = args.mtm_epochs;
  opt.mtm.lambda = args.mtm_lambda;
  opt.abs_filter_len = args.abs_filter_len;
  opt.abs_ridge = args.abs_ridge;
  opt.abs_prune = args.abs_prune;
  opt.subsample_seed = args.subsample_seed;
  opt.train_fraction = args.train_fraction;
  opt.cnn.max_epochs = args.cnn_epochs;
  opt.cnn.patience = args.cnn_patience;
  opt.cnn.batch_size = args.cnn_batch;
  opt.cnn.learning_rate = args.cnn_lr;
  opt.cnn.weight_decay = args.cnn_weight_decay;
  opt.npe_from_trio = args.npe_from_trio;
  opt.capture_votes = capture_votes;
  opt.seeds.clear();
  if (!args.seeds_spec.empty()) {
    opt.seeds = parse_seed_spec(args.seeds_spec);
  } else {
    for (int s = 0; s < args.runs; ++s) opt.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  return opt;
}

pipeline::ExperimentResult run_configured(const ExperimentArgs& args, bool capture_votes) {
  const std::vector<PatientBeats> patients =
      filter_patients(load_patients(args.data), args.patients);
  if (patients.empty()) throw std::runtime_error("no patients to run");
  return pipeline::run_experiment(patients, to_run_options(args, capture_votes));
}

void print_experiment(const pipeline::ExperimentResult& result) {
  const std::vector<std::pair<const char*, const pipeline::MethodAggregate*>> methods = {
      {"ensemble", &result.ensemble},
      {"network", &result.network},
      {"likelihood", &result.likelihood},
      {"threshold", &result.threshold},
  };
  for (const auto& [name, aggregate] : methods) {
    std::printf("macro %-10s f1=%.4f precision=%.4f recall=%.4f specificity=%.4f\n", name,
                aggregate->macro.f1, aggregate->macro.precision, aggregate->macro.recall,
                aggregate->macro.specificity);
  }
  for (const pipeline::PatientResult& patient : result.patients) {
    std::printf("patient %s: test=%d abnormal=%d auc_npe=%.4f\n", patient.patient_id.c_str(),
                patient.test_count, patient.test_abnormal_count, patient.auc_npe);
  }
  for (const pipeline::SkippedPatient& skipped : result.skipped) {
    std::printf("skipped %s: %s\n", skipped.patient_id.c_str(), skipped.reason.c_str());
  }
}

void print_skipped(const pipeline::ExperimentResult& result) {
  for (const pipeline::SkippedPatient& skipped : result.skipped) {
    std::printf("skipped %s: %s\n", skipped.patient_id.c_str(), skipped.reason.c_str());
  }
}

std::string window_flag_help() { return "Beat window: single or trio"; }

Eigen::MatrixXd window_matrix(const std::vector<BeatPair>& beats, const std::string& window) {
  Eigen::MatrixXd m(kBeatLength, static_cast<Eigen::Index>(beats.size()));
  for (std::size_t i = 0; i < beats.size(); ++i) {
    m.col(static_cast<Eigen::Index>(i)) = window == "trio" ? beats[i].trio : beats[i].single;
  }
  return m;
}

const PatientBeats& find_patient(const std::vector<PatientBeats>& patients,
                                 const std::string& id) {
  for (const PatientBeats& patient : patients) {
    if (patient.patient_id == id) return patient;
  }
  throw std::runtime_error("unknown patient id: " + id);
}

void register_ingest(CLI::App& app) {
  auto args = std::make_shared<DataArgs>();
  auto out = std::make_shared<std::string>("beats.bin");
  CLI::App* cmd = app.add_subcommand("ingest", "Read a record directory into a beat store");
  add_data_options(cmd, *args);
  cmd->add_option("--out", *out, "Beat store to write")->required();
  cmd->callback([args, out] {
    if (args->data_dir.empty()) throw std::runtime_error("ingest needs --data-dir");
    const ingest::CorpusFormat format =
        args->format == "wfdb" ? ingest::CorpusFormat::Wfdb : ingest::CorpusFormat::Csv;
    ingest::IngestReport report;
    const std::vector<EcgRecord> records = ingest::load_corpus(
        args->data_dir, format, args->channel, args->apply_exclusions, &report);
    std::vector<PatientBeats> patients;
    for (const EcgRecord& record : records) {
      patients.push_back(ingest::extract_beat_pairs(record, &report));
    }
    serialization::save_beats(patients, *out);
    std::printf("records=%zu annotations=%zu kept=%zu boundary=%zu unmapped=%zu degenerate=%zu\n",
                report.records, report.beat_annotations, report.beats_kept,
                report.skipped_boundary, report.skipped_unmapped, report.skipped_degenerate);
    for (const auto& [symbol, count] : report.unmapped_symbols) {
      std::printf("unmapped '%c': %zu\n", symbol, count);
    }
    std::printf("wrote %s\n", out->c_str());
  });
}

void register_synth(CLI::App& app) {
  struct SynthArgs {
    std::uint64_t seed = 0;
    int patients = 4;
    int beats = 300;
    double abnormal_rate = 0.2;
    std::string out = "beats.bin";
    std::string csv_dir;
    ingest::SynthOptions opt;
  };
  auto args = std::make_shared<SynthArgs>();
  CLI::App* cmd = app.add_subcommand("synth", "Generate a deterministic synthetic cohort");
  cmd->add_option("--seed", args->seed, "Generator seed");
  cmd->add_option("--patients", args->patients, "Number of patients")->check(CLI::PositiveNumber);
  cmd->add_option("--beats", args->beats, "Beats per patient")->check(CLI::PositiveNumber);
  cmd->add_option("--abnormal-rate", args->abnormal_rate, "Abnormal beat probability");
  cmd->add_option("--sampling-rate", args->opt.sampling_rate, "Samples per second");
  cmd->add_option("--mean-rr", args->opt.mean_rr_seconds, "Mean beat interval in seconds");
  cmd->add_option("--rr-jitter", args->opt.rr_jitter, "Beat interval jitter");
  cmd->add_option("--distortion-filters", args->opt.distortion_filters,
                  "Shared abnormality filter bank size");
  cmd->add_option("--distortion-taps", args->opt.distortion_taps, "Abnormality filter taps");
  cmd->add_option("--noise", args->opt.noise_level, "Additive noise level");
  cmd->add_option("--out", args->out, "Beat store to write");
  cmd->add_option("--csv-dir", args->csv_dir, "Also write the raw records as csv");
  cmd->callback([args] {
    const std::vector<EcgRecord> records = ingest::synth_corpus(
        args->seed, args->patients, args->beats, args->abnormal_rate, args->opt);
    if (!args->csv_dir.empty()) {
      ingest::write_csv_corpus(records, args->csv_dir);
      std::printf("wrote csv records to %s\n", args->csv_dir.c_str());
    }
    ingest::IngestReport report;
    std::vector<PatientBeats> patients;
    for (const EcgRecord& record : records) {
      patients.push_back(ingest::extract_beat_pairs(record, &report));
    }
    serialization::save_beats(patients, args->out);
    std::printf("patients=%d beats_kept=%zu wrote %s\n", args->patients, report.beats_kept,
                args->out.c_str());
  });
}

void register_sparse(CLI::App& app) {
  CLI::App* group = app.add_subcommand("sparse", "Per-patient dictionary tools");
  group->require_subcommand(1);

  struct LearnDictArgs {
    DataArgs data;
    std::string patient;
    std::string window = "single";
    int atoms = 20;
    double lambda = 0.01;
    int iterations = 30;
    double train_minutes = 5.0;
    std::string out = "dict.json";
  };
  auto args = std::make_shared<LearnDictArgs>();
  CLI::App* cmd =
      group->add_subcommand("learn-dict", "Learn a dictionary from a patient's leading normals");
  add_data_options(cmd, args->data);
  cmd->add_option("--patient", args->patient, "Target patient id")->required();
  cmd->add_option("--window", args->window, window_flag_help())
      ->check(CLI::IsMember({"single", "trio"}));
  cmd->add_option("--atoms", args->atoms, "Dictionary atoms");
  cmd->add_option("--lambda", args->lambda, "Sparse coding penalty");
  cmd->add_option("--iterations", args->iterations, "Learning iterations");
  cmd->add_option("--train-minutes", args->train_minutes, "Leading minutes of normals");
  cmd->add_option("--out", args->out, "Dictionary file to write");
  cmd->callback([args] {
    const std::vector<PatientBeats> patients = load_patients(args->data);
    const PatientBeats& patient = find_patient(patients, args->patient);
    const PatientSplit split = ingest::make_patient_split(patient, args->train_minutes);
    sparse::DictionaryLearnOptions opt;
    opt.lambda = args->lambda;
    opt.iterations = args->iterations;
    const sparse::DictionaryLearnResult result =
        sparse::learn_dictionary(window_matrix(split.train_normals, args->window), args->atoms, opt);
    sparse::Dictionary dict = result.dictionary;
    dict.patient_id = args->patient;
    serialization::save_dictionary(dict, args->out);
    std::printf("trained on %zu normals, objective %.6g -> %.6g, wrote %s\n",
                split.train_normals.size(), result.objective_history.front(),
                result.objective_history.back(), args->out.c_str());
  });
}

void register_adapt(CLI::App& app) {
  CLI::App* group = app.add_subcommand("adapt", "Cross-patient morphing tools");
  group->require_subcommand(1);

  struct LearnMtmArgs {
    DataArgs data;
    std::string dict_path;
    std::string source;
    std::string window = "single";
    double gamma = 0.2;
    double eta = 0.002;
    int epochs = 25;
    double lambda = 0.01;
    std::string out = "mtm.json";
  };
  auto args = std::make_shared<LearnMtmArgs>();
  CLI::App* cmd = group->add_subcommand(
      "learn-mtm", "Learn a transform mapping a donor's normals onto a target dictionary");
  add_data_options(cmd, args->data);
  cmd->add_option("--dict", args->dict_path, "Target dictionary file")->required();
  cmd->add_option("--source", args->source, "Donor patient id")->required();
  cmd->add_option("--window", args->window, window_flag_help())
      ->check(CLI::IsMember({"single", "trio"}));
  cmd->add_option("--gamma", args->gamma, "Identity pull");
  cmd->add_option("--eta", args->eta, "Learning rate");
  cmd->add_option("--epochs", args->epochs, "Epochs");
  cmd->add_option("--lambda", args->lambda, "Sparse coding penalty");
  cmd->add_option("--out", args->out, "Transform file to write");
  cmd->callback([args] {
    const sparse::Dictionary dict = serialization::load_dictionary(args->dict_path);
    const std::vector<PatientBeats> patients = load_patients(args->data);
    const PatientBeats& source = find_patient(patients, args->source);
    std::vector<BeatPair> normals;
    for (const BeatPair& beat : source.beats) {
      if (!is_abnormal(beat.label)) normals.push_back(beat);
    }
    if (normals.empty()) throw std::runtime_error("donor has no normal beats");
    const Eigen::MatrixXd sources = window_matrix(normals, args->window);
    adaptation::MtmOptions opt;
    opt.gamma = args->gamma;
    opt.eta = args->eta;
    opt.epochs = args->epochs;
    opt.lambda = args->lambda;
    adaptation::MorphTransform transform = adaptation::learn_mtm(dict, sources, opt);
    transform.source_id = args->source;
    transform.target_id = dict.patient_id;

    auto mean_residual = [&dict, &opt](const Eigen::MatrixXd& beats) {
      sparse::LassoOptions lasso;
      const sparse::BatchLassoResult coded =
          sparse::admm_lasso_batch(dict.atoms, beats, opt.lambda, lasso);
      return (beats - dict.atoms * coded.codes).colwise().norm().mean();
    };
    const double before = mean_residual(sources);
    const double after = mean_residual(adaptation::apply_mtm_columns(transform, sources));
    serialization::save_transform(transform, args->out);
    std::printf("mean coding residual %.6f -> %.6f over %zu donor normals, wrote %s\n", before,
                after, normals.size(), args->out.c_str());
  });
}

void register_build_dataset(CLI::App& app) {
  struct BuildArgs {
    ExperimentArgs experiment;
    std::string target;
    std::string out = "dataset.bin";
  };
  auto args = std::make_shared<BuildArgs>();
  CLI::App* cmd =
      app.add_subcommand("build-dataset", "Compose one target's zero-shot training set");
  add_data_options(cmd, args->experiment.data);
  cmd->add_option("--strategy", args->experiment.strategy, "baseline, abs or da")
      ->check(CLI::IsMember({"baseline", "abs", "da"}));
  add_model_options(cmd, args->experiment);
  cmd->add_option("--target", args->target, "Target patient id")->required();
  cmd->add_option("--out", args->out, "Dataset file to write");
  cmd->callback([args] {
    const std::vector<PatientBeats> patients = load_patients(args->experiment.data);
    const PatientBeats& target = find_patient(patients, args->target);
    std::vector<PatientBeats> others;
    for (const PatientBeats& patient : patients) {
      if (patient.patient_id != args->target) others.push_back(patient);
    }
    const PatientSplit split =
        ingest::make_patient_split(target, args->experiment.train_minutes);
    const pipeline::RunOptions opt = to_run_options(args->experiment, false);
    const pipeline::StrategyContext ctx = pipeline::prepare_strategy(split, others, opt);
    serialization::save_dataset(ctx.training, args->out);
    std::size_t abnormal = 0;
    for (const pipeline::DatasetItem& item : ctx.training) abnormal += item.abnormal;
    std::printf("items=%zu abnormal=%zu wrote %s\n", ctx.training.size(), abnormal,
                args->out.c_str());
  });
}

void register_train_cnn(CLI::App& app) {
  struct TrainArgs {
    std::string dataset;
    std::uint64_t seed = 0;
    double train_fraction = 0.8;
    int epochs = 500;
    int patience = 15;
    int batch = 128;
    double lr = 1e-3;
    double weight_decay = 1e-2;
    std::string out = "cnn.json";
  };
  auto args = std::make_shared<TrainArgs>();
  CLI::App* cmd = app.add_subcommand("train-cnn", "Train the beat classifier on a dataset file");
  cmd->add_option("--dataset", args->dataset, "Dataset file from build-dataset")->required();
  cmd->add_option("--seed", args->seed, "Init, shuffle and split seed");
  cmd->add_option("--train-fraction", args->train_fraction, "Train share of the dataset");
  cmd->add_option("--epochs", args->epochs, "Epoch cap");
  cmd->add_option("--patience", args->patience, "Early stopping patience");
  cmd->add_option("--batch", args->batch, "Mini-batch size");
  cmd->add_option("--lr", args->lr, "Learning rate");
  cmd->add_option("--weight-decay", args->weight_decay, "Decoupled weight decay");
  cmd->add_option("--out", args->out, "Model file to write");
  cmd->callback([args] {
    const std::vector<pipeline::DatasetItem> items =
        serialization::load_dataset(args->dataset);
    const pipeline::TrainValSplit split =
        pipeline::split_train_val(items, args->train_fraction, args->seed);
    auto inputs = [](const std::vector<pipeline::DatasetItem>& part) {
      Eigen::MatrixXd m(2 * kBeatLength, static_cast<Eigen::Index>(part.size()));
      for (std::size_t i = 0; i < part.size(); ++i) {
        m.col(static_cast<Eigen::Index>(i)).head(kBeatLength) = part[i].single;
        m.col(static_cast<Eigen::Index>(i)).tail(kBeatLength) = part[i].trio;
      }
      return m;
    };
    auto labels = [](const std::vector<pipeline::DatasetItem>& part) {
      std::vector<int> y;
      for (const pipeline::DatasetItem& item : part) y.push_back(item.abnormal ? 1 : 0);
      return y;
    };
    cnn::CnnTrainOptions opt;
    opt.max_epochs = args->epochs;
    opt.patience = args->patience;
    opt.batch_size = args->batch;
    opt.learning_rate = args->lr;
    opt.weight_decay = args->weight_decay;
    opt.seed = args->seed;
    const cnn::CnnTrainResult result = cnn::cnn_train(inputs(split.train), labels(split.train),
                                                      inputs(split.val), labels(split.val), opt);
    serialization::save_cnn(result.model, args->out);
    std::printf("train=%zu val=%zu epochs=%zu best_epoch=%d best_val_loss=%.6f wrote %s\n",
                split.train.size(), split.val.size(), result.val_loss.size(), result.best_epoch,
                result.best_val_loss, args->out.c_str());
  });
}

void register_run(CLI::App& app) {
  auto args = std::make_shared<ExperimentArgs>();
  CLI::App* cmd =
      app.add_subcommand("run", "Run the per-patient experiment and write result tables");
  add_experiment_options(cmd, *args);
  cmd->callback([args] {
    const pipeline::ExperimentResult result = run_configured(*args, true);
    pipeline::emit_results(result, to_run_options(*args, true), args->out_dir);
    print_experiment(result);
    std::printf("wrote %s/{summary,macro,patients}.csv and config.json\n",
                args->out_dir.c_str());
  });
}

void register_cascade(CLI::App& app) {
  struct CascadeArgs {
    ExperimentArgs experiment;
    std::vector<double> fractions;
    bool two_sided = false;
    double upper_fraction = 0.999;
  };
  auto args = std::make_shared<CascadeArgs>();
  CLI::App* cmd = app.add_subcommand(
      "cascade", "Score the two-stage screen at one or more calibration fractions");
  add_experiment_options(cmd, args->experiment);
  cmd->add_option("--fraction", args->fractions,
                  "Calibration fraction(s); defaults to 0,0.1,...,0.9")
      ->delimiter(',');
  cmd->add_flag("--two-sided", args->two_sided,
                "Also resolve very high energies as abnormal without the network");
  cmd->add_option("--upper-fraction", args->upper_fraction,
                  "Calibration fraction of the two-sided abnormal shortcut");
  cmd->callback([args] {
    std::vector<double> fractions = args->fractions;
    if (fractions.empty()) {
      for (int i = 0; i <= 9; ++i) fractions.push_back(0.1 * i);
    }
    const pipeline::ExperimentResult result = run_configured(args->experiment, true);
    print_skipped(result);
    const std::vector<pipeline::EfficiencyPoint> points = pipeline::sweep_efficiency(
        result, fractions, args->two_sided ? args->upper_fraction : 1.0);
    std::filesystem::create_directories(args->experiment.out_dir);
    pipeline::write_efficiency_csv(points,
                                   std::filesystem::path(args->experiment.out_dir) /
                                       "efficiency.csv");
    for (const pipeline::EfficiencyPoint& point : points) {
      std::printf("fraction %.2f: fast_path=%lld/%lld saved=%.1f%% f1=%.4f\n", point.fraction,
                  point.fast_path_beats, point.total_beats, 100.0 * point.saved_ratio,
                  point.metrics.f1);
    }
    std::printf("wrote %s/efficiency.csv\n", args->experiment.out_dir.c_str());
  });
}

void register_sweeps(CLI::App& app) {
  auto gate_args = std::make_shared<ExperimentArgs>();
  CLI::App* gates = app.add_subcommand("sweep-confidence",
                                       "Macro scores across the 50-point confidence gate grid");
  add_experiment_options(gates, *gate_args);
  gates->callback([gate_args] {
    const pipeline::ExperimentResult result = run_configured(*gate_args, true);
    print_skipped(result);
    const std::vector<pipeline::SweepPoint> points = pipeline::sweep_confidence(result);
    std::filesystem::create_directories(gate_args->out_dir);
    pipeline::write_sweep_csv(points, "gate",
                              std::filesystem::path(gate_args->out_dir) /
                                  "confidence_sweep.csv");
    std::printf("wrote %s/confidence_sweep.csv (%zu points)\n", gate_args->out_dir.c_str(),
                points.size());
  });

  auto threshold_args = std::make_shared<ExperimentArgs>();
  CLI::App* thresholds = app.add_subcommand(
      "sweep-threshold", "Pooled scores across the 101-point energy threshold grid");
  add_experiment_options(thresholds, *threshold_args);
  thresholds->callback([threshold_args] {
    const pipeline::ExperimentResult result = run_configured(*threshold_args, true);
    print_skipped(result);
    const std::vector<pipeline::SweepPoint> points = pipeline::sweep_threshold(result);
    std::filesystem::create_directories(threshold_args->out_dir);
    pipeline::write_sweep_csv(points, "threshold",
                              std::filesystem::path(threshold_args->out_dir) /
                                  "threshold_sweep.csv");
    std::printf("wrote %s/threshold_sweep.csv (%zu points)\n", threshold_args->out_dir.c_str(),
                points.size());
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized zero-shot arrhythmia detection toolkit"};
  app.set_config("--config", "", "Read options from a config file");
  app.require_subcommand(1);

  register_ingest(app);
  register_synth(app);
  register_sparse(app);
  register_adapt(app);
  register_build_dataset(app);
  register_train_cnn(app);
  register_run(app);
  register_cascade(app);
  register_sweeps(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
