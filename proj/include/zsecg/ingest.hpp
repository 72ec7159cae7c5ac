#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "zsecg/types.hpp"

namespace zsecg::ingest {

enum class CorpusFormat : std::uint8_t { Wfdb = 0, Csv = 1 };

struct IngestReport {
  std::size_t records = 0;
  std::size_t beat_annotations = 0;
  std::size_t beats_kept = 0;
  std::size_t skipped_boundary = 0;
  std::size_t skipped_unmapped = 0;
  std::size_t skipped_degenerate = 0;
  std::map<char, std::size_t> unmapped_symbols;

  void merge(const IngestReport& other);
};

// Reads <name>.hea / <name>.dat (format 212) / <name>.atr.
EcgRecord parse_wfdb_record(const std::filesystem::path& header_path, int channel = 0);

// Reads <name>.csv (one amplitude per line) plus <name>.peaks.csv (sample,symbol).
EcgRecord parse_csv_record(const std::filesystem::path& csv_path);

void write_csv_record(const EcgRecord& record, const std::filesystem::path& dir);

std::vector<EcgRecord> load_corpus(const std::filesystem::path& dir,
                                   CorpusFormat format, int channel = 0,
                                   bool apply_exclusions = false,
                                   IngestReport* report = nullptr);

// Record ids whose beats never enter an experiment (paced or fewer than two
// classes under the five-minute protocol).
const std::set<std::string>& excluded_patients();
bool is_excluded(const std::string& patient_id);

// Piecewise-linear resampling that keeps both endpoints.
Eigen::VectorXd resample_linear(const Eigen::VectorXd& in, int target_len = kBeatLength);

// Inclusive sample window, already rounded; trio windows are clamped to the record.
struct SampleWindow {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
};
SampleWindow single_beat_window(std::int64_t left, std::int64_t center,
                                std::int64_t right);
SampleWindow beat_trio_window(std::int64_t left, std::int64_t center,
                              std::int64_t right, std::int64_t record_len);

std::optional<Beat> extract_single_beat(const EcgRecord& record,
                                        std::size_t peak_index,
                                        IngestReport* report = nullptr);
std::optional<Beat> extract_beat_trio(const EcgRecord& record,
                                      std::size_t peak_index,
                                      IngestReport* report = nullptr);

PatientBeats extract_beat_pairs(const EcgRecord& record,
                                IngestReport* report = nullptr);

PatientSplit make_patient_split(const PatientBeats& beats,
                                double train_minutes = 5.0);

struct SynthOptions {
  double sampling_rate = 360.0;
  double mean_rr_seconds = 0.8;
  double rr_jitter = 0.04;
  int distortion_filters = 3;
  int distortion_taps = 25;
  double noise_level = 0.004;
};

// Deterministic synthetic cohort; abnormal beats are FIR-distorted templates.
std::vector<EcgRecord> synth_corpus(std::uint64_t seed, int n_patients,
                                    int beats_per_patient, double abnormal_rate,
                                    const SynthOptions& opt = {});

void write_csv_corpus(const std::vector<EcgRecord>& corpus,
                      const std::filesystem::path& dir);

}  // namespace zsecg::ingest
