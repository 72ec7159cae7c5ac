#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace zsecg {

inline constexpr int kBeatLength = 128;

// AAMI heartbeat classes. Everything except N counts as abnormal.
enum class AamiClass : std::uint8_t { N = 0, V = 1, S = 2, F = 3, Q = 4 };

inline bool is_abnormal(AamiClass c) { return c != AamiClass::N; }

inline char aami_symbol(AamiClass c) {
  switch (c) {
    case AamiClass::N: return 'N';
    case AamiClass::V: return 'V';
    case AamiClass::S: return 'S';
    case AamiClass::F: return 'F';
    default: return 'Q';
  }
}

// MIT-BIH beat symbol -> AAMI class; nullopt for symbols outside the mapping.
std::optional<AamiClass> aami_from_symbol(char symbol);

// Binary decision produced by every classifier in the pipeline.
enum class Verdict : std::uint8_t { Normal = 0, Abnormal = 1 };

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnsupportedFormat : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidSegment : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyTrainingSet : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidTrainingSet : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct RankDeficient : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MtmDiverged : std::runtime_error {
  int epoch;
  explicit MtmDiverged(int e)
      : std::runtime_error("morphology transform diverged at epoch " +
                           std::to_string(e)),
        epoch(e) {}
};

struct Beat {
  Eigen::VectorXd values;  // length kBeatLength, unit l2 norm
  AamiClass label = AamiClass::N;
  std::string patient_id;
  std::int64_t origin_index = -1;  // sample index of the central R-peak
};

// Single-beat and beat-trio windows around the same R-peak.
struct BeatPair {
  Eigen::VectorXd single;
  Eigen::VectorXd trio;
  AamiClass label = AamiClass::N;
  std::int64_t origin_index = -1;
};

struct EcgRecord {
  std::string patient_id;
  Eigen::VectorXd samples;
  double sampling_rate = 0.0;
  std::vector<std::int64_t> r_peaks;  // strictly increasing, within [0, samples.size())
  std::vector<char> labels;           // beat symbol per peak
};

struct PatientBeats {
  std::string patient_id;
  double sampling_rate = 0.0;
  std::vector<BeatPair> beats;
};

// First train_minutes of normal beats vs. everything else.
struct PatientSplit {
  std::string patient_id;
  double sampling_rate = 0.0;
  std::vector<BeatPair> train_normals;
  std::vector<BeatPair> test_beats;
  double train_minutes = 5.0;
};

}  // namespace zsecg
