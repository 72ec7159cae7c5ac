#include "zsecg/ingest.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace zsecg {

std::optional<AamiClass> aami_from_symbol(char symbol) {
  switch (symbol) {
    case 'N':
    case 'L':
    case 'R':
    case 'e':
    case 'j':
      return AamiClass::N;
    case 'V':
    case 'E':
      return AamiClass::V;
    case 'A':
    case 'a':
    case 'J':
    case 'S':
      return AamiClass::S;
    case 'F':
      return AamiClass::F;
    case '/':
    case 'f':
    case 'Q':
      return AamiClass::Q;
    default:
      return std::nullopt;
  }
}

}  // namespace zsecg

namespace zsecg::ingest {

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream iss(line);
  std::vector<std::string> tokens;
  std::string tok;
  while (iss >> tok) tokens.push_back(tok);
  return tokens;
}

long long parse_int(const std::string& tok, const char* what) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(tok, &used);
    if (used != tok.size()) throw ParseError(std::string("malformed ") + what);
    return v;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError(std::string("malformed ") + what + ": " + tok);
  }
}

double parse_double(const std::string& tok, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw ParseError(std::string("malformed ") + what);
    return v;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError(std::string("malformed ") + what + ": " + tok);
  }
}

struct SignalSpec {
  std::string file;
  int format = 0;
  double gain = 200.0;
  double baseline = 0.0;
};

// gain token: GAIN, GAIN(BASELINE), GAIN/UNITS, GAIN(BASELINE)/UNITS
void parse_gain_token(const std::string& tok, SignalSpec& spec, double adc_zero) {
  std::string gain_part = tok;
  std::optional<double> baseline;
  const std::size_t paren = tok.find('(');
  const std::size_t slash = tok.find('/');
  std::size_t gain_end = std::min(paren, slash);
  if (gain_end == std::string::npos) gain_end = tok.size();
  gain_part = tok.substr(0, gain_end);
  if (paren != std::string::npos) {
    const std::size_t close = tok.find(')', paren);
    if (close == std::string::npos) throw ParseError("malformed gain field: " + tok);
    baseline = parse_double(tok.substr(paren + 1, close - paren - 1), "baseline");
  }
  const double gain = gain_part.empty() ? 0.0 : parse_double(gain_part, "gain");
  spec.gain = gain == 0.0 ? 200.0 : gain;
  spec.baseline = baseline.value_or(adc_zero);
}

// MIT annotation code -> display symbol; 0 where no symbol is defined.
constexpr std::array<char, 50> kAnnotationSymbols = [] {
  std::array<char, 50> t{};
  t[1] = 'N';
  t[2] = 'L';
  t[3] = 'R';
  t[4] = 'a';
  t[5] = 'V';
  t[6] = 'F';
  t[7] = 'J';
  t[8] = 'A';
  t[9] = 'S';
  t[10] = 'E';
  t[11] = 'j';
  t[12] = '/';
  t[13] = 'Q';
  t[14] = '~';
  t[16] = '|';
  t[18] = 's';
  t[19] = 'T';
  t[20] = '*';
  t[21] = 'D';
  t[22] = '"';
  t[23] = '=';
  t[24] = 'p';
  t[25] = 'B';
  t[26] = '^';
  t[27] = 't';
  t[28] = '+';
  t[29] = 'u';
  t[30] = '?';
  t[31] = '!';
  t[32] = '[';
  t[33] = ']';
  t[34] = 'e';
  t[35] = 'n';
  t[36] = '@';
  t[37] = 'x';
  t[38] = 'f';
  t[39] = '(';
  t[40] = ')';
  t[41] = 'r';
  return t;
}();

bool is_beat_code(unsigned code) {
  switch (code) {
    case 1: case 2: case 3: case 4: case 5: case 6: case 7: case 8: case 9:
    case 10: case 11: case 12: case 13: case 25: case 30: case 34: case 35:
    case 38: case 41:
      return true;
    default:
      return false;
  }
}

void parse_annotations(const std::filesystem::path& path, EcgRecord& record) {
  const std::vector<std::uint8_t> bytes = read_bytes(path);
  std::size_t pos = 0;
  std::int64_t time = 0;
  std::int64_t pending_skip = 0;

  while (pos + 2 <= bytes.size()) {
    const unsigned word = bytes[pos] | (static_cast<unsigned>(bytes[pos + 1]) << 8);
    pos += 2;
    const unsigned code = word >> 10;
    const unsigned delta = word & 0x3FF;

    if (code == 0) {
      if (delta != 0) throw ParseError("malformed end-of-annotation word");
      return;
    }
    if (code == 59) {  // long interval: high word first, then low word
      if (pos + 4 > bytes.size()) throw ParseError("truncated interval extension");
      const std::uint32_t hi = bytes[pos] | (static_cast<std::uint32_t>(bytes[pos + 1]) << 8);
      const std::uint32_t lo = bytes[pos + 2] | (static_cast<std::uint32_t>(bytes[pos + 3]) << 8);
      pos += 4;
      pending_skip += static_cast<std::int32_t>((hi << 16) | lo);
    } else if (code == 60 || code == 61 || code == 62) {
      // annotator-number / subtype / channel updates, nothing to keep
    } else if (code == 63) {
      const std::size_t count = (delta + 1u) & ~1u;
      if (pos + count > bytes.size()) throw ParseError("truncated aux field");
      pos += count;
    } else if (code <= 49) {
      time += pending_skip + delta;
      pending_skip = 0;
      if (is_beat_code(code)) {
        record.r_peaks.push_back(time);
        record.labels.push_back(kAnnotationSymbols[code]);
      }
    } else {
      throw ParseError("unsupported annotation code " + std::to_string(code));
    }
  }
  throw ParseError("annotation stream missing end marker");
}

std::optional<Eigen::VectorXd> cut_and_normalize(const EcgRecord& record,
                                                 std::int64_t lo, std::int64_t hi) {
  if (lo < 0 || hi >= record.samples.size() || hi - lo + 1 < 2)
    return std::nullopt;
  Eigen::VectorXd beat =
      resample_linear(record.samples.segment(lo, hi - lo + 1), kBeatLength);
  const double norm = beat.norm();
  if (norm < 1e-12) return std::nullopt;
  beat /= norm;
  return beat;
}

}  // namespace

void IngestReport::merge(const IngestReport& other) {
  records += other.records;
  beat_annotations += other.beat_annotations;
  beats_kept += other.beats_kept;
  skipped_boundary += other.skipped_boundary;
  skipped_unmapped += other.skipped_unmapped;
  skipped_degenerate += other.skipped_degenerate;
  for (const auto& [sym, count] : other.unmapped_symbols)
    unmapped_symbols[sym] += count;
}

EcgRecord parse_wfdb_record(const std::filesystem::path& header_path, int channel) {
  std::vector<std::string> lines;
  for (const std::string& raw : read_lines(header_path)) {
    if (raw.empty() || raw[0] == '#') continue;
    lines.push_back(raw);
  }
  if (lines.empty()) throw ParseError("empty header " + header_path.string());

  const std::vector<std::string> head = split_ws(lines[0]);
  if (head.size() < 2) throw ParseError("malformed record line in " + header_path.string());
  if (head[0].find('/') != std::string::npos)
    throw UnsupportedFormat("multi-segment records are not supported");
  const int n_signals = static_cast<int>(parse_int(head[1], "signal count"));
  if (n_signals < 1) throw ParseError("record declares no signals");
  if (channel < 0 || channel >= n_signals)
    throw std::invalid_argument("channel out of range");

  double fs = 250.0;
  if (head.size() >= 3) {
    std::string fs_tok = head[2];
    const std::size_t slash = fs_tok.find('/');
    if (slash != std::string::npos) fs_tok = fs_tok.substr(0, slash);
    fs = parse_double(fs_tok, "sampling rate");
  }
  if (fs <= 0.0) throw ParseError("sampling rate must be positive");
  long long n_samples = 0;
  if (head.size() >= 4) n_samples = parse_int(head[3], "sample count");

  if (static_cast<int>(lines.size()) < 1 + n_signals)
    throw ParseError("header lists fewer signal lines than declared");

  std::vector<SignalSpec> specs;
  for (int s = 0; s < n_signals; ++s) {
    const std::vector<std::string> tok = split_ws(lines[1 + static_cast<std::size_t>(s)]);
    if (tok.size() < 2) throw ParseError("malformed signal line in " + header_path.string());
    SignalSpec spec;
    spec.file = tok[0];
    spec.format = static_cast<int>(parse_int(tok[1], "signal format"));
    const double adc_zero = tok.size() >= 5 ? parse_double(tok[4], "adc zero") : 0.0;
    if (tok.size() >= 3)
      parse_gain_token(tok[2], spec, adc_zero);
    else
      spec.baseline = adc_zero;
    specs.push_back(spec);
  }

  for (const SignalSpec& spec : specs) {
    if (spec.format != 212)
      throw UnsupportedFormat("signal format " + std::to_string(spec.format) +
                              " is not supported");
    if (spec.file != specs[0].file)
      throw UnsupportedFormat("records spanning multiple signal files are not supported");
  }

  const std::filesystem::path dir = header_path.parent_path();
  const std::vector<std::uint8_t> data = read_bytes(dir / specs[0].file);

  if (n_samples == 0) {
    if (data.size() % 3 != 0)
      throw ParseError("cannot infer sample count from " + specs[0].file);
    n_samples = static_cast<long long>(data.size()) / 3 * 2 / n_signals;
  }
  const long long total = n_samples * n_signals;
  const long long expected_bytes = (total + 1) / 2 * 3;
  if (static_cast<long long>(data.size()) != expected_bytes)
    throw ParseError("signal file size does not match the declared sample count");

  EcgRecord record;
  record.patient_id = header_path.stem().string();
  record.sampling_rate = fs;
  record.samples.resize(n_samples);

  const SignalSpec& spec = specs[static_cast<std::size_t>(channel)];
  for (long long i = channel; i < total; i += n_signals) {
    const long long base = (i / 2) * 3;
    int raw;
    if (i % 2 == 0)
      raw = ((data[base + 1] & 0x0F) << 8) | data[base];
    else
      raw = ((data[base + 1] & 0xF0) << 4) | data[base + 2];
    if (raw & 0x800) raw -= 4096;
    record.samples(i / n_signals) = (raw - spec.baseline) / spec.gain;
  }

  parse_annotations(header_path.parent_path() /
                        (header_path.stem().string() + ".atr"),
                    record);

  std::int64_t prev = -1;
  for (const std::int64_t peak : record.r_peaks) {
    if (peak <= prev) throw ParseError("annotation times are not strictly increasing");
    if (peak < 0 || peak >= record.samples.size())
      throw ParseError("annotation outside the signal range");
    prev = peak;
  }
  return record;
}

EcgRecord parse_csv_record(const std::filesystem::path& csv_path) {
  EcgRecord record;
  record.patient_id = csv_path.stem().string();
  record.sampling_rate = 360.0;

  std::vector<double> samples;
  for (const std::string& line : read_lines(csv_path)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string key = "# sampling_rate=";
      if (line.rfind(key, 0) == 0)
        record.sampling_rate = parse_double(line.substr(key.size()), "sampling rate");
      continue;
    }
    samples.push_back(parse_double(line, "sample"));
  }
  if (samples.empty()) throw ParseError("no samples in " + csv_path.string());
  record.samples = Eigen::Map<Eigen::VectorXd>(samples.data(),
                                               static_cast<Eigen::Index>(samples.size()));

  const std::filesystem::path peaks_path =
      csv_path.parent_path() / (csv_path.stem().string() + ".peaks.csv");
  for (const std::string& line : read_lines(peaks_path)) {
    if (line.empty() || line[0] == '#') continue;
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos || comma + 2 != line.size())
      throw ParseError("malformed peak line: " + line);
    record.r_peaks.push_back(parse_int(line.substr(0, comma), "peak sample"));
    record.labels.push_back(line[comma + 1]);
  }

  std::int64_t prev = -1;
  for (const std::int64_t peak : record.r_peaks) {
    if (peak <= prev) throw ParseError("peak samples are not strictly increasing");
    if (peak < 0 || peak >= record.samples.size())
      throw ParseError("peak outside the signal range");
    prev = peak;
  }
  return record;
}

void write_csv_record(const EcgRecord& record, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  char buf[64];

  std::ofstream sig(dir / (record.patient_id + ".csv"));
  if (!sig) throw ParseError("cannot write signal csv for " + record.patient_id);
  std::snprintf(buf, sizeof buf, "# sampling_rate=%.17g\n", record.sampling_rate);
  sig << buf;
  for (Eigen::Index i = 0; i < record.samples.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g\n", record.samples(i));
    sig << buf;
  }

  std::ofstream peaks(dir / (record.patient_id + ".peaks.csv"));
  if (!peaks) throw ParseError("cannot write peaks csv for " + record.patient_id);
  peaks << "# peak_sample,symbol\n";
  for (std::size_t i = 0; i < record.r_peaks.size(); ++i)
    peaks << record.r_peaks[i] << ',' << record.labels[i] << '\n';
}

std::vector<EcgRecord> load_corpus(const std::filesystem::path& dir,
                                   CorpusFormat format, int channel,
                                   bool apply_exclusions, IngestReport* report) {
  if (!std::filesystem::is_directory(dir))
    throw ParseError("not a directory: " + dir.string());

  std::vector<std::filesystem::path> paths;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::filesystem::path& p = entry.path();
    if (format == CorpusFormat::Wfdb && p.extension() == ".hea") paths.push_back(p);
    if (format == CorpusFormat::Csv && p.extension() == ".csv" &&
        !p.stem().string().ends_with(".peaks"))
      paths.push_back(p);
  }
  std::sort(paths.begin(), paths.end());

  std::vector<EcgRecord> corpus;
  for (const std::filesystem::path& p : paths) {
    if (apply_exclusions && is_excluded(p.stem().string())) continue;
    corpus.push_back(format == CorpusFormat::Wfdb ? parse_wfdb_record(p, channel)
                                                  : parse_csv_record(p));
    if (report) ++report->records;
  }
  return corpus;
}

const std::set<std::string>& excluded_patients() {
  static const std::set<std::string> ids{"102", "104", "107", "217", "105",
                                         "114", "201", "202", "207", "209",
                                         "213", "222", "223", "234"};
  return ids;
}

bool is_excluded(const std::string& patient_id) {
  return excluded_patients().count(patient_id) > 0;
}

Eigen::VectorXd resample_linear(const Eigen::VectorXd& in, int target_len) {
  if (in.size() < 2) throw InvalidSegment("resampling needs at least two samples");
  if (target_len < 2) throw std::invalid_argument("target length must be at least 2");
  Eigen::VectorXd out(target_len);
  const double scale =
      static_cast<double>(in.size() - 1) / static_cast<double>(target_len - 1);
  for (int j = 0; j < target_len; ++j) {
    const double pos = j * scale;
    const Eigen::Index i0 = std::min<Eigen::Index>(
        static_cast<Eigen::Index>(pos), in.size() - 2);
    const double frac = pos - static_cast<double>(i0);
    out(j) = in(i0) * (1.0 - frac) + in(i0 + 1) * frac;
  }
  return out;
}

SampleWindow single_beat_window(std::int64_t left, std::int64_t center,
                                std::int64_t right) {
  SampleWindow w;
  w.lo = std::llround(left + 0.1 * static_cast<double>(center - left));
  w.hi = std::llround(right - 0.1 * static_cast<double>(right - center));
  return w;
}

SampleWindow beat_trio_window(std::int64_t left, std::int64_t center,
                              std::int64_t right, std::int64_t record_len) {
  SampleWindow w;
  w.lo = std::llround(left - 0.1 * static_cast<double>(center - left));
  w.hi = std::llround(right + 0.1 * static_cast<double>(right - center));
  w.lo = std::max<std::int64_t>(w.lo, 0);
  w.hi = std::min<std::int64_t>(w.hi, record_len - 1);
  return w;
}

std::optional<Beat> extract_single_beat(const EcgRecord& record,
                                        std::size_t peak_index,
                                        IngestReport* report) {
  IngestReport scratch;
  IngestReport& rep = report ? *report : scratch;
  if (peak_index == 0 || peak_index + 1 >= record.r_peaks.size()) {
    ++rep.skipped_boundary;
    return std::nullopt;
  }
  const char symbol = record.labels[peak_index];
  const std::optional<AamiClass> label = aami_from_symbol(symbol);
  if (!label) {
    ++rep.skipped_unmapped;
    ++rep.unmapped_symbols[symbol];
    return std::nullopt;
  }
  const SampleWindow w = single_beat_window(record.r_peaks[peak_index - 1],
                                            record.r_peaks[peak_index],
                                            record.r_peaks[peak_index + 1]);
  const std::optional<Eigen::VectorXd> values = cut_and_normalize(record, w.lo, w.hi);
  if (!values) {
    ++rep.skipped_degenerate;
    return std::nullopt;
  }
  Beat beat;
  beat.values = *values;
  beat.label = *label;
  beat.patient_id = record.patient_id;
  beat.origin_index = record.r_peaks[peak_index];
  return beat;
}

std::optional<Beat> extract_beat_trio(const EcgRecord& record,
                                      std::size_t peak_index,
                                      IngestReport* report) {
  IngestReport scratch;
  IngestReport& rep = report ? *report : scratch;
  if (peak_index == 0 || peak_index + 1 >= record.r_peaks.size()) {
    ++rep.skipped_boundary;
    return std::nullopt;
  }
  const char symbol = record.labels[peak_index];
  const std::optional<AamiClass> label = aami_from_symbol(symbol);
  if (!label) {
    ++rep.skipped_unmapped;
    ++rep.unmapped_symbols[symbol];
    return std::nullopt;
  }
  const SampleWindow w = beat_trio_window(record.r_peaks[peak_index - 1],
                                          record.r_peaks[peak_index],
                                          record.r_peaks[peak_index + 1],
                                          record.samples.size());
  const std::optional<Eigen::VectorXd> values = cut_and_normalize(record, w.lo, w.hi);
  if (!values) {
    ++rep.skipped_degenerate;
    return std::nullopt;
  }
  Beat beat;
  beat.values = *values;
  beat.label = *label;
  beat.patient_id = record.patient_id;
  beat.origin_index = record.r_peaks[peak_index];
  return beat;
}

PatientBeats extract_beat_pairs(const EcgRecord& record, IngestReport* report) {
  IngestReport scratch;
  IngestReport& rep = report ? *report : scratch;

  PatientBeats out;
  out.patient_id = record.patient_id;
  out.sampling_rate = record.sampling_rate;

  for (std::size_t i = 0; i < record.r_peaks.size(); ++i) {
    ++rep.beat_annotations;
    if (i == 0 || i + 1 >= record.r_peaks.size()) {
      ++rep.skipped_boundary;
      continue;
    }
    const char symbol = record.labels[i];
    const std::optional<AamiClass> label = aami_from_symbol(symbol);
    if (!label) {
      ++rep.skipped_unmapped;
      ++rep.unmapped_symbols[symbol];
      continue;
    }
    const SampleWindow sw = single_beat_window(record.r_peaks[i - 1],
                                               record.r_peaks[i],
                                               record.r_peaks[i + 1]);
    const SampleWindow tw = beat_trio_window(record.r_peaks[i - 1],
                                             record.r_peaks[i],
                                             record.r_peaks[i + 1],
                                             record.samples.size());
    const std::optional<Eigen::VectorXd> single =
        cut_and_normalize(record, sw.lo, sw.hi);
    const std::optional<Eigen::VectorXd> trio =
        cut_and_normalize(record, tw.lo, tw.hi);
    if (!single || !trio) {
      ++rep.skipped_degenerate;
      continue;
    }
    BeatPair pair;
    pair.single = *single;
    pair.trio = *trio;
    pair.label = *label;
    pair.origin_index = record.r_peaks[i];
    out.beats.push_back(std::move(pair));
    ++rep.beats_kept;
  }
  return out;
}

PatientSplit make_patient_split(const PatientBeats& beats, double train_minutes) {
  if (train_minutes <= 0.0)
    throw std::invalid_argument("training window must be positive");
  PatientSplit split;
  split.patient_id = beats.patient_id;
  split.sampling_rate = beats.sampling_rate;
  split.train_minutes = train_minutes;
  const double cut = train_minutes * 60.0 * beats.sampling_rate;
  for (const BeatPair& beat : beats.beats) {
    if (beat.label == AamiClass::N && static_cast<double>(beat.origin_index) < cut)
      split.train_normals.push_back(beat);
    else
      split.test_beats.push_back(beat);
  }
  if (split.train_normals.empty())
    throw EmptyTrainingSet("no normal beats inside the training window for " +
                           beats.patient_id);
  return split;
}

std::vector<EcgRecord> synth_corpus(std::uint64_t seed, int n_patients,
                                    int beats_per_patient, double abnormal_rate,
                                    const SynthOptions& opt) {
  if (n_patients < 1) throw std::invalid_argument("need at least one patient");
  if (beats_per_patient < 3) throw std::invalid_argument("need at least three beats");
  if (abnormal_rate < 0.0 || abnormal_rate > 1.0)
    throw std::invalid_argument("abnormal rate must be within [0, 1]");

  std::mt19937_64 master(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  // distortion bank shared by the whole cohort
  std::vector<Eigen::VectorXd> bank;
  for (int f = 0; f < opt.distortion_filters; ++f) {
    Eigen::VectorXd h = Eigen::VectorXd::Zero(opt.distortion_taps);
    h(0) = 1.0;
    for (int m = 1; m < opt.distortion_taps; ++m)
      h(m) = (uni(master) * 1.6 - 0.8) * std::exp(-0.06 * m);
    bank.push_back(h);
  }

  struct Component {
    double center, width, amp;
  };

  std::vector<EcgRecord> corpus;
  const double fs = opt.sampling_rate;

  for (int p = 0; p < n_patients; ++p) {
    std::mt19937_64 rng(master());
    auto draw = [&](double lo, double hi) {
      return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    };

    const std::vector<Component> shape{
        {draw(-0.26, -0.16), draw(0.030, 0.050), draw(0.08, 0.22)},   // P
        {draw(-0.050, -0.025), draw(0.008, 0.016), draw(-0.20, -0.06)},  // Q
        {0.0, draw(0.012, 0.024), draw(0.85, 1.25)},                  // R
        {draw(0.025, 0.050), draw(0.010, 0.020), draw(-0.35, -0.10)},  // S
        {draw(0.18, 0.30), draw(0.050, 0.080), draw(0.15, 0.45)},     // T
    };

    std::bernoulli_distribution is_abn(abnormal_rate);
    std::vector<bool> abnormal(static_cast<std::size_t>(beats_per_patient));
    for (int i = 0; i < beats_per_patient; ++i)
      abnormal[static_cast<std::size_t>(i)] =
          opt.distortion_filters > 0 && is_abn(rng);

    std::normal_distribution<double> rr_noise(0.0, 1.0);
    std::vector<double> rr(static_cast<std::size_t>(beats_per_patient));
    for (int i = 0; i < beats_per_patient; ++i) {
      double v = opt.mean_rr_seconds * (1.0 + opt.rr_jitter * rr_noise(rng));
      rr[static_cast<std::size_t>(i)] =
          std::clamp(v, 0.6 * opt.mean_rr_seconds, 1.4 * opt.mean_rr_seconds);
    }
    // ectopics arrive early and are followed by a compensatory pause
    for (int i = 0; i < beats_per_patient; ++i) {
      if (!abnormal[static_cast<std::size_t>(i)]) continue;
      if (i >= 1) rr[static_cast<std::size_t>(i - 1)] *= 0.72;
      rr[static_cast<std::size_t>(i)] *= 1.22;
    }

    std::vector<double> peak_time(static_cast<std::size_t>(beats_per_patient));
    double t = 0.5 * opt.mean_rr_seconds;
    for (int i = 0; i < beats_per_patient; ++i) {
      peak_time[static_cast<std::size_t>(i)] = t;
      t += rr[static_cast<std::size_t>(i)];
    }
    const std::int64_t len =
        static_cast<std::int64_t>(std::llround((t + 0.3) * fs));

    EcgRecord record;
    char id[16];
    std::snprintf(id, sizeof id, "p%02d", p + 1);
    record.patient_id = id;
    record.sampling_rate = fs;
    record.samples = Eigen::VectorXd::Zero(len);

    std::uniform_int_distribution<int> pick_filter(
        0, std::max(0, opt.distortion_filters - 1));

    for (int i = 0; i < beats_per_patient; ++i) {
      const std::int64_t center =
          std::llround(peak_time[static_cast<std::size_t>(i)] * fs);
      const std::int64_t lo = std::max<std::int64_t>(
          0, center - static_cast<std::int64_t>(std::llround(0.42 * fs)));
      const std::int64_t hi = std::min<std::int64_t>(
          len - 1, center + static_cast<std::int64_t>(std::llround(0.55 * fs)));

      Eigen::VectorXd bump = Eigen::VectorXd::Zero(hi - lo + 1);
      for (std::int64_t k = lo; k <= hi; ++k) {
        const double phase = static_cast<double>(k - center) / fs;
        double v = 0.0;
        for (const Component& c : shape) {
          const double d = (phase - c.center) / c.width;
          v += c.amp * std::exp(-0.5 * d * d);
        }
        bump(k - lo) = v;
      }

      if (abnormal[static_cast<std::size_t>(i)]) {
        const Eigen::VectorXd& h = bank[static_cast<std::size_t>(pick_filter(rng))];
        Eigen::VectorXd distorted = Eigen::VectorXd::Zero(bump.size());
        for (Eigen::Index tt = 0; tt < bump.size(); ++tt) {
          double acc = 0.0;
          for (Eigen::Index m = 0; m < h.size() && m <= tt; ++m)
            acc += h(m) * bump(tt - m);
          distorted(tt) = acc;
        }
        bump = distorted;
      }

      record.samples.segment(lo, hi - lo + 1) += bump;
      record.r_peaks.push_back(center);
      record.labels.push_back(abnormal[static_cast<std::size_t>(i)] ? 'V' : 'N');
    }

    if (opt.noise_level > 0.0) {
      std::normal_distribution<double> noise(0.0, opt.noise_level);
      for (Eigen::Index k = 0; k < record.samples.size(); ++k)
        record.samples(k) += noise(rng);
    }
    corpus.push_back(std::move(record));
  }
  return corpus;
}

void write_csv_corpus(const std::vector<EcgRecord>& corpus,
                      const std::filesystem::path& dir) {
  for (const EcgRecord& record : corpus) write_csv_record(record, dir);
}

}  // namespace zsecg::ingest
