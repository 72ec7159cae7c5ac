#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "zsecg/ingest.hpp"
#include "zsecg/sparse.hpp"

using namespace zsecg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path = fs::temp_directory_path() /
           ("zsecg_test_" + std::to_string(rng()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

void write_file(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

// pack a flat 12-bit sample stream into format-212 triplets
std::vector<std::uint8_t> encode_212(const std::vector<int>& samples) {
  std::vector<std::uint8_t> bytes;
  for (std::size_t i = 0; i < samples.size(); i += 2) {
    const unsigned s1 = static_cast<unsigned>(samples[i]) & 0xFFF;
    const unsigned s2 =
        i + 1 < samples.size() ? static_cast<unsigned>(samples[i + 1]) & 0xFFF : 0;
    bytes.push_back(static_cast<std::uint8_t>(s1 & 0xFF));
    bytes.push_back(static_cast<std::uint8_t>(((s1 >> 8) & 0x0F) |
                                              (((s2 >> 8) & 0x0F) << 4)));
    bytes.push_back(static_cast<std::uint8_t>(s2 & 0xFF));
  }
  return bytes;
}

void append_word(std::vector<std::uint8_t>& bytes, unsigned code, unsigned delta) {
  const unsigned word = (code << 10) | (delta & 0x3FF);
  bytes.push_back(static_cast<std::uint8_t>(word & 0xFF));
  bytes.push_back(static_cast<std::uint8_t>(word >> 8));
}

}  // namespace

TEST_CASE("aami mapping covers the documented beat symbols") {
  for (char c : {'N', 'L', 'R', 'e', 'j'})
    CHECK(aami_from_symbol(c) == AamiClass::N);
  for (char c : {'V', 'E'}) CHECK(aami_from_symbol(c) == AamiClass::V);
  for (char c : {'A', 'a', 'J', 'S'}) CHECK(aami_from_symbol(c) == AamiClass::S);
  CHECK(aami_from_symbol('F') == AamiClass::F);
  for (char c : {'/', 'f', 'Q'}) CHECK(aami_from_symbol(c) == AamiClass::Q);
  for (char c : {'~', '+', '?', '|', 'x', 'n', 'B', 'r', '!'})
    CHECK_FALSE(aami_from_symbol(c).has_value());
  CHECK(is_abnormal(AamiClass::V));
  CHECK(is_abnormal(AamiClass::Q));
  CHECK_FALSE(is_abnormal(AamiClass::N));
}

TEST_CASE("packed two-channel signals decode with per-channel gain and baseline") {
  TempDir tmp;
  write_file(tmp.path / "t01.hea",
             "t01 2 360 4\n"
             "t01.dat 212 100(50)/mV 11 0 0 0 0 ch0\n"
             "t01.dat 212 200 11 512 0 0 0 ch1\n");
  // interleaved frames: (ch0, ch1) x 4
  write_file(tmp.path / "t01.dat",
             encode_212({10, 0, -5, 2047, 1000, -1, -2048, 7}));
  std::vector<std::uint8_t> atr;
  append_word(atr, 1, 1);  // normal beat at sample 1
  append_word(atr, 5, 2);  // premature ventricular beat at sample 3
  append_word(atr, 0, 0);
  write_file(tmp.path / "t01.atr", atr);

  const EcgRecord ch0 = ingest::parse_wfdb_record(tmp.path / "t01.hea", 0);
  CHECK(ch0.patient_id == "t01");
  CHECK(ch0.sampling_rate == 360.0);
  REQUIRE(ch0.samples.size() == 4);
  CHECK(ch0.samples(0) == doctest::Approx(-0.40));
  CHECK(ch0.samples(1) == doctest::Approx(-0.55));
  CHECK(ch0.samples(2) == doctest::Approx(9.50));
  CHECK(ch0.samples(3) == doctest::Approx(-20.98));
  REQUIRE(ch0.r_peaks.size() == 2);
  CHECK(ch0.r_peaks[0] == 1);
  CHECK(ch0.r_peaks[1] == 3);
  CHECK(ch0.labels[0] == 'N');
  CHECK(ch0.labels[1] == 'V');

  const EcgRecord ch1 = ingest::parse_wfdb_record(tmp.path / "t01.hea", 1);
  CHECK(ch1.samples(0) == doctest::Approx(-2.560));
  CHECK(ch1.samples(1) == doctest::Approx(7.675));
  CHECK(ch1.samples(2) == doctest::Approx(-2.565));
  CHECK(ch1.samples(3) == doctest::Approx(-2.525));
}

TEST_CASE("annotation stream handles interval extensions aux fields and non-beats") {
  TempDir tmp;
  const int n = 2000;
  std::vector<int> flat(n, 100);
  write_file(tmp.path / "t02.hea",
             "t02 1 360 2000\n"
             "t02.dat 212 200 11 100 0 0 0 only\n");
  write_file(tmp.path / "t02.dat", encode_212(flat));

  std::vector<std::uint8_t> atr;
  append_word(atr, 1, 10);   // beat at 10
  append_word(atr, 28, 5);   // rhythm change advances time to 15
  append_word(atr, 63, 3);   // aux: 3 declared bytes, padded to 4
  atr.insert(atr.end(), {'a', 'b', 'c', 0});
  append_word(atr, 59, 0);   // long interval: +1000 (high word first)
  atr.push_back(0x00);
  atr.push_back(0x00);
  atr.push_back(0xE8);
  atr.push_back(0x03);
  append_word(atr, 5, 5);    // beat at 15 + 1000 + 5 = 1020
  append_word(atr, 61, 1);   // subtype update, no time change
  append_word(atr, 2, 30);   // beat at 1050
  append_word(atr, 0, 0);
  write_file(tmp.path / "t02.atr", atr);

  const EcgRecord rec = ingest::parse_wfdb_record(tmp.path / "t02.hea", 0);
  REQUIRE(rec.r_peaks.size() == 3);
  CHECK(rec.r_peaks[0] == 10);
  CHECK(rec.r_peaks[1] == 1020);
  CHECK(rec.r_peaks[2] == 1050);
  CHECK(rec.labels[0] == 'N');
  CHECK(rec.labels[1] == 'V');
  CHECK(rec.labels[2] == 'L');
  CHECK(rec.samples(0) == doctest::Approx(0.0));  // (100-100)/200
}

TEST_CASE("malformed records are rejected") {
  TempDir tmp;
  write_file(tmp.path / "bad.hea",
             "bad 1 360 100\n"
             "bad.dat 212 200 11 0 0 0 0 only\n");
  write_file(tmp.path / "bad.dat", encode_212(std::vector<int>(42, 0)));
  std::vector<std::uint8_t> atr;
  append_word(atr, 0, 0);
  write_file(tmp.path / "bad.atr", atr);
  // 42 samples encoded but 100 declared
  CHECK_THROWS_AS(ingest::parse_wfdb_record(tmp.path / "bad.hea", 0), ParseError);

  write_file(tmp.path / "fmt.hea",
             "fmt 1 360 4\n"
             "fmt.dat 16 200 11 0 0 0 0 only\n");
  write_file(tmp.path / "fmt.dat", encode_212({0, 0, 0, 0}));
  write_file(tmp.path / "fmt.atr", atr);
  CHECK_THROWS_AS(ingest::parse_wfdb_record(tmp.path / "fmt.hea", 0),
                  UnsupportedFormat);

  write_file(tmp.path / "ch.hea",
             "ch 1 360 4\n"
             "ch.dat 212 200 11 0 0 0 0 only\n");
  write_file(tmp.path / "ch.dat", encode_212({0, 0, 0, 0}));
  write_file(tmp.path / "ch.atr", atr);
  CHECK_THROWS_AS(ingest::parse_wfdb_record(tmp.path / "ch.hea", 2),
                  std::invalid_argument);

  CHECK_THROWS_AS(ingest::parse_wfdb_record(tmp.path / "missing.hea", 0),
                  ParseError);

  // annotation beyond the declared signal range
  write_file(tmp.path / "far.hea",
             "far 1 360 4\n"
             "far.dat 212 200 11 0 0 0 0 only\n");
  write_file(tmp.path / "far.dat", encode_212({0, 0, 0, 0}));
  std::vector<std::uint8_t> far_atr;
  append_word(far_atr, 1, 9);
  append_word(far_atr, 0, 0);
  write_file(tmp.path / "far.atr", far_atr);
  CHECK_THROWS_AS(ingest::parse_wfdb_record(tmp.path / "far.hea", 0), ParseError);
}

TEST_CASE("linear resampling keeps endpoints and interior lattice points") {
  Eigen::VectorXd ramp(10);
  for (int i = 0; i < 10; ++i) ramp(i) = i;
  const Eigen::VectorXd out = ingest::resample_linear(ramp, 4);
  REQUIRE(out.size() == 4);
  CHECK(out(0) == doctest::Approx(0.0));
  CHECK(out(1) == doctest::Approx(3.0));
  CHECK(out(2) == doctest::Approx(6.0));
  CHECK(out(3) == doctest::Approx(9.0));

  const Eigen::VectorXd wide = ingest::resample_linear(ramp, 128);
  REQUIRE(wide.size() == 128);
  CHECK(wide(0) == doctest::Approx(0.0));
  CHECK(wide(127) == doctest::Approx(9.0));
  for (int j = 0; j < 128; ++j)
    CHECK(wide(j) == doctest::Approx(9.0 * j / 127.0));

  Eigen::VectorXd tiny(1);
  tiny << 1.0;
  CHECK_THROWS_AS(ingest::resample_linear(tiny, 4), InvalidSegment);
  CHECK_THROWS_AS(ingest::resample_linear(ramp, 1), std::invalid_argument);
}

TEST_CASE("beat windows trim inward and trios reach outward with clamping") {
  const ingest::SampleWindow s1 = ingest::single_beat_window(0, 10, 20);
  CHECK(s1.lo == 1);
  CHECK(s1.hi == 19);
  const ingest::SampleWindow s2 = ingest::single_beat_window(100, 300, 500);
  CHECK(s2.lo == 120);
  CHECK(s2.hi == 480);

  const ingest::SampleWindow t1 = ingest::beat_trio_window(100, 300, 500, 1000);
  CHECK(t1.lo == 80);
  CHECK(t1.hi == 520);
  const ingest::SampleWindow t2 = ingest::beat_trio_window(5, 300, 500, 400);
  CHECK(t2.lo == 0);
  CHECK(t2.hi == 399);
}

TEST_CASE("beat extraction skips boundaries and unmapped symbols with counts") {
  EcgRecord rec;
  rec.patient_id = "t03";
  rec.sampling_rate = 360.0;
  rec.samples = Eigen::VectorXd::LinSpaced(1200, 0.0, 1.0);
  for (Eigen::Index i = 0; i < rec.samples.size(); ++i)
    rec.samples(i) += 0.2 * std::sin(0.05 * static_cast<double>(i));
  rec.r_peaks = {100, 300, 500, 700, 900};
  rec.labels = {'N', 'V', '~', 'N', 'N'};

  ingest::IngestReport report;
  const PatientBeats beats = ingest::extract_beat_pairs(rec, &report);
  CHECK(report.beat_annotations == 5);
  CHECK(report.beats_kept == 2);
  CHECK(report.skipped_boundary == 2);
  CHECK(report.skipped_unmapped == 1);
  CHECK(report.unmapped_symbols.at('~') == 1);
  REQUIRE(beats.beats.size() == 2);
  CHECK(beats.beats[0].label == AamiClass::V);
  CHECK(beats.beats[0].origin_index == 300);
  CHECK(beats.beats[1].label == AamiClass::N);
  CHECK(beats.beats[1].origin_index == 700);
  for (const BeatPair& b : beats.beats) {
    REQUIRE(b.single.size() == kBeatLength);
    REQUIRE(b.trio.size() == kBeatLength);
    CHECK(b.single.norm() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(b.trio.norm() == doctest::Approx(1.0).epsilon(1e-9));
  }

  const std::optional<Beat> first = ingest::extract_single_beat(rec, 0);
  CHECK_FALSE(first.has_value());
  const std::optional<Beat> mid = ingest::extract_beat_trio(rec, 1);
  REQUIRE(mid.has_value());
  CHECK(mid->label == AamiClass::V);
}

TEST_CASE("patient split keeps early normals for training and the rest for test") {
  PatientBeats beats;
  beats.patient_id = "t04";
  beats.sampling_rate = 360.0;
  const auto add = [&](std::int64_t origin, AamiClass label) {
    BeatPair b;
    b.single = Eigen::VectorXd::Constant(kBeatLength, 1.0 / std::sqrt(128.0));
    b.trio = b.single;
    b.label = label;
    b.origin_index = origin;
    beats.beats.push_back(b);
  };
  // half-minute window at 360 Hz ends at sample 10800
  add(5000, AamiClass::N);
  add(9000, AamiClass::V);
  add(10799, AamiClass::N);
  add(10800, AamiClass::N);
  add(20000, AamiClass::S);
  add(30000, AamiClass::N);

  const PatientSplit split = ingest::make_patient_split(beats, 0.5);
  CHECK(split.train_normals.size() == 2);
  CHECK(split.test_beats.size() == 4);
  CHECK(split.train_normals[0].origin_index == 5000);
  CHECK(split.train_normals[1].origin_index == 10799);
  CHECK(split.test_beats[0].origin_index == 9000);

  PatientBeats no_normals;
  no_normals.patient_id = "t05";
  no_normals.sampling_rate = 360.0;
  no_normals.beats = beats.beats;
  for (BeatPair& b : no_normals.beats) b.label = AamiClass::V;
  CHECK_THROWS_AS(ingest::make_patient_split(no_normals, 0.5), EmptyTrainingSet);
}

TEST_CASE("the exclusion list pins the documented record ids") {
  const std::set<std::string>& ids = ingest::excluded_patients();
  CHECK(ids.size() == 14);
  for (const char* id : {"102", "104", "107", "217", "105", "114", "201",
                         "202", "207", "209", "213", "222", "223", "234"})
    CHECK(ids.count(id) == 1);
  CHECK(ingest::is_excluded("102"));
  CHECK_FALSE(ingest::is_excluded("100"));
  CHECK_FALSE(ingest::is_excluded("p01"));
}

TEST_CASE("synthetic corpus is reproducible and honors the abnormal rate") {
  const std::vector<EcgRecord> a = ingest::synth_corpus(42, 2, 60, 0.25);
  const std::vector<EcgRecord> b = ingest::synth_corpus(42, 2, 60, 0.25);
  REQUIRE(a.size() == 2);
  REQUIRE(b.size() == 2);
  for (std::size_t p = 0; p < a.size(); ++p) {
    CHECK(a[p].patient_id == b[p].patient_id);
    CHECK(a[p].samples == b[p].samples);
    CHECK(a[p].r_peaks == b[p].r_peaks);
    CHECK(a[p].labels == b[p].labels);
  }

  const std::vector<EcgRecord> c = ingest::synth_corpus(43, 2, 60, 0.25);
  CHECK(a[0].samples != c[0].samples);

  const std::vector<EcgRecord> big = ingest::synth_corpus(7, 1, 1000, 0.2);
  int abnormal = 0;
  for (char sym : big[0].labels)
    if (sym == 'V') ++abnormal;
  // 99% binomial interval around 200 of 1000
  CHECK(abnormal >= 167);
  CHECK(abnormal <= 233);

  CHECK_THROWS_AS(ingest::synth_corpus(1, 1, 100, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(ingest::synth_corpus(1, 1, 100, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(ingest::synth_corpus(1, 0, 100, 0.2), std::invalid_argument);
}

TEST_CASE("csv corpus round trip preserves beats") {
  TempDir tmp;
  const std::vector<EcgRecord> corpus = ingest::synth_corpus(11, 2, 40, 0.3);
  ingest::write_csv_corpus(corpus, tmp.path);

  ingest::IngestReport report;
  const std::vector<EcgRecord> loaded =
      ingest::load_corpus(tmp.path, ingest::CorpusFormat::Csv, 0, false, &report);
  REQUIRE(loaded.size() == 2);
  CHECK(report.records == 2);

  for (std::size_t p = 0; p < corpus.size(); ++p) {
    CHECK(loaded[p].patient_id == corpus[p].patient_id);
    CHECK(loaded[p].sampling_rate == corpus[p].sampling_rate);
    REQUIRE(loaded[p].samples.size() == corpus[p].samples.size());
    CHECK((loaded[p].samples - corpus[p].samples).cwiseAbs().maxCoeff() == 0.0);
    CHECK(loaded[p].r_peaks == corpus[p].r_peaks);
    CHECK(loaded[p].labels == corpus[p].labels);

    const PatientBeats original = ingest::extract_beat_pairs(corpus[p]);
    const PatientBeats reread = ingest::extract_beat_pairs(loaded[p]);
    REQUIRE(original.beats.size() == reread.beats.size());
    for (std::size_t i = 0; i < original.beats.size(); ++i) {
      CHECK((original.beats[i].single - reread.beats[i].single)
                .cwiseAbs()
                .maxCoeff() <= 1e-12);
      CHECK(original.beats[i].label == reread.beats[i].label);
    }
  }
}

TEST_CASE("synthetic abnormal beats are separable by a learned dictionary") {
  const std::vector<EcgRecord> corpus = ingest::synth_corpus(21, 1, 300, 0.3);
  const PatientBeats beats = ingest::extract_beat_pairs(corpus[0]);
  const PatientSplit split = ingest::make_patient_split(beats, 1.5);
  REQUIRE(split.train_normals.size() >= 40);

  Eigen::MatrixXd train(kBeatLength,
                        static_cast<Eigen::Index>(split.train_normals.size()));
  for (std::size_t i = 0; i < split.train_normals.size(); ++i)
    train.col(static_cast<Eigen::Index>(i)) = split.train_normals[i].single;

  const sparse::Dictionary dict = sparse::learn_dictionary(train, 20).dictionary;
  const sparse::Annihilator ann = sparse::build_annihilator(dict);

  std::vector<double> scores;
  std::vector<int> labels;
  for (const BeatPair& b : split.test_beats) {
    scores.push_back(sparse::residual_npe(ann, b.single).energy);
    labels.push_back(is_abnormal(b.label) ? 1 : 0);
  }
  CHECK(sparse::auc(scores, labels) >= 0.9);
}
