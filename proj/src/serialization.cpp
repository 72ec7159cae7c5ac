#include "zsecg/serialization.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace zsecg::serialization {

namespace {

using nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data(m.data(), m.data() + m.size());  // column-major
  j["data"] = std::move(data);
  return j;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const Eigen::Index rows = j.at("rows").get<Eigen::Index>();
  const Eigen::Index cols = j.at("cols").get<Eigen::Index>();
  const std::vector<double> data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw ParseError("matrix payload does not match its declared shape");
  }
  Eigen::MatrixXd m(rows, cols);
  std::memcpy(m.data(), data.data(), data.size() * sizeof(double));
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vector_from_json(const json& j) {
  const std::vector<double> data = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
}

json load_tagged(const std::filesystem::path& path, const std::string& tag) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (j.value("format", "") != tag) throw ParseError(path.string() + ": not a " + tag + " file");
  if (j.value("version", 0) != 1) throw ParseError(path.string() + ": unsupported version");
  return j;
}

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

void save_dictionary(const sparse::Dictionary& dict, const std::filesystem::path& path) {
  json j;
  j["format"] = "zsecg-dictionary";
  j["version"] = 1;
  j["patient_id"] = dict.patient_id;
  j["atoms"] = matrix_to_json(dict.atoms);
  write_json(j, path);
}

sparse::Dictionary load_dictionary(const std::filesystem::path& path) {
  const json j = load_tagged(path, "zsecg-dictionary");
  sparse::Dictionary dict;
  dict.patient_id = j.at("patient_id").get<std::string>();
  dict.atoms = matrix_from_json(j.at("atoms"));
  return dict;
}

void save_transform(const adaptation::MorphTransform& transform,
                    const std::filesystem::path& path) {
  json j;
  j["format"] = "zsecg-transform";
  j["version"] = 1;
  j["source_id"] = transform.source_id;
  j["target_id"] = transform.target_id;
  j["gamma"] = transform.gamma;
  j["eta"] = transform.eta;
  j["epochs"] = transform.epochs;
  j["matrix"] = matrix_to_json(transform.matrix);
  write_json(j, path);
}

adaptation::MorphTransform load_transform(const std::filesystem::path& path) {
  const json j = load_tagged(path, "zsecg-transform");
  adaptation::MorphTransform transform;
  transform.source_id = j.at("source_id").get<std::string>();
  transform.target_id = j.at("target_id").get<std::string>();
  transform.gamma = j.at("gamma").get<double>();
  transform.eta = j.at("eta").get<double>();
  transform.epochs = j.at("epochs").get<int>();
  transform.matrix = matrix_from_json(j.at("matrix"));
  if (transform.matrix.rows() != transform.matrix.cols()) {
    throw ParseError(path.string() + ": transform matrix must be square");
  }
  return transform;
}

void save_abs_library(const adaptation::AbsLibrary& library,
                      const std::filesystem::path& path) {
  json j;
  j["format"] = "zsecg-abs-library";
  j["version"] = 1;
  j["filter_len"] = library.filter_len;
  j["ridge"] = library.ridge;
  j["prune_threshold"] = library.prune_threshold;
  j["filters"] = json::array();
  for (const adaptation::AbsFilter& filter : library.filters) {
    j["filters"].push_back({
        {"taps", vector_to_json(filter.taps)},
        {"source_id", filter.source_id},
        {"source_origin", filter.source_origin},
        {"source_class", static_cast<int>(filter.source_class)},
    });
  }
  write_json(j, path);
}

adaptation::AbsLibrary load_abs_library(const std::filesystem::path& path) {
  const json j = load_tagged(path, "zsecg-abs-library");
  adaptation::AbsLibrary library;
  library.filter_len = j.at("filter_len").get<int>();
  library.ridge = j.at("ridge").get<double>();
  library.prune_threshold = j.at("prune_threshold").get<double>();
  for (const json& entry : j.at("filters")) {
    adaptation::AbsFilter filter;
    filter.taps = vector_from_json(entry.at("taps"));
    filter.source_id = entry.at("source_id").get<std::string>();
    filter.source_origin = entry.at("source_origin").get<std::int64_t>();
    const int klass = entry.at("source_class").get<int>();
    if (klass < 0 || klass > 4) throw ParseError(path.string() + ": bad beat class");
    filter.source_class = static_cast<AamiClass>(klass);
    library.filters.push_back(std::move(filter));
  }
  return library;
}

namespace {

json conv_to_json(const cnn::ConvLayer& layer) {
  return {
      {"in_channels", layer.in_channels},
      {"out_channels", layer.out_channels},
      {"kernel", layer.kernel},
      {"weight", matrix_to_json(layer.weight)},
      {"bias", vector_to_json(layer.bias)},
  };
}

cnn::ConvLayer conv_from_json(const json& j) {
  cnn::ConvLayer layer;
  layer.in_channels = j.at("in_channels").get<int>();
  layer.out_channels = j.at("out_channels").get<int>();
  layer.kernel = j.at("kernel").get<int>();
  layer.weight = matrix_from_json(j.at("weight"));
  layer.bias = vector_from_json(j.at("bias"));
  if (layer.weight.rows() != layer.out_channels ||
      layer.weight.cols() != static_cast<Eigen::Index>(layer.in_channels) * layer.kernel ||
      layer.bias.size() != layer.out_channels) {
    throw ParseError("convolution layer shape mismatch");
  }
  return layer;
}

json dense_to_json(const cnn::DenseLayer& layer) {
  return {{"weight", matrix_to_json(layer.weight)}, {"bias", vector_to_json(layer.bias)}};
}

cnn::DenseLayer dense_from_json(const json& j) {
  cnn::DenseLayer layer;
  layer.weight = matrix_from_json(j.at("weight"));
  layer.bias = vector_from_json(j.at("bias"));
  if (layer.bias.size() != layer.weight.rows()) throw ParseError("dense layer shape mismatch");
  return layer;
}

}  // namespace

void save_cnn(const cnn::CnnModel& model, const std::filesystem::path& path) {
  json j;
  j["format"] = "zsecg-cnn";
  j["version"] = 1;
  j["conv1"] = conv_to_json(model.conv1);
  j["conv2"] = conv_to_json(model.conv2);
  j["conv3"] = conv_to_json(model.conv3);
  j["fc1"] = dense_to_json(model.fc1);
  j["fc2"] = dense_to_json(model.fc2);
  write_json(j, path);
}

cnn::CnnModel load_cnn(const std::filesystem::path& path) {
  const json j = load_tagged(path, "zsecg-cnn");
  cnn::CnnModel model;
  model.conv1 = conv_from_json(j.at("conv1"));
  model.conv2 = conv_from_json(j.at("conv2"));
  model.conv3 = conv_from_json(j.at("conv3"));
  model.fc1 = dense_from_json(j.at("fc1"));
  model.fc2 = dense_from_json(j.at("fc2"));
  return model;
}

namespace {

// Fixed-width little-endian records; the host is little-endian x86 here.

void write_bytes(std::ofstream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

template <typename T>
void write_pod(std::ofstream& out, T value) {
  write_bytes(out, &value, sizeof(T));
}

void write_string(std::ofstream& out, const std::string& s) {
  if (s.size() > 0xFFFF) throw std::invalid_argument("identifier too long");
  write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  write_bytes(out, s.data(), s.size());
}

void write_vector(std::ofstream& out, const Eigen::VectorXd& v) {
  write_bytes(out, v.data(), static_cast<std::size_t>(v.size()) * sizeof(double));
}

struct BinReader {
  std::ifstream in;
  std::string path;

  void read_bytes(void* data, std::size_t n) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) throw ParseError(path + ": truncated file");
  }

  template <typename T>
  T read_pod() {
    T value;
    read_bytes(&value, sizeof(T));
    return value;
  }

  std::string read_string() {
    const std::uint16_t len = read_pod<std::uint16_t>();
    std::string s(len, '\0');
    read_bytes(s.data(), len);
    return s;
  }

  Eigen::VectorXd read_beat_vector() {
    Eigen::VectorXd v(kBeatLength);
    read_bytes(v.data(), static_cast<std::size_t>(kBeatLength) * sizeof(double));
    return v;
  }
};

BinReader open_bin(const std::filesystem::path& path, const char* magic) {
  BinReader reader;
  reader.path = path.string();
  reader.in.open(path, std::ios::binary);
  if (!reader.in) throw ParseError(reader.path + ": cannot open");
  char header[8];
  reader.read_bytes(header, 8);
  if (std::memcmp(header, magic, 8) != 0) throw ParseError(reader.path + ": bad magic");
  return reader;
}

std::ofstream open_bin_out(const std::filesystem::path& path, const char* magic) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(magic, 8);
  return out;
}

AamiClass aami_from_byte(std::uint8_t byte, const std::string& path) {
  if (byte > 4) throw ParseError(path + ": bad beat class");
  return static_cast<AamiClass>(byte);
}

void check_beat_length(const Eigen::VectorXd& single, const Eigen::VectorXd& trio) {
  if (single.size() != kBeatLength || trio.size() != kBeatLength) {
    throw std::invalid_argument("beat windows must have length 128");
  }
}

}  // namespace

void save_beats(const std::vector<PatientBeats>& patients, const std::filesystem::path& path) {
  std::ofstream out = open_bin_out(path, "ZSECGB1\n");
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(patients.size()));
  for (const PatientBeats& patient : patients) {
    write_string(out, patient.patient_id);
    write_pod<double>(out, patient.sampling_rate);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(patient.beats.size()));
    for (const BeatPair& beat : patient.beats) {
      check_beat_length(beat.single, beat.trio);
      write_pod<std::int64_t>(out, beat.origin_index);
      write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(beat.label));
      write_vector(out, beat.single);
      write_vector(out, beat.trio);
    }
  }
  if (!out) throw std::runtime_error("short write to " + path.string());
}

std::vector<PatientBeats> load_beats(const std::filesystem::path& path) {
  BinReader reader = open_bin(path, "ZSECGB1\n");
  const std::uint32_t n_patients = reader.read_pod<std::uint32_t>();
  std::vector<PatientBeats> patients;
  patients.reserve(n_patients);
  for (std::uint32_t p = 0; p < n_patients; ++p) {
    PatientBeats patient;
    patient.patient_id = reader.read_string();
    patient.sampling_rate = reader.read_pod<double>();
    const std::uint32_t n_beats = reader.read_pod<std::uint32_t>();
    patient.beats.reserve(n_beats);
    for (std::uint32_t b = 0; b < n_beats; ++b) {
      BeatPair beat;
      beat.origin_index = reader.read_pod<std::int64_t>();
      beat.label = aami_from_byte(reader.read_pod<std::uint8_t>(), reader.path);
      beat.single = reader.read_beat_vector();
      beat.trio = reader.read_beat_vector();
      patient.beats.push_back(std::move(beat));
    }
    patients.push_back(std::move(patient));
  }
  return patients;
}

void save_dataset(const std::vector<pipeline::DatasetItem>& items,
                  const std::filesystem::path& path) {
  std::ofstream out = open_bin_out(path, "ZSECGD1\n");
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(items.size()));
  for (const pipeline::DatasetItem& item : items) {
    check_beat_length(item.single, item.trio);
    write_string(out, item.source_id);
    write_pod<std::int64_t>(out, item.origin_index);
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(item.aami));
    write_pod<std::uint8_t>(out, item.abnormal ? 1 : 0);
    write_vector(out, item.single);
    write_vector(out, item.trio);
  }
  if (!out) throw std::runtime_error("short write to " + path.string());
}

std::vector<pipeline::DatasetItem> load_dataset(const std::filesystem::path& path) {
  BinReader reader = open_bin(path, "ZSECGD1\n");
  const std::uint32_t n_items = reader.read_pod<std::uint32_t>();
  std::vector<pipeline::DatasetItem> items;
  items.reserve(n_items);
  for (std::uint32_t i = 0; i < n_items; ++i) {
    pipeline::DatasetItem item;
    item.source_id = reader.read_string();
    item.origin_index = reader.read_pod<std::int64_t>();
    item.aami = aami_from_byte(reader.read_pod<std::uint8_t>(), reader.path);
    const std::uint8_t abnormal = reader.read_pod<std::uint8_t>();
    if (abnormal > 1) throw ParseError(reader.path + ": bad abnormal flag");
    item.abnormal = abnormal == 1;
    item.single = reader.read_beat_vector();
    item.trio = reader.read_beat_vector();
    items.push_back(std::move(item));
  }
  return items;
}

std::size_t CsvTable::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return i;
  }
  throw std::out_of_range("no column named " + name);
}

const std::string& CsvTable::cell(std::size_t row, const std::string& column) const {
  return rows.at(row).at(column_index(column));
}

double CsvTable::number(std::size_t row, const std::string& column) const {
  return std::stod(cell(row, column));
}

CsvTable read_csv_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  CsvTable table;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream stream(line);
    std::string cell;
    while (std::getline(stream, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (!have_header) {
      table.columns = std::move(cells);
      have_header = true;
    } else {
      if (cells.size() != table.columns.size()) {
        throw ParseError(path.string() + ": ragged row");
      }
      table.rows.push_back(std::move(cells));
    }
  }
  if (!have_header) throw ParseError(path.string() + ": missing header");
  return table;
}

}  // namespace zsecg::serialization
