#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "zsecg/adaptation.hpp"
#include "zsecg/cnn.hpp"
#include "zsecg/pipeline.hpp"
#include "zsecg/sparse.hpp"
#include "zsecg/types.hpp"

namespace zsecg::serialization {

// JSON model files carry a format tag and version and restore bit-exact
// doubles. Loaders throw ParseError on tag, version or shape mismatches.

void save_dictionary(const sparse::Dictionary& dict, const std::filesystem::path& path);
sparse::Dictionary load_dictionary(const std::filesystem::path& path);

void save_transform(const adaptation::MorphTransform& transform,
                    const std::filesystem::path& path);
adaptation::MorphTransform load_transform(const std::filesystem::path& path);

void save_abs_library(const adaptation::AbsLibrary& library, const std::filesystem::path& path);
adaptation::AbsLibrary load_abs_library(const std::filesystem::path& path);

void save_cnn(const cnn::CnnModel& model, const std::filesystem::path& path);
cnn::CnnModel load_cnn(const std::filesystem::path& path);

// Little-endian binary beat store, magic "ZSECGB1\n".
void save_beats(const std::vector<PatientBeats>& patients, const std::filesystem::path& path);
std::vector<PatientBeats> load_beats(const std::filesystem::path& path);

// Little-endian binary training set, magic "ZSECGD1\n".
void save_dataset(const std::vector<pipeline::DatasetItem>& items,
                  const std::filesystem::path& path);
std::vector<pipeline::DatasetItem> load_dataset(const std::filesystem::path& path);

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::size_t column_index(const std::string& name) const;  // throws on unknown name
  const std::string& cell(std::size_t row, const std::string& column) const;
  double number(std::size_t row, const std::string& column) const;
};

// Comma-separated with a header line; lines starting with '#' are skipped.
CsvTable read_csv_table(const std::filesystem::path& path);

}  // namespace zsecg::serialization
