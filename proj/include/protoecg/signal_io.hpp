#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "protoecg/taxonomy.hpp"

namespace protoecg {

inline constexpr int kLeads = 12;
inline constexpr int kSamples = 1000;
inline constexpr double kSampleRateHz = 100.0;
inline constexpr double kRecordSeconds = kSamples / kSampleRateHz;

// Lead-major signal storage (row = lead), millivolts.
using SignalMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct EcgRecord {
  std::string id;
  SignalMatrix signal;
  // Multi-hot labels. Length 71 for full-taxonomy records, the branch size after branch_view.
  std::vector<std::uint8_t> labels;
  int fold = 1;

  // Checks shape, fold range and label length; throws ShapeError / ValidationError.
  void validate(int expected_labels = LabelTaxonomy::kNumCodes) const;
  int positive_count() const;
};

// Folds 1-8 train, 9 validation, 10 test.
struct DatasetSplit {
  std::vector<EcgRecord> train;
  std::vector<EcgRecord> val;
  std::vector<EcgRecord> test;

  std::size_t size() const { return train.size() + val.size() + test.size(); }
  const std::vector<EcgRecord>& part(std::string_view name) const;
};

enum class SplitPart { Train, Val, Test };
SplitPart split_part_for_fold(int fold);

// Reads one record payload: 12*1000 little-endian float32, lead-major.
SignalMatrix read_signal(const std::filesystem::path& path);
void write_signal(const std::filesystem::path& path, const SignalMatrix& signal);

// Manifest CSV columns: id,fold,codes with codes separated by ';'. Signal files live at
// <signal_dir>/<id>.f32.
DatasetSplit load_dataset(const std::filesystem::path& manifest_path,
                          const std::filesystem::path& signal_dir);
void save_dataset(const DatasetSplit& split, const std::filesystem::path& manifest_path,
                  const std::filesystem::path& signal_dir);

std::filesystem::path signal_path(const std::filesystem::path& signal_dir, const std::string& id);

// Codes are taken in manifest order; duplicates collapse.
std::vector<std::uint8_t> encode_labels(const std::vector<std::string>& codes);
std::vector<std::string> decode_labels(const std::vector<std::uint8_t>& multi_hot);

struct FilterOptions {
  double cutoff_hz = 0.5;
  int order = 1;
  double sample_rate_hz = kSampleRateHz;
  // Forward-backward application (zero phase, squared magnitude response).
  bool zero_phase = false;
};

// First-order Butterworth high-pass, bilinear transform with pre-warping, applied to each
// lead independently. The filter state starts at the steady state for the first sample so a
// constant lead maps to zero from the first output.
Eigen::MatrixXd highpass_filter(const Eigen::MatrixXd& signal, const FilterOptions& opts = {});

// Analytic magnitude response of the causal filter at frequency f.
double highpass_magnitude(double freq_hz, const FilterOptions& opts = {});

EcgRecord preprocess_record(const EcgRecord& record, const FilterOptions& opts = {});
DatasetSplit preprocess_dataset(const DatasetSplit& split, const FilterOptions& opts = {});

// Restricts every record's labels to the codes of one branch. Records whose restricted
// labels are all zero are kept.
DatasetSplit branch_view(const DatasetSplit& split, Branch branch);

// [{code, branch, index}, ...]
nlohmann::json taxonomy_json();

}  // namespace protoecg
