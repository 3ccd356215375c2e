#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "protoecg/evaluation.hpp"
#include "protoecg/training.hpp"

namespace protoecg {

struct BranchSettings {
  bool enabled = true;
  ExtractorVariant variant = ExtractorVariant::Tiny1D;
  int prototypes_per_class = 1;
  double scale = 0.0;          // <= 0 means sqrt(D)
  std::string pretrained;      // optional weight file loaded by name/shape match
};

// Everything a run needs. Paths are resolved relative to the config file's directory.
struct ExperimentConfig {
  std::filesystem::path manifest;
  std::filesystem::path signals;
  std::filesystem::path model_dir = "model";
  bool filter_on_load = false;
  FilterOptions filter;
  std::array<BranchSettings, 3> branches;
  LossConfig loss;
  TrainConfig train;
  FusionConfig fusion;
  int eval_resamples = 10000;
  std::uint64_t eval_seed = 0;

  ExperimentConfig();
  BranchSettings& branch(Branch b) { return branches[static_cast<int>(b)]; }
  const BranchSettings& branch(Branch b) const { return branches[static_cast<int>(b)]; }

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  // Hex FNV-1a of the canonical JSON form.
  std::string hash() const;
};

DatasetSplit load_experiment_data(const ExperimentConfig& cfg);

// Files of one trained branch inside a model directory.
struct BranchFiles {
  std::filesystem::path checkpoint, bank, head, run;
};
BranchFiles branch_files(const std::filesystem::path& model_dir, Branch b);

void save_branch(const std::filesystem::path& model_dir, BranchModel& model, const nlohmann::json& run_metadata);
BranchModel load_branch(const std::filesystem::path& model_dir, Branch b);
bool branch_exists(const std::filesystem::path& model_dir, Branch b);

struct BranchRun {
  BranchModel model;
  WarmupResult warm;
  JointResult joint;
  nlohmann::json metadata;
};

// Warm-up, then joint training with projection cycles. Progress lines go to `log` if set.
BranchRun train_branch(const ExperimentConfig& cfg, const DatasetSplit& data, Branch branch, std::ostream* log = nullptr);

// Re-projects a trained branch onto the training split.
void project_branch(BranchModel& model, const DatasetSplit& data);

// Branch models in kind order plus the fusion head over the concatenated profile.
struct FusedModel {
  std::vector<BranchModel> branches;
  ClassifierHead head;
  int top_k = kDefaultTopK;

  // Fused class list: branch class codes concatenated in branch order.
  std::vector<std::string> class_codes() const;
  // Fused class index of each profile entry.
  std::vector<int> class_of() const;
  int profile_length() const;

  std::vector<BranchProfiles> branch_profiles(const std::vector<const EcgRecord*>& records);
  Eigen::MatrixXd profiles(const std::vector<const EcgRecord*>& records);
  Eigen::MatrixXd logits(const std::vector<const EcgRecord*>& records);
  // Label matrix over class_codes() for the given records.
  Eigen::MatrixXd labels(const std::vector<const EcgRecord*>& records) const;
  // (branch position, prototype index within its bank) for a profile entry.
  std::pair<int, int> locate(int profile_index) const;
};

// Loads every trained branch found in the model directory, and the fusion head if present.
FusedModel load_fused(const std::filesystem::path& model_dir);

// Stage 3 on the training split. Branch parameters and prototypes are not touched.
FusionResult fit_fusion(FusedModel& model, const DatasetSplit& data, const FusionConfig& cfg);

void save_fusion(const std::filesystem::path& model_dir, const FusedModel& model, const nlohmann::json& metadata);

std::vector<const EcgRecord*> pointers(const std::vector<EcgRecord>& records);

EvalReport evaluate_fused(FusedModel& model, const std::vector<EcgRecord>& records, int n_resamples,
                          std::uint64_t seed);

// Baseline without fusion: each branch gets its own classifier fitted the same way on its
// own profile, and the per-branch logits are concatenated.
EvalReport evaluate_branch_baseline(FusedModel& model, const DatasetSplit& data, const FusionConfig& cfg,
                                    const std::vector<EcgRecord>& records, int n_resamples, std::uint64_t seed);

}  // namespace protoecg
