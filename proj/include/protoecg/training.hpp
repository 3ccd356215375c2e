#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "protoecg/extractors.hpp"
#include "protoecg/losses.hpp"
#include "protoecg/prototype.hpp"
#include "protoecg/signal_io.hpp"

namespace protoecg {

// Linear map from a similarity profile to class logits.
struct ClassifierHead {
  Eigen::MatrixXd weights;  // C x P
  Eigen::VectorXd bias;     // C
  std::vector<std::string> class_codes;

  int num_classes() const { return static_cast<int>(weights.rows()); }
  int num_prototypes() const { return static_cast<int>(weights.cols()); }
  Eigen::MatrixXd logits(const Eigen::MatrixXd& profiles) const;  // N x P -> N x C
  void validate() const;

  nlohmann::json to_json() const;
  static ClassifierHead from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static ClassifierHead load(const std::filesystem::path& path);
};

// W[c][p] = 1 where prototype p belongs to class c, -0.5 elsewhere; zero bias.
ClassifierHead init_classifier(const std::vector<int>& class_of, int num_classes);

struct TrainConfig {
  int max_epochs = 200;
  int patience = 10;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double prototype_learning_rate = 0.0;  // 0 = learning_rate
  double weight_decay = 1e-4;
  std::string scheduler = "plateau";     // "plateau" or "none"
  double plateau_factor = 0.1;
  int plateau_patience = 5;
  double min_learning_rate = 1e-6;
  int warmup_epochs = 10;
  bool skip_warmup = false;
  int projection_every = 10;
  bool project_on_best = true;
  int top_k = kDefaultTopK;
  bool freeze_backbone = false;
  bool freeze_prototypes = false;
  bool freeze_head = false;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct FusionConfig {
  double l1 = 1e-4;
  int max_iterations = 5000;
  double tolerance = 1e-9;

  void validate() const;
};

void to_json(nlohmann::json& j, const FusionConfig& c);
void from_json(const nlohmann::json& j, FusionConfig& c);

// Adaptive-moment optimizer with L2 weight decay folded into the gradient.
class Adam {
 public:
  struct Slot {
    std::vector<double> m, v;
  };

  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void begin_step() { ++t_; }
  void update(Slot& slot, double* value, const double* grad, std::size_t n, double lr, double weight_decay) const;
  int steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  int t_ = 0;
};

// Tracks the best monitored value. should_stop() turns true once more than `patience`
// consecutive updates failed to improve.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}
  bool update(double metric);
  bool should_stop() const { return bad_epochs_ > patience_; }
  int bad_epochs() const { return bad_epochs_; }
  std::optional<double> best() const { return best_; }

 private:
  int patience_;
  int bad_epochs_ = 0;
  std::optional<double> best_;
};

// Multiplies the learning rate by `factor` after `patience` non-improving epochs.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor, int patience, double min_lr)
      : factor_(factor), patience_(patience), min_lr_(min_lr) {}
  double step(double metric, double lr);

 private:
  double factor_;
  int patience_;
  double min_lr_;
  int bad_ = 0;
  std::optional<double> best_;
};

// Records of one branch with labels restricted to the branch's active classes.
struct BranchData {
  std::vector<const EcgRecord*> train, val, test;
  Eigen::MatrixXd train_labels, val_labels, test_labels;  // N x C
  std::vector<std::string> train_ids;
};

// Branch codes with at least one positive training record, in taxonomy order.
std::vector<std::string> active_classes(const DatasetSplit& split, Branch branch);

// `split` carries full 71-code labels.
BranchData make_branch_data(const DatasetSplit& split, const std::vector<std::string>& class_codes);

Eigen::MatrixXd label_matrix(const std::vector<const EcgRecord*>& records, const std::vector<int>& taxonomy_columns);

struct BranchModel {
  Branch branch = Branch::Rhythm;
  FeatureExtractor extractor{ExtractorVariant::Tiny1D};
  PrototypeBank bank;
  ClassifierHead head;

  const std::vector<std::string>& class_codes() const { return bank.class_codes; }
};

PrototypeKind kind_for_branch(Branch b);

BranchModel make_branch_model(Branch branch, const std::vector<std::string>& class_codes, ExtractorVariant variant,
                              int prototypes_per_class, double scale, std::uint64_t seed);

std::vector<LatentMap> compute_latents(FeatureExtractor& extractor, const std::vector<const EcgRecord*>& records,
                                       int batch_size = 64);

// N x P prototype scores for precomputed latents.
Eigen::MatrixXd branch_scores(const BranchModel& model, const std::vector<LatentMap>& latents, int top_k);

// Loss terms and their gradients for one batch.
struct BatchLoss {
  LossParts parts;
  double total = 0.0;
  Eigen::MatrixXd grad_prototypes;      // P x D
  Eigen::MatrixXd grad_weights;         // C x P
  Eigen::VectorXd grad_bias;            // C
  std::vector<LatentMap> grad_latents;  // filled when requested
};

BatchLoss branch_batch_loss(const BranchModel& model, const std::vector<LatentMap>& latents,
                            const Eigen::MatrixXd& labels, const CoOccurrenceMatrix& cooccurrence,
                            const LossConfig& loss, int top_k, bool want_grads, bool want_latent_grads);

// Mean macro-AUROC over classes with a defined AUROC (nullopt when none is defined).
std::optional<double> monitored_auroc(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& labels);

struct WarmupResult {
  std::vector<double> epoch_losses;  // index 0 is the loss before any update
  bool skipped = false;
  bool loss_decreased = false;
  std::vector<std::string> warnings;
};

// Trains only the prototype vectors; backbone and head stay frozen.
WarmupResult warmup(BranchModel& model, const BranchData& data, const LossConfig& loss, const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double learning_rate = 0.0;
  std::optional<double> val_auroc;            // before any projection this epoch
  bool projected = false;
  std::optional<double> val_auroc_projected;  // after projection
  bool improved = false;
};

struct JointResult {
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  std::optional<double> best_val_auroc;  // of the returned (projected) checkpoint
  int projection_cycles = 0;
  std::string stop_reason;
  std::optional<double> last_pre_projection_val_auroc;
};

// Alternates joint epochs with prototype projection and leaves the model at the best
// projected checkpoint.
JointResult joint_train_with_projection(BranchModel& model, const BranchData& data, const LossConfig& loss,
                                        const TrainConfig& cfg);

// Profiles per branch in the fixed order GLOBAL_1D, PARTIAL_2D, GLOBAL_2D.
struct BranchProfiles {
  PrototypeKind kind;
  Eigen::MatrixXd scores;  // N x P_branch
};

Eigen::MatrixXd fuse_similarities(const std::vector<BranchProfiles>& profiles);

struct FusionResult {
  ClassifierHead head;
  int iterations = 0;
  double objective = 0.0;
  bool converged = false;
};

// Minimizes mean BCE(W s + b, y) + l1 * sum of |W[c][j]| over prototypes j not assigned to
// class c, by accelerated proximal gradient from the init_classifier starting point.
FusionResult train_fusion(const Eigen::MatrixXd& profiles, const Eigen::MatrixXd& labels, const std::vector<int>& class_of,
                          const std::vector<std::string>& class_codes, const FusionConfig& cfg);

double fusion_objective(const ClassifierHead& head, const Eigen::MatrixXd& profiles, const Eigen::MatrixXd& labels,
                        const std::vector<int>& class_of, double l1);

}  // namespace protoecg
