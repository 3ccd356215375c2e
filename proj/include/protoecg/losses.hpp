#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace protoecg {

// P x P Jaccard co-occurrence of the classes assigned to each prototype pair.
struct CoOccurrenceMatrix {
  Eigen::MatrixXd values;
  // Classes with no positive training record; pairs of two such classes are set to 0.
  std::vector<int> empty_classes;
  std::vector<std::string> warnings;
};

// `labels` is N x C multi-hot, `class_of` maps each prototype to a column of `labels`.
CoOccurrenceMatrix jaccard_matrix(const Eigen::MatrixXd& labels, const std::vector<int>& class_of);

struct LossConfig {
  double lambda_clst = 0.004;
  double lambda_sep = 0.0004;
  double lambda_div = 250.0;
  double lambda_cntrst = 300.0;
  Eigen::VectorXd class_weights;  // empty means all ones
  int k_pool = 5;

  void validate(int num_classes) const;
  Eigen::VectorXd weights_for(int num_classes) const;
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

// Per-class weights proportional to N / (C * n_c); classes without positives get 1.
Eigen::VectorXd inverse_frequency_weights(const Eigen::MatrixXd& labels);

// Each loss optionally writes its gradient with respect to its first argument.

// Weighted multi-label binary cross-entropy on logits, averaged over records.
double bce_loss(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& targets,
                const Eigen::VectorXd& class_weights, Eigen::MatrixXd* grad = nullptr);

// -(1/N) sum_i max over prototypes whose class is any positive label of i.
double clustering_loss(const Eigen::MatrixXd& similarities, const Eigen::MatrixXd& labels,
                       const std::vector<int>& class_of, Eigen::MatrixXd* grad = nullptr);

// (1/N) sum_i max over prototypes whose class is not a label of i.
double separation_loss(const Eigen::MatrixXd& similarities, const Eigen::MatrixXd& labels,
                       const std::vector<int>& class_of, Eigen::MatrixXd* grad = nullptr);

// ||P~ P~^T - I||_F^2 over row-normalized prototypes.
double orthogonality_loss(const Eigen::MatrixXd& prototypes, Eigen::MatrixXd* grad = nullptr);

// Co-occurrence weighted mean prototype similarity minus the complementary weighted mean,
// negated and scaled by 1/sqrt(P). Diagonal pairs are excluded; an empty group contributes 0.
double contrastive_loss(const Eigen::MatrixXd& prototypes, const Eigen::MatrixXd& cooccurrence,
                        double scale, Eigen::MatrixXd* grad = nullptr);

struct LossParts {
  double bce = 0.0;
  double clst = 0.0;
  double sep = 0.0;
  double div = 0.0;
  double cntrst = 0.0;
};

double total_loss(const LossParts& parts, const LossConfig& cfg);

}  // namespace protoecg
