#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace protoecg {

// Rank-based AUROC with tied scores counted 0.5. nullopt when labels are all 0 or all 1.
std::optional<double> auroc(const Eigen::Ref<const Eigen::VectorXd>& scores,
                            const Eigen::Ref<const Eigen::VectorXd>& labels);

std::vector<std::optional<double>> per_class_auroc(const Eigen::MatrixXd& scores,
                                                   const Eigen::MatrixXd& labels);

// Unweighted mean over classes; nullopt if any class is undefined.
std::optional<double> macro_auroc(const std::vector<std::optional<double>>& per_class);

// Positive-count weighted mean over the defined classes. Throws ValidationError if none is
// defined.
double weighted_auroc(const std::vector<std::optional<double>>& per_class,
                      const std::vector<double>& positives);

enum class Metric { Macro, Weighted };

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// Percentile bootstrap over records. Resample r draws its indices from a generator keyed
// by (seed, r), so results do not depend on evaluation order.
struct BootstrapResult {
  std::optional<Interval> macro;
  std::optional<Interval> weighted;
  std::vector<std::optional<Interval>> per_class;
  int n_resamples = 0;
  int macro_undefined = 0;     // resamples where macro-AUROC was undefined
  int weighted_undefined = 0;  // resamples where no class was defined
};

BootstrapResult bootstrap(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels, int n_resamples,
                          std::uint64_t seed);

// Throws ValidationError when the metric is undefined in every resample.
Interval bootstrap_ci(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels, Metric metric,
                      int n_resamples = 10000, std::uint64_t seed = 0);

// Linear-interpolated percentile (q in [0, 100]) of an unsorted sample.
double percentile(std::vector<double> values, double q);

struct EvalReport {
  std::vector<std::string> codes;
  std::vector<int> positives;
  std::vector<std::optional<double>> per_class_auroc;
  // nullopt ("N/A") for classes with a single positive.
  std::vector<std::optional<Interval>> per_class_ci;
  std::optional<double> macro_auroc;
  std::optional<Interval> macro_ci;
  double macro_undefined_fraction = 0.0;
  std::optional<double> weighted_auroc;
  std::optional<Interval> weighted_ci;
  int n_resamples = 0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  // One "CODE (n): AUROC (lo, hi)" line per class.
  std::string listing() const;
};

inline constexpr int kReportSchemaVersion = 1;

EvalReport evaluate_scores(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels,
                           const std::vector<std::string>& codes, int n_resamples = 10000,
                           std::uint64_t seed = 0);

}  // namespace protoecg
