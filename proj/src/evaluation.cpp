#include "protoecg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "protoecg/errors.hpp"

namespace protoecg {

namespace {

std::vector<int> ascending_order(const Eigen::Ref<const Eigen::VectorXd>& scores) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores[a] < scores[b]; });
  return idx;
}

// Mann-Whitney statistic over records visited in ascending score order, each record
// counted `weight[i]` times.
template <typename WeightFn>
std::optional<double> weighted_mann_whitney(const std::vector<int>& order,
                                            const Eigen::Ref<const Eigen::VectorXd>& scores,
                                            const Eigen::Ref<const Eigen::VectorXd>& labels, WeightFn weight) {
  double neg_below = 0.0, u = 0.0, pos_total = 0.0, neg_total = 0.0;
  std::size_t g = 0;
  while (g < order.size()) {
    std::size_t end = g;
    double gp = 0.0, gn = 0.0;
    while (end < order.size() && scores[order[end]] == scores[order[g]]) {
      const int i = order[end];
      const double w = weight(i);
      if (labels[i] > 0.5) {
        gp += w;
      } else {
        gn += w;
      }
      ++end;
    }
    u += gp * neg_below + 0.5 * gp * gn;
    neg_below += gn;
    pos_total += gp;
    neg_total += gn;
    g = end;
  }
  if (pos_total == 0.0 || neg_total == 0.0) return std::nullopt;
  return u / (pos_total * neg_total);
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json ci_json(const std::optional<Interval>& v) {
  return v ? nlohmann::json::array({v->lo, v->hi}) : nlohmann::json(nullptr);
}

std::optional<Interval> ci_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return Interval{j.at(0).get<double>(), j.at(1).get<double>()};
}

std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::optional<double> auroc(const Eigen::Ref<const Eigen::VectorXd>& scores,
                            const Eigen::Ref<const Eigen::VectorXd>& labels) {
  if (scores.size() != labels.size()) throw ValidationError("auroc: scores and labels differ in length");
  const auto order = ascending_order(scores);
  return weighted_mann_whitney(order, scores, labels, [](int) { return 1.0; });
}

std::vector<std::optional<double>> per_class_auroc(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels) {
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols()) {
    throw ValidationError("scores and labels differ in shape");
  }
  std::vector<std::optional<double>> out;
  for (Eigen::Index c = 0; c < scores.cols(); ++c) out.push_back(auroc(scores.col(c), labels.col(c)));
  return out;
}

std::optional<double> macro_auroc(const std::vector<std::optional<double>>& per_class) {
  if (per_class.empty()) return std::nullopt;
  double s = 0.0;
  for (const auto& v : per_class) {
    if (!v) return std::nullopt;
    s += *v;
  }
  return s / static_cast<double>(per_class.size());
}

double weighted_auroc(const std::vector<std::optional<double>>& per_class, const std::vector<double>& positives) {
  if (per_class.size() != positives.size()) throw ValidationError("weighted_auroc: length mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (!per_class[c]) continue;
    num += positives[c] * *per_class[c];
    den += positives[c];
  }
  if (den == 0.0) throw ValidationError("weighted AUROC undefined: no class has a defined AUROC");
  return num / den;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

BootstrapResult bootstrap(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels, int n_resamples,
                          std::uint64_t seed) {
  if (n_resamples < 1) throw ValidationError("bootstrap needs at least one resample");
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols()) {
    throw ValidationError("scores and labels differ in shape");
  }
  const int n = static_cast<int>(scores.rows());
  const int c = static_cast<int>(scores.cols());
  if (n == 0) throw ValidationError("bootstrap of an empty set");

  std::vector<std::vector<int>> orders;
  for (int k = 0; k < c; ++k) orders.push_back(ascending_order(scores.col(k)));

  std::vector<double> macro_vals, weighted_vals;
  std::vector<std::vector<double>> class_vals(c);
  std::vector<double> counts(n);
  std::vector<std::optional<double>> per(c);
  std::vector<double> pos(c);
  BootstrapResult res;
  res.n_resamples = n_resamples;

  for (int r = 0; r < n_resamples; ++r) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(r), 0x5eedu};
    std::mt19937_64 gen(seq);
    std::uniform_int_distribution<int> pick(0, n - 1);
    std::fill(counts.begin(), counts.end(), 0.0);
    for (int i = 0; i < n; ++i) counts[pick(gen)] += 1.0;

    for (int k = 0; k < c; ++k) {
      per[k] = weighted_mann_whitney(orders[k], scores.col(k), labels.col(k), [&](int i) { return counts[i]; });
      double p = 0.0;
      for (int i = 0; i < n; ++i) {
        if (labels(i, k) > 0.5) p += counts[i];
      }
      pos[k] = p;
      if (per[k]) class_vals[k].push_back(*per[k]);
    }
    if (auto m = macro_auroc(per)) {
      macro_vals.push_back(*m);
    } else {
      ++res.macro_undefined;
    }
    double num = 0.0, den = 0.0;
    for (int k = 0; k < c; ++k) {
      if (!per[k]) continue;
      num += pos[k] * *per[k];
      den += pos[k];
    }
    if (den > 0.0) {
      weighted_vals.push_back(num / den);
    } else {
      ++res.weighted_undefined;
    }
  }

  auto interval = [](const std::vector<double>& v) -> std::optional<Interval> {
    if (v.empty()) return std::nullopt;
    return Interval{percentile(v, 2.5), percentile(v, 97.5)};
  };
  res.macro = interval(macro_vals);
  res.weighted = interval(weighted_vals);
  for (int k = 0; k < c; ++k) res.per_class.push_back(interval(class_vals[k]));
  return res;
}

Interval bootstrap_ci(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels, Metric metric, int n_resamples,
                      std::uint64_t seed) {
  const auto res = bootstrap(scores, labels, n_resamples, seed);
  const auto& ci = metric == Metric::Macro ? res.macro : res.weighted;
  if (!ci) throw ValidationError("metric undefined in every bootstrap resample");
  return *ci;
}

EvalReport evaluate_scores(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels,
                           const std::vector<std::string>& codes, int n_resamples, std::uint64_t seed) {
  if (static_cast<Eigen::Index>(codes.size()) != scores.cols()) throw ValidationError("code count != score columns");
  EvalReport rep;
  rep.codes = codes;
  rep.n_resamples = n_resamples;
  rep.seed = seed;
  rep.per_class_auroc = per_class_auroc(scores, labels);
  std::vector<double> pos;
  for (Eigen::Index k = 0; k < labels.cols(); ++k) {
    const int p = static_cast<int>((labels.col(k).array() > 0.5).count());
    rep.positives.push_back(p);
    pos.push_back(p);
  }
  rep.macro_auroc = macro_auroc(rep.per_class_auroc);
  const bool any_defined =
      std::any_of(rep.per_class_auroc.begin(), rep.per_class_auroc.end(), [](const auto& v) { return v.has_value(); });
  if (any_defined) rep.weighted_auroc = weighted_auroc(rep.per_class_auroc, pos);

  if (n_resamples > 0 && scores.rows() > 0) {
    const auto boot = bootstrap(scores, labels, n_resamples, seed);
    rep.macro_ci = boot.macro;
    rep.weighted_ci = boot.weighted;
    rep.macro_undefined_fraction = static_cast<double>(boot.macro_undefined) / n_resamples;
    for (std::size_t k = 0; k < codes.size(); ++k) {
      rep.per_class_ci.push_back(rep.positives[k] > 1 ? boot.per_class[k] : std::nullopt);
    }
  } else {
    rep.per_class_ci.assign(codes.size(), std::nullopt);
  }
  return rep;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t k = 0; k < codes.size(); ++k) {
    classes.push_back({{"code", codes[k]},
                       {"positives", positives[k]},
                       {"auroc", opt_json(per_class_auroc[k])},
                       {"ci", k < per_class_ci.size() ? ci_json(per_class_ci[k]) : nlohmann::json(nullptr)}});
  }
  return {{"schema", "protoecg.eval_report"},
          {"version", kReportSchemaVersion},
          {"classes", classes},
          {"macro_auroc", opt_json(macro_auroc)},
          {"macro_ci", ci_json(macro_ci)},
          {"macro_undefined_fraction", macro_undefined_fraction},
          {"weighted_auroc", opt_json(weighted_auroc)},
          {"weighted_ci", ci_json(weighted_ci)},
          {"n_resamples", n_resamples},
          {"seed", seed}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != "protoecg.eval_report" || j.value("version", 0) != kReportSchemaVersion) {
    throw ValidationError("not a version-1 evaluation report");
  }
  EvalReport r;
  for (const auto& c : j.at("classes")) {
    r.codes.push_back(c.at("code").get<std::string>());
    r.positives.push_back(c.at("positives").get<int>());
    r.per_class_auroc.push_back(opt_from(c.at("auroc")));
    r.per_class_ci.push_back(ci_from(c.at("ci")));
  }
  r.macro_auroc = opt_from(j.at("macro_auroc"));
  r.macro_ci = ci_from(j.at("macro_ci"));
  r.macro_undefined_fraction = j.at("macro_undefined_fraction").get<double>();
  r.weighted_auroc = opt_from(j.at("weighted_auroc"));
  r.weighted_ci = ci_from(j.at("weighted_ci"));
  r.n_resamples = j.at("n_resamples").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

std::string EvalReport::listing() const {
  std::ostringstream out;
  for (std::size_t k = 0; k < codes.size(); ++k) {
    std::string code = codes[k];
    if (code.size() > 1 && code.back() == '_') code.pop_back();
    out << code << " (" << positives[k] << "): ";
    out << (per_class_auroc[k] ? fmt3(*per_class_auroc[k]) : std::string("undefined"));
    if (k < per_class_ci.size() && per_class_ci[k]) {
      out << " (" << fmt3(per_class_ci[k]->lo) << ", " << fmt3(per_class_ci[k]->hi) << ")";
    } else {
      out << " (N/A)";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace protoecg
