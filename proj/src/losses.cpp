#include "protoecg/losses.hpp"

#include <cmath>
#include <limits>

#include "protoecg/errors.hpp"

namespace protoecg {

namespace {

// Row-normalizes and returns the norms.
Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m, Eigen::VectorXd& norms) {
  norms = m.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (norms[i] == 0.0) throw DegenerateInputError("prototype " + std::to_string(i) + " has zero norm");
  }
  return norms.cwiseInverse().asDiagonal() * m;
}

// Chain rule through row normalization: dL/dp = (g - (g . p~) p~) / |p|.
Eigen::MatrixXd through_normalization(const Eigen::MatrixXd& grad_normed, const Eigen::MatrixXd& normed,
                                      const Eigen::VectorXd& norms) {
  const Eigen::VectorXd radial = (grad_normed.cwiseProduct(normed)).rowwise().sum();
  Eigen::MatrixXd g = grad_normed - radial.asDiagonal() * normed;
  return norms.cwiseInverse().asDiagonal() * g;
}

void check_shapes(const Eigen::MatrixXd& s, const Eigen::MatrixXd& labels, const std::vector<int>& class_of) {
  if (s.rows() != labels.rows()) throw ConfigurationError("similarities and labels differ in N");
  if (s.cols() != static_cast<Eigen::Index>(class_of.size())) {
    throw ConfigurationError("similarities and class_of differ in P");
  }
  for (int c : class_of) {
    if (c < 0 || c >= labels.cols()) throw ConfigurationError("prototype class outside label columns");
  }
}

// Shared body of the clustering and separation terms: sum over records of the max over the
// selected prototype subset.
double masked_max_sum(const Eigen::MatrixXd& s, const Eigen::MatrixXd& labels, const std::vector<int>& class_of,
                      bool positives, double sign, Eigen::MatrixXd* grad) {
  check_shapes(s, labels, class_of);
  const Eigen::Index n = s.rows();
  if (grad) *grad = Eigen::MatrixXd::Zero(s.rows(), s.cols());
  if (n == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    Eigen::Index arg = -1;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      const bool has_class = labels(i, class_of[j]) > 0.5;
      if (has_class != positives) continue;
      if (s(i, j) > best) {
        best = s(i, j);
        arg = j;
      }
    }
    if (arg < 0) continue;
    total += best;
    if (grad) (*grad)(i, arg) = sign / static_cast<double>(n);
  }
  return sign * total / static_cast<double>(n);
}

}  // namespace

CoOccurrenceMatrix jaccard_matrix(const Eigen::MatrixXd& labels, const std::vector<int>& class_of) {
  const Eigen::Index c = labels.cols();
  for (int k : class_of) {
    if (k < 0 || k >= c) throw ConfigurationError("prototype class outside label columns");
  }
  Eigen::MatrixXd bin = (labels.array() > 0.5).cast<double>();
  const Eigen::MatrixXd both = bin.transpose() * bin;  // C x C counts
  CoOccurrenceMatrix out;
  for (Eigen::Index k = 0; k < c; ++k) {
    if (both(k, k) == 0.0) out.empty_classes.push_back(static_cast<int>(k));
  }
  Eigen::MatrixXd class_j(c, c);
  for (Eigen::Index a = 0; a < c; ++a) {
    for (Eigen::Index b = 0; b < c; ++b) {
      if (a == b) {
        class_j(a, b) = 1.0;
        continue;
      }
      const double uni = both(a, a) + both(b, b) - both(a, b);
      if (uni == 0.0) {
        class_j(a, b) = 0.0;
        if (a < b) {
          out.warnings.push_back("classes " + std::to_string(a) + " and " + std::to_string(b) +
                                 " have no positives; co-occurrence set to 0");
        }
      } else {
        class_j(a, b) = both(a, b) / uni;
      }
    }
  }
  const auto p = static_cast<Eigen::Index>(class_of.size());
  out.values.resize(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) out.values(i, j) = class_j(class_of[i], class_of[j]);
  }
  return out;
}

void LossConfig::validate(int num_classes) const {
  for (double l : {lambda_clst, lambda_sep, lambda_div, lambda_cntrst}) {
    if (!std::isfinite(l) || l < 0.0) throw ConfigurationError("loss coefficients must be finite and >= 0");
  }
  if (class_weights.size() != 0) {
    if (class_weights.size() != num_classes) throw ConfigurationError("class weight count != class count");
    if (!class_weights.allFinite() || class_weights.minCoeff() <= 0.0) {
      throw ConfigurationError("class weights must be finite and positive");
    }
  }
  if (k_pool < 1) throw ConfigurationError("k_pool must be >= 1");
}

Eigen::VectorXd LossConfig::weights_for(int num_classes) const {
  if (class_weights.size() == 0) return Eigen::VectorXd::Ones(num_classes);
  if (class_weights.size() != num_classes) throw ConfigurationError("class weight count != class count");
  return class_weights;
}

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"lambda_clst", c.lambda_clst},
       {"lambda_sep", c.lambda_sep},
       {"lambda_div", c.lambda_div},
       {"lambda_cntrst", c.lambda_cntrst},
       {"k_pool", c.k_pool}};
  if (c.class_weights.size() > 0) {
    j["class_weights"] = std::vector<double>(c.class_weights.data(), c.class_weights.data() + c.class_weights.size());
  }
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  c.lambda_clst = j.value("lambda_clst", c.lambda_clst);
  c.lambda_sep = j.value("lambda_sep", c.lambda_sep);
  c.lambda_div = j.value("lambda_div", c.lambda_div);
  c.lambda_cntrst = j.value("lambda_cntrst", c.lambda_cntrst);
  c.k_pool = j.value("k_pool", c.k_pool);
  if (j.contains("class_weights")) {
    const auto w = j.at("class_weights").get<std::vector<double>>();
    c.class_weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  }
}

Eigen::VectorXd inverse_frequency_weights(const Eigen::MatrixXd& labels) {
  const Eigen::Index n = labels.rows(), c = labels.cols();
  Eigen::VectorXd w = Eigen::VectorXd::Ones(c);
  for (Eigen::Index k = 0; k < c; ++k) {
    const double pos = (labels.col(k).array() > 0.5).count();
    if (pos > 0) w[k] = static_cast<double>(n) / (static_cast<double>(c) * pos);
  }
  return w;
}

double bce_loss(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& targets, const Eigen::VectorXd& w,
                Eigen::MatrixXd* grad) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw ConfigurationError("logits and targets differ in shape");
  }
  if (w.size() != logits.cols()) throw ConfigurationError("class weight count != class count");
  if (!logits.allFinite()) throw NumericError("non-finite logit");
  const Eigen::Index n = logits.rows();
  if (grad) *grad = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
  if (n == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double z = logits(i, j);
      const double y = targets(i, j);
      // -[y log s(z) + (1-y) log(1-s(z))] = max(z,0) - z y + log(1 + exp(-|z|))
      total += w[j] * (std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))));
      if (grad) {
        const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        (*grad)(i, j) = w[j] * (sig - y) / static_cast<double>(n);
      }
    }
  }
  return total / static_cast<double>(n);
}

double clustering_loss(const Eigen::MatrixXd& s, const Eigen::MatrixXd& labels, const std::vector<int>& class_of,
                       Eigen::MatrixXd* grad) {
  return masked_max_sum(s, labels, class_of, true, -1.0, grad);
}

double separation_loss(const Eigen::MatrixXd& s, const Eigen::MatrixXd& labels, const std::vector<int>& class_of,
                       Eigen::MatrixXd* grad) {
  return masked_max_sum(s, labels, class_of, false, 1.0, grad);
}

double orthogonality_loss(const Eigen::MatrixXd& prototypes, Eigen::MatrixXd* grad) {
  Eigen::VectorXd norms;
  const Eigen::MatrixXd pn = normalize_rows(prototypes, norms);
  const Eigen::MatrixXd g = pn * pn.transpose() - Eigen::MatrixXd::Identity(pn.rows(), pn.rows());
  if (grad) *grad = through_normalization(4.0 * g * pn, pn, norms);
  return g.squaredNorm();
}

double contrastive_loss(const Eigen::MatrixXd& prototypes, const Eigen::MatrixXd& c, double scale,
                        Eigen::MatrixXd* grad) {
  const Eigen::Index p = prototypes.rows();
  if (p < 2) throw ValidationError("contrastive loss needs at least two prototypes");
  if (c.rows() != p || c.cols() != p) throw ConfigurationError("co-occurrence matrix must be P x P");
  Eigen::VectorXd norms;
  const Eigen::MatrixXd pn = normalize_rows(prototypes, norms);
  const Eigen::MatrixXd s = scale * pn * pn.transpose();

  double pos_w = 0.0, neg_w = 0.0, pos = 0.0, neg = 0.0;
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) {
      if (i == j) continue;
      pos_w += c(i, j);
      neg_w += 1.0 - c(i, j);
      pos += c(i, j) * s(i, j);
      neg += (1.0 - c(i, j)) * s(i, j);
    }
  }
  const double pos_mean = pos_w > 0.0 ? pos / pos_w : 0.0;
  const double neg_mean = neg_w > 0.0 ? neg / neg_w : 0.0;
  const double k = -1.0 / std::sqrt(static_cast<double>(p));

  if (grad) {
    Eigen::MatrixXd gs = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < p; ++i) {
      for (Eigen::Index j = 0; j < p; ++j) {
        if (i == j) continue;
        double v = 0.0;
        if (pos_w > 0.0) v += c(i, j) / pos_w;
        if (neg_w > 0.0) v -= (1.0 - c(i, j)) / neg_w;
        gs(i, j) = k * v;
      }
    }
    const Eigen::MatrixXd g_normed = scale * (gs + gs.transpose()) * pn;
    *grad = through_normalization(g_normed, pn, norms);
  }
  return k * (pos_mean - neg_mean);
}

double total_loss(const LossParts& parts, const LossConfig& cfg) {
  return parts.bce + cfg.lambda_clst * parts.clst + cfg.lambda_sep * parts.sep + cfg.lambda_div * parts.div +
         cfg.lambda_cntrst * parts.cntrst;
}

}  // namespace protoecg
