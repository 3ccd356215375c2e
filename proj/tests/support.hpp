#pragma once
// Generators and independent reference implementations shared by the unit tests and the
// acceptance suite. Oracles are deliberately naive: explicit loops, no shared helpers with
// the library.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "protoecg/prototype.hpp"
#include "protoecg/signal_io.hpp"
#include "protoecg/training.hpp"

namespace testsupport {

struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
  double uniform(double lo = -1.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng); }
  bool coin(double p = 0.5) { return uniform(0.0, 1.0) < p; }

  Eigen::MatrixXd matrix(int r, int c, double lo = -1.0, double hi = 1.0) {
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = uniform(lo, hi);
    return m;
  }
  Eigen::MatrixXd gaussian(int r, int c) {
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = normal();
    return m;
  }
  Eigen::MatrixXd multi_hot(int n, int c, double p = 0.35) {
    Eigen::MatrixXd m(n, c);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = coin(p) ? 1.0 : 0.0;
    return m;
  }
  // Every class gets at least one prototype; the rest are assigned at random.
  std::vector<int> assignment(int p, int c) {
    std::vector<int> out(p);
    for (int j = 0; j < p; ++j) out[j] = j < c ? j : integer(0, c - 1);
    std::shuffle(out.begin(), out.end(), rng);
    return out;
  }
  protoecg::LatentMap latent(int channels, int length) {
    protoecg::LatentMap m(channels, length);
    for (int i = 0; i < channels; ++i)
      for (int t = 0; t < length; ++t) m(i, t) = normal();
    return m;
  }
};

// ---- losses ---------------------------------------------------------------

inline double oracle_bce(const Eigen::MatrixXd& z, const Eigen::MatrixXd& y, const Eigen::VectorXd& w) {
  double total = 0.0;
  for (int i = 0; i < z.rows(); ++i) {
    for (int j = 0; j < z.cols(); ++j) {
      const double s = 1.0 / (1.0 + std::exp(-z(i, j)));
      total += -w[j] * (y(i, j) * std::log(s) + (1.0 - y(i, j)) * std::log(1.0 - s));
    }
  }
  return total / z.rows();
}

inline bool has_label(const Eigen::MatrixXd& labels, int i, int c) { return labels(i, c) > 0.5; }

inline double oracle_clustering(const Eigen::MatrixXd& s, const Eigen::MatrixXd& labels, const std::vector<int>& class_of) {
  double total = 0.0;
  for (int i = 0; i < s.rows(); ++i) {
    bool any = false;
    double best = 0.0;
    for (int j = 0; j < s.cols(); ++j) {
      if (!has_label(labels, i, class_of[j])) continue;
      if (!any || s(i, j) > best) best = s(i, j);
      any = true;
    }
    if (any) total += best;
  }
  return -total / s.rows();
}

inline double oracle_separation(const Eigen::MatrixXd& s, const Eigen::MatrixXd& labels, const std::vector<int>& class_of) {
  double total = 0.0;
  for (int i = 0; i < s.rows(); ++i) {
    bool any = false;
    double best = 0.0;
    for (int j = 0; j < s.cols(); ++j) {
      if (has_label(labels, i, class_of[j])) continue;
      if (!any || s(i, j) > best) best = s(i, j);
      any = true;
    }
    if (any) total += best;
  }
  return total / s.rows();
}

inline double cosine(const Eigen::MatrixXd& p, int i, int j) {
  double dot = 0.0, ni = 0.0, nj = 0.0;
  for (int d = 0; d < p.cols(); ++d) {
    dot += p(i, d) * p(j, d);
    ni += p(i, d) * p(i, d);
    nj += p(j, d) * p(j, d);
  }
  return dot / std::sqrt(ni * nj);
}

inline double oracle_orthogonality(const Eigen::MatrixXd& p) {
  double total = 0.0;
  for (int i = 0; i < p.rows(); ++i) {
    for (int j = 0; j < p.rows(); ++j) {
      const double g = cosine(p, i, j) - (i == j ? 1.0 : 0.0);
      total += g * g;
    }
  }
  return total;
}

inline double oracle_contrastive(const Eigen::MatrixXd& p, const Eigen::MatrixXd& c, double a) {
  double pw = 0.0, nw = 0.0, ps = 0.0, ns = 0.0;
  for (int i = 0; i < p.rows(); ++i) {
    for (int j = 0; j < p.rows(); ++j) {
      if (i == j) continue;
      const double s = a * cosine(p, i, j);
      pw += c(i, j);
      nw += 1.0 - c(i, j);
      ps += c(i, j) * s;
      ns += (1.0 - c(i, j)) * s;
    }
  }
  const double pos = pw > 0 ? ps / pw : 0.0;
  const double neg = nw > 0 ? ns / nw : 0.0;
  return -(pos - neg) / std::sqrt(static_cast<double>(p.rows()));
}

// Class-pair Jaccard over records, expanded to prototype pairs.
inline Eigen::MatrixXd oracle_jaccard(const Eigen::MatrixXd& labels, const std::vector<int>& class_of) {
  const int p = static_cast<int>(class_of.size());
  Eigen::MatrixXd out(p, p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      const int a = class_of[i], b = class_of[j];
      if (a == b) {
        out(i, j) = 1.0;
        continue;
      }
      int both = 0, either = 0;
      for (int r = 0; r < labels.rows(); ++r) {
        const bool x = labels(r, a) > 0.5, y = labels(r, b) > 0.5;
        both += x && y;
        either += x || y;
      }
      out(i, j) = either == 0 ? 0.0 : static_cast<double>(both) / either;
    }
  }
  return out;
}

// ---- evaluation -----------------------------------------------------------

inline double oracle_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  int pos = 0, neg = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i]) ++pos; else ++neg;
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / (static_cast<double>(pos) * neg);
}

// ---- prototype layer ------------------------------------------------------

inline double oracle_topk(std::vector<double> v, int k) {
  std::sort(v.begin(), v.end(), std::greater<>());
  const int n = std::min<int>(k, static_cast<int>(v.size()));
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += v[i];
  return s / n;
}

inline double oracle_patch_similarity(const protoecg::LatentMap& map, int start, int window, const Eigen::VectorXd& p,
                                      double a) {
  double dot = 0.0, nz = 0.0, np = 0.0;
  for (int c = 0; c < map.rows(); ++c) {
    for (int t = 0; t < window; ++t) {
      const double z = map(c, start + t);
      const double q = p[c * window + t];
      dot += z * q;
      nz += z * z;
      np += q * q;
    }
  }
  return a * dot / std::sqrt(nz * np);
}

struct PatchRef {
  int record = -1;
  int offset = -1;
  double score = 0.0;
};

// Exhaustive scan for the best eligible patch, ties to the lowest (record, offset).
inline PatchRef oracle_projection(const std::vector<protoecg::LatentMap>& latents, const Eigen::MatrixXd& labels,
                                  int cls, const Eigen::VectorXd& p, int window, double a) {
  PatchRef best;
  for (std::size_t r = 0; r < latents.size(); ++r) {
    if (labels(r, cls) < 0.5) continue;
    for (int o = 0; o + window <= latents[r].cols(); ++o) {
      double nz = 0.0;
      for (int c = 0; c < latents[r].rows(); ++c)
        for (int t = 0; t < window; ++t) nz += latents[r](c, o + t) * latents[r](c, o + t);
      if (nz == 0.0) continue;
      const double s = oracle_patch_similarity(latents[r], o, window, p, a);
      if (best.record < 0 || s > best.score) best = {static_cast<int>(r), o, s};
    }
  }
  return best;
}

// Small hand-built bank with arbitrary geometry.
inline protoecg::PrototypeBank small_bank(protoecg::PrototypeKind kind, int channels, int window, int length,
                                          std::vector<int> class_of, int num_classes, Gen& g, double scale = 1.0) {
  protoecg::PrototypeBank b;
  b.kind = kind;
  b.channels = channels;
  b.window = window;
  b.latent_length = length;
  b.scale = scale;
  b.vectors = g.gaussian(static_cast<int>(class_of.size()), channels * window);
  b.class_of = std::move(class_of);
  for (int c = 0; c < num_classes; ++c) b.class_codes.push_back("C" + std::to_string(c));
  return b;
}

// ---- signals --------------------------------------------------------------

// |H(e^{jw})| of y[n] = b0 (x[n] - x[n-1]) - a1 y[n-1] with the bilinear-prewarped
// first-order Butterworth coefficients, evaluated with complex arithmetic.
inline double oracle_highpass_gain(double f, double fc, double fs) {
  const double k = std::tan(std::numbers::pi * fc / fs);
  const double b0 = 1.0 / (1.0 + k);
  const double a1 = (k - 1.0) / (k + 1.0);
  const std::complex<double> zinv = std::polar(1.0, -2.0 * std::numbers::pi * f / fs);
  return std::abs(b0 * (1.0 - zinv) / (1.0 + a1 * zinv));
}

// Amplitude of the frequency-f component over the last `tail` samples, by least squares on
// [sin, cos]. Sample peaks miss the true peak whenever fs/f is small.
inline double tail_amplitude(const Eigen::VectorXd& x, double f, double fs, int tail) {
  double ss = 0, cc = 0, sc = 0, xs = 0, xc = 0;
  for (int i = static_cast<int>(x.size()) - tail; i < x.size(); ++i) {
    const double s = std::sin(2 * std::numbers::pi * f * i / fs), c = std::cos(2 * std::numbers::pi * f * i / fs);
    ss += s * s;
    cc += c * c;
    sc += s * c;
    xs += x[i] * s;
    xc += x[i] * c;
  }
  const double det = ss * cc - sc * sc;
  const double a = (xs * cc - xc * sc) / det, b = (xc * ss - xs * sc) / det;
  return std::hypot(a, b);
}

inline protoecg::EcgRecord random_record(Gen& g, const std::string& id, int fold, std::vector<std::string> codes) {
  protoecg::EcgRecord r;
  r.id = id;
  r.fold = fold;
  r.signal = protoecg::SignalMatrix(protoecg::kLeads, protoecg::kSamples);
  for (int l = 0; l < protoecg::kLeads; ++l)
    for (int t = 0; t < protoecg::kSamples; ++t) r.signal(l, t) = static_cast<float>(0.3 * g.normal());
  r.labels = protoecg::encode_labels(codes);
  return r;
}

// Central finite-difference gradient of f at x.
inline Eigen::MatrixXd numeric_gradient(const std::function<double(const Eigen::MatrixXd&)>& f, Eigen::MatrixXd x,
                                        double h = 1e-4) {
  Eigen::MatrixXd g(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      const double orig = x(i, j);
      x(i, j) = orig + h;
      const double up = f(x);
      x(i, j) = orig - h;
      const double down = f(x);
      x(i, j) = orig;
      g(i, j) = (up - down) / (2 * h);
    }
  }
  return g;
}

inline double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-9});
  return (a - b).norm() / scale;
}

// Relative error with a 1e-9 floor: terms that cancel to zero analytically land at ~1e-16
// numerically, where a pure ratio is meaningless.
inline double relative_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-9}); }

// ---- training -------------------------------------------------------------

// One branch batch with random geometry for finite-difference checks of the full objective.
struct GradientInstance {
  protoecg::BranchModel model;
  std::vector<protoecg::LatentMap> latents;
  Eigen::MatrixXd labels;
  protoecg::CoOccurrenceMatrix co;
  protoecg::LossConfig loss;
  int top_k = 2;
};

inline GradientInstance random_gradient_instance(Gen& g) {
  using namespace protoecg;
  GradientInstance in;
  const int c = g.integer(1, 4), p = g.integer(std::max(2, c), 7), n = g.integer(1, 5);
  const bool partial = g.coin();
  // D >= 2: a single-element prototype has cosine +-1 everywhere and a zero gradient
  const int window = partial ? g.integer(1, 3) : g.integer(1, 4);
  const int channels = g.integer(window == 1 ? 2 : 1, 4);
  const int length = partial ? g.integer(window + 1, 8) : window;
  in.model.bank = testsupport::small_bank(partial ? PrototypeKind::Partial2D : PrototypeKind::Global2D, channels, window,
                                          length, g.assignment(p, c), c, g, g.uniform(0.5, 3));
  in.model.head = init_classifier(in.model.bank.class_of, c);
  in.model.head.weights += 0.3 * g.gaussian(c, p);
  in.model.head.bias = g.gaussian(c, 1);
  for (int i = 0; i < n; ++i) in.latents.push_back(g.latent(channels, length));
  in.labels = g.multi_hot(n, c, 0.4);
  in.co = jaccard_matrix(in.labels, in.model.bank.class_of);
  in.loss.class_weights = g.matrix(c, 1, 0.5, 2);
  in.top_k = g.integer(1, 3);
  return in;
}

}  // namespace testsupport
