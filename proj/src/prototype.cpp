#include "protoecg/prototype.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "protoecg/container.hpp"
#include "protoecg/errors.hpp"

namespace protoecg {

namespace {

constexpr std::string_view kBankMagic = "PECGBANK";

// Raw dot products of every prototype with every window of one latent map (P x offsets),
// plus the window norms.
struct WindowDots {
  Eigen::MatrixXd dots;
  Eigen::VectorXd window_norm;
};

WindowDots window_dots(const LatentMap& z, const PrototypeBank& bank) {
  if (z.rows() != bank.channels || z.cols() != bank.latent_length) {
    throw ConfigurationError("latent map " + std::to_string(z.rows()) + "x" +
                             std::to_string(z.cols()) + " does not match bank geometry " +
                             std::to_string(bank.channels) + "x" +
                             std::to_string(bank.latent_length));
  }
  const int w = bank.window;
  const int offsets = bank.num_offsets();
  const int p = bank.size();
  WindowDots out;
  if (offsets == 1) {
    const Eigen::VectorXd patch = latent_patch(z, 0, w);
    out.dots = bank.vectors * patch;
    out.window_norm = Eigen::VectorXd::Constant(1, patch.norm());
    return out;
  }
  out.dots = Eigen::MatrixXd::Zero(p, offsets);
  for (int t = 0; t < w; ++t) {
    Eigen::Map<const Eigen::MatrixXd, 0, Eigen::OuterStride<>> cols(
        bank.vectors.data() + static_cast<Eigen::Index>(t) * p, p, bank.channels,
        Eigen::OuterStride<>(static_cast<Eigen::Index>(w) * p));
    const Eigen::MatrixXd q = cols * z;  // P x L
    out.dots += q.middleCols(t, offsets);
  }
  const Eigen::VectorXd col_sq = z.colwise().squaredNorm().transpose();
  out.window_norm.resize(offsets);
  for (int o = 0; o < offsets; ++o) out.window_norm[o] = std::sqrt(col_sq.segment(o, w).sum());
  return out;
}

std::vector<int> topk_indices(const double* scores, int n, int k) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, n);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });
  idx.resize(k);
  return idx;
}

}  // namespace

std::string_view kind_name(PrototypeKind k) {
  switch (k) {
    case PrototypeKind::Global1D:
      return "GLOBAL_1D";
    case PrototypeKind::Partial2D:
      return "PARTIAL_2D";
    case PrototypeKind::Global2D:
      return "GLOBAL_2D";
  }
  return "UNKNOWN";
}

PrototypeKind parse_kind(std::string_view name) {
  for (auto k : {PrototypeKind::Global1D, PrototypeKind::Partial2D, PrototypeKind::Global2D}) {
    if (kind_name(k) == name) return k;
  }
  throw ConfigurationError("unknown prototype kind '" + std::string(name) + "'");
}

std::pair<int, int> kind_geometry(PrototypeKind kind) {
  switch (kind) {
    case PrototypeKind::Global1D:
      return {1, 1};
    case PrototypeKind::Partial2D:
      return {kPartialWindow, kLatentLength2D};
    case PrototypeKind::Global2D:
      return {kLatentLength2D, kLatentLength2D};
  }
  return {1, 1};
}

double default_scale(int dim) { return std::sqrt(static_cast<double>(dim)); }

bool PrototypeBank::projected() const {
  return !provenance.empty() &&
         std::all_of(provenance.begin(), provenance.end(), [](const auto& p) { return p.has_value(); });
}

std::vector<int> PrototypeBank::prototypes_of_class(int c) const {
  std::vector<int> out;
  for (int j = 0; j < size(); ++j) {
    if (class_of[j] == c) out.push_back(j);
  }
  return out;
}

void PrototypeBank::validate() const {
  if (dim() != channels * window) throw ConfigurationError("bank dimension does not match channels x window");
  if (window > latent_length) throw ConfigurationError("prototype window wider than latent map");
  if (static_cast<int>(class_of.size()) != size()) throw ConfigurationError("class_of length != P");
  if (!provenance.empty() && static_cast<int>(provenance.size()) != size()) {
    throw ConfigurationError("provenance length != P");
  }
  if (!(scale > 0.0)) throw ConfigurationError("bank scale must be positive");
  std::vector<int> count(num_classes(), 0);
  for (int c : class_of) {
    if (c < 0 || c >= num_classes()) throw ConfigurationError("prototype class index out of range");
    ++count[c];
  }
  for (int c = 0; c < num_classes(); ++c) {
    if (count[c] == 0) throw ConfigurationError("class " + class_codes[c] + " has no prototype");
  }
  if (!vectors.allFinite()) throw NumericError("non-finite prototype vector");
  for (int j = 0; j < size(); ++j) {
    if (vectors.row(j).squaredNorm() == 0.0) {
      throw DegenerateInputError("prototype " + std::to_string(j) + " has zero norm");
    }
  }
}

PrototypeBank PrototypeBank::create(PrototypeKind kind, std::vector<std::string> class_codes,
                                    int per_class, std::uint64_t seed, double scale) {
  if (per_class < 1) throw ConfigurationError("need at least one prototype per class");
  if (class_codes.empty()) throw ConfigurationError("bank needs at least one class");
  PrototypeBank bank;
  bank.kind = kind;
  std::tie(bank.window, bank.latent_length) = kind_geometry(kind);
  bank.class_codes = std::move(class_codes);
  const int p = per_class * bank.num_classes();
  const int d = bank.channels * bank.window;
  bank.vectors.resize(p, d);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (int j = 0; j < p; ++j) {
    for (int k = 0; k < d; ++k) bank.vectors(j, k) = dist(rng);
  }
  for (int c = 0; c < bank.num_classes(); ++c) {
    for (int r = 0; r < per_class; ++r) bank.class_of.push_back(c);
  }
  bank.provenance.assign(p, std::nullopt);
  bank.scale = scale > 0.0 ? scale : default_scale(d);
  return bank;
}

void PrototypeBank::save(const std::filesystem::path& path) const {
  validate();
  nlohmann::json prov = nlohmann::json::array();
  for (const auto& p : provenance) {
    if (p) {
      prov.push_back({{"record_id", p->record_id},
                      {"record_index", p->record_index},
                      {"window_start", p->window_start},
                      {"window_width", p->window_width}});
    } else {
      prov.push_back(nullptr);
    }
  }
  Container c;
  c.header = {{"format", "protoecg-bank"},
              {"version", 1},
              {"kind", std::string(kind_name(kind))},
              {"P", size()},
              {"D", dim()},
              {"a", scale},
              {"channels", channels},
              {"window", window},
              {"latent_length", latent_length},
              {"class_codes", class_codes},
              {"class_of", class_of},
              {"provenance", prov}};
  NamedArray arr{"vectors", {size(), dim()}, {}};
  arr.values.reserve(static_cast<std::size_t>(size()) * dim());
  for (int j = 0; j < size(); ++j) {
    for (int k = 0; k < dim(); ++k) arr.values.push_back(static_cast<float>(vectors(j, k)));
  }
  c.arrays.push_back(std::move(arr));
  write_container(path, kBankMagic, std::move(c));
}

PrototypeBank PrototypeBank::load(const std::filesystem::path& path) {
  const Container c = read_container(path, kBankMagic);
  const auto& h = c.header;
  PrototypeBank bank;
  bank.kind = parse_kind(h.at("kind").get<std::string>());
  bank.channels = h.at("channels").get<int>();
  bank.window = h.at("window").get<int>();
  bank.latent_length = h.at("latent_length").get<int>();
  bank.scale = h.at("a").get<double>();
  bank.class_codes = h.at("class_codes").get<std::vector<std::string>>();
  bank.class_of = h.at("class_of").get<std::vector<int>>();
  const int p = h.at("P").get<int>();
  const int d = h.at("D").get<int>();
  const auto& arr = c.array("vectors");
  if (arr.values.size() != static_cast<std::size_t>(p) * d) throw ShapeError("bank payload size mismatch");
  bank.vectors.resize(p, d);
  for (int j = 0; j < p; ++j) {
    for (int k = 0; k < d; ++k) bank.vectors(j, k) = arr.values[static_cast<std::size_t>(j) * d + k];
  }
  for (const auto& e : h.at("provenance")) {
    if (e.is_null()) {
      bank.provenance.emplace_back(std::nullopt);
    } else {
      bank.provenance.emplace_back(Provenance{e.at("record_id").get<std::string>(),
                                              e.at("record_index").get<int>(),
                                              e.at("window_start").get<int>(),
                                              e.at("window_width").get<int>()});
    }
  }
  bank.validate();
  return bank;
}

double similarity(const Eigen::Ref<const Eigen::VectorXd>& z, const Eigen::Ref<const Eigen::VectorXd>& p,
                  double a) {
  if (z.size() != p.size()) throw ConfigurationError("similarity operands differ in length");
  const double nz = z.norm();
  const double np = p.norm();
  if (nz == 0.0 || np == 0.0) throw DegenerateInputError("similarity of a zero-norm vector is undefined");
  return a * z.dot(p) / (nz * np);
}

Eigen::VectorXd latent_patch(const LatentMap& map, int start, int window) {
  if (start < 0 || start + window > map.cols()) throw ConfigurationError("latent patch out of range");
  Eigen::VectorXd v(map.rows() * window);
  for (Eigen::Index c = 0; c < map.rows(); ++c) {
    for (int t = 0; t < window; ++t) v[c * window + t] = map(c, start + t);
  }
  return v;
}

std::vector<double> sliding_similarity(const LatentMap& map, const Eigen::Ref<const Eigen::VectorXd>& prototype,
                                       int window, double a) {
  if (window < 1 || window > map.cols()) {
    throw ConfigurationError("window of width " + std::to_string(window) + " does not fit a latent map of length " +
                             std::to_string(map.cols()));
  }
  if (prototype.size() != map.rows() * window) throw ConfigurationError("prototype length != channels x window");
  const int offsets = static_cast<int>(map.cols()) - window + 1;
  std::vector<double> out(offsets);
  for (int o = 0; o < offsets; ++o) out[o] = similarity(latent_patch(map, o, window), prototype, a);
  return out;
}

double topk_pool(std::span<const double> scores, int k) {
  if (scores.empty()) throw ValidationError("top-k pooling of an empty score list");
  if (k < 1) throw ConfigurationError("top-k pooling needs k >= 1");
  const int n = static_cast<int>(scores.size());
  const auto idx = topk_indices(scores.data(), n, k);
  double s = 0.0;
  for (int i : idx) s += scores[i];
  return s / static_cast<double>(idx.size());
}

BankActivation bank_forward(const std::vector<LatentMap>& latents, const PrototypeBank& bank, int top_k) {
  const int n = static_cast<int>(latents.size());
  const int p = bank.size();
  const int offsets = bank.num_offsets();
  const Eigen::VectorXd proto_norm = bank.vectors.rowwise().norm();
  for (int j = 0; j < p; ++j) {
    if (proto_norm[j] == 0.0) throw DegenerateInputError("prototype " + std::to_string(j) + " has zero norm");
  }
  BankActivation act;
  act.scores.resize(n, p);
  act.chosen.assign(static_cast<std::size_t>(n) * p, {});
  std::vector<double> row(offsets);
  for (int i = 0; i < n; ++i) {
    const WindowDots wd = window_dots(latents[i], bank);
    for (int o = 0; o < offsets; ++o) {
      if (wd.window_norm[o] == 0.0) {
        throw DegenerateInputError("latent window at offset " + std::to_string(o) + " has zero norm");
      }
    }
    for (int j = 0; j < p; ++j) {
      for (int o = 0; o < offsets; ++o) {
        row[o] = bank.scale * wd.dots(j, o) / (proto_norm[j] * wd.window_norm[o]);
      }
      auto& chosen = act.chosen[static_cast<std::size_t>(i) * p + j];
      chosen = offsets == 1 ? std::vector<int>{0} : topk_indices(row.data(), offsets, top_k);
      double s = 0.0;
      for (int o : chosen) s += row[o];
      act.scores(i, j) = s / static_cast<double>(chosen.size());
    }
  }
  return act;
}

void bank_backward(const std::vector<LatentMap>& latents, const PrototypeBank& bank, const BankActivation& act,
                   const Eigen::MatrixXd& grad_scores, Eigen::MatrixXd* grad_prototypes,
                   std::vector<LatentMap>* grad_latents) {
  const int n = static_cast<int>(latents.size());
  const int p = bank.size();
  const int w = bank.window;
  if (grad_prototypes) {
    if (grad_prototypes->rows() != p || grad_prototypes->cols() != bank.dim()) {
      *grad_prototypes = Eigen::MatrixXd::Zero(p, bank.dim());
    }
  }
  if (grad_latents) {
    grad_latents->resize(n);
    for (int i = 0; i < n; ++i) {
      if ((*grad_latents)[i].rows() != latents[i].rows() || (*grad_latents)[i].cols() != latents[i].cols()) {
        (*grad_latents)[i] = LatentMap::Zero(latents[i].rows(), latents[i].cols());
      }
    }
  }
  const Eigen::VectorXd proto_norm = bank.vectors.rowwise().norm();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) {
      const double g = grad_scores(i, j);
      if (g == 0.0) continue;
      const auto& chosen = act.chosen[static_cast<std::size_t>(i) * p + j];
      const double share = g / static_cast<double>(chosen.size());
      const auto pj = bank.vectors.row(j).transpose();
      for (int o : chosen) {
        const Eigen::VectorXd z = latent_patch(latents[i], o, w);
        const double nz = z.norm();
        const double np = proto_norm[j];
        const double dot = z.dot(pj);
        const double k = share * bank.scale / (nz * np);
        if (grad_prototypes) {
          grad_prototypes->row(j) += (k * (z - (dot / (np * np)) * pj)).transpose();
        }
        if (grad_latents) {
          const Eigen::VectorXd dz = k * (pj - (dot / (nz * nz)) * z);
          auto& gl = (*grad_latents)[i];
          for (Eigen::Index c = 0; c < gl.rows(); ++c) {
            for (int t = 0; t < w; ++t) gl(c, o + t) += dz[c * w + t];
          }
        }
      }
    }
  }
}

Eigen::VectorXd similarity_profile(std::span<const BranchLatent> branches, int top_k) {
  int total = 0;
  int last_kind = -1;
  for (const auto& b : branches) {
    const int k = static_cast<int>(b.bank->kind);
    if (k <= last_kind) {
      throw ConfigurationError("similarity profile branches must follow the order GLOBAL_1D, PARTIAL_2D, GLOBAL_2D");
    }
    last_kind = k;
    total += b.bank->size();
  }
  Eigen::VectorXd out(total);
  int at = 0;
  for (const auto& b : branches) {
    const auto act = bank_forward({*b.latent}, *b.bank, top_k);
    out.segment(at, b.bank->size()) = act.scores.row(0).transpose();
    at += b.bank->size();
  }
  return out;
}

PrototypeBank project_prototypes(const PrototypeBank& bank, const std::vector<LatentMap>& latents,
                                 const Eigen::MatrixXd& labels, const std::vector<std::string>& record_ids) {
  const int n = static_cast<int>(latents.size());
  if (labels.rows() != n || static_cast<int>(record_ids.size()) != n) {
    throw ConfigurationError("projection inputs disagree on the number of records");
  }
  if (labels.cols() != bank.num_classes()) throw ConfigurationError("label columns != bank classes");
  for (int c = 0; c < bank.num_classes(); ++c) {
    if (labels.col(c).maxCoeff() <= 0.0) {
      throw ProjectionError("class " + bank.class_codes[c] + " has no positive training record to project onto");
    }
  }
  const int p = bank.size();
  const int offsets = bank.num_offsets();
  const Eigen::VectorXd proto_norm = bank.vectors.rowwise().norm();
  std::vector<double> best(p, -std::numeric_limits<double>::infinity());
  std::vector<int> best_record(p, -1), best_offset(p, -1);

  for (int i = 0; i < n; ++i) {
    const WindowDots wd = window_dots(latents[i], bank);
    for (int j = 0; j < p; ++j) {
      if (labels(i, bank.class_of[j]) <= 0.0) continue;
      for (int o = 0; o < offsets; ++o) {
        if (wd.window_norm[o] == 0.0) continue;
        const double s = bank.scale * wd.dots(j, o) / (proto_norm[j] * wd.window_norm[o]);
        if (s > best[j]) {
          best[j] = s;
          best_record[j] = i;
          best_offset[j] = o;
        }
      }
    }
  }

  PrototypeBank out = bank;
  out.provenance.assign(p, std::nullopt);
  for (int j = 0; j < p; ++j) {
    if (best_record[j] < 0) {
      throw ProjectionError("no nonzero latent patch available for class " + bank.class_codes[bank.class_of[j]]);
    }
    out.vectors.row(j) = latent_patch(latents[best_record[j]], best_offset[j], bank.window).transpose();
    out.provenance[j] = Provenance{record_ids[best_record[j]], best_record[j], best_offset[j], bank.window};
  }
  return out;
}

}  // namespace protoecg
