#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "protoecg/extractors.hpp"

namespace protoecg {

enum class PrototypeKind { Global1D = 0, Partial2D = 1, Global2D = 2 };

std::string_view kind_name(PrototypeKind k);
PrototypeKind parse_kind(std::string_view name);

inline constexpr int kPartialWindow = 3;
inline constexpr int kDefaultTopK = 5;

// Where a projected prototype came from: a training record and a latent time window.
struct Provenance {
  std::string record_id;
  int record_index = 0;   // position within the training split used for projection
  int window_start = 0;   // latent time step
  int window_width = 1;   // latent time steps

  bool operator==(const Provenance&) const = default;
};

// Prototype vectors of one branch. Vector j is a flattened channels x window patch in
// channel-major order (element c*window + t).
struct PrototypeBank {
  PrototypeKind kind = PrototypeKind::Global1D;
  int channels = kLatentChannels;
  int window = 1;
  int latent_length = 1;
  double scale = 1.0;
  Eigen::MatrixXd vectors;               // P x D
  std::vector<int> class_of;             // P entries, index into class_codes
  std::vector<std::string> class_codes;  // branch-local classes
  std::vector<std::optional<Provenance>> provenance;

  int size() const { return static_cast<int>(vectors.rows()); }
  int dim() const { return static_cast<int>(vectors.cols()); }
  int num_classes() const { return static_cast<int>(class_codes.size()); }
  int num_offsets() const { return latent_length - window + 1; }
  bool projected() const;
  std::vector<int> prototypes_of_class(int c) const;

  // Checks the structural invariants (class coverage, finiteness, nonzero rows, shapes).
  void validate() const;

  // Random initialization with `per_class` prototypes per class. scale <= 0 selects sqrt(D).
  static PrototypeBank create(PrototypeKind kind, std::vector<std::string> class_codes,
                              int per_class, std::uint64_t seed, double scale = 0.0);

  void save(const std::filesystem::path& path) const;
  static PrototypeBank load(const std::filesystem::path& path);
};

double default_scale(int dim);

// Window geometry (window, latent length) for a kind.
std::pair<int, int> kind_geometry(PrototypeKind kind);

// a * cos(z, p). Throws DegenerateInputError when either vector has zero norm.
double similarity(const Eigen::Ref<const Eigen::VectorXd>& z,
                  const Eigen::Ref<const Eigen::VectorXd>& p, double a);

// One score per start offset (stride 1) of a `window`-wide slice of the latent map.
std::vector<double> sliding_similarity(const LatentMap& map,
                                       const Eigen::Ref<const Eigen::VectorXd>& prototype,
                                       int window, double a);

// Mean of the k largest scores; k is clamped to the number of scores.
double topk_pool(std::span<const double> scores, int k);

// Flattened latent patch at a start offset, channel-major.
Eigen::VectorXd latent_patch(const LatentMap& map, int start, int window);

// Per-record prototype scores with the bookkeeping needed for backpropagation.
struct BankActivation {
  Eigen::MatrixXd scores;               // N x P
  std::vector<std::vector<int>> chosen;  // [n * P + p] -> offsets averaged into the score
};

// Global kinds score the single full-width window; partial kinds top-k pool the sliding
// scores.
BankActivation bank_forward(const std::vector<LatentMap>& latents, const PrototypeBank& bank,
                            int top_k = kDefaultTopK);

// Given dL/d(scores), accumulates dL/d(prototype vectors) (P x D) and, if requested,
// dL/d(latents).
void bank_backward(const std::vector<LatentMap>& latents, const PrototypeBank& bank,
                   const BankActivation& act, const Eigen::MatrixXd& grad_scores,
                   Eigen::MatrixXd* grad_prototypes, std::vector<LatentMap>* grad_latents);

// One branch's latent map paired with its bank.
struct BranchLatent {
  const LatentMap* latent;
  const PrototypeBank* bank;
};

// Concatenates per-branch scores in kind order Global1D, Partial2D, Global2D. Branches may
// be omitted but never reordered.
Eigen::VectorXd similarity_profile(std::span<const BranchLatent> branches, int top_k = kDefaultTopK);

// Replaces every prototype by the most similar latent patch among training records that
// carry its class. `labels` is N x num_classes (branch-local). Ties go to the lowest
// (record index, window offset); zero-norm patches are never candidates.
PrototypeBank project_prototypes(const PrototypeBank& bank, const std::vector<LatentMap>& latents,
                                 const Eigen::MatrixXd& labels,
                                 const std::vector<std::string>& record_ids);

}  // namespace protoecg
