#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "protoecg/nn.hpp"
#include "protoecg/signal_io.hpp"

namespace protoecg {

inline constexpr int kLatentChannels = 512;
inline constexpr int kLatentLength2D = 32;

// Channels x latent-time. The 1D extractor produces a single column.
using LatentMap = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ExtractorVariant {
  Tiny1D,      // two conv stages, pooled to a 512-vector
  Tiny2D,      // two conv stages, 512 x 1 x 32 map
  ResNet1D18,  // 1D residual network, pooled to a 512-vector
  ResNet2D18,  // 2D residual network with a (12 x 7) stem and no final pooling
};

std::string_view variant_name(ExtractorVariant v);
ExtractorVariant parse_variant(std::string_view name);
bool variant_is_2d(ExtractorVariant v);

struct LatentShape {
  int channels = kLatentChannels;
  int length = 1;
};

// Maps a batch of 12 x 1000 signals to latent maps. The four variants share one output
// contract so downstream code never depends on which one is installed.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(ExtractorVariant variant, std::uint64_t seed = 0);
  FeatureExtractor(FeatureExtractor&&) noexcept = default;
  FeatureExtractor& operator=(FeatureExtractor&&) noexcept = default;

  ExtractorVariant variant() const { return variant_; }
  bool is_2d() const { return variant_is_2d(variant_); }
  LatentShape latent_shape() const;

  // 1D variants consume N x 12 x 1 x 1000, 2D variants N x 1 x 12 x 1000.
  nn::Tensor make_input(const std::vector<const SignalMatrix*>& signals) const;

  // Returns N x 512 x 1 x L.
  nn::Tensor forward(const nn::Tensor& input, bool train);
  std::vector<LatentMap> forward_latents(const std::vector<const SignalMatrix*>& signals,
                                         bool train = false);
  // Accumulates parameter gradients for the most recent training forward.
  void backward(const nn::Tensor& grad_latent);

  std::vector<nn::Parameter*> parameters();
  void zero_grad();
  // FNV-1a over every parameter and buffer value.
  std::uint64_t checksum();

  std::vector<std::vector<double>> state();
  void load_state(const std::vector<std::vector<double>>& state);

  void save(const std::filesystem::path& path);
  static FeatureExtractor load(const std::filesystem::path& path);
  // Copies every array whose name and shape match a parameter of this network; returns the
  // number copied. Used for externally pretrained backbone weights.
  int load_matching_weights(const std::filesystem::path& path);

 private:
  ExtractorVariant variant_;
  std::unique_ptr<nn::Sequential> net_;
};

std::vector<LatentMap> split_latents(const nn::Tensor& t);
nn::Tensor stack_latents(const std::vector<LatentMap>& maps);

// Single-record conveniences.
Eigen::VectorXd extract_1d(const SignalMatrix& signal, FeatureExtractor& extractor);
LatentMap extract_2d(const SignalMatrix& signal, FeatureExtractor& extractor);

}  // namespace protoecg
