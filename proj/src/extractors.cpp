#include "protoecg/extractors.hpp"

#include <cstring>

#include "protoecg/container.hpp"
#include "protoecg/errors.hpp"

namespace protoecg {

namespace {

constexpr std::string_view kCheckpointMagic = "PECGCKPT";

using nn::BasicBlock;
using nn::BatchNorm2d;
using nn::Conv2d;
using nn::Conv2dOptions;
using nn::GlobalAvgPool;
using nn::MaxPool2d;
using nn::ReLU;
using nn::Sequential;

std::unique_ptr<Sequential> build_tiny(bool two_d) {
  auto net = std::make_unique<Sequential>();
  if (two_d) {
    // 1 x 12 x 1000 -> 32 x 1 x 250
    net->emplace<Conv2d>("stage1", Conv2dOptions{1, 32, 12, 8, 1, 4, 0, 2, true});
  } else {
    // 12 x 1 x 1000 -> 32 x 1 x 250
    net->emplace<Conv2d>("stage1", Conv2dOptions{kLeads, 32, 1, 8, 1, 4, 0, 2, true});
  }
  net->emplace<ReLU>("relu1");
  // -> 512 x 1 x 32
  net->emplace<Conv2d>("stage2", Conv2dOptions{32, kLatentChannels, 1, 8, 1, 8, 0, 3, true});
  if (!two_d) net->emplace<GlobalAvgPool>("pool");
  return net;
}

void add_resnet_layers(Sequential& net, int kh, int kw) {
  const int widths[] = {64, 128, 256, 512};
  int in = 64;
  for (int stage = 0; stage < 4; ++stage) {
    const int stride = stage == 0 ? 1 : 2;
    auto layer = std::make_unique<Sequential>();
    layer->emplace<BasicBlock>("0", in, widths[stage], kh, kw, kh > 1 ? stride : 1, stride);
    layer->emplace<BasicBlock>("1", widths[stage], widths[stage], kh, kw, 1, 1);
    net.add("layer" + std::to_string(stage + 1), std::move(layer));
    in = widths[stage];
  }
}

std::unique_ptr<Sequential> build_resnet(bool two_d) {
  auto net = std::make_unique<Sequential>();
  if (two_d) {
    // (12 x 7) stem collapses the lead axis: 1 x 12 x 1000 -> 64 x 1 x 500
    net->emplace<Conv2d>("conv1", Conv2dOptions{1, 64, 12, 7, 1, 2, 0, 3, false});
    net->emplace<BatchNorm2d>("bn1", 64);
    net->emplace<ReLU>("relu");
    net->emplace<MaxPool2d>("maxpool", 3, 3, 2, 2, 1, 1);  // -> 1 x 250
    add_resnet_layers(*net, 3, 3);                          // -> 512 x 1 x 32
  } else {
    net->emplace<Conv2d>("conv1", Conv2dOptions{kLeads, 64, 1, 7, 1, 2, 0, 3, false});
    net->emplace<BatchNorm2d>("bn1", 64);
    net->emplace<ReLU>("relu");
    net->emplace<MaxPool2d>("maxpool", 1, 3, 1, 2, 0, 1);
    add_resnet_layers(*net, 1, 3);
    net->emplace<GlobalAvgPool>("avgpool");
  }
  return net;
}

}  // namespace

std::string_view variant_name(ExtractorVariant v) {
  switch (v) {
    case ExtractorVariant::Tiny1D:
      return "tiny1d";
    case ExtractorVariant::Tiny2D:
      return "tiny2d";
    case ExtractorVariant::ResNet1D18:
      return "resnet1d18";
    case ExtractorVariant::ResNet2D18:
      return "resnet2d18";
  }
  return "unknown";
}

ExtractorVariant parse_variant(std::string_view name) {
  for (auto v : {ExtractorVariant::Tiny1D, ExtractorVariant::Tiny2D, ExtractorVariant::ResNet1D18,
                 ExtractorVariant::ResNet2D18}) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigurationError("unknown extractor variant '" + std::string(name) + "'");
}

bool variant_is_2d(ExtractorVariant v) {
  return v == ExtractorVariant::Tiny2D || v == ExtractorVariant::ResNet2D18;
}

FeatureExtractor::FeatureExtractor(ExtractorVariant variant, std::uint64_t seed) : variant_(variant) {
  switch (variant) {
    case ExtractorVariant::Tiny1D:
    case ExtractorVariant::Tiny2D:
      net_ = build_tiny(is_2d());
      break;
    case ExtractorVariant::ResNet1D18:
    case ExtractorVariant::ResNet2D18:
      net_ = build_resnet(is_2d());
      break;
  }
  net_->skip_input_grad = true;
  std::mt19937_64 rng(seed);
  net_->init(rng);
}

LatentShape FeatureExtractor::latent_shape() const {
  return {kLatentChannels, is_2d() ? kLatentLength2D : 1};
}

nn::Tensor FeatureExtractor::make_input(const std::vector<const SignalMatrix*>& signals) const {
  const int n = static_cast<int>(signals.size());
  nn::Tensor t = is_2d() ? nn::Tensor(n, 1, kLeads, kSamples) : nn::Tensor(n, kLeads, 1, kSamples);
  for (int i = 0; i < n; ++i) {
    const SignalMatrix& s = *signals[i];
    if (s.rows() != kLeads || s.cols() != kSamples) {
      throw ConfigurationError("extractor input must be 12x1000, got " + std::to_string(s.rows()) +
                               "x" + std::to_string(s.cols()));
    }
    // Both layouts place lead l, sample k at offset l*1000 + k within the sample.
    double* dst = t.sample(i);
    for (Eigen::Index k = 0; k < s.size(); ++k) dst[k] = s.data()[k];
  }
  return t;
}

nn::Tensor FeatureExtractor::forward(const nn::Tensor& input, bool train) {
  const bool ok = is_2d() ? (input.c == 1 && input.h == kLeads && input.w == kSamples)
                          : (input.c == kLeads && input.h == 1 && input.w == kSamples);
  if (!ok) throw ConfigurationError("extractor input tensor has the wrong layout");
  nn::Tensor out = net_->forward(input, train);
  const auto shape = latent_shape();
  if (out.c != shape.channels || out.h != 1 || out.w != shape.length) {
    throw ShapeError("extractor produced " + std::to_string(out.c) + "x" + std::to_string(out.h) +
                     "x" + std::to_string(out.w));
  }
  return out;
}

std::vector<LatentMap> FeatureExtractor::forward_latents(
    const std::vector<const SignalMatrix*>& signals, bool train) {
  return split_latents(forward(make_input(signals), train));
}

void FeatureExtractor::backward(const nn::Tensor& grad_latent) { net_->backward(grad_latent); }

std::vector<nn::Parameter*> FeatureExtractor::parameters() {
  std::vector<nn::Parameter*> out;
  net_->collect("", out);
  return out;
}

void FeatureExtractor::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

std::uint64_t FeatureExtractor::checksum() {
  std::uint64_t h = 1469598103934665603ull;
  for (auto* p : parameters()) {
    for (double v : p->value) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffu;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

std::vector<std::vector<double>> FeatureExtractor::state() {
  std::vector<std::vector<double>> s;
  for (auto* p : parameters()) s.push_back(p->value);
  return s;
}

void FeatureExtractor::load_state(const std::vector<std::vector<double>>& state) {
  auto params = parameters();
  if (params.size() != state.size()) throw ConfigurationError("extractor state size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->value.size() != state[i].size()) {
      throw ConfigurationError("extractor state shape mismatch for " + params[i]->name);
    }
    params[i]->value = state[i];
  }
}

void FeatureExtractor::save(const std::filesystem::path& path) {
  Container c;
  const auto shape = latent_shape();
  c.header = {{"format", "protoecg-extractor"},
              {"variant", std::string(variant_name(variant_))},
              {"latent", {{"channels", shape.channels}, {"height", 1}, {"length", shape.length}}}};
  for (auto* p : parameters()) {
    c.arrays.push_back({p->name, p->shape, std::vector<float>(p->value.begin(), p->value.end())});
  }
  write_container(path, kCheckpointMagic, std::move(c));
}

FeatureExtractor FeatureExtractor::load(const std::filesystem::path& path) {
  Container c = read_container(path, kCheckpointMagic);
  FeatureExtractor ex(parse_variant(c.header.at("variant").get<std::string>()));
  for (auto* p : ex.parameters()) {
    const auto& a = c.array(p->name);
    if (a.shape != p->shape) throw ConfigurationError("checkpoint shape mismatch for " + p->name);
    p->value.assign(a.values.begin(), a.values.end());
  }
  return ex;
}

int FeatureExtractor::load_matching_weights(const std::filesystem::path& path) {
  Container c = read_container(path, kCheckpointMagic);
  int copied = 0;
  for (auto* p : parameters()) {
    if (!c.has_array(p->name)) continue;
    const auto& a = c.array(p->name);
    if (a.shape != p->shape) continue;
    p->value.assign(a.values.begin(), a.values.end());
    ++copied;
  }
  return copied;
}

std::vector<LatentMap> split_latents(const nn::Tensor& t) {
  std::vector<LatentMap> maps;
  maps.reserve(t.n);
  for (int i = 0; i < t.n; ++i) {
    maps.emplace_back(Eigen::Map<const LatentMap>(t.sample(i), t.c, t.h * t.w));
  }
  return maps;
}

nn::Tensor stack_latents(const std::vector<LatentMap>& maps) {
  if (maps.empty()) return {};
  const int c = static_cast<int>(maps[0].rows());
  const int l = static_cast<int>(maps[0].cols());
  nn::Tensor t(static_cast<int>(maps.size()), c, 1, l);
  for (int i = 0; i < t.n; ++i) {
    Eigen::Map<LatentMap>(t.sample(i), c, l) = maps[i];
  }
  return t;
}

Eigen::VectorXd extract_1d(const SignalMatrix& signal, FeatureExtractor& extractor) {
  if (extractor.is_2d()) throw ConfigurationError("extract_1d needs a 1D extractor");
  auto maps = extractor.forward_latents({&signal});
  return Eigen::Map<const Eigen::VectorXd>(maps[0].data(), maps[0].size());
}

LatentMap extract_2d(const SignalMatrix& signal, FeatureExtractor& extractor) {
  if (!extractor.is_2d()) throw ConfigurationError("extract_2d needs a 2D extractor");
  return extractor.forward_latents({&signal})[0];
}

}  // namespace protoecg
