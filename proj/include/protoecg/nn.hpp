#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace protoecg::nn {

// Dense NCHW batch.
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, double fill = 0.0)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  double* sample(int i) { return data.data() + i * sample_size(); }
  const double* sample(int i) const { return data.data() + i * sample_size(); }
  double& at(int ni, int ci, int hi, int wi) {
    return data[((static_cast<std::size_t>(ni) * c + ci) * h + hi) * w + wi];
  }
  double at(int ni, int ci, int hi, int wi) const {
    return data[((static_cast<std::size_t>(ni) * c + ci) * h + hi) * w + wi];
  }
  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;
  // Buffers (e.g. batch-norm running statistics) are serialized but never optimized.
  bool is_buffer = false;

  Parameter(std::string n, std::vector<int> s, bool buffer = false);
  void zero_grad();
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  // Consumes dL/d(output) of the most recent training forward; accumulates parameter
  // gradients and returns dL/d(input).
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect(const std::string& prefix, std::vector<Parameter*>& out) {
    (void)prefix;
    (void)out;
  }
  virtual void init(std::mt19937_64& rng) { (void)rng; }
  // The first layer of a network never needs dL/d(input).
  bool skip_input_grad = false;
};

struct Conv2dOptions {
  int in_channels = 1;
  int out_channels = 1;
  int kernel_h = 1, kernel_w = 1;
  int stride_h = 1, stride_w = 1;
  int pad_h = 0, pad_w = 0;
  bool bias = true;
};

// im2col + GEMM convolution.
class Conv2d : public Layer {
 public:
  explicit Conv2d(const Conv2dOptions& o);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, std::vector<Parameter*>& out) override;
  void init(std::mt19937_64& rng) override;

  int out_h(int in_h) const { return (in_h + 2 * opt_.pad_h - opt_.kernel_h) / opt_.stride_h + 1; }
  int out_w(int in_w) const { return (in_w + 2 * opt_.pad_w - opt_.kernel_w) / opt_.stride_w + 1; }
  const Conv2dOptions& options() const { return opt_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  Conv2dOptions opt_;
  Parameter weight_;
  Parameter bias_;
  int in_h_ = 0, in_w_ = 0;
  std::vector<std::vector<double>> cols_;
};

class BatchNorm2d : public Layer {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, std::vector<Parameter*>& out) override;
  void init(std::mt19937_64& rng) override;

 private:
  int channels_;
  double momentum_, eps_;
  Parameter gamma_, beta_, running_mean_, running_var_;
  Tensor x_hat_;
  std::vector<double> inv_std_;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::vector<std::uint8_t> mask_;
};

class MaxPool2d : public Layer {
 public:
  MaxPool2d(int kernel_h, int kernel_w, int stride_h, int stride_w, int pad_h, int pad_w);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  int kh_, kw_, sh_, sw_, ph_, pw_;
  int in_n_ = 0, in_c_ = 0, in_h_ = 0, in_w_ = 0;
  std::vector<std::size_t> argmax_;
};

// Averages each channel over (h, w), producing N x C x 1 x 1.
class GlobalAvgPool : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  int in_h_ = 0, in_w_ = 0;
};

class Sequential : public Layer {
 public:
  Sequential() = default;
  Sequential& add(std::string name, std::unique_ptr<Layer> layer);
  template <typename L, typename... Args>
  L& emplace(std::string name, Args&&... args) {
    auto p = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *p;
    add(std::move(name), std::move(p));
    return ref;
  }

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, std::vector<Parameter*>& out) override;
  void init(std::mt19937_64& rng) override;
  std::size_t size() const { return layers_.size(); }

 private:
  std::vector<std::string> names_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Residual basic block: conv-bn-relu-conv-bn plus identity or projected shortcut, then relu.
// Kernel shapes are (kernel_h x kernel_w) with "same" padding; the stride applies to width
// and, when stride_h > 1, height.
class BasicBlock : public Layer {
 public:
  BasicBlock(int in_channels, int out_channels, int kernel_h, int kernel_w, int stride_h,
             int stride_w);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, std::vector<Parameter*>& out) override;
  void init(std::mt19937_64& rng) override;

 private:
  Sequential main_;
  std::unique_ptr<Sequential> shortcut_;
  ReLU out_relu_;
};

}  // namespace protoecg::nn
