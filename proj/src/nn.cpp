#include "protoecg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Core>

#include "protoecg/errors.hpp"

namespace protoecg::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using ConstMapRow = Eigen::Map<const RowMat>;

namespace {

std::size_t product(const std::vector<int>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

}  // namespace

Parameter::Parameter(std::string n, std::vector<int> s, bool buffer)
    : name(std::move(n)), shape(std::move(s)), value(product(shape), 0.0),
      grad(product(shape), 0.0), is_buffer(buffer) {}

void Parameter::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

// ---- Conv2d ---------------------------------------------------------------

Conv2d::Conv2d(const Conv2dOptions& o)
    : opt_(o),
      weight_("weight", {o.out_channels, o.in_channels, o.kernel_h, o.kernel_w}),
      bias_("bias", {o.bias ? o.out_channels : 0}) {}

void Conv2d::init(std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(opt_.in_channels) * opt_.kernel_h * opt_.kernel_w;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (auto& v : weight_.value) v = dist(rng);
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
}

void Conv2d::collect(const std::string& prefix, std::vector<Parameter*>& out) {
  weight_.name = prefix + "weight";
  out.push_back(&weight_);
  if (opt_.bias) {
    bias_.name = prefix + "bias";
    out.push_back(&bias_);
  }
}

Tensor Conv2d::forward(const Tensor& x, bool train) {
  if (x.c != opt_.in_channels) {
    throw ShapeError("conv expects " + std::to_string(opt_.in_channels) + " input channels, got " +
                     std::to_string(x.c));
  }
  const int oh = out_h(x.h), ow = out_w(x.w);
  if (oh <= 0 || ow <= 0) throw ShapeError("conv input too small for kernel");
  in_h_ = x.h;
  in_w_ = x.w;
  const int k_rows = opt_.in_channels * opt_.kernel_h * opt_.kernel_w;
  const int spatial = oh * ow;

  Tensor y(x.n, opt_.out_channels, oh, ow);
  ConstMapRow wmat(weight_.value.data(), opt_.out_channels, k_rows);
  if (train) cols_.assign(x.n, {});

  std::vector<double> col(static_cast<std::size_t>(k_rows) * spatial);
  for (int ni = 0; ni < x.n; ++ni) {
    const double* in = x.sample(ni);
    for (int ci = 0; ci < opt_.in_channels; ++ci) {
      for (int ki = 0; ki < opt_.kernel_h; ++ki) {
        for (int kj = 0; kj < opt_.kernel_w; ++kj) {
          double* row = col.data() +
                        static_cast<std::size_t>((ci * opt_.kernel_h + ki) * opt_.kernel_w + kj) * spatial;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * opt_.stride_h - opt_.pad_h + ki;
            double* dst = row + oy * ow;
            if (iy < 0 || iy >= x.h) {
              std::fill(dst, dst + ow, 0.0);
              continue;
            }
            const double* src = in + (static_cast<std::size_t>(ci) * x.h + iy) * x.w;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * opt_.stride_w - opt_.pad_w + kj;
              dst[ox] = (ix >= 0 && ix < x.w) ? src[ix] : 0.0;
            }
          }
        }
      }
    }
    ConstMapRow cmat(col.data(), k_rows, spatial);
    MapRow out(y.sample(ni), opt_.out_channels, spatial);
    out.noalias() = wmat * cmat;
    if (opt_.bias) {
      for (int co = 0; co < opt_.out_channels; ++co) out.row(co).array() += bias_.value[co];
    }
    if (train) cols_[ni] = col;
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& g) {
  const int k_rows = opt_.in_channels * opt_.kernel_h * opt_.kernel_w;
  const int oh = g.h, ow = g.w, spatial = oh * ow;
  if (static_cast<int>(cols_.size()) != g.n) throw ShapeError("conv backward without forward cache");

  ConstMapRow wmat(weight_.value.data(), opt_.out_channels, k_rows);
  MapRow dw(weight_.grad.data(), opt_.out_channels, k_rows);
  Tensor dx;
  if (!skip_input_grad) dx = Tensor(g.n, opt_.in_channels, in_h_, in_w_);
  RowMat dcol;
  for (int ni = 0; ni < g.n; ++ni) {
    ConstMapRow gout(g.sample(ni), opt_.out_channels, spatial);
    ConstMapRow cmat(cols_[ni].data(), k_rows, spatial);
    dw.noalias() += gout * cmat.transpose();
    if (opt_.bias) {
      for (int co = 0; co < opt_.out_channels; ++co) bias_.grad[co] += gout.row(co).sum();
    }
    if (skip_input_grad) continue;
    dcol.noalias() = wmat.transpose() * gout;
    double* din = dx.sample(ni);
    for (int ci = 0; ci < opt_.in_channels; ++ci) {
      for (int ki = 0; ki < opt_.kernel_h; ++ki) {
        for (int kj = 0; kj < opt_.kernel_w; ++kj) {
          const double* row = dcol.data() +
                              static_cast<std::size_t>((ci * opt_.kernel_h + ki) * opt_.kernel_w + kj) * spatial;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * opt_.stride_h - opt_.pad_h + ki;
            if (iy < 0 || iy >= in_h_) continue;
            double* dst = din + (static_cast<std::size_t>(ci) * in_h_ + iy) * in_w_;
            const double* src = row + oy * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * opt_.stride_w - opt_.pad_w + kj;
              if (ix >= 0 && ix < in_w_) dst[ix] += src[ox];
            }
          }
        }
      }
    }
  }
  cols_.clear();
  return dx;
}

// ---- BatchNorm2d ----------------------------------------------------------

BatchNorm2d::BatchNorm2d(int channels, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps),
      gamma_("weight", {channels}), beta_("bias", {channels}),
      running_mean_("running_mean", {channels}, true),
      running_var_("running_var", {channels}, true) {
  std::fill(gamma_.value.begin(), gamma_.value.end(), 1.0);
  std::fill(running_var_.value.begin(), running_var_.value.end(), 1.0);
}

void BatchNorm2d::init(std::mt19937_64&) {
  std::fill(gamma_.value.begin(), gamma_.value.end(), 1.0);
  std::fill(beta_.value.begin(), beta_.value.end(), 0.0);
  std::fill(running_mean_.value.begin(), running_mean_.value.end(), 0.0);
  std::fill(running_var_.value.begin(), running_var_.value.end(), 1.0);
}

void BatchNorm2d::collect(const std::string& prefix, std::vector<Parameter*>& out) {
  gamma_.name = prefix + "weight";
  beta_.name = prefix + "bias";
  running_mean_.name = prefix + "running_mean";
  running_var_.name = prefix + "running_var";
  out.insert(out.end(), {&gamma_, &beta_, &running_mean_, &running_var_});
}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
  if (x.c != channels_) throw ShapeError("batch norm channel mismatch");
  const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
  const double m = static_cast<double>(x.n) * hw;
  Tensor y(x.n, x.c, x.h, x.w);
  if (train) {
    x_hat_ = Tensor(x.n, x.c, x.h, x.w);
    inv_std_.assign(channels_, 0.0);
  }
  for (int c = 0; c < channels_; ++c) {
    double mean, var;
    if (train) {
      double s = 0.0;
      for (int n = 0; n < x.n; ++n) {
        const double* p = x.sample(n) + c * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      mean = s / m;
      double ss = 0.0;
      for (int n = 0; n < x.n; ++n) {
        const double* p = x.sample(n) + c * hw;
        for (std::size_t i = 0; i < hw; ++i) ss += (p[i] - mean) * (p[i] - mean);
      }
      var = ss / m;
      const double unbiased = m > 1 ? ss / (m - 1) : var;
      running_mean_.value[c] = (1 - momentum_) * running_mean_.value[c] + momentum_ * mean;
      running_var_.value[c] = (1 - momentum_) * running_var_.value[c] + momentum_ * unbiased;
    } else {
      mean = running_mean_.value[c];
      var = running_var_.value[c];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    if (train) inv_std_[c] = inv;
    for (int n = 0; n < x.n; ++n) {
      const double* p = x.sample(n) + c * hw;
      double* q = y.sample(n) + c * hw;
      double* xh = train ? x_hat_.sample(n) + c * hw : nullptr;
      for (std::size_t i = 0; i < hw; ++i) {
        const double h = (p[i] - mean) * inv;
        if (xh) xh[i] = h;
        q[i] = gamma_.value[c] * h + beta_.value[c];
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& g) {
  const std::size_t hw = static_cast<std::size_t>(g.h) * g.w;
  const double m = static_cast<double>(g.n) * hw;
  Tensor dx(g.n, g.c, g.h, g.w);
  for (int c = 0; c < channels_; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int n = 0; n < g.n; ++n) {
      const double* gp = g.sample(n) + c * hw;
      const double* xh = x_hat_.sample(n) + c * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        sum_g += gp[i];
        sum_gx += gp[i] * xh[i];
      }
    }
    gamma_.grad[c] += sum_gx;
    beta_.grad[c] += sum_g;
    const double k = gamma_.value[c] * inv_std_[c] / m;
    for (int n = 0; n < g.n; ++n) {
      const double* gp = g.sample(n) + c * hw;
      const double* xh = x_hat_.sample(n) + c * hw;
      double* d = dx.sample(n) + c * hw;
      for (std::size_t i = 0; i < hw; ++i) d[i] = k * (m * gp[i] - sum_g - xh[i] * sum_gx);
    }
  }
  return dx;
}

// ---- ReLU -----------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x, bool train) {
  Tensor y = x;
  if (train) mask_.assign(x.size(), 0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool on = y.data[i] > 0.0;
    if (!on) y.data[i] = 0.0;
    if (train) mask_[i] = on;
  }
  return y;
}

Tensor ReLU::backward(const Tensor& g) {
  Tensor d = g;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!mask_[i]) d.data[i] = 0.0;
  }
  return d;
}

// ---- MaxPool2d ------------------------------------------------------------

MaxPool2d::MaxPool2d(int kernel_h, int kernel_w, int stride_h, int stride_w, int pad_h, int pad_w)
    : kh_(kernel_h), kw_(kernel_w), sh_(stride_h), sw_(stride_w), ph_(pad_h), pw_(pad_w) {}

Tensor MaxPool2d::forward(const Tensor& x, bool train) {
  const int oh = (x.h + 2 * ph_ - kh_) / sh_ + 1;
  const int ow = (x.w + 2 * pw_ - kw_) / sw_ + 1;
  Tensor y(x.n, x.c, oh, ow);
  in_n_ = x.n;
  in_c_ = x.c;
  in_h_ = x.h;
  in_w_ = x.w;
  if (train) argmax_.assign(y.size(), 0);
  std::size_t o = 0;
  for (int n = 0; n < x.n; ++n) {
    for (int c = 0; c < x.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * x.c + c) * x.h * x.w;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t arg = base;
          for (int ki = 0; ki < kh_; ++ki) {
            const int iy = oy * sh_ - ph_ + ki;
            if (iy < 0 || iy >= x.h) continue;
            for (int kj = 0; kj < kw_; ++kj) {
              const int ix = ox * sw_ - pw_ + kj;
              if (ix < 0 || ix >= x.w) continue;
              const std::size_t idx = base + static_cast<std::size_t>(iy) * x.w + ix;
              if (x.data[idx] > best) {
                best = x.data[idx];
                arg = idx;
              }
            }
          }
          y.data[o] = best;
          if (train) argmax_[o] = arg;
        }
      }
    }
  }
  return y;
}

Tensor MaxPool2d::backward(const Tensor& g) {
  Tensor dx(in_n_, in_c_, in_h_, in_w_);
  for (std::size_t o = 0; o < g.size(); ++o) dx.data[argmax_[o]] += g.data[o];
  return dx;
}

// ---- GlobalAvgPool --------------------------------------------------------

Tensor GlobalAvgPool::forward(const Tensor& x, bool) {
  in_h_ = x.h;
  in_w_ = x.w;
  const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
  Tensor y(x.n, x.c, 1, 1);
  for (int n = 0; n < x.n; ++n) {
    for (int c = 0; c < x.c; ++c) {
      const double* p = x.sample(n) + c * hw;
      y.at(n, c, 0, 0) = std::accumulate(p, p + hw, 0.0) / static_cast<double>(hw);
    }
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& g) {
  const std::size_t hw = static_cast<std::size_t>(in_h_) * in_w_;
  Tensor dx(g.n, g.c, in_h_, in_w_);
  for (int n = 0; n < g.n; ++n) {
    for (int c = 0; c < g.c; ++c) {
      const double v = g.at(n, c, 0, 0) / static_cast<double>(hw);
      double* p = dx.sample(n) + c * hw;
      std::fill(p, p + hw, v);
    }
  }
  return dx;
}

// ---- Sequential -----------------------------------------------------------

Sequential& Sequential::add(std::string name, std::unique_ptr<Layer> layer) {
  names_.push_back(std::move(name));
  layers_.push_back(std::move(layer));
  return *this;
}

Tensor Sequential::forward(const Tensor& x, bool train) {
  Tensor cur = x;
  for (auto& l : layers_) cur = l->forward(cur, train);
  return cur;
}

Tensor Sequential::backward(const Tensor& g) {
  if (!layers_.empty()) layers_.front()->skip_input_grad = skip_input_grad;
  Tensor cur = g;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
  return cur;
}

void Sequential::collect(const std::string& prefix, std::vector<Parameter*>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->collect(prefix + names_[i] + ".", out);
}

void Sequential::init(std::mt19937_64& rng) {
  for (auto& l : layers_) l->init(rng);
}

// ---- BasicBlock -----------------------------------------------------------

BasicBlock::BasicBlock(int in_channels, int out_channels, int kernel_h, int kernel_w, int stride_h,
                       int stride_w) {
  Conv2dOptions c1{in_channels, out_channels, kernel_h, kernel_w, stride_h, stride_w,
                   kernel_h / 2, kernel_w / 2, false};
  Conv2dOptions c2{out_channels, out_channels, kernel_h, kernel_w, 1, 1, kernel_h / 2, kernel_w / 2,
                   false};
  main_.emplace<Conv2d>("conv1", c1);
  main_.emplace<BatchNorm2d>("bn1", out_channels);
  main_.emplace<ReLU>("relu");
  main_.emplace<Conv2d>("conv2", c2);
  main_.emplace<BatchNorm2d>("bn2", out_channels);
  if (in_channels != out_channels || stride_h != 1 || stride_w != 1) {
    shortcut_ = std::make_unique<Sequential>();
    shortcut_->emplace<Conv2d>(
        "0", Conv2dOptions{in_channels, out_channels, 1, 1, stride_h, stride_w, 0, 0, false});
    shortcut_->emplace<BatchNorm2d>("1", out_channels);
  }
}

Tensor BasicBlock::forward(const Tensor& x, bool train) {
  Tensor y = main_.forward(x, train);
  const Tensor s = shortcut_ ? shortcut_->forward(x, train) : x;
  if (!y.same_shape(s)) throw ShapeError("residual branch shape mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += s.data[i];
  return out_relu_.forward(y, train);
}

Tensor BasicBlock::backward(const Tensor& g) {
  const Tensor gs = out_relu_.backward(g);
  main_.skip_input_grad = skip_input_grad;
  Tensor dx = main_.backward(gs);
  if (skip_input_grad) {
    if (shortcut_) shortcut_->backward(gs);
    return dx;
  }
  const Tensor ds = shortcut_ ? shortcut_->backward(gs) : gs;
  for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += ds.data[i];
  return dx;
}

void BasicBlock::collect(const std::string& prefix, std::vector<Parameter*>& out) {
  main_.collect(prefix, out);
  if (shortcut_) shortcut_->collect(prefix + "downsample.", out);
}

void BasicBlock::init(std::mt19937_64& rng) {
  main_.init(rng);
  if (shortcut_) shortcut_->init(rng);
}

}  // namespace protoecg::nn
