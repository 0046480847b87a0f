// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0

#include "memsave/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "memsave/kernels.hpp"

namespace memsave::layers {

namespace {

bool rg(const Tensor& t) { return t.defined() && t.requires_grad(); }

TapeNode make_node(OpKind op, Policy policy, std::initializer_list<const Tensor*> inputs, const Tensor& output) {
  TapeNode node;
  node.op = op;
  node.policy = policy;
  for (const Tensor* t : inputs) {
    node.inputs.push_back(t->id());
    node.input_shapes.push_back(t->shape());
    node.input_requires_grad.push_back(t->requires_grad());
  }
  node.output = output.id();
  node.output_shape = output.shape();
  node.dtype = output.dtype();
  node.output_requires_grad = output.requires_grad();
  return node;
}

template <typename T>
Tensor make(const Shape& shape, std::vector<T> values, bool requires_grad = false) {
  return Tensor::from_vector<T>(shape, std::move(values), requires_grad);
}

void require(bool ok, ErrorCode code, const std::string& message) {
  if (!ok) throw Error(code, message);
}

void check_param(const Tensor& x, const Tensor& p, const char* what) {
  require(p.defined(), ErrorCode::InvalidConfig, std::string(what) + " is missing");
  check_same_dtype(x, p, what);
}

// Per-channel sum of an (N, C, plane) tensor.
template <typename T>
std::vector<T> channel_sums(std::span<const T> g, std::int64_t n, std::int64_t c, std::int64_t plane) {
  std::vector<T> out(static_cast<std::size_t>(c), T(0));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    T acc = 0;
    for (std::int64_t b = 0; b < n; ++b) {
      const T* p = g.data() + (b * c + ch) * plane;
      for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
    }
    out[static_cast<std::size_t>(ch)] = acc;
  }
  return out;
}

kernels::Conv2dGeometry conv_geometry(const Shape& x, const Shape& w, const ConvConfig& cfg) {
  kernels::Conv2dGeometry g;
  g.batch = x[0];
  g.in_channels = x[1];
  g.in_h = x[2];
  g.in_w = x[3];
  g.out_channels = w[0];
  g.kernel_h = w[2];
  g.kernel_w = w[3];
  g.stride = cfg.stride;
  g.padding = cfg.padding;
  return g;
}

void check_conv_config(const ConvConfig& cfg) {
  require(cfg.stride > 0, ErrorCode::InvalidConfig, "stride must be positive");
  require(cfg.padding >= 0, ErrorCode::InvalidConfig, "padding must be non-negative");
}

}  // namespace

// --- linear -----------------------------------------------------------------

Tensor linear(const Tensor& x, const LayerParams& params, Policy policy, Tape& tape) {
  const Tensor& w = params.weight;
  check_param(x, w, "linear weight");
  require(x.shape().rank() >= 1 && w.shape().rank() == 2 && x.shape().back() == w.shape()[1],
          ErrorCode::ShapeMismatch, "linear: input " + x.shape().to_string() + " vs weight " + w.shape().to_string());
  const bool has_bias = params.bias.defined();
  if (has_bias) {
    check_param(x, params.bias, "linear bias");
    require(params.bias.shape() == Shape{w.shape()[0]}, ErrorCode::ShapeMismatch, "linear bias shape");
  }
  const std::int64_t in = w.shape()[1];
  const std::int64_t out = w.shape()[0];
  const std::int64_t rows = static_cast<std::int64_t>(x.numel()) / in;
  auto out_dims = x.shape().dims();
  out_dims.back() = out;
  const Shape out_shape(out_dims);

  const StorageQuery q{OpKind::Linear, policy, rg(x), rg(w), rg(params.bias)};
  return visit_dtype(x.dtype(), [&]<typename T>() {
    std::vector<T> y(out_shape.numel());
    kernels::matmul(kernels::MatmulGeometry{.batch = 1, .m = rows, .k = in, .n = out, .transpose_b = true},
                    x.values<T>(), w.values<T>(), std::span<T>(y));
    if (has_bias) {
      auto b = params.bias.values<T>();
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t o = 0; o < out; ++o) y[r * out + o] += b[o];
    }
    Tensor result = make<T>(out_shape, std::move(y), q.output_rg());
    if (!q.output_rg()) return result;

    TapeNode node = has_bias ? make_node(OpKind::Linear, policy, {&x, &w, &params.bias}, result)
                             : make_node(OpKind::Linear, policy, {&x, &w}, result);
    for (SavedRole role : required_saves(q)) {
      node.saved.push_back(SavedValue::full_tensor(role, role == SavedRole::Input ? x : w));
    }
    const Shape x_shape = x.shape();
    const Shape w_shape = w.shape();
    node.vjp = [=, x_rg = q.input_rg, w_rg = q.weight_rg, b_rg = q.bias_rg](const Tensor& g,
                                                                          SavedReader& saved) {
      std::vector<Tensor> grads(has_bias ? 3 : 2);
      auto gv = g.values<T>();
      if (x_rg) {
        std::vector<T> dx(x_shape.numel());
        kernels::matmul(kernels::MatmulGeometry{.batch = 1, .m = rows, .k = out, .n = in}, gv,
                        saved.tensor(SavedRole::Weight).values<T>(), std::span<T>(dx));
        grads[0] = make<T>(x_shape, std::move(dx));
      }
      if (w_rg) {
        std::vector<T> dw(w_shape.numel());
        kernels::matmul(kernels::MatmulGeometry{.batch = 1, .m = out, .k = rows, .n = in, .transpose_a = true}, gv,
                        saved.tensor(SavedRole::Input).values<T>(), std::span<T>(dw));
        grads[1] = make<T>(w_shape, std::move(dw));
      }
      if (b_rg) {
        std::vector<T> db(static_cast<std::size_t>(out), T(0));
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t o = 0; o < out; ++o) db[o] += gv[r * out + o];
        grads[2] = make<T>(Shape{out}, std::move(db));
      }
      return grads;
    };
    tape.record(std::move(node));
    return result;
  });
}

// --- conv2d / conv_transpose2d ---------------------------------------------

Tensor conv2d(const Tensor& x, const LayerParams& params, const ConvConfig& cfg, Policy policy, Tape& tape) {
  const Tensor& w = params.weight;
  check_conv_config(cfg);
  check_param(x, w, "conv2d weight");
  require(x.shape().rank() == 4 && w.shape().rank() == 4 && x.shape()[1] == w.shape()[1], ErrorCode::ShapeMismatch,
          "conv2d: input " + x.shape().to_string() + " vs kernel " + w.shape().to_string());
  const auto g = conv_geometry(x.shape(), w.shape(), cfg);
  require(x.shape()[2] + 2 * cfg.padding >= w.shape()[2] && x.shape()[3] + 2 * cfg.padding >= w.shape()[3],
          ErrorCode::ShapeMismatch, "conv2d: kernel larger than padded input");
  const bool has_bias = params.bias.defined();
  if (has_bias) {
    check_param(x, params.bias, "conv2d bias");
    require(params.bias.shape() == Shape{g.out_channels}, ErrorCode::ShapeMismatch, "conv2d bias shape");
  }
  const Shape out_shape{g.batch, g.out_channels, g.out_h(), g.out_w()};
  const StorageQuery q{OpKind::Conv2d, policy, rg(x), rg(w), rg(params.bias)};

  return visit_dtype(x.dtype(), [&]<typename T>() {
    std::vector<T> y(out_shape.numel());
    kernels::conv2d_forward(g, x.values<T>(), w.values<T>(), std::span<T>(y));
    const std::int64_t plane = g.out_h() * g.out_w();
    if (has_bias) {
      auto b = params.bias.values<T>();
      for (std::int64_t n = 0; n < g.batch; ++n)
        for (std::int64_t c = 0; c < g.out_channels; ++c)
          for (std::int64_t i = 0; i < plane; ++i) y[(n * g.out_channels + c) * plane + i] += b[c];
    }
    Tensor result = make<T>(out_shape, std::move(y), q.output_rg());
    if (!q.output_rg()) return result;

    TapeNode node = has_bias ? make_node(OpKind::Conv2d, policy, {&x, &w, &params.bias}, result)
                             : make_node(OpKind::Conv2d, policy, {&x, &w}, result);
    for (SavedRole role : required_saves(q)) {
      node.saved.push_back(SavedValue::full_tensor(role, role == SavedRole::Input ? x : w));
    }
    const Shape x_shape = x.shape();
    const Shape w_shape = w.shape();
    node.vjp = [=, x_rg = q.input_rg, w_rg = q.weight_rg, b_rg = q.bias_rg](const Tensor& grad,
                                                                          SavedReader& saved) {
      std::vector<Tensor> grads(has_bias ? 3 : 2);
      auto gv = grad.values<T>();
      if (x_rg) {
        std::vector<T> dx(x_shape.numel());
        kernels::conv2d_backward_input(g, gv, saved.tensor(SavedRole::Weight).values<T>(), std::span<T>(dx));
        grads[0] = make<T>(x_shape, std::move(dx));
      }
      if (w_rg) {
        std::vector<T> dw(w_shape.numel());
        kernels::conv2d_backward_weight(g, saved.tensor(SavedRole::Input).values<T>(), gv, std::span<T>(dw));
        grads[1] = make<T>(w_shape, std::move(dw));
      }
      if (b_rg) grads[2] = make<T>(Shape{g.out_channels}, channel_sums<T>(gv, g.batch, g.out_channels, plane));
      return grads;
    };
    tape.record(std::move(node));
    return result;
  });
}

Tensor conv_transpose2d(const Tensor& x, const LayerParams& params, const ConvConfig& cfg, Policy policy,
                        Tape& tape) {
  const Tensor& w = params.weight;
  check_conv_config(cfg);
  check_param(x, w, "conv_transpose2d weight");
  require(x.shape().rank() == 4 && w.shape().rank() == 4 && x.shape()[1] == w.shape()[0], ErrorCode::ShapeMismatch,
          "conv_transpose2d: input " + x.shape().to_string() + " vs kernel " + w.shape().to_string());
  const std::int64_t out_h = (x.shape()[2] - 1) * cfg.stride - 2 * cfg.padding + w.shape()[2];
  const std::int64_t out_w = (x.shape()[3] - 1) * cfg.stride - 2 * cfg.padding + w.shape()[3];
  require(out_h > 0 && out_w > 0, ErrorCode::ShapeMismatch, "conv_transpose2d: empty output");
  // The equivalent conv2d maps the (N, C_out, out_h, out_w) output back onto
  // the (N, C_in, H, W) input.
  kernels::Conv2dGeometry g;
  g.batch = x.shape()[0];
  g.in_channels = w.shape()[1];
  g.in_h = out_h;
  g.in_w = out_w;
  g.out_channels = w.shape()[0];
  g.kernel_h = w.shape()[2];
  g.kernel_w = w.shape()[3];
  g.stride = cfg.stride;
  g.padding = cfg.padding;
  require(g.out_h() == x.shape()[2] && g.out_w() == x.shape()[3], ErrorCode::InvalidConfig,
          "conv_transpose2d: geometry does not invert");
  const bool has_bias = params.bias.defined();
  if (has_bias) {
    check_param(x, params.bias, "conv_transpose2d bias");
    require(params.bias.shape() == Shape{g.in_channels}, ErrorCode::ShapeMismatch, "conv_transpose2d bias shape");
  }
  const Shape out_shape{g.batch, g.in_channels, out_h, out_w};
  const StorageQuery q{OpKind::ConvTranspose2d, policy, rg(x), rg(w), rg(params.bias)};

  return visit_dtype(x.dtype(), [&]<typename T>() {
    std::vector<T> y(out_shape.numel());
    kernels::conv2d_backward_input(g, x.values<T>(), w.values<T>(), std::span<T>(y));
    const std::int64_t plane = out_h * out_w;
    if (has_bias) {
      auto b = params.bias.values<T>();
      for (std::int64_t n = 0; n < g.batch; ++n)
        for (std::int64_t c = 0; c < g.in_channels; ++c)
          for (std::int64_t i = 0; i < plane; ++i) y[(n * g.in_channels + c) * plane + i] += b[c];
    }
    Tensor result = make<T>(out_shape, std::move(y), q.output_rg());
    if (!q.output_rg()) return result;

    TapeNode node = has_bias ? make_node(OpKind::ConvTranspose2d, policy, {&x, &w, &params.bias}, result)
                             : make_node(OpKind::ConvTranspose2d, policy, {&x, &w}, result);
    for (SavedRole role : required_saves(q)) {
      node.saved.push_back(SavedValue::full_tensor(role, role == SavedRole::Input ? x : w));
    }
    const Shape x_shape = x.shape();
    const Shape w_shape = w.shape();
    node.vjp = [=, x_rg = q.input_rg, w_rg = q.weight_rg, b_rg = q.bias_rg](const Tensor& grad,
                                                                          SavedReader& saved) {
      std::vector<Tensor> grads(has_bias ? 3 : 2);
      auto gv = grad.values<T>();
      if (x_rg) {
        std::vector<T> dx(x_shape.numel());
        kernels::conv2d_forward(g, gv, saved.tensor(SavedRole::Weight).values<T>(), std::span<T>(dx));
        grads[0] = make<T>(x_shape, std::move(dx));
      }
      if (w_rg) {
        std::vector<T> dw(w_shape.numel());
        kernels::conv2d_backward_weight(g, gv, saved.tensor(SavedRole::Input).values<T>(), std::span<T>(dw));
        grads[1] = make<T>(w_shape, std::move(dw));
      }
      if (b_rg) grads[2] = make<T>(Shape{g.in_channels}, channel_sums<T>(gv, g.batch, g.in_channels, plane));
      return grads;
    };
    tape.record(std::move(node));
    return result;
  });
}

// --- batchnorm2d ------------------------------------------------------------

Tensor batchnorm2d(const Tensor& x, const LayerParams& params, BatchNormState& state, Policy policy, Tape& tape) {
  require(x.shape().rank() == 4, ErrorCode::ShapeMismatch, "batchnorm2d expects (N, C, H, W)");
  const Tensor& w = params.weight;
  const Tensor& b = params.bias;
  check_param(x, w, "batchnorm2d weight");
  check_param(x, b, "batchnorm2d bias");
  const std::int64_t n = x.shape()[0];
  const std::int64_t c = x.shape()[1];
  const std::int64_t plane = x.shape()[2] * x.shape()[3];
  const auto cs = static_cast<std::size_t>(c);
  require(w.shape() == Shape{c} && b.shape() == Shape{c} && state.running_mean.size() == cs &&
              state.running_var.size() == cs,
          ErrorCode::InvalidConfig, "batchnorm2d: channel count mismatch");
  require(state.eps >= 0.0, ErrorCode::InvalidConfig, "batchnorm2d: negative eps");
  const bool train = state.mode == BatchNormMode::Train;
  if (train) require(n * plane > 1, ErrorCode::InvalidConfig, "batchnorm2d train needs more than one value per channel");
  const StorageQuery q{OpKind::BatchNorm2d, policy, rg(x), rg(w), rg(b), state.mode};
  const double count = static_cast<double>(n * plane);

  return visit_dtype(x.dtype(), [&]<typename T>() {
    auto xv = x.values<T>();
    auto wv = w.values<T>();
    auto bv = b.values<T>();
    std::vector<double> mean(cs), invstd(cs);
    for (std::int64_t ch = 0; ch < c; ++ch) {
      if (train) {
        double s = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < plane; ++j) s += xv[(i * c + ch) * plane + j];
        const double mu = s / count;
        double ss = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < plane; ++j) {
            const double d = xv[(i * c + ch) * plane + j] - mu;
            ss += d * d;
          }
        const double var = ss / count;
        // Stats go on the tape in the tensor's precision.
        mean[ch] = static_cast<T>(mu);
        invstd[ch] = static_cast<T>(1.0 / std::sqrt(var + state.eps));
        state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mu;
        state.running_var[ch] =
            (1.0 - state.momentum) * state.running_var[ch] + state.momentum * var * count / (count - 1.0);
      } else {
        require(state.running_var[ch] + state.eps > 0.0, ErrorCode::InvalidConfig,
                "batchnorm2d: running_var + eps must be positive");
        mean[ch] = state.running_mean[ch];
        invstd[ch] = 1.0 / std::sqrt(state.running_var[ch] + state.eps);
      }
    }
    std::vector<T> y(x.numel());
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t j = 0; j < plane; ++j) {
          const std::int64_t k = (i * c + ch) * plane + j;
          const double xhat = (xv[k] - mean[ch]) * invstd[ch];
          y[k] = static_cast<T>(wv[ch] * xhat + bv[ch]);
        }
    Tensor result = make<T>(x.shape(), std::move(y), q.output_rg());
    if (!q.output_rg()) return result;

    TapeNode node = make_node(OpKind::BatchNorm2d, policy, {&x, &w, &b}, result);
    for (SavedRole role : required_saves(q)) {
      switch (role) {
        case SavedRole::Input: node.saved.push_back(SavedValue::full_tensor(role, x)); break;
        case SavedRole::Weight: node.saved.push_back(SavedValue::full_tensor(role, w)); break;
        case SavedRole::BatchStats: {
          std::vector<double> stats(mean);
          stats.insert(stats.end(), invstd.begin(), invstd.end());
          node.saved.push_back(SavedValue::small_stats(role, std::move(stats), x.dtype()));
          break;
        }
        default: break;
      }
    }
    const Shape x_shape = x.shape();
    // Eval mode reads the running statistics as module state captured here.
    std::vector<double> eval_mean = train ? std::vector<double>{} : mean;
    std::vector<double> eval_invstd = train ? std::vector<double>{} : invstd;
    node.vjp = [=, x_rg = q.input_rg, w_rg = q.weight_rg, b_rg = q.bias_rg](const Tensor& grad,
                                                                          SavedReader& saved) {
      std::vector<Tensor> grads(3);
      auto gv = grad.values<T>();
      std::vector<double> mu = eval_mean;
      std::vector<double> is = eval_invstd;
      if (train) {
        auto stats = saved.get(SavedRole::BatchStats).stats();
        mu.assign(stats.begin(), stats.begin() + c);
        is.assign(stats.begin() + c, stats.end());
      }
      // Sums of g and g * xhat per channel; xhat needs the saved input.
      std::vector<double> sum_g(cs, 0.0), sum_gx(cs, 0.0);
      const bool need_xhat = w_rg || (train && x_rg);
      std::span<const T> xs;
      if (need_xhat) xs = saved.tensor(SavedRole::Input).values<T>();
      for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < plane; ++j) {
            const std::int64_t k = (i * c + ch) * plane + j;
            sum_g[ch] += gv[k];
            if (need_xhat) sum_gx[ch] += gv[k] * ((xs[k] - mu[ch]) * is[ch]);
          }
      }
      if (x_rg) {
        auto ws = saved.tensor(SavedRole::Weight).values<T>();
        std::vector<T> dx(x_shape.numel());
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t j = 0; j < plane; ++j) {
              const std::int64_t k = (i * c + ch) * plane + j;
              if (train) {
                const double xhat = (xs[k] - mu[ch]) * is[ch];
                dx[k] = static_cast<T>(ws[ch] * is[ch] / count * (count * gv[k] - sum_g[ch] - xhat * sum_gx[ch]));
              } else {
                dx[k] = static_cast<T>(gv[k] * ws[ch] * is[ch]);
              }
            }
        grads[0] = make<T>(x_shape, std::move(dx));
      }
      if (w_rg) {
        std::vector<T> dw(cs);
        for (std::size_t ch = 0; ch < cs; ++ch) dw[ch] = static_cast<T>(sum_gx[ch]);
        grads[1] = make<T>(Shape{c}, std::move(dw));
      }
      if (b_rg) {
        std::vector<T> db(cs);
        for (std::size_t ch = 0; ch < cs; ++ch) db[ch] = static_cast<T>(sum_g[ch]);
        grads[2] = make<T>(Shape{c}, std::move(db));
      }
      return grads;
    };
    tape.record(std::move(node));
    return result;
  });
}

// --- layernorm --------------------------------------------------------------

Tensor layernorm(const Tensor& x, const LayerParams& params, double eps, Policy policy, Tape& tape) {
  const Tensor& w = params.weight;
  const Tensor& b = params.bias;
  check_param(x, w, "layernorm weight");
  check_param(x, b, "layernorm bias");
  require(x.shape().rank() >= 1, ErrorCode::ShapeMismatch, "layernorm on a scalar");
  const std::int64_t d = x.shape().back();
  require(w.shape() == Shape{d} && b.shape() == Shape{d}, ErrorCode::ShapeMismatch,
          "layernorm: affine parameters must be (" + std::to_string(d) + ",)");
  require(eps >= 0.0, ErrorCode::InvalidConfig, "layernorm: negative eps");
  const std::int64_t rows = static_cast<std::int64_t>(x.numel()) / d;
  const StorageQuery q{OpKind::LayerNorm, policy, rg(x), rg(w), rg(b)};

  return visit_dtype(x.dtype(), [&]<typename T>() {
    auto xv = x.values<T>();
    auto wv = w.values<T>();
    auto bv = b.values<T>();
    std::vector<double> invstd(static_cast<std::size_t>(rows));
    std::vector<T> y(x.numel());
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* row = xv.data() + r * d;
      double s = 0.0;
      for (std::int64_t j = 0; j < d; ++j) s += row[j];
      const double mu = s / static_cast<double>(d);
      double ss = 0.0;
      for (std::int64_t j = 0; j < d; ++j) ss += (row[j] - mu) * (row[j] - mu);
      const double is = static_cast<T>(1.0 / std::sqrt(ss / static_cast<double>(d) + eps));
      invstd[r] = is;
      for (std::int64_t j = 0; j < d; ++j) y[r * d + j] = static_cast<T>(wv[j] * ((row[j] - mu) * is) + bv[j]);
    }
    Tensor result = make<T>(x.shape(), std::move(y), q.output_rg());
    if (!q.output_rg()) return result;

    TapeNode node = make_node(OpKind::LayerNorm, policy, {&x, &w, &b}, result);
    for (SavedRole role : required_saves(q)) {
      switch (role) {
        case SavedRole::Input: node.saved.push_back(SavedValue::full_tensor(role, x)); break;
        case SavedRole::Weight: node.saved.push_back(SavedValue::full_tensor(role, w)); break;
        case SavedRole::RowStats: node.saved.push_back(SavedValue::small_stats(role, invstd, x.dtype())); break;
        default: break;
      }
    }
    const Shape x_shape = x.shape();
    node.vjp = [=, x_rg = q.input_rg, w_rg = q.weight_rg, b_rg = q.bias_rg](const Tensor& grad,
                                                                          SavedReader& saved) {
      std::vector<Tensor> grads(3);
      auto gv = grad.values<T>();
      std::vector<double> dw(static_cast<std::size_t>(d), 0.0), db(static_cast<std::size_t>(d), 0.0);
      std::vector<T> dx;
      std::span<const T> xs;
      std::span<const double> is;
      if (x_rg || w_rg) {
        xs = saved.tensor(SavedRole::Input).values<T>();
        is = saved.get(SavedRole::RowStats).stats();
      }
      std::span<const T> ws;
      if (x_rg) {
        ws = saved.tensor(SavedRole::Weight).values<T>();
        dx.resize(x_shape.numel());
      }
      std::vector<double> xhat(static_cast<std::size_t>(d));
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* gr = gv.data() + r * d;
        if (x_rg || w_rg) {
          const T* row = xs.data() + r * d;
          double s = 0.0;
          for (std::int64_t j = 0; j < d; ++j) s += row[j];
          const double mu = s / static_cast<double>(d);
          for (std::int64_t j = 0; j < d; ++j) xhat[j] = (row[j] - mu) * is[r];
        }
        for (std::int64_t j = 0; j < d; ++j) {
          db[j] += gr[j];
          if (w_rg) dw[j] += gr[j] * xhat[j];
        }
        if (x_rg) {
          double sum_gw = 0.0, sum_gwx = 0.0;
          for (std::int64_t j = 0; j < d; ++j) {
            const double gwj = gr[j] * ws[j];
            sum_gw += gwj;
            sum_gwx += gwj * xhat[j];
          }
          const double dd = static_cast<double>(d);
          for (std::int64_t j = 0; j < d; ++j) {
            const double gwj = gr[j] * ws[j];
            dx[r * d + j] = static_cast<T>(is[r] / dd * (dd * gwj - sum_gw - xhat[j] * sum_gwx));
          }
        }
      }
      if (x_rg) grads[0] = make<T>(x_shape, std::move(dx));
      if (w_rg) grads[1] = make<T>(Shape{d}, std::vector<T>(dw.begin(), dw.end()));
      if (b_rg) grads[2] = make<T>(Shape{d}, std::vector<T>(db.begin(), db.end()));
      return grads;
    };
    tape.record(std::move(node));
    return result;
  });
}

// --- relu -------------------------------------------------------------------

Tensor relu(const Tensor& x, ReluVariant variant, Tape& tape) {
  const Policy policy = variant == ReluVariant::Masked ? Policy::MemSave : Policy::Naive;
  const StorageQuery q{OpKind::ReLU, policy, rg(x)};
  return visit_dtype(x.dtype(), [&]<typename T>() {
    auto xv = x.values<T>();
    std::vector<T> y(xv.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > T(0) ? xv[i] : T(0);
    Tensor result = make<T>(x.shape(), std::move(y), q.output_rg());
    if (!q.output_rg()) return result;

    TapeNode node = make_node(OpKind::ReLU, policy, {&x}, result);
    if (variant == ReluVariant::Masked) {
      std::vector<bool> positive(xv.size());
      auto yv = result.values<T>();
      for (std::size_t i = 0; i < positive.size(); ++i) positive[i] = yv[i] > T(0);
      node.saved.push_back(SavedValue::bit_mask(SavedRole::OutputMask, positive));
    } else {
      node.saved.push_back(SavedValue::full_tensor(SavedRole::Output, result));
    }
    const Shape shape = x.shape();
    node.vjp = [=](const Tensor& grad, SavedReader& saved) {
      auto gv = grad.values<T>();
      std::vector<T> dx(gv.size());
      if (variant == ReluVariant::Masked) {
        const SavedValue& mask = saved.get(SavedRole::OutputMask);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = mask.mask_bit(i) ? gv[i] : T(0);
      } else {
        auto yv = saved.tensor(SavedRole::Output).values<T>();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = yv[i] > T(0) ? gv[i] : T(0);
      }
      return std::vector<Tensor>{make<T>(shape, std::move(dx))};
    };
    tape.record(std::move(node));
    return result;
  });
}

// --- dropout ----------------------------------------------------------------

std::vector<std::uint8_t> dropout_keep_mask(std::uint64_t seed, double p, std::size_t numel) {
  std::vector<std::uint8_t> keep(numel);
  for (std::size_t i = 0; i < numel; ++i) keep[i] = Rng::uniform_at(seed, i) >= p ? 1 : 0;
  return keep;
}

Tensor dropout(const Tensor& x, const DropoutConfig& cfg, Tape& tape) {
  require(cfg.p >= 0.0 && cfg.p < 1.0, ErrorCode::InvalidConfig, "dropout probability must lie in [0, 1)");
  const Policy policy = cfg.variant == DropoutVariant::RngReplay ? Policy::MemSave : Policy::Naive;
  const StorageQuery q{OpKind::Dropout, policy, rg(x)};
  const double keep_scale = 1.0 / (1.0 - cfg.p);
  return visit_dtype(x.dtype(), [&]<typename T>() {
    auto xv = x.values<T>();
    std::vector<std::uint8_t> keep = dropout_keep_mask(cfg.seed, cfg.p, xv.size());
    std::vector<T> y(xv.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = keep[i] ? static_cast<T>(xv[i] * keep_scale) : T(0);
    Tensor result = make<T>(x.shape(), std::move(y), q.output_rg());
    if (!q.output_rg()) return result;

    TapeNode node = make_node(OpKind::Dropout, policy, {&x}, result);
    if (cfg.variant == DropoutVariant::RngReplay) {
      node.saved.push_back(SavedValue::rng_seed(SavedRole::DropSeed, cfg.seed, cfg.p));
    } else {
      node.saved.push_back(SavedValue::byte_mask(SavedRole::DropMask, std::move(keep)));
    }
    const Shape shape = x.shape();
    const auto variant = cfg.variant;
    node.vjp = [=](const Tensor& grad, SavedReader& saved) {
      auto gv = grad.values<T>();
      std::vector<T> dx(gv.size());
      if (variant == DropoutVariant::RngReplay) {
        const SavedValue& s = saved.get(SavedRole::DropSeed);
        const std::vector<std::uint8_t> replay = dropout_keep_mask(s.seed(), s.probability(), gv.size());
        const double sc = 1.0 / (1.0 - s.probability());
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = replay[i] ? static_cast<T>(gv[i] * sc) : T(0);
      } else {
        auto mask = saved.get(SavedRole::DropMask).bytes();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = mask[i] ? static_cast<T>(gv[i] * keep_scale) : T(0);
      }
      return std::vector<Tensor>{make<T>(shape, std::move(dx))};
    };
    tape.record(std::move(node));
    return result;
  });
}

// --- maxpool2d --------------------------------------------------------------

Tensor maxpool2d(const Tensor& x, const PoolConfig& cfg, Tape& tape) {
  const std::int64_t stride = cfg.stride == 0 ? cfg.window : cfg.stride;
  require(cfg.window > 0 && stride > 0, ErrorCode::InvalidConfig, "maxpool2d: window and stride must be positive");
  require(x.shape().rank() == 4, ErrorCode::ShapeMismatch, "maxpool2d expects (N, C, H, W)");
  const std::int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  require(cfg.window <= h && cfg.window <= w, ErrorCode::InvalidConfig, "maxpool2d: window exceeds input");
  require(x.numel() <= static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max()), ErrorCode::InvalidConfig,
          "maxpool2d: input too large for 32-bit indices");
  const std::int64_t oh = (h - cfg.window) / stride + 1;
  const std::int64_t ow = (w - cfg.window) / stride + 1;
  const Shape out_shape{n, c, oh, ow};
  const StorageQuery q{OpKind::MaxPool2d, Policy::Naive, rg(x)};

  return visit_dtype(x.dtype(), [&]<typename T>() {
    auto xv = x.values<T>();
    std::vector<T> y(out_shape.numel());
    std::vector<std::int32_t> argmax(out_shape.numel());
    for (std::int64_t b = 0; b < n * c; ++b)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          std::int64_t best = b * h * w + (i * stride) * w + j * stride;
          for (std::int64_t di = 0; di < cfg.window; ++di)
            for (std::int64_t dj = 0; dj < cfg.window; ++dj) {
              const std::int64_t k = b * h * w + (i * stride + di) * w + (j * stride + dj);
              if (xv[k] > xv[best]) best = k;
            }
          const std::int64_t o = (b * oh + i) * ow + j;
          y[o] = xv[best];
          argmax[o] = static_cast<std::int32_t>(best);
        }
    Tensor result = make<T>(out_shape, std::move(y), q.output_rg());
    if (!q.output_rg()) return result;

    TapeNode node = make_node(OpKind::MaxPool2d, Policy::Naive, {&x}, result);
    node.saved.push_back(SavedValue::index_map(SavedRole::ArgmaxIndices, std::move(argmax)));
    const Shape x_shape = x.shape();
    node.vjp = [=](const Tensor& grad, SavedReader& saved) {
      auto gv = grad.values<T>();
      auto idx = saved.get(SavedRole::ArgmaxIndices).indices();
      std::vector<T> dx(x_shape.numel(), T(0));
      for (std::size_t o = 0; o < idx.size(); ++o) dx[static_cast<std::size_t>(idx[o])] += gv[o];
      return std::vector<Tensor>{make<T>(x_shape, std::move(dx))};
    };
    tape.record(std::move(node));
    return result;
  });
}

// --- softmax ----------------------------------------------------------------

Tensor softmax(const Tensor& x, Tape& tape) {
  require(x.shape().rank() >= 1, ErrorCode::ShapeMismatch, "softmax on a scalar");
  const std::int64_t d = x.shape().back();
  const std::int64_t rows = static_cast<std::int64_t>(x.numel()) / d;
  const StorageQuery q{OpKind::Softmax, Policy::Naive, rg(x)};
  return visit_dtype(x.dtype(), [&]<typename T>() {
    auto xv = x.values<T>();
    std::vector<T> y(xv.size());
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* row = xv.data() + r * d;
      double mx = row[0];
      for (std::int64_t j = 1; j < d; ++j) mx = std::max<double>(mx, row[j]);
      double s = 0.0;
      for (std::int64_t j = 0; j < d; ++j) s += std::exp(row[j] - mx);
      for (std::int64_t j = 0; j < d; ++j) y[r * d + j] = static_cast<T>(std::exp(row[j] - mx) / s);
    }
    Tensor result = make<T>(x.shape(), std::move(y), q.output_rg());
    if (!q.output_rg()) return result;

    TapeNode node = make_node(OpKind::Softmax, Policy::Naive, {&x}, result);
    node.saved.push_back(SavedValue::full_tensor(SavedRole::Output, result));
    const Shape shape = x.shape();
    node.vjp = [=](const Tensor& grad, SavedReader& saved) {
      auto gv = grad.values<T>();
      auto yv = saved.tensor(SavedRole::Output).values<T>();
      std::vector<T> dx(gv.size());
      for (std::int64_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < d; ++j) dot += gv[r * d + j] * yv[r * d + j];
        for (std::int64_t j = 0; j < d; ++j) dx[r * d + j] = static_cast<T>(yv[r * d + j] * (gv[r * d + j] - dot));
      }
      return std::vector<Tensor>{make<T>(shape, std::move(dx))};
    };
    tape.record(std::move(node));
    return result;
  });
}

// --- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b, Tape& tape) {
  check_same_shape(a, b, "add");
  check_same_dtype(a, b, "add");
  const bool out_rg = rg(a) || rg(b);
  return visit_dtype(a.dtype(), [&]<typename T>() {
    auto av = a.values<T>();
    auto bv = b.values<T>();
    std::vector<T> y(av.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
    Tensor result = make<T>(a.shape(), std::move(y), out_rg);
    if (!out_rg) return result;
    TapeNode node = make_node(OpKind::Add, Policy::Naive, {&a, &b}, result);
    node.vjp = [a_rg = rg(a), b_rg = rg(b)](const Tensor& grad, SavedReader&) {
      return std::vector<Tensor>{a_rg ? grad : Tensor(), b_rg ? grad : Tensor()};
    };
    tape.record(std::move(node));
    return result;
  });
}

Tensor mul(const Tensor& a, const Tensor& b, Tape& tape) {
  check_same_shape(a, b, "mul");
  check_same_dtype(a, b, "mul");
  const StorageQuery q{OpKind::Mul, Policy::Naive, rg(a), rg(b)};
  return visit_dtype(a.dtype(), [&]<typename T>() {
    auto av = a.values<T>();
    auto bv = b.values<T>();
    std::vector<T> y(av.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
    Tensor result = make<T>(a.shape(), std::move(y), q.output_rg());
    if (!q.output_rg()) return result;
    TapeNode node = make_node(OpKind::Mul, Policy::Naive, {&a, &b}, result);
    for (SavedRole role : required_saves(q)) {
      node.saved.push_back(SavedValue::full_tensor(role, role == SavedRole::Lhs ? a : b));
    }
    const Shape shape = a.shape();
    node.vjp = [=, a_rg = q.input_rg, b_rg = q.weight_rg](const Tensor& grad, SavedReader& saved) {
      auto gv = grad.values<T>();
      std::vector<Tensor> grads(2);
      if (a_rg) {
        auto other = saved.tensor(SavedRole::Rhs).values<T>();
        std::vector<T> d(gv.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = gv[i] * other[i];
        grads[0] = make<T>(shape, std::move(d));
      }
      if (b_rg) {
        auto other = saved.tensor(SavedRole::Lhs).values<T>();
        std::vector<T> d(gv.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = gv[i] * other[i];
        grads[1] = make<T>(shape, std::move(d));
      }
      return grads;
    };
    tape.record(std::move(node));
    return result;
  });
}

Tensor scale(const Tensor& a, double factor, Tape& tape) {
  const bool out_rg = rg(a);
  return visit_dtype(a.dtype(), [&]<typename T>() {
    auto av = a.values<T>();
    std::vector<T> y(av.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<T>(av[i] * factor);
    Tensor result = make<T>(a.shape(), std::move(y), out_rg);
    if (!out_rg) return result;
    TapeNode node = make_node(OpKind::Scale, Policy::Naive, {&a}, result);
    node.vjp = [factor](const Tensor& grad, SavedReader&) {
      return std::vector<Tensor>{memsave::scale(grad, factor)};
    };
    tape.record(std::move(node));
    return result;
  });
}

// --- matmul -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, const MatmulConfig& cfg, Tape& tape) {
  check_same_dtype(a, b, "matmul");
  const auto& ad = a.shape().dims();
  const auto& bd = b.shape().dims();
  require(ad.size() >= 2 && ad.size() == bd.size(), ErrorCode::ShapeMismatch,
          "matmul: " + a.shape().to_string() + " vs " + b.shape().to_string());
  std::int64_t batch = 1;
  for (std::size_t i = 0; i + 2 < ad.size(); ++i) {
    require(ad[i] == bd[i], ErrorCode::ShapeMismatch, "matmul: batch dimensions differ");
    batch *= ad[i];
  }
  const std::int64_t m = ad[ad.size() - 2];
  const std::int64_t k = ad.back();
  const std::int64_t bk = cfg.transpose_b ? bd.back() : bd[bd.size() - 2];
  const std::int64_t n = cfg.transpose_b ? bd[bd.size() - 2] : bd.back();
  require(k == bk, ErrorCode::ShapeMismatch, "matmul: inner dimensions differ");
  auto out_dims = ad;
  out_dims.back() = n;
  const Shape out_shape(out_dims);
  const StorageQuery q{OpKind::Matmul, Policy::Naive, rg(a), rg(b)};

  return visit_dtype(a.dtype(), [&]<typename T>() {
    std::vector<T> y(out_shape.numel());
    kernels::matmul(kernels::MatmulGeometry{.batch = batch, .m = m, .k = k, .n = n, .transpose_b = cfg.transpose_b},
                    a.values<T>(), b.values<T>(), std::span<T>(y));
    if (cfg.scale != 1.0) {
      for (auto& v : y) v = static_cast<T>(v * cfg.scale);
    }
    Tensor result = make<T>(out_shape, std::move(y), q.output_rg());
    if (!q.output_rg()) return result;

    TapeNode node = make_node(OpKind::Matmul, Policy::Naive, {&a, &b}, result);
    for (SavedRole role : required_saves(q)) {
      node.saved.push_back(SavedValue::full_tensor(role, role == SavedRole::Lhs ? a : b));
    }
    const Shape a_shape = a.shape();
    const Shape b_shape = b.shape();
    const bool tb = cfg.transpose_b;
    const double sc = cfg.scale;
    node.vjp = [=, a_rg = q.input_rg, b_rg = q.weight_rg](const Tensor& grad, SavedReader& saved) {
      auto gv = grad.values<T>();
      std::vector<Tensor> grads(2);
      auto scaled = [sc](std::vector<T>& v) {
        if (sc != 1.0)
          for (auto& e : v) e = static_cast<T>(e * sc);
      };
      if (a_rg) {
        // dA = G B^T (or G B when B is stored transposed).
        std::vector<T> da(a_shape.numel());
        kernels::matmul(kernels::MatmulGeometry{.batch = batch, .m = m, .k = n, .n = k, .transpose_b = !tb}, gv,
                        saved.tensor(SavedRole::Rhs).values<T>(), std::span<T>(da));
        scaled(da);
        grads[0] = make<T>(a_shape, std::move(da));
      }
      if (b_rg) {
        std::vector<T> db(b_shape.numel());
        auto av = saved.tensor(SavedRole::Lhs).values<T>();
        if (tb) {
          // dB (n, k) = G^T A
          kernels::matmul(kernels::MatmulGeometry{.batch = batch, .m = n, .k = m, .n = k, .transpose_a = true}, gv,
                          av, std::span<T>(db));
        } else {
          // dB (k, n) = A^T G
          kernels::matmul(kernels::MatmulGeometry{.batch = batch, .m = k, .k = m, .n = n, .transpose_a = true}, av,
                          gv, std::span<T>(db));
        }
        scaled(db);
        grads[1] = make<T>(b_shape, std::move(db));
      }
      return grads;
    };
    tape.record(std::move(node));
    return result;
  });
}

// --- reductions -------------------------------------------------------------

Tensor sum(const Tensor& x, Tape& tape) {
  const bool out_rg = rg(x);
  return visit_dtype(x.dtype(), [&]<typename T>() {
    auto xv = x.values<T>();
    T acc = 0;
    for (T v : xv) acc += v;
    Tensor result = make<T>(Shape{}, std::vector<T>{acc}, out_rg);
    if (!out_rg) return result;
    TapeNode node = make_node(OpKind::Sum, Policy::Naive, {&x}, result);
    node.vjp = [shape = x.shape(), dtype = x.dtype()](const Tensor& grad, SavedReader&) {
      return std::vector<Tensor>{Tensor::full(shape, dtype, grad.item())};
    };
    tape.record(std::move(node));
    return result;
  });
}

Tensor projected_sum(const Tensor& x, std::uint64_t seed, Tape& tape) {
  const bool out_rg = rg(x);
  return visit_dtype(x.dtype(), [&]<typename T>() {
    auto xv = x.values<T>();
    double acc = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) acc += static_cast<double>(xv[i]) * Rng::normal_at(seed, i);
    Tensor result = make<T>(Shape{}, std::vector<T>{static_cast<T>(acc)}, out_rg);
    if (!out_rg) return result;
    TapeNode node = make_node(OpKind::ProjectedSum, Policy::Naive, {&x}, result);
    node.saved.push_back(SavedValue::rng_seed(SavedRole::ProjectionSeed, seed, 0.0));
    node.vjp = [shape = x.shape()](const Tensor& grad, SavedReader& saved) {
      const std::uint64_t s = saved.get(SavedRole::ProjectionSeed).seed();
      const double g = grad.item();
      std::vector<T> dx(shape.numel());
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = static_cast<T>(g * Rng::normal_at(s, i));
      return std::vector<Tensor>{make<T>(shape, std::move(dx))};
    };
    tape.record(std::move(node));
    return result;
  });
}

}  // namespace memsave::layers
