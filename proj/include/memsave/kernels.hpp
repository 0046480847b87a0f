// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense compute kernels. Each kernel exists twice: a serial reference in
// `kernels::serial` and an OpenMP version in `kernels::parallel`. Both call
// the same per-output-element body, so every output element is accumulated
// in the same order and the two backends agree bit for bit.

#pragma once

#include <cstdint>
#include <span>

namespace memsave::kernels {

/// Cross-correlation geometry: y[n, co, oh, ow] =
///   sum_{ci, kh, kw} w[co, ci, kh, kw] * x[n, ci, oh*s - p + kh, ow*s - p + kw].
struct Conv2dGeometry {
  std::int64_t batch = 1;
  std::int64_t in_channels = 1;
  std::int64_t in_h = 1;
  std::int64_t in_w = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel_h = 1;
  std::int64_t kernel_w = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;

  std::int64_t out_h() const { return (in_h + 2 * padding - kernel_h) / stride + 1; }
  std::int64_t out_w() const { return (in_w + 2 * padding - kernel_w) / stride + 1; }
  std::int64_t input_numel() const { return batch * in_channels * in_h * in_w; }
  std::int64_t output_numel() const { return batch * out_channels * out_h() * out_w(); }
  std::int64_t weight_numel() const { return out_channels * in_channels * kernel_h * kernel_w; }
};

/// c[b] = a[b] * b[b] with optional transposes; a batch stride of 0 broadcasts
/// one operand across the batch.
struct MatmulGeometry {
  std::int64_t batch = 1;
  std::int64_t m = 1;
  std::int64_t k = 1;
  std::int64_t n = 1;
  bool transpose_a = false;  // a stored as (k, m)
  bool transpose_b = false;  // b stored as (n, k)
  std::int64_t a_batch_stride = -1;  // -1: m * k
  std::int64_t b_batch_stride = -1;  // -1: k * n
};

enum class Backend { Serial, Parallel };

#define MEMSAVE_KERNEL_DECLS(T)                                                                          \
  void conv2d_forward(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y); \
  void conv2d_backward_input(const Conv2dGeometry& g, std::span<const T> gy, std::span<const T> w,        \
                             std::span<T> gx);                                                           \
  void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> gy,       \
                              std::span<T> gw);                                                          \
  void matmul(const MatmulGeometry& g, std::span<const T> a, std::span<const T> b, std::span<T> c);

namespace serial {
MEMSAVE_KERNEL_DECLS(float)
MEMSAVE_KERNEL_DECLS(double)
}  // namespace serial

namespace parallel {
MEMSAVE_KERNEL_DECLS(float)
MEMSAVE_KERNEL_DECLS(double)
}  // namespace parallel

// Dispatching entry points used by the layers; they route to the backend
// selected with `set_backend` (parallel by default).
MEMSAVE_KERNEL_DECLS(float)
MEMSAVE_KERNEL_DECLS(double)

#undef MEMSAVE_KERNEL_DECLS

void set_backend(Backend backend);
Backend backend();

}  // namespace memsave::kernels
