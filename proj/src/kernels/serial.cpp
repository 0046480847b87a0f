// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0

#include "kernel_bodies.hpp"

namespace memsave::kernels::serial {

namespace {

template <typename T>
void conv2d_forward_impl(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y) {
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t co = 0; co < g.out_channels; ++co) detail::conv2d_forward_plane(g, x, w, y, n, co);
}

template <typename T>
void conv2d_backward_input_impl(const Conv2dGeometry& g, std::span<const T> gy, std::span<const T> w,
                                std::span<T> gx) {
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t ci = 0; ci < g.in_channels; ++ci) detail::conv2d_backward_input_plane(g, gy, w, gx, n, ci);
}

template <typename T>
void conv2d_backward_weight_impl(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> gy,
                                 std::span<T> gw) {
  for (std::int64_t co = 0; co < g.out_channels; ++co)
    for (std::int64_t ci = 0; ci < g.in_channels; ++ci) detail::conv2d_backward_weight_tap(g, x, gy, gw, co, ci);
}

template <typename T>
void matmul_impl(const MatmulGeometry& g, std::span<const T> a, std::span<const T> b, std::span<T> c) {
  for (std::int64_t bi = 0; bi < g.batch; ++bi)
    for (std::int64_t i = 0; i < g.m; ++i) detail::matmul_row(g, a, b, c, bi, i);
}

}  // namespace

#define MEMSAVE_SERIAL_DEFS(T)                                                                            \
  void conv2d_forward(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y) { \
    conv2d_forward_impl(g, x, w, y);                                                                      \
  }                                                                                                       \
  void conv2d_backward_input(const Conv2dGeometry& g, std::span<const T> gy, std::span<const T> w,         \
                             std::span<T> gx) {                                                           \
    conv2d_backward_input_impl(g, gy, w, gx);                                                             \
  }                                                                                                       \
  void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> gy,        \
                              std::span<T> gw) {                                                          \
    conv2d_backward_weight_impl(g, x, gy, gw);                                                            \
  }                                                                                                       \
  void matmul(const MatmulGeometry& g, std::span<const T> a, std::span<const T> b, std::span<T> c) {       \
    matmul_impl(g, a, b, c);                                                                              \
  }

MEMSAVE_SERIAL_DEFS(float)
MEMSAVE_SERIAL_DEFS(double)

}  // namespace memsave::kernels::serial
