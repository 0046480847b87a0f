// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>

#include "memsave/kernels.hpp"

namespace memsave::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::Parallel};
}

void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }

Backend backend() { return g_backend.load(std::memory_order_relaxed); }

#define MEMSAVE_DISPATCH(T)                                                                               \
  void conv2d_forward(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y) { \
    backend() == Backend::Serial ? serial::conv2d_forward(g, x, w, y) : parallel::conv2d_forward(g, x, w, y); \
  }                                                                                                       \
  void conv2d_backward_input(const Conv2dGeometry& g, std::span<const T> gy, std::span<const T> w,         \
                             std::span<T> gx) {                                                           \
    backend() == Backend::Serial ? serial::conv2d_backward_input(g, gy, w, gx)                            \
                                 : parallel::conv2d_backward_input(g, gy, w, gx);                         \
  }                                                                                                       \
  void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> gy,        \
                              std::span<T> gw) {                                                          \
    backend() == Backend::Serial ? serial::conv2d_backward_weight(g, x, gy, gw)                           \
                                 : parallel::conv2d_backward_weight(g, x, gy, gw);                        \
  }                                                                                                       \
  void matmul(const MatmulGeometry& g, std::span<const T> a, std::span<const T> b, std::span<T> c) {       \
    backend() == Backend::Serial ? serial::matmul(g, a, b, c) : parallel::matmul(g, a, b, c);              \
  }

MEMSAVE_DISPATCH(float)
MEMSAVE_DISPATCH(double)

}  // namespace memsave::kernels
