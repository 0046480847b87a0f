// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-output-element kernel bodies shared by the serial and parallel
// backends. Only the outer loop distribution differs between them.

#pragma once

#include <cstdint>
#include <span>

#include "memsave/kernels.hpp"

namespace memsave::kernels::detail {

template <typename T>
void conv2d_forward_plane(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y,
                          std::int64_t n, std::int64_t co) {
  const std::int64_t oh_n = g.out_h();
  const std::int64_t ow_n = g.out_w();
  for (std::int64_t oh = 0; oh < oh_n; ++oh) {
    for (std::int64_t ow = 0; ow < ow_n; ++ow) {
      T acc = 0;
      for (std::int64_t ci = 0; ci < g.in_channels; ++ci) {
        const T* xc = x.data() + (n * g.in_channels + ci) * g.in_h * g.in_w;
        const T* wc = w.data() + (co * g.in_channels + ci) * g.kernel_h * g.kernel_w;
        for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
          const std::int64_t ih = oh * g.stride - g.padding + kh;
          if (ih < 0 || ih >= g.in_h) continue;
          for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
            const std::int64_t iw = ow * g.stride - g.padding + kw;
            if (iw < 0 || iw >= g.in_w) continue;
            acc += wc[kh * g.kernel_w + kw] * xc[ih * g.in_w + iw];
          }
        }
      }
      y[((n * g.out_channels + co) * oh_n + oh) * ow_n + ow] = acc;
    }
  }
}

template <typename T>
void conv2d_backward_input_plane(const Conv2dGeometry& g, std::span<const T> gy, std::span<const T> w,
                                 std::span<T> gx, std::int64_t n, std::int64_t ci) {
  const std::int64_t oh_n = g.out_h();
  const std::int64_t ow_n = g.out_w();
  for (std::int64_t ih = 0; ih < g.in_h; ++ih) {
    for (std::int64_t iw = 0; iw < g.in_w; ++iw) {
      T acc = 0;
      for (std::int64_t co = 0; co < g.out_channels; ++co) {
        const T* gyc = gy.data() + (n * g.out_channels + co) * oh_n * ow_n;
        const T* wc = w.data() + (co * g.in_channels + ci) * g.kernel_h * g.kernel_w;
        for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
          const std::int64_t th = ih + g.padding - kh;
          if (th < 0 || th % g.stride != 0) continue;
          const std::int64_t oh = th / g.stride;
          if (oh >= oh_n) continue;
          for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
            const std::int64_t tw = iw + g.padding - kw;
            if (tw < 0 || tw % g.stride != 0) continue;
            const std::int64_t ow = tw / g.stride;
            if (ow >= ow_n) continue;
            acc += gyc[oh * ow_n + ow] * wc[kh * g.kernel_w + kw];
          }
        }
      }
      gx[((n * g.in_channels + ci) * g.in_h + ih) * g.in_w + iw] = acc;
    }
  }
}

template <typename T>
void conv2d_backward_weight_tap(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> gy,
                                std::span<T> gw, std::int64_t co, std::int64_t ci) {
  const std::int64_t oh_n = g.out_h();
  const std::int64_t ow_n = g.out_w();
  for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
    for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
      T acc = 0;
      for (std::int64_t n = 0; n < g.batch; ++n) {
        const T* xc = x.data() + (n * g.in_channels + ci) * g.in_h * g.in_w;
        const T* gyc = gy.data() + (n * g.out_channels + co) * oh_n * ow_n;
        for (std::int64_t oh = 0; oh < oh_n; ++oh) {
          const std::int64_t ih = oh * g.stride - g.padding + kh;
          if (ih < 0 || ih >= g.in_h) continue;
          for (std::int64_t ow = 0; ow < ow_n; ++ow) {
            const std::int64_t iw = ow * g.stride - g.padding + kw;
            if (iw < 0 || iw >= g.in_w) continue;
            acc += gyc[oh * ow_n + ow] * xc[ih * g.in_w + iw];
          }
        }
      }
      gw[((co * g.in_channels + ci) * g.kernel_h + kh) * g.kernel_w + kw] = acc;
    }
  }
}

template <typename T>
void matmul_row(const MatmulGeometry& g, std::span<const T> a, std::span<const T> b, std::span<T> c,
                std::int64_t bi, std::int64_t i) {
  const std::int64_t a_stride = g.a_batch_stride < 0 ? g.m * g.k : g.a_batch_stride;
  const std::int64_t b_stride = g.b_batch_stride < 0 ? g.k * g.n : g.b_batch_stride;
  const T* ab = a.data() + bi * a_stride;
  const T* bb = b.data() + bi * b_stride;
  T* cr = c.data() + (bi * g.m + i) * g.n;
  for (std::int64_t j = 0; j < g.n; ++j) {
    T acc = 0;
    for (std::int64_t kk = 0; kk < g.k; ++kk) {
      const T av = g.transpose_a ? ab[kk * g.m + i] : ab[i * g.k + kk];
      const T bv = g.transpose_b ? bb[j * g.k + kk] : bb[kk * g.n + j];
      acc += av * bv;
    }
    cr[j] = acc;
  }
}

}  // namespace memsave::kernels::detail
