// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0
//
// Immutable dense tensors. Every tensor owns a row-major buffer of exactly
// numel elements; there are no views or strides, so each byte belongs to
// exactly one tensor and memory accounting is unambiguous.

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "memsave/error.hpp"
#include "memsave/memwatch.hpp"
#include "memsave/rng.hpp"

namespace memsave {

enum class Dtype : std::uint8_t { F32, F64 };

constexpr std::size_t dtype_width(Dtype dtype) { return dtype == Dtype::F32 ? 4 : 8; }

std::string_view dtype_name(Dtype dtype);
Dtype parse_dtype(std::string_view name);

template <typename T>
constexpr Dtype dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? Dtype::F32 : Dtype::F64;
}

/// Calls `fn.template operator()<T>()` with T = float or double.
template <typename Fn>
decltype(auto) visit_dtype(Dtype dtype, Fn&& fn) {
  if (dtype == Dtype::F32) return fn.template operator()<float>();
  return fn.template operator()<double>();
}

class Shape {
 public:
  Shape() = default;
  explicit Shape(std::vector<std::int64_t> dims);
  Shape(std::initializer_list<std::int64_t> dims) : Shape(std::vector<std::int64_t>(dims)) {}

  std::size_t rank() const { return dims_.size(); }
  std::int64_t operator[](std::size_t i) const { return dims_.at(i); }
  std::int64_t back() const { return dims_.back(); }
  const std::vector<std::int64_t>& dims() const { return dims_; }
  /// Product of dims; 1 for the rank-0 scalar shape.
  std::size_t numel() const;
  std::string to_string() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::int64_t> dims_;
};

using TensorId = ObjectId;

namespace detail {

struct TensorStorage {
  TensorStorage(Shape shape, std::variant<std::vector<float>, std::vector<double>> data, bool requires_grad);
  ~TensorStorage();
  TensorStorage(const TensorStorage&) = delete;
  TensorStorage& operator=(const TensorStorage&) = delete;

  TensorId id;
  Shape shape;
  std::variant<std::vector<float>, std::vector<double>> data;
  bool requires_grad;
  MemoryCategory category;
  std::weak_ptr<Ledger> ledger;
};

}  // namespace detail

/// Shared handle to immutable tensor storage. Copies alias the same id and
/// bytes; the buffer is released when the last handle goes away.
class Tensor {
 public:
  Tensor() = default;

  template <typename T>
  static Tensor from_vector(Shape shape, std::vector<T> values, bool requires_grad = false) {
    check_count(shape, values.size());
    return Tensor(std::make_shared<const detail::TensorStorage>(std::move(shape), std::move(values), requires_grad));
  }

  /// Converts `values` to `dtype`.
  static Tensor from_doubles(Shape shape, Dtype dtype, std::span<const double> values, bool requires_grad = false);
  static Tensor full(Shape shape, Dtype dtype, double value, bool requires_grad = false);
  static Tensor zeros(Shape shape, Dtype dtype, bool requires_grad = false) {
    return full(std::move(shape), dtype, 0.0, requires_grad);
  }
  static Tensor ones(Shape shape, Dtype dtype, bool requires_grad = false) {
    return full(std::move(shape), dtype, 1.0, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  TensorId id() const { return impl().id; }
  const Shape& shape() const { return impl().shape; }
  Dtype dtype() const { return impl().data.index() == 0 ? Dtype::F32 : Dtype::F64; }
  bool requires_grad() const { return impl().requires_grad; }
  MemoryCategory category() const { return impl().category; }
  std::size_t numel() const { return impl().shape.numel(); }
  std::size_t byte_size() const { return numel() * dtype_width(dtype()); }

  template <typename T>
  std::span<const T> values() const {
    const auto* vec = std::get_if<std::vector<T>>(&impl().data);
    if (vec == nullptr) {
      throw Error(ErrorCode::DtypeMismatch, "tensor holds " + std::string(dtype_name(dtype())));
    }
    return {vec->data(), vec->size()};
  }

  double at(std::size_t flat_index) const;
  /// Value of a single-element tensor.
  double item() const;
  std::vector<double> to_doubles() const;

  /// Same data under a new id and flag.
  Tensor detached(bool requires_grad) const;

 private:
  explicit Tensor(std::shared_ptr<const detail::TensorStorage> impl) : impl_(std::move(impl)) {}
  const detail::TensorStorage& impl() const;
  static void check_count(const Shape& shape, std::size_t count);

  std::shared_ptr<const detail::TensorStorage> impl_;
};

std::size_t byte_size(const Tensor& t);
std::size_t byte_size(const Shape& shape, Dtype dtype);

Tensor randn(const Shape& shape, Dtype dtype, Rng& rng, bool requires_grad = false);
Tensor zeros_like(const Tensor& t);

// Plain value arithmetic; nothing is recorded for differentiation.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// Rank-0 tensor holding the sum of all elements.
Tensor sum(const Tensor& a);

void check_same_shape(const Tensor& a, const Tensor& b, std::string_view what);
void check_same_dtype(const Tensor& a, const Tensor& b, std::string_view what);

}  // namespace memsave
