// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0

#include "memsave/tensor.hpp"

#include <sstream>

namespace memsave {

std::string_view dtype_name(Dtype dtype) { return dtype == Dtype::F32 ? "f32" : "f64"; }

Dtype parse_dtype(std::string_view name) {
  if (name == "f32" || name == "F32" || name == "float32") return Dtype::F32;
  if (name == "f64" || name == "F64" || name == "float64") return Dtype::F64;
  throw Error(ErrorCode::InvalidConfig, "unknown dtype '" + std::string(name) + "'");
}

Shape::Shape(std::vector<std::int64_t> dims) : dims_(std::move(dims)) {
  for (auto d : dims_) {
    if (d <= 0) throw Error(ErrorCode::InvalidConfig, "shape dimensions must be positive, got " + to_string());
  }
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (auto d : dims_) n *= static_cast<std::size_t>(d);
  return n;
}

std::string Shape::to_string() const {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) out << ", ";
    out << dims_[i];
  }
  if (dims_.size() == 1) out << ',';
  out << ')';
  return out.str();
}

namespace detail {

TensorStorage::TensorStorage(Shape s, std::variant<std::vector<float>, std::vector<double>> d, bool rg)
    : id(next_object_id()),
      shape(std::move(s)),
      data(std::move(d)),
      requires_grad(rg),
      category(current_category()),
      ledger(current_ledger()) {
  if (auto l = ledger.lock()) {
    l->alloc(id, shape.numel() * (data.index() == 0 ? 4 : 8), category);
  }
}

TensorStorage::~TensorStorage() {
  if (auto l = ledger.lock()) l->free(id);
}

}  // namespace detail

const detail::TensorStorage& Tensor::impl() const {
  if (!impl_) throw Error(ErrorCode::UnknownTensor, "use of an undefined tensor handle");
  return *impl_;
}

void Tensor::check_count(const Shape& shape, std::size_t count) {
  if (shape.numel() != count) {
    throw Error(ErrorCode::ShapeMismatch,
                "shape " + shape.to_string() + " needs " + std::to_string(shape.numel()) + " values, got " +
                    std::to_string(count));
  }
}

Tensor Tensor::from_doubles(Shape shape, Dtype dtype, std::span<const double> values, bool requires_grad) {
  return visit_dtype(dtype, [&]<typename T>() {
    return from_vector<T>(std::move(shape), std::vector<T>(values.begin(), values.end()), requires_grad);
  });
}

Tensor Tensor::full(Shape shape, Dtype dtype, double value, bool requires_grad) {
  const std::size_t n = shape.numel();
  return visit_dtype(dtype, [&]<typename T>() {
    return from_vector<T>(std::move(shape), std::vector<T>(n, static_cast<T>(value)), requires_grad);
  });
}

double Tensor::at(std::size_t flat_index) const {
  return visit_dtype(dtype(), [&]<typename T>() { return static_cast<double>(values<T>()[flat_index]); });
}

double Tensor::item() const {
  if (numel() != 1) throw Error(ErrorCode::ShapeMismatch, "item() on tensor of shape " + shape().to_string());
  return at(0);
}

std::vector<double> Tensor::to_doubles() const {
  return visit_dtype(dtype(), [&]<typename T>() {
    auto v = values<T>();
    return std::vector<double>(v.begin(), v.end());
  });
}

Tensor Tensor::detached(bool requires_grad) const {
  return visit_dtype(dtype(), [&]<typename T>() {
    auto v = values<T>();
    return from_vector<T>(shape(), std::vector<T>(v.begin(), v.end()), requires_grad);
  });
}

std::size_t byte_size(const Tensor& t) { return t.byte_size(); }

std::size_t byte_size(const Shape& shape, Dtype dtype) { return shape.numel() * dtype_width(dtype); }

Tensor randn(const Shape& shape, Dtype dtype, Rng& rng, bool requires_grad) {
  const std::size_t n = shape.numel();
  return visit_dtype(dtype, [&]<typename T>() {
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.next_normal());
    return Tensor::from_vector<T>(shape, std::move(v), requires_grad);
  });
}

Tensor zeros_like(const Tensor& t) { return Tensor::zeros(t.shape(), t.dtype()); }

void check_same_shape(const Tensor& a, const Tensor& b, std::string_view what) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(what) + ": " + a.shape().to_string() + " vs " + b.shape().to_string());
  }
}

void check_same_dtype(const Tensor& a, const Tensor& b, std::string_view what) {
  if (a.dtype() != b.dtype()) {
    throw Error(ErrorCode::DtypeMismatch,
                std::string(what) + ": " + std::string(dtype_name(a.dtype())) + " vs " +
                    std::string(dtype_name(b.dtype())));
  }
}

namespace {

template <typename Op>
Tensor zip(const Tensor& a, const Tensor& b, std::string_view what, Op op) {
  check_same_shape(a, b, what);
  check_same_dtype(a, b, what);
  return visit_dtype(a.dtype(), [&]<typename T>() {
    auto x = a.values<T>();
    auto y = b.values<T>();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = op(x[i], y[i]);
    return Tensor::from_vector<T>(a.shape(), std::move(out));
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", [](auto x, auto y) { return x + y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return zip(a, b, "mul", [](auto x, auto y) { return x * y; });
}

Tensor scale(const Tensor& a, double factor) {
  return visit_dtype(a.dtype(), [&]<typename T>() {
    auto x = a.values<T>();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * static_cast<T>(factor);
    return Tensor::from_vector<T>(a.shape(), std::move(out));
  });
}

Tensor sum(const Tensor& a) {
  return visit_dtype(a.dtype(), [&]<typename T>() {
    double acc = 0.0;
    for (auto x : a.values<T>()) acc += static_cast<double>(x);
    return Tensor::from_vector<T>(Shape{}, std::vector<T>{static_cast<T>(acc)});
  });
}

}  // namespace memsave
