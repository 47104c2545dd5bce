#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "wmf/error.hpp"

namespace wmf {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

std::string_view to_string(DType dtype);

// Element type used for tensors created without an explicit dtype. Per thread;
// gradient verification switches it to F64.
DType default_dtype();
void set_default_dtype(DType dtype);

class DTypeScope {
 public:
  explicit DTypeScope(DType dtype) : saved_(default_dtype()) { set_default_dtype(dtype); }
  ~DTypeScope() { set_default_dtype(saved_); }
  DTypeScope(const DTypeScope&) = delete;
  DTypeScope& operator=(const DTypeScope&) = delete;

 private:
  DType saved_;
};

// When enabled (the default) every op output is scanned for NaN/Inf.
bool finite_checks();
void set_finite_checks(bool enabled);

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Calls f.template operator()<T>() with T matching dtype.
template <class F>
decltype(auto) dispatch(DType dtype, F&& f) {
  if (dtype == DType::F32) return f.template operator()<float>();
  return f.template operator()<double>();
}

namespace detail {

struct Buffer {
  DType dtype = DType::F32;
  std::vector<float> f32;
  std::vector<double> f64;

  Buffer() = default;
  Buffer(DType dt, std::size_t n);

  std::size_t size() const { return dtype == DType::F32 ? f32.size() : f64.size(); }
  double get(std::size_t i) const { return dtype == DType::F32 ? f32[i] : f64[i]; }
  void set(std::size_t i, double v);
  void fill(double v);

  template <class T>
  std::span<T> view();
  template <class T>
  std::span<const T> view() const;
};

template <>
inline std::span<float> Buffer::view<float>() { return f32; }
template <>
inline std::span<double> Buffer::view<double>() { return f64; }
template <>
inline std::span<const float> Buffer::view<float>() const { return f32; }
template <>
inline std::span<const double> Buffer::view<double>() const { return f64; }

struct TensorImpl {
  Shape shape;
  Buffer value;
  std::unique_ptr<Buffer> grad;
  bool requires_grad = false;
  bool leaf = true;

  Buffer& ensure_grad();
};

}  // namespace detail

// Dense row-major tensor handle. Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, DType dtype = default_dtype());
  static Tensor full(Shape shape, double value, DType dtype = default_dtype());
  static Tensor from(Shape shape, std::span<const double> values, DType dtype = default_dtype());
  static Tensor from(Shape shape, std::initializer_list<double> values,
                     DType dtype = default_dtype());

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->value.size()); }
  DType dtype() const { return impl_->value.dtype; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return impl_->leaf; }

  template <class T>
  std::span<T> data() {
    check_dtype<T>();
    return impl_->value.view<T>();
  }
  template <class T>
  std::span<const T> data() const {
    check_dtype<T>();
    return std::as_const(impl_->value).view<T>();
  }

  double at(std::size_t i) const { return impl_->value.get(i); }
  void set(std::size_t i, double v) { impl_->value.set(i, v); }
  double item() const;
  std::vector<double> values() const;

  bool has_grad() const { return impl_->grad != nullptr; }
  // Gradient as a fresh value-only tensor (zeros when none accumulated yet).
  Tensor grad() const;
  template <class T>
  std::span<T> grad_data() {
    check_dtype<T>();
    return impl_->ensure_grad().view<T>();
  }
  void zero_grad();

  // Value-only deep copy: no grad, no tape linkage. Safe to hand to other threads.
  Tensor detach() const;
  Tensor clone() const { return detach(); }
  Tensor to(DType dtype) const;

  // Overwrites the values in place (shapes must agree). Does not touch the tape.
  void assign(const Tensor& other);

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  template <class T>
  void check_dtype() const {
    constexpr DType want = sizeof(T) == 4 ? DType::F32 : DType::F64;
    require(dtype() == want, ErrorKind::Input, "tensor dtype mismatch on data access");
  }

  std::shared_ptr<detail::TensorImpl> impl_;
};

// Ordered record of differentiable ops executed while the tape is active.
class Tape {
 public:
  struct Entry {
    const char* op = "";
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    std::function<void(Entry&)> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Entry entry);

  // Seeds d(root)/d(root) = 1 and walks entries in reverse. Leaf gradients
  // accumulate. A second call without reset() is an error.
  void backward(const Tensor& root);
  void reset();

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  bool consumed() const { return consumed_; }
  std::size_t last_backward_visits() const { return visits_; }

 private:
  std::vector<Entry> entries_;
  bool consumed_ = false;
  std::size_t visits_ = 0;
};

// Thread-local tape activation. Ops record only while a scope is alive.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* saved_;
};

// Suspends recording for its lifetime (value-only evaluation).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* saved_;
};

Tape* active_tape();

}  // namespace wmf
