#include "wmf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace wmf {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Config: return "config";
    case ErrorKind::Input: return "input";
    case ErrorKind::Placement: return "placement";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Graph: return "graph";
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
  }
  return "unknown";
}

std::string_view to_string(DType dtype) { return dtype == DType::F32 ? "f32" : "f64"; }

namespace {
thread_local DType g_default_dtype = DType::F32;
thread_local Tape* g_active_tape = nullptr;
bool g_finite_checks = true;
}  // namespace

DType default_dtype() { return g_default_dtype; }
void set_default_dtype(DType dtype) { g_default_dtype = dtype; }
bool finite_checks() { return g_finite_checks; }
void set_finite_checks(bool enabled) { g_finite_checks = enabled; }

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

namespace detail {

Buffer::Buffer(DType dt, std::size_t n) : dtype(dt) {
  if (dt == DType::F32)
    f32.assign(n, 0.0f);
  else
    f64.assign(n, 0.0);
}

void Buffer::set(std::size_t i, double v) {
  if (dtype == DType::F32)
    f32[i] = static_cast<float>(v);
  else
    f64[i] = v;
}

void Buffer::fill(double v) {
  if (dtype == DType::F32)
    std::fill(f32.begin(), f32.end(), static_cast<float>(v));
  else
    std::fill(f64.begin(), f64.end(), v);
}

Buffer& TensorImpl::ensure_grad() {
  if (!grad) grad = std::make_unique<Buffer>(value.dtype, value.size());
  return *grad;
}

}  // namespace detail

namespace {
std::shared_ptr<detail::TensorImpl> make_impl(Shape shape, DType dtype) {
  for (auto e : shape) require(e >= 0, ErrorKind::Shape, "negative extent in " + to_string(shape));
  auto impl = std::make_shared<detail::TensorImpl>();
  auto n = static_cast<std::size_t>(numel(shape));
  impl->shape = std::move(shape);
  impl->value = detail::Buffer(dtype, n);
  return impl;
}
}  // namespace

Tensor Tensor::zeros(Shape shape, DType dtype) { return Tensor(make_impl(std::move(shape), dtype)); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t = zeros(std::move(shape), dtype);
  t.impl_->value.fill(value);
  return t;
}

Tensor Tensor::from(Shape shape, std::span<const double> values, DType dtype) {
  require(static_cast<std::int64_t>(values.size()) == wmf::numel(shape), ErrorKind::Shape,
          "value count " + std::to_string(values.size()) + " does not match shape " +
              to_string(shape));
  Tensor t = zeros(std::move(shape), dtype);
  for (std::size_t i = 0; i < values.size(); ++i) t.impl_->value.set(i, values[i]);
  return t;
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values, DType dtype) {
  return from(std::move(shape), std::span<const double>(values.begin(), values.size()), dtype);
}

std::int64_t Tensor::dim(int axis) const {
  const int r = static_cast<int>(rank());
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r, ErrorKind::Shape, "axis out of range");
  return impl_->shape[static_cast<std::size_t>(axis)];
}

Tensor& Tensor::set_requires_grad(bool on) {
  require(impl_->leaf, ErrorKind::Graph, "requires_grad can only be toggled on leaf tensors");
  impl_->requires_grad = on;
  return *this;
}

double Tensor::item() const {
  require(numel() == 1, ErrorKind::Shape, "item() needs a single-element tensor, got " +
                                              to_string(shape()));
  return at(0);
}

std::vector<double> Tensor::values() const {
  std::vector<double> out(static_cast<std::size_t>(numel()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(i);
  return out;
}

Tensor Tensor::grad() const {
  Tensor g = zeros(shape(), dtype());
  if (impl_->grad) g.impl_->value = *impl_->grad;
  return g;
}

void Tensor::zero_grad() {
  if (impl_->grad) impl_->grad->fill(0.0);
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->value = impl_->value;
  return Tensor(std::move(impl));
}

Tensor Tensor::to(DType dtype) const {
  Tensor t = zeros(shape(), dtype);
  for (std::size_t i = 0; i < static_cast<std::size_t>(numel()); ++i) t.set(i, at(i));
  return t;
}

void Tensor::assign(const Tensor& other) {
  require(other.shape() == shape(), ErrorKind::Shape,
          "assign: " + to_string(other.shape()) + " into " + to_string(shape()));
  if (other.dtype() == dtype()) {
    impl_->value = other.impl_->value;
  } else {
    for (std::size_t i = 0; i < static_cast<std::size_t>(numel()); ++i) set(i, other.at(i));
  }
}

void Tape::record(Entry entry) {
  require(!consumed_, ErrorKind::Graph, "cannot record onto a consumed tape; call reset()");
  entries_.push_back(std::move(entry));
}

void Tape::backward(const Tensor& root) {
  require(root.defined(), ErrorKind::Graph, "backward on undefined tensor");
  require(root.numel() == 1, ErrorKind::Graph,
          "backward root must be scalar, got shape " + to_string(root.shape()));
  require(!consumed_, ErrorKind::Graph, "repeated backward without reset");
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const Entry& e) { return e.output == root.impl(); });
  require(it != entries_.end(), ErrorKind::Graph, "backward root is not on this tape (detached graph)");

  root.impl()->ensure_grad().fill(1.0);
  visits_ = 0;
  for (auto e = entries_.rbegin(); e != entries_.rend(); ++e) {
    if (!e->output->grad) continue;
    e->backward(*e);
    ++visits_;
  }
  consumed_ = true;
}

void Tape::reset() {
  entries_.clear();
  consumed_ = false;
  visits_ = 0;
}

TapeScope::TapeScope(Tape& tape) : saved_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = saved_; }

NoGradScope::NoGradScope() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = saved_; }

Tape* active_tape() { return g_active_tape; }

}  // namespace wmf
