#include "contraspeech/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace contraspeech {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

Tensor::Tensor() : impl_(std::make_shared<TensorStorage>()) {
  impl_->shape = {};
  impl_->data.assign(1, 0.0f);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  auto impl = std::make_shared<TensorStorage>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  require(shape_numel(shape) == values.size(), ErrorKind::Dimension,
          "tensor data length " + std::to_string(values.size()) + " does not match shape " + shape_string(shape));
  auto impl = std::make_shared<TensorStorage>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from({}, {value}, requires_grad); }

std::size_t Tensor::dim(std::size_t axis) const {
  require(axis < impl_->shape.size(), ErrorKind::Dimension,
          "axis " + std::to_string(axis) + " out of range for shape " + shape_string(impl_->shape));
  return impl_->shape[axis];
}

float Tensor::item() const {
  require(numel() == 1, ErrorKind::Contract, "item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

MatrixMap Tensor::matrix() {
  const auto& s = impl_->shape;
  if (s.size() == 2) return MatrixMap(impl_->data.data(), s[0], s[1]);
  if (s.size() <= 1) return MatrixMap(impl_->data.data(), 1, impl_->data.size());
  fail(ErrorKind::Dimension, "matrix view of rank-" + std::to_string(s.size()) + " tensor");
}

ConstMatrixMap Tensor::matrix() const {
  const auto& s = impl_->shape;
  if (s.size() == 2) return ConstMatrixMap(impl_->data.data(), s[0], s[1]);
  if (s.size() <= 1) return ConstMatrixMap(impl_->data.data(), 1, impl_->data.size());
  fail(ErrorKind::Dimension, "matrix view of rank-" + std::to_string(s.size()) + " tensor");
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

std::span<float> Tensor::grad() {
  require(has_grad(), ErrorKind::Contract, "tensor has no gradient");
  return impl_->grad;
}

std::span<const float> Tensor::grad() const {
  require(has_grad(), ErrorKind::Contract, "tensor has no gradient");
  return impl_->grad;
}

MatrixMap Tensor::grad_matrix() const {
  ensure_grad();
  const auto& s = impl_->shape;
  if (s.size() == 2) return MatrixMap(impl_->grad.data(), s[0], s[1]);
  return MatrixMap(impl_->grad.data(), 1, impl_->grad.size());
}

void Tensor::zero_grad() {
  if (has_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

std::span<float> Tensor::ensure_grad() const {
  if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorStorage>(*impl_);
  return Tensor(std::move(impl));
}

void Tape::record(std::vector<Tensor> participants, BackwardFn fn) {
  Record r;
  r.participants.reserve(participants.size());
  for (auto& t : participants) r.participants.push_back(t.storage());
  r.fn = std::move(fn);
  records_.push_back(std::move(r));
}

void Tape::run_backward() {
  // Every participant that wants a gradient gets a buffer, even if no rule
  // ends up writing to it.
  for (auto& r : records_)
    for (auto& p : r.participants)
      if (p->requires_grad && p->grad.size() != p->data.size()) p->grad.assign(p->data.size(), 0.0f);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->fn();
  records_.clear();
}

namespace {
thread_local Tape g_tape;
thread_local bool g_grad_enabled = true;
thread_local bool g_finite_check = false;
}  // namespace

Tape& active_tape() { return g_tape; }
bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void set_finite_check(bool enabled) { g_finite_check = enabled; }
bool finite_check_enabled() { return g_finite_check; }

void backward(const Tensor& loss) {
  require(loss.numel() == 1, ErrorKind::Contract,
          "backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  Tensor seed = loss;
  auto g = seed.ensure_grad();
  g[0] += 1.0f;
  active_tape().run_backward();
}

}  // namespace contraspeech
