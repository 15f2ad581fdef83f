#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "contraspeech/errors.hpp"

namespace contraspeech {

using Shape = std::vector<std::size_t>;

using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrixXf>;
using ConstMatrixMap = Eigen::Map<const RowMatrixXf>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct TensorStorage {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
};

/// Dense row-major float tensor with shared ownership. Copies alias the
/// same storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);
  /// Copies a row-major Eigen expression into a new rank-2 tensor.
  template <typename Derived>
  static Tensor from_matrix(const Eigen::MatrixBase<Derived>& m, bool requires_grad = false) {
    Tensor t = zeros({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, requires_grad);
    t.matrix() = m.template cast<float>();
    return t;
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  std::span<float> data() { return impl_->data; }
  std::span<const float> data() const { return impl_->data; }
  float item() const;
  float& operator[](std::size_t i) { return impl_->data[i]; }
  float operator[](std::size_t i) const { return impl_->data[i]; }
  float at(std::size_t r, std::size_t c) const { return impl_->data[r * impl_->shape[1] + c]; }

  /// Rank-2 views; rank-1 tensors view as a single row.
  MatrixMap matrix();
  ConstMatrixMap matrix() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<float> grad();
  std::span<const float> grad() const;
  MatrixMap grad_matrix() const;
  void zero_grad();
  /// Allocates a zero gradient buffer if none exists.
  std::span<float> ensure_grad() const;

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<TensorStorage>& storage() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorStorage> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorStorage> impl_;
};

/// Ordered record of differentiable operations on one thread.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::vector<Tensor> participants, BackwardFn fn);
  std::size_t size() const { return records_.size(); }
  /// Runs every recorded gradient rule once, newest first, then clears.
  void run_backward();
  void clear() { records_.clear(); }

 private:
  struct Record {
    std::vector<std::shared_ptr<TensorStorage>> participants;
    BackwardFn fn;
  };
  std::vector<Record> records_;
};

/// The tape owned by the calling thread.
Tape& active_tape();

bool grad_enabled();

/// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// When enabled, every op asserts its output is finite (thread-local flag).
void set_finite_check(bool enabled);
bool finite_check_enabled();

/// Seeds d(loss)/d(loss) = 1 and propagates through the active tape, which
/// is consumed. Gradients accumulate into existing buffers.
void backward(const Tensor& loss);

}  // namespace contraspeech
