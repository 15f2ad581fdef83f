#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "contraspeech/tensor.hpp"

namespace contraspeech {

enum class BinaryKind { Add, Sub, Mul, Div };
enum class UnaryKind { Neg, Exp, Log, Sigmoid, LogSigmoid, Tanh, ReluClipped, Scale };
enum class ReduceKind { Sum, Mean, Max, LogSumExp };

// Elementwise ops broadcast under trailing-dimension rules. log() of a
// non-positive value yields NaN/-inf rather than throwing.
Tensor elementwise(BinaryKind kind, const Tensor& a, const Tensor& b);
Tensor elementwise(UnaryKind kind, const Tensor& a, float parameter = 0.0f);

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryKind::Add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryKind::Sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryKind::Mul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return elementwise(BinaryKind::Div, a, b); }
inline Tensor neg(const Tensor& a) { return elementwise(UnaryKind::Neg, a); }
inline Tensor exp(const Tensor& a) { return elementwise(UnaryKind::Exp, a); }
inline Tensor log(const Tensor& a) { return elementwise(UnaryKind::Log, a); }
inline Tensor sigmoid(const Tensor& a) { return elementwise(UnaryKind::Sigmoid, a); }
/// log(sigmoid(x)) evaluated without overflow for large |x|.
inline Tensor log_sigmoid(const Tensor& a) { return elementwise(UnaryKind::LogSigmoid, a); }
inline Tensor tanh(const Tensor& a) { return elementwise(UnaryKind::Tanh, a); }
inline Tensor relu_clipped(const Tensor& a, float cap) { return elementwise(UnaryKind::ReluClipped, a, cap); }
inline Tensor relu(const Tensor& a) {
  return elementwise(UnaryKind::ReluClipped, a, std::numeric_limits<float>::infinity());
}
inline Tensor scale(const Tensor& a, float factor) { return elementwise(UnaryKind::Scale, a, factor); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(float s, const Tensor& a) { return scale(a, s); }

/// Elementwise op with a caller-supplied derivative df(x, f(x)).
Tensor map_unary(const Tensor& a, std::function<float(float)> f, std::function<float(float, float)> df);

/// [M x K] * [K x N]; accumulates in double.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Removes `axis`. Sum over an empty axis is 0; logsumexp subtracts the max.
Tensor reduce(ReduceKind kind, const Tensor& a, std::size_t axis);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Along the last axis.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
/// Zero-mean unit-variance along the last axis (no affine).
Tensor layer_norm(const Tensor& a, float epsilon = 1e-5f);
/// Scales every row to unit L2 norm; all-zero rows stay zero.
Tensor row_normalize(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
Tensor reverse_rows(const Tensor& a);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
/// Copy of `a` with the listed rows overwritten by `row` (a 1-D tensor).
Tensor replace_rows(const Tensor& a, std::span<const std::size_t> rows, const Tensor& row);
/// Same values, cut from the tape.
Tensor detach(const Tensor& a);

}  // namespace contraspeech
