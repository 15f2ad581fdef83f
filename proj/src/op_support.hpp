#pragma once

#include <cmath>
#include <initializer_list>
#include <string>

#include "contraspeech/tensor.hpp"

namespace contraspeech::detail {

inline bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

inline void check_finite(const Tensor& t, const char* op) {
  if (!finite_check_enabled()) return;
  for (float v : t.data())
    if (!std::isfinite(v)) fail(ErrorKind::Contract, std::string("non-finite value produced by ") + op);
}

inline std::span<float> grad_of(Tensor& t) { return t.ensure_grad(); }

}  // namespace contraspeech::detail
