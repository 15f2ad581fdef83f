#pragma once

#include <functional>
#include <string>
#include <vector>

#include "contraspeech/tensor.hpp"

namespace contraspeech {

struct GradCheckOptions {
  float step = 1e-3f;
  double rtol = 1e-3;
  // Float32 round-off in f makes central differences noisy by roughly
  // eps * |f| / step. Elements whose error stays under this many multiples
  // of that bound pass regardless of rtol.
  double roundoff_multiple = 8.0;
  // 0 checks every element; otherwise this many evenly spaced elements per
  // parameter (first and last included).
  std::size_t max_elements = 0;
};

struct ParameterCheck {
  std::size_t index = 0;               // position in the params list
  double max_relative_error = 0.0;     // max over elements of |a - n| / max(|a|, |n|)
  double max_absolute_error = 0.0;
  std::size_t worst_element = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParameterCheck> parameters;
  double loss = 0.0;
  bool passed = true;
  std::string summary() const;
};

/// Compares reverse-mode gradients of f against central differences.
/// `f` must rebuild its graph from `params` on every call and be
/// deterministic. Parameter values are restored afterwards.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                           const GradCheckOptions& options = {});

}  // namespace contraspeech
