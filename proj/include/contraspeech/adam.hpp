#pragma once

#include <cstddef>
#include <vector>

#include "contraspeech/layers.hpp"

namespace contraspeech {

/// Two-phase step schedule: `high` for the first `switch_fraction` of the
/// run, `low` afterwards.
struct LrSchedule {
  float high = 3e-4f;
  float low = 5e-5f;
  double switch_fraction = 0.5;
  std::size_t total_steps = 1;

  float at(std::size_t step) const {
    return static_cast<double>(step) < switch_fraction * static_cast<double>(total_steps) ? high : low;
  }
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(ParameterSet params, LrSchedule schedule, AdamOptions options = {});

  /// One bias-corrected update. Every parameter must carry a gradient.
  void step();
  void zero_grad() { params_.zero_grad(); }
  std::size_t steps_taken() const { return step_; }
  float current_lr() const { return schedule_.at(step_); }
  const ParameterSet& parameters() const { return params_; }

 private:
  ParameterSet params_;
  LrSchedule schedule_;
  AdamOptions options_;
  std::vector<std::vector<double>> first_, second_;
  std::size_t step_ = 0;
};

}  // namespace contraspeech
