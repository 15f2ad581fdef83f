#include "contraspeech/adam.hpp"

#include <cmath>

namespace contraspeech {

Adam::Adam(ParameterSet params, LrSchedule schedule, AdamOptions options)
    : params_(std::move(params)), schedule_(schedule), options_(options) {
  for (const auto& [_, t] : params_.items()) {
    first_.emplace_back(t.numel(), 0.0);
    second_.emplace_back(t.numel(), 0.0);
  }
}

void Adam::step() {
  const double lr = schedule_.at(step_);
  const double t = static_cast<double>(step_ + 1);
  const double c1 = 1.0 - std::pow(options_.beta1, t);
  const double c2 = 1.0 - std::pow(options_.beta2, t);
  std::size_t k = 0;
  for (const auto& [name, param] : params_.items()) {
    Tensor p = param;
    require(p.has_grad(), ErrorKind::Contract, "parameter " + name + " has no gradient");
    auto g = p.grad();
    auto v = p.data();
    auto& m1 = first_[k];
    auto& m2 = second_[k];
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double gi = g[i];
      m1[i] = options_.beta1 * m1[i] + (1.0 - options_.beta1) * gi;
      m2[i] = options_.beta2 * m2[i] + (1.0 - options_.beta2) * gi * gi;
      const double update = lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + options_.epsilon);
      v[i] = static_cast<float>(v[i] - update);
    }
    ++k;
  }
  ++step_;
}

}  // namespace contraspeech
