#include "contraspeech/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace contraspeech {

std::string GradCheckReport::summary() const {
  std::ostringstream out;
  out << (passed ? "pass" : "FAIL") << " loss=" << loss;
  for (const auto& p : parameters)
    out << " [p" << p.index << " rel=" << p.max_relative_error << " abs=" << p.max_absolute_error
        << " at " << p.worst_element << (p.passed ? "" : " FAIL") << "]";
  return out.str();
}

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  active_tape().clear();
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  const Tensor loss = f();
  report.loss = loss.item();
  backward(loss);

  auto evaluate = [&]() {
    NoGradGuard guard;
    return static_cast<double>(f().item());
  };
  constexpr double eps = std::numeric_limits<float>::epsilon();
  const double noise = options.roundoff_multiple * eps * std::max(1.0, std::abs(report.loss)) /
                       static_cast<double>(options.step);

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    ParameterCheck check;
    check.index = pi;
    const auto g = p.ensure_grad();
    const std::vector<float> analytic(g.begin(), g.end());
    auto values = p.data();
    std::vector<std::size_t> elements;
    const std::size_t n = values.size();
    if (options.max_elements == 0 || n <= options.max_elements) {
      for (std::size_t i = 0; i < n; ++i) elements.push_back(i);
    } else {
      const std::size_t k = std::max<std::size_t>(options.max_elements, 2);
      for (std::size_t j = 0; j < k; ++j) elements.push_back(j * (n - 1) / (k - 1));
    }
    for (std::size_t i : elements) {
      const float original = values[i];
      const float up = original + options.step;
      const float down = original - options.step;
      values[i] = up;
      const double f_up = evaluate();
      values[i] = down;
      const double f_down = evaluate();
      values[i] = original;
      const double numeric = (f_up - f_down) / (static_cast<double>(up) - static_cast<double>(down));
      const double a = analytic[i];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max(std::abs(a), std::abs(numeric));
      const double rel = denom > 0.0 ? abs_err / denom : 0.0;
      const bool ok = abs_err <= options.rtol * denom || abs_err <= noise;
      if (rel > check.max_relative_error || (!ok && check.passed)) {
        check.max_relative_error = std::max(check.max_relative_error, rel);
        check.worst_element = i;
      }
      check.max_absolute_error = std::max(check.max_absolute_error, abs_err);
      if (!ok) check.passed = false;
    }
    report.passed = report.passed && check.passed;
    report.parameters.push_back(check);
  }
  return report;
}

}  // namespace contraspeech
