#include "nugget/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace nugget {

GradCheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& fn, std::vector<Tensor> inputs,
                          double step, double floor) {
  for (auto& t : inputs) {
    t.zero_grad();
    t.set_requires_grad(true);
  }
  Tensor out = fn(inputs);
  if (out.numel() != 1) throw DimensionError("gradcheck: function must return a scalar");
  backward(out);

  GradCheckResult result;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    std::vector<double> numeric(t.numel());
    auto values = t.mutable_data();
    {
      NoGradGuard no_grad;
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double original = values[i];
        values[i] = original + step;
        const double plus = fn(inputs).item();
        values[i] = original - step;
        const double minus = fn(inputs).item();
        values[i] = original;
        numeric[i] = (plus - minus) / (2.0 * step);
      }
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
    result.per_input.push_back(rel);
    result.max_relative_error = std::max(result.max_relative_error, rel);
  }
  return result;
}

}  // namespace nugget
