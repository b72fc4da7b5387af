#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nugget/tensor.hpp"

namespace nugget {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::vector<double> per_input;  // relative error per input tensor
};

// Central finite differences against reverse mode. `fn` must map the inputs
// to a scalar and be deterministic. Relative error per input is
// ||analytic - numeric|| / max(||analytic||, ||numeric||, floor).
GradCheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                          std::vector<Tensor> inputs, double step = 1e-5, double floor = 1e-12);

}  // namespace nugget

namespace nugget {

struct PrimitiveCheck {
  std::string name;
  std::size_t cases = 0;
  double max_relative_error = 0.0;
};

// Finite-difference checks of every differentiable primitive (and the
// attention/layer composites) on `cases` random shapes and values each.
std::vector<PrimitiveCheck> check_primitives(std::size_t cases = 20, std::uint64_t seed = 0);

}  // namespace nugget
