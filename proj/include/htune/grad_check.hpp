#pragma once

#include <functional>
#include <string>

#include "htune/op_registry.hpp"
#include "htune/tensor.hpp"

namespace htune {

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per
/// coordinate. Throws ContractError when f is not deterministic.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps = 1e-5);

/// ||a - b|| / max(||a||, ||b||); 0 when both norms are below 1e-12.
double relative_error(const Tensor& a, const Tensor& b);

struct GradCheckResult {
    std::string name;
    double max_relative_error = 0.0;
};

/// Draws one random instance of the primitive, reads the output through a
/// random linear functional and compares backward() against
/// finite_diff_grad for every input.
GradCheckResult check_primitive(const Primitive& primitive, Rng& rng, double eps = 1e-5);

}  // namespace htune
