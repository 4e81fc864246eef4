#include "htune/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "htune/errors.hpp"
#include "htune/ops.hpp"

namespace htune {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
    if (!(eps > 0.0)) throw ConfigError("finite_diff_grad: eps must be positive");
    const double f0 = f(x);
    const double f1 = f(x);
    if (std::memcmp(&f0, &f1, sizeof f0) != 0)
        throw ContractError("finite_diff_grad: function is not deterministic (unseeded dropout?)");
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double up = f(probe);
        probe[i] = orig - eps;
        const double down = f(probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

double relative_error(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DimensionError("relative_error: shapes differ");
    double na = 0.0, nb = 0.0, nd = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        na += a[i] * a[i];
        nb += b[i] * b[i];
        nd += (a[i] - b[i]) * (a[i] - b[i]);
    }
    const double denom = std::sqrt(std::max(na, nb));
    if (denom < 1e-12) return 0.0;
    return std::sqrt(nd) / denom;
}

GradCheckResult check_primitive(const Primitive& primitive, Rng& rng, double eps) {
    const std::vector<Tensor> inputs = primitive.sample_inputs(rng);

    Tensor readout;
    {
        Graph probe;
        std::vector<Var> vars;
        for (const auto& t : inputs) vars.push_back(probe.input(t));
        readout = Tensor(primitive.apply(vars).shape());
        for (auto& w : readout.data()) w = rng.normal();
    }

    auto evaluate = [&](const std::vector<Tensor>& args) {
        Graph g;
        std::vector<Var> vars;
        for (const auto& t : args) vars.push_back(g.input(t));
        return ops::weighted_sum(primitive.apply(vars), readout).value().item();
    };

    Graph g;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(g.variable(t));
    Var loss = ops::weighted_sum(primitive.apply(vars), readout);
    Gradients grads = g.backward(loss);

    GradCheckResult result{primitive.name, 0.0};
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto f = [&](const Tensor& xi) {
            auto args = inputs;
            args[i] = xi;
            return evaluate(args);
        };
        const Tensor numeric = finite_diff_grad(f, inputs[i], eps);
        result.max_relative_error = std::max(result.max_relative_error, relative_error(grads.of(vars[i]), numeric));
    }
    return result;
}

}  // namespace htune
