#include "htune/optim.hpp"

#include <cmath>
#include <numbers>

#include "htune/errors.hpp"

namespace htune {

void adamw_step(Tensor& param, const Tensor& grad, AdamState& s, double lr, const AdamWConfig& cfg) {
    if (grad.shape() != param.shape())
        throw DimensionError("adamw_step: gradient " + shape_str(grad.shape()) + " vs parameter " + shape_str(param.shape()));
    if (!s.m.defined()) {
        s.m = Tensor::zeros(param.shape());
        s.v = Tensor::zeros(param.shape());
        s.t = 0;
    }
    if (s.m.shape() != param.shape() || s.v.shape() != param.shape())
        throw DimensionError("adamw_step: optimizer state " + shape_str(s.m.shape()) + " vs parameter " + shape_str(param.shape()));
    if (!grad.all_finite()) throw NumericError("adamw_step: non-finite gradient");

    s.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
    const double decay = 1.0 - lr * cfg.weight_decay;
    double* w = param.ptr();
    double* m = s.m.ptr();
    double* v = s.v.ptr();
    const double* g = grad.ptr();
    for (std::size_t i = 0; i < param.numel(); ++i) {
        w[i] *= decay;
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

AdamW::AdamW(std::vector<Tensor*> params, AdamWConfig cfg)
    : params_(std::move(params)), state_(params_.size()), cfg_(cfg) {}

void AdamW::step(std::span<const Tensor* const> grads, double lr) {
    if (grads.size() != params_.size())
        throw DimensionError("AdamW: " + std::to_string(grads.size()) + " gradients for " + std::to_string(params_.size()) + " parameters");
    for (std::size_t i = 0; i < params_.size(); ++i) adamw_step(*params_[i], *grads[i], state_[i], lr, cfg_);
    ++steps_;
}

double cosine_lr(std::size_t step, std::size_t total_steps, double base, double floor) {
    if (step > total_steps)
        throw InputError("cosine_lr: step " + std::to_string(step) + " beyond total " + std::to_string(total_steps));
    if (total_steps == 0) return base;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return floor + 0.5 * (base - floor) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace htune
