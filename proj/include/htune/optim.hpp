#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "htune/tensor.hpp"

namespace htune {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

struct AdamState {
    Tensor m, v;
    std::uint64_t t = 0;
};

/// One decoupled-decay Adam update in the PyTorch order: decay, moments,
/// bias-corrected step. A default-constructed state is initialized lazily.
void adamw_step(Tensor& param, const Tensor& grad, AdamState& state, double lr, const AdamWConfig& cfg);

/// Owns moment state for a fixed list of parameters.
class AdamW {
public:
    AdamW(std::vector<Tensor*> params, AdamWConfig cfg);
    /// grads[i] belongs to params[i].
    void step(std::span<const Tensor* const> grads, double lr);
    std::uint64_t steps() const noexcept { return steps_; }

private:
    std::vector<Tensor*> params_;
    std::vector<AdamState> state_;
    AdamWConfig cfg_;
    std::uint64_t steps_ = 0;
};

/// floor + 0.5 (base - floor)(1 + cos(pi step / total)).
double cosine_lr(std::size_t step, std::size_t total_steps, double base, double floor = 0.0);

}  // namespace htune
