#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lpal/autograd.hpp"

namespace lpal {

struct ScheduleStep {
    std::int64_t threshold = 0;  // multiplier applies once step >= threshold
    double multiplier = 1.0;
};

struct SgdConfig {
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::vector<ScheduleStep> schedule;
    /// Rescales the trainable gradients to this global L2 norm when exceeded; 0 disables.
    double clip_norm = 0;

    void validate() const;
    /// base * product of multipliers whose threshold <= step.
    double rate_at(std::int64_t step) const;
};

/// Momentum SGD: v <- mu*v + g ; w <- w - lr(step)*v, after optional gradient clipping.
class Sgd {
public:
    explicit Sgd(SgdConfig config);

    /// Updates every parameter whose mask entry is true (all when mask is empty),
    /// then advances the step counter. Masked-out parameters and their velocity
    /// buffers are left untouched.
    void step(std::span<Parameter> params, const std::vector<bool>& trainable = {});

    std::int64_t step_count() const noexcept { return step_; }
    double current_rate() const { return config_.rate_at(step_); }
    const SgdConfig& config() const noexcept { return config_; }
    const std::vector<Tensor>& velocities() const noexcept { return velocity_; }

private:
    SgdConfig config_;
    std::vector<Tensor> velocity_;
    std::int64_t step_ = 0;
};

}  // namespace lpal
