#include "lpal/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lpal {

void SgdConfig::validate() const {
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw std::invalid_argument("learning rate must be positive");
    if (momentum < 0 || momentum >= 1) throw std::invalid_argument("momentum must lie in [0,1)");
    if (!(clip_norm >= 0) || !std::isfinite(clip_norm)) throw std::invalid_argument("clip norm must be finite and >= 0");
    for (const auto& s : schedule) {
        if (!(s.multiplier > 0)) {
            throw std::invalid_argument("schedule multiplier at step " + std::to_string(s.threshold) + " must be positive");
        }
    }
}

double SgdConfig::rate_at(std::int64_t step) const {
    double lr = learning_rate;
    for (const auto& s : schedule) {
        if (s.threshold <= step) lr *= s.multiplier;
    }
    return lr;
}

Sgd::Sgd(SgdConfig config) : config_(std::move(config)) { config_.validate(); }

void Sgd::step(std::span<Parameter> params, const std::vector<bool>& trainable) {
    if (!trainable.empty() && trainable.size() != params.size()) {
        throw std::invalid_argument("trainability mask length does not match parameter count");
    }
    if (velocity_.size() != params.size()) {
        velocity_.clear();
        for (const auto& p : params) velocity_.emplace_back(p.value.shape());
    }
    const float lr = static_cast<float>(config_.rate_at(step_));
    const float mu = static_cast<float>(config_.momentum);
    float gscale = 1.0f;
    if (config_.clip_norm > 0) {
        double sq = 0;
        for (std::size_t k = 0; k < params.size(); ++k) {
            if ((!trainable.empty() && !trainable[k]) || params[k].grad.empty()) continue;
            for (float g : params[k].grad.data()) sq += static_cast<double>(g) * g;
        }
        const double norm = std::sqrt(sq);
        if (norm > config_.clip_norm) gscale = static_cast<float>(config_.clip_norm / norm);
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (!trainable.empty() && !trainable[k]) continue;
        Parameter& p = params[k];
        Tensor& v = velocity_[k];
        if (v.shape() != p.value.shape()) throw ShapeError("velocity buffer shape differs from parameter " + p.name);
        if (p.grad.empty()) continue;
        if (p.grad.shape() != p.value.shape()) throw ShapeError("gradient shape differs from parameter " + p.name);
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            v[i] = mu * v[i] + gscale * p.grad[i];
            p.value[i] -= lr * v[i];
        }
    }
    ++step_;
}

}  // namespace lpal
