#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "lpal/autograd.hpp"
#include "lpal/tensor.hpp"

namespace lpal {

inline constexpr int kWeatherClasses = 3;
inline constexpr int kLightClasses = 3;

struct StageSpec {
    int channels = 16;
    int blocks = 2;
    friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

struct BackboneConfig {
    int input_side = 32;
    std::vector<StageSpec> stages{{16, 2}, {32, 2}, {64, 2}};
    std::vector<int> taps{0, 1, 2};
    bool residual = false;
    friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct LossPredHeadConfig {
    int embed_width = 32;
    friend bool operator==(const LossPredHeadConfig&, const LossPredHeadConfig&) = default;
};

struct ModelConfig {
    BackboneConfig backbone;
    LossPredHeadConfig loss_head;

    /// Throws std::invalid_argument describing the first violated constraint.
    void validate() const;
    /// Stable hash of the architecture; checkpoints refuse to load across fingerprints.
    std::string fingerprint() const;
    /// Closed-form parameter count implied by the configuration.
    std::size_t expected_parameter_count() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

enum class Provenance { random_init, source_pretrained, cycle_trained };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

/// Plain-value outputs for a batch, order-aligned with the input rows.
struct ModelOutput {
    Tensor weather_logits;  // [N,3]
    Tensor light_logits;    // [N,3]
    Tensor predicted_loss;  // [N]

    int batch() const { return weather_logits.empty() ? 0 : weather_logits.dim(0); }
};

/// Graph handles produced by a differentiable forward pass.
struct ForwardVars {
    Var weather_logits;
    Var light_logits;
    Var predicted_loss;
    std::vector<Var> stage_outputs;
};

/// Which parameters receive updates. Indexed like Model::parameters().
using TrainableMask = std::vector<bool>;

/// Plain conv backbone with two 3-way heads and a loss-prediction module fed
/// by global-average-pooled stage outputs.
class Model {
public:
    static Model build(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return config_; }
    std::uint64_t seed() const noexcept { return seed_; }
    Provenance provenance() const noexcept { return provenance_; }
    void set_provenance(Provenance p) noexcept { provenance_ = p; }

    std::vector<Parameter>& parameters() noexcept { return params_; }
    const std::vector<Parameter>& parameters() const noexcept { return params_; }
    std::size_t parameter_count() const;
    Parameter& parameter(const std::string& name);

    /// Records a forward pass. Parameters outside `mask` (when given) enter the graph as constants.
    ForwardVars forward(Graph<float>& g, Var input, const TrainableMask* mask = nullptr);

    /// Inference without gradient tracking, chunked to bound memory.
    ModelOutput forward(const Tensor& batch) const;

    /// Structural units counted by freeze_prefix: one per stage, then the heads.
    int structural_units() const noexcept { return static_cast<int>(config_.backbone.stages.size()) + 1; }
    /// Only the last `depth` structural units train; the loss-prediction module always does.
    TrainableMask freeze_prefix(int depth) const;

    void validate_input(const Tensor& batch) const;

private:
    Model() = default;
    friend Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& config);

    ModelConfig config_;
    std::uint64_t seed_ = 0;
    Provenance provenance_ = Provenance::random_init;
    std::vector<Parameter> params_;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class FingerprintMismatch : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};
class CorruptCheckpoint : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& config);

}  // namespace lpal
