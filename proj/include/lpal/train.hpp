#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "lpal/datapool.hpp"
#include "lpal/model.hpp"
#include "lpal/optim.hpp"
#include "lpal/rng.hpp"

namespace lpal {

enum class LpLossKind { ranking, mse };
std::string to_string(LpLossKind k);
LpLossKind lp_loss_kind_from_string(const std::string& s);

/// Which classification heads contribute to the task loss.
enum class HeadSelection { both, weather, light };
std::string to_string(HeadSelection h);
HeadSelection head_selection_from_string(const std::string& s);

struct InitPolicy {
    enum class Kind { random, warmstart };
    Kind kind = Kind::random;
    std::uint64_t seed = 0;
    std::filesystem::path checkpoint;
};

struct TrainConfig {
    int epochs = 30;
    int batch_size = 16;
    /// Schedule thresholds count epochs here.
    SgdConfig optimizer;
    double lambda = 1.0;
    double margin = 1.0;
    LpLossKind lp_loss = LpLossKind::ranking;
    /// cycle -> number of trailing structural units that train. Cycles not listed train everything.
    std::map<int, int> freeze_schedule;
    InitPolicy init;
    HeadSelection heads = HeadSelection::both;
    /// Skip the loss-prediction branch entirely (no lp forward, no lp loss).
    bool ablate_loss_prediction = false;
    /// Seeds batch order and ranking pairs.
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochStats {
    int epoch = 0;
    double task_loss = 0;
    double lp_loss = 0;
    double weather_accuracy = 0;
    double light_accuracy = 0;
    double wall_seconds = 0;
};

void to_json(nlohmann::json& j, const EpochStats& s);
/// One JSON object per line.
void write_epoch_stats(std::ostream& os, std::span<const EpochStats> stats);

struct TaskLossValue {
    double mean = 0;
    std::vector<double> per_sample;
};

/// Mean over samples of CE(weather) + CE(light), with the per-sample terms.
TaskLossValue task_loss(const ModelOutput& output, std::span<const LabelSet> labels, HeadSelection heads = HeadSelection::both);

/// Graph form; returns the per-sample [N] loss. Take mean() for the scalar.
Var task_loss_per_sample(const ForwardVars& fv, std::span<const LabelSet> labels, HeadSelection heads = HeadSelection::both);

/// Pairs consecutive entries of a shuffled 0..n-1. n must be even.
std::vector<std::pair<int, int>> shuffled_pairs(int n, Rng& rng);

/// Margin ranking loss over shuffled pairs; targets are plain values (detached).
Var lp_loss_ranking(Var pred, const Tensor& target, double margin, Rng& rng);
Var lp_loss_mse(Var pred, const Tensor& target);

Model make_initial_model(const ModelConfig& model, const InitPolicy& init);

/// Trainable-parameter mask for a cycle: freeze schedule plus head selection.
TrainableMask cycle_mask(const Model& model, const TrainConfig& config, int cycle);

/// Called after every epoch with the stats and the current parameters.
using EpochHook = std::function<void(const EpochStats&, const Model&)>;

struct TrainResult {
    Model model;
    std::vector<EpochStats> epochs;
};

/// Trains `init` on the working labels of `ids`. Reads only learner-visible fields.
TrainResult train_cycle(Model init, const Pool& pool, std::span<const int> ids, const TrainConfig& config, int cycle,
                        const EpochHook& hook = {});
/// Builds the starting model from config.init, then trains.
TrainResult train_cycle(const ModelConfig& model, const Pool& pool, std::span<const int> ids, const TrainConfig& config,
                        int cycle, const EpochHook& hook = {});

}  // namespace lpal
