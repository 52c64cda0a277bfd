#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "lpal/acquisition.hpp"
#include "lpal/datapool.hpp"
#include "lpal/metrics.hpp"
#include "lpal/model.hpp"
#include "lpal/train.hpp"

namespace lpal {

struct DataSource {
    enum class Kind { synth, pgm };
    Kind kind = Kind::synth;
    SynthConfig synth;
    std::filesystem::path image_dir;
    std::filesystem::path labels_csv;
    int side = 32;
};

struct ThresholdPolicy {
    enum class Kind { percentile, absolute };
    Kind kind = Kind::percentile;
    /// Percentiles (0..100) of the labeled set's predicted losses, or raw values.
    double low = 20;
    double high = 90;
};

struct WarmstartConfig {
    /// Disjoint source pool used for pretraining; labels all come from its truth.
    SynthConfig source;
    int pretrain_epochs = 20;
    double f1_threshold = 0.7;
    WarmstartConfig();
};

struct ExperimentConfig {
    DataSource data;
    ModelConfig model;
    TrainConfig train;
    std::size_t bootstrap = 90;
    std::size_t query_size = 30;
    int cycles = 5;
    StrategyKind strategy = StrategyKind::predicted_loss;
    /// Strategies compared by run_strategy_comparison.
    std::vector<StrategyKind> strategies{StrategyKind::predicted_loss, StrategyKind::random};
    ThresholdPolicy thresholds;
    bool auto_label = true;
    bool train_on_auto_labels = false;
    double oracle_noise = 0;
    double eval_fraction = 0.2;
    /// k of the top/bottom analysis; clamped to half the evaluated set.
    std::size_t topk = 50;
    std::vector<std::uint64_t> seeds{1};
    std::filesystem::path output_dir = "run";
    /// Seeds evaluated concurrently.
    int jobs = 1;
    WarmstartConfig warmstart;

    /// Static checks; pool-size checks happen in validate_budget.
    void validate() const;
    /// bootstrap + cycles*query_size must fit in the non-evaluation part of the pool.
    void validate_budget(std::size_t pool_size) const;
    std::size_t eval_count(std::size_t pool_size) const;
    std::size_t final_budget() const { return bootstrap + static_cast<std::size_t>(cycles) * query_size; }
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Unknown keys are rejected.
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig parse_experiment_config(const std::string& text);

/// Wraps any failure inside a run with the seed and cycle it happened in.
class LoopError : public std::runtime_error {
public:
    LoopError(const std::string& what, std::uint64_t seed, int cycle);
    std::uint64_t seed() const noexcept { return seed_; }
    int cycle() const noexcept { return cycle_; }

private:
    std::uint64_t seed_;
    int cycle_;
};

/// Builds the pool named by the data source. Ingest problems are returned, not thrown.
IngestResult load_pool(const DataSource& source);

struct BudgetCounts {
    std::size_t human = 0;  // bootstrap included
    std::size_t auto_labeled = 0;
    std::size_t queued = 0;
    std::size_t deferred = 0;
    std::size_t unlabeled = 0;
    std::size_t total() const { return human + auto_labeled + queued + deferred + unlabeled; }
};
void to_json(nlohmann::json& j, const BudgetCounts& c);
BudgetCounts budget_counts(const Pool& pool);

struct Evaluation {
    F1Result f1;
    HeadAccuracy accuracy;
    SpearmanResult spearman;
    std::size_t topk = 0;
    TopBottom top_bottom;
    std::map<std::string, TopBottom> per_label_top_bottom;
};

/// Held-out metrics. Reads truth, so it belongs to the evaluation harness, not the learner.
Evaluation evaluate(const Model& model, const Pool& pool, std::span<const int> ids, HeadSelection heads, std::size_t topk);

struct CycleOutcome {
    Model model;
    CycleReport report;
    std::vector<EpochStats> epochs;
};

struct QueryOutcome {
    std::vector<int> selected;  // rank order
    TriageThresholds thresholds;
    std::size_t auto_committed = 0;
    std::size_t deferred = 0;
    std::vector<AuditEntry> audit;
};

/// One seed of the active-learning procedure. The headless loop and the
/// annotation service drive the same object.
///
/// Learner steps (training, scoring, triage) touch only learner-visible sample
/// fields. Truth is read by the oracle (bootstrap and queue labeling) and by
/// held-out evaluation.
class Session {
public:
    /// Splits off the evaluation set and oracle-labels the bootstrap sample.
    /// `base` is the model every cycle starts from; without it a seeded random init is used.
    Session(ExperimentConfig config, std::uint64_t seed, Pool pool, std::optional<Model> base = std::nullopt);

    const ExperimentConfig& config() const noexcept { return config_; }
    std::uint64_t seed() const noexcept { return seed_; }
    int cycle() const noexcept { return cycle_; }
    const Pool& pool() const noexcept { return pool_; }
    /// Oracle-side access (annotation front-ends, audits). Learner steps never use it.
    Pool& mutable_pool() noexcept { return pool_; }
    const std::vector<int>& eval_ids() const noexcept { return eval_ids_; }
    bool is_eval(int id) const { return eval_set_.contains(id); }
    const Model& base_model() const noexcept { return base_; }
    const std::optional<Model>& model() const noexcept { return model_; }
    const std::vector<CycleReport>& reports() const noexcept { return reports_; }

    /// Ids the current cycle trains on.
    std::vector<int> training_ids() const;
    /// Unlabeled ids outside the evaluation split.
    std::vector<int> candidates() const;

    /// Trains the current cycle from the base model on `snapshot` and evaluates it.
    /// Const so it can run on a copy while readers keep using the live pool.
    CycleOutcome train(const Pool& snapshot, const EpochHook& hook = {}) const;
    void install(CycleOutcome outcome);
    /// train(pool()) followed by install.
    const CycleReport& train_and_evaluate(const EpochHook& hook = {});

    /// Scores candidates, queues the top k for humans and triages the rest.
    QueryOutcome query();
    /// Simulated annotator for every queued id.
    void oracle_label_queue();
    std::vector<int> queued_ids() const;

    /// Moves to the next cycle. Still-queued ids return to the unlabeled pool when forced.
    void advance(bool force = false);

private:
    ExperimentConfig config_;
    std::uint64_t seed_;
    Pool pool_;
    Model base_;
    std::vector<int> eval_ids_;
    std::set<int> eval_set_;
    int cycle_ = 0;
    std::optional<Model> model_;
    std::vector<CycleReport> reports_;
};

/// Seed-derived streams used by a session.
namespace streams {
std::uint64_t split(std::uint64_t seed);
std::uint64_t bootstrap(std::uint64_t seed);
std::uint64_t init(std::uint64_t seed);
std::uint64_t train(std::uint64_t seed);
std::uint64_t strategy(std::uint64_t seed, int cycle);
std::uint64_t oracle(std::uint64_t seed, int cycle);
}  // namespace streams

struct SeedResult {
    std::uint64_t seed = 0;
    std::string strategy;
    std::vector<CycleReport> reports;
    std::vector<std::vector<EpochStats>> epochs;  // per cycle
    std::vector<Model> models;                    // per cycle
    /// First epoch of the final cycle reaching the F1 threshold; set when tracking was requested.
    std::optional<int> epochs_to_threshold;
    Provenance init_provenance = Provenance::random_init;
};

struct SeedOptions {
    std::optional<Model> base;
    /// Evaluate after every epoch of the final cycle and record when macro F1 first reaches this.
    std::optional<double> track_threshold;
    bool keep_models = false;
};

/// The full headless loop for one seed on a private copy of `pool`.
SeedResult run_seed(const ExperimentConfig& config, const Pool& pool, std::uint64_t seed, const SeedOptions& options = {});

std::vector<CurvePoint> curve_points(const SeedResult& r);

/// Runs every seed (config.jobs at a time) and writes the run directory:
/// config.json (the given bytes), cycle_<i>.json, epochs_<i>.jsonl, curves.csv, checkpoints/.
/// With several seeds the per-cycle files go to seed_<s>/.
std::vector<SeedResult> run_active_learning(const ExperimentConfig& config, const std::string& config_text);

/// One curve per strategy per seed. Rejects curves whose budget points differ.
std::vector<CurvePoint> run_strategy_comparison(const ExperimentConfig& config, std::span<const StrategyKind> strategies);
/// Throws unless every (strategy, seed) curve has the same budget sequence.
void check_matching_budgets(std::span<const CurvePoint> points);

struct CategoryF1 {
    double weather = 0;
    double light = 0;
};

struct JointVsSingleSeed {
    std::uint64_t seed = 0;
    CategoryF1 joint;
    CategoryF1 single;
};

struct JointVsSingleReport {
    std::vector<JointVsSingleSeed> seeds;
    CategoryF1 mean_joint() const;
    CategoryF1 mean_single() const;
};
void to_json(nlohmann::json& j, const JointVsSingleReport& r);

/// Trains on a stratified labeled set of the final budget: once with both heads,
/// then once per head alone. Same backbone, data, split and seeds.
JointVsSingleReport run_joint_vs_single(const ExperimentConfig& config);

/// Pretrains on the source pool of config.warmstart; provenance source_pretrained.
Model pretrain_source_model(const ExperimentConfig& config, std::uint64_t seed);

struct WarmstartSeed {
    std::uint64_t seed = 0;
    std::optional<int> warm_epochs;  // empty: threshold never reached
    std::optional<int> random_epochs;
    double warm_final_f1 = 0;
    double random_final_f1 = 0;
    Provenance warm_provenance = Provenance::source_pretrained;
};

struct WarmstartReport {
    double threshold = 0;
    int epochs = 0;
    std::vector<WarmstartSeed> seeds;
};
void to_json(nlohmann::json& j, const WarmstartReport& r);

WarmstartReport run_warmstart_vs_random(const ExperimentConfig& config);
/// Combines two finished arms run with threshold tracking.
WarmstartReport warmstart_report(const ExperimentConfig& config, std::span<const SeedResult> warm, std::span<const SeedResult> random);

}  // namespace lpal
