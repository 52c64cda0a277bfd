#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "lpal/datapool.hpp"
#include "lpal/model.hpp"
#include "lpal/rng.hpp"

namespace lpal {

enum class StrategyKind { predicted_loss, entropy, least_confidence, random };
std::string to_string(StrategyKind k);
StrategyKind strategy_from_string(const std::string& s);

struct AcquisitionStrategy {
    StrategyKind kind = StrategyKind::predicted_loss;
    std::uint64_t seed = 0;  // random kind only
};

using ScoreMap = std::map<int, double>;

/// Per-row scores for a batch of model outputs. `rng` is used by the random kind only.
std::vector<double> scores_from_output(const ModelOutput& out, StrategyKind kind, Rng* rng = nullptr);

/// Scores `ids` and caches score, predicted loss and argmax suggestion on each sample.
ScoreMap score(const Model& model, Pool& pool, std::span<const int> ids, const AcquisitionStrategy& strategy);

/// The k highest scores; ties go to the smaller id. Result is in rank order.
std::vector<int> select_top_k(const ScoreMap& scores, std::size_t k);

struct TriageThresholds {
    double low = 0;
    double high = 0;
    void validate() const;
};

struct TriageResult {
    std::set<int> auto_label;
    std::set<int> human_queue;
    std::set<int> deferred;
};

/// score < low -> auto ; score > high -> human ; otherwise deferred.
TriageResult triage(const ScoreMap& scores, const TriageThresholds& thresholds);

/// Linear-interpolation percentile, p in [0,100].
double percentile(std::vector<double> values, double p);
TriageThresholds percentile_thresholds(std::span<const double> reference, double low_pct = 20, double high_pct = 90);

struct AuditEntry {
    int id = 0;
    std::string reason;
};

/// Writes argmax labels with provenance auto. Samples that already carry a
/// label are left alone and reported in the audit list.
std::vector<AuditEntry> commit_auto_labels(const Model& model, Pool& pool, std::span<const int> auto_ids);

}  // namespace lpal
