#include "lpal/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lpal/ops.hpp"

namespace lpal {
namespace {

int argmax3(const float* p) { return static_cast<int>(std::max_element(p, p + 3) - p); }

double entropy3(const float* p) {
    double h = 0;
    for (int k = 0; k < 3; ++k)
        if (p[k] > 0) h -= static_cast<double>(p[k]) * std::log(static_cast<double>(p[k]));
    return h;
}

}  // namespace

std::string to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::predicted_loss: return "predicted_loss";
        case StrategyKind::entropy: return "entropy";
        case StrategyKind::least_confidence: return "least_confidence";
        case StrategyKind::random: return "random";
    }
    return "predicted_loss";
}

StrategyKind strategy_from_string(const std::string& s) {
    if (s == "predicted_loss") return StrategyKind::predicted_loss;
    if (s == "entropy") return StrategyKind::entropy;
    if (s == "least_confidence") return StrategyKind::least_confidence;
    if (s == "random") return StrategyKind::random;
    throw std::invalid_argument("unknown acquisition strategy '" + s + "'");
}

std::vector<double> scores_from_output(const ModelOutput& out, StrategyKind kind, Rng* rng) {
    const int n = out.batch();
    std::vector<double> s(static_cast<std::size_t>(n));
    if (kind == StrategyKind::predicted_loss) {
        for (int i = 0; i < n; ++i) s[static_cast<std::size_t>(i)] = out.predicted_loss[static_cast<std::size_t>(i)];
        return s;
    }
    if (kind == StrategyKind::random) {
        if (rng == nullptr) throw std::invalid_argument("random scoring needs a generator");
        for (auto& v : s) v = rng->uniform();
        return s;
    }
    const Tensor pw = softmax_rows(out.weather_logits);
    const Tensor pl = softmax_rows(out.light_logits);
    for (int i = 0; i < n; ++i) {
        const float* a = pw.ptr() + 3 * i;
        const float* b = pl.ptr() + 3 * i;
        if (kind == StrategyKind::entropy) {
            s[static_cast<std::size_t>(i)] = entropy3(a) + entropy3(b);
        } else {
            const double conf = std::min(*std::max_element(a, a + 3), *std::max_element(b, b + 3));
            s[static_cast<std::size_t>(i)] = 1.0 - conf;
        }
    }
    return s;
}

ScoreMap score(const Model& model, Pool& pool, std::span<const int> ids, const AcquisitionStrategy& strategy) {
    if (ids.empty()) throw std::invalid_argument("cannot score an empty pool view");
    const ModelOutput out = model.forward(pool.batch(ids));
    Rng rng(strategy.seed);
    const auto s = scores_from_output(out, strategy.kind, &rng);
    ScoreMap m;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const LabelSet suggested{static_cast<Weather>(argmax3(out.weather_logits.ptr() + 3 * i)),
                                 static_cast<Light>(argmax3(out.light_logits.ptr() + 3 * i))};
        pool.set_prediction(ids[i], s[i], out.predicted_loss[i], suggested);
        m[ids[i]] = s[i];
    }
    return m;
}

std::vector<int> select_top_k(const ScoreMap& scores, std::size_t k) {
    if (k > scores.size()) {
        throw std::invalid_argument("cannot select " + std::to_string(k) + " of " + std::to_string(scores.size()) + " scored samples");
    }
    std::vector<std::pair<double, int>> v;
    v.reserve(scores.size());
    for (const auto& [id, s] : scores) v.emplace_back(s, id);
    auto better = [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; };
    std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end(), better);
    std::vector<int> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(v[i].second);
    return out;
}

void TriageThresholds::validate() const {
    if (std::isnan(low) || std::isnan(high)) throw std::invalid_argument("triage thresholds must not be NaN");
    if (low > high) throw std::invalid_argument("triage needs low <= high");
}

TriageResult triage(const ScoreMap& scores, const TriageThresholds& t) {
    t.validate();
    TriageResult r;
    for (const auto& [id, s] : scores) {
        if (s < t.low) r.auto_label.insert(id);
        else if (s > t.high) r.human_queue.insert(id);
        else r.deferred.insert(id);
    }
    return r;
}

double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("percentile of an empty set");
    if (p < 0 || p > 100) throw std::invalid_argument("percentile must lie in [0,100]");
    std::sort(values.begin(), values.end());
    const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

TriageThresholds percentile_thresholds(std::span<const double> reference, double low_pct, double high_pct) {
    if (low_pct > high_pct) throw std::invalid_argument("low percentile exceeds high percentile");
    std::vector<double> v(reference.begin(), reference.end());
    return {percentile(v, low_pct), percentile(v, high_pct)};
}

std::vector<AuditEntry> commit_auto_labels(const Model& model, Pool& pool, std::span<const int> auto_ids) {
    std::vector<AuditEntry> audit;
    std::vector<int> todo;
    for (int id : auto_ids) {
        const auto& s = pool.sample(id);
        if (s.working_label) {
            audit.push_back({id, "already labeled (" + to_string(s.provenance) + "); auto label skipped"});
        } else {
            todo.push_back(id);
        }
    }
    if (todo.empty()) return audit;
    const ModelOutput out = model.forward(pool.batch(todo));
    for (std::size_t i = 0; i < todo.size(); ++i) {
        const LabelSet l{static_cast<Weather>(argmax3(out.weather_logits.ptr() + 3 * i)),
                         static_cast<Light>(argmax3(out.light_logits.ptr() + 3 * i))};
        pool.set_label(todo[i], l, LabelProvenance::auto_label);
    }
    return audit;
}

}  // namespace lpal
