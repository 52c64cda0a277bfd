#include "lpal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace lpal {
namespace {

void require_aligned(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw std::invalid_argument(std::string(what) + ": " + std::to_string(a) + " vs " + std::to_string(b) + " entries");
}

int weather_label(const LabelSet& l) { return static_cast<int>(l.weather); }
int light_label(const LabelSet& l) { return 3 + static_cast<int>(l.light); }

nlohmann::json top_bottom_json(const TopBottom& t) { return {{"top", t.top}, {"bottom", t.bottom}}; }

}  // namespace

const std::array<std::string, kLabelCount>& label_names() {
    static const std::array<std::string, kLabelCount> names{"clear", "rain", "snow", "bright", "moderate", "low"};
    return names;
}

double F1Result::macro() const { return std::accumulate(f1.begin(), f1.end(), 0.0) / kLabelCount; }
double F1Result::weather_macro() const { return (f1[0] + f1[1] + f1[2]) / 3.0; }
double F1Result::light_macro() const { return (f1[3] + f1[4] + f1[5]) / 3.0; }

F1Result f1_per_label(std::span<const LabelSet> preds, std::span<const LabelSet> truth) {
    require_aligned(preds.size(), truth.size(), "f1_per_label");
    std::array<long, kLabelCount> tp{}, fp{}, fn{};
    auto tally = [&](int p, int t) {
        if (p == t) {
            ++tp[static_cast<std::size_t>(p)];
        } else {
            ++fp[static_cast<std::size_t>(p)];
            ++fn[static_cast<std::size_t>(t)];
        }
    };
    for (std::size_t i = 0; i < preds.size(); ++i) {
        tally(weather_label(preds[i]), weather_label(truth[i]));
        tally(light_label(preds[i]), light_label(truth[i]));
    }
    F1Result r;
    for (std::size_t k = 0; k < kLabelCount; ++k) {
        const long denom = 2 * tp[k] + fp[k] + fn[k];
        r.degenerate[k] = denom == 0;
        r.f1[k] = denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp[k]) / static_cast<double>(denom);
    }
    return r;
}

HeadAccuracy accuracy_per_head(std::span<const LabelSet> preds, std::span<const LabelSet> truth) {
    require_aligned(preds.size(), truth.size(), "accuracy_per_head");
    if (preds.empty()) throw std::invalid_argument("accuracy of an empty set");
    std::size_t w = 0, l = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        w += preds[i].weather == truth[i].weather;
        l += preds[i].light == truth[i].light;
    }
    const double n = static_cast<double>(preds.size());
    return {static_cast<double>(w) / n, static_cast<double>(l) / n};
}

TopBottom topk_bottomk_accuracy(std::span<const double> scores, const std::vector<bool>& correct, std::size_t k) {
    require_aligned(scores.size(), correct.size(), "topk_bottomk_accuracy");
    if (k == 0 || 2 * k > scores.size()) {
        throw std::invalid_argument("top/bottom k=" + std::to_string(k) + " needs 1 <= k <= N/2 with N=" + std::to_string(scores.size()));
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::size_t top = 0, bottom = 0;
    for (std::size_t i = 0; i < k; ++i) {
        top += correct[order[i]];
        bottom += correct[order[order.size() - 1 - i]];
    }
    return {static_cast<double>(top) / static_cast<double>(k), static_cast<double>(bottom) / static_cast<double>(k)};
}

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

SpearmanResult spearman(std::span<const double> a, std::span<const double> b) {
    require_aligned(a.size(), b.size(), "spearman");
    if (a.size() < 3) throw std::invalid_argument("spearman needs at least 3 samples");
    const auto ra = average_ranks(a), rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0 || sbb == 0) return {0.0, true};
    return {std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0), false};
}

void to_json(nlohmann::json& j, const CycleReport& r) {
    nlohmann::json f1 = nlohmann::json::object(), degenerate = nlohmann::json::array();
    for (std::size_t k = 0; k < kLabelCount; ++k) {
        f1[label_names()[k]] = r.f1.f1[k];
        if (r.f1.degenerate[k]) degenerate.push_back(label_names()[k]);
    }
    nlohmann::json per_label = nlohmann::json::object();
    for (const auto& [name, tb] : r.per_label_top_bottom) per_label[name] = top_bottom_json(tb);
    j = {{"cycle", r.cycle},
         {"budget", r.budget},
         {"auto_labeled", r.auto_labeled},
         {"f1", f1},
         {"f1_degenerate_labels", degenerate},
         {"macro_f1", r.f1.macro()},
         {"accuracy", {{"weather", r.accuracy.weather}, {"light", r.accuracy.light}}},
         {"spearman", {{"rho", r.spearman.rho}, {"degenerate", r.spearman.degenerate}}},
         {"top_bottom", {{"k", r.topk}, {"top", r.top_bottom.top}, {"bottom", r.top_bottom.bottom}}},
         {"per_label_top_bottom", per_label},
         {"strategy", r.strategy},
         {"seed", r.seed},
         {"eval_size", r.eval_size},
         {"epochs", r.epochs},
         {"train_seconds", r.train_seconds}};
}

void write_curves_csv(std::ostream& os, std::span<const CurvePoint> points) {
    os << "budget,macro_f1,strategy,seed\n";
    char buf[32];
    for (const auto& p : points) {
        std::snprintf(buf, sizeof buf, "%.6f", p.macro_f1);
        os << p.budget << ',' << buf << ',' << p.strategy << ',' << p.seed << '\n';
    }
}

std::vector<CurvePoint> read_curves_csv(std::istream& is) {
    std::vector<CurvePoint> out;
    std::string line;
    if (!std::getline(is, line) || line != "budget,macro_f1,strategy,seed") throw std::runtime_error("curves CSV lacks the expected header");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string budget, f1, strategy, seed;
        if (!std::getline(ss, budget, ',') || !std::getline(ss, f1, ',') || !std::getline(ss, strategy, ',') || !std::getline(ss, seed)) {
            throw std::runtime_error("malformed curves row '" + line + "'");
        }
        out.push_back({std::stoul(budget), std::stod(f1), strategy, std::stoull(seed)});
    }
    return out;
}

}  // namespace lpal
