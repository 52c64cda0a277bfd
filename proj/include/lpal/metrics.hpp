#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "lpal/datapool.hpp"

namespace lpal {

/// Label order: clear, rain, snow, bright, moderate, low.
inline constexpr int kLabelCount = 6;
const std::array<std::string, kLabelCount>& label_names();

struct F1Result {
    std::array<double, kLabelCount> f1{};
    /// Label absent from truth and never predicted; its F1 is 1.0 by convention.
    std::array<bool, kLabelCount> degenerate{};

    double macro() const;
    double weather_macro() const;
    double light_macro() const;
};

/// One-vs-rest F1 per label value: 2TP / (2TP + FP + FN).
F1Result f1_per_label(std::span<const LabelSet> preds, std::span<const LabelSet> truth);

struct HeadAccuracy {
    double weather = 0;
    double light = 0;
};
HeadAccuracy accuracy_per_head(std::span<const LabelSet> preds, std::span<const LabelSet> truth);

struct TopBottom {
    double top = 0;
    double bottom = 0;
};

/// Accuracy over the k highest and the k lowest scores. Entries are ranked by
/// score descending, ties by index; "bottom" is the last k of that order, so
/// k = N/2 splits the samples into two disjoint halves.
TopBottom topk_bottomk_accuracy(std::span<const double> scores, const std::vector<bool>& correct, std::size_t k);

struct SpearmanResult {
    double rho = 0;
    /// A constant input leaves the correlation undefined; rho is then 0.
    bool degenerate = false;
};

/// Average ranks (1-based); ties share the mean rank.
std::vector<double> average_ranks(std::span<const double> v);
SpearmanResult spearman(std::span<const double> a, std::span<const double> b);

struct CycleReport {
    int cycle = 0;
    std::size_t budget = 0;  // human labels, bootstrap included
    std::size_t auto_labeled = 0;
    F1Result f1;
    HeadAccuracy accuracy;
    SpearmanResult spearman;
    std::size_t topk = 0;
    TopBottom top_bottom;
    std::map<std::string, TopBottom> per_label_top_bottom;
    std::string strategy;
    std::uint64_t seed = 0;
    std::size_t eval_size = 0;
    double train_seconds = 0;
    int epochs = 0;
};

void to_json(nlohmann::json& j, const CycleReport& r);

struct CurvePoint {
    std::size_t budget = 0;
    double macro_f1 = 0;
    std::string strategy;
    std::uint64_t seed = 0;
};

/// CSV with header `budget,macro_f1,strategy,seed`; F1 printed with 6 decimals.
void write_curves_csv(std::ostream& os, std::span<const CurvePoint> points);
std::vector<CurvePoint> read_curves_csv(std::istream& is);

}  // namespace lpal
