#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"
#include "lpal/metrics.hpp"
#include "support/oracles.hpp"

using namespace lpal;
using lpal::testing::confusion_f1;

namespace {

std::vector<LabelSet> random_labels(std::mt19937_64& rng, std::size_t n) {
    std::vector<LabelSet> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back(LabelSet::from_stratum(static_cast<int>(rng() % kStrata)));
    return v;
}

}  // namespace

TEST_CASE("f1 examples") {
    std::mt19937_64 rng(1);
    const auto t = random_labels(rng, 40);
    const auto perfect = f1_per_label(t, t);
    for (std::size_t k = 0; k < kLabelCount; ++k) CHECK(perfect.f1[k] == 1.0);
    CHECK(perfect.macro() == 1.0);

    const std::vector<LabelSet> truth{{Weather::clear, Light::bright}, {Weather::rain, Light::bright}, {Weather::rain, Light::bright}, {Weather::snow, Light::bright}};
    const std::vector<LabelSet> preds{{Weather::clear, Light::bright}, {Weather::rain, Light::bright}, {Weather::snow, Light::bright}, {Weather::snow, Light::bright}};
    const auto r = f1_per_label(preds, truth);
    CHECK(r.f1[1] == doctest::Approx(2.0 / 3.0));
    // moderate and low never occur and are never predicted.
    CHECK(r.f1[4] == 1.0);
    CHECK(r.f1[5] == 1.0);
    CHECK(r.degenerate[4]);
    CHECK_FALSE(r.degenerate[1]);

    CHECK_THROWS_AS(f1_per_label(preds, std::span<const LabelSet>(truth).first(3)), std::invalid_argument);
}

TEST_CASE("f1 matches a confusion-matrix oracle") {
    std::mt19937_64 rng(99);
    for (int rep = 0; rep < 150; ++rep) {
        const std::size_t n = 1 + rng() % 50;
        const auto t = random_labels(rng, n);
        auto p = random_labels(rng, n);
        // Mix in correct predictions so F1 values spread over [0,1].
        for (std::size_t i = 0; i < n; ++i)
            if (rng() % 2) p[i] = t[i];
        const auto got = f1_per_label(p, t);
        const auto want = confusion_f1(p, t);
        for (std::size_t k = 0; k < kLabelCount; ++k) CHECK(got.f1[k] == doctest::Approx(want[k]).epsilon(1e-12));
    }
}

TEST_CASE("metrics are invariant to joint permutation") {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 6 + rng() % 40;
        auto t = random_labels(rng, n), p = random_labels(rng, n);
        std::vector<double> a(n), b(n);
        std::vector<bool> ok(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = static_cast<double>(rng() % 1000);
            b[i] = static_cast<double>(rng() % 1000);
            ok[i] = p[i] == t[i];
        }
        const auto f1 = f1_per_label(p, t);
        const auto acc = accuracy_per_head(p, t);
        const auto rho = spearman(a, b);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<LabelSet> t2, p2;
        std::vector<double> a2, b2;
        for (std::size_t i : perm) {
            t2.push_back(t[i]);
            p2.push_back(p[i]);
            a2.push_back(a[i]);
            b2.push_back(b[i]);
        }
        CHECK(f1_per_label(p2, t2).f1 == f1.f1);
        CHECK(accuracy_per_head(p2, t2).weather == acc.weather);
        CHECK(accuracy_per_head(p2, t2).light == acc.light);
        CHECK(spearman(a2, b2).rho == doctest::Approx(rho.rho).epsilon(1e-12));
    }
}

TEST_CASE("accuracy per head") {
    const std::vector<LabelSet> t{{Weather::clear, Light::low}, {Weather::rain, Light::low}, {Weather::snow, Light::bright}, {Weather::rain, Light::moderate}};
    CHECK(accuracy_per_head(t, t).weather == 1.0);
    std::vector<LabelSet> wrong;
    for (const auto& l : t) wrong.push_back({static_cast<Weather>((static_cast<int>(l.weather) + 1) % 3), static_cast<Light>((static_cast<int>(l.light) + 2) % 3)});
    CHECK(accuracy_per_head(wrong, t).weather == 0.0);
    CHECK(accuracy_per_head(wrong, t).light == 0.0);
    auto three = t;
    three[0].weather = Weather::snow;
    CHECK(accuracy_per_head(three, t).weather == 0.75);
    CHECK(accuracy_per_head(three, t).light == 1.0);
}

TEST_CASE("top/bottom-k accuracy") {
    SUBCASE("wrong predictions scored highest") {
        const std::vector<double> s{0.9, 0.1, 0.8, 0.2, 0.3, 0.05};
        const std::vector<bool> ok{false, true, false, true, true, true};
        const auto r = topk_bottomk_accuracy(s, ok, 2);
        CHECK(r.top == 0.0);
        CHECK(r.bottom == 1.0);
    }
    SUBCASE("k = N/2 partitions the samples, ties included") {
        std::mt19937_64 rng(8);
        for (int rep = 0; rep < 100; ++rep) {
            const std::size_t half = 1 + rng() % 20;
            std::vector<double> s(2 * half);
            std::vector<bool> ok(2 * half);
            for (std::size_t i = 0; i < s.size(); ++i) {
                s[i] = static_cast<double>(rng() % 4);
                ok[i] = rng() % 2;
            }
            const auto r = topk_bottomk_accuracy(s, ok, half);
            const double overall = static_cast<double>(std::count(ok.begin(), ok.end(), true)) / static_cast<double>(ok.size());
            CHECK((r.top + r.bottom) / 2 == doctest::Approx(overall).epsilon(1e-12));
        }
    }
    SUBCASE("random scores carry no signal") {
        // Permutation baseline: 100 seeded shuffles of the same scores.
        std::mt19937_64 rng(31);
        const std::size_t n = 400, k = 50;
        std::vector<bool> ok(n);
        for (std::size_t i = 0; i < n; ++i) ok[i] = i % 3 != 0;
        std::vector<double> s(n);
        std::iota(s.begin(), s.end(), 0.0);
        double diff = 0, sq = 0;
        for (int rep = 0; rep < 100; ++rep) {
            std::shuffle(s.begin(), s.end(), rng);
            const auto r = topk_bottomk_accuracy(s, ok, k);
            diff += r.top - r.bottom;
            sq += (r.top - r.bottom) * (r.top - r.bottom);
        }
        const double mean = diff / 100, sd = std::sqrt(sq / 100 - mean * mean);
        CHECK(std::abs(mean) < 4 * sd / std::sqrt(100.0));
    }
    SUBCASE("k out of range") {
        const std::vector<double> s{1, 2, 3};
        const std::vector<bool> ok{true, true, false};
        CHECK_THROWS_AS(topk_bottomk_accuracy(s, ok, 2), std::invalid_argument);
        CHECK_THROWS_AS(topk_bottomk_accuracy(s, ok, 0), std::invalid_argument);
    }
}

TEST_CASE("spearman") {
    const std::vector<double> a{1, 2, 3, 4, 5};
    const std::vector<double> rev{5, 4, 3, 2, 1};
    CHECK(spearman(a, a).rho == doctest::Approx(1.0));
    CHECK(spearman(a, rev).rho == doctest::Approx(-1.0));
    CHECK(spearman(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2}).rho == doctest::Approx(0.5));
    const auto flat = spearman(a, std::vector<double>{2, 2, 2, 2, 2});
    CHECK(flat.rho == 0.0);
    CHECK(flat.degenerate);
    CHECK_THROWS_AS(spearman(std::vector<double>{1, 2}, std::vector<double>{2, 1}), std::invalid_argument);
    CHECK(average_ranks(std::vector<double>{10, 20, 20, 5}) == std::vector<double>{2, 3.5, 3.5, 1});

    // Without ties rho = 1 - 6 sum d^2 / (n (n^2 - 1)).
    std::mt19937_64 rng(12);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 3 + rng() % 30;
        std::vector<double> x(n), y(n);
        std::iota(x.begin(), x.end(), 1.0);
        std::iota(y.begin(), y.end(), 1.0);
        std::shuffle(x.begin(), x.end(), rng);
        std::shuffle(y.begin(), y.end(), rng);
        double d2 = 0;
        for (std::size_t i = 0; i < n; ++i) d2 += (x[i] - y[i]) * (x[i] - y[i]);
        const double nn = static_cast<double>(n);
        CHECK(spearman(x, y).rho == doctest::Approx(1.0 - 6.0 * d2 / (nn * (nn * nn - 1))).epsilon(1e-12));
    }
}

TEST_CASE("curves csv round trip and cycle report json") {
    const std::vector<CurvePoint> pts{{90, 0.5, "random", 1}, {120, 0.6123456789, "predicted_loss", 2}};
    std::ostringstream os;
    write_curves_csv(os, pts);
    CHECK(os.str() == "budget,macro_f1,strategy,seed\n90,0.500000,random,1\n120,0.612346,predicted_loss,2\n");
    std::istringstream is(os.str());
    const auto back = read_curves_csv(is);
    REQUIRE(back.size() == 2);
    CHECK(back[1].budget == 120);
    CHECK(back[1].strategy == "predicted_loss");

    CycleReport r;
    r.cycle = 2;
    r.budget = 150;
    r.f1.f1 = {1, 0.5, 0.5, 1, 1, 1};
    r.f1.degenerate[5] = true;
    r.strategy = "entropy";
    const nlohmann::json j = r;
    CHECK(j.at("macro_f1").get<double>() == doctest::Approx(5.0 / 6.0));
    CHECK(j.at("f1").at("rain").get<double>() == 0.5);
    CHECK(j.at("f1_degenerate_labels") == nlohmann::json::array({"low"}));
    CHECK(j.at("budget") == 150);
}
