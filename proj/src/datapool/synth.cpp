#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "lpal/datapool.hpp"
#include "lpal/rng.hpp"

namespace lpal {
namespace {

constexpr double kPi = 3.141592653589793;

// Overlay contrast falls with the light level: weather is harder to see at night.
double overlay_visibility(Light l) {
    switch (l) {
        case Light::bright: return 1.0;
        case Light::moderate: return 0.75;
        case Light::low: return 0.5;
    }
    return 1.0;
}

void add_gradient(std::vector<double>& img, int side, Rng& rng) {
    const double amplitude = rng.uniform(0.02, 0.04);
    const double theta = rng.uniform(0.0, 2.0 * kPi);
    const double cx = std::cos(theta), cy = std::sin(theta);
    const double denom = side > 1 ? side - 1 : 1;
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            // Linear ramp symmetric about the centre, so it has zero mean.
            const double u = x / denom - 0.5, v = y / denom - 0.5;
            img[static_cast<std::size_t>(y * side + x)] += amplitude * 2.0 * (cx * u + cy * v) / std::sqrt(2.0);
        }
    }
}

void add_streaks(std::vector<double>& img, int side, double visibility, Rng& rng) {
    const double strength = rng.uniform(0.5, 1.0);
    const int count = 5 + static_cast<int>(rng.below(8));
    for (int k = 0; k < count; ++k) {
        const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(side)));
        const int len = std::max(2, static_cast<int>(side * rng.uniform(0.5, 1.0)));
        const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, side - len + 1))));
        const double amp = visibility * strength * rng.uniform(0.2, 0.32);
        for (int y = y0; y < std::min(side, y0 + len); ++y) img[static_cast<std::size_t>(y * side + x)] += amp;
    }
}

void add_blobs(std::vector<double>& img, int side, double visibility, Rng& rng) {
    const double strength = rng.uniform(0.5, 1.0);
    const int count = 8 + static_cast<int>(rng.below(9));
    for (int k = 0; k < count; ++k) {
        const double cx = rng.uniform(0.0, side), cy = rng.uniform(0.0, side);
        const double r = rng.uniform(1.2, 2.2);
        const double amp = visibility * strength * rng.uniform(0.32, 0.48);
        const int x0 = std::max(0, static_cast<int>(cx - r - 1)), x1 = std::min(side - 1, static_cast<int>(cx + r + 1));
        const int y0 = std::max(0, static_cast<int>(cy - r - 1)), y1 = std::min(side - 1, static_cast<int>(cy + r + 1));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
                if (d < r) img[static_cast<std::size_t>(y * side + x)] += amp * (1.0 - 0.5 * d / r);
            }
        }
    }
}

}  // namespace

double base_luminance(Light l) {
    switch (l) {
        case Light::bright: return 0.75;
        case Light::moderate: return 0.45;
        case Light::low: return 0.15;
    }
    return 0.75;
}

std::array<double, kStrata> SynthConfig::default_prior() {
    // Clear weather and daylight dominate, as in road recordings.
    constexpr std::array<double, 3> weather{0.85, 0.09, 0.06};
    constexpr std::array<double, 3> light{0.45, 0.35, 0.2};
    std::array<double, kStrata> p{};
    for (int w = 0; w < 3; ++w)
        for (int l = 0; l < 3; ++l) p[static_cast<std::size_t>(3 * w + l)] = weather[w] * light[l];
    return p;
}

std::array<double, kStrata> SynthConfig::uniform_prior() {
    std::array<double, kStrata> p{};
    p.fill(1.0 / kStrata);
    return p;
}

void SynthConfig::validate() const {
    if (n < 0) throw std::invalid_argument("sample count must be >= 0");
    if (side < 1) throw std::invalid_argument("image side must be positive");
    if (noise_sigma < 0) throw std::invalid_argument("noise sigma must be >= 0");
    double total = 0;
    for (double p : prior) {
        if (p < 0 || !std::isfinite(p)) throw std::invalid_argument("stratum priors must be finite and nonnegative");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("stratum priors must sum to 1, got " + std::to_string(total));
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = {{"n", c.n}, {"prior", c.prior}, {"side", c.side}, {"noise_sigma", c.noise_sigma}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
    SynthConfig d;
    c.n = j.value("n", d.n);
    if (j.contains("prior")) {
        const auto& p = j.at("prior");
        if (p.is_string()) {
            const auto name = p.get<std::string>();
            if (name == "uniform") c.prior = SynthConfig::uniform_prior();
            else if (name == "default") c.prior = SynthConfig::default_prior();
            else throw std::invalid_argument("unknown prior preset '" + name + "'");
        } else {
            const auto v = p.get<std::vector<double>>();
            if (v.size() != kStrata) throw std::invalid_argument("prior needs exactly 9 entries");
            std::copy(v.begin(), v.end(), c.prior.begin());
        }
    } else {
        c.prior = d.prior;
    }
    c.side = j.value("side", d.side);
    c.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    c.seed = j.value("seed", d.seed);
}

std::vector<float> synth_image(LabelSet label, int side, double noise_sigma, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> img(static_cast<std::size_t>(side) * side, base_luminance(label.light));
    const double vis = overlay_visibility(label.light);
    switch (label.weather) {
        case Weather::clear: add_gradient(img, side, rng); break;
        case Weather::rain: add_streaks(img, side, vis, rng); break;
        case Weather::snow: add_blobs(img, side, vis, rng); break;
    }
    std::vector<float> out(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = img[i] + (noise_sigma > 0 ? noise_sigma * rng.normal() : 0.0);
        out[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return out;
}

Pool synth_generate(const SynthConfig& config) {
    config.validate();
    Pool pool(config.side);
    std::array<double, kStrata> cdf{};
    std::partial_sum(config.prior.begin(), config.prior.end(), cdf.begin());
    Rng rng(config.seed);
    for (int i = 0; i < config.n; ++i) {
        const double u = rng.uniform() * cdf.back();
        int s = 0;
        while (s < kStrata - 1 && u >= cdf[static_cast<std::size_t>(s)]) ++s;
        const LabelSet label = LabelSet::from_stratum(s);
        pool.add(synth_image(label, config.side, config.noise_sigma, Rng::derive(config.seed, static_cast<std::uint64_t>(i))),
                 label, "synth:" + std::to_string(i));
    }
    return pool;
}

}  // namespace lpal
