#include <algorithm>
#include <stdexcept>

#include "lpal/datapool.hpp"
#include "lpal/rng.hpp"

namespace lpal {

LabelSet LabelSet::from_stratum(int s) {
    if (s < 0 || s >= kStrata) throw std::out_of_range("stratum " + std::to_string(s) + " outside [0,9)");
    return LabelSet{static_cast<Weather>(s / 3), static_cast<Light>(s % 3)};
}

std::string to_string(Weather w) {
    switch (w) {
        case Weather::clear: return "clear";
        case Weather::rain: return "rain";
        case Weather::snow: return "snow";
    }
    return "clear";
}

std::string to_string(Light l) {
    switch (l) {
        case Light::bright: return "bright";
        case Light::moderate: return "moderate";
        case Light::low: return "low";
    }
    return "bright";
}

std::optional<Weather> parse_weather(const std::string& token) {
    if (token == "clear") return Weather::clear;
    if (token == "rain") return Weather::rain;
    if (token == "snow") return Weather::snow;
    return std::nullopt;
}

std::optional<Light> parse_light(const std::string& token) {
    if (token == "bright") return Light::bright;
    if (token == "moderate") return Light::moderate;
    if (token == "low") return Light::low;
    return std::nullopt;
}

void to_json(nlohmann::json& j, const LabelSet& l) {
    j = {{"weather", to_string(l.weather)}, {"light", to_string(l.light)}};
}

void from_json(const nlohmann::json& j, LabelSet& l) {
    const auto w = parse_weather(j.at("weather").get<std::string>());
    const auto li = parse_light(j.at("light").get<std::string>());
    if (!w || !li) throw std::invalid_argument("unknown label token in " + j.dump());
    l = LabelSet{*w, *li};
}

std::string to_string(LabelProvenance p) {
    switch (p) {
        case LabelProvenance::none: return "none";
        case LabelProvenance::bootstrap: return "bootstrap";
        case LabelProvenance::human: return "human";
        case LabelProvenance::auto_label: return "auto";
    }
    return "none";
}

LabelProvenance label_provenance_from_string(const std::string& s) {
    if (s == "none") return LabelProvenance::none;
    if (s == "bootstrap") return LabelProvenance::bootstrap;
    if (s == "human") return LabelProvenance::human;
    if (s == "auto") return LabelProvenance::auto_label;
    throw std::invalid_argument("unknown label provenance '" + s + "'");
}

std::string to_string(QueueState q) {
    switch (q) {
        case QueueState::none: return "none";
        case QueueState::queued: return "queued";
        case QueueState::deferred: return "deferred";
    }
    return "none";
}

Pool::Pool(int side) : side_(side) {
    if (side < 1) throw std::invalid_argument("pool image side must be positive");
}

Pool::Pool(const Pool& o)
    : side_(o.side_),
      samples_(o.samples_),
      truths_(o.truths_),
      sources_(o.sources_),
      labeled_(o.labeled_),
      unlabeled_(o.unlabeled_),
      truth_reads_(0) {}

Pool& Pool::operator=(const Pool& o) {
    if (this != &o) {
        side_ = o.side_;
        samples_ = o.samples_;
        truths_ = o.truths_;
        sources_ = o.sources_;
        labeled_ = o.labeled_;
        unlabeled_ = o.unlabeled_;
        truth_reads_ = 0;
    }
    return *this;
}

Pool::Pool(Pool&& o) noexcept
    : side_(o.side_),
      samples_(std::move(o.samples_)),
      truths_(std::move(o.truths_)),
      sources_(std::move(o.sources_)),
      labeled_(std::move(o.labeled_)),
      unlabeled_(std::move(o.unlabeled_)),
      truth_reads_(o.truth_reads_.load()) {}

Pool& Pool::operator=(Pool&& o) noexcept {
    side_ = o.side_;
    samples_ = std::move(o.samples_);
    truths_ = std::move(o.truths_);
    sources_ = std::move(o.sources_);
    labeled_ = std::move(o.labeled_);
    unlabeled_ = std::move(o.unlabeled_);
    truth_reads_ = o.truth_reads_.load();
    return *this;
}

void Pool::check(int id) const {
    if (!contains(id)) throw std::out_of_range("unknown sample id " + std::to_string(id));
}

int Pool::add(std::vector<float> image, std::optional<LabelSet> truth, std::string source) {
    if (image.size() != static_cast<std::size_t>(side_) * side_) {
        throw ShapeError("sample image has " + std::to_string(image.size()) + " pixels, pool side is " + std::to_string(side_));
    }
    const int id = static_cast<int>(samples_.size());
    LearnerSample s;
    s.id = id;
    s.image = std::move(image);
    samples_.push_back(std::move(s));
    truths_.push_back(truth);
    sources_.push_back(std::move(source));
    unlabeled_.insert(id);
    return id;
}

const LearnerSample& Pool::sample(int id) const {
    check(id);
    return samples_[static_cast<std::size_t>(id)];
}

const std::string& Pool::source(int id) const {
    check(id);
    return sources_[static_cast<std::size_t>(id)];
}

std::vector<const LearnerSample*> Pool::learner_view(std::span<const int> ids) const {
    std::vector<const LearnerSample*> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(&sample(id));
    return out;
}

Tensor Pool::batch(std::span<const int> ids) const {
    if (ids.empty()) throw std::invalid_argument("cannot batch zero samples");
    const std::size_t per = static_cast<std::size_t>(side_) * side_;
    std::vector<float> data;
    data.reserve(ids.size() * per);
    for (int id : ids) {
        const auto& img = sample(id).image;
        data.insert(data.end(), img.begin(), img.end());
    }
    return Tensor(Shape{static_cast<int>(ids.size()), 1, side_, side_}, std::move(data));
}

std::vector<int> Pool::ids() const {
    std::vector<int> out(samples_.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(i);
    return out;
}

const std::optional<LabelSet>& Pool::truth(int id) const {
    check(id);
    ++truth_reads_;
    return truths_[static_cast<std::size_t>(id)];
}

void Pool::set_truth(int id, std::optional<LabelSet> truth) {
    check(id);
    truths_[static_cast<std::size_t>(id)] = truth;
}

void Pool::set_label(int id, LabelSet label, LabelProvenance provenance) {
    check(id);
    if (provenance == LabelProvenance::none) throw std::invalid_argument("a written label needs a provenance");
    LearnerSample& s = samples_[static_cast<std::size_t>(id)];
    s.working_label = label;
    s.provenance = provenance;
    s.queue = QueueState::none;
    s.queued_cycle = -1;
    unlabeled_.erase(id);
    labeled_.insert(id);
}

void Pool::set_prediction(int id, double score, std::optional<double> predicted_loss, std::optional<LabelSet> suggested) {
    check(id);
    LearnerSample& s = samples_[static_cast<std::size_t>(id)];
    s.score = score;
    if (predicted_loss) s.predicted_loss = predicted_loss;
    if (suggested) s.suggested = suggested;
}

void Pool::set_queue_state(int id, QueueState q, int cycle) {
    check(id);
    LearnerSample& s = samples_[static_cast<std::size_t>(id)];
    if (q != QueueState::none && s.working_label) {
        throw std::logic_error("labeled sample " + std::to_string(id) + " cannot be queued or deferred");
    }
    s.queue = q;
    s.queued_cycle = q == QueueState::queued ? cycle : -1;
}

std::vector<std::size_t> largest_remainder(std::span<const std::size_t> sizes, std::size_t n) {
    std::size_t total = 0;
    for (auto s : sizes) total += s;
    if (n > total) throw std::invalid_argument("cannot allocate " + std::to_string(n) + " from " + std::to_string(total));
    std::vector<std::size_t> alloc(sizes.size(), 0);
    if (n == 0) return alloc;
    std::vector<std::pair<std::size_t, std::size_t>> rem;  // (remainder, index)
    std::size_t given = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        alloc[i] = n * sizes[i] / total;
        given += alloc[i];
        rem.emplace_back(n * sizes[i] % total, i);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (std::size_t k = 0; given < n; ++k, ++given) ++alloc[rem[k].second];
    return alloc;
}

std::vector<int> stratified_sample(const Pool& pool, std::span<const int> candidates, std::size_t n, std::uint64_t seed) {
    std::array<std::vector<int>, kStrata> strata;
    std::vector<int> sorted(candidates.begin(), candidates.end());
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    for (int id : sorted) {
        const auto& t = pool.truth(id);
        if (t) strata[static_cast<std::size_t>(t->stratum())].push_back(id);
    }
    std::vector<std::size_t> sizes;
    for (const auto& s : strata) sizes.push_back(s.size());
    const auto alloc = largest_remainder(sizes, n);
    Rng rng(seed);
    std::vector<int> out;
    for (std::size_t s = 0; s < strata.size(); ++s) {
        std::vector<int> members = strata[s];
        rng.shuffle(members);
        out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(alloc[s]));
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> stratified_bootstrap(const Pool& pool, std::size_t n, std::uint64_t seed) {
    if (n > pool.size()) {
        throw std::invalid_argument("bootstrap size " + std::to_string(n) + " exceeds pool size " + std::to_string(pool.size()));
    }
    std::vector<int> candidates(pool.unlabeled().begin(), pool.unlabeled().end());
    return stratified_sample(pool, candidates, n, seed);
}

void oracle_label(Pool& pool, std::span<const int> ids, double noise_rate, std::uint64_t seed, LabelProvenance provenance) {
    if (noise_rate < 0 || noise_rate > 1) throw std::invalid_argument("noise rate must lie in [0,1]");
    std::vector<LabelSet> truths;
    for (int id : ids) {
        const auto& t = pool.truth(id);
        if (!t) throw std::invalid_argument("sample " + std::to_string(id) + " has no ground truth to reveal");
        truths.push_back(*t);
    }
    Rng rng(seed);
    for (std::size_t k = 0; k < ids.size(); ++k) {
        LabelSet label = truths[k];
        if (rng.bernoulli(noise_rate)) {
            label.weather = static_cast<Weather>((static_cast<int>(label.weather) + 1 + static_cast<int>(rng.below(2))) % 3);
            label.light = static_cast<Light>((static_cast<int>(label.light) + 1 + static_cast<int>(rng.below(2))) % 3);
        }
        pool.set_label(ids[k], label, provenance);
    }
}

}  // namespace lpal
