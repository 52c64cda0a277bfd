#include "lpal/loop.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

namespace lpal {
namespace {

std::string data_kind_string(DataSource::Kind k) { return k == DataSource::Kind::synth ? "synth" : "pgm"; }

std::string threshold_kind_string(ThresholdPolicy::Kind k) { return k == ThresholdPolicy::Kind::percentile ? "percentile" : "absolute"; }

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) == known.end()) {
            throw std::invalid_argument("unknown key '" + key + "' in " + where);
        }
    }
}

// Nested sections accept exactly the keys their serializer writes.
void reject_unknown_like(const nlohmann::json& j, const nlohmann::json& reference, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!reference.contains(key)) throw std::invalid_argument("unknown key '" + key + "' in " + where);
    }
}

LabelSet argmax_labels(const ModelOutput& out, std::size_t i) {
    auto am = [](const float* p) { return static_cast<int>(std::max_element(p, p + 3) - p); };
    return {static_cast<Weather>(am(out.weather_logits.ptr() + 3 * i)), static_cast<Light>(am(out.light_logits.ptr() + 3 * i))};
}

bool correct_for(const LabelSet& p, const LabelSet& t, HeadSelection heads) {
    switch (heads) {
    case HeadSelection::weather: return p.weather == t.weather;
    case HeadSelection::light: return p.light == t.light;
    case HeadSelection::both: break;
    }
    return p == t;
}

bool has_label(const LabelSet& t, std::size_t label) {
    return label < 3 ? static_cast<std::size_t>(t.weather) == label : static_cast<std::size_t>(t.light) == label - 3;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

template <typename F>
void for_each_parallel(std::size_t n, int jobs, F&& f) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace

WarmstartConfig::WarmstartConfig() {
    source.n = 900;
    source.prior = SynthConfig::uniform_prior();
    source.seed = 7919;
}

void ExperimentConfig::validate() const {
    if (data.kind == DataSource::Kind::synth) data.synth.validate();
    else if (data.image_dir.empty()) throw std::invalid_argument("pgm data source needs image_dir");
    model.validate();
    train.validate();
    const int side = data.kind == DataSource::Kind::synth ? data.synth.side : data.side;
    if (side != model.backbone.input_side) {
        throw std::invalid_argument("data side " + std::to_string(side) + " differs from model input side " + std::to_string(model.backbone.input_side));
    }
    if (bootstrap == 0) throw std::invalid_argument("bootstrap size must be positive");
    if (cycles < 0) throw std::invalid_argument("cycle count must be >= 0");
    if (cycles > 0 && query_size == 0) throw std::invalid_argument("query size must be positive");
    if (strategies.empty()) throw std::invalid_argument("strategy list is empty");
    if (thresholds.low > thresholds.high) throw std::invalid_argument("triage low threshold exceeds high threshold");
    if (thresholds.kind == ThresholdPolicy::Kind::percentile && (thresholds.low < 0 || thresholds.high > 100)) {
        throw std::invalid_argument("triage percentiles must lie in [0,100]");
    }
    if (oracle_noise < 0 || oracle_noise > 1) throw std::invalid_argument("oracle noise must lie in [0,1]");
    if (!(eval_fraction > 0 && eval_fraction < 1)) throw std::invalid_argument("eval fraction must lie in (0,1)");
    if (topk == 0) throw std::invalid_argument("topk must be positive");
    if (seeds.empty()) throw std::invalid_argument("at least one seed is required");
    if (jobs < 1) throw std::invalid_argument("jobs must be >= 1");
    warmstart.source.validate();
    if (warmstart.source.side != model.backbone.input_side) throw std::invalid_argument("warm-start source side differs from model input side");
    if (warmstart.pretrain_epochs < 1) throw std::invalid_argument("pretrain epochs must be >= 1");
}

std::size_t ExperimentConfig::eval_count(std::size_t pool_size) const {
    return static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(pool_size)));
}

void ExperimentConfig::validate_budget(std::size_t pool_size) const {
    const std::size_t eval = eval_count(pool_size);
    if (eval < 2) throw std::invalid_argument("evaluation split would hold fewer than 2 samples");
    const std::size_t avail = pool_size - eval;
    if (final_budget() > avail) {
        throw std::invalid_argument("budget " + std::to_string(final_budget()) + " (bootstrap + cycles*k) exceeds the " + std::to_string(avail) +
                                    " samples outside the evaluation split");
    }
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    nlohmann::json data{{"kind", data_kind_string(c.data.kind)}};
    if (c.data.kind == DataSource::Kind::synth) {
        data["synth"] = c.data.synth;
    } else {
        data["image_dir"] = c.data.image_dir.string();
        data["labels"] = c.data.labels_csv.string();
        data["side"] = c.data.side;
    }
    std::vector<std::string> strategies;
    for (auto s : c.strategies) strategies.push_back(to_string(s));
    j = {{"data", data},
         {"model", c.model},
         {"train", c.train},
         {"bootstrap", c.bootstrap},
         {"query_size", c.query_size},
         {"cycles", c.cycles},
         {"strategy", to_string(c.strategy)},
         {"strategies", strategies},
         {"thresholds", {{"kind", threshold_kind_string(c.thresholds.kind)}, {"low", c.thresholds.low}, {"high", c.thresholds.high}}},
         {"auto_label", c.auto_label},
         {"train_on_auto_labels", c.train_on_auto_labels},
         {"oracle_noise", c.oracle_noise},
         {"eval_fraction", c.eval_fraction},
         {"topk", c.topk},
         {"seeds", c.seeds},
         {"output_dir", c.output_dir.string()},
         {"jobs", c.jobs},
         {"warmstart", {{"source", c.warmstart.source}, {"pretrain_epochs", c.warmstart.pretrain_epochs}, {"f1_threshold", c.warmstart.f1_threshold}}}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    reject_unknown(j, {"data", "model", "train", "bootstrap", "query_size", "cycles", "strategy", "strategies", "thresholds", "auto_label",
                       "train_on_auto_labels", "oracle_noise", "eval_fraction", "topk", "seeds", "output_dir", "jobs", "warmstart"},
                   "experiment config");
    ExperimentConfig d;
    c = d;
    if (j.contains("data")) {
        const auto& dj = j.at("data");
        reject_unknown(dj, {"kind", "synth", "image_dir", "labels", "side"}, "data");
        const std::string kind = dj.value("kind", "synth");
        if (kind == "synth") {
            c.data.kind = DataSource::Kind::synth;
            if (dj.contains("synth")) {
                reject_unknown_like(dj.at("synth"), nlohmann::json(SynthConfig{}), "data.synth");
                c.data.synth = dj.at("synth").get<SynthConfig>();
            }
        } else if (kind == "pgm") {
            c.data.kind = DataSource::Kind::pgm;
            c.data.image_dir = dj.at("image_dir").get<std::string>();
            c.data.labels_csv = dj.value("labels", std::string{});
            c.data.side = dj.value("side", d.data.side);
        } else {
            throw std::invalid_argument("unknown data kind '" + kind + "'");
        }
    }
    if (j.contains("model")) {
        reject_unknown_like(j.at("model"), nlohmann::json(ModelConfig{}), "model");
        c.model = j.at("model").get<ModelConfig>();
    }
    if (j.contains("train")) {
        reject_unknown_like(j.at("train"), nlohmann::json(TrainConfig{}), "train");
        c.train = j.at("train").get<TrainConfig>();
    }
    c.bootstrap = j.value("bootstrap", d.bootstrap);
    c.query_size = j.value("query_size", d.query_size);
    c.cycles = j.value("cycles", d.cycles);
    c.strategy = strategy_from_string(j.value("strategy", to_string(d.strategy)));
    if (j.contains("strategies")) {
        c.strategies.clear();
        for (const auto& s : j.at("strategies")) c.strategies.push_back(strategy_from_string(s.get<std::string>()));
    }
    if (j.contains("thresholds")) {
        const auto& t = j.at("thresholds");
        reject_unknown(t, {"kind", "low", "high"}, "thresholds");
        const std::string kind = t.value("kind", "percentile");
        if (kind == "percentile") c.thresholds.kind = ThresholdPolicy::Kind::percentile;
        else if (kind == "absolute") c.thresholds.kind = ThresholdPolicy::Kind::absolute;
        else throw std::invalid_argument("unknown threshold kind '" + kind + "'");
        c.thresholds.low = t.value("low", d.thresholds.low);
        c.thresholds.high = t.value("high", d.thresholds.high);
    }
    c.auto_label = j.value("auto_label", d.auto_label);
    c.train_on_auto_labels = j.value("train_on_auto_labels", d.train_on_auto_labels);
    c.oracle_noise = j.value("oracle_noise", d.oracle_noise);
    c.eval_fraction = j.value("eval_fraction", d.eval_fraction);
    c.topk = j.value("topk", d.topk);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.output_dir = j.value("output_dir", d.output_dir.string());
    c.jobs = j.value("jobs", d.jobs);
    if (j.contains("warmstart")) {
        const auto& w = j.at("warmstart");
        reject_unknown(w, {"source", "pretrain_epochs", "f1_threshold"}, "warmstart");
        if (w.contains("source")) {
            reject_unknown_like(w.at("source"), nlohmann::json(SynthConfig{}), "warmstart.source");
            c.warmstart.source = w.at("source").get<SynthConfig>();
        }
        c.warmstart.pretrain_epochs = w.value("pretrain_epochs", d.warmstart.pretrain_epochs);
        c.warmstart.f1_threshold = w.value("f1_threshold", d.warmstart.f1_threshold);
    }
}

ExperimentConfig parse_experiment_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig c;
    try {
        c = j.get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("bad config field: ") + e.what());
    }
    c.validate();
    return c;
}

LoopError::LoopError(const std::string& what, std::uint64_t seed, int cycle)
    : std::runtime_error("seed " + std::to_string(seed) + ", cycle " + std::to_string(cycle) + ": " + what), seed_(seed), cycle_(cycle) {}

IngestResult load_pool(const DataSource& source) {
    if (source.kind == DataSource::Kind::synth) return {synth_generate(source.synth), {}};
    return ingest_pgm(source.image_dir, source.labels_csv, source.side);
}

void to_json(nlohmann::json& j, const BudgetCounts& c) {
    j = {{"human", c.human}, {"auto", c.auto_labeled}, {"queued", c.queued}, {"deferred", c.deferred}, {"unlabeled", c.unlabeled}};
}

BudgetCounts budget_counts(const Pool& pool) {
    BudgetCounts c;
    for (std::size_t id = 0; id < pool.size(); ++id) {
        const auto& s = pool.sample(static_cast<int>(id));
        switch (s.provenance) {
        case LabelProvenance::bootstrap:
        case LabelProvenance::human: ++c.human; continue;
        case LabelProvenance::auto_label: ++c.auto_labeled; continue;
        case LabelProvenance::none: break;
        }
        if (s.queue == QueueState::queued) ++c.queued;
        else if (s.queue == QueueState::deferred) ++c.deferred;
        else ++c.unlabeled;
    }
    return c;
}

Evaluation evaluate(const Model& model, const Pool& pool, std::span<const int> ids, HeadSelection heads, std::size_t topk) {
    if (ids.size() < 2) throw std::invalid_argument("evaluation needs at least 2 samples");
    const ModelOutput out = model.forward(pool.batch(ids));
    std::vector<LabelSet> truth, preds;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto& t = pool.truth(ids[i]);
        if (!t) throw std::invalid_argument("evaluation sample " + std::to_string(ids[i]) + " has no ground truth");
        truth.push_back(*t);
        preds.push_back(argmax_labels(out, i));
    }
    Evaluation e;
    e.f1 = f1_per_label(preds, truth);
    e.accuracy = accuracy_per_head(preds, truth);
    const auto loss = task_loss(out, truth, heads);
    std::vector<double> predicted(out.predicted_loss.data().begin(), out.predicted_loss.data().end());
    if (ids.size() >= 3) e.spearman = spearman(predicted, loss.per_sample);
    std::vector<bool> correct(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) correct[i] = correct_for(preds[i], truth[i], heads);
    e.topk = std::min(topk, ids.size() / 2);
    e.top_bottom = topk_bottomk_accuracy(predicted, correct, e.topk);
    for (std::size_t label = 0; label < kLabelCount; ++label) {
        std::vector<double> s;
        std::vector<bool> c;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (!has_label(truth[i], label)) continue;
            s.push_back(predicted[i]);
            c.push_back(correct[i]);
        }
        const std::size_t k = std::min(topk, s.size() / 2);
        if (k >= 1) e.per_label_top_bottom[label_names()[label]] = topk_bottomk_accuracy(s, c, k);
    }
    return e;
}

namespace streams {
std::uint64_t split(std::uint64_t seed) { return Rng::derive(seed, 101); }
std::uint64_t bootstrap(std::uint64_t seed) { return Rng::derive(seed, 102); }
std::uint64_t init(std::uint64_t seed) { return Rng::derive(seed, 103); }
std::uint64_t train(std::uint64_t seed) { return Rng::derive(seed, 104); }
std::uint64_t strategy(std::uint64_t seed, int cycle) { return Rng::derive(Rng::derive(seed, 105), static_cast<std::uint64_t>(cycle)); }
std::uint64_t oracle(std::uint64_t seed, int cycle) { return Rng::derive(Rng::derive(seed, 106), static_cast<std::uint64_t>(cycle)); }
}  // namespace streams

namespace {

Model initial_base(const ExperimentConfig& config, std::uint64_t seed, std::optional<Model> base) {
    if (base) {
        if (!(base->config() == config.model)) throw std::invalid_argument("base model architecture differs from the configured model");
        return std::move(*base);
    }
    if (config.train.init.kind == InitPolicy::Kind::warmstart) {
        Model m = load_checkpoint(config.train.init.checkpoint, config.model);
        return m;
    }
    return Model::build(config.model, streams::init(seed));
}

}  // namespace

Session::Session(ExperimentConfig config, std::uint64_t seed, Pool pool, std::optional<Model> base)
    : config_(std::move(config)), seed_(seed), pool_(std::move(pool)), base_(initial_base(config_, seed, std::move(base))) {
    config_.validate();
    config_.validate_budget(pool_.size());
    if (pool_.side() != config_.model.backbone.input_side) throw std::invalid_argument("pool side differs from model input side");
    if (!pool_.labeled().empty()) throw std::invalid_argument("session needs a pool without working labels");
    config_.train.seed = streams::train(seed);

    const auto all = pool_.ids();
    eval_ids_ = stratified_sample(pool_, all, config_.eval_count(pool_.size()), streams::split(seed));
    std::sort(eval_ids_.begin(), eval_ids_.end());
    if (eval_ids_.size() != config_.eval_count(pool_.size())) throw std::invalid_argument("too few samples with ground truth for the evaluation split");
    eval_set_.insert(eval_ids_.begin(), eval_ids_.end());
    const auto cand = candidates();
    const auto boot = stratified_sample(pool_, cand, config_.bootstrap, streams::bootstrap(seed));
    if (boot.size() != config_.bootstrap) throw std::invalid_argument("too few samples with ground truth for the bootstrap set");
    oracle_label(pool_, boot, config_.oracle_noise, streams::oracle(seed, -1), LabelProvenance::bootstrap);
}

std::vector<int> Session::training_ids() const {
    std::vector<int> ids;
    for (int id : pool_.labeled()) {
        const auto p = pool_.sample(id).provenance;
        if (p == LabelProvenance::auto_label && !config_.train_on_auto_labels) continue;
        ids.push_back(id);
    }
    return ids;
}

std::vector<int> Session::candidates() const {
    std::vector<int> ids;
    for (int id : pool_.unlabeled())
        if (!eval_set_.contains(id)) ids.push_back(id);
    return ids;
}

CycleOutcome Session::train(const Pool& snapshot, const EpochHook& hook) const {
    std::vector<int> ids;
    for (int id : snapshot.labeled()) {
        if (snapshot.sample(id).provenance == LabelProvenance::auto_label && !config_.train_on_auto_labels) continue;
        ids.push_back(id);
    }
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult tr = train_cycle(base_, snapshot, ids, config_.train, cycle_, hook);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const Evaluation e = evaluate(tr.model, snapshot, eval_ids_, config_.train.heads, config_.topk);

    CycleOutcome out{std::move(tr.model), {}, std::move(tr.epochs)};
    const BudgetCounts counts = budget_counts(snapshot);
    CycleReport& r = out.report;
    r.cycle = cycle_;
    r.budget = counts.human;
    r.auto_labeled = counts.auto_labeled;
    r.f1 = e.f1;
    r.accuracy = e.accuracy;
    r.spearman = e.spearman;
    r.topk = e.topk;
    r.top_bottom = e.top_bottom;
    r.per_label_top_bottom = e.per_label_top_bottom;
    r.strategy = to_string(config_.strategy);
    r.seed = seed_;
    r.eval_size = eval_ids_.size();
    r.train_seconds = seconds;
    r.epochs = config_.train.epochs;
    return out;
}

void Session::install(CycleOutcome outcome) {
    if (outcome.report.cycle != cycle_) throw std::logic_error("outcome belongs to another cycle");
    model_ = std::move(outcome.model);
    if (!reports_.empty() && reports_.back().cycle == cycle_) reports_.back() = outcome.report;
    else reports_.push_back(outcome.report);
}

const CycleReport& Session::train_and_evaluate(const EpochHook& hook) {
    install(train(pool_, hook));
    return reports_.back();
}

QueryOutcome Session::query() {
    if (!model_) throw std::logic_error("query before the cycle's model was trained");
    for (int id : candidates())
        if (pool_.sample(id).queue != QueueState::none) pool_.set_queue_state(id, QueueState::none);
    const auto cand = candidates();
    QueryOutcome q;
    if (cand.empty()) return q;
    const ScoreMap scores = score(*model_, pool_, cand, {config_.strategy, streams::strategy(seed_, cycle_)});
    q.selected = select_top_k(scores, std::min(config_.query_size, scores.size()));
    for (int id : q.selected) pool_.set_queue_state(id, QueueState::queued, cycle_);

    if (config_.thresholds.kind == ThresholdPolicy::Kind::percentile) {
        const auto train_ids = training_ids();
        const ModelOutput out = model_->forward(pool_.batch(train_ids));
        std::vector<double> ref(out.predicted_loss.data().begin(), out.predicted_loss.data().end());
        q.thresholds = percentile_thresholds(ref, config_.thresholds.low, config_.thresholds.high);
    } else {
        q.thresholds = {config_.thresholds.low, config_.thresholds.high};
    }
    const std::set<int> chosen(q.selected.begin(), q.selected.end());
    ScoreMap rest;
    for (int id : cand) {
        if (chosen.contains(id)) continue;
        rest[id] = *pool_.sample(id).predicted_loss;
    }
    const TriageResult t = triage(rest, q.thresholds);
    if (config_.auto_label) {
        const std::vector<int> auto_ids(t.auto_label.begin(), t.auto_label.end());
        q.audit = commit_auto_labels(*model_, pool_, auto_ids);
        q.auto_committed = auto_ids.size() - q.audit.size();
    }
    // Over-threshold samples beyond the k-sample query wait for a later cycle.
    for (const auto* set : {&t.human_queue, &t.deferred}) {
        for (int id : *set) {
            pool_.set_queue_state(id, QueueState::deferred);
            ++q.deferred;
        }
    }
    return q;
}

std::vector<int> Session::queued_ids() const {
    std::vector<int> ids;
    for (int id : pool_.unlabeled())
        if (pool_.sample(id).queue == QueueState::queued) ids.push_back(id);
    return ids;
}

void Session::oracle_label_queue() {
    const auto ids = queued_ids();
    oracle_label(pool_, ids, config_.oracle_noise, streams::oracle(seed_, cycle_), LabelProvenance::human);
}

void Session::advance(bool force) {
    const auto q = queued_ids();
    if (!q.empty() && !force) throw std::logic_error(std::to_string(q.size()) + " queued samples are still unlabeled");
    for (int id : q) pool_.set_queue_state(id, QueueState::none);
    ++cycle_;
    model_.reset();
}

SeedResult run_seed(const ExperimentConfig& config, const Pool& pool, std::uint64_t seed, const SeedOptions& options) {
    SeedResult r;
    r.seed = seed;
    r.strategy = to_string(config.strategy);
    int cycle = -1;
    try {
        Session s(config, seed, pool, options.base);
        r.init_provenance = s.base_model().provenance();
        for (cycle = 0; cycle <= config.cycles; ++cycle) {
            EpochHook hook;
            if (options.track_threshold && cycle == config.cycles) {
                hook = [&](const EpochStats& st, const Model& m) {
                    if (r.epochs_to_threshold) return;
                    const Evaluation e = evaluate(m, s.pool(), s.eval_ids(), config.train.heads, config.topk);
                    if (e.f1.macro() >= *options.track_threshold) r.epochs_to_threshold = st.epoch + 1;
                };
            }
            CycleOutcome out = s.train(s.pool(), hook);
            r.epochs.push_back(out.epochs);
            if (options.keep_models) r.models.push_back(out.model);
            s.install(std::move(out));
            r.reports.push_back(s.reports().back());
            if (cycle == config.cycles) break;
            s.query();
            s.oracle_label_queue();
            s.advance();
        }
    } catch (const LoopError&) {
        throw;
    } catch (const std::exception& e) {
        throw LoopError(e.what(), seed, cycle);
    }
    return r;
}

std::vector<CurvePoint> curve_points(const SeedResult& r) {
    std::vector<CurvePoint> pts;
    for (const auto& rep : r.reports) pts.push_back({rep.budget, rep.f1.macro(), r.strategy, r.seed});
    return pts;
}

namespace {

Pool load_checked_pool(const ExperimentConfig& config) {
    IngestResult ing = load_pool(config.data);
    config.validate_budget(ing.pool.size());
    return std::move(ing.pool);
}

std::vector<SeedResult> run_all_seeds(const ExperimentConfig& config, const Pool& pool, const SeedOptions& options) {
    std::vector<SeedResult> results(config.seeds.size());
    for_each_parallel(config.seeds.size(), config.jobs, [&](std::size_t i) { results[i] = run_seed(config, pool, config.seeds[i], options); });
    return results;
}

}  // namespace

std::vector<SeedResult> run_active_learning(const ExperimentConfig& config, const std::string& config_text) {
    config.validate();
    IngestResult ing = load_pool(config.data);
    config.validate_budget(ing.pool.size());

    const auto& out = config.output_dir;
    std::filesystem::create_directories(out / "checkpoints");
    write_text(out / "config.json", config_text);
    if (!ing.errors.empty()) {
        nlohmann::json errs = nlohmann::json::array();
        for (const auto& e : ing.errors) errs.push_back({{"file", e.file}, {"message", e.message}});
        write_text(out / "ingest_errors.json", errs.dump(2) + "\n");
    }

    SeedOptions opts;
    opts.keep_models = true;
    const auto results = run_all_seeds(config, ing.pool, opts);

    std::vector<CurvePoint> curve;
    for (const auto& r : results) {
        const auto dir = results.size() == 1 ? out : out / ("seed_" + std::to_string(r.seed));
        std::filesystem::create_directories(dir);
        for (std::size_t c = 0; c < r.reports.size(); ++c) {
            write_text(dir / ("cycle_" + std::to_string(c) + ".json"), nlohmann::json(r.reports[c]).dump(2) + "\n");
            std::ofstream es(dir / ("epochs_" + std::to_string(c) + ".jsonl"));
            write_epoch_stats(es, r.epochs[c]);
            save_checkpoint(r.models[c], out / "checkpoints" / ("seed_" + std::to_string(r.seed) + "_cycle_" + std::to_string(c) + ".ckpt"));
        }
        const auto pts = curve_points(r);
        curve.insert(curve.end(), pts.begin(), pts.end());
    }
    std::ofstream cs(out / "curves.csv", std::ios::binary);
    write_curves_csv(cs, curve);
    if (!cs) throw std::runtime_error("failed writing curves.csv");
    return results;
}

void check_matching_budgets(std::span<const CurvePoint> points) {
    std::map<std::pair<std::string, std::uint64_t>, std::vector<std::size_t>> curves;
    for (const auto& p : points) curves[{p.strategy, p.seed}].push_back(p.budget);
    if (curves.empty()) return;
    const auto& ref = curves.begin()->second;
    for (const auto& [key, budgets] : curves) {
        if (budgets != ref) {
            throw std::invalid_argument("curve for strategy " + key.first + ", seed " + std::to_string(key.second) + " has mismatched budget points");
        }
    }
}

std::vector<CurvePoint> run_strategy_comparison(const ExperimentConfig& config, std::span<const StrategyKind> strategies) {
    config.validate();
    if (strategies.empty()) throw std::invalid_argument("no strategies to compare");
    const Pool pool = load_checked_pool(config);
    std::vector<CurvePoint> all;
    for (auto kind : strategies) {
        ExperimentConfig c = config;
        c.strategy = kind;
        for (const auto& r : run_all_seeds(c, pool, {})) {
            const auto pts = curve_points(r);
            all.insert(all.end(), pts.begin(), pts.end());
        }
    }
    check_matching_budgets(all);
    return all;
}

CategoryF1 JointVsSingleReport::mean_joint() const {
    CategoryF1 m;
    for (const auto& s : seeds) {
        m.weather += s.joint.weather / static_cast<double>(seeds.size());
        m.light += s.joint.light / static_cast<double>(seeds.size());
    }
    return m;
}

CategoryF1 JointVsSingleReport::mean_single() const {
    CategoryF1 m;
    for (const auto& s : seeds) {
        m.weather += s.single.weather / static_cast<double>(seeds.size());
        m.light += s.single.light / static_cast<double>(seeds.size());
    }
    return m;
}

void to_json(nlohmann::json& j, const JointVsSingleReport& r) {
    auto cat = [](const CategoryF1& c) { return nlohmann::json{{"weather", c.weather}, {"light", c.light}}; };
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& s : r.seeds) seeds.push_back({{"seed", s.seed}, {"joint", cat(s.joint)}, {"single", cat(s.single)}});
    j = {{"seeds", seeds}, {"mean_joint", cat(r.mean_joint())}, {"mean_single", cat(r.mean_single())}};
}

JointVsSingleReport run_joint_vs_single(const ExperimentConfig& config) {
    config.validate();
    const Pool pool = load_checked_pool(config);
    JointVsSingleReport rep;
    rep.seeds.resize(config.seeds.size());
    for_each_parallel(config.seeds.size(), config.jobs, [&](std::size_t i) {
        const std::uint64_t seed = config.seeds[i];
        ExperimentConfig c = config;
        c.bootstrap = config.final_budget();
        c.cycles = 0;
        JointVsSingleSeed out{seed, {}, {}};
        try {
            Session s(c, seed, pool);
            auto run = [&](HeadSelection heads) {
                ExperimentConfig hc = c;
                hc.train.heads = heads;
                Session hs(hc, seed, pool);
                return hs.train_and_evaluate().f1;
            };
            const F1Result joint = s.train_and_evaluate().f1;
            out.joint = {joint.weather_macro(), joint.light_macro()};
            out.single = {run(HeadSelection::weather).weather_macro(), run(HeadSelection::light).light_macro()};
        } catch (const std::exception& e) {
            throw LoopError(e.what(), seed, 0);
        }
        rep.seeds[i] = out;
    });
    return rep;
}

Model pretrain_source_model(const ExperimentConfig& config, std::uint64_t seed) {
    Pool source = synth_generate(config.warmstart.source);
    const auto ids = source.ids();
    oracle_label(source, ids, 0.0, Rng::derive(seed, 107), LabelProvenance::bootstrap);
    TrainConfig tc = config.train;
    tc.epochs = config.warmstart.pretrain_epochs;
    tc.heads = HeadSelection::both;
    tc.freeze_schedule.clear();
    tc.seed = Rng::derive(seed, 108);
    Model m = train_cycle(Model::build(config.model, Rng::derive(seed, 109)), source, ids, tc, 0).model;
    m.set_provenance(Provenance::source_pretrained);
    return m;
}

void to_json(nlohmann::json& j, const WarmstartReport& r) {
    auto opt = [](const std::optional<int>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& s : r.seeds) {
        seeds.push_back({{"seed", s.seed},
                         {"warm_epochs_to_threshold", opt(s.warm_epochs)},
                         {"random_epochs_to_threshold", opt(s.random_epochs)},
                         {"warm_final_macro_f1", s.warm_final_f1},
                         {"random_final_macro_f1", s.random_final_f1},
                         {"warm_init_provenance", to_string(s.warm_provenance)}});
    }
    j = {{"f1_threshold", r.threshold}, {"epochs", r.epochs}, {"seeds", seeds}};
}

WarmstartReport warmstart_report(const ExperimentConfig& config, std::span<const SeedResult> warm, std::span<const SeedResult> random) {
    if (warm.size() != random.size()) throw std::invalid_argument("warm-start arms have different seed counts");
    WarmstartReport rep{config.warmstart.f1_threshold, config.train.epochs, {}};
    for (std::size_t i = 0; i < warm.size(); ++i) {
        if (warm[i].seed != random[i].seed) throw std::invalid_argument("warm-start arms use different seeds");
        rep.seeds.push_back({warm[i].seed, warm[i].epochs_to_threshold, random[i].epochs_to_threshold, warm[i].reports.back().f1.macro(),
                             random[i].reports.back().f1.macro(), warm[i].init_provenance});
    }
    return rep;
}

WarmstartReport run_warmstart_vs_random(const ExperimentConfig& config) {
    config.validate();
    const Pool pool = load_checked_pool(config);
    std::vector<SeedResult> warm(config.seeds.size()), random(config.seeds.size());
    for_each_parallel(config.seeds.size(), config.jobs, [&](std::size_t i) {
        const std::uint64_t seed = config.seeds[i];
        SeedOptions w;
        w.base = pretrain_source_model(config, seed);
        w.track_threshold = config.warmstart.f1_threshold;
        warm[i] = run_seed(config, pool, seed, w);
        SeedOptions r;
        r.track_threshold = config.warmstart.f1_threshold;
        random[i] = run_seed(config, pool, seed, r);
    });
    return warmstart_report(config, warm, random);
}

}  // namespace lpal
