#include "lpal/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "lpal/ops.hpp"

namespace lpal {
namespace {

int argmax_row(const Tensor& logits, int row) {
    const int c = logits.dim(1);
    const float* p = logits.ptr() + static_cast<std::size_t>(row) * c;
    return static_cast<int>(std::max_element(p, p + c) - p);
}

bool uses_weather(HeadSelection h) { return h != HeadSelection::light; }
bool uses_light(HeadSelection h) { return h != HeadSelection::weather; }

double row_ce(const Tensor& logits, int row, int target) {
    const int c = logits.dim(1);
    const float* p = logits.ptr() + static_cast<std::size_t>(row) * c;
    double mx = p[0];
    for (int k = 1; k < c; ++k) mx = std::max(mx, static_cast<double>(p[k]));
    double z = 0;
    for (int k = 0; k < c; ++k) z += std::exp(p[k] - mx);
    return std::log(z) + mx - p[target];
}

}  // namespace

std::string to_string(LpLossKind k) { return k == LpLossKind::ranking ? "ranking" : "mse"; }

LpLossKind lp_loss_kind_from_string(const std::string& s) {
    if (s == "ranking") return LpLossKind::ranking;
    if (s == "mse") return LpLossKind::mse;
    throw std::invalid_argument("unknown lp loss kind '" + s + "'");
}

std::string to_string(HeadSelection h) {
    switch (h) {
        case HeadSelection::both: return "both";
        case HeadSelection::weather: return "weather";
        case HeadSelection::light: return "light";
    }
    return "both";
}

HeadSelection head_selection_from_string(const std::string& s) {
    if (s == "both") return HeadSelection::both;
    if (s == "weather") return HeadSelection::weather;
    if (s == "light") return HeadSelection::light;
    throw std::invalid_argument("unknown head selection '" + s + "'");
}

void TrainConfig::validate() const {
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (!(lambda >= 0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite and >= 0");
    if (!(margin > 0) || !std::isfinite(margin)) throw std::invalid_argument("ranking margin must be > 0");
    if (lp_loss == LpLossKind::ranking && batch_size % 2 != 0) {
        throw std::invalid_argument("ranking loss pairs samples, so batch size must be even");
    }
    for (const auto& [cycle, depth] : freeze_schedule) {
        if (depth < 0) throw std::invalid_argument("freeze depth for cycle " + std::to_string(cycle) + " must be >= 0");
    }
    if (init.kind == InitPolicy::Kind::warmstart && init.checkpoint.empty()) {
        throw std::invalid_argument("warmstart needs a checkpoint path");
    }
    optimizer.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    nlohmann::json schedule = nlohmann::json::array();
    for (const auto& s : c.optimizer.schedule) schedule.push_back({{"epoch", s.threshold}, {"multiplier", s.multiplier}});
    nlohmann::json freeze = nlohmann::json::object();
    for (const auto& [cycle, depth] : c.freeze_schedule) freeze[std::to_string(cycle)] = depth;
    nlohmann::json init{{"kind", c.init.kind == InitPolicy::Kind::random ? "random" : "warmstart"}, {"seed", c.init.seed}};
    if (!c.init.checkpoint.empty()) init["checkpoint"] = c.init.checkpoint.string();
    j = {{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"learning_rate", c.optimizer.learning_rate},
         {"momentum", c.optimizer.momentum},
         {"clip_norm", c.optimizer.clip_norm},
         {"schedule", schedule},
         {"lambda", c.lambda},
         {"margin", c.margin},
         {"lp_loss", to_string(c.lp_loss)},
         {"freeze_schedule", freeze},
         {"init", init},
         {"heads", to_string(c.heads)},
         {"ablate_loss_prediction", c.ablate_loss_prediction},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.optimizer.learning_rate = j.value("learning_rate", d.optimizer.learning_rate);
    c.optimizer.momentum = j.value("momentum", d.optimizer.momentum);
    c.optimizer.clip_norm = j.value("clip_norm", d.optimizer.clip_norm);
    c.optimizer.schedule.clear();
    if (j.contains("schedule")) {
        for (const auto& s : j.at("schedule")) c.optimizer.schedule.push_back({s.at("epoch").get<std::int64_t>(), s.at("multiplier").get<double>()});
    }
    c.lambda = j.value("lambda", d.lambda);
    c.margin = j.value("margin", d.margin);
    c.lp_loss = lp_loss_kind_from_string(j.value("lp_loss", to_string(d.lp_loss)));
    c.freeze_schedule.clear();
    if (j.contains("freeze_schedule")) {
        for (const auto& [k, v] : j.at("freeze_schedule").items()) c.freeze_schedule[std::stoi(k)] = v.get<int>();
    }
    c.init = d.init;
    if (j.contains("init")) {
        const auto& i = j.at("init");
        const std::string kind = i.value("kind", "random");
        if (kind == "random") c.init.kind = InitPolicy::Kind::random;
        else if (kind == "warmstart") c.init.kind = InitPolicy::Kind::warmstart;
        else throw std::invalid_argument("unknown init kind '" + kind + "'");
        c.init.seed = i.value("seed", d.init.seed);
        c.init.checkpoint = i.value("checkpoint", std::string{});
    }
    c.heads = head_selection_from_string(j.value("heads", to_string(d.heads)));
    c.ablate_loss_prediction = j.value("ablate_loss_prediction", d.ablate_loss_prediction);
    c.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const EpochStats& s) {
    j = {{"epoch", s.epoch},
         {"task_loss", s.task_loss},
         {"lp_loss", s.lp_loss},
         {"weather_accuracy", s.weather_accuracy},
         {"light_accuracy", s.light_accuracy},
         {"wall_seconds", s.wall_seconds}};
}

void write_epoch_stats(std::ostream& os, std::span<const EpochStats> stats) {
    for (const auto& s : stats) os << nlohmann::json(s).dump() << '\n';
}

TaskLossValue task_loss(const ModelOutput& output, std::span<const LabelSet> labels, HeadSelection heads) {
    const int n = output.batch();
    if (static_cast<std::size_t>(n) != labels.size()) {
        throw std::invalid_argument("task_loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " outputs");
    }
    TaskLossValue v;
    v.per_sample.resize(static_cast<std::size_t>(n));
    double total = 0;
    for (int i = 0; i < n; ++i) {
        const LabelSet& l = labels[static_cast<std::size_t>(i)];
        double s = 0;
        if (uses_weather(heads)) s += row_ce(output.weather_logits, i, static_cast<int>(l.weather));
        if (uses_light(heads)) s += row_ce(output.light_logits, i, static_cast<int>(l.light));
        v.per_sample[static_cast<std::size_t>(i)] = s;
        total += s;
    }
    v.mean = n > 0 ? total / n : 0.0;
    return v;
}

Var task_loss_per_sample(const ForwardVars& fv, std::span<const LabelSet> labels, HeadSelection heads) {
    std::vector<int> w, l;
    for (const auto& s : labels) {
        w.push_back(static_cast<int>(s.weather));
        l.push_back(static_cast<int>(s.light));
    }
    if (heads == HeadSelection::weather) return cross_entropy_per_sample(fv.weather_logits, std::span<const int>(w));
    if (heads == HeadSelection::light) return cross_entropy_per_sample(fv.light_logits, std::span<const int>(l));
    return add(cross_entropy_per_sample(fv.weather_logits, std::span<const int>(w)),
               cross_entropy_per_sample(fv.light_logits, std::span<const int>(l)));
}

std::vector<std::pair<int, int>> shuffled_pairs(int n, Rng& rng) {
    if (n % 2 != 0) throw std::invalid_argument("ranking loss needs an even batch, got " + std::to_string(n));
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i + 1 < n; i += 2) pairs.emplace_back(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i + 1)]);
    return pairs;
}

Var lp_loss_ranking(Var pred, const Tensor& target, double margin, Rng& rng) {
    if (pred.shape() != target.shape()) throw ShapeError("lp_loss_ranking: prediction and target shapes differ");
    const auto pairs = shuffled_pairs(static_cast<int>(target.size()), rng);
    return margin_ranking_loss(pred, target, std::span<const std::pair<int, int>>(pairs), margin);
}

Var lp_loss_mse(Var pred, const Tensor& target) { return mse_loss(pred, target); }

Model make_initial_model(const ModelConfig& model, const InitPolicy& init) {
    if (init.kind == InitPolicy::Kind::warmstart) return load_checkpoint(init.checkpoint, model);
    return Model::build(model, init.seed);
}

TrainableMask cycle_mask(const Model& model, const TrainConfig& config, int cycle) {
    const auto it = config.freeze_schedule.find(cycle);
    TrainableMask mask = model.freeze_prefix(it == config.freeze_schedule.end() ? model.structural_units() : it->second);
    const auto& params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params[i].name;
        if (!uses_weather(config.heads) && name.rfind("head.weather.", 0) == 0) mask[i] = false;
        if (!uses_light(config.heads) && name.rfind("head.light.", 0) == 0) mask[i] = false;
    }
    return mask;
}

TrainResult train_cycle(Model init, const Pool& pool, std::span<const int> ids, const TrainConfig& config, int cycle,
                        const EpochHook& hook) {
    config.validate();
    if (ids.empty()) throw std::invalid_argument("train_cycle: labeled set is empty");
    std::vector<LabelSet> labels;
    labels.reserve(ids.size());
    for (int id : ids) {
        const auto& s = pool.sample(id);
        if (!s.working_label) throw std::invalid_argument("train_cycle: sample " + std::to_string(id) + " has no working label");
        labels.push_back(*s.working_label);
    }

    TrainResult res{std::move(init), {}};
    Model& model = res.model;
    const TrainableMask mask = cycle_mask(model, config, cycle);
    // Schedule thresholds are given in epochs; the optimizer counts steps.
    const bool ranking_pairs = config.lp_loss == LpLossKind::ranking;
    std::size_t per_epoch = 0;
    for (std::size_t start = 0; start < ids.size(); start += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t len = std::min(ids.size() - start, static_cast<std::size_t>(config.batch_size));
        if (len - (ranking_pairs ? len % 2 : 0) > 0) ++per_epoch;
    }
    SgdConfig sgd = config.optimizer;
    for (auto& s : sgd.schedule) s.threshold *= static_cast<std::int64_t>(per_epoch);
    Sgd opt(sgd);
    Rng order_rng(Rng::derive(config.seed, 2 * static_cast<std::uint64_t>(cycle)));
    Rng pair_rng(Rng::derive(config.seed, 2 * static_cast<std::uint64_t>(cycle) + 1));

    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), 0);
    const bool ranking = config.lp_loss == LpLossKind::ranking;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        order_rng.shuffle(order);
        double task_sum = 0, lp_sum = 0;
        std::size_t seen = 0, batches = 0, w_ok = 0, l_ok = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            // The ranking loss pairs samples; an odd tail drops its last sample for this epoch.
            if (ranking && (end - start) % 2 != 0) --end;
            if (end == start) continue;
            std::vector<int> batch_ids;
            std::vector<LabelSet> batch_labels;
            for (std::size_t k = start; k < end; ++k) {
                batch_ids.push_back(ids[order[k]]);
                batch_labels.push_back(labels[order[k]]);
            }

            for (auto& p : model.parameters()) p.zero_grad();
            Graph<float> g;
            const ForwardVars fv = model.forward(g, g.constant(pool.batch(batch_ids)), &mask);
            const Var per_sample = task_loss_per_sample(fv, batch_labels, config.heads);
            Var loss = mean(per_sample);
            const double task_value = loss.value().item();
            double lp_value = 0;
            if (!config.ablate_loss_prediction) {
                // Targets are copied out of the graph: the lp loss never pushes gradient into them.
                const Tensor target = per_sample.value();
                const Var lp = ranking ? lp_loss_ranking(fv.predicted_loss, target, config.margin, pair_rng)
                                       : lp_loss_mse(fv.predicted_loss, target);
                lp_value = lp.value().item();
                loss = add(loss, scale(lp, config.lambda));
            }
            g.backward(loss);
            opt.step(model.parameters(), mask);

            const std::size_t n = batch_ids.size();
            task_sum += task_value * static_cast<double>(n);
            lp_sum += lp_value;
            seen += n;
            ++batches;
            for (std::size_t i = 0; i < n; ++i) {
                if (argmax_row(fv.weather_logits.value(), static_cast<int>(i)) == static_cast<int>(batch_labels[i].weather)) ++w_ok;
                if (argmax_row(fv.light_logits.value(), static_cast<int>(i)) == static_cast<int>(batch_labels[i].light)) ++l_ok;
            }
        }
        EpochStats st;
        st.epoch = epoch;
        st.task_loss = seen ? task_sum / static_cast<double>(seen) : 0.0;
        st.lp_loss = batches ? lp_sum / static_cast<double>(batches) : 0.0;
        st.weather_accuracy = seen ? static_cast<double>(w_ok) / static_cast<double>(seen) : 0.0;
        st.light_accuracy = seen ? static_cast<double>(l_ok) / static_cast<double>(seen) : 0.0;
        st.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.epochs.push_back(st);
        if (hook) hook(st, model);
    }
    model.set_provenance(Provenance::cycle_trained);
    return res;
}

TrainResult train_cycle(const ModelConfig& model, const Pool& pool, std::span<const int> ids, const TrainConfig& config,
                        int cycle, const EpochHook& hook) {
    config.validate();
    return train_cycle(make_initial_model(model, config.init), pool, ids, config, cycle, hook);
}

}  // namespace lpal
