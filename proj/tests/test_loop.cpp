#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "lpal/loop.hpp"

using namespace lpal;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny() {
    ExperimentConfig c;
    c.data.synth.n = 240;
    c.data.synth.side = 8;
    c.data.synth.seed = 5;
    c.model.backbone.input_side = 8;
    c.model.backbone.stages = {{4, 1}, {8, 1}};
    c.model.backbone.taps = {0, 1};
    c.model.loss_head.embed_width = 4;
    c.train.epochs = 2;
    c.train.batch_size = 8;
    c.bootstrap = 24;
    c.query_size = 8;
    c.cycles = 2;
    c.topk = 10;
    c.seeds = {3};
    c.warmstart.source.n = 60;
    c.warmstart.source.side = 8;
    c.warmstart.pretrain_epochs = 1;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("lpal_test_loop_" + name);
    fs::remove_all(p);
    return p;
}

// Stand-in outcome so a session can query without paying for training.
void install_untrained(Session& s) {
    CycleOutcome o{s.base_model(), {}, {}};
    o.report.cycle = s.cycle();
    s.install(std::move(o));
}

bool same_values(const Tensor& a, const Tensor& b) { return std::ranges::equal(a.data(), b.data()); }

void check_conservation(const Session& s) {
    const BudgetCounts c = budget_counts(s.pool());
    CHECK(c.total() == s.pool().size());
    CHECK(c.human + c.auto_labeled == s.pool().labeled().size());
}

}  // namespace

TEST_CASE("experiment config json") {
    ExperimentConfig c = tiny();
    c.strategies = {StrategyKind::entropy, StrategyKind::random};
    c.thresholds = {ThresholdPolicy::Kind::absolute, 0.1, 0.9};
    c.train.freeze_schedule = {{0, 1}, {1, 2}};
    const nlohmann::json j = c;
    const auto back = parse_experiment_config(j.dump());
    CHECK(nlohmann::json(back) == j);
    CHECK(back.strategies == c.strategies);
    CHECK(back.thresholds.kind == ThresholdPolicy::Kind::absolute);

    CHECK_THROWS_AS(parse_experiment_config("{\"bootstrap\": 10, \"bogus\": 1}"), std::invalid_argument);
    CHECK_THROWS_AS(parse_experiment_config("{not json"), std::invalid_argument);
    CHECK_THROWS_AS(parse_experiment_config("{\"seeds\": []}"), std::invalid_argument);
    CHECK_THROWS_AS(parse_experiment_config("{\"strategy\": \"coreset\"}"), std::invalid_argument);
    CHECK_THROWS_AS(parse_experiment_config("{\"data\": {\"kind\": \"synth\", \"synth\": {\"side\": 16}}}"), std::invalid_argument);
    // Defaults are the desk budgets.
    const auto d = parse_experiment_config("{}");
    CHECK(d.bootstrap == 90);
    CHECK(d.query_size == 30);
    CHECK(d.cycles == 5);
    CHECK(d.eval_fraction == 0.2);
    CHECK_FALSE(d.train_on_auto_labels);
}

TEST_CASE("budget validation") {
    ExperimentConfig c = tiny();
    c.validate_budget(240);  // 24 + 2*8 <= 192
    c.bootstrap = 180;
    CHECK_THROWS_AS(c.validate_budget(240), std::invalid_argument);
    CHECK_THROWS_AS(Session(c, 1, synth_generate(c.data.synth)), std::invalid_argument);
    c = tiny();
    c.cycles = 30;
    CHECK_THROWS_WITH_AS(c.validate_budget(240), doctest::Contains("exceeds"), std::invalid_argument);
}

TEST_CASE("session split and bootstrap") {
    const ExperimentConfig c = tiny();
    const Session s(c, 3, synth_generate(c.data.synth));
    CHECK(s.eval_ids().size() == 48);
    CHECK(s.pool().labeled().size() == 24);
    for (int id : s.pool().labeled()) {
        CHECK_FALSE(s.is_eval(id));
        CHECK(s.pool().sample(id).provenance == LabelProvenance::bootstrap);
    }
    CHECK(s.candidates().size() == 240 - 48 - 24);
    CHECK(s.cycle() == 0);
    check_conservation(s);
}

TEST_CASE("cycles=0 runs one bootstrap training and one report") {
    ExperimentConfig c = tiny();
    c.cycles = 0;
    const Pool pool = synth_generate(c.data.synth);
    const auto r = run_seed(c, pool, 3);
    REQUIRE(r.reports.size() == 1);
    CHECK(r.reports[0].cycle == 0);
    CHECK(r.reports[0].budget == c.bootstrap);
    CHECK(r.epochs.size() == 1);
    CHECK(r.epochs[0].size() == static_cast<std::size_t>(c.train.epochs));
}

TEST_CASE("human budget after c cycles is n + c*k") {
    ExperimentConfig c = tiny();
    c.cycles = 3;
    const Pool pool = synth_generate(c.data.synth);
    const auto r = run_seed(c, pool, 4);
    REQUIRE(r.reports.size() == 4);
    for (const auto& rep : r.reports) {
        CHECK(rep.budget == c.bootstrap + static_cast<std::size_t>(rep.cycle) * c.query_size);
        CHECK(rep.eval_size == 48);
        CHECK(rep.seed == 4);
        CHECK(rep.strategy == "predicted_loss");
    }
    // Auto labels accumulate separately from the human budget.
    CHECK(r.reports[0].auto_labeled == 0);
    CHECK(r.reports.back().auto_labeled >= r.reports[1].auto_labeled);
}

TEST_CASE("query queues k, triages the rest, advance moves on") {
    ExperimentConfig c = tiny();
    Session s(c, 7, synth_generate(c.data.synth));
    s.train_and_evaluate();
    const auto before = budget_counts(s.pool());
    const QueryOutcome q = s.query();
    CHECK(q.selected.size() == c.query_size);
    CHECK(s.queued_ids().size() == c.query_size);
    for (int id : q.selected) {
        CHECK(s.pool().sample(id).queue == QueueState::queued);
        CHECK(s.pool().sample(id).queued_cycle == 0);
        CHECK_FALSE(s.is_eval(id));
    }
    const auto after = budget_counts(s.pool());
    CHECK(after.human == before.human);
    CHECK(after.auto_labeled == q.auto_committed);
    CHECK(after.deferred == q.deferred);
    CHECK(after.queued == c.query_size);
    check_conservation(s);
    // Eval samples are never scored, queued or labeled.
    for (int id : s.eval_ids()) {
        CHECK_FALSE(s.pool().sample(id).working_label.has_value());
        CHECK_FALSE(s.pool().sample(id).score.has_value());
    }
    CHECK_THROWS_AS(s.advance(), std::logic_error);
    s.oracle_label_queue();
    CHECK(budget_counts(s.pool()).human == before.human + c.query_size);
    s.advance();
    CHECK(s.cycle() == 1);
    CHECK_FALSE(s.model().has_value());
    CHECK_THROWS_AS(s.query(), std::logic_error);
}

TEST_CASE("auto labels stay out of training unless enabled") {
    ExperimentConfig c = tiny();
    c.thresholds = {ThresholdPolicy::Kind::absolute, 1e9, 1e9};  // everything below low: all auto
    Session s(c, 8, synth_generate(c.data.synth));
    install_untrained(s);
    const auto q = s.query();
    CHECK(q.auto_committed == s.pool().size() - 48 - 24 - c.query_size);
    CHECK(s.training_ids().size() == 24);
    c.train_on_auto_labels = true;
    Session t(c, 8, synth_generate(c.data.synth));
    install_untrained(t);
    t.query();
    CHECK(t.training_ids().size() == t.pool().labeled().size());

    c.auto_label = false;
    Session u(c, 8, synth_generate(c.data.synth));
    install_untrained(u);
    CHECK(u.query().auto_committed == 0);
    CHECK(budget_counts(u.pool()).auto_labeled == 0);
}

TEST_CASE("budget conservation under random operation sequences") {
    std::mt19937_64 rng(2024);
    ExperimentConfig base = tiny();
    base.data.synth.n = 120;
    base.bootstrap = 12;
    base.query_size = 6;
    const Pool pool = synth_generate(base.data.synth);
    const StrategyKind kinds[] = {StrategyKind::predicted_loss, StrategyKind::entropy, StrategyKind::least_confidence, StrategyKind::random};
    for (int rep = 0; rep < 100; ++rep) {
        ExperimentConfig c = base;
        c.cycles = 1 + static_cast<int>(rng() % 4);
        c.strategy = kinds[rng() % 4];
        c.auto_label = rng() % 2;
        const double lo = static_cast<double>(rng() % 60);
        c.thresholds = {ThresholdPolicy::Kind::percentile, lo, lo + static_cast<double>(rng() % 40)};
        Session s(c, rng(), pool);
        check_conservation(s);
        for (int cycle = 0; cycle < c.cycles && !s.candidates().empty(); ++cycle) {
            install_untrained(s);
            s.query();
            check_conservation(s);
            const auto queued = s.queued_ids();
            // Label a random part of the queue, then force the rest back.
            std::vector<int> some;
            for (int id : queued)
                if (rng() % 2) some.push_back(id);
            oracle_label(s.mutable_pool(), some, 0.0, rng(), LabelProvenance::human);
            check_conservation(s);
            s.advance(true);
            check_conservation(s);
            CHECK(s.queued_ids().empty());
        }
    }
}

TEST_CASE("learner path never reads candidate truth") {
    ExperimentConfig c = tiny();
    c.strategy = StrategyKind::predicted_loss;
    const Pool pool = synth_generate(c.data.synth);
    Session a(c, 11, pool), b(c, 11, pool);
    // Poison the truth of every candidate in b. Only oracle calls may notice.
    for (int id : b.candidates()) {
        const LabelSet t = *b.pool().truth(id);
        b.mutable_pool().set_truth(id, LabelSet{static_cast<Weather>((static_cast<int>(t.weather) + 1) % 3), t.light});
    }
    const std::size_t ra = a.pool().truth_reads(), rb = b.pool().truth_reads();
    a.train_and_evaluate();
    b.train_and_evaluate();
    // Training reads nothing; evaluation reads exactly the held-out truths.
    CHECK(a.pool().truth_reads() - ra == a.eval_ids().size());
    CHECK(b.pool().truth_reads() - rb == b.eval_ids().size());
    CHECK(a.reports().back().f1.f1 == b.reports().back().f1.f1);

    const std::size_t qa = a.pool().truth_reads();
    const auto oa = a.query();
    const auto ob = b.query();
    CHECK(a.pool().truth_reads() == qa);
    CHECK(oa.selected == ob.selected);
    CHECK(oa.thresholds.low == ob.thresholds.low);
    CHECK(oa.auto_committed == ob.auto_committed);
    for (int id : a.candidates()) CHECK(a.pool().sample(id).queue == b.pool().sample(id).queue);
    for (int id : a.pool().labeled()) CHECK(a.pool().sample(id).working_label == b.pool().sample(id).working_label);
    const auto& pa = a.model()->parameters();
    const auto& pb = b.model()->parameters();
    for (std::size_t k = 0; k < pa.size(); ++k) CHECK(same_values(pa[k].value, pb[k].value));
}

TEST_CASE("run_active_learning writes a reproducible run directory") {
    ExperimentConfig c = tiny();
    const fs::path d1 = scratch_dir("run1"), d2 = scratch_dir("run2");
    // Odd formatting must survive byte for byte.
    const std::string text = "{ \"cycles\" : 2,\n\t\"bootstrap\":24 }\n";
    c.output_dir = d1;
    run_active_learning(c, text);
    c.output_dir = d2;
    run_active_learning(c, text);
    CHECK(slurp(d1 / "config.json") == text);
    for (const char* f : {"cycle_0.json", "cycle_1.json", "cycle_2.json", "epochs_0.jsonl", "curves.csv"}) CHECK(fs::exists(d1 / f));
    CHECK_FALSE(fs::exists(d1 / "cycle_3.json"));
    CHECK(fs::exists(d1 / "checkpoints" / "seed_3_cycle_2.ckpt"));
    CHECK(slurp(d1 / "curves.csv") == slurp(d2 / "curves.csv"));

    std::istringstream is(slurp(d1 / "curves.csv"));
    const auto pts = read_curves_csv(is);
    REQUIRE(pts.size() == 3);
    CHECK(pts[2].budget == 40);
    const auto rep = nlohmann::json::parse(slurp(d1 / "cycle_1.json"));
    CHECK(rep.at("budget") == 32);
    CHECK(rep.at("macro_f1").get<double>() == doctest::Approx(pts[1].macro_f1).epsilon(1e-5));

    const Model m = load_checkpoint(d1 / "checkpoints" / "seed_3_cycle_0.ckpt", c.model);
    CHECK(m.provenance() == Provenance::cycle_trained);

    // Several seeds get their own subdirectories.
    c.seeds = {1, 2};
    c.jobs = 2;
    c.output_dir = scratch_dir("run3");
    run_active_learning(c, text);
    CHECK(fs::exists(c.output_dir / "seed_1" / "cycle_2.json"));
    CHECK(fs::exists(c.output_dir / "seed_2" / "cycle_0.json"));
    std::istringstream is3(slurp(c.output_dir / "curves.csv"));
    CHECK(read_curves_csv(is3).size() == 6);
    fs::remove_all(d1);
    fs::remove_all(d2);
    fs::remove_all(c.output_dir);
}

TEST_CASE("parallel seeds match sequential seeds") {
    ExperimentConfig c = tiny();
    c.seeds = {1, 2, 3};
    const StrategyKind s[] = {StrategyKind::random};
    c.jobs = 1;
    const auto seq = run_strategy_comparison(c, s);
    c.jobs = 3;
    const auto par = run_strategy_comparison(c, s);
    REQUIRE(seq.size() == par.size());
    for (std::size_t i = 0; i < seq.size(); ++i) {
        CHECK(seq[i].macro_f1 == par[i].macro_f1);
        CHECK(seq[i].seed == par[i].seed);
    }
}

TEST_CASE("strategy comparison") {
    ExperimentConfig c = tiny();
    c.seeds = {1, 2};
    const StrategyKind three[] = {StrategyKind::predicted_loss, StrategyKind::entropy, StrategyKind::random};
    const auto pts = run_strategy_comparison(c, three);
    CHECK(pts.size() == 3 * 2 * 3);
    // Cycle 0 trains on the same bootstrap for every strategy.
    for (const auto& p : pts) {
        if (p.budget != 24) continue;
        for (const auto& q : pts)
            if (q.budget == 24 && q.seed == p.seed) CHECK(q.macro_f1 == p.macro_f1);
    }
    const StrategyKind rr[] = {StrategyKind::random, StrategyKind::random};
    const auto twice = run_strategy_comparison(c, rr);
    REQUIRE(twice.size() == 12);
    for (std::size_t i = 0; i < 6; ++i) CHECK(twice[i].macro_f1 == twice[i + 6].macro_f1);

    std::vector<CurvePoint> bad{{24, 0.5, "random", 1}, {32, 0.6, "random", 1}, {24, 0.5, "entropy", 1}, {30, 0.6, "entropy", 1}};
    CHECK_THROWS_AS(check_matching_budgets(bad), std::invalid_argument);
    bad[3].budget = 32;
    CHECK_NOTHROW(check_matching_budgets(bad));
    CHECK_THROWS_AS(run_strategy_comparison(c, std::span<const StrategyKind>{}), std::invalid_argument);
}

TEST_CASE("joint vs single") {
    ExperimentConfig c = tiny();
    c.seeds = {1, 2};
    const auto a = run_joint_vs_single(c);
    const auto b = run_joint_vs_single(c);
    REQUIRE(a.seeds.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(a.seeds[i].joint.weather == b.seeds[i].joint.weather);
        CHECK(a.seeds[i].single.light == b.seeds[i].single.light);
        CHECK(a.seeds[i].joint.weather >= 0.0);
        CHECK(a.seeds[i].joint.weather <= 1.0);
    }
    const nlohmann::json j = a;
    CHECK(j.at("seeds").size() == 2);
    CHECK(j.at("mean_joint").contains("weather"));
}

TEST_CASE("warm start") {
    ExperimentConfig c = tiny();
    const Pool pool = synth_generate(c.data.synth);
    const Model base = pretrain_source_model(c, 1);
    CHECK(base.provenance() == Provenance::source_pretrained);
    CHECK(same_values(pretrain_source_model(c, 1).parameters()[0].value, base.parameters()[0].value));

    SeedOptions o;
    o.base = base;
    o.track_threshold = 0.0;  // reached after the first epoch
    const auto w1 = run_seed(c, pool, 1, o);
    const auto w2 = run_seed(c, pool, 1, o);
    CHECK(w1.init_provenance == Provenance::source_pretrained);
    REQUIRE(w1.epochs_to_threshold.has_value());
    CHECK(*w1.epochs_to_threshold == 1);
    for (std::size_t i = 0; i < w1.reports.size(); ++i) CHECK(w1.reports[i].f1.f1 == w2.reports[i].f1.f1);

    o.track_threshold = 1.5;  // unreachable
    CHECK_FALSE(run_seed(c, pool, 1, o).epochs_to_threshold.has_value());

    c.seeds = {1};
    const auto rep = run_warmstart_vs_random(c);
    REQUIRE(rep.seeds.size() == 1);
    CHECK(rep.seeds[0].warm_provenance == Provenance::source_pretrained);
    const nlohmann::json j = rep;
    CHECK(j.at("seeds")[0].at("warm_init_provenance") == "source-pretrained");

    // A base with another architecture is refused.
    ExperimentConfig other = c;
    other.model.loss_head.embed_width = 5;
    o.base = Model::build(other.model, 1);
    CHECK_THROWS_AS(run_seed(c, pool, 1, o), LoopError);
}

TEST_CASE("failures carry the cycle index") {
    ExperimentConfig c = tiny();
    // Samples without truth can be queried but not oracle-labeled.
    Pool pool = synth_generate(c.data.synth);
    Pool partial(8);
    for (std::size_t id = 0; id < pool.size(); ++id) {
        const int i = static_cast<int>(id);
        partial.add(pool.sample(i).image, i < 120 ? pool.truth(i) : std::nullopt);
    }
    c.data.synth.n = 120;
    c.bootstrap = 20;
    c.strategy = StrategyKind::random;
    c.query_size = 60;
    c.cycles = 1;
    try {
        run_seed(c, partial, 2);
        FAIL("expected a LoopError");
    } catch (const LoopError& e) {
        CHECK(e.cycle() == 0);
        CHECK(e.seed() == 2);
        CHECK(std::string(e.what()).find("cycle 0") != std::string::npos);
    }
}
