#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lpal/loop.hpp"
#include "lpal/service.hpp"

using namespace lpal;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> strategy;
};

std::string read_text(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + p.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary);
    os << text;
    if (!os) throw std::runtime_error("cannot write " + p.string());
}

// Config text as given (kept byte-exact for the run directory) plus the parsed config with CLI overrides applied.
std::pair<std::string, ExperimentConfig> load_config(const Common& o) {
    std::string text = o.config_path.empty() ? std::string("{}\n") : read_text(o.config_path);
    ExperimentConfig c = parse_experiment_config(text);
    if (o.seed) c.seeds = {*o.seed};
    if (o.out) c.output_dir = *o.out;
    if (o.strategy) c.strategy = strategy_from_string(*o.strategy);
    c.validate();
    return {std::move(text), std::move(c)};
}

void add_common(CLI::App* cmd, Common& o, bool with_strategy) {
    cmd->add_option("--config", o.config_path, "Experiment config (JSON); defaults apply when omitted")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "Run a single seed instead of the configured list");
    cmd->add_option("--out", o.out, "Output directory");
    if (with_strategy) cmd->add_option("--strategy", o.strategy, "predicted_loss, entropy, least_confidence or random");
}

json summarize(const std::vector<SeedResult>& results) {
    json seeds = json::array();
    for (const auto& r : results) {
        json curve = json::array();
        for (const auto& p : curve_points(r)) curve.push_back({{"budget", p.budget}, {"macro_f1", p.macro_f1}});
        seeds.push_back({{"seed", r.seed}, {"strategy", r.strategy}, {"curve", curve}});
    }
    return {{"seeds", seeds}};
}

int cmd_gen_data(const Common& o) {
    const auto [text, c] = load_config(o);
    if (c.data.kind != DataSource::Kind::synth) throw std::invalid_argument("gen-data needs a synthetic data source");
    SynthConfig sc = c.data.synth;
    if (o.seed) sc.seed = *o.seed;
    const fs::path out = o.out ? fs::path(*o.out) : fs::path("data");
    const Pool pool = synth_generate(sc);
    std::ostringstream csv;
    csv << "filename,weather,light\n";
    char name[32];
    for (int id : pool.ids()) {
        std::snprintf(name, sizeof name, "img_%05d.pgm", id);
        write_pgm(out / "images" / name, pool.sample(id).image, pool.side());
        const LabelSet t = *pool.truth(id);
        csv << name << ',' << to_string(t.weather) << ',' << to_string(t.light) << '\n';
    }
    write_text(out / "labels.csv", csv.str());
    std::cout << json{{"images", (out / "images").string()}, {"labels", (out / "labels.csv").string()}, {"count", pool.size()}}.dump(2)
              << "\n";
    return 0;
}

int cmd_run(const Common& o) {
    const auto [text, c] = load_config(o);
    const auto results = run_active_learning(c, text);
    json s = summarize(results);
    s["output_dir"] = c.output_dir.string();
    std::cout << s.dump(2) << "\n";
    return 0;
}

int cmd_compare(const Common& o, const std::string& kind) {
    const auto [text, c] = load_config(o);
    const fs::path out = c.output_dir;
    fs::create_directories(out);
    write_text(out / "config.json", text);
    json report;
    if (kind == "strategies") {
        const auto points = run_strategy_comparison(c, c.strategies);
        std::ofstream cs(out / "curves.csv", std::ios::binary);
        write_curves_csv(cs, points);
        if (!cs) throw std::runtime_error("cannot write curves.csv");
        report = {{"curves", (out / "curves.csv").string()}, {"rows", points.size()}};
    } else if (kind == "joint-vs-single") {
        report = run_joint_vs_single(c);
        write_text(out / "joint_vs_single.json", report.dump(2) + "\n");
    } else if (kind == "warmstart") {
        report = run_warmstart_vs_random(c);
        write_text(out / "warmstart.json", report.dump(2) + "\n");
    } else {
        throw std::invalid_argument("unknown comparison '" + kind + "'");
    }
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_serve(const Common& o, const std::string& host, int port) {
    const auto [text, c] = load_config(o);
    IngestResult ing = load_pool(c.data);
    c.validate_budget(ing.pool.size());
    fs::create_directories(c.output_dir);
    write_text(c.output_dir / "config.json", text);
    AnnotationService service(Session(c, c.seeds.front(), std::move(ing.pool)), c.output_dir);
    std::cerr << json{{"listening", host + ":" + std::to_string(port)}}.dump() << std::endl;
    service.listen(host, port);
    return 0;
}

// Mean macro F1 per strategy and budget, read back from a run or comparison directory.
int cmd_report(const Common& o) {
    const fs::path dir = o.out ? fs::path(*o.out) : fs::path("run");
    std::ifstream is(dir / "curves.csv");
    if (!is) throw std::runtime_error("no curves.csv in " + dir.string());
    const auto points = read_curves_csv(is);
    std::map<std::string, std::map<std::size_t, std::vector<double>>> by;
    for (const auto& p : points) by[p.strategy][p.budget].push_back(p.macro_f1);
    json out = json::object();
    for (const auto& [strategy, budgets] : by) {
        json rows = json::array();
        for (const auto& [budget, f1s] : budgets) {
            double sum = 0;
            for (double f : f1s) sum += f;
            rows.push_back({{"budget", budget}, {"mean_macro_f1", sum / static_cast<double>(f1s.size())}, {"seeds", f1s.size()}});
        }
        out[strategy] = rows;
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Loss-prediction active learning for weather and light classification"};
    app.require_subcommand(1);
    Common o;
    std::string kind = "strategies", host = "127.0.0.1";
    int port = 8080;

    auto* gen = app.add_subcommand("gen-data", "Write a synthetic pool as PGM images plus labels.csv");
    add_common(gen, o, false);
    auto* run = app.add_subcommand("run", "Run the active-learning loop");
    add_common(run, o, true);
    auto* compare = app.add_subcommand("compare", "Run one of the comparison experiments");
    add_common(compare, o, false);
    compare->add_option("--kind", kind, "strategies, joint-vs-single or warmstart")
        ->check(CLI::IsMember({"strategies", "joint-vs-single", "warmstart"}));
    auto* serve = app.add_subcommand("serve", "Serve the annotation API for one seed");
    add_common(serve, o, true);
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
    auto* report = app.add_subcommand("report", "Summarize curves.csv of a finished run (--out names the run)");
    report->add_option("--out", o.out, "Run directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << json{{"error", e.what()}, {"kind", "usage"}}.dump() << "\n";
        return 2;
    }

    try {
        if (*gen) return cmd_gen_data(o);
        if (*run) return cmd_run(o);
        if (*compare) return cmd_compare(o, kind);
        if (*serve) return cmd_serve(o, host, port);
        if (*report) return cmd_report(o);
    } catch (const LoopError& e) {
        std::cerr << json{{"error", e.what()}, {"kind", "loop"}, {"seed", e.seed()}, {"cycle", e.cycle()}}.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", e.what()}, {"kind", "runtime"}}.dump() << "\n";
        return 1;
    }
    return 1;
}
