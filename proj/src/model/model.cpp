#include "lpal/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>

#include "lpal/ops.hpp"
#include "lpal/rng.hpp"

namespace lpal {
namespace {

constexpr int kKernel = 3;
constexpr std::size_t kInferenceChunk = 128;
// Fixed input standardization applied inside the network.
constexpr float kInputMean = 0.5f;
constexpr double kInputScale = 0.25;

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
    return t;
}

using Binder = std::function<Var(std::size_t)>;

struct Layout {
    // Parameter indices, filled in build order.
    std::vector<std::vector<std::size_t>> blocks;  // per stage, per block: weight index (bias = weight + 1)
    std::size_t weather = 0, light = 0;
    std::vector<std::size_t> taps;
    std::size_t lp_out = 0;
};

Layout layout_of(const ModelConfig& c) {
    Layout l;
    std::size_t idx = 0;
    for (const auto& st : c.backbone.stages) {
        std::vector<std::size_t> b;
        for (int i = 0; i < st.blocks; ++i) {
            b.push_back(idx);
            idx += 2;
        }
        l.blocks.push_back(std::move(b));
    }
    l.weather = idx;
    l.light = idx + 2;
    idx += 4;
    for (std::size_t t = 0; t < c.backbone.taps.size(); ++t) {
        l.taps.push_back(idx);
        idx += 2;
    }
    l.lp_out = idx;
    return l;
}

ForwardVars forward_impl(const ModelConfig& c, Var input, const Binder& bind) {
    const Layout l = layout_of(c);
    ForwardVars out;
    Tensor shift(input.shape());
    std::fill(shift.data().begin(), shift.data().end(), -kInputMean);
    Var x = scale(add(input, input.graph->constant(std::move(shift))), 1.0 / kInputScale);
    for (std::size_t s = 0; s < c.backbone.stages.size(); ++s) {
        for (std::size_t b = 0; b < l.blocks[s].size(); ++b) {
            const int stride = (s > 0 && b == 0) ? 2 : 1;
            const std::size_t w = l.blocks[s][b];
            Var y = conv2d(x, bind(w), bind(w + 1), stride, kKernel / 2);
            if (c.backbone.residual && y.shape() == x.shape()) y = add(y, x);
            x = relu(y);
        }
        out.stage_outputs.push_back(x);
    }
    Var pooled = global_avg_pool(x);
    out.weather_logits = linear(pooled, bind(l.weather), bind(l.weather + 1));
    out.light_logits = linear(pooled, bind(l.light), bind(l.light + 1));

    std::vector<Var> embeds;
    for (std::size_t t = 0; t < c.backbone.taps.size(); ++t) {
        Var tap = global_avg_pool(out.stage_outputs[static_cast<std::size_t>(c.backbone.taps[t])]);
        embeds.push_back(relu(linear(tap, bind(l.taps[t]), bind(l.taps[t] + 1))));
    }
    Var joined = embeds.size() == 1 ? embeds.front() : concat(embeds, 1);
    Var lp = linear(joined, bind(l.lp_out), bind(l.lp_out + 1));
    out.predicted_loss = reshape(lp, Shape{lp.shape()[0]});
    return out;
}

}  // namespace

void ModelConfig::validate() const {
    const auto& b = backbone;
    if (b.input_side < 1) throw std::invalid_argument("input side must be positive");
    if (b.stages.empty()) throw std::invalid_argument("backbone needs at least one stage");
    int side = b.input_side;
    for (std::size_t s = 0; s < b.stages.size(); ++s) {
        if (b.stages[s].channels < 1 || b.stages[s].blocks < 1) {
            throw std::invalid_argument("stage " + std::to_string(s) + " needs positive channels and blocks");
        }
        if (s > 0) side = (side + 2 - kKernel) / 2 + 1;
        if (side < 1) throw std::invalid_argument("input side too small for the stage count");
    }
    if (b.taps.empty()) throw std::invalid_argument("loss-prediction module needs at least one tap");
    std::set<int> seen;
    for (int t : b.taps) {
        if (t < 0 || t >= static_cast<int>(b.stages.size())) {
            throw std::invalid_argument("tap index " + std::to_string(t) + " names no stage");
        }
        if (!seen.insert(t).second) throw std::invalid_argument("duplicate tap index " + std::to_string(t));
    }
    if (loss_head.embed_width < 1) throw std::invalid_argument("loss-prediction embedding width must be >= 1");
}

std::size_t ModelConfig::expected_parameter_count() const {
    std::size_t n = 0;
    int in = 1;
    for (const auto& st : backbone.stages) {
        for (int b = 0; b < st.blocks; ++b) {
            n += static_cast<std::size_t>(st.channels) * in * kKernel * kKernel + st.channels;
            in = st.channels;
        }
    }
    const std::size_t last = static_cast<std::size_t>(backbone.stages.back().channels);
    n += (last * kWeatherClasses + kWeatherClasses) + (last * kLightClasses + kLightClasses);
    const std::size_t d = static_cast<std::size_t>(loss_head.embed_width);
    for (int t : backbone.taps) n += static_cast<std::size_t>(backbone.stages[static_cast<std::size_t>(t)].channels) * d + d;
    n += backbone.taps.size() * d + 1;
    return n;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : c.backbone.stages) stages.push_back({{"channels", s.channels}, {"blocks", s.blocks}});
    j = {{"input_side", c.backbone.input_side},
         {"stages", stages},
         {"taps", c.backbone.taps},
         {"residual", c.backbone.residual},
         {"embed_width", c.loss_head.embed_width}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.backbone.input_side = j.value("input_side", d.backbone.input_side);
    if (j.contains("stages")) {
        c.backbone.stages.clear();
        for (const auto& s : j.at("stages")) {
            c.backbone.stages.push_back({s.at("channels").get<int>(), s.at("blocks").get<int>()});
        }
    }
    if (j.contains("taps")) {
        c.backbone.taps = j.at("taps").get<std::vector<int>>();
    } else {
        c.backbone.taps.clear();
        for (std::size_t i = 0; i < c.backbone.stages.size(); ++i) c.backbone.taps.push_back(static_cast<int>(i));
    }
    c.backbone.residual = j.value("residual", d.backbone.residual);
    c.loss_head.embed_width = j.value("embed_width", d.loss_head.embed_width);
}

std::string ModelConfig::fingerprint() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(nlohmann::json(*this).dump())));
    return buf;
}

std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::random_init: return "random-init";
        case Provenance::source_pretrained: return "source-pretrained";
        case Provenance::cycle_trained: return "cycle-trained";
    }
    return "random-init";
}

Provenance provenance_from_string(const std::string& s) {
    if (s == "random-init") return Provenance::random_init;
    if (s == "source-pretrained") return Provenance::source_pretrained;
    if (s == "cycle-trained") return Provenance::cycle_trained;
    throw std::invalid_argument("unknown checkpoint provenance '" + s + "'");
}

Model Model::build(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config_ = config;
    m.seed_ = seed;
    Rng rng(seed);
    auto add = [&](std::string name, Shape shape, double bound, int unit) {
        Parameter p{std::move(name), uniform_tensor(std::move(shape), bound, rng), {}, unit};
        m.params_.push_back(std::move(p));
    };
    int in = 1;
    const auto& stages = config.backbone.stages;
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const int out = stages[s].channels;
        for (int b = 0; b < stages[s].blocks; ++b) {
            const std::string base = "stage" + std::to_string(s) + ".block" + std::to_string(b);
            const double fan_in = static_cast<double>(in) * kKernel * kKernel;
            add(base + ".weight", Shape{out, in, kKernel, kKernel}, std::sqrt(6.0 / fan_in), static_cast<int>(s));
            add(base + ".bias", Shape{out}, 0.0, static_cast<int>(s));
            in = out;
        }
    }
    const int heads_unit = static_cast<int>(stages.size());
    const double head_bound = 1.0 / std::sqrt(static_cast<double>(in));
    add("head.weather.weight", Shape{kWeatherClasses, in}, head_bound, heads_unit);
    add("head.weather.bias", Shape{kWeatherClasses}, 0.0, heads_unit);
    add("head.light.weight", Shape{kLightClasses, in}, head_bound, heads_unit);
    add("head.light.bias", Shape{kLightClasses}, 0.0, heads_unit);

    const int d = config.loss_head.embed_width;
    for (std::size_t t = 0; t < config.backbone.taps.size(); ++t) {
        const int ch = stages[static_cast<std::size_t>(config.backbone.taps[t])].channels;
        const std::string base = "lp.tap" + std::to_string(t);
        add(base + ".weight", Shape{d, ch}, std::sqrt(6.0 / ch), -1);
        add(base + ".bias", Shape{d}, 0.0, -1);
    }
    const int joined = d * static_cast<int>(config.backbone.taps.size());
    add("lp.out.weight", Shape{1, joined}, 1.0 / std::sqrt(static_cast<double>(joined)), -1);
    add("lp.out.bias", Shape{1}, 0.0, -1);
    for (auto& p : m.params_) p.zero_grad();
    return m;
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

Parameter& Model::parameter(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) return p;
    }
    throw std::out_of_range("no parameter named " + name);
}

void Model::validate_input(const Tensor& batch) const {
    const int s = config_.backbone.input_side;
    if (batch.rank() != 4 || batch.dim(1) != 1 || batch.dim(2) != s || batch.dim(3) != s) {
        throw ShapeError("model expects input [N,1," + std::to_string(s) + "," + std::to_string(s) + "], got " +
                         shape_str(batch.shape()));
    }
}

ForwardVars Model::forward(Graph<float>& g, Var input, const TrainableMask* mask) {
    validate_input(input.value());
    if (mask != nullptr && mask->size() != params_.size()) {
        throw std::invalid_argument("trainability mask length does not match parameter count");
    }
    std::vector<Var> bound(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        bound[i] = g.parameter(params_[i], mask == nullptr || (*mask)[i]);
    }
    return forward_impl(config_, input, [&](std::size_t i) { return bound[i]; });
}

ModelOutput Model::forward(const Tensor& batch) const {
    validate_input(batch);
    const int n = batch.dim(0);
    const int side = config_.backbone.input_side;
    const std::size_t per = static_cast<std::size_t>(side) * side;
    ModelOutput out{Tensor(Shape{n, kWeatherClasses}), Tensor(Shape{n, kLightClasses}), Tensor(Shape{n})};
    for (std::size_t start = 0; start < static_cast<std::size_t>(n); start += kInferenceChunk) {
        const std::size_t count = std::min(kInferenceChunk, static_cast<std::size_t>(n) - start);
        std::vector<float> chunk(batch.ptr() + start * per, batch.ptr() + (start + count) * per);
        Graph<float> g;
        Var x = g.constant(Tensor(Shape{static_cast<int>(count), 1, side, side}, std::move(chunk)));
        std::vector<Var> bound;
        bound.reserve(params_.size());
        for (const auto& p : params_) bound.push_back(g.constant(p.value));
        ForwardVars fv = forward_impl(config_, x, [&](std::size_t i) { return bound[i]; });
        std::copy_n(fv.weather_logits.value().ptr(), count * kWeatherClasses, out.weather_logits.ptr() + start * kWeatherClasses);
        std::copy_n(fv.light_logits.value().ptr(), count * kLightClasses, out.light_logits.ptr() + start * kLightClasses);
        std::copy_n(fv.predicted_loss.value().ptr(), count, out.predicted_loss.ptr() + start);
    }
    return out;
}

TrainableMask Model::freeze_prefix(int depth) const {
    const int total = structural_units();
    if (depth < 0 || depth > total) {
        throw std::out_of_range("trainable suffix depth " + std::to_string(depth) + " outside [0," +
                                std::to_string(total) + "]");
    }
    TrainableMask mask(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const int unit = params_[i].unit;
        mask[i] = unit < 0 || unit >= total - depth;
    }
    return mask;
}

}  // namespace lpal
