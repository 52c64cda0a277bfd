#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "lpal/model.hpp"
#include "lpal/ops.hpp"
#include "support/oracles.hpp"

using namespace lpal;

namespace {

Tensor probe_batch(int n, int side, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return lpal::testing::random_tensor(Shape{n, 1, side, side}, rng, 0.0, 1.0).cast<float>();
}

ModelConfig small_config() {
    ModelConfig c;
    c.backbone.input_side = 16;
    c.backbone.stages = {{4, 1}, {8, 1}};
    c.backbone.taps = {0, 1};
    c.loss_head.embed_width = 4;
    return c;
}

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "lpal_model_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("build is deterministic per seed") {
    ModelConfig c;
    Model a = Model::build(c, 7);
    Model b = Model::build(c, 7);
    Model other = Model::build(c, 8);
    REQUIRE(a.parameters().size() == b.parameters().size());
    bool differs = false;
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        CHECK(a.parameters()[i].value == b.parameters()[i].value);
        differs = differs || a.parameters()[i].value != other.parameters()[i].value;
    }
    CHECK(differs);
}

TEST_CASE("default architecture shapes and size") {
    ModelConfig c;
    Model m = Model::build(c, 1);
    CHECK(m.parameter_count() == c.expected_parameter_count());
    CHECK(m.parameter_count() > 60000);
    CHECK(m.parameter_count() < 80000);

    Graph<float> g;
    auto fv = m.forward(g, g.constant(probe_batch(2, 32, 3)));
    REQUIRE(fv.stage_outputs.size() == 3);
    CHECK(fv.stage_outputs[0].shape() == Shape{2, 16, 32, 32});
    CHECK(fv.stage_outputs[1].shape() == Shape{2, 32, 16, 16});
    CHECK(fv.stage_outputs[2].shape() == Shape{2, 64, 8, 8});
    CHECK(fv.weather_logits.shape() == Shape{2, 3});
    CHECK(fv.light_logits.shape() == Shape{2, 3});
    CHECK(fv.predicted_loss.shape() == Shape{2});
}

TEST_CASE("invalid configs are rejected") {
    ModelConfig c;
    c.backbone.stages.clear();
    CHECK_THROWS_AS(Model::build(c, 1), std::invalid_argument);
    ModelConfig t;
    t.backbone.taps = {0, 5};
    CHECK_THROWS_AS(Model::build(t, 1), std::invalid_argument);
    ModelConfig d;
    d.loss_head.embed_width = 0;
    CHECK_THROWS_AS(Model::build(d, 1), std::invalid_argument);
}

TEST_CASE("parameter count follows the closed form for every tap subset") {
    for (std::vector<int> taps : {std::vector<int>{0}, {1}, {2}, {0, 2}, {1, 2}, {0, 1, 2}}) {
        ModelConfig c;
        c.backbone.taps = taps;
        c.loss_head.embed_width = 5;
        CHECK(Model::build(c, 1).parameter_count() == c.expected_parameter_count());
    }
    ModelConfig all;
    ModelConfig fewer;
    fewer.backbone.taps = {0, 1};
    const std::size_t d = static_cast<std::size_t>(all.loss_head.embed_width);
    CHECK(all.expected_parameter_count() - fewer.expected_parameter_count() == 64 * d + d + d);
}

TEST_CASE("forward contracts") {
    ModelConfig c = small_config();
    Model m = Model::build(c, 4);
    Tensor batch = probe_batch(4, 16, 9);

    SUBCASE("output arrays align with the batch") {
        ModelOutput out = m.forward(batch);
        CHECK(out.batch() == 4);
        CHECK(out.weather_logits.shape() == Shape{4, 3});
        CHECK(out.light_logits.shape() == Shape{4, 3});
        CHECK(out.predicted_loss.shape() == Shape{4});
        // Row i of a batched pass equals a pass over sample i alone.
        for (int i = 0; i < 4; ++i) {
            std::vector<float> one(batch.ptr() + i * 256, batch.ptr() + (i + 1) * 256);
            ModelOutput single = m.forward(Tensor(Shape{1, 1, 16, 16}, one));
            CHECK(single.predicted_loss[0] == doctest::Approx(out.predicted_loss[i]).epsilon(1e-5));
            CHECK(single.weather_logits[2] == doctest::Approx(out.weather_logits[i * 3 + 2]).epsilon(1e-5));
        }
    }
    SUBCASE("zero heads give uniform logits") {
        for (const char* n : {"head.weather.weight", "head.weather.bias", "head.light.weight", "head.light.bias"}) {
            auto& p = m.parameter(n);
            p.value = Tensor(p.value.shape());
        }
        ModelOutput out = m.forward(batch);
        for (float v : out.weather_logits.data()) CHECK(v == 0.0f);
        for (float v : out.light_logits.data()) CHECK(v == 0.0f);
        Tensor p = softmax_rows(out.weather_logits);
        CHECK(p[0] == doctest::Approx(1.0 / 3.0));
    }
    SUBCASE("zero final loss layer predicts zero loss") {
        for (const char* n : {"lp.out.weight", "lp.out.bias"}) {
            auto& p = m.parameter(n);
            p.value = Tensor(p.value.shape());
        }
        ModelOutput out = m.forward(batch);
        for (float v : out.predicted_loss.data()) CHECK(v == 0.0f);
    }
    SUBCASE("wrong input shape is rejected") {
        CHECK_THROWS_AS(m.forward(probe_batch(2, 32, 1)), ShapeError);
        CHECK_THROWS_AS(m.forward(Tensor(Shape{1, 2, 16, 16})), ShapeError);
    }
}

TEST_CASE("freeze_prefix masks") {
    Model m = Model::build(ModelConfig{}, 1);
    const int total = m.structural_units();
    CHECK(total == 4);
    auto all = m.freeze_prefix(total);
    CHECK(std::all_of(all.begin(), all.end(), [](bool b) { return b; }));

    auto heads = m.freeze_prefix(1);
    for (std::size_t i = 0; i < heads.size(); ++i) {
        const auto& name = m.parameters()[i].name;
        const bool expect = name.rfind("head.", 0) == 0 || name.rfind("lp.", 0) == 0;
        CHECK_MESSAGE(heads[i] == expect, name);
    }

    std::size_t prev = 0;
    for (int depth : {1, 2, 3}) {
        auto mask = m.freeze_prefix(depth);
        const auto count = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
        CHECK(count > prev);
        prev = count;
    }
    CHECK_THROWS_AS(m.freeze_prefix(-1), std::out_of_range);
    CHECK_THROWS_AS(m.freeze_prefix(total + 1), std::out_of_range);
}

TEST_CASE("checkpoint round trip and errors") {
    ModelConfig c = small_config();
    Model m = Model::build(c, 11);
    m.set_provenance(Provenance::source_pretrained);
    const auto path = temp_path("roundtrip.ckpt");
    save_checkpoint(m, path);

    Model back = load_checkpoint(path, c);
    CHECK(back.provenance() == Provenance::source_pretrained);
    CHECK(back.seed() == 11);
    for (std::size_t i = 0; i < m.parameters().size(); ++i) CHECK(back.parameters()[i].value == m.parameters()[i].value);
    Tensor probe = probe_batch(3, 16, 5);
    ModelOutput a = m.forward(probe);
    ModelOutput b = back.forward(probe);
    CHECK(a.predicted_loss == b.predicted_loss);
    CHECK(a.weather_logits == b.weather_logits);

    ModelConfig other = c;
    other.backbone.stages = {{4, 1}, {8, 2}};
    CHECK_THROWS_AS(load_checkpoint(path, other), FingerprintMismatch);

    // Flip one data byte: checksum must catch it.
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekg(-20, std::ios::end);
        char ch = 0;
        f.read(&ch, 1);
        ch = static_cast<char>(ch ^ 0x5a);
        f.seekp(-20, std::ios::end);
        f.write(&ch, 1);
    }
    CHECK_THROWS_AS(load_checkpoint(path, c), CorruptCheckpoint);

    const auto junk = temp_path("junk.ckpt");
    std::ofstream(junk) << "not a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(junk, c), CorruptCheckpoint);
    CHECK_THROWS_AS(load_checkpoint(temp_path("missing.ckpt"), c), CheckpointError);
}
