#include <png.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "lpal/service.hpp"
#include "support/schema.hpp"

using namespace lpal;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kSchemas = LPAL_SCHEMA_DIR;

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
    c.cycles = 3;
    c.topk = 10;
    c.seeds = {3};
    c.warmstart.source.side = 8;
    return c;
}

Session make_session(const ExperimentConfig& c) { return Session(c, c.seeds.front(), load_pool(c.data).pool); }

fs::path temp_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("lpal_service_" + name);
    fs::remove_all(d);
    return d;
}

void expect_schema(const std::string& name, const json& value) {
    const auto errors = schema::validate(kSchemas, name, value);
    for (const auto& e : errors) MESSAGE(e);
    CHECK(errors.empty());
}

json body(const HttpResponse& r) { return json::parse(r.body); }

std::vector<std::uint8_t> decode_png(const std::string& bytes, int& width, int& height) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    REQUIRE(png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()));
    img.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(img));
    REQUIRE(png_image_finish_read(&img, nullptr, px.data(), 0, nullptr));
    width = static_cast<int>(img.width);
    height = static_cast<int>(img.height);
    return px;
}

std::string label_body(int id, const std::string& weather, const std::string& light) {
    return json{{"id", id}, {"weather", weather}, {"light", light}}.dump();
}

std::vector<int> queue_ids(const AnnotationService& s) {
    std::vector<int> ids;
    for (const auto& e : body(s.get_queue(std::nullopt))) ids.push_back(e["id"].get<int>());
    return ids;
}

void check_counts(const json& status) {
    const json& c = status["counts"];
    const std::size_t total = c["human"].get<std::size_t>() + c["auto"].get<std::size_t>() + c["queued"].get<std::size_t>() +
                              c["deferred"].get<std::size_t>() + c["unlabeled"].get<std::size_t>();
    CHECK(total == status["pool_size"].get<std::size_t>());
}

}  // namespace

TEST_CASE("PNG encoding") {
    SUBCASE("constant 0.5 decodes to 128") {
        const std::vector<float> img(36, 0.5f);
        const auto png = encode_png_gray(img, 6);
        int w = 0, h = 0;
        const auto px = decode_png(std::string(png.begin(), png.end()), w, h);
        CHECK(w == 6);
        CHECK(h == 6);
        for (auto p : px) CHECK(p == 128);
    }
    SUBCASE("round trip within one grey level") {
        std::mt19937 rng(4);
        std::uniform_real_distribution<float> u(0, 1);
        std::vector<float> img(100);
        for (auto& v : img) v = u(rng);
        const auto png = encode_png_gray(img, 10);
        int w = 0, h = 0;
        const auto px = decode_png(std::string(png.begin(), png.end()), w, h);
        REQUIRE(px.size() == img.size());
        for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(px[i] / 255.0 - img[i]) <= 1.0 / 255.0);
    }
    SUBCASE("extremes and clamping") {
        const std::vector<float> img{0.f, 1.f, -0.3f, 1.7f};
        const auto png = encode_png_gray(img, 2);
        int w = 0, h = 0;
        const auto px = decode_png(std::string(png.begin(), png.end()), w, h);
        CHECK(px == std::vector<std::uint8_t>{0, 255, 0, 255});
    }
    CHECK_THROWS_AS(encode_png_gray(std::vector<float>(10, 0.f), 3), std::invalid_argument);
}

TEST_CASE("queue, image and status handlers") {
    const ExperimentConfig c = tiny();
    AnnotationService svc(make_session(c), {});

    const json status = body(svc.get_status());
    expect_schema("status.json", status);
    CHECK(status["cycle"] == 0);
    CHECK(status["state"] == "idle");
    CHECK(status["pool_size"] == 240);
    CHECK(status["counts"]["queued"] == c.query_size);
    CHECK(status["counts"]["human"] == c.bootstrap);
    CHECK(status["latest_report"]["cycle"] == 0);
    CHECK(status["last_error"].is_null());
    check_counts(status);

    const HttpResponse q = svc.get_queue(std::nullopt);
    CHECK(q.status == 200);
    const json queue = body(q);
    expect_schema("queue.json", queue);
    REQUIRE(queue.size() == c.query_size);
    for (std::size_t i = 1; i < queue.size(); ++i) {
        const double a = queue[i - 1]["predicted_loss"], b = queue[i]["predicted_loss"];
        CHECK((a > b || (a == b && queue[i - 1]["id"] < queue[i]["id"])));
    }
    for (const auto& e : queue) {
        CHECK(e["cycle_queried"] == 0);
        CHECK(e["image_url"] == "/api/samples/" + std::to_string(e["id"].get<int>()) + "/image");
    }

    const json limited = body(svc.get_queue("3"));
    REQUIRE(limited.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(limited[i] == queue[i]);
    CHECK(body(svc.get_queue("100")).size() == c.query_size);
    for (const char* bad : {"0", "-2", "abc", "", "1.5"}) {
        const HttpResponse r = svc.get_queue(std::string(bad));
        CHECK(r.status == 400);
        expect_schema("error.json", body(r));
    }

    const HttpResponse img = svc.get_image(std::to_string(queue[0]["id"].get<int>()));
    CHECK(img.status == 200);
    CHECK(img.content_type == "image/png");
    int w = 0, h = 0;
    CHECK(decode_png(img.body, w, h).size() == 64);
    CHECK(w == 8);
    CHECK(svc.get_image("240").status == 404);
    CHECK(svc.get_image("-1").status == 404);
    CHECK(svc.get_image("x7").status == 404);
}

TEST_CASE("label posting") {
    const ExperimentConfig c = tiny();
    AnnotationService svc(make_session(c), {});
    const std::vector<int> queued = queue_ids(svc);
    REQUIRE(queued.size() == c.query_size);
    const int id = queued.front();

    SUBCASE("validation") {
        CHECK(svc.post_label("not json").status == 400);
        CHECK(svc.post_label(label_body(id, "fog", "bright")).status == 422);
        const HttpResponse fog = svc.post_label(label_body(id, "fog", "bright"));
        expect_schema("error.json", body(fog));
        CHECK(body(fog)["field"] == "weather");
        CHECK(svc.post_label(label_body(id, "rain", "dusk")).status == 422);
        CHECK(svc.post_label(json{{"id", "7"}, {"weather", "rain"}, {"light", "low"}}.dump()).status == 422);
        CHECK(svc.post_label(json{{"weather", "rain"}, {"light", "low"}}.dump()).status == 422);
        CHECK(svc.post_label(json{{"id", id}, {"weather", 1}, {"light", "low"}}.dump()).status == 422);
        CHECK(svc.post_label(label_body(5000, "rain", "low")).status == 404);
        CHECK(svc.post_label(label_body(-3, "rain", "low")).status == 404);
        // Nothing changed.
        CHECK(body(svc.get_status())["counts"]["queued"] == c.query_size);
    }

    SUBCASE("only queued samples accept labels") {
        int outside = 0;
        while (std::find(queued.begin(), queued.end(), outside) != queued.end()) ++outside;
        const HttpResponse r = svc.post_label(label_body(outside, "clear", "bright"));
        CHECK(r.status == 409);
        expect_schema("error.json", body(r));
    }

    SUBCASE("idempotent re-post") {
        expect_schema("label_request.json", json::parse(label_body(id, "snow", "low")));
        const HttpResponse first = svc.post_label(label_body(id, "snow", "low"));
        CHECK(first.status == 200);
        const json after = body(first);
        expect_schema("status.json", after);
        CHECK(after["counts"]["human"] == c.bootstrap + 1);
        CHECK(after["counts"]["queued"] == c.query_size - 1);

        const HttpResponse again = svc.post_label(label_body(id, "snow", "low"));
        CHECK(again.status == 200);
        CHECK(body(again)["counts"] == after["counts"]);

        CHECK(svc.post_label(label_body(id, "rain", "low")).status == 409);
        CHECK(body(svc.get_status())["counts"] == after["counts"]);
        const auto remaining = queue_ids(svc);
        CHECK(std::find(remaining.begin(), remaining.end(), id) == remaining.end());
    }
}

TEST_CASE("cycle advance") {
    const ExperimentConfig c = tiny();
    const fs::path dir = temp_dir("advance");
    AnnotationService svc(make_session(c), dir);
    CHECK(fs::exists(dir / "cycle_0.json"));

    const HttpResponse refused = svc.post_advance(false);
    CHECK(refused.status == 409);
    expect_schema("error.json", body(refused));
    CHECK(body(refused)["remaining"] == c.query_size);

    for (int id : queue_ids(svc)) REQUIRE(svc.post_label(label_body(id, "clear", "moderate")).status == 200);
    const HttpResponse accepted = svc.post_advance(false);
    CHECK(accepted.status == 202);
    expect_schema("status.json", body(accepted));
    CHECK(body(accepted)["cycle"] == 1);
    CHECK(body(accepted)["state"] == "training");
    svc.wait_idle();

    json status = body(svc.get_status());
    expect_schema("status.json", status);
    CHECK(status["state"] == "idle");
    CHECK(status["cycle"] == 1);
    CHECK(status["latest_report"]["cycle"] == 1);
    CHECK(status["latest_report"]["budget"] == c.bootstrap + c.query_size);
    CHECK(status["counts"]["human"] == c.bootstrap + c.query_size);
    CHECK(status["counts"]["queued"] == c.query_size);
    check_counts(status);
    for (const auto& e : body(svc.get_queue(std::nullopt))) CHECK(e["cycle_queried"] == 1);

    // Forced advance returns still-queued samples to the pool.
    CHECK(svc.post_advance(true).status == 202);
    svc.wait_idle();
    status = body(svc.get_status());
    CHECK(status["cycle"] == 2);
    CHECK(status["counts"]["human"] == c.bootstrap + c.query_size);
    CHECK(status["latest_report"]["budget"] == c.bootstrap + c.query_size);

    CHECK(fs::exists(dir / "cycle_1.json"));
    CHECK(fs::exists(dir / "cycle_2.json"));
    CHECK(fs::exists(dir / "checkpoints" / "cycle_2.ckpt"));
    expect_schema("cycle_report.json", json::parse(std::ifstream(dir / "cycle_2.json")));
    std::ifstream cs(dir / "curves.csv");
    const auto curve = read_curves_csv(cs);
    REQUIRE(curve.size() == 3);
    CHECK(curve[1].budget == c.bootstrap + c.query_size);
    CHECK(curve[2].budget == c.bootstrap + c.query_size);
    fs::remove_all(dir);
}

TEST_CASE("advance is refused while a cycle runs") {
    ExperimentConfig c = tiny();
    c.train.epochs = 40;
    AnnotationService svc(make_session(c), {});
    REQUIRE(svc.post_advance(true).status == 202);
    const HttpResponse busy = svc.post_advance(true);
    CHECK(busy.status == 409);
    expect_schema("error.json", body(busy));
    // Reads stay available during training.
    const json status = body(svc.get_status());
    CHECK(status["cycle"] == 1);
    check_counts(status);
    svc.wait_idle();
    CHECK(body(svc.get_status())["state"] == "idle");
}

TEST_CASE("concurrent labels and reads never see torn counts") {
    ExperimentConfig c = tiny();
    c.query_size = 40;
    c.train.epochs = 6;
    AnnotationService svc(make_session(c), {});
    const std::vector<int> queued = queue_ids(svc);
    REQUIRE(queued.size() == 40);

    std::atomic<bool> done{false};
    std::atomic<int> torn{0}, reads{0};
    std::vector<std::thread> readers;
    for (int t = 0; t < 3; ++t) {
        readers.emplace_back([&] {
            while (!done) {
                const json s = body(svc.get_status());
                const json& k = s["counts"];
                const std::size_t total = k["human"].get<std::size_t>() + k["auto"].get<std::size_t>() + k["queued"].get<std::size_t>() +
                                          k["deferred"].get<std::size_t>() + k["unlabeled"].get<std::size_t>();
                // Each label moves one sample from queued to human.
                if (total != 240 || k["human"].get<std::size_t>() + k["queued"].get<std::size_t>() != c.bootstrap + 40) {
                    if (s["cycle"] == 0) ++torn;
                }
                body(svc.get_queue(std::nullopt));
                ++reads;
            }
        });
    }
    std::vector<std::thread> writers;
    std::atomic<int> ok{0};
    for (int t = 0; t < 4; ++t) {
        writers.emplace_back([&, t] {
            for (std::size_t i = t; i < queued.size(); i += 4) {
                if (svc.post_label(label_body(queued[i], "rain", "low")).status == 200) ++ok;
                // Duplicate posts race with the first one and must stay no-ops.
                if (svc.post_label(label_body(queued[i], "rain", "low")).status != 200) ++torn;
            }
        });
    }
    for (auto& w : writers) w.join();
    CHECK(ok == 40);
    REQUIRE(svc.post_advance(false).status == 202);
    svc.wait_idle();
    done = true;
    for (auto& r : readers) r.join();
    CHECK(torn == 0);
    CHECK(reads > 0);
    const json s = body(svc.get_status());
    CHECK(s["counts"]["human"] == c.bootstrap + 40);
    check_counts(s);
}

TEST_CASE("HTTP interface") {
    const ExperimentConfig c = tiny();
    AnnotationService svc(make_session(c), {});
    const int port = svc.start("127.0.0.1", 0);
    REQUIRE(port > 0);
    httplib::Client cli("127.0.0.1", port);

    auto status = cli.Get("/api/status");
    REQUIRE(status);
    CHECK(status->status == 200);
    CHECK(status->get_header_value("Content-Type") == "application/json");
    CHECK(status->get_header_value("Access-Control-Allow-Origin") == "*");
    expect_schema("status.json", json::parse(status->body));

    auto pre = cli.Options("/api/labels");
    REQUIRE(pre);
    CHECK(pre->status == 204);
    CHECK(pre->get_header_value("Access-Control-Allow-Origin") == "*");
    CHECK(pre->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);

    auto queue = cli.Get("/api/queue?limit=2");
    REQUIRE(queue);
    const json q = json::parse(queue->body);
    expect_schema("queue.json", q);
    REQUIRE(q.size() == 2);
    CHECK(cli.Get("/api/queue?limit=zero")->status == 400);

    auto img = cli.Get(q[0]["image_url"].get<std::string>());
    REQUIRE(img);
    CHECK(img->status == 200);
    CHECK(img->get_header_value("Content-Type") == "image/png");
    int w = 0, h = 0;
    CHECK(decode_png(img->body, w, h).size() == 64);
    CHECK(cli.Get("/api/samples/99999/image")->status == 404);

    const int id = q[0]["id"];
    auto fog = cli.Post("/api/labels", label_body(id, "fog", "low"), "application/json");
    REQUIRE(fog);
    CHECK(fog->status == 422);
    auto good = cli.Post("/api/labels", label_body(id, "clear", "low"), "application/json");
    REQUIRE(good);
    CHECK(good->status == 200);
    CHECK(json::parse(good->body)["counts"]["human"] == c.bootstrap + 1);
    CHECK(cli.Post("/api/labels", label_body(id, "clear", "low"), "application/json")->status == 200);
    CHECK(cli.Post("/api/labels", "{", "application/json")->status == 400);

    auto refused = cli.Post("/api/cycle/advance", "", "application/json");
    REQUIRE(refused);
    CHECK(refused->status == 409);
    CHECK(json::parse(refused->body)["remaining"] == c.query_size - 1);
    CHECK(cli.Post("/api/cycle/advance", R"({"force":"yes"})", "application/json")->status == 422);

    auto forced = cli.Post("/api/cycle/advance", R"({"force":true})", "application/json");
    REQUIRE(forced);
    CHECK(forced->status == 202);
    svc.wait_idle();
    auto via_query = cli.Post("/api/cycle/advance?force=true", "", "application/json");
    REQUIRE(via_query);
    CHECK(via_query->status == 202);
    svc.wait_idle();
    CHECK(json::parse(cli.Get("/api/status")->body)["cycle"] == 2);

    auto missing = cli.Get("/api/nothing");
    REQUIRE(missing);
    CHECK(missing->status == 404);
    CHECK(json::parse(missing->body).contains("error"));
    svc.stop();
}
