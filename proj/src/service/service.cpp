#include "lpal/service.hpp"

#include <png.h>

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <thread>

#include "httplib.h"

namespace lpal {
namespace {

using nlohmann::json;

HttpResponse json_response(int status, const json& j) { return {status, j.dump(), "application/json"}; }

HttpResponse error_response(int status, const std::string& message, json extra = json::object()) {
    extra["error"] = message;
    return json_response(status, extra);
}

std::optional<int> parse_id(const std::string& s) {
    if (s.empty() || s.size() > 9) return std::nullopt;
    int v = 0;
    for (char c : s) {
        if (c < '0' || c > '9') return std::nullopt;
        v = v * 10 + (c - '0');
    }
    return v;
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    os << text;
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_png_gray(std::span<const float> image, int side) {
    if (side < 1 || image.size() != static_cast<std::size_t>(side) * static_cast<std::size_t>(side)) {
        throw std::invalid_argument("image does not match its side length");
    }
    std::vector<std::uint8_t> pixels(image.size());
    for (std::size_t i = 0; i < image.size(); ++i) {
        const double v = std::clamp(static_cast<double>(image[i]), 0.0, 1.0);
        pixels[i] = static_cast<std::uint8_t>(std::floor(255.0 * v + 0.5));
    }
    std::vector<std::uint8_t> out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("PNG encoding failed");
    }
    png_set_write_fn(png, &out, png_write_to_vector, nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(side), static_cast<png_uint_32>(side), 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < side; ++y) png_write_row(png, pixels.data() + static_cast<std::size_t>(y) * static_cast<std::size_t>(side));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

std::string to_string(LoopState s) {
    switch (s) {
    case LoopState::idle: return "idle";
    case LoopState::training: return "training";
    case LoopState::scoring: return "scoring";
    }
    return "idle";
}

struct AnnotationService::Impl {
    Session session;
    std::filesystem::path run_dir;

    mutable std::shared_mutex mutex;  // guards everything below
    LoopState state = LoopState::idle;
    std::map<int, LabelSet> posted;
    std::vector<CurvePoint> curve;
    std::optional<std::string> last_error;

    mutable std::mutex idle_mutex;
    mutable std::condition_variable idle_cv;
    std::thread worker;

    httplib::Server server;
    std::thread server_thread;

    Impl(Session s, std::filesystem::path dir) : session(std::move(s)), run_dir(std::move(dir)) {}

    json status_json() const {
        json j{{"cycle", session.cycle()},
               {"state", to_string(state)},
               {"counts", budget_counts(session.pool())},
               {"pool_size", session.pool().size()},
               {"latest_report", session.reports().empty() ? json(nullptr) : json(session.reports().back())},
               {"last_error", last_error ? json(*last_error) : json(nullptr)}};
        return j;
    }

    void persist(const CycleReport& report, const Model& model) {
        if (run_dir.empty()) return;
        std::filesystem::create_directories(run_dir / "checkpoints");
        write_file(run_dir / ("cycle_" + std::to_string(report.cycle) + ".json"), json(report).dump(2) + "\n");
        save_checkpoint(model, run_dir / "checkpoints" / ("cycle_" + std::to_string(report.cycle) + ".ckpt"));
        std::ofstream cs(run_dir / "curves.csv", std::ios::binary);
        write_curves_csv(cs, curve);
    }

    // Caller holds the exclusive lock.
    void record(const CycleReport& report) { curve.push_back({report.budget, report.f1.macro(), report.strategy, report.seed}); }

    void set_idle() {
        {
            std::lock_guard lock(idle_mutex);
            state = LoopState::idle;
        }
        idle_cv.notify_all();
    }

    void run_cycle(Pool snapshot) {
        try {
            CycleOutcome out = session.train(snapshot);
            const CycleReport report = out.report;
            const Model model = out.model;
            {
                std::unique_lock lock(mutex);
                session.install(std::move(out));
                record(report);
                state = LoopState::scoring;
            }
            {
                std::unique_lock lock(mutex);
                session.query();
            }
            persist(report, model);
            std::unique_lock lock(mutex);
            set_idle();
        } catch (const std::exception& e) {
            std::unique_lock lock(mutex);
            last_error = "cycle " + std::to_string(session.cycle()) + ": " + e.what();
            set_idle();
        }
    }
};

AnnotationService::AnnotationService(Session session, std::filesystem::path run_dir)
    : impl_(std::make_unique<Impl>(std::move(session), std::move(run_dir))) {
    const CycleReport& report = impl_->session.train_and_evaluate();
    impl_->record(report);
    impl_->session.query();
    impl_->persist(report, *impl_->session.model());
}

AnnotationService::~AnnotationService() {
    stop();
    if (impl_->worker.joinable()) impl_->worker.join();
}

HttpResponse AnnotationService::get_queue(const std::optional<std::string>& limit) const {
    std::size_t cap = SIZE_MAX;
    if (limit) {
        const auto v = parse_id(*limit);
        if (!v || *v <= 0) return error_response(400, "limit must be a positive integer");
        cap = static_cast<std::size_t>(*v);
    }
    std::shared_lock lock(impl_->mutex);
    const Pool& pool = impl_->session.pool();
    std::vector<const LearnerSample*> entries;
    for (int id : impl_->session.queued_ids()) entries.push_back(&pool.sample(id));
    std::sort(entries.begin(), entries.end(), [](const LearnerSample* a, const LearnerSample* b) {
        const double la = a->predicted_loss.value_or(0), lb = b->predicted_loss.value_or(0);
        return la != lb ? la > lb : a->id < b->id;
    });
    json out = json::array();
    for (std::size_t i = 0; i < entries.size() && i < cap; ++i) {
        const LearnerSample& s = *entries[i];
        out.push_back({{"id", s.id},
                       {"image_url", "/api/samples/" + std::to_string(s.id) + "/image"},
                       {"predicted_loss", s.predicted_loss.value_or(0)},
                       {"cycle_queried", s.queued_cycle},
                       {"suggested", s.suggested ? json(*s.suggested) : json(nullptr)}});
    }
    return json_response(200, out);
}

HttpResponse AnnotationService::get_image(const std::string& id) const {
    const auto v = parse_id(id);
    std::shared_lock lock(impl_->mutex);
    const Pool& pool = impl_->session.pool();
    if (!v || !pool.contains(*v)) return error_response(404, "unknown sample id '" + id + "'");
    const auto png = encode_png_gray(pool.sample(*v).image, pool.side());
    return {200, std::string(png.begin(), png.end()), "image/png"};
}

HttpResponse AnnotationService::post_label(const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::parse_error&) {
        return error_response(400, "body is not valid JSON");
    }
    if (!j.is_object() || !j.contains("id") || !j.at("id").is_number_integer()) return error_response(422, "body needs an integer id");
    const int id = j.at("id").get<int>();
    std::unique_lock lock(impl_->mutex);
    Pool& pool = impl_->session.mutable_pool();
    if (!pool.contains(id)) return error_response(404, "unknown sample id " + std::to_string(id));
    const auto weather = j.contains("weather") && j.at("weather").is_string() ? parse_weather(j.at("weather").get<std::string>()) : std::nullopt;
    const auto light = j.contains("light") && j.at("light").is_string() ? parse_light(j.at("light").get<std::string>()) : std::nullopt;
    if (!weather) return error_response(422, "weather must be one of clear, rain, snow", {{"field", "weather"}});
    if (!light) return error_response(422, "light must be one of bright, moderate, low", {{"field", "light"}});
    const LabelSet label{*weather, *light};
    if (auto it = impl_->posted.find(id); it != impl_->posted.end()) {
        if (it->second == label) return json_response(200, impl_->status_json());
        return error_response(409, "sample " + std::to_string(id) + " was already labeled differently");
    }
    if (pool.sample(id).queue != QueueState::queued) return error_response(409, "sample " + std::to_string(id) + " is not in the human queue");
    pool.set_label(id, label, LabelProvenance::human);
    impl_->posted[id] = label;
    return json_response(200, impl_->status_json());
}

HttpResponse AnnotationService::post_advance(bool force) {
    std::unique_lock lock(impl_->mutex);
    if (impl_->state != LoopState::idle) return error_response(409, "a cycle is already running", {{"state", to_string(impl_->state)}});
    const std::size_t remaining = impl_->session.queued_ids().size();
    if (remaining > 0 && !force) return error_response(409, "queue is not empty", {{"remaining", remaining}});
    if (impl_->worker.joinable()) impl_->worker.join();
    impl_->session.advance(force);
    impl_->last_error.reset();
    {
        std::lock_guard g(impl_->idle_mutex);
        impl_->state = LoopState::training;
    }
    Pool snapshot = impl_->session.pool();
    const json status = impl_->status_json();
    impl_->worker = std::thread([this, snap = std::move(snapshot)]() mutable { impl_->run_cycle(std::move(snap)); });
    return json_response(202, status);
}

HttpResponse AnnotationService::get_status() const {
    std::shared_lock lock(impl_->mutex);
    return json_response(200, impl_->status_json());
}

void AnnotationService::wait_idle() const {
    std::unique_lock lock(impl_->idle_mutex);
    impl_->idle_cv.wait(lock, [&] { return impl_->state == LoopState::idle; });
}

namespace {

void send(httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
}

}  // namespace

int AnnotationService::start(const std::string& host, int port) {
    auto& srv = impl_->server;
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                             {"Access-Control-Allow-Headers", "Content-Type"}});
    srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    srv.Get("/api/queue", [this](const httplib::Request& req, httplib::Response& res) {
        send(res, get_queue(req.has_param("limit") ? std::optional<std::string>(req.get_param_value("limit")) : std::nullopt));
    });
    srv.Get("/api/samples/:id/image", [this](const httplib::Request& req, httplib::Response& res) { send(res, get_image(req.path_params.at("id"))); });
    srv.Post("/api/labels", [this](const httplib::Request& req, httplib::Response& res) { send(res, post_label(req.body)); });
    srv.Post("/api/cycle/advance", [this](const httplib::Request& req, httplib::Response& res) {
        bool force = req.has_param("force") && req.get_param_value("force") == "true";
        if (!req.body.empty()) {
            const json j = json::parse(req.body, nullptr, false);
            if (j.is_discarded() || !j.is_object()) return send(res, error_response(400, "body is not a JSON object"));
            if (j.contains("force")) {
                if (!j.at("force").is_boolean()) return send(res, error_response(422, "force must be a boolean"));
                force = j.at("force").get<bool>();
            }
        }
        send(res, post_advance(force));
    });
    srv.Get("/api/status", [this](const httplib::Request&, httplib::Response& res) { send(res, get_status()); });
    srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (res.body.empty()) {
            res.set_content(json{{"error", "no such endpoint"}}.dump(), "application/json");
        }
    });

    const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    impl_->server_thread = std::thread([&srv] { srv.listen_after_bind(); });
    srv.wait_until_ready();
    return bound;
}

void AnnotationService::listen(const std::string& host, int port) {
    start(host, port);
    if (impl_->server_thread.joinable()) impl_->server_thread.join();
}

void AnnotationService::stop() {
    if (impl_->server.is_running()) impl_->server.stop();
    if (impl_->server_thread.joinable() && impl_->server_thread.get_id() != std::this_thread::get_id()) impl_->server_thread.join();
}

}  // namespace lpal
