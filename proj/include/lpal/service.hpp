#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lpal/loop.hpp"

namespace lpal {

/// 8-bit grayscale PNG of a [0,1] image; pixel = floor(255 v + 0.5).
std::vector<std::uint8_t> encode_png_gray(std::span<const float> image, int side);

enum class LoopState { idle, training, scoring };
std::string to_string(LoopState s);

struct HttpResponse {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
};

/// HTTP+JSON facade over a Session's human queue.
///
/// Reads take a shared lock, mutations an exclusive one. Cycle advancement
/// runs on a background worker that trains on a pool snapshot, so status and
/// queue reads stay responsive while it works.
class AnnotationService {
public:
    /// Trains cycle 0 and fills the first queue before returning. Cycle reports,
    /// curves.csv and checkpoints go to `run_dir` when it is non-empty.
    AnnotationService(Session session, std::filesystem::path run_dir);
    ~AnnotationService();
    AnnotationService(const AnnotationService&) = delete;
    AnnotationService& operator=(const AnnotationService&) = delete;

    // Handlers; the HTTP layer only routes to these.
    HttpResponse get_queue(const std::optional<std::string>& limit) const;
    HttpResponse get_image(const std::string& id) const;
    HttpResponse post_label(const std::string& body);
    HttpResponse post_advance(bool force);
    HttpResponse get_status() const;

    /// Blocks until no cycle is running.
    void wait_idle() const;

    /// Binds and serves on a background thread. Port 0 picks a free port; returns the bound port.
    int start(const std::string& host, int port);
    /// Serves on the calling thread until stop().
    void listen(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace lpal
