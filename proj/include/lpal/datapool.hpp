#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "lpal/tensor.hpp"

namespace lpal {

enum class Weather { clear = 0, rain = 1, snow = 2 };
enum class Light { bright = 0, moderate = 1, low = 2 };

inline constexpr int kStrata = 9;

struct LabelSet {
    Weather weather = Weather::clear;
    Light light = Light::bright;

    /// 3*weather + light.
    int stratum() const noexcept { return 3 * static_cast<int>(weather) + static_cast<int>(light); }
    static LabelSet from_stratum(int s);
    friend bool operator==(const LabelSet&, const LabelSet&) = default;
};

std::string to_string(Weather w);
std::string to_string(Light l);
std::optional<Weather> parse_weather(const std::string& token);
std::optional<Light> parse_light(const std::string& token);

void to_json(nlohmann::json& j, const LabelSet& l);
void from_json(const nlohmann::json& j, LabelSet& l);

enum class LabelProvenance { none, bootstrap, human, auto_label };
std::string to_string(LabelProvenance p);
LabelProvenance label_provenance_from_string(const std::string& s);

/// Human-queue bookkeeping for samples that are still unlabeled.
enum class QueueState { none, queued, deferred };
std::string to_string(QueueState q);

/// Everything a learner may see about a sample. Ground truth is deliberately absent.
struct LearnerSample {
    int id = 0;
    std::vector<float> image;  // side*side, row-major, values in [0,1]
    std::optional<LabelSet> working_label;
    LabelProvenance provenance = LabelProvenance::none;
    std::optional<double> predicted_loss;
    std::optional<double> score;
    std::optional<LabelSet> suggested;
    QueueState queue = QueueState::none;
    int queued_cycle = -1;
};

/// Owns samples and the labeled/unlabeled partition.
///
/// Learner-facing code reads samples through sample()/learner_view(), which
/// never expose truth. Truth is only reachable through truth(), whose calls are
/// counted so tests can audit that a code path never touched it.
/// Not internally synchronized: callers serialize mutations (single writer).
class Pool {
public:
    explicit Pool(int side);

    int side() const noexcept { return side_; }
    std::size_t size() const noexcept { return samples_.size(); }
    bool contains(int id) const noexcept { return id >= 0 && static_cast<std::size_t>(id) < samples_.size(); }

    int add(std::vector<float> image, std::optional<LabelSet> truth, std::string source = {});

    const LearnerSample& sample(int id) const;
    const std::string& source(int id) const;
    std::vector<const LearnerSample*> learner_view(std::span<const int> ids) const;
    /// Stacks images into [N,1,S,S].
    Tensor batch(std::span<const int> ids) const;

    const std::set<int>& labeled() const noexcept { return labeled_; }
    const std::set<int>& unlabeled() const noexcept { return unlabeled_; }
    std::vector<int> ids() const;

    // Oracle side.
    const std::optional<LabelSet>& truth(int id) const;
    void set_truth(int id, std::optional<LabelSet> truth);
    std::size_t truth_reads() const noexcept { return truth_reads_.load(); }

    /// Writes a working label and moves the id into the labeled index.
    void set_label(int id, LabelSet label, LabelProvenance provenance);
    void set_prediction(int id, double score, std::optional<double> predicted_loss, std::optional<LabelSet> suggested);
    void set_queue_state(int id, QueueState q, int cycle = -1);

    Pool(const Pool& other);
    Pool& operator=(const Pool& other);
    Pool(Pool&&) noexcept;
    Pool& operator=(Pool&&) noexcept;
    ~Pool() = default;

private:
    void check(int id) const;

    int side_;
    std::vector<LearnerSample> samples_;
    std::vector<std::optional<LabelSet>> truths_;
    std::vector<std::string> sources_;
    std::set<int> labeled_;
    std::set<int> unlabeled_;
    mutable std::atomic<std::size_t> truth_reads_{0};
};

struct SynthConfig {
    int n = 3000;
    /// Probability of each (weather, light) stratum, indexed by LabelSet::stratum().
    std::array<double, kStrata> prior = default_prior();
    int side = 32;
    double noise_sigma = 0.05;
    std::uint64_t seed = 1;

    static std::array<double, kStrata> default_prior();
    static std::array<double, kStrata> uniform_prior();
    void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

/// Base luminance per light level.
double base_luminance(Light l);

/// Renders one synthetic image for a stratum.
std::vector<float> synth_image(LabelSet label, int side, double noise_sigma, std::uint64_t seed);
Pool synth_generate(const SynthConfig& config);

struct IngestError {
    std::string file;
    std::string message;
};

struct IngestResult {
    Pool pool;
    std::vector<IngestError> errors;
};

/// Area-average resample of a height x width image to side x side.
std::vector<float> area_resample(std::span<const float> image, int height, int width, int side);

struct PgmImage {
    int width = 0;
    int height = 0;
    int maxval = 255;
    std::vector<std::uint8_t> pixels;
};
/// Binary P5, maxval <= 255. Throws std::runtime_error on malformed input.
PgmImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, std::span<const float> image, int side);

/// Loads every *.pgm under image_dir. Labels come from `filename,weather,light`
/// rows; unlisted images are added without truth. Per-file problems are reported
/// in `errors` and do not stop ingestion.
IngestResult ingest_pgm(const std::filesystem::path& image_dir, const std::filesystem::path& labels_csv, int side);

/// Proportional allocation over strata (largest remainder) followed by uniform
/// sampling within each stratum. Candidates without truth are ignored.
std::vector<int> stratified_sample(const Pool& pool, std::span<const int> candidates, std::size_t n, std::uint64_t seed);
std::vector<int> stratified_bootstrap(const Pool& pool, std::size_t n, std::uint64_t seed);

/// Largest-remainder apportionment of n over group sizes; ties go to the lower index.
std::vector<std::size_t> largest_remainder(std::span<const std::size_t> sizes, std::size_t n);

/// Simulated annotator: writes truth (or, with probability noise_rate, a different
/// label in each category) and moves ids to the labeled index.
void oracle_label(Pool& pool, std::span<const int> ids, double noise_rate, std::uint64_t seed,
                  LabelProvenance provenance = LabelProvenance::human);

/// JSON manifest of ids, label state and provenance; images are written as PGM
/// files under `<dir>/images/` when write_images is set.
void save_manifest(const Pool& pool, const std::filesystem::path& dir, bool write_images);
Pool load_manifest(const std::filesystem::path& dir);

}  // namespace lpal
