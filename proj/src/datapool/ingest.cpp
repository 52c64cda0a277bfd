#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "lpal/datapool.hpp"

namespace lpal {
namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& is) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

int header_int(std::istream& is, const char* what) {
    const std::string tok = header_token(is);
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](unsigned char ch) { return std::isdigit(ch); })) {
        throw std::runtime_error(std::string("malformed PGM header: bad ") + what + " '" + tok + "'");
    }
    return std::stoi(tok);
}

std::string trim(std::string s) {
    auto ws = [](unsigned char c) { return std::isspace(c); };
    s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
    s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
    return s;
}

// Weight of input cells [i, i+1) inside output cell o when length `in` maps onto `out` cells.
std::vector<std::vector<std::pair<int, double>>> area_weights(int in, int out) {
    std::vector<std::vector<std::pair<int, double>>> w(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        const double lo = o * scale, hi = (o + 1) * scale;
        for (int i = static_cast<int>(std::floor(lo)); i < in && i < hi; ++i) {
            const double overlap = std::min<double>(hi, i + 1) - std::max<double>(lo, i);
            if (overlap > 0) w[static_cast<std::size_t>(o)].emplace_back(i, overlap / scale);
        }
    }
    return w;
}

}  // namespace

PgmImage read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    if (header_token(is) != "P5") throw std::runtime_error("malformed PGM header: expected binary P5 magic");
    PgmImage img;
    img.width = header_int(is, "width");
    img.height = header_int(is, "height");
    img.maxval = header_int(is, "maxval");
    if (img.width < 1 || img.height < 1) throw std::runtime_error("malformed PGM header: empty image");
    if (img.maxval < 1 || img.maxval > 255) throw std::runtime_error("unsupported PGM maxval " + std::to_string(img.maxval) + " (8-bit only)");
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    if (!is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()))) {
        throw std::runtime_error("truncated PGM pixel data");
    }
    return img;
}

void write_pgm(const std::filesystem::path& path, std::span<const float> image, int side) {
    if (image.size() != static_cast<std::size_t>(side) * side) throw ShapeError("write_pgm: image is not side x side");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "P5\n" << side << ' ' << side << "\n255\n";
    for (float v : image) {
        const double q = std::floor(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0 + 0.5);
        os.put(static_cast<char>(static_cast<unsigned char>(q)));
    }
}

std::vector<float> area_resample(std::span<const float> image, int height, int width, int side) {
    if (image.size() != static_cast<std::size_t>(height) * width) throw ShapeError("area_resample: pixel count mismatch");
    const auto wy = area_weights(height, side);
    const auto wx = area_weights(width, side);
    std::vector<float> out(static_cast<std::size_t>(side) * side);
    for (int oy = 0; oy < side; ++oy) {
        for (int ox = 0; ox < side; ++ox) {
            double acc = 0;
            for (const auto& [iy, ay] : wy[static_cast<std::size_t>(oy)]) {
                for (const auto& [ix, ax] : wx[static_cast<std::size_t>(ox)]) {
                    acc += ay * ax * image[static_cast<std::size_t>(iy) * width + ix];
                }
            }
            out[static_cast<std::size_t>(oy) * side + ox] = static_cast<float>(acc);
        }
    }
    return out;
}

IngestResult ingest_pgm(const std::filesystem::path& image_dir, const std::filesystem::path& labels_csv, int side) {
    IngestResult res{Pool(side), {}};

    std::map<std::string, LabelSet> labels;
    std::map<std::string, int> seen_rows;
    std::ifstream csv(labels_csv);
    if (!csv) {
        res.errors.push_back({labels_csv.string(), "cannot open labels file"});
    } else {
        std::string line;
        int row = 0;
        while (std::getline(csv, line)) {
            ++row;
            line = trim(line);
            if (line.empty()) continue;
            std::vector<std::string> cells;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
            if (row == 1 && cells.size() == 3 && cells[0] == "filename" && cells[1] == "weather" && cells[2] == "light") continue;
            if (cells.size() != 3) {
                res.errors.push_back({cells.empty() ? "" : cells[0], "row " + std::to_string(row) + ": expected filename,weather,light"});
                continue;
            }
            const std::string& file = cells[0];
            if (++seen_rows[file] > 1) {
                res.errors.push_back({file, "duplicate filename in labels file (row " + std::to_string(row) + ")"});
                labels.erase(file);
                continue;
            }
            const auto w = parse_weather(cells[1]);
            const auto l = parse_light(cells[2]);
            if (!w) {
                res.errors.push_back({file, "unknown weather token '" + cells[1] + "'"});
                continue;
            }
            if (!l) {
                res.errors.push_back({file, "unknown light token '" + cells[2] + "'"});
                continue;
            }
            labels[file] = LabelSet{*w, *l};
        }
    }

    std::vector<std::filesystem::path> files;
    if (std::filesystem::is_directory(image_dir)) {
        for (const auto& e : std::filesystem::directory_iterator(image_dir)) {
            if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
        }
    } else {
        res.errors.push_back({image_dir.string(), "image directory does not exist"});
    }
    std::sort(files.begin(), files.end());

    std::set<std::string> present;
    for (const auto& f : files) {
        const std::string name = f.filename().string();
        present.insert(name);
        try {
            PgmImage img = read_pgm(f);
            std::vector<float> pixels(img.pixels.size());
            for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<float>(img.pixels[i]) / img.maxval;
            std::optional<LabelSet> truth;
            if (auto it = labels.find(name); it != labels.end() && seen_rows[name] == 1) truth = it->second;
            res.pool.add(area_resample(pixels, img.height, img.width, side), truth, name);
        } catch (const std::exception& e) {
            res.errors.push_back({name, e.what()});
        }
    }
    for (const auto& [name, label] : labels) {
        if (!present.count(name)) res.errors.push_back({name, "listed in labels file but no such image"});
    }
    return res;
}

void save_manifest(const Pool& pool, const std::filesystem::path& dir, bool write_images) {
    std::filesystem::create_directories(dir);
    nlohmann::json samples = nlohmann::json::array();
    for (int id : pool.ids()) {
        const auto& s = pool.sample(id);
        char name[32];
        std::snprintf(name, sizeof name, "images/%06d.pgm", id);
        if (write_images) write_pgm(dir / name, s.image, pool.side());
        nlohmann::json e{{"id", id},
                         {"file", name},
                         {"source", pool.source(id)},
                         {"provenance", to_string(s.provenance)},
                         {"queue", to_string(s.queue)}};
        e["working_label"] = s.working_label ? nlohmann::json(*s.working_label) : nlohmann::json(nullptr);
        const auto& t = pool.truth(id);
        e["truth"] = t ? nlohmann::json(*t) : nlohmann::json(nullptr);
        samples.push_back(std::move(e));
    }
    nlohmann::json m{{"side", pool.side()}, {"samples", samples}};
    std::ofstream os(dir / "manifest.json", std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write manifest in " + dir.string());
    os << m.dump(1) << '\n';
}

Pool load_manifest(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw std::runtime_error("no manifest.json in " + dir.string());
    const auto m = nlohmann::json::parse(is);
    Pool pool(m.at("side").get<int>());
    for (const auto& e : m.at("samples")) {
        PgmImage img = read_pgm(dir / e.at("file").get<std::string>());
        std::vector<float> pixels(img.pixels.size());
        for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<float>(img.pixels[i]) / img.maxval;
        std::optional<LabelSet> truth;
        if (!e.at("truth").is_null()) truth = e.at("truth").get<LabelSet>();
        const int id = pool.add(area_resample(pixels, img.height, img.width, pool.side()), truth, e.value("source", ""));
        if (id != e.at("id").get<int>()) throw std::runtime_error("manifest ids must be dense and ordered");
        if (!e.at("working_label").is_null()) {
            pool.set_label(id, e.at("working_label").get<LabelSet>(), label_provenance_from_string(e.at("provenance").get<std::string>()));
        }
    }
    return pool;
}

}  // namespace lpal
