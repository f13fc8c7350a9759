#pragma once

// Raster I/O (binary PGM), the JSON dataset manifest, and the synthetic
// phantom generator used for closed-loop experiments.

#include "pssam/error.hpp"
#include "pssam/geometry.hpp"
#include "pssam/random.hpp"

#include <nlohmann/json.hpp>

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace pssam {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// PGM (P5)
// ---------------------------------------------------------------------------

struct PgmRaster {
    int width = 0;
    int height = 0;
    int maxval = 255;
    std::vector<std::uint16_t> samples;
};

namespace detail {

inline void skip_pgm_space(std::string_view s, std::size_t& i) {
    while (i < s.size()) {
        if (s[i] == '#') {
            while (i < s.size() && s[i] != '\n' && s[i] != '\r')
                ++i;
        } else if (std::isspace(static_cast<unsigned char>(s[i]))) {
            ++i;
        } else {
            return;
        }
    }
}

inline int read_pgm_uint(std::string_view s, std::size_t& i, const char* field) {
    skip_pgm_space(s, i);
    if (i >= s.size())
        throw FormatError(FormatKind::Truncated, std::string("PGM header ends before ") + field);
    if (!std::isdigit(static_cast<unsigned char>(s[i])))
        throw FormatError(FormatKind::Header, std::string("PGM ") + field + " is not a number");
    long long v = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
        v = v * 10 + (s[i] - '0');
        if (v > (1LL << 30))
            throw FormatError(FormatKind::Header, std::string("PGM ") + field + " is too large");
        ++i;
    }
    return static_cast<int>(v);
}

} // namespace detail

inline PgmRaster read_pgm(std::string_view bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
        throw FormatError(FormatKind::Magic, "expected binary PGM magic 'P5'");
    std::size_t i = 2;
    if (i < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[i])) && bytes[i] != '#')
        throw FormatError(FormatKind::Magic, "expected whitespace after PGM magic");
    PgmRaster r;
    r.width = detail::read_pgm_uint(bytes, i, "width");
    r.height = detail::read_pgm_uint(bytes, i, "height");
    r.maxval = detail::read_pgm_uint(bytes, i, "maxval");
    if (r.width < 1 || r.height < 1)
        throw FormatError(FormatKind::Header, "PGM dimensions must be positive");
    if (r.maxval < 1 || r.maxval > 65535)
        throw FormatError(FormatKind::Header, "PGM maxval must lie in [1, 65535]");
    if (i >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[i])))
        throw FormatError(FormatKind::Truncated, "PGM header missing the whitespace before the raster");
    ++i;
    const std::size_t n = static_cast<std::size_t>(r.width) * static_cast<std::size_t>(r.height);
    const std::size_t bps = r.maxval > 255 ? 2 : 1;
    if (bytes.size() - i < n * bps)
        throw FormatError(FormatKind::Truncated, "PGM raster holds " + std::to_string((bytes.size() - i) / bps) +
                                                     " of " + std::to_string(n) + " samples");
    r.samples.resize(n);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + i);
    for (std::size_t k = 0; k < n; ++k) {
        const std::uint16_t v = bps == 2 ? static_cast<std::uint16_t>((p[2 * k] << 8) | p[2 * k + 1]) : p[k];
        if (v > r.maxval)
            throw FormatError(FormatKind::Header, "PGM sample exceeds maxval");
        r.samples[k] = v;
    }
    return r;
}

inline Image2D read_pgm_image(std::string_view bytes, double spacing = 1.0) {
    const PgmRaster r = read_pgm(bytes);
    Image2D img(r.width, r.height, 0.0, spacing);
    for (std::size_t k = 0; k < r.samples.size(); ++k)
        img.pixels[k] = static_cast<double>(r.samples[k]) / r.maxval;
    return img;
}

inline Mask2D read_pgm_mask(std::string_view bytes) {
    const PgmRaster r = read_pgm(bytes);
    Mask2D m(r.width, r.height);
    for (std::size_t k = 0; k < r.samples.size(); ++k)
        m.bits[k] = r.samples[k] > 0 ? 1 : 0;
    return m;
}

inline std::string pgm_header(int w, int h) {
    return "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
}

/// Canonical 8-bit P5; intensities quantized round-half-up.
inline std::string write_pgm(const Image2D& img) {
    std::string out = pgm_header(img.width, img.height);
    out.reserve(out.size() + img.pixels.size());
    for (double v : img.pixels)
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5))));
    return out;
}

inline std::string write_pgm(const Mask2D& m) {
    std::string out = pgm_header(m.width, m.height);
    out.reserve(out.size() + m.bits.size());
    for (std::uint8_t b : m.bits)
        out.push_back(static_cast<char>(b ? 255 : 0));
    return out;
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw MissingFile(p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& p, std::string_view bytes) {
    if (p.has_parent_path())
        fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open " + p.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("failed writing " + p.string());
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

enum class Split { Train, Test };

inline const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

struct ManifestSample {
    std::string id;
    std::string image_path; // relative to the manifest directory
    std::string mask_path;
    int class_id = 1;
    Split split = Split::Train;

    friend bool operator==(const ManifestSample&, const ManifestSample&) = default;
};

struct DatasetManifest {
    int version = 1;
    double spacing_mm = 1.0;
    std::vector<ManifestSample> samples;
    fs::path root; // directory the relative paths resolve against

    bool operator==(const DatasetManifest& o) const {
        return version == o.version && spacing_mm == o.spacing_mm && samples == o.samples;
    }
};

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
    nlohmann::ordered_json j;
    j["version"] = m.version;
    j["spacing_mm"] = m.spacing_mm;
    j["samples"] = nlohmann::ordered_json::array();
    for (const ManifestSample& s : m.samples)
        j["samples"].push_back({{"id", s.id},
                                {"image_path", s.image_path},
                                {"mask_path", s.mask_path},
                                {"class_id", s.class_id},
                                {"split", to_string(s.split)}});
    return j;
}

inline void save_manifest(const DatasetManifest& m, const fs::path& path) {
    write_file(path, manifest_to_json(m).dump(2) + "\n");
}

/// Parses and validates a manifest document. No file-system access.
inline DatasetManifest parse_manifest(std::string_view text, const fs::path& root = {}) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(FormatKind::Schema, std::string("manifest is not valid JSON: ") + e.what());
    }
    auto need = [&](const nlohmann::json& obj, const char* key) -> const nlohmann::json& {
        if (!obj.is_object() || !obj.contains(key))
            throw FormatError(FormatKind::Schema, std::string("manifest missing field '") + key + "'");
        return obj.at(key);
    };
    DatasetManifest m;
    m.root = root;
    try {
        m.version = need(j, "version").get<int>();
        if (m.version != 1)
            throw FormatError(FormatKind::Schema, "unsupported manifest version " + std::to_string(m.version));
        m.spacing_mm = j.contains("spacing_mm") ? j.at("spacing_mm").get<double>() : 1.0;
        if (!(m.spacing_mm > 0.0))
            throw FormatError(FormatKind::Schema, "spacing_mm must be positive");
        const auto& arr = need(j, "samples");
        if (!arr.is_array())
            throw FormatError(FormatKind::Schema, "'samples' must be an array");
        std::set<std::string> ids;
        for (const auto& e : arr) {
            ManifestSample s;
            s.id = need(e, "id").get<std::string>();
            s.image_path = need(e, "image_path").get<std::string>();
            s.mask_path = need(e, "mask_path").get<std::string>();
            s.class_id = need(e, "class_id").get<int>();
            const std::string split = need(e, "split").get<std::string>();
            if (split == "train")
                s.split = Split::Train;
            else if (split == "test")
                s.split = Split::Test;
            else
                throw FormatError(FormatKind::Schema, "sample '" + s.id + "' has invalid split '" + split + "'");
            if (s.class_id < 0)
                throw FormatError(FormatKind::Schema, "sample '" + s.id + "' has a negative class_id");
            if (!ids.insert(s.id).second)
                throw FormatError(FormatKind::Schema, "duplicate sample id '" + s.id + "'");
            m.samples.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatKind::Schema, std::string("manifest field has the wrong type: ") + e.what());
    }
    return m;
}

struct LoadedSample {
    std::string id;
    Image2D image;
    Mask2D mask;
    int class_id = 1;
    Split split = Split::Train;
};

inline LoadedSample load_sample(const DatasetManifest& m, const ManifestSample& s) {
    LoadedSample out;
    out.id = s.id;
    out.class_id = s.class_id;
    out.split = s.split;
    out.image = read_pgm_image(read_file(m.root / s.image_path), m.spacing_mm);
    out.mask = read_pgm_mask(read_file(m.root / s.mask_path));
    if (!out.mask.same_shape(out.image))
        throw DimensionMismatch("sample '" + s.id + "': mask " + std::to_string(out.mask.width) + "x" +
                                std::to_string(out.mask.height) + " vs image " + std::to_string(out.image.width) +
                                "x" + std::to_string(out.image.height));
    return out;
}

/// Reads and validates a manifest, checking every referenced raster exists
/// and that image and mask dimensions agree.
inline DatasetManifest load_manifest(const fs::path& path) {
    DatasetManifest m = parse_manifest(read_file(path), path.parent_path());
    for (const ManifestSample& s : m.samples) {
        for (const auto& rel : {s.image_path, s.mask_path})
            if (!fs::exists(m.root / rel))
                throw MissingFile((m.root / rel).string());
        (void)load_sample(m, s);
    }
    return m;
}

inline std::vector<LoadedSample> load_split(const DatasetManifest& m, Split split) {
    std::vector<LoadedSample> out;
    for (const ManifestSample& s : m.samples)
        if (s.split == split)
            out.push_back(load_sample(m, s));
    return out;
}

// ---------------------------------------------------------------------------
// Phantoms
// ---------------------------------------------------------------------------

struct PhantomSpec {
    int count = 200;
    int width = 128;
    int height = 128;
    int blobs_min = 1;
    int blobs_max = 3;
    double radius_min = 8.0;
    double radius_max = 62.0;
    double max_aspect = 1.4;   // ratio of the main blob's semi-axes
    double background = 0.2;
    double contrast = 0.3; // added per covering blob
    double noise_sigma = 0.05;
    double spacing_mm = 1.0;
    int class_id = 1;
    std::uint64_t seed = 42;

    void validate() const {
        if (count < 1)
            throw ConfigError("phantom count must be positive");
        if (width < 16 || height < 16)
            throw ConfigError("phantom images must be at least 16x16");
        if (blobs_min < 1 || blobs_max < blobs_min)
            throw ConfigError("phantom blob count range is empty");
        if (!(radius_min > 0.0) || radius_max < radius_min)
            throw ConfigError("phantom radius range is empty");
        if (2.0 * radius_max + 4.0 > std::min(width, height))
            throw ConfigError("phantom radius_max does not fit the image");
        if (max_aspect < 1.0)
            throw ConfigError("phantom max_aspect must be >= 1");
        if (noise_sigma < 0.0 || contrast < 0.0)
            throw ConfigError("phantom contrast and noise must be non-negative");
    }
};

struct Ellipse {
    double cx, cy, rx, ry, angle;

    bool inside(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = (dx * c + dy * s) / rx;
        const double v = (-dx * s + dy * c) / ry;
        return u * u + v * v <= 1.0;
    }
};

struct Phantom {
    Image2D image;
    Mask2D mask;
};

/// One lesion: a main ellipse plus (blobs-1) smaller lobes anchored inside
/// it. The mask is the union of blob interiors; the image is the background
/// plus contrast once per covering blob plus Gaussian noise, clipped to [0,1].
inline Phantom make_phantom(const PhantomSpec& spec, Rng& rng) {
    const int blobs = uniform_int(rng, spec.blobs_min, spec.blobs_max);
    std::vector<Ellipse> parts;
    {
        const double rx = uniform_real(rng, spec.radius_min, spec.radius_max);
        const double lo = std::max(spec.radius_min, rx / spec.max_aspect);
        const double hi = std::min(spec.radius_max, rx * spec.max_aspect);
        const double ry = uniform_real(rng, lo, hi);
        const double margin = std::max(rx, ry) + 2.0;
        const double cx = uniform_real(rng, margin, spec.width - margin);
        const double cy = uniform_real(rng, margin, spec.height - margin);
        parts.push_back({cx, cy, rx, ry, uniform_real(rng, 0.0, std::numbers::pi)});
    }
    for (int b = 1; b < blobs; ++b) {
        const Ellipse& main = parts.front();
        const double r = std::min(main.rx, main.ry);
        const double theta = uniform_real(rng, 0.0, 2.0 * std::numbers::pi);
        const double dist = uniform_real(rng, 0.3, 0.7) * r;
        const double lr = std::max(2.0, uniform_real(rng, 0.35, 0.6) * r);
        parts.push_back({main.cx + dist * std::cos(theta), main.cy + dist * std::sin(theta), lr,
                         lr * uniform_real(rng, 0.8, 1.25), uniform_real(rng, 0.0, std::numbers::pi)});
    }

    Phantom ph{Image2D(spec.width, spec.height, 0.0, spec.spacing_mm), Mask2D(spec.width, spec.height)};
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
            int cover = 0;
            for (const Ellipse& e : parts)
                cover += e.inside(x, y) ? 1 : 0;
            ph.mask.set(x, y, cover > 0);
            const double v = spec.background + spec.contrast * cover + spec.noise_sigma * standard_normal(rng);
            ph.image.at(x, y) = std::clamp(v, 0.0, 1.0);
        }
    return ph;
}

inline std::string phantom_id(int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "phantom_%04d", i);
    return buf;
}

/// Writes images/<id>.pgm, masks/<id>.pgm and manifest.json under out_dir.
/// The first 80% of ids (rounded down) form the train split.
inline DatasetManifest gen_phantoms(const PhantomSpec& spec, const fs::path& out_dir) {
    spec.validate();
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    fs::create_directories(out_dir / "masks", ec);
    if (ec)
        throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    DatasetManifest m;
    m.spacing_mm = spec.spacing_mm;
    m.root = out_dir;
    const int n_train = spec.count * 8 / 10;
    for (int i = 0; i < spec.count; ++i) {
        Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(i)));
        const Phantom ph = make_phantom(spec, rng);
        ManifestSample s;
        s.id = phantom_id(i);
        s.image_path = "images/" + s.id + ".pgm";
        s.mask_path = "masks/" + s.id + ".pgm";
        s.class_id = spec.class_id;
        s.split = i < n_train ? Split::Train : Split::Test;
        write_file(out_dir / s.image_path, write_pgm(ph.image));
        write_file(out_dir / s.mask_path, write_pgm(ph.mask));
        m.samples.push_back(std::move(s));
    }
    save_manifest(m, out_dir / "manifest.json");
    return m;
}

} // namespace pssam
