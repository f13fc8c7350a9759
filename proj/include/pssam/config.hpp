#pragma once

// Run configuration. Every key has a default in config_keys(); a TOML file
// and `key=value` overrides are applied on top, in that order. Unknown keys
// and type mismatches are rejected.

#include "pssam/data.hpp"
#include "pssam/evaluate.hpp"
#include "pssam/segmenter.hpp"
#include "pssam/train.hpp"

#include <toml.hpp>

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace pssam {

inline constexpr std::int64_t kConfigSchemaVersion = 1;

using ConfigValue = std::variant<std::int64_t, double, bool, std::string, std::vector<std::int64_t>, std::vector<double>>;

enum class ValueType { Int, Float, Bool, String, IntList, FloatList };

struct ConfigKey {
    std::string name; // dotted: section.key
    ValueType type;
    ConfigValue def;
    std::string help;
};

inline const std::vector<ConfigKey>& config_keys() {
    using V = ValueType;
    using I = std::int64_t;
    static const std::vector<ConfigKey> keys{
        {"schema_version", V::Int, I{1}, "config schema version (must be 1)"},
        {"rng_seed", V::Int, I{42}, "seed for phantoms, weight init and training order"},
        {"jobs", V::Int, I{1}, "parallel samples during eval"},
        {"paths.data", V::String, std::string("data"), "dataset directory (manifest.json)"},
        {"paths.checkpoint", V::String, std::string("run/refiner.ckpt"), "refiner checkpoint file"},
        {"paths.out", V::String, std::string("run"), "directory for reports, traces and masks"},
        {"phantom.count", V::Int, I{200}, "number of phantoms"},
        {"phantom.width", V::Int, I{128}, "image width"},
        {"phantom.height", V::Int, I{128}, "image height"},
        {"phantom.blobs_min", V::Int, I{1}, "fewest blobs per lesion"},
        {"phantom.blobs_max", V::Int, I{3}, "most blobs per lesion"},
        {"phantom.radius_min", V::Float, 8.0, "smallest main-blob semi-axis (px)"},
        {"phantom.radius_max", V::Float, 62.0, "largest main-blob semi-axis (px)"},
        {"phantom.max_aspect", V::Float, 1.4, "largest semi-axis ratio of the main blob"},
        {"phantom.background", V::Float, 0.2, "background intensity"},
        {"phantom.contrast", V::Float, 0.3, "intensity added per covering blob"},
        {"phantom.noise_sigma", V::Float, 0.05, "Gaussian noise sigma"},
        {"phantom.spacing_mm", V::Float, 1.0, "pixel spacing"},
        {"phantom.class_id", V::Int, I{1}, "foreground class of every lesion"},
        {"refiner.grid", V::Int, I{32}, "stem resample size (grid x grid)"},
        {"refiner.hidden", V::Int, I{1024}, "hidden layer width"},
        {"refiner.embed", V::Int, I{256}, "feature dimension"},
        {"refiner.classes", V::Int, I{2}, "number of classes including background"},
        {"refiner.background_class", V::Int, I{0}, "class assigned to negative bags"},
        {"refiner.aggregation", V::String, std::string("mean"), "bag score: mean, max or noisy_or"},
        {"refiner.refresh_prototypes", V::Bool, false, "re-embed buffered features after each step"},
        {"train.epochs", V::Int, I{50}, "training epochs"},
        {"train.batch_size", V::Int, I{8}, "samples per step"},
        {"train.memory_batches", V::Int, I{8}, "batches kept in the prototype buffer"},
        {"train.lr", V::Float, 0.01, "SGD learning rate"},
        {"train.momentum", V::Float, 0.9, "SGD momentum"},
        {"train.negative_min_distance", V::Int, I{16}, "Chebyshev distance of negative points from the lesion box"},
        {"train.checkpoint_every", V::Int, I{0}, "also save a numbered checkpoint every k epochs (0 = off)"},
        {"prompt.seed_w", V::Int, I{21}, "seed box width around the point"},
        {"prompt.seed_h", V::Int, I{21}, "seed box height around the point"},
        {"prompt.scales", V::FloatList, default_scales(), "proposal scales"},
        {"iterate.rounds", V::Int, I{5}, "rounds for infer"},
        {"iterate.selector", V::String, std::string("learned"), "box selector: learned or ideal"},
        {"eval.t_values", V::IntList, std::vector<I>{1, 2, 3, 5, 10}, "round counts evaluated"},
        {"eval.hausdorff", V::String, std::string("hd"), "hd or hd95"},
        {"oracle.perturb_radius", V::Int, I{1}, "boundary flip neighbourhood radius"},
        {"oracle.perturb_rate", V::Float, 0.0, "boundary flip probability"},
        {"oracle.seed", V::Int, I{7}, "oracle noise seed"},
        {"backend.kind", V::String, std::string("oracle"), "segmenter: oracle or remote"},
        {"backend.endpoint", V::String, std::string("http://127.0.0.1:8080"), "remote service URL"},
        {"backend.retries", V::Int, I{2}, "extra attempts after a failed request"},
        {"backend.backoff_ms", V::Int, I{100}, "first retry delay, doubled per retry"},
        {"backend.connect_timeout_ms", V::Int, I{2000}, "connect timeout"},
        {"backend.read_timeout_ms", V::Int, I{30000}, "read timeout"},
    };
    return keys;
}

inline const ConfigKey* find_config_key(const std::string& name) {
    for (const ConfigKey& k : config_keys())
        if (k.name == name)
            return &k;
    return nullptr;
}

inline std::string format_config_value(const ConfigValue& v) {
    struct {
        std::string operator()(std::int64_t x) const { return std::to_string(x); }
        std::string operator()(double x) const {
            std::string s = format_double(x);
            if (s.find_first_of(".eEn") == std::string::npos)
                s += ".0";
            return s;
        }
        std::string operator()(bool x) const { return x ? "true" : "false"; }
        std::string operator()(const std::string& x) const { return "\"" + x + "\""; }
        std::string operator()(const std::vector<std::int64_t>& xs) const {
            std::string s = "[";
            for (std::size_t i = 0; i < xs.size(); ++i)
                s += (i ? ", " : "") + std::to_string(xs[i]);
            return s + "]";
        }
        std::string operator()(const std::vector<double>& xs) const {
            std::string s = "[";
            for (std::size_t i = 0; i < xs.size(); ++i)
                s += (i ? ", " : "") + (*this)(xs[i]);
            return s + "]";
        }
    } fmt;
    return std::visit(fmt, v);
}

/// One line per key, `name = default  # help`, in TOML syntax.
inline std::string config_reference() {
    std::ostringstream os;
    for (const ConfigKey& k : config_keys())
        os << "  " << k.name << " = " << format_config_value(k.def) << "  # " << k.help << "\n";
    return os.str();
}

namespace detail {

inline ConfigValue convert_toml(const ConfigKey& key, const toml::node& n) {
    auto bad = [&]() -> ConfigError {
        return ConfigError("config key '" + key.name + "' has the wrong type (default is " +
                           format_config_value(key.def) + ")");
    };
    switch (key.type) {
    case ValueType::Int:
        if (auto v = n.as_integer())
            return v->get();
        throw bad();
    case ValueType::Float:
        if (auto v = n.as_floating_point())
            return v->get();
        if (auto v = n.as_integer())
            return static_cast<double>(v->get());
        throw bad();
    case ValueType::Bool:
        if (auto v = n.as_boolean())
            return v->get();
        throw bad();
    case ValueType::String:
        if (auto v = n.as_string())
            return v->get();
        throw bad();
    case ValueType::IntList: {
        const toml::array* a = n.as_array();
        if (!a)
            throw bad();
        std::vector<std::int64_t> out;
        for (const toml::node& e : *a) {
            auto v = e.as_integer();
            if (!v)
                throw bad();
            out.push_back(v->get());
        }
        return out;
    }
    case ValueType::FloatList: {
        const toml::array* a = n.as_array();
        if (!a)
            throw bad();
        std::vector<double> out;
        for (const toml::node& e : *a) {
            if (auto v = e.as_floating_point())
                out.push_back(v->get());
            else if (auto iv = e.as_integer())
                out.push_back(static_cast<double>(iv->get()));
            else
                throw bad();
        }
        return out;
    }
    }
    throw bad();
}

inline void flatten_toml(const toml::table& t, const std::string& prefix, std::map<std::string, ConfigValue>& out) {
    for (auto&& [k, node] : t) {
        const std::string name = prefix.empty() ? std::string(k.str()) : prefix + "." + std::string(k.str());
        if (const toml::table* sub = node.as_table()) {
            flatten_toml(*sub, name, out);
            continue;
        }
        const ConfigKey* key = find_config_key(name);
        if (!key)
            throw ConfigError("unknown config key '" + name + "'");
        out[name] = convert_toml(*key, node);
    }
}

} // namespace detail

/// Raw key/value view; typed accessors below.
class ConfigValues {
public:
    ConfigValues() {
        for (const ConfigKey& k : config_keys())
            values_[k.name] = k.def;
    }

    /// Applies a TOML document.
    void merge_toml(std::string_view text, const std::string& origin = "config") {
        toml::table t;
        try {
            t = toml::parse(text, origin);
        } catch (const toml::parse_error& e) {
            std::ostringstream os;
            os << origin << ": " << e.description() << " (line " << e.source().begin.line << ")";
            throw ConfigError(os.str());
        }
        std::map<std::string, ConfigValue> flat;
        detail::flatten_toml(t, "", flat);
        for (auto& [k, v] : flat)
            values_[k] = std::move(v);
    }

    void merge_file(const fs::path& path) { merge_toml(read_file(path), path.string()); }

    /// `key=value` with a TOML value; bare words are taken as strings for
    /// string keys.
    void set(const std::string& assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("override '" + assignment + "' is not key=value");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string name = trim(assignment.substr(0, eq));
        const std::string raw = trim(assignment.substr(eq + 1));
        const ConfigKey* key = find_config_key(name);
        if (!key)
            throw ConfigError("unknown config key '" + name + "'");
        toml::table t;
        try {
            t = toml::parse("v = " + raw);
        } catch (const toml::parse_error&) {
            if (key->type != ValueType::String)
                throw ConfigError("override for '" + name + "' is not a valid value: " + raw);
            values_[name] = raw;
            return;
        }
        values_[name] = detail::convert_toml(*key, *t.get("v"));
    }

    const ConfigValue& get(const std::string& name) const {
        auto it = values_.find(name);
        if (it == values_.end())
            throw ConfigError("unknown config key '" + name + "'");
        return it->second;
    }
    std::int64_t get_int(const std::string& n) const { return std::get<std::int64_t>(get(n)); }
    double get_float(const std::string& n) const { return std::get<double>(get(n)); }
    bool get_bool(const std::string& n) const { return std::get<bool>(get(n)); }
    const std::string& get_string(const std::string& n) const { return std::get<std::string>(get(n)); }
    const std::vector<std::int64_t>& get_ints(const std::string& n) const {
        return std::get<std::vector<std::int64_t>>(get(n));
    }
    const std::vector<double>& get_floats(const std::string& n) const { return std::get<std::vector<double>>(get(n)); }

    void set_value(const std::string& name, ConfigValue v) {
        const ConfigKey* key = find_config_key(name);
        if (!key)
            throw ConfigError("unknown config key '" + name + "'");
        if (v.index() != key->def.index())
            throw ConfigError("config key '" + name + "' has the wrong type");
        values_[name] = std::move(v);
    }

    /// Effective configuration as TOML (keys in table order).
    std::string dump() const {
        std::string out;
        std::string section;
        for (const ConfigKey& k : config_keys()) {
            const auto dot = k.name.find('.');
            const std::string sec = dot == std::string::npos ? "" : k.name.substr(0, dot);
            const std::string leaf = dot == std::string::npos ? k.name : k.name.substr(dot + 1);
            if (sec != section) {
                out += "\n[" + sec + "]\n";
                section = sec;
            }
            out += leaf + " = " + format_config_value(values_.at(k.name)) + "\n";
        }
        return out;
    }

private:
    std::map<std::string, ConfigValue> values_;
};

/// Typed, validated configuration.
struct RunConfig {
    std::uint64_t rng_seed = 42;
    int jobs = 1;
    fs::path data_dir;
    fs::path checkpoint;
    fs::path out_dir;
    PhantomSpec phantom;
    TrainHyper hyper;
    int epochs = 50;
    int checkpoint_every = 0;
    IterationConfig iteration;
    std::vector<int> t_values;
    HausdorffVariant hausdorff = HausdorffVariant::Max;
    OracleConfig oracle;
    std::string backend_kind = "oracle";
    RemoteConfig remote;
};

inline HausdorffVariant parse_hausdorff(const std::string& s) {
    if (s == "hd")
        return HausdorffVariant::Max;
    if (s == "hd95")
        return HausdorffVariant::Percentile95;
    throw ConfigError("unknown hausdorff variant '" + s + "' (expected hd or hd95)");
}

inline RunConfig resolve_config(const ConfigValues& v) {
    if (v.get_int("schema_version") != kConfigSchemaVersion)
        throw ConfigError("unsupported config schema_version " + std::to_string(v.get_int("schema_version")));
    auto as_int = [&](const std::string& n, std::int64_t lo, std::int64_t hi = 1LL << 30) {
        const std::int64_t x = v.get_int(n);
        if (x < lo || x > hi)
            throw ConfigError("config key '" + n + "' = " + std::to_string(x) + " is out of range");
        return static_cast<int>(x);
    };
    RunConfig c;
    c.rng_seed = static_cast<std::uint64_t>(v.get_int("rng_seed"));
    c.jobs = as_int("jobs", 1, 1024);
    c.data_dir = v.get_string("paths.data");
    c.checkpoint = v.get_string("paths.checkpoint");
    c.out_dir = v.get_string("paths.out");

    PhantomSpec& p = c.phantom;
    p.count = as_int("phantom.count", 1);
    p.width = as_int("phantom.width", 1, 1 << 14);
    p.height = as_int("phantom.height", 1, 1 << 14);
    p.blobs_min = as_int("phantom.blobs_min", 0);
    p.blobs_max = as_int("phantom.blobs_max", 0);
    p.radius_min = v.get_float("phantom.radius_min");
    p.radius_max = v.get_float("phantom.radius_max");
    p.max_aspect = v.get_float("phantom.max_aspect");
    p.background = v.get_float("phantom.background");
    p.contrast = v.get_float("phantom.contrast");
    p.noise_sigma = v.get_float("phantom.noise_sigma");
    p.spacing_mm = v.get_float("phantom.spacing_mm");
    p.class_id = as_int("phantom.class_id", 0);
    p.seed = c.rng_seed;
    p.validate();

    TrainHyper& h = c.hyper;
    h.dims.grid = as_int("refiner.grid", 1, 4096);
    h.dims.hidden = as_int("refiner.hidden", 1);
    h.dims.embed = as_int("refiner.embed", 1);
    h.num_classes = as_int("refiner.classes", 2, 1 << 16);
    h.background_class = as_int("refiner.background_class", 0, h.num_classes - 1);
    h.aggregation = parse_aggregation(v.get_string("refiner.aggregation"));
    h.refresh_prototypes = v.get_bool("refiner.refresh_prototypes");
    h.batch_size = as_int("train.batch_size", 1);
    h.memory_batches = as_int("train.memory_batches", 1);
    h.sgd.lr = v.get_float("train.lr");
    h.sgd.momentum = v.get_float("train.momentum");
    if (!(h.sgd.lr > 0.0) || h.sgd.momentum < 0.0 || h.sgd.momentum >= 1.0)
        throw ConfigError("train.lr must be positive and train.momentum in [0, 1)");
    h.negative_min_distance = as_int("train.negative_min_distance", 0);
    h.seed_w = as_int("prompt.seed_w", 1);
    h.seed_h = as_int("prompt.seed_h", 1);
    h.scales = v.get_floats("prompt.scales");
    for (double s : h.scales)
        if (!(s > 0.0))
            throw ConfigError("prompt.scales must be positive");
    h.seed = c.rng_seed;
    if (p.class_id >= h.num_classes || p.class_id == h.background_class)
        throw ConfigError("phantom.class_id must be a foreground class of the refiner");
    c.epochs = as_int("train.epochs", 0);
    c.checkpoint_every = as_int("train.checkpoint_every", 0);

    c.iteration.rounds = as_int("iterate.rounds", 1);
    c.iteration.seed_w = h.seed_w;
    c.iteration.seed_h = h.seed_h;
    c.iteration.scales = h.scales;
    c.iteration.selector = parse_selector(v.get_string("iterate.selector"));
    c.iteration.validate();
    for (std::int64_t t : v.get_ints("eval.t_values")) {
        if (t < 1 || t > 1000)
            throw ConfigError("eval.t_values entries must lie in [1, 1000]");
        c.t_values.push_back(static_cast<int>(t));
    }
    if (c.t_values.empty())
        throw ConfigError("eval.t_values is empty");
    c.hausdorff = parse_hausdorff(v.get_string("eval.hausdorff"));

    c.oracle.perturb_radius = as_int("oracle.perturb_radius", 0);
    c.oracle.perturb_rate = v.get_float("oracle.perturb_rate");
    if (c.oracle.perturb_rate < 0.0 || c.oracle.perturb_rate > 1.0)
        throw ConfigError("oracle.perturb_rate must lie in [0, 1]");
    c.oracle.rng_seed = static_cast<std::uint64_t>(v.get_int("oracle.seed"));

    c.backend_kind = v.get_string("backend.kind");
    if (c.backend_kind != "oracle" && c.backend_kind != "remote")
        throw ConfigError("backend.kind must be oracle or remote");
    c.remote.endpoint = v.get_string("backend.endpoint");
    c.remote.retries = as_int("backend.retries", 0, 100);
    c.remote.backoff_ms = as_int("backend.backoff_ms", 0);
    c.remote.connect_timeout_ms = as_int("backend.connect_timeout_ms", 1);
    c.remote.read_timeout_ms = as_int("backend.read_timeout_ms", 1);
    return c;
}

} // namespace pssam
