#pragma once

// The `pssam` command line: synth, train, infer, eval.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 segmentation backend error.

#include "pssam/checkpoint.hpp"
#include "pssam/config.hpp"
#include "pssam/evaluate.hpp"
#include "pssam/pipeline.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace pssam::cli {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kBackend = 3 };

inline int exit_code_for(const Error& e) {
    switch (e.kind()) {
    case ErrorKind::Config:
    case ErrorKind::PointOutOfBounds:
        return kUsage;
    case ErrorKind::Backend:
        return kBackend;
    default:
        return kData;
    }
}

struct Streams {
    std::ostream& out;
    std::ostream& err;
};

namespace detail {

struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::int64_t> seed;
    bool json_errors = false;
};

inline void add_common(CLI::App& sub, Common& c) {
    sub.add_option("--config", c.config_path, "TOML config file")->check(CLI::ExistingFile);
    sub.add_option("--set", c.sets, "override one config key, key=value (repeatable)")->take_all();
    sub.add_option("--seed", c.seed, "override rng_seed");
    sub.add_flag("--json-errors", c.json_errors, "report failures as JSON on stderr");
    sub.footer("Config keys (defaults):\n" + config_reference());
}

inline ConfigValues collect(const Common& c) {
    ConfigValues v;
    if (!c.config_path.empty())
        v.merge_file(c.config_path);
    for (const std::string& s : c.sets)
        v.set(s);
    if (c.seed)
        v.set_value("rng_seed", *c.seed);
    return v;
}

inline std::vector<int> parse_int_list(const std::string& s, const char* what) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(item, &used);
            if (used != item.size())
                throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError(std::string(what) + " expects comma-separated integers, got '" + s + "'");
        }
    }
    if (out.empty())
        throw ConfigError(std::string(what) + " is empty");
    return out;
}

inline fs::path manifest_path(const RunConfig& c) { return c.data_dir / "manifest.json"; }

inline std::unique_ptr<SegmenterBackend> make_backend(const RunConfig& c, const Mask2D* gt) {
    if (c.backend_kind == "remote")
        return std::make_unique<RemoteBackend>(c.remote);
    if (!gt)
        throw ConfigError("the oracle backend needs a ground-truth mask (--sample or --gt)");
    return std::make_unique<OracleBackend>(c.oracle, *gt);
}

inline BackendFactory backend_factory(const RunConfig& c) {
    if (c.backend_kind == "remote") {
        const RemoteConfig rc = c.remote;
        return [rc](const LoadedSample&) { return std::make_unique<RemoteBackend>(rc); };
    }
    return oracle_factory(c.oracle);
}

inline int cmd_synth(const RunConfig& c, Streams io) {
    const DatasetManifest m = gen_phantoms(c.phantom, c.data_dir);
    std::size_t train = 0;
    for (const auto& s : m.samples)
        train += s.split == Split::Train;
    io.out << "wrote " << m.samples.size() << " phantoms (" << train << " train, " << m.samples.size() - train
           << " test) to " << c.data_dir.string() << "\n";
    return kOk;
}

inline fs::path numbered_checkpoint(const fs::path& base, int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, ".e%04d", epoch);
    fs::path p = base;
    p.replace_extension();
    return p.string() + buf + base.extension().string();
}

inline int cmd_train(const RunConfig& c, Streams io) {
    const DatasetManifest m = load_manifest(manifest_path(c));
    const std::vector<LoadedSample> train = load_split(m, Split::Train);
    if (train.empty())
        throw FormatError(FormatKind::Schema, "manifest has no train samples");
    for (const LoadedSample& s : train)
        if (s.class_id >= c.hyper.num_classes || s.class_id == c.hyper.background_class)
            throw ConfigError("sample '" + s.id + "' has class " + std::to_string(s.class_id) +
                              ", which is not a foreground class of the refiner");
    auto on_epoch = [&](const TrainerState& st, int epoch) {
        if (c.checkpoint_every > 0 && epoch % c.checkpoint_every == 0)
            save_checkpoint(st, numbered_checkpoint(c.checkpoint, epoch));
    };
    const TrainingResult r = run_training(train, c.hyper, c.epochs, on_epoch);
    save_checkpoint(r.state, c.checkpoint);

    std::string csv = "epoch,loss\n";
    for (std::size_t e = 0; e < r.loss_curve.size(); ++e)
        csv += std::to_string(e + 1) + "," + format_double(r.loss_curve[e]) + "\n";
    write_file(c.out_dir / "loss.csv", csv);
    io.out << "trained " << c.epochs << " epochs on " << train.size() << " samples";
    if (!r.loss_curve.empty())
        io.out << ", loss " << r.loss_curve.front() << " -> " << r.loss_curve.back();
    io.out << "; checkpoint " << c.checkpoint.string() << "\n";
    return kOk;
}

struct EvalArgs {
    std::string t_list;
};

inline int cmd_eval(RunConfig c, const EvalArgs& a, Streams io) {
    if (!a.t_list.empty())
        c.t_values = parse_int_list(a.t_list, "--T");
    for (int t : c.t_values)
        if (t < 1)
            throw ConfigError("--T values must be at least 1");
    const DatasetManifest m = load_manifest(manifest_path(c));
    const std::vector<LoadedSample> test = load_split(m, Split::Test);

    TrainerState st;
    RefinerModel model;
    if (c.iteration.selector == Selector::Learned) {
        st = load_checkpoint(c.checkpoint);
        model = {&st.params, &st.buffer};
    }
    EvalOptions opt;
    opt.iteration = c.iteration;
    opt.t_values = c.t_values;
    opt.hausdorff = c.hausdorff;
    opt.jobs = c.jobs;
    const EvalReport rep = evaluate(test, model, backend_factory(c), opt);
    write_file(c.out_dir / "report.json", report_json(rep).dump(2) + "\n");
    write_file(c.out_dir / "report.csv", report_csv(rep));
    for (const EvalAggregate& g : rep.aggregates)
        io.out << "T=" << g.T << " dice " << g.dice.mean << " +- " << g.dice.std << "  hausdorff_mm "
               << g.hausdorff_mm.mean << "  box_iou " << g.box_iou_final.mean << "\n";
    io.out << "reports in " << c.out_dir.string() << "\n";
    return kOk;
}

struct InferArgs {
    std::string sample;
    std::string image;
    std::string gt;
    std::string point;
    int class_id = -1;
    std::optional<int> rounds;
    std::string mask_out;
    std::string trace_out;
    std::string overlay_out;
};

inline int cmd_infer(RunConfig c, const InferArgs& a, Streams io) {
    if (a.rounds)
        c.iteration.rounds = *a.rounds;
    c.iteration.validate();
    if (a.sample.empty() == a.image.empty())
        throw ConfigError("infer needs exactly one of --sample or --image");

    std::string name;
    Image2D image;
    std::optional<Mask2D> gt;
    int class_id = c.phantom.class_id;
    if (!a.sample.empty()) {
        const DatasetManifest m = parse_manifest(read_file(manifest_path(c)), c.data_dir);
        const ManifestSample* found = nullptr;
        for (const ManifestSample& s : m.samples)
            if (s.id == a.sample)
                found = &s;
        if (!found)
            throw ConfigError("no sample '" + a.sample + "' in " + manifest_path(c).string());
        LoadedSample s = load_sample(m, *found);
        name = s.id;
        image = std::move(s.image);
        gt = std::move(s.mask);
        class_id = s.class_id;
    } else {
        image = read_pgm_image(read_file(a.image), c.phantom.spacing_mm);
        name = fs::path(a.image).stem().string();
        if (!a.gt.empty()) {
            gt = read_pgm_mask(read_file(a.gt));
            if (!gt->same_shape(image))
                throw DimensionMismatch("--gt does not match the image dimensions");
        }
    }
    if (a.class_id >= 0)
        class_id = a.class_id;

    PointPrompt pt;
    if (!a.point.empty()) {
        const std::vector<int> xy = parse_int_list(a.point, "--point");
        if (xy.size() != 2)
            throw ConfigError("--point expects x,y");
        pt = {xy[0], xy[1], class_id};
        if (!image.contains(pt.x, pt.y))
            throw PointOutOfBounds("point (" + std::to_string(pt.x) + ", " + std::to_string(pt.y) +
                                   ") lies outside the image");
    } else if (gt) {
        pt = point_from_mask(*gt, class_id);
    } else {
        throw ConfigError("infer needs --point unless a ground-truth mask is given");
    }

    TrainerState st;
    RefinerModel model;
    if (c.iteration.selector == Selector::Learned) {
        st = load_checkpoint(c.checkpoint);
        model = {&st.params, &st.buffer};
    }
    auto backend = make_backend(c, gt ? &*gt : nullptr);
    const InferenceResult r = infer_iterative(model, *backend, image, pt, c.iteration, gt ? &*gt : nullptr);

    const fs::path mask_out = a.mask_out.empty() ? c.out_dir / (name + "_mask.pgm") : fs::path(a.mask_out);
    const fs::path trace_out = a.trace_out.empty() ? c.out_dir / (name + "_trace.json") : fs::path(a.trace_out);
    write_file(mask_out, write_pgm(r.mask));
    nlohmann::ordered_json trace = trace_to_json(r.trace);
    trace["point"] = {pt.x, pt.y};
    trace["class_id"] = pt.class_id;
    trace["selector"] = to_string(c.iteration.selector);
    trace["backend"] = backend->name();
    write_file(trace_out, trace.dump(2) + "\n");
    if (!a.overlay_out.empty()) {
        const Mask2D empty(image.width, image.height);
        write_file(a.overlay_out, emit_overlay(image, gt ? *gt : empty, r.mask));
    }
    io.out << name << ": " << r.trace.rounds.size() << " rounds, mask area " << r.mask.count();
    if (gt)
        io.out << ", dice " << dice(r.mask, *gt);
    io.out << "\n";
    return kOk;
}

inline void report_error(Streams io, bool json, int code, const std::string& kind, const std::string& message,
                         const std::string& category = {}) {
    if (json) {
        nlohmann::ordered_json j;
        j["error"]["kind"] = kind;
        if (!category.empty())
            j["error"]["category"] = category;
        j["error"]["message"] = message;
        j["error"]["exit_code"] = code;
        io.err << j.dump() << "\n";
    } else {
        io.err << "error: " << message << "\n";
    }
}

} // namespace detail

inline int run(int argc, const char* const* argv, Streams io) {
    bool json_errors = false;
    for (int i = 1; i < argc; ++i)
        if (std::string_view(argv[i]) == "--json-errors")
            json_errors = true;

    CLI::App app("Point-prompted box refinement for box-prompt segmenters", "pssam");
    app.require_subcommand(1);
    detail::Common common;

    CLI::App* synth = app.add_subcommand("synth", "generate a phantom dataset under paths.data");
    detail::add_common(*synth, common);

    CLI::App* train = app.add_subcommand("train", "train the refiner on the train split, save paths.checkpoint");
    detail::add_common(*train, common);

    detail::InferArgs ia;
    CLI::App* infer = app.add_subcommand("infer", "run the iterative loop on one image; write mask PGM and trace JSON");
    detail::add_common(*infer, common);
    infer->add_option("--sample", ia.sample, "sample id from the dataset manifest");
    infer->add_option("--image", ia.image, "image PGM (instead of --sample)");
    infer->add_option("--gt", ia.gt, "ground-truth mask PGM for --image");
    infer->add_option("--point", ia.point, "point prompt x,y (default: center of the GT tight box)");
    infer->add_option("--class", ia.class_id, "class of the point prompt");
    infer->add_option("--rounds", ia.rounds, "override iterate.rounds");
    infer->add_option("--mask", ia.mask_out, "mask output (default paths.out/<name>_mask.pgm)");
    infer->add_option("--trace", ia.trace_out, "trace output (default paths.out/<name>_trace.json)");
    infer->add_option("--overlay", ia.overlay_out, "also write a PPM overlay here");

    detail::EvalArgs ea;
    std::optional<int> jobs;
    CLI::App* eval = app.add_subcommand("eval", "evaluate the test split; write report.json and report.csv");
    detail::add_common(*eval, common);
    eval->add_option("--T", ea.t_list, "comma-separated round counts (overrides eval.t_values)");
    eval->add_option("--jobs", jobs, "parallel samples (overrides jobs)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        io.out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        detail::report_error(io, json_errors, kUsage, "usage", e.what());
        if (!json_errors)
            io.err << app.help();
        return kUsage;
    }

    try {
        ConfigValues values = detail::collect(common);
        if (jobs)
            values.set_value("jobs", static_cast<std::int64_t>(*jobs));
        const RunConfig cfg = resolve_config(values);
        if (synth->parsed())
            return detail::cmd_synth(cfg, io);
        if (train->parsed())
            return detail::cmd_train(cfg, io);
        if (infer->parsed())
            return detail::cmd_infer(cfg, ia, io);
        return detail::cmd_eval(cfg, ea, io);
    } catch (const BackendError& e) {
        detail::report_error(io, json_errors, kBackend, to_string(e.kind()), e.what(), to_string(e.category()));
        return kBackend;
    } catch (const Error& e) {
        const int code = exit_code_for(e);
        detail::report_error(io, json_errors, code, to_string(e.kind()), e.what());
        return code;
    } catch (const std::exception& e) {
        detail::report_error(io, json_errors, kData, "io", e.what());
        return kData;
    }
}

} // namespace pssam::cli
