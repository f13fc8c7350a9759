#pragma once

// Test-split evaluation over a list of round counts, and report emission
// (nested JSON + flat CSV).

#include "pssam/pipeline.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

namespace pssam {

struct EvalRow {
    std::string id;
    int T = 1;
    double dice = 0.0;
    double hausdorff_mm = 0.0;
    double box_iou_final = 0.0;
    int rounds = 0;

    friend bool operator==(const EvalRow&, const EvalRow&) = default;
};

struct MetricSummary {
    double mean = 0.0;
    double std = 0.0; // population

    friend bool operator==(const MetricSummary&, const MetricSummary&) = default;
};

struct EvalAggregate {
    int T = 1;
    std::size_t n = 0;
    MetricSummary dice;
    MetricSummary hausdorff_mm;
    MetricSummary box_iou_final;

    friend bool operator==(const EvalAggregate&, const EvalAggregate&) = default;
};

struct EvalReport {
    Selector selector = Selector::Learned;
    std::vector<EvalRow> rows; // ordered by T (input order), then sample order
    std::vector<EvalAggregate> aggregates;

    const EvalAggregate& at_T(int T) const {
        for (const auto& a : aggregates)
            if (a.T == T)
                return a;
        throw ConfigError("report has no aggregate for T=" + std::to_string(T));
    }
};

inline MetricSummary summarize(const std::vector<double>& v) {
    MetricSummary s;
    if (v.empty())
        return s;
    double sum = 0.0;
    for (double x : v)
        sum += x;
    s.mean = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v)
        ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size()));
    return s;
}

inline std::vector<EvalAggregate> aggregate_rows(const std::vector<EvalRow>& rows, std::span<const int> t_values) {
    std::vector<EvalAggregate> out;
    for (int T : t_values) {
        std::vector<double> d, h, b;
        for (const EvalRow& r : rows)
            if (r.T == T) {
                d.push_back(r.dice);
                h.push_back(r.hausdorff_mm);
                b.push_back(r.box_iou_final);
            }
        out.push_back({T, d.size(), summarize(d), summarize(h), summarize(b)});
    }
    return out;
}

using BackendFactory = std::function<std::unique_ptr<SegmenterBackend>(const LoadedSample&)>;

inline BackendFactory oracle_factory(const OracleConfig& cfg) {
    return [cfg](const LoadedSample& s) { return std::make_unique<OracleBackend>(cfg, s.mask); };
}

struct EvalOptions {
    IterationConfig iteration; // rounds overridden per T
    std::vector<int> t_values{1, 2, 3, 5, 10};
    HausdorffVariant hausdorff = HausdorffVariant::Max;
    int jobs = 1;
};

/// Runs the loop for every test sample and every T. The point prompt is the
/// center of each mask's tight box; the GT is used for metrics (and by the
/// ideal selector). Rows are merged in sample order regardless of `jobs`.
inline EvalReport evaluate(std::span<const LoadedSample> test, const RefinerModel& model,
                           const BackendFactory& make_backend, const EvalOptions& opt) {
    if (test.empty())
        throw FormatError(FormatKind::Schema, "evaluation split is empty");
    if (opt.t_values.empty())
        throw ConfigError("evaluation needs at least one T value");
    EvalReport rep;
    rep.selector = opt.iteration.selector;

    const std::size_t per_t = test.size();
    std::vector<EvalRow> rows(per_t * opt.t_values.size());
    auto run_sample = [&](std::size_t i) {
        const LoadedSample& s = test[i];
        const PointPrompt pt = point_from_mask(s.mask, s.class_id);
        const BBox gt_box = *tight_box(s.mask);
        auto backend = make_backend(s);
        for (std::size_t t = 0; t < opt.t_values.size(); ++t) {
            IterationConfig cfg = opt.iteration;
            cfg.rounds = opt.t_values[t];
            const Mask2D* gt_for_selection = cfg.selector == Selector::Ideal ? &s.mask : nullptr;
            InferenceResult r = infer_iterative(model, *backend, s.image, pt, cfg, gt_for_selection);
            EvalRow row;
            row.id = s.id;
            row.T = cfg.rounds;
            row.dice = dice(r.mask, s.mask);
            row.hausdorff_mm = hausdorff_mm(r.mask, s.mask, s.image.spacing, opt.hausdorff);
            row.box_iou_final = box_iou(r.trace.rounds.back().chosen, gt_box);
            row.rounds = static_cast<int>(r.trace.rounds.size());
            rows[t * per_t + i] = std::move(row);
        }
    };

    const int jobs = std::max(1, opt.jobs);
    if (jobs == 1) {
        for (std::size_t i = 0; i < per_t; ++i)
            run_sample(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mu;
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < per_t; i = next++) {
                    try {
                        run_sample(i);
                    } catch (...) {
                        std::lock_guard lock(failure_mu);
                        if (!failure)
                            failure = std::current_exception();
                    }
                }
            });
        for (auto& th : pool)
            th.join();
        if (failure)
            std::rethrow_exception(failure);
    }
    rep.rows = std::move(rows);
    rep.aggregates = aggregate_rows(rep.rows, opt.t_values);
    return rep;
}

/// Shortest representation that reads back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

inline std::string report_csv(const EvalReport& rep) {
    std::string out = "id,T,dice,hausdorff_mm,box_iou_final,rounds\n";
    for (const EvalRow& r : rep.rows)
        out += r.id + "," + std::to_string(r.T) + "," + format_double(r.dice) + "," + format_double(r.hausdorff_mm) +
               "," + format_double(r.box_iou_final) + "," + std::to_string(r.rounds) + "\n";
    return out;
}

inline nlohmann::ordered_json report_json(const EvalReport& rep) {
    nlohmann::ordered_json j;
    j["selector"] = to_string(rep.selector);
    auto summary = [](const MetricSummary& m) { return nlohmann::ordered_json{{"mean", m.mean}, {"std", m.std}}; };
    j["aggregate"] = nlohmann::ordered_json::array();
    for (const EvalAggregate& a : rep.aggregates)
        j["aggregate"].push_back({{"T", a.T},
                                  {"n", a.n},
                                  {"dice", summary(a.dice)},
                                  {"hausdorff_mm", summary(a.hausdorff_mm)},
                                  {"box_iou_final", summary(a.box_iou_final)}});
    j["rows"] = nlohmann::ordered_json::array();
    for (const EvalRow& r : rep.rows)
        j["rows"].push_back({{"id", r.id},
                             {"T", r.T},
                             {"dice", r.dice},
                             {"hausdorff_mm", r.hausdorff_mm},
                             {"box_iou_final", r.box_iou_final},
                             {"rounds", r.rounds}});
    return j;
}

} // namespace pssam
