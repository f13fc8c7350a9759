#pragma once

// The iterative loop: seed box at the point prompt -> proposal bag -> box
// selection -> box-prompted segmentation -> tight box of the mask becomes the
// next seed. The last round's mask is the prediction.

#include "pssam/data.hpp"
#include "pssam/metrics.hpp"
#include "pssam/refiner.hpp"
#include "pssam/segmenter.hpp"
#include "pssam/train.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace pssam {

enum class Selector { Learned, Ideal };

inline const char* to_string(Selector s) { return s == Selector::Learned ? "learned" : "ideal"; }

inline Selector parse_selector(const std::string& s) {
    if (s == "learned")
        return Selector::Learned;
    if (s == "ideal")
        return Selector::Ideal;
    throw ConfigError("unknown selector '" + s + "' (expected learned or ideal)");
}

struct IterationConfig {
    int rounds = 5;
    int seed_w = 21;
    int seed_h = 21;
    std::vector<double> scales = default_scales();
    Selector selector = Selector::Learned;

    void validate() const {
        if (rounds < 1)
            throw ConfigError("iteration needs at least one round");
        if (scales.empty())
            throw ConfigError("iteration needs at least one proposal scale");
        if (seed_w < 1 || seed_h < 1)
            throw ConfigError("seed box must be at least 1x1");
    }
};

struct RoundRecord {
    int round = 0; // 1-based
    BBox seed;
    BBox chosen;
    std::size_t chosen_index = 0;
    std::vector<double> scores; // per proposal: class probability (learned) or IoU with the label box (ideal)
    std::size_t mask_area = 0;
    std::optional<BBox> mask_box;
    double confidence = 1.0;
    std::optional<double> dice;
    std::optional<double> box_iou;
};

struct IterationTrace {
    std::vector<RoundRecord> rounds;
};

struct InferenceResult {
    Mask2D mask;
    IterationTrace trace;
};

/// Largest IoU with the label box; ties go to the lowest index.
inline Selection ideal_select(const ProposalBag& bag, const BBox& gt_box) {
    if (bag.boxes.empty())
        throw DimensionMismatch("ideal selection needs a non-empty bag");
    std::size_t best = 0;
    double best_iou = box_iou(bag.boxes[0], gt_box);
    for (std::size_t n = 1; n < bag.boxes.size(); ++n) {
        const double v = box_iou(bag.boxes[n], gt_box);
        if (v > best_iou) {
            best_iou = v;
            best = n;
        }
    }
    return {bag.boxes[best], best};
}

inline PointPrompt point_from_mask(const Mask2D& gt, int class_id = 1) {
    const auto tb = tight_box(gt);
    if (!tb)
        throw EmptyMask("cannot place a point prompt on an empty mask");
    return box_center_point(*tb, class_id);
}

/// The trained refiner state used by the learned selector.
struct RefinerModel {
    const RefinerParams* params = nullptr;
    const PrototypeBuffer* buffer = nullptr;
};

/// Runs cfg.rounds rounds from the point prompt. `gt` is read only for the
/// ideal selector and for per-round metrics in the trace; pass nullptr to
/// run without it.
inline InferenceResult infer_iterative(const RefinerModel& model, SegmenterBackend& backend, const Image2D& img,
                                       const PointPrompt& point, const IterationConfig& cfg,
                                       const Mask2D* gt = nullptr) {
    cfg.validate();
    std::optional<BBox> gt_box;
    if (gt) {
        if (!gt->same_shape(img))
            throw DimensionMismatch("ground truth does not match the image");
        gt_box = tight_box(*gt);
    }
    if (cfg.selector == Selector::Learned) {
        if (!model.params || !model.buffer || !model.buffer->populated())
            throw EmptyPrototype("learned selector requires a trained refiner with populated prototypes");
        if (point.class_id < 0 || point.class_id >= model.buffer->num_classes())
            throw ConfigError("point class is outside the refiner's classes");
    } else if (!gt_box) {
        throw ConfigError("ideal selector requires a non-empty ground-truth mask");
    }

    InferenceResult result;
    BBox seed = seed_box_from_point(point, cfg.seed_w, cfg.seed_h, img);
    for (int t = 1; t <= cfg.rounds; ++t) {
        const ProposalBag bag = make_proposal_bag(seed, cfg.scales, img);
        RoundRecord rec;
        rec.round = t;
        rec.seed = seed;
        Selection sel;
        if (cfg.selector == Selector::Learned) {
            const Eigen::MatrixXd feats = extract_features(*model.params, img, bag.boxes);
            const auto probs = instance_probabilities(feats, model.buffer->prototypes());
            sel = select_best_box(bag, probs, static_cast<std::size_t>(point.class_id));
            for (const auto& p : probs)
                rec.scores.push_back(p[static_cast<std::size_t>(point.class_id)]);
        } else {
            sel = ideal_select(bag, *gt_box);
            for (const BBox& b : bag.boxes)
                rec.scores.push_back(box_iou(b, *gt_box));
        }
        rec.chosen = sel.box;
        rec.chosen_index = sel.index;

        SegmentResponse resp = segment(backend, {img, sel.box});
        rec.mask_area = resp.mask.count();
        rec.mask_box = tight_box(resp.mask);
        rec.confidence = resp.confidence;
        if (gt) {
            rec.dice = dice(resp.mask, *gt);
            rec.box_iou = gt_box ? box_iou(sel.box, *gt_box) : 0.0;
        }
        result.trace.rounds.push_back(rec);
        result.mask = std::move(resp.mask);
        // the final round's mask is the prediction; no feedback box needed
        if (t < cfg.rounds)
            seed = rec.mask_box ? *rec.mask_box : sel.box;
    }
    return result;
}

inline nlohmann::ordered_json trace_to_json(const IterationTrace& tr) {
    auto box = [](const BBox& b) { return nlohmann::ordered_json::array({b.x0, b.y0, b.x1, b.y1}); };
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const RoundRecord& r : tr.rounds) {
        nlohmann::ordered_json j;
        j["round"] = r.round;
        j["seed"] = box(r.seed);
        j["chosen"] = box(r.chosen);
        j["chosen_index"] = r.chosen_index;
        j["scores"] = r.scores;
        j["mask_area"] = r.mask_area;
        j["mask_box"] = r.mask_box ? box(*r.mask_box) : nlohmann::ordered_json(nullptr);
        j["confidence"] = r.confidence;
        if (r.dice)
            j["dice"] = *r.dice;
        if (r.box_iou)
            j["box_iou"] = *r.box_iou;
        arr.push_back(std::move(j));
    }
    return {{"rounds", std::move(arr)}};
}

// ---------------------------------------------------------------------------
// Training orchestration
// ---------------------------------------------------------------------------

inline std::vector<TrainSample> training_samples(std::span<const LoadedSample> samples) {
    std::vector<TrainSample> out;
    out.reserve(samples.size());
    for (const LoadedSample& s : samples) {
        const auto tb = tight_box(s.mask);
        if (!tb)
            throw EmptyMask("training sample '" + s.id + "' has an empty mask");
        out.push_back({s.image, *tb, s.class_id});
    }
    return out;
}

struct TrainingResult {
    TrainerState state;
    std::vector<double> loss_curve;
};

/// Runs `epochs` epochs from a fresh state. `on_epoch` (optional) sees the
/// state after each epoch, e.g. for checkpointing.
inline TrainingResult run_training(std::span<const LoadedSample> samples, const TrainHyper& hyper, int epochs,
                                   const std::function<void(const TrainerState&, int)>& on_epoch = {}) {
    if (epochs < 0)
        throw ConfigError("epochs must be non-negative");
    TrainingResult r{TrainerState::fresh(hyper), {}};
    if (epochs == 0)
        return r;
    const std::vector<TrainSample> data = training_samples(samples);
    for (int e = 0; e < epochs; ++e) {
        r.loss_curve.push_back(train_epoch(r.state, data, hyper));
        if (on_epoch)
            on_epoch(r.state, e + 1);
    }
    return r;
}

} // namespace pssam
