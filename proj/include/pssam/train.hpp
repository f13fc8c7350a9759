#pragma once

// Training of the box-prompt refiner from box labels derived from masks.
// Each sample contributes a positive bag (seeded at the label box center) and
// a negative bag (seeded at a background point far from the label box).

#include "pssam/refiner.hpp"

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace pssam {

struct TrainSample {
    Image2D image;
    BBox gt_box;
    int class_id = 1;
};

struct TrainHyper {
    RefinerDims dims;
    int num_classes = 2;
    int background_class = 0;
    int seed_w = 21;
    int seed_h = 21;
    std::vector<double> scales = default_scales();
    int batch_size = 8;
    int memory_batches = 8;
    SgdConfig sgd;
    BagAggregation aggregation = BagAggregation::Mean;
    int negative_min_distance = 16; // Chebyshev pixels from the label box
    bool refresh_prototypes = false; // re-embed buffered features after each step
    std::uint64_t seed = 42;
};

/// Everything training mutates. Single writer; copy to publish a snapshot.
struct TrainerState {
    RefinerParams params;
    PrototypeBuffer buffer;
    SgdState sgd;
    std::uint64_t epochs_done = 0;
    std::uint64_t seed = 0; // the run seed; epoch streams derive from it

    static TrainerState fresh(const TrainHyper& h) {
        TrainerState s;
        s.seed = h.seed;
        s.params = RefinerParams::init(h.dims, h.seed);
        s.buffer = PrototypeBuffer(h.num_classes, h.dims.embed, h.memory_batches);
        return s;
    }
};

/// Center pixel of a box, rounding toward the top-left.
inline PointPrompt box_center_point(const BBox& b, int class_id) {
    return {(b.x0 + b.x1 - 1) / 2, (b.y0 + b.y1 - 1) / 2, class_id};
}

inline int chebyshev_to_box(int x, int y, const BBox& b) {
    const int dx = std::max({b.x0 - x, 0, x - (b.x1 - 1)});
    const int dy = std::max({b.y0 - y, 0, y - (b.y1 - 1)});
    return std::max(dx, dy);
}

/// Uniform pixel at Chebyshev distance >= min_distance from the box; falls
/// back to the farthest pixel (first in raster order) when none qualifies.
inline PointPrompt sample_background_point(int width, int height, const BBox& box, int min_distance,
                                           int background_class, Rng& rng) {
    std::uint64_t eligible = 0;
    int best_d = -1, best_x = 0, best_y = 0;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const int d = chebyshev_to_box(x, y, box);
            if (d >= min_distance)
                ++eligible;
            if (d > best_d) {
                best_d = d;
                best_x = x;
                best_y = y;
            }
        }
    if (eligible == 0)
        return {best_x, best_y, background_class};
    std::uint64_t pick = uniform_index(rng, eligible);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            if (chebyshev_to_box(x, y, box) >= min_distance && pick-- == 0)
                return {x, y, background_class};
    return {best_x, best_y, background_class};
}

inline ProposalBag bag_at_point(const PointPrompt& p, const Image2D& img, const TrainHyper& h) {
    return make_proposal_bag(seed_box_from_point(p, h.seed_w, h.seed_h, img), h.scales, img);
}

/// One pass over the data. Returns the mean bag loss of the epoch.
inline double train_epoch(TrainerState& st, std::span<const TrainSample> data, const TrainHyper& h) {
    if (data.empty())
        throw DimensionMismatch("training set is empty");
    if (h.batch_size < 1)
        throw ConfigError("batch size must be positive");
    for (const TrainSample& s : data)
        if (s.class_id < 0 || s.class_id >= h.num_classes || s.class_id == h.background_class)
            throw ConfigError("training sample class must be a foreground class in [0, C)");

    Rng rng(mix_seed(h.seed, 1000 + st.epochs_done));
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    shuffle(order, rng);

    const int grid = st.params.dims.grid;
    double loss_sum = 0.0;
    std::size_t bag_count = 0;

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(h.batch_size)) {
        const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(h.batch_size));

        std::vector<Eigen::MatrixXd> stems;
        std::vector<int> labels;
        for (std::size_t i = start; i < stop; ++i) {
            const TrainSample& s = data[order[i]];
            const ProposalBag pos = bag_at_point(box_center_point(s.gt_box, s.class_id), s.image, h);
            const PointPrompt bg = sample_background_point(s.image.width, s.image.height, s.gt_box,
                                                           h.negative_min_distance, h.background_class, rng);
            const ProposalBag neg = bag_at_point(bg, s.image, h);
            stems.push_back(stem_inputs(s.image, pos.boxes, grid));
            labels.push_back(s.class_id);
            stems.push_back(stem_inputs(s.image, neg.boxes, grid));
            labels.push_back(h.background_class);
        }

        Eigen::Index total = 0;
        std::vector<Eigen::Index> sizes;
        for (const auto& m : stems) {
            sizes.push_back(m.cols());
            total += m.cols();
        }
        Eigen::MatrixXd x(st.params.dims.input(), total);
        {
            Eigen::Index off = 0;
            for (const auto& m : stems) {
                x.middleCols(off, m.cols()) = m;
                off += m.cols();
            }
        }
        const ForwardPass fp = forward(st.params, x);

        PrototypeBuffer::Batch batch(static_cast<std::size_t>(h.num_classes));
        {
            Eigen::Index off = 0;
            for (std::size_t b = 0; b < sizes.size(); ++b) {
                auto& cls = batch[static_cast<std::size_t>(labels[b])];
                for (Eigen::Index k = off; k < off + sizes[b]; ++k)
                    cls.push_back({fp.out.col(k), h.refresh_prototypes ? Eigen::VectorXd(x.col(k)) : Eigen::VectorXd()});
                off += sizes[b];
            }
        }
        st.buffer.push_batch(std::move(batch));

        RefinerParams grad;
        const double batch_loss = batch_loss_gradient_from_forward(st.params, x, fp, sizes, labels,
                                                                   st.buffer.prototypes(), h.aggregation, &grad);
        sgd_step(st.params, grad, h.sgd, st.sgd);
        if (h.refresh_prototypes)
            st.buffer.refresh(st.params);

        loss_sum += batch_loss * static_cast<double>(sizes.size());
        bag_count += sizes.size();
    }
    ++st.epochs_done;
    return loss_sum / static_cast<double>(bag_count);
}

} // namespace pssam
