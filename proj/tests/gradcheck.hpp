#pragma once

// Central finite differences against the analytic MIL-loss gradient on small
// random refiners.

#include "pssam/refiner.hpp"
#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace pssam::test {

struct GradCase {
    RefinerParams params;
    Image2D image;
    ProposalBag bag;
    std::vector<FeatureVector> prototypes;
    int label = 0;
};

/// P=4 (grid), H1=16, D=8, N=3 proposals, C=2 classes by default. Cases with a
/// hidden pre-activation within `kink` of zero are redrawn, since the central
/// difference straddles the ReLU kink there.
inline GradCase make_grad_case(std::uint64_t seed, int grid = 4, int hidden = 16, int embed = 8, int n = 3,
                               int classes = 2, double kink = 1e-3) {
    Rng rng(mix_seed(seed, 77));
    for (;;) {
        GradCase gc;
        gc.params = RefinerParams::init({grid, hidden, embed}, rng());
        gc.image = random_image(rng, 24, 24);
        const BBox seed_box = random_box(rng, 24, 24);
        std::vector<double> scales;
        for (int i = 0; i < n; ++i)
            scales.push_back(uniform_real(rng, 0.5, 2.5));
        gc.bag = make_proposal_bag(seed_box, scales, gc.image);
        for (int c = 0; c < classes; ++c) {
            FeatureVector v(embed);
            for (auto& x : v)
                x = standard_normal(rng);
            gc.prototypes.push_back(v);
        }
        gc.label = uniform_int(rng, 0, classes - 1);
        const Eigen::MatrixXd x = stem_inputs(gc.image, gc.bag.boxes, grid);
        const ForwardPass fp = forward(gc.params, x);
        if (fp.pre.cwiseAbs().minCoeff() > kink)
            return gc;
    }
}

inline double case_loss(const GradCase& gc, const RefinerParams& p, BagAggregation agg) {
    const BagInput in{stem_inputs(gc.image, gc.bag.boxes, p.dims.grid), gc.label};
    return batch_loss_gradient(p, std::span<const BagInput>(&in, 1), gc.prototypes, agg, nullptr);
}

struct GradCheck {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t checked = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor) over every parameter.
inline GradCheck check_gradient(const GradCase& gc, BagAggregation agg, double h = 1e-4, double floor = 1e-6) {
    const RefinerParams g = loss_gradient(gc.params, gc.image, gc.bag, gc.prototypes, gc.label, agg);
    RefinerParams p = gc.params;
    GradCheck r;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double orig = p.flat(i);
        p.flat(i) = orig + h;
        const double up = case_loss(gc, p, agg);
        p.flat(i) = orig - h;
        const double down = case_loss(gc, p, agg);
        p.flat(i) = orig;
        const double num = (up - down) / (2.0 * h);
        const double ana = g.flat(i);
        const double abs_err = std::abs(ana - num);
        r.max_abs_error = std::max(r.max_abs_error, abs_err);
        r.max_rel_error = std::max(r.max_rel_error, abs_err / std::max({std::abs(ana), std::abs(num), floor}));
        ++r.checked;
    }
    return r;
}

} // namespace pssam::test
