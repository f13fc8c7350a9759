#pragma once

// Semantic box-prompt refiner: a fixed crop/resize/z-score stem followed by
// two fully connected layers, a per-class prototype memory, prototype-cosine
// class probabilities, the bag-level MIL loss with hand-written backprop, and
// momentum SGD.

#include "pssam/error.hpp"
#include "pssam/geometry.hpp"
#include "pssam/random.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

namespace pssam {

inline constexpr double kProbClampEps = 1e-6;
inline constexpr double kStdFloor = 1e-6;
inline constexpr double kNormFloor = 1e-12;

using FeatureVector = Eigen::VectorXd;

struct RefinerDims {
    int grid = 32;    // stem output is grid x grid
    int hidden = 1024;
    int embed = 256;

    int input() const { return grid * grid; }
    friend bool operator==(const RefinerDims&, const RefinerDims&) = default;
};

/// Trainable weights. The same layout doubles as the gradient and the
/// optimizer velocity.
struct RefinerParams {
    RefinerDims dims;
    Eigen::MatrixXd w1; // hidden x input
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2; // embed x hidden
    Eigen::VectorXd b2;

    static RefinerParams zeros(const RefinerDims& d) {
        RefinerParams p;
        p.dims = d;
        p.w1 = Eigen::MatrixXd::Zero(d.hidden, d.input());
        p.b1 = Eigen::VectorXd::Zero(d.hidden);
        p.w2 = Eigen::MatrixXd::Zero(d.embed, d.hidden);
        p.b2 = Eigen::VectorXd::Zero(d.embed);
        return p;
    }

    /// Glorot-uniform weights, biases drawn from the same range.
    static RefinerParams init(const RefinerDims& d, std::uint64_t seed) {
        RefinerParams p = zeros(d);
        Rng rng(mix_seed(seed, 0x5eed));
        auto fill = [&](auto& m, int fan_in, int fan_out) {
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            for (Eigen::Index i = 0; i < m.size(); ++i)
                m.data()[i] = uniform_real(rng, -limit, limit);
        };
        fill(p.w1, d.input(), d.hidden);
        fill(p.b1, d.input(), d.hidden);
        fill(p.w2, d.hidden, d.embed);
        fill(p.b2, d.hidden, d.embed);
        return p;
    }

    std::size_t size() const {
        return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size());
    }

    bool all_finite() const { return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite(); }

    /// Visits the four blocks in storage order: w1, b1, w2, b2.
    template <class F>
    void for_each_block(F&& f) {
        f(w1.data(), w1.size());
        f(b1.data(), b1.size());
        f(w2.data(), w2.size());
        f(b2.data(), b2.size());
    }
    template <class F>
    void for_each_block(F&& f) const {
        f(w1.data(), w1.size());
        f(b1.data(), b1.size());
        f(w2.data(), w2.size());
        f(b2.data(), b2.size());
    }

    double& flat(std::size_t i) {
        if (i < static_cast<std::size_t>(w1.size()))
            return w1.data()[i];
        i -= w1.size();
        if (i < static_cast<std::size_t>(b1.size()))
            return b1.data()[i];
        i -= b1.size();
        if (i < static_cast<std::size_t>(w2.size()))
            return w2.data()[i];
        i -= w2.size();
        return b2.data()[i];
    }
    double flat(std::size_t i) const { return const_cast<RefinerParams&>(*this).flat(i); }

    bool operator==(const RefinerParams& o) const {
        return dims == o.dims && w1 == o.w1 && b1 == o.b1 && w2 == o.w2 && b2 == o.b2;
    }
};

// ---------------------------------------------------------------------------
// Stem and forward pass
// ---------------------------------------------------------------------------

/// Crop to the box, resample to grid x grid, z-score with a std floor.
inline Eigen::VectorXd stem_input(const Image2D& img, const BBox& b, int grid) {
    const std::vector<double> crop = crop_resize(img, b, grid, grid);
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(crop.data(), static_cast<Eigen::Index>(crop.size()));
    const double mean = x.mean();
    const double var = (x.array() - mean).square().mean();
    const double sd = std::max(std::sqrt(var), kStdFloor);
    return (x.array() - mean) / sd;
}

inline Eigen::MatrixXd stem_inputs(const Image2D& img, std::span<const BBox> boxes, int grid) {
    Eigen::MatrixXd x(grid * grid, static_cast<Eigen::Index>(boxes.size()));
    for (std::size_t i = 0; i < boxes.size(); ++i)
        x.col(static_cast<Eigen::Index>(i)) = stem_input(img, boxes[i], grid);
    return x;
}

struct ForwardPass {
    Eigen::MatrixXd pre;    // hidden pre-activations, hidden x K
    Eigen::MatrixXd hidden; // ReLU output
    Eigen::MatrixXd out;    // embed x K
};

/// Column-batched forward pass over stem inputs (input x K).
inline ForwardPass forward(const RefinerParams& p, const Eigen::MatrixXd& x) {
    ForwardPass fp;
    fp.pre.noalias() = p.w1 * x;
    fp.pre.colwise() += p.b1;
    fp.hidden = fp.pre.cwiseMax(0.0);
    fp.out.noalias() = p.w2 * fp.hidden;
    fp.out.colwise() += p.b2;
    return fp;
}

inline FeatureVector extract_feature(const RefinerParams& p, const Image2D& img, const BBox& b) {
    return forward(p, stem_input(img, b, p.dims.grid)).out.col(0);
}

inline Eigen::MatrixXd extract_features(const RefinerParams& p, const Image2D& img, std::span<const BBox> boxes) {
    return forward(p, stem_inputs(img, boxes, p.dims.grid)).out;
}

// ---------------------------------------------------------------------------
// Prototype similarity and class probabilities
// ---------------------------------------------------------------------------

inline double cosine_similarity(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
    const double na = std::max(a.norm(), kNormFloor);
    const double nb = std::max(b.norm(), kNormFloor);
    return a.dot(b) / (na * nb);
}

struct ClassProbabilities {
    std::vector<double> p;

    std::size_t size() const { return p.size(); }
    double operator[](std::size_t c) const { return p[c]; }
};

/// Softmax over prototype cosine similarities, max-subtracted.
inline ClassProbabilities softmax(std::span<const double> logits) {
    ClassProbabilities out;
    out.p.resize(logits.size());
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c) {
        out.p[c] = std::exp(logits[c] - mx);
        sum += out.p[c];
    }
    for (double& v : out.p)
        v /= sum;
    return out;
}

inline ClassProbabilities instance_probability(const FeatureVector& f, std::span<const FeatureVector> prototypes) {
    if (prototypes.size() < 2)
        throw DimensionMismatch("instance_probability needs at least two class prototypes");
    std::vector<double> sims(prototypes.size());
    for (std::size_t c = 0; c < prototypes.size(); ++c) {
        if (prototypes[c].size() != f.size())
            throw DimensionMismatch("prototype dimension differs from feature dimension");
        sims[c] = cosine_similarity(f, prototypes[c]);
    }
    return softmax(sims);
}

inline std::vector<ClassProbabilities> instance_probabilities(const Eigen::MatrixXd& features,
                                                              std::span<const FeatureVector> prototypes) {
    std::vector<ClassProbabilities> out;
    out.reserve(static_cast<std::size_t>(features.cols()));
    for (Eigen::Index k = 0; k < features.cols(); ++k)
        out.push_back(instance_probability(features.col(k), prototypes));
    return out;
}

// ---------------------------------------------------------------------------
// Bag score and MIL loss
// ---------------------------------------------------------------------------

enum class BagAggregation { Mean, Max, NoisyOr };

inline const char* to_string(BagAggregation a) {
    switch (a) {
    case BagAggregation::Mean: return "mean";
    case BagAggregation::Max: return "max";
    case BagAggregation::NoisyOr: return "noisy_or";
    }
    return "mean";
}

inline BagAggregation parse_aggregation(const std::string& s) {
    if (s == "mean")
        return BagAggregation::Mean;
    if (s == "max")
        return BagAggregation::Max;
    if (s == "noisy_or")
        return BagAggregation::NoisyOr;
    throw ConfigError("unknown bag aggregation '" + s + "' (expected mean, max or noisy_or)");
}

/// Unclamped aggregate of one class column over the bag.
inline double aggregate_raw(std::span<const double> col, BagAggregation agg) {
    switch (agg) {
    case BagAggregation::Max: return *std::max_element(col.begin(), col.end());
    case BagAggregation::NoisyOr: {
        double keep = 1.0;
        for (double v : col)
            keep *= 1.0 - v;
        return 1.0 - keep;
    }
    case BagAggregation::Mean:
    default: {
        double sum = 0.0;
        for (double v : col)
            sum += v;
        return sum / static_cast<double>(col.size());
    }
    }
}

inline double clamp_score(double s) { return std::clamp(s, kProbClampEps, 1.0 - kProbClampEps); }

inline double bag_score(std::span<const ClassProbabilities> probs, std::size_t c,
                        BagAggregation agg = BagAggregation::Mean) {
    if (probs.empty())
        throw DimensionMismatch("bag_score needs a non-empty bag");
    std::vector<double> col(probs.size());
    for (std::size_t n = 0; n < probs.size(); ++n)
        col[n] = probs[n][c];
    return clamp_score(aggregate_raw(col, agg));
}

/// Bag-level binary cross entropy summed over classes.
inline double mil_loss(std::span<const double> bag_scores, const std::vector<bool>& onehot) {
    if (onehot.size() != bag_scores.size() || std::count(onehot.begin(), onehot.end(), true) != 1)
        throw DimensionMismatch("mil_loss needs a one-hot label matching the class count");
    double loss = 0.0;
    for (std::size_t c = 0; c < bag_scores.size(); ++c)
        loss -= onehot[c] ? std::log(bag_scores[c]) : std::log(1.0 - bag_scores[c]);
    return loss;
}

inline std::vector<bool> one_hot(int label, int num_classes) {
    std::vector<bool> v(static_cast<std::size_t>(num_classes), false);
    v[static_cast<std::size_t>(label)] = true;
    return v;
}

// ---------------------------------------------------------------------------
// Backprop
// ---------------------------------------------------------------------------

/// One bag of stem inputs (input x N) with its class label.
struct BagInput {
    Eigen::MatrixXd stems;
    int label = 0;
};

/// Loss of one bag given its embedded features (embed x N). When d_features
/// is non-null it receives dL/dF with the same shape. Prototypes are constants.
inline double bag_loss_from_features(const Eigen::MatrixXd& feats, int label,
                                     std::span<const FeatureVector> prototypes, BagAggregation agg,
                                     Eigen::MatrixXd* d_features) {
    const auto C = static_cast<Eigen::Index>(prototypes.size());
    const Eigen::Index N = feats.cols();
    const Eigen::Index D = feats.rows();

    Eigen::MatrixXd protos(D, C);
    Eigen::VectorXd proto_norm(C);
    for (Eigen::Index c = 0; c < C; ++c) {
        protos.col(c) = prototypes[static_cast<std::size_t>(c)];
        proto_norm(c) = std::max(protos.col(c).norm(), kNormFloor);
    }

    const Eigen::MatrixXd dots = protos.transpose() * feats; // C x N
    Eigen::VectorXd feat_norm_raw(N), feat_norm(N);
    Eigen::MatrixXd cosv(C, N), prob(C, N);
    for (Eigen::Index n = 0; n < N; ++n) {
        feat_norm_raw(n) = feats.col(n).norm();
        feat_norm(n) = std::max(feat_norm_raw(n), kNormFloor);
        for (Eigen::Index c = 0; c < C; ++c)
            cosv(c, n) = dots(c, n) / (feat_norm(n) * proto_norm(c));
        const double mx = cosv.col(n).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index c = 0; c < C; ++c) {
            prob(c, n) = std::exp(cosv(c, n) - mx);
            sum += prob(c, n);
        }
        prob.col(n) /= sum;
    }

    double loss = 0.0;
    Eigen::MatrixXd d_prob = Eigen::MatrixXd::Zero(C, N);
    std::vector<double> col(static_cast<std::size_t>(N));
    for (Eigen::Index c = 0; c < C; ++c) {
        for (Eigen::Index n = 0; n < N; ++n)
            col[static_cast<std::size_t>(n)] = prob(c, n);
        const double raw = aggregate_raw(col, agg);
        const double s = clamp_score(raw);
        const bool positive = c == label;
        loss -= positive ? std::log(s) : std::log(1.0 - s);
        if (!d_features || raw <= kProbClampEps || raw >= 1.0 - kProbClampEps)
            continue;
        const double d_s = positive ? -1.0 / s : 1.0 / (1.0 - s);
        switch (agg) {
        case BagAggregation::Mean:
            d_prob.row(c).setConstant(d_s / static_cast<double>(N));
            break;
        case BagAggregation::Max: {
            Eigen::Index arg = 0;
            prob.row(c).maxCoeff(&arg);
            d_prob(c, arg) = d_s;
            break;
        }
        case BagAggregation::NoisyOr:
            for (Eigen::Index n = 0; n < N; ++n) {
                double others = 1.0;
                for (Eigen::Index m = 0; m < N; ++m)
                    if (m != n)
                        others *= 1.0 - prob(c, m);
                d_prob(c, n) = d_s * others;
            }
            break;
        }
    }
    if (!d_features)
        return loss;

    d_features->setZero(D, N);
    for (Eigen::Index n = 0; n < N; ++n) {
        // softmax Jacobian: dz_k = p_k (g_k - sum_c g_c p_c)
        const double gp = d_prob.col(n).dot(prob.col(n));
        const Eigen::VectorXd d_cos =
            prob.col(n).cwiseProduct(d_prob.col(n) - Eigen::VectorXd::Constant(C, gp));
        const double nf = feat_norm(n);
        const bool norm_active = feat_norm_raw(n) > kNormFloor;
        for (Eigen::Index c = 0; c < C; ++c) {
            if (d_cos(c) == 0.0)
                continue;
            // d cos / d f = V / (nf nv) - cos * f / (nf * |f|)
            d_features->col(n) += d_cos(c) * protos.col(c) / (nf * proto_norm(c));
            if (norm_active)
                d_features->col(n) -= d_cos(c) * cosv(c, n) * feats.col(n) / (nf * feat_norm_raw(n));
        }
    }
    return loss;
}

/// Shared tail of the batched loss: given the stacked stem inputs and their
/// forward pass, evaluates every bag (consecutive column blocks of
/// `bag_sizes`) and, when grad is non-null, writes the batch-mean gradient.
inline double batch_loss_gradient_from_forward(const RefinerParams& p, const Eigen::MatrixXd& x,
                                               const ForwardPass& fp, std::span<const Eigen::Index> bag_sizes,
                                               std::span<const int> labels, std::span<const FeatureVector> prototypes,
                                               BagAggregation agg, RefinerParams* grad,
                                               std::vector<double>* per_bag_loss = nullptr) {
    const Eigen::Index total = x.cols();
    Eigen::MatrixXd d_out(p.dims.embed, grad ? total : 0);
    double loss_sum = 0.0;
    if (per_bag_loss)
        per_bag_loss->clear();
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < bag_sizes.size(); ++i) {
        const Eigen::Index n = bag_sizes[i];
        Eigen::MatrixXd d_block;
        const double l = bag_loss_from_features(fp.out.middleCols(off, n), labels[i], prototypes, agg,
                                                grad ? &d_block : nullptr);
        if (grad)
            d_out.middleCols(off, n) = d_block;
        if (per_bag_loss)
            per_bag_loss->push_back(l);
        loss_sum += l;
        off += n;
    }
    const double inv = 1.0 / static_cast<double>(bag_sizes.size());
    if (grad) {
        d_out *= inv;
        grad->dims = p.dims;
        grad->w2.noalias() = d_out * fp.hidden.transpose();
        grad->b2 = d_out.rowwise().sum();
        Eigen::MatrixXd d_hidden = p.w2.transpose() * d_out;
        d_hidden = (fp.pre.array() > 0.0).select(d_hidden, 0.0);
        grad->w1.noalias() = d_hidden * x.transpose();
        grad->b1 = d_hidden.rowwise().sum();
    }
    return loss_sum * inv;
}

/// Mean loss over the bags; when grad is non-null it receives the mean
/// gradient. All bags share one column-batched forward and backward pass.
inline double batch_loss_gradient(const RefinerParams& p, std::span<const BagInput> bags,
                                  std::span<const FeatureVector> prototypes, BagAggregation agg,
                                  RefinerParams* grad, std::vector<double>* per_bag_loss = nullptr) {
    if (bags.empty())
        throw DimensionMismatch("batch_loss_gradient needs at least one bag");
    Eigen::Index total = 0;
    std::vector<Eigen::Index> sizes;
    std::vector<int> labels;
    for (const BagInput& b : bags) {
        if (b.stems.rows() != p.dims.input() || b.stems.cols() < 1)
            throw DimensionMismatch("stem input size differs from refiner input size");
        total += b.stems.cols();
        sizes.push_back(b.stems.cols());
        labels.push_back(b.label);
    }
    Eigen::MatrixXd x(p.dims.input(), total);
    Eigen::Index off = 0;
    for (const BagInput& b : bags) {
        x.middleCols(off, b.stems.cols()) = b.stems;
        off += b.stems.cols();
    }
    const ForwardPass fp = forward(p, x);
    return batch_loss_gradient_from_forward(p, x, fp, sizes, labels, prototypes, agg, grad, per_bag_loss);
}

struct ProposalBag;

/// Gradient of the MIL loss of a single bag with respect to every parameter.
inline RefinerParams loss_gradient(const RefinerParams& p, const Image2D& img, const ProposalBag& bag,
                                   std::span<const FeatureVector> prototypes, int label,
                                   BagAggregation agg = BagAggregation::Mean, double* loss_out = nullptr);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct SgdConfig {
    double lr = 0.01;
    double momentum = 0.9;
};

/// v <- momentum*v + g; x <- x - lr*v over raw blocks. Returns false when the
/// update produced a non-finite value; nothing is written in that case.
template <class Vec>
bool momentum_update(Vec& params, const Vec& grad, Vec& velocity, const SgdConfig& cfg) {
    Vec v = cfg.momentum * velocity + grad;
    Vec x = params - cfg.lr * v;
    if (!v.allFinite() || !x.allFinite())
        return false;
    velocity = std::move(v);
    params = std::move(x);
    return true;
}

struct SgdState {
    RefinerParams velocity;
    bool initialized = false;
};

inline void sgd_step(RefinerParams& params, const RefinerParams& grad, const SgdConfig& cfg, SgdState& state) {
    if (!(cfg.lr > 0.0) || cfg.momentum < 0.0 || cfg.momentum >= 1.0)
        throw ConfigError("sgd requires lr > 0 and 0 <= momentum < 1");
    if (!state.initialized) {
        state.velocity = RefinerParams::zeros(params.dims);
        state.initialized = true;
    }
    RefinerParams next = params;
    SgdState next_state = state;
    const bool ok = momentum_update(next.w1, grad.w1, next_state.velocity.w1, cfg) &&
                    momentum_update(next.b1, grad.b1, next_state.velocity.b1, cfg) &&
                    momentum_update(next.w2, grad.w2, next_state.velocity.w2, cfg) &&
                    momentum_update(next.b2, grad.b2, next_state.velocity.b2, cfg);
    if (!ok)
        throw NonFiniteUpdate("optimizer step produced a non-finite parameter");
    params = std::move(next);
    state = std::move(next_state);
}

// ---------------------------------------------------------------------------
// Prototype memory
// ---------------------------------------------------------------------------

/// Per-class feature memory over the most recent `max_batches` batches.
/// Each prototype is the exact mean of the retained features of its class,
/// or the zero vector while the class has nothing buffered.
class PrototypeBuffer {
public:
    struct Entry {
        FeatureVector feature;
        Eigen::VectorXd stem; // kept only when re-extraction is enabled
    };
    using Batch = std::vector<std::vector<Entry>>; // [class][i]

    PrototypeBuffer() = default;
    PrototypeBuffer(int num_classes, int dim, int max_batches)
        : num_classes_(num_classes), dim_(dim), max_batches_(max_batches),
          prototypes_(static_cast<std::size_t>(num_classes), FeatureVector::Zero(dim)) {
        if (num_classes < 2)
            throw ConfigError("prototype buffer needs at least two classes");
        if (max_batches < 1)
            throw ConfigError("prototype buffer needs at least one batch of memory");
    }

    int num_classes() const { return num_classes_; }
    int dim() const { return dim_; }
    int max_batches() const { return max_batches_; }
    std::uint64_t batches_seen() const { return batches_seen_; }
    const std::deque<Batch>& batches() const { return batches_; }

    std::span<const FeatureVector> prototypes() const { return prototypes_; }
    const FeatureVector& prototype(int c) const { return prototypes_[static_cast<std::size_t>(c)]; }

    std::size_t buffered(int c) const {
        std::size_t n = 0;
        for (const Batch& b : batches_)
            n += b[static_cast<std::size_t>(c)].size();
        return n;
    }
    bool populated() const {
        for (int c = 0; c < num_classes_; ++c)
            if (buffered(c) == 0)
                return false;
        return true;
    }

    /// Appends one batch, evicts batches beyond the memory, recomputes means.
    void push_batch(Batch batch) {
        if (batch.size() != static_cast<std::size_t>(num_classes_))
            throw DimensionMismatch("batch must list features for every class");
        for (const auto& cls : batch)
            for (const Entry& e : cls)
                if (e.feature.size() != dim_)
                    throw DimensionMismatch("buffered feature has the wrong dimension");
        batches_.push_back(std::move(batch));
        while (batches_.size() > static_cast<std::size_t>(max_batches_))
            batches_.pop_front();
        ++batches_seen_;
        recompute();
    }

    /// Re-embeds every buffered feature whose stem was retained.
    void refresh(const RefinerParams& p) {
        for (Batch& b : batches_)
            for (auto& cls : b)
                for (Entry& e : cls)
                    if (e.stem.size() == p.dims.input())
                        e.feature = forward(p, e.stem).out.col(0);
        recompute();
    }

    /// Restores state verbatim (checkpoint loading).
    void restore(std::deque<Batch> batches, std::uint64_t seen) {
        batches_ = std::move(batches);
        batches_seen_ = seen;
        recompute();
    }

private:
    void recompute() {
        for (int c = 0; c < num_classes_; ++c) {
            FeatureVector sum = FeatureVector::Zero(dim_);
            std::size_t n = 0;
            for (const Batch& b : batches_)
                for (const Entry& e : b[static_cast<std::size_t>(c)]) {
                    sum += e.feature;
                    ++n;
                }
            prototypes_[static_cast<std::size_t>(c)] = n ? FeatureVector(sum / static_cast<double>(n))
                                                         : FeatureVector::Zero(dim_);
        }
    }

    int num_classes_ = 2;
    int dim_ = 0;
    int max_batches_ = 1;
    std::uint64_t batches_seen_ = 0;
    std::deque<Batch> batches_;
    std::vector<FeatureVector> prototypes_;
};

inline void update_prototypes(PrototypeBuffer& buf, const std::vector<std::vector<FeatureVector>>& per_class) {
    PrototypeBuffer::Batch batch(per_class.size());
    for (std::size_t c = 0; c < per_class.size(); ++c)
        for (const FeatureVector& f : per_class[c])
            batch[c].push_back({f, {}});
    buf.push_batch(std::move(batch));
}

// ---------------------------------------------------------------------------
// Proposal bags and selection
// ---------------------------------------------------------------------------

inline const std::vector<double>& default_scales() {
    static const std::vector<double> s{0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0};
    return s;
}

struct ProposalBag {
    BBox seed;
    std::vector<BBox> boxes;
    std::vector<double> scales;

    std::size_t size() const { return boxes.size(); }
};

inline ProposalBag make_proposal_bag(const BBox& seed, std::span<const double> scales, const Image2D& img) {
    if (scales.empty())
        throw ConfigError("proposal bag needs at least one scale");
    ProposalBag bag;
    bag.seed = seed;
    bag.scales.assign(scales.begin(), scales.end());
    bag.boxes.reserve(scales.size());
    for (double s : scales)
        bag.boxes.push_back(scale_box(seed, s, img));
    return bag;
}

struct Selection {
    BBox box;
    std::size_t index = 0;
};

/// Highest class-c probability in the bag; ties go to the lowest index.
inline Selection select_best_box(const ProposalBag& bag, std::span<const ClassProbabilities> probs, std::size_t c) {
    if (bag.boxes.empty() || probs.size() != bag.boxes.size())
        throw DimensionMismatch("selection needs one probability vector per proposal");
    std::size_t best = 0;
    for (std::size_t n = 1; n < probs.size(); ++n)
        if (probs[n][c] > probs[best][c])
            best = n;
    return {bag.boxes[best], best};
}

inline RefinerParams loss_gradient(const RefinerParams& p, const Image2D& img, const ProposalBag& bag,
                                   std::span<const FeatureVector> prototypes, int label, BagAggregation agg,
                                   double* loss_out) {
    const BagInput in{stem_inputs(img, bag.boxes, p.dims.grid), label};
    RefinerParams g;
    const double l = batch_loss_gradient(p, std::span<const BagInput>(&in, 1), prototypes, agg, &g);
    if (loss_out)
        *loss_out = l;
    return g;
}

} // namespace pssam
