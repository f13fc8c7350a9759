// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//
//   acceptance [--only NAME]   NAME in: normalization gradient bruteforce
//                              closedloop progress determinism robustness

#include "gradcheck.hpp"
#include "support.hpp"

#include "pssam/cli.hpp"
#include "pssam/evaluate.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <sstream>

using namespace pssam;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
    std::printf("%s  %-28s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += pass ? 0 : 1;
}

std::string fmt(const char* f, auto... xs) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, xs...);
    return buf;
}

// ---------------------------------------------------------------------------

void normalization() {
    const auto t0 = Clock::now();
    Rng rng(1001);
    double worst = 0.0;
    bool invariant = true;
    for (int k = 0; k < 1000; ++k) {
        const int d = uniform_int(rng, 2, 64), classes = uniform_int(rng, 2, 6), n = uniform_int(rng, 1, 9);
        std::vector<FeatureVector> protos;
        for (int c = 0; c < classes; ++c) {
            FeatureVector v(d);
            for (auto& x : v)
                x = standard_normal(rng);
            protos.push_back(v);
        }
        Eigen::MatrixXd feats(d, n);
        for (Eigen::Index i = 0; i < feats.size(); ++i)
            feats.data()[i] = standard_normal(rng);
        ProposalBag bag;
        for (int i = 0; i < n; ++i)
            bag.boxes.push_back({i, 0, i + 1, 1});
        const auto probs = instance_probabilities(feats, protos);
        for (const auto& p : probs) {
            double s = 0.0;
            for (double v : p.p)
                s += v;
            worst = std::max(worst, std::abs(s - 1.0));
        }
        const double scale = std::exp(uniform_real(rng, -5.0, 5.0));
        const auto scaled = instance_probabilities(feats * scale, protos);
        const auto c = static_cast<std::size_t>(uniform_int(rng, 0, classes - 1));
        invariant = invariant && select_best_box(bag, probs, c).index == select_best_box(bag, scaled, c).index;
    }
    const double t = seconds_since(t0);
    report("eq1_normalization", worst < 1e-6 && invariant && t < 1.0,
           fmt("max |sum p - 1| = %.2e, scale-invariant selection = %s, %.3f s (limit 1 s)", worst,
               invariant ? "yes" : "no", t));
}

void gradient() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    for (int k = 0; k < 50; ++k)
        worst = std::max(worst, test::check_gradient(test::make_grad_case(static_cast<std::uint64_t>(k)),
                                                     BagAggregation::Mean)
                                    .max_rel_error);
    const double t = seconds_since(t0);
    report("gradient_check", worst < 1e-4 && t < 30.0,
           fmt("50 configs, max relative error %.2e (limit 1e-4), %.2f s (limit 30 s)", worst, t));
}

// ---------------------------------------------------------------------------

double brute_hd(const Mask2D& a, const Mask2D& b) {
    auto directed = [](const Mask2D& p, const Mask2D& q) {
        double worst = 0.0;
        for (int y = 0; y < p.height; ++y)
            for (int x = 0; x < p.width; ++x) {
                if (!p.at(x, y))
                    continue;
                double best = INFINITY;
                for (int v = 0; v < q.height; ++v)
                    for (int u = 0; u < q.width; ++u)
                        if (q.at(u, v))
                            best = std::min(best, std::hypot(double(x - u), double(y - v)));
                worst = std::max(worst, best);
            }
        return worst;
    };
    return std::max(directed(a, b), directed(b, a));
}

void bruteforce() {
    Rng rng(2002);
    int tight_bad = 0, iou_bad = 0, select_bad = 0, dice_bad = 0, hd_bad = 0;
    for (int k = 0; k < 500; ++k) {
        const int w = uniform_int(rng, 1, 24), h = uniform_int(rng, 1, 24);
        const Mask2D a = test::random_mask(rng, w, h, uniform01(rng) * 0.4);
        const Mask2D b = test::random_mask(rng, w, h, uniform01(rng) * 0.4);

        int x0 = w, y0 = h, x1 = -1, y1 = -1;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (a.at(x, y)) {
                    x0 = std::min(x0, x);
                    y0 = std::min(y0, y);
                    x1 = std::max(x1, x + 1);
                    y1 = std::max(y1, y + 1);
                }
        const auto tb = tight_box(a);
        tight_bad += x1 < 0 ? tb.has_value() : !(tb && *tb == BBox{x0, y0, x1, y1});

        const BBox p = test::random_box(rng, w, h), q = test::random_box(rng, w, h);
        int inter = 0, uni = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                inter += p.contains(x, y) && q.contains(x, y);
                uni += p.contains(x, y) || q.contains(x, y);
            }
        iou_bad += box_iou(p, q) != static_cast<double>(inter) / uni;

        const int n = uniform_int(rng, 1, 9);
        ProposalBag bag;
        std::vector<ClassProbabilities> probs;
        for (int i = 0; i < n; ++i) {
            bag.boxes.push_back(test::random_box(rng, w, h));
            // coarse values so ties occur
            const double v = uniform_int(rng, 0, 4) / 4.0;
            probs.push_back({{1.0 - v, v}});
        }
        std::size_t best = 0;
        for (std::size_t i = 0; i < probs.size(); ++i)
            if (probs[i][1] > probs[best][1])
                best = i;
        const Selection sel = select_best_box(bag, probs, 1);
        select_bad += sel.index != best || sel.box != bag.boxes[best];

        std::size_t di = 0, na = a.count(), nb = b.count();
        for (std::size_t i = 0; i < a.bits.size(); ++i)
            di += a.bits[i] && b.bits[i];
        const double d = na + nb == 0 ? 1.0 : 2.0 * static_cast<double>(di) / static_cast<double>(na + nb);
        dice_bad += std::abs(dice(a, b) - d) > 1e-9;

        if (a.any() && b.any())
            hd_bad += std::abs(hausdorff_mm(a, b, 1.0) - brute_hd(a, b)) > 1e-9;
    }
    report("bruteforce_oracles", tight_bad + iou_bad + select_bad + dice_bad + hd_bad == 0,
           fmt("500 instances; mismatches tight_box=%d box_iou=%d select=%d dice=%d hausdorff=%d", tight_bad,
               iou_bad, select_bad, dice_bad, hd_bad));
}

// ---------------------------------------------------------------------------

struct ClosedLoop {
    std::vector<double> loss_curve;
    double learned_t1 = 0, learned_t5 = 0, learned_t10 = 0, ideal_t5 = 0, noisy_t5 = 0;
    double seconds = 0;
};

ClosedLoop run_closed_loop() {
    const auto t0 = Clock::now();
    const fs::path dir = test::temp_dir("acceptance_phantoms");
    PhantomSpec spec; // 200 phantoms, 128x128, seed 42
    const DatasetManifest m = gen_phantoms(spec, dir);
    const auto train = load_split(m, Split::Train);
    const auto test = load_split(m, Split::Test);

    TrainHyper hyper;
    const TrainingResult tr = run_training(train, hyper, 50);
    const RefinerModel model{&tr.state.params, &tr.state.buffer};

    ClosedLoop r;
    r.loss_curve = tr.loss_curve;
    EvalOptions opt;
    opt.t_values = {1, 5, 10};
    const EvalReport learned = evaluate(test, model, oracle_factory({}), opt);
    r.learned_t1 = learned.at_T(1).dice.mean;
    r.learned_t5 = learned.at_T(5).dice.mean;
    r.learned_t10 = learned.at_T(10).dice.mean;

    opt.t_values = {5};
    OracleConfig noisy;
    noisy.perturb_rate = 0.3;
    noisy.perturb_radius = 1;
    r.noisy_t5 = evaluate(test, model, oracle_factory(noisy), opt).at_T(5).dice.mean;

    opt.iteration.selector = Selector::Ideal;
    r.ideal_t5 = evaluate(test, model, oracle_factory({}), opt).at_T(5).dice.mean;
    r.seconds = seconds_since(t0);
    fs::remove_all(dir);
    return r;
}

void closed_loop(const ClosedLoop& r) {
    report("closed_loop_a_T5_vs_T1", r.learned_t5 >= r.learned_t1 + 0.05,
           fmt("Dice T=1 %.4f, T=5 %.4f, gain %+.4f (need >= +0.05)", r.learned_t1, r.learned_t5,
               r.learned_t5 - r.learned_t1));
    report("closed_loop_b_T10_plateau", r.learned_t10 >= r.learned_t5 - 0.01,
           fmt("Dice T=5 %.4f, T=10 %.4f, change %+.4f (need >= -0.01)", r.learned_t5, r.learned_t10,
               r.learned_t10 - r.learned_t5));
    report("closed_loop_c_ideal_T5", r.ideal_t5 >= 0.95, fmt("ideal-selector Dice T=5 %.4f (need >= 0.95)", r.ideal_t5));
    report("closed_loop_runtime", r.seconds < 600.0,
           fmt("synth + train 50 epochs + all evaluations %.1f s (limit 600 s)", r.seconds));
}

void progress(const ClosedLoop& r) {
    const double ratio = r.loss_curve.back() / r.loss_curve.front();
    report("training_progress_50ep", ratio < 0.5,
           fmt("epoch-1 loss %.4f, epoch-50 loss %.4f, ratio %.3f (need < 0.5)", r.loss_curve.front(),
               r.loss_curve.back(), ratio));

    // single-sample overfit at the default model size
    PhantomSpec spec;
    Rng rng(mix_seed(spec.seed, 0));
    const Phantom ph = make_phantom(spec, rng);
    const std::vector<TrainSample> one{{ph.image, *tight_box(ph.mask), 1}};
    TrainHyper hyper;
    TrainerState st = TrainerState::fresh(hyper);
    double best = INFINITY;
    int steps = 0;
    for (; steps < 200 && best >= 0.01; ++steps)
        best = std::min(best, train_epoch(st, one, hyper));
    const double floor = 2.0 * std::log1p(std::exp(-2.0));
    report("single_sample_overfit", best < 0.01,
           fmt("lowest loss %.4f after %d steps (need < 0.01); two-class loss floor of the cosine softmax is %.4f",
               best, steps, floor));
}

void robustness(const ClosedLoop& r) {
    const double drop = r.learned_t5 - r.noisy_t5;
    report("robustness_perturb_0.3", drop < 0.10,
           fmt("Dice T=5 clean %.4f, perturbed %.4f, drop %.4f (need < 0.10)", r.learned_t5, r.noisy_t5, drop));
}

// ---------------------------------------------------------------------------

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "pssam");
    std::vector<char*> argv;
    for (auto& a : args)
        argv.push_back(a.data());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), {out, err});
    if (code != 0)
        std::cerr << err.str();
    return code;
}

void determinism() {
    const auto t0 = Clock::now();
    auto pipeline = [](const fs::path& dir) {
        std::vector<std::string> common{"--set", "paths.data=\"" + (dir / "data").string() + "\"",
                                        "--set", "paths.out=\"" + (dir / "run").string() + "\"",
                                        "--set", "paths.checkpoint=\"" + (dir / "run/refiner.ckpt").string() + "\""};
        int code = 0;
        for (const char* sub : {"synth", "train", "eval"}) {
            std::vector<std::string> args{sub};
            args.insert(args.end(), common.begin(), common.end());
            code = code ? code : run_cli(args);
        }
        return code;
    };
    const fs::path a = test::temp_dir("acceptance_det_a"), b = test::temp_dir("acceptance_det_b");
    const int ca = pipeline(a), cb = pipeline(b);
    int compared = 0, differing = 0;
    for (const char* rel : {"data/manifest.json", "run/refiner.ckpt", "run/loss.csv", "run/report.json",
                            "run/report.csv"}) {
        ++compared;
        differing += !fs::exists(a / rel) || read_file(a / rel) != read_file(b / rel);
    }
    for (const auto& e : fs::recursive_directory_iterator(a / "data"))
        if (e.is_regular_file()) {
            ++compared;
            differing += read_file(e.path()) != read_file(b / fs::relative(e.path(), a));
        }
    report("determinism", ca == 0 && cb == 0 && differing == 0,
           fmt("synth+train+eval twice (default config): %d files compared, %d differ, %.1f s",
               compared, differing, seconds_since(t0)));
    fs::remove_all(a);
    fs::remove_all(b);
}

} // namespace

int main(int argc, char** argv) {
    std::string only;
    if (argc == 3 && std::strcmp(argv[1], "--only") == 0)
        only = argv[2];
    auto want = [&](const char* n) { return only.empty() || only == n; };

    if (want("normalization"))
        normalization();
    if (want("gradient"))
        gradient();
    if (want("bruteforce"))
        bruteforce();
    if (want("determinism"))
        determinism();
    if (want("closedloop") || want("progress") || want("robustness")) {
        const ClosedLoop r = run_closed_loop();
        if (want("closedloop"))
            closed_loop(r);
        if (want("progress"))
            progress(r);
        if (want("robustness"))
            robustness(r);
    }
    std::printf("%s: %d failing criteria\n", failures ? "FAILED" : "OK", failures);
    return failures ? 1 : 0;
}
