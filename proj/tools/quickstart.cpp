// Library walk-through: make a few phantoms, train a small refiner, then run
// the loop on one test image against the oracle segmenter.
//
//   quickstart [work_dir]

#include "pssam/checkpoint.hpp"
#include "pssam/evaluate.hpp"
#include "pssam/pipeline.hpp"

#include <iostream>

int main(int argc, char** argv) {
    namespace fs = std::filesystem;
    const fs::path dir = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "pssam_quickstart";

    pssam::PhantomSpec spec;
    spec.count = 40;
    const pssam::DatasetManifest m = pssam::gen_phantoms(spec, dir / "data");
    const auto train = pssam::load_split(m, pssam::Split::Train);
    const auto test = pssam::load_split(m, pssam::Split::Test);

    pssam::TrainHyper hyper;
    hyper.dims.hidden = 256; // smaller than the default for a quick run
    hyper.dims.embed = 64;
    const pssam::TrainingResult tr = pssam::run_training(train, hyper, 10, [](const pssam::TrainerState&, int e) {
        std::cout << "epoch " << e << "\n";
    });
    std::cout << "loss " << tr.loss_curve.front() << " -> " << tr.loss_curve.back() << "\n";
    pssam::save_checkpoint(tr.state, dir / "refiner.ckpt");

    const pssam::LoadedSample& s = test.front();
    pssam::OracleBackend oracle({}, s.mask);
    pssam::IterationConfig cfg;
    cfg.rounds = 5;
    const pssam::RefinerModel model{&tr.state.params, &tr.state.buffer};
    const pssam::InferenceResult r =
        pssam::infer_iterative(model, oracle, s.image, pssam::point_from_mask(s.mask), cfg, &s.mask);

    for (const pssam::RoundRecord& rec : r.trace.rounds)
        std::cout << "round " << rec.round << ": seed " << rec.seed << " -> chosen " << rec.chosen << "  dice "
                  << *rec.dice << "\n";
    pssam::write_file(dir / "overlay.ppm", pssam::emit_overlay(s.image, s.mask, r.mask));
    std::cout << "overlay written to " << (dir / "overlay.ppm").string() << "\n";
}
