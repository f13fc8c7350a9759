#include "support.hpp"

#include "pssam/checkpoint.hpp"
#include "pssam/config.hpp"
#include "pssam/data.hpp"

#include <gtest/gtest.h>

using namespace pssam;

namespace {

TrainerState trained() {
    PhantomSpec spec;
    spec.width = spec.height = 48;
    spec.radius_min = 5;
    spec.radius_max = 12;
    std::vector<TrainSample> data;
    for (int i = 0; i < 4; ++i) {
        Rng rng(mix_seed(3, static_cast<std::uint64_t>(i)));
        Phantom ph = make_phantom(spec, rng);
        data.push_back({ph.image, *tight_box(ph.mask), 1});
    }
    TrainHyper h;
    h.dims = {4, 16, 8};
    h.batch_size = 2;
    h.memory_batches = 2;
    TrainerState st = TrainerState::fresh(h);
    train_epoch(st, data, h);
    train_epoch(st, data, h);
    return st;
}

FormatKind kind_of(std::string_view bytes) {
    try {
        deserialize_checkpoint(bytes);
    } catch (const FormatError& e) {
        return e.format_kind();
    }
    ADD_FAILURE() << "no FormatError";
    return FormatKind::Schema;
}

} // namespace

TEST(Checkpoint, RoundTripIsByteIdentical) {
    const TrainerState st = trained();
    const std::string bytes = serialize_checkpoint(st);
    const TrainerState back = deserialize_checkpoint(bytes);
    EXPECT_EQ(serialize_checkpoint(back), bytes);
    EXPECT_TRUE(back.params == st.params);
    EXPECT_EQ(back.epochs_done, 2u);
    EXPECT_EQ(back.buffer.batches_seen(), st.buffer.batches_seen());
    for (int c = 0; c < 2; ++c)
        EXPECT_TRUE(back.buffer.prototype(c) == st.buffer.prototype(c));

    const auto dir = test::temp_dir("ckpt");
    save_checkpoint(st, dir / "a.ckpt");
    save_checkpoint(load_checkpoint(dir / "a.ckpt"), dir / "b.ckpt");
    EXPECT_EQ(read_file(dir / "a.ckpt"), read_file(dir / "b.ckpt"));
}

TEST(Checkpoint, CorruptionIsDetected) {
    const std::string bytes = serialize_checkpoint(trained());
    EXPECT_EQ(kind_of("NOTACKPT" + bytes.substr(8)), FormatKind::Magic);
    EXPECT_EQ(kind_of(bytes.substr(0, 4)), FormatKind::Magic);
    EXPECT_EQ(kind_of(bytes.substr(0, bytes.size() / 2)), FormatKind::Truncated);
    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x01;
    EXPECT_EQ(kind_of(flipped), FormatKind::Truncated);
    std::string version = bytes;
    version[8] = 9;
    EXPECT_EQ(kind_of(version), FormatKind::Header);
    EXPECT_THROW(load_checkpoint(test::temp_dir("ckpt_missing") / "none.ckpt"), MissingFile);
}

TEST(Config, DefaultsResolve) {
    const RunConfig c = resolve_config(ConfigValues{});
    EXPECT_EQ(c.rng_seed, 42u);
    EXPECT_EQ(c.phantom.count, 200);
    EXPECT_EQ(c.hyper.batch_size, 8);
    EXPECT_EQ(c.hyper.memory_batches, 8);
    EXPECT_EQ(c.hyper.sgd.lr, 0.01);
    EXPECT_EQ(c.hyper.sgd.momentum, 0.9);
    EXPECT_EQ(c.hyper.scales, default_scales());
    EXPECT_EQ(c.epochs, 50);
    EXPECT_EQ(c.t_values, (std::vector<int>{1, 2, 3, 5, 10}));
    EXPECT_EQ(c.backend_kind, "oracle");
}

TEST(Config, TomlMergeAndOverrides) {
    ConfigValues v;
    v.merge_toml(R"(
rng_seed = 7
[train]
epochs = 3
lr = 0.05
[eval]
t_values = [1, 4]
hausdorff = "hd95"
)");
    v.set("train.momentum=0.5");
    v.set("iterate.selector=ideal");
    v.set("prompt.scales=[1.0, 2]");
    const RunConfig c = resolve_config(v);
    EXPECT_EQ(c.rng_seed, 7u);
    EXPECT_EQ(c.epochs, 3);
    EXPECT_EQ(c.hyper.sgd.lr, 0.05);
    EXPECT_EQ(c.hyper.sgd.momentum, 0.5);
    EXPECT_EQ(c.iteration.selector, Selector::Ideal);
    EXPECT_EQ(c.hyper.scales, (std::vector<double>{1.0, 2.0}));
    EXPECT_EQ(c.t_values, (std::vector<int>{1, 4}));
    EXPECT_EQ(c.hausdorff, HausdorffVariant::Percentile95);

    // the dump parses back to the same values
    ConfigValues again;
    again.merge_toml(v.dump());
    EXPECT_EQ(again.dump(), v.dump());
}

TEST(Config, Errors) {
    ConfigValues v;
    EXPECT_THROW(v.merge_toml("[train]\nepochz = 3\n"), ConfigError);
    EXPECT_THROW(v.merge_toml("[train]\nepochs = \"three\"\n"), ConfigError);
    EXPECT_THROW(v.merge_toml("this is not toml"), ConfigError);
    EXPECT_THROW(v.set("nope.x=1"), ConfigError);
    EXPECT_THROW(v.set("train.epochs"), ConfigError);
    EXPECT_THROW(v.set("train.epochs=abc"), ConfigError);
    EXPECT_THROW(v.set_value("train.epochs", 1.5), ConfigError);

    ConfigValues bad;
    bad.set("schema_version=2");
    EXPECT_THROW(resolve_config(bad), ConfigError);
    ConfigValues range;
    range.set("train.batch_size=0");
    EXPECT_THROW(resolve_config(range), ConfigError);
    ConfigValues variant;
    variant.set("eval.hausdorff=hd50");
    EXPECT_THROW(resolve_config(variant), ConfigError);
}

TEST(Config, ReferenceListsEveryKey) {
    const std::string ref = config_reference();
    for (const ConfigKey& k : config_keys())
        EXPECT_NE(ref.find("  " + k.name + " = "), std::string::npos) << k.name;
}
