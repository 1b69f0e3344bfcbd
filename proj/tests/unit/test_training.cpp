#include "unit.hpp"

#include <algorithm>
#include <chrono>

#include "helpers.hpp"
#include "maskfill/archive.hpp"
#include "maskfill/training.hpp"

using namespace maskfill;
using namespace maskfill::train;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config(Regime regime = Regime::cascaded) {
    TrainConfig c;
    c.regime = regime;
    c.seed = 5;
    c.width_divisor = 16;
    c.batch_size = 2;
    c.epochs = 2;
    c.snapshot_every = 0;
    return c;
}

bool same_state(const std::map<std::string, torch::Tensor>& a, const std::map<std::string, torch::Tensor>& b) {
    if (a.size() != b.size()) return false;
    for (const auto& [name, t] : a) {
        const auto it = b.find(name);
        if (it == b.end() || !torch::equal(t, it->second)) return false;
    }
    return true;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("config defaults") {
    const TrainConfig c;
    CHECK(c.generator_lr == 1e-4);
    CHECK(c.discriminator_lr == 2e-4);
    CHECK(c.batch_size == 10);
    CHECK(c.epochs == 50);
    CHECK(c.snapshot_every == 10);
    CHECK(c.real_label == 0.9);
    CHECK(c.pixel_norm == loss::PixelNorm::l1);
    CHECK_FALSE(c.seed.has_value());
}

TEST_CASE("config json round trip and validation") {
    auto c = tiny_config(Regime::progressive);
    c.weights.identity = 3.0;
    c.pixel_norm = loss::PixelNorm::l2;
    const auto back = TrainConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.hash() == c.hash());
    CHECK(c.hash().size() == 8);

    auto other = c;
    other.seed = 6;
    CHECK(other.hash() != c.hash());

    CHECK_THROWS_AS(TrainConfig::from_json({{"batch", 3}}), std::invalid_argument);
    CHECK_THROWS_AS(TrainConfig::from_json({{"regime", "sideways"}}), std::invalid_argument);
    CHECK_THROWS_AS(TrainConfig::from_json({{"pixel_norm", "l3"}}), std::invalid_argument);
    CHECK(TrainConfig::from_json(nlohmann::json::object()).batch_size == 10);

    CHECK_NOTHROW(c.validate());
    CHECK_THROWS(TrainConfig{}.validate());
    auto bad = c;
    bad.batch_size = 0;
    CHECK_THROWS(bad.validate());
    bad = c;
    bad.generator_lr = 0.0;
    CHECK_THROWS(bad.validate());
    bad = c;
    bad.real_label = 1.5;
    CHECK_THROWS(bad.validate());
    bad = c;
    bad.width_divisor = 3;
    CHECK_THROWS(bad.validate());
    bad = c;
    bad.weights.adversarial = -0.1;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("cascade parameters add up to the layer tables") {
    Cascade cascade(16, 1);
    std::int64_t expected = 0;
    for (int r : data::kResolutions) {
        expected += nets::generator_spec(r, 16).parameter_count() + nets::discriminator_spec(r, 16).parameter_count();
    }
    expected += 4 * nets::upscaler_spec().parameter_count();
    CHECK(nets::count_parameters(*cascade) == expected);
    const auto state = state_of(*cascade);
    for (int r : data::kResolutions) {
        const auto prefix = "generator_" + std::to_string(r) + ".";
        CHECK(std::any_of(state.begin(), state.end(), [&](const auto& kv) { return kv.first.starts_with(prefix); }));
    }
}

TEST_CASE("load_state is all or nothing") {
    Stage a(16, 16, 1), b(16, 16, 2), c(32, 16, 3);
    const auto before = state_of(*b);
    CHECK_THROWS(load_state(*b, state_of(*c)));
    CHECK(same_state(state_of(*b), before));
    load_state(*b, state_of(*a));
    CHECK(same_state(state_of(*b), state_of(*a)));
}

TEST_CASE("transfer between adjacent stages copies every matching tensor") {
    Stage small(16, 16, 1), big(32, 16, 2);
    const auto source = state_of(*small);
    const auto names = matching_names(source, *big);
    CHECK_FALSE(names.empty());
    CHECK(names.size() < source.size());
    const auto copied = transfer_matching(source, *big);
    CHECK(copied == names);
    const auto after = state_of(*big);
    for (const auto& n : copied) CHECK(torch::equal(after.at(n), source.at(n)));
}

TEST_CASE("checkpoint round trip is bit exact") {
    testing::TempDir dir;
    const auto sample = testing::fixture_sample(3, 0);
    for (auto regime : {Regime::cascaded, Regime::progressive}) {
        CAPTURE(to_string(regime));
        auto c = initial_checkpoint(regime, 16, 9);
        c.epoch = 7;
        c.iteration = 42;
        c.config = tiny_config(regime).to_json();
        c.config_hash = tiny_config(regime).hash();
        save_checkpoint(dir / "c.ckpt", c);
        const auto back = load_checkpoint(dir / "c.ckpt");
        CHECK(back.epoch == 7);
        CHECK(back.iteration == 42);
        CHECK(back.regime == regime);
        CHECK(back.config == c.config);
        CHECK(same_state(back.weights, c.weights));
        CHECK(Hallucinator(c).run(sample.masked, sample.mask) == Hallucinator(back).run(sample.masked, sample.mask));
    }
    auto bytes = testing::slurp(dir / "c.ckpt");
    bytes[bytes.size() / 2] ^= 0x5A;
    {
        std::ofstream f(dir / "bad.ckpt", std::ios::binary);
        f << bytes;
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), ArchiveError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), ArchiveError);
}

TEST_CASE("untrained hallucinator keeps face pixels and stays in range") {
    const auto sample = testing::fixture_sample(4, 1);
    for (auto regime : {Regime::cascaded, Regime::progressive}) {
        CAPTURE(to_string(regime));
        const Hallucinator h(initial_checkpoint(regime, 16, 2));
        const auto out = h.run(sample.masked, sample.mask);
        REQUIRE(out.height == 128);
        REQUIRE(out.channels == 3);
        bool face_kept = true, in_range = true;
        for (int y = 0; y < 128; ++y)
            for (int x = 0; x < 128; ++x)
                for (int ch = 0; ch < 3; ++ch) {
                    const float v = out.at(y, x, ch);
                    in_range = in_range && v >= 0.0f && v <= 1.0f;
                    if (sample.mask.at(y, x) == 1.0f) face_kept = face_kept && v == sample.masked.at(y, x, ch);
                }
        CHECK(face_kept);
        CHECK(in_range);
    }
    CHECK(Hallucinator(initial_checkpoint(Regime::progressive, 16, 2)).blocks_used() == std::vector<int>{128});
    CHECK(Hallucinator(initial_checkpoint(Regime::cascaded, 16, 2)).blocks_used() == std::vector<int>{8, 16, 32, 64, 128});
    CHECK_THROWS(Hallucinator(initial_checkpoint(Regime::cascaded, 16, 2)).run(data::halve(sample.masked), data::halve(sample.mask)));

    auto early = initial_checkpoint(Regime::progressive, 16, 2);
    early.stage = 32;
    CHECK_THROWS(Hallucinator{early});
}

TEST_CASE("metrics csv round trip") {
    testing::TempDir dir;
    MetricRow a{.iteration = 3, .epoch = 1, .stage = 0, .resolution = 32, .pixel = 0.125, .perceptual = 0.5,
                .perceptual_applied = true, .adversarial = 0.25, .identity = 0.0625, .total_variation = 12.5,
                .total = 1.5, .d_real = 0.75, .d_fake = 0.375};
    MetricRow b = a;
    b.resolution = 8;
    b.perceptual_applied = false;
    b.perceptual = 0.0;
    {
        std::ofstream f(dir / "metrics.csv");
        f << metrics_header() << "\n" << format_metrics(a) << "\n" << format_metrics(b) << "\n";
    }
    const auto rows = read_metrics(dir / "metrics.csv");
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].pixel == 0.125);
    CHECK(rows[0].total_variation == 12.5);
    CHECK(rows[0].perceptual_applied);
    CHECK_FALSE(rows[1].perceptual_applied);
    CHECK(rows[1].resolution == 8);
    CHECK(format_metrics(rows[0]) == format_metrics(a));
}

TEST_CASE("cascaded run writes snapshots on schedule") {
    testing::TempDir dir;
    auto cfg = tiny_config();
    cfg.epochs = 50;
    cfg.snapshot_every = 10;
    cfg.batch_size = 2;
    const auto data = testing::fixture_pyramids(2);
    const auto result = train::train(data, cfg, Extractors::defaults(), {.run_dir = dir.path()});

    REQUIRE(result.snapshots.size() == 5);
    for (int k = 0; k < 5; ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%02d.ckpt", 10 * (k + 1));
        CHECK(result.snapshots[k].filename() == name);
        CHECK(fs::exists(result.snapshots[k]));
        CHECK(load_checkpoint(result.snapshots[k]).epoch == 10 * (k + 1));
    }
    CHECK(fs::exists(dir / "final.ckpt"));
    CHECK(load_checkpoint(dir / "final.ckpt").epoch == 50);
    CHECK(fs::exists(dir / "preview.samples"));
    CHECK(fs::exists(dir / "timing.csv"));

    CHECK(result.metrics.size() == 50 * 5);
    const auto rows = read_metrics(dir / "metrics.csv");
    REQUIRE(rows.size() == result.metrics.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(format_metrics(rows[i]) == format_metrics(result.metrics[i]));
        CHECK(rows[i].perceptual_applied == (rows[i].resolution >= 32));
        if (rows[i].resolution < 32) CHECK(rows[i].perceptual == 0.0);
        CHECK(std::isfinite(rows[i].total));
    }
    CHECK(rows.back().iteration == 50);
}

TEST_CASE("resuming reproduces an uninterrupted run") {
    const auto data = testing::fixture_pyramids(4);
    auto cfg = tiny_config();
    cfg.epochs = 4;
    const auto straight = train::train(data, cfg, Extractors::defaults());

    testing::TempDir dir;
    cfg.epochs = 2;
    train::train(data, cfg, Extractors::defaults(), {.run_dir = dir.path()});
    cfg.epochs = 4;
    const auto resumed = train::train(data, cfg, Extractors::defaults(), {.resume = dir / "final.ckpt"});

    CHECK(resumed.final_checkpoint.epoch == 4);
    CHECK(resumed.final_checkpoint.iteration == straight.final_checkpoint.iteration);
    CHECK(same_state(resumed.final_checkpoint.weights, straight.final_checkpoint.weights));
    CHECK(same_state(resumed.final_checkpoint.optimizer, straight.final_checkpoint.optimizer));

    auto changed = cfg;
    changed.width_divisor = 8;
    CHECK_THROWS(train::train(data, changed, Extractors::defaults(), {.resume = dir / "final.ckpt"}));
}

TEST_CASE("disabled terms are logged as zero") {
    const auto data = testing::fixture_pyramids(2);
    auto cfg = tiny_config();
    cfg.epochs = 1;
    cfg.weights.perceptual = 0.0;
    cfg.weights.adversarial = 0.0;
    const auto r = train::train(data, cfg, Extractors::defaults());
    REQUIRE_FALSE(r.metrics.empty());
    for (const auto& m : r.metrics) {
        CHECK(m.perceptual == 0.0);
        CHECK(m.adversarial == 0.0);
        CHECK(m.d_real == 0.0);
        CHECK(m.d_fake == 0.0);
        CHECK(m.pixel > 0.0);
    }
}

TEST_CASE("progressive run grows stage by stage") {
    testing::TempDir dir;
    auto cfg = tiny_config(Regime::progressive);
    cfg.epochs = 1;
    cfg.snapshot_every = 1;
    const auto data = testing::fixture_pyramids(2);
    const auto result = train::train(data, cfg, Extractors::defaults(), {.run_dir = dir.path()});

    REQUIRE(result.stages.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(result.stages[i].resolution == data::kResolutions[i]);
        CHECK(fs::exists(result.stages[i].checkpoint));
        if (i > 0) {
            CHECK(result.stages[i].parameters > result.stages[i - 1].parameters);
            CHECK_FALSE(result.stages[i].matchable.empty());
            CHECK(result.stages[i].transferred == result.stages[i].matchable);
        }
    }
    CHECK(result.snapshots.size() == 1);
    CHECK(result.final_checkpoint.stage == 128);
    CHECK(Hallucinator(result.final_checkpoint).blocks_used() == std::vector<int>{128});
    for (const auto& m : result.metrics) CHECK(m.resolution == m.stage);
}

TEST_CASE("training requires a seed and a matching regime") {
    const auto data = testing::fixture_pyramids(2);
    TrainConfig unseeded;
    unseeded.width_divisor = 16;
    CHECK_THROWS_AS(train::train(data, unseeded, Extractors::defaults()), std::invalid_argument);
    CHECK_THROWS_AS(train_cascaded(data, tiny_config(Regime::progressive), Extractors::defaults()), std::invalid_argument);
    CHECK_THROWS(train::train(std::vector<data::ImagePyramid>{}, tiny_config(), Extractors::defaults()));
}

TEST_CASE("two identical runs give identical metrics") {
    const auto data = testing::fixture_pyramids(2);
    auto cfg = tiny_config();
    const auto a = train::train(data, cfg, Extractors::defaults());
    const auto b = train::train(data, cfg, Extractors::defaults());
    REQUIRE(a.metrics.size() == b.metrics.size());
    for (std::size_t i = 0; i < a.metrics.size(); ++i) CHECK(format_metrics(a.metrics[i]) == format_metrics(b.metrics[i]));
    CHECK(same_state(a.final_checkpoint.weights, b.final_checkpoint.weights));
}

TEST_CASE("run directory lock is exclusive") {
    testing::TempDir dir;
    RunDirLock first(dir.path());
    CHECK_THROWS_AS(RunDirLock{dir.path()}, std::runtime_error);
}

TEST_CASE("pixel-only training overfits a small set") {
    const auto data = testing::fixture_pyramids(4);
    auto cfg = tiny_config();
    cfg.width_divisor = 8;
    cfg.batch_size = 4;
    cfg.epochs = 150;
    cfg.weights = {0.0, 0.0, 0.0, 0.0};
    const auto r = train::train(data, cfg, Extractors::defaults());
    double first = -1.0, last = 0.0;
    int n_last = 0;
    for (const auto& m : r.metrics) {
        if (m.resolution != 128) continue;
        if (first < 0.0) first = m.pixel;
        if (m.epoch >= 141) {
            last += m.pixel;
            ++n_last;
        }
        CHECK(m.total == m.pixel);
    }
    REQUIRE(n_last > 0);
    last /= n_last;
    MESSAGE("block_128 pixel loss " << first << " -> " << last);
    CHECK(last < 0.5 * first);

    const Hallucinator h(r.final_checkpoint);
    const auto& s = data[0].at(128);
    const auto out = h.run(s.masked, s.mask);
    double err_out = 0.0, err_in = 0.0;
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        err_out += std::abs(out.pixels[i] - s.ground_truth.pixels[i]);
        err_in += std::abs(s.masked.pixels[i] - s.ground_truth.pixels[i]);
    }
    CHECK(err_out < err_in);
}

}
