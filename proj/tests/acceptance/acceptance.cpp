// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance            run all twelve
//   acceptance --only 6   run one

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <sys/wait.h>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "maskfill/evaluation.hpp"
#include "maskfill/extractors.hpp"
#include "maskfill/losses.hpp"
#include "maskfill/netblocks.hpp"
#include "maskfill/postproc.hpp"
#include "maskfill/training.hpp"
#include "reference_tables.hpp"

using namespace maskfill;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void expect(bool ok, const std::string& what) {
        if (ok) return;
        pass = false;
        if (!detail.empty()) detail += "; ";
        detail += what;
    }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

class FlatExtractor final : public FeatureExtractor {
public:
    int input_size() const override { return 1; }
    int feature_dim() const override { return 2; }
    torch::Tensor forward(const torch::Tensor& images) const override { return images.flatten(1); }
};

torch::Tensor d64(std::vector<double> v) { return torch::tensor(v, torch::kFloat64); }

// Eight samples, two per subject.
const std::vector<data::ImagePyramid>& fixture() {
    static const auto pyramids = testing::fixture_pyramids(8, 21);
    return pyramids;
}

train::TrainConfig small_config(train::Regime regime, int width_divisor, int epochs) {
    train::TrainConfig c;
    c.regime = regime;
    c.seed = 1234;
    c.width_divisor = width_divisor;
    c.batch_size = 4;
    c.epochs = epochs;
    c.snapshot_every = 0;
    return c;
}

bool face_preserved(const train::Hallucinator& h, const data::FaceSample& s) {
    const auto out = h.run(s.masked, s.mask);
    for (int y = 0; y < s.mask.height; ++y)
        for (int x = 0; x < s.mask.width; ++x)
            if (s.mask.at(y, x) == 1.0f)
                for (int c = 0; c < 3; ++c)
                    if (out.at(y, x, c) != s.masked.at(y, x, c)) return false;
    return true;
}

// ---------------------------------------------------------------------------

Outcome architecture_audit() {
    Outcome o;
    for (const auto& [res, table] : testing::generator_tables()) {
        const auto view = testing::table_view(nets::generator_spec(res));
        if (view.size() != table.size()) {
            o.expect(false, "block_" + std::to_string(res) + " has " + std::to_string(view.size()) + " rows, table " +
                                std::to_string(table.size()));
            continue;
        }
        for (std::size_t i = 0; i < table.size(); ++i) {
            o.expect(testing::operator==(view[i], table[i]), "block_" + std::to_string(res) + " row " + std::to_string(i) +
                                                                 ": " + testing::describe(view[i]) + " vs " +
                                                                 testing::describe(table[i]));
        }
        // Built modules have the audited parameter count (reduced width keeps this fast).
        const auto g = nets::build_generator(res, 16, 0);
        o.expect(nets::count_parameters(*g) == nets::generator_spec(res, 16).parameter_count(),
                 "block_" + std::to_string(res) + " parameter count");
    }
    for (int r : {16, 32, 64, 128}) {
        const auto big = nets::generator_spec(r), small = nets::generator_spec(r / 2);
        o.expect(small.residual_blocks() == big.residual_blocks() - 1, "residual blocks " + std::to_string(r));
        o.expect(small.pixel_shuffle_stages() == big.pixel_shuffle_stages() - 1, "pixel shuffle stages " + std::to_string(r));
    }
    if (o.pass) o.detail = "5 blocks match their tables";
    return o;
}

Outcome pixel_shuffle_oracle() {
    Outcome o;
    std::mt19937 rng(77);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    int tensors = 0;
    for (std::int64_t r : {1, 2, 4})
        for (std::int64_t c = 1; c <= 16; ++c) {
            if (c % (r * r) != 0) continue;
            for (std::int64_t h = 1; h <= 4; ++h)
                for (std::int64_t w = 1; w <= 4; ++w) {
                    auto in = torch::empty({1, c, h, w});
                    auto a = in.accessor<float, 4>();
                    for (std::int64_t k = 0; k < c; ++k)
                        for (std::int64_t y = 0; y < h; ++y)
                            for (std::int64_t x = 0; x < w; ++x) a[0][k][y][x] = u(rng);
                    const auto out = nets::pixel_shuffle(in, r);
                    const auto co = c / (r * r);
                    bool ok = out.sizes() == torch::IntArrayRef({1, co, h * r, w * r});
                    if (ok) {
                        auto b = out.accessor<float, 4>();
                        for (std::int64_t k = 0; k < co && ok; ++k)
                            for (std::int64_t y = 0; y < h * r && ok; ++y)
                                for (std::int64_t x = 0; x < w * r && ok; ++x)
                                    ok = b[0][k][y][x] == a[0][k * r * r + (y % r) * r + (x % r)][y / r][x / r];
                    }
                    ok = ok && torch::equal(nets::pixel_unshuffle(out, r), in);
                    o.expect(ok, "r=" + std::to_string(r) + " c=" + std::to_string(c) + " " + std::to_string(h) + "x" +
                                     std::to_string(w));
                    ++tensors;
                }
        }
    if (o.pass) o.detail = std::to_string(tensors) + " tensors bit-exact";
    return o;
}

Outcome loss_identities() {
    Outcome o;
    auto near = [](const torch::Tensor& t, double v) { return std::abs(t.item<double>() - v) <= 1e-12; };
    const auto a = torch::rand({2, 3, 32, 32}, torch::kFloat64);
    FlatExtractor flat;
    auto metric = default_perceptual_metric();

    const auto af = a.to(torch::kFloat32);
    o.expect(loss::pixel_loss(a, a).item<double>() == 0.0, "pixel identity");
    o.expect(loss::perceptual_loss(af, af, *metric)->item<double>() == 0.0,
             "perceptual identity");
    o.expect(loss::adversarial_loss_g(torch::ones({4}, torch::kFloat64)).item<double>() == 0.0, "adversarial identity");
    o.expect(loss::identity_loss(af, af, *default_identity_extractor()).item<double>() == 0.0, "identity identity");
    o.expect(loss::tv_loss(torch::full({1, 3, 5, 5}, 0.4, torch::kFloat64)).item<double>() == 0.0, "tv identity");

    o.expect(near(loss::pixel_loss(d64({0.2}).reshape({1, 1, 1, 1}), d64({0.5}).reshape({1, 1, 1, 1})), 0.3), "pixel 0.3");
    o.expect(near(loss::tv_loss(d64({0.0, 1.0, 1.0, 0.0}).reshape({1, 1, 2, 2})), 4.0), "tv 4.0");
    o.expect(near(loss::adversarial_loss_g(d64({0.5, 0.5})), 0.25), "adversarial 0.25");
    o.expect(near(loss::identity_loss(torch::zeros({1, 2, 1, 1}, torch::kFloat64), torch::ones({1, 2, 1, 1}, torch::kFloat64), flat),
                  1.0),
             "identity 1.0");
    if (o.pass) o.detail = "zero on identity cases, hand values within 1e-12";
    return o;
}

Outcome gradient_checks() {
    Outcome o;
    torch::manual_seed(8);
    const auto gt = torch::rand({2, 3, 32, 32}, torch::kFloat64);
    const auto gen = torch::rand({2, 3, 32, 32}, torch::kFloat64);
    double worst = 0.0;
    auto check = [&](const std::string& name, const testing::GradCheck& r) {
        worst = std::max(worst, r.max_relative_error);
        o.expect(r.probes >= 20 && r.max_relative_error < 1e-4, name + " rel err " + fmt("%.3g", r.max_relative_error));
    };
    check("pixel", testing::gradcheck([&](const torch::Tensor& x) { return loss::pixel_loss(gt, x); }, gen, 20, 1));
    check("tv", testing::gradcheck([](const torch::Tensor& x) { return loss::tv_loss(x); }, gen, 20, 2));
    check("adversarial", testing::gradcheck([](const torch::Tensor& x) { return loss::adversarial_loss_g(x); },
                                            torch::rand({8}, torch::kFloat64), 20, 3));
    check("discriminator", testing::gradcheck(
                               [](const torch::Tensor& x) { return loss::discriminator_loss(x, x.flip(0), 0.9); },
                               torch::rand({8}, torch::kFloat64), 20, 4));
    auto identity = default_identity_extractor();
    identity->to(torch::kFloat64);
    check("identity", testing::gradcheck([&](const torch::Tensor& x) { return loss::identity_loss(x, gt, *identity); }, gen, 20, 5));
    auto stack = std::make_shared<ConvFeatureStack>(ConvStackConfig{32, {16, 32, 64}, 1, false}, 0x1D0002);
    stack->to(torch::kFloat64);
    ConvPerceptualMetric metric(stack);
    check("perceptual",
          testing::gradcheck([&](const torch::Tensor& x) { return *loss::perceptual_loss(x, gt, metric); }, gen, 20, 6));

    // Generator slice: block_8 at reduced width, every weight tensor probed
    // in place, plus the gradient with respect to the input image.
    auto g = nets::build_generator(8, 16, 3);
    g->to(torch::kFloat64);
    const auto x8 = torch::rand({2, 3, 8, 8}, torch::kFloat64), t8 = torch::rand({2, 3, 8, 8}, torch::kFloat64);
    auto objective = [&] { return loss::pixel_loss(t8, g->forward(x8), loss::PixelNorm::l2); };
    g->zero_grad();
    objective().backward();
    std::mt19937 rng(9);
    int probes = 0;
    double slice_worst = 0.0;
    for (const auto& item : g->named_parameters()) {
        auto p = item.value();
        if (p.dim() < 2) continue;
        const auto grad = p.grad().flatten();
        auto flat = p.data().view({-1});
        std::uniform_int_distribution<std::int64_t> pick(0, p.numel() - 1);
        for (int k = 0; k < 3; ++k) {
            const auto idx = pick(rng);
            const double h = 1e-6, orig = flat[idx].item<double>();
            double fp, fm;
            {
                torch::NoGradGuard ng;
                flat[idx] = orig + h;
                fp = objective().item<double>();
                flat[idx] = orig - h;
                fm = objective().item<double>();
                flat[idx] = orig;
            }
            const double numeric = (fp - fm) / (2 * h), analytic = grad[idx].item<double>();
            slice_worst = std::max(slice_worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6}));
            ++probes;
        }
    }
    worst = std::max(worst, slice_worst);
    o.expect(probes >= 20 && slice_worst < 1e-4, "generator weights rel err " + fmt("%.3g", slice_worst));
    check("generator input",
          testing::gradcheck([&](const torch::Tensor& x) { return loss::pixel_loss(t8, g->forward(x), loss::PixelNorm::l2); }, x8,
                             20, 7));
    if (o.pass) o.detail = "7 checks, worst relative error " + fmt("%.2e", worst);
    return o;
}

Outcome mask_preservation() {
    Outcome o;
    std::vector<data::FaceSample> samples;
    for (int i = 0; i < 4; ++i) samples.push_back(fixture()[i].at(128));
    samples.push_back(testing::fixture_sample(91, 3));
    auto check = [&](const train::Checkpoint& c, const std::string& what) {
        const train::Hallucinator h(c);
        for (const auto& s : samples) o.expect(face_preserved(h, s), what);
    };
    check(train::initial_checkpoint(train::Regime::cascaded, 16, 1), "random cascaded");
    check(train::initial_checkpoint(train::Regime::progressive, 16, 1), "random progressive");
    const std::vector<data::ImagePyramid> few(fixture().begin(), fixture().begin() + 4);
    check(train::train(few, small_config(train::Regime::cascaded, 16, 2), train::Extractors::defaults()).final_checkpoint,
          "trained cascaded");
    check(train::train(few, small_config(train::Regime::progressive, 16, 1), train::Extractors::defaults()).final_checkpoint,
          "trained progressive");
    if (o.pass) o.detail = "mask pixels bit-exact for random and trained weights";
    return o;
}

Outcome overfit_convergence() {
    Outcome o;
    // 8 samples at batch 4 give 2 iterations per epoch.
    auto cfg = small_config(train::Regime::cascaded, 2, 100);
    cfg.max_iterations = 200;
    const auto r = train::train(fixture(), cfg, train::Extractors::defaults());
    double first = std::numeric_limits<double>::quiet_NaN(), last = 0.0;
    int n_last = 0;
    std::int64_t iterations = 0;
    for (const auto& m : r.metrics) {
        if (m.resolution != 128) continue;
        iterations = std::max(iterations, m.iteration);
        if (m.iteration == 1) first = m.pixel;
        if (m.epoch == r.final_checkpoint.epoch) {
            last += m.pixel;
            ++n_last;
        }
    }
    o.expect(iterations == 200, "ran " + std::to_string(iterations) + " iterations");
    o.expect(n_last > 0 && std::isfinite(first), "missing block_128 rows");
    if (n_last > 0) last /= n_last;
    const double drop = 1.0 - last / first;
    o.expect(drop >= 0.5, "drop " + fmt("%.1f%%", 100 * drop));
    o.detail = "block_128 pixel loss " + fmt("%.4f", first) + " -> " + fmt("%.4f", last) + " (" + fmt("%.1f%%", 100 * drop) +
               " drop)" + (o.pass ? "" : "; " + o.detail);
    return o;
}

Outcome progressive_regime() {
    Outcome o;
    testing::TempDir dir;
    const auto cfg = small_config(train::Regime::progressive, 4, 10);
    const auto r = train::train(fixture(), cfg, train::Extractors::defaults(), {.run_dir = dir.path()});
    o.expect(r.stages.size() == 5, std::to_string(r.stages.size()) + " stages");
    std::string counts;
    for (std::size_t i = 0; i < r.stages.size(); ++i) {
        const auto& s = r.stages[i];
        counts += (i ? "<" : "") + std::to_string(s.parameters);
        o.expect(s.resolution == data::kResolutions[i], "stage order");
        if (i == 0) continue;
        o.expect(s.parameters > r.stages[i - 1].parameters, "parameters do not increase at " + std::to_string(s.resolution));
        // Recompute the matchable set from the saved previous stage.
        const auto prev = train::load_checkpoint(r.stages[i - 1].checkpoint);
        train::Stage fresh(s.resolution, cfg.width_divisor, *cfg.seed);
        const auto expected = train::matching_names(prev.weights, *fresh);
        o.expect(!expected.empty(), "nothing matchable at " + std::to_string(s.resolution));
        o.expect(s.matchable == expected, "matchable set differs at " + std::to_string(s.resolution));
        o.expect(s.transferred == expected, "not every matching tensor transferred at " + std::to_string(s.resolution));
    }
    const train::Hallucinator h(r.final_checkpoint);
    o.expect(h.blocks_used() == std::vector<int>{128}, "inference uses more than block_128");
    train::Stage last(128, cfg.width_divisor, 0);
    o.expect(r.final_checkpoint.weights.size() == train::state_of(*last).size(), "final checkpoint is not a single stage");
    for (const auto& s : fixture()) o.expect(face_preserved(h, s.at(128)), "mask pixels changed");
    if (o.pass) o.detail = "parameters " + counts + ", all matching tensors transferred";
    return o;
}

Outcome perceptual_exclusion() {
    Outcome o;
    auto metric = default_perceptual_metric();
    for (int r : data::kResolutions) {
        const auto a = torch::rand({2, 3, r, r}), b = torch::rand({2, 3, r, r});
        const bool present = loss::perceptual_loss(a, b, *metric).has_value();
        o.expect(present == (r >= 32), "loss presence at " + std::to_string(r));
    }
    const std::vector<data::ImagePyramid> few(fixture().begin(), fixture().begin() + 4);
    const auto run = train::train(few, small_config(train::Regime::cascaded, 16, 2), train::Extractors::defaults());
    int applied = 0;
    for (const auto& m : run.metrics) {
        o.expect(m.perceptual_applied == (m.resolution >= 32), "logged presence at " + std::to_string(m.resolution));
        if (m.resolution < 32) o.expect(m.perceptual == 0.0, "non-zero term at " + std::to_string(m.resolution));
        else applied += m.perceptual > 0.0;
    }
    o.expect(applied > 0, "term never contributes at 32+");
    if (o.pass) o.detail = "absent at 8/16, present at 32/64/128";
    return o;
}

double tpr_bruteforce(const std::vector<double>& genuine, const std::vector<double>& impostor, double target) {
    std::vector<double> candidates{std::numeric_limits<double>::infinity()};
    candidates.insert(candidates.end(), genuine.begin(), genuine.end());
    candidates.insert(candidates.end(), impostor.begin(), impostor.end());
    double best = 0.0;
    for (double t : candidates) {
        std::size_t g = 0, i = 0;
        for (double s : genuine) g += s >= t;
        for (double s : impostor) i += s >= t;
        if (static_cast<double>(i) / static_cast<double>(impostor.size()) <= target)
            best = std::max(best, static_cast<double>(g) / static_cast<double>(genuine.size()));
    }
    return best;
}

Outcome verification_harness() {
    Outcome o;
    std::mt19937_64 rng(4242);
    std::uniform_int_distribution<int> size(1, 60), coarse(0, 25);
    std::normal_distribution<double> n(0.0, 1.0);
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> g(size(rng)), i(size(rng));
        const bool ties = trial % 3 == 0;
        for (auto& s : g) s = ties ? coarse(rng) / 25.0 : n(rng) + 1.0;
        for (auto& s : i) s = ties ? coarse(rng) / 25.0 : n(rng);
        const auto r = eval::verification_roc(g, i);
        for (double f : {0.0, 0.001, 0.01, 0.05, 0.1, 0.25, 0.5, 1.0}) mismatches += r.tpr_at(f) != tpr_bruteforce(g, i, f);
    }
    o.expect(mismatches == 0, std::to_string(mismatches) + " mismatches against enumeration");

    std::vector<double> g(100000), i(100000);
    for (auto& s : g) s = n(rng);
    for (auto& s : i) s = n(rng);
    const double tpr = eval::verification_roc(g, i).tpr_at(0.01);
    o.expect(std::abs(tpr - 0.01) <= 0.01, "simulated TPR " + fmt("%.4f", tpr));
    if (o.pass) o.detail = "1000 sets bit-equal; simulated TPR@FPR=0.01 is " + fmt("%.4f", tpr);
    return o;
}

double max_abs_diff(const Image& a, const Image& b) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.pixels.size(); ++k) m = std::max(m, static_cast<double>(std::abs(a.pixels[k] - b.pixels[k])));
    return m;
}

Outcome laplacian_blending() {
    Outcome o;
    std::mt19937 rng(3);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    auto random_image = [&](int h, int w, int c) {
        Image im(h, w, c);
        for (auto& v : im.pixels) v = u(rng);
        return im;
    };
    double worst = 0.0;
    for (auto [h, w] : {std::pair{64, 64}, std::pair{96, 128}, std::pair{37, 53}}) {
        const auto fg = random_image(h, w, 3), bg = random_image(h, w, 3);
        const double ones = max_abs_diff(post::laplacian_blend(fg, bg, Image(h, w, 1, 1.0f)), fg);
        const double zeros = max_abs_diff(post::laplacian_blend(fg, bg, Image(h, w, 1, 0.0f)), bg);
        const int levels = post::max_levels(h, w);
        const double round = max_abs_diff(fg, post::from_mat(post::collapse(post::laplacian_pyramid(post::to_mat(fg), levels))));
        worst = std::max({worst, ones, zeros, round});
        o.expect(ones <= 1e-6, "all-ones mask " + fmt("%.2e", ones));
        o.expect(zeros <= 1e-6, "all-zeros mask " + fmt("%.2e", zeros));
        o.expect(round <= 1e-6, "round trip " + fmt("%.2e", round));
    }
    if (o.pass) o.detail = "worst deviation " + fmt("%.2e", worst);
    return o;
}

int shell(const std::string& cmd, const fs::path& log) {
    const int status = std::system((cmd + " >> '" + log.string() + "' 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome cli_smoke() {
    Outcome o;
    testing::TempDir dir;
    const std::string bin = MASKFILL_BIN;
    const auto d = [&](const std::string& leaf) { return "'" + (dir / leaf).string() + "'"; };
    const auto log = dir / "log.txt";
    const std::vector<std::pair<std::string, std::string>> steps{
        {"synth", bin + " synth --out " + d("raw") + " --subjects 4 --per-subject 2 --seed 5"},
        {"preprocess", bin + " preprocess --images " + d("raw/images") + " --landmarks " + d("raw/landmarks") + " --out " +
                           d("samples.maskfill") + " --export " + d("export")},
        {"train", bin + " train --samples " + d("samples.maskfill") + " --seed 5 --width-divisor 8 --batch-size 4" +
                      " --epochs 25 --max-iterations 50 --snapshot-every 5 --run-dir " + d("run")},
        {"hallucinate", bin + " hallucinate --checkpoint " + d("run/final.ckpt") + " --masks " + d("export/masks") + " --out " +
                            d("synth") + " --grid " + d("grid.png") + " " + d("export/masked")},
        {"evaluate", bin + " evaluate --real " + d("export/aligned") + " --synth " + d("synth") + " --out " + d("eval")},
        {"plot", bin + " plot --run-dir " + d("run")},
    };
    for (const auto& [name, cmd] : steps) {
        const int code = shell("env -u MASKFILL_RUN_DIR " + cmd, log);
        o.expect(code == 0, name + " exited " + std::to_string(code));
        if (code != 0) {
            std::cerr << testing::slurp(log);
            return o;
        }
    }
    const auto rows = train::read_metrics(dir / "run" / "metrics.csv");
    o.expect(!rows.empty() && rows.back().iteration == 50, "train did not stop at 50 iterations");
    for (const char* f : {"run/loss.png", "run/snapshots.png", "eval/report.csv", "grid.png"})
        o.expect(fs::exists(dir / f), std::string("missing ") + f);
    if (o.pass) o.detail = "6 commands exited 0";
    return o;
}

Outcome determinism() {
    Outcome o;
    testing::TempDir a, b;
    auto cfg = small_config(train::Regime::cascaded, 8, 5);
    cfg.snapshot_every = 5;
    train::train(fixture(), cfg, train::Extractors::defaults(), {.run_dir = a.path()});
    train::train(fixture(), cfg, train::Extractors::defaults(), {.run_dir = b.path()});
    const auto ma = testing::slurp(a / "metrics.csv"), mb = testing::slurp(b / "metrics.csv");
    o.expect(!ma.empty(), "empty metrics.csv");
    o.expect(ma == mb, "metrics.csv differs");
    o.expect(testing::slurp(a / "final.ckpt") == testing::slurp(b / "final.ckpt"), "final checkpoints differ");
    if (o.pass) o.detail = "metrics.csv identical (" + std::to_string(std::count(ma.begin(), ma.end(), '\n')) + " lines)";
    return o;
}

struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    int only = 0;
    app.add_option("--only", only, "Run a single criterion")->check(CLI::Range(1, 12));
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> criteria{
        {1, "architecture audit", 1, architecture_audit},
        {2, "pixel-shuffle oracle", 5, pixel_shuffle_oracle},
        {3, "loss identities", 1, loss_identities},
        {4, "gradient checks", 60, gradient_checks},
        {5, "mask preservation", 5, mask_preservation},
        {6, "overfit convergence", 15 * 60, overfit_convergence},
        {7, "progressive regime", 20 * 60, progressive_regime},
        {8, "perceptual exclusion", 60, perceptual_exclusion},
        {9, "verification harness", 30, verification_harness},
        {10, "laplacian blending", 5, laplacian_blending},
        {11, "end-to-end cli", 10 * 60, cli_smoke},
        {12, "determinism", 15 * 60, determinism},
    };

    torch::manual_seed(0);
    int failures = 0;
    for (const auto& c : criteria) {
        if (only != 0 && c.id != only) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            const std::string what = e.what();
            out = {false, "exception: " + what.substr(0, what.find('\n'))};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (seconds > c.budget_seconds) out.expect(false, "over the " + fmt("%.0f s", c.budget_seconds) + " budget");
        std::printf("criterion %2d %-22s %s  %s [%.2f s]\n", c.id, c.name, out.pass ? "PASS" : "FAIL", out.detail.c_str(),
                    seconds);
        std::fflush(stdout);
        failures += !out.pass;
    }
    return failures == 0 ? 0 : 1;
}
