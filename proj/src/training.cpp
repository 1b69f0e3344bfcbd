#include "maskfill/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>
#include <zlib.h>

#include "maskfill/tensor_io.hpp"

namespace maskfill::train {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Regime regime) { return regime == Regime::cascaded ? "cascaded" : "progressive"; }

Regime regime_from_string(const std::string& name) {
    if (name == "cascaded") return Regime::cascaded;
    if (name == "progressive") return Regime::progressive;
    throw std::invalid_argument("unknown regime '" + name + "' (expected cascaded or progressive)");
}

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
    if (!seed) throw std::invalid_argument("a seed is required");
    if (!(generator_lr > 0.0) || !(discriminator_lr > 0.0)) throw std::invalid_argument("learning rates must be positive");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
    if (epochs < 1) throw std::invalid_argument("epochs must be positive");
    if (max_iterations < 0) throw std::invalid_argument("max_iterations must be nonnegative");
    if (snapshot_every < 0) throw std::invalid_argument("snapshot_every must be nonnegative");
    if (!(real_label > 0.0 && real_label <= 1.0)) throw std::invalid_argument("real_label must be in (0, 1]");
    weights.validate();
    nets::check_width_divisor(width_divisor);
}

json TrainConfig::to_json() const {
    json j;
    j["regime"] = to_string(regime);
    j["generator_lr"] = generator_lr;
    j["discriminator_lr"] = discriminator_lr;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["max_iterations"] = max_iterations;
    j["lambda_perceptual"] = weights.perceptual;
    j["lambda_adversarial"] = weights.adversarial;
    j["lambda_identity"] = weights.identity;
    j["lambda_tv"] = weights.total_variation;
    j["pixel_norm"] = pixel_norm == loss::PixelNorm::l1 ? "l1" : "l2";
    j["real_label"] = real_label;
    j["seed"] = seed ? json(*seed) : json(nullptr);
    j["snapshot_every"] = snapshot_every;
    j["width_divisor"] = width_divisor;
    j["detach_between_blocks"] = detach_between_blocks;
    j["shuffle"] = shuffle;
    return j;
}

TrainConfig TrainConfig::from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
    TrainConfig c;
    for (const auto& [key, value] : j.items()) {
        if (key == "regime") c.regime = regime_from_string(value.get<std::string>());
        else if (key == "generator_lr") c.generator_lr = value.get<double>();
        else if (key == "discriminator_lr") c.discriminator_lr = value.get<double>();
        else if (key == "batch_size") c.batch_size = value.get<int>();
        else if (key == "epochs") c.epochs = value.get<int>();
        else if (key == "max_iterations") c.max_iterations = value.get<std::int64_t>();
        else if (key == "lambda_perceptual") c.weights.perceptual = value.get<double>();
        else if (key == "lambda_adversarial") c.weights.adversarial = value.get<double>();
        else if (key == "lambda_identity") c.weights.identity = value.get<double>();
        else if (key == "lambda_tv") c.weights.total_variation = value.get<double>();
        else if (key == "pixel_norm") {
            const auto n = value.get<std::string>();
            if (n != "l1" && n != "l2") throw std::invalid_argument("pixel_norm must be l1 or l2");
            c.pixel_norm = n == "l1" ? loss::PixelNorm::l1 : loss::PixelNorm::l2;
        } else if (key == "real_label") c.real_label = value.get<double>();
        else if (key == "seed") {
            if (!value.is_null()) c.seed = value.get<std::uint64_t>();
        } else if (key == "snapshot_every") c.snapshot_every = value.get<int>();
        else if (key == "width_divisor") c.width_divisor = value.get<int>();
        else if (key == "detach_between_blocks") c.detach_between_blocks = value.get<bool>();
        else if (key == "shuffle") c.shuffle = value.get<bool>();
        else throw std::invalid_argument("unknown config key '" + key + "'");
    }
    return c;
}

std::string TrainConfig::hash() const {
    const auto text = to_json().dump();
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(text.data()), static_cast<uInt>(text.size()));
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
    return buf;
}

// ---------------------------------------------------------------------------
// Models

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

CascadeImpl::CascadeImpl(int width_divisor, std::uint64_t seed) {
    for (std::size_t i = 0; i < 5; ++i) {
        const int r = data::kResolutions[i];
        generators[i] = register_module("generator_" + std::to_string(r), nets::build_generator(r, width_divisor, derive_seed(seed, i)));
        discriminators[i] = register_module("discriminator_" + std::to_string(r),
                                            nets::build_discriminator(r, width_divisor, derive_seed(seed, 10 + i)));
        if (i < 4) upscalers[i] = register_module("upscaler_" + std::to_string(r), nets::build_upscaler(derive_seed(seed, 20 + i)));
    }
}

std::vector<torch::Tensor> CascadeImpl::forward(const std::vector<torch::Tensor>& masked, const std::vector<torch::Tensor>& masks,
                                                bool detach_between_blocks) {
    TORCH_CHECK(masked.size() == 5 && masks.size() == 5, "cascade expects five pyramid levels");
    std::vector<torch::Tensor> outputs;
    torch::Tensor x = masked[0];
    for (std::size_t i = 0; i < 5; ++i) {
        const auto composed = loss::mask_compose(generators[i]->forward(x), masked[i], masks[i]);
        outputs.push_back(composed);
        if (i == 4) break;
        auto up = upscalers[i]->forward(detach_between_blocks ? composed.detach() : composed).clamp(0.0, 1.0);
        x = loss::mask_compose(up, masked[i + 1], masks[i + 1]);
    }
    return outputs;
}

StageImpl::StageImpl(int resolution_, int width_divisor, std::uint64_t seed) : resolution(resolution_) {
    const auto i = static_cast<std::uint64_t>(data::level_index(resolution));
    generator = register_module("generator", nets::build_generator(resolution, width_divisor, derive_seed(seed, i)));
    discriminator = register_module("discriminator", nets::build_discriminator(resolution, width_divisor, derive_seed(seed, 10 + i)));
}

// ---------------------------------------------------------------------------
// State and checkpoints

std::map<std::string, torch::Tensor> state_of(const torch::nn::Module& module) {
    std::map<std::string, torch::Tensor> out;
    for (const auto& p : module.named_parameters(true)) out[p.key()] = p.value().detach().clone();
    for (const auto& b : module.named_buffers(true)) out[b.key()] = b.value().detach().clone();
    return out;
}

namespace {

std::map<std::string, torch::Tensor> live_tensors(const torch::nn::Module& module) {
    std::map<std::string, torch::Tensor> out;
    for (const auto& p : module.named_parameters(true)) out[p.key()] = p.value();
    for (const auto& b : module.named_buffers(true)) out[b.key()] = b.value();
    return out;
}

}  // namespace

void load_state(torch::nn::Module& module, const std::map<std::string, torch::Tensor>& state) {
    auto live = live_tensors(module);
    for (const auto& [name, t] : live) {
        const auto it = state.find(name);
        if (it == state.end()) throw std::runtime_error("state is missing tensor " + name);
        if (it->second.sizes() != t.sizes()) {
            throw std::runtime_error("shape mismatch for " + name + ": " + c10::str(it->second.sizes()) + " vs " + c10::str(t.sizes()));
        }
    }
    for (const auto& [name, t] : state) {
        if (!live.count(name)) throw std::runtime_error("state has unexpected tensor " + name);
    }
    torch::NoGradGuard no_grad;
    for (auto& [name, t] : live) t.copy_(state.at(name));
}

std::vector<std::string> matching_names(const std::map<std::string, torch::Tensor>& source, const torch::nn::Module& target) {
    std::vector<std::string> names;
    for (const auto& [name, t] : live_tensors(target)) {
        const auto it = source.find(name);
        if (it != source.end() && it->second.sizes() == t.sizes()) names.push_back(name);
    }
    return names;
}

std::vector<std::string> transfer_matching(const std::map<std::string, torch::Tensor>& source, torch::nn::Module& target) {
    auto live = live_tensors(target);
    const auto names = matching_names(source, target);
    torch::NoGradGuard no_grad;
    for (const auto& n : names) live.at(n).copy_(source.at(n));
    return names;
}

void save_checkpoint(const fs::path& path, const Checkpoint& c) {
    Archive a;
    a.metadata = {{"kind", "maskfill-checkpoint"},
                  {"format_version", Checkpoint::kFormatVersion},
                  {"regime", to_string(c.regime)},
                  {"epoch", c.epoch},
                  {"stage", c.stage},
                  {"iteration", c.iteration},
                  {"width_divisor", c.width_divisor},
                  {"config_hash", c.config_hash},
                  {"config", c.config}};
    for (const auto& [name, t] : c.weights) a.add(to_named_array("w/" + name, t));
    for (const auto& [name, t] : c.optimizer) {
        if (t.scalar_type() == torch::kInt64) {
            NamedArray arr;
            arr.name = "opt/" + name;
            arr.dtype = DType::i64;
            const auto v = t.contiguous();
            arr.shape.assign(v.sizes().begin(), v.sizes().end());
            arr.bytes.resize(static_cast<std::size_t>(v.numel()) * sizeof(std::int64_t));
            std::memcpy(arr.bytes.data(), v.data_ptr(), arr.bytes.size());
            a.add(std::move(arr));
        } else {
            a.add(to_named_array("opt/" + name, t));
        }
    }
    a.save(path);
}

Checkpoint load_checkpoint(const fs::path& path) {
    const auto a = Archive::load(path);
    if (a.metadata.value("kind", "") != "maskfill-checkpoint") throw ArchiveError(path.string() + " is not a checkpoint");
    const int version = a.metadata.value("format_version", -1);
    if (version != Checkpoint::kFormatVersion) {
        throw ArchiveError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(Checkpoint::kFormatVersion) + ")");
    }
    Checkpoint c;
    try {
        c.regime = regime_from_string(a.metadata.at("regime").get<std::string>());
        c.epoch = a.metadata.at("epoch").get<int>();
        c.stage = a.metadata.at("stage").get<int>();
        c.iteration = a.metadata.at("iteration").get<std::int64_t>();
        c.width_divisor = a.metadata.at("width_divisor").get<int>();
        c.config_hash = a.metadata.at("config_hash").get<std::string>();
        c.config = a.metadata.at("config");
    } catch (const json::exception& e) {
        throw ArchiveError(std::string("checkpoint metadata is malformed: ") + e.what());
    }
    for (const auto& e : a.entries()) {
        if (e.name.rfind("w/", 0) == 0) c.weights[e.name.substr(2)] = to_tensor(e);
        else if (e.name.rfind("opt/", 0) == 0) c.optimizer[e.name.substr(4)] = to_tensor(e);
        else throw ArchiveError("unexpected checkpoint entry " + e.name);
    }
    return c;
}

// ---------------------------------------------------------------------------
// Metrics

std::string metrics_header() {
    return "iteration,epoch,stage,resolution,pixel,perceptual,perceptual_applied,adversarial,identity,tv,total,"
           "d_real_loss,d_fake_loss";
}

std::string format_metrics(const MetricRow& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%lld,%d,%d,%d,%.17g,%.17g,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                  static_cast<long long>(r.iteration), r.epoch, r.stage, r.resolution, r.pixel, r.perceptual,
                  r.perceptual_applied ? 1 : 0, r.adversarial, r.identity, r.total_variation, r.total, r.d_real, r.d_fake);
    return buf;
}

std::vector<MetricRow> read_metrics(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(f, line) || line != metrics_header()) throw std::runtime_error(path.string() + ": unexpected header");
    std::vector<MetricRow> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 13) throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
        MetricRow r;
        r.iteration = std::stoll(cells[0]);
        r.epoch = std::stoi(cells[1]);
        r.stage = std::stoi(cells[2]);
        r.resolution = std::stoi(cells[3]);
        r.pixel = std::stod(cells[4]);
        r.perceptual = std::stod(cells[5]);
        r.perceptual_applied = cells[6] == "1";
        r.adversarial = std::stod(cells[7]);
        r.identity = std::stod(cells[8]);
        r.total_variation = std::stod(cells[9]);
        r.total = std::stod(cells[10]);
        r.d_real = std::stod(cells[11]);
        r.d_fake = std::stod(cells[12]);
        rows.push_back(r);
    }
    return rows;
}

Extractors Extractors::defaults() { return {default_identity_extractor(), default_perceptual_metric()}; }

// ---------------------------------------------------------------------------
// Training internals

namespace {

struct LevelTensors {
    torch::Tensor gt, masked, mask;
};

std::array<LevelTensors, 5> stack_dataset(const std::vector<data::ImagePyramid>& dataset) {
    if (dataset.empty()) throw std::invalid_argument("training dataset is empty");
    std::array<LevelTensors, 5> out;
    for (std::size_t l = 0; l < 5; ++l) {
        std::vector<Image> gt, masked, mask;
        for (const auto& p : dataset) {
            gt.push_back(p.levels[l].ground_truth);
            masked.push_back(p.levels[l].masked);
            mask.push_back(p.levels[l].mask);
        }
        out[l] = {images_to_batch(gt), images_to_batch(masked), images_to_batch(mask)};
    }
    return out;
}

/// Adam over a named parameter list; the moment buffers can be exported
/// under "<prefix>/<param>/{step,exp_avg,exp_avg_sq}".
struct NamedAdam {
    std::string prefix;
    std::vector<std::pair<std::string, torch::Tensor>> params;
    std::unique_ptr<torch::optim::Adam> opt;

    NamedAdam(std::string prefix_, std::vector<std::pair<std::string, torch::Tensor>> params_, double lr)
        : prefix(std::move(prefix_)), params(std::move(params_)) {
        std::vector<torch::Tensor> ts;
        for (const auto& [n, t] : params) ts.push_back(t);
        opt = std::make_unique<torch::optim::Adam>(ts, torch::optim::AdamOptions(lr).betas({0.9, 0.999}).eps(1e-8));
    }

    void export_state(std::map<std::string, torch::Tensor>& out) const {
        for (const auto& [n, t] : params) {
            const auto it = opt->state().find(t.unsafeGetTensorImpl());
            if (it == opt->state().end()) continue;
            const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
            const auto key = prefix + "/" + n;
            out[key + "/step"] = torch::tensor({s.step()}, torch::kInt64);
            out[key + "/exp_avg"] = s.exp_avg().detach().clone();
            out[key + "/exp_avg_sq"] = s.exp_avg_sq().detach().clone();
        }
    }

    void import_state(const std::map<std::string, torch::Tensor>& in) {
        for (const auto& [n, t] : params) {
            const auto key = prefix + "/" + n;
            if (!in.count(key + "/step")) continue;
            if (!in.count(key + "/exp_avg") || !in.count(key + "/exp_avg_sq") || in.at(key + "/exp_avg").sizes() != t.sizes() ||
                in.at(key + "/exp_avg_sq").sizes() != t.sizes()) {
                throw std::runtime_error("optimizer state for " + key + " is incomplete or misshapen");
            }
        }
        for (const auto& [n, t] : params) {
            const auto key = prefix + "/" + n;
            if (!in.count(key + "/step")) continue;
            auto s = std::make_unique<torch::optim::AdamParamState>();
            s->step(in.at(key + "/step").item<std::int64_t>());
            s->exp_avg(in.at(key + "/exp_avg").clone());
            s->exp_avg_sq(in.at(key + "/exp_avg_sq").clone());
            opt->state()[t.unsafeGetTensorImpl()] = std::move(s);
        }
    }
};

std::vector<std::pair<std::string, torch::Tensor>> named_params(const torch::nn::Module& m, const std::string& prefix = "") {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& p : m.named_parameters(true)) out.emplace_back(prefix + p.key(), p.value());
    return out;
}

void set_requires_grad(torch::nn::Module& m, bool on) {
    for (auto& p : m.parameters(true)) p.set_requires_grad(on);
}

torch::Tensor select(const torch::Tensor& t, const torch::Tensor& index) { return t.index_select(0, index); }

/// Real-batch step then fake-batch step; returns the two losses.
std::pair<double, double> discriminator_steps(nets::Discriminator& d, NamedAdam& opt, const torch::Tensor& real,
                                              const torch::Tensor& fake, double real_label) {
    opt.opt->zero_grad();
    auto lr = loss::discriminator_real_loss(d->forward(real, true), real_label);
    lr.backward();
    opt.opt->step();
    opt.opt->zero_grad();
    auto lf = loss::discriminator_fake_loss(d->forward(fake.detach(), true));
    lf.backward();
    opt.opt->step();
    return {lr.item<double>(), lf.item<double>()};
}

/// Weighted generator loss at one level on the composed output. `d` may be null when the
/// adversarial term is disabled.
torch::Tensor generator_objective(const torch::Tensor& composed, const torch::Tensor& gt, nets::Discriminator* d,
                                  const TrainConfig& cfg, const Extractors& ex, MetricRow& row) {
    const auto& w = cfg.weights;
    loss::LossTerms terms;
    terms.pixel = loss::pixel_loss(gt, composed, cfg.pixel_norm);
    const auto zero = torch::zeros({}, composed.options());
    terms.adversarial = zero;
    terms.identity = zero;
    terms.total_variation = zero;
    if (w.perceptual > 0.0 && ex.perceptual) terms.perceptual = loss::perceptual_loss(composed, gt, *ex.perceptual);
    if (d != nullptr) terms.adversarial = loss::adversarial_loss_g((*d)->forward(composed, false));
    if (w.identity > 0.0 && ex.identity) terms.identity = loss::identity_loss(composed, gt, *ex.identity);
    if (w.total_variation > 0.0) terms.total_variation = loss::tv_loss(composed);
    auto total = loss::total_loss(terms, w);

    row.pixel = terms.pixel.item<double>();
    row.perceptual_applied = terms.perceptual.has_value();
    row.perceptual = terms.perceptual ? terms.perceptual->item<double>() : 0.0;
    row.adversarial = terms.adversarial.item<double>();
    row.identity = terms.identity.item<double>();
    row.total_variation = terms.total_variation.item<double>();
    row.total = total.item<double>();
    return total;
}

std::vector<std::int64_t> epoch_order(std::int64_t n, const TrainConfig& cfg, int stage, int epoch) {
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    if (cfg.shuffle) {
        std::mt19937_64 rng(derive_seed(*cfg.seed, 1000 + static_cast<std::uint64_t>(stage) * 100000 + epoch));
        // Fisher-Yates with an explicit draw so the order does not depend on
        // the standard library's shuffle implementation.
        for (std::size_t i = order.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(rng() % i);
            std::swap(order[i - 1], order[j]);
        }
    }
    return order;
}

/// Output side of a run: metrics, timing, snapshots.
class RunRecorder {
public:
    RunRecorder(const RunOptions& options, const TrainConfig& cfg, bool append) : options_(options) {
        start_ = std::chrono::steady_clock::now();
        if (options_.run_dir.empty()) return;
        fs::create_directories(options_.run_dir / "snapshots");
        {
            std::ofstream c(options_.run_dir / "config.json");
            c << cfg.to_json().dump(2) << '\n';
        }
        const auto mode = append ? std::ios::app : std::ios::trunc;
        metrics_.open(options_.run_dir / "metrics.csv", std::ios::out | mode);
        timing_.open(options_.run_dir / "timing.csv", std::ios::out | mode);
        if (!metrics_ || !timing_) throw std::runtime_error("cannot write to run directory " + options_.run_dir.string());
        if (!append) {
            metrics_ << metrics_header() << '\n';
            timing_ << "iteration,stage,elapsed_seconds\n";
        }
    }

    ~RunRecorder() {
        for (auto& f : pending_) {
            if (f.valid()) f.wait();
        }
    }

    void record(const MetricRow& row) {
        rows.push_back(row);
        if (metrics_.is_open()) metrics_ << format_metrics(row) << '\n';
    }

    void end_iteration(std::int64_t iteration, int stage) {
        if (!metrics_.is_open()) return;
        metrics_.flush();
        timing_ << iteration << ',' << stage << ',' << elapsed() << '\n';
    }

    [[nodiscard]] double elapsed() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

    /// Writes the checkpoint on a worker thread; the caller passes an owned copy.
    void snapshot(Checkpoint checkpoint, int epoch) {
        if (options_.run_dir.empty()) return;
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%02d.ckpt", epoch);
        const auto path = options_.run_dir / "snapshots" / name;
        snapshots.push_back(path);
        pending_.push_back(std::async(std::launch::async, [c = std::move(checkpoint), path] { save_checkpoint(path, c); }));
    }

    void finish() {
        for (auto& f : pending_) f.get();
        pending_.clear();
        if (metrics_.is_open()) metrics_.flush();
    }

    const RunOptions& options() const { return options_; }

    std::vector<MetricRow> rows;
    std::vector<fs::path> snapshots;

private:
    RunOptions options_;
    std::ofstream metrics_, timing_;
    std::vector<std::future<void>> pending_;
    std::chrono::steady_clock::time_point start_;
};

void check_finite(double total, std::int64_t iteration, int resolution, const std::function<Checkpoint()>& dump,
                  const RunOptions& options) {
    if (std::isfinite(total)) return;
    std::string where;
    if (!options.run_dir.empty()) {
        const auto path = options.run_dir / "diverged.ckpt";
        save_checkpoint(path, dump());
        where = "; state dumped to " + path.string();
    }
    throw TrainingDiverged("non-finite loss at iteration " + std::to_string(iteration) + " (block_" + std::to_string(resolution) +
                           ")" + where);
}

void write_preview(const RunOptions& options, const std::vector<data::ImagePyramid>& dataset) {
    if (options.run_dir.empty()) return;
    std::vector<data::ImagePyramid> preview(dataset.begin(), dataset.begin() + std::min<std::size_t>(dataset.size(), 4));
    data::pyramids_to_archive(preview).save(options.run_dir / "preview.samples");
}

bool adversarial_on(const TrainConfig& cfg) { return cfg.weights.adversarial > 0.0; }

}  // namespace

// ---------------------------------------------------------------------------
// Cascaded regime

TrainResult train_cascaded(const std::vector<data::ImagePyramid>& dataset, const TrainConfig& cfg, const Extractors& ex,
                           const RunOptions& options) {
    cfg.validate();
    if (cfg.regime != Regime::cascaded) throw std::invalid_argument("train_cascaded called with a progressive config");
    const auto levels = stack_dataset(dataset);
    const std::int64_t n = levels[0].gt.size(0);
    torch::manual_seed(*cfg.seed);

    Cascade model(cfg.width_divisor, *cfg.seed);
    std::vector<std::pair<std::string, torch::Tensor>> gparams;
    for (std::size_t i = 0; i < 5; ++i) {
        const auto r = std::to_string(data::kResolutions[i]);
        for (auto& p : named_params(*model->generators[i], "generator_" + r + ".")) gparams.push_back(p);
        if (i < 4)
            for (auto& p : named_params(*model->upscalers[i], "upscaler_" + r + ".")) gparams.push_back(p);
    }
    NamedAdam gopt("g", gparams, cfg.generator_lr);
    std::vector<NamedAdam> dopts;
    for (std::size_t i = 0; i < 5; ++i) {
        const auto r = std::to_string(data::kResolutions[i]);
        dopts.emplace_back("d" + r, named_params(*model->discriminators[i], "discriminator_" + r + "."), cfg.discriminator_lr);
    }

    int start_epoch = 0;
    std::int64_t iteration = 0;
    if (options.resume) {
        const auto c = load_checkpoint(*options.resume);
        if (c.regime != Regime::cascaded || c.width_divisor != cfg.width_divisor) {
            throw std::invalid_argument("resume checkpoint does not match the configured regime/width");
        }
        load_state(*model, c.weights);
        gopt.import_state(c.optimizer);
        for (auto& d : dopts) d.import_state(c.optimizer);
        start_epoch = c.epoch;
        iteration = c.iteration;
    }

    RunRecorder rec(options, cfg, options.resume.has_value());
    if (!options.resume) write_preview(options, dataset);

    auto make_checkpoint = [&](int epoch) {
        Checkpoint c;
        c.regime = Regime::cascaded;
        c.epoch = epoch;
        c.iteration = iteration;
        c.width_divisor = cfg.width_divisor;
        c.config_hash = cfg.hash();
        c.config = cfg.to_json();
        c.weights = state_of(*model);
        gopt.export_state(c.optimizer);
        for (const auto& d : dopts) d.export_state(c.optimizer);
        return c;
    };

    model->train();
    const bool adv = adversarial_on(cfg);
    std::int64_t stage_iters = 0;
    int completed = start_epoch;
    bool stop = false;
    for (int epoch = start_epoch + 1; epoch <= cfg.epochs && !stop; ++epoch) {
        const auto order = epoch_order(n, cfg, 0, epoch);
        for (std::int64_t b = 0; b < n; b += cfg.batch_size) {
            if (cfg.max_iterations > 0 && stage_iters >= cfg.max_iterations) {
                stop = true;
                break;
            }
            ++iteration;
            ++stage_iters;
            const auto idx = torch::tensor(std::vector<std::int64_t>(order.begin() + b, order.begin() + std::min(n, b + cfg.batch_size)),
                                           torch::kInt64);
            std::vector<torch::Tensor> masked, masks, gts;
            for (const auto& lv : levels) {
                masked.push_back(select(lv.masked, idx));
                masks.push_back(select(lv.mask, idx));
                gts.push_back(select(lv.gt, idx));
            }

            const auto outputs = model->forward(masked, masks, cfg.detach_between_blocks);
            std::array<MetricRow, 5> rows;
            for (std::size_t i = 0; i < 5; ++i) {
                rows[i].iteration = iteration;
                rows[i].epoch = epoch;
                rows[i].resolution = data::kResolutions[i];
                if (adv) {
                    std::tie(rows[i].d_real, rows[i].d_fake) =
                        discriminator_steps(model->discriminators[i], dopts[i], gts[i], outputs[i], cfg.real_label);
                }
            }

            for (auto& d : model->discriminators) set_requires_grad(*d, false);
            torch::Tensor total;
            for (std::size_t i = 0; i < 5; ++i) {
                auto t = generator_objective(outputs[i], gts[i], adv ? &model->discriminators[i] : nullptr, cfg, ex, rows[i]);
                check_finite(rows[i].total, iteration, rows[i].resolution, [&] { return make_checkpoint(completed); }, options);
                total = i == 0 ? t : total + t;
            }
            gopt.opt->zero_grad();
            total.backward();
            gopt.opt->step();
            for (auto& d : model->discriminators) set_requires_grad(*d, true);

            for (const auto& r : rows) rec.record(r);
            rec.end_iteration(iteration, 0);
        }
        if (stop) break;
        completed = epoch;
        if (options.verbose) {
            std::cerr << "epoch " << epoch << " iteration " << iteration << " block_128 pixel " << rec.rows.back().pixel << '\n';
        }
        if (cfg.snapshot_every > 0 && epoch % cfg.snapshot_every == 0) rec.snapshot(make_checkpoint(epoch), epoch);
    }

    TrainResult result;
    result.final_checkpoint = make_checkpoint(completed);
    if (!options.run_dir.empty()) save_checkpoint(options.run_dir / "final.ckpt", result.final_checkpoint);
    rec.finish();
    result.metrics = std::move(rec.rows);
    result.snapshots = std::move(rec.snapshots);
    result.seconds = rec.elapsed();
    return result;
}

// ---------------------------------------------------------------------------
// Progressive regime

TrainResult train_progressive(const std::vector<data::ImagePyramid>& dataset, const TrainConfig& cfg, const Extractors& ex,
                              const RunOptions& options) {
    cfg.validate();
    if (cfg.regime != Regime::progressive) throw std::invalid_argument("train_progressive called with a cascaded config");
    const auto levels = stack_dataset(dataset);
    const std::int64_t n = levels[0].gt.size(0);
    torch::manual_seed(*cfg.seed);

    std::optional<Checkpoint> resume;
    if (options.resume) {
        resume = load_checkpoint(*options.resume);
        if (resume->regime != Regime::progressive || resume->width_divisor != cfg.width_divisor) {
            throw std::invalid_argument("resume checkpoint does not match the configured regime/width");
        }
    }

    RunRecorder rec(options, cfg, resume.has_value());
    if (!resume) write_preview(options, dataset);
    if (!options.run_dir.empty()) fs::create_directories(options.run_dir / "stages");

    TrainResult result;
    std::map<std::string, torch::Tensor> previous;
    std::int64_t iteration = resume ? resume->iteration : 0;
    const bool adv = adversarial_on(cfg);

    for (std::size_t li = 0; li < 5; ++li) {
        const int res = data::kResolutions[li];
        if (resume && res < resume->stage) continue;
        torch::manual_seed(derive_seed(*cfg.seed, 500 + li));

        Stage stage(res, cfg.width_divisor, *cfg.seed);
        StageReport report;
        report.resolution = res;
        report.parameters = nets::count_parameters(*stage);
        if (!previous.empty()) {
            report.matchable = matching_names(previous, *stage);
            report.transferred = transfer_matching(previous, *stage);
        }
        NamedAdam gopt("g", named_params(*stage->generator, "generator."), cfg.generator_lr);
        NamedAdam dopt("d", named_params(*stage->discriminator, "discriminator."), cfg.discriminator_lr);

        int start_epoch = 0;
        if (resume && res == resume->stage) {
            load_state(*stage, resume->weights);
            gopt.import_state(resume->optimizer);
            dopt.import_state(resume->optimizer);
            start_epoch = resume->epoch;
        }

        auto make_checkpoint = [&](int epoch) {
            Checkpoint c;
            c.regime = Regime::progressive;
            c.epoch = epoch;
            c.stage = res;
            c.iteration = iteration;
            c.width_divisor = cfg.width_divisor;
            c.config_hash = cfg.hash();
            c.config = cfg.to_json();
            c.weights = state_of(*stage);
            gopt.export_state(c.optimizer);
            dopt.export_state(c.optimizer);
            return c;
        };

        stage->train();
        const auto& lv = levels[li];
        std::int64_t stage_iters = 0;
        int completed = start_epoch;
        bool stop = false;
        for (int epoch = start_epoch + 1; epoch <= cfg.epochs && !stop; ++epoch) {
            const auto order = epoch_order(n, cfg, res, epoch);
            for (std::int64_t b = 0; b < n; b += cfg.batch_size) {
                if (cfg.max_iterations > 0 && stage_iters >= cfg.max_iterations) {
                    stop = true;
                    break;
                }
                ++iteration;
                ++stage_iters;
                const auto idx = torch::tensor(
                    std::vector<std::int64_t>(order.begin() + b, order.begin() + std::min(n, b + cfg.batch_size)), torch::kInt64);
                const auto masked = select(lv.masked, idx), mask = select(lv.mask, idx), gt = select(lv.gt, idx);
                const auto out = loss::mask_compose(stage->generator->forward(masked), masked, mask);

                MetricRow row;
                row.iteration = iteration;
                row.epoch = epoch;
                row.stage = res;
                row.resolution = res;
                if (adv) std::tie(row.d_real, row.d_fake) = discriminator_steps(stage->discriminator, dopt, gt, out, cfg.real_label);

                set_requires_grad(*stage->discriminator, false);
                auto total = generator_objective(out, gt, adv ? &stage->discriminator : nullptr, cfg, ex, row);
                check_finite(row.total, iteration, res, [&] { return make_checkpoint(completed); }, options);
                gopt.opt->zero_grad();
                total.backward();
                gopt.opt->step();
                set_requires_grad(*stage->discriminator, true);

                rec.record(row);
                rec.end_iteration(iteration, res);
            }
            if (stop) break;
            completed = epoch;
            if (options.verbose) std::cerr << "stage " << res << " epoch " << epoch << " pixel " << rec.rows.back().pixel << '\n';
            if (cfg.snapshot_every > 0 && epoch % cfg.snapshot_every == 0 && res == 128) rec.snapshot(make_checkpoint(epoch), epoch);
        }

        auto ckpt = make_checkpoint(completed);
        if (!options.run_dir.empty()) {
            report.checkpoint = options.run_dir / "stages" / ("stage_" + std::to_string(res) + ".ckpt");
            save_checkpoint(report.checkpoint, ckpt);
        }
        previous = ckpt.weights;
        result.stages.push_back(std::move(report));
        if (res == 128) result.final_checkpoint = std::move(ckpt);
        if (options.verbose) std::cerr << "stage " << res << " done\n";
    }

    if (!options.run_dir.empty()) save_checkpoint(options.run_dir / "final.ckpt", result.final_checkpoint);
    rec.finish();
    result.metrics = std::move(rec.rows);
    result.snapshots = std::move(rec.snapshots);
    result.seconds = rec.elapsed();
    return result;
}

TrainResult train(const std::vector<data::ImagePyramid>& dataset, const TrainConfig& config, const Extractors& extractors,
                  const RunOptions& options) {
    return config.regime == Regime::cascaded ? train_cascaded(dataset, config, extractors, options)
                                             : train_progressive(dataset, config, extractors, options);
}

// ---------------------------------------------------------------------------
// Inference

Hallucinator::Hallucinator(const Checkpoint& c) : regime_(c.regime) {
    if (c.regime == Regime::cascaded) {
        cascade_ = Cascade(c.width_divisor, 0);
        load_state(*cascade_, c.weights);
        cascade_->eval();
    } else {
        if (c.stage != 128) throw std::invalid_argument("progressive checkpoint is for stage " + std::to_string(c.stage) + ", not 128");
        Stage stage(128, c.width_divisor, 0);
        load_state(*stage, c.weights);
        block128_ = stage->generator;
        block128_->eval();
    }
}

std::vector<int> Hallucinator::blocks_used() const {
    if (regime_ == Regime::progressive) return {128};
    return {data::kResolutions.begin(), data::kResolutions.end()};
}

Image Hallucinator::run(const Image& masked, const Image& mask) const {
    const int size = data::kFrameSize;
    if (masked.height != size || masked.width != size || masked.channels != 3) {
        throw std::invalid_argument("hallucinate expects a 128x128 RGB masked input");
    }
    if (mask.height != size || mask.width != size || mask.channels != 1) {
        throw std::invalid_argument("hallucinate expects a 128x128 single-channel mask");
    }
    torch::NoGradGuard no_grad;
    torch::Tensor out;
    if (regime_ == Regime::cascaded) {
        const auto pyr = data::build_input_pyramid(masked, mask);
        std::vector<torch::Tensor> ms, ks;
        for (const auto& [m, k] : pyr) {
            ms.push_back(image_to_tensor(m).unsqueeze(0));
            ks.push_back(image_to_tensor(k).unsqueeze(0));
        }
        out = cascade_->forward(ms, ks).back();
    } else {
        out = block128_->forward(image_to_tensor(masked).unsqueeze(0));
    }
    Image result = tensor_to_image(out);
    // Final compose in image space so face pixels are copied, not recomputed.
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            if (mask.at(y, x) >= 0.5f)
                for (int ch = 0; ch < 3; ++ch) result.at(y, x, ch) = masked.at(y, x, ch);
    return result;
}

Checkpoint initial_checkpoint(Regime regime, int width_divisor, std::uint64_t seed) {
    Checkpoint c;
    c.regime = regime;
    c.width_divisor = width_divisor;
    if (regime == Regime::cascaded) {
        Cascade m(width_divisor, seed);
        c.weights = state_of(*m);
    } else {
        Stage s(128, width_divisor, seed);
        c.stage = 128;
        c.weights = state_of(*s);
    }
    return c;
}

// ---------------------------------------------------------------------------

RunDirLock::RunDirLock(const fs::path& dir) {
    fs::create_directories(dir);
    const auto path = dir / "run.lock";
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw std::runtime_error("cannot open lock file " + path.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw std::runtime_error("run directory " + dir.string() + " is in use by another process");
    }
}

RunDirLock::~RunDirLock() {
    if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
}

}  // namespace maskfill::train
