#include "powergan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "powergan/archive.hpp"
#include "powergan/errors.hpp"
#include "powergan/window_io.hpp"

namespace powergan::train {

using ad::Tensor;
using ad::Var;

void TrainingSchedule::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
    if (epochs_per_block < 1) fail("epochs_per_block must be at least 1");
    if (fade_epochs < 0 || fade_epochs > epochs_per_block) fail("fade_epochs must be in [0, epochs_per_block]");
    if (critic_ratio < 1) fail("critic_ratio must be at least 1");
    if (batch_size < 2) fail("batch_size must be at least 2");
    if (checkpoint_every < 1) fail("checkpoint_every must be at least 1");
    if (!(adam.lr > 0)) fail("lr must be positive");
    if (!(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1))
        fail("Adam betas must be in [0, 1)");
    if (!(adam.eps > 0)) fail("Adam eps must be positive");
}

double TrainingSchedule::alpha(int stage, std::int64_t epoch) const {
    if (stage <= 1 || fade_epochs == 0) return 1.0;
    return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(fade_epochs));
}

nlohmann::json to_json(const TrainConfig& c) {
    const auto& n = c.net;
    const auto& s = c.schedule;
    return {
        {"net",
         {{"base_features", n.base_features},
          {"kernel_size", n.kernel_size},
          {"leaky_slope", n.leaky_slope},
          {"pixelnorm_epsilon", n.pixelnorm_epsilon},
          {"latent_dim", n.latent_dim},
          {"num_blocks", n.num_blocks},
          {"window_length", n.window_length},
          {"critic_fade", n.critic_fade == nets::CriticFade::scores ? "scores" : "features"}}},
        {"loss",
         {{"lambda_gp", c.loss.lambda_gp},
          {"epsilon_center", c.loss.epsilon_center},
          {"penalty_weight",
           c.loss.penalty_weight == losses::PenaltyWeight::critic_gap ? "critic_gap" : "fake_minus_real"},
          {"center_form", c.loss.center_form == losses::CenterForm::linear ? "linear" : "squared"}}},
        {"schedule",
         {{"epochs_per_block", s.epochs_per_block},
          {"fade_epochs", s.fade_epochs},
          {"critic_ratio", s.critic_ratio},
          {"ratio_per_epoch", s.ratio_per_epoch},
          {"batch_size", s.batch_size},
          {"lr", s.adam.lr},
          {"beta1", s.adam.beta1},
          {"beta2", s.adam.beta2},
          {"adam_eps", s.adam.eps},
          {"seed", s.seed},
          {"checkpoint_every", s.checkpoint_every}}},
    };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        const auto& n = j.at("net");
        c.net.base_features = n.value("base_features", c.net.base_features);
        c.net.kernel_size = n.value("kernel_size", c.net.kernel_size);
        c.net.leaky_slope = n.value("leaky_slope", c.net.leaky_slope);
        c.net.pixelnorm_epsilon = n.value("pixelnorm_epsilon", c.net.pixelnorm_epsilon);
        c.net.latent_dim = n.value("latent_dim", c.net.latent_dim);
        c.net.num_blocks = n.value("num_blocks", c.net.num_blocks);
        c.net.window_length = n.value("window_length", c.net.window_length);
        c.net.critic_fade =
            n.value("critic_fade", std::string("scores")) == "features" ? nets::CriticFade::features
                                                                        : nets::CriticFade::scores;
        const auto& l = j.at("loss");
        c.loss.lambda_gp = l.value("lambda_gp", c.loss.lambda_gp);
        c.loss.epsilon_center = l.value("epsilon_center", c.loss.epsilon_center);
        c.loss.penalty_weight = l.value("penalty_weight", std::string("critic_gap")) == "fake_minus_real"
                                    ? losses::PenaltyWeight::fake_minus_real
                                    : losses::PenaltyWeight::critic_gap;
        if (l.contains("center_form"))
            c.loss.center_form = l.at("center_form").get<std::string>() == "linear" ? losses::CenterForm::linear
                                                                                   : losses::CenterForm::squared;
        const auto& s = j.at("schedule");
        auto& t = c.schedule;
        t.epochs_per_block = s.value("epochs_per_block", t.epochs_per_block);
        t.fade_epochs = s.value("fade_epochs", t.fade_epochs);
        t.critic_ratio = s.value("critic_ratio", t.critic_ratio);
        t.ratio_per_epoch = s.value("ratio_per_epoch", t.ratio_per_epoch);
        t.batch_size = s.value("batch_size", t.batch_size);
        t.adam.lr = s.value("lr", t.adam.lr);
        t.adam.beta1 = s.value("beta1", t.adam.beta1);
        t.adam.beta2 = s.value("beta2", t.adam.beta2);
        t.adam.eps = s.value("adam_eps", t.adam.eps);
        t.seed = s.value("seed", t.seed);
        t.checkpoint_every = s.value("checkpoint_every", t.checkpoint_every);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("training config: ") + e.what());
    }
    return c;
}

namespace {

constexpr const char* kManifest = "manifest.json";

std::uint64_t generator_seed(std::uint64_t root) { return Rng::derive(root, "generator_init"); }
std::uint64_t critic_seed(std::uint64_t root) { return Rng::derive(root, "critic_init"); }

nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::IoError, path.string() + ": " + e.what());
    }
}

bool finite(const losses::LossBreakdown& b) {
    return std::isfinite(b.wasserstein) && std::isfinite(b.gp) && std::isfinite(b.center) &&
           std::isfinite(b.critic_total) && std::isfinite(b.generator_total);
}

double mean_value(const Var<float>& v) {
    double s = 0;
    for (float x : v.value().data) s += x;
    return s / static_cast<double>(v.numel());
}

}  // namespace

std::filesystem::path resolve_checkpoint(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    auto follow = [](const fs::path& pointer) {
        std::ifstream in(pointer);
        std::string name;
        if (!std::getline(in, name) || name.empty())
            throw Error(ErrorCode::IoError, "cannot read checkpoint pointer " + pointer.string());
        return pointer.parent_path() / name;
    };
    if (fs::is_regular_file(path)) return follow(path);
    if (fs::exists(path / kManifest)) return path;
    if (fs::is_regular_file(path / "latest")) return follow(path / "latest");
    if (fs::is_regular_file(path / "checkpoints" / "latest")) return follow(path / "checkpoints" / "latest");
    throw Error(ErrorCode::IoError, "no checkpoint found at " + path.string());
}

GeneratorBundle load_generator(const std::filesystem::path& path) {
    const auto dir = resolve_checkpoint(path);
    const auto j = read_json(dir / kManifest);
    GeneratorBundle b;
    try {
        b.config = train_config_from_json(j.at("config"));
        b.manifest = data::manifest_from_json(j.at("normalization"));
        b.stage = j.at("stage").get<int>();
        b.epoch = j.at("epoch").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::IncompatibleCheckpoint, dir.string() + ": " + e.what());
    }
    b.generator = std::make_unique<nets::Generator<float>>(b.config.net, static_cast<int>(b.manifest.num_classes()),
                                                           generator_seed(b.config.schedule.seed));
    while (b.generator->stage() < b.stage) b.generator->grow();
    load_parameters(*b.generator, read_archive(dir / "generator.pga"));
    return b;
}

Trainer::Trainer(TrainConfig cfg, std::vector<data::Window> windows, data::NormalizationManifest manifest,
                 std::filesystem::path out_dir)
    : Trainer(std::move(cfg), std::move(windows), std::move(manifest), std::move(out_dir), false) {}

Trainer::Trainer(TrainConfig cfg, std::vector<data::Window> windows, data::NormalizationManifest manifest,
                 std::filesystem::path out_dir, bool resumed)
    : cfg_(std::move(cfg)),
      windows_(std::move(windows)),
      manifest_(std::move(manifest)),
      out_dir_(std::move(out_dir)),
      opt_g_(cfg_.schedule.adam),
      opt_d_(cfg_.schedule.adam),
      resumed_(resumed) {
    if (windows_.empty()) throw Error(ErrorCode::EmptyDataset, "no training windows");
    if (windows_.size() < 2) throw Error(ErrorCode::EmptyDataset, "at least two training windows are needed");
    cfg_.net.window_length = manifest_.window_length;
    cfg_.net.validate();
    cfg_.loss.validate();
    cfg_.schedule.validate();
    for (const auto& w : windows_) {
        if (w.samples.size() != manifest_.window_length)
            throw Error(ErrorCode::InvalidShape, "window of length " + std::to_string(w.samples.size()) +
                                                     " in a dataset of length " +
                                                     std::to_string(manifest_.window_length));
        if (!manifest_.scales.contains(w.label))
            throw Error(ErrorCode::InvalidLabel, "window label " + std::string(data::to_string(w.label)) +
                                                     " missing from the normalization manifest");
    }
    const int classes = static_cast<int>(manifest_.num_classes());
    gen_ = std::make_unique<nets::Generator<float>>(cfg_.net, classes, generator_seed(cfg_.schedule.seed));
    critic_ = std::make_unique<nets::Critic<float>>(cfg_.net, classes, critic_seed(cfg_.schedule.seed));
}

Trainer Trainer::resume(const std::filesystem::path& path, std::vector<data::Window> windows,
                        data::NormalizationManifest manifest, std::filesystem::path out_dir) {
    const auto dir = resolve_checkpoint(path);
    const auto j = read_json(dir / kManifest);
    TrainConfig cfg;
    data::NormalizationManifest saved;
    int stage = 0;
    std::int64_t epoch = 0;
    try {
        cfg = train_config_from_json(j.at("config"));
        saved = data::manifest_from_json(j.at("normalization"));
        stage = j.at("stage").get<int>();
        epoch = j.at("epoch").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::IncompatibleCheckpoint, dir.string() + ": " + e.what());
    }
    if (saved.window_length != manifest.window_length)
        throw Error(ErrorCode::IncompatibleCheckpoint,
                    "checkpoint window length " + std::to_string(saved.window_length) + ", dataset " +
                        std::to_string(manifest.window_length));
    if (saved.labels() != manifest.labels())
        throw Error(ErrorCode::IncompatibleCheckpoint, "checkpoint and dataset label sets differ");

    Trainer t(std::move(cfg), std::move(windows), std::move(manifest), std::move(out_dir), true);
    if (stage < 1 || stage > t.cfg_.net.num_blocks || epoch < 0 || epoch > t.cfg_.schedule.epochs_per_block)
        throw Error(ErrorCode::IncompatibleCheckpoint, "checkpoint position out of range");
    while (t.gen_->stage() < stage) t.gen_->grow();
    while (t.critic_->stage() < stage) t.critic_->grow();
    load_parameters(*t.gen_, read_archive(dir / "generator.pga"));
    load_parameters(*t.critic_, read_archive(dir / "critic.pga"));
    t.opt_g_.load(read_archive(dir / "adam_generator.pga"));
    t.opt_d_.load(read_archive(dir / "adam_critic.pga"));
    t.stage_ = stage;
    t.epoch_ = epoch;
    return t;
}

bool Trainer::finished() const {
    return stage_ == cfg_.net.num_blocks && epoch_ >= cfg_.schedule.epochs_per_block;
}

void Trainer::run(std::optional<std::int64_t> max_epochs) {
    std::filesystem::create_directories(out_dir_);
    losses::LossLog log(out_dir_ / "log.csv", resumed_ || !epochs_.empty());
    std::int64_t done = 0;
    while (!finished() && (!max_epochs || done < *max_epochs)) {
        train_epoch();
        const auto& e = epochs_.back();
        log.write(e.epoch, e.stage, e.alpha, e.mean);
        if (on_epoch) on_epoch(e);
        ++done;
    }
}

ad::Tensor<float> Trainer::sample_latent(std::size_t batch, Rng& rng) const {
    Tensor<float> z({static_cast<std::int64_t>(batch), cfg_.net.latent_dim});
    for (auto& v : z.data) v = static_cast<float>(rng.normal());
    return z;
}

bool Trainer::train_epoch() {
    if (finished()) return false;
    const auto& s = cfg_.schedule;
    if (epoch_ >= s.epochs_per_block) {
        gen_->grow();
        critic_->grow();
        ++stage_;
        epoch_ = 0;
    }
    const std::int64_t ep = epoch_ + 1;
    const double alpha = s.alpha(stage_, ep);
    const auto key = {static_cast<std::uint64_t>(stage_), static_cast<std::uint64_t>(ep)};
    Rng shuffle_rng(Rng::derive(s.seed, "shuffle", key));
    Rng shift_rng(Rng::derive(s.seed, "shift", key));
    Rng latent_rng(Rng::derive(s.seed, "latent", key));
    Rng mix_rng(Rng::derive(s.seed, "interpolation", key));

    std::vector<std::size_t> order(windows_.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);

    const std::size_t B = std::min<std::size_t>(static_cast<std::size_t>(s.batch_size), order.size());
    const std::size_t count = order.size() / B;
    const bool generator_epoch = !s.ratio_per_epoch || ep % s.critic_ratio == 0;

    EpochRecord record{stage_, ep, alpha, {}};
    for (std::size_t it = 0; it < count; ++it) {
        const std::vector<std::size_t> selection(order.begin() + static_cast<std::ptrdiff_t>(it * B),
                                                 order.begin() + static_cast<std::ptrdiff_t>((it + 1) * B));
        auto r = iteration(selection, static_cast<int>(it), alpha, shift_rng, latent_rng, mix_rng, generator_epoch);
        r.epoch = ep;
        iterations_.push_back(r);
        record.mean.wasserstein += r.loss.wasserstein / static_cast<double>(count);
        record.mean.gp += r.loss.gp / static_cast<double>(count);
        record.mean.center += r.loss.center / static_cast<double>(count);
        record.mean.critic_total += r.loss.critic_total / static_cast<double>(count);
        record.mean.generator_total += r.loss.generator_total / static_cast<double>(count);
        if (on_iteration) on_iteration(r);
    }
    epoch_ = ep;
    epochs_.push_back(record);
    checkpoint_if_due(epoch_ == s.epochs_per_block);
    return true;
}

IterationRecord Trainer::iteration(const std::vector<std::size_t>& selection, int index, double alpha,
                                   Rng& shift_rng, Rng& latent_rng, Rng& mix_rng, bool generator_epoch) {
    const int N_b = cfg_.net.num_blocks;
    const std::size_t factor = std::size_t{1} << (N_b - stage_);
    auto batch = data::batch_for_stage(windows_, selection, factor, manifest_, shift_rng);
    const auto B = static_cast<std::int64_t>(batch.size());
    const auto L = static_cast<std::int64_t>(batch.length);
    if (batch.length != cfg_.net.stage_length(stage_))
        throw Error(ErrorCode::InvalidShape, "stage batch has length " + std::to_string(L));
    const Tensor<float> real({B, 1, L}, std::move(batch.signals));
    const std::span<const int> labels = batch.labels;

    IterationRecord r;
    r.stage = stage_;
    r.iteration = index;
    r.alpha = alpha;

    // Critic step.
    Tensor<float> fake;
    {
        ad::NoGradGuard off;
        fake = gen_->forward(sample_latent(selection.size(), latent_rng), labels, alpha).value();
    }
    auto d_real = critic_->forward(Var<float>::leaf(real), labels, alpha);
    auto d_fake = critic_->forward(Var<float>::leaf(fake), labels, alpha);
    const double d_w = mean_value(d_fake) - mean_value(d_real);
    losses::CriticFn<float> critic_fn = [this, alpha](const Var<float>& x, std::span<const int> l) {
        return critic_->forward(x, l, alpha);
    };
    auto gp = losses::gradient_penalty<float>(critic_fn, real, fake, labels, labels,
                                              cfg_.loss.penalty_weight_input(d_w), cfg_.loss, mix_rng);
    auto center = losses::center_term(d_real, d_fake, cfg_.loss);
    auto total = ad::add(ad::add(losses::wasserstein_estimate(d_real, d_fake), gp.term), center);

    r.loss.wasserstein = d_w;
    r.loss.gp = gp.term.item();
    r.loss.center = center.item();
    r.loss.critic_total = total.item();
    r.loss.generator_total = -mean_value(d_fake);
    if (!finite(r.loss)) abort_non_finite(r);

    auto d_params = critic_->parameters();
    const auto d_grads = ad::grad(total, d_params);
    opt_d_.step(critic_->parameter_names(), d_params, d_grads);

    // Generator step.
    r.generator_step = cfg_.schedule.ratio_per_epoch ? generator_epoch : (index + 1) % cfg_.schedule.critic_ratio == 0;
    if (r.generator_step) {
        auto produced = gen_->forward(sample_latent(selection.size(), latent_rng), labels, alpha);
        auto loss = losses::generator_loss(critic_->forward(produced, labels, alpha));
        if (!std::isfinite(loss.item())) {
            r.loss.generator_total = loss.item();
            abort_non_finite(r);
        }
        auto g_params = gen_->parameters();
        const auto g_grads = ad::grad(loss, g_params);
        opt_g_.step(gen_->parameter_names(), g_params, g_grads);
    }
    return r;
}

void Trainer::abort_non_finite(const IterationRecord& r) const {
    const auto dir = checkpoint_root() / "diagnostic";
    save_checkpoint(dir);
    throw Error(ErrorCode::NonFiniteLoss,
                "non-finite loss at stage " + std::to_string(r.stage) + " epoch " + std::to_string(r.epoch) +
                    " iteration " + std::to_string(r.iteration) + " (D_W=" + std::to_string(r.loss.wasserstein) +
                    ", gp=" + std::to_string(r.loss.gp) + ", L_G=" + std::to_string(r.loss.generator_total) +
                    "); state saved to " + dir.string());
}

namespace {

std::string checkpoint_name(int stage, std::int64_t epoch) {
    char name[64];
    std::snprintf(name, sizeof(name), "stage%d_epoch%06lld", stage, static_cast<long long>(epoch));
    return name;
}

}  // namespace

void Trainer::checkpoint_if_due(bool stage_end) const {
    if (!stage_end && epoch_ % cfg_.schedule.checkpoint_every != 0) return;
    const auto root = checkpoint_root();
    const auto name = checkpoint_name(stage_, epoch_);
    save_checkpoint(root / name);
    // Periodic checkpoints replace each other; stage boundaries are kept.
    const auto pointer = root / "latest";
    std::string previous;
    if (std::ifstream in(pointer); in) std::getline(in, previous);
    const auto boundary_suffix = checkpoint_name(0, cfg_.schedule.epochs_per_block).substr(6);
    const bool previous_boundary = previous.ends_with(boundary_suffix);
    if (!previous.empty() && previous != name && !previous_boundary) std::filesystem::remove_all(root / previous);
    std::ofstream(pointer, std::ios::trunc) << name << '\n';
}

void Trainer::save_checkpoint(const std::filesystem::path& dir) const {
    auto tmp = dir;
    tmp += ".tmp";
    std::filesystem::remove_all(tmp);
    std::filesystem::create_directories(tmp);
    write_archive(tmp / "generator.pga", archive_parameters(*gen_));
    write_archive(tmp / "critic.pga", archive_parameters(*critic_));
    write_archive(tmp / "adam_generator.pga", opt_g_.save());
    write_archive(tmp / "adam_critic.pga", opt_d_.save());
    const nlohmann::json j = {
        {"format", "powergan-checkpoint"},
        {"version", 1},
        {"stage", stage_},
        {"epoch", epoch_},
        {"alpha", cfg_.schedule.alpha(stage_, std::max<std::int64_t>(epoch_, 1))},
        {"seed", cfg_.schedule.seed},
        {"num_classes", manifest_.num_classes()},
        {"config", to_json(cfg_)},
        {"normalization", data::manifest_to_json(manifest_)},
        {"rng", {{"scheme", "per-epoch substreams derived from (seed, stream, stage, epoch)"},
                 {"streams", {"shuffle", "shift", "latent", "interpolation"}}}},
        {"files",
         {{"generator", "generator.pga"},
          {"critic", "critic.pga"},
          {"optimizer_generator", "adam_generator.pga"},
          {"optimizer_critic", "adam_critic.pga"}}},
    };
    std::ofstream(tmp / kManifest) << j.dump(2) << '\n';
    std::filesystem::remove_all(dir);
    std::filesystem::rename(tmp, dir);
}

}  // namespace powergan::train
