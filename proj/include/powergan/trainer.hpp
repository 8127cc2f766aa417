#pragma once

// Progressive training loop: per stage, EP_b epochs with a linear fade over the
// first EP_f, critic step every iteration and a generator step every R-th.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "powergan/data_pipeline.hpp"
#include "powergan/losses.hpp"
#include "powergan/nets.hpp"
#include "powergan/optimizer.hpp"

namespace powergan::train {

struct TrainingSchedule {
    std::int64_t epochs_per_block = 2000;
    std::int64_t fade_epochs = 1000;
    int critic_ratio = 1;
    // Apply the ratio per epoch (generator trains in epochs with ep % R == 0)
    // instead of per iteration.
    bool ratio_per_epoch = false;
    int batch_size = 32;
    AdamConfig adam;
    std::uint64_t seed = 0;
    std::int64_t checkpoint_every = 100;

    // Throws Error(InvalidConfig).
    void validate() const;
    double alpha(int stage, std::int64_t epoch) const;
};

struct TrainConfig {
    nets::NetConfig net;
    losses::LossConfig loss;
    TrainingSchedule schedule;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct IterationRecord {
    int stage = 0;
    std::int64_t epoch = 0;
    int iteration = 0;
    double alpha = 1;
    bool generator_step = false;
    losses::LossBreakdown loss;
};

struct EpochRecord {
    int stage = 0;
    std::int64_t epoch = 0;
    double alpha = 1;
    losses::LossBreakdown mean;
};

// Loaded checkpoint contents, enough to run the generator.
struct GeneratorBundle {
    TrainConfig config;
    data::NormalizationManifest manifest;
    std::unique_ptr<nets::Generator<float>> generator;
    int stage = 0;
    std::int64_t epoch = 0;
};
// Accepts a checkpoint directory, a `latest` pointer file, or a directory
// holding one (the checkpoint root or the run directory).
std::filesystem::path resolve_checkpoint(const std::filesystem::path& path);

GeneratorBundle load_generator(const std::filesystem::path& checkpoint_dir);

class Trainer {
public:
    // windows must be normalized and balanced; throws Error(EmptyDataset).
    Trainer(TrainConfig cfg, std::vector<data::Window> windows, data::NormalizationManifest manifest,
            std::filesystem::path out_dir);

    // Continues from a checkpoint; throws Error(IncompatibleCheckpoint) if the
    // dataset does not match the checkpoint's window length or labels.
    static Trainer resume(const std::filesystem::path& checkpoint_dir, std::vector<data::Window> windows,
                          data::NormalizationManifest manifest, std::filesystem::path out_dir);

    // Trains until the schedule is complete (or max_epochs more epochs have run).
    // Writes log.csv and checkpoints under out_dir.
    void run(std::optional<std::int64_t> max_epochs = std::nullopt);
    // One epoch at the current position; returns false when the schedule is done.
    bool train_epoch();
    bool finished() const;

    void save_checkpoint(const std::filesystem::path& dir) const;

    int stage() const { return stage_; }
    std::int64_t epoch() const { return epoch_; }
    const TrainConfig& config() const { return cfg_; }
    const nets::Generator<float>& generator() const { return *gen_; }
    const nets::Critic<float>& critic() const { return *critic_; }
    const data::NormalizationManifest& manifest() const { return manifest_; }
    const std::vector<IterationRecord>& iterations() const { return iterations_; }
    const std::vector<EpochRecord>& epochs() const { return epochs_; }

    // Called after every iteration (tests hash parameters between steps).
    std::function<void(const IterationRecord&)> on_iteration;
    // Called by run() after each epoch is logged.
    std::function<void(const EpochRecord&)> on_epoch;

    std::filesystem::path checkpoint_root() const { return out_dir_ / "checkpoints"; }

private:
    Trainer(TrainConfig cfg, std::vector<data::Window> windows, data::NormalizationManifest manifest,
            std::filesystem::path out_dir, bool resumed);

    IterationRecord iteration(const std::vector<std::size_t>& selection, int index, double alpha, Rng& shift_rng,
                              Rng& latent_rng, Rng& mix_rng, bool generator_epoch);
    ad::Tensor<float> sample_latent(std::size_t batch, Rng& rng) const;
    void checkpoint_if_due(bool stage_end) const;
    [[noreturn]] void abort_non_finite(const IterationRecord& r) const;

    TrainConfig cfg_;
    std::vector<data::Window> windows_;
    data::NormalizationManifest manifest_;
    std::filesystem::path out_dir_;
    std::unique_ptr<nets::Generator<float>> gen_;
    std::unique_ptr<nets::Critic<float>> critic_;
    Adam opt_g_, opt_d_;
    int stage_ = 1;
    std::int64_t epoch_ = 0;  // epochs completed in the current stage
    std::vector<IterationRecord> iterations_;
    std::vector<EpochRecord> epochs_;
    bool resumed_ = false;
};

}  // namespace powergan::train
