#pragma once

// Conditional progressively growing 1-D generator and critic.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "powergan/autograd.hpp"

namespace powergan::nets {

// Where the critic blends the new block with the previous stage while fading.
// scores: alpha * D_n(x) + (1 - alpha) * D_{n-1}(maxpool x), affine in alpha.
// features: blend the new block's output with the previous input head's
// features, then run the shared older blocks once.
enum class CriticFade { scores, features };

struct NetConfig {
    int base_features = 64;
    int kernel_size = 9;
    double leaky_slope = 0.2;
    double pixelnorm_epsilon = 1e-8;
    int latent_dim = 100;
    int num_blocks = 6;
    std::size_t window_length = 2240;
    CriticFade critic_fade = CriticFade::scores;

    // Throws Error(InvalidConfig).
    void validate() const;
    int input_stage_features(int num_classes) const { return num_classes * base_features; }
    // Length produced by block 1; every further block doubles it.
    std::size_t base_length() const { return window_length >> (num_blocks - 1); }
    std::size_t stage_length(int stage) const { return base_length() << (stage - 1); }
};

// Row-major N_z x C matrix with z in column `label`, flattened:
// out[i * C + label] = z[i]. Throws Error(InvalidLabel).
template <class T>
std::vector<T> embed_latent(std::span<const T> z, int label, int num_classes);

// [B, N_z] latents and B labels -> [B, N_z * C].
template <class T>
ad::Tensor<T> embed_latent_batch(const ad::Tensor<T>& z, std::span<const int> labels, int num_classes);

// x stacked with C constant one-hot channels: (1 + C) x L, row-major.
template <class T>
std::vector<T> condition_critic_input(std::span<const T> x, int label, int num_classes);

// [B, 1, L] -> [B, 1 + C, L]; gradients flow to x only.
template <class T>
ad::Var<T> condition_critic_batch(const ad::Var<T>& x, std::span<const int> labels, int num_classes);

// out[b, f, t] = in[b, f, t] / sqrt(mean_f in[b, ., t]^2 + eps).
template <class T>
ad::Var<T> pixelwise_feature_norm(const ad::Var<T>& x, double eps = 1e-8);

// Mean over (f, t) of the population standard deviation across the batch; shape {1}.
template <class T>
ad::Var<T> minibatch_stddev(const ad::Var<T>& x);
// x with minibatch_stddev appended as one constant channel: [B, F, L] -> [B, F + 1, L].
template <class T>
ad::Var<T> minibatch_stddev_feature(const ad::Var<T>& x);

template <class T>
std::vector<T> upsample_nn(std::span<const T> x);

// Equalized layers: the stored weight is scaled by sqrt(2 / fan_in) at run time.
// x: [B, Cin, L], w: [Cout, Cin, K], b: [1, Cout, 1].
template <class T>
ad::Var<T> equalized_conv(const ad::Var<T>& x, const ad::Var<T>& w, const ad::Var<T>& b);
// x: [B, in], w: [in, out], b: [1, out].
template <class T>
ad::Var<T> equalized_linear(const ad::Var<T>& x, const ad::Var<T>& w, const ad::Var<T>& b);

template <class T>
using ParamMap = std::map<std::string, ad::Var<T>>;

// Named parameter set grown block by block. Weights are stored unit-normal and
// scaled at run time by sqrt(2 / fan_in) (equalized learning rate).
template <class T>
class Module {
public:
    int stage() const { return stage_; }
    int num_classes() const { return num_classes_; }
    const NetConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }

    const ParamMap<T>& named_parameters() const { return params_; }
    std::vector<ad::Var<T>> parameters() const;
    std::vector<std::string> parameter_names() const;
    std::size_t parameter_count() const;

    // Overwrites a parameter value; throws Error(IncompatibleCheckpoint) on unknown name or shape.
    void assign(const std::string& name, const ad::Tensor<T>& value);

protected:
    Module(NetConfig cfg, int num_classes, std::uint64_t seed);

    void add_conv(const std::string& name, int cout, int cin, int kernel, std::uint64_t init_seed);
    void add_linear(const std::string& name, int in, int out, std::uint64_t init_seed);
    ad::Var<T> conv(const std::string& name, const ad::Var<T>& x) const;
    ad::Var<T> linear(const std::string& name, const ad::Var<T>& x) const;
    const ad::Var<T>& param(const std::string& name) const;
    int resolve_stage(int stage) const;

    NetConfig cfg_;
    int num_classes_;
    std::uint64_t seed_;
    int stage_ = 0;
    ParamMap<T> params_;
};

template <class T>
class Generator : public Module<T> {
public:
    // Built at stage 1; call grow() to add blocks.
    Generator(NetConfig cfg, int num_classes, std::uint64_t seed);

    // Adds the next block and its output head. Throws Error(InvalidStage) past num_blocks.
    void grow();

    // latent: [B, N_z * C] from embed_latent_batch -> [B, 1, stage_length].
    // stage 0 means the current stage; lower built stages may be evaluated too.
    ad::Var<T> forward(const ad::Var<T>& latent, double alpha, int stage = 0) const;
    ad::Var<T> forward(const ad::Tensor<T>& z, std::span<const int> labels, double alpha, int stage = 0) const;

private:
    void build_block(int k);
    ad::Var<T> block(int k, const ad::Var<T>& h) const;
    ad::Var<T> act_norm(const ad::Var<T>& x) const;
};

template <class T>
class Critic : public Module<T> {
public:
    Critic(NetConfig cfg, int num_classes, std::uint64_t seed);

    void grow();

    // x: [B, 1, stage_length], labels: B class indices -> scores [B, 1].
    ad::Var<T> forward(const ad::Var<T>& x, std::span<const int> labels, double alpha, int stage = 0) const;

private:
    void build_block(int k);
    ad::Var<T> from_ts(int k, const ad::Var<T>& x, std::span<const int> labels) const;
    ad::Var<T> block(int k, const ad::Var<T>& h) const;
};

}  // namespace powergan::nets
