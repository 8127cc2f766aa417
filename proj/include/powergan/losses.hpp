#pragma once

// Critic and generator objectives: Wasserstein estimate, one-sided gradient
// penalty weighted by max(0, D_W), and score centering.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <vector>

#include "powergan/autograd.hpp"
#include "powergan/rng.hpp"

namespace powergan::losses {

// Which score gap sets the adaptive penalty weight max(0, .) during training.
// critic_gap: mean(real) - mean(fake), the critic's distance estimate.
// fake_minus_real: D_W as logged, mean(fake) - mean(real).
enum class PenaltyWeight { critic_gap, fake_minus_real };

// Centering term used by the trainer.
// linear: eps * (mean(real) + mean(fake)); its gradient is constant.
// squared: eps * (mean(real) + mean(fake))^2, zero once scores straddle zero.
enum class CenterForm { linear, squared };

struct LossConfig {
    double lambda_gp = 10.0;
    double epsilon_center = 1e-3;
    PenaltyWeight penalty_weight = PenaltyWeight::critic_gap;
    CenterForm center_form = CenterForm::squared;

    // Value handed to gradient_penalty as its D_W argument.
    double penalty_weight_input(double d_w) const { return penalty_weight == PenaltyWeight::critic_gap ? -d_w : d_w; }

    // Throws Error(InvalidConfig) unless lambda_gp >= 0 and 0 <= epsilon_center <= 0.1.
    void validate() const;
};

struct LossBreakdown {
    double wasserstein = 0;  // D_W = mean(fake) - mean(real)
    double gp = 0;
    double center = 0;
    double critic_total = 0;     // D_W + gp + center
    double generator_total = 0;  // -mean(fake)
};

// Plain numeric forms. Throw Error(EmptyBatch) on empty inputs.
double wasserstein_estimate(std::span<const double> scores_real, std::span<const double> scores_fake);
double center_loss(std::span<const double> scores_real, std::span<const double> scores_fake, double epsilon);
double generator_loss(std::span<const double> scores_fake);
// center_loss, or its square scaled by 1 / epsilon, per cfg.center_form.
double center_term(std::span<const double> scores_real, std::span<const double> scores_fake, const LossConfig& cfg);
// lambda * max(0, D_W) * mean((norm - 1)_+^2) for precomputed gradient norms.
double penalty_from_norms(std::span<const double> grad_norms, double d_w, const LossConfig& cfg);
LossBreakdown critic_loss(std::span<const double> scores_real, std::span<const double> scores_fake, double gp,
                          const LossConfig& cfg);

// Differentiable forms over score tensors of shape [B, 1].
template <class T>
ad::Var<T> wasserstein_estimate(const ad::Var<T>& scores_real, const ad::Var<T>& scores_fake);
template <class T>
ad::Var<T> center_loss(const ad::Var<T>& scores_real, const ad::Var<T>& scores_fake, double epsilon);
template <class T>
ad::Var<T> center_term(const ad::Var<T>& scores_real, const ad::Var<T>& scores_fake, const LossConfig& cfg);
template <class T>
ad::Var<T> generator_loss(const ad::Var<T>& scores_fake);

template <class T>
using CriticFn = std::function<ad::Var<T>(const ad::Var<T>& x, std::span<const int> labels)>;

template <class T>
struct PenaltyResult {
    ad::Var<T> term;                 // shape {1}; differentiable w.r.t. critic parameters
    std::vector<double> grad_norms;  // per sample; empty when the weight is zero
};

// x_i = u_i * real_i + (1 - u_i) * fake_i with one u_i ~ U[0, 1) per sample;
// gradients are taken w.r.t. the signal channel only. d_w enters as a constant.
// One uniform is drawn per sample even when the weight is zero, so the stream
// position does not depend on D_W. Throws Error(InvalidPairing).
template <class T>
PenaltyResult<T> gradient_penalty(const CriticFn<T>& critic, const ad::Tensor<T>& x_real,
                                  const ad::Tensor<T>& x_fake, std::span<const int> labels_real,
                                  std::span<const int> labels_fake, double d_w, const LossConfig& cfg, Rng& rng);

// Appends one row per call: epoch,stage,alpha,D_W,gp,center,L_D,L_G.
class LossLog {
public:
    explicit LossLog(const std::filesystem::path& path, bool append = false);
    void write(std::int64_t epoch, int stage, double alpha, const LossBreakdown& b);

    static constexpr const char* kHeader = "epoch,stage,alpha,D_W,gp,center,L_D,L_G";

private:
    std::ofstream out_;
};

}  // namespace powergan::losses
