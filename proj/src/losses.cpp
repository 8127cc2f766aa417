#include "powergan/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "powergan/errors.hpp"

namespace powergan::losses {

using ad::Tensor;
using ad::Var;

void LossConfig::validate() const {
    if (!(lambda_gp >= 0)) throw Error(ErrorCode::InvalidConfig, "lambda_gp must be non-negative");
    if (!(epsilon_center >= 0 && epsilon_center <= 0.1))
        throw Error(ErrorCode::InvalidConfig, "epsilon_center must be in [0, 0.1]");
}

namespace {

double mean_of(std::span<const double> v, const char* what) {
    if (v.empty()) throw Error(ErrorCode::EmptyBatch, std::string(what) + " is empty");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double wasserstein_estimate(std::span<const double> scores_real, std::span<const double> scores_fake) {
    return mean_of(scores_fake, "fake scores") - mean_of(scores_real, "real scores");
}

double center_loss(std::span<const double> scores_real, std::span<const double> scores_fake, double epsilon) {
    return epsilon * (mean_of(scores_real, "real scores") + mean_of(scores_fake, "fake scores"));
}

double center_term(std::span<const double> scores_real, std::span<const double> scores_fake, const LossConfig& cfg) {
    if (cfg.center_form == CenterForm::linear) return center_loss(scores_real, scores_fake, cfg.epsilon_center);
    const double m = mean_of(scores_real, "real scores") + mean_of(scores_fake, "fake scores");
    return cfg.epsilon_center * m * m;
}

double generator_loss(std::span<const double> scores_fake) { return -mean_of(scores_fake, "fake scores"); }

double penalty_from_norms(std::span<const double> grad_norms, double d_w, const LossConfig& cfg) {
    const double weight = cfg.lambda_gp * std::max(0.0, d_w);
    if (weight == 0) return 0;
    double acc = 0;
    for (double n : grad_norms) acc += std::pow(std::max(0.0, n - 1.0), 2);
    return weight * acc / static_cast<double>(grad_norms.size());
}

LossBreakdown critic_loss(std::span<const double> scores_real, std::span<const double> scores_fake, double gp,
                          const LossConfig& cfg) {
    LossBreakdown b;
    b.wasserstein = wasserstein_estimate(scores_real, scores_fake);
    b.gp = gp;
    b.center = center_term(scores_real, scores_fake, cfg);
    b.critic_total = b.wasserstein + b.gp + b.center;
    b.generator_total = generator_loss(scores_fake);
    return b;
}

template <class T>
Var<T> wasserstein_estimate(const Var<T>& scores_real, const Var<T>& scores_fake) {
    if (scores_real.numel() == 0 || scores_fake.numel() == 0) throw Error(ErrorCode::EmptyBatch, "empty score batch");
    return ad::sub(ad::mean_all(scores_fake), ad::mean_all(scores_real));
}

template <class T>
Var<T> center_loss(const Var<T>& scores_real, const Var<T>& scores_fake, double epsilon) {
    if (scores_real.numel() == 0 || scores_fake.numel() == 0) throw Error(ErrorCode::EmptyBatch, "empty score batch");
    return ad::scale(ad::add(ad::mean_all(scores_real), ad::mean_all(scores_fake)), epsilon);
}

template <class T>
Var<T> center_term(const Var<T>& scores_real, const Var<T>& scores_fake, const LossConfig& cfg) {
    if (cfg.center_form == CenterForm::linear) return center_loss(scores_real, scores_fake, cfg.epsilon_center);
    if (scores_real.numel() == 0 || scores_fake.numel() == 0) throw Error(ErrorCode::EmptyBatch, "empty score batch");
    return ad::scale(ad::square(ad::add(ad::mean_all(scores_real), ad::mean_all(scores_fake))), cfg.epsilon_center);
}

template <class T>
Var<T> generator_loss(const Var<T>& scores_fake) {
    if (scores_fake.numel() == 0) throw Error(ErrorCode::EmptyBatch, "empty score batch");
    return ad::neg(ad::mean_all(scores_fake));
}

template <class T>
PenaltyResult<T> gradient_penalty(const CriticFn<T>& critic, const Tensor<T>& x_real, const Tensor<T>& x_fake,
                                  std::span<const int> labels_real, std::span<const int> labels_fake, double d_w,
                                  const LossConfig& cfg, Rng& rng) {
    if (x_real.shape != x_fake.shape || x_real.rank() < 2)
        throw Error(ErrorCode::InvalidPairing,
                    "real batch " + ad::shape_str(x_real.shape) + " vs fake batch " + ad::shape_str(x_fake.shape));
    const auto B = static_cast<std::size_t>(x_real.dim(0));
    if (labels_real.size() != B || labels_fake.size() != B ||
        !std::equal(labels_real.begin(), labels_real.end(), labels_fake.begin()))
        throw Error(ErrorCode::InvalidPairing, "real and fake samples must share labels pairwise");

    std::vector<double> u(B);
    for (auto& v : u) v = rng.uniform();

    PenaltyResult<T> result;
    const double weight = cfg.lambda_gp * std::max(0.0, d_w);
    if (weight == 0) {
        result.term = ad::zeros<T>({1});
        return result;
    }

    const std::size_t per = x_real.size() / B;
    Tensor<T> mixed(x_real.shape);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = b * per; i < (b + 1) * per; ++i)
            mixed.data[i] = static_cast<T>(u[b] * x_real.data[i] + (1 - u[b]) * x_fake.data[i]);

    ad::EnableGradGuard on(true);
    auto x = Var<T>::leaf(std::move(mixed), true);
    auto g = ad::grad(ad::sum_all(critic(x, labels_real)), {x}, true)[0];

    ad::Shape per_sample(x_real.rank(), 1);
    per_sample[0] = x_real.dim(0);
    auto norm = ad::pow_pos(ad::sum_to(ad::square(g), per_sample), 0.5);
    for (T v : norm.value().data) result.grad_norms.push_back(static_cast<double>(v));
    auto excess = ad::relu(ad::add_scalar(norm, -1.0));
    result.term = ad::scale(ad::mean_all(ad::square(excess)), weight);
    return result;
}

LossLog::LossLog(const std::filesystem::path& path, bool append) {
    const bool fresh = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    if (fresh) out_ << kHeader << '\n';
}

void LossLog::write(std::int64_t epoch, int stage, double alpha, const LossBreakdown& b) {
    char line[512];
    std::snprintf(line, sizeof(line), "%lld,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(epoch),
                  stage, alpha, b.wasserstein, b.gp, b.center, b.critic_total, b.generator_total);
    out_ << line << std::flush;
    if (!out_) throw Error(ErrorCode::IoError, "loss log write failed");
}

#define POWERGAN_INSTANTIATE(T)                                                                              \
    template Var<T> wasserstein_estimate<T>(const Var<T>&, const Var<T>&);                                   \
    template Var<T> center_loss<T>(const Var<T>&, const Var<T>&, double);                                    \
    template Var<T> center_term<T>(const Var<T>&, const Var<T>&, const LossConfig&);                         \
    template Var<T> generator_loss<T>(const Var<T>&);                                                        \
    template PenaltyResult<T> gradient_penalty<T>(const CriticFn<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                                  std::span<const int>, std::span<const int>, double,        \
                                                  const LossConfig&, Rng&);

POWERGAN_INSTANTIATE(float)
POWERGAN_INSTANTIATE(double)

}  // namespace powergan::losses
