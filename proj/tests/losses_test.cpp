#include "powergan/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "powergan/errors.hpp"
#include "powergan/nets.hpp"
#include "test_util.hpp"

namespace powergan::losses {
namespace {

using ad::Tensor;
using ad::Var;
using testing::random_tensor;

std::vector<double> random_scores(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = 3 * rng.normal();
    return v;
}

TEST(Wasserstein, ExamplesAndOracle) {
    const std::vector<double> zeros = {0, 0}, ones = {1, 1};
    EXPECT_EQ(wasserstein_estimate(ones, ones), 0.0);
    EXPECT_EQ(wasserstein_estimate(zeros, ones), 1.0);
    EXPECT_THROW(wasserstein_estimate(std::vector<double>{}, ones), Error);

    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const auto r = random_scores(rng, 1 + rng.index(40));
        const auto f = random_scores(rng, 1 + rng.index(40));
        long double sr = 0, sf = 0;
        for (double v : r) sr += v;
        for (double v : f) sf += v;
        const double oracle = static_cast<double>(sf / f.size() - sr / r.size());
        EXPECT_NEAR(wasserstein_estimate(r, f), oracle, 1e-12);
    }
}

TEST(CenterLoss, Examples) {
    const std::vector<double> a = {1, -2, 3}, neg_a = {-1, 2, -3}, one = {1};
    EXPECT_NEAR(center_loss(a, neg_a, 1e-3), 0.0, 1e-18);
    EXPECT_NEAR(center_loss(one, one, 1e-3), 2e-3, 1e-18);
}

TEST(CriticLoss, Recomposes) {
    Rng rng(2);
    LossConfig cfg;
    for (int trial = 0; trial < 100; ++trial) {
        const auto r = random_scores(rng, 8), f = random_scores(rng, 8);
        const double gp = std::abs(rng.normal());
        const auto b = critic_loss(r, f, gp, cfg);
        EXPECT_NEAR(b.critic_total, wasserstein_estimate(r, f) + gp + center_term(r, f, cfg), 1e-12);
        EXPECT_EQ(b.generator_total, generator_loss(f));
        EXPECT_EQ(critic_loss(r, f, 0.0, LossConfig{10, 0}).critic_total, wasserstein_estimate(r, f));
    }
}

TEST(CenterTerm, FormsMatchOracle) {
    Rng rng(12);
    LossConfig linear{10, 1e-3, PenaltyWeight::critic_gap, CenterForm::linear};
    LossConfig squared{10, 1e-3, PenaltyWeight::critic_gap, CenterForm::squared};
    for (int trial = 0; trial < 100; ++trial) {
        const auto r = random_scores(rng, 1 + rng.index(20)), f = random_scores(rng, 1 + rng.index(20));
        EXPECT_EQ(center_term(r, f, linear), center_loss(r, f, 1e-3));
        long double sr = 0, sf = 0;
        for (double v : r) sr += v;
        for (double v : f) sf += v;
        const long double m = sr / r.size() + sf / f.size();
        EXPECT_NEAR(center_term(r, f, squared), static_cast<double>(1e-3L * m * m), 1e-12);
    }
    const std::vector<double> a = {1, -2, 3}, neg_a = {-1, 2, -3}, one = {1};
    EXPECT_EQ(center_term(a, neg_a, squared), 0.0);
    EXPECT_NEAR(center_term(one, one, squared), 4e-3, 1e-18);
}

TEST(CenterTerm, SquaredGradientMatchesFiniteDifferences) {
    Rng rng(13);
    LossConfig cfg{10, 1e-2, PenaltyWeight::critic_gap, CenterForm::squared};
    const auto r = random_scores(rng, 5), f = random_scores(rng, 5);
    auto vr = Var<double>::leaf(Tensor<double>({5, 1}, r), true);
    auto vf = Var<double>::leaf(Tensor<double>({5, 1}, f), true);
    EXPECT_NEAR(center_term(vr, vf, cfg).item(), center_term(r, f, cfg), 1e-15);
    const auto g = ad::grad(center_term(vr, vf, cfg), {vr})[0].value();
    const auto fd = testing::numeric_grad(
        [&](const Tensor<double>& t) { return center_term(Var<double>::leaf(t), vf, cfg).item(); }, vr.value());
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g.data[i], fd.data[i], 1e-8);
}

TEST(VarLosses, MatchNumeric) {
    Rng rng(3);
    const auto r = random_scores(rng, 6), f = random_scores(rng, 6);
    auto vr = Var<double>::leaf(Tensor<double>({6, 1}, r));
    auto vf = Var<double>::leaf(Tensor<double>({6, 1}, f));
    EXPECT_NEAR(wasserstein_estimate(vr, vf).item(), wasserstein_estimate(r, f), 1e-12);
    EXPECT_NEAR(center_loss(vr, vf, 1e-3).item(), center_loss(r, f, 1e-3), 1e-15);
    EXPECT_NEAR(generator_loss(vf).item(), generator_loss(f), 1e-12);
}

TEST(GeneratorLoss, StrictlyAntitoneInMeanFake) {
    Rng rng(4);
    auto f = random_scores(rng, 5);
    const double before = generator_loss(f);
    f[2] += 0.5;
    EXPECT_LT(generator_loss(f), before);
    f[1] -= 1.0;
    EXPECT_GT(generator_loss(f), before);
}

// D(x) = a * sum(x): gradient a everywhere, norm a * sqrt(n).
template <class T>
CriticFn<T> linear_critic(double a) {
    return [a](const Var<T>& x, std::span<const int>) {
        return ad::scale(ad::reshape(ad::sum_to(x, {x.dim(0), 1, 1}), {x.dim(0), 1}), a);
    };
}

template <class T>
void check_linear_closed_form() {
    const int n = 16;
    Rng data(5);
    Tensor<T> real({4, 1, n}), fake({4, 1, n});
    for (auto& v : real.data) v = static_cast<T>(data.uniform());
    for (auto& v : fake.data) v = static_cast<T>(data.uniform());
    const std::vector<int> labels = {0, 1, 0, 1};
    LossConfig cfg;
    Rng rng(6);
    const auto gp = gradient_penalty<T>(linear_critic<T>(2.0 / std::sqrt(n)), real, fake, labels, labels, 1.0, cfg, rng);
    EXPECT_NEAR(gp.term.item(), 10.0, 1e-5);
    for (double norm : gp.grad_norms) EXPECT_NEAR(norm, 2.0, 1e-6);

    for (double a_sqrt_n : {0.3, 0.99, 1.0}) {
        const auto sub = gradient_penalty<T>(linear_critic<T>(a_sqrt_n / std::sqrt(n)), real, fake, labels, labels,
                                             1.0, cfg, rng);
        EXPECT_EQ(sub.term.item(), T(0));
    }
    const auto off = gradient_penalty<T>(linear_critic<T>(1.0), real, fake, labels, labels, -0.5, cfg, rng);
    EXPECT_EQ(off.term.item(), T(0));
}

TEST(GradientPenalty, LinearCriticClosedForm) {
    check_linear_closed_form<double>();
    check_linear_closed_form<float>();
}

TEST(GradientPenalty, MonotoneInWassersteinEstimate) {
    Rng rng(7);
    LossConfig cfg;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> norms(8);
        for (auto& v : norms) v = std::abs(1 + rng.normal());
        double prev = 0;
        for (double d_w = -2; d_w <= 2; d_w += 0.125) {
            const double p = penalty_from_norms(norms, d_w, cfg);
            if (d_w <= 0)
                EXPECT_EQ(p, 0.0);
            else
                EXPECT_GE(p, prev);
            prev = p;
        }
    }
}

TEST(GradientPenalty, RejectsMismatchedPairs) {
    Tensor<double> a({2, 1, 4}), b({3, 1, 4});
    const std::vector<int> l2 = {0, 1}, l2b = {1, 1}, l3 = {0, 1, 0};
    Rng rng(8);
    try {
        gradient_penalty<double>(linear_critic<double>(1.0), a, b, l2, l3, 1.0, LossConfig{}, rng);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidPairing);
    }
    EXPECT_THROW(gradient_penalty<double>(linear_critic<double>(1.0), a, a, l2, l2b, 1.0, LossConfig{}, rng), Error);
}

nets::NetConfig tiny_config() {
    nets::NetConfig c;
    c.base_features = 3;
    c.kernel_size = 3;
    c.latent_dim = 4;
    c.num_blocks = 2;
    c.window_length = 16;
    return c;
}

TEST(GradientPenalty, InputGradientMatchesFiniteDifferences) {
    nets::Critic<double> critic(tiny_config(), 2, 21);
    critic.grow();
    const std::vector<int> labels = {0, 1, 1};
    Rng rng(9);
    Tensor<double> x({3, 1, 16});
    for (auto& v : x.data) v = rng.uniform();
    auto score_sum = [&](const Tensor<double>& t) {
        return ad::sum_all(critic.forward(Var<double>::leaf(t), labels, 0.5)).item();
    };
    auto leaf = Var<double>::leaf(x, true);
    const auto g = ad::grad(ad::sum_all(critic.forward(leaf, labels, 0.5)), {leaf})[0].value();
    const auto fd = testing::numeric_grad(score_sum, x, 1e-3);
    for (int b = 0; b < 3; ++b) {
        double ga = 0, gf = 0;
        for (int i = 0; i < 16; ++i) {
            ga += std::pow(g.data[b * 16 + i], 2);
            gf += std::pow(fd.data[b * 16 + i], 2);
        }
        EXPECT_NEAR(std::sqrt(ga), std::sqrt(gf), 1e-3 * std::sqrt(gf));
    }
}

TEST(GradientPenalty, ParameterGradientMatchesFiniteDifferences) {
    nets::Critic<double> critic(tiny_config(), 2, 22);
    // Scale weights up so the penalty is active.
    for (const auto& [name, p] : critic.named_parameters()) {
        auto t = p.value();
        for (auto& v : t.data) v *= 3;
        critic.assign(name, t);
    }
    const std::vector<int> labels = {0, 1, 0};
    Rng data(10);
    Tensor<double> real({3, 1, 8}), fake({3, 1, 8});
    for (auto& v : real.data) v = data.uniform();
    for (auto& v : fake.data) v = data.uniform();
    CriticFn<double> fn = [&](const Var<double>& x, std::span<const int> l) { return critic.forward(x, l, 1.0); };
    auto penalty = [&] {
        Rng rng(11);
        return gradient_penalty<double>(fn, real, fake, labels, labels, 0.7, LossConfig{}, rng);
    };
    const auto gp = penalty();
    ASSERT_GT(gp.term.item(), 0.0);
    const std::string name = "d.block1.conv1.w";
    auto param = critic.named_parameters().at(name);
    const auto analytic = ad::grad(gp.term, {param})[0].value();
    auto f = [&](const Tensor<double>& w) {
        critic.assign(name, w);
        return penalty().term.item();
    };
    const auto original = param.value();
    const auto numeric = testing::numeric_grad(f, original, 1e-6);
    critic.assign(name, original);
    for (std::size_t i = 0; i < analytic.size(); ++i)
        EXPECT_NEAR(analytic.data[i], numeric.data[i], 1e-5 * (1 + std::abs(numeric.data[i])));
}

TEST(LossLog, WritesHeaderAndRows) {
    const auto path = std::filesystem::temp_directory_path() / "powergan_loss_log.csv";
    {
        LossLog log(path);
        log.write(3, 2, 0.5, LossBreakdown{1, 2, 3, 6, -1});
    }
    {
        LossLog log(path, true);
        log.write(4, 2, 0.75, LossBreakdown{});
    }
    std::ifstream in(path);
    std::string header, row, row2;
    std::getline(in, header);
    std::getline(in, row);
    std::getline(in, row2);
    EXPECT_EQ(header, "epoch,stage,alpha,D_W,gp,center,L_D,L_G");
    EXPECT_EQ(row, "3,2,0.5,1,2,3,6,-1");
    EXPECT_EQ(row2.substr(0, 9), "4,2,0.75,");
    std::filesystem::remove(path);
}

}  // namespace
}  // namespace powergan::losses
