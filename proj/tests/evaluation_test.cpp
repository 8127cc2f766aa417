#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "powergan/errors.hpp"
#include "powergan/evaluation.hpp"

using namespace powergan;
using namespace powergan::eval;

namespace {

Matrix random_probs(Rng& rng, int n, int c, double temperature) {
    Matrix p(n, c);
    for (int i = 0; i < n; ++i) {
        double z = 0;
        for (int j = 0; j < c; ++j) z += p(i, j) = std::exp(rng.normal() * temperature);
        p.row(i) /= z;
    }
    return p;
}

// exp(E[KL(p || p_y)]) rewritten as exp(mean_i sum p log p - sum p_y log p_y).
double is_oracle(const Matrix& p, int splits) {
    std::vector<double> scores;
    const auto n = p.rows();
    for (int s = 0; s < splits; ++s) {
        const auto lo = s * n / splits, hi = (s + 1) * n / splits;
        const auto cnt = static_cast<double>(hi - lo);
        std::vector<double> py(static_cast<std::size_t>(p.cols()), 0.0);
        double neg_entropy = 0;
        for (auto i = lo; i < hi; ++i)
            for (Eigen::Index c = 0; c < p.cols(); ++c) {
                py[static_cast<std::size_t>(c)] += p(i, c) / cnt;
                if (p(i, c) > 0) neg_entropy += p(i, c) * std::log(p(i, c)) / cnt;
            }
        double cross = 0;
        for (double v : py)
            if (v > 0) cross += v * std::log(v);
        scores.push_back(std::exp(neg_entropy - cross));
    }
    double m = 0;
    for (double v : scores) m += v / splits;
    return m;
}

Matrix gaussian(Rng& rng, int n, const std::vector<double>& mean, const std::vector<double>& sd) {
    Matrix x(n, static_cast<Eigen::Index>(mean.size()));
    for (int i = 0; i < n; ++i)
        for (std::size_t j = 0; j < mean.size(); ++j) x(i, static_cast<Eigen::Index>(j)) = mean[j] + sd[j] * rng.normal();
    return x;
}

// Class fridge sits near 100 W, dishwasher near 1000 W; thresholding the mean
// at 550 W separates them perfectly.
std::vector<data::Window> level_corpus(std::size_t per_class, std::size_t L, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<data::Window> out;
    for (std::size_t i = 0; i < per_class; ++i)
        for (auto [label, level] : {std::pair{data::Appliance::fridge, 100.0}, std::pair{data::Appliance::dishwasher, 1000.0}}) {
            data::Window w;
            w.label = label;
            for (std::size_t t = 0; t < L; ++t)
                w.samples.push_back(static_cast<float>(level * (1 + 0.3 * rng.uniform()) + 50 * rng.normal()));
            out.push_back(std::move(w));
        }
    return out;
}

double mean_rule_accuracy(const std::vector<data::Window>& ws) {
    std::size_t ok = 0;
    for (const auto& w : ws) {
        double m = 0;
        for (float v : w.samples) m += v / static_cast<double>(w.samples.size());
        ok += (m > 550) == (w.label == data::Appliance::dishwasher);
    }
    return static_cast<double>(ok) / static_cast<double>(ws.size());
}

ClassifierConfig small_classifier() {
    ClassifierConfig c;
    c.embedding_dim = 16;
    c.blocks = 3;
    c.kernel_size = 5;
    c.epochs = 30;
    c.seed = 11;
    return c;
}

}  // namespace

// --- Inception score -------------------------------------------------------

TEST(InceptionScore, OneHotCoverageGivesClassCount) {
    Matrix p = Matrix::Zero(40, 4);
    for (int i = 0; i < 40; ++i) p(i, i % 4) = 1;
    EXPECT_NEAR(inception_score(p, 1).mean, 4.0, 1e-12);
}

TEST(InceptionScore, IdenticalRowsGiveOne) {
    Matrix p(30, 3);
    for (int i = 0; i < 30; ++i) p.row(i) << 0.2, 0.5, 0.3;
    const auto r = inception_score(p, 3);
    EXPECT_NEAR(r.mean, 1.0, 1e-12);
    EXPECT_NEAR(r.std, 0.0, 1e-12);
}

TEST(InceptionScore, MatchesEntropyOracle) {
    Rng rng(5);
    for (int trial = 0; trial < 1000; ++trial) {
        const int c = 2 + static_cast<int>(rng.index(6));
        const int splits = 1 + static_cast<int>(rng.index(10));
        const auto p = random_probs(rng, splits * (2 + static_cast<int>(rng.index(8))), c, 0.5 + 3 * rng.uniform());
        ASSERT_NEAR(inception_score(p, splits).mean, is_oracle(p, splits), 1e-6) << trial;
    }
}

TEST(InceptionScore, BoundedByOneAndClassCount) {
    Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
        const int c = 2 + static_cast<int>(rng.index(5));
        auto p = random_probs(rng, 50, c, 20.0);  // nearly one-hot rows
        if (trial % 3 == 0)
            for (int i = 0; i < 50; ++i) {
                p.row(i).setZero();
                p(i, trial % c) = 1;  // fully collapsed
            }
        const double is = inception_score(p, 5).mean;
        EXPECT_GE(is, 1.0 - 1e-12);
        EXPECT_LE(is, c + 1e-9);
    }
}

TEST(InceptionScore, RejectsInvalidRows) {
    Matrix p(2, 2);
    p << 0.5, 0.6, 0.5, 0.5;
    EXPECT_THROW(inception_score(p, 1), Error);
    p << 1.2, -0.2, 0.5, 0.5;
    try {
        inception_score(p, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidDistribution);
    }
}

// --- Frechet distance ------------------------------------------------------

TEST(Frechet, SelfDistanceIsZero) {
    Rng rng(8);
    const auto x = gaussian(rng, 500, std::vector<double>(16, 1.0), std::vector<double>(16, 2.0));
    EXPECT_LE(frechet_distance(x, x), 1e-6 * 16);
}

TEST(Frechet, GaussianClosedForm) {
    Rng rng(9);
    const std::vector<double> mu_a{0, 0, 0, 0}, sd_a{1, 1, 1, 1};
    const std::vector<double> mu_b{1, -0.5, 0, 2}, sd_b{2, 0.5, 1, 1.5};
    const auto a = gaussian(rng, 100000, mu_a, sd_a);
    const auto b = gaussian(rng, 100000, mu_b, sd_b);
    double expected = 0;
    for (std::size_t j = 0; j < 4; ++j)
        expected += std::pow(mu_a[j] - mu_b[j], 2) + std::pow(sd_a[j] - sd_b[j], 2);
    EXPECT_NEAR(frechet_distance(a, b), expected, 0.05 * expected);
}

TEST(Frechet, SymmetricAndNonNegative) {
    Rng rng(10);
    const auto a = gaussian(rng, 200, {0, 1, 2}, {1, 1, 1});
    const auto b = gaussian(rng, 300, {0.5, 1, 0}, {2, 1, 0.3});
    const double ab = frechet_distance(a, b), ba = frechet_distance(b, a);
    EXPECT_GE(ab, 0);
    EXPECT_NEAR(ab, ba, 1e-8 * ab);
}

TEST(Frechet, ShapeErrors) {
    EXPECT_THROW(frechet_distance(Matrix::Zero(5, 3), Matrix::Zero(5, 4)), Error);
    EXPECT_THROW(frechet_distance(Matrix::Zero(1, 3), Matrix::Zero(5, 3)), Error);
}

// --- Sliced Wasserstein ----------------------------------------------------

TEST(Wasserstein1d, EqualSizesMatchSortedPairs) {
    Rng rng(12);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> a(50), b(50);
        for (auto& v : a) v = rng.normal();
        for (auto& v : b) v = 2 * rng.normal() + 1;
        auto sa = a, sb = b;
        std::sort(sa.begin(), sa.end());
        std::sort(sb.begin(), sb.end());
        double expected = 0;
        for (std::size_t i = 0; i < 50; ++i) expected += std::abs(sa[i] - sb[i]) / 50;
        EXPECT_NEAR(wasserstein_1d(a, b), expected, 1e-12);
    }
}

TEST(Wasserstein1d, UnequalSizes) {
    EXPECT_NEAR(wasserstein_1d({1, 1, 1}, {3, 3}), 2.0, 1e-12);
    EXPECT_NEAR(wasserstein_1d({0, 1, 2, 3}, {0, 1, 2, 3, 0, 1, 2, 3}), wasserstein_1d({0, 1, 2, 3, 0, 1, 2, 3}, {0, 1, 2, 3}),
                1e-12);
}

TEST(SlicedWasserstein, IdenticalSetsGiveZero) {
    Rng rng(13);
    const auto x = gaussian(rng, 100, {0, 1, 2, 3, 4}, {1, 2, 3, 4, 5});
    const auto r = sliced_wasserstein(x, x, {.iterations = 3, .projections = 200, .seed = 1});
    EXPECT_EQ(r.mean, 0.0);
    EXPECT_EQ(r.std, 0.0);
}

TEST(SlicedWasserstein, OneDimensionIsPlainW1) {
    Rng rng(14);
    const auto a = gaussian(rng, 80, {0}, {1});
    const auto b = gaussian(rng, 80, {3}, {2});
    std::vector<double> va(a.data(), a.data() + 80), vb(b.data(), b.data() + 80);
    const auto r = sliced_wasserstein(a, b, {.iterations = 2, .projections = 10, .seed = 2, .standardize = false});
    EXPECT_NEAR(r.mean, wasserstein_1d(va, vb), 1e-12);
}

TEST(SlicedWasserstein, ConstantShiftMatchesProjectionAverage) {
    // Translating by c moves each projection by theta.c; in 2-D the mean of
    // |cos| over uniform directions is 2 / pi.
    Rng rng(15);
    const auto a = gaussian(rng, 200, {0, 0}, {1, 1});
    Matrix b = a;
    b.col(0).array() += 3.0;
    b.col(1).array() += 4.0;
    const auto r = sliced_wasserstein(a, b, {.iterations = 10, .projections = 1000, .seed = 3, .standardize = false});
    EXPECT_NEAR(r.mean, 5.0 * 2.0 / std::numbers::pi, 0.03 * 5.0 * 2.0 / std::numbers::pi);
}

TEST(SlicedWasserstein, SpreadShrinksWithMoreProjections) {
    Rng rng(16);
    const auto a = gaussian(rng, 100, {0, 0, 0, 0}, {1, 1, 1, 1});
    const auto b = gaussian(rng, 100, {1, 0, 0, 0}, {1, 3, 1, 0.5});
    const auto few = sliced_wasserstein(a, b, {.iterations = 20, .projections = 10, .seed = 4});
    const auto many = sliced_wasserstein(a, b, {.iterations = 20, .projections = 1000, .seed = 4});
    EXPECT_LT(many.std, few.std);
}

TEST(SlicedWasserstein, Deterministic) {
    Rng rng(17);
    const auto a = gaussian(rng, 50, {0, 0, 0}, {1, 1, 1});
    const auto b = gaussian(rng, 60, {0, 1, 0}, {1, 1, 2});
    const auto r1 = sliced_wasserstein(a, b, {.iterations = 3, .projections = 50, .seed = 5});
    const auto r2 = sliced_wasserstein(a, b, {.iterations = 3, .projections = 50, .seed = 5});
    EXPECT_EQ(r1.per_iteration, r2.per_iteration);
}

// --- Laplacian triangle ----------------------------------------------------

TEST(Laplacian, KernelIsNormalizedAndSymmetric) {
    const auto k = gaussian_kernel();
    ASSERT_EQ(k.size(), 15u);
    double s = 0;
    for (std::size_t i = 0; i < k.size(); ++i) {
        s += k[i];
        EXPECT_DOUBLE_EQ(k[i], k[k.size() - 1 - i]);
    }
    EXPECT_NEAR(s, 1.0, 1e-15);
}

TEST(Laplacian, ReconstructsInput) {
    Rng rng(18);
    for (std::size_t L : {30u, 57u, 280u, 2240u}) {
        std::vector<double> x(L);
        double peak = 0;
        for (auto& v : x) peak = std::max(peak, std::abs(v = 1000 * rng.normal()));
        const auto tri = laplacian_triangle(x);
        const auto back = reconstruct(tri);
        ASSERT_EQ(back.size(), L);
        for (std::size_t i = 0; i < L; ++i) EXPECT_NEAR(back[i], x[i], 1e-5 * peak);
        EXPECT_LT(tri.residual.size(), kMinLevelLength);
    }
}

TEST(Laplacian, ConstantWindowHasNoDetail) {
    const std::vector<double> x(280, 42.0);
    const auto tri = laplacian_triangle(x);
    EXPECT_EQ(tri.details.size(), 4u);  // 280, 140, 70, 35
    for (const auto& d : tri.details)
        for (double v : d) EXPECT_NEAR(v, 0.0, 1e-12);
    for (double v : tri.residual) EXPECT_NEAR(v, 42.0, 1e-12);
}

TEST(Laplacian, PatchCountsAndErrors) {
    std::vector<data::Window> ws(3);
    Rng rng(19);
    for (auto& w : ws)
        for (int i = 0; i < 280; ++i) w.samples.push_back(static_cast<float>(rng.normal()));
    const auto patches = laplacian_patches(ws, 1);
    ASSERT_EQ(patches.size(), 4u);
    for (const auto& m : patches) {
        EXPECT_EQ(m.rows(), static_cast<Eigen::Index>(3 * kPatchesPerLevel));
        EXPECT_EQ(m.cols(), static_cast<Eigen::Index>(kPatchLength));
    }
    EXPECT_THROW(laplacian_triangle(std::vector<double>(29, 1.0)), Error);
}

// --- Classifier ------------------------------------------------------------

TEST(Classifier, SeparableCorpusReachesHighHoldoutAccuracy) {
    const auto corpus = level_corpus(60, 64, 20);
    ASSERT_EQ(mean_rule_accuracy(corpus), 1.0);
    ClassifierReport rep;
    const auto model = train_classifier(corpus, small_classifier(), &rep);
    EXPECT_EQ(rep.holdout_size, 24u);
    EXPECT_EQ(rep.train_size, 96u);
    EXPECT_GE(rep.holdout_accuracy, 0.95);
    EXPECT_LT(rep.epoch_loss.back(), rep.epoch_loss.front());
}

TEST(Classifier, ShuffledLabelsStayNearChance) {
    // Both labels draw content from one distribution.
    auto corpus = level_corpus(400, 32, 21);
    Rng rng(22);
    for (auto& w : corpus) {
        for (auto& v : w.samples) v = static_cast<float>(500 + 300 * rng.normal());
        w.label = rng.uniform() < 0.5 ? data::Appliance::fridge : data::Appliance::dishwasher;
    }
    auto cfg = small_classifier();
    cfg.epochs = 3;
    ClassifierReport rep;
    train_classifier(corpus, cfg, &rep);
    EXPECT_NEAR(rep.holdout_accuracy, 0.5, 0.1);
}

TEST(Classifier, SaveLoadRoundTrip) {
    const auto corpus = level_corpus(10, 64, 23);
    auto cfg = small_classifier();
    cfg.epochs = 1;
    const auto model = train_classifier(corpus, cfg);
    const auto path = std::filesystem::temp_directory_path() / "powergan_classifier_test.pga";
    model.save(path);
    const auto back = Classifier::load(path);
    EXPECT_EQ(back.labels(), model.labels());
    EXPECT_EQ(back.holdout_accuracy(), model.holdout_accuracy());
    EXPECT_EQ(back.predict_proba(corpus), model.predict_proba(corpus));
    EXPECT_EQ(back.embed(corpus), model.embed(corpus));
    std::filesystem::remove(path);
}

TEST(Classifier, ProbabilitiesAreDistributions) {
    const auto corpus = level_corpus(5, 64, 24);
    const Classifier model(small_classifier(), {data::Appliance::fridge, data::Appliance::dishwasher}, 64, 1000.0);
    const auto p = model.predict_proba(corpus);
    for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
    EXPECT_EQ(model.embed(corpus).cols(), 16);
}

TEST(Classifier, NeedsTwoClasses) {
    auto corpus = level_corpus(5, 64, 25);
    for (auto& w : corpus) w.label = data::Appliance::fridge;
    try {
        train_classifier(corpus, small_classifier());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InsufficientClasses);
    }
}

// --- Report ----------------------------------------------------------------

TEST(MetricReport, JsonRoundTrip) {
    MetricReport r;
    r.is_mean = 1.9;
    r.is_std = 0.01;
    r.is_real_mean = 1.95;
    r.fid = 3.25;
    r.swd_lap_mean = 1234.5;
    r.swd_cl_mean = 0.2;
    r.real_count = 10;
    r.fake_count = 12;
    r.config = {{"seed", 3}};
    r.warnings = {"w"};
    const auto back = metric_report_from_json(to_json(r));
    EXPECT_EQ(to_json(back), to_json(r));
    EXPECT_DOUBLE_EQ(to_json(r).at("swd_lap_mean_x1e-3").get<double>(), 1.2345);
}

TEST(Evaluate, EndToEndOnSmallCorpus) {
    const auto real = level_corpus(20, 64, 26);
    const auto fake = level_corpus(20, 64, 27);
    auto cfg = small_classifier();
    cfg.epochs = 2;
    const auto model = train_classifier(real, cfg);
    EvaluationConfig ec;
    ec.swd.iterations = 2;
    ec.swd.projections = 50;
    const auto r = evaluate_windows(real, fake, model, ec);
    EXPECT_GE(r.fid, 0);
    EXPECT_GE(r.is_mean, 1 - 1e-12);
    EXPECT_LE(r.is_mean, 2 + 1e-9);
    EXPECT_GT(r.swd_lap_mean, 0);
    EXPECT_EQ(r.real_count, 40u);
    const auto self = evaluate_windows(real, real, model, ec);
    EXPECT_LE(self.fid, 1e-6 * 16);
    EXPECT_EQ(self.swd_cl_mean, 0);
    EXPECT_EQ(self.swd_lap_mean, 0);
}
