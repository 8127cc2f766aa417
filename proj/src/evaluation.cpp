#include "powergan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "powergan/errors.hpp"
#include "powergan/window_io.hpp"

namespace powergan::eval {

namespace {

MeanStd mean_std(std::span<const double> v) {
    MeanStd r;
    if (v.empty()) return r;
    r.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(v.size()));
    return r;
}

}  // namespace

MeanStd inception_score(const Matrix& probs, int splits) {
    const auto n = probs.rows();
    if (splits < 1 || splits > n)
        throw Error(ErrorCode::InvalidConfig,
                    "splits must be in [1, " + std::to_string(n) + "], got " + std::to_string(splits));
    for (Eigen::Index i = 0; i < n; ++i) {
        const double sum = probs.row(i).sum();
        if (!(std::abs(sum - 1.0) <= 1e-6) || (probs.row(i).array() < 0).any() || !probs.row(i).allFinite())
            throw Error(ErrorCode::InvalidDistribution,
                        "row " + std::to_string(i) + " is not a probability vector (sum " + std::to_string(sum) + ")");
    }
    std::vector<double> scores;
    for (int s = 0; s < splits; ++s) {
        const Eigen::Index lo = s * n / splits, hi = (s + 1) * n / splits;
        const auto part = probs.middleRows(lo, hi - lo);
        const Eigen::RowVectorXd marginal = part.colwise().mean();
        double kl = 0;
        for (Eigen::Index i = 0; i < part.rows(); ++i)
            for (Eigen::Index c = 0; c < part.cols(); ++c) {
                const double p = part(i, c);
                if (p > 0) kl += p * (std::log(p) - std::log(marginal(c)));
            }
        scores.push_back(std::exp(kl / static_cast<double>(part.rows())));
    }
    return mean_std(scores);
}

namespace {

Eigen::MatrixXd covariance(const Matrix& x, const Eigen::RowVectorXd& mean) {
    const Eigen::MatrixXd centred = x.rowwise() - mean;
    return centred.transpose() * centred / static_cast<double>(x.rows() - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    const Eigen::VectorXd roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const Matrix& real, const Matrix& fake) {
    if (real.cols() != fake.cols())
        throw Error(ErrorCode::InvalidShape, "embedding widths differ: " + std::to_string(real.cols()) + " vs " +
                                                 std::to_string(fake.cols()));
    if (real.rows() < 2 || fake.rows() < 2) throw Error(ErrorCode::EmptyCorpus, "need at least two rows per set");
    const Eigen::RowVectorXd mr = real.colwise().mean(), mf = fake.colwise().mean();
    const auto E = real.cols();
    constexpr double jitter = 1e-6;
    const Eigen::MatrixXd cr = covariance(real, mr) + jitter * Eigen::MatrixXd::Identity(E, E);
    const Eigen::MatrixXd cf = covariance(fake, mf) + jitter * Eigen::MatrixXd::Identity(E, E);
    // Tr sqrt(cr cf) = Tr sqrt(S cf S) with S = sqrt(cr); the latter is symmetric.
    const Eigen::MatrixXd s = psd_sqrt(cr);
    Eigen::MatrixXd m = s * cf * s;
    m = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double fid = (mr - mf).squaredNorm() + cr.trace() + cf.trace() - 2 * tr_sqrt;
    return std::max(0.0, fid);
}

double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw Error(ErrorCode::EmptyCorpus, "empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a.size() == b.size()) {
        double acc = 0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
        return acc / static_cast<double>(a.size());
    }
    const std::size_t K = std::max(a.size(), b.size());
    auto quantile = [](const std::vector<double>& v, double q) {
        const double pos = std::clamp(q * static_cast<double>(v.size()) - 0.5, 0.0, static_cast<double>(v.size() - 1));
        const auto lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, v.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return v[lo] + frac * (v[hi] - v[lo]);
    };
    double acc = 0;
    for (std::size_t k = 0; k < K; ++k) {
        const double q = (static_cast<double>(k) + 0.5) / static_cast<double>(K);
        acc += std::abs(quantile(a, q) - quantile(b, q));
    }
    return acc / static_cast<double>(K);
}

SwdResult sliced_wasserstein(const Matrix& real, const Matrix& fake, const SwdConfig& cfg) {
    if (real.rows() == 0 || fake.rows() == 0) throw Error(ErrorCode::EmptyCorpus, "empty feature set");
    if (real.cols() != fake.cols() || real.cols() == 0)
        throw Error(ErrorCode::InvalidShape, "feature widths differ: " + std::to_string(real.cols()) + " vs " +
                                                 std::to_string(fake.cols()));
    if (cfg.iterations < 1 || cfg.projections < 1)
        throw Error(ErrorCode::InvalidConfig, "iterations and projections must be positive");
    const auto E = real.cols();
    Matrix r = real, f = fake;
    if (cfg.standardize) {
        const Eigen::RowVectorXd mean = real.colwise().mean();
        Eigen::RowVectorXd sd = ((real.rowwise() - mean).array().square().colwise().sum() /
                                 static_cast<double>(real.rows()))
                                    .sqrt();
        for (Eigen::Index j = 0; j < E; ++j)
            if (!(sd(j) > 1e-12)) sd(j) = 1.0;
        r = ((real.rowwise() - mean).array().rowwise() / sd.array()).matrix();
        f = ((fake.rowwise() - mean).array().rowwise() / sd.array()).matrix();
    }
    SwdResult out;
    for (int it = 0; it < cfg.iterations; ++it) {
        Rng rng(Rng::derive(cfg.seed, "swd", {static_cast<std::uint64_t>(it)}));
        Eigen::MatrixXd dirs(E, cfg.projections);
        for (int p = 0; p < cfg.projections; ++p) {
            for (Eigen::Index j = 0; j < E; ++j) dirs(j, p) = rng.normal();
            dirs.col(p).normalize();
        }
        const Eigen::MatrixXd pr = r * dirs, pf = f * dirs;
        double acc = 0;
        std::vector<double> a(static_cast<std::size_t>(pr.rows())), b(static_cast<std::size_t>(pf.rows()));
        for (int p = 0; p < cfg.projections; ++p) {
            for (Eigen::Index i = 0; i < pr.rows(); ++i) a[static_cast<std::size_t>(i)] = pr(i, p);
            for (Eigen::Index i = 0; i < pf.rows(); ++i) b[static_cast<std::size_t>(i)] = pf(i, p);
            acc += wasserstein_1d(a, b);
        }
        out.per_iteration.push_back(acc / cfg.projections);
    }
    const auto ms = mean_std(out.per_iteration);
    out.mean = ms.mean;
    out.std = ms.std;
    return out;
}

// ---------------------------------------------------------------------------

std::vector<double> gaussian_kernel() {
    std::vector<double> k(kGaussianTaps);
    const int half = kGaussianTaps / 2;
    for (int i = 0; i < kGaussianTaps; ++i)
        k[static_cast<std::size_t>(i)] = std::exp(-0.5 * std::pow((i - half) / kGaussianSigma, 2));
    const double sum = std::accumulate(k.begin(), k.end(), 0.0);
    for (double& v : k) v /= sum;
    return k;
}

std::vector<double> blur(std::span<const double> x) {
    static const auto kernel = gaussian_kernel();
    const auto n = static_cast<std::ptrdiff_t>(x.size());
    const std::ptrdiff_t half = kGaussianTaps / 2;
    if (n <= half) throw Error(ErrorCode::InvalidShape, "sequence of length " + std::to_string(n) + " is too short to blur");
    std::vector<double> out(x.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        double acc = 0;
        for (std::ptrdiff_t k = -half; k <= half; ++k) {
            std::ptrdiff_t j = i + k;
            if (j < 0) j = -j;
            if (j >= n) j = 2 * (n - 1) - j;
            acc += kernel[static_cast<std::size_t>(k + half)] * x[static_cast<std::size_t>(j)];
        }
        out[static_cast<std::size_t>(i)] = acc;
    }
    return out;
}

std::vector<double> expand(std::span<const double> x, std::size_t length) {
    std::vector<double> up(length);
    for (std::size_t i = 0; i < length; ++i) up[i] = x[std::min(i / 2, x.size() - 1)];
    return blur(up);
}

LaplacianTriangle laplacian_triangle(std::span<const double> x) {
    if (x.size() < 2 * static_cast<std::size_t>(kGaussianTaps))
        throw Error(ErrorCode::InvalidShape,
                    "window of length " + std::to_string(x.size()) + " is too short for the Laplacian triangle");
    LaplacianTriangle t;
    std::vector<double> g(x.begin(), x.end());
    while (g.size() >= kMinLevelLength) {
        const auto blurred = blur(g);
        std::vector<double> next((g.size() + 1) / 2);
        for (std::size_t i = 0; i < next.size(); ++i) next[i] = blurred[2 * i];
        const auto up = expand(next, g.size());
        std::vector<double> detail(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) detail[i] = g[i] - up[i];
        t.details.push_back(std::move(detail));
        g = std::move(next);
    }
    t.residual = std::move(g);
    return t;
}

std::vector<double> reconstruct(const LaplacianTriangle& t) {
    std::vector<double> g = t.residual;
    for (auto it = t.details.rbegin(); it != t.details.rend(); ++it) {
        const auto up = expand(g, it->size());
        g.resize(it->size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = (*it)[i] + up[i];
    }
    return g;
}

std::vector<Matrix> laplacian_patches(std::span<const data::Window> windows, std::uint64_t seed) {
    std::vector<Matrix> levels;
    const auto per = static_cast<Eigen::Index>(kPatchesPerLevel);
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const std::vector<double> x(windows[w].samples.begin(), windows[w].samples.end());
        const auto tri = laplacian_triangle(x);
        if (levels.empty())
            levels.assign(tri.details.size(), Matrix(static_cast<Eigen::Index>(windows.size()) * per,
                                                     static_cast<Eigen::Index>(kPatchLength)));
        if (tri.details.size() != levels.size())
            throw Error(ErrorCode::InvalidShape, "windows of differing length in one corpus");
        for (std::size_t k = 0; k < tri.details.size(); ++k) {
            const auto& d = tri.details[k];
            Rng rng(Rng::derive(seed, "patches", {static_cast<std::uint64_t>(w), static_cast<std::uint64_t>(k)}));
            for (Eigen::Index p = 0; p < per; ++p) {
                const std::size_t start = rng.index(d.size() - kPatchLength + 1);
                for (std::size_t j = 0; j < kPatchLength; ++j)
                    levels[k](static_cast<Eigen::Index>(w) * per + p, static_cast<Eigen::Index>(j)) = d[start + j];
            }
        }
    }
    return levels;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const MetricReport& r) {
    return {
        {"is_mean", r.is_mean},
        {"is_std", r.is_std},
        {"is_real_mean", r.is_real_mean},
        {"is_real_std", r.is_real_std},
        {"fid", r.fid},
        {"swd_lap_mean", r.swd_lap_mean},
        {"swd_lap_std", r.swd_lap_std},
        {"swd_lap_mean_x1e-3", r.swd_lap_mean * 1e-3},
        {"swd_lap_std_x1e-3", r.swd_lap_std * 1e-3},
        {"swd_cl_mean", r.swd_cl_mean},
        {"swd_cl_std", r.swd_cl_std},
        {"real_count", r.real_count},
        {"fake_count", r.fake_count},
        {"config", r.config},
        {"warnings", r.warnings},
    };
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
    MetricReport r;
    try {
        r.is_mean = j.at("is_mean").get<double>();
        r.is_std = j.at("is_std").get<double>();
        r.is_real_mean = j.at("is_real_mean").get<double>();
        r.is_real_std = j.at("is_real_std").get<double>();
        r.fid = j.at("fid").get<double>();
        r.swd_lap_mean = j.at("swd_lap_mean").get<double>();
        r.swd_lap_std = j.at("swd_lap_std").get<double>();
        r.swd_cl_mean = j.at("swd_cl_mean").get<double>();
        r.swd_cl_std = j.at("swd_cl_std").get<double>();
        r.real_count = j.at("real_count").get<std::size_t>();
        r.fake_count = j.at("fake_count").get<std::size_t>();
        r.config = j.value("config", nlohmann::json::object());
        r.warnings = j.value("warnings", std::vector<std::string>{});
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("malformed metric report: ") + e.what());
    }
    return r;
}

MetricReport evaluate_windows(std::span<const data::Window> real, std::span<const data::Window> fake,
                              const Classifier& classifier, const EvaluationConfig& cfg) {
    if (real.empty() || fake.empty()) throw Error(ErrorCode::EmptyCorpus, "real and fake corpora must be non-empty");
    const auto L = real.front().samples.size();
    for (const auto* set : {&real, &fake})
        for (const auto& w : *set)
            if (w.samples.size() != L)
                throw Error(ErrorCode::InvalidShape, "corpora must share one window length (" + std::to_string(L) +
                                                         " vs " + std::to_string(w.samples.size()) + ")");
    MetricReport r;
    r.real_count = real.size();
    r.fake_count = fake.size();
    const auto E = static_cast<std::size_t>(classifier.config().embedding_dim);
    if (real.size() <= E || fake.size() <= E)
        r.warnings.push_back("corpus smaller than the embedding width; covariance estimates are rank deficient");

    const int splits_fake = std::min<int>(cfg.is_splits, static_cast<int>(fake.size()));
    const int splits_real = std::min<int>(cfg.is_splits, static_cast<int>(real.size()));
    const auto is_fake = inception_score(classifier.predict_proba(fake), splits_fake);
    const auto is_real = inception_score(classifier.predict_proba(real), splits_real);
    r.is_mean = is_fake.mean;
    r.is_std = is_fake.std;
    r.is_real_mean = is_real.mean;
    r.is_real_std = is_real.std;

    const Matrix er = classifier.embed(real), ef = classifier.embed(fake);
    r.fid = frechet_distance(er, ef);
    const auto cl = sliced_wasserstein(er, ef, cfg.swd);
    r.swd_cl_mean = cl.mean;
    r.swd_cl_std = cl.std;

    const auto patch_seed = Rng::derive(cfg.swd.seed, "patches");
    const auto lr = laplacian_patches(real, patch_seed);
    const auto lf = laplacian_patches(fake, patch_seed);
    std::vector<double> per_iteration(static_cast<std::size_t>(cfg.swd.iterations), 0.0);
    for (std::size_t k = 0; k < lr.size(); ++k) {
        auto level_cfg = cfg.swd;
        level_cfg.seed = Rng::derive(cfg.swd.seed, "swd_lap", {static_cast<std::uint64_t>(k)});
        const auto s = sliced_wasserstein(lr[k], lf[k], level_cfg);
        for (std::size_t i = 0; i < per_iteration.size(); ++i)
            per_iteration[i] += s.per_iteration[i] / static_cast<double>(lr.size());
    }
    const auto lap = mean_std(per_iteration);
    r.swd_lap_mean = lap.mean;
    r.swd_lap_std = lap.std;

    r.config = {{"is_splits", cfg.is_splits},
                {"swd_iterations", cfg.swd.iterations},
                {"swd_projections", cfg.swd.projections},
                {"seed", cfg.swd.seed},
                {"laplacian_levels", lr.size()},
                {"patch_length", kPatchLength},
                {"patches_per_level", kPatchesPerLevel},
                {"embedding_dim", E}};
    return r;
}

MetricReport evaluate_corpora(const std::filesystem::path& real_dir, const std::filesystem::path& fake_dir,
                              const Classifier& classifier, const EvaluationConfig& cfg) {
    const auto real = data::read_dataset_watts(real_dir);
    const auto fake = data::read_dataset_watts(fake_dir);
    if (real.empty()) throw Error(ErrorCode::EmptyCorpus, "no windows under " + real_dir.string());
    if (fake.empty()) throw Error(ErrorCode::EmptyCorpus, "no windows under " + fake_dir.string());
    auto r = evaluate_windows(real, fake, classifier, cfg);
    r.config["real_dir"] = real_dir.string();
    r.config["fake_dir"] = fake_dir.string();
    return r;
}

}  // namespace powergan::eval
