#pragma once

// Corpus metrics: Inception score, Frechet distance and sliced Wasserstein
// distance over classifier embeddings and Laplacian-triangle patches.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "powergan/autograd.hpp"
#include "powergan/data_pipeline.hpp"
#include "powergan/rng.hpp"

namespace powergan::eval {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MeanStd {
    double mean = 0;
    double std = 0;
};

// probs: one probability row per sample. Rows are split into `splits`
// contiguous parts; returns mean and population std of the per-part scores.
// Throws Error(InvalidDistribution) for rows that are negative or do not sum
// to 1 within 1e-6, Error(InvalidConfig) for splits outside [1, rows].
MeanStd inception_score(const Matrix& probs, int splits = 10);

// Squared mean distance plus the covariance trace term, with 1e-6 jitter on
// both covariances. Throws Error(InvalidShape) on dimension mismatch and
// Error(EmptyCorpus) for fewer than two rows.
double frechet_distance(const Matrix& real, const Matrix& fake);

struct SwdConfig {
    int iterations = 10;
    int projections = 1000;
    std::uint64_t seed = 0;
    bool standardize = true;  // per-dimension, using the real set's statistics
};

struct SwdResult {
    double mean = 0;
    double std = 0;
    std::vector<double> per_iteration;
};

// 1-D Wasserstein-1 between two samples via quantile alignment; unequal sizes
// use linearly interpolated quantiles at max(n, m) midpoints.
double wasserstein_1d(std::vector<double> a, std::vector<double> b);

// Throws Error(EmptyCorpus) or Error(InvalidShape).
SwdResult sliced_wasserstein(const Matrix& real, const Matrix& fake, const SwdConfig& cfg);

// ---------------------------------------------------------------------------
// Laplacian triangle.

inline constexpr int kGaussianTaps = 15;
inline constexpr double kGaussianSigma = 2.5;
inline constexpr std::size_t kMinLevelLength = 30;
inline constexpr std::size_t kPatchLength = 16;
inline constexpr std::size_t kPatchesPerLevel = 64;

std::vector<double> gaussian_kernel();
// Same-length convolution with the kernel, reflect padding.
std::vector<double> blur(std::span<const double> x);
// blur(upsample_nn(x)) truncated to `length`.
std::vector<double> expand(std::span<const double> x, std::size_t length);

struct LaplacianTriangle {
    std::vector<std::vector<double>> details;  // d_0 .. d_{K-1}, finest first
    std::vector<double> residual;
};

// Throws Error(InvalidShape) for windows shorter than 2 * kGaussianTaps.
LaplacianTriangle laplacian_triangle(std::span<const double> x);
std::vector<double> reconstruct(const LaplacianTriangle& t);

// kPatchesPerLevel random length-kPatchLength patches per detail level,
// one matrix per level.
std::vector<Matrix> laplacian_patches(std::span<const data::Window> windows, std::uint64_t seed);

// ---------------------------------------------------------------------------
// 1-D residual classifier.

struct ClassifierConfig {
    int embedding_dim = 128;
    int blocks = 6;
    int kernel_size = 9;
    int epochs = 30;
    int batch_size = 32;
    double lr = 1e-3;
    double label_smoothing = 0.1;
    double holdout_fraction = 0.2;
    std::uint64_t seed = 0;
};

class Classifier {
public:
    Classifier(ClassifierConfig cfg, std::vector<data::Appliance> labels, std::size_t window_length,
               double input_scale);

    // [N] windows in watts -> [N, C] probabilities / [N, E] embeddings.
    Matrix predict_proba(std::span<const data::Window> windows) const;
    Matrix embed(std::span<const data::Window> windows) const;

    const std::vector<data::Appliance>& labels() const { return labels_; }
    int class_index(data::Appliance a) const;
    std::size_t window_length() const { return window_length_; }
    const ClassifierConfig& config() const { return cfg_; }
    double holdout_accuracy() const { return holdout_accuracy_; }

    void save(const std::filesystem::path& path) const;
    static Classifier load(const std::filesystem::path& path);

    // Internal pieces used by training.
    struct Output {
        ad::Var<float> embedding;  // [B, E]
        ad::Var<float> logits;     // [B, C]
    };
    Output forward(const ad::Tensor<float>& x) const;  // x: [B, 1, L] in watts
    std::vector<ad::Var<float>> parameters() const;
    std::vector<std::string> parameter_names() const;
    void set_holdout_accuracy(double a) { holdout_accuracy_ = a; }

private:
    void build();
    void add_conv(const std::string& name, int cout, int cin, int k, double init_scale, Rng& rng);

    ClassifierConfig cfg_;
    std::vector<data::Appliance> labels_;
    std::size_t window_length_;
    double input_scale_;
    double holdout_accuracy_ = 0;
    std::map<std::string, ad::Var<float>> params_;
    std::vector<int> widths_;
    std::vector<bool> downsample_;
};

struct ClassifierReport {
    double holdout_accuracy = 0;
    std::size_t train_size = 0;
    std::size_t holdout_size = 0;
    std::vector<double> epoch_loss;
};

// Throws Error(InsufficientClasses) when fewer than two labels are present.
Classifier train_classifier(std::span<const data::Window> windows, const ClassifierConfig& cfg,
                            ClassifierReport* report = nullptr);

// ---------------------------------------------------------------------------

struct MetricReport {
    double is_mean = 0, is_std = 0;
    double is_real_mean = 0, is_real_std = 0;
    double fid = 0;
    double swd_lap_mean = 0, swd_lap_std = 0;
    double swd_cl_mean = 0, swd_cl_std = 0;
    std::size_t real_count = 0, fake_count = 0;
    nlohmann::json config = nlohmann::json::object();
    std::vector<std::string> warnings;
};

nlohmann::json to_json(const MetricReport& r);
MetricReport metric_report_from_json(const nlohmann::json& j);

struct EvaluationConfig {
    int is_splits = 10;
    SwdConfig swd;
};

MetricReport evaluate_windows(std::span<const data::Window> real, std::span<const data::Window> fake,
                              const Classifier& classifier, const EvaluationConfig& cfg);
// Reads both directories in watts. Throws Error(EmptyCorpus) / Error(InvalidShape).
MetricReport evaluate_corpora(const std::filesystem::path& real_dir, const std::filesystem::path& fake_dir,
                              const Classifier& classifier, const EvaluationConfig& cfg);

}  // namespace powergan::eval
