#include <algorithm>
#include <cmath>
#include <numeric>

#include "powergan/archive.hpp"
#include "powergan/errors.hpp"
#include "powergan/evaluation.hpp"
#include "powergan/optimizer.hpp"

namespace powergan::eval {

using ad::Tensor;
using ad::Var;

namespace {

constexpr std::size_t kPredictBatch = 64;
constexpr std::size_t kMinPooledLength = 8;

Tensor<float> batch_tensor(std::span<const data::Window> windows, std::span<const std::size_t> idx, std::size_t L,
                           std::span<const std::size_t> shifts = {}) {
    Tensor<float> x({static_cast<std::int64_t>(idx.size()), 1, static_cast<std::int64_t>(L)});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& s = windows[idx[i]].samples;
        if (s.size() != L)
            throw Error(ErrorCode::InvalidShape,
                        "window of length " + std::to_string(s.size()) + " where " + std::to_string(L) + " expected");
        const std::size_t shift = shifts.empty() ? 0 : shifts[i];
        for (std::size_t t = 0; t < L; ++t) x.data[i * L + (t + shift) % L] = s[t];
    }
    return x;
}

}  // namespace

Classifier::Classifier(ClassifierConfig cfg, std::vector<data::Appliance> labels, std::size_t window_length,
                       double input_scale)
    : cfg_(cfg), labels_(std::move(labels)), window_length_(window_length), input_scale_(input_scale) {
    if (cfg_.embedding_dim < 8 || cfg_.blocks < 1 || cfg_.kernel_size < 1 || cfg_.kernel_size % 2 == 0)
        throw Error(ErrorCode::InvalidConfig, "classifier needs embedding_dim >= 8, blocks >= 1 and an odd kernel");
    if (labels_.size() < 2) throw Error(ErrorCode::InsufficientClasses, "classifier needs at least two labels");
    if (!(input_scale_ > 0)) input_scale_ = 1.0;
    build();
}

void Classifier::add_conv(const std::string& name, int cout, int cin, int k, double init_scale, Rng& rng) {
    Tensor<float> w({cout, cin, k});
    const double sd = init_scale * std::sqrt(2.0 / static_cast<double>(cin * k));
    for (auto& v : w.data) v = static_cast<float>(sd * rng.normal());
    params_[name + ".w"] = Var<float>::leaf(std::move(w), true);
    params_[name + ".b"] = Var<float>::leaf(Tensor<float>({1, cout, 1}), true);
}

void Classifier::build() {
    Rng rng(Rng::derive(cfg_.seed, "classifier_init"));
    const int E = cfg_.embedding_dim, K = cfg_.kernel_size;
    widths_.clear();
    downsample_.clear();
    for (int b = 0; b < cfg_.blocks; ++b) widths_.push_back(E >> std::max(0, std::min(3, cfg_.blocks - 1) - b));
    std::size_t len = window_length_;
    for (int b = 0; b < cfg_.blocks; ++b) {
        const bool pool = len % 2 == 0 && len / 2 >= kMinPooledLength;
        downsample_.push_back(pool);
        if (pool) len /= 2;
    }
    add_conv("c.stem", widths_[0], 1, K, 1.0, rng);
    int cin = widths_[0];
    for (int b = 0; b < cfg_.blocks; ++b) {
        const std::string name = "c.block" + std::to_string(b + 1);
        add_conv(name + ".conv1", widths_[b], cin, K, 1.0, rng);
        add_conv(name + ".conv2", widths_[b], widths_[b], K, 0.1, rng);
        if (cin != widths_[b]) add_conv(name + ".skip", widths_[b], cin, 1, 1.0, rng);
        cin = widths_[b];
    }
    const auto C = static_cast<std::int64_t>(labels_.size());
    Tensor<float> w({E, C});
    const double sd = std::sqrt(1.0 / E);
    for (auto& v : w.data) v = static_cast<float>(sd * rng.normal());
    params_["c.head.w"] = Var<float>::leaf(std::move(w), true);
    params_["c.head.b"] = Var<float>::leaf(Tensor<float>({1, C}), true);
}

int Classifier::class_index(data::Appliance a) const {
    const auto it = std::find(labels_.begin(), labels_.end(), a);
    if (it == labels_.end())
        throw Error(ErrorCode::InvalidLabel, "classifier was not trained on " + std::string(data::to_string(a)));
    return static_cast<int>(it - labels_.begin());
}

Classifier::Output Classifier::forward(const Tensor<float>& x) const {
    if (x.rank() != 3 || x.dim(1) != 1 || static_cast<std::size_t>(x.dim(2)) != window_length_)
        throw Error(ErrorCode::InvalidShape, "classifier input must be [B, 1, " + std::to_string(window_length_) +
                                                 "], got " + ad::shape_str(x.shape));
    auto conv = [&](const std::string& name, const Var<float>& h) {
        return ad::add(ad::conv1d(h, params_.at(name + ".w")), params_.at(name + ".b"));
    };
    Var<float> h = ad::relu(conv("c.stem", ad::scale(ad::constant(x), 1.0 / input_scale_)));
    for (int b = 0; b < cfg_.blocks; ++b) {
        const std::string name = "c.block" + std::to_string(b + 1);
        const auto branch = conv(name + ".conv2", ad::relu(conv(name + ".conv1", h)));
        const auto skip = params_.contains(name + ".skip.w") ? conv(name + ".skip", h) : h;
        h = ad::relu(ad::add(branch, skip));
        if (downsample_[static_cast<std::size_t>(b)]) h = ad::avgpool2(h);
    }
    Output out;
    out.embedding = ad::mean_last(h);
    out.logits = ad::add(ad::matmul(out.embedding, params_.at("c.head.w")), params_.at("c.head.b"));
    return out;
}

std::vector<Var<float>> Classifier::parameters() const {
    std::vector<Var<float>> out;
    for (const auto& [name, p] : params_) out.push_back(p);
    return out;
}

std::vector<std::string> Classifier::parameter_names() const {
    std::vector<std::string> out;
    for (const auto& [name, p] : params_) out.push_back(name);
    return out;
}

Matrix Classifier::predict_proba(std::span<const data::Window> windows) const {
    const auto C = static_cast<Eigen::Index>(labels_.size());
    Matrix out(static_cast<Eigen::Index>(windows.size()), C);
    ad::NoGradGuard off;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < windows.size(); start += kPredictBatch) {
        const std::size_t n = std::min(kPredictBatch, windows.size() - start);
        idx.resize(n);
        std::iota(idx.begin(), idx.end(), start);
        const auto logits = forward(batch_tensor(windows, idx, window_length_)).logits.value();
        for (std::size_t i = 0; i < n; ++i) {
            double mx = -INFINITY;
            for (Eigen::Index c = 0; c < C; ++c) mx = std::max(mx, double(logits.data[i * C + c]));
            double z = 0;
            for (Eigen::Index c = 0; c < C; ++c) z += std::exp(double(logits.data[i * C + c]) - mx);
            for (Eigen::Index c = 0; c < C; ++c)
                out(static_cast<Eigen::Index>(start + i), c) = std::exp(double(logits.data[i * C + c]) - mx) / z;
        }
    }
    return out;
}

Matrix Classifier::embed(std::span<const data::Window> windows) const {
    const auto E = static_cast<Eigen::Index>(cfg_.embedding_dim);
    Matrix out(static_cast<Eigen::Index>(windows.size()), E);
    ad::NoGradGuard off;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < windows.size(); start += kPredictBatch) {
        const std::size_t n = std::min(kPredictBatch, windows.size() - start);
        idx.resize(n);
        std::iota(idx.begin(), idx.end(), start);
        const auto emb = forward(batch_tensor(windows, idx, window_length_)).embedding.value();
        for (std::size_t i = 0; i < n; ++i)
            for (Eigen::Index e = 0; e < E; ++e) out(static_cast<Eigen::Index>(start + i), e) = emb.data[i * E + e];
    }
    return out;
}

void Classifier::save(const std::filesystem::path& path) const {
    Archive a;
    for (const auto& [name, p] : params_) a.tensors[name] = p.value();
    std::vector<std::string> names;
    for (auto l : labels_) names.emplace_back(data::to_string(l));
    a.meta = {{"kind", "classifier"},
              {"labels", names},
              {"window_length", window_length_},
              {"input_scale", input_scale_},
              {"holdout_accuracy", holdout_accuracy_},
              {"embedding_dim", cfg_.embedding_dim},
              {"blocks", cfg_.blocks},
              {"kernel_size", cfg_.kernel_size},
              {"epochs", cfg_.epochs},
              {"batch_size", cfg_.batch_size},
              {"lr", cfg_.lr},
              {"label_smoothing", cfg_.label_smoothing},
              {"holdout_fraction", cfg_.holdout_fraction},
              {"seed", cfg_.seed}};
    write_archive(path, a);
}

Classifier Classifier::load(const std::filesystem::path& path) {
    const Archive a = read_archive(path);
    const auto& m = a.meta;
    if (m.value("kind", "") != "classifier")
        throw Error(ErrorCode::IncompatibleCheckpoint, path.string() + " is not a classifier archive");
    ClassifierConfig cfg;
    std::vector<data::Appliance> labels;
    std::size_t length = 0;
    double scale = 1;
    try {
        cfg.embedding_dim = m.at("embedding_dim").get<int>();
        cfg.blocks = m.at("blocks").get<int>();
        cfg.kernel_size = m.at("kernel_size").get<int>();
        cfg.epochs = m.at("epochs").get<int>();
        cfg.batch_size = m.at("batch_size").get<int>();
        cfg.lr = m.at("lr").get<double>();
        cfg.label_smoothing = m.at("label_smoothing").get<double>();
        cfg.holdout_fraction = m.at("holdout_fraction").get<double>();
        cfg.seed = m.at("seed").get<std::uint64_t>();
        for (const auto& n : m.at("labels")) labels.push_back(data::appliance_from_string(n.get<std::string>()));
        length = m.at("window_length").get<std::size_t>();
        scale = m.at("input_scale").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::IncompatibleCheckpoint, "classifier metadata in " + path.string() + ": " + e.what());
    }
    Classifier c(cfg, std::move(labels), length, scale);
    c.holdout_accuracy_ = m.value("holdout_accuracy", 0.0);
    for (auto& [name, p] : c.params_) {
        const auto it = a.tensors.find(name);
        if (it == a.tensors.end() || it->second.shape != p.shape())
            throw Error(ErrorCode::IncompatibleCheckpoint, "classifier tensor " + name + " missing or misshapen");
        p.mutable_value() = it->second;
    }
    return c;
}

// ---------------------------------------------------------------------------

Classifier train_classifier(std::span<const data::Window> windows, const ClassifierConfig& cfg,
                            ClassifierReport* report) {
    if (windows.empty()) throw Error(ErrorCode::EmptyCorpus, "no windows to train on");
    if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.lr > 0) || cfg.label_smoothing < 0 ||
        cfg.label_smoothing >= 1 || cfg.holdout_fraction < 0 || cfg.holdout_fraction >= 1)
        throw Error(ErrorCode::InvalidConfig, "invalid classifier training configuration");
    std::map<data::Appliance, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < windows.size(); ++i) by_label[windows[i].label].push_back(i);
    if (by_label.size() < 2)
        throw Error(ErrorCode::InsufficientClasses,
                    "training the classifier needs at least two labels, found " + std::to_string(by_label.size()));
    const std::size_t L = windows.front().samples.size();

    std::vector<data::Appliance> labels;
    std::vector<std::size_t> train, holdout;
    for (auto& [label, idx] : by_label) {
        labels.push_back(label);
        Rng rng(Rng::derive(cfg.seed, "holdout", {static_cast<std::uint64_t>(label)}));
        rng.shuffle(idx);
        std::size_t h = static_cast<std::size_t>(std::llround(cfg.holdout_fraction * static_cast<double>(idx.size())));
        if (cfg.holdout_fraction > 0 && idx.size() >= 2) h = std::clamp<std::size_t>(h, 1, idx.size() - 1);
        holdout.insert(holdout.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(h));
        train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(h), idx.end());
    }

    double scale = 0;
    for (auto i : train)
        for (float v : windows[i].samples) scale = std::max(scale, static_cast<double>(std::abs(v)));
    Classifier model(cfg, labels, L, scale);

    const auto C = static_cast<std::int64_t>(labels.size());
    const double eps = cfg.label_smoothing;
    Adam adam(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    auto names = model.parameter_names();
    auto params = model.parameters();
    const auto B = static_cast<std::size_t>(cfg.batch_size);
    std::vector<double> epoch_loss;
    for (int ep = 0; ep < cfg.epochs; ++ep) {
        Rng rng(Rng::derive(cfg.seed, "classifier_epoch", {static_cast<std::uint64_t>(ep)}));
        auto order = train;
        rng.shuffle(order);
        double total = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += B) {
            const std::span<const std::size_t> idx(order.data() + start, std::min(B, order.size() - start));
            std::vector<std::size_t> shifts(idx.size());
            for (auto& s : shifts) s = rng.index(L);
            Tensor<float> target({static_cast<std::int64_t>(idx.size()), C});
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::int64_t c = 0; c < C; ++c)
                    target.data[i * C + c] = static_cast<float>(
                        eps / C + (c == model.class_index(windows[idx[i]].label) ? 1.0 - eps : 0.0));
            const auto out = model.forward(batch_tensor(windows, idx, L, shifts));
            const auto loss = ad::scale(ad::sum_all(ad::mul(ad::constant(target), ad::log_softmax(out.logits))),
                                        -1.0 / static_cast<double>(idx.size()));
            const auto grads = ad::grad(loss, params);
            adam.step(names, params, grads);
            total += loss.item();
            ++batches;
        }
        epoch_loss.push_back(total / static_cast<double>(std::max<std::size_t>(batches, 1)));
    }

    const auto& eval_idx = holdout.empty() ? train : holdout;
    std::vector<data::Window> eval_set;
    for (auto i : eval_idx) eval_set.push_back(windows[i]);
    const Matrix p = model.predict_proba(eval_set);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < eval_set.size(); ++i) {
        Eigen::Index arg;
        p.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
        if (arg == model.class_index(eval_set[i].label)) ++correct;
    }
    model.set_holdout_accuracy(static_cast<double>(correct) / static_cast<double>(eval_set.size()));
    if (report) {
        report->holdout_accuracy = model.holdout_accuracy();
        report->train_size = train.size();
        report->holdout_size = holdout.size();
        report->epoch_loss = std::move(epoch_loss);
    }
    return model;
}

}  // namespace powergan::eval
