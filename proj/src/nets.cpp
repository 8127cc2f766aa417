#include "powergan/nets.hpp"

#include <cmath>
#include <numeric>

#include "powergan/errors.hpp"
#include "powergan/rng.hpp"

namespace powergan::nets {

using ad::Shape;
using ad::Tensor;
using ad::Var;

void NetConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
    if (base_features <= 0) fail("base_features must be positive");
    if (kernel_size <= 0 || kernel_size % 2 == 0) fail("kernel_size must be a positive odd number");
    if (latent_dim <= 0) fail("latent_dim must be positive");
    if (num_blocks < 1 || num_blocks > 16) fail("num_blocks must be in [1, 16]");
    if (!(leaky_slope >= 0 && leaky_slope < 1)) fail("leaky_slope must be in [0, 1)");
    if (!(pixelnorm_epsilon > 0)) fail("pixelnorm_epsilon must be positive");
    const std::size_t factor = std::size_t{1} << (num_blocks - 1);
    if (window_length == 0 || window_length % factor != 0)
        fail("window_length " + std::to_string(window_length) + " is not divisible by 2^(num_blocks-1)");
}

namespace {

void check_label(int label, int num_classes) {
    if (label < 0 || label >= num_classes)
        throw Error(ErrorCode::InvalidLabel,
                    "label " + std::to_string(label) + " outside [0, " + std::to_string(num_classes) + ")");
}

}  // namespace

template <class T>
std::vector<T> embed_latent(std::span<const T> z, int label, int num_classes) {
    check_label(label, num_classes);
    std::vector<T> out(z.size() * static_cast<std::size_t>(num_classes), T(0));
    for (std::size_t i = 0; i < z.size(); ++i) out[i * static_cast<std::size_t>(num_classes) + label] = z[i];
    return out;
}

template <class T>
Tensor<T> embed_latent_batch(const Tensor<T>& z, std::span<const int> labels, int num_classes) {
    if (z.rank() != 2 || static_cast<std::size_t>(z.dim(0)) != labels.size())
        throw Error(ErrorCode::InvalidShape, "latent batch " + ad::shape_str(z.shape) + " does not match " +
                                                 std::to_string(labels.size()) + " labels");
    const auto nz = static_cast<std::size_t>(z.dim(1));
    Tensor<T> out({z.dim(0), z.dim(1) * num_classes});
    for (std::size_t b = 0; b < labels.size(); ++b) {
        const auto row = embed_latent<T>(std::span<const T>(z.data).subspan(b * nz, nz), labels[b], num_classes);
        std::copy(row.begin(), row.end(), out.data.begin() + static_cast<std::ptrdiff_t>(b * row.size()));
    }
    return out;
}

template <class T>
std::vector<T> condition_critic_input(std::span<const T> x, int label, int num_classes) {
    check_label(label, num_classes);
    const std::size_t n = x.size();
    std::vector<T> out((1 + static_cast<std::size_t>(num_classes)) * n, T(0));
    std::copy(x.begin(), x.end(), out.begin());
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>((1 + label) * n), n, T(1));
    return out;
}

template <class T>
Var<T> condition_critic_batch(const Var<T>& x, std::span<const int> labels, int num_classes) {
    if (x.value().rank() != 3 || x.dim(1) != 1 || static_cast<std::size_t>(x.dim(0)) != labels.size())
        throw Error(ErrorCode::InvalidShape,
                    "critic input " + ad::shape_str(x.shape()) + " for " + std::to_string(labels.size()) + " labels");
    const auto L = x.dim(2);
    Tensor<T> onehot({x.dim(0), num_classes, L});
    for (std::size_t b = 0; b < labels.size(); ++b) {
        check_label(labels[b], num_classes);
        auto first = onehot.data.begin() + static_cast<std::ptrdiff_t>((b * num_classes + labels[b]) * L);
        std::fill_n(first, L, T(1));
    }
    return ad::concat_channels<T>({x, ad::constant(std::move(onehot))});
}

template <class T>
Var<T> pixelwise_feature_norm(const Var<T>& x, double eps) {
    const Shape per_step = {x.dim(0), 1, x.dim(2)};
    auto mean_sq = ad::scale(ad::sum_to(ad::square(x), per_step), 1.0 / static_cast<double>(x.dim(1)));
    return ad::mul(x, ad::pow_pos(ad::add_scalar(mean_sq, eps), -0.5));
}

template <class T>
Var<T> minibatch_stddev(const Var<T>& x) {
    const Shape per_position = {1, x.dim(1), x.dim(2)};
    const double inv_b = 1.0 / static_cast<double>(x.dim(0));
    auto centred = ad::sub(x, ad::scale(ad::sum_to(x, per_position), inv_b));
    auto var = ad::scale(ad::sum_to(ad::square(centred), per_position), inv_b);
    // sqrt(var + e) - sqrt(e): zero for identical samples, smooth second derivative near zero variance.
    constexpr double e = 1e-12;
    auto sd = ad::add_scalar(ad::pow_pos(ad::add_scalar(var, e), 0.5), -std::sqrt(e));
    return ad::mean_all(sd);
}

template <class T>
Var<T> minibatch_stddev_feature(const Var<T>& x) {
    auto s = minibatch_stddev(x);
    return ad::concat_channels<T>({x, ad::expand_scalar(s, {x.dim(0), 1, x.dim(2)})});
}

template <class T>
std::vector<T> upsample_nn(std::span<const T> x) {
    std::vector<T> out(2 * x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[2 * i] = out[2 * i + 1] = x[i];
    return out;
}

template <class T>
Var<T> equalized_conv(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    const double gain = std::sqrt(2.0 / static_cast<double>(w.dim(1) * w.dim(2)));
    return ad::add(ad::scale(ad::conv1d(x, w), gain), b);
}

template <class T>
Var<T> equalized_linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    const double gain = std::sqrt(2.0 / static_cast<double>(w.dim(0)));
    return ad::add(ad::scale(ad::matmul(x, w), gain), b);
}

// ---------------------------------------------------------------------------

template <class T>
Module<T>::Module(NetConfig cfg, int num_classes, std::uint64_t seed)
    : cfg_(cfg), num_classes_(num_classes), seed_(seed) {
    cfg_.validate();
    if (num_classes < 1) throw Error(ErrorCode::InvalidConfig, "num_classes must be positive");
}

template <class T>
std::vector<Var<T>> Module<T>::parameters() const {
    std::vector<Var<T>> out;
    for (const auto& [name, p] : params_) out.push_back(p);
    return out;
}

template <class T>
std::vector<std::string> Module<T>::parameter_names() const {
    std::vector<std::string> out;
    for (const auto& [name, p] : params_) out.push_back(name);
    return out;
}

template <class T>
std::size_t Module<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p.numel();
    return n;
}

template <class T>
void Module<T>::assign(const std::string& name, const Tensor<T>& value) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error(ErrorCode::IncompatibleCheckpoint, "unknown parameter " + name);
    if (it->second.shape() != value.shape)
        throw Error(ErrorCode::IncompatibleCheckpoint, "parameter " + name + " has shape " +
                                                           ad::shape_str(it->second.shape()) + ", archive has " +
                                                           ad::shape_str(value.shape));
    it->second.mutable_value().data = value.data;
}

template <class T>
void Module<T>::add_conv(const std::string& name, int cout, int cin, int kernel, std::uint64_t init_seed) {
    Rng rng(init_seed);
    Tensor<T> w({cout, cin, kernel});
    for (auto& v : w.data) v = static_cast<T>(rng.normal());
    params_[name + ".w"] = Var<T>::leaf(std::move(w), true);
    params_[name + ".b"] = Var<T>::leaf(Tensor<T>({1, cout, 1}), true);
}

template <class T>
void Module<T>::add_linear(const std::string& name, int in, int out, std::uint64_t init_seed) {
    Rng rng(init_seed);
    Tensor<T> w({in, out});
    for (auto& v : w.data) v = static_cast<T>(rng.normal());
    params_[name + ".w"] = Var<T>::leaf(std::move(w), true);
    params_[name + ".b"] = Var<T>::leaf(Tensor<T>({1, out}), true);
}

template <class T>
const Var<T>& Module<T>::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error(ErrorCode::InvalidStage, "parameter " + name + " not built");
    return it->second;
}

template <class T>
Var<T> Module<T>::conv(const std::string& name, const Var<T>& x) const {
    return equalized_conv(x, param(name + ".w"), param(name + ".b"));
}

template <class T>
Var<T> Module<T>::linear(const std::string& name, const Var<T>& x) const {
    return equalized_linear(x, param(name + ".w"), param(name + ".b"));
}

template <class T>
int Module<T>::resolve_stage(int stage) const {
    const int n = stage == 0 ? stage_ : stage;
    if (n < 1 || n > stage_)
        throw Error(ErrorCode::InvalidStage,
                    "stage " + std::to_string(n) + " not available (built up to " + std::to_string(stage_) + ")");
    return n;
}

namespace {

std::string block_name(const char* net, int k) { return std::string(net) + ".block" + std::to_string(k); }

template <class T>
Var<T> fade(const Var<T>& fresh, const Var<T>& old, double alpha) {
    return ad::add(ad::scale(fresh, alpha), ad::scale(old, 1.0 - alpha));
}

}  // namespace

// ---------------------------------------------------------------------------

template <class T>
Generator<T>::Generator(NetConfig cfg, int num_classes, std::uint64_t seed) : Module<T>(cfg, num_classes, seed) {
    grow();
}

template <class T>
void Generator<T>::grow() {
    if (this->stage_ >= this->cfg_.num_blocks)
        throw Error(ErrorCode::InvalidStage, "generator already has " + std::to_string(this->stage_) + " blocks");
    build_block(this->stage_ + 1);
    ++this->stage_;
}

template <class T>
void Generator<T>::build_block(int k) {
    const auto& c = this->cfg_;
    const int F = c.base_features, K = c.kernel_size;
    const std::string b = block_name("g", k);
    auto seed = [&](const char* layer) { return Rng::derive(this->seed_, b + layer); };
    if (k == 1) {
        const int wide = c.input_stage_features(this->num_classes_);
        this->add_linear(b + ".fc", c.latent_dim * this->num_classes_, wide * static_cast<int>(c.base_length()),
                         seed(".fc"));
        this->add_conv(b + ".conv1", F, wide, K, seed(".conv1"));
    } else {
        this->add_conv(b + ".conv1", F, F, K, seed(".conv1"));
    }
    this->add_conv(b + ".conv2", F, F, K, seed(".conv2"));
    this->add_conv("g.to_ts" + std::to_string(k), 1, F, 1, seed(".to_ts"));
}

template <class T>
Var<T> Generator<T>::act_norm(const Var<T>& x) const {
    return pixelwise_feature_norm(ad::leaky_relu(x, this->cfg_.leaky_slope), this->cfg_.pixelnorm_epsilon);
}

template <class T>
Var<T> Generator<T>::block(int k, const Var<T>& h) const {
    const std::string b = block_name("g", k);
    Var<T> x;
    if (k == 1) {
        const auto& c = this->cfg_;
        x = this->linear(b + ".fc", h);
        x = ad::reshape(x, {h.dim(0), c.input_stage_features(this->num_classes_),
                            static_cast<std::int64_t>(c.base_length())});
        x = act_norm(x);
    } else {
        x = ad::upsample2(h);
    }
    x = act_norm(this->conv(b + ".conv1", x));
    return act_norm(this->conv(b + ".conv2", x));
}

template <class T>
Var<T> Generator<T>::forward(const Var<T>& latent, double alpha, int stage) const {
    const int n = this->resolve_stage(stage);
    const auto expected = static_cast<std::int64_t>(this->cfg_.latent_dim) * this->num_classes_;
    if (latent.value().rank() != 2 || latent.dim(1) != expected)
        throw Error(ErrorCode::InvalidShape, "generator latent " + ad::shape_str(latent.shape()) +
                                                 ", expected [B, " + std::to_string(expected) + "]");
    Var<T> h = latent;
    for (int k = 1; k < n; ++k) h = block(k, h);
    auto fresh = this->conv("g.to_ts" + std::to_string(n), block(n, h));
    if (n == 1 || alpha >= 1.0) return fresh;
    auto old = ad::upsample2(this->conv("g.to_ts" + std::to_string(n - 1), h));
    return fade(fresh, old, alpha);
}

template <class T>
Var<T> Generator<T>::forward(const Tensor<T>& z, std::span<const int> labels, double alpha, int stage) const {
    return forward(ad::constant(embed_latent_batch(z, labels, this->num_classes_)), alpha, stage);
}

// ---------------------------------------------------------------------------

template <class T>
Critic<T>::Critic(NetConfig cfg, int num_classes, std::uint64_t seed) : Module<T>(cfg, num_classes, seed) {
    grow();
}

template <class T>
void Critic<T>::grow() {
    if (this->stage_ >= this->cfg_.num_blocks)
        throw Error(ErrorCode::InvalidStage, "critic already has " + std::to_string(this->stage_) + " blocks");
    build_block(this->stage_ + 1);
    ++this->stage_;
}

template <class T>
void Critic<T>::build_block(int k) {
    const auto& c = this->cfg_;
    const int F = c.base_features, K = c.kernel_size;
    const std::string b = block_name("d", k);
    auto seed = [&](const char* layer) { return Rng::derive(this->seed_, b + layer); };
    this->add_conv("d.from_ts" + std::to_string(k), F, 1 + this->num_classes_, 1, seed(".from_ts"));
    this->add_conv(b + ".conv1", F, k == 1 ? F + 1 : F, K, seed(".conv1"));
    this->add_conv(b + ".conv2", F, F, K, seed(".conv2"));
    if (k == 1) this->add_linear(b + ".fc", F * static_cast<int>(c.base_length()), 1, seed(".fc"));
}

template <class T>
Var<T> Critic<T>::from_ts(int k, const Var<T>& x, std::span<const int> labels) const {
    auto xc = condition_critic_batch(x, labels, this->num_classes_);
    return ad::leaky_relu(this->conv("d.from_ts" + std::to_string(k), xc), this->cfg_.leaky_slope);
}

template <class T>
Var<T> Critic<T>::block(int k, const Var<T>& h) const {
    const std::string b = block_name("d", k);
    const double slope = this->cfg_.leaky_slope;
    auto x = k == 1 ? minibatch_stddev_feature(h) : h;
    x = ad::leaky_relu(this->conv(b + ".conv1", x), slope);
    x = ad::leaky_relu(this->conv(b + ".conv2", x), slope);
    if (k > 1) return ad::maxpool2(x);
    x = ad::reshape(x, {x.dim(0), x.dim(1) * x.dim(2)});
    return this->linear(b + ".fc", x);
}

template <class T>
Var<T> Critic<T>::forward(const Var<T>& x, std::span<const int> labels, double alpha, int stage) const {
    const int n = this->resolve_stage(stage);
    const auto expected = static_cast<std::int64_t>(this->cfg_.stage_length(n));
    if (x.value().rank() != 3 || x.dim(1) != 1 || x.dim(2) != expected)
        throw Error(ErrorCode::InvalidShape, "critic input " + ad::shape_str(x.shape()) + " at stage " +
                                                 std::to_string(n) + ", expected [B, 1, " + std::to_string(expected) +
                                                 "]");
    const bool fading = n > 1 && alpha < 1.0;
    if (fading && this->cfg_.critic_fade == CriticFade::scores)
        return fade(forward(x, labels, 1.0, n), forward(ad::maxpool2(x), labels, 1.0, n - 1), alpha);
    auto h = block(n, from_ts(n, x, labels));
    if (fading) h = fade(h, from_ts(n - 1, ad::maxpool2(x), labels), alpha);
    for (int k = n - 1; k >= 1; --k) h = block(k, h);
    return h;
}

#define POWERGAN_INSTANTIATE(T)                                                                         \
    template std::vector<T> embed_latent<T>(std::span<const T>, int, int);                              \
    template Tensor<T> embed_latent_batch<T>(const Tensor<T>&, std::span<const int>, int);              \
    template std::vector<T> condition_critic_input<T>(std::span<const T>, int, int);                    \
    template Var<T> condition_critic_batch<T>(const Var<T>&, std::span<const int>, int);                \
    template Var<T> pixelwise_feature_norm<T>(const Var<T>&, double);                                   \
    template Var<T> minibatch_stddev<T>(const Var<T>&);                                                 \
    template Var<T> minibatch_stddev_feature<T>(const Var<T>&);                                         \
    template std::vector<T> upsample_nn<T>(std::span<const T>);                                         \
    template Var<T> equalized_conv<T>(const Var<T>&, const Var<T>&, const Var<T>&);                     \
    template Var<T> equalized_linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                   \
    template class Module<T>;                                                                           \
    template class Generator<T>;                                                                        \
    template class Critic<T>;

POWERGAN_INSTANTIATE(float)
POWERGAN_INSTANTIATE(double)

}  // namespace powergan::nets
