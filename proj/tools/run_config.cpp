#include "run_config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>

#include "powergan/errors.hpp"
#include "powergan/synthesis.hpp"

namespace powergan::cli {

namespace pt = boost::property_tree;

namespace {

// One table drives reading, writing and key validation.
struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <class T>
T parse(const std::string& key, const std::string& text) {
    std::istringstream in(text);
    T value{};
    in >> std::boolalpha >> value;
    if (in.fail() || !(in >> std::ws).eof())
        throw Error(ErrorCode::InvalidConfig, "cannot parse '" + text + "' for " + key);
    if constexpr (std::is_unsigned_v<T>)
        if (text.find('-') != std::string::npos)
            throw Error(ErrorCode::InvalidConfig, key + " must be non-negative, got '" + text + "'");
    return value;
}

template <class T>
std::string show(const T& v) {
    std::ostringstream out;
    out.precision(17);
    out << std::boolalpha << v;
    return out.str();
}

template <class T, class Get>
Field field(std::string key, Get get) {
    return Field{key, [get](const RunConfig& c) { return show(get(const_cast<RunConfig&>(c))); },
                 [get, key](RunConfig& c, const std::string& s) { get(c) = parse<T>(key, s); }};
}

Field choice(std::string key, std::function<std::string(const RunConfig&)> get,
             std::function<void(RunConfig&, const std::string&)> set) {
    return Field{std::move(key), std::move(get), std::move(set)};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        // preprocess
        f.push_back(field<std::size_t>("preprocess.window_length", [](RunConfig& c) -> auto& { return c.preprocess.window_length; }));
        f.push_back(field<double>("preprocess.energy_wh", [](RunConfig& c) -> auto& { return c.preprocess.filter.energy_threshold_wh; }));
        f.push_back(field<double>("preprocess.edge_w", [](RunConfig& c) -> auto& { return c.preprocess.filter.activation_edge_watts; }));
        f.push_back(field<double>("preprocess.sparsity", [](RunConfig& c) -> auto& { return c.preprocess.filter.sparsity_min; }));
        f.push_back(field<double>("preprocess.steady_std_factor", [](RunConfig& c) -> auto& { return c.preprocess.filter.steady_state_std_factor; }));
        f.push_back(field<double>("preprocess.sample_period_s", [](RunConfig& c) -> auto& { return c.preprocess.sample_period_s; }));
        f.push_back(field<double>("preprocess.max_gap_s", [](RunConfig& c) -> auto& { return c.preprocess.max_gap_s; }));
        // net
        f.push_back(field<int>("net.base_features", [](RunConfig& c) -> auto& { return c.train.net.base_features; }));
        f.push_back(field<int>("net.kernel_size", [](RunConfig& c) -> auto& { return c.train.net.kernel_size; }));
        f.push_back(field<double>("net.leaky_slope", [](RunConfig& c) -> auto& { return c.train.net.leaky_slope; }));
        f.push_back(field<double>("net.pixelnorm_epsilon", [](RunConfig& c) -> auto& { return c.train.net.pixelnorm_epsilon; }));
        f.push_back(field<int>("net.latent_dim", [](RunConfig& c) -> auto& { return c.train.net.latent_dim; }));
        f.push_back(field<int>("net.num_blocks", [](RunConfig& c) -> auto& { return c.train.net.num_blocks; }));
        f.push_back(choice(
            "net.critic_fade",
            [](const RunConfig& c) { return c.train.net.critic_fade == nets::CriticFade::scores ? "scores" : "features"; },
            [](RunConfig& c, const std::string& s) {
                if (s == "scores") c.train.net.critic_fade = nets::CriticFade::scores;
                else if (s == "features") c.train.net.critic_fade = nets::CriticFade::features;
                else throw Error(ErrorCode::InvalidConfig, "net.critic_fade must be scores or features, got '" + s + "'");
            }));
        // loss
        f.push_back(field<double>("loss.lambda_gp", [](RunConfig& c) -> auto& { return c.train.loss.lambda_gp; }));
        f.push_back(field<double>("loss.epsilon_center", [](RunConfig& c) -> auto& { return c.train.loss.epsilon_center; }));
        f.push_back(choice(
            "loss.penalty_weight",
            [](const RunConfig& c) {
                return c.train.loss.penalty_weight == losses::PenaltyWeight::critic_gap ? "critic_gap" : "fake_minus_real";
            },
            [](RunConfig& c, const std::string& s) {
                if (s == "critic_gap") c.train.loss.penalty_weight = losses::PenaltyWeight::critic_gap;
                else if (s == "fake_minus_real") c.train.loss.penalty_weight = losses::PenaltyWeight::fake_minus_real;
                else throw Error(ErrorCode::InvalidConfig,
                                 "loss.penalty_weight must be critic_gap or fake_minus_real, got '" + s + "'");
            }));
        f.push_back(choice(
            "loss.center_form",
            [](const RunConfig& c) { return c.train.loss.center_form == losses::CenterForm::linear ? "linear" : "squared"; },
            [](RunConfig& c, const std::string& s) {
                if (s == "linear") c.train.loss.center_form = losses::CenterForm::linear;
                else if (s == "squared") c.train.loss.center_form = losses::CenterForm::squared;
                else throw Error(ErrorCode::InvalidConfig, "loss.center_form must be linear or squared, got '" + s + "'");
            }));
        // schedule
        f.push_back(field<std::int64_t>("schedule.epochs_per_block", [](RunConfig& c) -> auto& { return c.train.schedule.epochs_per_block; }));
        f.push_back(field<std::int64_t>("schedule.fade_epochs", [](RunConfig& c) -> auto& { return c.train.schedule.fade_epochs; }));
        f.push_back(field<int>("schedule.critic_ratio", [](RunConfig& c) -> auto& { return c.train.schedule.critic_ratio; }));
        f.push_back(field<bool>("schedule.ratio_per_epoch", [](RunConfig& c) -> auto& { return c.train.schedule.ratio_per_epoch; }));
        f.push_back(field<int>("schedule.batch_size", [](RunConfig& c) -> auto& { return c.train.schedule.batch_size; }));
        f.push_back(field<double>("schedule.lr", [](RunConfig& c) -> auto& { return c.train.schedule.adam.lr; }));
        f.push_back(field<double>("schedule.beta1", [](RunConfig& c) -> auto& { return c.train.schedule.adam.beta1; }));
        f.push_back(field<double>("schedule.beta2", [](RunConfig& c) -> auto& { return c.train.schedule.adam.beta2; }));
        f.push_back(field<double>("schedule.adam_eps", [](RunConfig& c) -> auto& { return c.train.schedule.adam.eps; }));
        f.push_back(field<std::int64_t>("schedule.checkpoint_every", [](RunConfig& c) -> auto& { return c.train.schedule.checkpoint_every; }));
        // generate
        f.push_back(field<std::size_t>("generate.max_rejections_per_sample", [](RunConfig& c) -> auto& { return c.generate.max_rejections_per_sample; }));
        f.push_back(choice(
            "generate.format", [](const RunConfig& c) { return c.generate.format; },
            [](RunConfig& c, const std::string& s) {
                synth::export_format_from_string(s);
                c.generate.format = s;
            }));
        // classifier
        f.push_back(field<int>("classifier.embedding_dim", [](RunConfig& c) -> auto& { return c.classifier.embedding_dim; }));
        f.push_back(field<int>("classifier.blocks", [](RunConfig& c) -> auto& { return c.classifier.blocks; }));
        f.push_back(field<int>("classifier.kernel_size", [](RunConfig& c) -> auto& { return c.classifier.kernel_size; }));
        f.push_back(field<int>("classifier.epochs", [](RunConfig& c) -> auto& { return c.classifier.epochs; }));
        f.push_back(field<int>("classifier.batch_size", [](RunConfig& c) -> auto& { return c.classifier.batch_size; }));
        f.push_back(field<double>("classifier.lr", [](RunConfig& c) -> auto& { return c.classifier.lr; }));
        f.push_back(field<double>("classifier.label_smoothing", [](RunConfig& c) -> auto& { return c.classifier.label_smoothing; }));
        f.push_back(field<double>("classifier.holdout_fraction", [](RunConfig& c) -> auto& { return c.classifier.holdout_fraction; }));
        // evaluate
        f.push_back(field<int>("evaluate.is_splits", [](RunConfig& c) -> auto& { return c.evaluation.is_splits; }));
        f.push_back(field<int>("evaluate.swd_iterations", [](RunConfig& c) -> auto& { return c.evaluation.swd.iterations; }));
        f.push_back(field<int>("evaluate.swd_projections", [](RunConfig& c) -> auto& { return c.evaluation.swd.projections; }));
        // run
        f.push_back(field<std::uint64_t>("run.seed", [](RunConfig& c) -> auto& { return c.seed; }));
        return f;
    }();
    return table;
}

}  // namespace

void RunConfig::propagate_seed() {
    preprocess.seed = seed;
    train.schedule.seed = seed;
    classifier.seed = seed;
    evaluation.swd.seed = seed;
}

const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& f : fields()) k.push_back(f.key);
        return k;
    }();
    return keys;
}

Tree read_ini(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::IoError, "config file not found: " + path.string());
    Tree tree;
    try {
        pt::read_ini(path.string(), tree);
    } catch (const pt::ini_parser_error& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("config file: ") + e.what());
    }
    return tree;
}

void apply_overrides(Tree& tree, const std::vector<std::string>& assignments) {
    for (const auto& a : assignments) {
        const auto eq = a.find('=');
        if (eq == std::string::npos || eq == 0)
            throw Error(ErrorCode::InvalidConfig, "override '" + a + "' is not of the form section.key=value");
        tree.put(a.substr(0, eq), a.substr(eq + 1));
    }
}

RunConfig resolve(const Tree& tree) {
    const auto& keys = known_keys();
    for (const auto& [section, sub] : tree) {
        if (sub.empty())
            throw Error(ErrorCode::InvalidConfig, "config key '" + section + "' is outside any section");
        for (const auto& [key, value] : sub) {
            const auto full = section + "." + key;
            if (std::find(keys.begin(), keys.end(), full) == keys.end())
                throw Error(ErrorCode::InvalidConfig, "unknown config key '" + full + "'");
        }
    }
    RunConfig cfg;
    for (const auto& f : fields())
        if (const auto v = tree.get_optional<std::string>(Tree::path_type(f.key, '.'))) f.set(cfg, *v);
    if (tree.get_optional<std::string>("run.seed")) {
        cfg.seed_source = "file";
    } else if (const char* env = std::getenv("POWERGAN_SEED"); env && *env) {
        cfg.seed = parse<std::uint64_t>("POWERGAN_SEED", env);
        cfg.seed_source = "env";
    }
    cfg.propagate_seed();
    cfg.preprocess.filter.validate();
    cfg.train.net.validate();
    cfg.train.loss.validate();
    cfg.train.schedule.validate();
    return cfg;
}

Tree to_tree(const RunConfig& cfg) {
    Tree tree;
    for (const auto& f : fields()) tree.put(f.key, f.get(cfg));
    return tree;
}

std::string to_ini(const RunConfig& cfg) {
    std::ostringstream out;
    out << "; seed source: " << cfg.seed_source << '\n';
    pt::write_ini(out, to_tree(cfg));
    return out.str();
}

void echo_config(const RunConfig& cfg, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    std::ofstream out(dir / "effective_config.ini");
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + (dir / "effective_config.ini").string());
    out << to_ini(cfg);
}

}  // namespace powergan::cli
