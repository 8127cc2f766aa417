#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "powergan/errors.hpp"
#include "powergan/evaluation.hpp"
#include "powergan/synthesis.hpp"
#include "powergan/toy.hpp"
#include "powergan/trainer.hpp"
#include "powergan/window_io.hpp"
#include "run_config.hpp"

namespace powergan::cli {

namespace fs = std::filesystem;

namespace {

// Options every subcommand accepts.
struct Common {
    std::string config_file;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App* app) {
        app->add_option("--config", config_file, "INI configuration file")->check(CLI::ExistingFile);
        app->add_option("--set", overrides, "Override a config value, section.key=value (repeatable)");
        app->add_option("--seed", seed, "Root seed (falls back to the config file, then POWERGAN_SEED)");
    }
};

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::vector<data::Window> read_corpus_watts(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, "not a directory: " + dir.string());
    return data::read_dataset_watts(dir);
}

class Dispatcher {
public:
    Dispatcher(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

    int run(const std::vector<std::string>& args);

private:
    // Resolves defaults < file < flags; `flags` holds per-command overrides.
    RunConfig configure(const Common& c, std::vector<std::string> flags) const {
        Tree tree = c.config_file.empty() ? Tree{} : read_ini(c.config_file);
        flags.insert(flags.begin(), c.overrides.begin(), c.overrides.end());
        if (c.seed) flags.push_back("run.seed=" + std::to_string(*c.seed));
        apply_overrides(tree, flags);
        RunConfig cfg = resolve(tree);
        if (c.seed) cfg.seed_source = "flag";
        out_ << "# effective configuration\n" << to_ini(cfg) << std::flush;
        return cfg;
    }

    void preprocess();
    void train(bool resume_command);
    void generate();
    void train_classifier();
    void evaluate();
    void make_toy();

    std::ostream& out_;
    std::ostream& err_;

    Common common_;
    std::string input_dir_, label_map_, out_dir_, windows_dir_, resume_, ckpt_, label_, out_path_, format_;
    std::string real_dir_, fake_dir_, classifier_;
    std::vector<std::string> extra_dirs_;
    std::optional<std::size_t> window_len_, count_, per_class_, activations_;
    std::optional<double> energy_wh_, edge_w_, sparsity_;
    std::optional<std::int64_t> max_epochs_;
    bool raw_csv_ = false;
};

void Dispatcher::preprocess() {
    std::vector<std::string> flags;
    if (window_len_) flags.push_back("preprocess.window_length=" + std::to_string(*window_len_));
    if (energy_wh_) flags.push_back("preprocess.energy_wh=" + format_number(*energy_wh_));
    if (edge_w_) flags.push_back("preprocess.edge_w=" + format_number(*edge_w_));
    if (sparsity_) flags.push_back("preprocess.sparsity=" + format_number(*sparsity_));
    const auto cfg = configure(common_, flags);
    data::PreprocessReport report;
    const auto set = data::preprocess_directory(input_dir_, label_map_, cfg.preprocess, &report);
    data::write_dataset(out_dir_, set);
    echo_config(cfg, out_dir_);
    out_ << "read " << report.files_read << " file(s)\n";
    for (const auto& [label, n] : report.windows_cut)
        out_ << data::to_string(label) << ": " << n << " cut, "
             << (report.windows_accepted.contains(label) ? report.windows_accepted.at(label) : 0) << " accepted\n";
    out_ << "wrote " << set.windows.size() << " balanced window(s) to " << out_dir_ << '\n';
}

void Dispatcher::train(bool resume_command) {
    const auto cfg = configure(common_, {});
    auto dataset = data::read_dataset(windows_dir_);
    if (!dataset.manifest)
        throw Error(ErrorCode::InvalidConfig, windows_dir_ + " holds unnormalized windows; run preprocess first");
    const fs::path out_dir = out_dir_;
    const std::string from = resume_command ? ckpt_ : resume_;
    auto trainer = from.empty()
                       ? train::Trainer(cfg.train, std::move(dataset.windows), *dataset.manifest, out_dir)
                       : train::Trainer::resume(from, std::move(dataset.windows), *dataset.manifest, out_dir);
    if (!from.empty())
        out_ << "resuming at stage " << trainer.stage() << ", epoch " << trainer.epoch()
             << " (checkpoint configuration takes precedence over the file and flags)\n";
    echo_config(cfg, out_dir);
    {
        std::ofstream snapshot(out_dir / "train_config.json");
        snapshot << train::to_json(trainer.config()).dump(2) << '\n';
    }
    const auto every = std::max<std::int64_t>(1, trainer.config().schedule.epochs_per_block / 20);
    trainer.on_epoch = [&](const train::EpochRecord& e) {
        if (e.epoch % every == 0 || e.epoch == 1)
            out_ << "stage " << e.stage << " epoch " << e.epoch << " alpha " << format_number(e.alpha) << " D_W "
                 << format_number(e.mean.wasserstein) << " gp " << format_number(e.mean.gp) << " L_G "
                 << format_number(e.mean.generator_total) << '\n'
                 << std::flush;
    };
    trainer.run(max_epochs_);
    out_ << (trainer.finished() ? "training complete" : "stopped") << " at stage " << trainer.stage() << ", epoch "
         << trainer.epoch() << "; checkpoints under " << trainer.checkpoint_root() << '\n';
}

void Dispatcher::generate() {
    std::vector<std::string> flags;
    if (!format_.empty()) flags.push_back("generate.format=" + format_);
    const auto cfg = configure(common_, flags);
    const auto bundle = train::load_generator(ckpt_);
    synth::GenerationRequest req;
    req.label = data::appliance_from_string(label_);
    req.count = count_.value_or(100);
    req.seed = cfg.seed;
    req.max_rejections_per_sample = cfg.generate.max_rejections_per_sample;
    req.filter = cfg.preprocess.filter;
    synth::GenerationStats stats;
    const auto windows = synth::generate(bundle, req, &stats);
    for (const auto& w : stats.warnings) err_ << "warning: " << w << '\n';
    const auto format = synth::export_format_from_string(cfg.generate.format);
    const fs::path out = out_path_;
    synth::export_windows(windows, out, format);
    echo_config(cfg, format == synth::ExportFormat::csv ? out.parent_path().empty() ? fs::path(".") : out.parent_path()
                                                        : out);
    out_ << "generated " << windows.size() << " " << label_ << " window(s): drawn " << stats.drawn << ", rejected "
         << stats.rejected << " (rate " << format_number(stats.rejection_rate()) << ")\n";
}

void Dispatcher::train_classifier() {
    const auto cfg = configure(common_, {});
    auto windows = read_corpus_watts(real_dir_);
    for (const auto& d : extra_dirs_) {
        auto more = read_corpus_watts(d);
        windows.insert(windows.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
    }
    eval::ClassifierReport report;
    const auto model = eval::train_classifier(windows, cfg.classifier, &report);
    const fs::path out = out_path_;
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    model.save(out);
    echo_config(cfg, out.parent_path().empty() ? fs::path(".") : out.parent_path());
    out_ << "classifier trained on " << report.train_size << " window(s); holdout accuracy "
         << format_number(report.holdout_accuracy) << " on " << report.holdout_size << '\n';
}

void Dispatcher::evaluate() {
    const auto cfg = configure(common_, {});
    const auto model = eval::Classifier::load(classifier_);
    auto report = eval::evaluate_corpora(real_dir_, fake_dir_, model, cfg.evaluation);
    report.config["classifier"] = classifier_;
    report.config["classifier_holdout_accuracy"] = model.holdout_accuracy();
    const fs::path out = out_path_;
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream f(out);
    if (!f) throw Error(ErrorCode::IoError, "cannot write " + out.string());
    f << eval::to_json(report).dump(2) << '\n';
    echo_config(cfg, out.parent_path().empty() ? fs::path(".") : out.parent_path());
    for (const auto& w : report.warnings) err_ << "warning: " << w << '\n';
    out_ << "IS " << format_number(report.is_mean) << " +- " << format_number(report.is_std) << " (real "
         << format_number(report.is_real_mean) << ")\nFID " << format_number(report.fid) << "\nSWD_Lap "
         << format_number(report.swd_lap_mean) << " +- " << format_number(report.swd_lap_std) << "\nSWD_Cl "
         << format_number(report.swd_cl_mean) << " +- " << format_number(report.swd_cl_std) << '\n';
}

void Dispatcher::make_toy() {
    const auto cfg = configure(common_, {});
    const fs::path out = out_dir_;
    if (raw_csv_) {
        fs::create_directories(out);
        toy::write_toy_raw_csv(out / "house_toy.csv", out / "label_map.json", activations_.value_or(12), cfg.seed);
        echo_config(cfg, out);
        out_ << "wrote " << (out / "house_toy.csv") << " and " << (out / "label_map.json") << '\n';
        return;
    }
    toy::ToyConfig tc;
    tc.seed = cfg.seed;
    tc.window_length = window_len_.value_or(tc.window_length);
    tc.windows_per_class = per_class_.value_or(tc.windows_per_class);
    const auto set = toy::make_toy_dataset(out, tc);
    echo_config(cfg, out);
    out_ << "wrote " << set.windows.size() << " toy window(s) to " << out << '\n';
}

int Dispatcher::run(const std::vector<std::string>& args) {
    CLI::App app{"Conditional progressive GAN for appliance power traces", "powergan"};
    app.require_subcommand(1);

    auto* pre = app.add_subcommand("preprocess", "Window, filter, balance and normalize raw CSV recordings");
    common_.attach(pre);
    pre->add_option("--input-dir", input_dir_, "Directory of wide-format CSV files")->required();
    pre->add_option("--label-map", label_map_, "JSON mapping CSV columns to labels")->required();
    pre->add_option("--out-dir", out_dir_, "Output dataset directory")->required();
    pre->add_option("--window-len", window_len_, "Window length in samples");
    pre->add_option("--energy-wh", energy_wh_, "Energy threshold above steady state (Wh)");
    pre->add_option("--edge-w", edge_w_, "Activation edge threshold (W)");
    pre->add_option("--sparsity", sparsity_, "Minimum Hoyer sparsity of first differences");

    auto* tr = app.add_subcommand("train", "Train generator and critic");
    common_.attach(tr);
    tr->add_option("--windows-dir", windows_dir_, "Preprocessed dataset directory")->required();
    tr->add_option("--out-dir", out_dir_, "Run directory (log.csv, checkpoints/)")->required();
    tr->add_option("--resume", resume_, "Checkpoint to continue from");
    tr->add_option("--max-epochs", max_epochs_, "Stop after this many epochs");

    auto* res = app.add_subcommand("resume", "Continue training from a checkpoint");
    common_.attach(res);
    res->add_option("--ckpt", ckpt_, "Checkpoint directory, latest pointer or run directory")->required();
    res->add_option("--windows-dir", windows_dir_, "Preprocessed dataset directory")->required();
    res->add_option("--out-dir", out_dir_, "Run directory")->required();
    res->add_option("--max-epochs", max_epochs_, "Stop after this many epochs");

    auto* gen = app.add_subcommand("generate", "Sample labelled windows from a checkpoint");
    common_.attach(gen);
    gen->add_option("--ckpt", ckpt_, "Checkpoint directory, latest pointer or run directory")->required();
    gen->add_option("--label", label_, "Appliance label")->required();
    gen->add_option("--count", count_, "Number of windows (default 100)");
    gen->add_option("--format", format_, "csv or pgw1");
    gen->add_option("--out", out_path_, "CSV file or PGW1 directory")->required();

    auto* tc = app.add_subcommand("train-classifier", "Train the evaluation classifier on real windows");
    common_.attach(tc);
    tc->add_option("--real-dir", real_dir_, "Dataset directory")->required();
    tc->add_option("--extra-dir", extra_dirs_, "Additional dataset directory (repeatable)");
    tc->add_option("--out", out_path_, "Classifier archive path")->required();

    auto* ev = app.add_subcommand("evaluate", "Compute IS, FID and SWD between real and generated corpora");
    common_.attach(ev);
    ev->add_option("--real-dir", real_dir_, "Real dataset directory")->required();
    ev->add_option("--fake-dir", fake_dir_, "Generated dataset directory")->required();
    ev->add_option("--classifier", classifier_, "Classifier archive")->required();
    ev->add_option("--out", out_path_, "Report JSON path")->required();

    auto* toy_cmd = app.add_subcommand("make-toy", "Write the synthetic two-class corpus");
    common_.attach(toy_cmd);
    toy_cmd->add_option("--out-dir", out_dir_, "Output directory")->required();
    toy_cmd->add_option("--windows-per-class", per_class_, "Windows per class");
    toy_cmd->add_option("--window-len", window_len_, "Window length in samples");
    toy_cmd->add_flag("--raw-csv", raw_csv_, "Write a raw wide CSV and label map instead of a dataset");
    toy_cmd->add_option("--activations", activations_, "Episodes per appliance column in --raw-csv mode");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out_ << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out_ << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err_ << nlohmann::json{{"error", "UsageError"}, {"message", e.what()}}.dump() << '\n' << sub->help();
        return kExitUsage;
    }

    try {
        if (pre->parsed()) preprocess();
        else if (tr->parsed()) train(false);
        else if (res->parsed()) train(true);
        else if (gen->parsed()) generate();
        else if (tc->parsed()) train_classifier();
        else if (ev->parsed()) evaluate();
        else if (toy_cmd->parsed()) make_toy();
    } catch (const Error& e) {
        const std::string code(to_string(e.code()));
        std::string message = e.what();
        if (message.starts_with(code + ": ")) message.erase(0, code.size() + 2);
        err_ << nlohmann::json{{"error", code}, {"message", message}}.dump() << '\n';
        return kExitRuntime;
    } catch (const std::exception& e) {
        err_ << nlohmann::json{{"error", "RuntimeError"}, {"message", e.what()}}.dump() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Dispatcher d(out, err);
    return d.run(args);
}

}  // namespace powergan::cli
