#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "selmo/selmo.hpp"

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    for (auto& item : selmo::csv::split(s))
        if (!item.empty()) out.push_back(item);
    return out;
}

int train_selmo(const std::string& config_path, std::optional<std::uint64_t> seed, std::optional<std::string> mode) {
    selmo::RunConfig cfg = selmo::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (mode) cfg.mode = selmo::run_mode_from_string(*mode);
    const selmo::RunResult r = selmo::run_selmo(cfg);
    std::cout << "episodes " << r.episodes_completed << ", model updates " << r.model_version << ", policy updates "
              << r.policy_updates << ", snapshots " << r.snapshots.size() << "\n"
              << "metrics: " << r.metrics_path.string() << "\n"
              << "snapshots: " << r.snapshot_dir.string() << "\n";
    if (r.error) {
        std::cerr << "error: run halted: " << *r.error << "\n";
        return 1;
    }
    return 0;
}

int eval_snapshots(const std::string& dir, const std::string& env, const std::string& tasks, int n_eval,
                   std::uint64_t seed, const std::string& out_path) {
    const selmo::EvalReport report = selmo::eval_snapshots(dir, env, split_list(tasks), n_eval, seed);
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    const std::string csv = selmo::emit_eval_csv(report);
    if (out_path.empty())
        std::cout << csv;
    else
        write_text(out_path, csv);
    return 0;
}

int train_downstream(const std::string& config_path, const std::string& mode, std::optional<std::uint64_t> seed) {
    selmo::RunConfig cfg = selmo::load_config(config_path);
    if (seed) cfg.seed = *seed;
    const selmo::DownstreamResult r = selmo::train_downstream(cfg, selmo::parse_downstream_mode(mode));
    fs::path curve = cfg.downstream.curve_path;
    if (curve.is_relative()) curve = fs::path(cfg.output_dir) / curve;
    write_text(curve, selmo::curve_csv({r}));
    const auto first = selmo::episodes_to_threshold(r.curve, 1.0);
    std::cout << "mode " << r.mode << ", episodes " << r.curve.size() << ", first success "
              << (first ? std::to_string(*first) : std::string("none")) << "\n"
              << "curve: " << curve.string() << "\n";
    return 0;
}

int plot(const std::string& in, const std::string& out, double sigma) {
    write_text(out, selmo::plot_csv(read_text(in), sigma));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"selmo: curiosity-driven exploration with dual replay, snapshots and skill reuse"};
    app.require_subcommand(1);

    std::string config_path, mode, dir, env, tasks, in, out;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> run_mode;
    int n_eval = 20;
    std::uint64_t eval_seed = 0;
    double sigma = 1.5;

    auto* train = app.add_subcommand("train-selmo", "run curiosity-driven training");
    train->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
    train->add_option("--seed", seed, "override the config seed");
    train->add_option("--mode", run_mode, "deterministic or parallel")->check(CLI::IsMember({"deterministic", "parallel"}));

    auto* eval = app.add_subcommand("eval-snapshots", "evaluate every snapshot in a directory");
    eval->add_option("--dir", dir, "snapshot directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--env", env, "environment name")->required();
    eval->add_option("--tasks", tasks, "comma separated task names")->required();
    eval->add_option("--n-eval", n_eval, "episodes per snapshot")->check(CLI::PositiveNumber);
    eval->add_option("--seed", eval_seed, "evaluation seed");
    eval->add_option("--out", out, "write the report here instead of stdout");

    auto* down = app.add_subcommand("train-downstream", "train a task policy with snapshot, sacx or no options");
    down->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
    down->add_option("--mode", mode, "snapshots:early|snapshots:mid|snapshots:late|sacx|scratch")->required();
    down->add_option("--seed", seed, "override the config seed");

    auto* plt = app.add_subcommand("plot", "render a metrics, curve or eval CSV as SVG");
    plt->add_option("--in", in, "input CSV")->required()->check(CLI::ExistingFile);
    plt->add_option("--out", out, "output SVG")->required();
    plt->add_option("--sigma", sigma, "smoothing width in samples")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        if (train->parsed()) return train_selmo(config_path, seed, run_mode);
        if (eval->parsed()) return eval_snapshots(dir, env, tasks, n_eval, eval_seed, out);
        if (down->parsed()) return train_downstream(config_path, mode, seed);
        if (plt->parsed()) return plot(in, out, sigma);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
