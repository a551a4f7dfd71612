#include "scm/config.hpp"
#include "scm/errors.hpp"
#include "scm/report.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>

namespace {

enum class LogLevel { Quiet, Info, Debug };

/// SCM_LOG_LEVEL = quiet | info | debug (default info).
LogLevel log_level() {
    const char* v = std::getenv("SCM_LOG_LEVEL");
    if (!v) return LogLevel::Info;
    const std::string s = v;
    if (s == "quiet" || s == "error") return LogLevel::Quiet;
    if (s == "debug") return LogLevel::Debug;
    return LogLevel::Info;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic control estimation, inference and robustness toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(scm::kToolVersion));

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;

    const std::map<std::string, std::pair<std::optional<scm::Stage>, std::string>> commands{
        {"fit", {scm::Stage::Fit, "Fit the synthetic control and write weights, balance and gaps"}},
        {"placebo-space", {scm::Stage::PlaceboSpace, "In-space placebo permutation inference"}},
        {"placebo-time", {scm::Stage::PlaceboTime, "In-time placebo (backdated or forward treatment)"}},
        {"loo", {scm::Stage::Loo, "Leave-one-out donor robustness"}},
        {"penalized", {scm::Stage::Penalized, "Penalized and bias-corrected variants"}},
        {"lasso", {scm::Stage::Lasso, "Unconstrained elastic-net weights"}},
        {"breaks", {scm::Stage::Breaks, "Structural-break tests on the gap"}},
        {"did", {scm::Stage::Did, "Difference-in-differences on placebo gaps"}},
        {"report", {scm::Stage::Report, "Every analysis enabled in the config, plus the report"}},
        {"simulate", {std::nullopt, "Write the panel generated by a [data] preset"}},
    };
    for (const auto& [name, entry] : commands) {
        auto* sub = app.add_subcommand(name, entry.second);
        sub->add_option("--config", config_path, "Configuration file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "Output directory (overrides [run] out)");
        sub->add_option("--seed", seed, "Random seed (overrides [run] seed)");
        sub->add_option("--threads", threads, "Worker threads (overrides [run] threads)")->check(CLI::PositiveNumber);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    const auto* chosen = app.get_subcommands().front();
    const auto& [stage, _] = commands.at(chosen->get_name());
    const auto level = log_level();
    try {
        auto config = scm::load_config(config_path);
        scm::finalize_config(config, seed, threads);
        std::filesystem::path out;
        if (!out_dir.empty()) out = out_dir;
        else if (config.out) out = *config.out;
        else throw scm::ConfigError("no output directory: pass --out or set [run] out");

        if (level == LogLevel::Debug)
            std::cerr << "scm: " << chosen->get_name() << " -> " << out.string() << " (seed "
                      << (config.seed ? std::to_string(*config.seed) : "none") << ", threads " << config.threads
                      << ")\n";
        const auto files = stage ? scm::run(config, *stage, out) : scm::run_simulate(config, out);
        if (level != LogLevel::Quiet) std::cerr << "scm: wrote " << files.size() << " files to " << out.string() << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "scm: error: " << e.what() << "\n";
        return 1;
    }
}
