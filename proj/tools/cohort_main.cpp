#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cohort/config.hpp"
#include "cohort/error.hpp"
#include "cohort/pipeline.hpp"

namespace {

struct CliOptions {
    std::string config_path;
    std::string out_dir;
    long long seed = -1;
    std::vector<std::string> sets;
    std::string stage_deps; // strict | force
    bool serial = false;
};

cohort::RunConfig resolve_config(const CliOptions& opt) {
    // Precedence: config file < COHORT_* environment < --set < explicit flags.
    std::map<std::string, std::string> kv;
    if (!opt.config_path.empty()) kv = cohort::read_kv_file(opt.config_path);
    cohort::apply_env_overrides(kv);
    for (const std::string& s : opt.sets) {
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            cohort::fail("ConfigError", "--set expects key=value, got '" + s + "'");
        kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
    cohort::RunConfig cfg = cohort::parse_run_config(kv);
    if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
    if (opt.seed >= 0) cfg.seed = static_cast<uint64_t>(opt.seed);
    if (!opt.stage_deps.empty()) cfg.strict_deps = opt.stage_deps == "strict";
    if (opt.serial) cfg.parallel = false;
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Longitudinal cohort analysis pipeline"};
    app.require_subcommand(1);
    app.fallthrough(); // global options may appear after the subcommand name

    CliOptions opt;
    app.add_option("--config", opt.config_path, "key=value configuration file");
    app.add_option("--out", opt.out_dir, "output directory (overrides config)");
    app.add_option("--seed", opt.seed, "random seed (overrides config)");
    app.add_option("--set", opt.sets, "override one config key (repeatable)")
        ->type_name("KEY=VALUE");
    app.add_option("--stage-deps", opt.stage_deps,
                   "stage dependency enforcement (overrides config)")
        ->check(CLI::IsMember({"strict", "force"}));
    app.add_flag("--serial", opt.serial, "disable parallel execution");

    const std::vector<std::pair<std::string, std::string>> stages = {
        {"validate", "Check the input CSVs for schema and invariant violations"},
        {"filter", "Drop channels below the minimum valid-upload count"},
        {"align", "Event-anchor every channel and build the 30-bin series"},
        {"select-topics", "Stepwise and lasso topic selection over pre-event means"},
        {"fit-glmm", "Fit the per-topic mixed-effects Beta regression battery"},
        {"temporal-test", "Within- and between-group test batteries on the aligned bins"},
        {"match", "Propensity + KNN + refinement control matching"},
        {"robustness", "External-event, engagement, activity-gap, and sensitivity analyses"},
        {"simulate", "Generate a synthetic cohort with known ground truth"},
        {"report", "Collate stage outputs into report.md and plot-data CSVs"},
    };
    for (const auto& [name, desc] : stages) app.add_subcommand(name, desc);

    CLI11_PARSE(app, argc, argv);

    std::string stage_name = app.get_subcommands().front()->get_name();
    try {
        cohort::RunConfig cfg = resolve_config(opt);
        cohort::run_stage(cohort::parse_stage(stage_name), cfg);
        nlohmann::json ok;
        ok["stage"] = stage_name;
        ok["status"] = "ok";
        ok["out_dir"] = cfg.out_dir;
        std::printf("%s\n", ok.dump().c_str());
        return 0;
    } catch (const cohort::Error& e) {
        nlohmann::json err;
        err["error"] = {{"code", e.code()}, {"message", e.message()}, {"stage", stage_name}};
        std::fprintf(stderr, "%s\n", err.dump().c_str());
        return 1;
    } catch (const std::exception& e) {
        nlohmann::json err;
        err["error"] = {{"code", "InternalError"}, {"message", e.what()}, {"stage", stage_name}};
        std::fprintf(stderr, "%s\n", err.dump().c_str());
        return 2;
    }
}
