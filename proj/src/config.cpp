#include "cohort/config.hpp"

#include <cctype>
#include <cstdlib>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "cohort/csv.hpp"
#include "cohort/error.hpp"

namespace cohort {

namespace {

// Every recognized key, in documentation order. Env overrides are derived
// from this table (dots become underscores, uppercased, COHORT_ prefix), so
// the mapping is never ambiguous.
const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = {
        "channels", "uploads", "topics_long", "topic_meta", "segments",
        "out_dir", "seed", "parallel", "strict_deps", "min_valid_uploads",
        "rules.min_sentences", "rules.min_audio_seconds", "rules.max_repeated_fraction",
        "rules.max_non_english_fraction", "rules.max_speakers", "rules.oversize_policy",
        "rules.max_tokens",
        "temporal.window_months", "temporal.baseline_bin", "temporal.q_level",
        "glmm.start_sigma2", "glmm.start_phi", "glmm.outer_tol", "glmm.max_outer_iter",
        "glmm.quad_order", "glmm.sigma2_floor", "glmm.q_level",
        "stepwise.criterion", "stepwise.p_enter", "stepwise.p_remove",
        "stepwise.bonferroni_entry", "stepwise.max_steps",
        "lasso.path_length", "lasso.lambda_min_ratio", "lasso.kkt_tol", "lasso.max_sweeps",
        "lasso.cv_folds",
        "match.k", "match.refine_threshold", "match.max_retained", "match.caliper",
        "scorer.kind", "scorer.endpoint", "scorer.auth_token", "scorer.max_parallel",
        "scorer.max_attempts",
        "synth.channels_per_group", "synth.n_topics", "synth.uploads_mean",
        "synth.uploads_min", "synth.gap_mean_days", "synth.jitter_days", "synth.base_date",
        "synth.sigma2", "synth.phi", "synth.beta0", "synth.beta_time", "synth.beta_group",
        "synth.beta_group_time", "synth.beta_age", "synth.beta_male", "synth.beta_minority",
        "synth.informative_topics", "synth.informative_effect", "synth.confounding",
        "synth.invalid_fraction", "synth.narrative_fraction",
        "topics", "selectors", "external_event_date", "sensitivity_exclude",
    };
    return keys;
}

std::string env_name(const std::string& key) {
    std::string name = "COHORT_";
    for (char c : key)
        name.push_back(c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    return name;
}

long long parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        fail("ConfigError", "key '" + key + "': '" + v + "' is not an integer");
    }
}

double parse_real(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        fail("ConfigError", "key '" + key + "': '" + v + "' is not a number");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail("ConfigError", "key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(v);
    while (std::getline(ss, item, ',')) {
        size_t a = item.find_first_not_of(" \t");
        size_t b = item.find_last_not_of(" \t");
        if (a == std::string::npos) continue;
        out.push_back(item.substr(a, b - a + 1));
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    for (const std::string& s : split_list(v))
        out.push_back(static_cast<int>(parse_int(key, s)));
    return out;
}

std::vector<double> parse_real_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    for (const std::string& s : split_list(v)) out.push_back(parse_real(key, s));
    return out;
}

} // namespace

std::map<std::string, std::string> read_kv_file(const std::string& path) {
    std::string text = read_file(path);
    std::map<std::string, std::string> kv;
    size_t line_no = 0, pos = 0;
    while (pos <= text.size()) {
        size_t eol = text.find('\n', pos);
        std::string line = text.substr(pos, eol == std::string::npos ? std::string::npos
                                                                     : eol - pos);
        pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        size_t a = line.find_first_not_of(" \t");
        if (a == std::string::npos) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            fail("ConfigError",
                 path + ":" + std::to_string(line_no) + ": expected key=value, got '" + line + "'");
        auto trim = [](std::string s) {
            size_t x = s.find_first_not_of(" \t");
            if (x == std::string::npos) return std::string();
            size_t y = s.find_last_not_of(" \t");
            return s.substr(x, y - x + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            fail("ConfigError", path + ":" + std::to_string(line_no) + ": empty key");
        if (kv.count(key))
            fail("ConfigError",
                 path + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
        kv[key] = value;
    }
    return kv;
}

void apply_env_overrides(std::map<std::string, std::string>& kv) {
    for (const std::string& key : known_keys()) {
        const char* v = std::getenv(env_name(key).c_str());
        if (v != nullptr) kv[key] = v;
    }
}

RunConfig parse_run_config(const std::map<std::string, std::string>& kv) {
    RunConfig cfg;
    // Dispatch table keyed by config name; every known key has a setter.
    std::map<std::string, std::function<void(const std::string&, const std::string&)>> set;
    set["channels"] = [&](const std::string&, const std::string& v) { cfg.channels_path = v; };
    set["uploads"] = [&](const std::string&, const std::string& v) { cfg.uploads_path = v; };
    set["topics_long"] = [&](const std::string&, const std::string& v) {
        cfg.topics_long_path = v;
    };
    set["topic_meta"] = [&](const std::string&, const std::string& v) {
        cfg.topic_meta_path = v;
    };
    set["segments"] = [&](const std::string&, const std::string& v) { cfg.segments_path = v; };
    set["out_dir"] = [&](const std::string&, const std::string& v) { cfg.out_dir = v; };
    set["seed"] = [&](const std::string& k, const std::string& v) {
        long long s = parse_int(k, v);
        if (s < 0) fail("ConfigError", "seed must be nonnegative");
        cfg.seed = static_cast<uint64_t>(s);
    };
    set["parallel"] = [&](const std::string& k, const std::string& v) {
        cfg.parallel = parse_bool(k, v);
    };
    set["strict_deps"] = [&](const std::string& k, const std::string& v) {
        cfg.strict_deps = parse_bool(k, v);
    };
    set["min_valid_uploads"] = [&](const std::string& k, const std::string& v) {
        cfg.min_valid_uploads = static_cast<int>(parse_int(k, v));
    };

    set["rules.min_sentences"] = [&](const std::string& k, const std::string& v) {
        cfg.rules.min_sentences = static_cast<int>(parse_int(k, v));
    };
    set["rules.min_audio_seconds"] = [&](const std::string& k, const std::string& v) {
        cfg.rules.min_audio_seconds = parse_real(k, v);
    };
    set["rules.max_repeated_fraction"] = [&](const std::string& k, const std::string& v) {
        cfg.rules.max_repeated_fraction = parse_real(k, v);
    };
    set["rules.max_non_english_fraction"] = [&](const std::string& k, const std::string& v) {
        cfg.rules.max_non_english_fraction = parse_real(k, v);
    };
    set["rules.max_speakers"] = [&](const std::string& k, const std::string& v) {
        cfg.rules.max_speakers = static_cast<int>(parse_int(k, v));
    };
    set["rules.oversize_policy"] = [&](const std::string& k, const std::string& v) {
        if (v == "reject")
            cfg.rules.oversize_policy = RuleConfig::OversizePolicy::Reject;
        else if (v == "isolate")
            cfg.rules.oversize_policy = RuleConfig::OversizePolicy::Isolate;
        else
            fail("ConfigError", "key '" + k + "': expected reject|isolate");
    };
    set["rules.max_tokens"] = [&](const std::string& k, const std::string& v) {
        cfg.rules.max_tokens = static_cast<int>(parse_int(k, v));
    };

    set["temporal.window_months"] = [&](const std::string& k, const std::string& v) {
        cfg.temporal.window_months = static_cast<int>(parse_int(k, v));
    };
    set["temporal.baseline_bin"] = [&](const std::string& k, const std::string& v) {
        cfg.temporal.baseline_bin = static_cast<int>(parse_int(k, v));
    };
    set["temporal.q_level"] = [&](const std::string& k, const std::string& v) {
        cfg.temporal.q_level = parse_real(k, v);
    };

    set["glmm.start_sigma2"] = [&](const std::string& k, const std::string& v) {
        cfg.glmm.start_sigma2 = parse_real(k, v);
    };
    set["glmm.start_phi"] = [&](const std::string& k, const std::string& v) {
        cfg.glmm.start_phi = parse_real(k, v);
    };
    set["glmm.outer_tol"] = [&](const std::string& k, const std::string& v) {
        cfg.glmm.outer_tol = parse_real(k, v);
    };
    set["glmm.max_outer_iter"] = [&](const std::string& k, const std::string& v) {
        cfg.glmm.max_outer_iter = static_cast<int>(parse_int(k, v));
    };
    set["glmm.quad_order"] = [&](const std::string& k, const std::string& v) {
        cfg.glmm.quad_order = static_cast<int>(parse_int(k, v));
    };
    set["glmm.sigma2_floor"] = [&](const std::string& k, const std::string& v) {
        cfg.glmm.sigma2_floor = parse_real(k, v);
    };
    set["glmm.q_level"] = [&](const std::string& k, const std::string& v) {
        cfg.glmm.q_level = parse_real(k, v);
    };

    set["stepwise.criterion"] = [&](const std::string& k, const std::string& v) {
        if (v == "aic")
            cfg.stepwise.criterion = StepwiseConfig::Criterion::Aic;
        else if (v == "p")
            cfg.stepwise.criterion = StepwiseConfig::Criterion::PValue;
        else
            fail("ConfigError", "key '" + k + "': expected aic|p");
    };
    set["stepwise.p_enter"] = [&](const std::string& k, const std::string& v) {
        cfg.stepwise.p_enter = parse_real(k, v);
    };
    set["stepwise.p_remove"] = [&](const std::string& k, const std::string& v) {
        cfg.stepwise.p_remove = parse_real(k, v);
    };
    set["stepwise.bonferroni_entry"] = [&](const std::string& k, const std::string& v) {
        cfg.stepwise.bonferroni_entry = parse_bool(k, v);
    };
    set["stepwise.max_steps"] = [&](const std::string& k, const std::string& v) {
        cfg.stepwise.max_steps = static_cast<int>(parse_int(k, v));
    };

    set["lasso.path_length"] = [&](const std::string& k, const std::string& v) {
        cfg.lasso.path_length = static_cast<int>(parse_int(k, v));
    };
    set["lasso.lambda_min_ratio"] = [&](const std::string& k, const std::string& v) {
        cfg.lasso.lambda_min_ratio = parse_real(k, v);
    };
    set["lasso.kkt_tol"] = [&](const std::string& k, const std::string& v) {
        cfg.lasso.kkt_tol = parse_real(k, v);
    };
    set["lasso.max_sweeps"] = [&](const std::string& k, const std::string& v) {
        cfg.lasso.max_sweeps = static_cast<int>(parse_int(k, v));
    };
    set["lasso.cv_folds"] = [&](const std::string& k, const std::string& v) {
        cfg.lasso.cv_folds = static_cast<int>(parse_int(k, v));
    };

    set["match.k"] = [&](const std::string& k, const std::string& v) {
        cfg.match.k = static_cast<int>(parse_int(k, v));
    };
    set["match.refine_threshold"] = [&](const std::string& k, const std::string& v) {
        cfg.match.refine_threshold = static_cast<int>(parse_int(k, v));
    };
    set["match.max_retained"] = [&](const std::string& k, const std::string& v) {
        cfg.match.max_retained_per_treatment = static_cast<int>(parse_int(k, v));
    };
    set["match.caliper"] = [&](const std::string& k, const std::string& v) {
        if (v.empty() || v == "none")
            cfg.match.caliper.reset();
        else
            cfg.match.caliper = parse_real(k, v);
    };
    set["scorer.kind"] = [&](const std::string& k, const std::string& v) {
        if (v == "stub")
            cfg.match.scorer.kind = ScorerConfig::Kind::Stub;
        else if (v == "http")
            cfg.match.scorer.kind = ScorerConfig::Kind::Http;
        else
            fail("ConfigError", "key '" + k + "': expected stub|http");
    };
    set["scorer.endpoint"] = [&](const std::string&, const std::string& v) {
        cfg.match.scorer.endpoint = v;
    };
    set["scorer.auth_token"] = [&](const std::string&, const std::string& v) {
        cfg.match.scorer.auth_token = v;
    };
    set["scorer.max_parallel"] = [&](const std::string& k, const std::string& v) {
        cfg.match.scorer.max_parallel = static_cast<int>(parse_int(k, v));
    };
    set["scorer.max_attempts"] = [&](const std::string& k, const std::string& v) {
        cfg.match.scorer.max_attempts = static_cast<int>(parse_int(k, v));
    };

    set["synth.channels_per_group"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.channels_per_group = parse_int_list(k, v);
    };
    set["synth.n_topics"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.n_topics = static_cast<int>(parse_int(k, v));
    };
    set["synth.uploads_mean"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.uploads_per_channel_mean = parse_real(k, v);
    };
    set["synth.uploads_min"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.uploads_per_channel_min = static_cast<int>(parse_int(k, v));
    };
    set["synth.gap_mean_days"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.upload_gap_mean_days = parse_real(k, v);
    };
    set["synth.jitter_days"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.span_start_jitter_days = static_cast<int>(parse_int(k, v));
    };
    set["synth.base_date"] = [&](const std::string&, const std::string& v) {
        cfg.synth.base_date = v;
    };
    set["synth.sigma2"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.sigma2 = parse_real(k, v);
    };
    set["synth.phi"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.phi = parse_real(k, v);
    };
    set["synth.beta0"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.beta0 = parse_real(k, v);
    };
    set["synth.beta_time"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.beta_time = parse_real(k, v);
    };
    set["synth.beta_group"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.beta_group = parse_real_list(k, v);
    };
    set["synth.beta_group_time"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.beta_group_time = parse_real_list(k, v);
    };
    set["synth.beta_age"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.beta_age = parse_real(k, v);
    };
    set["synth.beta_male"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.beta_male = parse_real(k, v);
    };
    set["synth.beta_minority"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.beta_minority = parse_real(k, v);
    };
    set["synth.informative_topics"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.informative_topics = parse_int_list(k, v);
    };
    set["synth.informative_effect"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.informative_effect = parse_real(k, v);
    };
    set["synth.confounding"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.confounding_strength = parse_real(k, v);
    };
    set["synth.invalid_fraction"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.invalid_fraction = parse_real(k, v);
    };
    set["synth.narrative_fraction"] = [&](const std::string& k, const std::string& v) {
        cfg.synth.narrative_fraction = parse_real(k, v);
    };

    set["topics"] = [&](const std::string& k, const std::string& v) {
        cfg.topic_ids = parse_int_list(k, v);
    };
    set["selectors"] = [&](const std::string&, const std::string& v) {
        cfg.selection_selectors = split_list(v);
    };
    set["external_event_date"] = [&](const std::string&, const std::string& v) {
        cfg.external_event_date = v;
    };
    set["sensitivity_exclude"] = [&](const std::string&, const std::string& v) {
        cfg.sensitivity_exclude = split_list(v);
    };

    for (const auto& [key, value] : kv) {
        auto it = set.find(key);
        if (it == set.end()) fail("ConfigError", "unknown config key '" + key + "'");
        it->second(key, value);
    }
    return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["channels"] = cfg.channels_path;
    j["uploads"] = cfg.uploads_path;
    j["topics_long"] = cfg.topics_long_path;
    j["topic_meta"] = cfg.topic_meta_path;
    j["segments"] = cfg.segments_path;
    j["out_dir"] = cfg.out_dir;
    j["seed"] = cfg.seed;
    j["parallel"] = cfg.parallel;
    j["strict_deps"] = cfg.strict_deps;
    j["min_valid_uploads"] = cfg.min_valid_uploads;

    j["rules"] = {
        {"min_sentences", cfg.rules.min_sentences},
        {"min_audio_seconds", cfg.rules.min_audio_seconds},
        {"max_repeated_fraction", cfg.rules.max_repeated_fraction},
        {"max_non_english_fraction", cfg.rules.max_non_english_fraction},
        {"max_speakers", cfg.rules.max_speakers},
        {"oversize_policy",
         cfg.rules.oversize_policy == RuleConfig::OversizePolicy::Reject ? "reject" : "isolate"},
        {"max_tokens", cfg.rules.max_tokens},
    };
    j["temporal"] = {
        {"window_months", cfg.temporal.window_months},
        {"baseline_bin", cfg.temporal.baseline_bin},
        {"q_level", cfg.temporal.q_level},
    };
    j["glmm"] = {
        {"start_sigma2", cfg.glmm.start_sigma2},
        {"start_phi", cfg.glmm.start_phi},
        {"outer_tol", cfg.glmm.outer_tol},
        {"max_outer_iter", cfg.glmm.max_outer_iter},
        {"quad_order", cfg.glmm.quad_order},
        {"sigma2_floor", cfg.glmm.sigma2_floor},
        {"q_level", cfg.glmm.q_level},
    };
    j["stepwise"] = {
        {"criterion",
         cfg.stepwise.criterion == StepwiseConfig::Criterion::Aic ? "aic" : "p"},
        {"p_enter", cfg.stepwise.p_enter},
        {"p_remove", cfg.stepwise.p_remove},
        {"bonferroni_entry", cfg.stepwise.bonferroni_entry},
        {"max_steps", cfg.stepwise.max_steps},
    };
    j["lasso"] = {
        {"path_length", cfg.lasso.path_length},
        {"lambda_min_ratio", cfg.lasso.lambda_min_ratio},
        {"kkt_tol", cfg.lasso.kkt_tol},
        {"max_sweeps", cfg.lasso.max_sweeps},
        {"cv_folds", cfg.lasso.cv_folds},
    };
    j["match"] = {
        {"k", cfg.match.k},
        {"refine_threshold", cfg.match.refine_threshold},
        {"max_retained", cfg.match.max_retained_per_treatment},
        {"scorer",
         {{"kind", cfg.match.scorer.kind == ScorerConfig::Kind::Stub ? "stub" : "http"},
          {"endpoint", cfg.match.scorer.endpoint},
          {"max_parallel", cfg.match.scorer.max_parallel},
          {"max_attempts", cfg.match.scorer.max_attempts}}},
    };
    if (cfg.match.caliper) j["match"]["caliper"] = *cfg.match.caliper;
    j["synth"] = {
        {"channels_per_group", cfg.synth.channels_per_group},
        {"n_topics", cfg.synth.n_topics},
        {"uploads_mean", cfg.synth.uploads_per_channel_mean},
        {"uploads_min", cfg.synth.uploads_per_channel_min},
        {"gap_mean_days", cfg.synth.upload_gap_mean_days},
        {"jitter_days", cfg.synth.span_start_jitter_days},
        {"base_date", cfg.synth.base_date},
        {"sigma2", cfg.synth.sigma2},
        {"phi", cfg.synth.phi},
        {"beta0", cfg.synth.beta0},
        {"beta_time", cfg.synth.beta_time},
        {"beta_group", cfg.synth.beta_group},
        {"beta_group_time", cfg.synth.beta_group_time},
        {"beta_age", cfg.synth.beta_age},
        {"beta_male", cfg.synth.beta_male},
        {"beta_minority", cfg.synth.beta_minority},
        {"informative_topics", cfg.synth.informative_topics},
        {"informative_effect", cfg.synth.informative_effect},
        {"confounding", cfg.synth.confounding_strength},
        {"invalid_fraction", cfg.synth.invalid_fraction},
        {"narrative_fraction", cfg.synth.narrative_fraction},
    };
    j["topics"] = cfg.topic_ids;
    j["selectors"] = cfg.selection_selectors;
    j["external_event_date"] = cfg.external_event_date;
    j["sensitivity_exclude"] = cfg.sensitivity_exclude;
    return j.dump(2) + "\n";
}

} // namespace cohort
