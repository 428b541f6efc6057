#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cohort/dates.hpp"

namespace cohort {

// Transcript validity thresholds. Defaults follow the documented cleaning
// procedure; the repetition and non-English cutoffs are configurable because
// the source material states them inconsistently (40% vs 50%, 50% vs 30%).
struct RuleConfig {
    int min_sentences = 3;
    double min_audio_seconds = 60.0;
    double max_repeated_fraction = 0.40;
    double max_non_english_fraction = 0.50;
    int max_speakers = 2;
    enum class OversizePolicy { Reject, Isolate } oversize_policy = OversizePolicy::Reject;
    int max_tokens = 80;
};

// Anchors used to normalize imprecise event dates.
struct PrecisionAnchors {
    int month_day = 15;      // month-precision dates pin to this day
    int early_month = 2, early_day = 15;
    int mid_month = 7, mid_day = 1;
    int late_month = 10, late_day = 15;
};

struct TemporalConfig {
    int window_months = 18;  // alignment window on each side of the event
    int baseline_bin = -1;   // bin the within-group tests compare against
    double q_level = 0.05;
    // Weeks are 7-day offsets from the event; the window truncates to whole
    // weeks so the aligned span is exactly +-window_weeks().
    int window_weeks() const {
        return static_cast<int>(window_months * 365.25 / 12.0 / 7.0);
    }
};

struct GlmmConfig {
    double start_sigma2 = 0.1;
    double start_phi = 10.0;
    double outer_tol = 1e-6;      // gradient infinity-norm
    int max_outer_iter = 500;
    int quad_order = 1;           // 1 = Laplace; odd orders = adaptive Gauss-Hermite
    double sigma2_floor = 1e-8;   // boundary for the variance component
    double q_level = 0.05;
};

struct StepwiseConfig {
    enum class Criterion { Aic, PValue } criterion = Criterion::Aic;
    double p_enter = 0.05;
    double p_remove = 0.10;
    bool bonferroni_entry = false; // p-mode: compare entry p against p_enter / #candidates
    int max_steps = 200;
};

struct LassoConfig {
    int path_length = 50;
    double lambda_min_ratio = 1e-3;
    double kkt_tol = 1e-7;
    int max_sweeps = 10000;
    int cv_folds = 5;
};

struct ScorerConfig {
    enum class Kind { Stub, Http } kind = Kind::Stub;
    std::string endpoint;  // e.g. http://localhost:8080/score
    std::string auth_token;
    int max_parallel = 4;
    int max_attempts = 3;
};

struct MatchConfig {
    int k = 8;
    int refine_threshold = 3;
    int max_retained_per_treatment = 3;
    std::optional<double> caliper; // optional max |propensity difference|
    ScorerConfig scorer;
};

struct SynthConfig {
    std::vector<int> channels_per_group{50, 50, 50, 50};
    int n_topics = 5;
    double uploads_per_channel_mean = 40.0;
    int uploads_per_channel_min = 15;
    double upload_gap_mean_days = 7.0;
    int span_start_jitter_days = 365;
    std::string base_date = "2018-01-01";
    double sigma2 = 0.3;
    double phi = 20.0;
    double beta0 = -2.0;
    double beta_time = 0.0;
    std::vector<double> beta_group{0, 0, 0};       // AttemptedBefore, CMLE, CMatches
    std::vector<double> beta_group_time{0, 0, 0};
    double beta_age = 0.0;
    double beta_male = 0.0;
    double beta_minority = 0.0;
    std::vector<int> informative_topics;
    double informative_effect = 0.0;
    double confounding_strength = 0.0; // SMD shift on treated age, for matching
    double invalid_fraction = 0.08;
    double narrative_fraction = 0.5;
};

// Full run configuration: inputs, thresholds, toggles, seed, output dir.
// Serializable to JSON; a run is reproducible from (inputs, RunConfig).
struct RunConfig {
    std::string channels_path, uploads_path, topics_long_path, topic_meta_path;
    std::string segments_path; // optional topic segments for word-cloud scores
    std::string out_dir = ".";
    uint64_t seed = 1;
    bool parallel = true;
    bool strict_deps = true;

    int min_valid_uploads = 10;
    RuleConfig rules;
    PrecisionAnchors anchors;
    TemporalConfig temporal;
    GlmmConfig glmm;
    StepwiseConfig stepwise;
    LassoConfig lasso;
    MatchConfig match;
    SynthConfig synth;

    std::vector<int> topic_ids;                 // empty = all topics
    std::vector<std::string> selection_selectors{"before", "major_life_event", "matches",
                                                 "pooled"};
    std::string external_event_date = "2020-03-01";
    std::vector<std::string> sensitivity_exclude; // empty = channels with excluded_flag
};

// key=value file with '#' comments; unknown keys rejected. Values may be
// overridden by COHORT_<UPPERCASED_KEY> environment variables and --set
// flags, in that order.
RunConfig parse_run_config(const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> read_kv_file(const std::string& path);
void apply_env_overrides(std::map<std::string, std::string>& kv);
std::string run_config_to_json(const RunConfig& cfg);

} // namespace cohort
