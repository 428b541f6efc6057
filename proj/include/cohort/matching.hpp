#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cohort/config.hpp"
#include "cohort/types.hpp"

namespace cohort {

// Channel-level summary used both as propensity covariates and as the
// payload handed to the match scorer.
struct MatchFeatures {
    std::string channel_id;
    Gender gender = Gender::Unknown;
    std::optional<int> age;
    std::map<std::string, int> category_histogram; // empty when categories unknown
    int upload_count = 0;
    std::optional<long long> follower_count;
    double avg_duration = 0.0;
    std::optional<double> avg_views, avg_likes, avg_comments;
};

MatchFeatures compute_match_features(const CohortDataset& ds, int channel_idx);

struct MatchEntry {
    std::string treatment_id, control_id;
    double propensity_treatment = 0.0, propensity_control = 0.0;
    int knn_rank = 0; // 1-based by closeness
    std::optional<int> refinement_score;
    bool retained = false;
};

struct MatchSet {
    std::vector<MatchEntry> entries;
    std::vector<std::string> unmatched; // treatments with no retained match
    bool short_pool = false;            // pool smaller than k
};

struct PropensityResult {
    std::map<std::string, double> scores; // channel_id -> fitted P(treated)
    bool lasso_fallback = false;          // separation forced a penalized fit
};

// Logistic regression of the treatment indicator on the numeric feature
// expansion (gender dummies, median-imputed age/followers/engagement,
// category proportions). Perfect separation falls back to a lightly
// penalized lasso fit rather than failing.
PropensityResult estimate_propensity(const std::vector<MatchFeatures>& treated,
                                     const std::vector<MatchFeatures>& pool);

// k nearest pool members per treatment by |propensity difference|, with
// replacement; exact ties go to the smaller control_id. An optional caliper
// drops candidates beyond the propensity distance. A pool smaller than k
// matches everyone and flags the set.
MatchSet knn_match(const std::vector<std::pair<std::string, double>>& treated_scores,
                   const std::vector<std::pair<std::string, double>>& pool_scores, int k,
                   std::optional<double> caliper = std::nullopt);

// Pair-quality rater: integer 1..5. Implementations must be safe to call
// concurrently.
class MatchScorer {
public:
    virtual ~MatchScorer() = default;
    virtual int score(const MatchFeatures& treatment, const MatchFeatures& control) = 0;
};

// Deterministic rule for tests: 5 when gender matches and both ages are
// known within 3 years, else 2.
class StubScorer : public MatchScorer {
public:
    int score(const MatchFeatures& treatment, const MatchFeatures& control) override;
};

// External-service adapter: POST {treatment, control} summaries as JSON,
// expect {score, justification}; bearer auth, bounded retries.
class HttpScorer : public MatchScorer {
public:
    explicit HttpScorer(ScorerConfig cfg) : cfg_(std::move(cfg)) {}
    int score(const MatchFeatures& treatment, const MatchFeatures& control) override;

private:
    ScorerConfig cfg_;
};

// Scores every candidate pair (scorer failures leave the pair unscored and
// excluded), retains scores >= threshold, then caps retained matches per
// treatment (best score, then closest propensity, then smallest control id).
MatchSet refine_matches(const MatchSet& candidates,
                        const std::map<std::string, MatchFeatures>& features,
                        MatchScorer& scorer, const MatchConfig& cfg, bool parallel);

struct BalanceRow {
    std::string feature;
    std::optional<double> smd_before, smd_after; // absent when pooled sd is 0
};

// Standardized mean differences (mean_T - mean_C over the pooled sd) for
// every numeric feature, before matching and over the retained controls
// (counted with multiplicity).
std::vector<BalanceRow> balance_report(const std::vector<MatchFeatures>& treated,
                                       const std::vector<MatchFeatures>& pool,
                                       const MatchSet& matched);

} // namespace cohort
