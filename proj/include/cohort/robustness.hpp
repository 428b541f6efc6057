#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cohort/beta_glmm.hpp"
#include "cohort/stats.hpp"
#include "cohort/temporal.hpp"
#include "cohort/types.hpp"

namespace cohort {

// --- calendar-anchored control analysis ------------------------------------

struct ExternalEventResult {
    int topic_id = 0;
    Date fixed_date;
    std::vector<BinTest> tests;      // between-group battery on the realigned data
    int rejections = 0;              // cells rejected at the battery's q
    std::vector<std::pair<std::string, std::string>> skipped; // (channel, reason)
};

// Realigns every channel to one calendar date (same weekly pipeline) and
// re-runs the between-group battery for a topic. The anchored analysis this
// contrasts with lives in the regular temporal stage output.
ExternalEventResult external_event_analysis(const CohortDataset& ds, int topic_id,
                                            Date fixed_date, const TemporalConfig& cfg);

// --- engagement-metric comparisons ------------------------------------------

struct BoxStats {
    double q1 = 0.0, median = 0.0, q3 = 0.0; // type-7 quartiles
    double whisker_lo = 0.0, whisker_hi = 0.0; // extreme values within 1.5*IQR
    double min = 0.0, max = 0.0;
    int n = 0;
};

// Type-7 (linear interpolation of order statistics) quantile; the convention
// behind every quartile in the reports.
double quantile_type7(std::vector<double> values, double p);
BoxStats box_stats(const std::vector<double>& values);

struct GroupPairTest {
    Group a = Group::AttemptedDuring, b = Group::AttemptedDuring;
    std::optional<TestResult> result; // absent when a cell was degenerate/too small
    bool rejected = false;
};

struct EngagementMetric {
    std::string metric; // uploads | likes | comments | duration
    std::vector<std::pair<Group, BoxStats>> boxes;
    std::vector<GroupPairTest> tests; // six pairs, BH within this metric
    bool skipped = false;
    std::string notice;
};

// Channel-level totals (uploads, likes, comments) and mean duration, Welch
// across the six group pairs per metric, BH within each metric's family.
std::vector<EngagementMetric> engagement_comparison(const CohortDataset& ds, double q);

// --- upload-activity gaps around the event ---------------------------------

enum class IntervalKind { BeforeToAfter, BeforeToEvent, EventToAfter };
const char* interval_kind_token(IntervalKind k);

struct IntervalGroupStats {
    Group group = Group::AttemptedDuring;
    int n = 0; // channels with the gap defined
    double mean = 0.0, median = 0.0, sd = 0.0, min = 0.0, max = 0.0;
};

struct IntervalReport {
    IntervalKind kind = IntervalKind::BeforeToAfter;
    std::vector<IntervalGroupStats> groups;
    std::optional<TestResult> test; // Welch between the two groups, when testable
};

// Day gaps last-pre-event -> event -> first-post-event per channel (event-day
// uploads count as neither side; channels missing a side contribute only the
// gaps they define), descriptives per group, Welch per interval kind.
// Restricted to groups whose channels carry loaded (non-synthetic) events.
std::vector<IntervalReport> activity_gap_analysis(const CohortDataset& ds,
                                                  const std::vector<Group>& groups);

// --- leave-some-out sensitivity refit ---------------------------------------

struct CoefficientDelta {
    int topic_id = 0;
    std::string term;
    double baseline_coef = 0.0, refit_coef = 0.0;
    bool sign_agree = true;
    bool baseline_significant = false, refit_significant = false; // adjusted p <= q
};

struct TemporalDelta {
    int topic_id = 0;
    int bin_index = 0;
    Group control = Group::AttemptedDuring;
    bool baseline_rejected = false, refit_rejected = false;
};

struct SensitivityReport {
    std::vector<std::string> excluded;
    std::vector<CoefficientDelta> coefficients;
    double sign_agreement = 1.0; // fraction of compared coefficients
    int significance_flips = 0;
    std::vector<TemporalDelta> temporal_flips; // only cells whose rejection changed
    int temporal_cells_compared = 0;
};

struct SensitivityAnalyses {
    bool glmm = true;
    bool temporal = true;
};

// Drops the exclusion set, re-runs the selected analyses, and reports
// per-coefficient sign agreement and significance flips against the full-
// data baseline. An exclusion that empties a group is an error.
SensitivityReport sensitivity_refit(const CohortDataset& ds,
                                    const std::vector<std::string>& exclusion,
                                    const SensitivityAnalyses& analyses,
                                    const std::vector<int>& topic_ids, const GlmmConfig& gcfg,
                                    const TemporalConfig& tcfg, bool parallel);

// The reduced dataset itself (shared with the pipeline stage).
CohortDataset apply_exclusion(const CohortDataset& ds, const std::vector<std::string>& exclusion);

} // namespace cohort
