#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cohort/temporal.hpp"

namespace cohort {

enum class TestKind { PairedT, WelchT };
const char* test_kind_token(TestKind k);

struct TestResult {
    TestKind kind = TestKind::PairedT;
    double statistic = 0.0;
    double df = 0.0;
    double p_value = 1.0;
    std::optional<double> p_adjusted; // set by the battery that owns the family
};

// Paired t on the differences d = y - x: t = mean(d) / (sd(d)/sqrt(n)),
// df = n-1, two-sided p. Zero difference variance is an error, not p=NaN.
TestResult paired_t(const std::vector<double>& x, const std::vector<double>& y);

// Welch's unequal-variance t with Welch-Satterthwaite df. Sign convention:
// statistic = (mean(a) - mean(b)) / se.
TestResult welch_t(const std::vector<double>& a, const std::vector<double>& b);

struct FdrResult {
    std::vector<double> adjusted;
    std::vector<bool> rejected; // adjusted <= q
};

// Benjamini-Hochberg step-up: adjusted_(k) = min_{j>=k} min(1, m*p_(j)/j),
// invariant under input permutation.
FdrResult bh_fdr(const std::vector<double>& p, double q);

// One battery cell. Degenerate-variance cells carry no result and are
// excluded from the BH family (the family shrinks; the slot remains).
struct BinTest {
    int bin_index = 0;               // -15..-1, +1..+15
    Group control = Group::AttemptedDuring; // between-battery only
    std::optional<TestResult> result;
    bool rejected = false;
};

// Paired t of every bin against the baseline bin across one group's aligned
// channels; single BH family across the 30 bins (degenerate bins excluded,
// e.g. the baseline tested against itself).
std::vector<BinTest> within_group_test(const std::vector<AlignedSeries>& aligned,
                                       int baseline_bin, double q);

// Welch t per (bin, control group) between the treatment and each control
// collection; one BH family across all 90 cells.
std::vector<BinTest> between_group_test(
    const std::vector<AlignedSeries>& treatment,
    const std::vector<std::pair<Group, std::vector<AlignedSeries>>>& controls, double q);

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

// Observed agreement over labelled pairs (rater1, rater2).
double percent_agreement(const std::vector<std::pair<std::string, std::string>>& pairs);

// Cohen's kappa; absent (not 0) when expected agreement is 1, i.e. no
// variation for chance correction to work with.
std::optional<double> cohens_kappa(const std::vector<std::pair<std::string, std::string>>& pairs);

double cosine_similarity(const std::vector<double>& u, const std::vector<double>& v);

// tf = raw term count within the topic's segments; idf = ln(N_topics / df)
// over topics whose segments contain the term. Tokens are lowercased
// whitespace-delimited words. Output sorted by (score desc, word asc).
std::map<int, std::vector<std::pair<std::string, double>>> tfidf(
    const std::map<int, std::vector<std::string>>& segments_by_topic,
    const std::set<std::string>& stop_words = {});

double mean_of(const std::vector<double>& v);
double sample_variance(const std::vector<double>& v); // n-1 denominator

} // namespace cohort
