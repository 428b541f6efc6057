#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "cohort/error.hpp"
#include "cohort/rng.hpp"
#include "cohort/stats.hpp"

using namespace cohort;

namespace {

AlignedSeries constant_series(const std::string& id, double v, int topic = 0) {
    AlignedSeries s;
    s.topic_id = topic;
    s.channel_id = id;
    s.pre.fill(v);
    s.post.fill(v);
    return s;
}

} // namespace

TEST_CASE("paired t on the worked fixtures") {
    TestResult r = paired_t({1, 2, 3}, {1, 3, 5});
    CHECK(r.kind == TestKind::PairedT);
    CHECK(r.statistic == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
    CHECK(r.df == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(r.p_value == doctest::Approx(0.22540333075851662).epsilon(1e-12));

    TestResult r2 = paired_t({0, 0}, {1, 3});
    CHECK(r2.statistic == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(r2.df == doctest::Approx(1.0));
    CHECK(r2.p_value == doctest::Approx(0.29516723530086655).epsilon(1e-12));
}

TEST_CASE("paired t error contract") {
    CHECK_THROWS_WITH_AS(paired_t({1, 2}, {1, 2, 3}), doctest::Contains("length"), Error);
    // Constant shift: zero difference variance is an error, not p = NaN.
    try {
        paired_t({1, 2, 3}, {2, 3, 4});
        FAIL("expected degenerate-variance error");
    } catch (const Error& e) {
        CHECK(e.code() == "DegenerateVariance");
    }
    CHECK_THROWS_AS(paired_t({1}, {2}), Error); // n < 2
}

TEST_CASE("welch t on the worked fixtures") {
    TestResult r = welch_t({1, 2, 3, 4}, {2, 4, 6, 8});
    CHECK(r.kind == TestKind::WelchT);
    CHECK(r.statistic == doctest::Approx(-1.7320508075688772).epsilon(1e-10));
    CHECK(r.df == doctest::Approx(4.411764705882353).epsilon(1e-10));
    CHECK(r.p_value == doctest::Approx(0.15158050484530394).epsilon(1e-10));

    // One sample with zero variance still has a well-defined Welch statistic.
    TestResult r2 = welch_t({0, 0, 0}, {1, 1, 2});
    CHECK(r2.statistic == doctest::Approx(-4.0).epsilon(1e-8));
    CHECK(r2.df == doctest::Approx(2.0).epsilon(1e-8));
    CHECK(r2.p_value == doctest::Approx(0.057190958417936637).epsilon(1e-8));

    TestResult r3 = welch_t({1, 2, 3}, {1, 2, 3});
    CHECK(r3.statistic == 0.0);
    CHECK(r3.p_value == doctest::Approx(1.0));
}

TEST_CASE("welch t antisymmetry and degenerate error") {
    Rng rng = Rng::from(5);
    std::vector<double> a, b;
    for (int i = 0; i < 9; ++i) a.push_back(rng.normal());
    for (int i = 0; i < 14; ++i) b.push_back(rng.normal(0.3, 2.0));
    TestResult ab = welch_t(a, b), ba = welch_t(b, a);
    CHECK(ab.statistic == doctest::Approx(-ba.statistic).epsilon(1e-14));
    CHECK(ab.df == doctest::Approx(ba.df).epsilon(1e-14));
    CHECK(ab.p_value == doctest::Approx(ba.p_value).epsilon(1e-14));

    try {
        welch_t({2, 2, 2}, {5, 5, 5});
        FAIL("expected degenerate-variance error");
    } catch (const Error& e) {
        CHECK(e.code() == "DegenerateVariance");
    }
}

TEST_CASE("benjamini-hochberg step-up on the worked fixture") {
    FdrResult r = bh_fdr({0.01, 0.04, 0.03, 0.002}, 0.05);
    REQUIRE(r.adjusted.size() == 4);
    CHECK(r.adjusted[0] == doctest::Approx(0.02).epsilon(1e-12));
    CHECK(r.adjusted[1] == doctest::Approx(0.04).epsilon(1e-12));
    CHECK(r.adjusted[2] == doctest::Approx(0.04).epsilon(1e-12));
    CHECK(r.adjusted[3] == doctest::Approx(0.008).epsilon(1e-12));
    for (bool rej : r.rejected) CHECK(rej);

    FdrResult one = bh_fdr({1.0}, 0.05);
    CHECK(one.adjusted[0] == 1.0);
    CHECK_FALSE(one.rejected[0]);

    FdrResult flat = bh_fdr({0.2, 0.2, 0.2, 0.2, 0.2}, 0.05);
    for (double a : flat.adjusted) CHECK(a == doctest::Approx(0.2).epsilon(1e-12));

    CHECK(bh_fdr({}, 0.05).adjusted.empty());
}

TEST_CASE("bh_fdr is permutation-equivariant and dominates bonferroni") {
    Rng rng = Rng::from(99);
    std::vector<double> p;
    for (int i = 0; i < 40; ++i) p.push_back(rng.next_double());
    FdrResult base = bh_fdr(p, 0.05);

    // Rotate the vector; adjusted values must follow the same rotation.
    std::vector<double> rot(p.begin() + 7, p.end());
    rot.insert(rot.end(), p.begin(), p.begin() + 7);
    FdrResult rotated = bh_fdr(rot, 0.05);
    for (size_t i = 0; i < p.size(); ++i)
        CHECK(rotated.adjusted[i] ==
              doctest::Approx(base.adjusted[(i + 7) % p.size()]).epsilon(1e-14));

    const double m = static_cast<double>(p.size());
    for (size_t i = 0; i < p.size(); ++i) {
        CHECK(base.adjusted[i] >= p[i]);
        if (p[i] * m <= 0.05) CHECK(base.rejected[i]); // bonferroni-rejected => BH-rejected
    }
}

TEST_CASE("within-group battery: family of 30 against the baseline bin") {
    // Four channels, constant level but one bump in the post period so at
    // least some bins are non-degenerate against baseline bin -1.
    std::vector<AlignedSeries> g;
    for (int c = 0; c < 4; ++c) {
        AlignedSeries s = constant_series("c" + std::to_string(c), 0.2 + 0.01 * c);
        for (int k = 0; k < 15; ++k) s.post[k] += 0.1 + 0.002 * c;
        g.push_back(s);
    }
    std::vector<BinTest> cells = within_group_test(g, -1, 0.05);
    REQUIRE(cells.size() == 30);
    int with_result = 0, rejected = 0;
    for (const BinTest& c : cells) {
        if (c.result) {
            ++with_result;
            CHECK(c.result->p_adjusted.has_value());
        } else {
            CHECK_FALSE(c.rejected);
        }
        rejected += c.rejected ? 1 : 0;
    }
    // Pre bins (including baseline vs itself) are degenerate: identical
    // differences. Post bins all differ from baseline by a positive step.
    CHECK(with_result == 15);
    CHECK(rejected == 15);

    // Bin labels cover -15..-1 and +1..+15 with no zero.
    for (const BinTest& c : cells) CHECK(c.bin_index != 0);
}

TEST_CASE("between-group battery: 90 cells, one BH family") {
    Rng rng = Rng::from(31);
    auto make_group = [&](double shift, int n, int base) {
        std::vector<AlignedSeries> v;
        for (int c = 0; c < n; ++c) {
            AlignedSeries s = constant_series("g" + std::to_string(base + c), 0.0);
            for (int k = 0; k < 15; ++k) {
                s.pre[k] = 0.3 + shift + 0.01 * rng.normal();
                s.post[k] = 0.3 + shift + 0.01 * rng.normal();
            }
            v.push_back(s);
        }
        return v;
    };
    std::vector<AlignedSeries> treatment = make_group(0.2, 6, 0);
    std::vector<std::pair<Group, std::vector<AlignedSeries>>> controls{
        {Group::AttemptedBefore, make_group(0.0, 6, 100)},
        {Group::ControlMajorLifeEvent, make_group(0.0, 6, 200)},
        {Group::ControlMatches, make_group(0.2, 6, 300)},
    };
    std::vector<BinTest> cells = between_group_test(treatment, controls, 0.05);
    REQUIRE(cells.size() == 90);

    int rejected_shifted = 0, rejected_matched = 0;
    for (const BinTest& c : cells) {
        REQUIRE(c.result.has_value());
        if (c.control == Group::ControlMatches)
            rejected_matched += c.rejected ? 1 : 0;
        else
            rejected_shifted += c.rejected ? 1 : 0;
    }
    // The two shifted controls differ by 20x the noise sd: all 60 cells
    // reject; the equal-mean control should reject (almost) nowhere.
    CHECK(rejected_shifted == 60);
    CHECK(rejected_matched <= 2);
}

TEST_CASE("agreement and similarity metrics") {
    CHECK(jaccard({"x", "y"}, {"y", "z"}) == doctest::Approx(1.0 / 3.0));
    CHECK(jaccard({"a"}, {"a"}) == 1.0);
    CHECK_THROWS_AS(jaccard({}, {}), Error);

    std::vector<std::pair<std::string, std::string>> pairs = {
        {"a", "a"}, {"a", "a"}, {"a", "b"}, {"b", "b"}, {"b", "a"}};
    CHECK(percent_agreement(pairs) == doctest::Approx(0.6));

    // P_o = 0.8, P_e = 0.5 -> kappa = 0.6: two symmetric raters over 2 labels.
    std::vector<std::pair<std::string, std::string>> k1;
    for (int i = 0; i < 4; ++i) k1.push_back({"a", "a"});
    for (int i = 0; i < 4; ++i) k1.push_back({"b", "b"});
    k1.push_back({"a", "b"});
    k1.push_back({"b", "a"});
    auto kappa = cohens_kappa(k1);
    REQUIRE(kappa.has_value());
    CHECK(*kappa == doctest::Approx(0.6).epsilon(1e-12));

    // No variation: expected agreement 1 -> kappa undefined, not zero.
    CHECK_FALSE(cohens_kappa({{"a", "a"}, {"a", "a"}}).has_value());

    CHECK(cosine_similarity({1, 0}, {1, 1}) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(cosine_similarity({2, 3}, {2, 3}) == doctest::Approx(1.0));
    CHECK(cosine_similarity({1, 0}, {0, 1}) == doctest::Approx(0.0));
    CHECK_THROWS_AS(cosine_similarity({0, 0}, {1, 0}), Error);
}

TEST_CASE("tfidf: ubiquitous words score zero, unique words score tf*ln(N)") {
    std::map<int, std::vector<std::string>> segs;
    for (int t = 0; t < 10; ++t) segs[t] = {"filler common words"};
    segs[3].push_back("unique unique unique");
    auto scores = tfidf(segs);
    REQUIRE(scores.count(3));

    double unique_score = -1.0, common_score = -1.0;
    for (const auto& [word, score] : scores[3]) {
        if (word == "unique") unique_score = score;
        if (word == "common") common_score = score;
    }
    CHECK(unique_score == doctest::Approx(3.0 * std::log(10.0)).epsilon(1e-12));
    CHECK(common_score == 0.0);

    // Sorted descending by score.
    for (size_t i = 1; i < scores[3].size(); ++i)
        CHECK(scores[3][i - 1].second >= scores[3][i].second);

    auto stopped = tfidf(segs, {"unique"});
    for (const auto& [word, score] : stopped[3]) CHECK(word != "unique");

    std::map<int, std::vector<std::string>> with_empty = {{0, {"alpha"}}, {1, {}}};
    auto r = tfidf(with_empty);
    CHECK(r[1].empty());
}

TEST_CASE("mean and sample variance helpers") {
    CHECK(mean_of({1, 2, 3, 4}) == doctest::Approx(2.5));
    CHECK(sample_variance({1, 2, 3, 4}) == doctest::Approx(5.0 / 3.0).epsilon(1e-12));
}
