#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "cohort/beta_glmm.hpp"
#include "cohort/dates.hpp"
#include "cohort/error.hpp"
#include "cohort/rng.hpp"
#include "cohort/special.hpp"

using namespace cohort;

namespace {

Group group_of(int k) {
    switch (k % 4) {
        case 0: return Group::AttemptedDuring;
        case 1: return Group::AttemptedBefore;
        case 2: return Group::ControlMajorLifeEvent;
        default: return Group::ControlMatches;
    }
}

// Simulated period-level observations straight from the model: channel i has
// random intercept b_i ~ N(0, sigma2); y ~ Beta(mu*phi, (1-mu)*phi) with
// logit mu = eta(fixed effects) + b_i.
std::vector<GlmmObservation> simulate_obs(Rng& rng, int n_channels, double sigma2, double phi,
                                          double b0, double b_time,
                                          const std::vector<double>& b_group,
                                          const std::vector<double>& b_inter) {
    std::vector<GlmmObservation> obs;
    for (int c = 0; c < n_channels; ++c) {
        Group g = group_of(c);
        int gi = static_cast<int>(g); // 0 = AttemptedDuring reference
        double b = sigma2 > 0.0 ? rng.normal(0.0, std::sqrt(sigma2)) : 0.0;
        for (int time = 0; time <= 1; ++time) {
            double eta = b0 + b_time * time + b;
            if (gi > 0) {
                eta += b_group[static_cast<size_t>(gi - 1)];
                eta += b_inter[static_cast<size_t>(gi - 1)] * time;
            }
            GlmmObservation o;
            o.channel_id = "ch" + std::to_string(c);
            o.time = time;
            o.group = g;
            o.activity = 0.0;
            double mu = logistic(eta);
            o.y = rng.beta(mu * phi, (1.0 - mu) * phi);
            obs.push_back(o);
        }
    }
    return obs;
}

// Plain Beta-regression log-likelihood, written independently of the library.
double beta_glm_ll(const GlmmDesign& d, const Eigen::VectorXd& beta, double phi) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < d.y.size(); ++i) {
        double eta = d.x.row(i).dot(beta);
        double mu = logistic(eta);
        double a = mu * phi, b = (1.0 - mu) * phi;
        ll += std::lgamma(phi) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(d.y[i]) +
              (b - 1.0) * std::log(1.0 - d.y[i]);
    }
    return ll;
}

} // namespace

TEST_CASE("boundary_adjust compression transform") {
    CHECK(boundary_adjust(0.0, 100) == doctest::Approx(0.005).epsilon(1e-15));
    CHECK(boundary_adjust(1.0, 100) == doctest::Approx(0.995).epsilon(1e-15));
    for (int n : {2, 10, 100, 12345})
        CHECK(boundary_adjust(0.5, n) == doctest::Approx(0.5).epsilon(1e-15));
    // Interior values barely move for large n.
    CHECK(boundary_adjust(0.3, 100000) == doctest::Approx(0.3).epsilon(1e-4));
    // Output is strictly inside (0,1) even for tiny n.
    CHECK(boundary_adjust(0.0, 1) > 0.0);
    CHECK(boundary_adjust(1.0, 1) < 1.0);
}

TEST_CASE("odds ratios quoted from coefficients") {
    CHECK(odds_ratio(0.83) == doctest::Approx(2.293).epsilon(5e-4));
    CHECK(odds_ratio(0.0) == 1.0);
    CHECK(odds_ratio(-0.31) == doctest::Approx(0.733).epsilon(5e-4));
    // Monotone: ordering of coefficients survives.
    CHECK(odds_ratio(-1.0) < odds_ratio(-0.5));
    CHECK(odds_ratio(0.5) < odds_ratio(1.5));
    // +129% / 27% lower, as quoted alongside those coefficients.
    CHECK((odds_ratio(0.83) - 1.0) * 100.0 == doctest::Approx(129.0).epsilon(0.005));
    CHECK((1.0 - odds_ratio(-0.31)) * 100.0 == doctest::Approx(26.7).epsilon(0.01));
}

TEST_CASE("build_glmm_data shapes period-level rows from the dataset") {
    CohortDataset ds;
    ds.topics.push_back({0, "t0", false});
    int nup = 0;
    auto add_channel = [&](const std::string& id, Group g, bool with_post) {
        Channel c;
        c.id = id;
        c.group = g;
        if (g == Group::AttemptedDuring || g == Group::ControlMajorLifeEvent) {
            ReferenceEvent ev;
            ev.kind = g == Group::AttemptedDuring ? EventKind::Attempt
                                                  : EventKind::MajorLifeEvent;
            ev.date = parse_date("2019-06-01");
            c.event = ev;
        }
        ds.channels.push_back(c);
        auto add_upload = [&](const std::string& date, double v) {
            Upload u;
            u.id = "u" + std::to_string(nup++);
            u.channel_id = id;
            u.ts = parse_timestamp(date + "T12:00:00Z");
            u.valid = true;
            u.topic_probs = {v};
            ds.uploads.push_back(u);
        };
        add_upload("2019-03-01", 0.2);
        add_upload("2019-04-01", 0.4);
        if (with_post) {
            add_upload("2019-08-01", 0.5);
            add_upload("2019-09-01", 0.7);
        }
    };
    add_channel("a1", Group::AttemptedDuring, true);
    add_channel("a2", Group::AttemptedDuring, false); // pre-only channel
    add_channel("b1", Group::AttemptedBefore, true);
    add_channel("c1", Group::ControlMajorLifeEvent, true);
    add_channel("d1", Group::ControlMatches, true);
    ds.finalize();

    auto events = assign_all_events(ds);
    std::vector<GlmmObservation> obs = build_glmm_data(ds, 0, events);

    // a1 contributes two rows sharing its id; a2 only the pre row.
    int a1_rows = 0, a2_rows = 0;
    for (const GlmmObservation& o : obs) {
        CHECK(o.y > 0.0);
        CHECK(o.y < 1.0);
        if (o.channel_id == "a1") ++a1_rows;
        if (o.channel_id == "a2") {
            ++a2_rows;
            CHECK(o.time == 0);
        }
    }
    CHECK(a1_rows == 2);
    CHECK(a2_rows == 1);

    // Pre mean of a1 is mean{0.2, 0.4} = 0.3 (midpoint channels split around
    // their median upload date; a1 has a loaded event so the split is exact).
    for (const GlmmObservation& o : obs)
        if (o.channel_id == "a1" && o.time == 0) CHECK(o.y == doctest::Approx(0.3));

    // Activity covariate is log(1 + qualifying count).
    for (const GlmmObservation& o : obs)
        if (o.channel_id == "a1") CHECK(o.activity == doctest::Approx(std::log(3.0)));

    SUBCASE("design over all four groups holds 3 dummies + 3 interactions") {
        GlmmDesign d = build_glmm_design(obs);
        REQUIRE(d.terms.size() >= 8);
        CHECK(d.terms[0] == "(intercept)");
        CHECK(d.terms[1] == "time");
        int dummies = 0, inters = 0;
        for (const std::string& t : d.terms) {
            if (t.rfind("group_", 0) == 0 && t.find(":time") == std::string::npos) ++dummies;
            if (t.rfind("group_", 0) == 0 && t.find(":time") != std::string::npos) ++inters;
        }
        CHECK(dummies == 3);
        CHECK(inters == 3);
        CHECK(d.x.rows() == static_cast<Eigen::Index>(obs.size()));
        // Rows of one channel are contiguous.
        for (size_t r = 1; r < d.channel_of.size(); ++r)
            CHECK(d.channel_of[r] >= d.channel_of[r - 1]);
    }

    SUBCASE("a topic represented in fewer than two groups is an error") {
        CohortDataset lone;
        lone.topics.push_back({0, "t0", false});
        Channel c;
        c.id = "only";
        c.group = Group::AttemptedDuring;
        ReferenceEvent ev;
        ev.kind = EventKind::Attempt;
        ev.date = parse_date("2019-06-01");
        c.event = ev;
        lone.channels.push_back(c);
        for (int i = 0; i < 4; ++i) {
            Upload u;
            u.id = "u" + std::to_string(i);
            u.channel_id = "only";
            u.ts = parse_timestamp(i < 2 ? "2019-03-01T00:00:00Z" : "2019-08-01T00:00:00Z");
            u.ts.seconds += i * 86400;
            u.valid = true;
            u.topic_probs = {0.4};
            lone.uploads.push_back(u);
        }
        lone.finalize();
        auto ev_map = assign_all_events(lone);
        CHECK_THROWS_AS(build_glmm_data(lone, 0, ev_map), Error);
    }

    SUBCASE("unknown topic id") {
        try {
            build_glmm_data(ds, 99, events);
            FAIL("expected unknown-topic error");
        } catch (const Error& e) {
            CHECK(e.code() == "UnknownTopic");
        }
    }
}

TEST_CASE("marginal-likelihood gradient matches central finite differences") {
    Rng rng = Rng::from(2024);
    auto obs = simulate_obs(rng, 16, 0.3, 25.0, -1.2, 0.4, {0.2, -0.3, 0.1}, {0.1, 0.0, -0.2});
    GlmmDesign d = build_glmm_design(obs);

    const int p = static_cast<int>(d.terms.size());
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(p + 2);
    // A random interior point, not an optimum: the gradient must be exact
    // everywhere, not only at stationary points.
    for (int j = 0; j < p; ++j) theta[j] = 0.3 * rng.normal();
    theta[p] = std::log(0.2);      // lambda = log sigma2
    theta[p + 1] = std::log(15.0); // tau = log phi

    for (int order : {1, 3}) {
        CAPTURE(order);
        Eigen::VectorXd grad = glmm_marginal_gradient(d, theta, order);
        for (int k = 0; k < p + 2; ++k) {
            const double h = 1e-5;
            Eigen::VectorXd up = theta, dn = theta;
            up[k] += h;
            dn[k] -= h;
            double fd =
                (glmm_marginal_ll(d, up, order) - glmm_marginal_ll(d, dn, order)) / (2.0 * h);
            double scale = std::max({std::fabs(fd), std::fabs(grad[k]), 1e-4});
            CHECK(std::fabs(grad[k] - fd) / scale < 1e-4);
        }
    }
}

TEST_CASE("quadrature order 1 is the Laplace approximation; higher orders agree") {
    Rng rng = Rng::from(31337);
    auto obs = simulate_obs(rng, 20, 0.25, 30.0, -1.0, 0.5, {0.2, -0.1, 0.3}, {0.0, 0.1, -0.1});
    GlmmDesign d = build_glmm_design(obs);
    const int p = static_cast<int>(d.terms.size());
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(p + 2);
    theta[0] = -1.0;
    theta[1] = 0.4;
    theta[p] = std::log(0.25);
    theta[p + 1] = std::log(25.0);

    double l1 = glmm_marginal_ll(d, theta, 1);
    double l5 = glmm_marginal_ll(d, theta, 5);
    double l9 = glmm_marginal_ll(d, theta, 9);
    // Laplace is already close for near-balanced scalar effects, and the
    // quadrature refinement shrinks as the order grows.
    CHECK(std::fabs(l5 - l9) < std::fabs(l1 - l9) + 1e-9);
    CHECK(std::fabs(l1 - l9) / std::fabs(l9) < 1e-2);
    CHECK(std::fabs(l5 - l9) / std::fabs(l9) < 1e-4);

    CHECK_THROWS_AS(glmm_marginal_ll(d, theta, 0), Error);
}

TEST_CASE("with the variance at the floor the marginal likelihood is the plain GLM") {
    Rng rng = Rng::from(99);
    auto obs = simulate_obs(rng, 24, 0.0, 35.0, -1.4, 0.5, {0.3, -0.2, 0.1}, {-0.3, 0.2, 0.0});
    GlmmDesign d = build_glmm_design(obs);
    const int p = static_cast<int>(d.terms.size());

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    beta[0] = -1.2;
    beta[1] = 0.4;
    double phi = 30.0;

    Eigen::VectorXd theta(p + 2);
    theta.head(p) = beta;
    theta[p] = std::log(1e-12);
    theta[p + 1] = std::log(phi);

    double marginal = glmm_marginal_ll(d, theta, 1);
    double glm = beta_glm_ll(d, beta, phi);
    CHECK(marginal == doctest::Approx(glm).epsilon(1e-8));
}

TEST_CASE("sigma2 = 0 simulation: mixed fit reduces to the independent GLM fit") {
    Rng rng = Rng::from(4242);
    auto obs = simulate_obs(rng, 60, 0.0, 40.0, -1.5, 0.55, {0.3, -0.2, 0.1}, {-0.4, 0.2, 0.0});
    GlmmDesign d = build_glmm_design(obs);

    GlmmConfig cfg;
    GlmmFit mixed = fit_beta_glmm(d, cfg);
    REQUIRE(mixed.converged);
    BetaGlmFit glm = fit_beta_glm(d);
    REQUIRE(glm.converged);

    // The variance component collapses to (near) the floor...
    CHECK(mixed.sigma2 < 0.01);
    // ...and every fixed effect matches the reduction oracle.
    REQUIRE(mixed.estimates.size() == glm.coef.size());
    for (size_t k = 0; k < glm.coef.size(); ++k)
        CHECK(mixed.estimates[k] == doctest::Approx(glm.coef[k]).epsilon(1e-3));
    CHECK(mixed.phi == doctest::Approx(glm.phi).epsilon(5e-3));
}

TEST_CASE("random-intercept recovery on model-simulated data") {
    Rng rng = Rng::from(777);
    const double true_time = 0.55;
    auto obs = simulate_obs(rng, 120, 0.35, 30.0, -1.8, true_time, {0.2, -0.1, 0.15},
                            {-0.25, 0.1, 0.05});
    GlmmDesign d = build_glmm_design(obs);
    GlmmConfig cfg;
    GlmmFit fit = fit_beta_glmm(d, cfg);
    REQUIRE(fit.converged);
    CHECK_FALSE(fit.sigma2_boundary);

    int t = fit.term("time");
    REQUIRE(t >= 0);
    CHECK(std::fabs(fit.estimates[static_cast<size_t>(t)] - true_time) <
          3.0 * fit.se[static_cast<size_t>(t)]);
    CHECK(fit.sigma2 > 0.05);
    CHECK(fit.sigma2 < 1.5);
    CHECK(fit.phi > 10.0);
    // Wald columns populated and consistent.
    for (size_t k = 0; k < fit.terms.size(); ++k) {
        CHECK(fit.se[k] > 0.0);
        CHECK(fit.z[k] == doctest::Approx(fit.estimates[k] / fit.se[k]).epsilon(1e-10));
        CHECK(fit.p[k] == doctest::Approx(normal_two_sided_p(fit.z[k])).epsilon(1e-12));
    }
}

TEST_CASE("degenerate time column is a named rank error") {
    Rng rng = Rng::from(5);
    auto obs = simulate_obs(rng, 20, 0.1, 25.0, -1.0, 0.0, {0.1, 0.2, -0.1}, {0.0, 0.0, 0.0});
    for (GlmmObservation& o : obs) o.time = 0; // kill the pre/post contrast
    try {
        GlmmDesign d = build_glmm_design(obs);
        fit_beta_glmm(d, GlmmConfig{});
        FAIL("expected rank error");
    } catch (const Error& e) {
        CHECK(e.code() == "RankDeficient");
        CHECK(std::string(e.message()).find("time") != std::string::npos);
    }
}

TEST_CASE("term families route the cross-topic BH correction") {
    CHECK(std::string(term_family("(intercept)")) == "intercept");
    CHECK(std::string(term_family("time")) == "time");
    CHECK(std::string(term_family("group_attempted_before")) == "group");
    CHECK(std::string(term_family("group_control_matches:time")) == "group_time");
    CHECK(std::string(term_family("age_z")) == "age");
    CHECK(std::string(term_family("gender_male")) == "gender");
    CHECK(std::string(term_family("minority")) == "minority");
    CHECK(std::string(term_family("activity_z")) == "activity");

    // Four topics, hand-set p values on the time family: BH must act on the
    // family across topics exactly as bh_fdr does on the raw vector.
    std::vector<GlmmFit> fits(4);
    std::vector<double> time_p = {0.01, 0.04, 0.03, 0.002};
    for (size_t f = 0; f < fits.size(); ++f) {
        fits[f].topic_id = static_cast<int>(f);
        fits[f].terms = {"(intercept)", "time"};
        fits[f].estimates = {0.0, 0.5};
        fits[f].se = {1.0, 1.0};
        fits[f].z = {0.0, 0.5};
        fits[f].p = {0.9, time_p[f]};
        fits[f].p_adjusted.assign(2, std::nullopt);
    }
    apply_cross_topic_fdr(fits, 0.05);
    std::vector<double> expect = {0.02, 0.04, 0.04, 0.008};
    for (size_t f = 0; f < fits.size(); ++f) {
        CHECK_FALSE(fits[f].p_adjusted[0].has_value()); // intercept never corrected
        REQUIRE(fits[f].p_adjusted[1].has_value());
        CHECK(*fits[f].p_adjusted[1] == doctest::Approx(expect[f]).epsilon(1e-12));
    }

    // A single topic: BH is the identity on one p value.
    std::vector<GlmmFit> one(fits.begin(), fits.begin() + 1);
    one[0].p_adjusted.assign(2, std::nullopt);
    apply_cross_topic_fdr(one, 0.05);
    CHECK(*one[0].p_adjusted[1] == doctest::Approx(one[0].p[1]).epsilon(1e-15));
}
