#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cohort/config.hpp"
#include "cohort/temporal.hpp"
#include "cohort/types.hpp"

namespace cohort {

// Compression transform keeping the Beta likelihood's open support:
// y' = (y*(n-1) + 0.5) / n. The model builder applies it only to exact 0/1.
double boundary_adjust(double y, int n);

inline double odds_ratio(double beta) { return std::exp(beta); }

// One period-level response: the channel's mean topic probability over the
// qualifying uploads of one side of its reference event.
struct GlmmObservation {
    std::string channel_id;
    double y = 0.5;           // in (0,1) after boundary adjustment
    int time = 0;             // 0 = pre-event, 1 = post-event
    Group group = Group::AttemptedDuring;
    std::optional<int> age;
    Gender gender = Gender::Unknown;
    std::optional<bool> minority;
    double activity = 0.0;    // log(1 + qualifying upload count in the period)
};

// Up to two rows per channel (one per period with any qualifying upload).
// Errors when fewer than two groups contribute observations.
std::vector<GlmmObservation> build_glmm_data(const CohortDataset& ds, int topic_id,
                                             const std::map<std::string, ReferenceEvent>& events);

// Fixed-effect layout: intercept, time, group contrasts against
// AttemptedDuring, group:time interactions, then covariates (z-scored age,
// gender dummies against female, minority, z-scored activity). Covariate
// columns with no variation are dropped and recorded; structural columns
// (time, group, interactions) are kept so rank problems surface as errors.
struct GlmmDesign {
    std::vector<std::string> terms;
    Eigen::MatrixXd x;                    // n rows, terms.size() columns
    Eigen::VectorXd y;
    std::vector<int> channel_of;          // row -> channel index (contiguous runs)
    std::vector<std::string> channel_ids; // channel index -> id
    std::vector<std::string> dropped_covariates;
    int topic_id = 0;
};
GlmmDesign build_glmm_design(const std::vector<GlmmObservation>& obs);

// theta = (beta[0..p), lambda = log sigma_b^2, tau = log phi).
// Marginal log-likelihood with the random intercepts integrated out by
// adaptive Gauss-Hermite quadrature; order 1 is exactly the Laplace
// approximation. Gradient comes from forward-mode duals with the implicit
// mode derivative, so it is exact for the approximated objective.
double glmm_marginal_ll(const GlmmDesign& d, const Eigen::VectorXd& theta, int quad_order);
Eigen::VectorXd glmm_marginal_gradient(const GlmmDesign& d, const Eigen::VectorXd& theta,
                                       int quad_order, double* ll_out = nullptr);

struct GlmmFit {
    int topic_id = 0;
    std::vector<std::string> terms;
    std::vector<double> estimates, se, z, p;
    std::vector<std::optional<double>> p_adjusted; // set by the cross-topic BH pass
    double sigma2 = 0.0;
    double phi = 0.0;
    double log_likelihood = 0.0;
    bool converged = false;
    bool sigma2_boundary = false; // variance pinned at the floor: flag, not failure
    int iterations = 0;
    std::vector<std::string> dropped_covariates;
    int term(const std::string& name) const;
};

// Maximizes the marginal likelihood by projected BFGS over theta, starting
// from beta = 0, sigma_b^2 = start, phi = start. Wald standard errors from a
// finite-difference Hessian of the exact gradient (the lambda row is dropped
// when the variance sits on the boundary).
GlmmFit fit_beta_glmm(const GlmmDesign& design, const GlmmConfig& cfg);

// Independent fixed-effects Beta regression (no random term): analytic-score
// BFGS in plain doubles, sharing nothing with the mixed-model path. Serves
// as the reduction oracle the sigma2 -> 0 limit is checked against.
struct BetaGlmFit {
    std::vector<std::string> terms;
    std::vector<double> coef; // beta, then phi appended via log link internally
    double phi = 0.0;
    double log_likelihood = 0.0;
    bool converged = false;
    int iterations = 0;
};
BetaGlmFit fit_beta_glm(const GlmmDesign& design);

// Coefficient families for the cross-topic BH pass: every non-intercept term
// maps to one of time / group / group_time / age / gender / minority /
// activity, and each family is corrected across topics as one unit.
const char* term_family(const std::string& term);
void apply_cross_topic_fdr(std::vector<GlmmFit>& fits, double q);

struct TopicBatteryResult {
    std::vector<GlmmFit> fits;                         // ordered by topic id
    std::vector<std::pair<int, std::string>> failures; // (topic_id, error)
};

// One model per topic (failures isolated), then the BH pass over the
// successful fits. Per-topic fits run under parallel_for when asked.
TopicBatteryResult run_topic_battery(const CohortDataset& ds, const std::vector<int>& topic_ids,
                                     const std::map<std::string, ReferenceEvent>& events,
                                     const GlmmConfig& cfg, bool parallel);

} // namespace cohort
