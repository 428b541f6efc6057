#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cohort/config.hpp"
#include "cohort/design.hpp"

namespace cohort {

struct LogisticFit {
    std::vector<std::string> names; // "(intercept)" first, then feature names
    std::vector<double> coef;
    std::vector<double> se, z, p;   // populated only when converged
    double log_likelihood = 0.0;
    bool converged = false;
    int iterations = 0;
    std::vector<std::string> warnings;

    double aic() const { return 2.0 * static_cast<double>(coef.size()) - 2.0 * log_likelihood; }
    int term(const std::string& name) const; // index into names, -1 when absent
};

// Maximum likelihood by iteratively reweighted least squares with
// step-halving; Wald standard errors from the observed information.
// Convergence: max |score| < 1e-8 or relative log-likelihood change < 1e-10.
// Perfect separation (|linear predictor| exceeding 30) and rank deficiency
// are errors naming the offending column.
LogisticFit fit_logistic(const DesignMatrix& d);

// Fit on a feature subset (column indices into d.feature_names).
LogisticFit fit_logistic_subset(const DesignMatrix& d, const std::vector<int>& cols);

struct SelectionStep {
    std::string action;  // add | drop
    std::string feature;
    double criterion_before = 0.0;
    double criterion_after = 0.0;
};

struct SelectionTrace {
    std::vector<SelectionStep> steps;
    std::vector<std::string> final_features; // in selection order
};

// Forward-backward search from the empty model. AIC mode accepts the move
// with the strictly lowest AIC each round; p-value mode enters the smallest
// Wald p under p_enter (optionally Bonferroni-divided by the number of
// candidates) and removes the largest above p_remove. Ties break toward the
// lowest column index. Replaying the trace reproduces the final model.
std::pair<SelectionTrace, LogisticFit> stepwise_select(const DesignMatrix& d,
                                                       const StepwiseConfig& cfg);

struct LassoSolution {
    double lambda = 0.0;
    std::vector<double> coef;      // original scale; "(intercept)" first
    std::vector<int> support;      // feature indices with nonzero coefficient
    double kkt_violation = 0.0;
    int sweeps = 0;
};

struct LassoPath {
    std::vector<double> lambdas;   // descending from lambda_max
    std::vector<LassoSolution> solutions;
};

// Coordinate descent on the L1-penalized logistic likelihood over internally
// standardized features (intercept unpenalized, reported on the original
// scale). Default path: path_length log-spaced lambdas from lambda_max (the
// smallest lambda zeroing every feature) down to lambda_max*lambda_min_ratio.
// Every reported solution satisfies the KKT conditions to kkt_tol.
LassoPath lasso_logistic(const DesignMatrix& d, const LassoConfig& cfg,
                         const std::vector<double>* lambdas = nullptr);

// Stratified k-fold cross-validation over the path; returns the index of the
// lambda minimizing held-out deviance (ties prefer the larger lambda).
size_t cv_lasso_best(const DesignMatrix& d, const LassoConfig& cfg, uint64_t seed);

} // namespace cohort
