#include "cohort/logistic.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "cohort/error.hpp"
#include "cohort/rng.hpp"
#include "cohort/special.hpp"

namespace cohort {

int LogisticFit::term(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    return -1;
}

namespace {

constexpr double kEtaBound = 30.0;

double log_likelihood_of(const Eigen::VectorXd& eta, const std::vector<int>& y) {
    double ll = 0.0;
    for (int i = 0; i < eta.size(); ++i) {
        // log p(y|eta) = y*eta - log(1+e^eta), computed overflow-safe.
        double e = eta[i];
        ll += y[static_cast<size_t>(i)] * e - (e > 0 ? e + std::log1p(std::exp(-e))
                                                     : std::log1p(std::exp(e)));
    }
    return ll;
}

// Builds the n x (k+1) matrix [1, selected feature columns].
Eigen::MatrixXd model_matrix(const DesignMatrix& d, const std::vector<int>& cols) {
    Eigen::MatrixXd X(d.n(), cols.size() + 1);
    for (size_t i = 0; i < d.n(); ++i) {
        X(static_cast<Eigen::Index>(i), 0) = 1.0;
        for (size_t j = 0; j < cols.size(); ++j)
            X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j + 1)) =
                d.x[i][static_cast<size_t>(cols[j])];
    }
    return X;
}

std::vector<std::string> term_names(const DesignMatrix& d, const std::vector<int>& cols) {
    std::vector<std::string> names{"(intercept)"};
    for (int c : cols) names.push_back(d.feature_names[static_cast<size_t>(c)]);
    return names;
}

[[noreturn]] void separation_error(const Eigen::MatrixXd& X, const Eigen::VectorXd& beta,
                                   const Eigen::VectorXd& eta,
                                   const std::vector<std::string>& names) {
    Eigen::Index worst_row;
    eta.cwiseAbs().maxCoeff(&worst_row);
    Eigen::Index worst_col = 0;
    double best = -1.0;
    for (Eigen::Index j = 1; j < X.cols(); ++j) {
        double contrib = std::fabs(X(worst_row, j) * beta[j]);
        if (contrib > best) {
            best = contrib;
            worst_col = j;
        }
    }
    fail("SeparationError", "linear predictor diverged past " +
                                std::to_string(static_cast<int>(kEtaBound)) +
                                "; feature '" + names[static_cast<size_t>(worst_col)] +
                                "' separates the outcome");
}

LogisticFit irls(const DesignMatrix& d, const std::vector<int>& cols) {
    bool has0 = false, has1 = false;
    for (int yi : d.y) (yi ? has1 : has0) = true;
    if (!has0 || !has1) fail("DesignError", "outcome must contain both classes");

    const Eigen::Index n = static_cast<Eigen::Index>(d.n());
    const Eigen::Index p = static_cast<Eigen::Index>(cols.size()) + 1;
    Eigen::MatrixXd X = model_matrix(d, cols);
    std::vector<std::string> names = term_names(d, cols);

    {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
        qr.setThreshold(1e-10);
        if (qr.rank() < p) {
            Eigen::Index dependent = qr.colsPermutation().indices()[qr.rank()];
            fail("RankDeficient", "column '" + names[static_cast<size_t>(dependent)] +
                                      "' is linearly dependent on earlier columns");
        }
    }

    LogisticFit fit;
    fit.names = names;
    if (n <= p)
        fit.warnings.push_back("rows (" + std::to_string(n) + ") do not exceed parameters (" +
                               std::to_string(p) + ")");

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd eta = X * beta;
    double ll = log_likelihood_of(eta, d.y);
    Eigen::VectorXd mu(n), w(n);

    const int max_iter = 100;
    for (int iter = 1; iter <= max_iter; ++iter) {
        fit.iterations = iter;
        for (Eigen::Index i = 0; i < n; ++i) {
            mu[i] = logistic(eta[i]);
            w[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-10);
        }
        Eigen::VectorXd resid(n);
        for (Eigen::Index i = 0; i < n; ++i)
            resid[i] = static_cast<double>(d.y[static_cast<size_t>(i)]) - mu[i];
        Eigen::VectorXd score = X.transpose() * resid;
        if (score.lpNorm<Eigen::Infinity>() < 1e-8) break;

        Eigen::MatrixXd info = X.transpose() * w.asDiagonal() * X;
        Eigen::VectorXd step = info.ldlt().solve(score);

        // Step-halving keeps the log-likelihood non-decreasing.
        double scale = 1.0;
        Eigen::VectorXd beta_new, eta_new;
        double ll_new = ll;
        for (int h = 0; h < 30; ++h) {
            beta_new = beta + scale * step;
            eta_new = X * beta_new;
            ll_new = log_likelihood_of(eta_new, d.y);
            if (ll_new >= ll) break;
            scale *= 0.5;
        }
        beta = beta_new;
        eta = eta_new;
        if (eta.lpNorm<Eigen::Infinity>() > kEtaBound)
            separation_error(X, beta, eta, names);
        double prev = ll;
        ll = ll_new;
        if (std::fabs(ll - prev) < 1e-10 * (std::fabs(prev) + 1e-10)) break;
        if (iter == max_iter) fail("NonConvergence", "IRLS failed to converge in 100 iterations");
    }

    // Perfect separation drives the deviance to zero: every observation is
    // fit exactly and the score underflows the tolerance while the
    // coefficients are still marching to infinity. With both classes present
    // no finite MLE gets this close to zero.
    if (ll > -1e-6) separation_error(X, beta, eta, names);

    fit.converged = true;
    fit.log_likelihood = ll;
    fit.coef.assign(beta.data(), beta.data() + p);

    for (Eigen::Index i = 0; i < n; ++i) {
        mu[i] = logistic(eta[i]);
        w[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-10);
    }
    Eigen::MatrixXd info = X.transpose() * w.asDiagonal() * X;
    Eigen::MatrixXd cov = info.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    for (Eigen::Index j = 0; j < p; ++j) {
        double sj = std::sqrt(std::max(cov(j, j), 0.0));
        fit.se.push_back(sj);
        double zj = sj > 0 ? fit.coef[static_cast<size_t>(j)] / sj : 0.0;
        fit.z.push_back(zj);
        fit.p.push_back(normal_two_sided_p(zj));
    }
    return fit;
}

} // namespace

LogisticFit fit_logistic(const DesignMatrix& d) {
    if (!d.feature_names.empty()) validate_design(d);
    std::vector<int> cols(d.p());
    std::iota(cols.begin(), cols.end(), 0);
    return irls(d, cols);
}

LogisticFit fit_logistic_subset(const DesignMatrix& d, const std::vector<int>& cols) {
    return irls(d, cols);
}

std::pair<SelectionTrace, LogisticFit> stepwise_select(const DesignMatrix& d,
                                                       const StepwiseConfig& cfg) {
    validate_design(d);
    const int p = static_cast<int>(d.p());
    std::vector<int> included;
    std::vector<bool> in(static_cast<size_t>(p), false);
    SelectionTrace trace;
    LogisticFit current = irls(d, included);
    int steps = 0;
    const bool aic_mode = cfg.criterion == StepwiseConfig::Criterion::Aic;

    auto bump = [&] {
        if (++steps > cfg.max_steps)
            fail("NonTermination", "stepwise exceeded " + std::to_string(cfg.max_steps) +
                                       " steps");
    };

    for (;;) {
        bool moved = false;

        { // forward
            int n_candidates = 0;
            for (int j = 0; j < p; ++j) n_candidates += !in[static_cast<size_t>(j)];
            int best_j = -1;
            double best_val = aic_mode ? current.aic() : 2.0; // p values never exceed 1
            LogisticFit best_fit;
            for (int j = 0; j < p; ++j) {
                if (in[static_cast<size_t>(j)]) continue;
                std::vector<int> cand = included;
                cand.push_back(j);
                LogisticFit f;
                try {
                    f = irls(d, cand);
                } catch (const Error& e) {
                    if (e.code() == "RankDeficient") continue; // collinear candidate: skip
                    throw;
                }
                double val = aic_mode ? f.aic() : f.p.back();
                if (val < best_val) {
                    best_val = val;
                    best_j = j;
                    best_fit = f;
                }
            }
            double enter_cut = cfg.bonferroni_entry && n_candidates > 0
                                   ? cfg.p_enter / n_candidates
                                   : cfg.p_enter;
            bool accept = best_j >= 0 && (aic_mode || best_val < enter_cut);
            if (accept) {
                bump();
                trace.steps.push_back({"add", d.feature_names[static_cast<size_t>(best_j)],
                                       aic_mode ? current.aic() : enter_cut, best_val});
                included.push_back(best_j);
                in[static_cast<size_t>(best_j)] = true;
                current = std::move(best_fit);
                moved = true;
            }
        }

        // backward: retest everything already in the model
        for (bool dropped = true; dropped && !included.empty();) {
            dropped = false;
            if (aic_mode) {
                int best_k = -1;
                double best_aic = current.aic();
                LogisticFit best_fit;
                for (size_t k = 0; k < included.size(); ++k) {
                    std::vector<int> cand = included;
                    cand.erase(cand.begin() + static_cast<long>(k));
                    LogisticFit f = irls(d, cand);
                    if (f.aic() < best_aic) {
                        best_aic = f.aic();
                        best_k = static_cast<int>(k);
                        best_fit = f;
                    }
                }
                if (best_k >= 0) {
                    bump();
                    int j = included[static_cast<size_t>(best_k)];
                    trace.steps.push_back({"drop", d.feature_names[static_cast<size_t>(j)],
                                           current.aic(), best_aic});
                    included.erase(included.begin() + best_k);
                    in[static_cast<size_t>(j)] = false;
                    current = std::move(best_fit);
                    moved = dropped = true;
                }
            } else {
                // Largest Wald p above the removal threshold leaves first.
                size_t worst_k = 0;
                double worst_p = -1.0;
                for (size_t k = 0; k < included.size(); ++k)
                    if (current.p[k + 1] > worst_p) {
                        worst_p = current.p[k + 1];
                        worst_k = k;
                    }
                if (worst_p > cfg.p_remove) {
                    bump();
                    int j = included[worst_k];
                    std::vector<int> cand = included;
                    cand.erase(cand.begin() + static_cast<long>(worst_k));
                    trace.steps.push_back({"drop", d.feature_names[static_cast<size_t>(j)],
                                           cfg.p_remove, worst_p});
                    included.erase(included.begin() + static_cast<long>(worst_k));
                    in[static_cast<size_t>(j)] = false;
                    current = irls(d, cand);
                    moved = dropped = true;
                }
            }
        }

        if (!moved) break;
    }

    for (int j : included) trace.final_features.push_back(d.feature_names[static_cast<size_t>(j)]);
    return {std::move(trace), std::move(current)};
}

namespace {

struct Standardized {
    Eigen::MatrixXd xs;            // n x p, mean 0, population sd 1
    Eigen::VectorXd mean, sd;
};

Standardized standardize(const DesignMatrix& d) {
    const Eigen::Index n = static_cast<Eigen::Index>(d.n());
    const Eigen::Index p = static_cast<Eigen::Index>(d.p());
    Standardized s;
    s.xs.resize(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j)
            s.xs(i, j) = d.x[static_cast<size_t>(i)][static_cast<size_t>(j)];
    s.mean = s.xs.colwise().mean();
    s.xs.rowwise() -= s.mean.transpose();
    s.sd.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        double v = s.xs.col(j).squaredNorm() / static_cast<double>(n);
        if (v <= 0.0)
            fail("DesignError", "feature '" + d.feature_names[static_cast<size_t>(j)] +
                                    "' is constant; cannot standardize");
        s.sd[j] = std::sqrt(v);
        s.xs.col(j) /= s.sd[j];
    }
    return s;
}

double soft_threshold(double z, double g) {
    if (z > g) return z - g;
    if (z < -g) return z + g;
    return 0.0;
}

// One penalized fit at fixed lambda, warm-started from (b0, b). Returns the
// KKT violation of the solution; adds inner sweeps to *sweeps. The sweep
// budget applies to this path point alone, not the whole path.
double lasso_fit_one(const Eigen::MatrixXd& xs, const std::vector<int>& y, double lambda,
                     double kkt_tol, int max_sweeps, double& b0, Eigen::VectorXd& b,
                     int* sweeps) {
    const int sweeps_at_entry = *sweeps;
    const Eigen::Index n = xs.rows(), p = xs.cols();
    const double dn = static_cast<double>(n);
    Eigen::VectorXd yv(n);
    for (Eigen::Index i = 0; i < n; ++i) yv[i] = static_cast<double>(y[static_cast<size_t>(i)]);

    double viol = 0.0;
    for (int outer = 0; outer < 200; ++outer) {
        Eigen::VectorXd eta = (xs * b).array() + b0;
        Eigen::VectorXd mu(n), w(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            mu[i] = logistic(eta[i]);
            w[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-5);
        }
        // KKT on the exact logistic gradient.
        Eigen::VectorXd grad = xs.transpose() * (mu - yv) / dn;
        viol = std::fabs((mu - yv).sum() / dn);
        for (Eigen::Index j = 0; j < p; ++j) {
            double v = b[j] != 0.0 ? std::fabs(grad[j] + lambda * (b[j] > 0 ? 1.0 : -1.0))
                                   : std::max(0.0, std::fabs(grad[j]) - lambda);
            viol = std::max(viol, v);
        }
        if (viol <= kkt_tol) return viol;
        if (*sweeps - sweeps_at_entry >= max_sweeps)
            fail("NonConvergence", "lasso exceeded max sweeps; KKT violation " +
                                       std::to_string(viol));

        // Quadratic approximation at the current point, then coordinate
        // descent to (near) convergence on it.
        Eigen::VectorXd z = eta + (yv - mu).cwiseQuotient(w);
        Eigen::VectorXd r = z - eta; // working residual
        const double wsum = w.sum();
        Eigen::VectorXd xwx(p);
        for (Eigen::Index j = 0; j < p; ++j) xwx[j] = xs.col(j).cwiseProduct(w).dot(xs.col(j)) / dn;
        for (int inner = 0; inner < 1000; ++inner) {
            ++*sweeps;
            double max_delta = 0.0;
            for (Eigen::Index j = 0; j < p; ++j) {
                double old = b[j];
                double rho = xs.col(j).cwiseProduct(w).dot(r) / dn + xwx[j] * old;
                double neu = soft_threshold(rho, lambda) / xwx[j];
                if (neu != old) {
                    r -= (neu - old) * xs.col(j);
                    b[j] = neu;
                    max_delta = std::max(max_delta, std::fabs(neu - old));
                }
            }
            double db0 = w.dot(r) / wsum;
            if (db0 != 0.0) {
                b0 += db0;
                r.array() -= db0;
                max_delta = std::max(max_delta, std::fabs(db0));
            }
            if (max_delta < 1e-11) break;
            if (*sweeps - sweeps_at_entry >= max_sweeps) break;
        }
    }
    return viol;
}

std::vector<double> default_path(const Eigen::MatrixXd& xs, const std::vector<int>& y,
                                 const LassoConfig& cfg) {
    const Eigen::Index n = xs.rows();
    double ybar = 0.0;
    for (int yi : y) ybar += yi;
    ybar /= static_cast<double>(n);
    Eigen::VectorXd resid(n);
    for (Eigen::Index i = 0; i < n; ++i)
        resid[i] = static_cast<double>(y[static_cast<size_t>(i)]) - ybar;
    double lambda_max = (xs.transpose() * resid / static_cast<double>(n))
                            .lpNorm<Eigen::Infinity>();
    std::vector<double> out;
    out.reserve(static_cast<size_t>(cfg.path_length));
    for (int k = 0; k < cfg.path_length; ++k) {
        double f = cfg.path_length == 1
                       ? 1.0
                       : std::pow(cfg.lambda_min_ratio,
                                  static_cast<double>(k) /
                                      static_cast<double>(cfg.path_length - 1));
        out.push_back(lambda_max * f);
    }
    return out;
}

LassoPath lasso_path_impl(const DesignMatrix& d, const LassoConfig& cfg,
                          const std::vector<double>* lambdas) {
    validate_design(d);
    Standardized s = standardize(d);
    LassoPath path;
    path.lambdas = lambdas ? *lambdas : default_path(s.xs, d.y, cfg);

    double ybar = 0.0;
    for (int yi : d.y) ybar += yi;
    ybar /= static_cast<double>(d.n());
    double b0 = logit(ybar);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d.p()));
    int sweeps = 0;

    for (double lambda : path.lambdas) {
        int before = sweeps;
        double viol = lasso_fit_one(s.xs, d.y, lambda, cfg.kkt_tol, cfg.max_sweeps, b0, b,
                                    &sweeps);
        LassoSolution sol;
        sol.lambda = lambda;
        sol.kkt_violation = viol;
        sol.sweeps = sweeps - before;
        sol.coef.resize(d.p() + 1);
        double intercept = b0;
        for (Eigen::Index j = 0; j < b.size(); ++j) {
            double orig = b[j] / s.sd[j];
            sol.coef[static_cast<size_t>(j) + 1] = orig;
            intercept -= orig * s.mean[j];
            if (b[j] != 0.0) sol.support.push_back(static_cast<int>(j));
        }
        sol.coef[0] = intercept;
        path.solutions.push_back(std::move(sol));
    }
    return path;
}

} // namespace

LassoPath lasso_logistic(const DesignMatrix& d, const LassoConfig& cfg,
                         const std::vector<double>* lambdas) {
    return lasso_path_impl(d, cfg, lambdas);
}

size_t cv_lasso_best(const DesignMatrix& d, const LassoConfig& cfg, uint64_t seed) {
    validate_design(d);
    if (cfg.cv_folds < 2) fail("ConfigError", "cv_folds must be >= 2");

    // Shared lambda sequence from the full data.
    Standardized s = standardize(d);
    std::vector<double> lambdas = default_path(s.xs, d.y, cfg);

    // Stratified fold assignment: shuffle each class, deal round-robin.
    Rng rng = Rng::from(seed, stream::kFolds, 0);
    std::vector<size_t> pos, neg;
    for (size_t i = 0; i < d.n(); ++i) (d.y[i] ? pos : neg).push_back(i);
    auto shuffle = [&](std::vector<size_t>& v) {
        for (size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1],
                      v[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    };
    shuffle(pos);
    shuffle(neg);
    std::vector<int> fold(d.n(), 0);
    for (size_t k = 0; k < pos.size(); ++k) fold[pos[k]] = static_cast<int>(k) % cfg.cv_folds;
    for (size_t k = 0; k < neg.size(); ++k) fold[neg[k]] = static_cast<int>(k) % cfg.cv_folds;

    std::vector<double> deviance(lambdas.size(), 0.0);
    for (int f = 0; f < cfg.cv_folds; ++f) {
        DesignMatrix train;
        train.feature_names = d.feature_names;
        std::vector<size_t> held;
        for (size_t i = 0; i < d.n(); ++i) {
            if (fold[i] == f) {
                held.push_back(i);
            } else {
                train.row_ids.push_back(d.row_ids[i]);
                train.x.push_back(d.x[i]);
                train.y.push_back(d.y[i]);
            }
        }
        if (held.empty()) continue;
        LassoPath path = lasso_path_impl(train, cfg, &lambdas);
        for (size_t k = 0; k < lambdas.size(); ++k) {
            const std::vector<double>& coef = path.solutions[k].coef;
            for (size_t i : held) {
                double eta = coef[0];
                for (size_t j = 0; j < d.p(); ++j) eta += coef[j + 1] * d.x[i][j];
                double ll = d.y[i] * eta -
                            (eta > 0 ? eta + std::log1p(std::exp(-eta))
                                     : std::log1p(std::exp(eta)));
                deviance[k] -= 2.0 * ll;
            }
        }
    }

    size_t best = 0;
    for (size_t k = 1; k < deviance.size(); ++k)
        if (deviance[k] < deviance[best]) best = k;
    return best;
}

} // namespace cohort
