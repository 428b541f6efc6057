#include "cohort/beta_glmm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "cohort/dual.hpp"
#include "cohort/error.hpp"
#include "cohort/parallel.hpp"
#include "cohort/special.hpp"
#include "cohort/stats.hpp"

namespace cohort {

double boundary_adjust(double y, int n) {
    if (n < 1) fail("DomainError", "boundary_adjust needs n >= 1");
    if (!(y >= 0.0 && y <= 1.0)) fail("DomainError", "boundary_adjust input outside [0,1]");
    return (y * (n - 1) + 0.5) / n;
}

int GlmmFit::term(const std::string& name) const {
    for (size_t i = 0; i < terms.size(); ++i)
        if (terms[i] == name) return static_cast<int>(i);
    return -1;
}

std::vector<GlmmObservation> build_glmm_data(
    const CohortDataset& ds, int topic_id,
    const std::map<std::string, ReferenceEvent>& events) {
    std::vector<GlmmObservation> obs;
    for (size_t ci = 0; ci < ds.channels.size(); ++ci) {
        const Channel& ch = ds.channels[ci];
        auto ev = events.find(ch.id);
        if (ev == events.end()) continue; // no reference event: no aligned periods
        PrePostMeans m = pre_post_means(ds, static_cast<int>(ci), topic_id, ev->second);
        auto push = [&](double y, int time, int count) {
            GlmmObservation o;
            o.channel_id = ch.id;
            o.y = y;
            o.time = time;
            o.group = ch.group;
            o.age = ch.age;
            o.gender = ch.gender;
            o.minority = ch.minority;
            o.activity = std::log1p(static_cast<double>(count));
            obs.push_back(std::move(o));
        };
        if (m.mean_before) push(*m.mean_before, 0, m.n_before);
        if (m.mean_after) push(*m.mean_after, 1, m.n_after);
    }

    std::set<Group> groups;
    for (const GlmmObservation& o : obs) groups.insert(o.group);
    if (groups.size() < 2)
        fail("DesignError", "topic " + std::to_string(topic_id) + " has observations from " +
                                std::to_string(groups.size()) + " group(s); need >= 2");

    const int n = static_cast<int>(obs.size());
    for (GlmmObservation& o : obs)
        if (o.y == 0.0 || o.y == 1.0) o.y = boundary_adjust(o.y, n);
    return obs;
}

GlmmDesign build_glmm_design(const std::vector<GlmmObservation>& input) {
    if (input.empty()) fail("DesignError", "no observations");
    std::vector<GlmmObservation> obs = input;
    std::stable_sort(obs.begin(), obs.end(), [](const GlmmObservation& a,
                                                const GlmmObservation& b) {
        if (a.channel_id != b.channel_id) return a.channel_id < b.channel_id;
        return a.time < b.time;
    });

    GlmmDesign d;
    bool has_reference = false;
    std::set<Group> seen;
    for (const GlmmObservation& o : obs) {
        seen.insert(o.group);
        has_reference |= o.group == Group::AttemptedDuring;
    }
    if (!has_reference)
        fail("DesignError", "reference group attempted_during contributes no observations");
    std::vector<Group> contrasts;
    for (Group g : all_groups())
        if (g != Group::AttemptedDuring && seen.count(g)) contrasts.push_back(g);

    const Eigen::Index n = static_cast<Eigen::Index>(obs.size());

    // Covariates become columns only when they vary across rows.
    double age_mean = 0.0, age_sd = 0.0;
    {
        std::vector<double> ages;
        for (const GlmmObservation& o : obs)
            if (o.age) ages.push_back(static_cast<double>(*o.age));
        if (!ages.empty()) {
            age_mean = mean_of(ages);
            double ss = 0.0;
            for (double a : ages) ss += (a - age_mean) * (a - age_mean);
            age_sd = std::sqrt(ss / static_cast<double>(ages.size()));
        }
    }
    bool use_age = age_sd > 0.0;
    if (!use_age) d.dropped_covariates.push_back("age_z");

    auto varying = [&](auto&& get) {
        double first = get(obs.front());
        for (const GlmmObservation& o : obs)
            if (get(o) != first) return true;
        return false;
    };
    std::vector<Gender> gender_levels;
    for (Gender g : {Gender::Male, Gender::Other, Gender::Unknown}) {
        int count = 0;
        for (const GlmmObservation& o : obs) count += o.gender == g;
        if (count > 0 && count < static_cast<int>(obs.size())) gender_levels.push_back(g);
        else if (count > 0) d.dropped_covariates.push_back(std::string("gender_") + gender_token(g));
    }
    bool use_minority = varying([](const GlmmObservation& o) {
        return o.minority && *o.minority ? 1.0 : 0.0;
    });
    if (!use_minority) d.dropped_covariates.push_back("minority");

    double act_mean = 0.0, act_sd = 0.0;
    {
        std::vector<double> acts;
        for (const GlmmObservation& o : obs) acts.push_back(o.activity);
        act_mean = mean_of(acts);
        double ss = 0.0;
        for (double a : acts) ss += (a - act_mean) * (a - act_mean);
        act_sd = std::sqrt(ss / static_cast<double>(acts.size()));
    }
    bool use_activity = act_sd > 0.0;
    if (!use_activity) d.dropped_covariates.push_back("activity_z");

    d.terms.push_back("(intercept)");
    d.terms.push_back("time");
    for (Group g : contrasts) d.terms.push_back(std::string("group_") + group_token(g));
    for (Group g : contrasts) d.terms.push_back(std::string("group_") + group_token(g) + ":time");
    if (use_age) d.terms.push_back("age_z");
    for (Gender g : gender_levels) d.terms.push_back(std::string("gender_") + gender_token(g));
    if (use_minority) d.terms.push_back("minority");
    if (use_activity) d.terms.push_back("activity_z");

    d.x.resize(n, static_cast<Eigen::Index>(d.terms.size()));
    d.y.resize(n);
    d.channel_of.resize(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const GlmmObservation& o = obs[static_cast<size_t>(i)];
        if (!(o.y > 0.0 && o.y < 1.0))
            fail("DomainError", "observation for channel '" + o.channel_id +
                                    "' has y outside (0,1); boundary adjustment missing");
        if (d.channel_ids.empty() || d.channel_ids.back() != o.channel_id)
            d.channel_ids.push_back(o.channel_id);
        d.channel_of[static_cast<size_t>(i)] = static_cast<int>(d.channel_ids.size()) - 1;
        d.y[i] = o.y;
        Eigen::Index j = 0;
        d.x(i, j++) = 1.0;
        d.x(i, j++) = static_cast<double>(o.time);
        for (Group g : contrasts) d.x(i, j++) = o.group == g ? 1.0 : 0.0;
        for (Group g : contrasts)
            d.x(i, j++) = o.group == g ? static_cast<double>(o.time) : 0.0;
        if (use_age)
            d.x(i, j++) = o.age ? (static_cast<double>(*o.age) - age_mean) / age_sd : 0.0;
        for (Gender g : gender_levels) d.x(i, j++) = o.gender == g ? 1.0 : 0.0;
        if (use_minority) d.x(i, j++) = o.minority && *o.minority ? 1.0 : 0.0;
        if (use_activity) d.x(i, j++) = (o.activity - act_mean) / act_sd;
    }
    return d;
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Gauss-Hermite nodes/weights (weight e^{-t^2}) by Golub-Welsch on the
// Jacobi matrix; order 1 gives node 0 with weight sqrt(pi), i.e. Laplace.
void gauss_hermite(int order, std::vector<double>& nodes, std::vector<double>& weights) {
    if (order < 1) fail("ConfigError", "quadrature order must be >= 1");
    nodes.assign(static_cast<size_t>(order), 0.0);
    weights.assign(static_cast<size_t>(order), 0.0);
    const double sqrt_pi = 1.7724538509055160273;
    if (order == 1) {
        weights[0] = sqrt_pi;
        return;
    }
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(order, order);
    for (int i = 1; i < order; ++i) {
        double off = std::sqrt(static_cast<double>(i) / 2.0);
        jac(i, i - 1) = jac(i - 1, i) = off;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
    for (int k = 0; k < order; ++k) {
        nodes[static_cast<size_t>(k)] = es.eigenvalues()[k];
        double v0 = es.eigenvectors()(0, k);
        weights[static_cast<size_t>(k)] = sqrt_pi * v0 * v0;
    }
}

// Per-observation constants reused by every likelihood evaluation.
struct ObsCache {
    std::vector<double> log_y, log_1my, ystar;
    void build(const Eigen::VectorXd& y) {
        const size_t n = static_cast<size_t>(y.size());
        log_y.resize(n);
        log_1my.resize(n);
        ystar.resize(n);
        for (size_t i = 0; i < n; ++i) {
            log_y[i] = std::log(y[static_cast<Eigen::Index>(i)]);
            log_1my[i] = std::log1p(-y[static_cast<Eigen::Index>(i)]);
            ystar[i] = log_y[i] - log_1my[i];
        }
    }
};

struct ChannelRange {
    int begin = 0, end = 0;
};

std::vector<ChannelRange> channel_ranges(const GlmmDesign& d) {
    std::vector<ChannelRange> out(d.channel_ids.size());
    for (size_t i = 0; i < d.channel_of.size(); ++i) {
        auto& r = out[static_cast<size_t>(d.channel_of[i])];
        if (i == 0 || d.channel_of[i - 1] != d.channel_of[i]) r.begin = static_cast<int>(i);
        r.end = static_cast<int>(i) + 1;
    }
    return out;
}

template <class T>
T row_eta(const GlmmDesign& d, int i, const std::vector<T>& beta, const T& b) {
    T eta = b;
    for (Eigen::Index j = 0; j < d.x.cols(); ++j)
        eta += d.x(static_cast<Eigen::Index>(i), j) * beta[static_cast<size_t>(j)];
    return eta;
}

// Guards the mean against logistic saturation: at |eta| beyond ~700 the link
// underflows to an exact 0 or 1 and the digamma/lgamma terms blow up. The
// clamp only engages at absurd trial points (line search, bracket expansion);
// converged fits sit far inside the interval, so gradients stay exact.
constexpr double kMuEps = 1e-10;
inline double squeeze_mu(double mu) { return std::min(std::max(mu, kMuEps), 1.0 - kMuEps); }
inline Dual squeeze_mu(const Dual& mu) {
    if (mu.v < kMuEps) return Dual::constant(kMuEps, mu.n);
    if (mu.v > 1.0 - kMuEps) return Dual::constant(1.0 - kMuEps, mu.n);
    return mu;
}

template <class T>
T beta_logpdf(const ObsCache& c, int i, const T& mu, const T& phi) {
    using std::lgamma;
    T a = mu * phi;
    T b = (1.0 - mu) * phi;
    return lgamma(phi) - lgamma(a) - lgamma(b) + (a - 1.0) * c.log_y[static_cast<size_t>(i)] +
           (b - 1.0) * c.log_1my[static_cast<size_t>(i)];
}

// Joint log-density of one channel's observations and its random intercept.
template <class T>
T channel_h(const GlmmDesign& d, const ObsCache& c, const ChannelRange& r,
            const std::vector<T>& beta, const T& lambda, const T& phi, const T& b) {
    using std::exp;
    using std::log;
    T sigma2 = exp(lambda);
    T acc = -0.5 * (b * b) / sigma2 - 0.5 * (kLog2Pi + lambda);
    for (int i = r.begin; i < r.end; ++i) {
        T mu = squeeze_mu(logistic(row_eta(d, i, beta, b)));
        acc += beta_logpdf(c, i, mu, phi);
    }
    return acc;
}

// dh/db: the Beta score through the logit link minus the prior pull.
template <class T>
T channel_hp(const GlmmDesign& d, const ObsCache& c, const ChannelRange& r,
             const std::vector<T>& beta, const T& lambda, const T& phi, const T& b) {
    using std::exp;
    T acc = -b / exp(lambda);
    for (int i = r.begin; i < r.end; ++i) {
        T mu = squeeze_mu(logistic(row_eta(d, i, beta, b)));
        T mustar = digamma(mu * phi) - digamma((1.0 - mu) * phi);
        acc += phi * mu * (1.0 - mu) * (c.ystar[static_cast<size_t>(i)] - mustar);
    }
    return acc;
}

template <class T>
T channel_hpp(const GlmmDesign& d, const ObsCache& c, const ChannelRange& r,
              const std::vector<T>& beta, const T& lambda, const T& phi, const T& b) {
    using std::exp;
    T acc = -1.0 / exp(lambda);
    for (int i = r.begin; i < r.end; ++i) {
        T mu = squeeze_mu(logistic(row_eta(d, i, beta, b)));
        T v = mu * (1.0 - mu);
        T mustar = digamma(mu * phi) - digamma((1.0 - mu) * phi);
        T curv = trigamma(mu * phi) + trigamma((1.0 - mu) * phi);
        acc += phi * ((1.0 - 2.0 * mu) * v * (c.ystar[static_cast<size_t>(i)] - mustar) -
                      phi * v * v * curv);
    }
    return acc;
}

// Locates the mode of channel_h over b in plain doubles: expanding bracket on
// the (eventually decreasing) derivative, then safeguarded Newton.
double solve_mode(const GlmmDesign& d, const ObsCache& c, const ChannelRange& r,
                  const std::vector<double>& beta, double lambda, double phi) {
    auto hp = [&](double b) { return channel_hp(d, c, r, beta, lambda, phi, b); };
    auto hpp = [&](double b) { return channel_hpp(d, c, r, beta, lambda, phi, b); };

    double lo = 0.0, hi = 0.0;
    double f0 = hp(0.0);
    if (f0 == 0.0) return 0.0;
    double step = std::max(1.0, std::sqrt(std::exp(lambda)));
    if (f0 > 0.0) {
        lo = 0.0;
        hi = step;
        while (hp(hi) > 0.0) {
            lo = hi;
            hi *= 2.0;
            if (hi > 1e12) fail("NumericError", "random-effect mode bracket diverged");
        }
    } else {
        hi = 0.0;
        lo = -step;
        while (hp(lo) < 0.0) {
            hi = lo;
            lo *= 2.0;
            if (lo < -1e12) fail("NumericError", "random-effect mode bracket diverged");
        }
    }

    double b = 0.5 * (lo + hi);
    for (int iter = 0; iter < 200; ++iter) {
        double f = hp(b);
        if (std::fabs(f) < 1e-11) return b;
        if (f > 0.0) lo = b;
        else hi = b;
        double h2 = hpp(b);
        double bn = h2 < 0.0 ? b - f / h2 : b;
        if (!(bn > lo && bn < hi)) bn = 0.5 * (lo + hi);
        if (hi - lo < 1e-14 * std::max(1.0, std::fabs(b))) return b;
        b = bn;
    }
    return b;
}

// log integral of exp(h) over b for one channel, adaptive Gauss-Hermite at
// the supplied mode. Templated so the Dual pass differentiates the whole
// pipeline, including the mode via one Newton step at the root (exact
// implicit derivative; for doubles the step is just a free polish).
template <class T>
T channel_marginal(const GlmmDesign& d, const ObsCache& c, const ChannelRange& r,
                   const std::vector<T>& beta, const T& lambda, const T& phi, double bhat,
                   const std::vector<double>& nodes, const std::vector<double>& weights,
                   T b0) {
    using std::exp;
    using std::log;
    using std::sqrt;
    T hp = channel_hp(d, c, r, beta, lambda, phi, b0);
    T hpp = channel_hpp(d, c, r, beta, lambda, phi, b0);
    T b = b0 - hp / hpp;
    T hpp_at = channel_hpp(d, c, r, beta, lambda, phi, b);
    T shat = 1.0 / sqrt(-hpp_at);

    if (nodes.size() == 1) { // Laplace, exactly
        T h = channel_h(d, c, r, beta, lambda, phi, b);
        return h + 0.5 * kLog2Pi + log(shat);
    }
    const double sqrt2 = 1.4142135623730951;
    // Log-sum-exp over the quadrature terms, pivoted on the largest value.
    std::vector<T> g;
    g.reserve(nodes.size());
    double m = -1e308;
    for (size_t k = 0; k < nodes.size(); ++k) {
        T bk = b + sqrt2 * shat * nodes[k];
        T gk = channel_h(d, c, r, beta, lambda, phi, bk) + nodes[k] * nodes[k] +
               std::log(weights[k]);
        m = std::max(m, value_of(gk));
        g.push_back(std::move(gk));
    }
    T sum = g[0] - g[0]; // zero of the right scalar type
    for (T& gk : g) sum += exp(gk - m);
    (void)bhat;
    return log(sqrt2 * shat) + m + log(sum);
}

struct ThetaSplit {
    std::vector<double> beta;
    double lambda = 0.0, tau = 0.0;
};

ThetaSplit split_theta(const GlmmDesign& d, const Eigen::VectorXd& theta) {
    const size_t p = d.terms.size();
    if (static_cast<size_t>(theta.size()) != p + 2)
        fail("DomainError", "theta must have " + std::to_string(p + 2) + " entries");
    ThetaSplit s;
    s.beta.assign(theta.data(), theta.data() + p);
    s.lambda = theta[static_cast<Eigen::Index>(p)];
    s.tau = theta[static_cast<Eigen::Index>(p) + 1];
    return s;
}

} // namespace

double glmm_marginal_ll(const GlmmDesign& d, const Eigen::VectorXd& theta, int quad_order) {
    ThetaSplit th = split_theta(d, theta);
    ObsCache cache;
    cache.build(d.y);
    std::vector<double> nodes, weights;
    gauss_hermite(quad_order, nodes, weights);
    const double phi = std::exp(th.tau);

    double ll = 0.0;
    for (const ChannelRange& r : channel_ranges(d)) {
        double bhat = solve_mode(d, cache, r, th.beta, th.lambda, phi);
        ll += channel_marginal<double>(d, cache, r, th.beta, th.lambda, phi, bhat, nodes,
                                       weights, bhat);
    }
    return ll;
}

Eigen::VectorXd glmm_marginal_gradient(const GlmmDesign& d, const Eigen::VectorXd& theta,
                                       int quad_order, double* ll_out) {
    ThetaSplit th = split_theta(d, theta);
    const int p = static_cast<int>(d.terms.size());
    const int nd = p + 2;
    if (nd > Dual::kCap)
        fail("ConfigError", "model has " + std::to_string(nd) +
                                " parameters; dual capacity is " + std::to_string(Dual::kCap));

    ObsCache cache;
    cache.build(d.y);
    std::vector<double> nodes, weights;
    gauss_hermite(quad_order, nodes, weights);

    std::vector<Dual> beta_d;
    beta_d.reserve(static_cast<size_t>(p));
    for (int j = 0; j < p; ++j)
        beta_d.push_back(Dual::variable(th.beta[static_cast<size_t>(j)], nd, j));
    Dual lambda_d = Dual::variable(th.lambda, nd, p);
    Dual tau_d = Dual::variable(th.tau, nd, p + 1);
    Dual phi_d = exp(tau_d);
    const double phi = std::exp(th.tau);

    Dual total = Dual::constant(0.0, nd);
    for (const ChannelRange& r : channel_ranges(d)) {
        double bhat = solve_mode(d, cache, r, th.beta, th.lambda, phi);
        total += channel_marginal<Dual>(d, cache, r, beta_d, lambda_d, phi_d, bhat, nodes,
                                        weights, Dual::constant(bhat, nd));
    }
    if (ll_out) *ll_out = total.v;
    Eigen::VectorXd g(nd);
    for (int k = 0; k < nd; ++k) g[k] = total.d[static_cast<size_t>(k)];
    return g;
}

namespace {

void check_design_rank(const GlmmDesign& d) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.x);
    qr.setThreshold(1e-10);
    if (qr.rank() < d.x.cols()) {
        std::string names;
        for (Eigen::Index k = qr.rank(); k < d.x.cols(); ++k) {
            if (!names.empty()) names += ", ";
            names += d.terms[static_cast<size_t>(qr.colsPermutation().indices()[k])];
        }
        fail("RankDeficient", "fixed-effect design is rank deficient in: " + names);
    }
}

} // namespace

GlmmFit fit_beta_glmm(const GlmmDesign& d, const GlmmConfig& cfg) {
    check_design_rank(d);
    const int p = static_cast<int>(d.terms.size());
    const int nd = p + 2;
    const double lam_lo = std::log(cfg.sigma2_floor), lam_hi = std::log(1e4);
    const double tau_lo = std::log(1e-4), tau_hi = std::log(1e8);

    auto project = [&](Eigen::VectorXd v) {
        v[p] = std::clamp(v[p], lam_lo, lam_hi);
        v[p + 1] = std::clamp(v[p + 1], tau_lo, tau_hi);
        return v;
    };

    Eigen::VectorXd theta = Eigen::VectorXd::Zero(nd);
    theta[p] = std::log(cfg.start_sigma2);
    theta[p + 1] = std::log(cfg.start_phi);
    theta = project(theta);

    double ll = 0.0;
    Eigen::VectorXd grad = glmm_marginal_gradient(d, theta, cfg.quad_order, &ll);

    auto projected_grad_norm = [&](const Eigen::VectorXd& t, const Eigen::VectorXd& g) {
        double m = 0.0;
        for (int k = 0; k < nd; ++k) {
            double gk = g[k];
            if (k == p && ((t[k] <= lam_lo && gk < 0) || (t[k] >= lam_hi && gk > 0))) gk = 0.0;
            if (k == p + 1 && ((t[k] <= tau_lo && gk < 0) || (t[k] >= tau_hi && gk > 0)))
                gk = 0.0;
            m = std::max(m, std::fabs(gk));
        }
        return m;
    };

    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(nd, nd);
    GlmmFit fit;
    fit.topic_id = d.topic_id;
    fit.terms = d.terms;
    fit.dropped_covariates = d.dropped_covariates;

    int iter = 0;
    for (; iter < cfg.max_outer_iter; ++iter) {
        if (projected_grad_norm(theta, grad) < cfg.outer_tol) {
            fit.converged = true;
            break;
        }
        Eigen::VectorXd dir = H * grad; // ascent direction
        if (dir.dot(grad) <= 0.0) {     // curvature lost: restart from steepest
            H.setIdentity();
            dir = grad;
        }
        double alpha = 1.0;
        bool accepted = false;
        Eigen::VectorXd theta_new;
        double ll_new = ll;
        for (int h = 0; h < 50; ++h) {
            theta_new = project(theta + alpha * dir);
            Eigen::VectorXd delta = theta_new - theta;
            if (delta.lpNorm<Eigen::Infinity>() < 1e-15) break;
            ll_new = glmm_marginal_ll(d, theta_new, cfg.quad_order);
            if (std::isfinite(ll_new) && ll_new >= ll + 1e-4 * grad.dot(delta)) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            // Try plain gradient ascent before giving up on this iterate.
            bool moved = false;
            alpha = 1.0 / std::max(1.0, grad.lpNorm<Eigen::Infinity>());
            for (int h = 0; h < 60; ++h) {
                theta_new = project(theta + alpha * grad);
                if ((theta_new - theta).lpNorm<Eigen::Infinity>() < 1e-15) break;
                ll_new = glmm_marginal_ll(d, theta_new, cfg.quad_order);
                if (std::isfinite(ll_new) && ll_new > ll) {
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if (!moved) break; // no ascent left anywhere: stop and re-check below
            H.setIdentity();
        }

        Eigen::VectorXd grad_new = glmm_marginal_gradient(d, theta_new, cfg.quad_order);
        Eigen::VectorXd s = theta_new - theta;
        Eigen::VectorXd yv = grad - grad_new; // gradient of -ll increases
        double sy = s.dot(yv);
        if (sy > 1e-12 * s.norm() * yv.norm()) {
            Eigen::MatrixXd I = Eigen::MatrixXd::Identity(nd, nd);
            double rho = 1.0 / sy;
            H = (I - rho * s * yv.transpose()) * H * (I - rho * yv * s.transpose()) +
                rho * s * s.transpose();
        } else {
            H.setIdentity();
        }
        theta = theta_new;
        grad = grad_new;
        ll = glmm_marginal_ll(d, theta, cfg.quad_order);
    }
    fit.iterations = iter;
    // A stalled line search near the optimum means objective improvements have
    // dropped below evaluation noise; accept the iterate when the projected
    // gradient is within two orders of the target (relative convergence).
    if (!fit.converged && projected_grad_norm(theta, grad) < 100.0 * cfg.outer_tol)
        fit.converged = true;
    if (!fit.converged)
        fail("NonConvergence", "marginal-likelihood optimizer stopped after " +
                                   std::to_string(iter) + " iterations with gradient norm " +
                                   std::to_string(projected_grad_norm(theta, grad)));

    fit.log_likelihood = ll;
    fit.sigma2 = std::exp(theta[p]);
    fit.phi = std::exp(theta[p + 1]);
    fit.sigma2_boundary = theta[p] <= lam_lo + 1e-9;
    fit.estimates.assign(theta.data(), theta.data() + p);

    // Wald covariance from a finite-difference Hessian of the exact gradient.
    // The lambda coordinate is excluded at the boundary, where the quadratic
    // approximation does not hold.
    std::vector<int> keep;
    for (int k = 0; k < nd; ++k)
        if (!(k == p && fit.sigma2_boundary)) keep.push_back(k);
    Eigen::MatrixXd Hfd(nd, nd);
    for (int k = 0; k < nd; ++k) {
        double h = 1e-5 * std::max(1.0, std::fabs(theta[k]));
        Eigen::VectorXd tp = theta, tm = theta;
        tp[k] += h;
        tm[k] -= h;
        Eigen::VectorXd gp = glmm_marginal_gradient(d, tp, cfg.quad_order);
        Eigen::VectorXd gm = glmm_marginal_gradient(d, tm, cfg.quad_order);
        Hfd.col(k) = (gp - gm) / (2.0 * h);
    }
    Hfd = 0.5 * (Hfd + Hfd.transpose()).eval();
    Eigen::MatrixXd Hk(keep.size(), keep.size());
    for (size_t a = 0; a < keep.size(); ++a)
        for (size_t b = 0; b < keep.size(); ++b)
            Hk(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
                Hfd(keep[a], keep[b]);
    Eigen::MatrixXd cov = (-Hk).ldlt().solve(
        Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(keep.size()),
                                  static_cast<Eigen::Index>(keep.size())));
    std::vector<double> full_se(static_cast<size_t>(nd), 0.0);
    for (size_t a = 0; a < keep.size(); ++a)
        full_se[static_cast<size_t>(keep[a])] =
            std::sqrt(std::max(cov(static_cast<Eigen::Index>(a),
                                   static_cast<Eigen::Index>(a)),
                               0.0));
    for (int j = 0; j < p; ++j) {
        double se = full_se[static_cast<size_t>(j)];
        fit.se.push_back(se);
        double z = se > 0 ? fit.estimates[static_cast<size_t>(j)] / se : 0.0;
        fit.z.push_back(z);
        fit.p.push_back(normal_two_sided_p(z));
    }
    fit.p_adjusted.assign(static_cast<size_t>(p), std::nullopt);
    return fit;
}

BetaGlmFit fit_beta_glm(const GlmmDesign& d) {
    check_design_rank(d);
    const Eigen::Index n = d.x.rows(), p = d.x.cols();
    Eigen::VectorXd log_y(n), log_1my(n), ystar(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        log_y[i] = std::log(d.y[i]);
        log_1my[i] = std::log1p(-d.y[i]);
        ystar[i] = log_y[i] - log_1my[i];
    }

    // Plain-double analytic log-likelihood and score in (beta, tau = log phi).
    auto eval = [&](const Eigen::VectorXd& par, Eigen::VectorXd* grad) {
        Eigen::VectorXd beta = par.head(p);
        double phi = std::exp(par[p]);
        Eigen::VectorXd eta = d.x * beta;
        double ll = 0.0;
        if (grad) grad->setZero(p + 1);
        double dtau = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double mu = squeeze_mu(logistic(eta[i]));
            double a = mu * phi, b = (1.0 - mu) * phi;
            ll += std::lgamma(phi) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * log_y[i] +
                  (b - 1.0) * log_1my[i];
            if (grad) {
                double mustar = digamma(a) - digamma(b);
                double s = phi * mu * (1.0 - mu) * (ystar[i] - mustar);
                grad->head(p) += s * d.x.row(i).transpose();
                // d ll / d phi, then chain through tau = log phi.
                double dphi = digamma(phi) - mu * digamma(a) - (1.0 - mu) * digamma(b) +
                              mu * log_y[i] + (1.0 - mu) * log_1my[i];
                dtau += dphi * phi;
            }
        }
        if (grad) (*grad)[p] = dtau;
        return ll;
    };

    Eigen::VectorXd par = Eigen::VectorXd::Zero(p + 1);
    par[p] = std::log(10.0);
    Eigen::VectorXd grad(p + 1);
    double ll = eval(par, &grad);
    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(p + 1, p + 1);

    BetaGlmFit fit;
    fit.terms = d.terms;
    int iter = 0;
    for (; iter < 500; ++iter) {
        if (grad.lpNorm<Eigen::Infinity>() < 1e-8) {
            fit.converged = true;
            break;
        }
        Eigen::VectorXd dir = H * grad;
        if (dir.dot(grad) <= 0.0) {
            H.setIdentity();
            dir = grad;
        }
        double alpha = 1.0;
        bool ok = false;
        Eigen::VectorXd pn;
        double lln = ll;
        for (int h = 0; h < 60; ++h) {
            pn = par + alpha * dir;
            lln = eval(pn, nullptr);
            if (std::isfinite(lln) && lln >= ll + 1e-4 * alpha * grad.dot(dir)) {
                ok = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!ok) break;
        Eigen::VectorXd gn(p + 1);
        lln = eval(pn, &gn);
        Eigen::VectorXd s = pn - par, yv = grad - gn;
        double sy = s.dot(yv);
        if (sy > 1e-12 * s.norm() * yv.norm()) {
            Eigen::MatrixXd I = Eigen::MatrixXd::Identity(p + 1, p + 1);
            double rho = 1.0 / sy;
            H = (I - rho * s * yv.transpose()) * H * (I - rho * yv * s.transpose()) +
                rho * s * s.transpose();
        } else {
            H.setIdentity();
        }
        par = pn;
        grad = gn;
        ll = lln;
    }
    if (!fit.converged && grad.lpNorm<Eigen::Infinity>() < 1e-6) fit.converged = true;
    if (!fit.converged) fail("NonConvergence", "beta regression failed to converge");
    fit.iterations = iter;
    fit.coef.assign(par.data(), par.data() + p);
    fit.phi = std::exp(par[p]);
    fit.log_likelihood = ll;
    return fit;
}

const char* term_family(const std::string& term) {
    if (term == "(intercept)") return "intercept";
    if (term == "time") return "time";
    if (term.rfind("group_", 0) == 0)
        return term.find(":time") != std::string::npos ? "group_time" : "group";
    if (term == "age_z") return "age";
    if (term.rfind("gender_", 0) == 0) return "gender";
    if (term == "minority") return "minority";
    if (term == "activity_z") return "activity";
    return "other";
}

void apply_cross_topic_fdr(std::vector<GlmmFit>& fits, double q) {
    std::map<std::string, std::vector<std::pair<size_t, size_t>>> families;
    for (size_t f = 0; f < fits.size(); ++f)
        for (size_t t = 0; t < fits[f].terms.size(); ++t) {
            std::string fam = term_family(fits[f].terms[t]);
            if (fam == "intercept") continue;
            families[fam].emplace_back(f, t);
        }
    for (const auto& [fam, cells] : families) {
        std::vector<double> ps;
        ps.reserve(cells.size());
        for (const auto& [f, t] : cells) ps.push_back(fits[f].p[t]);
        FdrResult fdr = bh_fdr(ps, q);
        for (size_t k = 0; k < cells.size(); ++k)
            fits[cells[k].first].p_adjusted[cells[k].second] = fdr.adjusted[k];
    }
}

TopicBatteryResult run_topic_battery(const CohortDataset& ds, const std::vector<int>& topic_ids,
                                     const std::map<std::string, ReferenceEvent>& events,
                                     const GlmmConfig& cfg, bool parallel) {
    std::vector<int> topics = topic_ids;
    if (topics.empty())
        for (const TopicMeta& t : ds.topics) topics.push_back(t.topic_id);
    if (topics.empty()) fail("DesignError", "no topics to model");

    std::vector<std::optional<GlmmFit>> slots(topics.size());
    std::vector<std::string> errors(topics.size());
    parallel_for(topics.size(), parallel, [&](size_t k) {
        try {
            std::vector<GlmmObservation> obs = build_glmm_data(ds, topics[k], events);
            GlmmDesign design = build_glmm_design(obs);
            design.topic_id = topics[k];
            slots[k] = fit_beta_glmm(design, cfg);
        } catch (const Error& e) {
            errors[k] = e.code() + ": " + e.message();
        }
    });

    TopicBatteryResult out;
    for (size_t k = 0; k < topics.size(); ++k) {
        if (slots[k]) out.fits.push_back(std::move(*slots[k]));
        else out.failures.emplace_back(topics[k], errors[k]);
    }
    apply_cross_topic_fdr(out.fits, cfg.q_level);
    return out;
}

} // namespace cohort
