#include "cohort/matching.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include <json.hpp>

#include "cohort/design.hpp"
#include "cohort/error.hpp"
#include "cohort/logistic.hpp"
#include "cohort/parallel.hpp"
#include "cohort/special.hpp"

// httplib wants this before inclusion when TLS endpoints are used; plain
// http is all the tests exercise, so keep the dependency-free default.
#include <httplib.h>

namespace cohort {

MatchFeatures compute_match_features(const CohortDataset& ds, int channel_idx) {
    const Channel& ch = ds.channels.at(static_cast<size_t>(channel_idx));
    MatchFeatures f;
    f.channel_id = ch.id;
    f.gender = ch.gender;
    f.age = ch.age;
    f.follower_count = ch.follower_count;

    double dur_sum = 0.0;
    double views_sum = 0.0, likes_sum = 0.0, comments_sum = 0.0;
    int views_n = 0, likes_n = 0, comments_n = 0;
    for (const Upload& u : ds.uploads_of(channel_idx)) {
        ++f.upload_count;
        dur_sum += u.duration_s;
        if (u.views) { views_sum += static_cast<double>(*u.views); ++views_n; }
        if (u.likes) { likes_sum += static_cast<double>(*u.likes); ++likes_n; }
        if (u.comments) { comments_sum += static_cast<double>(*u.comments); ++comments_n; }
    }
    if (f.upload_count > 0) f.avg_duration = dur_sum / f.upload_count;
    if (views_n > 0) f.avg_views = views_sum / views_n;
    if (likes_n > 0) f.avg_likes = likes_sum / likes_n;
    if (comments_n > 0) f.avg_comments = comments_sum / comments_n;
    return f;
}

namespace {

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    if (n == 0) return 0.0;
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Numeric expansion shared by the propensity design: one row per channel.
struct FeatureTable {
    std::vector<std::string> names;
    std::vector<std::vector<double>> rows;
};

FeatureTable expand_features(const std::vector<const MatchFeatures*>& all) {
    // Pool medians for imputation of optional numerics.
    std::vector<double> ages, followers, views, likes, comments;
    std::set<std::string> categories;
    for (const auto* f : all) {
        if (f->age) ages.push_back(static_cast<double>(*f->age));
        if (f->follower_count) followers.push_back(static_cast<double>(*f->follower_count));
        if (f->avg_views) views.push_back(*f->avg_views);
        if (f->avg_likes) likes.push_back(*f->avg_likes);
        if (f->avg_comments) comments.push_back(*f->avg_comments);
        for (const auto& [cat, n] : f->category_histogram) {
            (void)n;
            categories.insert(cat);
        }
    }
    const double age_med = median_of(ages);
    const double fol_med = median_of(followers);
    const double views_med = median_of(views);
    const double likes_med = median_of(likes);
    const double comments_med = median_of(comments);

    FeatureTable t;
    t.names = {"age", "upload_count", "log_followers", "avg_duration",
               "avg_views", "avg_likes", "avg_comments",
               "gender=male", "gender=other", "gender=unknown"};
    for (const auto& cat : categories) t.names.push_back("category=" + cat);

    for (const auto* f : all) {
        std::vector<double> row;
        row.push_back(f->age ? static_cast<double>(*f->age) : age_med);
        row.push_back(static_cast<double>(f->upload_count));
        double fol = f->follower_count ? static_cast<double>(*f->follower_count) : fol_med;
        row.push_back(std::log1p(std::max(0.0, fol)));
        row.push_back(f->avg_duration);
        row.push_back(f->avg_views ? *f->avg_views : views_med);
        row.push_back(f->avg_likes ? *f->avg_likes : likes_med);
        row.push_back(f->avg_comments ? *f->avg_comments : comments_med);
        row.push_back(f->gender == Gender::Male ? 1.0 : 0.0);
        row.push_back(f->gender == Gender::Other ? 1.0 : 0.0);
        row.push_back(f->gender == Gender::Unknown ? 1.0 : 0.0);
        double total = 0.0;
        for (const auto& [cat, n] : f->category_histogram) {
            (void)cat;
            total += n;
        }
        for (const auto& cat : categories) {
            auto it = f->category_histogram.find(cat);
            double n = it == f->category_histogram.end() ? 0.0 : it->second;
            row.push_back(total > 0 ? n / total : 0.0);
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

} // namespace

PropensityResult estimate_propensity(const std::vector<MatchFeatures>& treated,
                                     const std::vector<MatchFeatures>& pool) {
    if (treated.empty() || pool.empty())
        fail("DesignError", "propensity model needs both treated and pool channels");

    std::vector<const MatchFeatures*> all;
    for (const auto& f : treated) all.push_back(&f);
    for (const auto& f : pool) all.push_back(&f);
    FeatureTable table = expand_features(all);

    DesignMatrix design;
    design.feature_names = table.names;
    for (size_t i = 0; i < all.size(); ++i) {
        design.row_ids.push_back(all[i]->channel_id);
        design.x.push_back(table.rows[i]);
        design.y.push_back(i < treated.size() ? 1 : 0);
    }
    // Constant columns carry no information and break the rank check.
    std::vector<size_t> keep;
    for (size_t j = 0; j < design.feature_names.size(); ++j) {
        double v0 = design.x[0][j];
        bool constant = true;
        for (const auto& row : design.x)
            if (row[j] != v0) { constant = false; break; }
        if (!constant) keep.push_back(j);
    }
    DesignMatrix pruned;
    pruned.row_ids = design.row_ids;
    pruned.y = design.y;
    for (size_t j : keep) pruned.feature_names.push_back(design.feature_names[j]);
    for (const auto& row : design.x) {
        std::vector<double> r;
        for (size_t j : keep) r.push_back(row[j]);
        pruned.x.push_back(std::move(r));
    }
    // With every feature constant the model degenerates to intercept-only and
    // each channel gets the overall treatment rate; that is still a valid
    // propensity (KNN will see it as a uniform tie).

    PropensityResult out;
    std::vector<double> eta(pruned.n(), 0.0);
    try {
        LogisticFit fit = fit_logistic(pruned);
        for (size_t i = 0; i < pruned.n(); ++i) {
            double e = fit.coef[0];
            for (size_t j = 0; j < pruned.feature_names.size(); ++j)
                e += fit.coef[j + 1] * pruned.x[i][j];
            eta[i] = e;
        }
    } catch (const Error& err) {
        if (err.code() != "SeparationError" && err.code() != "RankDeficient") throw;
        // Perfectly separable designs still need usable scores; a lightly
        // penalized fit shrinks the offending coefficients back to finite
        // values.
        LassoConfig lcfg;
        lcfg.path_length = 20;
        LassoPath path = lasso_logistic(pruned, lcfg);
        const LassoSolution& sol = path.solutions.back(); // smallest lambda
        for (size_t i = 0; i < pruned.n(); ++i) {
            double e = sol.coef[0];
            for (size_t j = 0; j < pruned.feature_names.size(); ++j)
                e += sol.coef[j + 1] * pruned.x[i][j];
            eta[i] = e;
        }
        out.lasso_fallback = true;
    }
    for (size_t i = 0; i < pruned.n(); ++i)
        out.scores[pruned.row_ids[i]] = logistic(eta[i]);
    return out;
}

MatchSet knn_match(const std::vector<std::pair<std::string, double>>& treated_scores,
                   const std::vector<std::pair<std::string, double>>& pool_scores, int k,
                   std::optional<double> caliper) {
    if (k < 1) fail("ConfigError", "knn_match requires k >= 1");
    if (pool_scores.empty()) fail("DesignError", "knn_match requires a non-empty pool");

    MatchSet set;
    set.short_pool = pool_scores.size() < static_cast<size_t>(k);
    for (const auto& [tid, tscore] : treated_scores) {
        // Order candidates by |propensity gap|, ties by control id.
        std::vector<std::pair<double, const std::pair<std::string, double>*>> cand;
        for (const auto& p : pool_scores) {
            double d = std::fabs(p.second - tscore);
            if (caliper && d > *caliper) continue;
            cand.push_back({d, &p});
        }
        std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first < b.first;
            return a.second->first < b.second->first;
        });
        size_t take = std::min(cand.size(), static_cast<size_t>(k));
        if (take == 0) {
            set.unmatched.push_back(tid);
            continue;
        }
        for (size_t r = 0; r < take; ++r) {
            MatchEntry e;
            e.treatment_id = tid;
            e.control_id = cand[r].second->first;
            e.propensity_treatment = tscore;
            e.propensity_control = cand[r].second->second;
            e.knn_rank = static_cast<int>(r) + 1;
            set.entries.push_back(std::move(e));
        }
    }
    return set;
}

int StubScorer::score(const MatchFeatures& treatment, const MatchFeatures& control) {
    if (treatment.gender == control.gender && treatment.age && control.age &&
        std::abs(*treatment.age - *control.age) <= 3)
        return 5;
    return 2;
}

namespace {

nlohmann::json features_json(const MatchFeatures& f) {
    nlohmann::json j;
    j["channel_id"] = f.channel_id;
    j["gender"] = gender_token(f.gender);
    if (f.age) j["age"] = *f.age;
    j["upload_count"] = f.upload_count;
    if (f.follower_count) j["follower_count"] = *f.follower_count;
    j["avg_duration"] = f.avg_duration;
    if (f.avg_views) j["avg_views"] = *f.avg_views;
    if (f.avg_likes) j["avg_likes"] = *f.avg_likes;
    if (f.avg_comments) j["avg_comments"] = *f.avg_comments;
    if (!f.category_histogram.empty()) j["category_histogram"] = f.category_histogram;
    return j;
}

} // namespace

int HttpScorer::score(const MatchFeatures& treatment, const MatchFeatures& control) {
    // Split endpoint into host[:port] and path.
    std::string ep = cfg_.endpoint;
    std::string host = ep, path = "/";
    auto scheme = ep.find("://");
    std::string base = scheme == std::string::npos ? ep : ep.substr(scheme + 3);
    auto slash = base.find('/');
    if (slash != std::string::npos) {
        host = base.substr(0, slash);
        path = base.substr(slash);
    } else {
        host = base;
    }

    nlohmann::json req;
    req["treatment"] = features_json(treatment);
    req["control"] = features_json(control);
    const std::string body = req.dump();

    std::string last;
    for (int attempt = 0; attempt < std::max(1, cfg_.max_attempts); ++attempt) {
        httplib::Client cli(host);
        cli.set_connection_timeout(10, 0);
        cli.set_read_timeout(30, 0);
        httplib::Headers headers;
        if (!cfg_.auth_token.empty())
            headers.emplace("Authorization", "Bearer " + cfg_.auth_token);
        auto res = cli.Post(path, headers, body, "application/json");
        if (!res) {
            last = "connection failed";
            continue;
        }
        if (res->status != 200) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "http status %d", res->status);
            last = buf;
            continue;
        }
        auto parsed = nlohmann::json::parse(res->body, nullptr, false);
        if (parsed.is_discarded() || !parsed.contains("score") ||
            !parsed["score"].is_number_integer()) {
            last = "malformed response body";
            continue;
        }
        int s = parsed["score"].get<int>();
        if (s < 1 || s > 5) {
            last = "score outside 1..5";
            continue;
        }
        return s;
    }
    fail("ScorerError", "match scoring failed after " +
                            std::to_string(std::max(1, cfg_.max_attempts)) +
                            " attempts: " + last);
}

MatchSet refine_matches(const MatchSet& candidates,
                        const std::map<std::string, MatchFeatures>& features,
                        MatchScorer& scorer, const MatchConfig& cfg, bool parallel) {
    MatchSet out = candidates;

    // Score every pair; a scorer failure leaves that pair unscored rather
    // than aborting the batch.
    parallel_for(out.entries.size(), parallel, [&](size_t i) {
        MatchEntry& e = out.entries[i];
        auto ti = features.find(e.treatment_id);
        auto ci = features.find(e.control_id);
        if (ti == features.end() || ci == features.end()) return;
        try {
            e.refinement_score = scorer.score(ti->second, ci->second);
        } catch (const Error&) {
            e.refinement_score.reset();
        }
    });

    // Group by treatment, keep scores >= threshold, cap per treatment.
    std::map<std::string, std::vector<MatchEntry*>> by_treatment;
    for (auto& e : out.entries) {
        e.retained = false;
        by_treatment[e.treatment_id].push_back(&e);
    }
    std::set<std::string> unmatched(out.unmatched.begin(), out.unmatched.end());
    for (auto& [tid, entries] : by_treatment) {
        std::vector<MatchEntry*> eligible;
        for (auto* e : entries)
            if (e->refinement_score && *e->refinement_score >= cfg.refine_threshold)
                eligible.push_back(e);
        std::sort(eligible.begin(), eligible.end(), [](const MatchEntry* a, const MatchEntry* b) {
            if (*a->refinement_score != *b->refinement_score)
                return *a->refinement_score > *b->refinement_score;
            double da = std::fabs(a->propensity_treatment - a->propensity_control);
            double db = std::fabs(b->propensity_treatment - b->propensity_control);
            if (da != db) return da < db;
            return a->control_id < b->control_id;
        });
        size_t cap = static_cast<size_t>(std::max(1, cfg.max_retained_per_treatment));
        for (size_t i = 0; i < eligible.size() && i < cap; ++i) eligible[i]->retained = true;
        if (eligible.empty()) unmatched.insert(tid);
    }
    out.unmatched.assign(unmatched.begin(), unmatched.end());
    return out;
}

namespace {

// Mean/variance accumulation tolerant of weights (multiplicity counts).
struct Moments {
    double n = 0.0, mean = 0.0, m2 = 0.0;
    void add(double x, double w = 1.0) {
        // Weighted Welford update.
        n += w;
        double delta = x - mean;
        mean += (w / n) * delta;
        m2 += w * delta * (x - mean);
    }
    double var() const { return n > 1.0 ? m2 / (n - 1.0) : 0.0; }
};

std::optional<double> smd(const Moments& t, const Moments& c) {
    if (t.n < 1.0 || c.n < 1.0) return std::nullopt;
    double pooled = std::sqrt(0.5 * (t.var() + c.var()));
    if (pooled <= 0.0) return std::nullopt;
    return (t.mean - c.mean) / pooled;
}

} // namespace

std::vector<BalanceRow> balance_report(const std::vector<MatchFeatures>& treated,
                                       const std::vector<MatchFeatures>& pool,
                                       const MatchSet& matched) {
    std::vector<const MatchFeatures*> all;
    for (const auto& f : treated) all.push_back(&f);
    for (const auto& f : pool) all.push_back(&f);
    FeatureTable table = expand_features(all);

    std::map<std::string, size_t> row_of;
    for (size_t i = 0; i < all.size(); ++i) row_of[all[i]->channel_id] = i;

    // Retained control multiplicity.
    std::map<std::string, int> retained_count;
    for (const auto& e : matched.entries)
        if (e.retained) ++retained_count[e.control_id];

    std::vector<BalanceRow> rows;
    for (size_t j = 0; j < table.names.size(); ++j) {
        Moments mt, mc_before, mc_after;
        for (size_t i = 0; i < treated.size(); ++i) mt.add(table.rows[i][j]);
        for (size_t i = treated.size(); i < all.size(); ++i) mc_before.add(table.rows[i][j]);
        for (const auto& [cid, count] : retained_count) {
            auto it = row_of.find(cid);
            if (it != row_of.end())
                mc_after.add(table.rows[it->second][j], static_cast<double>(count));
        }
        BalanceRow r;
        r.feature = table.names[j];
        r.smd_before = smd(mt, mc_before);
        r.smd_after = smd(mt, mc_after);
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace cohort
