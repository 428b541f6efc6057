#include "cohort/robustness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "cohort/error.hpp"

namespace cohort {

ExternalEventResult external_event_analysis(const CohortDataset& ds, int topic_id,
                                            Date fixed_date, const TemporalConfig& cfg) {
    // The date must fall inside at least two groups' upload spans, otherwise
    // realignment has nothing to compare.
    std::set<Group> in_span;
    bool any_span = false;
    for (size_t i = 0; i < ds.channels.size(); ++i) {
        auto uploads = ds.uploads_of(static_cast<int>(i));
        if (uploads.empty()) continue;
        any_span = true;
        if (uploads.front().ts.date().days <= fixed_date.days &&
            fixed_date.days <= uploads.back().ts.date().days)
            in_span.insert(ds.channels[i].group);
    }
    if (!any_span) fail("NoUploads", "dataset has no uploads to realign");
    if (in_span.empty())
        fail("EventOutsideSpan",
             "fixed date " + format_date(fixed_date) + " lies outside every channel's span");
    if (in_span.size() < 2)
        fail("DomainError", "fixed date " + format_date(fixed_date) +
                                " falls inside the span of only one group");

    ReferenceEvent anchor{EventKind::External, fixed_date, EventPrecision::Exact};
    std::map<std::string, ReferenceEvent> events;
    for (const Channel& ch : ds.channels) events[ch.id] = anchor;

    TopicAlignment aligned = align_topic(ds, topic_id, cfg, events);
    const std::vector<AlignedSeries>* treatment = aligned.group(Group::AttemptedDuring);
    if (treatment == nullptr || treatment->size() < 2)
        fail("DomainError", "fewer than two treatment channels alignable to " +
                                format_date(fixed_date));
    std::vector<std::pair<Group, std::vector<AlignedSeries>>> controls;
    for (const auto& [g, series] : aligned.by_group) {
        if (g == Group::AttemptedDuring) continue;
        if (series.size() < 2)
            fail("DomainError", std::string("control group ") + group_token(g) +
                                    " has fewer than two channels alignable to " +
                                    format_date(fixed_date));
        controls.emplace_back(g, series);
    }

    ExternalEventResult out;
    out.topic_id = topic_id;
    out.fixed_date = fixed_date;
    out.skipped = aligned.skipped;
    out.tests = between_group_test(*treatment, controls, cfg.q_level);
    for (const BinTest& t : out.tests) out.rejections += t.rejected;
    return out;
}

double quantile_type7(std::vector<double> values, double p) {
    if (values.empty()) fail("DomainError", "quantile of an empty sample");
    if (!(p >= 0.0 && p <= 1.0)) fail("DomainError", "quantile level outside [0,1]");
    std::sort(values.begin(), values.end());
    double h = (static_cast<double>(values.size()) - 1.0) * p;
    size_t lo = static_cast<size_t>(std::floor(h));
    size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - std::floor(h)) * (values[hi] - values[lo]);
}

BoxStats box_stats(const std::vector<double>& values) {
    BoxStats b;
    b.n = static_cast<int>(values.size());
    b.q1 = quantile_type7(values, 0.25);
    b.median = quantile_type7(values, 0.5);
    b.q3 = quantile_type7(values, 0.75);
    b.min = *std::min_element(values.begin(), values.end());
    b.max = *std::max_element(values.begin(), values.end());
    double iqr = b.q3 - b.q1;
    double lo_fence = b.q1 - 1.5 * iqr, hi_fence = b.q3 + 1.5 * iqr;
    // Whiskers reach the most extreme observations inside the fences.
    b.whisker_lo = b.max;
    b.whisker_hi = b.min;
    for (double v : values) {
        if (v >= lo_fence) b.whisker_lo = std::min(b.whisker_lo, v);
        if (v <= hi_fence) b.whisker_hi = std::max(b.whisker_hi, v);
    }
    return b;
}

std::vector<EngagementMetric> engagement_comparison(const CohortDataset& ds, double q) {
    // Channel-level aggregates per metric, grouped.
    struct PerGroup {
        std::vector<double> uploads, likes, comments, duration;
    };
    std::map<Group, PerGroup> agg;
    for (size_t i = 0; i < ds.channels.size(); ++i) {
        const Channel& ch = ds.channels[i];
        double n = 0.0, dur = 0.0;
        double likes = 0.0, comments = 0.0;
        bool any_likes = false, any_comments = false;
        for (const Upload& u : ds.uploads_of(static_cast<int>(i))) {
            if (u.narrative) continue; // disclosure videos stay out of statistics
            n += 1.0;
            dur += u.duration_s;
            if (u.likes) { likes += static_cast<double>(*u.likes); any_likes = true; }
            if (u.comments) { comments += static_cast<double>(*u.comments); any_comments = true; }
        }
        PerGroup& pg = agg[ch.group];
        pg.uploads.push_back(n);
        if (n > 0.0) pg.duration.push_back(dur / n);
        if (any_likes) pg.likes.push_back(likes);
        if (any_comments) pg.comments.push_back(comments);
    }

    auto build = [&](const std::string& name,
                     const std::vector<double> PerGroup::*field) {
        EngagementMetric m;
        m.metric = name;
        size_t total = 0;
        for (const auto& [g, pg] : agg) total += (pg.*field).size();
        if (total == 0) {
            m.skipped = true;
            m.notice = "metric missing for every channel";
            return m;
        }
        for (Group g : all_groups()) {
            auto it = agg.find(g);
            if (it == agg.end() || (it->second.*field).empty()) continue;
            m.boxes.emplace_back(g, box_stats(it->second.*field));
        }
        std::vector<Group> gs = all_groups();
        std::vector<double> ps;
        std::vector<size_t> with_result;
        for (size_t a = 0; a < gs.size(); ++a) {
            for (size_t b = a + 1; b < gs.size(); ++b) {
                GroupPairTest pt;
                pt.a = gs[a];
                pt.b = gs[b];
                auto ia = agg.find(gs[a]), ib = agg.find(gs[b]);
                if (ia != agg.end() && ib != agg.end()) {
                    const auto& va = ia->second.*field;
                    const auto& vb = ib->second.*field;
                    if (va.size() >= 2 && vb.size() >= 2) {
                        try {
                            pt.result = welch_t(va, vb);
                        } catch (const Error&) {
                            // degenerate cell: slot kept, family shrinks
                        }
                    }
                }
                if (pt.result) {
                    ps.push_back(pt.result->p_value);
                    with_result.push_back(m.tests.size());
                }
                m.tests.push_back(std::move(pt));
            }
        }
        if (!ps.empty()) {
            FdrResult fdr = bh_fdr(ps, q);
            for (size_t j = 0; j < with_result.size(); ++j) {
                m.tests[with_result[j]].result->p_adjusted = fdr.adjusted[j];
                m.tests[with_result[j]].rejected = fdr.rejected[j];
            }
        }
        return m;
    };

    std::vector<EngagementMetric> out;
    out.push_back(build("uploads", &PerGroup::uploads));
    out.push_back(build("likes", &PerGroup::likes));
    out.push_back(build("comments", &PerGroup::comments));
    out.push_back(build("duration", &PerGroup::duration));
    return out;
}

const char* interval_kind_token(IntervalKind k) {
    switch (k) {
        case IntervalKind::BeforeToAfter: return "before_to_after";
        case IntervalKind::BeforeToEvent: return "before_to_event";
        default: return "event_to_after";
    }
}

std::vector<IntervalReport> activity_gap_analysis(const CohortDataset& ds,
                                                  const std::vector<Group>& groups) {
    if (groups.empty()) fail("DomainError", "activity_gap_analysis needs at least one group");
    for (Group g : groups)
        if (g == Group::ControlMatches)
            fail("DomainError", std::string("group ") + group_token(g) +
                                    " has no loaded events to measure gaps around");

    // Per group, per interval kind: the defined day gaps.
    std::map<Group, std::array<std::vector<double>, 3>> gaps;
    for (size_t i = 0; i < ds.channels.size(); ++i) {
        const Channel& ch = ds.channels[i];
        if (std::find(groups.begin(), groups.end(), ch.group) == groups.end()) continue;
        if (!ch.event) continue; // no loaded event: nothing to anchor to
        int32_t event_day = ch.event->date.days;
        std::optional<int32_t> last_pre, first_post;
        for (const Upload& u : ds.uploads_of(static_cast<int>(i))) {
            if (!u.valid || u.narrative) continue;
            int32_t day = u.ts.date().days;
            if (day < event_day && (!last_pre || day > *last_pre)) last_pre = day;
            if (day > event_day && (!first_post || day < *first_post)) first_post = day;
        }
        auto& g3 = gaps[ch.group];
        if (last_pre && first_post)
            g3[0].push_back(static_cast<double>(*first_post - *last_pre));
        if (last_pre) g3[1].push_back(static_cast<double>(event_day - *last_pre));
        if (first_post) g3[2].push_back(static_cast<double>(*first_post - event_day));
    }

    std::vector<IntervalReport> out;
    for (int k = 0; k < 3; ++k) {
        IntervalReport rep;
        rep.kind = static_cast<IntervalKind>(k);
        std::vector<const std::vector<double>*> testable;
        for (Group g : groups) {
            auto it = gaps.find(g);
            if (it == gaps.end() || it->second[static_cast<size_t>(k)].empty()) continue;
            const std::vector<double>& v = it->second[static_cast<size_t>(k)];
            IntervalGroupStats s;
            s.group = g;
            s.n = static_cast<int>(v.size());
            s.mean = mean_of(v);
            s.median = quantile_type7(v, 0.5);
            s.sd = v.size() >= 2 ? std::sqrt(sample_variance(v)) : 0.0;
            s.min = *std::min_element(v.begin(), v.end());
            s.max = *std::max_element(v.begin(), v.end());
            rep.groups.push_back(s);
            if (v.size() >= 2) testable.push_back(&v);
        }
        if (testable.size() == 2) {
            try {
                rep.test = welch_t(*testable[0], *testable[1]);
            } catch (const Error&) {
                // degenerate variance: descriptives only
            }
        }
        out.push_back(std::move(rep));
    }
    return out;
}

CohortDataset apply_exclusion(const CohortDataset& ds, const std::vector<std::string>& exclusion) {
    std::set<std::string> drop(exclusion.begin(), exclusion.end());
    for (const std::string& id : drop)
        if (ds.channel_index(id) < 0)
            fail("UnknownChannel", "exclusion lists unknown channel '" + id + "'");

    CohortDataset out;
    out.topics = ds.topics;
    std::map<Group, int> before, after;
    for (const Channel& ch : ds.channels) {
        ++before[ch.group];
        if (drop.count(ch.id)) continue;
        ++after[ch.group];
        out.channels.push_back(ch);
    }
    for (const auto& [g, n] : before)
        if (n > 0 && after[g] == 0)
            fail("EmptyGroup", std::string("exclusion removes every ") + group_token(g) +
                                   " channel");
    for (const Upload& u : ds.uploads)
        if (!drop.count(u.channel_id)) out.uploads.push_back(u);
    out.finalize();
    return out;
}

namespace {

int sign_of(double x) { return x > 0.0 ? 1 : (x < 0.0 ? -1 : 0); }

} // namespace

SensitivityReport sensitivity_refit(const CohortDataset& ds,
                                    const std::vector<std::string>& exclusion,
                                    const SensitivityAnalyses& analyses,
                                    const std::vector<int>& topic_ids, const GlmmConfig& gcfg,
                                    const TemporalConfig& tcfg, bool parallel) {
    CohortDataset reduced = apply_exclusion(ds, exclusion);

    SensitivityReport rep;
    rep.excluded = exclusion;
    std::sort(rep.excluded.begin(), rep.excluded.end());

    std::vector<int> topics = topic_ids;
    if (topics.empty())
        for (const TopicMeta& t : ds.topics) topics.push_back(t.topic_id);

    if (analyses.glmm) {
        auto base_events = assign_all_events(ds);
        auto red_events = assign_all_events(reduced);
        TopicBatteryResult base = run_topic_battery(ds, topics, base_events, gcfg, parallel);
        TopicBatteryResult refit = run_topic_battery(reduced, topics, red_events, gcfg, parallel);

        std::map<int, const GlmmFit*> refit_of;
        for (const GlmmFit& f : refit.fits) refit_of[f.topic_id] = &f;
        int agree = 0, compared = 0;
        for (const GlmmFit& bf : base.fits) {
            auto it = refit_of.find(bf.topic_id);
            if (it == refit_of.end()) continue;
            const GlmmFit& rf = *it->second;
            for (size_t t = 0; t < bf.terms.size(); ++t) {
                int rt = rf.term(bf.terms[t]);
                if (rt < 0) continue;
                CoefficientDelta d;
                d.topic_id = bf.topic_id;
                d.term = bf.terms[t];
                d.baseline_coef = bf.estimates[t];
                d.refit_coef = rf.estimates[static_cast<size_t>(rt)];
                d.sign_agree = sign_of(d.baseline_coef) == sign_of(d.refit_coef);
                d.baseline_significant =
                    bf.p_adjusted[t] && *bf.p_adjusted[t] <= gcfg.q_level;
                d.refit_significant = rf.p_adjusted[static_cast<size_t>(rt)] &&
                                      *rf.p_adjusted[static_cast<size_t>(rt)] <= gcfg.q_level;
                ++compared;
                agree += d.sign_agree;
                rep.significance_flips += d.baseline_significant != d.refit_significant;
                rep.coefficients.push_back(std::move(d));
            }
        }
        rep.sign_agreement = compared > 0 ? static_cast<double>(agree) / compared : 1.0;
    }

    if (analyses.temporal) {
        auto base_events = assign_all_events(ds);
        auto red_events = assign_all_events(reduced);
        for (int topic : topics) {
            auto run_battery = [&](const CohortDataset& data,
                                   const std::map<std::string, ReferenceEvent>& events)
                -> std::optional<std::vector<BinTest>> {
                TopicAlignment a = align_topic(data, topic, tcfg, events);
                const auto* treatment = a.group(Group::AttemptedDuring);
                if (treatment == nullptr || treatment->size() < 2) return std::nullopt;
                std::vector<std::pair<Group, std::vector<AlignedSeries>>> controls;
                for (const auto& [g, series] : a.by_group) {
                    if (g == Group::AttemptedDuring) continue;
                    if (series.size() < 2) return std::nullopt;
                    controls.emplace_back(g, series);
                }
                return between_group_test(*treatment, controls, tcfg.q_level);
            };
            auto base = run_battery(ds, base_events);
            auto refit = run_battery(reduced, red_events);
            if (!base || !refit || base->size() != refit->size()) continue;
            for (size_t i = 0; i < base->size(); ++i) {
                ++rep.temporal_cells_compared;
                if ((*base)[i].rejected != (*refit)[i].rejected) {
                    TemporalDelta d;
                    d.topic_id = topic;
                    d.bin_index = (*base)[i].bin_index;
                    d.control = (*base)[i].control;
                    d.baseline_rejected = (*base)[i].rejected;
                    d.refit_rejected = (*refit)[i].rejected;
                    rep.temporal_flips.push_back(d);
                }
            }
        }
    }
    return rep;
}

} // namespace cohort
