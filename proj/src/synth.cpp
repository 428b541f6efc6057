#include "cohort/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "cohort/dates.hpp"
#include "cohort/error.hpp"
#include "cohort/parallel.hpp"
#include "cohort/rng.hpp"
#include "cohort/special.hpp"

namespace cohort {

namespace {

constexpr int kNonReference = kNumGroups - 1;

std::string channel_name(int group_idx, int within) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%d_%04d", group_idx, within);
    return buf;
}

// Per-topic truth vector in design order: intercept, time, group mains,
// group x time interactions. A selection-signal injection (pre-event logit
// shift for the treatment group only) folds into this layout exactly:
// raising the reference group's pre-event mean by e equals
// {b0+e, time-e, groups-e, interactions+e}.
std::vector<double> topic_beta(const SynthConfig& cfg, int topic) {
    std::vector<double> b;
    b.push_back(cfg.beta0);
    b.push_back(cfg.beta_time);
    for (int g = 0; g < kNonReference; ++g) b.push_back(cfg.beta_group[g]);
    for (int g = 0; g < kNonReference; ++g) b.push_back(cfg.beta_group_time[g]);
    bool informative = std::find(cfg.informative_topics.begin(), cfg.informative_topics.end(),
                                 topic) != cfg.informative_topics.end();
    if (informative && cfg.informative_effect != 0.0) {
        double e = cfg.informative_effect;
        b[0] += e;
        b[1] -= e;
        for (int g = 0; g < kNonReference; ++g) {
            b[2 + g] -= e;
            b[2 + kNonReference + g] += e;
        }
    }
    return b;
}

struct ChannelPlan {
    Channel channel;
    std::vector<Upload> uploads; // topic_probs sized, filled later
    double intercept = 0.0;
    Date anchor;      // generation-time event (real or midpoint)
    double age_z = 0.0;
    bool male = false, minority = false;
};

// Same lower-median rule the temporal module applies to valid uploads.
Date generation_midpoint(const std::vector<Upload>& uploads) {
    std::vector<int32_t> dates;
    for (const Upload& u : uploads)
        if (u.valid) dates.push_back(u.ts.date().days);
    std::sort(dates.begin(), dates.end());
    dates.erase(std::unique(dates.begin(), dates.end()), dates.end());
    if (dates.empty()) fail("NoUploads", "synthetic channel generated without valid uploads");
    return Date{dates[(dates.size() - 1) / 2]};
}

} // namespace

SynthConfig inject_selection_signal(SynthConfig cfg, std::vector<int> informative_topics,
                                    double effect_size) {
    for (int t : informative_topics)
        if (t < 0 || t >= cfg.n_topics)
            fail("ConfigError",
                 "informative topic " + std::to_string(t) + " outside 0.." +
                     std::to_string(cfg.n_topics - 1));
    cfg.informative_topics = std::move(informative_topics);
    cfg.informative_effect = effect_size;
    return cfg;
}

SynthResult generate_cohort(const SynthConfig& cfg, uint64_t seed) {
    if (cfg.channels_per_group.size() != static_cast<size_t>(kNumGroups))
        fail("ConfigError", "channels_per_group must list all " + std::to_string(kNumGroups) +
                                " groups (0 allowed)");
    if (cfg.beta_group.size() != kNonReference || cfg.beta_group_time.size() != kNonReference)
        fail("ConfigError", "beta_group and beta_group_time need one entry per non-reference group");
    for (int g = 0; g < kNonReference; ++g)
        if (cfg.channels_per_group[static_cast<size_t>(g) + 1] == 0 &&
            (cfg.beta_group[g] != 0.0 || cfg.beta_group_time[g] != 0.0))
            fail("ConfigError", std::string("nonzero coefficient for absent group '") +
                                    group_token(static_cast<Group>(g + 1)) + "'");
    if (cfg.n_topics < 1) fail("ConfigError", "n_topics must be >= 1");
    if (cfg.phi <= 0.0) fail("ConfigError", "phi must be positive");
    if (cfg.sigma2 < 0.0) fail("ConfigError", "sigma2 must be nonnegative");
    if (cfg.uploads_per_channel_mean <= 0.0 || cfg.uploads_per_channel_min < 2)
        fail("ConfigError", "upload counts must allow at least two uploads per channel");
    for (int t : cfg.informative_topics)
        if (t < 0 || t >= cfg.n_topics)
            fail("ConfigError", "informative topic outside the topic range");

    Date base;
    try {
        base = parse_date(cfg.base_date);
    } catch (const Error& e) {
        fail("ConfigError", "base_date: " + e.message());
    }

    int total_channels = 0;
    for (int n : cfg.channels_per_group) {
        if (n < 0) fail("ConfigError", "negative channel count");
        total_channels += n;
    }
    if (total_channels == 0) fail("ConfigError", "empty cohort");

    // Truth coefficients are shared across channels; build once.
    GroundTruth truth;
    truth.sigma2 = cfg.sigma2;
    truth.phi = cfg.phi;
    truth.seed = seed;
    truth.informative_topics = cfg.informative_topics;
    truth.beta_names = {"(intercept)", "time"};
    for (int g = 1; g < kNumGroups; ++g)
        truth.beta_names.push_back(std::string("group_") + group_token(static_cast<Group>(g)));
    for (int g = 1; g < kNumGroups; ++g)
        truth.beta_names.push_back(std::string("group_") + group_token(static_cast<Group>(g)) +
                                   ":time");
    for (int t = 0; t < cfg.n_topics; ++t) truth.beta.push_back(topic_beta(cfg, t));

    // Flatten (group, within) pairs so channels can generate in parallel.
    std::vector<std::pair<int, int>> slots;
    for (int g = 0; g < kNumGroups; ++g)
        for (int c = 0; c < cfg.channels_per_group[static_cast<size_t>(g)]; ++c)
            slots.emplace_back(g, c);

    std::vector<ChannelPlan> plans(slots.size());
    parallel_for(slots.size(), true, [&](size_t idx) {
        auto [g, within] = slots[idx];
        Group group = static_cast<Group>(g);
        ChannelPlan& plan = plans[idx];

        Rng demo = Rng::from(seed, stream::kDemographics, idx);
        Channel& ch = plan.channel;
        ch.id = channel_name(g, within);
        ch.group = group;
        double age_mean = 36.0;
        if (group == Group::AttemptedDuring) age_mean += cfg.confounding_strength * 8.0;
        int age = static_cast<int>(std::lround(demo.normal(age_mean, 8.0)));
        ch.age = std::clamp(age, 18, 80);
        double gu = demo.next_double();
        ch.gender = gu < 0.55 ? Gender::Female : (gu < 0.95 ? Gender::Male : Gender::Other);
        ch.minority = demo.next_double() < 0.2;
        ch.follower_count = static_cast<long long>(std::lround(std::exp(demo.normal(8.0, 1.5))));
        plan.age_z = (static_cast<double>(*ch.age) - 36.0) / 8.0;
        plan.male = ch.gender == Gender::Male;
        plan.minority = *ch.minority;

        // Upload schedule: start jittered off the base date, then
        // exponential day gaps (weekly-ish vlogging).
        Rng up = Rng::from(seed, stream::kUploadTimes, idx);
        int n_uploads = static_cast<int>(
            std::max<int64_t>(cfg.uploads_per_channel_min, up.poisson(cfg.uploads_per_channel_mean)));
        double day0 = static_cast<double>(base.days) +
                      static_cast<double>(up.uniform_int(0, std::max(0, cfg.span_start_jitter_days)));
        double day = day0;
        for (int u = 0; u < n_uploads; ++u) {
            Upload upl;
            char buf[48];
            std::snprintf(buf, sizeof buf, "%s_u%04d", ch.id.c_str(), u);
            upl.id = buf;
            upl.channel_id = ch.id;
            upl.ts = Timestamp{static_cast<int64_t>(std::llround(day * 86400.0)) + 43200};
            upl.duration_s = 60.0 + up.exponential(300.0);
            upl.views = static_cast<long long>(std::lround(std::exp(up.normal(6.0, 1.2))));
            upl.likes = static_cast<long long>(*upl.views * up.uniform(0.01, 0.08));
            upl.comments = static_cast<long long>(*upl.views * up.uniform(0.001, 0.01));
            upl.valid = up.next_double() >= cfg.invalid_fraction;
            upl.topic_probs.assign(static_cast<size_t>(cfg.n_topics), 0.0);
            plan.uploads.push_back(std::move(upl));
            day += up.exponential(cfg.upload_gap_mean_days);
        }

        // Reference event. Real events land strictly inside the upload span
        // for the two anchored groups; the attempted-before group's attempt
        // predates its uploads; the matched controls get no loaded event and
        // anchor to their upload midpoint, as the analysis will.
        Rng ev = Rng::from(seed, stream::kEvents, idx);
        Date first = plan.uploads.front().ts.date();
        Date last = plan.uploads.back().ts.date();
        if (group == Group::AttemptedDuring || group == Group::ControlMajorLifeEvent) {
            double frac = ev.uniform(0.3, 0.7);
            Date when{first.days +
                      static_cast<int32_t>(std::lround(frac * (last.days - first.days)))};
            EventKind kind =
                group == Group::AttemptedDuring ? EventKind::Attempt : EventKind::MajorLifeEvent;
            ch.event = ReferenceEvent{kind, when, EventPrecision::Exact};
            plan.anchor = when;
            // Disclosure upload: first upload on/after the event, sometimes.
            if (ev.next_double() < cfg.narrative_fraction) {
                for (Upload& u : plan.uploads)
                    if (u.ts.date().days >= when.days) {
                        u.narrative = true;
                        break;
                    }
            }
        } else if (group == Group::AttemptedBefore) {
            Date when{first.days - static_cast<int32_t>(ev.uniform_int(30, 360))};
            ch.event = ReferenceEvent{EventKind::Attempt, when, EventPrecision::Exact};
            plan.anchor = generation_midpoint(plan.uploads);
        } else {
            plan.anchor = generation_midpoint(plan.uploads);
        }

        Rng ic = Rng::from(seed, stream::kIntercepts, idx);
        plan.intercept = cfg.sigma2 > 0.0 ? ic.normal(0.0, std::sqrt(cfg.sigma2)) : 0.0;

        // Topic responses: Beta(mu*phi, (1-mu)*phi) with the mixed-model
        // linear predictor. Uploads outer, topics inner; one stream per
        // channel keeps parallel generation schedule-independent.
        Rng resp = Rng::from(seed, stream::kResponses, idx);
        for (Upload& u : plan.uploads) {
            double time = u.ts.date().days >= plan.anchor.days ? 1.0 : 0.0;
            for (int t = 0; t < cfg.n_topics; ++t) {
                const std::vector<double>& b = truth.beta[static_cast<size_t>(t)];
                double eta = b[0] + b[1] * time;
                if (g > 0) {
                    eta += b[static_cast<size_t>(1 + g)];
                    eta += b[static_cast<size_t>(1 + kNonReference + g)] * time;
                }
                eta += cfg.beta_age * plan.age_z + cfg.beta_male * (plan.male ? 1.0 : 0.0) +
                       cfg.beta_minority * (plan.minority ? 1.0 : 0.0) + plan.intercept;
                double mu = logistic(eta);
                u.topic_probs[static_cast<size_t>(t)] =
                    resp.beta(mu * cfg.phi, (1.0 - mu) * cfg.phi);
            }
        }
    });

    SynthResult out;
    for (int t = 0; t < cfg.n_topics; ++t) {
        TopicMeta m;
        m.topic_id = t;
        m.label = "topic_" + std::to_string(t);
        m.expert_flag = std::find(cfg.informative_topics.begin(), cfg.informative_topics.end(),
                                  t) != cfg.informative_topics.end();
        out.dataset.topics.push_back(std::move(m));
    }
    for (ChannelPlan& plan : plans) {
        truth.random_intercepts[plan.channel.id] = plan.intercept;
        out.dataset.channels.push_back(std::move(plan.channel));
        for (Upload& u : plan.uploads) out.dataset.uploads.push_back(std::move(u));
    }
    out.dataset.finalize();
    out.truth = std::move(truth);
    return out;
}

std::string ground_truth_to_json(const GroundTruth& t) {
    nlohmann::json j;
    j["sigma2"] = t.sigma2;
    j["phi"] = t.phi;
    j["seed"] = t.seed;
    j["beta_names"] = t.beta_names;
    j["beta"] = t.beta;
    j["informative_topics"] = t.informative_topics;
    j["random_intercepts"] = t.random_intercepts;
    return j.dump(2) + "\n";
}

} // namespace cohort
