#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

#include "cohort/dates.hpp"
#include "cohort/error.hpp"
#include "cohort/temporal.hpp"

using namespace cohort;

namespace {

Timestamp noon(const std::string& date) {
    return parse_timestamp(date + "T12:00:00Z");
}

// One channel / one topic dataset with uploads at the given (date, value)
// points. Channel group defaults to AttemptedBefore so synthetic midpoints
// can be exercised; pass an event for the pass-through groups.
struct Builder {
    CohortDataset ds;
    int next_upload = 0;

    explicit Builder(Group g = Group::AttemptedBefore) {
        ds.topics.push_back({0, "topic-0", false});
        Channel c;
        c.id = "ch";
        c.group = g;
        ds.channels.push_back(c);
    }

    Builder& upload(const std::string& date, double value, bool valid = true,
                    bool narrative = false) {
        Upload u;
        u.id = "u" + std::to_string(next_upload++);
        u.channel_id = "ch";
        u.ts = noon(date);
        u.duration_s = 120.0;
        u.valid = valid;
        u.narrative = narrative;
        u.topic_probs = {value};
        ds.uploads.push_back(u);
        return *this;
    }

    CohortDataset done() {
        ds.finalize();
        return ds;
    }
};

ReferenceEvent exact_event(const std::string& date, EventKind kind = EventKind::Attempt) {
    ReferenceEvent ev;
    ev.kind = kind;
    ev.date = parse_date(date);
    ev.precision = EventPrecision::Exact;
    return ev;
}

} // namespace

TEST_CASE("bin labels skip zero and invert cleanly") {
    CHECK(bin_label(0) == -15);
    CHECK(bin_label(14) == -1);
    CHECK(bin_label(15) == 1);
    CHECK(bin_label(29) == 15);
    for (int slot = 0; slot < kBins; ++slot) CHECK(bin_slot(bin_label(slot)) == slot);
    CHECK_THROWS_AS(bin_slot(0), Error);
    CHECK_THROWS_AS(bin_slot(16), Error);
    CHECK_THROWS_AS(bin_slot(-16), Error);
}

TEST_CASE("synthetic midpoint at the (lower) median of unique upload dates") {
    SUBCASE("odd count: exact median") {
        CohortDataset ds = Builder()
                               .upload("2019-01-01", 0.1)
                               .upload("2019-02-01", 0.2)
                               .upload("2019-03-01", 0.3)
                               .done();
        ReferenceEvent ev = assign_reference_event(ds.channels[0], ds.uploads);
        CHECK(ev.kind == EventKind::SyntheticMidpoint);
        CHECK(format_date(ev.date) == "2019-02-01");
    }

    SUBCASE("even count: lower median") {
        CohortDataset ds =
            Builder().upload("2019-01-01", 0.1).upload("2019-03-01", 0.3).done();
        ReferenceEvent ev = assign_reference_event(ds.channels[0], ds.uploads);
        CHECK(format_date(ev.date) == "2019-01-01");
    }

    SUBCASE("duplicate dates collapse before the median is taken") {
        CohortDataset ds = Builder()
                               .upload("2019-01-01", 0.1)
                               .upload("2019-01-01", 0.2)
                               .upload("2019-01-01", 0.3)
                               .upload("2019-02-01", 0.1)
                               .upload("2019-03-01", 0.1)
                               .done();
        ReferenceEvent ev = assign_reference_event(ds.channels[0], ds.uploads);
        CHECK(format_date(ev.date) == "2019-02-01");
    }

    SUBCASE("invalid uploads excluded under ValidUploads policy, kept under AllUploads") {
        CohortDataset ds = Builder()
                               .upload("2019-01-01", 0.1)
                               .upload("2019-02-01", 0.2)
                               .upload("2019-06-01", 0.3, /*valid=*/false)
                               .done();
        ReferenceEvent v = assign_reference_event(ds.channels[0], ds.uploads,
                                                  MidpointPolicy::ValidUploads);
        CHECK(format_date(v.date) == "2019-01-01"); // lower median of {Jan, Feb}
        ReferenceEvent a = assign_reference_event(ds.channels[0], ds.uploads,
                                                  MidpointPolicy::AllUploads);
        CHECK(format_date(a.date) == "2019-02-01"); // median of {Jan, Feb, Jun}
    }

    SUBCASE("pass-through for loaded events") {
        Builder b(Group::AttemptedDuring);
        b.upload("2017-01-01", 0.1).upload("2017-09-01", 0.2);
        b.ds.channels[0].event = exact_event("2017-05-02");
        CohortDataset ds = b.done();
        ReferenceEvent ev = assign_reference_event(ds.channels[0], ds.uploads);
        CHECK(ev.kind == EventKind::Attempt);
        CHECK(format_date(ev.date) == "2017-05-02");
    }

    SUBCASE("missing event on a pass-through group is an error") {
        CohortDataset ds = Builder(Group::AttemptedDuring).upload("2019-01-01", 0.1).done();
        try {
            assign_reference_event(ds.channels[0], ds.uploads);
            FAIL("expected missing-event error");
        } catch (const Error& e) {
            CHECK(e.code() == "MissingReferenceEvent");
        }
    }

    SUBCASE("no usable uploads is an error") {
        CohortDataset ds = Builder().upload("2019-01-01", 0.1, /*valid=*/false).done();
        CHECK_THROWS_AS(
            assign_reference_event(ds.channels[0], ds.uploads, MidpointPolicy::ValidUploads),
            Error);
    }
}

TEST_CASE("align_channel interpolates weekly values between uploads") {
    SUBCASE("constant topic value stays constant") {
        CohortDataset ds = Builder()
                               .upload("2019-01-07", 0.2)
                               .upload("2019-02-25", 0.2)
                               .upload("2019-04-15", 0.2)
                               .done();
        WeeklySeries s = align_channel(ds, 0, 0, exact_event("2019-03-01"));
        CHECK(s.points.size() >= 10);
        for (auto [week, value] : s.points) CHECK(value == doctest::Approx(0.2).epsilon(1e-12));
        // Weeks are consecutive.
        for (size_t i = 1; i < s.points.size(); ++i)
            CHECK(s.points[i].first == s.points[i - 1].first + 1);
    }

    SUBCASE("hand-checked midpoint of a linear ramp") {
        // Event 2019-03-01. Uploads 14 days before (week -2) at 0.0 and
        // 14 days after (week +2) at 0.4; week 0 interpolates to 0.2.
        CohortDataset ds =
            Builder().upload("2019-02-15", 0.0).upload("2019-03-15", 0.4).done();
        WeeklySeries s = align_channel(ds, 0, 0, exact_event("2019-03-01"));
        REQUIRE(s.points.size() == 5); // weeks -2..+2
        CHECK(s.points.front().first == -2);
        CHECK(s.points.back().first == 2);
        CHECK(s.points[0].second == doctest::Approx(0.0));
        CHECK(s.points[2].second == doctest::Approx(0.2).epsilon(1e-12));
        CHECK(s.points[4].second == doctest::Approx(0.4));
    }

    SUBCASE("upload on the event date is dropped before interpolation") {
        CohortDataset ds = Builder()
                               .upload("2019-02-15", 0.0)
                               .upload("2019-03-01", 0.9) // event-date: must not bend the line
                               .upload("2019-03-15", 0.4)
                               .done();
        WeeklySeries s = align_channel(ds, 0, 0, exact_event("2019-03-01"));
        CHECK(s.points[2].second == doctest::Approx(0.2).epsilon(1e-12));
    }

    SUBCASE("same-week uploads are averaged before interpolation") {
        CohortDataset ds = Builder()
                               .upload("2019-02-15", 0.1)
                               .upload("2019-02-16", 0.3) // same 7-day bucket as above
                               .upload("2019-03-15", 0.5)
                               .done();
        WeeklySeries s = align_channel(ds, 0, 0, exact_event("2019-03-01"));
        CHECK(s.points.front().second == doctest::Approx(0.2).epsilon(1e-12));
    }

    SUBCASE("uploads outside the window are excluded") {
        CohortDataset ds = Builder()
                               .upload("2015-01-01", 0.9) // far outside 18 months
                               .upload("2019-02-15", 0.2)
                               .upload("2019-03-15", 0.2)
                               .done();
        WeeklySeries s = align_channel(ds, 0, 0, exact_event("2019-03-01"));
        for (auto [week, value] : s.points) CHECK(value == doctest::Approx(0.2));
    }

    SUBCASE("fewer than two qualifying distinct dates is undersampled") {
        CohortDataset ds = Builder().upload("2019-02-15", 0.2).done();
        try {
            align_channel(ds, 0, 0, exact_event("2019-03-01"));
            FAIL("expected undersampled error");
        } catch (const Error& e) {
            CHECK(e.code() == "Undersampled");
        }
    }

    SUBCASE("event far outside the upload span is an error") {
        CohortDataset ds =
            Builder().upload("2019-02-15", 0.2).upload("2019-03-15", 0.3).done();
        CHECK_THROWS_AS(align_channel(ds, 0, 0, exact_event("2024-01-01")), Error);
    }
}

TEST_CASE("resample maps each side onto 15 slots over its own span") {
    SUBCASE("20 pre and 10 post weekly points give exactly 15 + 15") {
        WeeklySeries s;
        s.channel_id = "ch";
        for (int w = -20; w <= 9; ++w)
            if (w != 0) s.points.push_back({w, 0.5});
        // include week 0 as post-side opener
        s.points.insert(s.points.begin() + 20, {0, 0.5});
        AlignedSeries a = resample(s);
        CHECK(a.pre.size() == 15);
        CHECK(a.post.size() == 15);
        for (double v : a.pre) CHECK(v == doctest::Approx(0.5));
        for (double v : a.post) CHECK(v == doctest::Approx(0.5));
    }

    SUBCASE("constant series fills all 30 bins with the constant") {
        WeeklySeries s;
        for (int w = -6; w <= 4; ++w) s.points.push_back({w, 0.3});
        AlignedSeries a = resample(s);
        for (int slot = 0; slot < kBins; ++slot)
            CHECK(a.at_slot(slot) == doctest::Approx(0.3).epsilon(1e-12));
    }

    SUBCASE("linear pre segment resamples to an equally spaced line") {
        WeeklySeries s;
        // Pre side: weeks -8..-1 climbing 0 -> 1; post side constant.
        for (int i = 0; i < 8; ++i) s.points.push_back({-8 + i, i / 7.0});
        s.points.push_back({0, 0.5});
        s.points.push_back({1, 0.5});
        AlignedSeries a = resample(s);
        for (int i = 0; i < 15; ++i)
            CHECK(a.pre[i] == doctest::Approx(i / 14.0).epsilon(1e-9));
    }

    SUBCASE("one side empty is an error") {
        WeeklySeries s;
        for (int w = 1; w <= 5; ++w) s.points.push_back({w, 0.2});
        try {
            resample(s);
            FAIL("expected one-sided error");
        } catch (const Error& e) {
            CHECK(e.code() == "OneSidedChannel");
        }
    }

    SUBCASE("identity on a 15-point-per-side grid") {
        WeeklySeries s;
        for (int i = 0; i < 15; ++i) s.points.push_back({-15 + i, 0.1 + 0.05 * i});
        for (int i = 0; i < 15; ++i) s.points.push_back({i, 0.9 - 0.05 * i});
        AlignedSeries a = resample(s);
        for (int i = 0; i < 15; ++i) {
            CHECK(a.pre[i] == doctest::Approx(0.1 + 0.05 * i).epsilon(1e-12));
            CHECK(a.post[i] == doctest::Approx(0.9 - 0.05 * i).epsilon(1e-12));
        }
    }

    SUBCASE("monotone input stays monotone") {
        WeeklySeries s;
        for (int i = 0; i < 23; ++i)
            s.points.push_back({-11 + i, i * i / (22.0 * 22.0)});
        AlignedSeries a = resample(s);
        for (int slot = 1; slot < 15; ++slot) {
            CHECK(a.pre[slot] >= a.pre[slot - 1] - 1e-12);
            CHECK(a.post[slot] >= a.post[slot - 1] - 1e-12);
        }
        CHECK(a.post[0] >= a.pre[14] - 1e-12);
    }
}

TEST_CASE("alignment is translation-equivariant") {
    auto build = [](int shift_days) {
        Builder b;
        auto shift = [&](const std::string& date) {
            return format_date(Date{parse_date(date).days + shift_days});
        };
        b.upload(shift("2019-01-10"), 0.12)
            .upload(shift("2019-02-08"), 0.55)
            .upload(shift("2019-03-20"), 0.31)
            .upload(shift("2019-05-02"), 0.44)
            .upload(shift("2019-06-11"), 0.27);
        CohortDataset ds = b.done();
        ReferenceEvent ev = exact_event(shift("2019-03-01"), EventKind::SyntheticMidpoint);
        return resample(align_channel(ds, 0, 0, ev));
    };
    AlignedSeries base = build(0), shifted = build(1000);
    for (int slot = 0; slot < kBins; ++slot)
        CHECK(base.at_slot(slot) == doctest::Approx(shifted.at_slot(slot)).epsilon(1e-12));
}

TEST_CASE("aggregate_group means and standard errors") {
    AlignedSeries a, b;
    a.channel_id = "a";
    b.channel_id = "b";
    a.pre.fill(0.2);
    a.post.fill(0.2);
    b.pre.fill(0.4);
    b.post.fill(0.4);

    auto curve = aggregate_group({a, b});
    REQUIRE(curve.size() == kBins);
    for (const GroupCurvePoint& p : curve) {
        CHECK(p.mean == doctest::Approx(0.3).epsilon(1e-12));
        // sample sd of {0.2, 0.4} = 0.1414..; SE = sd/sqrt(2) = 0.1
        CHECK(p.se == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(p.n == 2);
        CHECK(p.bin_index != 0);
    }

    auto same = aggregate_group({a, a, a});
    for (const GroupCurvePoint& p : same) {
        CHECK(p.mean == doctest::Approx(0.2));
        CHECK(p.se == 0.0);
        CHECK(p.n == 3);
    }

    CHECK_THROWS_AS(aggregate_group({a}), Error);
}

TEST_CASE("pre/post means ignore narrative and event-date uploads") {
    Builder b(Group::AttemptedDuring);
    b.upload("2019-01-10", 0.1)
        .upload("2019-02-10", 0.3)
        .upload("2019-02-20", 0.9, true, /*narrative=*/true) // ignored
        .upload("2019-03-01", 0.8)                           // event date: ignored
        .upload("2019-04-01", 0.5)
        .upload("2019-05-01", 0.7);
    b.ds.channels[0].event = exact_event("2019-03-01");
    CohortDataset ds = b.done();

    PrePostMeans m = pre_post_means(ds, 0, 0, *ds.channels[0].event);
    REQUIRE(m.mean_before.has_value());
    CHECK(*m.mean_before == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(m.n_before == 2);
    REQUIRE(m.mean_after.has_value());
    CHECK(*m.mean_after == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(m.n_after == 2);

    SUBCASE("one-sided channel flags the absent side") {
        Builder c(Group::AttemptedDuring);
        c.upload("2019-01-10", 0.1).upload("2019-02-10", 0.3);
        c.ds.channels[0].event = exact_event("2019-03-01");
        CohortDataset one = c.done();
        PrePostMeans om = pre_post_means(one, 0, 0, *one.channels[0].event);
        CHECK(om.mean_before.has_value());
        CHECK_FALSE(om.mean_after.has_value());
        CHECK(om.n_after == 0);
    }
}

TEST_CASE("assign_all_events and align_topic cover the whole cohort") {
    // Two channels: one pass-through event, one synthetic midpoint.
    CohortDataset ds;
    ds.topics.push_back({0, "t", false});
    Channel c1;
    c1.id = "c1";
    c1.group = Group::AttemptedDuring;
    c1.event = exact_event("2019-03-01");
    Channel c2;
    c2.id = "c2";
    c2.group = Group::ControlMatches;
    ds.channels = {c1, c2};
    int n = 0;
    auto add = [&](const std::string& ch, const std::string& date, double v) {
        Upload u;
        u.id = "u" + std::to_string(n++);
        u.channel_id = ch;
        u.ts = noon(date);
        u.valid = true;
        u.topic_probs = {v};
        ds.uploads.push_back(u);
    };
    for (int i = 0; i < 6; ++i) {
        add("c1", format_date(Date{parse_date("2019-01-01").days + 30 * i}), 0.2);
        add("c2", format_date(Date{parse_date("2019-01-15").days + 30 * i}), 0.4);
    }
    ds.finalize();

    auto events = assign_all_events(ds);
    REQUIRE(events.size() == 2);
    CHECK(events.at("c1").kind == EventKind::Attempt);
    CHECK(events.at("c2").kind == EventKind::SyntheticMidpoint);

    TemporalConfig cfg;
    TopicAlignment ta = align_topic(ds, 0, cfg, events);
    CHECK(ta.topic_id == 0);
    const auto* during = ta.group(Group::AttemptedDuring);
    REQUIRE(during);
    REQUIRE(during->size() == 1);
    for (double v : (*during)[0].pre) CHECK(v == doctest::Approx(0.2));
    const auto* matches = ta.group(Group::ControlMatches);
    REQUIRE(matches);
    REQUIRE(matches->size() == 1);
    for (double v : (*matches)[0].post) CHECK(v == doctest::Approx(0.4));
    CHECK(ta.skipped.empty());

    SUBCASE("unalignable channels are skipped with a reason, not fatal") {
        CohortDataset sparse = ds;
        // Strip c2 down to a single upload: undersampled.
        sparse.uploads.clear();
        for (const Upload& u : ds.uploads)
            if (u.channel_id == "c1" || u.id == "u1") sparse.uploads.push_back(u);
        sparse.finalize();
        auto ev2 = assign_all_events(sparse);
        TopicAlignment t2 = align_topic(sparse, 0, cfg, ev2);
        REQUIRE(t2.skipped.size() == 1);
        CHECK(t2.skipped[0].first == "c2");
        CHECK(t2.group(Group::AttemptedDuring)->size() == 1);
        CHECK(t2.group(Group::ControlMatches)->empty());
    }
}
