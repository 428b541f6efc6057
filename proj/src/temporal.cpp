#include "cohort/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cohort/error.hpp"
#include "cohort/stats.hpp"

namespace cohort {

int bin_label(int slot) {
    if (slot < 0 || slot >= kBins) fail("DomainError", "bin slot out of range");
    return slot < 15 ? slot - 15 : slot - 14;
}

int bin_slot(int bin_index) {
    if (bin_index >= -15 && bin_index <= -1) return bin_index + 15;
    if (bin_index >= 1 && bin_index <= 15) return bin_index + 14;
    fail("DomainError", "bin index " + std::to_string(bin_index) + " not in -15..-1, +1..+15");
}

namespace {

int floor_div(int a, int b) {
    int q = a / b, r = a % b;
    return (r != 0 && ((r < 0) != (b < 0))) ? q - 1 : q;
}

bool qualifying(const Upload& u) { return u.valid && !u.narrative; }

} // namespace

ReferenceEvent assign_reference_event(const Channel& channel, std::span<const Upload> uploads,
                                      MidpointPolicy policy) {
    if (channel.group == Group::AttemptedDuring || channel.group == Group::ControlMajorLifeEvent) {
        if (!channel.event)
            fail("MissingReferenceEvent", "channel '" + channel.id + "' (group " +
                                              group_token(channel.group) +
                                              ") has no loaded event date");
        return *channel.event;
    }
    std::vector<int32_t> dates;
    for (const Upload& u : uploads) {
        if (policy == MidpointPolicy::ValidUploads && !u.valid) continue;
        dates.push_back(u.ts.date().days);
    }
    std::sort(dates.begin(), dates.end());
    dates.erase(std::unique(dates.begin(), dates.end()), dates.end());
    if (dates.empty())
        fail("NoUploads", "channel '" + channel.id + "' has no uploads to take a midpoint of");
    // Lower median: index (n-1)/2 of the sorted unique dates.
    Date mid{dates[(dates.size() - 1) / 2]};
    return ReferenceEvent{EventKind::SyntheticMidpoint, mid, EventPrecision::Exact};
}

WeeklySeries align_channel(const CohortDataset& ds, int channel_idx, int topic_id,
                           const ReferenceEvent& event, int window_months) {
    const Channel& ch = ds.channels.at(static_cast<size_t>(channel_idx));
    int tpos = ds.topic_pos(topic_id);
    if (tpos < 0) fail("UnknownTopic", "topic " + std::to_string(topic_id) + " not in metadata");

    std::vector<std::pair<int32_t, double>> day_values; // (day offset, topic value)
    int32_t span_min = 0, span_max = 0;
    bool any = false;
    for (const Upload& u : ds.uploads_of(channel_idx)) {
        if (!qualifying(u)) continue;
        int32_t day = u.ts.date().days - event.date.days;
        if (!any) {
            span_min = span_max = day;
            any = true;
        } else {
            span_min = std::min(span_min, day);
            span_max = std::max(span_max, day);
        }
        if (day == 0) continue; // event-date uploads never enter the series
        day_values.emplace_back(day, u.topic_probs[static_cast<size_t>(tpos)]);
    }
    if (!any)
        fail("Undersampled", "channel '" + ch.id + "': no valid non-narrative uploads");

    const int window_days = TemporalConfig{window_months}.window_weeks() * 7;
    if (span_max < -window_days || span_min > window_days)
        fail("EventOutsideSpan", "channel '" + ch.id + "': event " + format_date(event.date) +
                                     " lies more than the window from every upload");

    std::erase_if(day_values, [&](const auto& dv) { return std::abs(dv.first) > window_days; });
    {
        std::vector<int32_t> distinct;
        for (const auto& [day, v] : day_values) distinct.push_back(day);
        std::sort(distinct.begin(), distinct.end());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        if (distinct.size() < 2)
            fail("Undersampled", "channel '" + ch.id + "': fewer than 2 in-window upload dates");
    }

    // Same-week uploads average; gaps between occupied weeks interpolate.
    std::map<int, std::pair<double, int>> by_week; // week -> (sum, count)
    for (const auto& [day, v] : day_values) {
        auto& [sum, count] = by_week[floor_div(day, 7)];
        sum += v;
        count += 1;
    }
    std::vector<std::pair<int, double>> occupied;
    occupied.reserve(by_week.size());
    for (const auto& [week, sc] : by_week) occupied.emplace_back(week, sc.first / sc.second);

    WeeklySeries out{topic_id, ch.id, {}};
    for (size_t i = 0; i < occupied.size(); ++i) {
        out.points.push_back(occupied[i]);
        if (i + 1 < occupied.size()) {
            auto [w0, v0] = occupied[i];
            auto [w1, v1] = occupied[i + 1];
            for (int w = w0 + 1; w < w1; ++w)
                out.points.emplace_back(
                    w, v0 + (v1 - v0) * (double(w - w0) / double(w1 - w0)));
        }
    }
    return out;
}

namespace {

// Linearly interpolates a consecutive-week segment at 15 equally spaced
// positions over its own span. One point fills every slot (edge clamp).
std::array<double, 15> resample_side(const std::vector<std::pair<int, double>>& pts) {
    std::array<double, 15> out{};
    if (pts.size() == 1) {
        out.fill(pts.front().second);
        return out;
    }
    const double lo = pts.front().first, hi = pts.back().first;
    for (int i = 0; i < 15; ++i) {
        double t = lo + (hi - lo) * (double(i) / 14.0);
        auto k = static_cast<size_t>(std::clamp(std::floor(t - lo), 0.0, double(pts.size() - 2)));
        double w0 = pts[k].first, v0 = pts[k].second, v1 = pts[k + 1].second;
        out[i] = v0 + (v1 - v0) * (t - w0); // adjacent weeks differ by exactly 1
    }
    return out;
}

} // namespace

AlignedSeries resample(const WeeklySeries& series) {
    std::vector<std::pair<int, double>> pre, post;
    for (const auto& p : series.points) (p.first < 0 ? pre : post).push_back(p);
    if (pre.empty() || post.empty())
        fail("OneSidedChannel", "channel '" + series.channel_id + "' topic " +
                                    std::to_string(series.topic_id) + ": no " +
                                    (pre.empty() ? "pre" : "post") + "-event weekly points");
    AlignedSeries out{series.topic_id, series.channel_id, {}, {}};
    out.pre = resample_side(pre);
    out.post = resample_side(post);
    return out;
}

std::vector<GroupCurvePoint> aggregate_group(const std::vector<AlignedSeries>& aligned) {
    if (aligned.size() < 2) fail("DomainError", "aggregate_group needs >= 2 series");
    std::vector<GroupCurvePoint> out(kBins);
    const double n = static_cast<double>(aligned.size());
    std::vector<double> column(aligned.size());
    for (int slot = 0; slot < kBins; ++slot) {
        for (size_t i = 0; i < aligned.size(); ++i) column[i] = aligned[i].at_slot(slot);
        double mean = mean_of(column);
        double sd = std::sqrt(sample_variance(column));
        out[slot] = {bin_label(slot), mean, sd / std::sqrt(n), static_cast<int>(aligned.size())};
    }
    return out;
}

PrePostMeans pre_post_means(const CohortDataset& ds, int channel_idx, int topic_id,
                            const ReferenceEvent& event) {
    const Channel& ch = ds.channels.at(static_cast<size_t>(channel_idx));
    int tpos = ds.topic_pos(topic_id);
    if (tpos < 0) fail("UnknownTopic", "topic " + std::to_string(topic_id) + " not in metadata");

    PrePostMeans out;
    out.channel_id = ch.id;
    out.topic_id = topic_id;
    double sum_before = 0.0, sum_after = 0.0;
    for (const Upload& u : ds.uploads_of(channel_idx)) {
        if (!qualifying(u)) continue;
        int32_t day = u.ts.date().days - event.date.days;
        if (day == 0) continue;
        double v = u.topic_probs[static_cast<size_t>(tpos)];
        if (day < 0) {
            sum_before += v;
            ++out.n_before;
        } else {
            sum_after += v;
            ++out.n_after;
        }
    }
    if (out.n_before > 0) out.mean_before = sum_before / out.n_before;
    if (out.n_after > 0) out.mean_after = sum_after / out.n_after;
    return out;
}

std::map<std::string, ReferenceEvent> assign_all_events(const CohortDataset& ds,
                                                        MidpointPolicy policy) {
    std::map<std::string, ReferenceEvent> events;
    for (size_t i = 0; i < ds.channels.size(); ++i)
        events[ds.channels[i].id] = assign_reference_event(
            ds.channels[i], ds.uploads_of(static_cast<int>(i)), policy);
    return events;
}

const std::vector<AlignedSeries>* TopicAlignment::group(Group g) const {
    for (const auto& [grp, series] : by_group)
        if (grp == g) return &series;
    return nullptr;
}

TopicAlignment align_topic(const CohortDataset& ds, int topic_id, const TemporalConfig& cfg,
                           const std::map<std::string, ReferenceEvent>& events) {
    TopicAlignment out;
    out.topic_id = topic_id;
    for (Group g : all_groups()) out.by_group.emplace_back(g, std::vector<AlignedSeries>{});
    for (size_t i = 0; i < ds.channels.size(); ++i) {
        const Channel& ch = ds.channels[i];
        auto ev = events.find(ch.id);
        if (ev == events.end()) {
            out.skipped.emplace_back(ch.id, "no_reference_event");
            continue;
        }
        try {
            WeeklySeries weekly = align_channel(ds, static_cast<int>(i), topic_id, ev->second,
                                                cfg.window_months);
            AlignedSeries aligned = resample(weekly);
            out.by_group[static_cast<size_t>(ch.group)].second.push_back(std::move(aligned));
        } catch (const Error& e) {
            out.skipped.emplace_back(ch.id, e.code());
        }
    }
    return out;
}

} // namespace cohort
