#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cohort/config.hpp"
#include "cohort/types.hpp"

namespace cohort {

// Weekly topic values relative to the reference event. Weeks are 7-day
// offsets from the event date (floor division), not calendar weeks, so the
// grid does not depend on which weekday the event fell on. Points cover every
// week between the first and last in-window upload (gaps interpolated).
struct WeeklySeries {
    int topic_id = 0;
    std::string channel_id;
    std::vector<std::pair<int, double>> points; // (week_index, value), weeks consecutive
};

// The normalized 15-pre / 15-post grid. Bin labels run -15..-1, +1..+15;
// slot i of pre is bin -15+i, slot i of post is bin +1+i.
inline constexpr int kBins = 30;
int bin_label(int slot);      // 0..29 -> -15..-1, +1..+15
int bin_slot(int bin_index);  // inverse; rejects 0 and out-of-range labels

struct AlignedSeries {
    int topic_id = 0;
    std::string channel_id;
    std::array<double, 15> pre{};
    std::array<double, 15> post{};
    double at_slot(int slot) const { return slot < 15 ? pre[slot] : post[slot - 15]; }
};

struct GroupCurvePoint {
    int bin_index = 0;
    double mean = 0.0;
    double se = 0.0;
    int n = 0;
};

struct PrePostMeans {
    std::string channel_id;
    int topic_id = 0;
    std::optional<double> mean_before, mean_after; // absent side flagged by n=0
    int n_before = 0, n_after = 0;                 // qualifying upload counts
};

// Which uploads the synthetic midpoint is computed over.
enum class MidpointPolicy { ValidUploads, AllUploads };

// AttemptedDuring / ControlMajorLifeEvent channels pass their loaded event
// through; the other two groups get a synthetic midpoint at the lower median
// of their sorted unique upload dates.
ReferenceEvent assign_reference_event(const Channel& channel, std::span<const Upload> uploads,
                                      MidpointPolicy policy = MidpointPolicy::ValidUploads);

// Event-anchored weekly series for one (channel, topic): event-date uploads
// dropped, uploads outside the window dropped, same-week uploads averaged,
// missing weeks linearly interpolated. No extrapolation past the observed
// uploads. Requires >=2 in-window qualifying uploads on distinct dates.
WeeklySeries align_channel(const CohortDataset& ds, int channel_idx, int topic_id,
                           const ReferenceEvent& event, int window_months = 18);

// Maps each side onto 15 equally spaced positions over its own span (linear
// interpolation; a single-point side fills all 15 slots with its value).
// Pre-event = weeks < 0; the event week itself opens the post side.
AlignedSeries resample(const WeeklySeries& series);

// Per-bin mean and standard error (sample sd / sqrt(n)) over >=2 series.
std::vector<GroupCurvePoint> aggregate_group(const std::vector<AlignedSeries>& aligned);

// Arithmetic means of per-upload topic probabilities on each side of the
// event; valid non-narrative uploads only, event-date uploads excluded.
PrePostMeans pre_post_means(const CohortDataset& ds, int channel_idx, int topic_id,
                            const ReferenceEvent& event);

// Reference events for every channel in the dataset, keyed by channel id.
std::map<std::string, ReferenceEvent> assign_all_events(
    const CohortDataset& ds, MidpointPolicy policy = MidpointPolicy::ValidUploads);

// One topic's aligned series collected per group. Channels that cannot be
// aligned (too few uploads, out-of-window span, one-sided history) are
// skipped with a recorded reason rather than failing the batch.
struct TopicAlignment {
    int topic_id = 0;
    std::vector<std::pair<Group, std::vector<AlignedSeries>>> by_group; // enum order
    std::vector<std::pair<std::string, std::string>> skipped;          // (channel, reason)

    const std::vector<AlignedSeries>* group(Group g) const;
};

TopicAlignment align_topic(const CohortDataset& ds, int topic_id, const TemporalConfig& cfg,
                           const std::map<std::string, ReferenceEvent>& events);

} // namespace cohort
