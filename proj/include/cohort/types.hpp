#pragma once

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cohort/dates.hpp"

namespace cohort {

// The four-group cohort design. AttemptedDuring is the treatment and the
// reference category of every contrast.
enum class Group { AttemptedDuring, AttemptedBefore, ControlMajorLifeEvent, ControlMatches };
constexpr int kNumGroups = 4;

const char* group_token(Group g);               // attempted_during, ...
Group parse_group(const std::string& token);    // throws ParseError
std::vector<Group> all_groups();

enum class Gender { Female, Male, Other, Unknown };
const char* gender_token(Gender g);
Gender parse_gender(const std::string& token); // empty -> Unknown

enum class EventKind { Attempt, MajorLifeEvent, SyntheticMidpoint, External };
const char* event_kind_token(EventKind k);
EventKind parse_event_kind(const std::string& token);

// Precision of a loaded event date. Month-precision dates are normalized to
// the 15th; year-part dates to configurable anchors (early=Feb 15, mid=Jul 1,
// late=Oct 15 by default).
enum class EventPrecision { Exact, Month, YearEarly, YearMid, YearLate };
const char* event_precision_token(EventPrecision p);
EventPrecision parse_event_precision(const std::string& token);

struct ReferenceEvent {
    EventKind kind = EventKind::Attempt;
    Date date;
    EventPrecision precision = EventPrecision::Exact;
};

struct Channel {
    std::string id;
    Group group = Group::AttemptedDuring;
    Gender gender = Gender::Unknown;
    std::optional<int> age;
    std::optional<bool> minority;
    std::optional<long long> follower_count;
    std::optional<ReferenceEvent> event;
    bool excluded = false; // marks the sensitivity-analysis exclusion set
};

struct Upload {
    std::string id;
    std::string channel_id;
    Timestamp ts;
    double duration_s = 0.0;
    std::optional<long long> views;
    std::optional<long long> likes;
    std::optional<long long> comments;
    bool valid = true;
    bool narrative = false; // disclosure video: excluded from all statistics
    // Dense soft-cluster memberships, indexed by position in
    // CohortDataset::topics (explicit 0.0 where the long file has no row).
    std::vector<double> topic_probs;
};

struct TopicMeta {
    int topic_id = 0;
    std::string label;
    bool expert_flag = false;
};

// Channels sorted by id, uploads by (channel_id, timestamp, id), topics by
// topic_id — the canonical order used by the serializer. finalize() sorts,
// rebuilds the indexes, and sizes every upload's topic vector.
struct CohortDataset {
    std::vector<Channel> channels;
    std::vector<Upload> uploads;
    std::vector<TopicMeta> topics;

    void finalize();

    int channel_index(const std::string& id) const; // -1 when absent
    const Channel* channel(const std::string& id) const;
    std::span<const Upload> uploads_of(int channel_idx) const;
    std::span<const Upload> uploads_of(const std::string& id) const;
    int topic_pos(int topic_id) const; // position in topics, -1 when absent

private:
    std::unordered_map<std::string, int> channel_idx_;
    std::vector<std::pair<int, int>> upload_range_; // per channel, into uploads
    std::unordered_map<int, int> topic_pos_;
};

struct Violation {
    std::string code;   // e.g. AgeOutOfRange, MissingReferenceEvent
    std::string where;  // channel/upload id
    std::string detail;
};

struct Exclusion {
    std::string channel_id;
    Group group;
    std::string reason;
    std::string detail;
};

struct ExclusionReport {
    std::vector<Exclusion> excluded;
    std::vector<std::pair<Group, int>> retained_per_group;
    int retained_total = 0;
};

} // namespace cohort
