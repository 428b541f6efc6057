#include "cohort/core.hpp"

#include <algorithm>
#include <filesystem>
#include <set>
#include <unordered_set>

#include "cohort/csv.hpp"
#include "cohort/error.hpp"

namespace cohort {

const char* group_token(Group g) {
    switch (g) {
        case Group::AttemptedDuring: return "attempted_during";
        case Group::AttemptedBefore: return "attempted_before";
        case Group::ControlMajorLifeEvent: return "control_major_life_event";
        case Group::ControlMatches: return "control_matches";
    }
    return "?";
}

Group parse_group(const std::string& token) {
    for (Group g : all_groups())
        if (token == group_token(g)) return g;
    fail("ParseError", "unknown group '" + token + "'");
}

std::vector<Group> all_groups() {
    return {Group::AttemptedDuring, Group::AttemptedBefore, Group::ControlMajorLifeEvent,
            Group::ControlMatches};
}

const char* gender_token(Gender g) {
    switch (g) {
        case Gender::Female: return "female";
        case Gender::Male: return "male";
        case Gender::Other: return "other";
        case Gender::Unknown: return "unknown";
    }
    return "?";
}

Gender parse_gender(const std::string& token) {
    if (token.empty() || token == "unknown") return Gender::Unknown;
    if (token == "female") return Gender::Female;
    if (token == "male") return Gender::Male;
    if (token == "other") return Gender::Other;
    fail("ParseError", "unknown gender '" + token + "'");
}

const char* event_kind_token(EventKind k) {
    switch (k) {
        case EventKind::Attempt: return "attempt";
        case EventKind::MajorLifeEvent: return "major_life_event";
        case EventKind::SyntheticMidpoint: return "synthetic_midpoint";
        case EventKind::External: return "external";
    }
    return "?";
}

EventKind parse_event_kind(const std::string& token) {
    if (token == "attempt") return EventKind::Attempt;
    if (token == "major_life_event") return EventKind::MajorLifeEvent;
    if (token == "external") return EventKind::External;
    if (token == "synthetic_midpoint")
        fail("ParseError", "synthetic_midpoint events are computed, never loaded");
    fail("ParseError", "unknown event kind '" + token + "'");
}

const char* event_precision_token(EventPrecision p) {
    switch (p) {
        case EventPrecision::Exact: return "exact";
        case EventPrecision::Month: return "month";
        case EventPrecision::YearEarly: return "year_early";
        case EventPrecision::YearMid: return "year_mid";
        case EventPrecision::YearLate: return "year_late";
    }
    return "?";
}

EventPrecision parse_event_precision(const std::string& token) {
    if (token.empty() || token == "exact") return EventPrecision::Exact;
    if (token == "month") return EventPrecision::Month;
    if (token == "year_early") return EventPrecision::YearEarly;
    if (token == "year_mid") return EventPrecision::YearMid;
    if (token == "year_late") return EventPrecision::YearLate;
    fail("ParseError", "unknown event precision '" + token + "'");
}

void CohortDataset::finalize() {
    std::sort(channels.begin(), channels.end(),
              [](const Channel& a, const Channel& b) { return a.id < b.id; });
    std::sort(uploads.begin(), uploads.end(), [](const Upload& a, const Upload& b) {
        if (a.channel_id != b.channel_id) return a.channel_id < b.channel_id;
        if (a.ts != b.ts) return a.ts < b.ts;
        return a.id < b.id;
    });
    std::sort(topics.begin(), topics.end(),
              [](const TopicMeta& a, const TopicMeta& b) { return a.topic_id < b.topic_id; });

    channel_idx_.clear();
    for (size_t i = 0; i < channels.size(); ++i)
        channel_idx_[channels[i].id] = static_cast<int>(i);

    topic_pos_.clear();
    for (size_t i = 0; i < topics.size(); ++i)
        topic_pos_[topics[i].topic_id] = static_cast<int>(i);

    upload_range_.assign(channels.size(), {0, 0});
    size_t u = 0;
    for (size_t c = 0; c < channels.size(); ++c) {
        while (u < uploads.size() && uploads[u].channel_id < channels[c].id) ++u;
        size_t begin = u;
        while (u < uploads.size() && uploads[u].channel_id == channels[c].id) ++u;
        upload_range_[c] = {static_cast<int>(begin), static_cast<int>(u)};
    }

    for (Upload& up : uploads)
        up.topic_probs.resize(topics.size(), 0.0);
}

int CohortDataset::channel_index(const std::string& id) const {
    auto it = channel_idx_.find(id);
    return it == channel_idx_.end() ? -1 : it->second;
}

const Channel* CohortDataset::channel(const std::string& id) const {
    int i = channel_index(id);
    return i < 0 ? nullptr : &channels[static_cast<size_t>(i)];
}

std::span<const Upload> CohortDataset::uploads_of(int channel_idx) const {
    if (channel_idx < 0 || static_cast<size_t>(channel_idx) >= channels.size()) return {};
    auto [b, e] = upload_range_[static_cast<size_t>(channel_idx)];
    return {uploads.data() + b, static_cast<size_t>(e - b)};
}

std::span<const Upload> CohortDataset::uploads_of(const std::string& id) const {
    return uploads_of(channel_index(id));
}

int CohortDataset::topic_pos(int topic_id) const {
    auto it = topic_pos_.find(topic_id);
    return it == topic_pos_.end() ? -1 : it->second;
}

namespace {

Date anchor_event_date(Date loaded, EventPrecision precision, const PrecisionAnchors& a) {
    int y, m, d;
    civil_from_days(loaded.days, y, m, d);
    switch (precision) {
        case EventPrecision::Exact: return loaded;
        case EventPrecision::Month: return make_date(y, m, a.month_day);
        case EventPrecision::YearEarly: return make_date(y, a.early_month, a.early_day);
        case EventPrecision::YearMid: return make_date(y, a.mid_month, a.mid_day);
        case EventPrecision::YearLate: return make_date(y, a.late_month, a.late_day);
    }
    return loaded;
}

} // namespace

CohortDataset load_dataset(const std::string& channels_path, const std::string& uploads_path,
                           const std::string& topics_long_path,
                           const std::string& topic_meta_path, const PrecisionAnchors& anchors) {
    CohortDataset ds;

    { // topic_meta.csv
        Csv t = read_csv(topic_meta_path);
        int c_id = t.require_col("topic_id");
        int c_label = t.require_col("label");
        int c_expert = t.require_col("expert_flag");
        std::unordered_set<long long> seen;
        for (size_t r = 0; r < t.rows.size(); ++r) {
            RowView row(t, r);
            TopicMeta m;
            m.topic_id = static_cast<int>(row.i64(c_id, "topic_id"));
            if (m.topic_id < 0) row.fail_field("topic_id", "must be nonnegative");
            if (!seen.insert(m.topic_id).second)
                fail("DuplicateId", row.context() + ": duplicate topic_id " +
                                        std::to_string(m.topic_id));
            m.label = row.str(c_label, "label");
            m.expert_flag = row.flag(c_expert, "expert_flag");
            ds.topics.push_back(std::move(m));
        }
    }

    { // channels.csv
        Csv t = read_csv(channels_path);
        int c_id = t.require_col("channel_id");
        int c_group = t.require_col("group");
        int c_gender = t.require_col("gender");
        int c_age = t.require_col("age");
        int c_min = t.require_col("minority_flag");
        int c_fol = t.require_col("follower_count");
        int c_ek = t.require_col("event_kind");
        int c_ed = t.require_col("event_date");
        int c_ep = t.require_col("event_precision");
        int c_ex = t.require_col("excluded_flag");
        std::unordered_set<std::string> seen;
        for (size_t r = 0; r < t.rows.size(); ++r) {
            RowView row(t, r);
            Channel ch;
            ch.id = row.str(c_id, "channel_id");
            if (!seen.insert(ch.id).second)
                fail("DuplicateId", row.context() + ": duplicate channel_id '" + ch.id + "'");
            try {
                ch.group = parse_group(row.str(c_group, "group"));
                ch.gender = parse_gender(row.opt_str(c_gender).value_or(""));
            } catch (const Error& e) {
                fail(e.code(), row.context() + ": " + e.message());
            }
            if (auto age = row.opt_i64(c_age, "age")) ch.age = static_cast<int>(*age);
            ch.minority = row.opt_flag(c_min, "minority_flag");
            ch.follower_count = row.opt_i64(c_fol, "follower_count");
            auto kind_s = row.opt_str(c_ek);
            auto date = row.opt_date(c_ed, "event_date");
            if (kind_s && !date) row.fail_field("event_date", "event_kind given without a date");
            if (!kind_s && date) row.fail_field("event_kind", "event_date given without a kind");
            if (kind_s) {
                ReferenceEvent ev;
                try {
                    ev.kind = parse_event_kind(*kind_s);
                    ev.precision = parse_event_precision(row.opt_str(c_ep).value_or(""));
                } catch (const Error& e) {
                    fail(e.code(), row.context() + ": " + e.message());
                }
                ev.date = anchor_event_date(*date, ev.precision, anchors);
                ch.event = ev;
            }
            ch.excluded = row.opt_flag(c_ex, "excluded_flag").value_or(false);
            ds.channels.push_back(std::move(ch));
        }
    }

    std::unordered_set<std::string> channel_ids;
    for (const Channel& c : ds.channels) channel_ids.insert(c.id);

    std::unordered_map<std::string, size_t> upload_row; // id -> index in ds.uploads
    { // uploads.csv
        Csv t = read_csv(uploads_path);
        int c_id = t.require_col("upload_id");
        int c_ch = t.require_col("channel_id");
        int c_ts = t.require_col("timestamp");
        int c_dur = t.require_col("duration_s");
        int c_views = t.require_col("views");
        int c_likes = t.require_col("likes");
        int c_com = t.require_col("comments");
        int c_valid = t.require_col("valid");
        int c_narr = t.require_col("narrative_flag");
        for (size_t r = 0; r < t.rows.size(); ++r) {
            RowView row(t, r);
            Upload u;
            u.id = row.str(c_id, "upload_id");
            if (upload_row.count(u.id))
                fail("DuplicateId", row.context() + ": duplicate upload_id '" + u.id + "'");
            u.channel_id = row.str(c_ch, "channel_id");
            if (!channel_ids.count(u.channel_id))
                fail("DanglingReference", row.context() + ": field 'channel_id': upload '" +
                                              u.id + "' references unknown channel '" +
                                              u.channel_id + "'");
            u.ts = row.timestamp(c_ts, "timestamp");
            u.duration_s = row.f64(c_dur, "duration_s");
            if (u.duration_s < 0) row.fail_field("duration_s", "must be nonnegative");
            u.views = row.opt_i64(c_views, "views");
            u.likes = row.opt_i64(c_likes, "likes");
            u.comments = row.opt_i64(c_com, "comments");
            u.valid = row.flag(c_valid, "valid");
            u.narrative = row.flag(c_narr, "narrative_flag");
            upload_row[u.id] = ds.uploads.size();
            ds.uploads.push_back(std::move(u));
        }
    }

    // Size the dense topic vectors before filling them from the long file.
    std::unordered_map<int, int> topic_pos;
    for (size_t i = 0; i < ds.topics.size(); ++i) topic_pos[ds.topics[i].topic_id] = (int)i;
    for (Upload& u : ds.uploads) u.topic_probs.assign(ds.topics.size(), 0.0);

    { // topics_long.csv
        Csv t = read_csv(topics_long_path);
        int c_u = t.require_col("upload_id");
        int c_t = t.require_col("topic_id");
        int c_p = t.require_col("probability");
        std::set<std::pair<std::string, int>> seen;
        for (size_t r = 0; r < t.rows.size(); ++r) {
            RowView row(t, r);
            std::string uid = row.str(c_u, "upload_id");
            auto it = upload_row.find(uid);
            if (it == upload_row.end())
                fail("DanglingReference",
                     row.context() + ": field 'upload_id': unknown upload '" + uid + "'");
            int topic_id = static_cast<int>(row.i64(c_t, "topic_id"));
            auto tp = topic_pos.find(topic_id);
            if (tp == topic_pos.end())
                fail("DanglingReference", row.context() + ": field 'topic_id': topic " +
                                              std::to_string(topic_id) + " not in topic_meta");
            if (!seen.insert({uid, topic_id}).second)
                fail("DuplicateId", row.context() + ": duplicate (upload_id, topic_id) pair ('" +
                                        uid + "', " + std::to_string(topic_id) + ")");
            double p = row.f64(c_p, "probability");
            if (!(p >= 0.0 && p <= 1.0))
                fail("ProbabilityOutOfRange", row.context() + ": field 'probability': value " +
                                                  fmt_double(p) + " for topic_id " +
                                                  std::to_string(topic_id) +
                                                  " outside [0,1]");
            ds.uploads[it->second].topic_probs[static_cast<size_t>(tp->second)] = p;
        }
    }

    ds.finalize();
    return ds;
}

namespace {

std::string opt_str(const std::optional<long long>& v) {
    return v ? std::to_string(*v) : std::string();
}

} // namespace

SerializedDataset serialize_dataset(const CohortDataset& ds) {
    SerializedDataset out;

    CsvBuilder ch({"channel_id", "group", "gender", "age", "minority_flag", "follower_count",
                   "event_kind", "event_date", "event_precision", "excluded_flag"});
    for (const Channel& c : ds.channels) {
        ch.cell(c.id)
            .cell(std::string(group_token(c.group)))
            .cell(std::string(gender_token(c.gender)))
            .cell(c.age ? std::to_string(*c.age) : std::string())
            .cell(c.minority ? std::string(*c.minority ? "1" : "0") : std::string())
            .cell(opt_str(c.follower_count));
        if (c.event && c.event->kind != EventKind::SyntheticMidpoint) {
            ch.cell(std::string(event_kind_token(c.event->kind)))
                .cell(format_date(c.event->date))
                .cell(std::string(event_precision_token(c.event->precision)));
        } else {
            // Synthetic midpoints are computed, never persisted.
            ch.cell(std::string()).cell(std::string()).cell(std::string());
        }
        ch.cell(std::string(c.excluded ? "1" : "0")).endrow();
    }
    out.channels = ch.str();

    CsvBuilder up({"upload_id", "channel_id", "timestamp", "duration_s", "views", "likes",
                   "comments", "valid", "narrative_flag"});
    for (const Upload& u : ds.uploads) {
        up.cell(u.id)
            .cell(u.channel_id)
            .cell(format_timestamp(u.ts))
            .cell(u.duration_s)
            .cell(opt_str(u.views))
            .cell(opt_str(u.likes))
            .cell(opt_str(u.comments))
            .cell(std::string(u.valid ? "1" : "0"))
            .cell(std::string(u.narrative ? "1" : "0"))
            .endrow();
    }
    out.uploads = up.str();

    CsvBuilder tl({"upload_id", "topic_id", "probability"});
    for (const Upload& u : ds.uploads)
        for (size_t i = 0; i < u.topic_probs.size(); ++i)
            if (u.topic_probs[i] != 0.0)
                tl.cell(u.id).cell(ds.topics[i].topic_id).cell(u.topic_probs[i]).endrow();
    out.topics_long = tl.str();

    CsvBuilder tm({"topic_id", "label", "expert_flag"});
    for (const TopicMeta& m : ds.topics)
        tm.cell(m.topic_id).cell(m.label).cell(std::string(m.expert_flag ? "1" : "0")).endrow();
    out.topic_meta = tm.str();

    return out;
}

void save_dataset(const CohortDataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    SerializedDataset s = serialize_dataset(ds);
    write_file_atomic((fs::path(dir) / "channels.csv").string(), s.channels);
    write_file_atomic((fs::path(dir) / "uploads.csv").string(), s.uploads);
    write_file_atomic((fs::path(dir) / "topics_long.csv").string(), s.topics_long);
    write_file_atomic((fs::path(dir) / "topic_meta.csv").string(), s.topic_meta);
}

std::vector<Violation> validate_dataset(const CohortDataset& ds, ValidationLevel level,
                                        int window_months) {
    std::vector<Violation> out;

    std::unordered_set<std::string> chan_seen;
    for (const Channel& c : ds.channels) {
        if (!chan_seen.insert(c.id).second)
            out.push_back({"DuplicateChannelId", c.id, "channel_id appears more than once"});
        if (c.age && (*c.age < 5 || *c.age > 120))
            out.push_back({"AgeOutOfRange", c.id,
                           "age " + std::to_string(*c.age) + " outside [5,120]"});
        if (c.event) {
            bool attempted = c.group == Group::AttemptedDuring || c.group == Group::AttemptedBefore;
            if (c.event->kind == EventKind::Attempt && !attempted)
                out.push_back({"EventKindGroupMismatch", c.id,
                               "attempt event on a control channel"});
            if (c.event->kind == EventKind::MajorLifeEvent &&
                c.group != Group::ControlMajorLifeEvent)
                out.push_back({"EventKindGroupMismatch", c.id,
                               "major_life_event event outside the major-life-event group"});
        }
    }

    std::unordered_set<std::string> up_seen;
    for (const Upload& u : ds.uploads) {
        if (!up_seen.insert(u.id).second)
            out.push_back({"DuplicateUploadId", u.id, "upload_id appears more than once"});
        if (ds.channel_index(u.channel_id) < 0)
            out.push_back({"DanglingChannelRef", u.id,
                           "references unknown channel '" + u.channel_id + "'"});
        for (size_t i = 0; i < u.topic_probs.size(); ++i)
            if (!(u.topic_probs[i] >= 0.0 && u.topic_probs[i] <= 1.0))
                out.push_back({"ProbabilityOutOfRange", u.id,
                               "topic " + std::to_string(ds.topics[i].topic_id) + " value " +
                                   fmt_double(u.topic_probs[i])});
    }

    if (level == ValidationLevel::PreAlignment) {
        const int window_days = TemporalConfig{window_months}.window_weeks() * 7;
        for (size_t ci = 0; ci < ds.channels.size(); ++ci) {
            const Channel& c = ds.channels[ci];
            bool loads_event = c.group == Group::AttemptedDuring ||
                               c.group == Group::ControlMajorLifeEvent;
            if (loads_event && !c.event) {
                out.push_back({"MissingReferenceEvent", c.id,
                               "group " + std::string(group_token(c.group)) +
                                   " requires a loaded reference event"});
                continue;
            }
            if (!c.event || c.event->kind == EventKind::External) continue;
            auto ups = ds.uploads_of(static_cast<int>(ci));
            if (ups.empty()) continue;
            int32_t first = ups.front().ts.date().days;
            int32_t last = first;
            for (const Upload& u : ups) {
                first = std::min(first, u.ts.date().days);
                last = std::max(last, u.ts.date().days);
            }
            if (c.event->date.days < first - window_days || c.event->date.days > last + window_days)
                out.push_back({"EventOutsideSpan", c.id,
                               "event " + format_date(c.event->date) +
                                   " is more than the alignment window away from the upload span " +
                                   format_date(Date{first}) + ".." + format_date(Date{last})});
        }
    }

    return out;
}

std::pair<CohortDataset, ExclusionReport> filter_channels(const CohortDataset& ds,
                                                          int min_valid) {
    if (min_valid <= 0)
        fail("ConfigError", "min_valid must be >= 1 (got " + std::to_string(min_valid) + ")");

    CohortDataset out;
    out.topics = ds.topics;
    ExclusionReport report;

    std::unordered_set<std::string> keep;
    for (size_t ci = 0; ci < ds.channels.size(); ++ci) {
        const Channel& c = ds.channels[ci];
        int valid_count = 0;
        for (const Upload& u : ds.uploads_of(static_cast<int>(ci)))
            if (u.valid) ++valid_count;
        if (valid_count < min_valid) {
            report.excluded.push_back({c.id, c.group, "insufficient_valid_uploads",
                                       std::to_string(valid_count) + " valid uploads < " +
                                           std::to_string(min_valid)});
        } else {
            keep.insert(c.id);
            out.channels.push_back(c);
        }
    }
    for (const Upload& u : ds.uploads)
        if (keep.count(u.channel_id)) out.uploads.push_back(u);

    out.finalize();
    for (Group g : all_groups()) {
        int n = 0;
        for (const Channel& c : out.channels)
            if (c.group == g) ++n;
        report.retained_per_group.emplace_back(g, n);
    }
    report.retained_total = static_cast<int>(out.channels.size());
    return {std::move(out), std::move(report)};
}

} // namespace cohort
