#include "cohort/design.hpp"

#include <algorithm>
#include <unordered_set>

#include "cohort/error.hpp"

namespace cohort {

int DesignMatrix::column(const std::string& name) const {
    for (size_t j = 0; j < feature_names.size(); ++j)
        if (feature_names[j] == name) return static_cast<int>(j);
    return -1;
}

void validate_design(const DesignMatrix& d) {
    if (d.x.size() != d.y.size() || d.x.size() != d.row_ids.size())
        fail("DesignError", "row count mismatch between x, y, and row_ids");
    for (const auto& row : d.x)
        if (row.size() != d.feature_names.size())
            fail("DesignError", "ragged design row");
    std::unordered_set<std::string> names(d.feature_names.begin(), d.feature_names.end());
    if (names.size() != d.feature_names.size())
        fail("DesignError", "duplicate feature names");
    bool has0 = false, has1 = false;
    for (int yi : d.y) {
        if (yi == 0) has0 = true;
        else if (yi == 1) has1 = true;
        else fail("DesignError", "outcome must be 0/1");
    }
    if (!has0 || !has1) fail("DesignError", "outcome must contain both classes");
    for (size_t j = 0; j < d.feature_names.size(); ++j) {
        bool constant = true;
        for (size_t i = 1; i < d.x.size() && constant; ++i)
            constant = d.x[i][j] == d.x[0][j];
        if (constant)
            fail("DesignError", "feature '" + d.feature_names[j] + "' is constant");
    }
}

const char* control_selector_token(ControlSelector s) {
    switch (s) {
        case ControlSelector::Before: return "before";
        case ControlSelector::MajorLifeEvent: return "major_life_event";
        case ControlSelector::Matches: return "matches";
        case ControlSelector::Pooled: return "pooled";
    }
    return "?";
}

ControlSelector parse_control_selector(const std::string& token) {
    if (token == "before") return ControlSelector::Before;
    if (token == "major_life_event") return ControlSelector::MajorLifeEvent;
    if (token == "matches") return ControlSelector::Matches;
    if (token == "pooled") return ControlSelector::Pooled;
    fail("ParseError", "unknown control selector '" + token + "'");
}

namespace {

bool selected_control(Group g, ControlSelector s) {
    switch (s) {
        case ControlSelector::Before: return g == Group::AttemptedBefore;
        case ControlSelector::MajorLifeEvent: return g == Group::ControlMajorLifeEvent;
        case ControlSelector::Matches: return g == Group::ControlMatches;
        case ControlSelector::Pooled: return g != Group::AttemptedDuring;
    }
    return false;
}

} // namespace

DesignMatrix build_pre_event_design(const CohortDataset& ds, const std::vector<int>& topic_ids,
                                    ControlSelector selector,
                                    const std::map<std::string, ReferenceEvent>& events) {
    if (topic_ids.empty()) fail("DesignError", "empty topic set");
    DesignMatrix d;
    for (int t : topic_ids) d.feature_names.push_back("topic_" + std::to_string(t) + "_pre");

    int n_controls = 0;
    for (size_t ci = 0; ci < ds.channels.size(); ++ci) {
        const Channel& ch = ds.channels[ci];
        bool treated = ch.group == Group::AttemptedDuring;
        if (!treated && !selected_control(ch.group, selector)) continue;

        auto ev = events.find(ch.id);
        if (ev == events.end())
            fail("MissingReferenceEvent", "no reference event recorded for channel '" +
                                              ch.id + "'");
        std::vector<double> row;
        row.reserve(topic_ids.size());
        bool complete = true;
        for (int t : topic_ids) {
            PrePostMeans m = pre_post_means(ds, static_cast<int>(ci), t, ev->second);
            if (!m.mean_before) {
                complete = false;
                break;
            }
            row.push_back(*m.mean_before);
        }
        if (!complete) continue; // no pre-event uploads: the channel has no row
        d.row_ids.push_back(ch.id);
        d.x.push_back(std::move(row));
        d.y.push_back(treated ? 1 : 0);
        if (!treated) ++n_controls;
    }
    if (n_controls == 0)
        fail("DesignError", std::string("control selector '") + control_selector_token(selector) +
                                "' produced no control rows");
    return d;
}

OneHotColumns one_hot(const std::string& factor,
                      const std::vector<std::set<std::string>>& labels_per_row) {
    std::set<std::string> vocab;
    for (const auto& labels : labels_per_row) vocab.insert(labels.begin(), labels.end());

    OneHotColumns out;
    for (const std::string& label : vocab) {
        std::vector<double> col(labels_per_row.size(), 0.0);
        int observed = 0;
        for (size_t i = 0; i < labels_per_row.size(); ++i)
            if (labels_per_row[i].count(label)) {
                col[i] = 1.0;
                ++observed;
            }
        std::string name = factor + "=" + label;
        if (observed < 2) {
            out.dropped.push_back(name);
            continue;
        }
        if (observed == static_cast<int>(labels_per_row.size()))
            out.non_identifiable.push_back(name);
        out.names.push_back(std::move(name));
        out.columns.push_back(std::move(col));
    }
    return out;
}

void append_columns(DesignMatrix& d, const OneHotColumns& cols) {
    for (size_t c = 0; c < cols.names.size(); ++c) {
        if (cols.columns[c].size() != d.x.size())
            fail("DesignError", "one-hot column length does not match design rows");
        d.feature_names.push_back(cols.names[c]);
        for (size_t i = 0; i < d.x.size(); ++i) d.x[i].push_back(cols.columns[c][i]);
    }
}

} // namespace cohort
