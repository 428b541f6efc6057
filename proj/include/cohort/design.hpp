#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "cohort/temporal.hpp"
#include "cohort/types.hpp"

namespace cohort {

// Row-major design with named feature columns. The intercept is implicit:
// every fitter prepends it, so feature_names never contains it.
struct DesignMatrix {
    std::vector<std::string> row_ids;
    std::vector<std::string> feature_names;
    std::vector<std::vector<double>> x; // n rows of feature_names.size() values
    std::vector<int> y;                 // 1 = treatment (AttemptedDuring)

    size_t n() const { return x.size(); }
    size_t p() const { return feature_names.size(); }
    int column(const std::string& name) const; // -1 when absent
};

// Structural checks shared by the fitters: rectangular, unique names, both
// outcome classes present, no constant columns.
void validate_design(const DesignMatrix& d);

// Which control population joins the treatment rows.
enum class ControlSelector { Before, MajorLifeEvent, Matches, Pooled };
const char* control_selector_token(ControlSelector s);
ControlSelector parse_control_selector(const std::string& token);

// One row per AttemptedDuring or selected-control channel; one feature per
// topic holding the channel's pre-event mean probability. Channels without a
// qualifying pre-event upload are left out (no pre-side mean exists).
DesignMatrix build_pre_event_design(const CohortDataset& ds, const std::vector<int>& topic_ids,
                                    ControlSelector selector,
                                    const std::map<std::string, ReferenceEvent>& events);

// One-hot expansion of one categorical factor over per-row label sets.
// Columns observed in fewer than 2 rows are dropped (reported); a column set
// in every row is kept but reported as non-identifiable with the intercept.
struct OneHotColumns {
    std::vector<std::string> names;            // "<factor>=<label>"
    std::vector<std::vector<double>> columns;  // column-major, one per name
    std::vector<std::string> dropped;
    std::vector<std::string> non_identifiable;
};
OneHotColumns one_hot(const std::string& factor,
                      const std::vector<std::set<std::string>>& labels_per_row);

// Appends columns (e.g. from one_hot) to a design, preserving row order.
void append_columns(DesignMatrix& d, const OneHotColumns& cols);

} // namespace cohort
