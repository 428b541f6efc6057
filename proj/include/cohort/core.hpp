#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cohort/config.hpp"
#include "cohort/types.hpp"

namespace cohort {

// Ingestion: reads the four canonical CSVs, cross-links, densifies the topic
// matrix, and rejects structural problems (duplicate ids, dangling
// references, probabilities outside [0,1]) with file/row/field context.
CohortDataset load_dataset(const std::string& channels_path, const std::string& uploads_path,
                           const std::string& topics_long_path,
                           const std::string& topic_meta_path, const PrecisionAnchors& anchors);

// Canonical serialization (sorted rows, shortest round-trip numbers, long
// topic format with zero entries dropped). load -> save -> load is a fixpoint.
struct SerializedDataset {
    std::string channels, uploads, topics_long, topic_meta;
};
SerializedDataset serialize_dataset(const CohortDataset& ds);
void save_dataset(const CohortDataset& ds, const std::string& dir);

enum class ValidationLevel { Load, PreAlignment };

// Invariant checks; violations are data, not failures. PreAlignment adds the
// checks that only matter once temporal analysis is about to run
// (reference-event presence/kind/position).
std::vector<Violation> validate_dataset(const CohortDataset& ds,
                                        ValidationLevel level = ValidationLevel::Load,
                                        int window_months = 18);

// Drops channels with fewer than min_valid valid uploads (min_valid >= 1).
// Returns the filtered copy plus the exclusion report; input is untouched.
std::pair<CohortDataset, ExclusionReport> filter_channels(const CohortDataset& ds,
                                                          int min_valid);

} // namespace cohort
