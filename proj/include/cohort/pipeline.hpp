#pragma once

#include <string>

#include "cohort/config.hpp"

namespace cohort {

// The ten pipeline stages. Each reads/writes only its documented files under
// cfg.out_dir, records completion in stages.json, and is idempotent: a rerun
// with identical inputs, config, and seed rewrites byte-identical outputs.
enum class Stage {
    Validate,
    Filter,
    Align,
    SelectTopics,
    FitGlmm,
    TemporalTest,
    Match,
    Robustness,
    Simulate,
    Report,
};

const char* stage_token(Stage s);
Stage parse_stage(const std::string& token);

// Runs one stage. Prerequisite stages must have completed (per stages.json)
// unless cfg.strict_deps is off. Throws Error on any failure; a validation
// stage that finds violations writes validation.json first, then throws
// ValidationFailed.
void run_stage(Stage stage, const RunConfig& cfg);

} // namespace cohort
