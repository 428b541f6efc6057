#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cohort/config.hpp"
#include "cohort/types.hpp"

namespace cohort {

// True parameters behind a generated cohort, for oracle comparisons.
struct GroundTruth {
    double sigma2 = 0.0, phi = 0.0;
    // Per topic: the linear-predictor coefficients in design order
    // (intercept, time, group main effects, group x time interactions).
    std::vector<std::vector<double>> beta;
    std::vector<std::string> beta_names;
    std::vector<int> informative_topics;
    std::map<std::string, double> random_intercepts; // channel_id -> b_i
    uint64_t seed = 0;
};

struct SynthResult {
    CohortDataset dataset;
    GroundTruth truth;
};

// Deterministic synthetic cohort: demographics, reference events, Poisson-
// process upload times, and per-upload topic probabilities drawn
// Beta(mu*phi, (1-mu)*phi) where logit(mu) is the mixed-model linear
// predictor with the channel's Gaussian random intercept. Byte-identical
// output for a given (cfg, seed).
SynthResult generate_cohort(const SynthConfig& cfg, uint64_t seed);

// Marks `informative_topics` to receive a group-dependent pre-event logit
// shift of `effect_size` for the treatment group; all other topics stay
// exchangeable across groups.
SynthConfig inject_selection_signal(SynthConfig cfg, std::vector<int> informative_topics,
                                    double effect_size);

std::string ground_truth_to_json(const GroundTruth& t);

} // namespace cohort
