#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cohort/config.hpp"

namespace cohort {

// Per-transcript quality measurements. Language/speaker detection happen
// upstream; this module only applies thresholds to the resulting numbers.
struct TranscriptStats {
    int sentence_count = 0;
    double audio_seconds = 0.0;
    double repeated_fraction = 0.0;     // share of text that is repeated runs
    double non_english_fraction = 0.0;
    std::optional<int> speaker_count;   // absent = diarization not run
};

enum class InvalidReason { ShortText, ShortAudio, Hallucination, NonEnglish, TooManySpeakers };
const char* invalid_reason_token(InvalidReason r);

struct ValidityVerdict {
    bool valid = true;
    std::vector<InvalidReason> reasons; // every failing rule, in enum order
};

// Applies all rules and reports every failure, not just the first.
ValidityVerdict classify_transcript(const TranscriptStats& stats, const RuleConfig& thresholds);

struct Sentence {
    std::string text;
    int token_count = 0; // whitespace-delimited tokens
};

struct Chunk {
    std::vector<std::string> sentences; // contiguous run, original order
    int token_count = 0;
    bool oversize = false; // single sentence exceeding the limit, isolated
};

// Greedy sentence-preserving packing: a sentence joins the current chunk iff
// the chunk stays within max_tokens. A single sentence longer than the limit
// errors under Reject and becomes its own flagged chunk under Isolate.
std::vector<Chunk> segment_text(const std::vector<Sentence>& sentences, int max_tokens,
                                RuleConfig::OversizePolicy policy);

int count_tokens(const std::string& text);

} // namespace cohort
