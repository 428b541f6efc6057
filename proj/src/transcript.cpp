#include "cohort/transcript.hpp"

#include "cohort/error.hpp"

namespace cohort {

const char* invalid_reason_token(InvalidReason r) {
    switch (r) {
        case InvalidReason::ShortText: return "short_text";
        case InvalidReason::ShortAudio: return "short_audio";
        case InvalidReason::Hallucination: return "hallucination";
        case InvalidReason::NonEnglish: return "non_english";
        case InvalidReason::TooManySpeakers: return "too_many_speakers";
    }
    return "?";
}

ValidityVerdict classify_transcript(const TranscriptStats& stats, const RuleConfig& t) {
    if (stats.sentence_count < 0) fail("DomainError", "sentence_count must be nonnegative");
    if (stats.audio_seconds < 0) fail("DomainError", "audio_seconds must be nonnegative");
    auto check_fraction = [](double f, const char* name) {
        if (!(f >= 0.0 && f <= 1.0)) fail("DomainError", std::string(name) + " must be in [0,1]");
    };
    check_fraction(stats.repeated_fraction, "repeated_fraction");
    check_fraction(stats.non_english_fraction, "non_english_fraction");

    ValidityVerdict v;
    if (stats.sentence_count < t.min_sentences) v.reasons.push_back(InvalidReason::ShortText);
    if (stats.audio_seconds < t.min_audio_seconds) v.reasons.push_back(InvalidReason::ShortAudio);
    if (stats.repeated_fraction > t.max_repeated_fraction)
        v.reasons.push_back(InvalidReason::Hallucination);
    if (stats.non_english_fraction > t.max_non_english_fraction)
        v.reasons.push_back(InvalidReason::NonEnglish);
    if (stats.speaker_count && *stats.speaker_count > t.max_speakers)
        v.reasons.push_back(InvalidReason::TooManySpeakers);
    v.valid = v.reasons.empty();
    return v;
}

std::vector<Chunk> segment_text(const std::vector<Sentence>& sentences, int max_tokens,
                                RuleConfig::OversizePolicy policy) {
    if (max_tokens < 1) fail("ConfigError", "max_tokens must be >= 1");

    std::vector<Chunk> chunks;
    Chunk cur;
    auto flush = [&] {
        if (!cur.sentences.empty()) chunks.push_back(std::move(cur));
        cur = Chunk{};
    };
    for (size_t i = 0; i < sentences.size(); ++i) {
        const Sentence& s = sentences[i];
        if (s.token_count < 0)
            fail("DomainError", "sentence " + std::to_string(i) + ": negative token_count");
        if (s.token_count > max_tokens) {
            if (policy == RuleConfig::OversizePolicy::Reject)
                fail("OversizeSentence", "sentence " + std::to_string(i) + " has " +
                                             std::to_string(s.token_count) + " tokens > limit " +
                                             std::to_string(max_tokens));
            flush();
            chunks.push_back({{s.text}, s.token_count, true});
            continue;
        }
        if (cur.token_count + s.token_count > max_tokens) flush();
        cur.sentences.push_back(s.text);
        cur.token_count += s.token_count;
    }
    flush();
    return chunks;
}

int count_tokens(const std::string& text) {
    int n = 0;
    bool in_token = false;
    for (char c : text) {
        bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r';
        if (!ws && !in_token) ++n;
        in_token = !ws;
    }
    return n;
}

} // namespace cohort
