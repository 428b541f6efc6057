#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <numeric>
#include <string>
#include <vector>

#include "cohort/error.hpp"
#include "cohort/rng.hpp"
#include "cohort/transcript.hpp"

using namespace cohort;

namespace {

TranscriptStats nominal() {
    TranscriptStats s;
    s.sentence_count = 20;
    s.audio_seconds = 300.0;
    s.repeated_fraction = 0.05;
    s.non_english_fraction = 0.0;
    s.speaker_count = 1;
    return s;
}

std::vector<Sentence> make_sentences(const std::vector<int>& tokens) {
    std::vector<Sentence> out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        std::string text;
        for (int t = 0; t < tokens[i]; ++t)
            text += (t ? " w" : "s") + std::to_string(i);
        out.push_back({text, tokens[i]});
    }
    return out;
}

std::vector<int> chunk_sizes(const std::vector<Chunk>& chunks) {
    std::vector<int> out;
    for (const Chunk& c : chunks) out.push_back(static_cast<int>(c.sentences.size()));
    return out;
}

} // namespace

TEST_CASE("single-rule failures report the one failing reason") {
    RuleConfig cfg;

    TranscriptStats s = nominal();
    s.sentence_count = 2;
    ValidityVerdict v = classify_transcript(s, cfg);
    CHECK_FALSE(v.valid);
    REQUIRE(v.reasons.size() == 1);
    CHECK(v.reasons[0] == InvalidReason::ShortText);

    s = nominal();
    s.repeated_fraction = 0.45;
    v = classify_transcript(s, cfg);
    CHECK_FALSE(v.valid);
    REQUIRE(v.reasons.size() == 1);
    CHECK(v.reasons[0] == InvalidReason::Hallucination);

    s = nominal();
    s.audio_seconds = 59.0;
    v = classify_transcript(s, cfg);
    REQUIRE(v.reasons.size() == 1);
    CHECK(v.reasons[0] == InvalidReason::ShortAudio);

    s = nominal();
    s.non_english_fraction = 0.51;
    v = classify_transcript(s, cfg);
    REQUIRE(v.reasons.size() == 1);
    CHECK(v.reasons[0] == InvalidReason::NonEnglish);

    s = nominal();
    s.speaker_count = 3;
    v = classify_transcript(s, cfg);
    REQUIRE(v.reasons.size() == 1);
    CHECK(v.reasons[0] == InvalidReason::TooManySpeakers);
}

TEST_CASE("boundary values pass: thresholds are strict inequalities where stated") {
    RuleConfig cfg;
    TranscriptStats s;
    s.sentence_count = 3;      // "fewer than three" fails, three passes
    s.audio_seconds = 61.0;
    s.repeated_fraction = 0.0;
    s.non_english_fraction = 0.0;
    ValidityVerdict v = classify_transcript(s, cfg);
    CHECK(v.valid);
    CHECK(v.reasons.empty());

    // Exactly at the fraction thresholds (0.40 / 0.50): "more than" means
    // equality still passes.
    s.repeated_fraction = 0.40;
    s.non_english_fraction = 0.50;
    s.audio_seconds = 60.0;
    CHECK(classify_transcript(s, cfg).valid);

    // speaker_count absent: the rule is skipped entirely.
    s = nominal();
    s.speaker_count.reset();
    CHECK(classify_transcript(s, cfg).valid);

    // speaker_count at the limit passes.
    s.speaker_count = 2;
    CHECK(classify_transcript(s, cfg).valid);
}

TEST_CASE("all failing rules are listed, in enum order") {
    RuleConfig cfg;
    TranscriptStats s;
    s.sentence_count = 1;
    s.audio_seconds = 10.0;
    s.repeated_fraction = 0.9;
    s.non_english_fraction = 0.8;
    s.speaker_count = 5;
    ValidityVerdict v = classify_transcript(s, cfg);
    CHECK_FALSE(v.valid);
    REQUIRE(v.reasons.size() == 5);
    CHECK(v.reasons[0] == InvalidReason::ShortText);
    CHECK(v.reasons[1] == InvalidReason::ShortAudio);
    CHECK(v.reasons[2] == InvalidReason::Hallucination);
    CHECK(v.reasons[3] == InvalidReason::NonEnglish);
    CHECK(v.reasons[4] == InvalidReason::TooManySpeakers);
}

TEST_CASE("classification is monotone in every failing direction") {
    RuleConfig cfg;
    Rng rng = Rng::from(7);
    for (int trial = 0; trial < 200; ++trial) {
        TranscriptStats s;
        s.sentence_count = static_cast<int>(rng.uniform_int(0, 10));
        s.audio_seconds = rng.uniform(0.0, 200.0);
        s.repeated_fraction = rng.next_double();
        s.non_english_fraction = rng.next_double();
        if (rng.next_double() < 0.7) s.speaker_count = static_cast<int>(rng.uniform_int(0, 5));

        bool before = classify_transcript(s, cfg).valid;

        TranscriptStats worse = s;
        switch (trial % 5) {
            case 0: worse.sentence_count = std::max(0, worse.sentence_count - 1); break;
            case 1: worse.audio_seconds = std::max(0.0, worse.audio_seconds - 30.0); break;
            case 2: worse.repeated_fraction = std::min(1.0, worse.repeated_fraction + 0.2); break;
            case 3:
                worse.non_english_fraction = std::min(1.0, worse.non_english_fraction + 0.2);
                break;
            case 4: worse.speaker_count = worse.speaker_count.value_or(0) + 2; break;
        }
        bool after = classify_transcript(worse, cfg).valid;
        if (!before) CHECK_FALSE(after); // worsening never rescues an invalid transcript
    }
}

TEST_CASE("invalid_reason_token names every reason") {
    CHECK(std::string(invalid_reason_token(InvalidReason::ShortText)) == "short_text");
    CHECK(std::string(invalid_reason_token(InvalidReason::ShortAudio)) == "short_audio");
    CHECK(std::string(invalid_reason_token(InvalidReason::Hallucination)) == "hallucination");
    CHECK(std::string(invalid_reason_token(InvalidReason::NonEnglish)) == "non_english");
    CHECK(std::string(invalid_reason_token(InvalidReason::TooManySpeakers)) ==
          "too_many_speakers");
}

TEST_CASE("segment_text worked examples") {
    auto policy = RuleConfig::OversizePolicy::Reject;

    // 60 then 50 at limit 80: 50 does not fit after 60.
    auto chunks = segment_text(make_sentences({60, 50}), 80, policy);
    REQUIRE(chunks.size() == 2);
    CHECK(chunks[0].token_count == 60);
    CHECK(chunks[1].token_count == 50);
    CHECK(chunk_sizes(chunks) == std::vector<int>{1, 1});

    // 30,30,30 at 80: greedy packs two then one.
    chunks = segment_text(make_sentences({30, 30, 30}), 80, policy);
    REQUIRE(chunks.size() == 2);
    CHECK(chunks[0].token_count == 60);
    CHECK(chunks[1].token_count == 30);
    CHECK(chunk_sizes(chunks) == std::vector<int>{2, 1});

    // Single sentence passes through identically.
    std::vector<Sentence> one = make_sentences({10});
    chunks = segment_text(one, 80, policy);
    REQUIRE(chunks.size() == 1);
    REQUIRE(chunks[0].sentences.size() == 1);
    CHECK(chunks[0].sentences[0] == one[0].text);
    CHECK(chunks[0].token_count == 10);
    CHECK_FALSE(chunks[0].oversize);

    CHECK(segment_text({}, 80, policy).empty());
}

TEST_CASE("segmentation preserves tokens and order; chunks respect the limit") {
    Rng rng = Rng::from(13);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> tokens;
        int n = static_cast<int>(rng.uniform_int(1, 40));
        for (int i = 0; i < n; ++i) tokens.push_back(static_cast<int>(rng.uniform_int(1, 80)));
        auto sentences = make_sentences(tokens);
        auto chunks = segment_text(sentences, 80, RuleConfig::OversizePolicy::Reject);

        int total = 0;
        std::vector<std::string> flattened;
        for (const Chunk& c : chunks) {
            CHECK(c.token_count <= 80);
            int sum = 0;
            for (const std::string& s : c.sentences) flattened.push_back(s);
            for (size_t i = 0; i < c.sentences.size(); ++i) sum += count_tokens(c.sentences[i]);
            CHECK(sum == c.token_count);
            total += c.token_count;
        }
        CHECK(total == std::accumulate(tokens.begin(), tokens.end(), 0));
        REQUIRE(flattened.size() == sentences.size());
        for (size_t i = 0; i < sentences.size(); ++i) CHECK(flattened[i] == sentences[i].text);
    }
}

TEST_CASE("oversize sentences: reject errors with the index, isolate flags") {
    auto sentences = make_sentences({20, 95, 10});

    try {
        segment_text(sentences, 80, RuleConfig::OversizePolicy::Reject);
        FAIL("expected oversize error");
    } catch (const Error& e) {
        CHECK(e.code() == "OversizeSentence");
        CHECK(std::string(e.message()).find("1") != std::string::npos); // sentence index
    }

    auto chunks = segment_text(sentences, 80, RuleConfig::OversizePolicy::Isolate);
    REQUIRE(chunks.size() == 3);
    CHECK_FALSE(chunks[0].oversize);
    CHECK(chunks[1].oversize);
    CHECK(chunks[1].token_count == 95);
    REQUIRE(chunks[1].sentences.size() == 1);
    CHECK_FALSE(chunks[2].oversize);
    CHECK(chunks[2].token_count == 10);

    CHECK_THROWS_AS(segment_text(sentences, 0, RuleConfig::OversizePolicy::Reject), Error);
}

TEST_CASE("count_tokens splits on whitespace runs") {
    CHECK(count_tokens("one two three") == 3);
    CHECK(count_tokens("  padded   words \t tabs\nnewline ") == 4);
    CHECK(count_tokens("") == 0);
    CHECK(count_tokens("   ") == 0);
    CHECK(count_tokens("single") == 1);
}
