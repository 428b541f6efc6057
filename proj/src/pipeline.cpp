#include "cohort/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <vector>

#include <json.hpp>

#include "cohort/beta_glmm.hpp"
#include "cohort/core.hpp"
#include "cohort/csv.hpp"
#include "cohort/design.hpp"
#include "cohort/error.hpp"
#include "cohort/logistic.hpp"
#include "cohort/matching.hpp"
#include "cohort/parallel.hpp"
#include "cohort/robustness.hpp"
#include "cohort/stats.hpp"
#include "cohort/synth.hpp"
#include "cohort/temporal.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cohort {

namespace {

const std::map<std::string, Stage>& stage_names() {
    static const std::map<std::string, Stage> names = {
        {"validate", Stage::Validate},       {"filter", Stage::Filter},
        {"align", Stage::Align},             {"select-topics", Stage::SelectTopics},
        {"fit-glmm", Stage::FitGlmm},        {"temporal-test", Stage::TemporalTest},
        {"match", Stage::Match},             {"robustness", Stage::Robustness},
        {"simulate", Stage::Simulate},       {"report", Stage::Report},
    };
    return names;
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
    return (fs::path(cfg.out_dir) / name).string();
}

// --- stage stamps ------------------------------------------------------------

json read_stamps(const RunConfig& cfg) {
    std::string path = out_path(cfg, "stages.json");
    if (!fs::exists(path)) return json::object();
    json j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded() || !j.is_object())
        fail("SchemaError", path + ": not a JSON object");
    return j;
}

void stamp_stage(const RunConfig& cfg, Stage s) {
    json j = read_stamps(cfg);
    j[stage_token(s)] = true;
    write_file_atomic(out_path(cfg, "stages.json"), j.dump(2) + "\n");
}

void require_stages(const RunConfig& cfg, Stage current, std::initializer_list<Stage> deps) {
    if (!cfg.strict_deps) return;
    json stamps = read_stamps(cfg);
    for (Stage d : deps) {
        const char* name = stage_token(d);
        if (!stamps.contains(name) || stamps[name] != true)
            fail("MissingDependency", std::string("stage '") + stage_token(current) +
                                          "' requires '" + name +
                                          "' to have completed in " + cfg.out_dir +
                                          " (rerun it, or pass --stage-deps force)");
    }
}

// --- input loading -----------------------------------------------------------

struct InputPaths {
    std::string channels, uploads, topics_long, topic_meta;
};

InputPaths resolve_inputs(const RunConfig& cfg) {
    if (!cfg.channels_path.empty()) {
        if (cfg.uploads_path.empty() || cfg.topics_long_path.empty() ||
            cfg.topic_meta_path.empty())
            fail("ConfigError", "when 'channels' is set, 'uploads', 'topics_long' and "
                                "'topic_meta' must be too");
        return {cfg.channels_path, cfg.uploads_path, cfg.topics_long_path, cfg.topic_meta_path};
    }
    // No explicit inputs: fall back to a simulated dataset in out_dir.
    std::string dir = (fs::path(cfg.out_dir) / "synth_inputs").string();
    InputPaths p{(fs::path(dir) / "channels.csv").string(),
                 (fs::path(dir) / "uploads.csv").string(),
                 (fs::path(dir) / "topics_long.csv").string(),
                 (fs::path(dir) / "topic_meta.csv").string()};
    if (!fs::exists(p.channels))
        fail("ConfigError", "no input paths configured and no simulated dataset at " + dir +
                                " (run the simulate stage or set the input keys)");
    return p;
}

CohortDataset load_raw(const RunConfig& cfg) {
    InputPaths p = resolve_inputs(cfg);
    return load_dataset(p.channels, p.uploads, p.topics_long, p.topic_meta, cfg.anchors);
}

CohortDataset load_filtered(const RunConfig& cfg) {
    std::string ch = out_path(cfg, "filtered_channels.csv");
    if (!fs::exists(ch))
        fail("MissingDependency", "no filtered dataset in " + cfg.out_dir +
                                      " (run the filter stage first)");
    return load_dataset(ch, out_path(cfg, "filtered_uploads.csv"),
                        out_path(cfg, "filtered_topics_long.csv"),
                        out_path(cfg, "filtered_topic_meta.csv"), cfg.anchors);
}

std::vector<int> topic_list(const RunConfig& cfg, const CohortDataset& ds) {
    if (!cfg.topic_ids.empty()) {
        for (int t : cfg.topic_ids)
            if (ds.topic_pos(t) < 0)
                fail("UnknownTopic", "configured topic " + std::to_string(t) +
                                         " is not in the dataset");
        return cfg.topic_ids;
    }
    std::vector<int> all;
    for (const TopicMeta& t : ds.topics) all.push_back(t.topic_id);
    return all;
}

// --- events.csv --------------------------------------------------------------

void write_events(const RunConfig& cfg, const std::map<std::string, ReferenceEvent>& events) {
    CsvBuilder b({"channel_id", "kind", "date", "precision"});
    for (const auto& [id, ev] : events) {
        b.cell(id)
            .cell(std::string(event_kind_token(ev.kind)))
            .cell(format_date(ev.date))
            .cell(std::string(event_precision_token(ev.precision)))
            .endrow();
    }
    write_file_atomic(out_path(cfg, "events.csv"), b.str());
}

// events.csv holds computed events, so unlike the loader it accepts the
// synthetic_midpoint kind.
EventKind parse_stored_event_kind(const std::string& tok, const RowView& row) {
    if (tok == "synthetic_midpoint") return EventKind::SyntheticMidpoint;
    if (tok == "attempt") return EventKind::Attempt;
    if (tok == "major_life_event") return EventKind::MajorLifeEvent;
    if (tok == "external") return EventKind::External;
    row.fail_field("kind", "unknown event kind '" + tok + "'");
}

std::map<std::string, ReferenceEvent> read_events(const RunConfig& cfg) {
    std::string path = out_path(cfg, "events.csv");
    if (!fs::exists(path))
        fail("MissingDependency", "no events.csv in " + cfg.out_dir +
                                      " (run the align stage first)");
    Csv csv = read_csv(path);
    int c_id = csv.require_col("channel_id");
    int c_kind = csv.require_col("kind");
    int c_date = csv.require_col("date");
    int c_prec = csv.require_col("precision");
    std::map<std::string, ReferenceEvent> events;
    for (size_t i = 0; i < csv.rows.size(); ++i) {
        RowView row(csv, i);
        ReferenceEvent ev;
        ev.kind = parse_stored_event_kind(row.str(c_kind, "kind"), row);
        ev.date = row.date(c_date, "date");
        ev.precision = parse_event_precision(row.str(c_prec, "precision"));
        events[row.str(c_id, "channel_id")] = ev;
    }
    return events;
}

// --- JSON helpers ------------------------------------------------------------

json test_result_json(const TestResult& r) {
    json j;
    j["kind"] = test_kind_token(r.kind);
    j["statistic"] = r.statistic;
    j["df"] = r.df;
    j["p_value"] = r.p_value;
    if (r.p_adjusted) j["p_adjusted"] = *r.p_adjusted;
    return j;
}

std::string opt_cell(const std::optional<double>& v) { return v ? fmt_double(*v) : ""; }

// --- stages ------------------------------------------------------------------

void stage_validate(const RunConfig& cfg) {
    CohortDataset ds = load_raw(cfg);
    std::vector<Violation> violations =
        validate_dataset(ds, ValidationLevel::PreAlignment, cfg.temporal.window_months);
    json j;
    j["channels"] = ds.channels.size();
    j["uploads"] = ds.uploads.size();
    j["topics"] = ds.topics.size();
    j["violations"] = json::array();
    for (const Violation& v : violations)
        j["violations"].push_back({{"code", v.code}, {"where", v.where}, {"detail", v.detail}});
    write_file_atomic(out_path(cfg, "validation.json"), j.dump(2) + "\n");
    if (!violations.empty())
        fail("ValidationFailed", std::to_string(violations.size()) +
                                     " violation(s); see validation.json");
    stamp_stage(cfg, Stage::Validate);
}

void stage_filter(const RunConfig& cfg) {
    require_stages(cfg, Stage::Filter, {Stage::Validate});
    CohortDataset ds = load_raw(cfg);
    auto [filtered, report] = filter_channels(ds, cfg.min_valid_uploads);

    SerializedDataset s = serialize_dataset(filtered);
    write_file_atomic(out_path(cfg, "filtered_channels.csv"), s.channels);
    write_file_atomic(out_path(cfg, "filtered_uploads.csv"), s.uploads);
    write_file_atomic(out_path(cfg, "filtered_topics_long.csv"), s.topics_long);
    write_file_atomic(out_path(cfg, "filtered_topic_meta.csv"), s.topic_meta);

    CsvBuilder ex({"channel_id", "group", "reason", "detail"});
    for (const Exclusion& e : report.excluded)
        ex.cell(e.channel_id)
            .cell(std::string(group_token(e.group)))
            .cell(e.reason)
            .cell(e.detail)
            .endrow();
    write_file_atomic(out_path(cfg, "exclusions.csv"), ex.str());

    json j;
    j["min_valid_uploads"] = cfg.min_valid_uploads;
    j["excluded"] = report.excluded.size();
    j["retained_total"] = report.retained_total;
    j["retained_per_group"] = json::object();
    for (const auto& [g, n] : report.retained_per_group)
        j["retained_per_group"][group_token(g)] = n;
    write_file_atomic(out_path(cfg, "filter_report.json"), j.dump(2) + "\n");
    stamp_stage(cfg, Stage::Filter);
}

void stage_align(const RunConfig& cfg) {
    require_stages(cfg, Stage::Align, {Stage::Filter});
    CohortDataset ds = load_filtered(cfg);
    std::map<std::string, ReferenceEvent> events = assign_all_events(ds);
    std::vector<int> topics = topic_list(cfg, ds);

    std::vector<TopicAlignment> aligned(topics.size());
    parallel_for(topics.size(), cfg.parallel, [&](size_t i) {
        aligned[i] = align_topic(ds, topics[i], cfg.temporal, events);
    });

    CsvBuilder ab({"topic_id", "channel_id", "bin", "value"});
    CsvBuilder cb({"topic_id", "group", "bin", "mean", "se", "n"});
    CsvBuilder sb({"topic_id", "channel_id", "reason"});
    for (const TopicAlignment& ta : aligned) {
        for (const auto& [g, series] : ta.by_group) {
            for (const AlignedSeries& s : series)
                for (int slot = 0; slot < kBins; ++slot)
                    ab.cell(ta.topic_id)
                        .cell(s.channel_id)
                        .cell(bin_label(slot))
                        .cell(s.at_slot(slot))
                        .endrow();
            if (series.size() >= 2) {
                for (const GroupCurvePoint& p : aggregate_group(series))
                    cb.cell(ta.topic_id)
                        .cell(std::string(group_token(g)))
                        .cell(p.bin_index)
                        .cell(p.mean)
                        .cell(p.se)
                        .cell(p.n)
                        .endrow();
            }
        }
        for (const auto& [channel, reason] : ta.skipped)
            sb.cell(ta.topic_id).cell(channel).cell(reason).endrow();
    }
    write_events(cfg, events);
    write_file_atomic(out_path(cfg, "aligned.csv"), ab.str());
    write_file_atomic(out_path(cfg, "group_curves.csv"), cb.str());
    write_file_atomic(out_path(cfg, "align_skips.csv"), sb.str());
    stamp_stage(cfg, Stage::Align);
}

void stage_select_topics(const RunConfig& cfg) {
    require_stages(cfg, Stage::SelectTopics, {Stage::Align});
    CohortDataset ds = load_filtered(cfg);
    std::map<std::string, ReferenceEvent> events = read_events(cfg);
    std::vector<int> topics = topic_list(cfg, ds);

    json report;
    report["selectors"] = json::object();
    CsvBuilder lp({"selector", "lambda", "feature", "coef"});

    for (const std::string& name : cfg.selection_selectors) {
        ControlSelector selector = parse_control_selector(name);
        json sj;
        try {
            DesignMatrix d = build_pre_event_design(ds, topics, selector, events);
            sj["rows"] = d.n();
            sj["features"] = d.feature_names;

            auto [trace, fit] = stepwise_select(d, cfg.stepwise);
            json steps = json::array();
            for (const SelectionStep& st : trace.steps)
                steps.push_back({{"action", st.action},
                                 {"feature", st.feature},
                                 {"criterion_before", st.criterion_before},
                                 {"criterion_after", st.criterion_after}});
            sj["stepwise"] = {{"steps", steps},
                              {"selected", trace.final_features},
                              {"aic", fit.aic()},
                              {"converged", fit.converged}};
            json coefs = json::object();
            for (size_t i = 0; i < fit.names.size(); ++i) coefs[fit.names[i]] = fit.coef[i];
            sj["stepwise"]["coefficients"] = coefs;

            LassoPath path = lasso_logistic(d, cfg.lasso);
            size_t best = cv_lasso_best(d, cfg.lasso, cfg.seed);
            const LassoSolution& sol = path.solutions[best];
            std::set<std::string> lasso_set, step_set(trace.final_features.begin(),
                                                      trace.final_features.end());
            json support = json::array();
            for (int fidx : sol.support) {
                support.push_back(d.feature_names[static_cast<size_t>(fidx)]);
                lasso_set.insert(d.feature_names[static_cast<size_t>(fidx)]);
            }
            sj["lasso"] = {{"lambda", sol.lambda},
                           {"lambda_index", best},
                           {"support", support},
                           {"kkt_violation", sol.kkt_violation}};
            if (!step_set.empty() || !lasso_set.empty())
                sj["lasso"]["agreement_jaccard"] = jaccard(step_set, lasso_set);

            for (size_t li = 0; li < path.solutions.size(); ++li) {
                const LassoSolution& ls = path.solutions[li];
                for (int fidx : ls.support)
                    lp.cell(name)
                        .cell(ls.lambda)
                        .cell(d.feature_names[static_cast<size_t>(fidx)])
                        .cell(ls.coef[static_cast<size_t>(fidx) + 1])
                        .endrow();
            }
        } catch (const Error& e) {
            sj["error"] = {{"code", e.code()}, {"message", e.message()}};
        }
        report["selectors"][name] = sj;
    }
    write_file_atomic(out_path(cfg, "selection_report.json"), report.dump(2) + "\n");
    write_file_atomic(out_path(cfg, "lasso_path.csv"), lp.str());

    // Word-cloud scores when a segments file is configured: topic_id,text
    // rows scored tf-idf within each topic's segment collection.
    if (!cfg.segments_path.empty()) {
        Csv csv = read_csv(cfg.segments_path);
        int c_topic = csv.require_col("topic_id");
        int c_text = csv.require_col("text");
        std::map<int, std::vector<std::string>> segments;
        for (size_t i = 0; i < csv.rows.size(); ++i) {
            RowView row(csv, i);
            segments[static_cast<int>(row.i64(c_topic, "topic_id"))].push_back(
                row.str(c_text, "text"));
        }
        auto scores = tfidf(segments);
        CsvBuilder wb({"topic_id", "word", "score"});
        for (const auto& [topic, words] : scores) {
            size_t limit = std::min<size_t>(words.size(), 50);
            for (size_t i = 0; i < limit; ++i)
                wb.cell(topic).cell(words[i].first).cell(words[i].second).endrow();
        }
        write_file_atomic(out_path(cfg, "word_scores.csv"), wb.str());
    }
    stamp_stage(cfg, Stage::SelectTopics);
}

void stage_fit_glmm(const RunConfig& cfg) {
    require_stages(cfg, Stage::FitGlmm, {Stage::Align});
    CohortDataset ds = load_filtered(cfg);
    std::map<std::string, ReferenceEvent> events = read_events(cfg);
    std::vector<int> topics = topic_list(cfg, ds);

    TopicBatteryResult battery = run_topic_battery(ds, topics, events, cfg.glmm, cfg.parallel);

    CsvBuilder rb({"topic_id", "term", "family", "estimate", "odds_ratio", "se", "z", "p_value",
                   "p_adjusted"});
    for (const GlmmFit& fit : battery.fits) {
        for (size_t t = 0; t < fit.terms.size(); ++t) {
            rb.cell(fit.topic_id)
                .cell(fit.terms[t])
                .cell(std::string(term_family(fit.terms[t])))
                .cell(fit.estimates[t])
                .cell(odds_ratio(fit.estimates[t]))
                .cell(fit.se[t])
                .cell(fit.z[t])
                .cell(fit.p[t]);
            rb.cell(opt_cell(fit.p_adjusted[t])).endrow();
        }
    }
    write_file_atomic(out_path(cfg, "glmm_results.csv"), rb.str());

    json meta;
    meta["q_level"] = cfg.glmm.q_level;
    meta["quad_order"] = cfg.glmm.quad_order;
    meta["topics"] = json::object();
    for (const GlmmFit& fit : battery.fits) {
        meta["topics"][std::to_string(fit.topic_id)] = {
            {"sigma2", fit.sigma2},
            {"phi", fit.phi},
            {"log_likelihood", fit.log_likelihood},
            {"converged", fit.converged},
            {"sigma2_boundary", fit.sigma2_boundary},
            {"iterations", fit.iterations},
            {"dropped_covariates", fit.dropped_covariates},
        };
    }
    meta["failures"] = json::object();
    for (const auto& [topic, message] : battery.failures)
        meta["failures"][std::to_string(topic)] = message;
    write_file_atomic(out_path(cfg, "model_meta.json"), meta.dump(2) + "\n");
    stamp_stage(cfg, Stage::FitGlmm);
}

void stage_temporal_test(const RunConfig& cfg) {
    require_stages(cfg, Stage::TemporalTest, {Stage::Align});
    CohortDataset ds = load_filtered(cfg);

    // Rebuild the aligned series from the align stage's output file.
    std::string apath = out_path(cfg, "aligned.csv");
    if (!fs::exists(apath))
        fail("MissingDependency", "no aligned.csv in " + cfg.out_dir +
                                      " (run the align stage first)");
    Csv csv = read_csv(apath);
    int c_topic = csv.require_col("topic_id");
    int c_ch = csv.require_col("channel_id");
    int c_bin = csv.require_col("bin");
    int c_val = csv.require_col("value");
    std::map<std::pair<int, std::string>, AlignedSeries> series;
    for (size_t i = 0; i < csv.rows.size(); ++i) {
        RowView row(csv, i);
        int topic = static_cast<int>(row.i64(c_topic, "topic_id"));
        std::string channel = row.str(c_ch, "channel_id");
        auto& s = series[{topic, channel}];
        s.topic_id = topic;
        s.channel_id = channel;
        int slot = bin_slot(static_cast<int>(row.i64(c_bin, "bin")));
        double v = row.f64(c_val, "value");
        if (slot < 15)
            s.pre[static_cast<size_t>(slot)] = v;
        else
            s.post[static_cast<size_t>(slot - 15)] = v;
    }

    // Collect per (topic, group) preserving the file's channel order.
    std::map<int, std::vector<std::pair<Group, std::vector<AlignedSeries>>>> by_topic;
    for (const auto& [key, s] : series) {
        const Channel* ch = ds.channel(s.channel_id);
        if (ch == nullptr)
            fail("DanglingReference", "aligned.csv channel '" + s.channel_id +
                                          "' is not in the filtered dataset");
        auto& groups = by_topic[key.first];
        if (groups.empty())
            for (Group g : all_groups()) groups.emplace_back(g, std::vector<AlignedSeries>{});
        groups[static_cast<size_t>(ch->group)].second.push_back(s);
    }

    CsvBuilder tb({"topic_id", "battery", "group", "bin", "statistic", "df", "p_value",
                   "p_adjusted", "rejected"});
    json notices = json::array();
    auto emit = [&](int topic, const std::string& battery, const std::string& group,
                    const std::vector<BinTest>& cells) {
        for (const BinTest& c : cells) {
            tb.cell(topic).cell(battery).cell(group).cell(c.bin_index);
            if (c.result) {
                tb.cell(c.result->statistic)
                    .cell(c.result->df)
                    .cell(c.result->p_value)
                    .cell(opt_cell(c.result->p_adjusted));
            } else {
                tb.cell(std::string()).cell(std::string()).cell(std::string()).cell(
                    std::string());
            }
            tb.cell(c.rejected ? 1 : 0).endrow();
        }
    };

    for (const auto& [topic, groups] : by_topic) {
        for (const auto& [g, aligned] : groups) {
            if (aligned.size() < 2) {
                if (!aligned.empty())
                    notices.push_back({{"topic_id", topic},
                                       {"group", group_token(g)},
                                       {"notice", "fewer than 2 aligned channels"}});
                continue;
            }
            emit(topic, "within", group_token(g),
                 within_group_test(aligned, cfg.temporal.baseline_bin, cfg.temporal.q_level));
        }
        const auto& treatment = groups[static_cast<size_t>(Group::AttemptedDuring)].second;
        std::vector<std::pair<Group, std::vector<AlignedSeries>>> controls;
        for (const auto& [g, aligned] : groups)
            if (g != Group::AttemptedDuring && aligned.size() >= 2)
                controls.emplace_back(g, aligned);
        if (treatment.size() >= 2 && !controls.empty()) {
            for (const BinTest& c :
                 between_group_test(treatment, controls, cfg.temporal.q_level)) {
                tb.cell(topic).cell(std::string("between")).cell(
                    std::string(group_token(c.control)));
                tb.cell(c.bin_index);
                if (c.result) {
                    tb.cell(c.result->statistic)
                        .cell(c.result->df)
                        .cell(c.result->p_value)
                        .cell(opt_cell(c.result->p_adjusted));
                } else {
                    tb.cell(std::string()).cell(std::string()).cell(std::string()).cell(
                        std::string());
                }
                tb.cell(c.rejected ? 1 : 0).endrow();
            }
        } else {
            notices.push_back({{"topic_id", topic},
                               {"group", "between"},
                               {"notice", "between-group battery skipped: too few channels"}});
        }
    }
    write_file_atomic(out_path(cfg, "temporal_tests.csv"), tb.str());
    json meta;
    meta["baseline_bin"] = cfg.temporal.baseline_bin;
    meta["q_level"] = cfg.temporal.q_level;
    meta["notices"] = notices;
    write_file_atomic(out_path(cfg, "temporal_meta.json"), meta.dump(2) + "\n");
    stamp_stage(cfg, Stage::TemporalTest);
}

void stage_match(const RunConfig& cfg) {
    require_stages(cfg, Stage::Match, {Stage::Filter});
    CohortDataset ds = load_filtered(cfg);

    std::vector<MatchFeatures> treated, pool;
    for (size_t i = 0; i < ds.channels.size(); ++i) {
        if (ds.channels[i].group == Group::AttemptedDuring)
            treated.push_back(compute_match_features(ds, static_cast<int>(i)));
        else if (ds.channels[i].group == Group::ControlMatches)
            pool.push_back(compute_match_features(ds, static_cast<int>(i)));
    }
    if (treated.empty() || pool.empty())
        fail("DesignError", "matching needs attempted_during channels and a control_matches pool");

    PropensityResult prop = estimate_propensity(treated, pool);
    std::vector<std::pair<std::string, double>> tscores, pscores;
    for (const MatchFeatures& f : treated) tscores.emplace_back(f.channel_id,
                                                                prop.scores.at(f.channel_id));
    for (const MatchFeatures& f : pool) pscores.emplace_back(f.channel_id,
                                                             prop.scores.at(f.channel_id));

    MatchSet candidates = knn_match(tscores, pscores, cfg.match.k, cfg.match.caliper);

    std::map<std::string, MatchFeatures> features;
    for (const MatchFeatures& f : treated) features[f.channel_id] = f;
    for (const MatchFeatures& f : pool) features[f.channel_id] = f;

    StubScorer stub;
    HttpScorer http(cfg.match.scorer);
    MatchScorer& scorer = cfg.match.scorer.kind == ScorerConfig::Kind::Http
                              ? static_cast<MatchScorer&>(http)
                              : static_cast<MatchScorer&>(stub);
    MatchSet refined = refine_matches(candidates, features, scorer, cfg.match, cfg.parallel);

    CsvBuilder mb({"treatment_id", "control_id", "propensity_treatment", "propensity_control",
                   "knn_rank", "refinement_score", "retained"});
    for (const MatchEntry& e : refined.entries) {
        mb.cell(e.treatment_id)
            .cell(e.control_id)
            .cell(e.propensity_treatment)
            .cell(e.propensity_control)
            .cell(e.knn_rank);
        mb.cell(e.refinement_score ? std::to_string(*e.refinement_score) : std::string());
        mb.cell(e.retained ? 1 : 0).endrow();
    }
    write_file_atomic(out_path(cfg, "matches.csv"), mb.str());

    CsvBuilder bb({"feature", "smd_before", "smd_after"});
    for (const BalanceRow& r : balance_report(treated, pool, refined))
        bb.cell(r.feature).cell(opt_cell(r.smd_before)).cell(opt_cell(r.smd_after)).endrow();
    write_file_atomic(out_path(cfg, "balance.csv"), bb.str());

    json meta;
    meta["k"] = cfg.match.k;
    meta["refine_threshold"] = cfg.match.refine_threshold;
    meta["scorer"] = cfg.match.scorer.kind == ScorerConfig::Kind::Http ? "http" : "stub";
    meta["lasso_fallback"] = prop.lasso_fallback;
    meta["short_pool"] = refined.short_pool;
    meta["unmatched"] = refined.unmatched;
    int retained = 0;
    for (const MatchEntry& e : refined.entries) retained += e.retained;
    meta["retained_pairs"] = retained;
    write_file_atomic(out_path(cfg, "match_meta.json"), meta.dump(2) + "\n");
    stamp_stage(cfg, Stage::Match);
}

void stage_robustness(const RunConfig& cfg) {
    require_stages(cfg, Stage::Robustness, {Stage::Align});
    CohortDataset ds = load_filtered(cfg);
    std::vector<int> topics = topic_list(cfg, ds);

    json report;

    // D.2.2-style calendar-anchored control analysis.
    Date fixed = parse_date(cfg.external_event_date);
    json ext;
    ext["fixed_date"] = format_date(fixed);
    ext["topics"] = json::array();
    for (int topic : topics) {
        json tj;
        tj["topic_id"] = topic;
        try {
            ExternalEventResult r = external_event_analysis(ds, topic, fixed, cfg.temporal);
            tj["cells"] = r.tests.size();
            tj["rejections"] = r.rejections;
            tj["skipped_channels"] = r.skipped.size();
        } catch (const Error& e) {
            tj["error"] = {{"code", e.code()}, {"message", e.message()}};
        }
        ext["topics"].push_back(tj);
    }
    report["external_event"] = ext;

    // D.2.3-style engagement comparisons.
    json eng = json::array();
    for (const EngagementMetric& m : engagement_comparison(ds, cfg.temporal.q_level)) {
        json mj;
        mj["metric"] = m.metric;
        if (m.skipped) {
            mj["skipped"] = true;
            mj["notice"] = m.notice;
            eng.push_back(mj);
            continue;
        }
        mj["boxes"] = json::array();
        for (const auto& [g, b] : m.boxes)
            mj["boxes"].push_back({{"group", group_token(g)},
                                   {"n", b.n},
                                   {"q1", b.q1},
                                   {"median", b.median},
                                   {"q3", b.q3},
                                   {"whisker_lo", b.whisker_lo},
                                   {"whisker_hi", b.whisker_hi},
                                   {"min", b.min},
                                   {"max", b.max}});
        mj["tests"] = json::array();
        for (const GroupPairTest& t : m.tests) {
            json tj;
            tj["a"] = group_token(t.a);
            tj["b"] = group_token(t.b);
            if (t.result) tj["result"] = test_result_json(*t.result);
            tj["rejected"] = t.rejected;
            mj["tests"].push_back(tj);
        }
        eng.push_back(mj);
    }
    report["engagement"] = eng;

    // D.2.4-style activity-gap analysis over the two anchored groups.
    json gaps = json::array();
    try {
        for (const IntervalReport& r : activity_gap_analysis(
                 ds, {Group::AttemptedDuring, Group::ControlMajorLifeEvent})) {
            json rj;
            rj["kind"] = interval_kind_token(r.kind);
            rj["groups"] = json::array();
            for (const IntervalGroupStats& s : r.groups)
                rj["groups"].push_back({{"group", group_token(s.group)},
                                        {"n", s.n},
                                        {"mean", s.mean},
                                        {"median", s.median},
                                        {"sd", s.sd},
                                        {"min", s.min},
                                        {"max", s.max}});
            if (r.test) rj["test"] = test_result_json(*r.test);
            gaps.push_back(rj);
        }
        report["activity_gaps"] = gaps;
    } catch (const Error& e) {
        report["activity_gaps"] = {{"error", {{"code", e.code()}, {"message", e.message()}}}};
    }

    // D.2.1-style sensitivity refit. The exclusion set comes from config, or
    // failing that from the channels flagged excluded in the input.
    std::vector<std::string> exclusion = cfg.sensitivity_exclude;
    if (exclusion.empty())
        for (const Channel& ch : ds.channels)
            if (ch.excluded) exclusion.push_back(ch.id);
    json sens;
    try {
        SensitivityReport r = sensitivity_refit(ds, exclusion, SensitivityAnalyses{}, topics,
                                                cfg.glmm, cfg.temporal, cfg.parallel);
        sens["excluded"] = r.excluded;
        sens["sign_agreement"] = r.sign_agreement;
        sens["significance_flips"] = r.significance_flips;
        sens["temporal_cells_compared"] = r.temporal_cells_compared;
        json flips = json::array();
        for (const TemporalDelta& d : r.temporal_flips)
            flips.push_back({{"topic_id", d.topic_id},
                             {"bin", d.bin_index},
                             {"control", group_token(d.control)},
                             {"baseline_rejected", d.baseline_rejected},
                             {"refit_rejected", d.refit_rejected}});
        sens["temporal_flips"] = flips;
        json coefs = json::array();
        for (const CoefficientDelta& d : r.coefficients) {
            if (d.sign_agree && d.baseline_significant == d.refit_significant) continue;
            coefs.push_back({{"topic_id", d.topic_id},
                             {"term", d.term},
                             {"baseline_coef", d.baseline_coef},
                             {"refit_coef", d.refit_coef},
                             {"sign_agree", d.sign_agree},
                             {"baseline_significant", d.baseline_significant},
                             {"refit_significant", d.refit_significant}});
        }
        sens["changed_coefficients"] = coefs;
    } catch (const Error& e) {
        sens["error"] = {{"code", e.code()}, {"message", e.message()}};
    }
    report["sensitivity"] = sens;

    write_file_atomic(out_path(cfg, "robustness_report.json"), report.dump(2) + "\n");
    stamp_stage(cfg, Stage::Robustness);
}

void stage_simulate(const RunConfig& cfg) {
    SynthResult r = generate_cohort(cfg.synth, cfg.seed);
    std::string dir = (fs::path(cfg.out_dir) / "synth_inputs").string();
    fs::create_directories(dir);
    save_dataset(r.dataset, dir);
    write_file_atomic(out_path(cfg, "ground_truth.json"), ground_truth_to_json(r.truth));
    stamp_stage(cfg, Stage::Simulate);
}

// --- report ------------------------------------------------------------------

// Markdown table helper: rows of pre-rendered cells.
std::string md_table(const std::vector<std::string>& header,
                     const std::vector<std::vector<std::string>>& rows) {
    std::string out = "|";
    for (const auto& h : header) out += " " + h + " |";
    out += "\n|";
    for (size_t i = 0; i < header.size(); ++i) out += " --- |";
    out += "\n";
    for (const auto& row : rows) {
        out += "|";
        for (const auto& c : row) out += " " + c + " |";
        out += "\n";
    }
    return out;
}

std::string fmt4(double v) { return fmt_double_fixed(v, 4); }

void stage_report(const RunConfig& cfg) {
    std::string md = "# Cohort analysis report\n\n";
    md += "Seed: " + std::to_string(cfg.seed) + "\n\n";
    bool any = false;

    if (fs::exists(out_path(cfg, "validation.json"))) {
        any = true;
        json v = json::parse(read_file(out_path(cfg, "validation.json")));
        md += "## Validation\n\n";
        md += std::to_string(v["channels"].get<size_t>()) + " channels, " +
              std::to_string(v["uploads"].get<size_t>()) + " uploads, " +
              std::to_string(v["topics"].get<size_t>()) + " topics; " +
              std::to_string(v["violations"].size()) + " violation(s).\n\n";
    }

    if (fs::exists(out_path(cfg, "filter_report.json"))) {
        any = true;
        json f = json::parse(read_file(out_path(cfg, "filter_report.json")));
        md += "## Filtering\n\n";
        md += "Minimum valid uploads: " + f["min_valid_uploads"].dump() + "; excluded " +
              f["excluded"].dump() + " channel(s); retained " + f["retained_total"].dump() +
              ".\n\n";
        std::vector<std::vector<std::string>> rows;
        for (const auto& [g, n] : f["retained_per_group"].items())
            rows.push_back({g, n.dump()});
        md += md_table({"group", "retained"}, rows) + "\n";
    }

    if (fs::exists(out_path(cfg, "glmm_results.csv"))) {
        any = true;
        Csv csv = read_csv(out_path(cfg, "glmm_results.csv"));
        int c_topic = csv.require_col("topic_id");
        int c_term = csv.require_col("term");
        int c_est = csv.require_col("estimate");
        int c_or = csv.require_col("odds_ratio");
        int c_padj = csv.require_col("p_adjusted");
        md += "## Mixed-model battery\n\n";
        std::vector<std::vector<std::string>> rows;
        for (size_t i = 0; i < csv.rows.size(); ++i) {
            RowView row(csv, i);
            auto padj = row.opt_f64(c_padj, "p_adjusted");
            if (!padj || *padj > cfg.glmm.q_level) continue;
            rows.push_back({row.str(c_topic, "topic_id"), row.str(c_term, "term"),
                            fmt4(row.f64(c_est, "estimate")), fmt4(row.f64(c_or, "odds_ratio")),
                            fmt4(*padj)});
        }
        md += std::to_string(rows.size()) +
              " coefficient(s) significant after cross-topic BH correction (q = " +
              fmt_double(cfg.glmm.q_level) + ").\n\n";
        if (!rows.empty())
            md += md_table({"topic", "term", "estimate", "odds ratio", "adjusted p"}, rows) +
                  "\n";
        if (fs::exists(out_path(cfg, "model_meta.json"))) {
            json meta = json::parse(read_file(out_path(cfg, "model_meta.json")));
            if (!meta["failures"].empty()) {
                md += "Failed topics:\n\n";
                for (const auto& [topic, msg] : meta["failures"].items())
                    md += "- topic " + topic + ": " + msg.get<std::string>() + "\n";
                md += "\n";
            }
        }
    }

    if (fs::exists(out_path(cfg, "selection_report.json"))) {
        any = true;
        json s = json::parse(read_file(out_path(cfg, "selection_report.json")));
        md += "## Topic selection\n\n";
        std::vector<std::vector<std::string>> rows;
        for (const auto& [name, sj] : s["selectors"].items()) {
            if (sj.contains("error")) {
                rows.push_back({name, "error: " + sj["error"]["code"].get<std::string>(), "",
                                ""});
                continue;
            }
            std::string selected, lasso;
            for (const auto& f : sj["stepwise"]["selected"])
                selected += (selected.empty() ? "" : ", ") + f.get<std::string>();
            for (const auto& f : sj["lasso"]["support"])
                lasso += (lasso.empty() ? "" : ", ") + f.get<std::string>();
            std::string agree = sj["lasso"].contains("agreement_jaccard")
                                    ? fmt4(sj["lasso"]["agreement_jaccard"].get<double>())
                                    : "";
            rows.push_back({name, selected.empty() ? "(none)" : selected,
                            lasso.empty() ? "(none)" : lasso, agree});
        }
        md += md_table({"control selector", "stepwise selection", "lasso support (cv)",
                        "jaccard"},
                       rows) +
              "\n";
    }

    if (fs::exists(out_path(cfg, "temporal_tests.csv"))) {
        any = true;
        Csv csv = read_csv(out_path(cfg, "temporal_tests.csv"));
        int c_topic = csv.require_col("topic_id");
        int c_batt = csv.require_col("battery");
        int c_rej = csv.require_col("rejected");
        std::map<std::pair<std::string, std::string>, std::pair<int, int>> tally;
        for (size_t i = 0; i < csv.rows.size(); ++i) {
            RowView row(csv, i);
            auto& t = tally[{row.str(c_topic, "topic_id"), row.str(c_batt, "battery")}];
            ++t.first;
            t.second += row.i64(c_rej, "rejected") != 0;
        }
        md += "## Temporal batteries\n\n";
        std::vector<std::vector<std::string>> rows;
        for (const auto& [key, t] : tally)
            rows.push_back({key.first, key.second, std::to_string(t.second) + " / " +
                                                       std::to_string(t.first)});
        md += md_table({"topic", "battery", "rejections / cells"}, rows) + "\n";
        md += "Per-bin curves for plotting: `group_curves.csv`; cell-level results: "
              "`temporal_tests.csv`.\n\n";
    }

    if (fs::exists(out_path(cfg, "match_meta.json"))) {
        any = true;
        json m = json::parse(read_file(out_path(cfg, "match_meta.json")));
        md += "## Matching\n\n";
        md += "k = " + m["k"].dump() + ", refinement threshold " +
              m["refine_threshold"].dump() + " (" + m["scorer"].get<std::string>() +
              " scorer): " + m["retained_pairs"].dump() + " retained pair(s), " +
              std::to_string(m["unmatched"].size()) + " unmatched treatment(s).\n\n";
        if (fs::exists(out_path(cfg, "balance.csv"))) {
            Csv csv = read_csv(out_path(cfg, "balance.csv"));
            int c_f = csv.require_col("feature");
            int c_b = csv.require_col("smd_before");
            int c_a = csv.require_col("smd_after");
            std::vector<std::vector<std::string>> rows;
            for (size_t i = 0; i < csv.rows.size(); ++i) {
                RowView row(csv, i);
                auto b = row.opt_f64(c_b, "smd_before");
                auto a = row.opt_f64(c_a, "smd_after");
                rows.push_back({row.str(c_f, "feature"), b ? fmt4(*b) : "-",
                                a ? fmt4(*a) : "-"});
            }
            md += md_table({"feature", "SMD before", "SMD after"}, rows) + "\n";
        }
    }

    if (fs::exists(out_path(cfg, "robustness_report.json"))) {
        any = true;
        json r = json::parse(read_file(out_path(cfg, "robustness_report.json")));
        md += "## Robustness\n\n";
        if (r.contains("external_event")) {
            int rej = 0, cells = 0, errors = 0;
            for (const auto& tj : r["external_event"]["topics"]) {
                if (tj.contains("error")) {
                    ++errors;
                    continue;
                }
                rej += tj["rejections"].get<int>();
                cells += tj["cells"].get<int>();
            }
            md += "External-event realignment to " +
                  r["external_event"]["fixed_date"].get<std::string>() + ": " +
                  std::to_string(rej) + " rejection(s) over " + std::to_string(cells) +
                  " cell(s)" +
                  (errors > 0 ? " (" + std::to_string(errors) + " topic(s) not analyzable)"
                              : "") +
                  ".\n\n";
        }
        if (r.contains("engagement")) {
            std::vector<std::vector<std::string>> rows;
            for (const auto& mj : r["engagement"]) {
                if (mj.contains("skipped") && mj["skipped"].get<bool>()) {
                    rows.push_back({mj["metric"].get<std::string>(), "skipped: " +
                                                                        mj["notice"]
                                                                            .get<std::string>()});
                    continue;
                }
                int rej = 0, n = 0;
                for (const auto& tj : mj["tests"]) {
                    if (tj.contains("result")) ++n;
                    rej += tj["rejected"].get<bool>();
                }
                rows.push_back({mj["metric"].get<std::string>(),
                                std::to_string(rej) + " / " + std::to_string(n)});
            }
            md += "Engagement comparisons (rejections / tests per metric):\n\n";
            md += md_table({"metric", "rejections"}, rows) + "\n";
        }
        if (r.contains("activity_gaps") && r["activity_gaps"].is_array()) {
            std::vector<std::vector<std::string>> rows;
            for (const auto& rj : r["activity_gaps"]) {
                for (const auto& gj : rj["groups"])
                    rows.push_back({rj["kind"].get<std::string>(),
                                    gj["group"].get<std::string>(),
                                    std::to_string(gj["n"].get<int>()),
                                    fmt4(gj["median"].get<double>()),
                                    fmt4(gj["mean"].get<double>())});
            }
            md += "Upload-activity gaps (days):\n\n";
            md += md_table({"interval", "group", "n", "median", "mean"}, rows) + "\n";
        }
        if (r.contains("sensitivity") && !r["sensitivity"].contains("error")) {
            const json& s = r["sensitivity"];
            md += "Sensitivity refit excluding " + std::to_string(s["excluded"].size()) +
                  " channel(s): sign agreement " + fmt4(s["sign_agreement"].get<double>()) +
                  ", " + s["significance_flips"].dump() + " significance flip(s), " +
                  std::to_string(s["temporal_flips"].size()) +
                  " temporal rejection flip(s) over " + s["temporal_cells_compared"].dump() +
                  " cell(s).\n\n";
        }
    }

    if (fs::exists(out_path(cfg, "ground_truth.json"))) {
        any = true;
        json t = json::parse(read_file(out_path(cfg, "ground_truth.json")));
        md += "## Simulation ground truth\n\n";
        md += "sigma2 = " + t["sigma2"].dump() + ", phi = " + t["phi"].dump() + ", seed = " +
              t["seed"].dump() + "; per-topic coefficients in `ground_truth.json`.\n\n";
    }

    if (!any)
        fail("MissingDependency",
             "no stage outputs found in " + cfg.out_dir + "; run some stages before 'report'");

    // Plot-data extraction from the robustness box stats, so plotting needs
    // no JSON parsing. Values are copied from robustness_report.json.
    if (fs::exists(out_path(cfg, "robustness_report.json"))) {
        json r = json::parse(read_file(out_path(cfg, "robustness_report.json")));
        if (r.contains("engagement")) {
            CsvBuilder pb({"metric", "group", "n", "q1", "median", "q3", "whisker_lo",
                           "whisker_hi", "min", "max"});
            for (const auto& mj : r["engagement"]) {
                if (mj.contains("skipped") && mj["skipped"].get<bool>()) continue;
                for (const auto& bj : mj["boxes"])
                    pb.cell(mj["metric"].get<std::string>())
                        .cell(bj["group"].get<std::string>())
                        .cell(bj["n"].get<int>())
                        .cell(bj["q1"].get<double>())
                        .cell(bj["median"].get<double>())
                        .cell(bj["q3"].get<double>())
                        .cell(bj["whisker_lo"].get<double>())
                        .cell(bj["whisker_hi"].get<double>())
                        .cell(bj["min"].get<double>())
                        .cell(bj["max"].get<double>())
                        .endrow();
            }
            write_file_atomic(out_path(cfg, "plot_box_stats.csv"), pb.str());
        }
    }

    write_file_atomic(out_path(cfg, "report.md"), md);
    stamp_stage(cfg, Stage::Report);
}

} // namespace

const char* stage_token(Stage s) {
    switch (s) {
        case Stage::Validate: return "validate";
        case Stage::Filter: return "filter";
        case Stage::Align: return "align";
        case Stage::SelectTopics: return "select-topics";
        case Stage::FitGlmm: return "fit-glmm";
        case Stage::TemporalTest: return "temporal-test";
        case Stage::Match: return "match";
        case Stage::Robustness: return "robustness";
        case Stage::Simulate: return "simulate";
        default: return "report";
    }
}

Stage parse_stage(const std::string& token) {
    auto it = stage_names().find(token);
    if (it == stage_names().end()) fail("ConfigError", "unknown stage '" + token + "'");
    return it->second;
}

void run_stage(Stage stage, const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    switch (stage) {
        case Stage::Validate: stage_validate(cfg); break;
        case Stage::Filter: stage_filter(cfg); break;
        case Stage::Align: stage_align(cfg); break;
        case Stage::SelectTopics: stage_select_topics(cfg); break;
        case Stage::FitGlmm: stage_fit_glmm(cfg); break;
        case Stage::TemporalTest: stage_temporal_test(cfg); break;
        case Stage::Match: stage_match(cfg); break;
        case Stage::Robustness: stage_robustness(cfg); break;
        case Stage::Simulate: stage_simulate(cfg); break;
        case Stage::Report: stage_report(cfg); break;
    }
}

} // namespace cohort
