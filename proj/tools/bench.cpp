// Timing comparison of the serial reference path against the OpenMP path for
// the two hot loops: per-topic alignment and the per-topic GLMM battery.
// Both paths must produce byte-identical results; this tool reports wall
// times and verifies agreement on the fly.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "cohort/beta_glmm.hpp"
#include "cohort/parallel.hpp"
#include "cohort/synth.hpp"
#include "cohort/temporal.hpp"

using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

} // namespace

int main(int argc, char** argv) {
    int n_topics = argc > 1 ? std::atoi(argv[1]) : 24;
    int per_group = argc > 2 ? std::atoi(argv[2]) : 40;

    cohort::SynthConfig scfg;
    scfg.n_topics = n_topics;
    scfg.channels_per_group = {per_group, per_group, per_group, per_group};
    scfg.beta_time = 0.4;
    scfg.beta_group_time = {-0.3, 0.1, 0.0};
    cohort::SynthResult synth = cohort::generate_cohort(scfg, 42);
    const cohort::CohortDataset& ds = synth.dataset;
    std::printf("cohort: %zu channels, %zu uploads, %d topics, %d thread(s)\n",
                ds.channels.size(), ds.uploads.size(), n_topics,
                cohort::hardware_threads());

    auto events = cohort::assign_all_events(ds);
    std::vector<int> topics;
    for (const auto& t : ds.topics) topics.push_back(t.topic_id);
    cohort::TemporalConfig tcfg;
    cohort::GlmmConfig gcfg;

    // Alignment loop.
    auto run_align = [&](bool parallel) {
        std::vector<cohort::TopicAlignment> out(topics.size());
        cohort::parallel_for(topics.size(), parallel, [&](size_t i) {
            out[i] = cohort::align_topic(ds, topics[i], tcfg, events);
        });
        return out;
    };
    auto t0 = Clock::now();
    auto serial_align = run_align(false);
    double align_serial = seconds_since(t0);
    t0 = Clock::now();
    auto parallel_align = run_align(true);
    double align_parallel = seconds_since(t0);

    bool align_match = serial_align.size() == parallel_align.size();
    for (size_t i = 0; align_match && i < serial_align.size(); ++i) {
        const auto& a = serial_align[i];
        const auto& b = parallel_align[i];
        for (size_t g = 0; align_match && g < a.by_group.size(); ++g) {
            const auto& sa = a.by_group[g].second;
            const auto& sb = b.by_group[g].second;
            if (sa.size() != sb.size()) align_match = false;
            for (size_t c = 0; align_match && c < sa.size(); ++c)
                for (int slot = 0; slot < cohort::kBins; ++slot)
                    if (sa[c].at_slot(slot) != sb[c].at_slot(slot)) align_match = false;
        }
    }

    // GLMM battery.
    t0 = Clock::now();
    auto serial_fit = cohort::run_topic_battery(ds, topics, events, gcfg, false);
    double fit_serial = seconds_since(t0);
    t0 = Clock::now();
    auto parallel_fit = cohort::run_topic_battery(ds, topics, events, gcfg, true);
    double fit_parallel = seconds_since(t0);

    bool fit_match = serial_fit.fits.size() == parallel_fit.fits.size();
    for (size_t i = 0; fit_match && i < serial_fit.fits.size(); ++i) {
        const auto& a = serial_fit.fits[i];
        const auto& b = parallel_fit.fits[i];
        if (a.topic_id != b.topic_id || a.estimates.size() != b.estimates.size())
            fit_match = false;
        for (size_t j = 0; fit_match && j < a.estimates.size(); ++j)
            if (a.estimates[j] != b.estimates[j]) fit_match = false;
    }

    std::printf("\n%-22s %10s %10s %9s %8s\n", "kernel", "serial(s)", "openmp(s)", "speedup",
                "match");
    std::printf("%-22s %10.3f %10.3f %8.2fx %8s\n", "topic alignment", align_serial,
                align_parallel, align_serial / std::max(1e-9, align_parallel),
                align_match ? "exact" : "MISMATCH");
    std::printf("%-22s %10.3f %10.3f %8.2fx %8s\n", "glmm battery", fit_serial, fit_parallel,
                fit_serial / std::max(1e-9, fit_parallel),
                fit_match ? "exact" : "MISMATCH");
    return align_match && fit_match ? 0 : 1;
}
