#include "cohort/stats.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "cohort/error.hpp"
#include "cohort/special.hpp"

namespace cohort {

const char* test_kind_token(TestKind k) {
    return k == TestKind::PairedT ? "paired_t" : "welch_t";
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) fail("DomainError", "mean of empty vector");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v) {
    if (v.size() < 2) fail("DomainError", "sample variance needs n >= 2");
    // Identical inputs must give exactly 0 (the mean of n copies of x is not
    // always x in floating point, which would leak ~1e-17 of spurious spread).
    bool constant = true;
    for (double x : v)
        if (x != v[0]) { constant = false; break; }
    if (constant) return 0.0;
    double m = mean_of(v), ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return ss / (static_cast<double>(v.size()) - 1.0);
}

TestResult paired_t(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size())
        fail("LengthMismatch", "paired samples of length " + std::to_string(x.size()) + " vs " +
                                   std::to_string(y.size()));
    const size_t n = x.size();
    if (n < 2) fail("DomainError", "paired_t needs n >= 2");
    std::vector<double> d(n);
    for (size_t i = 0; i < n; ++i) d[i] = y[i] - x[i];
    double var = sample_variance(d);
    if (var <= 0.0) fail("DegenerateVariance", "paired differences have zero variance");
    TestResult r;
    r.kind = TestKind::PairedT;
    r.df = static_cast<double>(n) - 1.0;
    r.statistic = mean_of(d) / std::sqrt(var / static_cast<double>(n));
    r.p_value = t_two_sided_p(r.statistic, r.df);
    return r;
}

TestResult welch_t(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2) fail("DomainError", "welch_t needs n >= 2 in each sample");
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double va = sample_variance(a), vb = sample_variance(b);
    if (va <= 0.0 && vb <= 0.0)
        fail("DegenerateVariance", "both samples have zero variance");
    const double sa = va / na, sb = vb / nb;
    TestResult r;
    r.kind = TestKind::WelchT;
    r.statistic = (mean_of(a) - mean_of(b)) / std::sqrt(sa + sb);
    r.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    r.p_value = t_two_sided_p(r.statistic, r.df);
    return r;
}

FdrResult bh_fdr(const std::vector<double>& p, double q) {
    if (!(q > 0.0 && q < 1.0)) fail("DomainError", "q must be in (0,1)");
    for (double pi : p)
        if (!(pi >= 0.0 && pi <= 1.0)) fail("DomainError", "p values must be in [0,1]");
    const size_t m = p.size();
    FdrResult out;
    out.adjusted.resize(m);
    out.rejected.resize(m);
    if (m == 0) return out;

    std::vector<size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t i, size_t j) { return p[i] < p[j]; });

    double running = 1.0;
    for (size_t k = m; k-- > 0;) {
        double adj = std::min(1.0, p[order[k]] * static_cast<double>(m) /
                                       static_cast<double>(k + 1));
        running = std::min(running, adj);
        out.adjusted[order[k]] = running;
    }
    for (size_t i = 0; i < m; ++i) out.rejected[i] = out.adjusted[i] <= q;
    return out;
}

namespace {

// Runs BH over the cells that produced a result and writes the adjusted
// values / rejections back into the battery slots.
void apply_family_fdr(std::vector<BinTest>& cells, double q) {
    std::vector<double> ps;
    std::vector<size_t> idx;
    for (size_t i = 0; i < cells.size(); ++i)
        if (cells[i].result) {
            ps.push_back(cells[i].result->p_value);
            idx.push_back(i);
        }
    if (ps.empty()) return;
    FdrResult fdr = bh_fdr(ps, q);
    for (size_t j = 0; j < idx.size(); ++j) {
        cells[idx[j]].result->p_adjusted = fdr.adjusted[j];
        cells[idx[j]].rejected = fdr.rejected[j];
    }
}

} // namespace

std::vector<BinTest> within_group_test(const std::vector<AlignedSeries>& aligned,
                                       int baseline_bin, double q) {
    if (aligned.size() < 2) fail("DomainError", "within_group_test needs >= 2 channels");
    const int base_slot = bin_slot(baseline_bin);
    std::vector<double> baseline;
    baseline.reserve(aligned.size());
    for (const AlignedSeries& s : aligned) baseline.push_back(s.at_slot(base_slot));

    std::vector<BinTest> cells(kBins);
    for (int slot = 0; slot < kBins; ++slot) {
        cells[slot].bin_index = bin_label(slot);
        std::vector<double> values;
        values.reserve(aligned.size());
        for (const AlignedSeries& s : aligned) values.push_back(s.at_slot(slot));
        try {
            cells[slot].result = paired_t(baseline, values);
        } catch (const Error&) {
            // Degenerate bin (e.g. the baseline against itself): slot stays,
            // the BH family shrinks.
        }
    }
    apply_family_fdr(cells, q);
    return cells;
}

std::vector<BinTest> between_group_test(
    const std::vector<AlignedSeries>& treatment,
    const std::vector<std::pair<Group, std::vector<AlignedSeries>>>& controls, double q) {
    if (treatment.size() < 2) fail("DomainError", "between_group_test needs >= 2 treatment series");
    std::vector<BinTest> cells;
    cells.reserve(controls.size() * kBins);
    for (const auto& [group, series] : controls) {
        if (series.size() < 2)
            fail("DomainError", std::string("control group ") + group_token(group) +
                                    " has < 2 series");
        for (int slot = 0; slot < kBins; ++slot) {
            BinTest cell;
            cell.bin_index = bin_label(slot);
            cell.control = group;
            std::vector<double> t, c;
            for (const AlignedSeries& s : treatment) t.push_back(s.at_slot(slot));
            for (const AlignedSeries& s : series) c.push_back(s.at_slot(slot));
            try {
                cell.result = welch_t(t, c);
            } catch (const Error&) {
            }
            cells.push_back(std::move(cell));
        }
    }
    apply_family_fdr(cells, q);
    return cells;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) fail("DomainError", "jaccard of two empty sets");
    size_t inter = 0;
    for (const auto& x : a) inter += b.count(x);
    size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double percent_agreement(const std::vector<std::pair<std::string, std::string>>& pairs) {
    if (pairs.empty()) fail("DomainError", "percent_agreement of zero pairs");
    size_t agree = 0;
    for (const auto& [x, y] : pairs) agree += (x == y);
    return static_cast<double>(agree) / static_cast<double>(pairs.size());
}

std::optional<double> cohens_kappa(
    const std::vector<std::pair<std::string, std::string>>& pairs) {
    if (pairs.empty()) fail("DomainError", "cohens_kappa of zero pairs");
    const double n = static_cast<double>(pairs.size());
    std::unordered_map<std::string, double> m1, m2;
    for (const auto& [x, y] : pairs) {
        m1[x] += 1.0;
        m2[y] += 1.0;
    }
    double pe = 0.0;
    for (const auto& [label, c1] : m1) {
        auto it = m2.find(label);
        if (it != m2.end()) pe += (c1 / n) * (it->second / n);
    }
    double po = percent_agreement(pairs);
    if (pe >= 1.0) return std::nullopt; // no variation: chance correction undefined
    return (po - pe) / (1.0 - pe);
}

double cosine_similarity(const std::vector<double>& u, const std::vector<double>& v) {
    if (u.size() != v.size()) fail("LengthMismatch", "cosine of different-length vectors");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) fail("DomainError", "cosine of a zero vector");
    return dot / (std::sqrt(nu) * std::sqrt(nv));
}

std::map<int, std::vector<std::pair<std::string, double>>> tfidf(
    const std::map<int, std::vector<std::string>>& segments_by_topic,
    const std::set<std::string>& stop_words) {
    if (segments_by_topic.empty()) fail("DomainError", "tfidf over an empty corpus");

    auto tokenize = [&](const std::string& text, auto&& emit) {
        std::string word;
        for (char c : text) {
            if (std::isspace(static_cast<unsigned char>(c))) {
                if (!word.empty() && !stop_words.count(word)) emit(word);
                word.clear();
            } else {
                word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            }
        }
        if (!word.empty() && !stop_words.count(word)) emit(word);
    };

    std::map<int, std::unordered_map<std::string, double>> tf;
    std::unordered_map<std::string, int> df;
    for (const auto& [topic, segments] : segments_by_topic) {
        auto& counts = tf[topic];
        for (const std::string& seg : segments)
            tokenize(seg, [&](const std::string& w) { counts[w] += 1.0; });
        for (const auto& [word, count] : counts) df[word] += 1;
    }

    const double n_topics = static_cast<double>(segments_by_topic.size());
    std::map<int, std::vector<std::pair<std::string, double>>> out;
    for (const auto& [topic, counts] : tf) {
        auto& scored = out[topic];
        scored.reserve(counts.size());
        for (const auto& [word, count] : counts)
            scored.emplace_back(word, count * std::log(n_topics / df[word]));
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
    }
    return out;
}

} // namespace cohort
