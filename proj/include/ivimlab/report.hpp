#pragma once

// Cohort-level comparison of mask sources: paired tests per fusion strategy
// and inter-subject coefficients of variation per group.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ivimlab/csv.hpp"
#include "ivimlab/error.hpp"
#include "ivimlab/fgr.hpp"
#include "ivimlab/ivim.hpp"
#include "ivimlab/mask_ops.hpp"
#include "ivimlab/stats.hpp"

namespace ivimlab::report {

enum class Source { Manual, Automatic };

inline const char* to_string(Source s) { return s == Source::Manual ? "manual" : "automatic"; }

inline Source parse_source(std::string_view s) {
    if (s == "manual") return Source::Manual;
    if (s == "automatic" || s == "auto") return Source::Automatic;
    throw ArgumentError("unknown mask source '" + std::string(s) + "' (expected manual or automatic)");
}

// Subject-level means compared in the paired tests and CV tables.
inline constexpr std::array<std::string_view, 6> kMeanMetrics{
    "volume_ml", "s0_mean", "f_mean", "d_star_mean", "adc_mean", "residual_mean"};
// Intra-mask heterogeneity metrics.
inline constexpr std::array<std::string_view, 7> kVariabilityMetrics{
    "s0_cv", "f_cv", "d_star_cv", "adc_cv", "f_entropy", "d_star_entropy", "adc_entropy"};
inline constexpr std::array<FusionStrategy, 3> kStrategies{FusionStrategy::Avg, FusionStrategy::Olp,
                                                           FusionStrategy::Lc};

/// One fitted mask of one subject.
struct SummaryRow {
    std::string subject;
    fgr::Group group = fgr::Group::Control;
    Source source = Source::Manual;
    FusionStrategy fusion = FusionStrategy::Avg;
    std::map<std::string, double, std::less<>> values;

    double value(std::string_view metric) const {
        const auto it = values.find(metric);
        if (it == values.end()) throw ArgumentError("summary row lacks metric " + std::string(metric));
        return it->second;
    }
};

inline const std::vector<std::string>& summary_header() {
    static const std::vector<std::string> h = [] {
        std::vector<std::string> cols{"subject", "group", "source", "fusion", "voxels_fitted"};
        for (auto m : kMeanMetrics) cols.emplace_back(m);
        for (auto m : kVariabilityMetrics) cols.emplace_back(m);
        return cols;
    }();
    return h;
}

inline SummaryRow make_row(std::string subject, fgr::Group group, Source source, FusionStrategy fusion,
                           const MapSummary& s) {
    SummaryRow r{std::move(subject), group, source, fusion, {}};
    r.values["voxels_fitted"] = static_cast<double>(s.s0.count);
    r.values["volume_ml"] = s.volume_ml;
    const double nan = kUnfitted;
    r.values["s0_mean"] = s.empty ? nan : s.s0.mean;
    r.values["f_mean"] = s.empty ? nan : s.f.mean;
    r.values["d_star_mean"] = s.empty ? nan : s.d_star.mean;
    r.values["adc_mean"] = s.empty ? nan : s.adc.mean;
    r.values["residual_mean"] = s.empty ? nan : s.residual.mean;
    r.values["s0_cv"] = s.s0.cv;
    r.values["f_cv"] = s.f.cv;
    r.values["d_star_cv"] = s.d_star.cv;
    r.values["adc_cv"] = s.adc.cv;
    r.values["f_entropy"] = s.f.entropy;
    r.values["d_star_entropy"] = s.d_star.entropy;
    r.values["adc_entropy"] = s.adc.entropy;
    return r;
}

inline csv::Row format_row(const SummaryRow& r) {
    csv::Row out{r.subject, fgr::to_string(r.group), to_string(r.source), ivimlab::to_string(r.fusion)};
    for (std::size_t i = 4; i < summary_header().size(); ++i) out.push_back(csv::number(r.value(summary_header()[i])));
    return out;
}

/// Parses one or more concatenated summary tables (each with its own header).
inline std::vector<SummaryRow> parse_summaries(std::string_view text) {
    std::vector<SummaryRow> out;
    std::vector<std::string> header;
    for (auto& row : csv::parse(text)) {
        if (row.size() == 1 && row[0].empty()) continue;
        // A header names its columns; a data row cannot hold "fusion" as a value.
        const bool is_header = !row.empty() && row[0] == "subject" &&
                               std::find(row.begin(), row.end(), "fusion") != row.end();
        if (is_header) {
            header = row;
            for (const auto& col : summary_header()) {
                if (std::find(header.begin(), header.end(), col) == header.end()) {
                    throw FormatError("summary table lacks column '" + col + "'");
                }
            }
            continue;
        }
        if (header.empty()) throw FormatError("summary table has no header row");
        if (row.size() != header.size()) throw FormatError("summary row has " + std::to_string(row.size()) +
                                                           " fields, header has " + std::to_string(header.size()));
        SummaryRow r;
        for (std::size_t i = 0; i < header.size(); ++i) {
            const auto& col = header[i];
            if (col == "subject") r.subject = row[i];
            else if (col == "group") r.group = fgr::parse_group(row[i]);
            else if (col == "source") r.source = parse_source(row[i]);
            else if (col == "fusion") r.fusion = parse_fusion_strategy(row[i]);
            else r.values[col] = csv::to_double(row[i], col);
        }
        out.push_back(std::move(r));
    }
    return out;
}

struct PairedComparison {
    std::string metric;
    std::string kind;  // "mean" or "variability"
    // Keyed by strategy; absent when the strategy has no rows.
    std::map<FusionStrategy, stats::TestResult> t_test;
    std::map<FusionStrategy, stats::TestResult> u_test;
};

struct CvCell {
    FusionStrategy fusion;
    Source source;
    fgr::Group group;
    double cv = kUnfitted;  // sample sd / mean across subjects
};

struct Report {
    std::vector<PairedComparison> table3;
    std::vector<std::pair<std::string, std::vector<CvCell>>> table4;  // per mean metric
    // Mean |automatic - manual| / manual inter-subject CV, percent, per
    // strategy: over both groups, controls only, FGR only.
    std::map<FusionStrategy, std::array<double, 3>> cv_agreement;
    std::map<FusionStrategy, double> mean_t_p;
};

namespace detail {

struct Paired {
    std::vector<double> manual, automatic;  // pairs where both values are defined
    std::size_t subjects = 0;               // subjects with both sources
};

inline Paired pair_up(const std::vector<const SummaryRow*>& rows, std::string_view metric) {
    std::map<std::string, std::array<std::optional<double>, 2>> by_subject;
    for (const auto* r : rows) {
        auto& slot = by_subject[r->subject][r->source == Source::Manual ? 0 : 1];
        if (slot) throw ArgumentError("subject " + r->subject + " appears twice for one source and strategy");
        slot = r->value(metric);
    }
    Paired p;
    for (const auto& [subject, v] : by_subject) {
        if (!v[0] || !v[1]) throw ArgumentError("subject " + subject + " lacks a manual or automatic summary");
        ++p.subjects;
        if (std::isnan(*v[0]) || std::isnan(*v[1])) continue;
        p.manual.push_back(*v[0]);
        p.automatic.push_back(*v[1]);
    }
    return p;
}

inline double inter_subject_cv(const std::vector<double>& v) {
    if (v.size() < 2) return kUnfitted;
    const double m = stats::mean(v);
    if (m == 0.0) return kUnfitted;
    return stats::cv(v, stats::SdKind::Sample);
}

}  // namespace detail

inline Report build(const std::vector<SummaryRow>& rows) {
    std::map<FusionStrategy, std::vector<const SummaryRow*>> by_strategy;
    for (const auto& r : rows) by_strategy[r.fusion].push_back(&r);
    if (by_strategy.empty()) throw ArgumentError("report needs at least one summary row");

    Report rep;
    auto compare = [&](std::string_view metric, const char* kind) {
        PairedComparison pc{std::string(metric), kind, {}, {}};
        for (const auto& [strategy, subset] : by_strategy) {
            const auto p = detail::pair_up(subset, metric);
            if (p.subjects < 2) {
                throw ArgumentError("paired tests need at least 2 subjects with both sources (strategy " +
                                    std::string(ivimlab::to_string(strategy)) + ")");
            }
            if (p.manual.size() < 2) continue;  // metric undefined for too many subjects
            pc.t_test[strategy] = stats::paired_t_test(p.manual, p.automatic);
            pc.u_test[strategy] = stats::mann_whitney_u(p.manual, p.automatic);
        }
        rep.table3.push_back(std::move(pc));
    };
    for (auto m : kMeanMetrics) compare(m, "mean");
    for (auto m : kVariabilityMetrics) compare(m, "variability");

    for (const auto& [strategy, subset] : by_strategy) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& pc : rep.table3) {
            const auto it = pc.t_test.find(strategy);
            if (it == pc.t_test.end()) continue;
            sum += it->second.p_value;
            ++n;
        }
        rep.mean_t_p[strategy] = n ? sum / static_cast<double>(n) : kUnfitted;
    }

    for (auto metric : kMeanMetrics) {
        std::vector<CvCell> cells;
        for (const auto& [strategy, subset] : by_strategy) {
            for (Source src : {Source::Manual, Source::Automatic}) {
                for (fgr::Group g : {fgr::Group::Control, fgr::Group::Fgr}) {
                    std::vector<double> v;
                    for (const auto* r : subset) {
                        if (r->source != src || r->group != g) continue;
                        const double x = r->value(metric);
                        if (!std::isnan(x)) v.push_back(x);
                    }
                    cells.push_back({strategy, src, g, detail::inter_subject_cv(v)});
                }
            }
        }
        rep.table4.emplace_back(std::string(metric), std::move(cells));
    }

    for (const auto& [strategy, subset] : by_strategy) {
        std::array<std::vector<double>, 3> ref, other;  // all, control, fgr
        for (const auto& [metric, cells] : rep.table4) {
            for (fgr::Group g : {fgr::Group::Control, fgr::Group::Fgr}) {
                double man = kUnfitted, aut = kUnfitted;
                for (const auto& c : cells) {
                    if (c.fusion != strategy || c.group != g) continue;
                    (c.source == Source::Manual ? man : aut) = c.cv;
                }
                if (std::isnan(man) || std::isnan(aut) || man == 0.0) continue;
                const std::size_t k = g == fgr::Group::Control ? 1 : 2;
                ref[0].push_back(man);
                other[0].push_back(aut);
                ref[k].push_back(man);
                other[k].push_back(aut);
            }
        }
        std::array<double, 3> agreement{kUnfitted, kUnfitted, kUnfitted};
        for (std::size_t k = 0; k < 3; ++k)
            if (!ref[k].empty()) agreement[k] = stats::mean_abs_pct_diff(ref[k], other[k]);
        rep.cv_agreement[strategy] = agreement;
    }
    return rep;
}

namespace detail {

template <typename Map>
std::string cell(const Map& m, FusionStrategy s) {
    const auto it = m.find(s);
    return it == m.end() ? std::string() : csv::number(it->second.p_value);
}

}  // namespace detail

/// parameter x strategy p-values (paired t, then Mann-Whitney), plus the
/// mean paired-t p per strategy as a final row.
inline std::vector<csv::Row> table3_rows(const Report& r) {
    std::vector<csv::Row> rows{{"metric", "kind", "avg_t_p", "olp_t_p", "lc_t_p", "avg_u_p", "olp_u_p", "lc_u_p"}};
    for (const auto& pc : r.table3) {
        csv::Row row{pc.metric, pc.kind};
        for (auto s : kStrategies) row.push_back(detail::cell(pc.t_test, s));
        for (auto s : kStrategies) row.push_back(detail::cell(pc.u_test, s));
        rows.push_back(std::move(row));
    }
    csv::Row mean{"mean_p", "summary"};
    for (auto s : kStrategies) {
        const auto it = r.mean_t_p.find(s);
        mean.push_back(it == r.mean_t_p.end() ? std::string() : csv::number(it->second));
    }
    mean.insert(mean.end(), {"", "", ""});
    rows.push_back(std::move(mean));
    return rows;
}

/// parameter x (strategy, source, group) inter-subject CVs.
inline std::vector<csv::Row> table4_rows(const Report& r) {
    csv::Row header{"metric"};
    for (auto s : kStrategies)
        for (Source src : {Source::Manual, Source::Automatic})
            for (fgr::Group g : {fgr::Group::Control, fgr::Group::Fgr})
                header.push_back(std::string(ivimlab::to_string(s)) + "_" + to_string(src) + "_" +
                                 (g == fgr::Group::Control ? "control" : "fgr"));
    std::vector<csv::Row> rows{header};
    for (const auto& [metric, cells] : r.table4) {
        csv::Row row{metric};
        for (auto s : kStrategies)
            for (Source src : {Source::Manual, Source::Automatic})
                for (fgr::Group g : {fgr::Group::Control, fgr::Group::Fgr}) {
                    std::string v;
                    for (const auto& c : cells)
                        if (c.fusion == s && c.source == src && c.group == g) v = csv::number(c.cv);
                    row.push_back(v);
                }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<csv::Row> cv_agreement_rows(const Report& r) {
    std::vector<csv::Row> rows{{"fusion", "all_pct", "control_pct", "fgr_pct"}};
    for (auto s : kStrategies) {
        const auto it = r.cv_agreement.find(s);
        if (it == r.cv_agreement.end()) continue;
        rows.push_back({ivimlab::to_string(s), csv::number(it->second[0]), csv::number(it->second[1]),
                        csv::number(it->second[2])});
    }
    return rows;
}

}  // namespace ivimlab::report
