#pragma once

// Observed-to-expected total lung volume and its ROC/Youden classifier.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ivimlab/error.hpp"
#include "ivimlab/stats.hpp"

namespace ivimlab::fgr {

enum class Group { Fgr, Control };

inline const char* to_string(Group g) { return g == Group::Fgr ? "FGR" : "Control"; }

inline Group parse_group(std::string_view s) {
    std::string lower(s);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "fgr") return Group::Fgr;
    if (lower == "control" || lower == "ctrl") return Group::Control;
    throw ArgumentError("unknown group '" + std::string(s) + "' (expected FGR or Control)");
}

inline constexpr double kMinGaWeeks = 15.0;
inline constexpr double kMaxGaWeeks = 45.0;

/// Parses gestational age as decimal weeks ("28.5") or weeks+days ("28+2").
inline double parse_ga(std::string_view text) {
    auto number = [&](std::string_view s) {
        double v = 0.0;
        const auto* end = s.data() + s.size();
        const auto [ptr, ec] = std::from_chars(s.data(), end, v);
        if (ec != std::errc{} || ptr != end || s.empty()) {
            throw ParseError("invalid gestational age '" + std::string(text) + "'", 0);
        }
        return v;
    };
    const auto plus = text.find('+');
    if (plus == std::string_view::npos) return number(text);
    const double weeks = number(text.substr(0, plus));
    const double days = number(text.substr(plus + 1));
    if (days < 0.0 || days >= 7.0 || weeks != std::floor(weeks) || days != std::floor(days)) {
        throw ParseError("invalid weeks+days gestational age '" + std::string(text) + "'", plus);
    }
    return weeks + days / 7.0;
}

struct SubjectRecord {
    std::string id;
    double ga_weeks = 0.0;
    Group group = Group::Control;
    double tlv_ml = 0.0;

    void validate() const {
        if (!(ga_weeks >= kMinGaWeeks && ga_weeks <= kMaxGaWeeks)) {
            throw ArgumentError("subject " + id + ": gestational age outside [15, 45] weeks");
        }
        if (!(tlv_ml > 0.0)) throw ArgumentError("subject " + id + ": total lung volume must be positive");
    }
};

/// Expected total lung volume (mL) from gestational age (weeks), cubic in GA.
inline double expected_tlv(double ga_weeks) {
    if (!(ga_weeks >= kMinGaWeeks && ga_weeks <= kMaxGaWeeks)) {
        throw ArgumentError("gestational age " + std::to_string(ga_weeks) + " outside [15, 45] weeks");
    }
    const double ga = ga_weeks;
    const double v = -0.0132 * ga * ga * ga + 1.14 * ga * ga - 27.38 * ga + 207.50;
    if (!(v > 0.0)) throw UndefinedError("expected lung volume model is non-positive at this gestational age");
    return v;
}

inline double oe_tlv(double observed_ml, double ga_weeks) {
    if (!(observed_ml > 0.0)) throw ArgumentError("observed lung volume must be positive");
    return observed_ml / expected_tlv(ga_weeks);
}

struct ZReference {
    double mean = 0.0;
    double sd = 0.0;  // sample
};

inline ZReference zscore_fit(std::span<const double> controls) {
    if (controls.size() < 2) throw ArgumentError("z-score reference needs at least 2 control values");
    ZReference ref{stats::mean(controls), stats::sd(controls, stats::SdKind::Sample)};
    if (!(ref.sd > 0.0)) throw UndefinedError("z-score reference has zero standard deviation");
    return ref;
}

inline double zscore_apply(double v, const ZReference& ref) { return (v - ref.mean) / ref.sd; }

/// Which side of the threshold is called positive (FGR).
enum class Polarity { HigherIsPositive, LowerIsPositive };

inline const char* to_string(Polarity p) {
    return p == Polarity::HigherIsPositive ? "higher_is_fgr" : "lower_is_fgr";
}

struct RocPoint {
    double threshold = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
};

struct RocAnalysis {
    std::vector<RocPoint> curve;  // thresholds strictly decreasing
    double auc = 0.0;
    double youden_threshold = 0.0;
    double youden_j = 0.0;
    Polarity polarity = Polarity::HigherIsPositive;
};

/// ROC for a fixed polarity. Candidate thresholds are +inf, the midpoints
/// between consecutive distinct scores and -inf. With HigherIsPositive a score
/// is called positive when it is strictly above the threshold; LowerIsPositive
/// mirrors this. Youden ties go to the higher specificity.
inline RocAnalysis roc(std::span<const double> scores, std::span<const bool> positive,
                       Polarity polarity = Polarity::HigherIsPositive) {
    if (scores.size() != positive.size()) throw ArgumentError("roc needs one label per score");
    const auto n_pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
    const std::size_t n_neg = positive.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw ArgumentError("roc needs both classes present");
    for (double s : scores)
        if (!std::isfinite(s)) throw ArgumentError("roc scores must be finite");

    // Work on oriented scores so that "higher is positive" always holds.
    const double sign = polarity == Polarity::HigherIsPositive ? 1.0 : -1.0;
    std::vector<double> oriented(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) oriented[i] = sign * scores[i];
    std::vector<double> distinct = oriented;
    std::sort(distinct.begin(), distinct.end(), std::greater<>());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    std::vector<double> cuts;
    cuts.push_back(std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i) cuts.push_back(0.5 * (distinct[i] + distinct[i + 1]));
    cuts.push_back(-std::numeric_limits<double>::infinity());

    RocAnalysis out;
    out.polarity = polarity;
    out.youden_j = -std::numeric_limits<double>::infinity();
    double best_spec = -1.0;
    double best_cut = 0.0;
    for (double cut : cuts) {
        std::size_t tp = 0, tn = 0;
        for (std::size_t i = 0; i < oriented.size(); ++i) {
            const bool called = oriented[i] > cut;
            if (called && positive[i]) ++tp;
            if (!called && !positive[i]) ++tn;
        }
        RocPoint p{sign * cut, static_cast<double>(tp) / static_cast<double>(n_pos),
                   static_cast<double>(tn) / static_cast<double>(n_neg)};
        const double j = p.sensitivity + p.specificity - 1.0;
        // The infinite end points only qualify when no finite cut exists.
        const bool eligible = std::isfinite(cut) || cuts.size() == 2;
        if (eligible && (j > out.youden_j || (j == out.youden_j && p.specificity > best_spec))) {
            out.youden_j = j;
            best_spec = p.specificity;
            best_cut = cut;
        }
        out.curve.push_back(p);
    }
    // Single distinct score: threshold at that score, everything negative.
    out.youden_threshold = std::isfinite(best_cut) ? sign * best_cut : sign * distinct.front();

    // Trapezoids over (1 - specificity, sensitivity), which climbs monotonically.
    for (std::size_t i = 1; i < out.curve.size(); ++i) {
        const auto& a = out.curve[i - 1];
        const auto& b = out.curve[i];
        out.auc += (a.specificity - b.specificity) * 0.5 * (a.sensitivity + b.sensitivity);
    }
    return out;
}

/// Picks the polarity with the larger AUC (HigherIsPositive on a tie).
inline RocAnalysis roc_auto(std::span<const double> scores, std::span<const bool> positive) {
    auto up = roc(scores, positive, Polarity::HigherIsPositive);
    if (up.auc >= 0.5) return up;
    return roc(scores, positive, Polarity::LowerIsPositive);
}

inline Group classify(double score, double threshold, Polarity polarity) {
    if (!std::isfinite(threshold)) throw ArgumentError("classification threshold must be finite");
    const bool fgr = polarity == Polarity::HigherIsPositive ? score > threshold : score < threshold;
    return fgr ? Group::Fgr : Group::Control;
}

struct Confusion {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::size_t total() const noexcept { return tp + fp + tn + fn; }
    double accuracy() const noexcept {
        return total() == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(total());
    }
};

inline Confusion confusion(std::span<const Group> predicted, std::span<const Group> truth) {
    if (predicted.size() != truth.size()) throw ArgumentError("confusion needs one prediction per label");
    Confusion c;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool p = predicted[i] == Group::Fgr;
        const bool t = truth[i] == Group::Fgr;
        if (p && t) ++c.tp;
        else if (p && !t) ++c.fp;
        else if (!p && t) ++c.fn;
        else ++c.tn;
    }
    return c;
}

struct ClassifierReport {
    ZReference reference;
    RocAnalysis training;
    std::vector<double> train_scores;
    std::vector<double> test_scores;
    std::vector<Group> test_predictions;
    Confusion test;
};

/// Training: oeTLV -> z-scores against the training controls -> ROC with
/// automatic polarity. The resulting threshold is applied unchanged to test.
inline ClassifierReport train_and_evaluate(std::span<const SubjectRecord> train, std::span<const SubjectRecord> test) {
    if (train.empty()) throw ArgumentError("training set is empty");
    std::vector<double> train_oe, controls;
    std::vector<bool> labels;
    for (const auto& s : train) {
        s.validate();
        train_oe.push_back(oe_tlv(s.tlv_ml, s.ga_weeks));
        labels.push_back(s.group == Group::Fgr);
        if (s.group == Group::Control) controls.push_back(train_oe.back());
    }
    const bool has_fgr = std::find(labels.begin(), labels.end(), true) != labels.end();
    if (controls.empty() || !has_fgr) throw ArgumentError("training set must contain both FGR and control subjects");

    ClassifierReport out;
    out.reference = zscore_fit(controls);
    for (double v : train_oe) out.train_scores.push_back(zscore_apply(v, out.reference));
    // std::vector<bool> has no contiguous storage; copy into a span-able buffer.
    const std::unique_ptr<bool[]> label_buf(new bool[labels.size()]);
    std::copy(labels.begin(), labels.end(), label_buf.get());
    out.training = roc_auto(out.train_scores, std::span<const bool>(label_buf.get(), labels.size()));

    std::vector<Group> truth;
    for (const auto& s : test) {
        s.validate();
        const double z = zscore_apply(oe_tlv(s.tlv_ml, s.ga_weeks), out.reference);
        out.test_scores.push_back(z);
        out.test_predictions.push_back(classify(z, out.training.youden_threshold, out.training.polarity));
        truth.push_back(s.group);
    }
    out.test = confusion(out.test_predictions, truth);
    return out;
}

}  // namespace ivimlab::fgr
