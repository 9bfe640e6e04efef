#pragma once
// Challenge metric suite over a confusion matrix.
//
// Every metric is a function of the matrix alone, so results are invariant
// to sample order. Degenerate denominators yield 0 with the `degenerate`
// flag set instead of throwing, so a batch evaluation always completes.
// Specificity is the macro average of one-vs-rest specificities.

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "core.hpp"

namespace ordchange {

struct MetricValue {
    double value = 0.0;
    bool degenerate = false;
};

namespace detail {

inline double total_or_throw(const ConfusionMatrix& cm, const char* metric) {
    const auto s = cm.total();
    if (s == 0) throw UndefinedMetricError(std::string(metric) + " is undefined on an empty confusion matrix");
    return static_cast<double>(s);
}

} // namespace detail

/// Single-label micro-F1, which is identical to accuracy.
inline double micro_f1(const ConfusionMatrix& cm) {
    const double s = detail::total_or_throw(cm, "micro_f1");
    return static_cast<double>(cm.trace()) / s;
}

inline MetricValue specificity(const ConfusionMatrix& cm) {
    const double s = detail::total_or_throw(cm, "specificity");
    MetricValue out;
    double sum = 0.0;
    int used = 0;
    for (int k = 0; k < cm.classes(); ++k) {
        const double tp = static_cast<double>(cm.at(k, k));
        const double fp = static_cast<double>(cm.col_sum(k)) - tp;
        const double tn = s - static_cast<double>(cm.row_sum(k)) - fp;
        if (tn + fp == 0.0) {
            out.degenerate = true;
            continue;
        }
        sum += tn / (tn + fp);
        ++used;
    }
    out.value = used > 0 ? sum / used : 0.0;
    return out;
}

/// Gorodkin's Rk, the multiclass Matthews correlation coefficient.
inline MetricValue rk_correlation(const ConfusionMatrix& cm) {
    const double s = detail::total_or_throw(cm, "rk_correlation");
    const double c = static_cast<double>(cm.trace());
    double pt = 0.0, pp = 0.0, tt = 0.0;
    for (int k = 0; k < cm.classes(); ++k) {
        const double p = static_cast<double>(cm.col_sum(k));
        const double t = static_cast<double>(cm.row_sum(k));
        pt += p * t;
        pp += p * p;
        tt += t * t;
    }
    const double den = std::sqrt((s * s - pp) * (s * s - tt));
    if (den == 0.0) return {0.0, true};
    return {(c * s - pt) / den, false};
}

inline MetricValue cohens_kappa(const ConfusionMatrix& cm) {
    const double s = detail::total_or_throw(cm, "cohens_kappa");
    const double po = static_cast<double>(cm.trace()) / s;
    double pe = 0.0;
    for (int k = 0; k < cm.classes(); ++k)
        pe += static_cast<double>(cm.row_sum(k)) * static_cast<double>(cm.col_sum(k));
    pe /= s * s;
    if (1.0 - pe == 0.0) return {0.0, true};
    return {(po - pe) / (1.0 - pe), false};
}

/// Kappa with penalties (i - j)^2 / (C - 1)^2; class indices are ranks.
inline MetricValue quadratic_weighted_kappa(const ConfusionMatrix& cm) {
    const int c = cm.classes();
    if (c < 2) throw InvalidInputError("quadratic weighted kappa needs at least two classes");
    const double s = detail::total_or_throw(cm, "quadratic_weighted_kappa");
    const double norm = static_cast<double>((c - 1) * (c - 1));
    double observed = 0.0, expected = 0.0;
    for (int i = 0; i < c; ++i) {
        const double row = static_cast<double>(cm.row_sum(i));
        for (int j = 0; j < c; ++j) {
            const double w = static_cast<double>((i - j) * (i - j)) / norm;
            observed += w * static_cast<double>(cm.at(i, j)) / s;
            expected += w * row * static_cast<double>(cm.col_sum(j)) / (s * s);
        }
    }
    if (expected == 0.0) return {0.0, true};
    return {1.0 - observed / expected, false};
}

/// Mean per-class recall. Classes with no true samples are skipped and flagged.
inline MetricValue balanced_accuracy(const ConfusionMatrix& cm) {
    detail::total_or_throw(cm, "balanced_accuracy");
    MetricValue out;
    double sum = 0.0;
    int used = 0;
    for (int k = 0; k < cm.classes(); ++k) {
        const auto row = cm.row_sum(k);
        if (row == 0) {
            out.degenerate = true;
            continue;
        }
        sum += static_cast<double>(cm.at(k, k)) / static_cast<double>(row);
        ++used;
    }
    out.value = sum / used;
    return out;
}

enum class MetricId { MicroF1, Specificity, RkCorrelation, CohensKappa, QwKappa, BalancedAccuracy };

inline constexpr std::array<MetricId, 6> kAllMetrics = {MetricId::MicroF1,     MetricId::Specificity,
                                                        MetricId::RkCorrelation, MetricId::CohensKappa,
                                                        MetricId::QwKappa,     MetricId::BalancedAccuracy};

inline const char* metric_name(MetricId id) {
    switch (id) {
        case MetricId::MicroF1: return "micro_f1";
        case MetricId::Specificity: return "specificity";
        case MetricId::RkCorrelation: return "rk_correlation";
        case MetricId::CohensKappa: return "cohens_kappa";
        case MetricId::QwKappa: return "qw_kappa";
        case MetricId::BalancedAccuracy: return "balanced_accuracy";
    }
    return "?";
}

struct MetricReport {
    Task task = Task::T2;
    std::optional<double> micro_f1;
    std::optional<double> specificity;
    std::optional<double> rk_correlation;
    std::optional<double> cohens_kappa;
    std::optional<double> qw_kappa;
    std::optional<double> balanced_accuracy;
    double average = 0.0;
    std::vector<MetricId> degenerate; // metrics that hit a degenerate denominator

    std::optional<double> get(MetricId id) const {
        switch (id) {
            case MetricId::MicroF1: return micro_f1;
            case MetricId::Specificity: return specificity;
            case MetricId::RkCorrelation: return rk_correlation;
            case MetricId::CohensKappa: return cohens_kappa;
            case MetricId::QwKappa: return qw_kappa;
            case MetricId::BalancedAccuracy: return balanced_accuracy;
        }
        return std::nullopt;
    }

    bool is_degenerate(MetricId id) const {
        for (auto d : degenerate)
            if (d == id) return true;
        return false;
    }
};

/// Leaderboard score: T1 averages micro-F1, Rk and specificity; T2 adds the
/// quadratic-weighted kappa. Balanced accuracy and Cohen's kappa never count.
inline double challenge_average(const MetricReport& r) {
    std::vector<MetricId> parts = {MetricId::MicroF1, MetricId::RkCorrelation, MetricId::Specificity};
    if (r.task == Task::T2) parts.push_back(MetricId::QwKappa);
    double sum = 0.0;
    for (auto id : parts) {
        auto v = r.get(id);
        if (!v) throw ConfigError(std::string("challenge average needs ") + metric_name(id));
        sum += *v;
    }
    return sum / static_cast<double>(parts.size());
}

/// Computes all six metrics and the challenge average.
inline MetricReport evaluate(const ConfusionMatrix& cm, Task task) {
    MetricReport r;
    r.task = task;
    r.micro_f1 = micro_f1(cm);
    auto record = [&](MetricId id, MetricValue v) {
        if (v.degenerate) r.degenerate.push_back(id);
        return v.value;
    };
    r.specificity = record(MetricId::Specificity, specificity(cm));
    r.rk_correlation = record(MetricId::RkCorrelation, rk_correlation(cm));
    r.cohens_kappa = record(MetricId::CohensKappa, cohens_kappa(cm));
    // Other has no rank, so the weighted kappa is only reported for T2.
    if (task == Task::T2) r.qw_kappa = record(MetricId::QwKappa, quadratic_weighted_kappa(cm));
    r.balanced_accuracy = record(MetricId::BalancedAccuracy, balanced_accuracy(cm));
    r.average = challenge_average(r);
    return r;
}

} // namespace ordchange
