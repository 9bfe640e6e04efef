#pragma once
// Domain types shared by every module: labels, probability vectors,
// logits and the confusion matrix.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"

namespace ordchange {

enum class Task { T1, T2 };

/// Change category. The numeric value of the first three is their ordinal
/// rank; Other (T1 only) has no rank.
enum class Label : int { Reduced = 0, Stable = 1, Worsened = 2, Other = 3 };

inline constexpr double kProbTolerance = 1e-9;

inline constexpr int num_classes(Task task) { return task == Task::T1 ? 4 : 3; }

inline std::string_view task_name(Task task) { return task == Task::T1 ? "t1" : "t2"; }

inline Task parse_task(std::string_view s) {
    if (s == "t1" || s == "T1") return Task::T1;
    if (s == "t2" || s == "T2") return Task::T2;
    throw ConfigError("unknown task '" + std::string(s) + "' (expected t1 or t2)");
}

inline std::string_view label_name(Label l) {
    switch (l) {
        case Label::Reduced: return "Reduced";
        case Label::Stable: return "Stable";
        case Label::Worsened: return "Worsened";
        case Label::Other: return "Other";
    }
    return "?";
}

inline Label parse_label(std::string_view s) {
    if (s == "Reduced" || s == "0") return Label::Reduced;
    if (s == "Stable" || s == "1") return Label::Stable;
    if (s == "Worsened" || s == "2") return Label::Worsened;
    if (s == "Other" || s == "3") return Label::Other;
    throw InvalidInputError("unknown label '" + std::string(s) + "'");
}

/// A label bound to its task; T2 labels are never Other.
class ClassLabel {
public:
    ClassLabel(Label value, Task task) : value_(value), task_(task) {
        if (task == Task::T2 && value == Label::Other)
            throw InvalidInputError("label Other is not valid for task T2");
    }

    static ClassLabel from_index(int index, Task task) {
        if (index < 0 || index >= num_classes(task))
            throw InvalidInputError("class index " + std::to_string(index) + " out of range");
        return ClassLabel(static_cast<Label>(index), task);
    }

    Label value() const { return value_; }
    Task task() const { return task_; }
    int index() const { return static_cast<int>(value_); }
    bool ordinal() const { return value_ != Label::Other; }

    friend bool operator==(const ClassLabel&, const ClassLabel&) = default;

private:
    Label value_;
    Task task_;
};

/// Finite pre-softmax scores.
class LogitVector {
public:
    LogitVector() = default;
    explicit LogitVector(std::vector<double> z) : z_(std::move(z)) {
        for (double v : z_)
            if (!std::isfinite(v)) throw InvalidInputError("non-finite logit");
    }
    LogitVector(std::initializer_list<double> z) : LogitVector(std::vector<double>(z)) {}

    std::size_t size() const { return z_.size(); }
    double operator[](std::size_t i) const { return z_[i]; }
    std::span<const double> values() const { return z_; }

private:
    std::vector<double> z_;
};

/// Discrete distribution over C classes. Entries lie in [0, 1] and sum to 1
/// within kProbTolerance.
class ProbVector {
public:
    ProbVector() = default;
    explicit ProbVector(std::vector<double> p) : p_(std::move(p)) {
        if (p_.empty()) throw InvalidInputError("empty probability vector");
        double sum = 0.0;
        for (double v : p_) {
            if (!std::isfinite(v) || v < -kProbTolerance || v > 1.0 + kProbTolerance)
                throw InvalidInputError("probability entry outside [0, 1]");
            sum += v;
        }
        if (std::abs(sum - 1.0) > kProbTolerance)
            throw InvalidInputError("probabilities sum to " + std::to_string(sum) + ", not 1");
        for (double& v : p_) v = std::clamp(v, 0.0, 1.0);
    }
    ProbVector(std::initializer_list<double> p) : ProbVector(std::vector<double>(p)) {}

    static ProbVector one_hot(int k, int classes) {
        if (k < 0 || k >= classes) throw InvalidInputError("one-hot index out of range");
        std::vector<double> p(static_cast<std::size_t>(classes), 0.0);
        p[static_cast<std::size_t>(k)] = 1.0;
        return ProbVector(std::move(p));
    }

    std::size_t size() const { return p_.size(); }
    double operator[](std::size_t i) const { return p_[i]; }
    std::span<const double> values() const { return p_; }

    /// Index of the largest entry; ties go to the lower index.
    int argmax() const {
        return static_cast<int>(std::max_element(p_.begin(), p_.end()) - p_.begin());
    }

private:
    std::vector<double> p_;
};

/// Max-shifted softmax; stable for |z| far beyond 1e4.
inline ProbVector softmax(const LogitVector& z) {
    if (z.size() == 0) throw InvalidInputError("empty logit vector");
    auto v = z.values();
    const double m = *std::max_element(v.begin(), v.end());
    std::vector<double> p(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        p[i] = std::exp(v[i] - m);
        sum += p[i];
    }
    for (double& x : p) x /= sum;
    return ProbVector(std::move(p));
}

/// Cumulative distribution: entry i is p[0] + ... + p[i].
inline std::vector<double> cdf(const ProbVector& p) {
    std::vector<double> out(p.size());
    std::partial_sum(p.values().begin(), p.values().end(), out.begin());
    return out;
}

/// C x C count matrix, rows are true class, columns predicted class.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int classes) : classes_(classes) {
        if (classes < 1) throw InvalidInputError("confusion matrix needs at least one class");
        counts_.assign(static_cast<std::size_t>(classes * classes), 0);
    }

    /// Row-major construction, mainly for tests and report round trips.
    ConfusionMatrix(int classes, std::vector<std::int64_t> row_major) : ConfusionMatrix(classes) {
        if (row_major.size() != counts_.size())
            throw InvalidInputError("confusion matrix data has wrong size");
        for (auto v : row_major)
            if (v < 0) throw InvalidInputError("negative count in confusion matrix");
        counts_ = std::move(row_major);
    }

    ConfusionMatrix(std::initializer_list<std::initializer_list<std::int64_t>> rows)
        : ConfusionMatrix(static_cast<int>(rows.size())) {
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != rows.size()) throw InvalidInputError("confusion matrix must be square");
            for (auto v : row) {
                if (v < 0) throw InvalidInputError("negative count in confusion matrix");
                counts_[i++] = v;
            }
        }
    }

    int classes() const { return classes_; }

    std::int64_t at(int truth, int pred) const { return counts_[index(truth, pred)]; }

    void add(int truth, int pred, std::int64_t n = 1) { counts_[index(truth, pred)] += n; }

    std::int64_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }

    std::int64_t trace() const {
        std::int64_t t = 0;
        for (int k = 0; k < classes_; ++k) t += at(k, k);
        return t;
    }

    std::int64_t row_sum(int truth) const {
        std::int64_t s = 0;
        for (int p = 0; p < classes_; ++p) s += at(truth, p);
        return s;
    }

    std::int64_t col_sum(int pred) const {
        std::int64_t s = 0;
        for (int t = 0; t < classes_; ++t) s += at(t, pred);
        return s;
    }

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::size_t index(int truth, int pred) const {
        if (truth < 0 || truth >= classes_ || pred < 0 || pred >= classes_)
            throw InvalidInputError("class index out of range for confusion matrix");
        return static_cast<std::size_t>(truth * classes_ + pred);
    }

    int classes_;
    std::vector<std::int64_t> counts_;
};

inline ConfusionMatrix confusion_from_predictions(std::span<const int> truth, std::span<const int> pred,
                                                  int classes) {
    if (truth.size() != pred.size())
        throw InvalidInputError("truth and prediction lists differ in length");
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= classes || pred[i] < 0 || pred[i] >= classes)
            throw InvalidInputError("label out of range at position " + std::to_string(i));
        cm.add(truth[i], pred[i]);
    }
    return cm;
}

/// Identity of one sample (a B-scan, or a B-scan pair for T1).
struct RecordKey {
    std::string case_id;
    std::string patient_id;
    std::string visit_id;
    std::string volume_id;
    int bscan_index = 0;

    friend bool operator==(const RecordKey&, const RecordKey&) = default;
};

/// One single-visit sample.
struct BscanRecord {
    RecordKey key;
    std::vector<double> features;
    ClassLabel label{Label::Stable, Task::T2};
};

/// Two registered B-scans from consecutive visits. The label is a T1 class
/// index, or for pretext pairs a binary change flag (0 no change, 1 change).
struct PairRecord {
    RecordKey key;
    std::vector<double> features_a;
    std::vector<double> features_b;
    int label = 0;
};

} // namespace ordchange
