#pragma once
// CSV schemas. UTF-8, comma delimiter, header row, '.' decimal point, LF
// line endings, no quoting (identifiers never contain commas).
//
//   dataset    case_id,patient_id,visit_id,volume_id,bscan_index,label,x0..     (T2)
//              case_id,patient_id,visit_id,volume_id,bscan_index,label,a0..,b0.. (T1 pairs)
//   truth      case_id,patient_id,visit_id,volume_id,bscan_index,label
//   prediction case_id,patient_id,volume_id,bscan_index,true_label,
//              p_reduced,p_stable,p_worsened[,p_other],pred_label[,final_label,postprocessed]
//   report     task,micro_f1,specificity,rk_correlation,cohens_kappa,qw_kappa,
//              balanced_accuracy,average,degenerate
//
// Features are written in shortest round-trip form, probabilities with 9
// decimals, metrics with 6.

#include <array>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "config.hpp"
#include "core.hpp"
#include "metrics.hpp"
#include "model.hpp"

namespace ordchange {

inline std::string format_shortest(double v) {
    std::array<char, 32> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

inline std::string format_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

/// Writes to a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp);
        out << content;
        if (!out) throw IoError("write failed for " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp + " to " + path.string() + ": " + ec.message());
}

struct CsvTable {
    std::string source;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<int> lines; // source line of each row

    std::optional<std::size_t> column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        return std::nullopt;
    }

    std::size_t require(const std::string& name) const {
        auto c = column(name);
        if (!c) throw ConfigError(source + ": missing column '" + name + "'");
        return *c;
    }

    [[noreturn]] void fail(std::size_t row, const std::string& why) const {
        throw ConfigError(source + ":" + std::to_string(lines[row]) + ": " + why);
    }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    CsvTable t;
    t.source = path.string();
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = detail::split(line, ',');
        if (t.header.empty()) {
            t.header = std::move(fields);
            continue;
        }
        if (fields.size() != t.header.size())
            throw ConfigError(t.source + ":" + std::to_string(lineno) + ": expected " +
                              std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
        t.lines.push_back(lineno);
    }
    if (t.header.empty()) throw ConfigError(t.source + ": empty CSV file");
    return t;
}

namespace detail {

inline double cell_double(const CsvTable& t, std::size_t row, std::size_t col) {
    double v = 0.0;
    if (!parse_number(t.rows[row][col], v)) t.fail(row, "column '" + t.header[col] + "' is not a number");
    return v;
}

inline int cell_int(const CsvTable& t, std::size_t row, std::size_t col) {
    int v = 0;
    if (!parse_number(t.rows[row][col], v)) t.fail(row, "column '" + t.header[col] + "' is not an integer");
    return v;
}

inline int cell_label(const CsvTable& t, std::size_t row, std::size_t col, int classes) {
    try {
        const int k = static_cast<int>(parse_label(t.rows[row][col]));
        if (k >= classes) t.fail(row, "label '" + t.rows[row][col] + "' is not valid for this task");
        return k;
    } catch (const InvalidInputError&) {
        t.fail(row, "unknown label '" + t.rows[row][col] + "'");
    }
}

inline const char* const kKeyColumns[] = {"case_id", "patient_id", "visit_id", "volume_id", "bscan_index", "label"};

} // namespace detail

struct Dataset {
    Task task = Task::T2;
    std::size_t feature_dim = 0;
    std::vector<Sample> samples;
};

inline std::string dataset_csv(const Dataset& ds) {
    std::string out = "case_id,patient_id,visit_id,volume_id,bscan_index,label";
    const bool paired = ds.task == Task::T1;
    for (std::size_t i = 0; i < ds.feature_dim; ++i) out += (paired ? ",a" : ",x") + std::to_string(i);
    if (paired)
        for (std::size_t i = 0; i < ds.feature_dim; ++i) out += ",b" + std::to_string(i);
    out += '\n';
    for (const auto& s : ds.samples) {
        out += s.key.case_id + ',' + s.key.patient_id + ',' + s.key.visit_id + ',' + s.key.volume_id + ',' +
               std::to_string(s.key.bscan_index) + ',' + std::string(label_name(static_cast<Label>(s.label)));
        for (double v : s.a) out += ',' + format_shortest(v);
        for (double v : s.b) out += ',' + format_shortest(v);
        out += '\n';
    }
    return out;
}

inline std::string truth_csv(const Dataset& ds) {
    std::string out = "case_id,patient_id,visit_id,volume_id,bscan_index,label\n";
    for (const auto& s : ds.samples)
        out += s.key.case_id + ',' + s.key.patient_id + ',' + s.key.visit_id + ',' + s.key.volume_id + ',' +
               std::to_string(s.key.bscan_index) + ',' + std::string(label_name(static_cast<Label>(s.label))) + '\n';
    return out;
}

inline RecordKey read_key(const CsvTable& t, std::size_t row) {
    RecordKey k;
    k.case_id = t.rows[row][t.require("case_id")];
    k.patient_id = t.rows[row][t.require("patient_id")];
    if (auto c = t.column("visit_id")) k.visit_id = t.rows[row][*c];
    k.volume_id = t.rows[row][t.require("volume_id")];
    k.bscan_index = detail::cell_int(t, row, t.require("bscan_index"));
    return k;
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    const CsvTable t = read_csv(path);
    for (const char* c : detail::kKeyColumns) t.require(c);
    Dataset ds;
    ds.task = t.column("a0") ? Task::T1 : Task::T2;
    const char* first = ds.task == Task::T1 ? "a" : "x";
    while (t.column(first + std::to_string(ds.feature_dim))) ++ds.feature_dim;
    if (ds.feature_dim == 0) throw ConfigError(t.source + ": no feature columns (x0.. or a0..)");
    std::vector<std::size_t> cols_a, cols_b;
    for (std::size_t i = 0; i < ds.feature_dim; ++i) {
        cols_a.push_back(t.require(first + std::to_string(i)));
        if (ds.task == Task::T1) cols_b.push_back(t.require("b" + std::to_string(i)));
    }
    const std::size_t label_col = t.require("label");
    const int classes = num_classes(ds.task);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        Sample s;
        s.key = read_key(t, r);
        s.label = detail::cell_label(t, r, label_col, classes);
        for (auto c : cols_a) s.a.push_back(detail::cell_double(t, r, c));
        for (auto c : cols_b) s.b.push_back(detail::cell_double(t, r, c));
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

struct TruthRow {
    RecordKey key;
    int label = 0;
};

inline std::vector<TruthRow> load_truth(const std::filesystem::path& path, Task task) {
    const CsvTable t = read_csv(path);
    const std::size_t label_col = t.require("label");
    std::vector<TruthRow> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        out.push_back(TruthRow{read_key(t, r), detail::cell_label(t, r, label_col, num_classes(task))});
    return out;
}

struct PredictionRow {
    RecordKey key;
    std::optional<int> true_label;
    ProbVector probs;
    int pred_label = 0;
    std::optional<int> final_label;
    bool postprocessed = false;
};

inline constexpr const char* kProbColumns[] = {"p_reduced", "p_stable", "p_worsened", "p_other"};

inline std::string predictions_csv(const std::vector<PredictionRow>& rows, Task task, bool with_final) {
    const int classes = num_classes(task);
    std::string out = "case_id,patient_id,volume_id,bscan_index,true_label";
    for (int k = 0; k < classes; ++k) out += std::string(",") + kProbColumns[k];
    out += ",pred_label";
    if (with_final) out += ",final_label,postprocessed";
    out += '\n';
    for (const auto& r : rows) {
        if (static_cast<int>(r.probs.size()) != classes) throw ConfigError("prediction width does not match task");
        out += r.key.case_id + ',' + r.key.patient_id + ',' + r.key.volume_id + ',' + std::to_string(r.key.bscan_index) +
               ',' + (r.true_label ? std::string(label_name(static_cast<Label>(*r.true_label))) : std::string());
        for (int k = 0; k < classes; ++k) out += ',' + format_fixed(r.probs[static_cast<std::size_t>(k)], 9);
        out += ',' + std::string(label_name(static_cast<Label>(r.pred_label)));
        if (with_final)
            out += ',' + std::string(label_name(static_cast<Label>(r.final_label.value_or(r.pred_label)))) + ',' +
                   (r.postprocessed ? "1" : "0");
        out += '\n';
    }
    return out;
}

struct PredictionFile {
    Task task = Task::T2;
    std::vector<PredictionRow> rows;
};

inline PredictionFile load_predictions(const std::filesystem::path& path) {
    const CsvTable t = read_csv(path);
    PredictionFile f;
    f.task = t.column("p_other") ? Task::T1 : Task::T2;
    const int classes = num_classes(f.task);
    std::vector<std::size_t> pcols;
    for (int k = 0; k < classes; ++k) pcols.push_back(t.require(kProbColumns[k]));
    const auto true_col = t.require("true_label");
    const auto pred_col = t.require("pred_label");
    const auto final_col = t.column("final_label");
    const auto post_col = t.column("postprocessed");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        PredictionRow row;
        row.key = read_key(t, r);
        if (!t.rows[r][true_col].empty()) row.true_label = detail::cell_label(t, r, true_col, classes);
        std::vector<double> p;
        for (auto c : pcols) p.push_back(detail::cell_double(t, r, c));
        // 9-decimal rounding can leave the sum a few 1e-9 away from 1
        double sum = 0.0;
        for (double v : p) sum += v;
        if (std::abs(sum - 1.0) > 1e-6) t.fail(r, "probabilities do not sum to 1");
        for (double& v : p) v /= sum;
        row.probs = ProbVector(std::move(p));
        row.pred_label = detail::cell_label(t, r, pred_col, classes);
        if (final_col) row.final_label = detail::cell_label(t, r, *final_col, classes);
        if (post_col) row.postprocessed = t.rows[r][*post_col] == "1";
        f.rows.push_back(std::move(row));
    }
    return f;
}

inline std::string report_csv(const MetricReport& r) {
    std::string out = "task,micro_f1,specificity,rk_correlation,cohens_kappa,qw_kappa,balanced_accuracy,average,degenerate\n";
    out += std::string(task_name(r.task));
    for (auto id : kAllMetrics) {
        out += ',';
        if (auto v = r.get(id)) out += format_fixed(*v, 6);
    }
    out += ',' + format_fixed(r.average, 6) + ',';
    for (std::size_t i = 0; i < r.degenerate.size(); ++i) out += (i ? ";" : "") + std::string(metric_name(r.degenerate[i]));
    out += '\n';
    return out;
}

inline std::string history_csv(const TrainHistory& h) {
    std::string out = "epoch,lr,train_loss";
    for (auto id : kAllMetrics) out += std::string(",") + metric_name(id);
    out += ",average\n";
    for (const auto& e : h.epochs) {
        out += std::to_string(e.epoch) + ',' + format_shortest(e.lr) + ',' + format_shortest(e.train_loss);
        for (auto id : kAllMetrics) {
            out += ',';
            if (auto v = e.val.get(id)) out += format_shortest(*v);
        }
        out += ',' + format_shortest(e.val.average) + '\n';
    }
    return out;
}

} // namespace ordchange
