#pragma once
// Command implementations behind the ordchange CLI. Each command returns a
// process exit code; the codes are stable API:
//   0 ok, 2 io, 3 config, 4 numeric, 5 checkpoint, 6 alignment,
//   7 gradient check failure.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "checkpoint.hpp"
#include "config.hpp"
#include "csv_io.hpp"
#include "datagen.hpp"
#include "ensemble.hpp"
#include "gradcheck.hpp"
#include "metrics.hpp"
#include "model.hpp"

namespace ordchange::app {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int {
    kOk = 0,
    kIo = 2,
    kConfig = 3,
    kNumeric = 4,
    kCheckpoint = 5,
    kAlignment = 6,
    kGradcheckFailed = 7,
};

struct RunManifest {
    std::string command;
    std::string config_text;
    std::uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    double duration_seconds = 0.0;

    nlohmann::json to_json() const {
        return nlohmann::json{{"command", command},   {"config", config_text},
                              {"seed", seed},         {"inputs", inputs},
                              {"outputs", outputs},   {"version", kVersion},
                              {"duration_seconds", duration_seconds}};
    }

    void write(const std::filesystem::path& path) const { write_file_atomic(path, to_json().dump(2) + "\n"); }
};

/// Runs `body`, translating the error taxonomy into exit codes.
inline int guarded(std::ostream& err, const std::function<int()>& body) {
    try {
        return body();
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kIo;
    } catch (const CheckpointError& e) {
        err << "error: " << e.what() << "\n";
        return kCheckpoint;
    } catch (const AlignmentError& e) {
        err << "error: " << e.what() << "\n";
        return kAlignment;
    } catch (const NumericError& e) {
        err << "error: " << e.what() << "\n";
        return kNumeric;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kConfig;
    } catch (const DataError& e) {
        err << "error: " << e.what() << "\n";
        return kConfig;
    } catch (const InvalidInputError& e) {
        err << "error: " << e.what() << "\n";
        return kConfig;
    } catch (const UndefinedMetricError& e) {
        err << "error: " << e.what() << "\n";
        return kConfig;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kIo;
    }
}

inline unsigned threads_from_env() {
    if (const char* v = std::getenv("ORDCHANGE_THREADS")) {
        unsigned n = 0;
        if (detail::parse_number(std::string_view(v), n) && n > 0) return n;
    }
    return 1;
}

inline void ensure_directory(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir))
        throw IoError("cannot create output directory " + dir.string() + (ec ? ": " + ec.message() : ""));
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- gen

struct GenOptions {
    std::filesystem::path config;
    std::filesystem::path out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<Task> task;
};

inline Dataset generate_dataset(const GenConfig& g) {
    Dataset ds;
    ds.task = g.task;
    ds.feature_dim = g.feature_dim;
    if (g.task == Task::T2) {
        const auto recs = gen_t2_volumes(g);
        validate_volumes(recs);
        for (const auto& r : recs) ds.samples.push_back(to_sample(r));
    } else {
        for (const auto& r : gen_t1_pairs(g)) ds.samples.push_back(to_sample(r));
    }
    return ds;
}

inline int cmd_gen(const GenOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const auto t0 = std::chrono::steady_clock::now();
        auto kv = KeyValueConfig::load(opt.config);
        GenConfig g = parse_gen_config(kv);
        if (opt.task) g.task = *opt.task;
        if (opt.seed) g.seed = *opt.seed;
        g.validate();
        const Dataset ds = generate_dataset(g);

        ensure_directory(opt.out_dir);
        const auto data_path = opt.out_dir / "dataset.csv";
        const auto truth_path = opt.out_dir / "truth.csv";
        write_file_atomic(data_path, dataset_csv(ds));
        write_file_atomic(truth_path, truth_csv(ds));
        RunManifest m{"gen", kv.text(), g.seed, {opt.config.string()}, {data_path.string(), truth_path.string()},
                      seconds_since(t0)};
        m.write(opt.out_dir / "manifest.json");
        out << "wrote " << ds.samples.size() << " " << task_name(ds.task) << " records to " << data_path.string()
            << "\n";
        return kOk;
    });
}

// ---------------------------------------------------------------- train

struct TrainOptions {
    std::filesystem::path dataset;
    std::optional<std::filesystem::path> config;
    std::filesystem::path out; // checkpoint path; folds insert ".foldK" before the extension
    std::optional<std::uint64_t> seed;
    std::optional<LossKind> loss;
    std::optional<int> folds;
    unsigned threads = 1;
};

/// Fold index per patient: sorted ids, shuffled under `seed`, dealt round-robin.
inline std::map<std::string, int> assign_patient_folds(std::span<const Sample> samples, int folds, std::uint64_t seed) {
    std::set<std::string> ids;
    for (const auto& s : samples) ids.insert(s.key.patient_id);
    std::vector<std::string> order(ids.begin(), ids.end());
    Rng rng(seed ^ 0x5eed5eedULL);
    std::shuffle(order.begin(), order.end(), rng);
    std::map<std::string, int> out;
    for (std::size_t i = 0; i < order.size(); ++i) out[order[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
    return out;
}

inline std::filesystem::path fold_path(const std::filesystem::path& base, int fold) {
    auto p = base;
    p.replace_filename(base.stem().string() + ".fold" + std::to_string(fold) + base.extension().string());
    return p;
}

inline std::filesystem::path sidecar(const std::filesystem::path& p, const std::string& suffix) {
    return std::filesystem::path(p.string() + suffix);
}

inline int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const auto t0 = std::chrono::steady_clock::now();
        std::optional<KeyValueConfig> kv;
        if (opt.config) kv = KeyValueConfig::load(*opt.config);
        else kv = KeyValueConfig::parse("", "<defaults>");
        SplitConfig split;
        TrainConfig cfg = parse_train_config(*kv, &split);

        const Dataset ds = load_dataset(opt.dataset);
        if (kv->has("task") && cfg.task != ds.task)
            throw ConfigError("config task " + std::string(task_name(cfg.task)) + " does not match dataset task " +
                              std::string(task_name(ds.task)));
        cfg.task = ds.task;
        if (opt.seed) cfg.seed = *opt.seed;
        if (opt.loss) cfg.loss_kind = *opt.loss;
        if (opt.folds) split.folds = *opt.folds;
        cfg.validate();
        if (ds.samples.empty()) throw DataError("dataset has no records");

        struct Job {
            std::vector<Sample> train, val;
            std::filesystem::path checkpoint;
            std::optional<TrainResult> result;
            std::exception_ptr error;
        };
        std::vector<Job> jobs;
        if (split.folds > 1) {
            const auto folds = assign_patient_folds(ds.samples, split.folds, cfg.seed);
            for (int k = 0; k < split.folds; ++k) {
                Job j;
                for (const auto& s : ds.samples) (folds.at(s.key.patient_id) == k ? j.val : j.train).push_back(s);
                j.checkpoint = fold_path(opt.out, k);
                jobs.push_back(std::move(j));
            }
        } else {
            std::vector<std::string> order;
            {
                std::set<std::string> ids;
                for (const auto& s : ds.samples) ids.insert(s.key.patient_id);
                order.assign(ids.begin(), ids.end());
                Rng rng(cfg.seed ^ 0x5eed5eedULL);
                std::shuffle(order.begin(), order.end(), rng);
            }
            const auto n_val = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::llround(split.val_ratio * static_cast<double>(order.size()))));
            if (n_val >= order.size()) throw DataError("need at least two patients for a train/validation split");
            std::set<std::string> val_ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
            Job j;
            for (const auto& s : ds.samples) (val_ids.count(s.key.patient_id) ? j.val : j.train).push_back(s);
            j.checkpoint = opt.out;
            jobs.push_back(std::move(j));
        }

        auto run = [&](Job& j) {
            try {
                j.result = train(j.train, j.val, cfg);
            } catch (...) {
                j.error = std::current_exception();
            }
        };
        const unsigned workers = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(jobs.size())));
        for (std::size_t start = 0; start < jobs.size(); start += workers) {
            std::vector<std::thread> pool;
            for (std::size_t i = start; i < std::min(jobs.size(), start + workers); ++i)
                pool.emplace_back(run, std::ref(jobs[i]));
            for (auto& t : pool) t.join();
        }
        for (auto& j : jobs)
            if (j.error) std::rethrow_exception(j.error);

        for (std::size_t i = 0; i < jobs.size(); ++i) {
            const auto& j = jobs[i];
            save_checkpoint(j.result->params, j.checkpoint);
            const auto hist = sidecar(j.checkpoint, ".history.csv");
            write_file_atomic(hist, history_csv(j.result->history));
            RunManifest m{"train", kv->text(), cfg.seed, {opt.dataset.string()},
                          {j.checkpoint.string(), hist.string()}, seconds_since(t0)};
            m.write(sidecar(j.checkpoint, ".manifest.json"));
            if (jobs.size() > 1) out << "fold " << i << ": ";
            out << "best epoch " << j.result->history.best_epoch << ", best validation challenge average "
                << format_fixed(j.result->history.best_average, 6) << " -> " << j.checkpoint.string() << "\n";
        }
        return kOk;
    });
}

// ---------------------------------------------------------------- predict

struct PredictOptions {
    std::filesystem::path checkpoint;
    std::filesystem::path dataset;
    std::filesystem::path out;
    unsigned threads = 1;
};

inline int cmd_predict(const PredictOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const auto t0 = std::chrono::steady_clock::now();
        const ModelParams params = load_checkpoint(opt.checkpoint);
        const Dataset ds = load_dataset(opt.dataset);
        if (params.classes() != num_classes(ds.task))
            throw ConfigError("checkpoint has " + std::to_string(params.classes()) + " classes but the dataset is " +
                              std::string(task_name(ds.task)));
        if (params.input_dim() != ds.feature_dim || params.siamese != (ds.task == Task::T1))
            throw ConfigError("checkpoint input layout does not match the dataset");
        const auto preds = predict(params, ds.samples, opt.threads);
        std::vector<PredictionRow> rows;
        rows.reserve(preds.size());
        for (std::size_t i = 0; i < preds.size(); ++i)
            rows.push_back(PredictionRow{preds[i].key, ds.samples[i].label, preds[i].probs, preds[i].probs.argmax(),
                                         std::nullopt, false});
        write_file_atomic(opt.out, predictions_csv(rows, ds.task, false));
        RunManifest m{"predict", "", 0, {opt.checkpoint.string(), opt.dataset.string()}, {opt.out.string()},
                      seconds_since(t0)};
        m.write(sidecar(opt.out, ".manifest.json"));
        out << "wrote " << rows.size() << " predictions to " << opt.out.string() << "\n";
        return kOk;
    });
}

// ---------------------------------------------------------------- ensemble

enum class EnsembleMode { Mean, Unanimity };

struct EnsembleOptions {
    std::vector<std::filesystem::path> inputs;
    EnsembleMode mode = EnsembleMode::Mean;
    bool postprocess = false;
    std::filesystem::path out;
    PostprocessConfig post;
};

inline int cmd_ensemble(const EnsembleOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const auto t0 = std::chrono::steady_clock::now();
        if (opt.inputs.empty()) throw ConfigError("ensemble needs at least one prediction file");
        std::vector<PredictionFile> files;
        for (const auto& p : opt.inputs) files.push_back(load_predictions(p));
        for (const auto& f : files)
            if (f.task != files.front().task)
                throw ConfigError("prediction files mix T1 and T2 schemas");
        const Task task = files.front().task;

        std::vector<PredictionSet> sets;
        for (std::size_t i = 0; i < files.size(); ++i) {
            PredictionSet s{opt.inputs[i].string(), {}};
            for (const auto& r : files[i].rows) s.entries.push_back(Prediction{r.key, r.probs});
            sets.push_back(std::move(s));
        }
        auto merged = mean_ensemble(sets); // also checks alignment

        if (opt.mode == EnsembleMode::Unanimity) {
            std::vector<std::unordered_map<std::string, const PredictionRow*>> by_id(files.size());
            for (std::size_t f = 0; f < files.size(); ++f)
                for (const auto& r : files[f].rows) by_id[f][r.key.case_id] = &r;
            for (auto& e : merged) {
                std::vector<ModelVote> votes;
                for (std::size_t f = 0; f < files.size(); ++f) {
                    const auto* r = by_id[f].at(e.key.case_id);
                    votes.push_back(ModelVote{r->pred_label, r->probs});
                }
                e.label = stable_unanimity_vote(votes, opt.post);
            }
        }

        std::vector<int> final_labels;
        if (opt.postprocess) final_labels = volume_consistency(merged, opt.post).labels;

        std::unordered_map<std::string, std::optional<int>> truth;
        for (const auto& r : files.front().rows) truth[r.key.case_id] = r.true_label;
        std::vector<PredictionRow> rows;
        for (std::size_t i = 0; i < merged.size(); ++i) {
            const auto& e = merged[i];
            PredictionRow r{e.key, truth[e.key.case_id], e.probs, e.label, e.label, false};
            if (opt.postprocess) {
                r.final_label = final_labels[i];
                r.postprocessed = true;
            }
            rows.push_back(std::move(r));
        }
        write_file_atomic(opt.out, predictions_csv(rows, task, true));
        std::vector<std::string> inputs;
        for (const auto& p : opt.inputs) inputs.push_back(p.string());
        RunManifest m{"ensemble",
                      std::string("mode=") + (opt.mode == EnsembleMode::Mean ? "mean" : "unanimity") +
                          "\npostprocess=" + (opt.postprocess ? "true" : "false") + "\n",
                      0, inputs, {opt.out.string()}, seconds_since(t0)};
        m.write(sidecar(opt.out, ".manifest.json"));
        out << "wrote " << rows.size() << " ensembled predictions to " << opt.out.string() << "\n";
        return kOk;
    });
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
    std::filesystem::path predictions;
    std::filesystem::path truth;
    std::optional<Task> task;
    std::optional<std::filesystem::path> out;
};

inline void print_report(const MetricReport& r, std::ostream& out) {
    out << "task " << task_name(r.task) << "\n";
    for (auto id : kAllMetrics) {
        out << std::left << std::setw(20) << metric_name(id);
        if (auto v = r.get(id)) out << format_fixed(*v, 6);
        else out << "-";
        if (r.is_degenerate(id)) out << "  (degenerate)";
        out << "\n";
    }
    out << std::left << std::setw(20) << "average" << format_fixed(r.average, 6) << "\n";
}

inline int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const auto t0 = std::chrono::steady_clock::now();
        const PredictionFile preds = load_predictions(opt.predictions);
        if (opt.task && *opt.task != preds.task)
            throw ConfigError("predictions follow the " + std::string(task_name(preds.task)) +
                              " schema but --task is " + std::string(task_name(*opt.task)));
        const Task task = preds.task;
        const auto truth = load_truth(opt.truth, task);

        std::unordered_map<std::string, int> truth_by_id;
        for (const auto& t : truth) truth_by_id[t.key.case_id] = t.label;
        std::unordered_set<std::string> pred_ids;
        std::vector<std::string> missing;
        for (const auto& r : preds.rows) {
            pred_ids.insert(r.key.case_id);
            if (!truth_by_id.count(r.key.case_id)) missing.push_back(r.key.case_id + " (no ground truth)");
        }
        for (const auto& t : truth)
            if (!pred_ids.count(t.key.case_id)) missing.push_back(t.key.case_id + " (no prediction)");
        if (!missing.empty()) {
            std::string msg = "predictions and ground truth cover different records:";
            for (std::size_t i = 0; i < std::min<std::size_t>(10, missing.size()); ++i) msg += " " + missing[i];
            throw AlignmentError(msg);
        }

        ConfusionMatrix cm(num_classes(task));
        for (const auto& r : preds.rows) cm.add(truth_by_id.at(r.key.case_id), r.final_label.value_or(r.pred_label));
        const MetricReport report = evaluate(cm, task);
        print_report(report, out);
        if (opt.out) {
            write_file_atomic(*opt.out, report_csv(report));
            RunManifest m{"eval", "task=" + std::string(task_name(task)) + "\n", 0,
                          {opt.predictions.string(), opt.truth.string()}, {opt.out->string()}, seconds_since(t0)};
            m.write(sidecar(*opt.out, ".manifest.json"));
        }
        return kOk;
    });
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckOptions {
    std::vector<std::string> losses; // empty: all
    int trials = 100;
    std::uint64_t seed = 0;
};

inline int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        std::vector<LossSpec> specs;
        const auto all = default_loss_specs();
        if (opt.losses.empty()) {
            specs = all;
        } else {
            for (const auto& name : opt.losses) {
                const LossKind kind = parse_loss_kind(name);
                for (const auto& s : all)
                    if (s.kind == kind) specs.push_back(s);
            }
        }
        const auto rows = run_gradcheck(specs, opt.trials, opt.seed);
        out << std::left << std::setw(18) << "loss" << std::setw(10) << "topology" << std::setw(8) << "cases"
            << std::setw(16) << "max_rel_error" << "status\n";
        const GradCheckRow* worst = nullptr;
        bool ok = true;
        for (const auto& r : rows) {
            out << std::left << std::setw(18) << r.loss << std::setw(10) << r.topology << std::setw(8) << r.cases
                << std::setw(16) << std::scientific << std::setprecision(3) << r.max_rel_error << std::defaultfloat
                << (r.passed() ? "pass" : "FAIL") << "\n";
            ok = ok && r.passed();
            if (!worst || r.max_rel_error > worst->max_rel_error) worst = &r;
        }
        if (!ok) {
            err << "gradient check failed; worst case: loss " << worst->loss << ", " << worst->topology << ", "
                << worst->worst_case << ", relative error " << worst->max_rel_error << "\n";
            return kGradcheckFailed;
        }
        return kOk;
    });
}

} // namespace ordchange::app
