#pragma once
// Prediction postprocessing: mean-probability ensembling, the
// stable-unanimity vote across fold models, and volume-level label
// consistency with broadcast back to the B-scans.
//
// Labels are class indices. "Majority" for both votes is taken over the
// non-Stable predictions only (VoteScope::NonStable); a majority over all
// predictions would re-select Stable whenever most models say Stable and
// make the unanimity clause vacuous. VoteScope::All gives that other
// reading. Ties go to the highest mean probability, then the lower index
// (TieBreak::MeanProbability), or to the higher index (TieBreak::MostSevere).

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "core.hpp"
#include "model.hpp"

namespace ordchange {

struct PredictionSet {
    std::string model_id;
    std::vector<Prediction> entries;
};

enum class TieBreak { MeanProbability, MostSevere };
enum class VoteScope { NonStable, All };

struct PostprocessConfig {
    int stable_class = static_cast<int>(Label::Stable);
    double stable_ratio_threshold = 0.8; // the majority-class ratio
    TieBreak tie_break = TieBreak::MeanProbability;
    VoteScope scope = VoteScope::NonStable;

    void validate() const {
        if (!(stable_ratio_threshold > 0.0 && stable_ratio_threshold <= 1.0))
            throw ConfigError("stable_ratio_threshold must lie in (0, 1]");
        if (stable_class < 0) throw ConfigError("stable_class must be a class index");
    }
};

struct EnsembleEntry {
    RecordKey key;
    int label = 0;
    ProbVector probs;
};

struct ModelVote {
    int label = 0;
    ProbVector probs;
};

namespace detail {

inline std::vector<double> mean_probs(std::span<const ProbVector* const> ps) {
    std::vector<double> m(ps.front()->size(), 0.0);
    for (const auto* p : ps) {
        if (p->size() != m.size()) throw ConfigError("probability vectors of different lengths (mixed tasks?)");
        for (std::size_t k = 0; k < m.size(); ++k) m[k] += (*p)[k];
    }
    for (double& v : m) v /= static_cast<double>(ps.size());
    return m;
}

// Most frequent label among `labels`; ties per cfg.tie_break using `mean`.
inline int majority(std::span<const int> labels, const std::vector<double>& mean, TieBreak tie_break) {
    std::map<int, int> counts;
    for (int l : labels) ++counts[l];
    int best = -1, best_count = -1;
    for (const auto& [label, count] : counts) {
        bool better = count > best_count;
        if (count == best_count) {
            if (tie_break == TieBreak::MostSevere) {
                better = label > best;
            } else {
                const double pl = static_cast<std::size_t>(label) < mean.size() ? mean[label] : 0.0;
                const double pb = static_cast<std::size_t>(best) < mean.size() ? mean[best] : 0.0;
                better = pl > pb; // equal probability keeps the lower index
            }
        }
        if (better) {
            best = label;
            best_count = count;
        }
    }
    return best;
}

} // namespace detail

/// Per record: arithmetic mean of the models' probabilities and its argmax
/// (ties to the lower class index). Output follows the first set's order.
inline std::vector<EnsembleEntry> mean_ensemble(std::span<const PredictionSet> sets) {
    if (sets.empty()) throw InvalidInputError("mean ensemble needs at least one prediction set");
    std::vector<std::unordered_map<std::string, std::size_t>> index(sets.size());
    for (std::size_t s = 0; s < sets.size(); ++s)
        for (std::size_t i = 0; i < sets[s].entries.size(); ++i)
            if (!index[s].emplace(sets[s].entries[i].key.case_id, i).second)
                throw InvalidInputError("duplicate record '" + sets[s].entries[i].key.case_id + "' in " +
                                        sets[s].model_id);

    std::vector<std::string> missing;
    for (std::size_t s = 1; s < sets.size(); ++s) {
        for (const auto& e : sets[0].entries)
            if (!index[s].count(e.key.case_id)) missing.push_back(e.key.case_id + " (absent from " + sets[s].model_id + ")");
        for (const auto& e : sets[s].entries)
            if (!index[0].count(e.key.case_id)) missing.push_back(e.key.case_id + " (absent from " + sets[0].model_id + ")");
    }
    if (!missing.empty()) {
        std::string msg = "prediction sets cover different records:";
        for (std::size_t i = 0; i < std::min<std::size_t>(10, missing.size()); ++i) msg += " " + missing[i];
        throw AlignmentError(msg);
    }

    std::vector<EnsembleEntry> out;
    out.reserve(sets[0].entries.size());
    std::vector<const ProbVector*> ps(sets.size());
    for (const auto& e : sets[0].entries) {
        for (std::size_t s = 0; s < sets.size(); ++s) ps[s] = &sets[s].entries[index[s].at(e.key.case_id)].probs;
        ProbVector mean(detail::mean_probs(ps));
        const int label = mean.argmax();
        out.push_back(EnsembleEntry{e.key, label, std::move(mean)});
    }
    return out;
}

/// Stable iff every model predicts Stable; otherwise the majority vote.
inline int stable_unanimity_vote(std::span<const ModelVote> votes, const PostprocessConfig& cfg = {}) {
    cfg.validate();
    if (votes.empty()) throw InvalidInputError("unanimity vote needs at least one model");
    std::vector<int> candidates;
    bool all_stable = true;
    for (const auto& v : votes) {
        if (v.label != cfg.stable_class) all_stable = false;
        if (cfg.scope == VoteScope::All || v.label != cfg.stable_class) candidates.push_back(v.label);
    }
    if (all_stable) return cfg.stable_class;
    std::vector<const ProbVector*> ps;
    for (const auto& v : votes) ps.push_back(&v.probs);
    return detail::majority(candidates, detail::mean_probs(ps), cfg.tie_break);
}

struct VolumeConsistency {
    std::map<std::string, int> volume_labels;
    std::vector<int> labels; // per input record, broadcast from its volume
};

/// A volume is Stable iff at least the threshold fraction of its B-scan
/// predictions is Stable (inclusive); otherwise it takes the majority
/// prediction. Every B-scan then receives its volume's label.
inline VolumeConsistency volume_consistency(std::span<const EnsembleEntry> bscans, const PostprocessConfig& cfg = {}) {
    cfg.validate();
    std::map<std::string, std::vector<std::size_t>> volumes;
    const std::size_t width = bscans.empty() ? 0 : bscans.front().probs.size();
    for (std::size_t i = 0; i < bscans.size(); ++i) {
        if (bscans[i].key.volume_id.empty())
            throw InvalidInputError("record '" + bscans[i].key.case_id + "' has no volume id");
        if (bscans[i].probs.size() != width) throw ConfigError("records from different tasks cannot share a volume pass");
        volumes[bscans[i].key.volume_id].push_back(i);
    }

    VolumeConsistency out;
    out.labels.assign(bscans.size(), 0);
    for (const auto& [volume, members] : volumes) {
        std::size_t stable = 0;
        std::vector<int> candidates;
        std::vector<const ProbVector*> ps;
        for (auto i : members) {
            const int l = bscans[i].label;
            if (l == cfg.stable_class) ++stable;
            if (cfg.scope == VoteScope::All || l != cfg.stable_class) candidates.push_back(l);
            ps.push_back(&bscans[i].probs);
        }
        int label;
        const double n = static_cast<double>(members.size());
        if (static_cast<double>(stable) >= cfg.stable_ratio_threshold * n - 1e-9 || candidates.empty())
            label = cfg.stable_class;
        else
            label = detail::majority(candidates, detail::mean_probs(ps), cfg.tie_break);
        out.volume_labels[volume] = label;
        for (auto i : members) out.labels[i] = label;
    }
    return out;
}

} // namespace ordchange
