#pragma once
// Seeded synthetic longitudinal data with ordinal, imbalanced change
// classes, and the change/no-change pretext pair builder.
//
// Geometry: a volume's latent vector is
//     base + rank * step_size * direction + patient_offset
// with rank -1/0/+1 for Reduced/Stable/Worsened, so the classes sit in
// order along one direction. B-scans add isotropic Gaussian noise.
// Class quotas are drawn without replacement: round(ratio * n) volumes per
// class, then shuffled, so class fractions track the ratios closely.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"

namespace ordchange {

struct GenConfig {
    Task task = Task::T2;
    int n_patients = 60;
    int visits_min = 4; // volumes per patient
    int visits_max = 6;
    int bscans_min = 8; // B-scans per volume
    int bscans_max = 12;
    std::size_t feature_dim = 16;
    std::vector<double> class_ratios = {0.10, 0.80, 0.10}; // Reduced, Stable, Worsened
    std::vector<double> ordinal_direction;                  // empty: (1, ..., 1) / sqrt(D)
    double step_size = 2.0;
    double noise_sigma = 1.0;
    double patient_sigma = 1.0; // spread of per-patient offsets
    double other_rate = 0.1;    // T1 only
    std::uint64_t seed = 0;

    void validate() const {
        if (n_patients < 1) throw ConfigError("n_patients must be >= 1");
        if (visits_min < 1 || visits_max < visits_min) throw ConfigError("visits range is invalid");
        if (task == Task::T1 && visits_min < 2) throw ConfigError("T1 pairs need at least 2 visits per patient");
        if (bscans_min < 1 || bscans_max < bscans_min) throw ConfigError("bscans range is invalid");
        if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
        if (class_ratios.size() != 3) throw ConfigError("class_ratios needs 3 entries (Reduced, Stable, Worsened)");
        double sum = 0.0;
        for (double r : class_ratios) {
            if (!(r >= 0.0)) throw ConfigError("class_ratios entries must be >= 0");
            sum += r;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("class_ratios must sum to 1");
        if (!ordinal_direction.empty()) {
            if (ordinal_direction.size() != feature_dim)
                throw ConfigError("ordinal_direction must have feature_dim entries");
            double n2 = 0.0;
            for (double v : ordinal_direction) n2 += v * v;
            if (std::abs(std::sqrt(n2) - 1.0) > 1e-6) throw ConfigError("ordinal_direction must be a unit vector");
        }
        if (!(step_size > 0.0)) throw ConfigError("step_size must be > 0");
        if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
        if (!(patient_sigma >= 0.0)) throw ConfigError("patient_sigma must be >= 0");
        if (!(other_rate >= 0.0 && other_rate <= 1.0)) throw ConfigError("other_rate must lie in [0, 1]");
    }

    std::vector<double> direction() const {
        if (!ordinal_direction.empty()) return ordinal_direction;
        return std::vector<double>(feature_dim, 1.0 / std::sqrt(static_cast<double>(feature_dim)));
    }
};

namespace detail {

inline std::string tag(char prefix, int n, int width) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%c%0*d", prefix, width, n);
    return buf;
}

// round(ratio * n) labels per class (remainder to the largest ratio), shuffled.
inline std::vector<int> quota_labels(std::span<const double> ratios, std::size_t n, std::mt19937_64& rng) {
    std::vector<int> labels;
    labels.reserve(n);
    std::size_t largest = 0;
    for (std::size_t k = 0; k < ratios.size(); ++k) {
        if (ratios[k] > ratios[largest]) largest = k;
        const auto count = static_cast<std::size_t>(std::llround(ratios[k] * static_cast<double>(n)));
        for (std::size_t i = 0; i < count && labels.size() < n; ++i) labels.push_back(static_cast<int>(k));
    }
    while (labels.size() < n) labels.push_back(static_cast<int>(largest));
    std::shuffle(labels.begin(), labels.end(), rng);
    return labels;
}

inline std::vector<double> gaussian_vector(std::size_t d, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(d);
    for (double& x : v) x = sigma * n(rng);
    return v;
}

} // namespace detail

/// Single-visit B-scans for the forecasting task. Labels are constant
/// within a volume.
inline std::vector<BscanRecord> gen_t2_volumes(const GenConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const std::size_t d = cfg.feature_dim;
    const auto dir = cfg.direction();
    const auto base = detail::gaussian_vector(d, 1.0, rng);

    std::uniform_int_distribution<int> visits(cfg.visits_min, cfg.visits_max);
    std::vector<int> per_patient(static_cast<std::size_t>(cfg.n_patients));
    for (int& v : per_patient) v = visits(rng);
    const auto n_volumes = static_cast<std::size_t>(std::accumulate(per_patient.begin(), per_patient.end(), 0));
    const auto classes = detail::quota_labels(cfg.class_ratios, n_volumes, rng);

    std::uniform_int_distribution<int> bscans(cfg.bscans_min, cfg.bscans_max);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<BscanRecord> out;
    std::size_t vol = 0;
    for (int p = 0; p < cfg.n_patients; ++p) {
        const std::string pid = detail::tag('P', p, 3);
        const auto offset = detail::gaussian_vector(d, cfg.patient_sigma, rng);
        for (int v = 0; v < per_patient[static_cast<std::size_t>(p)]; ++v, ++vol) {
            const int c = classes[vol];
            const double shift = static_cast<double>(c - 1) * cfg.step_size;
            std::vector<double> latent(d);
            for (std::size_t i = 0; i < d; ++i) latent[i] = base[i] + shift * dir[i] + offset[i];
            const std::string visit = detail::tag('V', v, 2);
            const std::string volume = pid + "_" + visit;
            const int nb = bscans(rng);
            for (int b = 0; b < nb; ++b) {
                BscanRecord r;
                r.key = RecordKey{volume + "_" + detail::tag('B', b, 3), pid, visit, volume, b};
                r.features = latent;
                for (double& x : r.features) x += cfg.noise_sigma * noise(rng);
                r.label = ClassLabel::from_index(c, Task::T2);
                out.push_back(std::move(r));
            }
        }
    }
    return out;
}

/// B-scan pairs from consecutive visits of a patient. The activity level
/// moves by -1/0/+1 steps between visits, which sets the label; with
/// probability other_rate one member is corrupted (noise burst or sign
/// flip) and the pair becomes Other.
inline std::vector<PairRecord> gen_t1_pairs(const GenConfig& cfg) {
    cfg.validate();
    if (cfg.visits_min < 2) throw ConfigError("T1 pairs need at least 2 visits per patient");
    std::mt19937_64 rng(cfg.seed);
    const std::size_t d = cfg.feature_dim;
    const auto dir = cfg.direction();
    const auto base = detail::gaussian_vector(d, 1.0, rng);

    std::uniform_int_distribution<int> visits(cfg.visits_min, cfg.visits_max);
    std::vector<int> per_patient(static_cast<std::size_t>(cfg.n_patients));
    for (int& v : per_patient) v = visits(rng);
    std::size_t n_pairs = 0;
    for (int v : per_patient) n_pairs += static_cast<std::size_t>(v - 1);
    const auto deltas = detail::quota_labels(cfg.class_ratios, n_pairs, rng);

    std::uniform_int_distribution<int> bscans(cfg.bscans_min, cfg.bscans_max);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double burst = 5.0 * std::max(cfg.noise_sigma, cfg.step_size);

    std::vector<PairRecord> out;
    std::size_t pair_index = 0;
    for (int p = 0; p < cfg.n_patients; ++p) {
        const std::string pid = detail::tag('P', p, 3);
        const auto offset = detail::gaussian_vector(d, cfg.patient_sigma, rng);
        double activity = 0.0;
        auto latent_at = [&](double a) {
            std::vector<double> l(d);
            for (std::size_t i = 0; i < d; ++i) l[i] = base[i] + a * cfg.step_size * dir[i] + offset[i];
            return l;
        };
        for (int v = 0; v + 1 < per_patient[static_cast<std::size_t>(p)]; ++v, ++pair_index) {
            const int c = deltas[pair_index];
            const auto before = latent_at(activity);
            activity += static_cast<double>(c - 1);
            const auto after = latent_at(activity);
            const std::string visit = detail::tag('V', v, 2) + "-" + detail::tag('V', v + 1, 2);
            const std::string volume = pid + "_" + visit;
            const int nb = bscans(rng);
            for (int b = 0; b < nb; ++b) {
                PairRecord r;
                r.key = RecordKey{volume + "_" + detail::tag('B', b, 3), pid, visit, volume, b};
                r.features_a = before;
                r.features_b = after;
                for (double& x : r.features_a) x += cfg.noise_sigma * noise(rng);
                for (double& x : r.features_b) x += cfg.noise_sigma * noise(rng);
                r.label = c;
                if (unit(rng) < cfg.other_rate) {
                    auto& victim = unit(rng) < 0.5 ? r.features_a : r.features_b;
                    if (unit(rng) < 0.5) {
                        for (double& x : victim) x += burst * noise(rng);
                    } else {
                        for (double& x : victim) x = -x;
                    }
                    r.label = static_cast<int>(Label::Other);
                }
                out.push_back(std::move(r));
            }
        }
    }
    return out;
}

/// A labelled single image for the pretext task (synthetic disease class).
struct DiseaseRecord {
    RecordKey key;
    std::vector<double> features;
    int disease = 0;
};

/// Balanced disease-class records around random class centroids.
inline std::vector<DiseaseRecord> gen_disease_records(std::size_t n, std::size_t feature_dim, int n_classes,
                                                      double separation, double noise_sigma, std::uint64_t seed) {
    if (n_classes < 2) throw ConfigError("need at least two disease classes");
    if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
    std::mt19937_64 rng(seed);
    std::vector<std::vector<double>> centroids;
    for (int k = 0; k < n_classes; ++k) centroids.push_back(detail::gaussian_vector(feature_dim, separation, rng));
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<DiseaseRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        DiseaseRecord r;
        r.disease = static_cast<int>(i % static_cast<std::size_t>(n_classes));
        r.key.case_id = detail::tag('K', static_cast<int>(i), 6);
        r.key.patient_id = r.key.case_id;
        r.features = centroids[static_cast<std::size_t>(r.disease)];
        for (double& x : r.features) x += noise_sigma * noise(rng);
        out.push_back(std::move(r));
    }
    return out;
}

/// Uniformly sampled pairs of distinct records; label 1 (change) iff the
/// two disease classes differ, else 0 (no change).
inline std::vector<PairRecord> gen_pretext_pairs(std::span<const DiseaseRecord> records, std::size_t n_pairs,
                                                 std::uint64_t seed) {
    if (records.size() < 2) throw DataError("pretext pairs need at least 2 records");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> first(0, records.size() - 1);
    std::uniform_int_distribution<std::size_t> second(0, records.size() - 2);
    std::vector<PairRecord> out;
    out.reserve(n_pairs);
    for (std::size_t k = 0; k < n_pairs; ++k) {
        const std::size_t i = first(rng);
        std::size_t j = second(rng);
        if (j >= i) ++j;
        PairRecord r;
        r.key.case_id = "pair" + std::to_string(k);
        r.key.patient_id = r.key.case_id;
        r.key.volume_id = r.key.case_id;
        r.features_a = records[i].features;
        r.features_b = records[j].features;
        r.label = records[i].disease != records[j].disease ? 1 : 0;
        out.push_back(std::move(r));
    }
    return out;
}

/// Checks (volume_id, bscan_index) uniqueness and per-volume label
/// consistency.
inline void validate_volumes(std::span<const BscanRecord> records) {
    std::set<std::pair<std::string, int>> seen;
    std::map<std::string, Label> volume_label;
    for (const auto& r : records) {
        if (!seen.emplace(r.key.volume_id, r.key.bscan_index).second)
            throw DataError("duplicate B-scan " + std::to_string(r.key.bscan_index) + " in volume " + r.key.volume_id);
        auto [it, inserted] = volume_label.emplace(r.key.volume_id, r.label.value());
        if (!inserted && it->second != r.label.value())
            throw DataError("volume " + r.key.volume_id + " has inconsistent labels");
    }
}

} // namespace ordchange
