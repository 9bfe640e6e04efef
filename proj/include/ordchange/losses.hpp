#pragma once
// Focal, squared-EMD, combined and cross-entropy losses, each with a
// closed-form gradient with respect to the pre-softmax logits.

#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"

namespace ordchange {

enum class LossKind { CrossEntropy, Focal, Emd, Combined };

inline std::string_view loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::CrossEntropy: return "ce";
        case LossKind::Focal: return "focal";
        case LossKind::Emd: return "emd";
        case LossKind::Combined: return "combined";
    }
    return "?";
}

inline LossKind parse_loss_kind(std::string_view s) {
    if (s == "ce" || s == "cross_entropy") return LossKind::CrossEntropy;
    if (s == "focal") return LossKind::Focal;
    if (s == "emd") return LossKind::Emd;
    if (s == "combined") return LossKind::Combined;
    throw ConfigError("unknown loss kind '" + std::string(s) + "' (expected ce, focal, emd or combined)");
}

struct LossConfig {
    double alpha = 1.0;
    double gamma = 2.0;
    double focal_weight = 1.0;
    double emd_weight = 1.0;
    double epsilon = 1e-12; // log clamp

    void validate() const {
        if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("focal alpha must be finite and >= 0");
        if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("focal gamma must be finite and >= 0");
        if (!(focal_weight >= 0.0) || !std::isfinite(focal_weight))
            throw ConfigError("focal_weight must be finite and >= 0");
        if (!(emd_weight >= 0.0) || !std::isfinite(emd_weight))
            throw ConfigError("emd_weight must be finite and >= 0");
        if (!(epsilon > 0.0 && epsilon <= 1e-3)) throw ConfigError("epsilon must lie in (0, 1e-3]");
    }
};

/// Rejects configurations that would take an EMD over a non-ordinal class
/// set (the four T1 classes include Other).
inline void validate_loss_for_task(LossKind kind, const LossConfig& cfg, Task task) {
    cfg.validate();
    const bool uses_emd =
        kind == LossKind::Emd || (kind == LossKind::Combined && cfg.emd_weight > 0.0);
    if (uses_emd && task == Task::T1)
        throw ConfigError("EMD loss is undefined over T1 classes: Other has no ordinal rank");
}

struct LossResult {
    double value = 0.0;
    std::vector<double> grad_logits;
};

namespace detail {

inline void require_same_size(const ProbVector& a, const ProbVector& b) {
    if (a.size() != b.size()) throw InvalidInputError("distribution lengths differ");
}

// Per-class derivative of each loss w.r.t. log p_i, i.e. p_i * dL/dp_i.
// Working in this form avoids dividing by vanishing probabilities; the
// softmax chain rule is then dL/dz_j = h_j - p_j * sum_i h_i.

inline std::vector<double> ce_log_grad(const ProbVector& p, const ProbVector& y, double eps) {
    std::vector<double> h(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > eps) h[i] = -y[i];
    return h;
}

inline std::vector<double> focal_log_grad(const ProbVector& p, const ProbVector& y, const LossConfig& cfg) {
    std::vector<double> h(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (y[i] == 0.0) continue;
        const double q = 1.0 - p[i];
        const double logp = std::log(std::max(p[i], cfg.epsilon));
        // d/dp of (1-p)^gamma, times p; the q == 0 limit is 0 for every gamma > 0
        double focus_term = 0.0;
        if (cfg.gamma != 0.0 && q > 0.0) focus_term = -cfg.gamma * p[i] * std::pow(q, cfg.gamma - 1.0) * logp;
        const double log_term = p[i] > cfg.epsilon ? std::pow(q, cfg.gamma) : 0.0;
        h[i] = -cfg.alpha * y[i] * (focus_term + log_term);
    }
    return h;
}

inline std::vector<double> emd_log_grad(const ProbVector& p, const ProbVector& y) {
    const std::size_t c = p.size();
    const auto cy = cdf(y);
    const auto cp = cdf(p);
    double sq = 0.0;
    for (std::size_t i = 0; i < c; ++i) sq += (cy[i] - cp[i]) * (cy[i] - cp[i]);
    const double loss = std::sqrt(sq / static_cast<double>(c));
    std::vector<double> h(c, 0.0);
    if (loss == 0.0) return h;
    // dL/dCDF_p(i) = -(CDF_y(i) - CDF_p(i)) / (C L); dL/dp_j sums that over i >= j
    double suffix = 0.0;
    for (std::size_t j = c; j-- > 0;) {
        suffix += -(cy[j] - cp[j]) / (static_cast<double>(c) * loss);
#ifdef ORDCHANGE_MUTATE_EMD_GRADIENT
        h[j] = -p[j] * suffix;
#else
        h[j] = p[j] * suffix;
#endif
    }
    return h;
}

} // namespace detail

inline double cross_entropy(const ProbVector& p_hat, const ProbVector& y, double eps = 1e-12) {
    detail::require_same_size(p_hat, y);
    double loss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (y[i] != 0.0) loss -= y[i] * std::log(std::max(p_hat[i], eps));
    return loss;
}

inline double focal_loss(const ProbVector& p_hat, const ProbVector& y, const LossConfig& cfg) {
    cfg.validate();
    detail::require_same_size(p_hat, y);
    double loss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] == 0.0) continue;
        loss -= y[i] * std::pow(1.0 - p_hat[i], cfg.gamma) * std::log(std::max(p_hat[i], cfg.epsilon));
    }
    return cfg.alpha * loss;
}

/// Root-mean-square difference of the two CDFs. Symmetric, in [0, 1].
inline double emd_loss(const ProbVector& p_hat, const ProbVector& y) {
    detail::require_same_size(p_hat, y);
    const auto cp = cdf(p_hat);
    const auto cy = cdf(y);
    double sq = 0.0;
    for (std::size_t i = 0; i < cp.size(); ++i) sq += (cy[i] - cp[i]) * (cy[i] - cp[i]);
    return std::sqrt(sq / static_cast<double>(cp.size()));
}

inline double combined_loss(const ProbVector& p_hat, const ProbVector& y, const LossConfig& cfg) {
    double value = 0.0;
    if (cfg.focal_weight != 0.0) value += cfg.focal_weight * focal_loss(p_hat, y, cfg);
    else cfg.validate();
    if (cfg.emd_weight != 0.0) value += cfg.emd_weight * emd_loss(p_hat, y);
    return value;
}

inline double loss_value(LossKind kind, const ProbVector& p_hat, const ProbVector& y, const LossConfig& cfg) {
    switch (kind) {
        case LossKind::CrossEntropy: return cross_entropy(p_hat, y, cfg.epsilon);
        case LossKind::Focal: return focal_loss(p_hat, y, cfg);
        case LossKind::Emd: return emd_loss(p_hat, y);
        case LossKind::Combined: return combined_loss(p_hat, y, cfg);
    }
    throw ConfigError("unknown loss kind");
}

/// Loss at softmax(z) and its exact gradient with respect to z.
inline LossResult loss_gradient(LossKind kind, const LogitVector& z, const ProbVector& y, const LossConfig& cfg) {
    cfg.validate();
    if (z.size() != y.size()) throw InvalidInputError("logit and target lengths differ");
    const ProbVector p = softmax(z);

    std::vector<double> h;
    switch (kind) {
        case LossKind::CrossEntropy: h = detail::ce_log_grad(p, y, cfg.epsilon); break;
        case LossKind::Focal: h = detail::focal_log_grad(p, y, cfg); break;
        case LossKind::Emd: h = detail::emd_log_grad(p, y); break;
        case LossKind::Combined: {
            h.assign(p.size(), 0.0);
            if (cfg.focal_weight != 0.0) {
                auto hf = detail::focal_log_grad(p, y, cfg);
                for (std::size_t i = 0; i < h.size(); ++i) h[i] += cfg.focal_weight * hf[i];
            }
            if (cfg.emd_weight != 0.0) {
                auto he = detail::emd_log_grad(p, y);
                for (std::size_t i = 0; i < h.size(); ++i) h[i] += cfg.emd_weight * he[i];
            }
            break;
        }
        default: throw ConfigError("unknown loss kind");
    }

    double hsum = 0.0;
    for (double v : h) hsum += v;
    LossResult out;
    out.value = loss_value(kind, p, y, cfg);
    out.grad_logits.resize(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) out.grad_logits[j] = h[j] - p[j] * hsum;
    return out;
}

/// Maximum relative deviation between the analytic logit gradient and a
/// central difference with step h; the denominator is max(|analytic|, 1e-8).
inline double finite_difference_check(LossKind kind, const LogitVector& z, const ProbVector& y,
                                      const LossConfig& cfg, double h = 1e-5) {
    if (!(h >= 1e-7 && h <= 1e-3)) throw ConfigError("finite-difference step must lie in [1e-7, 1e-3]");
    const auto analytic = loss_gradient(kind, z, y, cfg).grad_logits;
    std::vector<double> zz(z.values().begin(), z.values().end());
    double worst = 0.0;
    for (std::size_t i = 0; i < zz.size(); ++i) {
        const double saved = zz[i];
        zz[i] = saved + h;
        const double up = loss_value(kind, softmax(LogitVector(zz)), y, cfg);
        zz[i] = saved - h;
        const double down = loss_value(kind, softmax(LogitVector(zz)), y, cfg);
        zz[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double rel = std::abs(numeric - analytic[i]) / std::max(std::abs(analytic[i]), 1e-8);
        worst = std::max(worst, rel);
    }
    return worst;
}

} // namespace ordchange
