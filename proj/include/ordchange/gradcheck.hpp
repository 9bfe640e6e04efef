#pragma once
// Finite-difference verification of the analytic gradients, at the logit
// level and end to end through plain and Siamese networks.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "losses.hpp"
#include "model.hpp"

namespace ordchange {

struct LossSpec {
    std::string name;
    LossKind kind = LossKind::CrossEntropy;
    LossConfig cfg;
};

/// ce, focal at gamma 0/1/2/5, emd and combined (gamma 2, equal weights).
inline std::vector<LossSpec> default_loss_specs() {
    std::vector<LossSpec> out;
    out.push_back({"ce", LossKind::CrossEntropy, {}});
    for (double g : {0.0, 1.0, 2.0, 5.0}) {
        LossConfig c;
        c.gamma = g;
        out.push_back({"focal(gamma=" + std::to_string(static_cast<int>(g)) + ")", LossKind::Focal, c});
    }
    out.push_back({"emd", LossKind::Emd, {}});
    out.push_back({"combined", LossKind::Combined, {}});
    return out;
}

inline LossSpec loss_spec_for(LossKind kind) {
    return LossSpec{std::string(loss_kind_name(kind)), kind, {}};
}

struct ParamDeviation {
    double max_rel_error = 0.0;
    std::string worst_param;
};

/// Central differences over every weight and bias, compared against
/// backward(); relative error uses the denominator max(|analytic|, 1e-8).
inline ParamDeviation model_gradient_check(const ModelParams& params, const Sample& s, LossKind kind,
                                           const ProbVector& y, const LossConfig& cfg, double h = 1e-5) {
    auto eval = [&](const ModelParams& p) {
        auto logits = p.siamese ? siamese_forward(p, s.a, s.b, false, nullptr).first
                                : forward(p, s.a, false, nullptr).first;
        return logits;
    };
    auto [logits, cache] = params.siamese ? siamese_forward(params, s.a, s.b, false, nullptr)
                                          : forward(params, s.a, false, nullptr);
    const auto lg = loss_gradient(kind, logits, y, cfg);
    const ParamGrads analytic = backward(params, cache, lg.grad_logits);

    ModelParams probe = params;
    ParamDeviation out;
    auto sweep = [&](std::vector<DenseLayer>& layers, const std::vector<DenseLayer>& grads, const char* group) {
        for (std::size_t li = 0; li < layers.size(); ++li) {
            auto visit = [&](std::vector<double>& values, const std::vector<double>& g, const char* what) {
                for (std::size_t j = 0; j < values.size(); ++j) {
                    const double saved = values[j];
                    values[j] = saved + h;
                    const double up = loss_value(kind, softmax(eval(probe)), y, cfg);
                    values[j] = saved - h;
                    const double down = loss_value(kind, softmax(eval(probe)), y, cfg);
                    values[j] = saved;
                    const double numeric = (up - down) / (2.0 * h);
                    const double rel = std::abs(numeric - g[j]) / std::max(std::abs(g[j]), 1e-8);
                    if (rel > out.max_rel_error) {
                        out.max_rel_error = rel;
                        out.worst_param = std::string(group) + "[" + std::to_string(li) + "]." + what + "[" +
                                          std::to_string(j) + "]";
                    }
                }
            };
            visit(layers[li].weight, grads[li].weight, "w");
            visit(layers[li].bias, grads[li].bias, "b");
        }
    };
    sweep(probe.encoder, analytic.encoder, "encoder");
    sweep(probe.head, analytic.head, "head");
    return out;
}

struct GradCheckRow {
    std::string loss;
    std::string topology; // logits, plain, siamese
    int cases = 0;
    double max_rel_error = 0.0;
    std::string worst_case;

    bool passed(double tol = 1e-5) const { return max_rel_error < tol; }
};

namespace detail {

inline void randomize_biases(ModelParams& p, Rng& rng) {
    std::normal_distribution<double> n(0.0, 0.1);
    for (auto* group : {&p.encoder, &p.head})
        for (auto& l : *group)
            for (double& b : l.bias) b = n(rng);
}

} // namespace detail

/// Runs `trials` seeded random cases per loss for raw logits, a plain
/// (4, 8, 3) network and a Siamese network (encoder 4 -> 6, head 12 -> 8 -> 3).
inline std::vector<GradCheckRow> run_gradcheck(std::span<const LossSpec> losses, int trials, std::uint64_t seed) {
    if (trials < 1) throw ConfigError("trials must be >= 1");
    std::vector<GradCheckRow> rows;
    constexpr int kClasses = 3;
    for (const auto& spec : losses) {
        Rng rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        std::uniform_int_distribution<int> cls(0, kClasses - 1);

        GradCheckRow logit_row{spec.name, "logits", 0, 0.0, {}};
        GradCheckRow plain_row{spec.name, "plain", 0, 0.0, {}};
        GradCheckRow siam_row{spec.name, "siamese", 0, 0.0, {}};
        for (int t = 0; t < trials; ++t) {
            std::vector<double> z(kClasses);
            for (double& v : z) v = 1.5 * normal(rng);
            const ProbVector y = ProbVector::one_hot(cls(rng), kClasses);
            const double e = finite_difference_check(spec.kind, LogitVector(z), y, spec.cfg, 1e-5);
            ++logit_row.cases;
            if (e >= logit_row.max_rel_error) {
                logit_row.max_rel_error = e;
                logit_row.worst_case = "trial " + std::to_string(t);
            }

            const std::size_t dims[] = {4, 8, 3};
            ModelParams plain = init_params(dims, 0.0, rng());
            detail::randomize_biases(plain, rng);
            Sample s;
            s.a.resize(4);
            for (double& v : s.a) v = normal(rng);
            auto pd = model_gradient_check(plain, s, spec.kind, y, spec.cfg);
            ++plain_row.cases;
            if (pd.max_rel_error >= plain_row.max_rel_error) {
                plain_row.max_rel_error = pd.max_rel_error;
                plain_row.worst_case = "trial " + std::to_string(t) + " " + pd.worst_param;
            }

            Architecture arch;
            arch.encoder_dims = {4, 6};
            arch.head_dims = {8, kClasses};
            arch.siamese = true;
            ModelParams siam = init_params(arch, rng());
            detail::randomize_biases(siam, rng);
            Sample pair;
            pair.a.resize(4);
            pair.b.resize(4);
            for (double& v : pair.a) v = normal(rng);
            for (double& v : pair.b) v = normal(rng);
            auto sd = model_gradient_check(siam, pair, spec.kind, y, spec.cfg);
            ++siam_row.cases;
            if (sd.max_rel_error >= siam_row.max_rel_error) {
                siam_row.max_rel_error = sd.max_rel_error;
                siam_row.worst_case = "trial " + std::to_string(t) + " " + sd.worst_param;
            }
        }
        rows.push_back(std::move(logit_row));
        rows.push_back(std::move(plain_row));
        rows.push_back(std::move(siam_row));
    }
    return rows;
}

} // namespace ordchange
