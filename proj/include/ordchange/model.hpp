#pragma once
// Dense encoder + classification head with shared-weight Siamese late
// fusion, reverse-mode gradients, SGD/Adam(W), learning-rate schedule,
// imbalance-aware batching and the training loop.
//
// Layout: encoder layers map an input feature vector to an embedding; the
// head maps the embedding (or, for Siamese models, the concatenation of two
// embeddings produced by the same encoder) to class logits. Every layer is
// followed by ReLU except the final head layer, which is linear. Dropout is
// applied to the input of the final head layer while training, with
// inverted scaling so inference needs no rescale.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>
#include <utility>
#include <vector>

#include "core.hpp"
#include "losses.hpp"
#include "metrics.hpp"

namespace ordchange {

using Rng = std::mt19937_64;

struct DenseLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> weight; // out x in, row-major
    std::vector<double> bias;   // out

    DenseLayer() = default;
    DenseLayer(std::size_t in_dim, std::size_t out_dim)
        : in(in_dim), out(out_dim), weight(in_dim * out_dim, 0.0), bias(out_dim, 0.0) {}

    double& w(std::size_t row, std::size_t col) { return weight[row * in + col]; }
    double w(std::size_t row, std::size_t col) const { return weight[row * in + col]; }

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct ModelParams {
    std::vector<DenseLayer> encoder; // empty: the embedding is the raw input
    std::vector<DenseLayer> head;
    double dropout_rate = 0.0;
    bool siamese = false;
    std::size_t input_features = 0;
    // Bumped on every in-place update; forward caches record it.
    std::uint64_t version = 0;

    std::size_t input_dim() const { return input_features; }
    std::size_t embedding_dim() const { return encoder.empty() ? input_features : encoder.back().out; }
    std::size_t head_input_dim() const { return embedding_dim() * (siamese ? 2 : 1); }
    int classes() const { return head.empty() ? 0 : static_cast<int>(head.back().out); }

    void validate() const {
        if (input_features == 0) throw ConfigError("model input dimension must be positive");
        if (head.empty()) throw ConfigError("model needs at least one head layer");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
        std::size_t d = input_features;
        for (const auto& l : encoder) {
            if (l.in != d) throw ConfigError("encoder layer dimensions do not chain");
            d = l.out;
        }
        d = head_input_dim();
        for (const auto& l : head) {
            if (l.in != d) throw ConfigError("head layer dimensions do not chain");
            d = l.out;
        }
        auto check = [](const DenseLayer& l) {
            if (l.weight.size() != l.in * l.out || l.bias.size() != l.out)
                throw ConfigError("layer storage does not match its shape");
            for (double v : l.weight)
                if (!std::isfinite(v)) throw ConfigError("non-finite weight");
            for (double v : l.bias)
                if (!std::isfinite(v)) throw ConfigError("non-finite bias");
        };
        for (const auto& l : encoder) check(l);
        for (const auto& l : head) check(l);
    }

    bool same_values(const ModelParams& o) const {
        return encoder == o.encoder && head == o.head && dropout_rate == o.dropout_rate &&
               siamese == o.siamese && input_features == o.input_features;
    }
};

/// Widths of a network. encoder_dims = {input, hidden..., embedding} (a
/// single entry means no encoder layers); head_dims = {hidden..., classes}.
struct Architecture {
    std::vector<std::size_t> encoder_dims;
    std::vector<std::size_t> head_dims;
    bool siamese = false;
    double dropout = 0.0;
};

inline ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
    if (arch.encoder_dims.empty() || arch.head_dims.empty())
        throw ConfigError("architecture needs an input width and at least one head width");
    for (auto d : arch.encoder_dims)
        if (d == 0) throw ConfigError("layer widths must be positive");
    for (auto d : arch.head_dims)
        if (d == 0) throw ConfigError("layer widths must be positive");
    if (!(arch.dropout >= 0.0 && arch.dropout < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");

    Rng rng(seed);
    auto make = [&rng](std::size_t in, std::size_t out) {
        DenseLayer l(in, out);
        const double a = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> dist(-a, a);
        for (double& v : l.weight) v = dist(rng);
        return l;
    };

    ModelParams p;
    p.input_features = arch.encoder_dims.front();
    p.siamese = arch.siamese;
    p.dropout_rate = arch.dropout;
    for (std::size_t i = 1; i < arch.encoder_dims.size(); ++i)
        p.encoder.push_back(make(arch.encoder_dims[i - 1], arch.encoder_dims[i]));
    std::size_t d = p.head_input_dim();
    for (auto width : arch.head_dims) {
        p.head.push_back(make(d, width));
        d = width;
    }
    return p;
}

/// Plain feed-forward chain dims[0] -> dims[1] -> ... -> classes.
inline ModelParams init_params(std::span<const std::size_t> dims, double dropout, std::uint64_t seed) {
    if (dims.size() < 2) throw ConfigError("a network needs at least an input and an output width");
    Architecture arch;
    arch.encoder_dims = {dims.front()};
    arch.head_dims.assign(dims.begin() + 1, dims.end());
    arch.dropout = dropout;
    return init_params(arch, seed);
}

struct LayerTrace {
    const DenseLayer* layer = nullptr;
    std::vector<double> input;
    std::vector<double> pre; // pre-activation
    bool relu = true;
};

struct ForwardCache {
    const ModelParams* params = nullptr;
    std::uint64_t version = 0;
    std::vector<std::vector<LayerTrace>> branches; // one per encoder application
    std::vector<LayerTrace> head;
    std::vector<double> dropout_mask; // empty when dropout was not applied
    bool consumed = false;
};

struct ParamGrads {
    std::vector<DenseLayer> encoder;
    std::vector<DenseLayer> head;

    static ParamGrads zeros_like(const ModelParams& p) {
        ParamGrads g;
        for (const auto& l : p.encoder) g.encoder.emplace_back(l.in, l.out);
        for (const auto& l : p.head) g.head.emplace_back(l.in, l.out);
        return g;
    }

    void add(const ParamGrads& o) {
        auto acc = [](std::vector<DenseLayer>& dst, const std::vector<DenseLayer>& src) {
            if (dst.size() != src.size()) throw InvalidInputError("gradient shapes differ");
            for (std::size_t i = 0; i < dst.size(); ++i) {
                if (dst[i].weight.size() != src[i].weight.size()) throw InvalidInputError("gradient shapes differ");
                for (std::size_t j = 0; j < dst[i].weight.size(); ++j) dst[i].weight[j] += src[i].weight[j];
                for (std::size_t j = 0; j < dst[i].bias.size(); ++j) dst[i].bias[j] += src[i].bias[j];
            }
        };
        acc(encoder, o.encoder);
        acc(head, o.head);
    }

    void scale(double s) {
        for (auto* group : {&encoder, &head})
            for (auto& l : *group) {
                for (double& v : l.weight) v *= s;
                for (double& v : l.bias) v *= s;
            }
    }
};

namespace detail {

inline std::vector<double> run_layer(const DenseLayer& l, std::vector<double> x, bool relu,
                                     std::vector<LayerTrace>* trace) {
    std::vector<double> pre(l.out);
    for (std::size_t r = 0; r < l.out; ++r) {
        double acc = l.bias[r];
        const double* row = &l.weight[r * l.in];
        for (std::size_t c = 0; c < l.in; ++c) acc += row[c] * x[c];
        pre[r] = acc;
    }
    std::vector<double> out = pre;
    if (relu)
        for (double& v : out) v = v < 0.0 ? 0.0 : v; // NaN propagates
    if (trace) trace->push_back(LayerTrace{&l, std::move(x), std::move(pre), relu});
    return out;
}

inline std::vector<double> run_encoder(const ModelParams& p, std::span<const double> x,
                                       std::vector<LayerTrace>* trace) {
    if (x.size() != p.input_dim())
        throw InvalidInputError("feature dimension " + std::to_string(x.size()) + " does not match model input " +
                                std::to_string(p.input_dim()));
    std::vector<double> h(x.begin(), x.end());
    for (const auto& l : p.encoder) h = run_layer(l, std::move(h), true, trace);
    return h;
}

inline LogitVector run_head(const ModelParams& p, std::vector<double> h, bool training, Rng* rng,
                            ForwardCache* cache) {
    for (std::size_t i = 0; i < p.head.size(); ++i) {
        const bool last = i + 1 == p.head.size();
        if (last && training && p.dropout_rate > 0.0) {
            if (!rng) throw InvalidInputError("training-mode dropout needs a random generator");
            std::bernoulli_distribution keep(1.0 - p.dropout_rate);
            const double scale = 1.0 / (1.0 - p.dropout_rate);
            std::vector<double> mask(h.size());
            for (std::size_t j = 0; j < h.size(); ++j) {
                mask[j] = keep(*rng) ? scale : 0.0;
                h[j] *= mask[j];
            }
            if (cache) cache->dropout_mask = std::move(mask);
        }
        h = run_layer(p.head[i], std::move(h), !last, cache ? &cache->head : nullptr);
    }
    return LogitVector(std::move(h));
}

// Backpropagates through a traced layer stack; returns d(loss)/d(stack input).
inline std::vector<double> back_layers(const std::vector<LayerTrace>& traces, std::vector<DenseLayer>& grads,
                                       std::vector<double> dout,
                                       const std::vector<double>* last_layer_input_mask = nullptr) {
    for (std::size_t k = traces.size(); k-- > 0;) {
        const LayerTrace& t = traces[k];
        const DenseLayer& l = *t.layer;
        DenseLayer& g = grads[k];
        if (t.relu)
            for (std::size_t r = 0; r < l.out; ++r)
                if (!(t.pre[r] > 0.0)) dout[r] = 0.0;
        std::vector<double> din(l.in, 0.0);
        for (std::size_t r = 0; r < l.out; ++r) {
            const double d = dout[r];
            if (d == 0.0) continue;
            g.bias[r] += d;
            double* grow = &g.weight[r * l.in];
            const double* wrow = &l.weight[r * l.in];
            for (std::size_t c = 0; c < l.in; ++c) {
                grow[c] += d * t.input[c];
                din[c] += d * wrow[c];
            }
        }
        if (k + 1 == traces.size() && last_layer_input_mask && !last_layer_input_mask->empty())
            for (std::size_t c = 0; c < l.in; ++c) din[c] *= (*last_layer_input_mask)[c];
        dout = std::move(din);
    }
    return dout;
}

} // namespace detail

/// Plain (single-input) forward pass. `rng` is only drawn from when
/// training with dropout.
inline std::pair<LogitVector, ForwardCache> forward(const ModelParams& params, std::span<const double> x,
                                                    bool training, Rng* rng) {
    if (params.siamese) throw InvalidInputError("Siamese model needs two inputs");
    ForwardCache cache;
    cache.params = &params;
    cache.version = params.version;
    cache.branches.emplace_back();
    auto emb = detail::run_encoder(params, x, &cache.branches[0]);
    auto logits = detail::run_head(params, std::move(emb), training, rng, &cache);
    return {std::move(logits), std::move(cache)};
}

/// Late fusion: the one encoder is applied to each input, the embeddings
/// are concatenated in (a, b) order and fed to the head.
inline std::pair<LogitVector, ForwardCache> siamese_forward(const ModelParams& params, std::span<const double> x_a,
                                                            std::span<const double> x_b, bool training, Rng* rng) {
    if (!params.siamese) throw InvalidInputError("plain model cannot take a pair of inputs");
    ForwardCache cache;
    cache.params = &params;
    cache.version = params.version;
    cache.branches.resize(2);
    auto ea = detail::run_encoder(params, x_a, &cache.branches[0]);
    auto eb = detail::run_encoder(params, x_b, &cache.branches[1]);
    ea.insert(ea.end(), eb.begin(), eb.end());
    auto logits = detail::run_head(params, std::move(ea), training, rng, &cache);
    return {std::move(logits), std::move(cache)};
}

/// Parameter gradients for the pass recorded in `cache`. For Siamese
/// models the encoder gradient is the sum over both branches.
inline ParamGrads backward(const ModelParams& params, ForwardCache& cache, std::span<const double> grad_logits) {
    if (cache.params != &params || cache.version != params.version)
        throw InvalidStateError("forward cache is stale: parameters changed since the forward pass");
    if (cache.consumed) throw InvalidStateError("forward cache was already consumed by backward");
    if (grad_logits.size() != static_cast<std::size_t>(params.classes()))
        throw InvalidInputError("logit gradient has wrong length");
    cache.consumed = true;

    ParamGrads g = ParamGrads::zeros_like(params);
    std::vector<double> d(grad_logits.begin(), grad_logits.end());
    auto dhead_in = detail::back_layers(cache.head, g.head, std::move(d), &cache.dropout_mask);
    const std::size_t e = params.embedding_dim();
    for (std::size_t b = 0; b < cache.branches.size(); ++b) {
        std::vector<double> demb(dhead_in.begin() + static_cast<std::ptrdiff_t>(b * e),
                                 dhead_in.begin() + static_cast<std::ptrdiff_t>((b + 1) * e));
        detail::back_layers(cache.branches[b], g.encoder, std::move(demb));
    }
    return g;
}

enum class OptimizerKind { SGD, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0; // decoupled
};

struct OptimizerState {
    OptimizerConfig cfg;
    std::int64_t steps = 0;
    ParamGrads m;
    ParamGrads v;
};

inline OptimizerState make_optimizer(const OptimizerConfig& cfg, const ModelParams& params) {
    return OptimizerState{cfg, 0, ParamGrads::zeros_like(params), ParamGrads::zeros_like(params)};
}

/// One update. With update_head=false the head parameters are left as they
/// are (frozen classification neurons during warm-up).
inline void optimizer_step(OptimizerState& state, ModelParams& params, const ParamGrads& grads, double lr,
                           bool update_head = true) {
    auto shapes_match = [](const std::vector<DenseLayer>& a, const std::vector<DenseLayer>& b) {
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i].weight.size() != b[i].weight.size() || a[i].bias.size() != b[i].bias.size()) return false;
        return true;
    };
    if (!shapes_match(params.encoder, grads.encoder) || !shapes_match(params.head, grads.head))
        throw InvalidInputError("gradient shapes do not match parameters");
    if (state.cfg.kind == OptimizerKind::Adam &&
        (!shapes_match(params.encoder, state.m.encoder) || !shapes_match(params.head, state.m.head)))
        throw InvalidInputError("optimizer state shapes do not match parameters");

    const auto& c = state.cfg;
    ++state.steps;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.steps));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.steps));

    auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                      std::vector<double>& v) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            double step;
            if (c.kind == OptimizerKind::SGD) {
                step = g[i];
            } else {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                step = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.eps);
            }
            p[i] -= lr * (step + c.weight_decay * p[i]);
        }
    };
    auto group = [&](std::vector<DenseLayer>& ps, const std::vector<DenseLayer>& gs, std::vector<DenseLayer>& ms,
                     std::vector<DenseLayer>& vs) {
        for (std::size_t i = 0; i < ps.size(); ++i) {
            if (c.kind == OptimizerKind::Adam) {
                update(ps[i].weight, gs[i].weight, ms[i].weight, vs[i].weight);
                update(ps[i].bias, gs[i].bias, ms[i].bias, vs[i].bias);
            } else {
                std::vector<double> unused;
                update(ps[i].weight, gs[i].weight, unused, unused);
                update(ps[i].bias, gs[i].bias, unused, unused);
            }
        }
    };
    group(params.encoder, grads.encoder, state.m.encoder, state.v.encoder);
    if (update_head) group(params.head, grads.head, state.m.head, state.v.head);
    ++params.version;
}

/// A training/inference sample: one input (plain) or two (Siamese).
struct Sample {
    RecordKey key;
    std::vector<double> a;
    std::vector<double> b; // empty for single-input samples
    int label = 0;

    bool paired() const { return !b.empty(); }
};

inline Sample to_sample(const BscanRecord& r) { return Sample{r.key, r.features, {}, r.label.index()}; }

inline Sample to_sample(const PairRecord& r) {
    if (r.features_a.size() != r.features_b.size())
        throw InvalidInputError("pair members differ in feature dimension");
    return Sample{r.key, r.features_a, r.features_b, r.label};
}

struct TrainConfig {
    Task task = Task::T2;
    int classes = 0; // 0: the task's class count
    std::vector<std::size_t> encoder_hidden = {32};
    std::vector<std::size_t> head_hidden = {32};
    double dropout = 0.25;

    int epochs = 30;
    int warmup_epochs = 0;
    int freeze_head_epochs = 0;
    double lr = 1e-3;
    double lr_decay = 0.97;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;

    LossKind loss_kind = LossKind::CrossEntropy;
    LossConfig loss;
    bool balanced_batches = false;
    double undersample_majority = 0.0; // 0 disables
    OptimizerConfig optimizer;
    int early_stop_patience = 0; // 0 disables

    int class_count() const { return classes > 0 ? classes : num_classes(task); }

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (warmup_epochs < 0 || warmup_epochs > epochs) throw ConfigError("warmup_epochs must lie in [0, epochs]");
        if (freeze_head_epochs < 0) throw ConfigError("freeze_head_epochs must be >= 0");
        if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
        if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (balanced_batches && batch_size < static_cast<std::size_t>(class_count()))
            throw ConfigError("batch_size must be at least the number of classes for balanced batches");
        if (undersample_majority < 0.0) throw ConfigError("undersample_majority must be >= 0");
        if (early_stop_patience < 0) throw ConfigError("early_stop_patience must be >= 0");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
        if (classes == 0) validate_loss_for_task(loss_kind, loss, task);
        else loss.validate();
    }
};

/// Linear ramp to cfg.lr over the warm-up epochs, exponential decay after.
inline double lr_schedule(int epoch, const TrainConfig& cfg) {
    if (epoch < cfg.warmup_epochs)
        return cfg.lr * static_cast<double>(epoch + 1) / static_cast<double>(cfg.warmup_epochs);
    return cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch - cfg.warmup_epochs));
}

/// One epoch of batches, as indices into `labels`.
///
/// Undersampling keeps at most round(ratio * largest other class) samples of
/// the majority class. Balanced mode then fills every batch with
/// floor(batch_size / C) samples of each class, cycling through reshuffled
/// per-class pools so minority samples repeat; the epoch has
/// ceil(pool / batch_size) batches. Otherwise the pool is shuffled and cut
/// into consecutive batches.
inline std::vector<std::vector<std::size_t>> make_batches(std::span<const int> labels, const TrainConfig& cfg,
                                                          Rng& rng) {
    const int c = cfg.class_count();
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(c));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= c) throw DataError("label out of range at record " + std::to_string(i));
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    }

    if (cfg.undersample_majority > 0.0) {
        std::size_t major = 0;
        for (std::size_t k = 1; k < by_class.size(); ++k)
            if (by_class[k].size() > by_class[major].size()) major = k;
        std::size_t largest_other = 0;
        for (std::size_t k = 0; k < by_class.size(); ++k)
            if (k != major) largest_other = std::max(largest_other, by_class[k].size());
        const auto keep = static_cast<std::size_t>(std::llround(cfg.undersample_majority *
                                                                static_cast<double>(largest_other)));
        if (keep < by_class[major].size()) {
            std::shuffle(by_class[major].begin(), by_class[major].end(), rng);
            by_class[major].resize(keep);
            std::sort(by_class[major].begin(), by_class[major].end());
        }
    }

    std::size_t pool = 0;
    for (const auto& v : by_class) pool += v.size();
    std::vector<std::vector<std::size_t>> batches;
    if (pool == 0) return batches;

    if (cfg.balanced_batches) {
        for (int k = 0; k < c; ++k)
            if (by_class[static_cast<std::size_t>(k)].empty()) {
                const std::string name =
                    cfg.classes == 0 ? std::string(label_name(static_cast<Label>(k))) : std::to_string(k);
                throw DataError("balanced batching needs every class; class " + name + " has no records");
            }
        const std::size_t per_class = cfg.batch_size / static_cast<std::size_t>(c);
        if (per_class == 0) throw ConfigError("batch_size smaller than the number of classes");
        const std::size_t n_batches = (pool + cfg.batch_size - 1) / cfg.batch_size;
        std::vector<std::size_t> cursor(by_class.size(), 0);
        for (auto& v : by_class) std::shuffle(v.begin(), v.end(), rng);
        for (std::size_t b = 0; b < n_batches; ++b) {
            std::vector<std::size_t> batch;
            batch.reserve(per_class * by_class.size());
            for (std::size_t k = 0; k < by_class.size(); ++k) {
                for (std::size_t j = 0; j < per_class; ++j) {
                    if (cursor[k] == by_class[k].size()) {
                        std::shuffle(by_class[k].begin(), by_class[k].end(), rng);
                        cursor[k] = 0;
                    }
                    batch.push_back(by_class[k][cursor[k]++]);
                }
            }
            batches.push_back(std::move(batch));
        }
        return batches;
    }

    std::vector<std::size_t> all;
    all.reserve(pool);
    for (const auto& v : by_class) all.insert(all.end(), v.begin(), v.end());
    std::sort(all.begin(), all.end());
    std::shuffle(all.begin(), all.end(), rng);
    for (std::size_t s = 0; s < all.size(); s += cfg.batch_size)
        batches.emplace_back(all.begin() + static_cast<std::ptrdiff_t>(s),
                             all.begin() + static_cast<std::ptrdiff_t>(std::min(all.size(), s + cfg.batch_size)));
    return batches;
}

struct Prediction {
    RecordKey key;
    ProbVector probs;
};

inline LogitVector infer_logits(const ModelParams& params, const Sample& s) {
    if (params.siamese != s.paired())
        throw InvalidInputError(params.siamese ? "Siamese model needs paired records" : "model takes single records");
    return params.siamese ? siamese_forward(params, s.a, s.b, false, nullptr).first
                          : forward(params, s.a, false, nullptr).first;
}

/// Softmax probabilities per sample, dropout disabled, input order kept.
/// With threads > 1 the records are split into contiguous shards.
inline std::vector<Prediction> predict(const ModelParams& params, std::span<const Sample> samples,
                                       unsigned threads = 1) {
    std::vector<std::optional<ProbVector>> probs(samples.size());
    auto run = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) probs[i] = softmax(infer_logits(params, samples[i]));
    };
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(samples.size() / 64 + 1)));
    if (threads == 1) {
        run(0, samples.size());
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(threads);
        const std::size_t chunk = (samples.size() + threads - 1) / threads;
        for (unsigned t = 0; t < threads; ++t) {
            const std::size_t lo = std::min(samples.size(), t * chunk);
            const std::size_t hi = std::min(samples.size(), lo + chunk);
            pool.emplace_back([&, t, lo, hi] {
                try {
                    run(lo, hi);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    std::vector<Prediction> out;
    out.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) out.push_back(Prediction{samples[i].key, std::move(*probs[i])});
    return out;
}

inline ConfusionMatrix confusion_of(const std::vector<Prediction>& preds, std::span<const Sample> samples,
                                    int classes) {
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < preds.size(); ++i) cm.add(samples[i].label, preds[i].probs.argmax());
    return cm;
}

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    MetricReport val;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    double best_average = -std::numeric_limits<double>::infinity();
};

struct TrainResult {
    ModelParams params;
    TrainHistory history;
};

inline void check_patient_disjoint(std::span<const Sample> train_set, std::span<const Sample> val_set) {
    std::unordered_set<std::string> train_patients;
    for (const auto& s : train_set) train_patients.insert(s.key.patient_id);
    for (const auto& s : val_set)
        if (train_patients.count(s.key.patient_id))
            throw DataError("patient '" + s.key.patient_id + "' appears in both training and validation data");
}

inline Task metric_task(const TrainConfig& cfg) {
    return cfg.classes == 0 ? cfg.task : (cfg.class_count() == 3 ? Task::T2 : Task::T1);
}

/// Mini-batch training with per-epoch validation. Returns the parameters of
/// the epoch with the best validation challenge average; stops after
/// early_stop_patience epochs without strict improvement.
inline TrainResult train(std::span<const Sample> train_set, std::span<const Sample> val_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.empty()) throw DataError("training set is empty");
    if (val_set.empty()) throw DataError("validation set is empty");
    check_patient_disjoint(train_set, val_set);

    const bool paired = train_set.front().paired();
    const std::size_t dim = train_set.front().a.size();
    const int classes = cfg.class_count();
    auto check = [&](const Sample& s) {
        if (s.paired() != paired) throw DataError("mixed single and paired records");
        if (s.a.size() != dim || (paired && s.b.size() != dim)) throw DataError("inconsistent feature dimension");
        if (s.label < 0 || s.label >= classes) throw DataError("label out of range for " + s.key.case_id);
        for (const auto* v : {&s.a, &s.b})
            for (double x : *v)
                if (!std::isfinite(x)) throw DataError("non-finite feature in " + s.key.case_id);
    };
    for (const auto& s : train_set) check(s);
    for (const auto& s : val_set) check(s);

    Architecture arch;
    arch.encoder_dims = {dim};
    arch.encoder_dims.insert(arch.encoder_dims.end(), cfg.encoder_hidden.begin(), cfg.encoder_hidden.end());
    arch.head_dims = cfg.head_hidden;
    arch.head_dims.push_back(static_cast<std::size_t>(classes));
    arch.siamese = paired;
    arch.dropout = cfg.dropout;

    Rng rng(cfg.seed);
    ModelParams params = init_params(arch, rng());
    OptimizerState opt = make_optimizer(cfg.optimizer, params);

    std::vector<int> labels;
    labels.reserve(train_set.size());
    for (const auto& s : train_set) labels.push_back(s.label);

    std::vector<ProbVector> targets;
    for (int k = 0; k < classes; ++k) targets.push_back(ProbVector::one_hot(k, classes));

    TrainResult result{params, {}};
    int since_best = 0;
    const Task report_task = metric_task(cfg);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_schedule(epoch, cfg);
        const auto batches = make_batches(labels, cfg, rng);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            ParamGrads grads = ParamGrads::zeros_like(params);
            for (std::size_t idx : batches[b]) {
                const Sample& s = train_set[idx];
                std::pair<LogitVector, ForwardCache> fw;
                try {
                    fw = paired ? siamese_forward(params, s.a, s.b, true, &rng) : forward(params, s.a, true, &rng);
                } catch (const InvalidInputError& e) {
                    throw NumericError("forward pass failed at epoch " + std::to_string(epoch) + ", batch " +
                                       std::to_string(b) + ", record " + s.key.case_id + ": " + e.what());
                }
                auto& [logits, cache] = fw;
                const ProbVector& y = targets[static_cast<std::size_t>(s.label)];
                LossResult lr_out = loss_gradient(cfg.loss_kind, logits, y, cfg.loss);
                if (!std::isfinite(lr_out.value)) {
                    std::ostringstream msg;
                    const ProbVector p = softmax(logits);
                    msg << "non-finite loss at epoch " << epoch << ", batch " << b << ", record " << s.key.case_id
                        << ": total=" << lr_out.value << " ce=" << cross_entropy(p, y, cfg.loss.epsilon)
                        << " focal=" << focal_loss(p, y, cfg.loss) << " emd=" << emd_loss(p, y);
                    throw NumericError(msg.str());
                }
                loss_sum += lr_out.value;
                ++seen;
                grads.add(backward(params, cache, lr_out.grad_logits));
            }
            if (batches[b].empty()) continue;
            grads.scale(1.0 / static_cast<double>(batches[b].size()));
            optimizer_step(opt, params, grads, lr, epoch >= cfg.freeze_head_epochs);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
        const auto preds = predict(params, val_set);
        rec.val = evaluate(confusion_of(preds, val_set, classes), report_task);
        result.history.epochs.push_back(rec);

        if (rec.val.average > result.history.best_average) {
            result.history.best_average = rec.val.average;
            result.history.best_epoch = epoch;
            result.params = params;
            since_best = 0;
        } else if (cfg.early_stop_patience > 0 && ++since_best >= cfg.early_stop_patience) {
            break;
        }
    }
    return result;
}

} // namespace ordchange
