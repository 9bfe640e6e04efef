#include <chrono>
#include <cmath>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include <ordchange/gradcheck.hpp>
#include <ordchange/model.hpp>

using namespace ordchange;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
}

// Three well separated 2-D clusters, one patient per sample.
std::vector<Sample> clusters(std::size_t n, std::uint64_t seed, const std::string& prefix) {
    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, 0.3);
    std::vector<Sample> out;
    for (std::size_t i = 0; i < n; ++i) {
        Sample s;
        s.label = static_cast<int>(i % 3);
        s.key.case_id = prefix + std::to_string(i);
        s.key.patient_id = s.key.case_id;
        s.a = {2.0 * (s.label - 1) + noise(rng), (s.label == 1 ? 1.0 : -1.0) + noise(rng)};
        out.push_back(std::move(s));
    }
    return out;
}

TrainConfig small_cfg() {
    TrainConfig c;
    c.encoder_hidden = {8};
    c.head_hidden = {8};
    c.dropout = 0.0;
    c.epochs = 30;
    c.lr = 0.01;
    c.batch_size = 16;
    c.seed = 7;
    return c;
}

} // namespace

TEST(InitParams, Deterministic) {
    const std::vector<std::size_t> dims{8, 16, 3};
    EXPECT_TRUE(init_params(dims, 0.1, 3).same_values(init_params(dims, 0.1, 3)));
    EXPECT_FALSE(init_params(dims, 0.1, 3).same_values(init_params(dims, 0.1, 4)));
}

TEST(InitParams, Shapes) {
    const std::vector<std::size_t> dims{8, 16, 3};
    const auto p = init_params(dims, 0.0, 1);
    ASSERT_EQ(p.head.size(), 2u);
    EXPECT_EQ(p.head[0].weight.size(), 16u * 8u);
    EXPECT_EQ(p.head[0].bias.size(), 16u);
    EXPECT_EQ(p.head[1].weight.size(), 3u * 16u);
    EXPECT_EQ(p.head[1].bias.size(), 3u);
    EXPECT_EQ(p.classes(), 3);
    EXPECT_NO_THROW(p.validate());
}

TEST(InitParams, RejectsBadArchitecture) {
    const std::vector<std::size_t> bad{8};
    EXPECT_THROW(init_params(bad, 0.0, 1), ConfigError);
    const std::vector<std::size_t> zero{8, 0, 3};
    EXPECT_THROW(init_params(zero, 0.0, 1), ConfigError);
    const std::vector<std::size_t> ok{8, 3};
    EXPECT_THROW(init_params(ok, 1.0, 1), ConfigError);
}

TEST(Forward, ZeroWeightsGiveZeroLogits) {
    const std::vector<std::size_t> dims{4, 5, 3};
    auto p = init_params(dims, 0.0, 1);
    for (auto& l : p.head) std::fill(l.weight.begin(), l.weight.end(), 0.0);
    const std::vector<double> x{1, 2, 3, 4};
    const auto z = forward(p, x, false, nullptr).first;
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(z[i], 0.0);
}

TEST(Forward, InferenceDeterministic) {
    const std::vector<std::size_t> dims{4, 8, 3};
    const auto p = init_params(dims, 0.5, 2);
    const std::vector<double> x{0.1, -0.4, 1.2, 0.3};
    const auto a = forward(p, x, false, nullptr).first;
    const auto b = forward(p, x, false, nullptr).first;
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Forward, IdentityLayer) {
    const std::vector<std::size_t> dims{3, 3};
    auto p = init_params(dims, 0.0, 1);
    auto& l = p.head[0];
    std::fill(l.weight.begin(), l.weight.end(), 0.0);
    for (std::size_t i = 0; i < 3; ++i) l.weight[i * 3 + i] = 1.0;
    const std::vector<double> x{-1.5, 0.25, 7.0};
    const auto z = forward(p, x, false, nullptr).first;
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(z[i], x[i]);
}

TEST(Forward, DimensionMismatchThrows) {
    const std::vector<std::size_t> dims{4, 3};
    const auto p = init_params(dims, 0.0, 1);
    const std::vector<double> x{1, 2};
    EXPECT_THROW(forward(p, x, false, nullptr), InvalidInputError);
}

TEST(Forward, DropoutNeedsRngAndIsInverted) {
    const std::vector<std::size_t> dims{4, 64, 3};
    const auto p = init_params(dims, 0.5, 3);
    const std::vector<double> x{1, 2, 3, 4};
    EXPECT_THROW(forward(p, x, true, nullptr), InvalidInputError);
    Rng rng(1);
    const auto cache = forward(p, x, true, &rng).second;
    ASSERT_EQ(cache.dropout_mask.size(), 64u);
    for (double m : cache.dropout_mask) EXPECT_TRUE(m == 0.0 || m == 2.0);
}

TEST(Siamese, DifferenceHeadIgnoresEqualInputs) {
    Architecture arch;
    arch.encoder_dims = {4, 3};
    arch.head_dims = {2};
    arch.siamese = true;
    auto p = init_params(arch, 5);
    // Head reads e_a - e_b only.
    auto& h = p.head[0];
    std::fill(h.weight.begin(), h.weight.end(), 0.0);
    std::fill(h.bias.begin(), h.bias.end(), 0.0);
    for (std::size_t j = 0; j < 3; ++j) {
        h.weight[j] = 1.0;
        h.weight[j + 3] = -1.0;
    }
    const std::vector<double> x{0.3, 1.0, -2.0, 0.5};
    const auto z = siamese_forward(p, x, x, false, nullptr).first;
    EXPECT_EQ(z[0], 0.0);
    EXPECT_EQ(z[1], 0.0);
}

TEST(Siamese, OrderMatters) {
    Architecture arch;
    arch.encoder_dims = {4, 6};
    arch.head_dims = {3};
    arch.siamese = true;
    auto p = init_params(arch, 9);
    Rng rng(2);
    detail::randomize_biases(p, rng);
    const auto xa = random_vec(4, rng), xb = random_vec(4, rng);
    const auto ab = siamese_forward(p, xa, xb, false, nullptr).first;
    const auto ba = siamese_forward(p, xb, xa, false, nullptr).first;
    bool differ = false;
    for (std::size_t i = 0; i < 3; ++i) differ = differ || ab[i] != ba[i];
    EXPECT_TRUE(differ);
}

TEST(Siamese, GradientMatchesFiniteDifferences) {
    Architecture arch;
    arch.encoder_dims = {4, 6};
    arch.head_dims = {8, 3};
    arch.siamese = true;
    auto p = init_params(arch, 4);
    Rng rng(3);
    detail::randomize_biases(p, rng);
    Sample s;
    s.a = random_vec(4, rng);
    s.b = random_vec(4, rng);
    const auto dev = model_gradient_check(p, s, LossKind::Combined, ProbVector::one_hot(2, 3), {});
    EXPECT_LT(dev.max_rel_error, 1e-5) << dev.worst_param;
}

TEST(Backward, PlainNetMatchesFiniteDifferences) {
    const std::vector<std::size_t> dims{4, 8, 3};
    Rng rng(8);
    for (auto kind : {LossKind::CrossEntropy, LossKind::Focal, LossKind::Emd, LossKind::Combined}) {
        auto p = init_params(dims, 0.0, rng());
        detail::randomize_biases(p, rng);
        Sample s;
        s.a = random_vec(4, rng);
        const auto dev = model_gradient_check(p, s, kind, ProbVector::one_hot(1, 3), {});
        EXPECT_LT(dev.max_rel_error, 1e-5) << loss_kind_name(kind) << " " << dev.worst_param;
    }
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
    const std::vector<std::size_t> dims{4, 8, 3};
    const auto p = init_params(dims, 0.0, 1);
    const std::vector<double> x{1, -1, 0.5, 2};
    auto cache = forward(p, x, false, nullptr).second;
    const std::vector<double> zero(3, 0.0);
    const auto g = backward(p, cache, zero);
    for (const auto& l : g.head) {
        for (double v : l.weight) EXPECT_EQ(v, 0.0);
        for (double v : l.bias) EXPECT_EQ(v, 0.0);
    }
}

TEST(Backward, FocalGammaZeroMatchesSoftmaxCe) {
    const std::vector<std::size_t> dims{3, 3};
    const auto p = init_params(dims, 0.0, 6);
    const std::vector<double> x{0.4, -0.7, 1.1};
    auto [z, cache] = forward(p, x, false, nullptr);
    LossConfig cfg;
    cfg.gamma = 0.0;
    cfg.emd_weight = 0.0;
    const ProbVector y = ProbVector::one_hot(0, 3);
    const auto g = backward(p, cache, loss_gradient(LossKind::Combined, z, y, cfg).grad_logits);
    const auto prob = softmax(z);
    for (std::size_t r = 0; r < 3; ++r) {
        const double d = prob[r] - y[r];
        EXPECT_NEAR(g.head[0].bias[r], d, 1e-14);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(g.head[0].weight[r * 3 + c], d * x[c], 1e-14);
    }
}

TEST(Backward, StaleOrReusedCacheRejected) {
    const std::vector<std::size_t> dims{3, 3};
    auto p = init_params(dims, 0.0, 6);
    const std::vector<double> x{0.4, -0.7, 1.1}, g{0.1, 0.2, -0.3};
    auto cache = forward(p, x, false, nullptr).second;
    EXPECT_NO_THROW(backward(p, cache, g));
    EXPECT_THROW(backward(p, cache, g), InvalidStateError);

    auto cache2 = forward(p, x, false, nullptr).second;
    auto opt = make_optimizer({}, p);
    optimizer_step(opt, p, ParamGrads::zeros_like(p), 0.1);
    EXPECT_THROW(backward(p, cache2, g), InvalidStateError);
}

TEST(Optimizer, SgdUnitStepZeroesParams) {
    const std::vector<std::size_t> dims{3, 4, 2};
    auto p = init_params(dims, 0.0, 1);
    ParamGrads g = ParamGrads::zeros_like(p);
    for (std::size_t i = 0; i < p.head.size(); ++i) {
        g.head[i].weight = p.head[i].weight;
        g.head[i].bias = p.head[i].bias;
    }
    OptimizerConfig c;
    c.kind = OptimizerKind::SGD;
    auto st = make_optimizer(c, p);
    optimizer_step(st, p, g, 1.0);
    for (const auto& l : p.head) {
        for (double v : l.weight) EXPECT_EQ(v, 0.0);
        for (double v : l.bias) EXPECT_EQ(v, 0.0);
    }
}

TEST(Optimizer, AdamFirstStepIsSignTimesLr) {
    const std::vector<std::size_t> dims{3, 2};
    auto p = init_params(dims, 0.0, 1);
    const auto before = p;
    ParamGrads g = ParamGrads::zeros_like(p);
    for (std::size_t i = 0; i < g.head[0].weight.size(); ++i) g.head[0].weight[i] = (i % 2 ? -0.37 : 2.5);
    auto st = make_optimizer({}, p);
    optimizer_step(st, p, g, 0.01);
    for (std::size_t i = 0; i < g.head[0].weight.size(); ++i) {
        const double expected = -0.01 * (g.head[0].weight[i] > 0 ? 1.0 : -1.0);
        EXPECT_NEAR(p.head[0].weight[i] - before.head[0].weight[i], expected, 1e-9);
    }
}

TEST(Optimizer, ZeroGradientFixedPoint) {
    const std::vector<std::size_t> dims{3, 4, 2};
    auto p = init_params(dims, 0.0, 1);
    const auto before = p;
    for (auto kind : {OptimizerKind::SGD, OptimizerKind::Adam}) {
        OptimizerConfig c;
        c.kind = kind;
        auto st = make_optimizer(c, p);
        optimizer_step(st, p, ParamGrads::zeros_like(p), 0.5);
        EXPECT_TRUE(p.same_values(before));
    }
}

TEST(Optimizer, FrozenHeadUnchanged) {
    Architecture arch;
    arch.encoder_dims = {3, 4};
    arch.head_dims = {2};
    auto p = init_params(arch, 2);
    const auto before = p;
    ParamGrads g = ParamGrads::zeros_like(p);
    for (auto* grp : {&g.encoder, &g.head})
        for (auto& l : *grp) std::fill(l.weight.begin(), l.weight.end(), 1.0);
    auto st = make_optimizer({}, p);
    optimizer_step(st, p, g, 0.1, false);
    EXPECT_EQ(p.head[0].weight, before.head[0].weight);
    EXPECT_NE(p.encoder[0].weight, before.encoder[0].weight);
}

TEST(LrSchedule, WarmupAndDecay) {
    TrainConfig c;
    c.lr = 0.02;
    c.warmup_epochs = 20;
    c.epochs = 40;
    c.lr_decay = 0.9;
    EXPECT_DOUBLE_EQ(lr_schedule(0, c), 0.02 / 20);
    EXPECT_DOUBLE_EQ(lr_schedule(20, c), 0.02);
    EXPECT_NEAR(lr_schedule(22, c), 0.81 * 0.02, 1e-15);
}

TEST(MakeBatches, BalancedHasEqualClassCounts) {
    std::vector<int> labels;
    for (int i = 0; i < 800; ++i) labels.push_back(0);
    for (int i = 0; i < 150; ++i) labels.push_back(1);
    for (int i = 0; i < 50; ++i) labels.push_back(2);
    TrainConfig c;
    c.balanced_batches = true;
    c.batch_size = 30;
    Rng rng(1);
    const auto batches = make_batches(labels, c, rng);
    EXPECT_EQ(batches.size(), 34u);
    for (const auto& b : batches) {
        std::map<int, int> n;
        for (auto i : b) ++n[labels[i]];
        EXPECT_EQ(n[0], 10);
        EXPECT_EQ(n[1], 10);
        EXPECT_EQ(n[2], 10);
    }
}

TEST(MakeBatches, UndersampleMajority) {
    std::vector<int> labels;
    for (int i = 0; i < 800; ++i) labels.push_back(1);
    for (int i = 0; i < 150; ++i) labels.push_back(0);
    for (int i = 0; i < 50; ++i) labels.push_back(2);
    TrainConfig c;
    c.undersample_majority = 1.0;
    c.batch_size = 32;
    Rng rng(1);
    std::map<int, int> n;
    for (const auto& b : make_batches(labels, c, rng))
        for (auto i : b) ++n[labels[i]];
    EXPECT_EQ(n[0], 150);
    EXPECT_EQ(n[1], 150);
    EXPECT_EQ(n[2], 50);
}

TEST(MakeBatches, SeedDeterminism) {
    std::vector<int> labels;
    for (int i = 0; i < 100; ++i) labels.push_back(i % 3);
    TrainConfig c;
    c.batch_size = 7;
    Rng a(42), b(42);
    EXPECT_EQ(make_batches(labels, c, a), make_batches(labels, c, b));
}

TEST(MakeBatches, BalancedNeedsEveryClass) {
    const std::vector<int> labels{0, 0, 1, 1};
    TrainConfig c;
    c.balanced_batches = true;
    c.batch_size = 6;
    Rng rng(1);
    EXPECT_THROW(make_batches(labels, c, rng), DataError);
}

TEST(Train, SeparableClustersAreLearned) {
    const auto tr = clusters(200, 1, "t");
    const auto va = clusters(60, 2, "v");
    const auto res = train(tr, va, small_cfg());
    const auto preds = predict(res.params, tr);
    EXPECT_GE(micro_f1(confusion_of(preds, tr, 3)), 0.95);
    EXPECT_EQ(res.history.epochs.size(), 30u);
}

TEST(Train, PatientOverlapRejected) {
    const auto tr = clusters(30, 1, "t");
    auto va = clusters(6, 2, "v");
    va[0].key.patient_id = tr[3].key.patient_id;
    EXPECT_THROW(train(tr, va, small_cfg()), DataError);
}

TEST(Train, Deterministic) {
    const auto tr = clusters(60, 1, "t");
    const auto va = clusters(30, 2, "v");
    auto cfg = small_cfg();
    cfg.epochs = 5;
    cfg.dropout = 0.3;
    cfg.balanced_batches = true;
    const auto a = train(tr, va, cfg);
    const auto b = train(tr, va, cfg);
    EXPECT_TRUE(a.params.same_values(b.params));
    ASSERT_EQ(a.history.epochs.size(), b.history.epochs.size());
    for (std::size_t i = 0; i < a.history.epochs.size(); ++i) {
        EXPECT_EQ(a.history.epochs[i].train_loss, b.history.epochs[i].train_loss);
        EXPECT_EQ(a.history.epochs[i].val.average, b.history.epochs[i].val.average);
    }
}

TEST(Train, EarlyStoppingHonoursPatience) {
    const auto tr = clusters(60, 1, "t");
    const auto va = clusters(30, 2, "v");
    auto cfg = small_cfg();
    cfg.epochs = 200;
    cfg.early_stop_patience = 3;
    const auto res = train(tr, va, cfg);
    EXPECT_LT(res.history.epochs.size(), 200u);
    EXPECT_EQ(static_cast<int>(res.history.epochs.size()), res.history.best_epoch + 1 + 3);
}

TEST(Train, NonFiniteLossIsNumericError) {
    auto tr = clusters(30, 1, "t");
    const auto va = clusters(6, 2, "v");
    tr[4].a[0] = 1e308;
    auto cfg = small_cfg();
    cfg.lr = 1e3;
    EXPECT_THROW(train(tr, va, cfg), NumericError);
}

TEST(Train, InvalidConfig) {
    auto cfg = small_cfg();
    cfg.task = Task::T1;
    cfg.loss_kind = LossKind::Emd;
    const auto tr = clusters(30, 1, "t");
    EXPECT_THROW(train(tr, tr, cfg), ConfigError);
}

TEST(Predict, DuplicatesAndValidity) {
    const std::vector<std::size_t> dims{4, 8, 3};
    const auto p = init_params(dims, 0.2, 1);
    Rng rng(4);
    std::vector<Sample> s(5);
    for (auto& x : s) x.a = random_vec(4, rng);
    s.push_back(s[2]);
    const auto out = predict(p, s);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(out[2].probs[i], out[5].probs[i]);
    for (const auto& o : out) {
        double sum = 0.0;
        for (double v : o.probs.values()) sum += v;
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Predict, ThreadedMatchesSerialAndIsFast) {
    const std::vector<std::size_t> dims{32, 64, 3};
    const auto p = init_params(dims, 0.0, 1);
    Rng rng(4);
    std::vector<Sample> s(1000);
    for (auto& x : s) x.a = random_vec(32, rng);
    const auto t0 = std::chrono::steady_clock::now();
    const auto serial = predict(p, s, 1);
    EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 1.0);
    const auto threaded = predict(p, s, 4);
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t k = 0; k < 3; ++k) ASSERT_EQ(serial[i].probs[k], threaded[i].probs[k]);
}
