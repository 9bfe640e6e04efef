#include <gtest/gtest.h>

#include <ordchange/ensemble.hpp>

using namespace ordchange;

namespace {

RecordKey key(const std::string& id, const std::string& volume = "V") {
    return RecordKey{id, "P", "V00", volume, 0};
}

constexpr int R = 0, S = 1, W = 2;

std::vector<EnsembleEntry> volume(const std::vector<int>& labels) {
    std::vector<EnsembleEntry> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        std::vector<double> p(3, 0.1);
        p[static_cast<std::size_t>(labels[i])] = 0.8;
        out.push_back({key("b" + std::to_string(i)), labels[i], ProbVector(p)});
    }
    return out;
}

} // namespace

TEST(MeanEnsemble, SingleModelIsArgmax) {
    std::vector<PredictionSet> sets{{"m", {{key("a"), {0.1, 0.2, 0.7}}, {key("b"), {0.5, 0.4, 0.1}}}}};
    const auto out = mean_ensemble(sets);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].label, W);
    EXPECT_EQ(out[1].label, R);
}

TEST(MeanEnsemble, AveragesProbabilities) {
    std::vector<PredictionSet> sets{{"m1", {{key("a"), {0.6, 0.4, 0, 0}}}}, {"m2", {{key("a"), {0.2, 0.8, 0, 0}}}}};
    const auto out = mean_ensemble(sets);
    EXPECT_NEAR(out[0].probs[0], 0.4, 1e-15);
    EXPECT_NEAR(out[0].probs[1], 0.6, 1e-15);
    EXPECT_EQ(out[0].label, S);
}

TEST(MeanEnsemble, IdenticalModelsIdempotent) {
    PredictionSet one{"m", {{key("a"), {0.3, 0.3, 0.4}}, {key("b"), {0.6, 0.2, 0.2}}}};
    std::vector<PredictionSet> single{one}, triple{one, one, one};
    const auto a = mean_ensemble(single), b = mean_ensemble(triple);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].label, b[i].label);
        for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(a[i].probs[k], b[i].probs[k], 1e-15);
    }
}

TEST(MeanEnsemble, ArgmaxTieGoesToLowerIndex) {
    std::vector<PredictionSet> sets{{"m", {{key("a"), {0.4, 0.4, 0.2}}}}};
    EXPECT_EQ(mean_ensemble(sets)[0].label, R);
}

TEST(MeanEnsemble, MisalignedKeysRaise) {
    std::vector<PredictionSet> sets{{"m1", {{key("a"), {0.5, 0.5}}}}, {"m2", {{key("b"), {0.5, 0.5}}}}};
    try {
        mean_ensemble(sets);
        FAIL() << "expected AlignmentError";
    } catch (const AlignmentError& e) {
        EXPECT_NE(std::string(e.what()).find("a"), std::string::npos);
    }
}

TEST(Unanimity, Examples) {
    const ProbVector p{0.1, 0.8, 0.1};
    std::vector<ModelVote> all_stable{{S, p}, {S, p}, {S, p}};
    EXPECT_EQ(stable_unanimity_vote(all_stable), S);
    std::vector<ModelVote> one_worse{{S, p}, {S, p}, {W, {0.1, 0.3, 0.6}}};
    EXPECT_EQ(stable_unanimity_vote(one_worse), W);
    std::vector<ModelVote> split{{R, {0.5, 0.3, 0.2}}, {W, {0.1, 0.3, 0.6}}, {S, {0.2, 0.6, 0.2}}};
    EXPECT_EQ(stable_unanimity_vote(split), W);
}

TEST(Unanimity, TieBreakOptions) {
    std::vector<ModelVote> split{{R, {0.6, 0.3, 0.1}}, {W, {0.3, 0.3, 0.4}}, {S, {0.2, 0.6, 0.2}}};
    EXPECT_EQ(stable_unanimity_vote(split), R);
    PostprocessConfig c;
    c.tie_break = TieBreak::MostSevere;
    EXPECT_EQ(stable_unanimity_vote(split, c), W);
}

TEST(Unanimity, AllScopeCountsStableVotes) {
    const ProbVector p{0.1, 0.8, 0.1};
    std::vector<ModelVote> votes{{S, p}, {S, p}, {W, {0.1, 0.3, 0.6}}};
    PostprocessConfig c;
    c.scope = VoteScope::All;
    EXPECT_EQ(stable_unanimity_vote(votes, c), S);
}

TEST(Unanimity, EmptyThrows) {
    std::vector<ModelVote> none;
    EXPECT_THROW(stable_unanimity_vote(none), InvalidInputError);
}

TEST(VolumeConsistency, ThresholdIsInclusive) {
    const auto v = volume({S, S, S, S, S, S, S, S, W, W});
    const auto out = volume_consistency(v);
    EXPECT_EQ(out.volume_labels.at("V"), S);
    for (int l : out.labels) EXPECT_EQ(l, S);
}

TEST(VolumeConsistency, MajorityOfNonStableBroadcast) {
    const auto v = volume({S, S, S, S, S, S, S, W, W, R});
    const auto out = volume_consistency(v);
    EXPECT_EQ(out.volume_labels.at("V"), W);
    ASSERT_EQ(out.labels.size(), 10u);
    for (int l : out.labels) EXPECT_EQ(l, W);
}

TEST(VolumeConsistency, AllReduced) {
    const auto out = volume_consistency(volume({R, R, R}));
    EXPECT_EQ(out.volume_labels.at("V"), R);
}

TEST(VolumeConsistency, VolumesAreIndependent) {
    auto v = volume({S, S, S, W, W});
    auto w = volume({S, S, S, S, S});
    for (auto& e : w) e.key.volume_id = "U";
    v.insert(v.end(), w.begin(), w.end());
    const auto out = volume_consistency(v);
    EXPECT_EQ(out.volume_labels.at("V"), W);
    EXPECT_EQ(out.volume_labels.at("U"), S);
    EXPECT_EQ(out.labels.back(), S);
    EXPECT_EQ(out.labels.front(), W);
}

TEST(VolumeConsistency, MixedWidthsRejected) {
    auto v = volume({S, S});
    v.push_back({key("x"), 0, ProbVector({0.25, 0.25, 0.25, 0.25})});
    EXPECT_THROW(volume_consistency(v), ConfigError);
}

TEST(PostprocessConfig, Validation) {
    PostprocessConfig c;
    c.stable_ratio_threshold = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c.stable_ratio_threshold = 1.0;
    EXPECT_NO_THROW(c.validate());
}
