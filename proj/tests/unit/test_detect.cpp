#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "madex/detect.hpp"
#include "madex/error.hpp"
#include "test_util.hpp"

using namespace madex;

namespace {

void zero_all(SurrogateNet& net) {
    std::vector<double> zeros(net.parameter_count(), 0.0);
    net.set_flat_parameters(zeros);
}

NetConfig tiny(Activation a, std::vector<std::size_t> hidden, std::uint64_t seed = 1) {
    NetConfig c;
    c.hidden = std::move(hidden);
    c.activation = a;
    c.l1 = 0.0;
    c.seed = seed;
    return c;
}

// g = out * (x1 + x2)^2 on d inputs.
SurrogateNet square_pair_net(std::size_t d, double out) {
    SurrogateNet net = make_net(tiny(Activation::square, {1}), d);
    zero_all(net);
    net.branches[0].layers[0].weight(0, 0) = 1.0;
    net.branches[0].layers[0].weight(1, 0) = 1.0;
    net.branches[0].layers[1].weight(0, 0) = out;
    return net;
}

// Squared mixed difference of f over the mask pair (i, j), others switched on.
double mask_mixed_difference(BlackBoxModel& f, const DataInstance& x, const FeatureSchema& s,
                             const OffStatePolicy& p, std::size_t i, std::size_t j) {
    std::vector<double> mask(s.field_count(), 1.0);
    auto eval = [&](double mi, double mj) {
        mask[i] = mi;
        mask[j] = mj;
        return f.predict(map_to_input(mask, x, s, p));
    };
    const double dd = eval(1, 1) - eval(1, 0) - eval(0, 1) + eval(0, 0);
    return dd * dd;
}

}  // namespace

TEST(NidRank, SingleActiveUnit) {
    SurrogateNet net = make_net(tiny(Activation::relu, {4, 3}), 5);
    zero_all(net);
    auto& layers = net.branches[0].layers;
    layers[0].weight(0, 0) = 5.0;
    layers[0].weight(1, 0) = 5.0;
    layers[1].weight(0, 0) = 1.0;
    layers[2].weight(0, 0) = 1.0;
    net.log.trained = true;
    const InteractionRanking r = nid_rank(net);
    ASSERT_FALSE(r.empty());
    EXPECT_EQ(r.items[0].features, (std::vector<std::size_t>{0, 1}));
    EXPECT_DOUBLE_EQ(r.items[0].strength, 5.0);
}

TEST(NidRank, PerformsExactlyHTimesDMinusOneTests) {
    for (std::size_t d : {2, 3, 7})
        for (std::size_t h : {1, 5, 16}) {
            SurrogateNet net = make_net(tiny(Activation::relu, {h, 4}, d * h), d);
            net.log.trained = true;
            EXPECT_EQ(nid_rank(net).tests, h * (d - 1));
        }
}

TEST(NidRank, RefusesUntrainedNet) {
    EXPECT_THROW(nid_rank(make_net(tiny(Activation::relu, {3}), 3)), Error);
}

TEST(NidRank, InteractionsAreValidAndDistinct) {
    SurrogateNet net = make_net(tiny(Activation::relu, {32, 8}, 3), 6);
    net.log.trained = true;
    const auto r = nid_rank(net);
    std::set<std::vector<std::size_t>> seen;
    for (const auto& it : r.items) {
        EXPECT_GE(it.features.size(), 2u);
        EXPECT_TRUE(std::is_sorted(it.features.begin(), it.features.end()));
        EXPECT_TRUE(std::adjacent_find(it.features.begin(), it.features.end()) == it.features.end());
        EXPECT_LT(it.features.back(), 6u);
        EXPECT_TRUE(seen.insert(it.features).second);
    }
    for (std::size_t i = 1; i < r.items.size(); ++i) EXPECT_GE(r.items[i - 1].strength, r.items[i].strength);
}

TEST(NidRank, OutputScalingPreservesOrder) {
    SurrogateNet net = make_net(tiny(Activation::relu, {24, 8}, 4), 5);
    net.log.trained = true;
    const auto before = nid_rank(net);
    for (double& v : net.branches[0].layers.back().weight.values()) v *= 3.5;
    for (double& v : net.branches[0].layers.back().bias) v *= 3.5;
    const auto after = nid_rank(net);
    ASSERT_EQ(before.items.size(), after.items.size());
    for (std::size_t i = 0; i < before.items.size(); ++i) {
        EXPECT_EQ(before.items[i].features, after.items[i].features);
        EXPECT_NEAR(after.items[i].strength, 3.5 * before.items[i].strength, 1e-12 * after.items[i].strength);
    }
}

TEST(NidRank, TrainedOnProductFindsThePair) {
    auto data = test::masks_dataset(5, {5000, 500, 500}, 5,
                                    [](std::span<const double> x) { return x[0] * x[1] + x[2]; });
    const SurrogateNet net = train(NetConfig::nid(6), data);
    EXPECT_EQ(nid_rank(net).items[0].features, (std::vector<std::size_t>{0, 1}));
}

TEST(GradientNid, HandBuiltProductHasOmegaNine) {
    // 1.5 (x1 + x2)^2 has mixed partial 3 everywhere.
    const auto r = gradient_nid(square_pair_net(4, 1.5), std::vector<double>(4, 1.0));
    EXPECT_EQ(r.items.size(), 6u);
    EXPECT_EQ(r.items[0].features, (std::vector<std::size_t>{0, 1}));
    EXPECT_NEAR(r.items[0].strength, 9.0, 1e-12);
    for (std::size_t i = 1; i < r.items.size(); ++i) EXPECT_EQ(r.items[i].strength, 0.0);
}

TEST(GradientNid, AdditiveNetHasNoInteractions) {
    const std::vector<std::vector<std::size_t>> singles{{0}, {1}, {2}, {3}};
    NetConfig c = tiny(Activation::softplus, {6, 3}, 7);
    c.linear_branch = true;
    const SurrogateNet net = make_additive_net(c, 4, singles);
    for (const auto& it : gradient_nid(net, std::vector<double>{0.3, -0.2, 0.9, 1.0}).items)
        EXPECT_EQ(it.strength, 0.0);
}

TEST(GradientNid, PureLinearBranchHasNoInteractions) {
    NetConfig c = tiny(Activation::softplus, {5}, 8);
    c.linear_branch = true;
    SurrogateNet net = make_net(c, 3);
    zero_all(net);
    net.linear->weights = {4.0, -1.0, 2.0};
    for (std::size_t order : {2, 3})
        for (const auto& it : gradient_nid(net, std::vector<double>{1, 1, 1}, order).items) EXPECT_EQ(it.strength, 0.0);
}

TEST(GradientNid, OrderThreeMatchesNestedDifferences) {
    const SurrogateNet net = make_net(tiny(Activation::softplus, {8, 6}, 9), 4);
    const std::vector<double> x{0.4, -0.1, 0.7, 0.2};
    const auto r = gradient_nid(net, x, 3);
    EXPECT_EQ(r.items.size(), 4u);
    const double h = 1e-2;
    for (const auto& it : r.items) {
        // 8-point stencil on g itself.
        double sum = 0.0;
        for (int s = 0; s < 8; ++s) {
            auto p = x;
            int sign = 1;
            for (int b = 0; b < 3; ++b) {
                const bool up = (s >> b) & 1;
                p[it.features[static_cast<std::size_t>(b)]] += up ? h : -h;
                if (!up) sign = -sign;
            }
            sum += sign * net.predict(p);
        }
        const double third = sum / (8 * h * h * h);
        EXPECT_NEAR(std::sqrt(it.strength), std::abs(third), 1e-3 * std::max(1.0, std::abs(third)));
    }
}

TEST(GradientNid, HigherOrdersRefused) {
    const SurrogateNet net = make_net(tiny(Activation::softplus, {3}), 5);
    try {
        gradient_nid(net, std::vector<double>(5, 1.0), 4);
        FAIL() << "expected refusal";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("low-order"), std::string::npos);
    }
    EXPECT_THROW(gradient_nid(net, std::vector<double>(5, 1.0), 1), Error);
}

TEST(SortInteractions, TiesAreLexicographic) {
    std::vector<Interaction> items{{{1, 2}, 1.0}, {{0, 3}, 1.0}, {{0, 2}, 2.0}, {{0, 1, 2}, 1.0}};
    sort_interactions(items);
    EXPECT_EQ(items[0].features, (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(items[1].features, (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_EQ(items[2].features, (std::vector<std::size_t>{0, 3}));
    EXPECT_EQ(items[3].features, (std::vector<std::size_t>{1, 2}));
}

TEST(SelectK, EmptyRankingIsZero) {
    const auto data = test::masks_dataset(3, {200, 50, 50}, 1, [](std::span<const double> x) { return x[0] * x[1]; });
    EXPECT_EQ(select_k(InteractionRanking{}, data).k, 0u);
}

TEST(SelectK, ProductTargetKeepsThePair) {
    const auto data = test::masks_dataset(4, {500, 100, 100}, 2, [](std::span<const double> x) { return x[0] * x[1]; });
    InteractionRanking r;
    r.items = {{{0, 1}, 2.0}, {{2, 3}, 1.0}};
    const KSelection sel = select_k(r, data);
    EXPECT_EQ(sel.k, 1u);
    ASSERT_EQ(sel.kept.size(), 1u);
    EXPECT_EQ(sel.kept[0].features, (std::vector<std::size_t>{0, 1}));
    EXPECT_GT(sel.val_mse[0], sel.val_mse[1]);
}

TEST(SelectK, AdditiveTargetRejectsSpuriousPairs) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> noise(0.0, 0.1);
    auto data = test::masks_dataset(5, {1000, 200, 200}, 3, [](std::span<const double> x) {
        return x[0] - 2 * x[1] + x[4];
    });
    for (double& y : data.labels) y += noise(rng);
    InteractionRanking r;
    r.items = {{{0, 1}, 3.0}, {{1, 4}, 2.0}, {{2, 3}, 1.0}};
    EXPECT_EQ(select_k(r, data).k, 0u);
}

TEST(Madex, PipelineOnProductPlusSum) {
    const FeatureSchema s = FeatureSchema::all_dense(5);
    FunctionModel f("x1x2+x3", 5, [](std::span<const double> x) { return x[0] * x[1] + x[2]; });
    MadexConfig c;
    c.detector = Detector::nid;
    c.seed = 4;
    const auto res = madex::madex(f, DataInstance{"i", std::vector<double>(5, 1.0)}, s, OffStatePolicy::fixed(s, 0.0), c);
    ASSERT_FALSE(res.ranking.empty());
    EXPECT_EQ(res.ranking.items[0].features, (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(res.k, 1u);
    EXPECT_FALSE(res.config_hash.empty());
}

TEST(Madex, AdditiveBlackBoxGivesEmptySet) {
    const FeatureSchema s = FeatureSchema::all_dense(6);
    FunctionModel f("sum", 6, [](std::span<const double> x) { return x[0] + x[1] + x[2] + x[3] + x[4] + x[5]; });
    for (Detector det : {Detector::nid, Detector::gradnid}) {
        MadexConfig c;
        c.detector = det;
        c.seed = 5;
        const auto res =
            madex::madex(f, DataInstance{"a", {0.5, -1, 2, 0.3, 0.9, -0.4}}, s, OffStatePolicy::fixed(s, 0.0), c);
        EXPECT_EQ(res.k, 0u) << to_string(det);
        EXPECT_TRUE(res.interactions.empty());
    }
}

TEST(Madex, AgreesWithBruteForceMixedDifferences) {
    const std::size_t d = 6;
    const FeatureSchema s = FeatureSchema::all_dense(d);
    const OffStatePolicy p = OffStatePolicy::fixed(s, 0.0);
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<std::size_t> pick(0, d - 1);
    std::uniform_real_distribution<double> mag(0.5, 1.0);
    std::bernoulli_distribution neg(0.5);
    int agree = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t a = pick(rng);
        std::size_t b = pick(rng);
        while (b == a) b = pick(rng);
        FunctionModel f("pair", d, [a, b](std::span<const double> x) {
            double y = 3.0 * x[a] * x[b];
            for (double v : x) y += v;
            return y;
        });
        DataInstance x{"", std::vector<double>(d)};
        for (double& v : x.values) v = neg(rng) ? -mag(rng) : mag(rng);

        std::vector<std::size_t> best;
        double best_score = -1.0;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i + 1; j < d; ++j) {
                const double score = mask_mixed_difference(f, x, s, p, i, j);
                if (score > best_score) best_score = score, best = {i, j};
            }
        MadexConfig c;
        c.seed = static_cast<std::uint64_t>(100 + trial);
        const auto res = madex::madex(f, x, s, p, c);
        if (!res.ranking.empty() && res.ranking.items[0].features == best) ++agree;
    }
    EXPECT_GE(agree, 18);
}

TEST(Madex, ConfigJsonRoundTrip) {
    MadexConfig c;
    c.detector = Detector::nid;
    c.order = 3;
    c.mode = PerturbMode::continuous;
    c.sigma = 0.4;
    c.bounds = {{-1, 1}, {0, 2}};
    c.splits = {10, 2, 3};
    c.lime_weighting = true;
    c.net = NetConfig::nid(9);
    c.seed = 77;
    const MadexConfig back = nlohmann::json(c).get<MadexConfig>();
    EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));
    EXPECT_EQ(config_hash(nlohmann::json(back)), config_hash(nlohmann::json(c)));
}

TEST(Madex, ResultJsonIsOneBased) {
    MadexResult r;
    r.instance_id = "row7";
    r.detector = Detector::nid;
    r.k = 1;
    r.interactions = {{{0, 2}, 4.0, Detector::nid}};
    r.ranking.items = r.interactions;
    const auto j = result_to_json(r, FeatureSchema::all_dense(3));
    EXPECT_EQ(j["interactions"][0]["features"], nlohmann::json::array({1, 3}));
    EXPECT_EQ(j["interactions"][0]["names"], nlohmann::json::array({"x1", "x3"}));
    EXPECT_EQ(j["k"], 1);
    EXPECT_EQ(j["detector"], "nid");
}
