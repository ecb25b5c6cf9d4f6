#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "madex/bench.hpp"
#include "madex/error.hpp"
#include "madex/synth.hpp"

using namespace madex;

namespace {

InteractionRanking ranking_of(std::vector<std::vector<std::size_t>> sets) {
    InteractionRanking r;
    double s = static_cast<double>(sets.size());
    for (auto& f : sets) r.items.push_back({f, s--});
    return r;
}

std::vector<double> ones(std::size_t n) { return std::vector<double>(n, 1.0); }

}  // namespace

TEST(Synth, ClosedFormValues) {
    EXPECT_DOUBLE_EQ(synth_eval(SynthId::F1, ones(10)), 18.0);
    EXPECT_DOUBLE_EQ(synth_eval(SynthId::F2, ones(10)), 9.0);
    EXPECT_DOUBLE_EQ(synth_eval(SynthId::F3, std::vector<double>(10, 0.0)), 1.0);
    EXPECT_DOUBLE_EQ(synth_eval(SynthId::F4, ones(10)), 17.0);
    std::vector<double> x(10, 0.0);
    x[0] = 0.5;
    x[1] = -1.5;
    x[9] = 2.0;
    EXPECT_DOUBLE_EQ(synth_eval(SynthId::F3, x), std::exp(1.0) + 2.0);
}

TEST(Synth, ArityMismatch) {
    EXPECT_THROW(synth_eval(SynthId::F1, ones(9)), SchemaError);
    EXPECT_THROW(make_synth_model("F2", 4), Error);
    EXPECT_THROW(synth_from_string("F9"), Error);
}

TEST(Synth, TruthSets) {
    EXPECT_EQ(synth_truth(SynthId::F2), (std::vector<std::vector<std::size_t>>{{0, 1}}));
    EXPECT_EQ(synth_truth(SynthId::F4), (std::vector<std::vector<std::size_t>>{{0, 1, 2}}));
}

TEST(Synth, NamedModels) {
    EXPECT_DOUBLE_EQ(make_synth_model("additive", 4)->predict(ones(4)), 4.0);
    EXPECT_DOUBLE_EQ(make_synth_model("product", 3)->predict(std::vector<double>{2, 3, 9}), 6.0);
    EXPECT_DOUBLE_EQ(make_synth_model("F1")->predict(ones(10)), 18.0);
}

TEST(RPrecision, Definition) {
    EXPECT_DOUBLE_EQ(r_precision(ranking_of({{0, 1}, {2, 3}}), {{0, 1}}), 1.0);
    EXPECT_DOUBLE_EQ(r_precision(ranking_of({{2, 3}, {0, 1}}), {{0, 1}}), 0.0);
    EXPECT_DOUBLE_EQ(r_precision(ranking_of({{0, 1}, {4, 5}, {2, 3}}), {{0, 1}, {2, 3}}), 0.5);
    EXPECT_DOUBLE_EQ(r_precision(InteractionRanking{}, {{0, 1}}), 0.0);
    EXPECT_THROW(r_precision(ranking_of({{0, 1}}), {}), Error);
}

TEST(RPrecision, RandomPickerBaseline) {
    // A uniformly random pair hits the single truth with probability 1/45.
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::size_t> pick(0, 9);
    const int n = 20000;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        std::size_t a = pick(rng), b = pick(rng);
        while (b == a) b = pick(rng);
        total += r_precision(ranking_of({{std::min(a, b), std::max(a, b)}}), {{0, 1}});
    }
    const double p = 1.0 / 45.0;
    EXPECT_NEAR(total / n, p, 4.0 * std::sqrt(p * (1 - p) / n));
}

TEST(TrainedBlackBox, TwoSeedsDifferButBothPassTheGate) {
    const TrainedBlackBox a = make_trained_blackbox(SynthId::F1, 1);
    const TrainedBlackBox b = make_trained_blackbox(SynthId::F1, 2);
    EXPECT_LE(a.test_mse, kBlackBoxMseGate);
    EXPECT_LE(b.test_mse, kBlackBoxMseGate);
    EXPECT_NE(a.model->net().flat_parameters(), b.model->net().flat_parameters());

    // Wrapper identity.
    Matrix in(3, 10);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    for (double& v : in.values()) v = u(rng);
    EXPECT_EQ(a.model->predict_batch(in), a.model->net().forward(in));
}

TEST(TrainedBlackBox, GateFailureIsATrainingError) {
    BlackBoxOptions o;
    o.samples = 500;
    o.net.hidden = {2};
    o.net.max_epochs = 2;
    o.mse_gate = 1e-9;
    EXPECT_THROW(make_trained_blackbox(SynthId::F3, 4, o), TrainingError);
}

TEST(DetectionTrials, GradientNidSkipsF4) {
    const TrialReport r = run_detection_trials(SynthId::F4, Detector::gradnid);
    EXPECT_FALSE(r.skipped.empty());
    EXPECT_TRUE(r.trials.empty());
}

TEST(DetectionTrials, SmallRunIsReproducible) {
    TrialOptions o;
    o.trials = 1;
    o.instances = 2;
    o.splits = {500, 50, 50};
    o.blackbox.samples = 2000;
    o.blackbox.mse_gate = 1.0;
    o.jobs = 2;
    o.seed = 9;
    const TrialReport a = run_detection_trials(SynthId::F1, Detector::nid, o);
    o.jobs = 1;
    const TrialReport b = run_detection_trials(SynthId::F1, Detector::nid, o);
    EXPECT_EQ(report_to_json(a).dump(), report_to_json(b).dump());
    ASSERT_EQ(a.trials.size(), 1u);
    ASSERT_EQ(a.trials[0].instances.size(), 2u);
    for (const auto& inst : a.trials[0].instances) {
        EXPECT_EQ(inst.location.size(), 10u);
        for (double v : inst.location) EXPECT_LE(std::abs(v), 1.0);
        EXPECT_GE(inst.r_precision, 0.0);
        EXPECT_LE(inst.r_precision, 1.0);
    }
    EXPECT_EQ(a.std, 0.0);
    EXPECT_NE(report_text({a}).find("F1"), std::string::npos);
    EXPECT_EQ(report_csv(a).rfind("function,detector,trial,instance", 0), 0u);
}

TEST(TrialOptions, JsonRoundTrip) {
    TrialOptions o;
    o.trials = 3;
    o.sigma = 0.25;
    o.seed = 12;
    o.splits = {10, 20, 30};
    o.blackbox.samples = 77;
    const TrialOptions back = nlohmann::json(o).get<TrialOptions>();
    EXPECT_EQ(nlohmann::json(back), nlohmann::json(o));
}

TEST(Fidelity, ProductGainsFromTheInteractionNetwork) {
    const FeatureSchema s = FeatureSchema::all_dense(4);
    auto model = make_synth_model("product", 4);
    FidelityOptions o;
    o.splits = {2000, 300, 300};
    o.seed = 5;
    const auto rep = fidelity_eval(*model, DataInstance{"", {1, 1, 1, 1}}, s, OffStatePolicy::fixed(s, 0.0),
                                   {{0, 1}}, o);
    ASSERT_GE(rep.rows.size(), 2u);
    EXPECT_EQ(rep.L, 1u);
    EXPECT_LE(rep.rows[1].test_mse, 0.5 * rep.rows[0].test_mse);
    for (std::size_t k = 1; k < rep.rows.size(); ++k) EXPECT_LE(rep.rows[k].val_mse, rep.rows[k - 1].val_mse);
}

TEST(Fidelity, AdditiveStaysAtZero) {
    const FeatureSchema s = FeatureSchema::all_dense(5);
    auto model = make_synth_model("additive", 5);
    FidelityOptions o;
    o.splits = {1000, 200, 200};
    o.seed = 6;
    const auto rep = fidelity_eval(*model, DataInstance{"", {1, 2, 3, 4, 5}}, s, OffStatePolicy::fixed(s, 0.0),
                                   {{0, 1}, {2, 3}}, o);
    EXPECT_EQ(rep.L, 0u);
    EXPECT_EQ(rep.rows.size(), 1u);
    EXPECT_EQ(fidelity_to_json(rep)["L"], 0);
}
