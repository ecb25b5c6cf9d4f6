#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "madex/detect.hpp"
#include "madex/synth.hpp"

namespace madex {

inline constexpr double kBlackBoxMseGate = 0.05;

struct BlackBoxOptions {
    std::size_t samples = 10000;  // split 80/10/10
    NetConfig net = default_net();
    double mse_gate = kBlackBoxMseGate;

    /// 64-64-32 relu, no L1.
    static NetConfig default_net();
};

struct TrainedBlackBox {
    std::shared_ptr<NetModel> model;
    double test_mse = 0.0;
    std::size_t epochs = 0;
};

/// Trains a network on uniform [-1,1]^10 samples of F_id. Throws
/// TrainingError if the held-out MSE exceeds the gate.
TrainedBlackBox make_trained_blackbox(SynthId id, std::uint64_t seed, const BlackBoxOptions& options = {});

/// Fraction of the top-R ranked sets found in `truth`, R = |truth|.
double r_precision(const InteractionRanking& ranking, const std::vector<std::vector<std::size_t>>& truth);

struct TrialOptions {
    std::size_t trials = 10;
    std::size_t instances = 20;
    double sigma = 0.6;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    SplitSizes splits;
    BlackBoxOptions blackbox;
};

void to_json(nlohmann::json& j, const TrialOptions& o);
void from_json(const nlohmann::json& j, TrialOptions& o);

struct InstanceRecord {
    std::vector<double> location;
    std::vector<std::size_t> top;  // top-ranked interaction, 0-based
    double r_precision = 0.0;
    std::size_t k = 0;
};

struct TrialRecord {
    std::uint64_t seed = 0;
    double blackbox_test_mse = 0.0;
    std::vector<InstanceRecord> instances;
    double mean = 0.0;
};

struct TrialReport {
    SynthId function = SynthId::F1;
    Detector detector = Detector::nid;
    TrialOptions options;
    std::vector<TrialRecord> trials;
    double mean = 0.0;
    double std = 0.0;          // over trial means
    std::string skipped;       // nonempty when the combination is not run
};

/// Per trial: retrains the black box, samples instance locations uniformly on
/// [-1,1]^10, runs madex in continuous mode and scores the full ranking.
/// GradientNID is skipped for F4, whose truth is 3-way.
TrialReport run_detection_trials(SynthId id, Detector detector, const TrialOptions& options = {});

nlohmann::json report_to_json(const TrialReport& report);
std::string report_csv(const TrialReport& report);
std::string report_text(const std::vector<TrialReport>& reports);

struct FidelityOptions {
    PerturbMode mode = PerturbMode::binary;
    bool weighted = true;
    double kernel_width = kDefaultKernelWidth;
    double sigma = 0.6;
    SplitSizes splits;
    NetConfig net = default_net();
    double rel_tol = kThresholdRelTol;
    std::uint64_t seed = 0;

    /// 64-32-16 relu branches with a linear branch, no L1.
    static NetConfig default_net();
};

void to_json(nlohmann::json& j, const FidelityOptions& o);
void from_json(const nlohmann::json& j, FidelityOptions& o);

struct FidelityRow {
    std::size_t k = 0;
    double val_mse = 0.0;
    double test_mse = 0.0;
};

struct FidelityReport {
    std::vector<FidelityRow> rows;  // k = 0..L
    std::size_t L = 0;
    std::optional<FidelityRow> rejected;  // the first k that did not improve
};

/// k = 0 is a (weighted) linear regression on the perturbation data; each
/// increment adds a network over the coordinates of the next interaction in
/// S, summed with the linear part. Stops when validation MSE stops improving.
FidelityReport fidelity_eval(BlackBoxModel& model, const DataInstance& x, const FeatureSchema& schema,
                             const OffStatePolicy& policy, const std::vector<std::vector<std::size_t>>& S,
                             const FidelityOptions& options = {});

nlohmann::json fidelity_to_json(const FidelityReport& report);

}  // namespace madex
