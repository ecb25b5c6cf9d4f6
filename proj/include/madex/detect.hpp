#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "madex/blackbox.hpp"
#include "madex/neuralnet.hpp"
#include "madex/perturb.hpp"

namespace madex {

enum class Detector { nid, gradnid };
const char* to_string(Detector d);
Detector detector_from_string(const std::string& s);

/// A feature subset (sorted, distinct, size >= 2, 0-based) with its strength.
struct Interaction {
    std::vector<std::size_t> features;
    double strength = 0.0;
    Detector detector = Detector::nid;
};

/// Descending strength; equal strengths ordered lexicographically by features.
void sort_interactions(std::vector<Interaction>& items);

struct InteractionRanking {
    std::vector<Interaction> items;
    std::size_t tests = 0;  // candidate strength evaluations performed

    bool empty() const { return items.empty(); }
    std::vector<std::vector<std::size_t>> feature_sets(std::size_t limit) const;
};

/// Neural Interaction Detection on the first MLP branch. For every first-layer
/// unit j the features are sorted by |w_ji|; each top-m prefix (m = 2..d) is a
/// candidate worth z_j * min_{i in prefix} |w_ji|, where z_j is the j-th entry
/// of |W_out| ... |W_2|. Candidate scores are summed over units.
InteractionRanking nid_rank(const SurrogateNet& net);

/// Unit influence vector z used by nid_rank.
std::vector<double> nid_unit_influence(const MlpBranch& branch);

/// Squared mixed partial derivatives of g at the probe for every index set of
/// the given order (2 exact via the Hessian, 3 via central differences of the
/// Hessian). Orders above 3 are refused.
InteractionRanking gradient_nid(const SurrogateNet& net, std::span<const double> probe, std::size_t order = 2);

inline constexpr double kThresholdRelTol = 1e-3;

struct KSelection {
    std::size_t k = 0;
    std::vector<Interaction> kept;
    std::vector<double> val_mse;  // entry i: linear model with the top-i products
};

/// Grows k while adding the next product term to the linear model improves
/// validation MSE by more than rel_tol. MSE values below 1e-12 * Var(y_train)
/// count as a perfect fit that cannot improve further.
KSelection select_k(const InteractionRanking& ranking, const PerturbationDataset& data,
                    double rel_tol = kThresholdRelTol);

struct MadexConfig {
    Detector detector = Detector::gradnid;
    std::size_t order = 2;  // GradientNID order
    PerturbMode mode = PerturbMode::binary;
    double sigma = 0.6;               // continuous mode
    std::vector<Bounds> bounds;       // continuous mode; empty = unbounded
    SplitSizes splits;
    bool lime_weighting = false;
    double kernel_width = kDefaultKernelWidth;
    std::optional<NetConfig> net;     // overrides the detector's default surrogate
    double k_rel_tol = kThresholdRelTol;
    std::uint64_t seed = 0;

    NetConfig surrogate_config() const;
};

void to_json(nlohmann::json& j, const MadexConfig& c);
void from_json(const nlohmann::json& j, MadexConfig& c);

struct MadexResult {
    std::string instance_id;
    Detector detector = Detector::gradnid;
    std::size_t k = 0;
    std::vector<Interaction> interactions;  // S, strongest first
    InteractionRanking ranking;             // before k-thresholding
    std::uint64_t seed = 0;
    std::string config_hash;
    double surrogate_val_mse = 0.0;
};

/// Perturb -> label -> train surrogate -> rank -> select k.
MadexResult madex(BlackBoxModel& model, const DataInstance& x, const FeatureSchema& schema,
                  const OffStatePolicy& policy, const MadexConfig& config);

/// Result document with 1-based feature indices (and field names).
nlohmann::json result_to_json(const MadexResult& result, const FeatureSchema& schema, std::size_t ranking_limit = 10);

std::string config_hash(const nlohmann::json& config);

}  // namespace madex
