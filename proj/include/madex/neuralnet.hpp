#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "madex/matrix.hpp"
#include "madex/perturb.hpp"

namespace madex {

/// `square` (z^2) is smooth and lets tests build networks that realize
/// polynomials exactly; surrogates are trained with relu or softplus.
enum class Activation { relu, softplus, square };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct NetConfig {
    std::vector<std::size_t> hidden{256, 128, 64};
    Activation activation = Activation::relu;
    double l1 = 1e-4;  // applied to first-layer weights only
    double learning_rate = 1e-2;
    std::size_t batch_size = 100;
    std::size_t max_epochs = 200;
    std::size_t patience = 10;
    bool linear_branch = false;
    std::uint64_t seed = 0;

    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;

    /// relu, lambda_1 = 1e-4, no linear branch.
    static NetConfig nid(std::uint64_t seed = 0);
    /// softplus plus a parallel linear branch, no L1.
    static NetConfig gradient_nid(std::uint64_t seed = 0);
};

void to_json(nlohmann::json& j, const NetConfig& c);
void from_json(const nlohmann::json& j, NetConfig& c);

/// weight is fan_in x fan_out, so the first layer holds one row per input
/// feature of its branch.
struct DenseLayer {
    Matrix weight;
    std::vector<double> bias;
};

/// A feed-forward stack reading `features` of the full input. The last layer
/// has a single linear output unit.
struct MlpBranch {
    std::vector<std::size_t> features;
    std::vector<DenseLayer> layers;

    std::size_t first_width() const { return layers.front().weight.cols(); }
    std::size_t hidden_count() const { return layers.size() - 1; }
};

struct LinearBranch {
    std::vector<double> weights;
    double bias = 0.0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // running mean of minibatch data loss
    double val_mse = 0.0;
};

struct TrainingLog {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_mse = 0.0;
    double snapshot_train_mse = 0.0;  // full pass over train split with the returned parameters
    bool trained = false;
};

/// g(x) = sum over branches of mlp_b(x[features_b]) + optional (w . x + b).
/// A standard surrogate has a single branch over every feature.
struct SurrogateNet {
    std::size_t input_dim = 0;
    Activation activation = Activation::relu;
    std::vector<MlpBranch> branches;
    std::optional<LinearBranch> linear;
    NetConfig config;
    TrainingLog log;

    double predict(std::span<const double> x) const;
    /// Batch evaluation; throws on arity mismatch.
    std::vector<double> forward(const Matrix& inputs) const;

    std::size_t parameter_count() const;
    std::vector<double> flat_parameters() const;
    void set_flat_parameters(std::span<const double> values);
};

void to_json(nlohmann::json& j, const SurrogateNet& net);
void from_json(const nlohmann::json& j, SurrogateNet& net);

/// Freshly initialized single-branch network (weights uniform in ±1/sqrt(fan_in), zero
/// biases).
SurrogateNet make_net(const NetConfig& config, std::size_t input_dim);

/// Network with one branch per feature subset, each shaped by config.hidden,
/// plus a linear branch over all inputs when config.linear_branch is set.
SurrogateNet make_additive_net(const NetConfig& config, std::size_t input_dim,
                               std::span<const std::vector<std::size_t>> subsets);

/// Adam on weighted MSE + l1 * sum |first-layer weights|, early stopping on
/// validation MSE. Returns the best-validation snapshot.
SurrogateNet train(const NetConfig& config, const PerturbationDataset& data);

/// Same, starting from an existing network (its structure and parameters).
SurrogateNet train(SurrogateNet initial, const NetConfig& config, const PerturbationDataset& data);

/// Weighted MSE of the net on rows [begin, end).
double evaluate_mse(const SurrogateNet& net, const PerturbationDataset& data, std::size_t begin, std::size_t end);

std::vector<double> input_gradient(const SurrogateNet& net, std::span<const double> x);

/// Exact Hessian of g with respect to the input. Requires smooth activations.
Matrix input_hessian(const SurrogateNet& net, std::span<const double> x);

/// d g(x) / d theta in flat_parameters() order.
std::vector<double> parameter_gradient(const SurrogateNet& net, std::span<const double> x);

/// Smallest |pre-activation| over all hidden units at x; relu gradients are
/// only checkable where this stays well above the finite-difference step.
double min_abs_preactivation(const SurrogateNet& net, std::span<const double> x);

struct GradientCheckResult {
    double max_input_rel_error = 0.0;
    double max_param_rel_error = 0.0;
    double max_rel_error() const { return std::max(max_input_rel_error, max_param_rel_error); }
};

/// Compares analytic input and parameter gradients against central finite
/// differences with step h. Relative error is |a - n| / max(|a|, |n|, 1e-6).
/// Non-smooth nets are refused unless allow_relu is set.
GradientCheckResult gradient_check(const SurrogateNet& net, std::span<const double> probe, double h,
                                   bool allow_relu = false);

// ---------------------------------------------------------------------------
// Linear model with multiplicative terms

inline constexpr double kGlmRidge = 1e-8;

struct GlmResult {
    double intercept = 0.0;
    std::vector<double> linear;    // one per feature
    std::vector<double> products;  // one per supplied interaction
    std::vector<std::vector<std::size_t>> interactions;
    double train_mse = 0.0;
    double val_mse = 0.0;
    double test_mse = 0.0;
    bool rank_deficient = false;

    double predict(std::span<const double> x) const;
};

/// Ridge-stabilized (weighted) least squares on the train split of
/// y ~ b0 + sum b_i x_i + sum g_j prod_{i in I_j} x_i.
GlmResult train_glm_with_products(const PerturbationDataset& data,
                                  std::span<const std::vector<std::size_t>> interactions);

}  // namespace madex
