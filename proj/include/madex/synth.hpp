#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "madex/blackbox.hpp"
#include "madex/neuralnet.hpp"

namespace madex {

enum class SynthId { F1, F2, F3, F4 };

inline constexpr std::size_t kSynthArity = 10;

const char* to_string(SynthId id);
SynthId synth_from_string(const std::string& s);

///   F1 = 10 x1 x2 + sum_{i>=3} x_i
///   F2 = x1 x2 + sum_{i>=3} x_i
///   F3 = exp(|x1 + x2|) + sum_{i>=3} x_i
///   F4 = 10 x1 x2 x3 + sum_{i>=4} x_i
double synth_eval(SynthId id, std::span<const double> x);

/// 0-based ground-truth interactions: {0,1} for F1-F3, {0,1,2} for F4.
std::vector<std::vector<std::size_t>> synth_truth(SynthId id);

/// Closed-form in-process models by name: F1..F4, "additive" (sum x_i),
/// "product" (x1 x2), each over `arity` inputs (F1..F4 require 10).
std::shared_ptr<BlackBoxModel> make_synth_model(const std::string& name, std::size_t arity = kSynthArity);

/// A trained network exposed as a black box.
class NetModel final : public BlackBoxModel {
public:
    NetModel(std::string name, SurrogateNet net);

    std::size_t arity() const override { return net_.input_dim; }
    const std::string& name() const override { return name_; }
    bool concurrent_safe() const override { return true; }
    const SurrogateNet& net() const { return net_; }

protected:
    std::vector<double> evaluate(const Matrix& inputs) override;

private:
    std::string name_;
    SurrogateNet net_;
};

}  // namespace madex
