#include "madex/synth.hpp"

#include <cmath>
#include <numeric>

#include "madex/error.hpp"

namespace madex {

const char* to_string(SynthId id) {
    switch (id) {
        case SynthId::F1: return "F1";
        case SynthId::F2: return "F2";
        case SynthId::F3: return "F3";
        case SynthId::F4: return "F4";
    }
    return "?";
}

SynthId synth_from_string(const std::string& s) {
    if (s == "F1") return SynthId::F1;
    if (s == "F2") return SynthId::F2;
    if (s == "F3") return SynthId::F3;
    if (s == "F4") return SynthId::F4;
    throw Error("bench", "unknown synthetic function '" + s + "' (expected F1..F4)");
}

double synth_eval(SynthId id, std::span<const double> x) {
    if (x.size() != kSynthArity)
        throw SchemaError("synthetic functions take 10 inputs, got " + std::to_string(x.size()));
    const std::size_t tail = id == SynthId::F4 ? 3 : 2;
    const double sum = std::accumulate(x.begin() + static_cast<std::ptrdiff_t>(tail), x.end(), 0.0);
    switch (id) {
        case SynthId::F1: return 10.0 * x[0] * x[1] + sum;
        case SynthId::F2: return x[0] * x[1] + sum;
        case SynthId::F3: return std::exp(std::abs(x[0] + x[1])) + sum;
        case SynthId::F4: return 10.0 * x[0] * x[1] * x[2] + sum;
    }
    return 0.0;
}

std::vector<std::vector<std::size_t>> synth_truth(SynthId id) {
    if (id == SynthId::F4) return {{0, 1, 2}};
    return {{0, 1}};
}

std::shared_ptr<BlackBoxModel> make_synth_model(const std::string& name, std::size_t arity) {
    if (name == "additive")
        return std::make_shared<FunctionModel>(name, arity, [](std::span<const double> x) {
            return std::accumulate(x.begin(), x.end(), 0.0);
        });
    if (name == "product") {
        if (arity < 2) throw SchemaError("product model needs at least 2 inputs");
        return std::make_shared<FunctionModel>(name, arity, [](std::span<const double> x) { return x[0] * x[1]; });
    }
    const SynthId id = synth_from_string(name);
    if (arity != kSynthArity) throw SchemaError(name + " has arity 10");
    return std::make_shared<FunctionModel>(name, arity, [id](std::span<const double> x) { return synth_eval(id, x); });
}

NetModel::NetModel(std::string name, SurrogateNet net) : name_(std::move(name)), net_(std::move(net)) {}

std::vector<double> NetModel::evaluate(const Matrix& inputs) { return net_.forward(inputs); }

}  // namespace madex
