#include "madex/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "madex/csv.hpp"
#include "madex/error.hpp"

namespace madex {

using json = nlohmann::json;

const char* to_string(PerturbMode mode) { return mode == PerturbMode::binary ? "binary" : "continuous"; }

OffStatePolicy OffStatePolicy::batch_mean(const FeatureSchema& schema, const Matrix& reference) {
    if (reference.rows() < kMinReferenceRows)
        throw SchemaError("batch-mean off-state needs a reference batch of at least " +
                          std::to_string(kMinReferenceRows) + " rows, got " + std::to_string(reference.rows()));
    if (reference.cols() != schema.raw_arity) throw SchemaError("reference batch arity does not match schema");
    std::vector<double> mean(reference.cols(), 0.0);
    for (std::size_t r = 0; r < reference.rows(); ++r)
        for (std::size_t c = 0; c < reference.cols(); ++c) mean[c] += reference(r, c);
    for (double& m : mean) m /= static_cast<double>(reference.rows());

    OffStatePolicy policy;
    for (const Field& field : schema.fields) {
        FieldOffState state;
        if (field.kind == FieldKind::sparse) {
            state.rule = OffRule::zero_embedding;
            state.values.assign(field.dims.size(), kOffVocabularyId);
        } else {
            state.rule = OffRule::batch_mean;
            for (std::size_t dim : field.dims) state.values.push_back(mean[dim]);
        }
        policy.fields.emplace_back(std::move(state));
    }
    return policy;
}

OffStatePolicy OffStatePolicy::fixed(const FeatureSchema& schema, double value) {
    OffStatePolicy policy;
    for (const Field& field : schema.fields) {
        FieldOffState state;
        if (field.kind == FieldKind::sparse) {
            state.rule = OffRule::zero_embedding;
            state.values.assign(field.dims.size(), kOffVocabularyId);
        } else {
            state.rule = OffRule::fixed_value;
            state.values.assign(field.dims.size(), value);
        }
        policy.fields.emplace_back(std::move(state));
    }
    return policy;
}

std::string OffStatePolicy::describe(const FeatureSchema& schema) const {
    std::ostringstream out;
    for (std::size_t f = 0; f < schema.fields.size(); ++f) {
        if (f) out << ';';
        out << schema.fields[f].name << '=';
        if (f >= fields.size() || !fields[f]) {
            out << "none";
            continue;
        }
        out << to_string(fields[f]->rule);
        if (fields[f]->rule != OffRule::resample_other) {
            out << '(';
            for (std::size_t k = 0; k < fields[f]->values.size(); ++k)
                out << (k ? " " : "") << format_double(fields[f]->values[k]);
            out << ')';
        }
    }
    return out.str();
}

void PerturbationDataset::validate() const {
    if (inputs.rows() != splits.total())
        throw Error("perturb", "split sizes do not add up to the row count");
    if (labels.size() != inputs.rows()) throw Error("perturb", "label count does not match row count");
    if (!weights.empty()) {
        if (weights.size() != inputs.rows()) throw Error("perturb", "weight count does not match row count");
        for (double w : weights)
            if (!(w > 0.0) || !std::isfinite(w)) throw Error("perturb", "sample weights must be positive");
    }
    if (mode == PerturbMode::binary) {
        for (double v : inputs.values())
            if (v != 0.0 && v != 1.0) throw Error("perturb", "binary dataset holds a value outside {0,1}");
        bool has_ones = false;
        for (std::size_t r = 0; r < splits.train && !has_ones; ++r) {
            auto row = inputs.row(r);
            has_ones = std::all_of(row.begin(), row.end(), [](double v) { return v == 1.0; });
        }
        if (!has_ones) throw Error("perturb", "binary train split lacks the all-ones row");
    }
}

Matrix make_binary_perturbations(std::size_t d, const SplitSizes& splits, std::uint64_t seed) {
    if (d == 0) throw SchemaError("empty schema: cannot perturb zero fields");
    if (splits.train == 0 || splits.val == 0 || splits.test == 0)
        throw Error("perturb", "every split needs at least one row");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> count_dist(0, d);
    Matrix masks(splits.total(), d, 1.0);
    std::vector<std::size_t> order(d);
    for (std::size_t r = 1; r < masks.rows(); ++r) {
        const std::size_t zeros = count_dist(rng);
        std::iota(order.begin(), order.end(), 0);
        // Partial Fisher-Yates: the first `zeros` slots are a uniform subset.
        for (std::size_t i = 0; i < zeros; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, d - 1);
            std::swap(order[i], order[pick(rng)]);
            masks(r, order[i]) = 0.0;
        }
    }
    return masks;
}

std::vector<double> map_to_input(std::span<const double> mask, const DataInstance& x, const FeatureSchema& schema,
                                 const OffStatePolicy& policy, std::mt19937_64* rng) {
    if (mask.size() != schema.fields.size())
        throw SchemaError("mask length " + std::to_string(mask.size()) + " does not match field count " +
                          std::to_string(schema.fields.size()));
    if (x.values.size() != schema.raw_arity) throw SchemaError("instance arity does not match schema");
    std::vector<double> out = x.values;
    for (std::size_t f = 0; f < mask.size(); ++f) {
        if (mask[f] >= 0.5) continue;
        const Field& field = schema.fields[f];
        if (f >= policy.fields.size() || !policy.fields[f])
            throw SchemaError("no off-state rule for switched-off field '" + field.name + "'");
        const FieldOffState& off = *policy.fields[f];
        for (std::size_t k = 0; k < field.dims.size(); ++k) {
            const std::size_t dim = field.dims[k];
            if (off.rule == OffRule::resample_other) {
                std::vector<double> others;
                for (double a : off.alphabet)
                    if (a != x.values[dim]) others.push_back(a);
                if (others.empty()) throw SchemaError("resample-other alphabet for '" + field.name + "' has no alternative");
                if (rng == nullptr) throw SchemaError("resample-other rule needs a random source");
                std::uniform_int_distribution<std::size_t> pick(0, others.size() - 1);
                out[dim] = others[pick(*rng)];
            } else {
                if (k >= off.values.size()) throw SchemaError("off-state for '" + field.name + "' is missing values");
                out[dim] = off.values[k];
            }
        }
    }
    return out;
}

Matrix make_continuous_perturbations(std::span<const double> x, double sigma, std::span<const Bounds> bounds,
                                     const SplitSizes& splits, std::uint64_t seed) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error("perturb", "sigma must be positive");
    if (bounds.size() != x.size()) throw SchemaError("bounds length does not match instance length");
    if (x.empty()) throw SchemaError("empty schema: cannot perturb zero fields");
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(bounds[i].lo < bounds[i].hi)) throw Error("perturb", "degenerate bounds for coordinate " + std::to_string(i));
        if (x[i] < bounds[i].lo || x[i] > bounds[i].hi)
            throw Error("perturb", "instance coordinate " + std::to_string(i) + " lies outside its bounds");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    Matrix out(splits.total(), x.size());
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = 0; c < x.size(); ++c) {
            double z;
            do {
                z = unit(rng);
            } while (std::abs(z) > 1.0);
            out(r, c) = std::clamp(x[c] + sigma * z, bounds[c].lo, bounds[c].hi);
        }
    }
    return out;
}

PerturbationDataset label_with_blackbox(BlackBoxModel& model, Matrix inputs, PerturbMode mode,
                                        const DataInstance& x, const FeatureSchema& schema,
                                        const OffStatePolicy& policy, const SplitSizes& splits,
                                        std::uint64_t seed) {
    if (inputs.rows() != splits.total()) throw Error("perturb", "split sizes do not add up to the row count");
    Matrix raw;
    if (mode == PerturbMode::binary) {
        if (schema.raw_arity != model.arity())
            throw SchemaError("schema arity " + std::to_string(schema.raw_arity) + " does not match model arity " +
                              std::to_string(model.arity()));
        std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
        raw = Matrix(inputs.rows(), schema.raw_arity);
        for (std::size_t r = 0; r < inputs.rows(); ++r) {
            auto mapped = map_to_input(inputs.row(r), x, schema, policy, &rng);
            std::copy(mapped.begin(), mapped.end(), raw.row(r).begin());
        }
    } else {
        if (inputs.cols() != model.arity())
            throw SchemaError("continuous perturbations have arity " + std::to_string(inputs.cols()) +
                              " but the model expects " + std::to_string(model.arity()));
    }
    PerturbationDataset data;
    data.mode = mode;
    data.labels = model.predict_batch(mode == PerturbMode::binary ? raw : inputs);
    data.inputs = std::move(inputs);
    data.splits = splits;
    data.seed = seed;
    if (mode == PerturbMode::binary) data.policy = policy.describe(schema);
    return data;
}

std::vector<double> kernel_weights(const Matrix& masks, double width) {
    if (!(width > 0.0)) throw Error("perturb", "kernel width must be positive");
    std::vector<double> weights(masks.rows());
    const double root_d = std::sqrt(static_cast<double>(masks.cols()));
    for (std::size_t r = 0; r < masks.rows(); ++r) {
        double dot = 0.0, norm2 = 0.0;
        for (double v : masks.row(r)) {
            dot += v;
            norm2 += v * v;
        }
        const double distance = norm2 > 0.0 ? 1.0 - dot / (std::sqrt(norm2) * root_d) : 1.0;
        weights[r] = std::exp(-(distance * distance) / (width * width));
    }
    return weights;
}

namespace {

std::filesystem::path manifest_path(const std::filesystem::path& csv_path) {
    auto p = csv_path;
    p.replace_extension(".manifest.json");
    return p;
}

}  // namespace

void save_dataset(const PerturbationDataset& data, const std::filesystem::path& csv_path) {
    Table table;
    for (std::size_t c = 0; c < data.inputs.cols(); ++c) table.header.push_back("x" + std::to_string(c + 1));
    table.header.push_back("label");
    if (data.weighted()) table.header.push_back("weight");
    for (std::size_t r = 0; r < data.rows(); ++r) {
        std::vector<std::string> cells;
        for (double v : data.inputs.row(r)) cells.push_back(format_double(v));
        cells.push_back(format_double(data.labels[r]));
        if (data.weighted()) cells.push_back(format_double(data.weights[r]));
        table.rows.push_back(std::move(cells));
    }
    write_csv(csv_path, table);

    json manifest{{"mode", to_string(data.mode)},
                  {"seed", data.seed},
                  {"splits", {{"train", data.splits.train}, {"val", data.splits.val}, {"test", data.splits.test}}},
                  {"policy", data.policy},
                  {"sigma", data.sigma},
                  {"kernel_width", data.kernel_width},
                  {"weighted", data.weighted()}};
    std::ofstream(manifest_path(csv_path), std::ios::binary) << manifest.dump(2) << '\n';
}

PerturbationDataset load_dataset(const std::filesystem::path& csv_path) {
    std::ifstream in(manifest_path(csv_path));
    if (!in) throw Error("io", "missing manifest for " + csv_path.string());
    const json manifest = json::parse(in);
    const Table table = read_csv(csv_path);

    PerturbationDataset data;
    data.mode = manifest.at("mode") == "binary" ? PerturbMode::binary : PerturbMode::continuous;
    data.seed = manifest.at("seed").get<std::uint64_t>();
    data.splits = {manifest["splits"]["train"], manifest["splits"]["val"], manifest["splits"]["test"]};
    data.policy = manifest.value("policy", "");
    data.sigma = manifest.value("sigma", 0.0);
    data.kernel_width = manifest.value("kernel_width", 0.0);
    const bool weighted = manifest.value("weighted", false);
    const std::size_t d = table.header.size() - (weighted ? 2 : 1);
    data.inputs = Matrix(table.rows.size(), d);
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        for (std::size_t c = 0; c < d; ++c) data.inputs(r, c) = parse_double(table.rows[r][c]);
        data.labels.push_back(parse_double(table.rows[r][d]));
        if (weighted) data.weights.push_back(parse_double(table.rows[r][d + 1]));
    }
    data.validate();
    return data;
}

}  // namespace madex
