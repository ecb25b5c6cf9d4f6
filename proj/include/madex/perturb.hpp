#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "madex/blackbox.hpp"
#include "madex/matrix.hpp"

namespace madex {

/// A data instance in raw model coordinates (length p).
struct DataInstance {
    std::string id;
    std::vector<double> values;
};

/// Materialized off-state for one field. `values` holds one entry per raw
/// dimension of the field (the batch mean, the fixed value or the reserved
/// off ID). For resample-other, `alphabet` lists the admissible values and a
/// different one is drawn per perturbed row.
struct FieldOffState {
    OffRule rule = OffRule::fixed_value;
    std::vector<double> values;
    std::vector<double> alphabet;
};

/// Reserved vocabulary ID that adapters read as a zeroed embedding.
inline constexpr double kOffVocabularyId = -1.0;

struct OffStatePolicy {
    std::vector<std::optional<FieldOffState>> fields;  // indexed like schema.fields

    /// Dense fields take the mean of `reference` (>= 100 rows, raw
    /// coordinates); sparse fields use the zero-embedding ID.
    static OffStatePolicy batch_mean(const FeatureSchema& schema, const Matrix& reference);

    /// Dense fields take `value`; sparse fields use the zero-embedding ID.
    static OffStatePolicy fixed(const FeatureSchema& schema, double value);

    std::string describe(const FeatureSchema& schema) const;
};

inline constexpr std::size_t kMinReferenceRows = 100;

enum class PerturbMode { binary, continuous };
const char* to_string(PerturbMode mode);

struct SplitSizes {
    std::size_t train = 5000;
    std::size_t val = 500;
    std::size_t test = 500;
    std::size_t total() const { return train + val + test; }
};

/// Rows are stored train, then validation, then test, contiguously.
struct PerturbationDataset {
    PerturbMode mode = PerturbMode::binary;
    Matrix inputs;                // n x d
    std::vector<double> labels;   // n
    std::vector<double> weights;  // empty, or n positive values
    SplitSizes splits;
    std::uint64_t seed = 0;
    double sigma = 0.0;
    double kernel_width = 0.0;
    std::string policy;

    std::size_t train_begin() const { return 0; }
    std::size_t val_begin() const { return splits.train; }
    std::size_t test_begin() const { return splits.train + splits.val; }
    std::size_t rows() const { return inputs.rows(); }
    bool weighted() const { return !weights.empty(); }
    double weight(std::size_t row) const { return weights.empty() ? 1.0 : weights[row]; }

    /// Throws unless shapes, splits and value domains are consistent.
    void validate() const;
};

/// Binary masks over d fields. Each row zeroes a count drawn uniformly from
/// {0..d} of uniformly chosen fields; row 0 is forced to all ones.
Matrix make_binary_perturbations(std::size_t d, const SplitSizes& splits, std::uint64_t seed);

/// xi: maps a binary mask to model-ready raw coordinates. `rng` is only
/// consulted by resample-other rules.
std::vector<double> map_to_input(std::span<const double> mask, const DataInstance& x, const FeatureSchema& schema,
                                 const OffStatePolicy& policy, std::mt19937_64* rng = nullptr);

struct Bounds {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
};

/// Samples from N(x, sigma^2 I) truncated at distance sigma per coordinate,
/// then clipped to the field bounds.
Matrix make_continuous_perturbations(std::span<const double> x, double sigma, std::span<const Bounds> bounds,
                                     const SplitSizes& splits, std::uint64_t seed);

/// Labels the perturbations with the black box: labels[i] = f(xi(inputs[i]))
/// in binary mode, f(inputs[i]) in continuous mode.
PerturbationDataset label_with_blackbox(BlackBoxModel& model, Matrix inputs, PerturbMode mode,
                                        const DataInstance& x, const FeatureSchema& schema,
                                        const OffStatePolicy& policy, const SplitSizes& splits,
                                        std::uint64_t seed);

inline constexpr double kDefaultKernelWidth = 0.25;

/// exp(-D^2 / width^2) with D the cosine distance between a mask and the
/// all-ones vector. All-zero rows get D = 1.
std::vector<double> kernel_weights(const Matrix& masks, double width = kDefaultKernelWidth);

/// CSV (d input columns + label [+ weight]) plus a JSON manifest next to it.
void save_dataset(const PerturbationDataset& data, const std::filesystem::path& csv_path);
PerturbationDataset load_dataset(const std::filesystem::path& csv_path);

}  // namespace madex
