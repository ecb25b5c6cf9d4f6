#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "madex/blackbox.hpp"
#include "madex/csv.hpp"

namespace madex {

inline constexpr std::size_t kDefaultMaxBins = 100;
inline constexpr std::size_t kDefaultCrossThreshold = 100;

/// Quantile cut points for a dense field. bucket(v) is the number of cut
/// points <= v, so values outside the fitted range land in the edge buckets.
struct BucketSpec {
    std::string field;
    std::vector<double> boundaries;  // strictly increasing, at most max_bins - 1
    std::size_t max_bins = kDefaultMaxBins;

    std::size_t bucket_count() const { return boundaries.size() + 1; }
    std::size_t bucket(double value) const;
};

BucketSpec bucketize_dense(std::span<const double> values, std::size_t max_bins = kDefaultMaxBins,
                           std::string field = {});

/// One combination of per-field tokens (category strings, or bucket IDs for
/// dense fields).
using CrossKey = std::vector<std::string>;

struct CrossVocabEntry {
    CrossKey key;
    std::uint64_t id = 0;
    std::size_t count = 0;
};

/// Truncated cross feature: combinations seen more than `threshold` times in
/// the source batch get IDs 1..|vocab| (descending count, ties by key); every
/// other combination maps to the default ID 0.
struct CrossFeatureSpec {
    std::vector<std::string> fields;
    std::vector<std::optional<BucketSpec>> buckets;  // per field, dense only
    std::vector<std::size_t> observed_cardinality;   // per field, in the source batch
    std::size_t threshold = kDefaultCrossThreshold;
    std::size_t source_rows = 0;
    std::size_t source_missing = 0;  // source rows with a missing field value
    std::vector<CrossVocabEntry> vocabulary;

    std::string column_name() const;
    std::uint64_t lookup(const CrossKey& key) const;
    std::size_t cardinality() const { return vocabulary.size() + 1; }

private:
    friend CrossFeatureSpec build_cross_vocab(const Table&, const FeatureSchema&, const std::vector<std::string>&,
                                              std::size_t, const std::map<std::string, BucketSpec>&, std::size_t);
    friend void from_json(const nlohmann::json& j, CrossFeatureSpec& spec);
    void index();
    std::map<CrossKey, std::uint64_t> ids_;
};

/// Fits a BucketSpec for every dense schema field present in the table.
std::map<std::string, BucketSpec> fit_buckets(const Table& table, const FeatureSchema& schema,
                                              std::size_t max_bins = kDefaultMaxBins);

/// Key of one row for the spec's fields; nullopt if any value is missing.
std::optional<CrossKey> cross_key(const Table& table, std::size_t row, const std::vector<std::size_t>& columns,
                                  const std::vector<std::optional<BucketSpec>>& buckets);

CrossFeatureSpec build_cross_vocab(const Table& batch, const FeatureSchema& schema,
                                   const std::vector<std::string>& fields, std::size_t threshold,
                                   const std::map<std::string, BucketSpec>& buckets, std::size_t jobs = 1);

struct CrossApplyResult {
    Table table;                        // original columns + one per spec
    std::vector<std::size_t> missing;   // per spec: rows defaulted for a missing value
    std::vector<std::size_t> cardinality;
};

CrossApplyResult apply_crosses(const Table& table, std::span<const CrossFeatureSpec> specs, std::size_t jobs = 1);

struct CardinalityRow {
    std::string column;
    long double theoretical = 0;  // product of observed field cardinalities
    std::size_t vocabulary = 0;   // retained combinations (excludes the default ID)
    double reduction = 0.0;       // vocabulary / theoretical
};

std::vector<CardinalityRow> cardinality_report(std::span<const CrossFeatureSpec> specs);

void to_json(nlohmann::json& j, const CrossFeatureSpec& spec);
void from_json(const nlohmann::json& j, CrossFeatureSpec& spec);
void to_json(nlohmann::json& j, const BucketSpec& spec);
void from_json(const nlohmann::json& j, BucketSpec& spec);

}  // namespace madex
