#include "madex/crossing.hpp"

#include <algorithm>
#include <cmath>

#include "madex/error.hpp"
#include "madex/parallel.hpp"

namespace madex {

using json = nlohmann::json;

std::size_t BucketSpec::bucket(double value) const {
    return static_cast<std::size_t>(std::upper_bound(boundaries.begin(), boundaries.end(), value) -
                                    boundaries.begin());
}

BucketSpec bucketize_dense(std::span<const double> values, std::size_t max_bins, std::string field) {
    if (values.empty()) throw Error("cross", "cannot bucketize an empty column");
    if (max_bins == 0) throw Error("cross", "max_bins must be positive");
    std::vector<double> sorted(values.begin(), values.end());
    for (double v : sorted)
        if (!std::isfinite(v)) throw Error("cross", "non-finite value in dense column '" + field + "'");
    std::sort(sorted.begin(), sorted.end());
    BucketSpec spec;
    spec.field = std::move(field);
    spec.max_bins = max_bins;
    const std::size_t n = sorted.size();
    for (std::size_t q = 1; q < max_bins; ++q) {
        const double cut = sorted[q * n / max_bins];
        // Merge duplicate quantiles; a cut at the minimum would leave bucket 0 empty.
        if (cut <= sorted.front()) continue;
        if (!spec.boundaries.empty() && cut <= spec.boundaries.back()) continue;
        spec.boundaries.push_back(cut);
    }
    return spec;
}

std::string CrossFeatureSpec::column_name() const {
    std::string name = "cross";
    for (const auto& f : fields) name += "__" + f;
    return name;
}

void CrossFeatureSpec::index() {
    ids_.clear();
    for (const auto& e : vocabulary) ids_.emplace(e.key, e.id);
}

std::uint64_t CrossFeatureSpec::lookup(const CrossKey& key) const {
    auto it = ids_.find(key);
    return it == ids_.end() ? 0 : it->second;
}

std::map<std::string, BucketSpec> fit_buckets(const Table& table, const FeatureSchema& schema, std::size_t max_bins) {
    std::map<std::string, BucketSpec> out;
    for (const Field& field : schema.fields) {
        if (field.kind != FieldKind::dense) continue;
        const std::size_t col = table.column(field.name);
        std::vector<double> values;
        for (const auto& row : table.rows)
            if (!row[col].empty()) values.push_back(parse_double(row[col]));
        if (values.empty()) continue;
        out.emplace(field.name, bucketize_dense(values, max_bins, field.name));
    }
    return out;
}

std::optional<CrossKey> cross_key(const Table& table, std::size_t row, const std::vector<std::size_t>& columns,
                                  const std::vector<std::optional<BucketSpec>>& buckets) {
    CrossKey key;
    key.reserve(columns.size());
    for (std::size_t i = 0; i < columns.size(); ++i) {
        const std::string& cell = table.rows[row][columns[i]];
        if (cell.empty()) return std::nullopt;
        key.push_back(buckets[i] ? std::to_string(buckets[i]->bucket(parse_double(cell))) : cell);
    }
    return key;
}

CrossFeatureSpec build_cross_vocab(const Table& batch, const FeatureSchema& schema,
                                   const std::vector<std::string>& fields, std::size_t threshold,
                                   const std::map<std::string, BucketSpec>& buckets, std::size_t jobs) {
    if (fields.size() < 2) throw Error("cross", "a cross feature needs at least two fields");
    CrossFeatureSpec spec;
    spec.fields = fields;
    spec.threshold = threshold;
    spec.source_rows = batch.rows.size();
    std::vector<std::size_t> columns;
    for (const auto& name : fields) {
        const Field& field = schema.fields[schema.index_of(name)];
        columns.push_back(batch.column(name));
        if (field.kind == FieldKind::dense) {
            auto it = buckets.find(name);
            if (it == buckets.end()) throw Error("cross", "dense field '" + name + "' has no bucket spec");
            spec.buckets.emplace_back(it->second);
        } else {
            spec.buckets.emplace_back(std::nullopt);
        }
    }

    // Sharded counting, merged in shard order.
    const std::size_t rows = batch.rows.size();
    const std::size_t shards = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(rows, 1));
    std::vector<std::map<CrossKey, std::size_t>> partial(shards);
    std::vector<std::vector<std::map<std::string, bool>>> seen(shards, std::vector<std::map<std::string, bool>>(fields.size()));
    std::vector<std::size_t> missing(shards, 0);
    parallel_for(shards, jobs, [&](std::size_t, std::size_t s) {
        const std::size_t begin = s * rows / shards, end = (s + 1) * rows / shards;
        for (std::size_t r = begin; r < end; ++r) {
            auto key = cross_key(batch, r, columns, spec.buckets);
            if (!key) {
                ++missing[s];
                continue;
            }
            for (std::size_t f = 0; f < key->size(); ++f) seen[s][f][(*key)[f]] = true;
            ++partial[s][*key];
        }
    });
    std::map<CrossKey, std::size_t> counts;
    std::vector<std::map<std::string, bool>> distinct(fields.size());
    for (std::size_t s = 0; s < shards; ++s) {
        for (auto& [key, c] : partial[s]) counts[key] += c;
        for (std::size_t f = 0; f < fields.size(); ++f) distinct[f].insert(seen[s][f].begin(), seen[s][f].end());
        spec.source_missing += missing[s];
    }
    for (std::size_t f = 0; f < fields.size(); ++f) spec.observed_cardinality.push_back(distinct[f].size());

    for (auto& [key, c] : counts)
        if (c > threshold) spec.vocabulary.push_back({key, 0, c});
    std::sort(spec.vocabulary.begin(), spec.vocabulary.end(), [](const CrossVocabEntry& a, const CrossVocabEntry& b) {
        if (a.count != b.count) return a.count > b.count;
        return a.key < b.key;
    });
    for (std::size_t i = 0; i < spec.vocabulary.size(); ++i) spec.vocabulary[i].id = i + 1;
    spec.index();
    return spec;
}

CrossApplyResult apply_crosses(const Table& table, std::span<const CrossFeatureSpec> specs, std::size_t jobs) {
    CrossApplyResult result;
    result.table = table;
    result.missing.assign(specs.size(), 0);
    for (std::size_t s = 0; s < specs.size(); ++s) {
        const CrossFeatureSpec& spec = specs[s];
        std::vector<std::size_t> columns;
        for (const auto& name : spec.fields) columns.push_back(table.column(name));
        result.table.header.push_back(spec.column_name());
        result.cardinality.push_back(spec.cardinality());
        std::vector<std::string> values(table.rows.size());
        std::vector<char> missing(table.rows.size(), 0);
        parallel_for(table.rows.size(), jobs, [&](std::size_t, std::size_t r) {
            auto key = cross_key(table, r, columns, spec.buckets);
            missing[r] = key ? 0 : 1;
            values[r] = std::to_string(key ? spec.lookup(*key) : 0);
        });
        for (std::size_t r = 0; r < table.rows.size(); ++r) {
            result.table.rows[r].push_back(std::move(values[r]));
            result.missing[s] += static_cast<std::size_t>(missing[r]);
        }
    }
    return result;
}

std::vector<CardinalityRow> cardinality_report(std::span<const CrossFeatureSpec> specs) {
    std::vector<CardinalityRow> rows;
    for (const auto& spec : specs) {
        CardinalityRow row;
        row.column = spec.column_name();
        row.theoretical = 1;
        for (std::size_t c : spec.observed_cardinality) row.theoretical *= static_cast<long double>(c);
        row.vocabulary = spec.vocabulary.size();
        row.reduction = row.theoretical > 0 ? static_cast<double>(row.vocabulary / row.theoretical) : 0.0;
        rows.push_back(row);
    }
    return rows;
}

void to_json(json& j, const BucketSpec& spec) {
    j = json{{"field", spec.field}, {"max_bins", spec.max_bins}, {"boundaries", spec.boundaries}};
}

void from_json(const json& j, BucketSpec& spec) {
    spec.field = j.at("field");
    spec.max_bins = j.value("max_bins", kDefaultMaxBins);
    spec.boundaries = j.at("boundaries").get<std::vector<double>>();
}

void to_json(json& j, const CrossFeatureSpec& spec) {
    json buckets = json::object();
    for (std::size_t f = 0; f < spec.fields.size(); ++f)
        if (spec.buckets[f]) buckets[spec.fields[f]] = *spec.buckets[f];
    json vocab = json::array();
    for (const auto& e : spec.vocabulary) vocab.push_back({e.key, e.id, e.count});
    j = json{{"interaction", spec.fields},
             {"column", spec.column_name()},
             {"T", spec.threshold},
             {"source_rows", spec.source_rows},
             {"source_missing", spec.source_missing},
             {"observed_cardinality", spec.observed_cardinality},
             {"buckets", buckets},
             {"vocabulary", vocab}};
}

void from_json(const json& j, CrossFeatureSpec& spec) {
    spec = CrossFeatureSpec{};
    spec.fields = j.at("interaction").get<std::vector<std::string>>();
    spec.threshold = j.at("T");
    spec.source_rows = j.value("source_rows", std::size_t{0});
    spec.source_missing = j.value("source_missing", std::size_t{0});
    spec.observed_cardinality = j.value("observed_cardinality", std::vector<std::size_t>{});
    const json buckets = j.value("buckets", json::object());
    for (const auto& f : spec.fields) {
        if (buckets.contains(f))
            spec.buckets.emplace_back(buckets[f].get<BucketSpec>());
        else
            spec.buckets.emplace_back(std::nullopt);
    }
    for (const auto& e : j.at("vocabulary"))
        spec.vocabulary.push_back({e[0].get<CrossKey>(), e[1].get<std::uint64_t>(), e[2].get<std::size_t>()});
    spec.index();
}

}  // namespace madex
