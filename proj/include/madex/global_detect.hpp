#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "madex/detect.hpp"

namespace madex {

struct GlobalEntry {
    std::vector<std::size_t> features;  // 0-based, sorted
    std::size_t count = 0;
};

/// Occurrence counts of locally detected interactions over a batch.
struct GlobalSummary {
    std::vector<GlobalEntry> entries;  // descending count, ties lexicographic
    std::size_t batch_size = 0;
    std::size_t effective_batch = 0;  // instances that completed
    std::string model_name;
    std::vector<std::string> failures;

    /// order -> number of distinct interactions of that order
    std::map<std::size_t, std::size_t> distinct_by_order() const;
    /// order -> total occurrences of interactions of that order
    std::map<std::size_t, std::size_t> occurrences_by_order() const;
};

/// Counting step: every interaction in each per-instance set adds one.
GlobalSummary count_interactions(const std::vector<std::vector<std::vector<std::size_t>>>& per_instance);

/// Runs madex on every instance (one model handle per worker), skipping
/// instances that fail. Each instance's seed derives from the root seed and the
/// instance contents, so batch order does not matter.
GlobalSummary detect_global(const ModelFactory& models, const std::vector<DataInstance>& batch,
                            const FeatureSchema& schema, const OffStatePolicy& policy, const MadexConfig& config,
                            std::size_t jobs = 1);

std::uint64_t instance_seed(std::uint64_t root, const DataInstance& x);

enum class PruneRule { drop_subsets, drop_supersets };

/// Scans in rank order, dropping an entry when it is a proper subset (or
/// superset, per rule) of any other entry in the list, until K are kept.
GlobalSummary prune_subsets(const GlobalSummary& summary, std::size_t K, PruneRule rule = PruneRule::drop_subsets);

nlohmann::json summary_to_json(const GlobalSummary& summary, const FeatureSchema& schema);
GlobalSummary summary_from_json(const nlohmann::json& j);

/// Rank / count / interaction table in plain text.
std::string summary_report(const GlobalSummary& summary, const FeatureSchema& schema, std::size_t top = 10);

/// rank,count,order CSV for count-versus-rank plots.
std::string summary_rank_csv(const GlobalSummary& summary);

}  // namespace madex
