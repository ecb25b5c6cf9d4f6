#include "madex/global_detect.hpp"

#include <algorithm>
#include <iomanip>
#include <mutex>
#include <sstream>

#include "madex/error.hpp"
#include "madex/hash.hpp"
#include "madex/log.hpp"
#include "madex/parallel.hpp"

namespace madex {

using json = nlohmann::json;

namespace {

void sort_entries(std::vector<GlobalEntry>& entries) {
    std::sort(entries.begin(), entries.end(), [](const GlobalEntry& a, const GlobalEntry& b) {
        if (a.count != b.count) return a.count > b.count;
        return a.features < b.features;
    });
}

bool proper_subset(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    return a.size() < b.size() && std::includes(b.begin(), b.end(), a.begin(), a.end());
}

std::string names_of(const std::vector<std::size_t>& features, const FeatureSchema& schema) {
    std::string out = "{";
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (i) out += ", ";
        out += features[i] < schema.fields.size() ? schema.fields[features[i]].name : std::to_string(features[i] + 1);
    }
    return out + "}";
}

}  // namespace

std::map<std::size_t, std::size_t> GlobalSummary::distinct_by_order() const {
    std::map<std::size_t, std::size_t> hist;
    for (const auto& e : entries) ++hist[e.features.size()];
    return hist;
}

std::map<std::size_t, std::size_t> GlobalSummary::occurrences_by_order() const {
    std::map<std::size_t, std::size_t> hist;
    for (const auto& e : entries) hist[e.features.size()] += e.count;
    return hist;
}

GlobalSummary count_interactions(const std::vector<std::vector<std::vector<std::size_t>>>& per_instance) {
    std::map<std::vector<std::size_t>, std::size_t> counts;
    for (const auto& set : per_instance) {
        // An interaction counts once per instance even if listed twice.
        std::vector<std::vector<std::size_t>> seen;
        for (auto features : set) {
            std::sort(features.begin(), features.end());
            if (std::find(seen.begin(), seen.end(), features) != seen.end()) continue;
            seen.push_back(features);
            ++counts[features];
        }
    }
    GlobalSummary summary;
    for (auto& [features, count] : counts) summary.entries.push_back({features, count});
    sort_entries(summary.entries);
    summary.batch_size = per_instance.size();
    summary.effective_batch = per_instance.size();
    return summary;
}

std::uint64_t instance_seed(std::uint64_t root, const DataInstance& x) {
    return mix_seed(root, fnv1a(x.values, fnv1a(x.id)));
}

GlobalSummary detect_global(const ModelFactory& models, const std::vector<DataInstance>& batch,
                            const FeatureSchema& schema, const OffStatePolicy& policy, const MadexConfig& config,
                            std::size_t jobs) {
    if (batch.empty()) throw Error("global", "batch is empty");
    jobs = std::clamp<std::size_t>(jobs, 1, batch.size());
    std::vector<std::shared_ptr<BlackBoxModel>> handles(jobs);
    std::vector<std::optional<std::vector<std::vector<std::size_t>>>> found(batch.size());
    std::vector<std::string> errors(batch.size());
    std::mutex factory_mutex;

    parallel_for(batch.size(), jobs, [&](std::size_t worker, std::size_t i) {
        try {
            if (!handles[worker]) {
                std::lock_guard lock(factory_mutex);
                handles[worker] = models();
            }
            MadexConfig local = config;
            local.seed = instance_seed(config.seed, batch[i]);
            const MadexResult result = madex(*handles[worker], batch[i], schema, policy, local);
            std::vector<std::vector<std::size_t>> sets;
            for (const auto& inter : result.interactions) sets.push_back(inter.features);
            found[i] = std::move(sets);
            spdlog::info("instance {} ({}): k={}", i, batch[i].id, result.k);
        } catch (const std::exception& e) {
            errors[i] = e.what();
            spdlog::error("instance {} ({}) failed: {}", i, batch[i].id, e.what());
        }
    });

    std::vector<std::vector<std::vector<std::size_t>>> completed;
    GlobalSummary failures_only;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (found[i])
            completed.push_back(std::move(*found[i]));
        else
            failures_only.failures.push_back((batch[i].id.empty() ? std::to_string(i) : batch[i].id) + ": " + errors[i]);
    }
    GlobalSummary summary = count_interactions(completed);
    summary.batch_size = batch.size();
    summary.effective_batch = completed.size();
    summary.failures = std::move(failures_only.failures);
    if (handles.front()) summary.model_name = handles.front()->name();
    return summary;
}

GlobalSummary prune_subsets(const GlobalSummary& summary, std::size_t K, PruneRule rule) {
    if (K == 0) throw Error("global", "K must be at least 1");
    GlobalSummary out = summary;
    out.entries.clear();
    const auto& all = summary.entries;
    for (std::size_t i = 0; i < all.size() && out.entries.size() < K; ++i) {
        bool drop = false;
        for (std::size_t j = 0; j < all.size() && !drop; ++j) {
            if (i == j) continue;
            drop = rule == PruneRule::drop_subsets ? proper_subset(all[i].features, all[j].features)
                                                   : proper_subset(all[j].features, all[i].features);
        }
        if (!drop) out.entries.push_back(all[i]);
    }
    return out;
}

json summary_to_json(const GlobalSummary& summary, const FeatureSchema& schema) {
    json entries = json::array();
    for (std::size_t r = 0; r < summary.entries.size(); ++r) {
        const auto& e = summary.entries[r];
        std::vector<std::size_t> one_based;
        std::vector<std::string> names;
        for (std::size_t f : e.features) {
            one_based.push_back(f + 1);
            names.push_back(f < schema.fields.size() ? schema.fields[f].name : std::to_string(f + 1));
        }
        entries.push_back({{"rank", r + 1},
                           {"features", one_based},
                           {"names", names},
                           {"count", e.count},
                           {"order", e.features.size()}});
    }
    json by_order = json::object();
    for (auto [order, n] : summary.distinct_by_order()) by_order[std::to_string(order)] = n;
    json occ = json::object();
    for (auto [order, n] : summary.occurrences_by_order()) occ[std::to_string(order)] = n;
    return json{{"entries", entries},
                {"batch_size", summary.batch_size},
                {"effective_batch", summary.effective_batch},
                {"model", summary.model_name},
                {"distinct_by_order", by_order},
                {"occurrences_by_order", occ},
                {"failures", summary.failures}};
}

GlobalSummary summary_from_json(const json& j) {
    GlobalSummary summary;
    for (const auto& e : j.at("entries")) {
        GlobalEntry entry;
        for (std::size_t f : e.at("features").get<std::vector<std::size_t>>()) {
            if (f == 0) throw Error("global", "feature indices in summaries are 1-based");
            entry.features.push_back(f - 1);
        }
        std::sort(entry.features.begin(), entry.features.end());
        entry.count = e.value("count", std::size_t{1});
        summary.entries.push_back(std::move(entry));
    }
    summary.batch_size = j.value("batch_size", std::size_t{0});
    summary.effective_batch = j.value("effective_batch", summary.batch_size);
    summary.model_name = j.value("model", std::string());
    return summary;
}

std::string summary_report(const GlobalSummary& summary, const FeatureSchema& schema, std::size_t top) {
    std::ostringstream out;
    out << "Global interactions (" << summary.effective_batch << " of " << summary.batch_size
        << " instances explained";
    if (!summary.model_name.empty()) out << ", model " << summary.model_name;
    out << ")\n\n";
    out << std::left << std::setw(6) << "Rank" << std::setw(8) << "Count" << "Interaction\n";
    for (std::size_t r = 0; r < std::min(top, summary.entries.size()); ++r)
        out << std::left << std::setw(6) << r + 1 << std::setw(8) << summary.entries[r].count
            << names_of(summary.entries[r].features, schema) << '\n';
    out << "\nInteractions by order:";
    for (auto [order, n] : summary.distinct_by_order()) out << "  " << order << "-way: " << n;
    out << '\n';
    return out.str();
}

std::string summary_rank_csv(const GlobalSummary& summary) {
    std::ostringstream out;
    out << "rank,count,order\n";
    for (std::size_t r = 0; r < summary.entries.size(); ++r)
        out << r + 1 << ',' << summary.entries[r].count << ',' << summary.entries[r].features.size() << '\n';
    return out.str();
}

}  // namespace madex
