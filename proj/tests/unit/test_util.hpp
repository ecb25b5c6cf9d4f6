#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "madex/csv.hpp"
#include "madex/perturb.hpp"

namespace madex::test {

// Binary-mode dataset labelled directly by f on the masks.
inline PerturbationDataset masks_dataset(std::size_t d, const SplitSizes& splits, std::uint64_t seed,
                                         const std::function<double(std::span<const double>)>& f) {
    PerturbationDataset data;
    data.inputs = make_binary_perturbations(d, splits, seed);
    data.splits = splits;
    data.seed = seed;
    data.labels.resize(data.inputs.rows());
    for (std::size_t r = 0; r < data.inputs.rows(); ++r) data.labels[r] = f(data.inputs.row(r));
    return data;
}

// Every binary mask over d bits, repeated `copies` times per split.
inline PerturbationDataset enumerated_dataset(std::size_t d, std::size_t copies,
                                              const std::function<double(std::span<const double>)>& f) {
    const std::size_t n = std::size_t{1} << d;
    PerturbationDataset data;
    data.splits = {n * copies, n, n};
    data.inputs = Matrix(data.splits.total(), d);
    data.labels.resize(data.splits.total());
    for (std::size_t r = 0; r < data.splits.total(); ++r) {
        const std::size_t m = r % n;
        for (std::size_t c = 0; c < d; ++c) data.inputs(r, c) = (m >> c) & 1u ? 1.0 : 0.0;
        data.labels[r] = f(data.inputs.row(r));
    }
    return data;
}

// Count-and-filter over categorical columns with a plain hash map: tuples seen
// more than t times, sorted by descending count then key.
inline std::vector<std::pair<std::vector<std::string>, std::size_t>> count_filter(
    const Table& table, const std::vector<std::size_t>& columns, std::size_t t) {
    std::unordered_map<std::string, std::pair<std::vector<std::string>, std::size_t>> counts;
    for (const auto& row : table.rows) {
        std::vector<std::string> key;
        std::string joined;
        bool missing = false;
        for (std::size_t c : columns) {
            missing = missing || row[c].empty();
            key.push_back(row[c]);
            joined += row[c] + '\x1f';
        }
        if (missing) continue;
        auto& slot = counts[joined];
        slot.first = key;
        ++slot.second;
    }
    std::vector<std::pair<std::vector<std::string>, std::size_t>> kept;
    for (auto& [_, v] : counts)
        if (v.second > t) kept.push_back(v);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    return kept;
}

}  // namespace madex::test
