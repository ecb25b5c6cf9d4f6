#include "madex/detect.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "madex/error.hpp"
#include "madex/hash.hpp"

namespace madex {

using json = nlohmann::json;

const char* to_string(Detector d) { return d == Detector::nid ? "nid" : "gradnid"; }

Detector detector_from_string(const std::string& s) {
    if (s == "nid") return Detector::nid;
    if (s == "gradnid") return Detector::gradnid;
    throw Error("detect", "unknown detector '" + s + "' (expected nid or gradnid)");
}

void sort_interactions(std::vector<Interaction>& items) {
    std::sort(items.begin(), items.end(), [](const Interaction& a, const Interaction& b) {
        if (a.strength != b.strength) return a.strength > b.strength;
        return a.features < b.features;
    });
}

std::vector<std::vector<std::size_t>> InteractionRanking::feature_sets(std::size_t limit) const {
    std::vector<std::vector<std::size_t>> sets;
    for (std::size_t i = 0; i < std::min(limit, items.size()); ++i) sets.push_back(items[i].features);
    return sets;
}

// ---------------------------------------------------------------------------
// NID

std::vector<double> nid_unit_influence(const MlpBranch& branch) {
    const std::size_t nl = branch.layers.size();
    // Start at the output layer (h_last x 1) and fold |W| backwards.
    std::vector<double> z(branch.layers[nl - 1].weight.rows());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = std::abs(branch.layers[nl - 1].weight(i, 0));
    for (std::size_t l = nl - 1; l-- > 1;) {
        const Matrix& w = branch.layers[l].weight;
        std::vector<double> next(w.rows(), 0.0);
        for (std::size_t i = 0; i < w.rows(); ++i)
            for (std::size_t j = 0; j < w.cols(); ++j) next[i] += std::abs(w(i, j)) * z[j];
        z = std::move(next);
    }
    return z;
}

InteractionRanking nid_rank(const SurrogateNet& net) {
    if (!net.log.trained) throw Error("detect", "NID needs a trained network");
    if (net.branches.empty()) throw Error("detect", "NID needs an MLP branch");
    const MlpBranch& branch = net.branches.front();
    const std::size_t d = branch.features.size();
    const Matrix& w1 = branch.layers.front().weight;  // d x h
    const std::vector<double> z = nid_unit_influence(branch);

    InteractionRanking ranking;
    std::map<std::vector<std::size_t>, double> scores;
    std::vector<std::size_t> order(d);
    for (std::size_t unit = 0; unit < w1.cols(); ++unit) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return std::abs(w1(a, unit)) > std::abs(w1(b, unit));
        });
        std::vector<std::size_t> candidate{branch.features[order[0]]};
        for (std::size_t m = 1; m < d; ++m) {
            candidate.insert(std::upper_bound(candidate.begin(), candidate.end(), branch.features[order[m]]),
                             branch.features[order[m]]);
            // The m-th largest magnitude is the prefix minimum.
            scores[candidate] += z[unit] * std::abs(w1(order[m], unit));
            ++ranking.tests;
        }
    }
    for (auto& [features, strength] : scores) ranking.items.push_back({features, strength, Detector::nid});
    sort_interactions(ranking.items);
    return ranking;
}

// ---------------------------------------------------------------------------
// GradientNID

InteractionRanking gradient_nid(const SurrogateNet& net, std::span<const double> probe, std::size_t order) {
    if (order < 2) throw Error("detect", "interaction order must be at least 2");
    if (order > 3) throw Error("detect", "GradientNID is restricted to low-order (2 or 3) interactions");
    const std::size_t d = net.input_dim;
    InteractionRanking ranking;
    if (order == 2) {
        const Matrix h = input_hessian(net, probe);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i + 1; j < d; ++j) {
                const double mixed = 0.5 * (h(i, j) + h(j, i));
                ranking.items.push_back({{i, j}, mixed * mixed, Detector::gradnid});
                ++ranking.tests;
            }
    } else {
        constexpr double step = 1e-3;
        std::vector<Matrix> up(d), down(d);
        std::vector<double> x(probe.begin(), probe.end());
        for (std::size_t k = 0; k < d; ++k) {
            const double keep = x[k];
            x[k] = keep + step;
            up[k] = input_hessian(net, x);
            x[k] = keep - step;
            down[k] = input_hessian(net, x);
            x[k] = keep;
        }
        auto third = [&](std::size_t i, std::size_t j, std::size_t k) {
            return (up[k](i, j) - down[k](i, j)) / (2.0 * step);
        };
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i + 1; j < d; ++j)
                for (std::size_t k = j + 1; k < d; ++k) {
                    const double mixed = (third(i, j, k) + third(i, k, j) + third(j, k, i)) / 3.0;
                    ranking.items.push_back({{i, j, k}, mixed * mixed, Detector::gradnid});
                    ++ranking.tests;
                }
    }
    sort_interactions(ranking.items);
    return ranking;
}

// ---------------------------------------------------------------------------
// k-thresholding

KSelection select_k(const InteractionRanking& ranking, const PerturbationDataset& data, double rel_tol) {
    const std::size_t n = data.splits.train;
    double mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += data.labels[r];
    mean /= static_cast<double>(std::max<std::size_t>(n, 1));
    for (std::size_t r = 0; r < n; ++r) var += (data.labels[r] - mean) * (data.labels[r] - mean);
    var /= static_cast<double>(std::max<std::size_t>(n, 1));
    const double floor = 1e-12 * var;

    KSelection sel;
    double best = train_glm_with_products(data, {}).val_mse;
    sel.val_mse.push_back(best);
    std::vector<std::vector<std::size_t>> terms;
    for (const Interaction& inter : ranking.items) {
        if (best <= floor) break;
        terms.push_back(inter.features);
        const double mse = train_glm_with_products(data, terms).val_mse;
        sel.val_mse.push_back(mse);
        if (!(best - mse > rel_tol * best)) break;
        best = mse;
        sel.kept.push_back(inter);
    }
    sel.k = sel.kept.size();
    return sel;
}

// ---------------------------------------------------------------------------
// MADEX

NetConfig MadexConfig::surrogate_config() const {
    NetConfig c = net ? *net : (detector == Detector::nid ? NetConfig::nid() : NetConfig::gradient_nid());
    c.seed = mix_seed(seed, 2);
    return c;
}

void to_json(json& j, const MadexConfig& c) {
    j = json{{"detector", to_string(c.detector)},
             {"order", c.order},
             {"mode", to_string(c.mode)},
             {"sigma", c.sigma},
             {"splits", {c.splits.train, c.splits.val, c.splits.test}},
             {"lime_weighting", c.lime_weighting},
             {"kernel_width", c.kernel_width},
             {"k_rel_tol", c.k_rel_tol},
             {"seed", c.seed}};
    json bounds = json::array();
    for (const Bounds& b : c.bounds) bounds.push_back({b.lo, b.hi});
    j["bounds"] = bounds;
    if (c.net) j["net"] = *c.net;
}

void from_json(const json& j, MadexConfig& c) {
    c = MadexConfig{};
    c.detector = detector_from_string(j.value("detector", std::string("gradnid")));
    c.order = j.value("order", c.order);
    c.mode = j.value("mode", std::string("binary")) == "continuous" ? PerturbMode::continuous : PerturbMode::binary;
    c.sigma = j.value("sigma", c.sigma);
    if (j.contains("splits")) c.splits = {j["splits"][0], j["splits"][1], j["splits"][2]};
    c.lime_weighting = j.value("lime_weighting", c.lime_weighting);
    c.kernel_width = j.value("kernel_width", c.kernel_width);
    c.k_rel_tol = j.value("k_rel_tol", c.k_rel_tol);
    c.seed = j.value("seed", c.seed);
    if (j.contains("bounds"))
        for (const auto& b : j["bounds"]) c.bounds.push_back({b[0].get<double>(), b[1].get<double>()});
    if (j.contains("net")) c.net = j["net"].get<NetConfig>();
}

std::string config_hash(const json& config) { return hex64(fnv1a(config.dump())); }

MadexResult madex(BlackBoxModel& model, const DataInstance& x, const FeatureSchema& schema,
                  const OffStatePolicy& policy, const MadexConfig& config) {
    schema.validate();
    if (schema.raw_arity != model.arity())
        throw SchemaError("schema arity " + std::to_string(schema.raw_arity) + " does not match model arity " +
                          std::to_string(model.arity()));
    if (x.values.size() != schema.raw_arity) throw SchemaError("instance arity does not match schema");

    const std::uint64_t perturb_seed = mix_seed(config.seed, 1);
    const std::size_t d = schema.field_count();
    PerturbationDataset data;
    std::vector<double> probe;
    if (config.mode == PerturbMode::binary) {
        Matrix masks = make_binary_perturbations(d, config.splits, perturb_seed);
        data = label_with_blackbox(model, std::move(masks), PerturbMode::binary, x, schema, policy, config.splits,
                                   perturb_seed);
        if (config.lime_weighting) {
            data.weights = kernel_weights(data.inputs, config.kernel_width);
            data.kernel_width = config.kernel_width;
        }
        probe.assign(d, 1.0);
    } else {
        if (d != schema.raw_arity) throw SchemaError("continuous perturbation needs one raw dimension per field");
        std::vector<Bounds> bounds = config.bounds;
        if (bounds.empty()) bounds.assign(d, Bounds{});
        Matrix samples = make_continuous_perturbations(x.values, config.sigma, bounds, config.splits, perturb_seed);
        data = label_with_blackbox(model, std::move(samples), PerturbMode::continuous, x, schema, policy,
                                   config.splits, perturb_seed);
        data.sigma = config.sigma;
        probe = x.values;
    }

    const NetConfig net_config = config.surrogate_config();
    const SurrogateNet net = train(net_config, data);

    MadexResult result;
    result.instance_id = x.id;
    result.detector = config.detector;
    result.seed = config.seed;
    result.config_hash = config_hash(json(config));
    result.surrogate_val_mse = net.log.best_val_mse;
    result.ranking = config.detector == Detector::nid ? nid_rank(net) : gradient_nid(net, probe, config.order);
    const KSelection sel = select_k(result.ranking, data, config.k_rel_tol);
    result.k = sel.k;
    result.interactions = sel.kept;
    return result;
}

json result_to_json(const MadexResult& result, const FeatureSchema& schema, std::size_t ranking_limit) {
    auto encode = [&](const Interaction& inter) {
        std::vector<std::size_t> one_based;
        std::vector<std::string> names;
        for (std::size_t f : inter.features) {
            one_based.push_back(f + 1);
            names.push_back(f < schema.fields.size() ? schema.fields[f].name : std::to_string(f + 1));
        }
        return json{{"features", one_based}, {"names", names}, {"strength", inter.strength}};
    };
    json j{{"instance_id", result.instance_id},
           {"detector", to_string(result.detector)},
           {"k", result.k},
           {"interactions", json::array()},
           {"seed", result.seed},
           {"config_hash", result.config_hash},
           {"surrogate_val_mse", result.surrogate_val_mse}};
    for (const Interaction& inter : result.interactions) j["interactions"].push_back(encode(inter));
    json ranking = json::array();
    for (std::size_t i = 0; i < std::min(ranking_limit, result.ranking.items.size()); ++i)
        ranking.push_back(encode(result.ranking.items[i]));
    j["ranking"] = std::move(ranking);
    return j;
}

}  // namespace madex
