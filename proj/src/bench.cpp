#include "madex/bench.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "madex/csv.hpp"
#include "madex/error.hpp"
#include "madex/hash.hpp"
#include "madex/log.hpp"
#include "madex/parallel.hpp"

namespace madex {

using json = nlohmann::json;

NetConfig BlackBoxOptions::default_net() {
    NetConfig c;
    c.hidden = {64, 64, 32};
    c.activation = Activation::relu;
    c.l1 = 0.0;
    c.learning_rate = 1e-3;
    c.batch_size = 100;
    c.max_epochs = 200;
    c.patience = 10;
    return c;
}

NetConfig FidelityOptions::default_net() {
    NetConfig c;
    c.hidden = {64, 32, 16};
    c.activation = Activation::relu;
    c.l1 = 0.0;
    c.learning_rate = 1e-3;
    c.linear_branch = true;
    return c;
}

TrainedBlackBox make_trained_blackbox(SynthId id, std::uint64_t seed, const BlackBoxOptions& options) {
    const std::size_t n = options.samples;
    if (n < 10) throw Error("bench", "black-box training needs at least 10 samples");
    PerturbationDataset data;
    data.mode = PerturbMode::continuous;
    data.splits = {n * 8 / 10, n / 10, n - n * 8 / 10 - n / 10};
    data.seed = seed;
    data.inputs.resize(n, kSynthArity);
    data.labels.resize(n);
    std::mt19937_64 rng(mix_seed(seed, 0));
    std::uniform_real_distribution<double> uniform(-1.0, 1.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < kSynthArity; ++c) data.inputs(r, c) = uniform(rng);
        data.labels[r] = synth_eval(id, data.inputs.row(r));
    }
    NetConfig config = options.net;
    config.seed = mix_seed(seed, 1);
    SurrogateNet net = train(config, data);
    TrainedBlackBox out;
    out.test_mse = evaluate_mse(net, data, data.test_begin(), data.rows());
    out.epochs = net.log.epochs.size();
    spdlog::info("black box {} seed {}: test MSE {:.4g} after {} epochs", to_string(id), seed, out.test_mse,
                 out.epochs);
    if (!(out.test_mse <= options.mse_gate))
        throw TrainingError(std::string("black box for ") + to_string(id) + " missed the MSE gate (" +
                                std::to_string(out.test_mse) + ")",
                            out.epochs);
    out.model = std::make_shared<NetModel>(std::string("mlp-") + to_string(id), std::move(net));
    return out;
}

double r_precision(const InteractionRanking& ranking, const std::vector<std::vector<std::size_t>>& truth) {
    if (truth.empty()) throw Error("bench", "ground truth is empty");
    if (ranking.items.empty()) return 0.0;
    const std::size_t R = truth.size();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(R, ranking.items.size()); ++i)
        if (std::find(truth.begin(), truth.end(), ranking.items[i].features) != truth.end()) ++hits;
    return static_cast<double>(hits) / static_cast<double>(R);
}

void to_json(json& j, const TrialOptions& o) {
    j = json{{"trials", o.trials},
             {"instances", o.instances},
             {"sigma", o.sigma},
             {"seed", o.seed},
             {"splits", {o.splits.train, o.splits.val, o.splits.test}},
             {"blackbox", {{"samples", o.blackbox.samples}, {"net", o.blackbox.net}, {"mse_gate", o.blackbox.mse_gate}}}};
}

void from_json(const json& j, TrialOptions& o) {
    o = TrialOptions{};
    o.trials = j.value("trials", o.trials);
    o.instances = j.value("instances", o.instances);
    o.sigma = j.value("sigma", o.sigma);
    o.seed = j.value("seed", o.seed);
    if (j.contains("splits")) o.splits = {j["splits"][0], j["splits"][1], j["splits"][2]};
    if (j.contains("blackbox")) {
        const json& b = j["blackbox"];
        o.blackbox.samples = b.value("samples", o.blackbox.samples);
        if (b.contains("net")) o.blackbox.net = b["net"].get<NetConfig>();
        o.blackbox.mse_gate = b.value("mse_gate", o.blackbox.mse_gate);
    }
}

TrialReport run_detection_trials(SynthId id, Detector detector, const TrialOptions& options) {
    TrialReport report;
    report.function = id;
    report.detector = detector;
    report.options = options;
    const auto truth = synth_truth(id);
    if (detector == Detector::gradnid && truth.front().size() > 2) {
        report.skipped = "GradientNID order 2 cannot rank the 3-way ground truth";
        return report;
    }
    if (options.trials == 0 || options.instances == 0) throw Error("bench", "trials and instances must be positive");

    const FeatureSchema schema = FeatureSchema::all_dense(kSynthArity);
    const OffStatePolicy policy = OffStatePolicy::fixed(schema, 0.0);
    report.trials.resize(options.trials);
    parallel_for(options.trials, options.jobs, [&](std::size_t, std::size_t t) {
        TrialRecord& trial = report.trials[t];
        trial.seed = mix_seed(options.seed, 100 + t);
        const TrainedBlackBox bb = make_trained_blackbox(id, mix_seed(trial.seed, 0), options.blackbox);
        trial.blackbox_test_mse = bb.test_mse;

        std::mt19937_64 rng(mix_seed(trial.seed, 1));
        std::uniform_real_distribution<double> uniform(-1.0, 1.0);
        MadexConfig config;
        config.detector = detector;
        config.mode = PerturbMode::continuous;
        config.sigma = options.sigma;
        config.splits = options.splits;
        config.bounds.assign(kSynthArity, Bounds{-1.0, 1.0});
        for (std::size_t i = 0; i < options.instances; ++i) {
            DataInstance x;
            x.id = "t" + std::to_string(t) + "i" + std::to_string(i);
            for (std::size_t c = 0; c < kSynthArity; ++c) x.values.push_back(uniform(rng));
            config.seed = mix_seed(trial.seed, 10 + i);
            const MadexResult result = madex(*bb.model, x, schema, policy, config);
            InstanceRecord rec;
            rec.location = x.values;
            if (!result.ranking.empty()) rec.top = result.ranking.items.front().features;
            rec.r_precision = r_precision(result.ranking, truth);
            rec.k = result.k;
            trial.instances.push_back(std::move(rec));
        }
        double sum = 0.0;
        for (const auto& rec : trial.instances) sum += rec.r_precision;
        trial.mean = sum / static_cast<double>(trial.instances.size());
        spdlog::info("{} {} trial {}: R-precision {:.3f}", to_string(id), to_string(detector), t, trial.mean);
    });

    double sum = 0.0, sq = 0.0;
    for (const auto& trial : report.trials) sum += trial.mean;
    report.mean = sum / static_cast<double>(report.trials.size());
    for (const auto& trial : report.trials) sq += (trial.mean - report.mean) * (trial.mean - report.mean);
    report.std = std::sqrt(sq / static_cast<double>(report.trials.size()));
    return report;
}

namespace {

std::vector<std::size_t> one_based(const std::vector<std::size_t>& features) {
    std::vector<std::size_t> out;
    for (std::size_t f : features) out.push_back(f + 1);
    return out;
}

std::string join_features(const std::vector<std::size_t>& features) {
    std::string out;
    for (std::size_t i = 0; i < features.size(); ++i) out += (i ? " " : "") + std::to_string(features[i] + 1);
    return out;
}

}  // namespace

json report_to_json(const TrialReport& report) {
    json j{{"function", to_string(report.function)},
           {"detector", to_string(report.detector)},
           {"config", report.options}};
    if (!report.skipped.empty()) {
        j["skipped"] = report.skipped;
        return j;
    }
    json trials = json::array();
    for (const auto& trial : report.trials) {
        json instances = json::array();
        for (const auto& rec : trial.instances)
            instances.push_back({{"location", rec.location},
                                 {"top", one_based(rec.top)},
                                 {"r_precision", rec.r_precision},
                                 {"k", rec.k}});
        trials.push_back({{"seed", trial.seed},
                          {"blackbox_test_mse", trial.blackbox_test_mse},
                          {"mean", trial.mean},
                          {"instances", instances}});
    }
    j["trials"] = trials;
    j["mean"] = report.mean;
    j["std"] = report.std;
    return j;
}

std::string report_csv(const TrialReport& report) {
    std::ostringstream out;
    out << "function,detector,trial,instance";
    for (std::size_t c = 0; c < kSynthArity; ++c) out << ",x" << c + 1;
    out << ",top,r_precision,k,blackbox_test_mse\n";
    for (std::size_t t = 0; t < report.trials.size(); ++t) {
        const auto& trial = report.trials[t];
        for (std::size_t i = 0; i < trial.instances.size(); ++i) {
            const auto& rec = trial.instances[i];
            out << to_string(report.function) << ',' << to_string(report.detector) << ',' << t << ',' << i;
            for (double v : rec.location) out << ',' << format_double(v);
            out << ',' << join_features(rec.top) << ',' << format_double(rec.r_precision) << ',' << rec.k << ','
                << format_double(trial.blackbox_test_mse) << '\n';
        }
    }
    return out.str();
}

std::string report_text(const std::vector<TrialReport>& reports) {
    std::ostringstream out;
    out << "Detection performance in R-precision (MLP black box)\n\n";
    out << std::left << std::setw(8) << "" << std::setw(16) << "NID" << "GradNID\n";
    for (SynthId id : {SynthId::F1, SynthId::F2, SynthId::F3, SynthId::F4}) {
        const TrialReport* cells[2] = {nullptr, nullptr};
        for (const auto& r : reports)
            if (r.function == id) cells[r.detector == Detector::nid ? 0 : 1] = &r;
        if (!cells[0] && !cells[1]) continue;
        out << std::left << std::setw(8) << to_string(id);
        for (int c = 0; c < 2; ++c) {
            std::string cell = "-";
            if (cells[c] && !cells[c]->skipped.empty()) {
                cell = "skipped";
            } else if (cells[c]) {
                std::ostringstream s;
                s << std::fixed << std::setprecision(2) << cells[c]->mean << " +- " << cells[c]->std;
                cell = s.str();
            }
            out << std::setw(16) << cell;
        }
        out << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Fidelity

void to_json(json& j, const FidelityOptions& o) {
    j = json{{"mode", to_string(o.mode)},
             {"weighted", o.weighted},
             {"kernel_width", o.kernel_width},
             {"sigma", o.sigma},
             {"splits", {o.splits.train, o.splits.val, o.splits.test}},
             {"net", o.net},
             {"rel_tol", o.rel_tol},
             {"seed", o.seed}};
}

void from_json(const json& j, FidelityOptions& o) {
    o = FidelityOptions{};
    o.mode = j.value("mode", std::string("binary")) == "continuous" ? PerturbMode::continuous : PerturbMode::binary;
    o.weighted = j.value("weighted", o.weighted);
    o.kernel_width = j.value("kernel_width", o.kernel_width);
    o.sigma = j.value("sigma", o.sigma);
    if (j.contains("splits")) o.splits = {j["splits"][0], j["splits"][1], j["splits"][2]};
    if (j.contains("net")) o.net = j["net"].get<NetConfig>();
    o.rel_tol = j.value("rel_tol", o.rel_tol);
    o.seed = j.value("seed", o.seed);
}

FidelityReport fidelity_eval(BlackBoxModel& model, const DataInstance& x, const FeatureSchema& schema,
                             const OffStatePolicy& policy, const std::vector<std::vector<std::size_t>>& S,
                             const FidelityOptions& options) {
    schema.validate();
    const std::uint64_t data_seed = mix_seed(options.seed, 1);
    const std::size_t d = schema.field_count();
    PerturbationDataset data;
    if (options.mode == PerturbMode::binary) {
        Matrix masks = make_binary_perturbations(d, options.splits, data_seed);
        data = label_with_blackbox(model, std::move(masks), PerturbMode::binary, x, schema, policy, options.splits,
                                   data_seed);
        if (options.weighted) {
            data.weights = kernel_weights(data.inputs, options.kernel_width);
            data.kernel_width = options.kernel_width;
        }
    } else {
        const std::vector<Bounds> bounds(x.values.size());
        Matrix samples = make_continuous_perturbations(x.values, options.sigma, bounds, options.splits, data_seed);
        data = label_with_blackbox(model, std::move(samples), PerturbMode::continuous, x, schema, policy,
                                   options.splits, data_seed);
    }

    double mean = 0.0, var = 0.0;
    const std::size_t n = data.splits.train;
    for (std::size_t r = 0; r < n; ++r) mean += data.labels[r];
    mean /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) var += (data.labels[r] - mean) * (data.labels[r] - mean);
    const double floor = 1e-12 * var / static_cast<double>(n);

    const GlmResult linear = train_glm_with_products(data, {});
    FidelityReport report;
    report.rows.push_back({0, linear.val_mse, linear.test_mse});
    for (std::size_t k = 1; k <= S.size(); ++k) {
        const double best = report.rows.back().val_mse;
        if (best <= floor) break;
        NetConfig config = options.net;
        config.linear_branch = true;
        config.seed = mix_seed(options.seed, 10 + k);
        const std::vector<std::vector<std::size_t>> subsets(S.begin(), S.begin() + static_cast<std::ptrdiff_t>(k));
        SurrogateNet net = make_additive_net(config, d, subsets);
        net.linear->weights = linear.linear;
        net.linear->bias = linear.intercept;
        net = train(std::move(net), config, data);
        const FidelityRow row{k, evaluate_mse(net, data, data.val_begin(), data.test_begin()),
                              evaluate_mse(net, data, data.test_begin(), data.rows())};
        spdlog::debug("fidelity k={} val {:.4g} test {:.4g}", k, row.val_mse, row.test_mse);
        if (!(best - row.val_mse > options.rel_tol * best)) {
            report.rejected = row;
            break;
        }
        report.rows.push_back(row);
    }
    report.L = report.rows.back().k;
    return report;
}

json fidelity_to_json(const FidelityReport& report) {
    json rows = json::array();
    for (const auto& r : report.rows) rows.push_back({{"k", r.k}, {"val_mse", r.val_mse}, {"test_mse", r.test_mse}});
    json j{{"L", report.L}, {"rows", rows}};
    if (report.rejected)
        j["rejected"] = {{"k", report.rejected->k}, {"val_mse", report.rejected->val_mse},
                         {"test_mse", report.rejected->test_mse}};
    return j;
}

}  // namespace madex
