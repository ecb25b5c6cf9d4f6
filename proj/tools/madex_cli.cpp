// madex: local explanation, global interaction detection, truncated feature
// crosses and the synthetic detection benchmark.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "madex/bench.hpp"
#include "madex/crossing.hpp"
#include "madex/csv.hpp"
#include "madex/error.hpp"
#include "madex/global_detect.hpp"
#include "madex/hash.hpp"
#include "madex/log.hpp"
#include "madex/parallel.hpp"
#include "madex/synth.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace madex;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("io", "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error("io", path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io", "cannot write " + path.string());
    out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

/// CSV outputs carry their config in a sidecar next to them.
void write_csv_meta(const fs::path& csv, const json& config) {
    write_json(csv.string() + ".meta.json", json{{"config", config}});
}

/// The "config" object of a previous output (or a bare config file).
json load_config(const fs::path& path, const std::string& command) {
    json j = read_json(path);
    if (j.contains("config")) j = j["config"];
    if (j.value("command", command) != command)
        throw UsageError(path.string() + " holds a '" + j.value("command", "") + "' config, not '" + command + "'");
    return j;
}

// ---------------------------------------------------------------------------
// Model specs: synth:<name>[:arity] | net:<path> | anything else runs as a
// shell command speaking the JSON-lines protocol.

ModelFactory model_factory(const std::string& spec) {
    if (spec.rfind("synth:", 0) == 0) {
        std::string name = spec.substr(6);
        std::size_t arity = kSynthArity;
        if (auto colon = name.find(':'); colon != std::string::npos) {
            arity = std::stoul(name.substr(colon + 1));
            name = name.substr(0, colon);
        }
        auto model = make_synth_model(name, arity);
        return [model] { return model; };
    }
    if (spec.rfind("net:", 0) == 0) {
        SurrogateNet net = read_json(spec.substr(4)).get<SurrogateNet>();
        auto model = std::make_shared<NetModel>(spec, std::move(net));
        return [model] { return model; };
    }
    return [spec]() -> std::shared_ptr<BlackBoxModel> {
        LaunchSpec launch;
        launch.command = spec;
        return connect_external(launch);
    };
}

DataInstance read_instance(const fs::path& path) {
    const json j = read_json(path);
    DataInstance x;
    if (j.is_array()) {
        x.values = j.get<std::vector<double>>();
        x.id = path.stem().string();
    } else {
        x.values = j.at("values").get<std::vector<double>>();
        x.id = j.value("id", path.stem().string());
    }
    return x;
}

FeatureSchema resolve_schema(const std::string& path, std::size_t arity) {
    if (path.empty()) return FeatureSchema::all_dense(arity);
    return read_json(path).get<FeatureSchema>();
}

/// Raw coordinates of a data CSV: every column except an optional "id".
std::pair<Matrix, std::vector<std::string>> read_matrix(const fs::path& path, std::size_t arity) {
    const Table table = read_csv(path);
    std::optional<std::size_t> id_col;
    for (std::size_t c = 0; c < table.header.size(); ++c)
        if (table.header[c] == "id") id_col = c;
    const std::size_t width = table.header.size() - (id_col ? 1 : 0);
    if (width != arity)
        throw SchemaError(path.string() + " has " + std::to_string(width) + " value columns, schema expects " +
                          std::to_string(arity));
    Matrix m(table.rows.size(), arity);
    std::vector<std::string> ids;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        std::size_t k = 0;
        for (std::size_t c = 0; c < table.header.size(); ++c) {
            if (id_col && c == *id_col) continue;
            m(r, k++) = parse_double(table.rows[r][c]);
        }
        ids.push_back(id_col ? table.rows[r][*id_col] : std::to_string(r));
    }
    return {std::move(m), std::move(ids)};
}

OffStatePolicy resolve_policy(const std::string& rule, const FeatureSchema& schema, const Matrix* reference) {
    if (rule == "mean") {
        if (!reference) throw UsageError("--off-state mean needs --reference data");
        return OffStatePolicy::batch_mean(schema, *reference);
    }
    if (rule == "zero") return OffStatePolicy::fixed(schema, 0.0);
    throw UsageError("--off-state must be 'mean' or 'zero'");
}

// ---------------------------------------------------------------------------
// Shared detector flags

struct DetectorFlags {
    std::string detector = "gradnid";
    std::size_t order = 2;
    std::string mode = "binary";
    double sigma = 0.6;
    std::size_t n_perturb = 5000;
    bool weighting = false;
    double k_tol = kThresholdRelTol;
    std::uint64_t seed = 0;

    void add(CLI::App* cmd) {
        cmd->add_option("--detector", detector, "nid or gradnid")->check(CLI::IsMember({"nid", "gradnid"}));
        cmd->add_option("--order", order, "GradientNID interaction order (2 or 3)");
        cmd->add_option("--mode", mode, "binary or continuous")->check(CLI::IsMember({"binary", "continuous"}));
        cmd->add_option("--sigma", sigma, "continuous perturbation scale");
        cmd->add_option("--n-perturb", n_perturb, "training perturbations (val and test get a tenth each)");
        cmd->add_flag("--weighting", weighting, "LIME kernel weighting of binary perturbations");
        cmd->add_option("--k-tol", k_tol, "relative validation improvement needed to keep another interaction");
        cmd->add_option("--seed", seed, "root seed");
    }

    MadexConfig config() const {
        MadexConfig c;
        c.detector = detector_from_string(detector);
        c.order = order;
        c.mode = mode == "continuous" ? PerturbMode::continuous : PerturbMode::binary;
        c.sigma = sigma;
        c.splits = {n_perturb, std::max<std::size_t>(n_perturb / 10, 1), std::max<std::size_t>(n_perturb / 10, 1)};
        c.lime_weighting = weighting;
        c.k_rel_tol = k_tol;
        c.seed = seed;
        return c;
    }
};

// ---------------------------------------------------------------------------
// explain

struct ExplainArgs {
    std::string model, instance, schema, reference, off_state = "zero", config_in, out;
    DetectorFlags flags;
    bool fidelity = false;
    std::size_t ranking_limit = 10;
};

int run_explain(const ExplainArgs& a) {
    json config;
    if (!a.config_in.empty()) {
        config = load_config(a.config_in, "explain");
    } else {
        if (a.model.empty()) throw UsageError("explain: --model is required");
        if (a.instance.empty()) throw UsageError("explain: --instance is required");
        config = {{"command", "explain"},
                  {"model", a.model},
                  {"instance", a.instance},
                  {"schema", a.schema},
                  {"reference", a.reference},
                  {"off_state", a.reference.empty() ? a.off_state : "mean"},
                  {"madex", a.flags.config()},
                  {"fidelity", a.fidelity},
                  {"ranking_limit", a.ranking_limit}};
    }
    const MadexConfig mc = config.at("madex").get<MadexConfig>();
    config["seed"] = mc.seed;

    auto model = model_factory(config.at("model"))();
    const DataInstance x = read_instance(config.at("instance").get<std::string>());
    const FeatureSchema schema = resolve_schema(config.at("schema"), model->arity());
    std::optional<Matrix> reference;
    if (!config.at("reference").get<std::string>().empty())
        reference = read_matrix(config.at("reference").get<std::string>(), schema.raw_arity).first;
    const OffStatePolicy policy = resolve_policy(config.at("off_state"), schema, reference ? &*reference : nullptr);

    const MadexResult result = madex::madex(*model, x, schema, policy, mc);
    json out{{"config", config}, {"result", result_to_json(result, schema, config.at("ranking_limit"))}};
    out["result"]["off_state"] = policy.describe(schema);
    if (config.at("fidelity").get<bool>()) {
        FidelityOptions fo;
        fo.mode = mc.mode;
        fo.weighted = mc.mode == PerturbMode::binary;
        fo.sigma = mc.sigma;
        fo.splits = mc.splits;
        fo.seed = mix_seed(mc.seed, 3);
        std::vector<std::vector<std::size_t>> S;
        for (const auto& inter : result.interactions) S.push_back(inter.features);
        out["fidelity"] = fidelity_to_json(fidelity_eval(*model, x, schema, policy, S, fo));
    }
    if (auto* ext = dynamic_cast<ExternalModel*>(model.get())) ext->shutdown();

    if (a.out.empty())
        std::cout << out.dump(2) << '\n';
    else
        write_json(a.out, out);
    return 0;
}

// ---------------------------------------------------------------------------
// global

struct GlobalArgs {
    std::string model, data, schema, off_state = "mean", prune = "subsets", config_in, out, rank_csv, report;
    DetectorFlags flags;
    std::size_t batch = 1000;
    std::size_t K = 0;
    std::size_t jobs = default_jobs();
};

int run_global(const GlobalArgs& a) {
    json config;
    if (!a.config_in.empty()) {
        config = load_config(a.config_in, "global");
    } else {
        if (a.model.empty()) throw UsageError("global: --model is required");
        if (a.data.empty()) throw UsageError("global: --data is required");
        config = {{"command", "global"},     {"model", a.model},         {"data", a.data},
                  {"schema", a.schema},      {"off_state", a.off_state}, {"batch", a.batch},
                  {"K", a.K},                {"prune", a.prune},         {"madex", a.flags.config()}};
    }
    const MadexConfig mc = config.at("madex").get<MadexConfig>();
    config["seed"] = mc.seed;

    const ModelFactory factory = model_factory(config.at("model"));
    auto probe = factory();
    const FeatureSchema schema = resolve_schema(config.at("schema"), probe->arity());
    auto [values, ids] = read_matrix(config.at("data").get<std::string>(), schema.raw_arity);
    const std::size_t batch_size = config.at("batch");
    if (batch_size == 0) throw UsageError("global: --batch must be positive");
    if (batch_size > values.rows())
        throw SchemaError("batch size " + std::to_string(batch_size) + " exceeds the " +
                          std::to_string(values.rows()) + " data rows");
    std::vector<std::size_t> first(batch_size);
    std::iota(first.begin(), first.end(), 0);
    const Matrix batch_values = values.select_rows(first);
    const OffStatePolicy policy = resolve_policy(config.at("off_state"), schema, &batch_values);

    std::vector<DataInstance> batch;
    for (std::size_t r = 0; r < batch_size; ++r)
        batch.push_back({ids[r], std::vector<double>(batch_values.row(r).begin(), batch_values.row(r).end())});
    // Reuse the probe handle for the first worker.
    std::shared_ptr<BlackBoxModel> first_handle = std::move(probe);
    ModelFactory handles = [&, first_handle]() mutable {
        if (first_handle) return std::exchange(first_handle, nullptr);
        return factory();
    };
    GlobalSummary summary = detect_global(handles, batch, schema, policy, mc, a.jobs);
    const std::size_t K = config.at("K");
    if (K > 0) {
        const PruneRule rule = config.at("prune") == "supersets" ? PruneRule::drop_supersets : PruneRule::drop_subsets;
        summary = prune_subsets(summary, K, rule);
    }

    json out{{"config", config}, {"summary", summary_to_json(summary, schema)}};
    if (a.out.empty())
        std::cout << out.dump(2) << '\n';
    else
        write_json(a.out, out);
    if (!a.rank_csv.empty()) {
        write_text(a.rank_csv, summary_rank_csv(summary));
        write_csv_meta(a.rank_csv, config);
    }
    const std::string text = summary_report(summary, schema, 20);
    if (!a.report.empty())
        write_text(a.report, text);
    else if (!a.out.empty())
        std::cout << text;
    return summary.effective_batch == 0 ? 1 : 0;
}

// ---------------------------------------------------------------------------
// cross

/// Field-name lists from a global output, a {"interactions": [...]} document
/// or a bare array of name arrays.
std::vector<std::vector<std::string>> read_interactions(const fs::path& path, std::size_t top) {
    json j = read_json(path);
    std::vector<std::vector<std::string>> out;
    if (j.contains("summary")) j = j["summary"];
    if (j.is_object() && j.contains("entries")) {
        for (const auto& e : j["entries"]) out.push_back(e.at("names").get<std::vector<std::string>>());
    } else {
        if (j.is_object()) j = j.at("interactions");
        for (const auto& e : j) out.push_back(e.get<std::vector<std::string>>());
    }
    if (top > 0 && out.size() > top) out.resize(top);
    return out;
}

/// Columns whose nonempty cells all parse as numbers become dense fields.
FeatureSchema infer_schema(const Table& table) {
    FeatureSchema schema;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
        bool numeric = true;
        for (const auto& row : table.rows) {
            if (row[c].empty()) continue;
            try {
                parse_double(row[c]);
            } catch (const std::exception&) {
                numeric = false;
                break;
            }
        }
        Field f{table.header[c], numeric ? FieldKind::dense : FieldKind::sparse, {}, {c}};
        if (!numeric) f.vocabulary = {"*"};
        schema.fields.push_back(std::move(f));
    }
    schema.raw_arity = table.header.size();
    return schema;
}

struct CrossArgs {
    std::string data, schema, interactions, config_in, out_data, out_specs, report;
    std::size_t T = kDefaultCrossThreshold;
    std::size_t max_bins = kDefaultMaxBins;
    std::size_t top = 0;
    std::size_t jobs = default_jobs();
};

int run_cross(const CrossArgs& a) {
    json config;
    if (!a.config_in.empty()) {
        config = load_config(a.config_in, "cross");
    } else {
        if (a.data.empty()) throw UsageError("cross: --data is required");
        if (a.interactions.empty()) throw UsageError("cross: --interactions is required");
        config = {{"command", "cross"},   {"data", a.data},         {"schema", a.schema},
                  {"interactions", a.interactions}, {"T", a.T}, {"max_bins", a.max_bins},
                  {"top", a.top},         {"seed", 0}};
    }
    const Table table = read_csv(config.at("data").get<std::string>());
    const std::string schema_path = config.at("schema");
    const FeatureSchema schema = schema_path.empty() ? infer_schema(table) : read_json(schema_path).get<FeatureSchema>();
    for (const auto& names : read_interactions(config.at("interactions").get<std::string>(), config.at("top")))
        for (const auto& n : names) schema.index_of(n);

    const auto buckets = fit_buckets(table, schema, config.at("max_bins"));
    std::vector<CrossFeatureSpec> specs;
    for (const auto& names : read_interactions(config.at("interactions").get<std::string>(), config.at("top")))
        specs.push_back(build_cross_vocab(table, schema, names, config.at("T"), buckets, a.jobs));
    const CrossApplyResult applied = apply_crosses(table, specs, a.jobs);

    json spec_doc{{"config", config}, {"crosses", specs}};
    json report = json::array();
    const auto rows = cardinality_report(specs);
    for (std::size_t s = 0; s < rows.size(); ++s)
        report.push_back({{"column", rows[s].column},
                          {"theoretical", static_cast<double>(rows[s].theoretical)},
                          {"vocabulary", rows[s].vocabulary},
                          {"cardinality", applied.cardinality[s]},
                          {"reduction", rows[s].reduction},
                          {"missing", applied.missing[s]}});
    spec_doc["cardinality"] = report;

    if (!a.out_data.empty()) {
        write_csv(a.out_data, applied.table);
        write_csv_meta(a.out_data, config);
    }
    if (!a.out_specs.empty())
        write_json(a.out_specs, spec_doc);
    else
        std::cout << spec_doc.dump(2) << '\n';
    if (!a.report.empty()) {
        std::ostringstream csv;
        csv << "column,theoretical,vocabulary,cardinality,reduction,missing\n";
        for (const auto& r : report)
            csv << r["column"].get<std::string>() << ',' << format_double(r["theoretical"].get<double>()) << ','
                << r["vocabulary"].get<std::size_t>() << ',' << r["cardinality"].get<std::size_t>() << ','
                << format_double(r["reduction"].get<double>()) << ',' << r["missing"].get<std::size_t>() << '\n';
        write_text(a.report, csv.str());
        write_csv_meta(a.report, config);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
    std::vector<std::string> functions{"F1", "F2", "F3", "F4"};
    std::vector<std::string> detectors{"nid", "gradnid"};
    std::size_t trials = 10, instances = 20;
    double sigma = 0.6;
    std::size_t n_perturb = 5000;
    std::uint64_t seed = 0;
    std::size_t jobs = default_jobs();
    std::string config_in, out, csv, text;
};

int run_bench(const BenchArgs& a) {
    json config;
    if (!a.config_in.empty()) {
        config = load_config(a.config_in, "bench");
    } else {
        TrialOptions o;
        o.trials = a.trials;
        o.instances = a.instances;
        o.sigma = a.sigma;
        o.seed = a.seed;
        o.splits = {a.n_perturb, std::max<std::size_t>(a.n_perturb / 10, 1), std::max<std::size_t>(a.n_perturb / 10, 1)};
        config = {{"command", "bench"}, {"functions", a.functions}, {"detectors", a.detectors}, {"trials", o},
                  {"seed", a.seed}};
    }
    TrialOptions options = config.at("trials").get<TrialOptions>();
    options.jobs = a.jobs;

    std::vector<TrialReport> reports;
    for (const auto& f : config.at("functions").get<std::vector<std::string>>())
        for (const auto& d : config.at("detectors").get<std::vector<std::string>>())
            reports.push_back(run_detection_trials(synth_from_string(f), detector_from_string(d), options));

    json out{{"config", config}, {"reports", json::array()}};
    std::string csv;
    for (const auto& r : reports) {
        json rj = report_to_json(r);
        rj.erase("config");
        out["reports"].push_back(std::move(rj));
        const std::string part = report_csv(r);
        csv += csv.empty() ? part : part.substr(part.find('\n') + 1);
    }
    const std::string text = report_text(reports);
    if (!a.out.empty())
        write_json(a.out, out);
    if (!a.csv.empty()) {
        write_text(a.csv, csv);
        write_csv_meta(a.csv, config);
    }
    if (!a.text.empty()) write_text(a.text, text);
    std::cout << text;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    configure_logging();
    CLI::App app{"madex: model-agnostic feature interaction detection and encoding"};
    app.require_subcommand(1);

    ExplainArgs ex;
    auto* explain = app.add_subcommand("explain", "detect interactions around one instance");
    explain->add_option("--model", ex.model, "synth:<name>[:arity], net:<file.json> or an adapter command");
    explain->add_option("--instance", ex.instance, "instance JSON ({\"id\",\"values\"} or an array)");
    explain->add_option("--schema", ex.schema, "feature schema JSON (default: one dense field per input)");
    explain->add_option("--reference", ex.reference, "CSV batch for batch-mean off-states");
    explain->add_option("--off-state", ex.off_state, "zero, or mean (implied by --reference)");
    explain->add_flag("--fidelity", ex.fidelity, "also report surrogate fidelity over k");
    explain->add_option("--ranking-limit", ex.ranking_limit, "ranked interactions to include");
    explain->add_option("--config", ex.config_in, "rerun from the config embedded in a previous output");
    explain->add_option("--out", ex.out, "output JSON (default stdout)");
    ex.flags.add(explain);

    GlobalArgs gl;
    auto* global = app.add_subcommand("global", "count locally detected interactions over a batch");
    global->add_option("--model", gl.model, "model spec (see explain)");
    global->add_option("--data", gl.data, "CSV of raw instances (optional id column)");
    global->add_option("--schema", gl.schema, "feature schema JSON");
    global->add_option("--batch", gl.batch, "instances to explain (first rows of --data)");
    global->add_option("--K", gl.K, "keep the top K after subset pruning (0: no pruning)");
    global->add_option("--prune", gl.prune, "subsets or supersets")->check(CLI::IsMember({"subsets", "supersets"}));
    global->add_option("--off-state", gl.off_state, "mean (over the batch) or zero");
    global->add_option("--jobs", gl.jobs, "worker threads");
    global->add_option("--config", gl.config_in, "rerun from the config embedded in a previous output");
    global->add_option("--out", gl.out, "summary JSON (default stdout)");
    global->add_option("--rank-csv", gl.rank_csv, "rank,count,order CSV");
    global->add_option("--report", gl.report, "plain-text report");
    gl.flags.add(global);

    CrossArgs cr;
    auto* cross = app.add_subcommand("cross", "encode interactions as truncated cross features");
    cross->add_option("--data", cr.data, "CSV batch to count and augment");
    cross->add_option("--schema", cr.schema, "feature schema JSON (default: inferred from the CSV)");
    cross->add_option("--interactions", cr.interactions, "global output or a list of field-name lists");
    cross->add_option("--T", cr.T, "keep combinations seen more than T times");
    cross->add_option("--max-bins", cr.max_bins, "quantile buckets per dense field");
    cross->add_option("--top", cr.top, "use only the first N interactions (0: all)");
    cross->add_option("--jobs", cr.jobs, "worker threads");
    cross->add_option("--config", cr.config_in, "rerun from the config embedded in a previous output");
    cross->add_option("--out-data", cr.out_data, "augmented CSV");
    cross->add_option("--out-specs", cr.out_specs, "cross specs and cardinality JSON (default stdout)");
    cross->add_option("--report", cr.report, "cardinality report CSV");

    BenchArgs be;
    auto* bench = app.add_subcommand("bench", "synthetic detection benchmark (R-precision)");
    bench->add_option("--function", be.functions, "F1..F4 (repeatable)")->check(CLI::IsMember({"F1", "F2", "F3", "F4"}));
    bench->add_option("--detector", be.detectors, "nid, gradnid (repeatable)")->check(CLI::IsMember({"nid", "gradnid"}));
    bench->add_option("--trials", be.trials, "trials, each with a freshly trained black box");
    bench->add_option("--instances", be.instances, "instances per trial");
    bench->add_option("--sigma", be.sigma, "continuous perturbation scale");
    bench->add_option("--n-perturb", be.n_perturb, "training perturbations per instance");
    bench->add_option("--seed", be.seed, "root seed");
    bench->add_option("--jobs", be.jobs, "worker threads (one trial each)");
    bench->add_option("--config", be.config_in, "rerun from the config embedded in a previous output");
    bench->add_option("--out", be.out, "report JSON");
    bench->add_option("--csv", be.csv, "trial x instance CSV");
    bench->add_option("--text", be.text, "summary table");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*explain) return run_explain(ex);
        if (*global) return run_global(gl);
        if (*cross) return run_cross(cr);
        if (*bench) return run_bench(be);
    } catch (const UsageError& e) {
        std::cerr << "usage: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        std::cerr << "error [" << e.stage() << "]: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
