#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "madex/matrix.hpp"

namespace madex {

/// A prediction model f: R^p -> R treated as a deterministic black box.
/// predict_batch validates arity on the way in and finiteness on the way out;
/// subclasses only implement the raw evaluation.
class BlackBoxModel {
public:
    virtual ~BlackBoxModel() = default;

    virtual std::size_t arity() const = 0;
    virtual const std::string& name() const = 0;

    /// True when the same handle may be used from several threads at once.
    virtual bool concurrent_safe() const { return false; }

    std::vector<double> predict_batch(const Matrix& inputs);
    double predict(std::span<const double> input);

protected:
    virtual std::vector<double> evaluate(const Matrix& inputs) = 0;
};

/// In-process model backed by a plain function. Assumed pure, hence
/// concurrent_safe.
class FunctionModel final : public BlackBoxModel {
public:
    using Fn = std::function<double(std::span<const double>)>;
    FunctionModel(std::string name, std::size_t arity, Fn fn);

    std::size_t arity() const override { return arity_; }
    const std::string& name() const override { return name_; }
    bool concurrent_safe() const override { return true; }

protected:
    std::vector<double> evaluate(const Matrix& inputs) override;

private:
    std::string name_;
    std::size_t arity_;
    Fn fn_;
};

struct LaunchSpec {
    std::string command;
    std::string working_dir;  // empty: inherit
    std::chrono::milliseconds handshake_timeout{30'000};
    std::size_t batch_rows = 1000;
};

/// Child process speaking newline-delimited JSON on stdin/stdout:
///   -> {"type":"hello","version":1}      <- {"type":"ready","p":<int>,"name":<string>}
///   -> {"type":"predict","id":n,"inputs":[[...],...]}
///                                        <- {"type":"outputs","id":n,"outputs":[...]}
///   -> {"type":"bye"}                    (adapter exits 0)
/// One request is in flight at a time. Large batches are split into
/// `batch_rows`-row requests.
class ExternalModel final : public BlackBoxModel {
public:
    ~ExternalModel() override;
    ExternalModel(const ExternalModel&) = delete;
    ExternalModel& operator=(const ExternalModel&) = delete;

    std::size_t arity() const override { return arity_; }
    const std::string& name() const override { return name_; }

    /// Sends "bye" and waits for the child. Returns its exit status (0 on a
    /// clean shutdown). Idempotent; also run by the destructor.
    int shutdown();

    int pid() const { return pid_; }

protected:
    std::vector<double> evaluate(const Matrix& inputs) override;

private:
    friend std::unique_ptr<ExternalModel> connect_external(const LaunchSpec& spec);
    ExternalModel() = default;

    void send(const nlohmann::json& message);
    nlohmann::json receive(std::chrono::steady_clock::time_point deadline, std::size_t row_hint);
    std::string read_line(std::chrono::steady_clock::time_point deadline, std::size_t row_hint);

    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string buffer_;
    std::size_t arity_ = 0;
    std::string name_;
    std::size_t batch_rows_ = 1000;
    long long next_id_ = 1;
    int exit_status_ = -1;
};

/// Launches `spec.command` through /bin/sh and completes the handshake.
/// Throws LaunchError on spawn failure, early exit, handshake timeout or an
/// invalid advertised arity.
std::unique_ptr<ExternalModel> connect_external(const LaunchSpec& spec);

/// Produces one handle per worker; thread-safe models may return a shared one.
using ModelFactory = std::function<std::shared_ptr<BlackBoxModel>()>;

// ---------------------------------------------------------------------------
// Feature schema

enum class FieldKind { dense, sparse };

/// How a switched-off field is materialized.
enum class OffRule { zero_embedding, batch_mean, fixed_value, resample_other };

struct Field {
    std::string name;
    FieldKind kind = FieldKind::dense;
    std::vector<std::string> vocabulary;  // sparse only; value = index into it
    std::vector<std::size_t> dims;        // raw input dimensions owned by this field
};

/// Perturbation groups (fields) over the p raw model dimensions. d = fields.size().
struct FeatureSchema {
    std::vector<Field> fields;
    std::size_t raw_arity = 0;

    std::size_t field_count() const { return fields.size(); }

    /// Throws SchemaError unless every raw dimension belongs to exactly one
    /// field and sparse fields carry a nonempty vocabulary.
    void validate() const;

    std::size_t index_of(const std::string& field_name) const;

    /// p dense fields named x1..xp, one raw dimension each.
    static FeatureSchema all_dense(std::size_t p);
};

void to_json(nlohmann::json& j, const FeatureSchema& schema);
void from_json(const nlohmann::json& j, FeatureSchema& schema);

const char* to_string(FieldKind kind);
const char* to_string(OffRule rule);
OffRule off_rule_from_string(const std::string& s);

}  // namespace madex
