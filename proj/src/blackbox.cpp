#include "madex/blackbox.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <set>
#include <thread>

#include "madex/error.hpp"

namespace madex {

using json = nlohmann::json;

std::vector<double> BlackBoxModel::predict_batch(const Matrix& inputs) {
    if (inputs.rows() == 0) return {};
    if (inputs.cols() != arity())
        throw QueryError("input arity " + std::to_string(inputs.cols()) + " does not match model arity " +
                         std::to_string(arity()));
    auto out = evaluate(inputs);
    if (out.size() != inputs.rows())
        throw QueryError("model returned " + std::to_string(out.size()) + " outputs for " +
                         std::to_string(inputs.rows()) + " inputs");
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!std::isfinite(out[i])) throw QueryError("non-finite model output", i);
    return out;
}

double BlackBoxModel::predict(std::span<const double> input) {
    Matrix one(1, input.size());
    std::copy(input.begin(), input.end(), one.row(0).begin());
    return predict_batch(one)[0];
}

FunctionModel::FunctionModel(std::string name, std::size_t arity, Fn fn)
    : name_(std::move(name)), arity_(arity), fn_(std::move(fn)) {}

std::vector<double> FunctionModel::evaluate(const Matrix& inputs) {
    std::vector<double> out(inputs.rows());
    for (std::size_t i = 0; i < inputs.rows(); ++i) out[i] = fn_(inputs.row(i));
    return out;
}

// ---------------------------------------------------------------------------
// External process

namespace {

void write_all(int fd, const std::string& data) {
    std::size_t done = 0;
    while (done < data.size()) {
        const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw QueryError(std::string("write to adapter failed: ") + std::strerror(errno));
        }
        done += static_cast<std::size_t>(n);
    }
}

}  // namespace

std::unique_ptr<ExternalModel> connect_external(const LaunchSpec& spec) {
    if (spec.command.empty()) throw LaunchError("empty launch command");
    if (spec.batch_rows == 0) throw LaunchError("batch_rows must be positive");
    ::signal(SIGPIPE, SIG_IGN);

    int in_pipe[2];   // parent -> child stdin
    int out_pipe[2];  // child stdout -> parent
    if (::pipe2(in_pipe, O_CLOEXEC) != 0 || ::pipe2(out_pipe, O_CLOEXEC) != 0)
        throw LaunchError(std::string("pipe failed: ") + std::strerror(errno));

    const pid_t pid = ::fork();
    if (pid < 0) throw LaunchError(std::string("fork failed: ") + std::strerror(errno));
    if (pid == 0) {
        ::dup2(in_pipe[0], STDIN_FILENO);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        if (!spec.working_dir.empty() && ::chdir(spec.working_dir.c_str()) != 0) ::_exit(127);
        ::execl("/bin/sh", "sh", "-c", spec.command.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);

    std::unique_ptr<ExternalModel> model(new ExternalModel());
    model->pid_ = pid;
    model->to_child_ = in_pipe[1];
    model->from_child_ = out_pipe[0];
    model->batch_rows_ = spec.batch_rows;

    const auto deadline = std::chrono::steady_clock::now() + spec.handshake_timeout;
    json reply;
    try {
        model->send({{"type", "hello"}, {"version", 1}});
        reply = model->receive(deadline, 0);
    } catch (const QueryError& e) {
        throw LaunchError(std::string("handshake failed: ") + e.what());
    }
    if (!reply.is_object() || reply.value("type", "") != "ready")
        throw LaunchError("handshake failed: expected a ready message, got " + reply.dump());
    if (!reply.contains("p") || !reply["p"].is_number_integer() || reply["p"].get<long long>() <= 0)
        throw LaunchError("invalid schema: adapter advertised p=" + (reply.contains("p") ? reply["p"].dump() : "?"));
    model->arity_ = reply["p"].get<std::size_t>();
    model->name_ = reply.contains("name") && reply["name"].is_string() ? reply["name"].get<std::string>() : spec.command;
    return model;
}

ExternalModel::~ExternalModel() { shutdown(); }

int ExternalModel::shutdown() {
    if (pid_ < 0) return exit_status_;
    try {
        send({{"type", "bye"}});
    } catch (const Error&) {
    }
    ::close(to_child_);
    to_child_ = -1;
    int status = 0;
    pid_t done = 0;
    for (int i = 0; i < 200 && done == 0; ++i) {
        done = ::waitpid(pid_, &status, WNOHANG);
        if (done == 0) std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    if (done == 0) {
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
    }
    ::close(from_child_);
    from_child_ = -1;
    pid_ = -1;
    exit_status_ = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    return exit_status_;
}

void ExternalModel::send(const json& message) {
    if (to_child_ < 0) throw QueryError("adapter handle is closed");
    write_all(to_child_, message.dump() + "\n");
}

std::string ExternalModel::read_line(std::chrono::steady_clock::time_point deadline, std::size_t row_hint) {
    for (;;) {
        if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            return line;
        }
        const auto now = std::chrono::steady_clock::now();
        int wait_ms = -1;
        if (deadline != std::chrono::steady_clock::time_point::max()) {
            if (now >= deadline) throw QueryError("timed out waiting for adapter", row_hint);
            wait_ms = static_cast<int>(std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count()) + 1;
        }
        pollfd pfd{from_child_, POLLIN, 0};
        const int ready = ::poll(&pfd, 1, wait_ms);
        if (ready < 0) {
            if (errno == EINTR) continue;
            throw QueryError(std::string("poll failed: ") + std::strerror(errno), row_hint);
        }
        if (ready == 0) continue;
        char chunk[65536];
        const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw QueryError(std::string("read from adapter failed: ") + std::strerror(errno), row_hint);
        }
        if (n == 0) throw QueryError("adapter process exited", row_hint);
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

json ExternalModel::receive(std::chrono::steady_clock::time_point deadline, std::size_t row_hint) {
    const std::string line = read_line(deadline, row_hint);
    try {
        return json::parse(line);
    } catch (const json::parse_error&) {
        throw QueryError("protocol violation: malformed response line '" + line.substr(0, 200) + "'", row_hint);
    }
}

std::vector<double> ExternalModel::evaluate(const Matrix& inputs) {
    std::vector<double> out;
    out.reserve(inputs.rows());
    for (std::size_t start = 0; start < inputs.rows(); start += batch_rows_) {
        const std::size_t end = std::min(inputs.rows(), start + batch_rows_);
        json rows = json::array();
        for (std::size_t r = start; r < end; ++r) {
            auto row = inputs.row(r);
            for (std::size_t c = 0; c < row.size(); ++c)
                if (!std::isfinite(row[c])) throw QueryError("non-finite input value", r);
            rows.push_back(std::vector<double>(row.begin(), row.end()));
        }
        const long long id = next_id_++;
        send({{"type", "predict"}, {"id", id}, {"inputs", std::move(rows)}});
        const json reply = receive(std::chrono::steady_clock::time_point::max(), start);
        if (!reply.is_object()) throw QueryError("protocol violation: reply is not an object", start);
        const std::string type = reply.value("type", "");
        if (type == "error")
            throw QueryError("adapter error: " + reply.value("message", std::string("(no message)")), start);
        if (type != "outputs") throw QueryError("protocol violation: unexpected reply type '" + type + "'", start);
        if (!reply.contains("id") || reply["id"] != id)
            throw QueryError("protocol violation: reply id does not match request id " + std::to_string(id), start);
        const auto& values = reply.contains("outputs") ? reply["outputs"] : json();
        if (!values.is_array() || values.size() != end - start)
            throw QueryError("protocol violation: outputs length does not match request", start);
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (!values[i].is_number()) throw QueryError("protocol violation: non-numeric output", start + i);
            out.push_back(values[i].get<double>());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Schema

const char* to_string(FieldKind kind) { return kind == FieldKind::dense ? "dense" : "sparse"; }

const char* to_string(OffRule rule) {
    switch (rule) {
        case OffRule::zero_embedding: return "zero-embedding";
        case OffRule::batch_mean: return "batch-mean";
        case OffRule::fixed_value: return "fixed-value";
        case OffRule::resample_other: return "resample-other";
    }
    return "?";
}

OffRule off_rule_from_string(const std::string& s) {
    if (s == "zero-embedding") return OffRule::zero_embedding;
    if (s == "batch-mean") return OffRule::batch_mean;
    if (s == "fixed-value") return OffRule::fixed_value;
    if (s == "resample-other") return OffRule::resample_other;
    throw SchemaError("unknown off-state rule '" + s + "'");
}

void FeatureSchema::validate() const {
    if (fields.empty()) throw SchemaError("schema has no fields");
    if (raw_arity == 0) throw SchemaError("schema has zero raw dimensions");
    std::vector<int> owner(raw_arity, -1);
    std::set<std::string> names;
    for (std::size_t f = 0; f < fields.size(); ++f) {
        const Field& field = fields[f];
        if (!names.insert(field.name).second) throw SchemaError("duplicate field name '" + field.name + "'");
        if (field.dims.empty()) throw SchemaError("field '" + field.name + "' owns no raw dimensions");
        if (field.kind == FieldKind::sparse && field.vocabulary.empty())
            throw SchemaError("sparse field '" + field.name + "' has an empty vocabulary");
        for (std::size_t dim : field.dims) {
            if (dim >= raw_arity) throw SchemaError("field '" + field.name + "' references dimension out of range");
            if (owner[dim] != -1) throw SchemaError("raw dimension " + std::to_string(dim) + " owned twice");
            owner[dim] = static_cast<int>(f);
        }
    }
    for (std::size_t dim = 0; dim < raw_arity; ++dim)
        if (owner[dim] == -1) throw SchemaError("raw dimension " + std::to_string(dim) + " belongs to no field");
}

std::size_t FeatureSchema::index_of(const std::string& field_name) const {
    for (std::size_t i = 0; i < fields.size(); ++i)
        if (fields[i].name == field_name) return i;
    throw SchemaError("unknown field '" + field_name + "'");
}

FeatureSchema FeatureSchema::all_dense(std::size_t p) {
    FeatureSchema schema;
    schema.raw_arity = p;
    for (std::size_t i = 0; i < p; ++i) schema.fields.push_back({"x" + std::to_string(i + 1), FieldKind::dense, {}, {i}});
    return schema;
}

void to_json(json& j, const FeatureSchema& schema) {
    j = json::object();
    j["raw_arity"] = schema.raw_arity;
    j["fields"] = json::array();
    for (const Field& f : schema.fields) {
        json jf{{"name", f.name}, {"kind", to_string(f.kind)}, {"dims", f.dims}};
        if (f.kind == FieldKind::sparse) jf["vocabulary"] = f.vocabulary;
        j["fields"].push_back(std::move(jf));
    }
}

void from_json(const json& j, FeatureSchema& schema) {
    schema = {};
    if (!j.contains("fields") || !j["fields"].is_array()) throw SchemaError("schema JSON needs a 'fields' array");
    std::size_t next_dim = 0;
    for (const auto& jf : j["fields"]) {
        Field f;
        f.name = jf.at("name").get<std::string>();
        const std::string kind = jf.value("kind", "dense");
        if (kind == "dense")
            f.kind = FieldKind::dense;
        else if (kind == "sparse")
            f.kind = FieldKind::sparse;
        else
            throw SchemaError("field '" + f.name + "' has unknown kind '" + kind + "'");
        if (jf.contains("vocabulary")) f.vocabulary = jf["vocabulary"].get<std::vector<std::string>>();
        if (jf.contains("dims"))
            f.dims = jf["dims"].get<std::vector<std::size_t>>();
        else
            f.dims = {next_dim};
        for (std::size_t d : f.dims) next_dim = std::max(next_dim, d + 1);
        schema.fields.push_back(std::move(f));
    }
    schema.raw_arity = j.contains("raw_arity") ? j["raw_arity"].get<std::size_t>() : next_dim;
    schema.validate();
}

}  // namespace madex
