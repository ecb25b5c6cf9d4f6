#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace madex {

/// Base of every error the library throws. `stage` names the pipeline step
/// (query, perturb, train, detect, cross, ...) so the CLI can tag messages.
class Error : public std::runtime_error {
public:
    Error(std::string stage, const std::string& message)
        : std::runtime_error(message), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

/// Black-box query failure. `row` is the offending input row when known.
class QueryError : public Error {
public:
    explicit QueryError(const std::string& message, std::optional<std::size_t> row = std::nullopt)
        : Error("query", row ? message + " (row " + std::to_string(*row) + ")" : message), row_(row) {}
    std::optional<std::size_t> row() const { return row_; }

private:
    std::optional<std::size_t> row_;
};

class LaunchError : public Error {
public:
    explicit LaunchError(const std::string& message) : Error("launch", message) {}
};

class SchemaError : public Error {
public:
    explicit SchemaError(const std::string& message) : Error("schema", message) {}
};

class TrainingError : public Error {
public:
    TrainingError(const std::string& message, std::size_t epoch)
        : Error("train", message + " at epoch " + std::to_string(epoch)), epoch_(epoch) {}
    std::size_t epoch() const { return epoch_; }

private:
    std::size_t epoch_;
};

}  // namespace madex
