#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>

#include "madex/blackbox.hpp"
#include "madex/error.hpp"

using namespace madex;
using namespace std::chrono_literals;

namespace {

std::unique_ptr<ExternalModel> launch(const std::string& args, std::size_t batch_rows = 1000,
                                      std::chrono::milliseconds timeout = 30s) {
    LaunchSpec spec;
    spec.command = std::string(MADEX_TEST_ADAPTER) + " " + args;
    spec.batch_rows = batch_rows;
    spec.handshake_timeout = timeout;
    return connect_external(spec);
}

Matrix ones(std::size_t rows, std::size_t cols) { return Matrix(rows, cols, 1.0); }

}  // namespace

TEST(FunctionModel, PredictsInOrder) {
    FunctionModel f("sum", 3, [](std::span<const double> x) { return x[0] + 2 * x[1] + 3 * x[2]; });
    Matrix in(2, 3);
    in(0, 0) = 1;
    in(1, 2) = 1;
    EXPECT_EQ(f.predict_batch(in), (std::vector<double>{1.0, 3.0}));
    EXPECT_TRUE(f.concurrent_safe());
}

TEST(FunctionModel, RejectsWrongArity) {
    FunctionModel f("sum", 3, [](std::span<const double>) { return 0.0; });
    EXPECT_THROW(f.predict_batch(ones(2, 4)), QueryError);
}

TEST(FunctionModel, NonFiniteOutputNamesTheRow) {
    FunctionModel f("nan", 1, [](std::span<const double> x) { return x[0] > 0.5 ? std::nan("") : 0.0; });
    Matrix in(3, 1);
    in(2, 0) = 1.0;
    try {
        f.predict_batch(in);
        FAIL() << "expected QueryError";
    } catch (const QueryError& e) {
        ASSERT_TRUE(e.row().has_value());
        EXPECT_EQ(*e.row(), 2u);
    }
}

TEST(ExternalModel, HandshakeAndF1AtAllOnes) {
    auto model = launch("f1");
    EXPECT_EQ(model->arity(), 10u);
    EXPECT_EQ(model->name(), "test-f1");
    EXPECT_DOUBLE_EQ(model->predict(std::vector<double>(10, 1.0)), 18.0);
    EXPECT_EQ(model->shutdown(), 0);
}

TEST(ExternalModel, SplitsLargeBatchesIntoChunks) {
    const auto log = std::filesystem::temp_directory_path() / ("madex_batches_" + std::to_string(::getpid()));
    std::filesystem::remove(log);
    auto model = launch("additive 3 " + log.string());
    const auto out = model->predict_batch(ones(2500, 3));
    ASSERT_EQ(out.size(), 2500u);
    for (double y : out) EXPECT_DOUBLE_EQ(y, 3.0);
    EXPECT_EQ(model->shutdown(), 0);
    std::ifstream in(log);
    std::vector<int> sizes;
    for (int n; in >> n;) sizes.push_back(n);
    EXPECT_EQ(sizes, (std::vector<int>{1000, 1000, 500}));
    std::filesystem::remove(log);
}

TEST(ExternalModel, CustomBatchRows) {
    auto model = launch("additive 2", 7);
    const auto out = model->predict_batch(ones(20, 2));
    EXPECT_EQ(out.size(), 20u);
}

TEST(ExternalModel, EarlyExitIsALaunchError) { EXPECT_THROW(launch("exit"), LaunchError); }

TEST(ExternalModel, MissingCommandIsALaunchError) {
    LaunchSpec spec;
    spec.command = "/nonexistent/adapter";
    EXPECT_THROW(connect_external(spec), LaunchError);
}

TEST(ExternalModel, ZeroArityIsInvalidSchema) {
    try {
        launch("p0");
        FAIL() << "expected LaunchError";
    } catch (const LaunchError& e) {
        EXPECT_NE(std::string(e.what()).find("invalid schema"), std::string::npos) << e.what();
    }
}

TEST(ExternalModel, HandshakeTimeout) {
    const auto start = std::chrono::steady_clock::now();
    EXPECT_THROW(launch("silent", 1000, 300ms), LaunchError);
    EXPECT_LT(std::chrono::steady_clock::now() - start, 5s);
}

TEST(ExternalModel, MalformedReplyIsAProtocolViolation) {
    auto model = launch("bad-json 3");
    try {
        model->predict_batch(ones(2, 3));
        FAIL() << "expected QueryError";
    } catch (const QueryError& e) {
        EXPECT_NE(std::string(e.what()).find("protocol violation"), std::string::npos) << e.what();
    }
}

TEST(ExternalModel, NullOutputIsRejected) {
    auto model = launch("null 3");
    try {
        model->predict_batch(ones(4, 3));
        FAIL() << "expected QueryError";
    } catch (const QueryError& e) {
        ASSERT_TRUE(e.row().has_value());
        EXPECT_EQ(*e.row(), 0u);
    }
}

TEST(ExternalModel, ShortReplyIsRejected) {
    auto model = launch("short 3");
    EXPECT_THROW(model->predict_batch(ones(4, 3)), QueryError);
}

TEST(ExternalModel, MismatchedIdIsRejected) {
    auto model = launch("wrong-id 3");
    EXPECT_THROW(model->predict_batch(ones(4, 3)), QueryError);
}

TEST(ExternalModel, ErrorReplyKeepsTheHandleUsable) {
    auto model = launch("error 3");
    for (int i = 0; i < 2; ++i) {
        try {
            model->predict_batch(ones(1, 3));
            FAIL() << "expected QueryError";
        } catch (const QueryError& e) {
            EXPECT_NE(std::string(e.what()).find("model unavailable"), std::string::npos);
        }
    }
    EXPECT_EQ(model->shutdown(), 0);
}

TEST(ExternalModel, CrashDuringPredictIsAQueryError) {
    auto model = launch("crash 3");
    EXPECT_THROW(model->predict_batch(ones(1, 3)), QueryError);
    EXPECT_EQ(model->shutdown(), 5);
}

TEST(ExternalModel, ShutdownIsIdempotent) {
    auto model = launch("additive 3");
    EXPECT_EQ(model->shutdown(), 0);
    EXPECT_EQ(model->shutdown(), 0);
    EXPECT_THROW(model->predict_batch(ones(1, 3)), QueryError);
}

TEST(FeatureSchema, JsonRoundTrip) {
    nlohmann::json j = nlohmann::json::parse(R"({"fields":[
        {"name":"age","kind":"dense"},
        {"name":"city","kind":"sparse","vocabulary":["a","b"],"dims":[1,2]}]})");
    const FeatureSchema s = j.get<FeatureSchema>();
    EXPECT_EQ(s.raw_arity, 3u);
    EXPECT_EQ(s.fields[1].dims, (std::vector<std::size_t>{1, 2}));
    const FeatureSchema back = nlohmann::json(s).get<FeatureSchema>();
    EXPECT_EQ(back.fields.size(), 2u);
    EXPECT_EQ(back.index_of("city"), 1u);
}

TEST(FeatureSchema, RejectsBrokenSchemas) {
    FeatureSchema s = FeatureSchema::all_dense(3);
    s.validate();
    s.fields[1].dims = {0};
    EXPECT_THROW(s.validate(), SchemaError);
    FeatureSchema sparse = FeatureSchema::all_dense(1);
    sparse.fields[0].kind = FieldKind::sparse;
    EXPECT_THROW(sparse.validate(), SchemaError);
    EXPECT_THROW(FeatureSchema{}.validate(), SchemaError);
    EXPECT_THROW(FeatureSchema::all_dense(2).index_of("nope"), SchemaError);
}
