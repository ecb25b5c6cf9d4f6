#include <Eigen/Dense>

#include "madex/error.hpp"
#include "madex/neuralnet.hpp"

namespace madex {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void design_row(std::span<const double> x, std::span<const std::vector<std::size_t>> interactions,
                Eigen::Ref<Eigen::RowVectorXd> out) {
    out(0) = 1.0;
    for (std::size_t i = 0; i < x.size(); ++i) out(1 + static_cast<Eigen::Index>(i)) = x[i];
    for (std::size_t j = 0; j < interactions.size(); ++j) {
        double prod = 1.0;
        for (std::size_t f : interactions[j]) prod *= x[f];
        out(1 + static_cast<Eigen::Index>(x.size() + j)) = prod;
    }
}

}  // namespace

double GlmResult::predict(std::span<const double> x) const {
    double y = intercept;
    for (std::size_t i = 0; i < linear.size(); ++i) y += linear[i] * x[i];
    for (std::size_t j = 0; j < products.size(); ++j) {
        double prod = 1.0;
        for (std::size_t f : interactions[j]) prod *= x[f];
        y += products[j] * prod;
    }
    return y;
}

GlmResult train_glm_with_products(const PerturbationDataset& data,
                                  std::span<const std::vector<std::size_t>> interactions) {
    const std::size_t d = data.inputs.cols();
    for (const auto& inter : interactions)
        for (std::size_t f : inter)
            if (f >= d) throw Error("glm", "interaction index " + std::to_string(f) + " out of range");
    const std::size_t n = data.splits.train;
    if (n == 0) throw Error("glm", "empty train split");
    const auto cols = static_cast<Eigen::Index>(1 + d + interactions.size());

    RowMatrix design(static_cast<Eigen::Index>(n), cols);
    Eigen::VectorXd target(static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < n; ++r) {
        design_row(data.inputs.row(r), interactions, design.row(static_cast<Eigen::Index>(r)));
        target(static_cast<Eigen::Index>(r)) = data.labels[r];
    }
    Eigen::VectorXd w = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
    if (data.weighted())
        for (std::size_t r = 0; r < n; ++r) w(static_cast<Eigen::Index>(r)) = data.weights[r];

    const Eigen::VectorXd sqrt_w = w.cwiseSqrt();
    const Eigen::MatrixXd weighted = sqrt_w.asDiagonal() * design;
    Eigen::MatrixXd gram = weighted.transpose() * weighted;
    gram.diagonal().array() += kGlmRidge;
    const Eigen::VectorXd rhs = weighted.transpose() * (sqrt_w.asDiagonal() * target);
    const Eigen::VectorXd beta = gram.ldlt().solve(rhs);

    GlmResult result;
    result.rank_deficient = Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(weighted).rank() < cols;
    result.intercept = beta(0);
    for (std::size_t i = 0; i < d; ++i) result.linear.push_back(beta(1 + static_cast<Eigen::Index>(i)));
    for (std::size_t j = 0; j < interactions.size(); ++j)
        result.products.push_back(beta(1 + static_cast<Eigen::Index>(d + j)));
    result.interactions.assign(interactions.begin(), interactions.end());

    auto mse = [&](std::size_t begin, std::size_t end) {
        double num = 0.0, den = 0.0;
        for (std::size_t r = begin; r < end; ++r) {
            const double res = result.predict(data.inputs.row(r)) - data.labels[r];
            num += data.weight(r) * res * res;
            den += data.weight(r);
        }
        return den > 0.0 ? num / den : 0.0;
    };
    result.train_mse = mse(0, n);
    result.val_mse = mse(data.val_begin(), data.val_begin() + data.splits.val);
    result.test_mse = mse(data.test_begin(), data.test_begin() + data.splits.test);
    return result;
}

}  // namespace madex
