#include "madex/neuralnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "madex/error.hpp"
#include "madex/kernels.hpp"

namespace madex {

using json = nlohmann::json;

const char* to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::softplus: return "softplus";
        case Activation::square: return "square";
    }
    return "?";
}

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "softplus") return Activation::softplus;
    if (s == "square") return Activation::square;
    throw Error("train", "unknown activation '" + s + "'");
}

void NetConfig::validate() const {
    for (std::size_t w : hidden)
        if (w == 0) throw Error("train", "hidden widths must be at least 1");
    if (hidden.empty()) throw Error("train", "at least one hidden layer is required");
    if (!std::isfinite(l1) || l1 < 0.0) throw Error("train", "l1 strength must be finite and nonnegative");
    if (!(learning_rate > 0.0)) throw Error("train", "learning rate must be positive");
    if (batch_size == 0) throw Error("train", "batch size must be positive");
    if (max_epochs == 0) throw Error("train", "max_epochs must be positive");
    if (patience == 0) throw Error("train", "patience must be at least 1");
}

NetConfig NetConfig::nid(std::uint64_t seed) {
    NetConfig c;
    c.activation = Activation::relu;
    c.l1 = 1e-4;
    c.seed = seed;
    return c;
}

NetConfig NetConfig::gradient_nid(std::uint64_t seed) {
    NetConfig c;
    c.activation = Activation::softplus;
    c.l1 = 0.0;
    c.linear_branch = true;
    c.seed = seed;
    return c;
}

void to_json(json& j, const NetConfig& c) {
    j = json{{"hidden", c.hidden},         {"activation", to_string(c.activation)},
             {"l1", c.l1},                 {"learning_rate", c.learning_rate},
             {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
             {"patience", c.patience},     {"linear_branch", c.linear_branch},
             {"seed", c.seed},             {"adam", {c.beta1, c.beta2, c.epsilon}}};
}

void from_json(const json& j, NetConfig& c) {
    c = NetConfig{};
    c.hidden = j.value("hidden", c.hidden);
    c.activation = activation_from_string(j.value("activation", std::string("relu")));
    c.l1 = j.value("l1", c.l1);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.linear_branch = j.value("linear_branch", c.linear_branch);
    c.seed = j.value("seed", c.seed);
    if (j.contains("adam")) {
        c.beta1 = j["adam"][0];
        c.beta2 = j["adam"][1];
        c.epsilon = j["adam"][2];
    }
}

namespace {

// ---------------------------------------------------------------------------
// Activation helpers

inline double act(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::softplus: return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        case Activation::square: return z * z;
    }
    return 0.0;
}

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double act_d1(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::softplus: return sigmoid(z);
        case Activation::square: return 2.0 * z;
    }
    return 0.0;
}

inline double act_d2(Activation a, double z) {
    switch (a) {
        case Activation::relu: return 0.0;
        case Activation::softplus: {
            const double s = sigmoid(z);
            return s * (1.0 - s);
        }
        case Activation::square: return 2.0;
    }
    return 0.0;
}

bool is_identity(const std::vector<std::size_t>& features, std::size_t d) {
    if (features.size() != d) return false;
    for (std::size_t i = 0; i < d; ++i)
        if (features[i] != i) return false;
    return true;
}

MlpBranch make_branch(const std::vector<std::size_t>& features, const std::vector<std::size_t>& hidden,
                      std::mt19937_64& rng) {
    MlpBranch branch;
    branch.features = features;
    std::size_t fan_in = features.size();
    std::vector<std::size_t> widths = hidden;
    widths.push_back(1);
    for (std::size_t w : widths) {
        DenseLayer layer;
        layer.weight = Matrix(fan_in, w);
        layer.bias.assign(w, 0.0);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& v : layer.weight.values()) v = dist(rng);
        branch.layers.push_back(std::move(layer));
        fan_in = w;
    }
    return branch;
}

// Enumerates every parameter tensor in a fixed order.
template <typename Net, typename F>
void for_each_tensor(Net& net, F&& f) {
    for (auto& branch : net.branches) {
        for (auto& layer : branch.layers) {
            f(std::span(layer.weight.values()));
            f(std::span(layer.bias));
        }
    }
    if (net.linear) {
        f(std::span(net.linear->weights));
        f(std::span(&net.linear->bias, 1));
    }
}

// ---------------------------------------------------------------------------
// Batched forward/backward

struct BranchWork {
    Matrix input;               // gathered branch inputs (rows x |features|)
    std::vector<Matrix> pre;    // pre-activations per layer
    std::vector<Matrix> post;   // activations per hidden layer
    Matrix scratch_t;           // transposes
    Matrix delta, delta_prev;
};

struct Workspace {
    std::vector<BranchWork> branches;
    std::vector<double> output;
};

const Matrix& branch_input(const MlpBranch& branch, const Matrix& x, BranchWork& work) {
    if (is_identity(branch.features, x.cols())) return x;
    work.input.resize(x.rows(), branch.features.size());
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t k = 0; k < branch.features.size(); ++k) work.input(r, k) = x(r, branch.features[k]);
    return work.input;
}

void transpose_into(const Matrix& src, Matrix& dst) {
    if (dst.rows() != src.cols() || dst.cols() != src.rows()) dst.resize(src.cols(), src.rows());
    for (std::size_t r = 0; r < src.rows(); ++r)
        for (std::size_t c = 0; c < src.cols(); ++c) dst(c, r) = src(r, c);
}

void activate(Activation a, const Matrix& pre, Matrix& post) {
    if (post.rows() != pre.rows() || post.cols() != pre.cols()) post.resize(pre.rows(), pre.cols());
    const std::size_t n = pre.values().size();
    if (a == Activation::relu) {
        kernels::active().relu(pre.data(), post.data(), n);
        return;
    }
    for (std::size_t i = 0; i < n; ++i) post.data()[i] = act(a, pre.data()[i]);
}

/// Adds the branch output for every row of x into `out`.
void forward_branch(const MlpBranch& branch, Activation a, const Matrix& x, BranchWork& work,
                    std::vector<double>& out) {
    const auto& k = kernels::active();
    const std::size_t rows = x.rows();
    const std::size_t nl = branch.layers.size();
    work.pre.resize(nl);
    work.post.resize(nl - 1);
    const Matrix* in = &branch_input(branch, x, work);
    for (std::size_t l = 0; l < nl; ++l) {
        const DenseLayer& layer = branch.layers[l];
        Matrix& z = work.pre[l];
        if (z.rows() != rows || z.cols() != layer.weight.cols()) z.resize(rows, layer.weight.cols());
        k.set_rows(z.data(), rows, z.cols(), layer.bias.data());
        k.gemm(rows, z.cols(), in->cols(), in->data(), in->cols(), layer.weight.data(), layer.weight.cols(), z.data(),
               z.cols());
        if (l + 1 < nl) {
            activate(a, z, work.post[l]);
            in = &work.post[l];
        }
    }
    const Matrix& y = work.pre[nl - 1];
    for (std::size_t r = 0; r < rows; ++r) out[r] += y(r, 0);
}

/// Accumulates parameter gradients of sum_r d_out[r] * branch(x_r) into grad.
/// When input_grad is given, also accumulates d/dx into it (rows x d).
void backward_branch(const MlpBranch& branch, Activation a, const Matrix& x, std::span<const double> d_out,
                     BranchWork& work, MlpBranch& grad, Matrix* input_grad) {
    const auto& k = kernels::active();
    const std::size_t rows = x.rows();
    const std::size_t nl = branch.layers.size();
    const Matrix& in0 = is_identity(branch.features, x.cols()) ? x : work.input;

    work.delta.resize(rows, 1);
    std::copy(d_out.begin(), d_out.end(), work.delta.data());
    for (std::size_t li = nl; li-- > 0;) {
        const DenseLayer& layer = branch.layers[li];
        DenseLayer& g = grad.layers[li];
        const Matrix& in = li == 0 ? in0 : work.post[li - 1];
        // dW += in^T * delta
        transpose_into(in, work.scratch_t);
        k.gemm(in.cols(), layer.weight.cols(), rows, work.scratch_t.data(), rows, work.delta.data(),
               work.delta.cols(), g.weight.data(), g.weight.cols());
        k.column_sums(work.delta.data(), rows, work.delta.cols(), g.bias.data());
        if (li == 0 && input_grad == nullptr) break;
        // d(in) = delta * W^T
        transpose_into(layer.weight, work.scratch_t);
        work.delta_prev.resize(rows, in.cols());
        k.gemm(rows, in.cols(), layer.weight.cols(), work.delta.data(), work.delta.cols(), work.scratch_t.data(),
               work.scratch_t.cols(), work.delta_prev.data(), work.delta_prev.cols());
        if (li == 0) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t f = 0; f < branch.features.size(); ++f)
                    (*input_grad)(r, branch.features[f]) += work.delta_prev(r, f);
            break;
        }
        const Matrix& z = work.pre[li - 1];
        if (a == Activation::relu) {
            k.relu_mask(work.delta_prev.data(), z.data(), z.values().size());
        } else {
            for (std::size_t i = 0; i < z.values().size(); ++i) work.delta_prev.data()[i] *= act_d1(a, z.data()[i]);
        }
        std::swap(work.delta, work.delta_prev);
    }
}

void forward_all(const SurrogateNet& net, const Matrix& x, Workspace& ws) {
    ws.output.assign(x.rows(), 0.0);
    ws.branches.resize(net.branches.size());
    for (std::size_t b = 0; b < net.branches.size(); ++b)
        forward_branch(net.branches[b], net.activation, x, ws.branches[b], ws.output);
    if (net.linear) {
        const auto& k = kernels::active();
        for (std::size_t r = 0; r < x.rows(); ++r)
            ws.output[r] += k.dot(net.linear->weights.data(), x.row(r).data(), x.cols()) + net.linear->bias;
    }
}

void backward_all(const SurrogateNet& net, const Matrix& x, std::span<const double> d_out, Workspace& ws,
                  SurrogateNet& grad, Matrix* input_grad) {
    for (std::size_t b = 0; b < net.branches.size(); ++b)
        backward_branch(net.branches[b], net.activation, x, d_out, ws.branches[b], grad.branches[b], input_grad);
    if (net.linear) {
        for (std::size_t r = 0; r < x.rows(); ++r) {
            for (std::size_t c = 0; c < x.cols(); ++c) grad.linear->weights[c] += d_out[r] * x(r, c);
            grad.linear->bias += d_out[r];
        }
        if (input_grad)
            for (std::size_t r = 0; r < x.rows(); ++r)
                for (std::size_t c = 0; c < x.cols(); ++c) (*input_grad)(r, c) += d_out[r] * net.linear->weights[c];
    }
}

SurrogateNet zeros_like(const SurrogateNet& net) {
    SurrogateNet z;
    z.input_dim = net.input_dim;
    z.activation = net.activation;
    z.branches = net.branches;
    z.linear = net.linear;
    for_each_tensor(z, [](std::span<double> t) { std::fill(t.begin(), t.end(), 0.0); });
    return z;
}

void check_arity(const SurrogateNet& net, std::size_t cols) {
    if (cols != net.input_dim)
        throw Error("forward", "input arity " + std::to_string(cols) + " does not match network input dimension " +
                                   std::to_string(net.input_dim));
}

constexpr std::size_t kEvalChunk = 512;

}  // namespace

// ---------------------------------------------------------------------------
// SurrogateNet

std::vector<double> SurrogateNet::forward(const Matrix& inputs) const {
    check_arity(*this, inputs.cols());
    std::vector<double> out;
    out.reserve(inputs.rows());
    Workspace ws;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < inputs.rows(); start += kEvalChunk) {
        const std::size_t end = std::min(inputs.rows(), start + kEvalChunk);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Matrix chunk = inputs.select_rows(idx);
        forward_all(*this, chunk, ws);
        out.insert(out.end(), ws.output.begin(), ws.output.end());
    }
    return out;
}

double SurrogateNet::predict(std::span<const double> x) const {
    Matrix one(1, x.size());
    std::copy(x.begin(), x.end(), one.row(0).begin());
    return forward(one)[0];
}

std::size_t SurrogateNet::parameter_count() const {
    std::size_t n = 0;
    for_each_tensor(*this, [&](std::span<const double> t) { n += t.size(); });
    return n;
}

std::vector<double> SurrogateNet::flat_parameters() const {
    std::vector<double> flat;
    for_each_tensor(*this, [&](std::span<const double> t) { flat.insert(flat.end(), t.begin(), t.end()); });
    return flat;
}

void SurrogateNet::set_flat_parameters(std::span<const double> values) {
    if (values.size() != parameter_count()) throw Error("train", "flat parameter vector has the wrong length");
    std::size_t pos = 0;
    for_each_tensor(*this, [&](std::span<double> t) {
        std::copy(values.begin() + static_cast<std::ptrdiff_t>(pos),
                  values.begin() + static_cast<std::ptrdiff_t>(pos + t.size()), t.begin());
        pos += t.size();
    });
}

void to_json(json& j, const SurrogateNet& net) {
    j = json::object();
    j["input_dim"] = net.input_dim;
    j["activation"] = to_string(net.activation);
    j["config"] = net.config;
    j["branches"] = json::array();
    for (const MlpBranch& b : net.branches) {
        json jb{{"features", b.features}, {"layers", json::array()}};
        for (const DenseLayer& l : b.layers)
            jb["layers"].push_back({{"rows", l.weight.rows()},
                                    {"cols", l.weight.cols()},
                                    {"weight", l.weight.values()},
                                    {"bias", l.bias}});
        j["branches"].push_back(std::move(jb));
    }
    if (net.linear) j["linear"] = {{"weights", net.linear->weights}, {"bias", net.linear->bias}};
    json log{{"trained", net.log.trained},
             {"best_epoch", net.log.best_epoch},
             {"best_val_mse", net.log.best_val_mse},
             {"snapshot_train_mse", net.log.snapshot_train_mse},
             {"epochs", json::array()}};
    for (const EpochRecord& e : net.log.epochs) log["epochs"].push_back({e.epoch, e.train_loss, e.val_mse});
    j["log"] = std::move(log);
}

void from_json(const json& j, SurrogateNet& net) {
    net = SurrogateNet{};
    net.input_dim = j.at("input_dim");
    net.activation = activation_from_string(j.at("activation"));
    if (j.contains("config")) net.config = j["config"].get<NetConfig>();
    for (const auto& jb : j.at("branches")) {
        MlpBranch b;
        b.features = jb.at("features").get<std::vector<std::size_t>>();
        for (const auto& jl : jb.at("layers")) {
            DenseLayer l;
            l.weight = Matrix(jl.at("rows"), jl.at("cols"));
            l.weight.values() = jl.at("weight").get<std::vector<double>>();
            l.bias = jl.at("bias").get<std::vector<double>>();
            if (l.weight.values().size() != l.weight.rows() * l.weight.cols() || l.bias.size() != l.weight.cols())
                throw Error("io", "network layer shape mismatch");
            b.layers.push_back(std::move(l));
        }
        net.branches.push_back(std::move(b));
    }
    if (j.contains("linear"))
        net.linear = LinearBranch{j["linear"].at("weights").get<std::vector<double>>(), j["linear"].at("bias")};
    if (j.contains("log")) {
        const auto& log = j["log"];
        net.log.trained = log.value("trained", false);
        net.log.best_epoch = log.value("best_epoch", std::size_t{0});
        net.log.best_val_mse = log.value("best_val_mse", 0.0);
        net.log.snapshot_train_mse = log.value("snapshot_train_mse", 0.0);
        for (const auto& e : log.value("epochs", json::array()))
            net.log.epochs.push_back({e[0].get<std::size_t>(), e[1].get<double>(), e[2].get<double>()});
    }
}

SurrogateNet make_net(const NetConfig& config, std::size_t input_dim) {
    std::vector<std::size_t> all(input_dim);
    std::iota(all.begin(), all.end(), 0);
    const std::vector<std::vector<std::size_t>> subsets{all};
    return make_additive_net(config, input_dim, subsets);
}

SurrogateNet make_additive_net(const NetConfig& config, std::size_t input_dim,
                               std::span<const std::vector<std::size_t>> subsets) {
    config.validate();
    if (input_dim == 0) throw Error("train", "network needs at least one input");
    SurrogateNet net;
    net.input_dim = input_dim;
    net.activation = config.activation;
    net.config = config;
    std::mt19937_64 rng(config.seed ^ 0x5851f42d4c957f2dULL);
    for (const auto& subset : subsets) {
        if (subset.empty()) throw Error("train", "branch with no input features");
        for (std::size_t f : subset)
            if (f >= input_dim) throw Error("train", "branch feature index out of range");
        net.branches.push_back(make_branch(subset, config.hidden, rng));
    }
    if (config.linear_branch) net.linear = LinearBranch{std::vector<double>(input_dim, 0.0), 0.0};
    return net;
}

// ---------------------------------------------------------------------------
// Training

double evaluate_mse(const SurrogateNet& net, const PerturbationDataset& data, std::size_t begin, std::size_t end) {
    if (end <= begin) return 0.0;
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const auto pred = net.forward(data.inputs.select_rows(idx));
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const double w = data.weight(begin + i);
        const double r = pred[i] - data.labels[begin + i];
        num += w * r * r;
        den += w;
    }
    return num / den;
}

SurrogateNet train(const NetConfig& config, const PerturbationDataset& data) {
    return train(make_net(config, data.inputs.cols()), config, data);
}

SurrogateNet train(SurrogateNet net, const NetConfig& config, const PerturbationDataset& data) {
    config.validate();
    if (data.splits.train == 0 || data.splits.val == 0) throw Error("train", "train and validation splits must be nonempty");
    if (data.labels.size() != data.rows() || data.rows() < data.splits.total())
        throw Error("train", "dataset shape is inconsistent");
    check_arity(net, data.inputs.cols());
    net.config = config;

    const auto& k = kernels::active();
    const std::size_t d = data.inputs.cols();
    const std::size_t n_train = data.splits.train;
    const std::size_t batch = std::min(config.batch_size, n_train);

    std::vector<std::vector<double>> adam_m, adam_v;
    for_each_tensor(net, [&](std::span<const double> t) {
        adam_m.emplace_back(t.size(), 0.0);
        adam_v.emplace_back(t.size(), 0.0);
    });

    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);

    SurrogateNet grad = zeros_like(net);
    SurrogateNet best = net;
    Workspace ws;
    Matrix xb;
    std::vector<double> d_out;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    std::uint64_t step = 0;
    TrainingLog log;

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n_train; start += batch) {
            const std::size_t end = std::min(n_train, start + batch);
            const std::size_t rows = end - start;
            xb.resize(rows, d);
            for (std::size_t r = 0; r < rows; ++r) {
                auto src = data.inputs.row(order[start + r]);
                std::copy(src.begin(), src.end(), xb.row(r).begin());
            }
            forward_all(net, xb, ws);
            double wsum = 0.0;
            for (std::size_t r = 0; r < rows; ++r) wsum += data.weight(order[start + r]);
            d_out.resize(rows);
            double loss = 0.0;
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t row = order[start + r];
                const double w = data.weight(row);
                const double res = ws.output[r] - data.labels[row];
                loss += w * res * res;
                d_out[r] = 2.0 * w * res / wsum;
            }
            loss /= wsum;
            loss_sum += loss * static_cast<double>(rows);
            if (!std::isfinite(loss)) throw TrainingError("loss became non-finite", epoch);

            for_each_tensor(grad, [](std::span<double> t) { std::fill(t.begin(), t.end(), 0.0); });
            backward_all(net, xb, d_out, ws, grad, nullptr);
            if (config.l1 > 0.0) {
                for (std::size_t b = 0; b < net.branches.size(); ++b) {
                    const auto& w = net.branches[b].layers.front().weight.values();
                    auto& g = grad.branches[b].layers.front().weight.values();
                    for (std::size_t i = 0; i < w.size(); ++i)
                        g[i] += config.l1 * static_cast<double>((w[i] > 0.0) - (w[i] < 0.0));
                }
            }

            ++step;
            const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
            const double bc2 = std::sqrt(1.0 - std::pow(config.beta2, static_cast<double>(step)));
            const double step_size = config.learning_rate * bc2 / bc1;
            const double eps = config.epsilon * bc2;
            std::vector<std::span<double>> grads;
            for_each_tensor(grad, [&](std::span<double> t) { grads.push_back(t); });
            std::size_t ti = 0;
            for_each_tensor(net, [&](std::span<double> t) {
                k.adam(t.data(), grads[ti].data(), adam_m[ti].data(), adam_v[ti].data(), t.size(), step_size,
                       config.beta1, config.beta2, eps);
                ++ti;
            });
        }

        const double train_loss = loss_sum / static_cast<double>(n_train);
        const double val = evaluate_mse(net, data, data.val_begin(), data.val_begin() + data.splits.val);
        if (!std::isfinite(val)) throw TrainingError("validation loss became non-finite", epoch);
        log.epochs.push_back({epoch, train_loss, val});
        if (val < best_val) {
            best_val = val;
            best = net;
            log.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }

    best.config = config;
    log.best_val_mse = best_val;
    log.trained = true;
    best.log = std::move(log);
    best.log.snapshot_train_mse = evaluate_mse(best, data, 0, n_train);
    return best;
}

// ---------------------------------------------------------------------------
// Derivatives at a single point

namespace {

struct PointPass {
    std::vector<double> input;              // branch inputs
    std::vector<std::vector<double>> pre;   // per layer
    std::vector<std::vector<double>> post;  // per hidden layer
};

PointPass point_forward(const MlpBranch& branch, Activation a, std::span<const double> x) {
    PointPass pass;
    for (std::size_t f : branch.features) pass.input.push_back(x[f]);
    const std::vector<double>* in = &pass.input;
    for (std::size_t l = 0; l < branch.layers.size(); ++l) {
        const DenseLayer& layer = branch.layers[l];
        std::vector<double> z = layer.bias;
        for (std::size_t i = 0; i < in->size(); ++i) {
            const double ai = (*in)[i];
            if (ai == 0.0) continue;
            auto wrow = layer.weight.row(i);
            for (std::size_t j = 0; j < z.size(); ++j) z[j] += ai * wrow[j];
        }
        pass.pre.push_back(std::move(z));
        if (l + 1 < branch.layers.size()) {
            std::vector<double> post(pass.pre.back().size());
            for (std::size_t j = 0; j < post.size(); ++j) post[j] = act(a, pass.pre.back()[j]);
            pass.post.push_back(std::move(post));
            in = &pass.post.back();
        }
    }
    return pass;
}

// y = W v  where W is fan_in x fan_out and v has fan_out entries.
std::vector<double> back_multiply(const Matrix& w, const std::vector<double>& v) {
    std::vector<double> out(w.rows(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        auto row = w.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < v.size(); ++j) s += row[j] * v[j];
        out[i] = s;
    }
    return out;
}

std::vector<double> forward_multiply(const Matrix& w, const std::vector<double>& v) {
    std::vector<double> out(w.cols(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        if (v[i] == 0.0) continue;
        auto row = w.row(i);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += v[i] * row[j];
    }
    return out;
}

/// Gradient of the branch output w.r.t. its own inputs.
std::vector<double> branch_input_gradient(const MlpBranch& branch, Activation a, const PointPass& pass) {
    const std::size_t nl = branch.layers.size();
    std::vector<double> g = back_multiply(branch.layers[nl - 1].weight, {1.0});
    for (std::size_t l = nl - 1; l-- > 0;) {
        for (std::size_t j = 0; j < g.size(); ++j) g[j] *= act_d1(a, pass.pre[l][j]);
        g = back_multiply(branch.layers[l].weight, g);
    }
    return g;
}

void require_smooth(const SurrogateNet& net) {
    if (net.activation == Activation::relu && !net.branches.empty())
        throw Error("detect", "non-smooth activation: second derivatives of relu networks are undefined");
}

}  // namespace

std::vector<double> input_gradient(const SurrogateNet& net, std::span<const double> x) {
    check_arity(net, x.size());
    std::vector<double> grad(net.input_dim, 0.0);
    for (const MlpBranch& branch : net.branches) {
        const PointPass pass = point_forward(branch, net.activation, x);
        const auto g = branch_input_gradient(branch, net.activation, pass);
        for (std::size_t f = 0; f < branch.features.size(); ++f) grad[branch.features[f]] += g[f];
    }
    if (net.linear)
        for (std::size_t i = 0; i < net.input_dim; ++i) grad[i] += net.linear->weights[i];
    return grad;
}

Matrix input_hessian(const SurrogateNet& net, std::span<const double> x) {
    check_arity(net, x.size());
    require_smooth(net);
    const Activation a = net.activation;
    Matrix hessian(net.input_dim, net.input_dim);
    for (const MlpBranch& branch : net.branches) {
        const PointPass pass = point_forward(branch, a, x);
        const std::size_t nl = branch.layers.size();
        const std::size_t m = branch.features.size();

        // Reverse pass, keeping the upstream gradient g_l at each hidden layer.
        std::vector<std::vector<double>> upstream(nl - 1);
        std::vector<double> g = back_multiply(branch.layers[nl - 1].weight, {1.0});
        for (std::size_t l = nl - 1; l-- > 0;) {
            upstream[l] = g;
            for (std::size_t j = 0; j < g.size(); ++j) g[j] *= act_d1(a, pass.pre[l][j]);
            g = back_multiply(branch.layers[l].weight, g);
        }

        // Pearlmutter R-operator along each input direction.
        for (std::size_t col = 0; col < m; ++col) {
            std::vector<std::vector<double>> r_pre(nl - 1);
            std::vector<double> r_in(m, 0.0);
            r_in[col] = 1.0;
            for (std::size_t l = 0; l + 1 < nl; ++l) {
                r_pre[l] = forward_multiply(branch.layers[l].weight, r_in);
                r_in.resize(r_pre[l].size());
                for (std::size_t j = 0; j < r_in.size(); ++j) r_in[j] = act_d1(a, pass.pre[l][j]) * r_pre[l][j];
            }
            std::vector<double> r_g(branch.layers[nl - 1].weight.rows(), 0.0);
            for (std::size_t l = nl - 1; l-- > 0;) {
                std::vector<double> r_delta(r_g.size());
                for (std::size_t j = 0; j < r_g.size(); ++j)
                    r_delta[j] = r_g[j] * act_d1(a, pass.pre[l][j]) +
                                 upstream[l][j] * act_d2(a, pass.pre[l][j]) * r_pre[l][j];
                r_g = back_multiply(branch.layers[l].weight, r_delta);
            }
            for (std::size_t row = 0; row < m; ++row)
                hessian(branch.features[row], branch.features[col]) += r_g[row];
        }
    }
    return hessian;
}

std::vector<double> parameter_gradient(const SurrogateNet& net, std::span<const double> x) {
    check_arity(net, x.size());
    Matrix one(1, x.size());
    std::copy(x.begin(), x.end(), one.row(0).begin());
    Workspace ws;
    forward_all(net, one, ws);
    SurrogateNet grad = zeros_like(net);
    const double ones[1] = {1.0};
    backward_all(net, one, ones, ws, grad, nullptr);
    return grad.flat_parameters();
}

double min_abs_preactivation(const SurrogateNet& net, std::span<const double> x) {
    check_arity(net, x.size());
    double best = std::numeric_limits<double>::infinity();
    for (const MlpBranch& branch : net.branches) {
        const PointPass pass = point_forward(branch, net.activation, x);
        for (std::size_t l = 0; l + 1 < pass.pre.size(); ++l)
            for (double z : pass.pre[l]) best = std::min(best, std::abs(z));
    }
    return best;
}

GradientCheckResult gradient_check(const SurrogateNet& net, std::span<const double> probe, double h,
                                   bool allow_relu) {
    check_arity(net, probe.size());
    if (net.activation == Activation::relu && !allow_relu && !net.branches.empty())
        throw Error("gradient_check", "non-smooth activation: finite differences of relu networks are unreliable");
    auto rel = [](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); };

    GradientCheckResult result;
    const auto g_in = input_gradient(net, probe);
    std::vector<double> xp(probe.begin(), probe.end());
    for (std::size_t i = 0; i < xp.size(); ++i) {
        const double keep = xp[i];
        xp[i] = keep + h;
        const double up = net.predict(xp);
        xp[i] = keep - h;
        const double down = net.predict(xp);
        xp[i] = keep;
        result.max_input_rel_error = std::max(result.max_input_rel_error, rel(g_in[i], (up - down) / (2.0 * h)));
    }

    const auto g_par = parameter_gradient(net, probe);
    SurrogateNet work = net;
    std::vector<double*> theta;
    for_each_tensor(work, [&](std::span<double> t) {
        for (double& v : t) theta.push_back(&v);
    });
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double keep = *theta[i];
        *theta[i] = keep + h;
        const double up = work.predict(probe);
        *theta[i] = keep - h;
        const double down = work.predict(probe);
        *theta[i] = keep;
        result.max_param_rel_error = std::max(result.max_param_rel_error, rel(g_par[i], (up - down) / (2.0 * h)));
    }
    return result;
}

}  // namespace madex
