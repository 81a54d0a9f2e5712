#pragma once

// Feed-forward softmax network: rectifier hidden layers, trained by plain
// mini-batch gradient descent. Small enough that everything runs as dense
// Eigen products on one core.

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "losses.hpp"
#include "rng.hpp"

namespace noisylab {

struct MlpEstimator {
    std::vector<int> widths;              // input d, hidden..., output c
    std::vector<Eigen::MatrixXd> weights; // weights[l] is widths[l+1] x widths[l]
    std::vector<Eigen::VectorXd> biases;
    std::uint64_t init_seed = 0;

    int input_dim() const { return widths.front(); }
    int classes() const { return widths.back(); }
};

// Scaled-uniform weight init, half-width sqrt(6/(fan_in+fan_out)), zero
// biases. Draw order is layer by layer, row-major, so a seed pins every
// parameter.
inline MlpEstimator mlp_init(const std::vector<int>& widths, std::uint64_t seed) {
    if (widths.size() < 2) throw std::invalid_argument("network needs input and output widths");
    for (int w : widths)
        if (w < 1) throw std::invalid_argument("layer width must be positive");
    MlpEstimator m;
    m.widths = widths;
    m.init_seed = seed;
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        int fan_in = widths[l], fan_out = widths[l + 1];
        double hw = std::sqrt(6.0 / (fan_in + fan_out));
        Eigen::MatrixXd W(fan_out, fan_in);
        for (int i = 0; i < fan_out; ++i)
            for (int j = 0; j < fan_in; ++j) W(i, j) = rng.uniform(-hw, hw);
        m.weights.push_back(std::move(W));
        m.biases.push_back(Eigen::VectorXd::Zero(fan_out));
    }
    return m;
}

namespace detail {

// Columns are samples. Returns the activations of every layer; the last
// entry holds softmax outputs.
inline std::vector<Eigen::MatrixXd> forward_layers(const MlpEstimator& m,
                                                   const Eigen::MatrixXd& x_cols) {
    std::vector<Eigen::MatrixXd> acts;
    acts.reserve(m.weights.size() + 1);
    acts.push_back(x_cols);
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
        Eigen::MatrixXd z = (m.weights[l] * acts.back()).colwise() + m.biases[l];
        if (l + 1 < m.weights.size()) {
            acts.push_back(z.cwiseMax(0.0));
        } else {
            // Stabilized softmax per column.
            for (Eigen::Index i = 0; i < z.cols(); ++i) {
                Eigen::VectorXd col = z.col(i);
                col.array() -= col.maxCoeff();
                col = col.array().exp();
                z.col(i) = col / col.sum();
            }
            acts.push_back(std::move(z));
        }
    }
    return acts;
}

}  // namespace detail

// n x c matrix of class probabilities, one row per input row.
inline Eigen::MatrixXd forward_batch(const MlpEstimator& m, const Eigen::MatrixXd& features) {
    if (features.cols() != m.input_dim())
        throw std::invalid_argument("input has " + std::to_string(features.cols()) +
                                    " features, network expects " +
                                    std::to_string(m.input_dim()));
    return detail::forward_layers(m, features.transpose()).back().transpose();
}

inline Eigen::VectorXd forward_one(const MlpEstimator& m, const Eigen::RowVectorXd& x) {
    return forward_batch(m, x).row(0).transpose();
}

// One full shuffled pass over the data in mini-batches, updating the model
// in place. Returns the mean per-sample loss measured at the pre-update
// parameters of each batch. The epoch index is only for diagnostics.
inline double sgd_epoch(MlpEstimator& m, const Eigen::MatrixXd& features,
                        const std::vector<int>& labels, const LossSpec& spec, double lr,
                        int batch_size, std::uint64_t seed, int epoch = 0) {
    const int n = int(features.rows());
    if (n == 0) throw std::invalid_argument("cannot train on an empty dataset");
    if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
    if (features.cols() != m.input_dim())
        throw std::invalid_argument("feature width does not match network input");
    const int c = m.classes();

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);

    double loss_sum = 0.0;
    int batch_index = 0;
    for (int start = 0; start < n; start += batch_size, ++batch_index) {
        const int b = std::min(batch_size, n - start);
        Eigen::MatrixXd x_cols(features.cols(), b);
        std::vector<int> y(b);
        for (int k = 0; k < b; ++k) {
            x_cols.col(k) = features.row(order[start + k]).transpose();
            y[k] = labels[order[start + k]];
        }

        std::vector<Eigen::MatrixXd> acts = detail::forward_layers(m, x_cols);
        const Eigen::MatrixXd& probs = acts.back();

        // Gradient at the pre-softmax layer: J_softmax^T g = q.*g - q(q.g).
        Eigen::MatrixXd dz(c, b);
        for (int k = 0; k < b; ++k) {
            Eigen::VectorXd q = probs.col(k);
            double sample_loss = loss(spec, q, y[k]);
            if (!std::isfinite(sample_loss))
                throw std::runtime_error("training loss became non-finite (epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(batch_index) + ", loss " +
                                         describe(spec) + ")");
            loss_sum += sample_loss;
            Eigen::VectorXd g = loss_gradient(spec, q, y[k]);
            dz.col(k) = q.cwiseProduct(g) - q * (q.dot(g));
        }

        for (int l = int(m.weights.size()) - 1; l >= 0; --l) {
            Eigen::MatrixXd dw = dz * acts[l].transpose() / double(b);
            Eigen::VectorXd db = dz.rowwise().sum() / double(b);
            if (!dw.allFinite() || !db.allFinite())
                throw std::runtime_error("gradient became non-finite (epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(batch_index) + ", loss " +
                                         describe(spec) + ")");
            if (l > 0) {
                Eigen::MatrixXd da = m.weights[l].transpose() * dz;
                dz = da.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
            }
            m.weights[l] -= lr * dw;
            m.biases[l] -= lr * db;
        }
    }
    return loss_sum / double(n);
}

// Checkpoint layout: tag 'NLMP' (u32 LE) | layer count u32 | widths u32 each
// | init seed u64 | per layer, weights row-major then bias, all LE doubles.
// Round-trips exactly; restoring the best epoch must not perturb a single
// bit of the parameters.
constexpr std::uint32_t kMlpTag = 0x4e4c4d50;  // "NLMP"

inline void save_checkpoint(const MlpEstimator& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    auto put = [&](const void* p, std::size_t len) {
        out.write(static_cast<const char*>(p), std::streamsize(len));
    };
    std::uint32_t tag = kMlpTag, layers = std::uint32_t(m.widths.size());
    put(&tag, 4);
    put(&layers, 4);
    for (int w : m.widths) {
        std::uint32_t v = std::uint32_t(w);
        put(&v, 4);
    }
    put(&m.init_seed, 8);
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
        for (Eigen::Index i = 0; i < m.weights[l].rows(); ++i)
            for (Eigen::Index j = 0; j < m.weights[l].cols(); ++j) {
                double v = m.weights[l](i, j);
                put(&v, 8);
            }
        for (Eigen::Index i = 0; i < m.biases[l].size(); ++i) {
            double v = m.biases[l](i);
            put(&v, 8);
        }
    }
    if (!out) throw std::runtime_error("write to " + path + " failed");
}

inline MlpEstimator load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    auto get = [&](void* p, std::size_t len, const char* what) {
        if (!in.read(static_cast<char*>(p), std::streamsize(len)))
            throw std::runtime_error(path + ": truncated reading " + what);
    };
    std::uint32_t tag, layers;
    get(&tag, 4, "tag");
    if (tag != kMlpTag) throw std::runtime_error(path + ": not a network checkpoint");
    get(&layers, 4, "layer count");
    if (layers < 2 || layers > 64) throw std::runtime_error(path + ": implausible layer count");
    MlpEstimator m;
    m.widths.resize(layers);
    for (auto& w : m.widths) {
        std::uint32_t v;
        get(&v, 4, "widths");
        w = int(v);
    }
    get(&m.init_seed, 8, "seed");
    for (std::uint32_t l = 0; l + 1 < layers; ++l) {
        Eigen::MatrixXd W(m.widths[l + 1], m.widths[l]);
        for (Eigen::Index i = 0; i < W.rows(); ++i)
            for (Eigen::Index j = 0; j < W.cols(); ++j) get(&W(i, j), 8, "weights");
        Eigen::VectorXd bvec(m.widths[l + 1]);
        for (Eigen::Index i = 0; i < bvec.size(); ++i) get(&bvec(i), 8, "bias");
        m.weights.push_back(std::move(W));
        m.biases.push_back(std::move(bvec));
    }
    return m;
}

}  // namespace noisylab
