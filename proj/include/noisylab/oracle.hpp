#pragma once

// Oracle estimators wrap an explicit posterior field, for analytic
// constructions where the posterior is known in closed form. The plugin
// layer turns any probability output into a hard prediction with the shared
// lowest-index tie rule, and keeps the tie visible instead of hiding it.

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <utility>

#include "losses.hpp"
#include "transition_matrix.hpp"

namespace noisylab {

struct OracleEstimator {
    int c = 0;
    std::function<Eigen::VectorXd(const Eigen::RowVectorXd&)> posterior;
};

inline OracleEstimator bayes_from_posterior(
    int c, std::function<Eigen::VectorXd(const Eigen::RowVectorXd&)> field) {
    if (!field) throw std::invalid_argument("oracle needs a posterior field");
    OracleEstimator e;
    e.c = c;
    e.posterior = std::move(field);
    return e;
}

inline Eigen::VectorXd forward_one(const OracleEstimator& e, const Eigen::RowVectorXd& x) {
    Eigen::VectorXd q = e.posterior(x);
    if (q.size() != e.c) throw std::runtime_error("posterior field returned wrong length");
    validate_probs(q);
    return q;
}

// An oracle observing the noisy distribution: its posterior is the clean
// posterior pushed through the transition matrix.
inline OracleEstimator noised_oracle(const OracleEstimator& clean, const TransitionMatrix& T) {
    validate(T);
    if (T.c != clean.c) throw std::invalid_argument("matrix size does not match oracle classes");
    auto base = clean.posterior;
    Eigen::MatrixXd entries = T.entries;
    return bayes_from_posterior(
        clean.c, [base, entries](const Eigen::RowVectorXd& x) -> Eigen::VectorXd {
            return entries * base(x);
        });
}

inline Eigen::MatrixXd forward_batch(const OracleEstimator& e, const Eigen::MatrixXd& features) {
    Eigen::MatrixXd out(features.rows(), e.c);
    for (Eigen::Index i = 0; i < features.rows(); ++i)
        out.row(i) = forward_one(e, features.row(i)).transpose();
    return out;
}

struct PluginPrediction {
    int label = 0;
    bool tied = false;
};

inline PluginPrediction plugin_predict(const Eigen::VectorXd& q) {
    PluginPrediction p;
    p.label = argmax_lowest(q);
    for (int i = 0; i < int(q.size()); ++i)
        if (i != p.label && q(i) == q(p.label)) p.tied = true;
    return p;
}

}  // namespace noisylab
