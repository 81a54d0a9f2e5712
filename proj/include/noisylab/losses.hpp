#pragma once

// Training losses over simplex outputs, plus forward/backward corrections
// parameterized by a transition matrix. All take the predicted distribution
// q and an observed (possibly noisy) label; gradients are with respect to
// the raw coordinates of q, so they compose with the softmax jacobian in
// the network backward pass and can be checked by finite differences.

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>

#include "transition_matrix.hpp"

namespace noisylab {

inline void validate_probs(const Eigen::VectorXd& q) {
    for (Eigen::Index i = 0; i < q.size(); ++i)
        if (!(q(i) >= 0.0) || q(i) > 1.0 + 1e-12)
            throw std::domain_error("probability vector has entry " + std::to_string(q(i)) +
                                    " at position " + std::to_string(i));
    if (std::abs(q.sum() - 1.0) > 1e-9)
        throw std::domain_error("probability vector sums to " + std::to_string(q.sum()));
}

enum class LossKind { Ce, Mse, Gce, Sce, Fce, Bce, ZeroOne };

struct LossSpec {
    LossKind kind = LossKind::Ce;
    double rho = 0.7;        // GCE exponent, (0,1]
    double alpha = 1.0;      // SCE weight on CE
    double beta = 1.0;       // SCE weight on the reversed term
    double clip_log = -4.0;  // SCE: ln(0) is clipped to this
    LossKind base_kind = LossKind::Ce;  // FCE/BCE only
    TransitionMatrix correction;        // FCE/BCE only
    Eigen::MatrixXd backward_map;       // BCE: inverse of correction transposed
    double condition = 1.0;             // BCE: condition number of correction
};

inline LossSpec cross_entropy() { return {}; }

inline LossSpec squared_error() {
    LossSpec s;
    s.kind = LossKind::Mse;
    return s;
}

inline LossSpec generalized_ce(double rho = 0.7) {
    if (!(rho > 0.0 && rho <= 1.0))
        throw std::invalid_argument("GCE exponent must lie in (0,1], got " + std::to_string(rho));
    LossSpec s;
    s.kind = LossKind::Gce;
    s.rho = rho;
    return s;
}

inline LossSpec symmetric_ce(double alpha = 1.0, double beta = 1.0, double clip_log = -4.0) {
    if (alpha < 0.0 || beta < 0.0)
        throw std::invalid_argument("SCE weights must be nonnegative");
    LossSpec s;
    s.kind = LossKind::Sce;
    s.alpha = alpha;
    s.beta = beta;
    s.clip_log = clip_log;
    return s;
}

inline LossSpec zero_one() {
    LossSpec s;
    s.kind = LossKind::ZeroOne;
    return s;
}

inline LossSpec forward_correct(const LossSpec& base, const TransitionMatrix& T) {
    if (base.kind != LossKind::Ce)
        throw std::invalid_argument("forward correction is defined on cross-entropy");
    validate(T);
    LossSpec s = base;
    s.kind = LossKind::Fce;
    s.base_kind = base.kind;
    s.correction = T;
    return s;
}

inline LossSpec backward_correct(const LossSpec& base, const TransitionMatrix& T) {
    if (base.kind == LossKind::Fce || base.kind == LossKind::Bce)
        throw std::invalid_argument("corrections do not nest");
    validate(T);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(T.entries);
    double smin = svd.singularValues()(T.c - 1);
    double smax = svd.singularValues()(0);
    double condition = (smin <= 0.0) ? std::numeric_limits<double>::infinity() : smax / smin;
    if (!(condition <= 1e12))
        throw std::runtime_error("transition matrix is too ill-conditioned to invert (condition " +
                                 std::to_string(condition) + ")");
    LossSpec s = base;
    s.kind = LossKind::Bce;
    s.base_kind = base.kind;
    s.correction = T;
    s.backward_map = T.entries.transpose().inverse();
    s.condition = condition;
    return s;
}

inline double loss(const LossSpec& spec, const Eigen::VectorXd& q, int label);

// Argmax with the project-wide tie rule: lowest index wins. Shared by the
// 0-1 loss, plugin prediction, and g-vector ranking so the three never
// disagree on a tied vector.
inline int argmax_lowest(const Eigen::VectorXd& q) {
    int best = 0;
    for (int i = 1; i < int(q.size()); ++i)
        if (q(i) > q(best)) best = i;
    return best;
}

namespace detail {

inline void check_label(const Eigen::VectorXd& q, int label) {
    if (label < 0 || label >= q.size())
        throw std::invalid_argument("label " + std::to_string(label) + " outside 0.." +
                                    std::to_string(q.size() - 1));
}

inline LossSpec base_of(const LossSpec& spec) {
    LossSpec b = spec;
    b.kind = spec.base_kind;
    return b;
}

}  // namespace detail

inline double loss(const LossSpec& spec, const Eigen::VectorXd& q, int label) {
    detail::check_label(q, label);
    validate_probs(q);
    const int c = int(q.size());
    switch (spec.kind) {
        case LossKind::Ce:
            if (q(label) <= 0.0) return std::numeric_limits<double>::infinity();
            return -std::log(q(label));
        case LossKind::Mse: {
            double total = 0.0;
            for (int j = 0; j < c; ++j) {
                double diff = q(j) - (j == label ? 1.0 : 0.0);
                total += diff * diff;
            }
            return total;
        }
        case LossKind::Gce:
            return (1.0 - std::pow(q(label), spec.rho)) / spec.rho;
        case LossKind::Sce: {
            double ce = q(label) <= 0.0 ? std::numeric_limits<double>::infinity()
                                        : -std::log(q(label));
            // Reversed term: -sum_j q_j * ln(onehot_j), with ln(0) clipped.
            double rce = 0.0;
            for (int j = 0; j < c; ++j)
                if (j != label) rce -= q(j) * spec.clip_log;
            return spec.alpha * ce + spec.beta * rce;
        }
        case LossKind::Fce: {
            Eigen::VectorXd pushed = spec.correction.entries * q;
            return loss(detail::base_of(spec), pushed, label);
        }
        case LossKind::Bce: {
            LossSpec base = detail::base_of(spec);
            double total = 0.0;
            for (int k = 0; k < c; ++k) total += spec.backward_map(label, k) * loss(base, q, k);
            return total;
        }
        case LossKind::ZeroOne:
            return argmax_lowest(q) == label ? 0.0 : 1.0;
    }
    throw std::logic_error("unreachable loss kind");
}

inline Eigen::VectorXd loss_gradient(const LossSpec& spec, const Eigen::VectorXd& q, int label) {
    detail::check_label(q, label);
    validate_probs(q);
    const int c = int(q.size());
    Eigen::VectorXd g = Eigen::VectorXd::Zero(c);
    switch (spec.kind) {
        case LossKind::Ce: {
            // Softmax outputs can underflow to exact zero for a very wrong
            // class; the floor keeps the gradient finite instead of inf.
            double qy = std::max(q(label), 1e-300);
            g(label) = -1.0 / qy;
            return g;
        }
        case LossKind::Mse:
            g = 2.0 * q;
            g(label) -= 2.0;
            return g;
        case LossKind::Gce: {
            double qy = std::max(q(label), 1e-300);
            g(label) = -std::pow(qy, spec.rho - 1.0);
            return g;
        }
        case LossKind::Sce: {
            double qy = std::max(q(label), 1e-300);
            g(label) = -spec.alpha / qy;
            for (int j = 0; j < c; ++j)
                if (j != label) g(j) -= spec.beta * spec.clip_log;
            return g;
        }
        case LossKind::Fce: {
            Eigen::VectorXd pushed = spec.correction.entries * q;
            Eigen::VectorXd inner = loss_gradient(detail::base_of(spec), pushed, label);
            return spec.correction.entries.transpose() * inner;
        }
        case LossKind::Bce: {
            LossSpec base = detail::base_of(spec);
            for (int k = 0; k < c; ++k)
                g += spec.backward_map(label, k) * loss_gradient(base, q, k);
            return g;
        }
        case LossKind::ZeroOne:
            throw std::domain_error("0-1 loss is not differentiable");
    }
    throw std::logic_error("unreachable loss kind");
}

// Config-echo form, e.g. "gce(rho=0.7)" or "bce(base=ce,cond=1.5)".
inline std::string describe(const LossSpec& spec) {
    auto num = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%g", v);
        return std::string(buf);
    };
    auto kind_name = [](LossKind k) -> std::string {
        switch (k) {
            case LossKind::Ce: return "ce";
            case LossKind::Mse: return "mse";
            case LossKind::Gce: return "gce";
            case LossKind::Sce: return "sce";
            case LossKind::Fce: return "fce";
            case LossKind::Bce: return "bce";
            case LossKind::ZeroOne: return "zero_one";
        }
        return "?";
    };
    switch (spec.kind) {
        case LossKind::Gce:
            return "gce(rho=" + num(spec.rho) + ")";
        case LossKind::Sce:
            return "sce(alpha=" + num(spec.alpha) + ",beta=" + num(spec.beta) +
                   ",clip=" + num(spec.clip_log) + ")";
        case LossKind::Fce:
            return "fce(base=" + kind_name(spec.base_kind) + ")";
        case LossKind::Bce:
            return "bce(base=" + kind_name(spec.base_kind) + ",cond=" + num(spec.condition) + ")";
        default:
            return kind_name(spec.kind);
    }
}

}  // namespace noisylab
