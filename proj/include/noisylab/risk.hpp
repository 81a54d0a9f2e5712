#pragma once

// Risk arithmetic: the affine clean-to-noisy risk map and its covariance
// refinement, worst-case selection-gap bounds, an order-violation search
// over the simplex, rank-indicator (g-vector) summaries of a classifier
// against known noisy posteriors, and the simultaneous-minima diagnostic.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "losses.hpp"
#include "transition_matrix.hpp"

namespace noisylab {

struct RiskPoint {
    int epoch = 0;
    double clean_risk = 0.0;
    double noisy_risk = 0.0;
};

template <class Estimator>
double empirical_risk01(const Estimator& m, const Dataset& ds, LabelTrack track) {
    if (ds.n() == 0) throw std::invalid_argument("cannot compute risk on an empty dataset");
    const std::vector<int>& labels = track_labels(ds, track);
    Eigen::MatrixXd probs = forward_batch(m, ds.features);
    int misses = 0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
        if (argmax_lowest(probs.row(i).transpose()) != labels[i]) ++misses;
    return double(misses) / double(probs.rows());
}

// Predicted noisy risk under uniform symmetric noise at rate eta:
// R_noisy = R (1 - c eta / (c-1)) + eta. Only meaningful below the
// class-preserving threshold (c-1)/c; callers flag the regime.
inline double affine_noisy_risk(double clean_risk, double eta, int c) {
    check_rate(eta);
    if (c < 2) throw std::invalid_argument("need at least two classes");
    return clean_risk * (1.0 - double(c) * eta / (c - 1.0)) + eta;
}

// Companion form on accuracies: A_noisy = A (1 - c eta / (c-1)) + eta/(c-1).
inline double affine_noisy_accuracy(double clean_acc, double eta, int c) {
    check_rate(eta);
    if (c < 2) throw std::invalid_argument("need at least two classes");
    return clean_acc * (1.0 - double(c) * eta / (c - 1.0)) + eta / (c - 1.0);
}

struct CovarianceStats {
    double eta_bar = 0.0;    // mean per-instance noise rate
    double sigma_eta = 0.0;  // its standard deviation
    double sigma_g = 0.0;    // standard deviation of the accuracy function
    double cov = 0.0;        // Cov(g(x), eta_x)
};

inline void validate(const CovarianceStats& s) {
    if (s.sigma_eta < 0.0 || s.sigma_g < 0.0)
        throw std::invalid_argument("standard deviations cannot be negative");
    if (std::abs(s.cov) > s.sigma_eta * s.sigma_g + 1e-12)
        throw std::invalid_argument("covariance exceeds sigma_eta * sigma_g");
}

// Plug-in estimates (1/n normalization throughout) from paired samples of
// the per-instance accuracy g(x) and noise rate eta_x.
inline CovarianceStats compute_covariance_stats(const std::vector<double>& g,
                                                const std::vector<double>& eta) {
    if (g.size() != eta.size() || g.empty())
        throw std::invalid_argument("need matching nonempty samples of g and eta");
    const double n = double(g.size());
    CovarianceStats s;
    double g_bar = std::accumulate(g.begin(), g.end(), 0.0) / n;
    s.eta_bar = std::accumulate(eta.begin(), eta.end(), 0.0) / n;
    double var_g = 0.0, var_eta = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        var_g += (g[i] - g_bar) * (g[i] - g_bar);
        var_eta += (eta[i] - s.eta_bar) * (eta[i] - s.eta_bar);
        s.cov += (g[i] - g_bar) * (eta[i] - s.eta_bar);
    }
    s.sigma_g = std::sqrt(var_g / n);
    s.sigma_eta = std::sqrt(var_eta / n);
    s.cov /= n;
    validate(s);
    return s;
}

// Noisy risk under non-uniform symmetric noise:
// R (1 - c eta_bar/(c-1)) + eta_bar + (c/(c-1)) Cov(g, eta).
inline double covariance_noisy_risk(double clean_risk, const CovarianceStats& s, int c) {
    validate(s);
    if (c < 2) throw std::invalid_argument("need at least two classes");
    return clean_risk * (1.0 - double(c) * s.eta_bar / (c - 1.0)) + s.eta_bar +
           double(c) / (c - 1.0) * s.cov;
}

// Half-width of the interval the covariance term can occupy:
// sigma_eta * sigma_g * c / (c-1).
inline double covariance_band(const CovarianceStats& s, int c) {
    validate(s);
    if (c < 2) throw std::invalid_argument("need at least two classes");
    return s.sigma_eta * s.sigma_g * double(c) / (c - 1.0);
}

struct BoundReport {
    double eta = 0.0;
    double eta_min = 0.0;
    double eta_max = 0.0;
    double noisy_risk_best = 0.0;            // R_noisy of the selected model
    std::optional<double> noisy_risk_other;  // general form only
    double bound = 0.0;                      // cap on |R_selected - R_best|
    std::string regime;                      // general | optimal-noisy-risk | pairwise
};

// Worst-case clean-risk gap for column-permutation noise with off-diagonal
// rates in [eta_min, eta_max]. With the competitor's noisy risk supplied
// this is the general two-term bound; without it, the selected model is
// assumed to minimize the noisy risk and the one-term form applies.
inline BoundReport worst_case_gap(double noisy_risk_best, std::optional<double> noisy_risk_other,
                                  double eta, double eta_min, double eta_max) {
    if (eta_min > eta_max) throw std::invalid_argument("eta_min exceeds eta_max");
    double denom_max = 1.0 - eta - eta_max;
    double denom_min = 1.0 - eta - eta_min;
    if (denom_max <= 0.0)
        throw std::domain_error("bound undefined: 1 - eta - eta_max = " +
                                std::to_string(denom_max) + " is not positive");
    BoundReport r;
    r.eta = eta;
    r.eta_min = eta_min;
    r.eta_max = eta_max;
    r.noisy_risk_best = noisy_risk_best;
    r.noisy_risk_other = noisy_risk_other;
    if (noisy_risk_other) {
        r.bound = (noisy_risk_best - eta) / denom_max - (*noisy_risk_other - eta) / denom_min;
        r.regime = "general";
    } else {
        r.bound = (noisy_risk_best - eta) * (1.0 / denom_max - 1.0 / denom_min);
        r.regime = "optimal-noisy-risk";
    }
    return r;
}

// Specialization for pairwise noise: eta (R_noisy - eta) / ((1-2eta)(1-eta)).
inline BoundReport pairwise_gap(double noisy_risk, double eta) {
    if (!(eta < 0.5))
        throw std::domain_error("pairwise bound requires eta < 1/2, got " + std::to_string(eta));
    if (eta < 0.0) throw std::domain_error("noise rate cannot be negative");
    BoundReport r;
    r.eta = eta;
    r.eta_min = eta;
    r.eta_max = eta;
    r.noisy_risk_best = noisy_risk;
    r.bound = eta * (noisy_risk - eta) / ((1.0 - 2.0 * eta) * (1.0 - eta));
    r.regime = "pairwise";
    return r;
}

struct OrderViolation {
    Eigen::VectorXd posterior;
    int k1 = 0;  // clean-preferred label
    int k2 = 0;  // label that overtakes it after the noise
};

// Sweep a simplex grid for a posterior whose label order the matrix
// reverses somewhere: p_k1 > p_k2 but (T p)_k1 < (T p)_k2. The sweep visits
// grid points in lexicographic order and label pairs in ascending order, so
// the first hit is the lexicographically smallest witness.
inline std::optional<OrderViolation> find_order_violation(const TransitionMatrix& T,
                                                          double resolution = 0.02) {
    validate(T);
    if (T.c > 6)
        throw std::invalid_argument("grid sweep is limited to 6 classes, got " +
                                    std::to_string(T.c));
    if (!(resolution > 0.0 && resolution <= 0.5))
        throw std::invalid_argument("resolution must lie in (0, 0.5]");
    const int steps = int(std::lround(1.0 / resolution));
    const int c = T.c;

    std::vector<int> counts(c, 0);
    Eigen::VectorXd p(c);
    std::optional<OrderViolation> hit;

    // Enumerate compositions of `steps` into c cells, lexicographically.
    std::function<bool(int, int)> sweep = [&](int cell, int remaining) -> bool {
        if (cell == c - 1) {
            counts[cell] = remaining;
            for (int k = 0; k < c; ++k) p(k) = double(counts[k]) / double(steps);
            Eigen::VectorXd noisy = T.entries * p;
            for (int k1 = 0; k1 < c; ++k1)
                for (int k2 = 0; k2 < c; ++k2) {
                    if (k1 == k2) continue;
                    if (p(k1) > p(k2) && noisy(k2) - noisy(k1) > 1e-9) {
                        hit = OrderViolation{p, k1, k2};
                        return true;
                    }
                }
            return false;
        }
        for (int take = 0; take <= remaining; ++take) {
            counts[cell] = take;
            if (sweep(cell + 1, remaining - take)) return true;
        }
        return false;
    };
    sweep(0, steps);
    return hit;
}

struct GVector {
    Eigen::VectorXd entries;  // entry k: mass predicted on the (k+1)-th ranked noisy label
    int excluded_ties = 0;    // instances skipped because posterior ranks were tied
};

// Empirical rank indicator: for each instance, rank the noisy posterior in
// descending order and record which rank the model's prediction lands on.
// Instances whose posterior has any tied entries have no well-defined rank
// and are excluded (counted).
inline GVector g_vector(const Eigen::MatrixXd& model_probs,
                        const Eigen::MatrixXd& noisy_posteriors) {
    if (model_probs.rows() != noisy_posteriors.rows() ||
        model_probs.cols() != noisy_posteriors.cols())
        throw std::invalid_argument("model outputs and posteriors must have matching shape");
    const int c = int(model_probs.cols());
    const Eigen::Index n = model_probs.rows();
    if (n == 0) throw std::invalid_argument("need at least one instance");

    GVector g;
    g.entries = Eigen::VectorXd::Zero(c);
    std::vector<int> order(c);
    Eigen::Index included = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        bool tied = false;
        for (int a = 0; a < c && !tied; ++a)
            for (int b = a + 1; b < c; ++b)
                if (noisy_posteriors(i, a) == noisy_posteriors(i, b)) {
                    tied = true;
                    break;
                }
        if (tied) {
            ++g.excluded_ties;
            continue;
        }
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return noisy_posteriors(i, a) > noisy_posteriors(i, b);
        });
        int pred = argmax_lowest(model_probs.row(i).transpose());
        for (int k = 0; k < c; ++k)
            if (order[k] == pred) {
                g.entries(k) += 1.0;
                break;
            }
        ++included;
    }
    if (included == 0)
        throw std::runtime_error("every instance had tied posterior ranks; no g-vector exists");
    g.entries /= double(included);
    return g;
}

// Idealized noisy accuracy when every instance shares the same descending
// posterior values: the inner product of the rank-indicator mean with them.
inline double gvector_noisy_accuracy(const GVector& g, const Eigen::VectorXd& ranked_probs) {
    if (g.entries.size() != ranked_probs.size())
        throw std::invalid_argument("rank-indicator length " + std::to_string(g.entries.size()) +
                                    " does not match " + std::to_string(ranked_probs.size()) +
                                    " posterior values");
    for (Eigen::Index k = 0; k + 1 < ranked_probs.size(); ++k)
        if (ranked_probs(k) < ranked_probs(k + 1))
            throw std::invalid_argument("posterior values must be sorted in descending order");
    return g.entries.dot(ranked_probs);
}

// Noisy accuracy of a classifier from its clean joint confusion: entry
// (i,j) of the confusion holds P(prediction = i, clean class = j), and the
// noise contributes T_ij for each such cell.
inline double noisy_accuracy_from_confusion(const Eigen::MatrixXd& confusion,
                                            const TransitionMatrix& T) {
    validate(T);
    if (confusion.rows() != T.c || confusion.cols() != T.c)
        throw std::invalid_argument("confusion matrix shape does not match class count");
    double total = 0.0;
    for (Eigen::Index i = 0; i < confusion.rows(); ++i)
        for (Eigen::Index j = 0; j < confusion.cols(); ++j) {
            if (confusion(i, j) < -1e-12)
                throw std::invalid_argument("confusion entries cannot be negative");
            total += confusion(i, j);
        }
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("confusion entries must sum to 1, got " +
                                    std::to_string(total));
    return (T.entries.array() * confusion.array()).sum();
}

struct MinimaWindow {
    int t1 = 0;  // earliest per-series minimum, 1-based epoch
    int t2 = 0;  // latest per-series minimum
    bool degenerate = false;  // some series was constant
    int width() const { return t2 - t1; }
};

// For each trajectory, take the earliest epoch attaining its minimum; the
// window spans the earliest and latest of those epochs across trajectories.
// Width zero is the condition under which the noisy-risk minimizer provably
// matches the clean one.
inline MinimaWindow simultaneous_minima_window(const std::vector<std::vector<double>>& series) {
    if (series.empty()) throw std::invalid_argument("need at least one trajectory");
    MinimaWindow w;
    for (const std::vector<double>& s : series) {
        if (s.size() < 2) throw std::invalid_argument("each trajectory needs at least 2 epochs");
        int arg = 1;
        for (int e = 2; e <= int(s.size()); ++e)
            if (s[e - 1] < s[arg - 1]) arg = e;
        if (*std::min_element(s.begin(), s.end()) == *std::max_element(s.begin(), s.end()))
            w.degenerate = true;
        if (w.t1 == 0 || arg < w.t1) w.t1 = arg;
        if (arg > w.t2) w.t2 = arg;
    }
    return w;
}

}  // namespace noisylab
