#pragma once

// Label-noise transition matrices. Column-stochastic convention throughout:
// entry (i, j) is the probability that clean class j is observed as class i.
// Labels are 0-based across the whole library.

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace noisylab {

constexpr double kStochasticTol = 1e-9;

struct TransitionMatrix {
    int c = 0;
    Eigen::MatrixXd entries;  // c x c, columns sum to 1

    double operator()(int noisy, int clean) const { return entries(noisy, clean); }
};

inline void validate(const TransitionMatrix& T) {
    if (T.c < 2) throw std::invalid_argument("transition matrix needs c >= 2");
    if (T.entries.rows() != T.c || T.entries.cols() != T.c)
        throw std::invalid_argument("transition matrix shape does not match c");
    for (int j = 0; j < T.c; ++j) {
        double colsum = 0.0;
        for (int i = 0; i < T.c; ++i) {
            double v = T.entries(i, j);
            if (!(v >= 0.0 && v <= 1.0))
                throw std::invalid_argument("transition entry outside [0,1] at (" +
                                            std::to_string(i) + "," + std::to_string(j) + ")");
            colsum += v;
        }
        if (std::abs(colsum - 1.0) > kStochasticTol)
            throw std::invalid_argument("column " + std::to_string(j) +
                                        " sums to " + std::to_string(colsum));
    }
}

inline void check_rate(double eta) {
    if (!(eta >= 0.0 && eta <= 1.0))
        throw std::domain_error("noise rate must lie in [0,1], got " + std::to_string(eta));
}

// Uniform symmetric noise, flipped labels land on the other c-1 classes.
inline TransitionMatrix build_symmetric(int c, double eta) {
    check_rate(eta);
    if (c < 2) throw std::invalid_argument("build_symmetric: c >= 2 required");
    TransitionMatrix T{c, Eigen::MatrixXd::Constant(c, c, eta / (c - 1))};
    for (int j = 0; j < c; ++j) T.entries(j, j) = 1.0 - eta;
    return T;
}

// Symmetric noise where resampling may return the original label, i.e. a
// flipped label is drawn uniformly over all c classes. Diagonal picks up
// the extra eta/c mass.
inline TransitionMatrix build_symmetric_resample(int c, double eta) {
    check_rate(eta);
    if (c < 2) throw std::invalid_argument("build_symmetric_resample: c >= 2 required");
    TransitionMatrix T{c, Eigen::MatrixXd::Constant(c, c, eta / c)};
    for (int j = 0; j < c; ++j) T.entries(j, j) = 1.0 - eta + eta / c;
    return T;
}

// Each class shifts to the next one with probability eta, wrapping around.
inline TransitionMatrix build_circular(int c, double eta) {
    check_rate(eta);
    if (c < 2) throw std::invalid_argument("build_circular: c >= 2 required");
    TransitionMatrix T{c, Eigen::MatrixXd::Zero(c, c)};
    for (int j = 0; j < c; ++j) {
        T.entries(j, j) = 1.0 - eta;
        T.entries((j + 1) % c, j) = eta;
    }
    return T;
}

// Explicit source -> target flips. Sources and targets must each be unique
// so the result stays column-stochastic.
inline TransitionMatrix build_pairwise(int c, const std::vector<std::pair<int, int>>& pairs,
                                       double eta) {
    check_rate(eta);
    if (c < 2) throw std::invalid_argument("build_pairwise: c >= 2 required");
    std::set<int> sources, targets;
    for (auto [src, dst] : pairs) {
        if (src < 0 || src >= c || dst < 0 || dst >= c)
            throw std::invalid_argument("build_pairwise: label out of range");
        if (src == dst)
            throw std::invalid_argument("build_pairwise: class " + std::to_string(src) +
                                        " pairs with itself");
        if (!sources.insert(src).second)
            throw std::invalid_argument("build_pairwise: duplicate source " + std::to_string(src));
        if (!targets.insert(dst).second)
            throw std::invalid_argument("build_pairwise: duplicate target " + std::to_string(dst));
    }
    TransitionMatrix T{c, Eigen::MatrixXd::Identity(c, c)};
    for (auto [src, dst] : pairs) {
        T.entries(src, src) = 1.0 - eta;
        T.entries(dst, src) = eta;
    }
    return T;
}

// The 10-class grouped asymmetric recipe: classes {0,1,2}, {3,4,5}, {6,7,8}
// each mix within their group through the same 3x3 block, class 9 untouched.
inline TransitionMatrix build_asym_mnist(double eta) {
    if (!(eta >= 0.0 && eta <= 0.5))
        throw std::domain_error("grouped asymmetric recipe needs eta in [0, 0.5]");
    Eigen::Matrix3d block;
    block << 1 - eta, eta, eta,
             eta, 1 - eta, eta,
             0, 0, 1 - 2 * eta;
    TransitionMatrix T{10, Eigen::MatrixXd::Identity(10, 10)};
    for (int g = 0; g < 3; ++g)
        T.entries.block<3, 3>(3 * g, 3 * g) = block;
    return T;
}

// Circular noise inside each listed group of labels; groups must partition
// the label set exactly.
inline TransitionMatrix build_superclass_circular(int c, const std::vector<std::vector<int>>& groups,
                                                  double eta) {
    check_rate(eta);
    std::vector<bool> seen(c, false);
    for (const auto& g : groups) {
        if (g.empty()) throw std::invalid_argument("superclass groups must be nonempty");
        for (int lbl : g) {
            if (lbl < 0 || lbl >= c || seen[lbl])
                throw std::invalid_argument("groups must partition the label set");
            seen[lbl] = true;
        }
    }
    for (int j = 0; j < c; ++j)
        if (!seen[j]) throw std::invalid_argument("label " + std::to_string(j) + " missing from groups");

    TransitionMatrix T{c, Eigen::MatrixXd::Identity(c, c)};
    for (const auto& g : groups) {
        if (g.size() == 1) continue;
        for (std::size_t k = 0; k < g.size(); ++k) {
            int from = g[k];
            int to = g[(k + 1) % g.size()];
            T.entries(from, from) = 1.0 - eta;
            T.entries(to, from) = eta;
        }
    }
    return T;
}

// Three-class matrix whose columns carry strictly ranked entries
// (1-1.5*eta > eta > 0.5*eta for eta in (0, 0.4)), so every noisy posterior
// has a well-defined first, second, and third most likely label. Used by
// the rank-trajectory experiments.
inline TransitionMatrix build_ranked_ternary(double eta) {
    if (!(eta >= 0.0 && eta <= 2.0 / 3.0))
        throw std::domain_error("ranked ternary recipe needs eta in [0, 2/3]");
    TransitionMatrix T{3, Eigen::MatrixXd(3, 3)};
    T.entries << 1 - 1.5 * eta, 0.5 * eta, eta,
                 eta, 1 - 1.5 * eta, 0.5 * eta,
                 0.5 * eta, eta, 1 - 1.5 * eta;
    return T;
}

// Five-class circulant companion of the ranked ternary matrix; every column
// is the cycle (0.5, 0.2, 0.15, 0.1, 0.05), again fully ranked.
inline TransitionMatrix build_ranked_five() {
    TransitionMatrix T{5, Eigen::MatrixXd(5, 5)};
    T.entries << 0.50, 0.05, 0.10, 0.15, 0.20,
                 0.20, 0.50, 0.05, 0.10, 0.15,
                 0.15, 0.20, 0.50, 0.05, 0.10,
                 0.10, 0.15, 0.20, 0.50, 0.05,
                 0.05, 0.10, 0.15, 0.20, 0.50;
    return T;
}

enum class Trilean { Yes, No, Tie };

// Definition-1 check at one posterior: does the most probable label survive
// the noise? Argmax ties on either side are reported, not broken.
inline Trilean is_class_preserving_at(const TransitionMatrix& T, const Eigen::VectorXd& posterior) {
    if (posterior.size() != T.c)
        throw std::domain_error("posterior length does not match class count");
    double sum = 0.0;
    for (int i = 0; i < T.c; ++i) {
        if (posterior(i) < -kStochasticTol) throw std::domain_error("posterior has negative entry");
        sum += posterior(i);
    }
    if (std::abs(sum - 1.0) > 1e-6) throw std::domain_error("posterior does not sum to 1");

    auto argmax_with_tie = [&](const Eigen::VectorXd& v) -> std::pair<int, bool> {
        int best = 0;
        for (int i = 1; i < v.size(); ++i)
            if (v(i) > v(best)) best = i;
        bool tie = false;
        for (int i = 0; i < v.size(); ++i)
            if (i != best && std::abs(v(i) - v(best)) <= kStochasticTol) tie = true;
        return {best, tie};
    };

    auto [clean_arg, clean_tie] = argmax_with_tie(posterior);
    Eigen::VectorXd pushed = T.entries * posterior;
    auto [noisy_arg, noisy_tie] = argmax_with_tie(pushed);
    if (clean_tie || noisy_tie) return Trilean::Tie;
    return clean_arg == noisy_arg ? Trilean::Yes : Trilean::No;
}

struct NoiseTaxonomyReport {
    bool uniform = true;  // a single matrix is uniform by construction
    bool symmetric = false;
    bool pairwise = false;
    bool circular = false;
    bool diagonally_dominant = false;
    bool class_preserving_for_separable = false;
    double threshold = 0.0;  // (c-1)/c
};

inline NoiseTaxonomyReport taxonomy(const TransitionMatrix& T) {
    validate(T);
    const double tol = kStochasticTol;
    NoiseTaxonomyReport rep;
    rep.threshold = double(T.c - 1) / T.c;

    // symmetric: all off-diagonal entries equal, all diagonals equal
    bool sym = true;
    double off = -1.0, diag = T.entries(0, 0);
    for (int j = 0; j < T.c && sym; ++j)
        for (int i = 0; i < T.c; ++i) {
            if (i == j) {
                if (std::abs(T.entries(i, j) - diag) > tol) { sym = false; break; }
            } else {
                if (off < 0) off = T.entries(i, j);
                else if (std::abs(T.entries(i, j) - off) > tol) { sym = false; break; }
            }
        }
    rep.symmetric = sym;

    // circular: mass only on diagonal and the next-class slot
    bool circ = true;
    double shift = T.entries(1 % T.c, 0);
    for (int j = 0; j < T.c && circ; ++j)
        for (int i = 0; i < T.c; ++i) {
            double v = T.entries(i, j);
            if (i == j) {
                if (std::abs(v - (1.0 - shift)) > tol) { circ = false; break; }
            } else if (i == (j + 1) % T.c) {
                if (std::abs(v - shift) > tol) { circ = false; break; }
            } else if (std::abs(v) > tol) { circ = false; break; }
        }
    rep.circular = circ;

    // pairwise: every column is either identity or moves a single eta to one
    // other class, with no target hit twice
    bool pw = true;
    std::set<int> hit;
    for (int j = 0; j < T.c && pw; ++j) {
        int off_count = 0, target = -1;
        for (int i = 0; i < T.c; ++i) {
            if (i == j) continue;
            if (T.entries(i, j) > tol) { ++off_count; target = i; }
        }
        if (off_count == 0) continue;
        if (off_count > 1) { pw = false; break; }
        if (!hit.insert(target).second) { pw = false; break; }
    }
    rep.pairwise = pw;

    bool dd = true;
    for (int j = 0; j < T.c && dd; ++j)
        for (int i = 0; i < T.c; ++i)
            if (i != j && T.entries(j, j) <= T.entries(i, j) + tol) { dd = false; break; }
    rep.diagonally_dominant = dd;

    // For separable data the clean posterior is one-hot, so preservation is
    // exactly column-wise diagonal dominance.
    rep.class_preserving_for_separable = dd;
    return rep;
}

// Plain-text serialization: "c" on the first line, then c rows of c entries
// at 17 significant digits (round-trips doubles exactly).
inline void save_matrix(const TransitionMatrix& T, const std::string& path) {
    validate(T);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << T.c << "\n";
    char buf[64];
    for (int i = 0; i < T.c; ++i) {
        for (int j = 0; j < T.c; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", T.entries(i, j));
            out << buf << (j + 1 < T.c ? " " : "\n");
        }
    }
    if (!out) throw std::runtime_error("write to " + path + " failed");
}

inline TransitionMatrix load_matrix(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    int c = 0;
    if (!(in >> c) || c < 2) throw std::runtime_error(path + ": bad class count line");
    TransitionMatrix T{c, Eigen::MatrixXd::Zero(c, c)};
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j)
            if (!(in >> T.entries(i, j)))
                throw std::runtime_error(path + ": truncated at row " + std::to_string(i));
    validate(T);
    return T;
}

}  // namespace noisylab
