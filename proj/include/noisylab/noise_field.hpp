#pragma once

// Instance-dependent noise. A NoiseField maps a feature row to a transition
// matrix; uniform noise is the constant field. Two non-uniform recipes are
// built in: a per-class PCA split that routes each half of a class to a
// different mixing matrix, and classifier-induced noise that flips toward a
// fixed predictor's output.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"
#include "transition_matrix.hpp"

namespace noisylab {

enum class FieldKind { Uniform, PcaSplit, ClassifierInduced };

struct NoiseField {
    FieldKind kind = FieldKind::Uniform;
    std::string tag;       // symmetric | pairwise | circular | custom | ...
    double eta = 0.0;      // nominal rate
    int c = 0;

    // Uniform field.
    TransitionMatrix constant;

    // PCA split: per-class mean and first principal component, plus the two
    // mixing matrices. Column j of the returned matrix depends on the sign
    // of the query point's projection onto class j's component.
    Eigen::MatrixXd class_means;   // c x d
    Eigen::MatrixXd class_axes;    // c x d, unit rows
    TransitionMatrix mix_negative;
    TransitionMatrix mix_positive;

    // Classifier-induced: with probability eta the noisy label becomes the
    // predictor's output at x.
    std::function<int(const Eigen::RowVectorXd&)> predict;

    TransitionMatrix matrix_at(const Eigen::RowVectorXd& x) const {
        switch (kind) {
            case FieldKind::Uniform:
                return constant;
            case FieldKind::PcaSplit: {
                TransitionMatrix T;
                T.c = c;
                T.entries = (1.0 - eta) * Eigen::MatrixXd::Identity(c, c);
                for (int j = 0; j < c; ++j) {
                    double s = (x - class_means.row(j)).dot(class_axes.row(j));
                    // A projection of exactly zero lands on the positive side.
                    const TransitionMatrix& mix = (s < 0) ? mix_negative : mix_positive;
                    T.entries.col(j) += eta * mix.entries.col(j);
                }
                return T;
            }
            case FieldKind::ClassifierInduced: {
                int k = predict(x);
                if (k < 0 || k >= c)
                    throw std::runtime_error("noise-field predictor returned label " +
                                             std::to_string(k) + " outside 0.." +
                                             std::to_string(c - 1));
                TransitionMatrix T;
                T.c = c;
                T.entries = (1.0 - eta) * Eigen::MatrixXd::Identity(c, c);
                T.entries.row(k).array() += eta;
                return T;
            }
        }
        throw std::logic_error("unreachable noise field kind");
    }
};

inline NoiseField make_uniform_field(const TransitionMatrix& T, std::string tag, double eta) {
    validate(T);
    NoiseField f;
    f.kind = FieldKind::Uniform;
    f.tag = std::move(tag);
    f.eta = eta;
    f.c = T.c;
    f.constant = T;
    return f;
}

// Mixing matrix that forgets the label entirely: every entry 1/c.
inline TransitionMatrix uniform_mixing_matrix(int c) {
    TransitionMatrix T;
    T.c = c;
    T.entries = Eigen::MatrixXd::Constant(c, c, 1.0 / c);
    return T;
}

// Mixing matrix that is uniform within each listed group and identity on
// classes that appear in no group.
inline TransitionMatrix subset_uniform_matrix(int c, const std::vector<std::vector<int>>& groups) {
    TransitionMatrix T;
    T.c = c;
    T.entries = Eigen::MatrixXd::Identity(c, c);
    std::vector<int> seen(c, 0);
    for (const auto& g : groups) {
        for (int lbl : g) {
            if (lbl < 0 || lbl >= c)
                throw std::invalid_argument("group label " + std::to_string(lbl) +
                                            " outside 0.." + std::to_string(c - 1));
            if (seen[lbl]++)
                throw std::invalid_argument("label " + std::to_string(lbl) +
                                            " appears in more than one group");
        }
        for (int src : g) {
            T.entries.col(src).setZero();
            for (int dst : g) T.entries(dst, src) = 1.0 / double(g.size());
        }
    }
    validate(T);
    return T;
}

namespace detail {

// Leading eigenvector of the sample covariance by power iteration, stopping
// at 1e-8 relative change or 1000 rounds. Sign is pinned so the entry of
// largest magnitude is positive (power iteration alone leaves it arbitrary,
// and the split sides must be reproducible).
inline Eigen::RowVectorXd principal_axis(const Eigen::MatrixXd& centered) {
    const Eigen::Index d = centered.cols();
    Eigen::MatrixXd cov = centered.transpose() * centered / double(centered.rows() - 1);
    Eigen::VectorXd v = Eigen::VectorXd::Ones(d).normalized();
    for (int it = 0; it < 1000; ++it) {
        Eigen::VectorXd w = cov * v;
        double norm = w.norm();
        if (norm < 1e-300) break;  // started in the null space; caller screens degeneracy
        w /= norm;
        if (w.dot(v) < 0) w = -w;
        double delta = (w - v).norm();
        v = w;
        if (delta <= 1e-8) break;
    }
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v(imax) < 0) v = -v;
    return v.transpose();
}

}  // namespace detail

// Per class: compute the mean and first principal component of that class's
// rows. At query time, column j of the field's matrix blends identity with
// mix_negative or mix_positive depending on the sign of the query point's
// centered projection onto class j's component. For a point of true class y
// this reproduces the recipe "keep the label with probability 1-eta, else
// resample through the matrix chosen by the PC1 side".
inline NoiseField build_pca_split_field(const Eigen::MatrixXd& features,
                                        const std::vector<int>& labels, int c, double eta,
                                        const TransitionMatrix& mix_negative,
                                        const TransitionMatrix& mix_positive) {
    check_rate(eta);
    validate(mix_negative);
    validate(mix_positive);
    if (mix_negative.c != c || mix_positive.c != c)
        throw std::invalid_argument("mixing matrices must be " + std::to_string(c) + "x" +
                                    std::to_string(c));
    if (static_cast<Eigen::Index>(labels.size()) != features.rows())
        throw std::invalid_argument("label count does not match feature rows");

    NoiseField f;
    f.kind = FieldKind::PcaSplit;
    f.tag = "pca-split";
    f.eta = eta;
    f.c = c;
    f.mix_negative = mix_negative;
    f.mix_positive = mix_positive;
    f.class_means.resize(c, features.cols());
    f.class_axes.resize(c, features.cols());

    for (int j = 0; j < c; ++j) {
        std::vector<int> rows;
        for (int i = 0; i < int(labels.size()); ++i)
            if (labels[i] == j) rows.push_back(i);
        if (rows.size() < 2)
            throw std::invalid_argument("class " + std::to_string(j) + " has " +
                                        std::to_string(rows.size()) +
                                        " samples, need at least 2 for a principal axis");
        Eigen::MatrixXd sub(rows.size(), features.cols());
        for (std::size_t k = 0; k < rows.size(); ++k) sub.row(Eigen::Index(k)) = features.row(rows[k]);
        Eigen::RowVectorXd mean = sub.colwise().mean();
        Eigen::MatrixXd centered = sub.rowwise() - mean;
        if (centered.cwiseAbs().maxCoeff() < 1e-12)
            throw std::invalid_argument("class " + std::to_string(j) +
                                        " is a single point, principal axis undefined");
        f.class_means.row(j) = mean;
        f.class_axes.row(j) = detail::principal_axis(centered);
    }
    return f;
}

inline NoiseField build_pca_split_field(const Eigen::MatrixXd& features,
                                        const std::vector<int>& labels, int c, double eta) {
    std::vector<std::vector<int>> groups;
    for (int base = 0; base + 2 < c; base += 3) groups.push_back({base, base + 1, base + 2});
    return build_pca_split_field(features, labels, c, eta, uniform_mixing_matrix(c),
                                 subset_uniform_matrix(c, groups));
}

inline NoiseField build_classifier_induced_field(
    std::function<int(const Eigen::RowVectorXd&)> predict, int c, double eta) {
    check_rate(eta);
    if (!predict) throw std::invalid_argument("classifier-induced field needs a predictor");
    NoiseField f;
    f.kind = FieldKind::ClassifierInduced;
    f.tag = "classifier-induced";
    f.eta = eta;
    f.c = c;
    f.predict = std::move(predict);
    return f;
}

// Accuracy of the predictor a classifier-induced field was built around,
// for reporting next to the flip rate.
inline double field_predictor_accuracy(const NoiseField& f, const Eigen::MatrixXd& features,
                                       const std::vector<int>& labels) {
    if (f.kind != FieldKind::ClassifierInduced)
        throw std::invalid_argument("field has no embedded predictor");
    int hits = 0;
    for (int i = 0; i < int(labels.size()); ++i)
        if (f.predict(features.row(i)) == labels[i]) ++hits;
    return labels.empty() ? 0.0 : double(hits) / double(labels.size());
}

// Resample every label from column y of the matrix the field returns at its
// instance. Sequential and fully determined by the seed.
inline std::vector<int> apply_noise(const std::vector<int>& labels, const NoiseField& field,
                                    const Eigen::MatrixXd& instances, std::uint64_t seed) {
    if (static_cast<Eigen::Index>(labels.size()) != instances.rows())
        throw std::invalid_argument("label count does not match instance rows");
    Rng rng(seed);
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        int y = labels[i];
        if (y < 0 || y >= field.c)
            throw std::invalid_argument("label " + std::to_string(y) + " at row " +
                                        std::to_string(i) + " outside 0.." +
                                        std::to_string(field.c - 1));
        TransitionMatrix T = field.matrix_at(instances.row(Eigen::Index(i)));
        double u = rng.uniform();
        double cum = 0.0;
        int drawn = field.c - 1;  // numerical leftovers land on the last class
        for (int k = 0; k < field.c; ++k) {
            cum += T.entries(k, y);
            if (u < cum) {
                drawn = k;
                break;
            }
        }
        out[i] = drawn;
    }
    return out;
}

}  // namespace noisylab
