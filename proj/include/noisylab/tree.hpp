#pragma once

// Depth-limited CART classifier. Greedy recursive partitioning on Gini
// impurity; candidate thresholds are midpoints between consecutive distinct
// feature values. Split ties go to the lowest feature index, then the
// lowest threshold (this falls out of scanning features and thresholds in
// ascending order and replacing only on strict improvement). Fitting is
// fully deterministic.

#include <Eigen/Dense>
#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "losses.hpp"

namespace noisylab {

struct TreeNode {
    int feature = -1;        // -1 marks a leaf
    double threshold = 0.0;  // left branch takes x(feature) <= threshold
    int left = -1;
    int right = -1;
    Eigen::VectorXd freq;    // leaf class frequencies
};

struct TreeEstimator {
    int max_depth = 0;
    int c = 0;
    std::vector<TreeNode> nodes;  // root at index 0
};

namespace detail {

inline double gini(const std::vector<int>& counts, int total) {
    if (total == 0) return 0.0;
    double sumsq = 0.0;
    for (int n : counts) {
        double p = double(n) / total;
        sumsq += p * p;
    }
    return 1.0 - sumsq;
}

struct SplitChoice {
    bool found = false;
    int feature = -1;
    double threshold = 0.0;
    double weighted_gini = 0.0;
};

inline SplitChoice best_split(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                              const std::vector<int>& rows, int c) {
    SplitChoice best;
    const int n = int(rows.size());
    std::vector<std::pair<double, int>> vals(n);
    for (int f = 0; f < int(features.cols()); ++f) {
        for (int k = 0; k < n; ++k) vals[k] = {features(rows[k], f), labels[rows[k]]};
        std::sort(vals.begin(), vals.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        std::vector<int> left_counts(c, 0), right_counts(c, 0);
        for (int k = 0; k < n; ++k) ++right_counts[vals[k].second];
        for (int k = 0; k + 1 < n; ++k) {
            ++left_counts[vals[k].second];
            --right_counts[vals[k].second];
            if (vals[k].first == vals[k + 1].first) continue;
            double w = (double(k + 1) * gini(left_counts, k + 1) +
                        double(n - k - 1) * gini(right_counts, n - k - 1)) /
                       n;
            if (!best.found || w < best.weighted_gini) {
                best.found = true;
                best.feature = f;
                best.threshold = (vals[k].first + vals[k + 1].first) / 2.0;
                best.weighted_gini = w;
            }
        }
    }
    return best;
}

inline int grow(TreeEstimator& tree, const Eigen::MatrixXd& features,
                const std::vector<int>& labels, const std::vector<int>& rows, int depth) {
    std::vector<int> counts(tree.c, 0);
    for (int r : rows) ++counts[labels[r]];

    int node_id = int(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes[node_id].freq.resize(tree.c);
    for (int k = 0; k < tree.c; ++k)
        tree.nodes[node_id].freq(k) = double(counts[k]) / double(rows.size());

    bool pure = *std::max_element(counts.begin(), counts.end()) == int(rows.size());
    if (pure || depth >= tree.max_depth) return node_id;

    SplitChoice split = best_split(features, labels, rows, tree.c);
    if (!split.found) return node_id;  // all rows identical on every feature

    std::vector<int> left_rows, right_rows;
    for (int r : rows) {
        if (features(r, split.feature) <= split.threshold)
            left_rows.push_back(r);
        else
            right_rows.push_back(r);
    }
    tree.nodes[node_id].feature = split.feature;
    tree.nodes[node_id].threshold = split.threshold;
    int left_id = grow(tree, features, labels, left_rows, depth + 1);
    tree.nodes[node_id].left = left_id;
    int right_id = grow(tree, features, labels, right_rows, depth + 1);
    tree.nodes[node_id].right = right_id;
    return node_id;
}

}  // namespace detail

inline TreeEstimator tree_fit(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                              int c, int max_depth) {
    if (max_depth < 0) throw std::invalid_argument("max depth must be nonnegative");
    if (features.rows() == 0) throw std::invalid_argument("cannot fit a tree to no data");
    if (static_cast<Eigen::Index>(labels.size()) != features.rows())
        throw std::invalid_argument("label count does not match feature rows");
    for (int y : labels)
        if (y < 0 || y >= c) throw std::invalid_argument("label outside 0.." + std::to_string(c - 1));
    TreeEstimator tree;
    tree.max_depth = max_depth;
    tree.c = c;
    std::vector<int> rows(features.rows());
    std::iota(rows.begin(), rows.end(), 0);
    detail::grow(tree, features, labels, rows, 0);
    return tree;
}

inline Eigen::VectorXd forward_one(const TreeEstimator& tree, const Eigen::RowVectorXd& x) {
    int id = 0;
    while (tree.nodes[id].feature >= 0)
        id = (x(tree.nodes[id].feature) <= tree.nodes[id].threshold) ? tree.nodes[id].left
                                                                     : tree.nodes[id].right;
    return tree.nodes[id].freq;
}

inline Eigen::MatrixXd forward_batch(const TreeEstimator& tree, const Eigen::MatrixXd& features) {
    Eigen::MatrixXd out(features.rows(), tree.c);
    for (Eigen::Index i = 0; i < features.rows(); ++i)
        out.row(i) = forward_one(tree, features.row(i)).transpose();
    return out;
}

// Checkpoint layout: tag 'NLTR' (u32 LE) | max depth u32 | class count u32 |
// node count u32 | per node: feature i32, threshold f64, left i32, right
// i32, then c leaf frequencies as f64. Exact round-trip.
constexpr std::uint32_t kTreeTag = 0x4e4c5452;  // "NLTR"

inline void save_checkpoint(const TreeEstimator& tree, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    auto put = [&](const void* p, std::size_t len) {
        out.write(static_cast<const char*>(p), std::streamsize(len));
    };
    std::uint32_t tag = kTreeTag, depth = std::uint32_t(tree.max_depth), c = std::uint32_t(tree.c),
                  count = std::uint32_t(tree.nodes.size());
    put(&tag, 4);
    put(&depth, 4);
    put(&c, 4);
    put(&count, 4);
    for (const TreeNode& node : tree.nodes) {
        std::int32_t f = node.feature, l = node.left, r = node.right;
        put(&f, 4);
        put(&node.threshold, 8);
        put(&l, 4);
        put(&r, 4);
        for (Eigen::Index k = 0; k < node.freq.size(); ++k) {
            double v = node.freq(k);
            put(&v, 8);
        }
    }
    if (!out) throw std::runtime_error("write to " + path + " failed");
}

inline TreeEstimator load_tree_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    auto get = [&](void* p, std::size_t len, const char* what) {
        if (!in.read(static_cast<char*>(p), std::streamsize(len)))
            throw std::runtime_error(path + ": truncated reading " + what);
    };
    std::uint32_t tag, depth, c, count;
    get(&tag, 4, "tag");
    if (tag != kTreeTag) throw std::runtime_error(path + ": not a tree checkpoint");
    get(&depth, 4, "depth");
    get(&c, 4, "class count");
    get(&count, 4, "node count");
    TreeEstimator tree;
    tree.max_depth = int(depth);
    tree.c = int(c);
    tree.nodes.resize(count);
    for (TreeNode& node : tree.nodes) {
        std::int32_t f, l, r;
        get(&f, 4, "feature");
        get(&node.threshold, 8, "threshold");
        get(&l, 4, "left");
        get(&r, 4, "right");
        node.feature = f;
        node.left = l;
        node.right = r;
        node.freq.resize(c);
        for (std::uint32_t k = 0; k < c; ++k) get(&node.freq(k), 8, "leaf frequencies");
    }
    return tree;
}

}  // namespace noisylab
