#pragma once

// Datasets and splits. Features live in an n x d Eigen matrix, one row per
// instance. Labels are 0-based ints. A dataset optionally carries a second,
// noisy label track produced by a recorded noise model and seed.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "idx.hpp"
#include "rng.hpp"

namespace noisylab {

struct Dataset {
    Eigen::MatrixXd features;            // n x d
    std::vector<int> clean_labels;       // n entries in [0, c)
    std::optional<std::vector<int>> noisy_labels;
    int c = 0;
    std::string provenance;              // source tag + seed + noise descriptor

    Eigen::Index n() const { return features.rows(); }
    Eigen::Index d() const { return features.cols(); }
};

inline void validate(const Dataset& ds) {
    if (ds.c < 1) throw std::invalid_argument("dataset has no classes");
    if (static_cast<Eigen::Index>(ds.clean_labels.size()) != ds.n())
        throw std::invalid_argument("clean label count does not match feature rows");
    for (int y : ds.clean_labels)
        if (y < 0 || y >= ds.c) throw std::invalid_argument("clean label out of range");
    if (ds.noisy_labels) {
        if (ds.noisy_labels->size() != ds.clean_labels.size())
            throw std::invalid_argument("noisy label count does not match feature rows");
        for (int y : *ds.noisy_labels)
            if (y < 0 || y >= ds.c) throw std::invalid_argument("noisy label out of range");
    }
}

enum class LabelTrack { Clean, Noisy };

inline const std::vector<int>& track_labels(const Dataset& ds, LabelTrack track) {
    if (track == LabelTrack::Clean) return ds.clean_labels;
    if (!ds.noisy_labels)
        throw std::invalid_argument("dataset " + ds.provenance + " has no noisy label track");
    return *ds.noisy_labels;
}

// train fits on noisy labels; noisy_val drives NES; clean_val drives ES;
// test is always evaluated clean. noisy_val and clean_val hold the same
// instances, differing only in which label track the policies read.
struct SplitBundle {
    Dataset train;
    Dataset noisy_val;
    Dataset clean_val;
    Dataset test;
};

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    IdxImages img = read_idx_images(images_path);
    std::vector<unsigned char> raw_labels = read_idx_labels(labels_path);
    if (raw_labels.size() != img.count)
        throw std::runtime_error(labels_path + ": " + std::to_string(raw_labels.size()) +
                                 " labels for " + std::to_string(img.count) + " images");
    Dataset ds;
    const Eigen::Index n = img.count;
    const Eigen::Index d = Eigen::Index(img.rows) * img.cols;
    ds.features.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            ds.features(i, j) = img.pixels[std::size_t(i) * d + j] / 255.0;
    ds.clean_labels.assign(raw_labels.begin(), raw_labels.end());
    int maxlbl = 0;
    for (int y : ds.clean_labels) maxlbl = std::max(maxlbl, y);
    ds.c = maxlbl + 1;
    ds.provenance = "idx:" + images_path;
    return ds;
}

inline Dataset take_rows(const Dataset& ds, const std::vector<int>& idx) {
    Dataset out;
    out.features.resize(Eigen::Index(idx.size()), ds.d());
    out.clean_labels.resize(idx.size());
    if (ds.noisy_labels) out.noisy_labels.emplace(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        out.features.row(Eigen::Index(k)) = ds.features.row(idx[k]);
        out.clean_labels[k] = ds.clean_labels[idx[k]];
        if (ds.noisy_labels) (*out.noisy_labels)[k] = (*ds.noisy_labels)[idx[k]];
    }
    out.c = ds.c;
    out.provenance = ds.provenance;
    return out;
}

// Shuffle once with the given seed, then cut contiguously. Sizes are
// round(n * fraction) with the test split absorbing the remainder.
inline SplitBundle split(const Dataset& ds, double f_train, double f_val, double f_test,
                         std::uint64_t seed) {
    if (!(f_train > 0 && f_val > 0 && f_test > 0))
        throw std::invalid_argument("split fractions must be positive");
    if (std::abs(f_train + f_val + f_test - 1.0) > 1e-9)
        throw std::invalid_argument("split fractions must sum to 1");
    const int n = int(ds.n());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);

    int n_train = int(std::lround(n * f_train));
    int n_val = int(std::lround(n * f_val));
    int n_test = n - n_train - n_val;
    if (n_train < 1 || n_val < 1 || n_test < 1)
        throw std::invalid_argument("split leaves an empty part (n=" + std::to_string(n) + ")");

    auto slice = [&](int lo, int hi) {
        return std::vector<int>(order.begin() + lo, order.begin() + hi);
    };
    SplitBundle b;
    b.train = take_rows(ds, slice(0, n_train));
    Dataset val = take_rows(ds, slice(n_train, n_train + n_val));
    b.test = take_rows(ds, slice(n_train + n_val, n));
    b.noisy_val = val;
    b.clean_val = std::move(val);
    b.clean_val.noisy_labels.reset();  // ES must not see the noisy track
    b.test.noisy_labels.reset();
    return b;
}

// Gaussian cluster generator. Class centers sit on distinct random vertices
// of the hypercube [-2,2]^informative; the remaining features are pure
// standard-normal nuisance. Features are standardized at the end, matching
// the scaler step of the source experiment.
inline Dataset make_synthetic(int n, int d, int informative, int c, std::uint64_t seed) {
    if (informative > d) throw std::invalid_argument("informative cannot exceed d");
    if (c < 2) throw std::invalid_argument("need at least two classes");
    if (n < 1) throw std::invalid_argument("need at least one sample");
    Rng rng(seed);

    std::vector<std::vector<double>> centers;
    std::vector<std::vector<int>> used;
    while (int(centers.size()) < c) {
        std::vector<int> bits(informative);
        for (auto& b : bits) b = int(rng.below(2));
        if (std::find(used.begin(), used.end(), bits) != used.end()) continue;
        used.push_back(bits);
        std::vector<double> ctr(informative);
        for (int k = 0; k < informative; ++k) ctr[k] = bits[k] ? 2.0 : -2.0;
        centers.push_back(std::move(ctr));
    }

    Dataset ds;
    ds.features.resize(n, d);
    ds.clean_labels.resize(n);
    ds.c = c;
    for (int i = 0; i < n; ++i) {
        int y = int(rng.below(std::uint64_t(c)));
        ds.clean_labels[i] = y;
        for (int j = 0; j < d; ++j) {
            double v = rng.normal();
            if (j < informative) v += centers[y][j];
            ds.features(i, j) = v;
        }
    }

    for (int j = 0; j < d; ++j) {
        double mean = ds.features.col(j).mean();
        double var = (ds.features.col(j).array() - mean).square().mean();
        double sd = std::sqrt(var);
        if (sd < 1e-15) sd = 1.0;
        ds.features.col(j) = (ds.features.col(j).array() - mean) / sd;
    }
    ds.provenance = "synthetic:n=" + std::to_string(n) + ",d=" + std::to_string(d) +
                    ",informative=" + std::to_string(informative) + ",c=" + std::to_string(c) +
                    ",seed=" + std::to_string(seed);
    return ds;
}

// Keep only the listed classes and re-index labels densely, preserving the
// ascending order of the kept labels.
inline Dataset subset_classes(const Dataset& ds, const std::vector<int>& keep) {
    if (keep.empty()) throw std::invalid_argument("subset_classes: empty keep set");
    std::vector<int> sorted = keep;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<int> remap(ds.c, -1);
    for (std::size_t k = 0; k < sorted.size(); ++k) {
        if (sorted[k] < 0 || sorted[k] >= ds.c)
            throw std::invalid_argument("subset_classes: label outside dataset range");
        remap[sorted[k]] = int(k);
    }
    std::vector<int> idx;
    for (int i = 0; i < int(ds.n()); ++i)
        if (remap[ds.clean_labels[i]] >= 0) idx.push_back(i);
    if (idx.empty()) throw std::invalid_argument("subset_classes: no instances match the keep set");

    Dataset out = take_rows(ds, idx);
    out.c = int(sorted.size());
    for (auto& y : out.clean_labels) y = remap[y];
    if (out.noisy_labels)
        for (auto& y : *out.noisy_labels) {
            if (remap[y] < 0)
                throw std::invalid_argument(
                    "subset_classes: noisy label outside the keep set; subset before injecting "
                    "noise");
            y = remap[y];
        }
    out.provenance = ds.provenance + "+subset";
    return out;
}

// Single-file cache. 16-byte header: tag 'NLDS' (u32 LE) | version u16 |
// c u16 | n u32 | d u32. Then features as little-endian doubles row-major,
// clean labels as u16, one flag byte, optional noisy labels as u16.
constexpr std::uint32_t kCacheTag = 0x4e4c4453;  // "NLDS"
constexpr std::uint16_t kCacheVersion = 1;

inline void save_cache(const Dataset& ds, const std::string& path) {
    validate(ds);
    if (ds.c > 0xffff) throw std::invalid_argument("cache format caps classes at 65535");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    auto put = [&](const void* p, std::size_t len) {
        out.write(static_cast<const char*>(p), std::streamsize(len));
    };
    std::uint32_t tag = kCacheTag, n = std::uint32_t(ds.n()), d = std::uint32_t(ds.d());
    std::uint16_t ver = kCacheVersion, c = std::uint16_t(ds.c);
    put(&tag, 4); put(&ver, 2); put(&c, 2); put(&n, 4); put(&d, 4);
    for (Eigen::Index i = 0; i < ds.n(); ++i)
        for (Eigen::Index j = 0; j < ds.d(); ++j) {
            double v = ds.features(i, j);
            put(&v, 8);
        }
    for (int y : ds.clean_labels) {
        std::uint16_t v = std::uint16_t(y);
        put(&v, 2);
    }
    std::uint8_t has_noisy = ds.noisy_labels ? 1 : 0;
    put(&has_noisy, 1);
    if (ds.noisy_labels)
        for (int y : *ds.noisy_labels) {
            std::uint16_t v = std::uint16_t(y);
            put(&v, 2);
        }
    if (!out) throw std::runtime_error("write to " + path + " failed");
}

inline Dataset load_cache(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    auto get = [&](void* p, std::size_t len, const char* what) {
        if (!in.read(static_cast<char*>(p), std::streamsize(len)))
            throw std::runtime_error(path + ": truncated reading " + what);
    };
    std::uint32_t tag, n, d;
    std::uint16_t ver, c;
    get(&tag, 4, "tag");
    if (tag != kCacheTag) throw std::runtime_error(path + ": not a dataset cache file");
    get(&ver, 2, "version");
    if (ver != kCacheVersion)
        throw std::runtime_error(path + ": cache version " + std::to_string(ver) + " unsupported");
    get(&c, 2, "class count");
    get(&n, 4, "row count");
    get(&d, 4, "column count");
    Dataset ds;
    ds.c = c;
    ds.features.resize(n, d);
    for (std::uint32_t i = 0; i < n; ++i)
        for (std::uint32_t j = 0; j < d; ++j) {
            double v;
            get(&v, 8, "features");
            ds.features(i, j) = v;
        }
    ds.clean_labels.resize(n);
    for (auto& y : ds.clean_labels) {
        std::uint16_t v;
        get(&v, 2, "clean labels");
        y = v;
    }
    std::uint8_t has_noisy;
    get(&has_noisy, 1, "noisy flag");
    if (has_noisy) {
        ds.noisy_labels.emplace(n);
        for (auto& y : *ds.noisy_labels) {
            std::uint16_t v;
            get(&v, 2, "noisy labels");
            y = v;
        }
    }
    ds.provenance = "cache:" + path;
    validate(ds);
    return ds;
}

}  // namespace noisylab
