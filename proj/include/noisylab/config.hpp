#pragma once

// Experiment configuration: flat key=value text, dotted section keys, `#`
// comments. Validation is fail-fast but exhaustive: every problem in the
// file is collected and reported in one error, so a config never dies one
// typo at a time.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "losses.hpp"
#include "training.hpp"

namespace noisylab {

struct ConfigError : std::runtime_error {
    std::vector<std::string> problems;
    explicit ConfigError(std::vector<std::string> p)
        : std::runtime_error(join(p)), problems(std::move(p)) {}

private:
    static std::string join(const std::vector<std::string>& p) {
        std::string s = "configuration invalid (" + std::to_string(p.size()) + " problem" +
                        (p.size() == 1 ? "" : "s") + "):";
        for (const auto& line : p) s += "\n  - " + line;
        return s;
    }
};

// Key-value store with typed accessors that record problems instead of
// throwing, so one pass surfaces everything at once. Keys read through any
// accessor are marked used; finish() flags the leftovers as unknown.
class ConfigReader {
public:
    ConfigReader() = default;

    static ConfigReader from_stream(std::istream& in, const std::string& origin) {
        ConfigReader r;
        r.origin_ = origin;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            auto eq = trimmed.find('=');
            if (eq == std::string::npos) {
                r.problems_.push_back(origin + ":" + std::to_string(lineno) +
                                      ": expected key=value, got '" + trimmed + "'");
                continue;
            }
            std::string key = trim(trimmed.substr(0, eq));
            std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty()) {
                r.problems_.push_back(origin + ":" + std::to_string(lineno) + ": empty key");
                continue;
            }
            if (r.values_.count(key)) {
                r.problems_.push_back(origin + ":" + std::to_string(lineno) + ": duplicate key '" +
                                      key + "'");
                continue;
            }
            r.values_[key] = value;
        }
        return r;
    }

    static ConfigReader from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) {
            ConfigReader r;
            r.problems_.push_back("cannot open config file " + path);
            return r;
        }
        return from_stream(in, path);
    }

    // Command-line overrides land on top of the file's pairs.
    void override_value(const std::string& key, const std::string& value) {
        values_[key] = value;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) {
        used_.insert(key);
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::string require_string(const std::string& key) {
        used_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end() || it->second.empty()) {
            problems_.push_back("missing required key '" + key + "'");
            return "";
        }
        return it->second;
    }

    double get_double(const std::string& key, double fallback) {
        return parse_or(key, fallback, [this, &key](const std::string& s, double& out) {
            return parse_double(key, s, out);
        });
    }

    int get_int(const std::string& key, int fallback) {
        return parse_or(key, fallback, [this, &key](const std::string& s, int& out) {
            return parse_int(key, s, out);
        });
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
        return parse_or(key, fallback, [this, &key](const std::string& s, std::uint64_t& out) {
            return parse_u64(key, s, out);
        });
    }

    bool get_bool(const std::string& key, bool fallback) {
        used_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        problems_.push_back(key + ": expected true or false, got '" + it->second + "'");
        return fallback;
    }

    std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) {
        used_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<double> out;
        for (const std::string& cell : split(it->second, ',')) {
            double v;
            if (!parse_double(key, cell, v)) return fallback;
            out.push_back(v);
        }
        return out;
    }

    std::vector<int> get_ints(const std::string& key, std::vector<int> fallback) {
        used_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<int> out;
        for (const std::string& cell : split(it->second, ',')) {
            int v;
            if (!parse_int(key, cell, v)) return fallback;
            out.push_back(v);
        }
        return out;
    }

    std::vector<std::uint64_t> get_u64s(const std::string& key, std::vector<std::uint64_t> fallback) {
        used_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<std::uint64_t> out;
        for (const std::string& cell : split(it->second, ',')) {
            std::uint64_t v;
            if (!parse_u64(key, cell, v)) return fallback;
            out.push_back(v);
        }
        return out;
    }

    void fail(const std::string& message) { problems_.push_back(message); }

    // Call after all reads: unknown keys become problems, and any collected
    // problem raises ConfigError.
    void finish() {
        for (const auto& [key, value] : values_)
            if (!used_.count(key)) problems_.push_back("unknown key '" + key + "'");
        if (!problems_.empty()) throw ConfigError(std::move(problems_));
    }

    static std::vector<std::string> split(const std::string& s, char sep) {
        std::vector<std::string> out;
        std::string cell;
        std::istringstream in(s);
        while (std::getline(in, cell, sep)) out.push_back(trim(cell));
        return out;
    }

private:
    static std::string trim(const std::string& s) {
        auto begin = s.find_first_not_of(" \t\r");
        if (begin == std::string::npos) return "";
        auto end = s.find_last_not_of(" \t\r");
        return s.substr(begin, end - begin + 1);
    }

    template <class T, class Parse>
    T parse_or(const std::string& key, T fallback, Parse parse) {
        used_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        T out;
        if (!parse(it->second, out)) return fallback;
        return out;
    }

    bool parse_double(const std::string& key, const std::string& s, double& out) {
        try {
            std::size_t pos = 0;
            out = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument("");
            return true;
        } catch (...) {
            problems_.push_back(key + ": expected a number, got '" + s + "'");
            return false;
        }
    }

    bool parse_int(const std::string& key, const std::string& s, int& out) {
        try {
            std::size_t pos = 0;
            out = std::stoi(s, &pos);
            if (pos != s.size()) throw std::invalid_argument("");
            return true;
        } catch (...) {
            problems_.push_back(key + ": expected an integer, got '" + s + "'");
            return false;
        }
    }

    bool parse_u64(const std::string& key, const std::string& s, std::uint64_t& out) {
        try {
            std::size_t pos = 0;
            out = std::stoull(s, &pos);
            if (pos != s.size()) throw std::invalid_argument("");
            return true;
        } catch (...) {
            problems_.push_back(key + ": expected an unsigned integer, got '" + s + "'");
            return false;
        }
    }

    std::string origin_;
    std::map<std::string, std::string> values_;
    std::set<std::string> used_;
    std::vector<std::string> problems_;
};

enum class DatasetKind { Idx, Synthetic, Cache };

struct DatasetSpec {
    DatasetKind kind = DatasetKind::Synthetic;
    std::string images, labels, cache;  // file sources
    int limit = 0;                      // keep only the first N rows after load (0 = all)
    std::vector<int> classes;           // optional class subset
    int n = 2000, d = 20, informative = 10, c = 3;  // synthetic shape
    std::uint64_t seed = 42;                        // synthetic generation seed
};

enum class NoiseKind {
    None,
    Symmetric,
    SymmetricResample,
    Circular,
    Pairwise,
    AsymMnist,
    SuperclassCircular,
    RankedTernary,
    RankedFive,
    PcaSplit,
    ClassifierInduced,
    MatrixFile,
};

struct NoiseSpec {
    NoiseKind kind = NoiseKind::None;
    double eta = 0.0;
    std::vector<std::pair<int, int>> pairs;   // pairwise sources/targets
    std::vector<std::vector<int>> groups;     // superclass partition
    std::string matrix_path;                  // explicit matrix file
    std::optional<std::uint64_t> seed;        // injection seed; default derives from run seed
    int predictor_epochs = 1;                 // classifier-induced field
    double predictor_lr = 0.01;
};

inline std::string noise_kind_name(NoiseKind k) {
    switch (k) {
        case NoiseKind::None: return "none";
        case NoiseKind::Symmetric: return "symmetric";
        case NoiseKind::SymmetricResample: return "symmetric_resample";
        case NoiseKind::Circular: return "circular";
        case NoiseKind::Pairwise: return "pairwise";
        case NoiseKind::AsymMnist: return "asym_mnist";
        case NoiseKind::SuperclassCircular: return "superclass_circular";
        case NoiseKind::RankedTernary: return "ranked_ternary";
        case NoiseKind::RankedFive: return "ranked_five";
        case NoiseKind::PcaSplit: return "pca_split";
        case NoiseKind::ClassifierInduced: return "classifier_induced";
        case NoiseKind::MatrixFile: return "matrix";
    }
    return "?";
}

struct ExperimentConfig {
    DatasetSpec dataset;
    double f_train = 0.7, f_val = 0.15, f_test = 0.15;
    std::optional<std::uint64_t> split_seed;  // default derives from run seed
    NoiseSpec noise;
    std::vector<int> hidden{64, 64};
    LossKind loss_kind = LossKind::Ce;
    double gce_rho = 0.7;
    double sce_alpha = 1.0, sce_beta = 1.0, sce_clip = -4.0;
    int max_epochs = 100;
    int patience = 10;
    double lr = 0.05;
    int batch_size = 128;
    bool log_gvectors = false;
    std::vector<Policy> policies{Policy::Nes, Policy::Es, Policy::Wes};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::string out_dir = "runs";
};

namespace detail {

inline std::optional<NoiseKind> parse_noise_kind(const std::string& s) {
    for (NoiseKind k :
         {NoiseKind::None, NoiseKind::Symmetric, NoiseKind::SymmetricResample, NoiseKind::Circular,
          NoiseKind::Pairwise, NoiseKind::AsymMnist, NoiseKind::SuperclassCircular,
          NoiseKind::RankedTernary, NoiseKind::RankedFive, NoiseKind::PcaSplit,
          NoiseKind::ClassifierInduced, NoiseKind::MatrixFile})
        if (noise_kind_name(k) == s) return k;
    return std::nullopt;
}

inline std::optional<LossKind> parse_loss_kind(const std::string& s) {
    if (s == "ce") return LossKind::Ce;
    if (s == "mse") return LossKind::Mse;
    if (s == "gce") return LossKind::Gce;
    if (s == "sce") return LossKind::Sce;
    if (s == "fce") return LossKind::Fce;
    if (s == "bce") return LossKind::Bce;
    if (s == "zero_one") return LossKind::ZeroOne;
    return std::nullopt;
}

}  // namespace detail

// Noise keys stand alone because gen-noise and inject read them without the
// rest of an experiment.
inline NoiseSpec read_noise_spec(ConfigReader& r) {
    NoiseSpec noise;
    std::string noise_kind = r.get_string("noise.kind", "none");
    if (auto k = detail::parse_noise_kind(noise_kind)) {
        noise.kind = *k;
    } else {
        r.fail("noise.kind: unknown kind '" + noise_kind + "'");
    }
    noise.eta = r.get_double("noise.eta", 0.0);
    if (!(noise.eta >= 0.0 && noise.eta <= 1.0)) r.fail("noise.eta must lie in [0,1]");
    if (r.has("noise.seed")) noise.seed = r.get_u64("noise.seed", 0);
    for (const std::string& cell : ConfigReader::split(r.get_string("noise.pairs", ""), ',')) {
        if (cell.empty()) continue;
        auto sep = cell.find(':');
        try {
            if (sep == std::string::npos) throw std::invalid_argument("");
            noise.pairs.emplace_back(std::stoi(cell.substr(0, sep)),
                                     std::stoi(cell.substr(sep + 1)));
        } catch (...) {
            r.fail("noise.pairs: expected source:target, got '" + cell + "'");
        }
    }
    for (const std::string& group : ConfigReader::split(r.get_string("noise.groups", ""), ';')) {
        if (group.empty()) continue;
        std::vector<int> members;
        for (const std::string& cell : ConfigReader::split(group, ',')) {
            try {
                members.push_back(std::stoi(cell));
            } catch (...) {
                r.fail("noise.groups: expected label numbers, got '" + cell + "'");
            }
        }
        if (!members.empty()) noise.groups.push_back(std::move(members));
    }
    if (noise.kind == NoiseKind::Pairwise && noise.pairs.empty())
        r.fail("noise.pairs is required for pairwise noise");
    if (noise.kind == NoiseKind::SuperclassCircular && noise.groups.empty())
        r.fail("noise.groups is required for superclass_circular noise");
    if (noise.kind == NoiseKind::MatrixFile) {
        noise.matrix_path = r.require_string("noise.matrix");
        if (!noise.matrix_path.empty() && !std::filesystem::exists(noise.matrix_path))
            r.fail("noise matrix file does not exist: " + noise.matrix_path);
    }
    noise.predictor_epochs = r.get_int("noise.predictor_epochs", noise.predictor_epochs);
    noise.predictor_lr = r.get_double("noise.predictor_lr", noise.predictor_lr);
    if (noise.predictor_epochs < 1) r.fail("noise.predictor_epochs must be at least 1");
    return noise;
}

// Reads the shared experiment keys out of `r` without finishing it, so
// commands can pull their own extra keys first. Every malformed value lands
// in the reader's problem list.
inline ExperimentConfig read_experiment_config(ConfigReader& r) {
    ExperimentConfig cfg;

    std::string ds_kind = r.get_string("dataset.kind", "synthetic");
    if (ds_kind == "idx") {
        cfg.dataset.kind = DatasetKind::Idx;
        cfg.dataset.images = r.require_string("dataset.images");
        cfg.dataset.labels = r.require_string("dataset.labels");
        for (const std::string& path : {cfg.dataset.images, cfg.dataset.labels})
            if (!path.empty() && !std::filesystem::exists(path))
                r.fail("dataset file does not exist: " + path);
    } else if (ds_kind == "cache") {
        cfg.dataset.kind = DatasetKind::Cache;
        cfg.dataset.cache = r.require_string("dataset.cache");
        if (!cfg.dataset.cache.empty() && !std::filesystem::exists(cfg.dataset.cache))
            r.fail("dataset file does not exist: " + cfg.dataset.cache);
    } else if (ds_kind == "synthetic") {
        cfg.dataset.kind = DatasetKind::Synthetic;
        cfg.dataset.n = r.get_int("dataset.n", cfg.dataset.n);
        cfg.dataset.d = r.get_int("dataset.d", cfg.dataset.d);
        cfg.dataset.informative = r.get_int("dataset.informative", cfg.dataset.informative);
        cfg.dataset.c = r.get_int("dataset.c", cfg.dataset.c);
        cfg.dataset.seed = r.get_u64("dataset.seed", cfg.dataset.seed);
        if (cfg.dataset.n < 3) r.fail("dataset.n: need at least 3 samples to split");
        if (cfg.dataset.c < 2) r.fail("dataset.c: need at least 2 classes");
        if (cfg.dataset.informative < 1 || cfg.dataset.informative > cfg.dataset.d)
            r.fail("dataset.informative must lie in [1, dataset.d]");
    } else {
        r.fail("dataset.kind: expected idx, synthetic, or cache, got '" + ds_kind + "'");
    }
    cfg.dataset.limit = r.get_int("dataset.limit", 0);
    if (cfg.dataset.limit < 0) r.fail("dataset.limit cannot be negative");
    cfg.dataset.classes = r.get_ints("dataset.classes", {});

    cfg.f_train = r.get_double("split.train", cfg.f_train);
    cfg.f_val = r.get_double("split.val", cfg.f_val);
    cfg.f_test = r.get_double("split.test", cfg.f_test);
    if (!(cfg.f_train > 0 && cfg.f_val > 0 && cfg.f_test > 0))
        r.fail("split fractions must all be positive");
    else if (std::abs(cfg.f_train + cfg.f_val + cfg.f_test - 1.0) > 1e-9)
        r.fail("split fractions must sum to 1");
    if (r.has("split.seed")) cfg.split_seed = r.get_u64("split.seed", 0);

    cfg.noise = read_noise_spec(r);

    cfg.hidden = r.get_ints("model.hidden", cfg.hidden);
    for (int w : cfg.hidden)
        if (w < 1) r.fail("model.hidden: widths must be positive");

    std::string loss_kind = r.get_string("loss.kind", "ce");
    if (auto k = detail::parse_loss_kind(loss_kind)) {
        cfg.loss_kind = *k;
        if (*k == LossKind::ZeroOne)
            r.fail("loss.kind: the 0-1 loss is not differentiable and cannot train");
    } else {
        r.fail("loss.kind: unknown loss '" + loss_kind + "'");
    }
    cfg.gce_rho = r.get_double("loss.rho", cfg.gce_rho);
    cfg.sce_alpha = r.get_double("loss.alpha", cfg.sce_alpha);
    cfg.sce_beta = r.get_double("loss.beta", cfg.sce_beta);
    cfg.sce_clip = r.get_double("loss.clip", cfg.sce_clip);
    if (!(cfg.gce_rho > 0.0 && cfg.gce_rho <= 1.0)) r.fail("loss.rho must lie in (0,1]");
    if (cfg.sce_alpha < 0.0 || cfg.sce_beta < 0.0) r.fail("loss weights must be nonnegative");

    cfg.max_epochs = r.get_int("train.epochs", cfg.max_epochs);
    cfg.patience = r.get_int("train.patience", cfg.patience);
    cfg.lr = r.get_double("train.lr", cfg.lr);
    cfg.batch_size = r.get_int("train.batch", cfg.batch_size);
    cfg.log_gvectors = r.get_bool("train.gvector", cfg.log_gvectors);
    if (cfg.max_epochs < 1) r.fail("train.epochs must be at least 1");
    if (cfg.patience < 1) r.fail("train.patience must be at least 1");
    if (!(cfg.lr >= 0.0)) r.fail("train.lr must be nonnegative");
    if (cfg.batch_size < 1) r.fail("train.batch must be at least 1");

    std::string policies = r.get_string("policies", "nes,es,wes");
    cfg.policies.clear();
    for (const std::string& cell : ConfigReader::split(policies, ',')) {
        try {
            cfg.policies.push_back(parse_policy(cell));
        } catch (const std::exception& e) {
            r.fail(std::string("policies: ") + e.what());
        }
    }
    if (cfg.policies.empty()) r.fail("policies: need at least one of nes, es, wes");

    cfg.seeds = r.get_u64s("seeds", cfg.seeds);
    if (cfg.seeds.empty()) r.fail("seeds: need at least one seed");
    std::set<std::uint64_t> unique_seeds(cfg.seeds.begin(), cfg.seeds.end());
    if (unique_seeds.size() != cfg.seeds.size()) r.fail("seeds: duplicates listed");

    cfg.out_dir = r.get_string("out", cfg.out_dir);
    return cfg;
}

}  // namespace noisylab
