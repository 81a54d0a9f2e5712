#pragma once

// The harness behind the CLI. Each cmd_* turns an ExperimentConfig into
// datasets, noise, and training runs, writes CSV artifacts into the output
// directory, and returns the numbers it printed so tests can assert on them
// without re-parsing files. Everything outside `#` comment lines in the
// CSVs is a pure function of the config and seeds.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "config.hpp"
#include "dataset.hpp"
#include "losses.hpp"
#include "mlp.hpp"
#include "noise_field.hpp"
#include "oracle.hpp"
#include "risk.hpp"
#include "training.hpp"
#include "transition_matrix.hpp"
#include "tree.hpp"

namespace noisylab {

namespace detail {

// Every derived seed comes from the run seed through one of these stream
// tags, so no two consumers ever share a random stream.
constexpr std::uint64_t kSplitStream = 0x5350;
constexpr std::uint64_t kNoiseTrainStream = 0x4e54;
constexpr std::uint64_t kNoiseValStream = 0x4e56;
constexpr std::uint64_t kPredictorStream = 0x5052;
constexpr std::uint64_t kInitStream = 0x494e;

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
    Rng r(base);
    return r.split(tag).seed();
}

inline std::string fmt_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

inline std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

// Run body(i) for i in [0, n) on up to `jobs` threads. The first failure is
// rethrown on the calling thread after all workers finish.
template <class Fn>
inline void parallel_for(int n, int jobs, Fn&& body) {
    if (n <= 0) return;
    jobs = std::max(1, std::min(jobs, n));
    if (jobs == 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors;
    errors.resize(std::size_t(n));
    auto worker = [&] {
        for (;;) {
            int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                body(i);
            } catch (...) {
                errors[std::size_t(i)] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
}

// Sample standard deviation (n-1 divisor), the convention behind
// "mean +/- std over three runs" tables.
inline double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / double(v.size() - 1));
}

struct LineFit {
    double slope = std::numeric_limits<double>::quiet_NaN();
    double intercept = std::numeric_limits<double>::quiet_NaN();
    double r2 = std::numeric_limits<double>::quiet_NaN();
};

inline LineFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
    LineFit fit;
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) return fit;
    double mx = mean_of(x), my = mean_of(y);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx < 1e-30) return fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    if (syy >= 1e-30) {
        double ss_res = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double r = y[i] - (fit.slope * x[i] + fit.intercept);
            ss_res += r * r;
        }
        fit.r2 = 1.0 - ss_res / syy;
    }
    return fit;
}

}  // namespace detail

// ---------------------------------------------------------------- noise ---

inline bool recipe_has_matrix(NoiseKind k) {
    return k != NoiseKind::None && k != NoiseKind::PcaSplit && k != NoiseKind::ClassifierInduced;
}

inline TransitionMatrix recipe_matrix(const NoiseSpec& noise, int c) {
    switch (noise.kind) {
        case NoiseKind::Symmetric: return build_symmetric(c, noise.eta);
        case NoiseKind::SymmetricResample: return build_symmetric_resample(c, noise.eta);
        case NoiseKind::Circular: return build_circular(c, noise.eta);
        case NoiseKind::Pairwise: return build_pairwise(c, noise.pairs, noise.eta);
        case NoiseKind::AsymMnist:
            if (c != 10)
                throw std::invalid_argument("asym_mnist noise needs 10 classes, dataset has " +
                                            std::to_string(c));
            return build_asym_mnist(noise.eta);
        case NoiseKind::SuperclassCircular:
            return build_superclass_circular(c, noise.groups, noise.eta);
        case NoiseKind::RankedTernary:
            if (c != 3)
                throw std::invalid_argument("ranked_ternary noise needs 3 classes, dataset has " +
                                            std::to_string(c));
            return build_ranked_ternary(noise.eta);
        case NoiseKind::RankedFive:
            if (c != 5)
                throw std::invalid_argument("ranked_five noise needs 5 classes, dataset has " +
                                            std::to_string(c));
            return build_ranked_five();
        case NoiseKind::MatrixFile: {
            TransitionMatrix T = load_matrix(noise.matrix_path);
            if (T.c != c)
                throw std::invalid_argument("matrix file is " + std::to_string(T.c) + "x" +
                                            std::to_string(T.c) + " but the dataset has " +
                                            std::to_string(c) + " classes");
            return T;
        }
        default:
            throw std::invalid_argument("noise recipe '" + noise_kind_name(noise.kind) +
                                        "' has no single transition matrix");
    }
}

// Largest rate below which the recipe provably keeps every column's argmax
// on the diagonal; NaN when the recipe has no single rate knob.
inline double preserving_threshold(NoiseKind k, int c) {
    switch (k) {
        case NoiseKind::Symmetric: return double(c - 1) / double(c);
        case NoiseKind::SymmetricResample: return 1.0;
        case NoiseKind::Circular:
        case NoiseKind::Pairwise:
        case NoiseKind::SuperclassCircular: return 0.5;
        case NoiseKind::AsymMnist: return 1.0 / 3.0;
        case NoiseKind::RankedTernary: return 0.4;
        default: return std::numeric_limits<double>::quiet_NaN();
    }
}

struct BuiltNoise {
    NoiseField field;
    std::optional<TransitionMatrix> matrix;  // present for single-matrix recipes
    std::string tag;
    double predictor_accuracy = std::numeric_limits<double>::quiet_NaN();
};

// Turn a recipe into a concrete field. Instance-dependent recipes fit their
// parameters (principal axes, the weak predictor) on the given data, which
// for experiments is always the training split.
inline BuiltNoise build_noise(const NoiseSpec& noise, int c, const Eigen::MatrixXd& features,
                              const std::vector<int>& labels, std::uint64_t seed_base,
                              int batch_size) {
    BuiltNoise out;
    if (noise.kind == NoiseKind::PcaSplit) {
        out.field = build_pca_split_field(features, labels, c, noise.eta);
        out.tag = "pca_split(eta=" + detail::fmt_g(noise.eta) + ")";
    } else if (noise.kind == NoiseKind::ClassifierInduced) {
        // A deliberately weak linear softmax stands in for the paper-style
        // pretrained classifier; one epoch at a small rate keeps it weak.
        MlpEstimator lin = mlp_init({int(features.cols()), c},
                                    detail::derive_seed(seed_base, detail::kPredictorStream));
        std::uint64_t sgd_base = detail::derive_seed(seed_base, detail::kPredictorStream + 1);
        for (int e = 1; e <= noise.predictor_epochs; ++e)
            sgd_epoch(lin, features, labels, cross_entropy(), noise.predictor_lr, batch_size,
                      detail::derive_seed(sgd_base, std::uint64_t(e)), e);
        out.field = build_classifier_induced_field(
            [lin](const Eigen::RowVectorXd& x) { return argmax_lowest(forward_one(lin, x)); }, c,
            noise.eta);
        out.predictor_accuracy = field_predictor_accuracy(out.field, features, labels);
        out.tag = "classifier_induced(eta=" + detail::fmt_g(noise.eta) + ")";
    } else {
        TransitionMatrix T = recipe_matrix(noise, c);
        out.matrix = T;
        out.field = make_uniform_field(T, noise_kind_name(noise.kind), noise.eta);
        if (noise.kind == NoiseKind::RankedFive)
            out.tag = "ranked_five";
        else if (noise.kind == NoiseKind::MatrixFile)
            out.tag = "matrix:" + noise.matrix_path;
        else
            out.tag = noise_kind_name(noise.kind) + "(eta=" + detail::fmt_g(noise.eta) + ")";
    }
    return out;
}

// -------------------------------------------------------------- datasets ---

inline Dataset load_config_dataset(const DatasetSpec& ds) {
    Dataset out;
    switch (ds.kind) {
        case DatasetKind::Idx: out = load_idx(ds.images, ds.labels); break;
        case DatasetKind::Cache: out = load_cache(ds.cache); break;
        case DatasetKind::Synthetic:
            out = make_synthetic(ds.n, ds.d, ds.informative, ds.c, ds.seed);
            break;
    }
    if (!ds.classes.empty()) out = subset_classes(out, ds.classes);
    if (ds.limit > 0 && ds.limit < out.n()) {
        std::vector<int> head(std::size_t(ds.limit));
        for (int i = 0; i < ds.limit; ++i) head[std::size_t(i)] = i;
        out = take_rows(out, head);
    }
    return out;
}

inline std::string dataset_tag(const DatasetSpec& ds) {
    std::string tag;
    switch (ds.kind) {
        case DatasetKind::Idx: tag = "idx:" + ds.images; break;
        case DatasetKind::Cache: tag = "cache:" + ds.cache; break;
        case DatasetKind::Synthetic:
            tag = "synthetic(n=" + std::to_string(ds.n) + ",d=" + std::to_string(ds.d) +
                  ",informative=" + std::to_string(ds.informative) + ",c=" + std::to_string(ds.c) +
                  ",seed=" + std::to_string(ds.seed) + ")";
            break;
    }
    if (!ds.classes.empty()) tag += "|classes=" + detail::join_ints(ds.classes);
    if (ds.limit > 0) tag += "|limit=" + std::to_string(ds.limit);
    return tag;
}

struct PreparedRun {
    SplitBundle splits;
    std::optional<TransitionMatrix> matrix;
    std::string noise_tag;
    double predictor_accuracy = std::numeric_limits<double>::quiet_NaN();
    int c = 0;
};

// Load, subset, split, then inject noise into the train and noisy-val label
// tracks. The clean-val and test splits never see the noise.
inline PreparedRun prepare_run(const ExperimentConfig& cfg, std::uint64_t run_seed) {
    Dataset ds = load_config_dataset(cfg.dataset);
    PreparedRun prep;
    prep.c = ds.c;
    std::uint64_t split_seed =
        cfg.split_seed ? *cfg.split_seed : detail::derive_seed(run_seed, detail::kSplitStream);
    prep.splits = split(ds, cfg.f_train, cfg.f_val, cfg.f_test, split_seed);

    if (cfg.noise.kind == NoiseKind::None) {
        prep.splits.train.noisy_labels = prep.splits.train.clean_labels;
        prep.splits.noisy_val.noisy_labels = prep.splits.noisy_val.clean_labels;
        prep.noise_tag = "none";
        return prep;
    }

    std::uint64_t noise_base = cfg.noise.seed ? *cfg.noise.seed : run_seed;
    BuiltNoise noise = build_noise(cfg.noise, ds.c, prep.splits.train.features,
                                   prep.splits.train.clean_labels, noise_base, cfg.batch_size);
    prep.matrix = noise.matrix;
    prep.noise_tag = noise.tag;
    prep.predictor_accuracy = noise.predictor_accuracy;
    prep.splits.train.noisy_labels =
        apply_noise(prep.splits.train.clean_labels, noise.field, prep.splits.train.features,
                    detail::derive_seed(noise_base, detail::kNoiseTrainStream));
    prep.splits.noisy_val.noisy_labels =
        apply_noise(prep.splits.noisy_val.clean_labels, noise.field,
                    prep.splits.noisy_val.features,
                    detail::derive_seed(noise_base, detail::kNoiseValStream));
    return prep;
}

// Which matrix a corrected loss gets: the exact one when the noise is a
// single matrix, otherwise the symmetric stand-in at the same rate (the
// practitioner's fallback when the field itself is unknowable).
inline LossSpec make_loss_spec(const ExperimentConfig& cfg,
                               const std::optional<TransitionMatrix>& noise_matrix, int c) {
    switch (cfg.loss_kind) {
        case LossKind::Ce: return cross_entropy();
        case LossKind::Mse: return squared_error();
        case LossKind::Gce: return generalized_ce(cfg.gce_rho);
        case LossKind::Sce: return symmetric_ce(cfg.sce_alpha, cfg.sce_beta, cfg.sce_clip);
        case LossKind::Fce:
        case LossKind::Bce: {
            TransitionMatrix T = noise_matrix ? *noise_matrix : build_symmetric(c, cfg.noise.eta);
            return cfg.loss_kind == LossKind::Fce ? forward_correct(cross_entropy(), T)
                                                  : backward_correct(cross_entropy(), T);
        }
        default:
            throw std::invalid_argument("loss '" + std::to_string(int(cfg.loss_kind)) +
                                        "' cannot drive training");
    }
}

// ----------------------------------------------------------------- runs ---

struct PolicySelection {
    Policy policy = Policy::Nes;
    int chosen_epoch = 0;
    double noisy_val_acc = 0.0, clean_val_acc = 0.0, clean_test_acc = 0.0;
};

inline PolicySelection select_from_log(const RunLog& log, Policy p) {
    int chosen = p == Policy::Nes ? log.chosen_nes
                 : p == Policy::Es ? log.chosen_es
                                   : log.chosen_wes;
    if (chosen < 1 || chosen > int(log.records.size()))
        throw std::runtime_error("run log carries no " + policy_name(p) + " selection");
    const EpochRecord& r = log.records[std::size_t(chosen - 1)];
    return {p, chosen, r.noisy_val_acc, r.clean_val_acc, r.clean_test_acc};
}

struct SeedOutcome {
    std::uint64_t seed = 0;
    RunLog log;
    double predictor_accuracy = std::numeric_limits<double>::quiet_NaN();
    int classes = 0;
};

struct PolicySummary {
    Policy policy = Policy::Nes;
    std::vector<PolicySelection> selections;  // aligned with the seeds list
    double mean = 0.0, stddev = 0.0;          // of clean-test accuracy
};

struct TrainArtifacts {
    std::vector<SeedOutcome> runs;  // aligned with the seeds list
    std::vector<PolicySummary> summaries;
    int classes = 0;
};

// A single policy drives the halt decision. Requesting several policies at
// once costs the full epoch budget: only the no-stopping driver is
// guaranteed to outlive both patience walks.
inline Policy pick_driver(const std::vector<Policy>& policies) {
    if (policies.size() == 1) return policies.front();
    return Policy::Wes;
}

inline SeedOutcome run_single_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                                   const std::string& checkpoint_dir) {
    PreparedRun prep = prepare_run(cfg, seed);

    TrainConfig tc;
    tc.max_epochs = cfg.max_epochs;
    tc.patience = cfg.patience;
    tc.lr = cfg.lr;
    tc.batch_size = cfg.batch_size;
    tc.loss_spec = make_loss_spec(cfg, prep.matrix, prep.c);
    tc.seed = seed;
    if (!checkpoint_dir.empty())
        tc.checkpoint_path =
            (std::filesystem::path(checkpoint_dir) / ("ckpt-seed" + std::to_string(seed)))
                .string();
    if (cfg.log_gvectors) {
        if (!prep.matrix)
            throw std::runtime_error("g-vector logging needs noise with a known matrix, not " +
                                     prep.noise_tag);
        tc.gvector_noise = prep.matrix;
    }

    std::vector<int> widths{int(prep.splits.train.d())};
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(prep.c);
    MlpEstimator model = mlp_init(widths, detail::derive_seed(seed, detail::kInitStream));

    TrainResult res = run_training(std::move(model), prep.splits, tc, pick_driver(cfg.policies));
    if (res.log.aborted)
        throw std::runtime_error("seed " + std::to_string(seed) +
                                 " aborted: " + res.log.abort_reason);

    std::vector<std::pair<std::string, std::string>> head;
    head.emplace_back("dataset", dataset_tag(cfg.dataset));
    head.emplace_back("noise", prep.noise_tag);
    head.emplace_back("noise_eta", detail::fmt_g(cfg.noise.eta));
    head.emplace_back("classes", std::to_string(prep.c));
    head.emplace_back("split", detail::fmt_g(cfg.f_train) + "/" + detail::fmt_g(cfg.f_val) + "/" +
                                   detail::fmt_g(cfg.f_test));
    head.emplace_back("hidden", detail::join_ints(cfg.hidden));
    if (!std::isnan(prep.predictor_accuracy))
        head.emplace_back("predictor_accuracy", detail::fmt_g17(prep.predictor_accuracy));
    res.log.config_echo.insert(res.log.config_echo.begin(), head.begin(), head.end());

    SeedOutcome out;
    out.seed = seed;
    out.log = std::move(res.log);
    out.predictor_accuracy = prep.predictor_accuracy;
    out.classes = prep.c;
    return out;
}

inline void summarize(TrainArtifacts& art, const std::vector<Policy>& policies) {
    art.summaries.clear();
    for (Policy p : policies) {
        PolicySummary s;
        s.policy = p;
        std::vector<double> accs;
        for (const SeedOutcome& run : art.runs) {
            s.selections.push_back(select_from_log(run.log, p));
            accs.push_back(s.selections.back().clean_test_acc);
        }
        s.mean = detail::mean_of(accs);
        s.stddev = detail::sample_std(accs);
        art.summaries.push_back(std::move(s));
    }
    if (!art.runs.empty()) art.classes = art.runs.front().classes;
}

inline TrainArtifacts run_experiment(const ExperimentConfig& cfg, int jobs,
                                     const std::string& checkpoint_dir = "") {
    TrainArtifacts art;
    art.runs.resize(cfg.seeds.size());
    detail::parallel_for(int(cfg.seeds.size()), jobs, [&](int i) {
        art.runs[std::size_t(i)] = run_single_seed(cfg, cfg.seeds[std::size_t(i)], checkpoint_dir);
    });
    summarize(art, cfg.policies);
    return art;
}

// ------------------------------------------------------------- artifacts ---

inline void write_summary_csv(std::ostream& out, const TrainArtifacts& art,
                              const std::vector<std::uint64_t>& seeds) {
    if (!art.runs.empty())
        for (const auto& [key, value] : art.runs.front().log.config_echo)
            if (key != "seed") out << "# " << key << "=" << value << "\n";
    out << "policy,seed,chosen_epoch,noisy_val_acc,clean_val_acc,clean_test_acc,"
           "clean_test_mean,clean_test_std\n";
    for (const PolicySummary& s : art.summaries) {
        for (std::size_t i = 0; i < s.selections.size(); ++i) {
            const PolicySelection& sel = s.selections[i];
            out << policy_name(s.policy) << "," << seeds[i] << "," << sel.chosen_epoch << ","
                << detail::fmt_g17(sel.noisy_val_acc) << "," << detail::fmt_g17(sel.clean_val_acc)
                << "," << detail::fmt_g17(sel.clean_test_acc) << "," << detail::fmt_g17(s.mean)
                << "," << detail::fmt_g17(s.stddev) << "\n";
        }
    }
}

inline void write_train_artifacts(const TrainArtifacts& art, const ExperimentConfig& cfg,
                                  const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    for (const SeedOutcome& run : art.runs) {
        std::ofstream f(std::filesystem::path(out_dir) /
                        ("run-seed" + std::to_string(run.seed) + ".csv"));
        if (!f) throw std::runtime_error("cannot write run log in " + out_dir);
        write_run_log(f, run.log);
    }
    std::ofstream f(std::filesystem::path(out_dir) / "summary.csv");
    if (!f) throw std::runtime_error("cannot write summary in " + out_dir);
    write_summary_csv(f, art, cfg.seeds);
}

inline TrainArtifacts cmd_train(const ExperimentConfig& cfg, int jobs) {
    std::filesystem::create_directories(cfg.out_dir);
    TrainArtifacts art = run_experiment(cfg, jobs, cfg.out_dir);
    write_train_artifacts(art, cfg, cfg.out_dir);
    return art;
}

// ---------------------------------------------------------------- sweep ---

struct SweepRow {
    double eta = 0.0;
    double threshold = 0.0;
    TrainArtifacts artifacts;
};

inline std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, std::vector<double> etas,
                                       int jobs) {
    {
        std::vector<std::string> problems;
        if (etas.empty()) problems.push_back("sweep.etas: need at least one rate");
        for (double eta : etas)
            if (!(eta >= 0.0 && eta < 1.0))
                problems.push_back("sweep.etas: rate " + detail::fmt_g(eta) +
                                   " outside [0,1)");
        if (!problems.empty()) throw ConfigError(std::move(problems));
    }

    // Grid points x seeds form one flat task list so a single parallelism
    // limit bounds everything.
    const int n_seeds = int(cfg.seeds.size());
    std::vector<ExperimentConfig> variants;
    for (double eta : etas) {
        ExperimentConfig v = cfg;
        v.noise.eta = eta;
        variants.push_back(std::move(v));
    }
    std::vector<SweepRow> rows(etas.size());
    for (std::size_t k = 0; k < etas.size(); ++k) {
        rows[k].eta = etas[k];
        rows[k].artifacts.runs.resize(std::size_t(n_seeds));
    }
    detail::parallel_for(int(etas.size()) * n_seeds, jobs, [&](int t) {
        std::size_t k = std::size_t(t / n_seeds);
        std::size_t j = std::size_t(t % n_seeds);
        rows[k].artifacts.runs[j] = run_single_seed(variants[k], cfg.seeds[j], "");
    });
    for (std::size_t k = 0; k < rows.size(); ++k) {
        summarize(rows[k].artifacts, cfg.policies);
        rows[k].threshold = preserving_threshold(cfg.noise.kind, rows[k].artifacts.classes);
        std::string sub =
            (std::filesystem::path(cfg.out_dir) / ("eta-" + detail::fmt_g(rows[k].eta))).string();
        write_train_artifacts(rows[k].artifacts, variants[k], sub);
    }

    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream f(std::filesystem::path(cfg.out_dir) / "sweep.csv");
    if (!f) throw std::runtime_error("cannot write sweep.csv in " + cfg.out_dir);
    f << "eta,threshold";
    for (Policy p : cfg.policies) f << "," << policy_name(p) << "_mean," << policy_name(p) << "_std";
    f << "\n";
    for (const SweepRow& row : rows) {
        f << detail::fmt_g17(row.eta) << "," << detail::fmt_g17(row.threshold);
        for (const PolicySummary& s : row.artifacts.summaries)
            f << "," << detail::fmt_g17(s.mean) << "," << detail::fmt_g17(s.stddev);
        f << "\n";
    }
    return rows;
}

// -------------------------------------------------------------- scatter ---

struct ScatterResult {
    detail::LineFit fit;
    double affine_slope = 0.0;
    double affine_intercept = 0.0;
    int points = 0;
};

// Per-epoch (clean acc, noisy acc) pairs from a run log, with the fitted
// line and the predicted affine line. Regression is noisy on clean, so the
// slope compares directly against 1 - eta c/(c-1).
inline ScatterResult cmd_scatter(const RunLog& log, std::ostream& out) {
    if (log.records.empty()) throw std::runtime_error("run log has no epoch rows");
    std::string eta_str, classes_str;
    for (const auto& [key, value] : log.config_echo) {
        if (key == "noise_eta") eta_str = value;
        if (key == "classes") classes_str = value;
    }
    if (eta_str.empty() || classes_str.empty())
        throw std::runtime_error(
            "run log lacks the noise_eta/classes echo; regenerate it with the train command");
    double eta = std::stod(eta_str);
    int c = std::stoi(classes_str);
    if (c < 2) throw std::runtime_error("run log reports fewer than two classes");

    ScatterResult res;
    res.affine_slope = 1.0 - eta * double(c) / double(c - 1);
    res.affine_intercept = eta / double(c - 1);
    res.points = int(log.records.size());

    std::vector<double> clean, noisy;
    for (const EpochRecord& r : log.records) {
        clean.push_back(r.clean_val_acc);
        noisy.push_back(r.noisy_val_acc);
    }
    res.fit = detail::least_squares(clean, noisy);

    out << "epoch,clean_val_acc,noisy_val_acc,affine_noisy_acc\n";
    for (const EpochRecord& r : log.records)
        out << r.epoch << "," << detail::fmt_g17(r.clean_val_acc) << ","
            << detail::fmt_g17(r.noisy_val_acc) << ","
            << detail::fmt_g17(res.affine_slope * r.clean_val_acc + res.affine_intercept) << "\n";
    out << "#fit slope=" << detail::fmt_g17(res.fit.slope)
        << " intercept=" << detail::fmt_g17(res.fit.intercept)
        << " r2=" << detail::fmt_g17(res.fit.r2) << " points=" << res.points << "\n";
    out << "#affine slope=" << detail::fmt_g17(res.affine_slope)
        << " intercept=" << detail::fmt_g17(res.affine_intercept) << "\n";
    return res;
}

// ----------------------------------------------------------- tree depth ---

struct DepthPoint {
    int depth = 0;
    double noisy_val_acc = 0.0, clean_val_acc = 0.0, clean_test_acc = 0.0;
};

struct TreeDepthSeedResult {
    std::uint64_t seed = 0;
    std::vector<DepthPoint> points;
    int noisy_argmax_depth = 0;  // earliest grid entry on ties
    int clean_argmax_depth = 0;
    double deficit = 0.0;  // best clean-val acc minus clean-val acc at the noisy argmax
};

inline std::vector<TreeDepthSeedResult> cmd_tree_depth(const ExperimentConfig& cfg,
                                                       const std::vector<int>& depths, int jobs) {
    {
        std::vector<std::string> problems;
        if (depths.empty()) problems.push_back("tree.depths: need at least one depth");
        for (int d : depths)
            if (d < 0) problems.push_back("tree.depths: depth " + std::to_string(d) +
                                          " is negative");
        if (!problems.empty()) throw ConfigError(std::move(problems));
    }

    std::vector<TreeDepthSeedResult> results(cfg.seeds.size());
    detail::parallel_for(int(cfg.seeds.size()), jobs, [&](int i) {
        TreeDepthSeedResult& res = results[std::size_t(i)];
        res.seed = cfg.seeds[std::size_t(i)];
        PreparedRun prep = prepare_run(cfg, res.seed);
        for (int depth : depths) {
            TreeEstimator tree = tree_fit(prep.splits.train.features,
                                          *prep.splits.train.noisy_labels, prep.c, depth);
            DepthPoint pt;
            pt.depth = depth;
            pt.noisy_val_acc = evaluate_accuracy(tree, prep.splits.noisy_val, LabelTrack::Noisy);
            pt.clean_val_acc = evaluate_accuracy(tree, prep.splits.clean_val, LabelTrack::Clean);
            pt.clean_test_acc = evaluate_accuracy(tree, prep.splits.test, LabelTrack::Clean);
            res.points.push_back(pt);
        }
        std::size_t noisy_best = 0, clean_best = 0;
        for (std::size_t k = 1; k < res.points.size(); ++k) {
            if (res.points[k].noisy_val_acc > res.points[noisy_best].noisy_val_acc) noisy_best = k;
            if (res.points[k].clean_val_acc > res.points[clean_best].clean_val_acc) clean_best = k;
        }
        res.noisy_argmax_depth = res.points[noisy_best].depth;
        res.clean_argmax_depth = res.points[clean_best].depth;
        res.deficit =
            res.points[clean_best].clean_val_acc - res.points[noisy_best].clean_val_acc;
    });

    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream f(std::filesystem::path(cfg.out_dir) / "tree-depth.csv");
    if (!f) throw std::runtime_error("cannot write tree-depth.csv in " + cfg.out_dir);
    f << "seed,depth,noisy_val_acc,clean_val_acc,clean_test_acc,is_noisy_argmax,is_clean_argmax\n";
    for (const TreeDepthSeedResult& res : results) {
        for (const DepthPoint& pt : res.points)
            f << res.seed << "," << pt.depth << "," << detail::fmt_g17(pt.noisy_val_acc) << ","
              << detail::fmt_g17(pt.clean_val_acc) << "," << detail::fmt_g17(pt.clean_test_acc)
              << "," << (pt.depth == res.noisy_argmax_depth ? 1 : 0) << ","
              << (pt.depth == res.clean_argmax_depth ? 1 : 0) << "\n";
        f << "#summary seed=" << res.seed << " noisy_argmax=" << res.noisy_argmax_depth
          << " clean_argmax=" << res.clean_argmax_depth
          << " deficit=" << detail::fmt_g17(res.deficit) << "\n";
    }
    return results;
}

// -------------------------------------------------------------- g-vector ---

struct GvectorSeedResult {
    std::uint64_t seed = 0;
    MinimaWindow window;
};

// Full-budget runs with per-epoch rank indicators, plus the minima window of
// the below-top ranks (the simultaneity the rank trajectories are supposed
// to show near the best epoch).
inline std::vector<GvectorSeedResult> cmd_gvector(const ExperimentConfig& cfg, int jobs) {
    {
        std::vector<std::string> problems;
        if (cfg.noise.kind != NoiseKind::RankedTernary && cfg.noise.kind != NoiseKind::RankedFive)
            problems.push_back(
                "gvector needs noise with exactly known per-class posteriors "
                "(ranked_ternary or ranked_five), got " +
                noise_kind_name(cfg.noise.kind));
        if (cfg.noise.kind == NoiseKind::RankedTernary) {
            // Ranks are defined only when the three column entries are
            // distinct: 1-1.5eta, eta, and 0.5eta collide at these rates.
            for (double bad : {0.0, 0.4, 0.5})
                if (std::abs(cfg.noise.eta - bad) < 1e-12)
                    problems.push_back("noise.eta=" + detail::fmt_g(bad) +
                                       " makes ranked_ternary posterior ranks tie; pick a rate "
                                       "away from 0, 0.4, and 0.5");
        }
        if (!problems.empty()) throw ConfigError(std::move(problems));
    }

    ExperimentConfig full = cfg;
    full.log_gvectors = true;
    full.policies = {Policy::Wes};  // the window needs the whole trajectory
    TrainArtifacts art = run_experiment(full, jobs);
    write_train_artifacts(art, full, cfg.out_dir);

    std::vector<GvectorSeedResult> results;
    for (const SeedOutcome& run : art.runs) {
        const std::size_t c = run.log.records.front().gvec.size();
        std::vector<std::vector<double>> below_top(c - 1);
        for (const EpochRecord& rec : run.log.records)
            for (std::size_t k = 1; k < c; ++k) below_top[k - 1].push_back(rec.gvec[k]);
        GvectorSeedResult res;
        res.seed = run.seed;
        res.window = simultaneous_minima_window(below_top);
        results.push_back(res);

        std::ofstream f(std::filesystem::path(cfg.out_dir) /
                        ("gtraj-seed" + std::to_string(run.seed) + ".csv"));
        if (!f) throw std::runtime_error("cannot write g-trajectory in " + cfg.out_dir);
        f << "epoch";
        for (std::size_t k = 1; k <= c; ++k) f << ",g" << k;
        f << "\n";
        for (const EpochRecord& rec : run.log.records) {
            f << rec.epoch;
            for (double g : rec.gvec) f << "," << detail::fmt_g17(g);
            f << "\n";
        }
        f << "#window t1=" << res.window.t1 << " t2=" << res.window.t2
          << " width=" << res.window.width() << " degenerate=" << (res.window.degenerate ? 1 : 0)
          << "\n";
    }
    return results;
}

// ---------------------------------------------------------------- bounds ---

struct BoundsRequest {
    std::string regime = "general";  // general | pairwise
    double eta = 0.0, eta_min = 0.0, eta_max = 0.0;
    double noisy_risk = 0.0;
    std::optional<double> noisy_risk_other;
};

inline BoundsRequest read_bounds_request(ConfigReader& r) {
    BoundsRequest q;
    q.regime = r.get_string("bound.regime", "general");
    if (q.regime != "general" && q.regime != "pairwise")
        r.fail("bound.regime: expected general or pairwise, got '" + q.regime + "'");
    auto need = [&](const char* key) {
        if (!r.has(key)) {
            r.fail(std::string("missing required key '") + key + "'");
            return 0.0;
        }
        return r.get_double(key, 0.0);
    };
    q.eta = need("bound.eta");
    q.noisy_risk = need("bound.noisy_risk");
    if (q.regime == "general") {
        q.eta_min = need("bound.eta_min");
        q.eta_max = need("bound.eta_max");
        if (r.has("bound.noisy_risk_other"))
            q.noisy_risk_other = r.get_double("bound.noisy_risk_other", 0.0);
    }
    return q;
}

inline BoundReport cmd_bounds(const BoundsRequest& q) {
    if (q.regime == "pairwise") return pairwise_gap(q.noisy_risk, q.eta);
    return worst_case_gap(q.noisy_risk, q.noisy_risk_other, q.eta, q.eta_min, q.eta_max);
}

inline void print_bound_report(std::ostream& out, const BoundReport& r) {
    out << "regime: " << r.regime << "\n";
    out << "eta: " << detail::fmt_g(r.eta);
    if (r.regime != "pairwise")
        out << "  (off-diagonal rates in [" << detail::fmt_g(r.eta_min) << ", "
            << detail::fmt_g(r.eta_max) << "])";
    out << "\n";
    out << "noisy risk (selected): " << detail::fmt_g(r.noisy_risk_best) << "\n";
    if (r.noisy_risk_other)
        out << "noisy risk (competitor): " << detail::fmt_g(*r.noisy_risk_other) << "\n";
    out << "clean-risk gap bound: " << detail::fmt_g17(r.bound) << "\n";
}

// ------------------------------------------------------------- gen-noise ---

// Class count for dataset-free commands: fixed-size recipes pin it, the
// rest need the explicit key.
inline int resolve_class_count(ConfigReader& r, const NoiseSpec& noise, int fallback) {
    int fixed = noise.kind == NoiseKind::AsymMnist      ? 10
                : noise.kind == NoiseKind::RankedTernary ? 3
                : noise.kind == NoiseKind::RankedFive    ? 5
                                                         : 0;
    int c = r.get_int("noise.classes", fixed ? fixed : fallback);
    if (fixed && c != fixed)
        r.fail("noise.classes=" + std::to_string(c) + " conflicts with " +
               noise_kind_name(noise.kind) + " (always " + std::to_string(fixed) + " classes)");
    if (!fixed && c < 2) r.fail("noise.classes: need at least 2 classes for this recipe");
    return c;
}

inline TransitionMatrix cmd_gen_noise(const NoiseSpec& noise, int c, const std::string& out_path,
                                      std::ostream& report) {
    if (!recipe_has_matrix(noise.kind))
        throw std::invalid_argument("noise recipe '" + noise_kind_name(noise.kind) +
                                    "' has no single matrix to dump");
    TransitionMatrix T = recipe_matrix(noise, c);
    save_matrix(T, out_path);
    NoiseTaxonomyReport tax = taxonomy(T);
    report << "wrote " << T.c << "x" << T.c << " matrix to " << out_path << "\n";
    report << "symmetric: " << (tax.symmetric ? "yes" : "no") << "\n";
    report << "pairwise: " << (tax.pairwise ? "yes" : "no") << "\n";
    report << "circular: " << (tax.circular ? "yes" : "no") << "\n";
    report << "diagonally dominant: " << (tax.diagonally_dominant ? "yes" : "no") << "\n";
    report << "class-preserving for separable data: "
           << (tax.class_preserving_for_separable ? "yes" : "no") << "\n";
    report << "symmetric preserving threshold: " << detail::fmt_g(tax.threshold) << "\n";
    return T;
}

// ---------------------------------------------------------------- inject ---

struct InjectResult {
    int total = 0;
    int flipped = 0;
    std::string out_labels;
};

// Noise one IDX label file. Instance-dependent recipes need the companion
// image file; single-matrix recipes run on labels alone.
inline InjectResult cmd_inject(const NoiseSpec& noise, const std::string& images_path,
                               const std::string& labels_path, int classes_hint,
                               std::uint64_t seed, const std::string& out_path) {
    if (noise.kind == NoiseKind::None)
        throw std::invalid_argument("noise.kind=none leaves nothing to inject");

    Eigen::MatrixXd features;
    std::vector<int> labels;
    if (!images_path.empty()) {
        Dataset ds = load_idx(images_path, labels_path);
        features = std::move(ds.features);
        labels = std::move(ds.clean_labels);
    } else {
        if (noise.kind == NoiseKind::PcaSplit || noise.kind == NoiseKind::ClassifierInduced)
            throw std::invalid_argument("noise recipe '" + noise_kind_name(noise.kind) +
                                        "' reads instances; dataset.images is required");
        for (unsigned char b : read_idx_labels(labels_path)) labels.push_back(int(b));
        features.resize(Eigen::Index(labels.size()), 0);
    }
    int c = classes_hint;
    for (int y : labels) c = std::max(c, y + 1);

    std::uint64_t noise_base = noise.seed ? *noise.seed : seed;
    BuiltNoise built = build_noise(noise, c, features, labels, noise_base, 128);
    std::vector<int> noisy = apply_noise(labels, built.field, features,
                                         detail::derive_seed(noise_base, detail::kNoiseTrainStream));

    std::vector<unsigned char> bytes(noisy.size());
    for (std::size_t i = 0; i < noisy.size(); ++i) bytes[i] = (unsigned char)(noisy[i]);
    write_idx_labels(out_path, bytes);
    if (built.matrix) save_matrix(*built.matrix, out_path + ".matrix");

    InjectResult res;
    res.total = int(labels.size());
    res.out_labels = out_path;
    for (std::size_t i = 0; i < noisy.size(); ++i)
        if (noisy[i] != labels[i]) ++res.flipped;
    return res;
}

}  // namespace noisylab
