#pragma once

// The epoch loop with three stopping policies. A policy never influences
// training: one run logs the noisy-val, clean-val, and clean-test accuracy
// of every epoch, the driving policy only decides when the loop halts and
// which checkpoint is restored. The other two policies' selections are then
// read off the same log, so a single run yields all three answers.
//
// Patience semantics: strict improvement of the monitored accuracy resets
// the counter, a tie or a decrease increments it, and the loop halts once
// the counter reaches the patience limit. The best model lives in an
// on-disk checkpoint and is restored at the end.

#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dataset.hpp"
#include "losses.hpp"
#include "mlp.hpp"
#include "risk.hpp"
#include "transition_matrix.hpp"

namespace noisylab {

enum class Policy { Nes, Es, Wes };

inline std::string policy_name(Policy p) {
    switch (p) {
        case Policy::Nes: return "nes";
        case Policy::Es: return "es";
        case Policy::Wes: return "wes";
    }
    return "?";
}

inline Policy parse_policy(const std::string& s) {
    if (s == "nes") return Policy::Nes;
    if (s == "es") return Policy::Es;
    if (s == "wes") return Policy::Wes;
    throw std::invalid_argument("unknown policy '" + s + "' (expected nes, es, or wes)");
}

struct TrainConfig {
    int max_epochs = 100;
    int patience = 10;
    double lr = 0.05;
    int batch_size = 128;
    LossSpec loss_spec = cross_entropy();
    std::uint64_t seed = 1;
    std::string checkpoint_path;  // empty picks a temp file
    // When set, every epoch logs the rank-indicator vector of test-set
    // predictions against noisy posteriors induced by this matrix.
    std::optional<TransitionMatrix> gvector_noise;
};

inline void validate(const TrainConfig& cfg) {
    if (cfg.max_epochs < 1) throw std::invalid_argument("max_epochs must be at least 1");
    if (cfg.patience < 1) throw std::invalid_argument("patience must be at least 1");
    if (!(cfg.lr >= 0.0)) throw std::invalid_argument("learning rate must be nonnegative");
    if (cfg.batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
}

template <class Estimator>
double evaluate_accuracy(const Estimator& m, const Dataset& ds, LabelTrack track) {
    return 1.0 - empirical_risk01(m, ds, track);
}

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double noisy_val_acc = 0.0;
    double clean_val_acc = 0.0;
    double clean_test_acc = 0.0;
    std::vector<double> gvec;  // empty unless g-vector logging is on
};

struct RunLog {
    std::vector<EpochRecord> records;
    int chosen_nes = -1;  // 1-based epochs; -1 when unavailable
    int chosen_es = -1;
    int chosen_wes = -1;
    std::vector<std::pair<std::string, std::string>> config_echo;
    double wall_seconds = 0.0;
    bool aborted = false;
    std::string abort_reason;
};

struct PatienceWalk {
    int best_epoch = 0;  // 1-based; 0 when the series is empty
    int halt_epoch = 0;  // last epoch the walk executes
};

// Replay the stopping rule over a recorded metric series.
inline PatienceWalk patience_walk(const std::vector<double>& values, int patience) {
    PatienceWalk w;
    double best = 0.0;
    int p = 0;
    for (int e = 1; e <= int(values.size()); ++e) {
        double v = values[e - 1];
        if (w.best_epoch == 0 || v > best) {
            best = v;
            w.best_epoch = e;
            p = 0;
        } else {
            ++p;
        }
        w.halt_epoch = e;
        if (p >= patience) break;
    }
    return w;
}

struct TrainResult {
    MlpEstimator selected;
    RunLog log;
};

namespace detail {

inline std::string default_checkpoint_path(std::uint64_t seed) {
    static std::atomic<int> counter{0};
    auto dir = std::filesystem::temp_directory_path();
    return (dir / ("noisylab-best-" + std::to_string(::getpid()) + "-" + std::to_string(seed) +
                   "-" + std::to_string(counter++) + ".ckpt"))
        .string();
}

inline std::uint64_t epoch_seed(std::uint64_t base, int epoch) {
    Rng r(base);
    return r.split(std::uint64_t(epoch)).seed();
}

}  // namespace detail

// Every run carries both stopping rules as online walks over its own
// metric tracks; `driver` only decides when the loop halts (and which walk's
// checkpoint comes back as the selected model). Driving with WES therefore
// yields the exact NES and ES selections as a byproduct, because a walk
// stops consuming epochs once its own patience expires.
inline TrainResult run_training(MlpEstimator model, const SplitBundle& splits,
                                const TrainConfig& cfg, Policy driver) {
    validate(cfg);
    if (!splits.train.noisy_labels)
        throw std::invalid_argument("training split has no noisy label track");
    if (!splits.noisy_val.noisy_labels)
        throw std::invalid_argument("noisy validation split has no noisy label track");
    auto t0 = std::chrono::steady_clock::now();

    TrainResult result;
    RunLog& log = result.log;
    const bool keep_files = !cfg.checkpoint_path.empty();
    std::string base =
        keep_files ? cfg.checkpoint_path : detail::default_checkpoint_path(cfg.seed);
    std::string nes_path = base + ".nes", es_path = base + ".es", wes_path = base + ".wes";

    // Precompute noisy posteriors for g-vector logging: the test split's
    // clean labels are treated as ground truth and pushed through the noise.
    Eigen::MatrixXd g_posteriors;
    if (cfg.gvector_noise) {
        const TransitionMatrix& T = *cfg.gvector_noise;
        if (T.c != splits.test.c)
            throw std::invalid_argument("g-vector noise matrix does not match class count");
        g_posteriors.resize(splits.test.n(), T.c);
        for (Eigen::Index i = 0; i < splits.test.n(); ++i)
            g_posteriors.row(i) = T.entries.col(splits.test.clean_labels[i]).transpose();
    }

    struct Walk {
        double best = 0.0;
        int best_epoch = 0;
        int p = 0;
        bool halted = false;
    } nes, es;
    auto step_walk = [&](Walk& w, double metric, const std::string& path) {
        if (w.halted) return;
        if (w.best_epoch == 0 || metric > w.best) {
            w.best = metric;
            w.best_epoch = log.records.back().epoch;
            w.p = 0;
            save_checkpoint(model, path);
        } else if (++w.p >= cfg.patience) {
            w.halted = true;
        }
    };

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        try {
            rec.train_loss =
                sgd_epoch(model, splits.train.features, *splits.train.noisy_labels, cfg.loss_spec,
                          cfg.lr, cfg.batch_size, detail::epoch_seed(cfg.seed, epoch), epoch);
            rec.noisy_val_acc = evaluate_accuracy(model, splits.noisy_val, LabelTrack::Noisy);
            rec.clean_val_acc = evaluate_accuracy(model, splits.clean_val, LabelTrack::Clean);
            rec.clean_test_acc = evaluate_accuracy(model, splits.test, LabelTrack::Clean);
            if (cfg.gvector_noise) {
                Eigen::MatrixXd probs = forward_batch(model, splits.test.features);
                GVector g = g_vector(probs, g_posteriors);
                rec.gvec.assign(g.entries.data(), g.entries.data() + g.entries.size());
            }
            log.records.push_back(rec);
            step_walk(nes, rec.noisy_val_acc, nes_path);
            step_walk(es, rec.clean_val_acc, es_path);
        } catch (const std::exception& e) {
            log.aborted = true;
            log.abort_reason = e.what();
            break;
        }
        if ((driver == Policy::Nes && nes.halted) || (driver == Policy::Es && es.halted)) break;
    }

    if (!log.records.empty()) {
        log.chosen_nes = nes.best_epoch;
        log.chosen_es = es.best_epoch;
        log.chosen_wes = log.records.back().epoch;
    }

    try {
        if (driver == Policy::Wes && keep_files) save_checkpoint(model, wes_path);
        if (driver == Policy::Nes && nes.best_epoch > 0) {
            result.selected = load_checkpoint(nes_path);
        } else if (driver == Policy::Es && es.best_epoch > 0) {
            result.selected = load_checkpoint(es_path);
        } else {
            result.selected = std::move(model);
        }
    } catch (const std::exception& e) {
        log.aborted = true;
        log.abort_reason = e.what();
        result.selected = std::move(model);
    }
    if (!keep_files) {
        std::error_code ignore;
        std::filesystem::remove(nes_path, ignore);
        std::filesystem::remove(es_path, ignore);
    }

    char lr_buf[32];
    std::snprintf(lr_buf, sizeof lr_buf, "%g", cfg.lr);
    log.config_echo.emplace_back("policy", policy_name(driver));
    log.config_echo.emplace_back("max_epochs", std::to_string(cfg.max_epochs));
    log.config_echo.emplace_back("patience", std::to_string(cfg.patience));
    log.config_echo.emplace_back("lr", lr_buf);
    log.config_echo.emplace_back("batch_size", std::to_string(cfg.batch_size));
    log.config_echo.emplace_back("loss", describe(cfg.loss_spec));
    log.config_echo.emplace_back("seed", std::to_string(cfg.seed));
    log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

// CSV form: `#`-prefixed config echo, a header row, one row per epoch with
// full-precision values, then the selection summary. Everything outside `#`
// lines is deterministic for a fixed config and seed; wall time stays in a
// comment so reruns produce byte-identical bodies.
inline void write_run_log(std::ostream& out, const RunLog& log) {
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    for (const auto& [key, value] : log.config_echo) out << "# " << key << "=" << value << "\n";
    out << "# wall_seconds=" << fmt(log.wall_seconds) << "\n";
    if (log.aborted) out << "# aborted=" << log.abort_reason << "\n";
    const bool with_g = !log.records.empty() && !log.records.front().gvec.empty();
    out << "epoch,train_loss,noisy_val_acc,clean_val_acc,clean_test_acc";
    if (with_g)
        for (std::size_t k = 1; k <= log.records.front().gvec.size(); ++k) out << ",g" << k;
    out << "\n";
    for (const EpochRecord& r : log.records) {
        out << r.epoch << "," << fmt(r.train_loss) << "," << fmt(r.noisy_val_acc) << ","
            << fmt(r.clean_val_acc) << "," << fmt(r.clean_test_acc);
        for (double g : r.gvec) out << "," << fmt(g);
        out << "\n";
    }
    out << "#chosen NES=" << log.chosen_nes << " ES=" << log.chosen_es
        << " WES=" << log.chosen_wes << "\n";
}

inline RunLog parse_run_log(std::istream& in) {
    RunLog log;
    std::string line;
    bool saw_header = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line.rfind("#chosen ", 0) == 0) {
                if (std::sscanf(line.c_str(), "#chosen NES=%d ES=%d WES=%d", &log.chosen_nes,
                                &log.chosen_es, &log.chosen_wes) != 3)
                    throw std::runtime_error("malformed selection line: " + line);
                continue;
            }
            std::string body = line.substr(1);
            if (!body.empty() && body[0] == ' ') body.erase(0, 1);
            auto eq = body.find('=');
            if (eq != std::string::npos)
                log.config_echo.emplace_back(body.substr(0, eq), body.substr(eq + 1));
            continue;
        }
        if (!saw_header) {
            if (line.rfind("epoch,train_loss,", 0) != 0)
                throw std::runtime_error("unexpected header row: " + line);
            saw_header = true;
            continue;
        }
        EpochRecord rec;
        std::istringstream row(line);
        std::string cell;
        int col = 0;
        while (std::getline(row, cell, ',')) {
            double v = std::stod(cell);
            switch (col) {
                case 0: rec.epoch = int(v); break;
                case 1: rec.train_loss = v; break;
                case 2: rec.noisy_val_acc = v; break;
                case 3: rec.clean_val_acc = v; break;
                case 4: rec.clean_test_acc = v; break;
                default: rec.gvec.push_back(v); break;
            }
            ++col;
        }
        if (col < 5) throw std::runtime_error("run log row has " + std::to_string(col) +
                                              " columns: " + line);
        log.records.push_back(std::move(rec));
    }
    if (!saw_header) throw std::runtime_error("input is not a run log (no header row)");
    return log;
}

}  // namespace noisylab
