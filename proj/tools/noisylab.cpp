// Command-line front end. Subcommands map one-to-one onto the cmd_*
// functions; this file only parses flags, routes config keys, and prints
// the returned numbers. Exit codes: 0 success, 2 config problem, 3 numeric
// or runtime failure.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <noisylab/experiment.hpp>

using namespace noisylab;

namespace {

std::string pct(double acc) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", acc * 100.0);
    return buf;
}

void print_summaries(const TrainArtifacts& art) {
    for (const PolicySummary& s : art.summaries) {
        std::cout << policy_name(s.policy) << ": clean-test " << pct(s.mean) << " +/- "
                  << pct(s.stddev) << " (epochs";
        for (const PolicySelection& sel : s.selections) std::cout << " " << sel.chosen_epoch;
        std::cout << ")\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"noisy-label training laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir, runlog_path;
    std::uint64_t seed_val = 0;
    int jobs = 1;
    auto* opt_config = app.add_option("--config", config_path, "experiment config file");
    auto* opt_out = app.add_option("--out", out_dir, "output directory (overrides the out key)");
    auto* opt_seed =
        app.add_option("--seed", seed_val, "single seed (replaces the config's seeds list)");
    app.add_option("--jobs", jobs, "parallel task limit")->check(CLI::PositiveNumber);
    (void)opt_config;

    auto* c_train = app.add_subcommand("train", "run one experiment, log every epoch per seed");
    auto* c_sweep = app.add_subcommand("sweep", "repeat the experiment across sweep.etas");
    auto* c_scatter =
        app.add_subcommand("scatter", "per-epoch accuracy pairs and lines from a run log");
    c_scatter->add_option("runlog", runlog_path, "run log CSV written by train")
        ->required()
        ->check(CLI::ExistingFile);
    auto* c_tree = app.add_subcommand("tree-depth", "decision-tree depth grid on both tracks");
    auto* c_gvec =
        app.add_subcommand("gvector", "rank-indicator trajectories under known noise");
    auto* c_bounds = app.add_subcommand("bounds", "clean-risk gap bound from noisy risks");
    auto* c_gen = app.add_subcommand("gen-noise", "build a transition matrix and save it");
    auto* c_inject = app.add_subcommand("inject", "noise an IDX label file");
    for (auto* sub : {c_train, c_sweep, c_scatter, c_tree, c_gvec, c_bounds, c_gen, c_inject})
        sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;  // bad flags are config problems
    }

    // seed_key: which config key --seed replaces ("" = flag unsupported here).
    auto make_reader = [&](const char* seed_key, bool uses_out) {
        if (config_path.empty()) throw ConfigError({"--config is required for this command"});
        ConfigReader r = ConfigReader::from_file(config_path);
        if (opt_seed->count()) {
            if (!*seed_key)
                throw ConfigError({"--seed does not apply to this command"});
            r.override_value(seed_key, std::to_string(seed_val));
        }
        if (opt_out->count() && uses_out) r.override_value("out", out_dir);
        return r;
    };

    try {
        if (app.got_subcommand(c_train)) {
            ConfigReader r = make_reader("seeds", true);
            ExperimentConfig cfg = read_experiment_config(r);
            r.finish();
            TrainArtifacts art = cmd_train(cfg, jobs);
            print_summaries(art);
            std::cout << "artifacts in " << cfg.out_dir << "\n";
        } else if (app.got_subcommand(c_sweep)) {
            ConfigReader r = make_reader("seeds", true);
            ExperimentConfig cfg = read_experiment_config(r);
            std::vector<double> etas = r.get_doubles("sweep.etas", {});
            r.finish();
            std::vector<SweepRow> rows = cmd_sweep(cfg, etas, jobs);
            for (const SweepRow& row : rows) {
                std::cout << "eta=" << row.eta << ":";
                for (const PolicySummary& s : row.artifacts.summaries)
                    std::cout << "  " << policy_name(s.policy) << " " << pct(s.mean) << " +/- "
                              << pct(s.stddev);
                std::cout << "\n";
            }
            std::cout << "sweep table in " << cfg.out_dir << "/sweep.csv\n";
        } else if (app.got_subcommand(c_scatter)) {
            std::ifstream in(runlog_path);
            if (!in) throw std::runtime_error("cannot open " + runlog_path);
            RunLog log = parse_run_log(in);
            std::filesystem::path src(runlog_path);
            std::filesystem::path dir =
                opt_out->count() ? std::filesystem::path(out_dir) : src.parent_path();
            if (!dir.empty()) std::filesystem::create_directories(dir);
            std::filesystem::path dest = dir / (src.stem().string() + "-scatter.csv");
            std::ofstream out(dest);
            if (!out) throw std::runtime_error("cannot write " + dest.string());
            ScatterResult res = cmd_scatter(log, out);
            std::cout << "fit: slope=" << res.fit.slope << " intercept=" << res.fit.intercept
                      << " r2=" << res.fit.r2 << " over " << res.points << " epochs\n";
            std::cout << "affine line: slope=" << res.affine_slope
                      << " intercept=" << res.affine_intercept << "\n";
            std::cout << "scatter table in " << dest.string() << "\n";
        } else if (app.got_subcommand(c_tree)) {
            ConfigReader r = make_reader("seeds", true);
            ExperimentConfig cfg = read_experiment_config(r);
            std::vector<int> depths = r.get_ints("tree.depths", {});
            r.finish();
            std::vector<TreeDepthSeedResult> results = cmd_tree_depth(cfg, depths, jobs);
            for (const TreeDepthSeedResult& res : results)
                std::cout << "seed " << res.seed << ": noisy-argmax depth "
                          << res.noisy_argmax_depth << ", clean-argmax depth "
                          << res.clean_argmax_depth << ", clean-val deficit "
                          << pct(res.deficit) << "\n";
            std::cout << "depth table in " << cfg.out_dir << "/tree-depth.csv\n";
        } else if (app.got_subcommand(c_gvec)) {
            ConfigReader r = make_reader("seeds", true);
            ExperimentConfig cfg = read_experiment_config(r);
            r.finish();
            std::vector<GvectorSeedResult> results = cmd_gvector(cfg, jobs);
            for (const GvectorSeedResult& res : results) {
                std::cout << "seed " << res.seed << ": below-top minima in epochs ["
                          << res.window.t1 << ", " << res.window.t2 << "], width "
                          << res.window.width();
                if (res.window.degenerate) std::cout << " (degenerate: a constant trajectory)";
                std::cout << "\n";
            }
            std::cout << "trajectories in " << cfg.out_dir << "\n";
        } else if (app.got_subcommand(c_bounds)) {
            ConfigReader r = make_reader("", false);
            BoundsRequest q = read_bounds_request(r);
            r.finish();
            print_bound_report(std::cout, cmd_bounds(q));
        } else if (app.got_subcommand(c_gen)) {
            ConfigReader r = make_reader("", true);
            NoiseSpec noise = read_noise_spec(r);
            int c = resolve_class_count(r, noise, 0);
            std::string out_path = r.get_string("out", "");
            if (out_path.empty()) r.fail("missing required key 'out' (matrix file path)");
            r.finish();
            cmd_gen_noise(noise, c, out_path, std::cout);
        } else if (app.got_subcommand(c_inject)) {
            ConfigReader r = make_reader("seed", true);
            NoiseSpec noise = read_noise_spec(r);
            std::string labels = r.require_string("dataset.labels");
            std::string images = r.get_string("dataset.images", "");
            int c_hint = r.get_int("noise.classes", 0);
            std::uint64_t seed = r.get_u64("seed", 1);
            std::string out_path = r.get_string("out", "");
            if (out_path.empty()) r.fail("missing required key 'out' (noisy label file path)");
            for (const std::string& path : {labels, images})
                if (!path.empty() && !std::filesystem::exists(path))
                    r.fail("dataset file does not exist: " + path);
            r.finish();
            InjectResult res = cmd_inject(noise, images, labels, c_hint, seed, out_path);
            std::cout << "flipped " << res.flipped << "/" << res.total << " labels ("
                      << pct(res.total ? double(res.flipped) / res.total : 0.0) << ") into "
                      << res.out_labels << "\n";
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
