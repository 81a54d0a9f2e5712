#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "noisylab/experiment.hpp"

using namespace noisylab;

namespace {

ConfigReader reader_from(const std::string& text, const std::string& origin = "test.cfg") {
    std::istringstream in(text);
    return ConfigReader::from_stream(in, origin);
}

// Unique scratch directory, removed when the guard dies.
struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("noisylab-cfg-" + std::to_string(Catch::rngSeed()) + "-" +
                std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int n = 0;
        return n;
    }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

std::vector<std::string> capture_problems(ConfigReader& r) {
    try {
        r.finish();
    } catch (const ConfigError& e) {
        return e.problems;
    }
    return {};
}

}  // namespace

TEST_CASE("config lines tolerate comments and stray whitespace") {
    ConfigReader r = reader_from(
        "# a full-line comment\n"
        "\n"
        "  dataset.kind = synthetic   # trailing note\n"
        "\ttrain.lr\t=\t0.25\n"
        "out=runs/demo\n");
    CHECK(r.get_string("dataset.kind", "") == "synthetic");
    CHECK(r.get_double("train.lr", 0.0) == 0.25);
    CHECK(r.get_string("out", "") == "runs/demo");
    CHECK_NOTHROW(r.finish());
}

TEST_CASE("one pass reports every config problem at once") {
    ConfigReader r = reader_from(
        "# header\n"
        "what is this\n"
        "= 3\n"
        "train.lr = fast\n"
        "train.lr = 0.5\n"
        "stray = 1\n");
    CHECK(r.get_double("train.lr", 0.0) == 0.0);

    try {
        r.finish();
        FAIL("finish() should have thrown");
    } catch (const ConfigError& e) {
        REQUIRE(e.problems.size() == 5);
        CHECK(e.problems[0] == "test.cfg:2: expected key=value, got 'what is this'");
        CHECK(e.problems[1] == "test.cfg:3: empty key");
        CHECK(e.problems[2] == "test.cfg:5: duplicate key 'train.lr'");
        CHECK(e.problems[3] == "train.lr: expected a number, got 'fast'");
        CHECK(e.problems[4] == "unknown key 'stray'");
        CHECK(std::string(e.what()).rfind("configuration invalid (5 problems):", 0) == 0);
        CHECK(std::string(e.what()).find("\n  - test.cfg:3: empty key") != std::string::npos);
    }

    ConfigReader one = reader_from("lonely=1\n");
    try {
        one.finish();
        FAIL("unknown key should have thrown");
    } catch (const ConfigError& e) {
        // Singular form, no trailing 's'.
        CHECK(std::string(e.what()).rfind("configuration invalid (1 problem):", 0) == 0);
    }
}

TEST_CASE("typed accessors fall back and record bad values") {
    ConfigReader r = reader_from(
        "int.bad = 3.5\n"
        "bool.t = 1\n"
        "bool.f = false\n"
        "bool.bad = yes\n"
        "u64.bad = 12abc\n"
        "list.d = 0.1, 0.2 ,0.3\n"
        "list.i = 4,5,6\n"
        "list.bad = 1,x,3\n");
    CHECK(r.get_int("missing", 7) == 7);
    CHECK(r.get_int("int.bad", 7) == 7);
    CHECK(r.get_bool("bool.t", false) == true);
    CHECK(r.get_bool("bool.f", true) == false);
    CHECK(r.get_bool("bool.bad", true) == true);
    CHECK(r.get_u64("u64.bad", 11) == 11);
    CHECK(r.get_doubles("list.d", {}) == std::vector<double>{0.1, 0.2, 0.3});
    CHECK(r.get_ints("list.i", {}) == std::vector<int>{4, 5, 6});
    CHECK(r.get_ints("list.bad", {9}) == std::vector<int>{9});

    auto problems = capture_problems(r);
    REQUIRE(problems.size() == 4);
    CHECK(problems[0] == "int.bad: expected an integer, got '3.5'");
    CHECK(problems[1] == "bool.bad: expected true or false, got 'yes'");
    CHECK(problems[2] == "u64.bad: expected an unsigned integer, got '12abc'");
    CHECK(problems[3] == "list.bad: expected an integer, got 'x'");
}

TEST_CASE("required keys and command-line overrides") {
    ConfigReader r = reader_from("out = first\n");
    CHECK(r.require_string("dataset.images").empty());
    r.override_value("out", "second");
    r.override_value("bogus", "1");
    CHECK(r.get_string("out", "") == "second");

    auto problems = capture_problems(r);
    REQUIRE(problems.size() == 2);
    CHECK(problems[0] == "missing required key 'dataset.images'");
    CHECK(problems[1] == "unknown key 'bogus'");
}

TEST_CASE("a missing config file is a config problem, not a crash") {
    ConfigReader r = ConfigReader::from_file("/nonexistent/never.cfg");
    auto problems = capture_problems(r);
    REQUIRE(problems.size() == 1);
    CHECK(problems[0] == "cannot open config file /nonexistent/never.cfg");
}

TEST_CASE("noise spec parses pairs, groups, and the optional seed") {
    ConfigReader r = reader_from(
        "noise.kind = pairwise\n"
        "noise.eta = 0.3\n"
        "noise.pairs = 0:1, 2:3\n"
        "noise.seed = 99\n"
        "noise.predictor_epochs = 2\n"
        "noise.predictor_lr = 0.5\n");
    NoiseSpec spec = read_noise_spec(r);
    CHECK_NOTHROW(r.finish());
    CHECK(spec.kind == NoiseKind::Pairwise);
    CHECK(spec.eta == 0.3);
    REQUIRE(spec.pairs.size() == 2);
    CHECK(spec.pairs[0] == std::pair<int, int>(0, 1));
    CHECK(spec.pairs[1] == std::pair<int, int>(2, 3));
    REQUIRE(spec.seed.has_value());
    CHECK(*spec.seed == 99);
    CHECK(spec.predictor_epochs == 2);
    CHECK(spec.predictor_lr == 0.5);

    ConfigReader g = reader_from(
        "noise.kind = superclass_circular\n"
        "noise.eta = 0.2\n"
        "noise.groups = 0,1; 2,3\n");
    NoiseSpec gs = read_noise_spec(g);
    CHECK_NOTHROW(g.finish());
    REQUIRE(gs.groups.size() == 2);
    CHECK(gs.groups[0] == std::vector<int>{0, 1});
    CHECK(gs.groups[1] == std::vector<int>{2, 3});
    CHECK_FALSE(gs.seed.has_value());
}

TEST_CASE("noise spec rejections are enumerated") {
    SECTION("unknown kind, bad rate, malformed pair and group cells") {
        ConfigReader r = reader_from(
            "noise.kind = blorp\n"
            "noise.eta = 1.5\n"
            "noise.pairs = 0-1\n"
            "noise.groups = a,2\n");
        read_noise_spec(r);
        auto problems = capture_problems(r);
        REQUIRE(problems.size() == 4);
        CHECK(problems[0] == "noise.kind: unknown kind 'blorp'");
        CHECK(problems[1] == "noise.eta must lie in [0,1]");
        CHECK(problems[2] == "noise.pairs: expected source:target, got '0-1'");
        CHECK(problems[3] == "noise.groups: expected label numbers, got 'a'");
    }
    SECTION("recipes that demand their structure keys") {
        ConfigReader p = reader_from("noise.kind = pairwise\nnoise.eta = 0.2\n");
        read_noise_spec(p);
        CHECK(capture_problems(p) ==
              std::vector<std::string>{"noise.pairs is required for pairwise noise"});

        ConfigReader s = reader_from("noise.kind = superclass_circular\nnoise.eta = 0.2\n");
        read_noise_spec(s);
        CHECK(capture_problems(s) ==
              std::vector<std::string>{"noise.groups is required for superclass_circular noise"});
    }
    SECTION("matrix kind needs a file that exists") {
        ConfigReader missing = reader_from("noise.kind = matrix\n");
        read_noise_spec(missing);
        CHECK(capture_problems(missing) ==
              std::vector<std::string>{"missing required key 'noise.matrix'"});

        ConfigReader gone = reader_from("noise.kind = matrix\nnoise.matrix = /no/such.matrix\n");
        read_noise_spec(gone);
        CHECK(capture_problems(gone) ==
              std::vector<std::string>{"noise matrix file does not exist: /no/such.matrix"});
    }
    SECTION("predictor epochs must be at least one") {
        ConfigReader r = reader_from(
            "noise.kind = classifier_induced\nnoise.eta = 0.2\nnoise.predictor_epochs = 0\n");
        read_noise_spec(r);
        CHECK(capture_problems(r) ==
              std::vector<std::string>{"noise.predictor_epochs must be at least 1"});
    }
}

TEST_CASE("matrix files flow from the spec into recipes") {
    TempDir tmp;
    std::string path = tmp.file("circ.matrix");
    save_matrix(build_circular(3, 0.2), path);

    ConfigReader r = reader_from("noise.kind = matrix\nnoise.matrix = " + path + "\n");
    NoiseSpec spec = read_noise_spec(r);
    CHECK_NOTHROW(r.finish());
    CHECK(spec.matrix_path == path);

    TransitionMatrix T = recipe_matrix(spec, 3);
    TransitionMatrix want = build_circular(3, 0.2);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(T.entries(i, j) == Catch::Approx(want.entries(i, j)).margin(1e-15));

    CHECK_THROWS_WITH(recipe_matrix(spec, 4),
                      "matrix file is 3x3 but the dataset has 4 classes");
}

TEST_CASE("experiment config defaults cover a whole run") {
    ConfigReader r = reader_from("");
    ExperimentConfig cfg = read_experiment_config(r);
    CHECK_NOTHROW(r.finish());
    CHECK(cfg.dataset.kind == DatasetKind::Synthetic);
    CHECK(cfg.dataset.n == 2000);
    CHECK(cfg.dataset.d == 20);
    CHECK(cfg.dataset.informative == 10);
    CHECK(cfg.dataset.c == 3);
    CHECK(cfg.dataset.limit == 0);
    CHECK(cfg.dataset.classes.empty());
    CHECK(cfg.f_train == 0.7);
    CHECK(cfg.f_val == 0.15);
    CHECK(cfg.f_test == 0.15);
    CHECK_FALSE(cfg.split_seed.has_value());
    CHECK(cfg.noise.kind == NoiseKind::None);
    CHECK(cfg.hidden == std::vector<int>{64, 64});
    CHECK(cfg.loss_kind == LossKind::Ce);
    CHECK(cfg.max_epochs == 100);
    CHECK(cfg.patience == 10);
    CHECK(cfg.lr == 0.05);
    CHECK(cfg.batch_size == 128);
    CHECK_FALSE(cfg.log_gvectors);
    CHECK(cfg.policies == std::vector<Policy>{Policy::Nes, Policy::Es, Policy::Wes});
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3});
    CHECK(cfg.out_dir == "runs");
}

TEST_CASE("experiment config reads every documented key") {
    TempDir tmp;
    std::vector<unsigned char> pixels(6 * 2 * 2, 0);
    std::vector<unsigned char> labels{0, 1, 2, 0, 1, 2};
    write_idx_images(tmp.file("x.idx"), 6, 2, 2, pixels);
    write_idx_labels(tmp.file("y.idx"), labels);

    ConfigReader r = reader_from(
        "dataset.kind = idx\n"
        "dataset.images = " + tmp.file("x.idx") + "\n"
        "dataset.labels = " + tmp.file("y.idx") + "\n"
        "dataset.limit = 4\n"
        "dataset.classes = 0,2\n"
        "split.train = 0.5\n"
        "split.val = 0.25\n"
        "split.test = 0.25\n"
        "split.seed = 77\n"
        "noise.kind = symmetric\n"
        "noise.eta = 0.4\n"
        "model.hidden = 32,16\n"
        "loss.kind = gce\n"
        "loss.rho = 0.6\n"
        "train.epochs = 12\n"
        "train.patience = 4\n"
        "train.lr = 0.2\n"
        "train.batch = 64\n"
        "train.gvector = true\n"
        "policies = wes\n"
        "seeds = 7,8\n"
        "out = " + tmp.file("runs") + "\n");
    ExperimentConfig cfg = read_experiment_config(r);
    CHECK_NOTHROW(r.finish());
    CHECK(cfg.dataset.kind == DatasetKind::Idx);
    CHECK(cfg.dataset.limit == 4);
    CHECK(cfg.dataset.classes == std::vector<int>{0, 2});
    CHECK(cfg.f_train == 0.5);
    REQUIRE(cfg.split_seed.has_value());
    CHECK(*cfg.split_seed == 77);
    CHECK(cfg.noise.kind == NoiseKind::Symmetric);
    CHECK(cfg.noise.eta == 0.4);
    CHECK(cfg.hidden == std::vector<int>{32, 16});
    CHECK(cfg.loss_kind == LossKind::Gce);
    CHECK(cfg.gce_rho == 0.6);
    CHECK(cfg.max_epochs == 12);
    CHECK(cfg.patience == 4);
    CHECK(cfg.lr == 0.2);
    CHECK(cfg.batch_size == 64);
    CHECK(cfg.log_gvectors);
    CHECK(cfg.policies == std::vector<Policy>{Policy::Wes});
    CHECK(cfg.seeds == std::vector<std::uint64_t>{7, 8});

    SECTION("cache datasets resolve the same way") {
        Dataset ds = make_synthetic(12, 3, 2, 2, 5);
        std::string cache = tmp.file("ds.nlds");
        save_cache(ds, cache);
        ConfigReader cr = reader_from("dataset.kind = cache\ndataset.cache = " + cache + "\n");
        ExperimentConfig ccfg = read_experiment_config(cr);
        CHECK_NOTHROW(cr.finish());
        CHECK(ccfg.dataset.kind == DatasetKind::Cache);
        CHECK(ccfg.dataset.cache == cache);
        Dataset back = load_config_dataset(ccfg.dataset);
        CHECK(back.n() == 12);
        CHECK(back.c == 2);
    }
}

TEST_CASE("experiment config rejections are enumerated") {
    SECTION("training and loss knobs") {
        ConfigReader r = reader_from(
            "loss.kind = zero_one\n"
            "loss.rho = 0\n"
            "loss.alpha = -1\n"
            "train.epochs = 0\n"
            "train.patience = 0\n"
            "train.lr = -0.1\n"
            "train.batch = 0\n"
            "policies = nes,bogus\n"
            "seeds = 1,1\n");
        read_experiment_config(r);
        auto problems = capture_problems(r);
        REQUIRE(problems.size() == 9);
        CHECK(problems[0] == "loss.kind: the 0-1 loss is not differentiable and cannot train");
        CHECK(problems[1] == "loss.rho must lie in (0,1]");
        CHECK(problems[2] == "loss weights must be nonnegative");
        CHECK(problems[3] == "train.epochs must be at least 1");
        CHECK(problems[4] == "train.patience must be at least 1");
        CHECK(problems[5] == "train.lr must be nonnegative");
        CHECK(problems[6] == "train.batch must be at least 1");
        CHECK(problems[7] == "policies: unknown policy 'bogus' (expected nes, es, or wes)");
        CHECK(problems[8] == "seeds: duplicates listed");
    }
    SECTION("split fractions") {
        ConfigReader sum = reader_from("split.train = 0.5\nsplit.val = 0.2\nsplit.test = 0.2\n");
        read_experiment_config(sum);
        CHECK(capture_problems(sum) ==
              std::vector<std::string>{"split fractions must sum to 1"});

        ConfigReader neg = reader_from("split.train = 1.2\nsplit.val = -0.1\nsplit.test = -0.1\n");
        read_experiment_config(neg);
        CHECK(capture_problems(neg) ==
              std::vector<std::string>{"split fractions must all be positive"});
    }
    SECTION("synthetic shape") {
        ConfigReader r = reader_from(
            "dataset.n = 2\n"
            "dataset.c = 1\n"
            "dataset.informative = 25\n"
            "dataset.limit = -1\n");
        read_experiment_config(r);
        auto problems = capture_problems(r);
        REQUIRE(problems.size() == 4);
        CHECK(problems[0] == "dataset.n: need at least 3 samples to split");
        CHECK(problems[1] == "dataset.c: need at least 2 classes");
        CHECK(problems[2] == "dataset.informative must lie in [1, dataset.d]");
        CHECK(problems[3] == "dataset.limit cannot be negative");
    }
    SECTION("idx files must exist") {
        ConfigReader r = reader_from(
            "dataset.kind = idx\n"
            "dataset.images = /no/x.idx\n"
            "dataset.labels = /no/y.idx\n");
        read_experiment_config(r);
        auto problems = capture_problems(r);
        REQUIRE(problems.size() == 2);
        CHECK(problems[0] == "dataset file does not exist: /no/x.idx");
        CHECK(problems[1] == "dataset file does not exist: /no/y.idx");
    }
    SECTION("bad dataset and model kinds") {
        ConfigReader r = reader_from(
            "dataset.kind = parquet\n"
            "model.hidden = 8,0\n"
            "loss.kind = hinge\n");
        read_experiment_config(r);
        auto problems = capture_problems(r);
        REQUIRE(problems.size() == 3);
        CHECK(problems[0] == "dataset.kind: expected idx, synthetic, or cache, got 'parquet'");
        CHECK(problems[1] == "model.hidden: widths must be positive");
        CHECK(problems[2] == "loss.kind: unknown loss 'hinge'");
    }
}

TEST_CASE("preserving thresholds by recipe") {
    CHECK(preserving_threshold(NoiseKind::Symmetric, 4) == 0.75);
    CHECK(preserving_threshold(NoiseKind::SymmetricResample, 4) == 1.0);
    CHECK(preserving_threshold(NoiseKind::Circular, 6) == 0.5);
    CHECK(preserving_threshold(NoiseKind::Pairwise, 6) == 0.5);
    CHECK(preserving_threshold(NoiseKind::SuperclassCircular, 6) == 0.5);
    CHECK(preserving_threshold(NoiseKind::AsymMnist, 10) == Catch::Approx(1.0 / 3.0));
    CHECK(preserving_threshold(NoiseKind::RankedTernary, 3) == 0.4);
    CHECK(std::isnan(preserving_threshold(NoiseKind::None, 3)));
    CHECK(std::isnan(preserving_threshold(NoiseKind::PcaSplit, 3)));
    CHECK(std::isnan(preserving_threshold(NoiseKind::MatrixFile, 3)));
}

TEST_CASE("fixed-size recipes pin their class counts") {
    NoiseSpec spec;
    spec.eta = 0.2;

    spec.kind = NoiseKind::AsymMnist;
    CHECK_THROWS_WITH(recipe_matrix(spec, 9), "asym_mnist noise needs 10 classes, dataset has 9");
    spec.kind = NoiseKind::RankedTernary;
    CHECK_THROWS_WITH(recipe_matrix(spec, 4), "ranked_ternary noise needs 3 classes, dataset has 4");
    spec.kind = NoiseKind::RankedFive;
    CHECK_THROWS_WITH(recipe_matrix(spec, 3), "ranked_five noise needs 5 classes, dataset has 3");
    spec.kind = NoiseKind::None;
    CHECK_THROWS_WITH(recipe_matrix(spec, 3),
                      "noise recipe 'none' has no single transition matrix");

    CHECK(recipe_has_matrix(NoiseKind::Symmetric));
    CHECK(recipe_has_matrix(NoiseKind::MatrixFile));
    CHECK_FALSE(recipe_has_matrix(NoiseKind::None));
    CHECK_FALSE(recipe_has_matrix(NoiseKind::PcaSplit));
    CHECK_FALSE(recipe_has_matrix(NoiseKind::ClassifierInduced));
}

namespace {

ExperimentConfig tiny_synthetic_config() {
    ExperimentConfig cfg;
    cfg.dataset.n = 90;
    cfg.dataset.d = 4;
    cfg.dataset.informative = 3;
    cfg.dataset.c = 3;
    cfg.dataset.seed = 11;
    cfg.noise.kind = NoiseKind::Symmetric;
    cfg.noise.eta = 0.5;
    cfg.hidden = {6};
    cfg.max_epochs = 3;
    cfg.patience = 2;
    cfg.lr = 0.3;
    cfg.batch_size = 32;
    cfg.seeds = {1, 2};
    return cfg;
}

}  // namespace

TEST_CASE("prepare_run fills exactly the noisy tracks") {
    ExperimentConfig cfg = tiny_synthetic_config();
    PreparedRun prep = prepare_run(cfg, 9);

    CHECK(prep.c == 3);
    REQUIRE(prep.splits.train.noisy_labels.has_value());
    REQUIRE(prep.splits.noisy_val.noisy_labels.has_value());
    CHECK_FALSE(prep.splits.clean_val.noisy_labels.has_value());
    CHECK_FALSE(prep.splits.test.noisy_labels.has_value());
    REQUIRE(prep.matrix.has_value());
    CHECK(prep.noise_tag == "symmetric(eta=0.5)");
    // At a 50% rate on 63 train rows, an untouched track would be a
    // one-in-2^63 fluke.
    CHECK(*prep.splits.train.noisy_labels != prep.splits.train.clean_labels);

    SECTION("same run seed, same corruption") {
        PreparedRun again = prepare_run(cfg, 9);
        CHECK(*again.splits.train.noisy_labels == *prep.splits.train.noisy_labels);
        CHECK(*again.splits.noisy_val.noisy_labels == *prep.splits.noisy_val.noisy_labels);
    }
    SECTION("pinning split and noise seeds makes runs seed-independent") {
        cfg.split_seed = 123;
        cfg.noise.seed = 456;
        PreparedRun a = prepare_run(cfg, 1);
        PreparedRun b = prepare_run(cfg, 2);
        CHECK(a.splits.train.clean_labels == b.splits.train.clean_labels);
        CHECK(*a.splits.train.noisy_labels == *b.splits.train.noisy_labels);
    }
    SECTION("no noise copies the clean labels") {
        cfg.noise.kind = NoiseKind::None;
        PreparedRun clean = prepare_run(cfg, 9);
        CHECK(clean.noise_tag == "none");
        CHECK_FALSE(clean.matrix.has_value());
        CHECK(*clean.splits.train.noisy_labels == clean.splits.train.clean_labels);
        CHECK(*clean.splits.noisy_val.noisy_labels == clean.splits.noisy_val.clean_labels);
    }
}

TEST_CASE("corrected losses get the exact matrix when the recipe has one") {
    ExperimentConfig cfg;
    cfg.noise.eta = 0.2;
    cfg.loss_kind = LossKind::Fce;
    TransitionMatrix circ = build_circular(3, 0.2);

    Eigen::VectorXd q(3);
    q << 0.6, 0.3, 0.1;

    LossSpec exact = make_loss_spec(cfg, circ, 3);
    LossSpec want_exact = forward_correct(cross_entropy(), circ);
    CHECK(loss(exact, q, 1) == loss(want_exact, q, 1));
    CHECK(describe(exact) == "fce(base=ce)");

    SECTION("without a matrix the symmetric stand-in takes over") {
        cfg.noise.eta = 0.3;
        cfg.loss_kind = LossKind::Bce;
        LossSpec sub = make_loss_spec(cfg, std::nullopt, 3);
        LossSpec want_sub = backward_correct(cross_entropy(), build_symmetric(3, 0.3));
        CHECK(loss(sub, q, 1) == loss(want_sub, q, 1));
        CHECK(describe(sub) == describe(want_sub));
    }
    SECTION("plain losses ignore the matrix argument") {
        cfg.loss_kind = LossKind::Gce;
        cfg.gce_rho = 0.6;
        LossSpec plain = make_loss_spec(cfg, circ, 3);
        CHECK(describe(plain) == "gce(rho=0.6)");
    }
    SECTION("the 0-1 loss cannot drive training") {
        cfg.loss_kind = LossKind::ZeroOne;
        CHECK_THROWS_AS(make_loss_spec(cfg, std::nullopt, 3), std::invalid_argument);
        try {
            make_loss_spec(cfg, std::nullopt, 3);
        } catch (const std::invalid_argument& e) {
            CHECK(std::string(e.what()).find("cannot drive training") != std::string::npos);
        }
    }
}

TEST_CASE("selections come straight out of a run log") {
    RunLog log;
    for (int e = 1; e <= 3; ++e) {
        EpochRecord rec;
        rec.epoch = e;
        rec.noisy_val_acc = 0.1 * e;
        rec.clean_val_acc = 0.2 * e;
        rec.clean_test_acc = 0.3 * e;
        log.records.push_back(rec);
    }
    log.chosen_nes = 2;
    log.chosen_es = 0;
    log.chosen_wes = 4;

    PolicySelection sel = select_from_log(log, Policy::Nes);
    CHECK(sel.chosen_epoch == 2);
    CHECK(sel.noisy_val_acc == Catch::Approx(0.2));
    CHECK(sel.clean_val_acc == Catch::Approx(0.4));
    CHECK(sel.clean_test_acc == Catch::Approx(0.6));

    CHECK_THROWS_WITH(select_from_log(log, Policy::Es), "run log carries no es selection");
    CHECK_THROWS_WITH(select_from_log(log, Policy::Wes), "run log carries no wes selection");
}

TEST_CASE("the halt driver is the only policy or the full budget") {
    CHECK(pick_driver({Policy::Nes}) == Policy::Nes);
    CHECK(pick_driver({Policy::Es}) == Policy::Es);
    CHECK(pick_driver({Policy::Wes}) == Policy::Wes);
    CHECK(pick_driver({Policy::Nes, Policy::Es}) == Policy::Wes);
    CHECK(pick_driver({Policy::Nes, Policy::Es, Policy::Wes}) == Policy::Wes);
}

TEST_CASE("train command writes per-seed logs and a summary table") {
    TempDir tmp;
    ExperimentConfig cfg = tiny_synthetic_config();
    cfg.out_dir = tmp.file("runs");

    TrainArtifacts art = cmd_train(cfg, 1);
    REQUIRE(art.runs.size() == 2);
    REQUIRE(art.summaries.size() == 3);
    CHECK(art.classes == 3);
    for (const PolicySummary& s : art.summaries) {
        REQUIRE(s.selections.size() == 2);
        std::vector<double> accs;
        for (const PolicySelection& sel : s.selections) accs.push_back(sel.clean_test_acc);
        double mean = (accs[0] + accs[1]) / 2.0;
        CHECK(s.mean == Catch::Approx(mean).margin(1e-15));
        double dev = std::abs(accs[0] - mean);
        CHECK(s.stddev == Catch::Approx(std::sqrt(2.0) * dev).margin(1e-12));
    }

    CHECK(std::filesystem::exists(tmp.file("runs/run-seed1.csv")));
    CHECK(std::filesystem::exists(tmp.file("runs/run-seed2.csv")));
    std::string summary = slurp(tmp.file("runs/summary.csv"));
    CHECK(summary.find("# dataset=synthetic(n=90,d=4,informative=3,c=3,seed=11)") !=
          std::string::npos);
    CHECK(summary.find("# noise=symmetric(eta=0.5)") != std::string::npos);
    CHECK(summary.find("# seed=") == std::string::npos);
    CHECK(summary.find("policy,seed,chosen_epoch,noisy_val_acc,clean_val_acc,clean_test_acc,"
                       "clean_test_mean,clean_test_std\n") != std::string::npos);
    // Three policies, two seeds: six data rows.
    int rows = 0;
    std::istringstream in(summary);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty() && line[0] != '#' && line.rfind("policy,", 0) != 0) ++rows;
    CHECK(rows == 6);

    SECTION("checkpoints land in the output directory") {
        CHECK(std::filesystem::exists(tmp.file("runs/ckpt-seed1.wes")));
        CHECK(std::filesystem::exists(tmp.file("runs/ckpt-seed2.wes")));
    }
}

TEST_CASE("sweep grid writes one row per rate with the preserving threshold") {
    TempDir tmp;
    ExperimentConfig cfg = tiny_synthetic_config();
    cfg.out_dir = tmp.file("sweep");
    cfg.policies = {Policy::Nes, Policy::Wes};

    SECTION("rates are validated before any training") {
        CHECK_THROWS_AS(cmd_sweep(cfg, {}, 1), ConfigError);
        try {
            cmd_sweep(cfg, {0.2, 1.0, -0.1}, 1);
            FAIL("bad rates should have thrown");
        } catch (const ConfigError& e) {
            REQUIRE(e.problems.size() == 2);
            CHECK(e.problems[0] == "sweep.etas: rate 1 outside [0,1)");
            CHECK(e.problems[1] == "sweep.etas: rate -0.1 outside [0,1)");
        }
    }
    SECTION("a two-point grid") {
        std::vector<SweepRow> rows = cmd_sweep(cfg, {0.1, 0.3}, 1);
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].eta == 0.1);
        CHECK(rows[1].eta == 0.3);
        // Symmetric noise on three classes preserves class posteriors up
        // to 2/3.
        CHECK(rows[0].threshold == Catch::Approx(2.0 / 3.0));
        CHECK(rows[1].threshold == Catch::Approx(2.0 / 3.0));
        CHECK(rows[0].artifacts.runs.size() == 2);
        CHECK(rows[0].artifacts.summaries.size() == 2);

        std::string csv = slurp(tmp.file("sweep/sweep.csv"));
        CHECK(csv.find("eta,threshold,nes_mean,nes_std,wes_mean,wes_std\n") != std::string::npos);
        CHECK(std::filesystem::exists(tmp.file("sweep/eta-0.1/summary.csv")));
        CHECK(std::filesystem::exists(tmp.file("sweep/eta-0.3/run-seed1.csv")));
        std::istringstream in(csv);
        std::string line;
        int data_rows = 0;
        while (std::getline(in, line))
            if (!line.empty() && line.rfind("eta,", 0) != 0) ++data_rows;
        CHECK(data_rows == 2);
    }
}

TEST_CASE("scatter command compares the fit against the affine prediction") {
    RunLog log;
    log.config_echo.emplace_back("noise_eta", "0.3");
    log.config_echo.emplace_back("classes", "2");
    // Noisy accuracy laid exactly on the predicted line: slope
    // 1 - 0.3*2/1 = 0.4, intercept 0.3/1 = 0.3.
    for (int e = 1; e <= 5; ++e) {
        EpochRecord rec;
        rec.epoch = e;
        rec.clean_val_acc = 0.5 + 0.08 * e;
        rec.noisy_val_acc = 0.4 * rec.clean_val_acc + 0.3;
        log.records.push_back(rec);
    }

    std::ostringstream out;
    ScatterResult res = cmd_scatter(log, out);
    CHECK(res.points == 5);
    CHECK(res.affine_slope == Catch::Approx(0.4));
    CHECK(res.affine_intercept == Catch::Approx(0.3));
    CHECK(res.fit.slope == Catch::Approx(0.4).margin(1e-12));
    CHECK(res.fit.intercept == Catch::Approx(0.3).margin(1e-12));
    CHECK(res.fit.r2 == Catch::Approx(1.0).margin(1e-12));
    CHECK(out.str().find("epoch,clean_val_acc,noisy_val_acc,affine_noisy_acc\n") !=
          std::string::npos);
    CHECK(out.str().find("#fit slope=") != std::string::npos);
    CHECK(out.str().find("#affine slope=") != std::string::npos);

    SECTION("logs without the train echo are rejected") {
        RunLog bare;
        bare.records = log.records;
        std::ostringstream sink;
        CHECK_THROWS_WITH(cmd_scatter(bare, sink),
                          "run log lacks the noise_eta/classes echo; regenerate it with the "
                          "train command");
    }
    SECTION("empty logs and degenerate class counts are rejected") {
        RunLog empty;
        empty.config_echo = log.config_echo;
        std::ostringstream sink;
        CHECK_THROWS_WITH(cmd_scatter(empty, sink), "run log has no epoch rows");

        RunLog one_class;
        one_class.records = log.records;
        one_class.config_echo.emplace_back("noise_eta", "0.3");
        one_class.config_echo.emplace_back("classes", "1");
        CHECK_THROWS_WITH(cmd_scatter(one_class, sink),
                          "run log reports fewer than two classes");
    }
}

TEST_CASE("tree depth grid reports both argmax depths per seed") {
    TempDir tmp;
    ExperimentConfig cfg = tiny_synthetic_config();
    cfg.dataset.n = 150;
    cfg.noise.eta = 0.3;
    cfg.seeds = {5};
    cfg.out_dir = tmp.file("depths");

    SECTION("grid validation") {
        CHECK_THROWS_AS(cmd_tree_depth(cfg, {}, 1), ConfigError);
        try {
            cmd_tree_depth(cfg, {1, -2}, 1);
            FAIL("negative depth should have thrown");
        } catch (const ConfigError& e) {
            CHECK(e.problems == std::vector<std::string>{"tree.depths: depth -2 is negative"});
        }
    }
    SECTION("a small grid") {
        std::vector<TreeDepthSeedResult> results = cmd_tree_depth(cfg, {0, 1, 2, 3}, 1);
        REQUIRE(results.size() == 1);
        const TreeDepthSeedResult& res = results[0];
        CHECK(res.seed == 5);
        REQUIRE(res.points.size() == 4);
        for (std::size_t k = 0; k < 4; ++k) CHECK(res.points[k].depth == int(k));
        // The clean argmax is the best clean accuracy by definition, so the
        // deficit can never go negative.
        CHECK(res.deficit >= 0.0);
        double best_clean = 0.0;
        for (const DepthPoint& pt : res.points)
            best_clean = std::max(best_clean, pt.clean_val_acc);
        for (const DepthPoint& pt : res.points)
            if (pt.depth == res.clean_argmax_depth)
                CHECK(pt.clean_val_acc == Catch::Approx(best_clean));

        std::string csv = slurp(tmp.file("depths/tree-depth.csv"));
        CHECK(csv.find("seed,depth,noisy_val_acc,clean_val_acc,clean_test_acc,"
                       "is_noisy_argmax,is_clean_argmax\n") != std::string::npos);
        CHECK(csv.find("#summary seed=5 noisy_argmax=") != std::string::npos);
    }
}

TEST_CASE("g-vector runs demand distinguishable posterior ranks") {
    TempDir tmp;
    ExperimentConfig cfg = tiny_synthetic_config();
    cfg.out_dir = tmp.file("gvec");

    SECTION("only the ranked recipes qualify") {
        cfg.noise.kind = NoiseKind::Symmetric;
        try {
            cmd_gvector(cfg, 1);
            FAIL("symmetric noise should have been rejected");
        } catch (const ConfigError& e) {
            REQUIRE(e.problems.size() == 1);
            CHECK(e.problems[0].find("gvector needs noise with exactly known per-class "
                                     "posteriors") == 0);
            CHECK(e.problems[0].find("got symmetric") != std::string::npos);
        }
    }
    SECTION("rates where ranked ternary ranks tie are rejected") {
        cfg.noise.kind = NoiseKind::RankedTernary;
        for (double bad : {0.0, 0.4, 0.5}) {
            cfg.noise.eta = bad;
            try {
                cmd_gvector(cfg, 1);
                FAIL("tied ranks should have been rejected");
            } catch (const ConfigError& e) {
                REQUIRE(e.problems.size() == 1);
                CHECK(e.problems[0].find("makes ranked_ternary posterior ranks tie") !=
                      std::string::npos);
            }
        }
    }
    SECTION("a tiny ranked run writes rank trajectories") {
        cfg.noise.kind = NoiseKind::RankedTernary;
        cfg.noise.eta = 0.3;
        cfg.max_epochs = 4;
        cfg.seeds = {2};
        std::vector<GvectorSeedResult> results = cmd_gvector(cfg, 1);
        REQUIRE(results.size() == 1);
        CHECK(results[0].seed == 2);
        CHECK(results[0].window.t1 >= 1);
        CHECK(results[0].window.t2 >= results[0].window.t1);
        CHECK(results[0].window.t2 <= 4);

        std::string traj = slurp(tmp.file("gvec/gtraj-seed2.csv"));
        CHECK(traj.rfind("epoch,g1,g2,g3\n", 0) == 0);
        CHECK(traj.find("#window t1=") != std::string::npos);
        // The run itself is logged too, driven by the full budget.
        std::string run = slurp(tmp.file("gvec/run-seed2.csv"));
        CHECK(run.find(",g1,g2,g3") != std::string::npos);
        CHECK(run.find("# policy=wes") != std::string::npos);
    }
}

TEST_CASE("bound requests read their regime-specific keys") {
    SECTION("general regime needs the rate window") {
        ConfigReader r = reader_from(
            "bound.eta = 0.2\n"
            "bound.noisy_risk = 0.3\n"
            "bound.eta_min = 0.1\n"
            "bound.eta_max = 0.3\n"
            "bound.noisy_risk_other = 0.4\n");
        BoundsRequest q = read_bounds_request(r);
        CHECK_NOTHROW(r.finish());
        CHECK(q.regime == "general");
        CHECK(q.eta == 0.2);
        CHECK(q.noisy_risk == 0.3);
        CHECK(q.eta_min == 0.1);
        CHECK(q.eta_max == 0.3);
        REQUIRE(q.noisy_risk_other.has_value());
        CHECK(*q.noisy_risk_other == 0.4);

        BoundReport rep = cmd_bounds(q);
        // With a competitor risk supplied the two-term form applies.
        CHECK(rep.regime == "general");
        std::ostringstream out;
        print_bound_report(out, rep);
        CHECK(out.str().find("regime: general") != std::string::npos);
        CHECK(out.str().find("noisy risk (competitor): 0.4") != std::string::npos);
        CHECK(out.str().find("clean-risk gap bound: ") != std::string::npos);

        BoundsRequest solo = q;
        solo.noisy_risk_other.reset();
        CHECK(cmd_bounds(solo).regime == "optimal-noisy-risk");
    }
    SECTION("pairwise regime needs only the rate and risk") {
        ConfigReader r = reader_from(
            "bound.regime = pairwise\n"
            "bound.eta = 0.2\n"
            "bound.noisy_risk = 0.3\n");
        BoundsRequest q = read_bounds_request(r);
        CHECK_NOTHROW(r.finish());
        BoundReport rep = cmd_bounds(q);
        CHECK(rep.regime == "pairwise");
        std::ostringstream out;
        print_bound_report(out, rep);
        CHECK(out.str().find("regime: pairwise") != std::string::npos);
        CHECK(out.str().find("off-diagonal rates") == std::string::npos);
    }
    SECTION("missing keys and bad regimes are enumerated") {
        // An unrecognized regime cannot know its extra keys, so only the
        // always-required pair is checked alongside it.
        ConfigReader r = reader_from("bound.regime = weird\n");
        read_bounds_request(r);
        auto problems = capture_problems(r);
        REQUIRE(problems.size() == 3);
        CHECK(problems[0] == "bound.regime: expected general or pairwise, got 'weird'");
        CHECK(problems[1] == "missing required key 'bound.eta'");
        CHECK(problems[2] == "missing required key 'bound.noisy_risk'");

        ConfigReader g = reader_from("");
        read_bounds_request(g);
        auto general = capture_problems(g);
        REQUIRE(general.size() == 4);
        CHECK(general[2] == "missing required key 'bound.eta_min'");
        CHECK(general[3] == "missing required key 'bound.eta_max'");
    }
}

TEST_CASE("class counts resolve from the recipe or the explicit key") {
    SECTION("fixed-size recipes pin the count") {
        ConfigReader r = reader_from("noise.kind = ranked_ternary\nnoise.eta = 0.3\n");
        NoiseSpec spec = read_noise_spec(r);
        CHECK(resolve_class_count(r, spec, 0) == 3);
        CHECK_NOTHROW(r.finish());
    }
    SECTION("an explicit conflicting count is a problem") {
        ConfigReader r = reader_from(
            "noise.kind = ranked_ternary\nnoise.eta = 0.3\nnoise.classes = 4\n");
        NoiseSpec spec = read_noise_spec(r);
        resolve_class_count(r, spec, 0);
        CHECK(capture_problems(r) ==
              std::vector<std::string>{
                  "noise.classes=4 conflicts with ranked_ternary (always 3 classes)"});
    }
    SECTION("free recipes read the key or fall back") {
        ConfigReader r = reader_from("noise.kind = symmetric\nnoise.eta = 0.2\nnoise.classes = 5\n");
        NoiseSpec spec = read_noise_spec(r);
        CHECK(resolve_class_count(r, spec, 0) == 5);
        CHECK_NOTHROW(r.finish());

        ConfigReader fall = reader_from("noise.kind = symmetric\nnoise.eta = 0.2\n");
        NoiseSpec fspec = read_noise_spec(fall);
        CHECK(resolve_class_count(fall, fspec, 7) == 7);
        CHECK_NOTHROW(fall.finish());

        ConfigReader none = reader_from("noise.kind = symmetric\nnoise.eta = 0.2\n");
        NoiseSpec nspec = read_noise_spec(none);
        resolve_class_count(none, nspec, 0);
        CHECK(capture_problems(none) ==
              std::vector<std::string>{"noise.classes: need at least 2 classes for this recipe"});
    }
}

TEST_CASE("gen-noise dumps the matrix with its taxonomy") {
    TempDir tmp;
    NoiseSpec spec;
    spec.kind = NoiseKind::Symmetric;
    spec.eta = 0.2;
    std::string path = tmp.file("sym.matrix");

    std::ostringstream report;
    TransitionMatrix T = cmd_gen_noise(spec, 4, path, report);
    CHECK(T.c == 4);
    TransitionMatrix back = load_matrix(path);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(back.entries(i, j) == T.entries(i, j));
    CHECK(report.str().find("wrote 4x4 matrix to " + path) != std::string::npos);
    CHECK(report.str().find("symmetric: yes") != std::string::npos);
    CHECK(report.str().find("diagonally dominant: yes") != std::string::npos);

    SECTION("instance-dependent recipes have nothing to dump") {
        NoiseSpec pca;
        pca.kind = NoiseKind::PcaSplit;
        pca.eta = 0.2;
        std::ostringstream sink;
        CHECK_THROWS_WITH(cmd_gen_noise(pca, 4, tmp.file("no.matrix"), sink),
                          "noise recipe 'pca_split' has no single matrix to dump");
    }
}

TEST_CASE("inject corrupts an IDX label file in place") {
    TempDir tmp;
    const int n = 200;
    std::vector<unsigned char> labels(n);
    for (int i = 0; i < n; ++i) labels[std::size_t(i)] = (unsigned char)(i % 3);
    std::string labels_path = tmp.file("y.idx");
    write_idx_labels(labels_path, labels);

    NoiseSpec spec;
    spec.kind = NoiseKind::Symmetric;
    spec.eta = 0.5;

    SECTION("single-matrix recipes run on labels alone") {
        std::string out_path = tmp.file("y-noisy.idx");
        InjectResult res = cmd_inject(spec, "", labels_path, 0, 31, out_path);
        CHECK(res.total == n);
        CHECK(res.out_labels == out_path);
        // Each label flips with probability 0.5; 4 sigma around 100 of 200.
        CHECK(res.flipped >= 72);
        CHECK(res.flipped <= 128);

        std::vector<unsigned char> noisy = read_idx_labels(out_path);
        REQUIRE(noisy.size() == std::size_t(n));
        int flips = 0;
        for (int i = 0; i < n; ++i)
            if (noisy[std::size_t(i)] != labels[std::size_t(i)]) ++flips;
        CHECK(flips == res.flipped);

        // The matrix sidecar holds the exact recipe.
        TransitionMatrix side = load_matrix(out_path + ".matrix");
        TransitionMatrix want = build_symmetric(3, 0.5);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(side.entries(i, j) == Catch::Approx(want.entries(i, j)).margin(1e-15));

        InjectResult again = cmd_inject(spec, "", labels_path, 0, 31, tmp.file("y2.idx"));
        CHECK(again.flipped == res.flipped);
        CHECK(read_idx_labels(tmp.file("y2.idx")) == noisy);
    }
    SECTION("a spec-pinned seed overrides the command seed") {
        spec.seed = 77;
        InjectResult a = cmd_inject(spec, "", labels_path, 0, 1, tmp.file("a.idx"));
        InjectResult b = cmd_inject(spec, "", labels_path, 0, 2, tmp.file("b.idx"));
        CHECK(read_idx_labels(tmp.file("a.idx")) == read_idx_labels(tmp.file("b.idx")));
        CHECK(a.flipped == b.flipped);
    }
    SECTION("instance-dependent recipes demand the image file") {
        NoiseSpec pca;
        pca.kind = NoiseKind::PcaSplit;
        pca.eta = 0.3;
        CHECK_THROWS_WITH(cmd_inject(pca, "", labels_path, 0, 1, tmp.file("z.idx")),
                          "noise recipe 'pca_split' reads instances; dataset.images is required");
    }
    SECTION("no-op noise is refused") {
        NoiseSpec none;
        none.kind = NoiseKind::None;
        CHECK_THROWS_WITH(cmd_inject(none, "", labels_path, 0, 1, tmp.file("z.idx")),
                          "noise.kind=none leaves nothing to inject");
    }
    SECTION("with images the field can see the instances") {
        std::vector<unsigned char> pixels(std::size_t(n) * 4);
        Rng pix(5);
        for (auto& p : pixels) p = (unsigned char)(pix.below(256));
        std::string images_path = tmp.file("x.idx");
        write_idx_images(images_path, n, 2, 2, pixels);

        NoiseSpec induced;
        induced.kind = NoiseKind::ClassifierInduced;
        induced.eta = 0.4;
        InjectResult res = cmd_inject(induced, images_path, labels_path, 0, 13, tmp.file("ci.idx"));
        CHECK(res.total == n);
        CHECK(res.flipped > 0);
        // No single matrix, so no sidecar.
        CHECK_FALSE(std::filesystem::exists(tmp.file("ci.idx.matrix")));
    }
}
