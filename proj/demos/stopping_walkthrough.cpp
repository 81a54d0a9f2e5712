// Minimal end-to-end walkthrough: cluster data, cyclic label noise, a tiny
// network, and the three stopping policies read off one training run.

#include <iostream>

#include <noisylab/experiment.hpp>

using namespace noisylab;

int main() {
    ExperimentConfig cfg;
    cfg.dataset.kind = DatasetKind::Synthetic;
    cfg.dataset.n = 900;
    cfg.dataset.d = 12;
    cfg.dataset.informative = 6;
    cfg.dataset.c = 3;
    cfg.dataset.seed = 42;
    cfg.noise.kind = NoiseKind::Circular;
    cfg.noise.eta = 0.41;
    cfg.hidden = {24};
    cfg.max_epochs = 40;
    cfg.patience = 10;
    cfg.lr = 0.1;
    cfg.batch_size = 630;  // full training split, one step per epoch
    cfg.seeds = {1};

    TrainArtifacts art = run_experiment(cfg, 1);
    const RunLog& log = art.runs.front().log;

    std::cout << "epoch  train_loss  noisy_val  clean_val  clean_test\n";
    for (const EpochRecord& r : log.records) {
        std::printf("%5d  %10.4f  %9.4f  %9.4f  %10.4f\n", r.epoch, r.train_loss,
                    r.noisy_val_acc, r.clean_val_acc, r.clean_test_acc);
    }
    std::cout << "\n";
    for (const PolicySummary& s : art.summaries) {
        const PolicySelection& sel = s.selections.front();
        std::printf("%-3s picks epoch %2d: clean-test %.4f\n", policy_name(s.policy).c_str(),
                    sel.chosen_epoch, sel.clean_test_acc);
    }
    return 0;
}
