#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "bwm/batch.hpp"
#include "bwm/loss.hpp"
#include "bwm/net.hpp"
#include "bwm/types.hpp"

namespace bwm::train {

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-4; // decoupled (AdamW)
    int batch_size = 32;
    int max_epochs = 100;
    int patience = 15;
    double grad_clip_norm = 1.0;
    int fisher_epoch = 10;
    int fisher_batches = 64; // cap on the Fisher mini-batch budget
    uint64_t seed = 7;
    net::Variant variant = net::Variant::Wm;
    loss::LossWeights weights;

    // Test instrumentation: observes every sampled batch.
    std::function<void(int phase, int epoch, const std::vector<const data::Window*>&)> batch_observer;

    void validate() const {
        if (learning_rate <= 0 || batch_size < 1 || max_epochs < 1)
            throw ConfigError("train: learning rate, batch size and max epochs must be positive");
        if (patience < 0 || patience >= max_epochs)
            throw ConfigError("train: patience must be in [0, max_epochs)");
        // fisher_epoch may exceed max_epochs: the capture then happens
        // post-convergence (the inactive-EWC control setting).
        if (fisher_epoch < 1) throw ConfigError("train: fisher_epoch must be >= 1");
        if (grad_clip_norm <= 0) throw ConfigError("train: grad clip norm must be positive");
        weights.validate();
    }
};

struct EpochStats {
    int phase = 0; // 0 for joint runs, 1..3 for batch-staged phases
    int epoch = 0; // 1-based within the phase
    double l_data = 0, l_mono = 0, l_ir = 0, l_volt = 0, l_phys = 0, l_ewc = 0, l_total = 0;
    double val_mae = 0;
    double grad_norm_max = 0; // largest post-clip global gradient norm
    double seconds = 0;
};

struct PhaseSummary {
    int phase = 0;
    int batch_id = 0;         // training batch this phase consumed (0 for joint)
    int epochs_run = 0;
    int best_epoch = 0;       // 1-based epoch whose parameters were kept
    double best_val_mae = 0;
    int fisher_captured_epoch = 0; // 0 when no capture happened
    bool skipped = false;     // phase had no windows
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::vector<PhaseSummary> phases;
};

struct TrainResult {
    net::Model model{nullptr};
    TrainHistory history;
    // Per-phase Fisher captures from batch-staged runs, in phase order.
    std::vector<loss::FisherDiagonal> fishers;
};

// Scale all gradients by max_norm/g when their global l2 norm g exceeds
// max_norm; returns the pre-clip norm.
double clip_gradients(std::vector<torch::Tensor> grads, double max_norm);

// True when the best value is at least `patience` entries behind the end;
// ties do not count as improvement.
bool early_stop_check(const std::vector<double>& val_mae, int patience);

TrainResult train_joint(const std::vector<data::CellRecord>& cells,
                        const data::SplitAssignment& split, const net::NetConfig& net_config,
                        const TrainConfig& train_config);

// batch 1 -> 2 -> 3 with Fisher+anchor capture at fisher_epoch of each phase
// and the EWC penalty anchored to the previous phase's capture.
TrainResult train_batch_staged(const std::vector<data::CellRecord>& cells,
                               const data::SplitAssignment& split, const net::NetConfig& net_config,
                               const TrainConfig& train_config);

// Current-SOH MAE of a model over a window list (eval mode).
double validation_mae(net::Model& model, const batch::BatchBuilder& builder);

} // namespace bwm::train
