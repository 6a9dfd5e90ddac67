#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bwm/eval.hpp"
#include "bwm/net.hpp"
#include "bwm/synth.hpp"
#include "bwm/train.hpp"
#include "bwm/types.hpp"

namespace bwm::run {

// Writes a synthetic fleet in the ingestion format. Deterministic: two calls
// with the same parameters produce byte-identical directories.
void run_synth(const synth::FleetParams& params, const std::filesystem::path& out_dir);

struct TrainOptions {
    std::filesystem::path data_dir;
    std::filesystem::path out_dir;
    net::NetConfig net;
    train::TrainConfig train;
    // Split sizes; <= 0 means "10% of cells, at least 1".
    int val_cells = -1;
    int test_cells = -1;
};

struct TrainArtifacts {
    std::filesystem::path checkpoint;
    std::filesystem::path metrics;
    train::TrainHistory history;
};

TrainArtifacts run_train(const TrainOptions& opts);

struct EvalOptions {
    std::filesystem::path checkpoint;
    std::filesystem::path data_dir;
    std::filesystem::path out_dir;
    std::vector<int> horizons{5, 10, 20, 50};
    // Defaults to split.json next to the checkpoint.
    std::optional<std::filesystem::path> split_file;
};

eval::MetricsReport run_eval(const EvalOptions& opts);

struct RolloutRow {
    int h = 0;
    double predicted = 0;
    double truth = 0;
};

std::vector<RolloutRow> run_rollout(const std::filesystem::path& checkpoint,
                                    const std::filesystem::path& data_dir,
                                    const std::string& cell_id, int anchor);

std::vector<RolloutRow> run_rollout_with_model(net::Model& model,
                                               const std::filesystem::path& data_dir,
                                               const std::string& cell_id, int anchor);

struct SweepRow {
    int horizon = 0;
    double overall_mae = 0;
};

std::vector<SweepRow> run_sweep_h(const TrainOptions& base, const std::vector<int>& h_set);

void run_pca(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
             const std::filesystem::path& out_file,
             const std::optional<std::filesystem::path>& split_file = std::nullopt);

// 64-bit FNV-1a over the directory's file names and bytes, hex-encoded.
std::string content_hash(const std::filesystem::path& dir);

void write_history(const train::TrainHistory& history, const std::filesystem::path& file);

// Split persistence so eval/pca recover a checkpoint's own test cells.
void write_split(const data::SplitAssignment& split, const std::filesystem::path& file);
data::SplitAssignment read_split(const std::filesystem::path& file);

} // namespace bwm::run
