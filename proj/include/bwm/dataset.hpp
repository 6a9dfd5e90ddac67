#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bwm/types.hpp"

namespace bwm::data {

inline constexpr int kDefaultTMax = 1000;

// SOH of one cycle relative to the cell's reference capacity (cycle 2).
double soh_of(const CycleRecord& cycle, const CellRecord& cell);

// Aging stage from Table-style SOH bands; the lower bound belongs to the
// healthier stage (0.95 -> Stage1).
AgingStage classify_stage(double soh);

const char* stage_name(AgingStage s);

// Pad with zeros or truncate so every channel has exactly t_max entries;
// `length` keeps the true count (capped at t_max when truncating).
CycleSeries canonicalize_series(const std::vector<float>& voltage,
                                const std::vector<float>& current,
                                const std::vector<float>& temperature,
                                int t_max);

// All anchors whose W-cycle input and H-cycle future fit inside the cell.
std::vector<Window> build_windows(const CellRecord& cell, int w, int horizon);

std::vector<Window> build_windows(const std::vector<const CellRecord*>& cells, int w, int horizon);

// Cell-level split stratified by minimum SOH reached (four quantile buckets,
// each allocated proportionally). Deterministic for a fixed seed.
SplitAssignment stratified_split(const std::vector<CellRecord>& cells,
                                 int n_train, int n_val, int n_test,
                                 uint64_t seed);

// Per-window sampling weights: 1 / (population of the window's aging stage),
// normalized to sum to 1.
std::vector<double> inverse_frequency_weights(const std::vector<Window>& windows);

struct LoadOptions {
    int t_max = kDefaultTMax;
};

struct LoadDiagnostic {
    std::string cell_id;
    std::string reason;
};

struct LoadResult {
    std::vector<CellRecord> cells;      // sorted by cell_id
    std::vector<LoadDiagnostic> rejected;
    std::vector<std::string> excluded;  // skipped via the exclusion list
};

// Ingest a dataset directory (manifest.tsv + per-cell series/summary files,
// optional exclude.txt). Cycle 1 is dropped; malformed cells are rejected
// with a diagnostic rather than aborting the load.
LoadResult load_dataset(const std::filesystem::path& root, const LoadOptions& opts = {});

// Write cells in the same on-disk format load_dataset ingests.
void export_fleet(const std::vector<CellRecord>& cells, const std::filesystem::path& root);

// Convenience lookups over a loaded fleet.
const CellRecord* find_cell(const std::vector<CellRecord>& cells, const std::string& cell_id);
std::vector<const CellRecord*> select_cells(const std::vector<CellRecord>& cells,
                                            const std::vector<std::string>& ids);

} // namespace bwm::data
