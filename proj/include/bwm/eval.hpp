#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "bwm/batch.hpp"
#include "bwm/net.hpp"
#include "bwm/types.hpp"

namespace bwm::eval {

inline constexpr long kStage4SampleFloor = 30;
inline constexpr double kMapeGuard = 0.01; // SOH denominator floor

struct MetricGroup {
    long count = 0;
    double mae = 0, rmse = 0, mape = 0; // mape in percent
};

struct MetricsReport {
    std::string method;
    MetricGroup overall;
    std::map<int, MetricGroup> stages;     // reported stages (4 only above the floor)
    std::map<int, long> stage_counts;      // all four stages, always
    std::map<int, double> horizon_mae;     // h -> pooled trajectory MAE
    std::map<std::string, double> per_cell_mae;
    long mape_guard_hits = 0;

    bool operator==(const MetricsReport&) const = default;
};

struct PcaProjection {
    std::vector<std::array<double, 2>> coords;
    double ratio_pc1 = 0, ratio_pc2 = 0;
    std::vector<double> soh;
    std::vector<std::string> cell_ids;
};

// Raw per-window predictions; every metric below is a pure function of these.
struct PredRecord {
    std::string cell_id;
    int anchor = 0;
    double soh_true = 0, soh_pred = 0;
    std::vector<double> traj_true, traj_pred; // empty for the LSTM control
    std::vector<double> latent;               // empty for the LSTM control
};

std::vector<PredRecord> collect_predictions(net::Model& model,
                                            const batch::BatchBuilder& builder);

MetricsReport metrics_from_records(const std::vector<PredRecord>& records,
                                   const std::string& method,
                                   const std::vector<int>& horizons);

MetricsReport evaluate(net::Model& model, const std::vector<data::Window>& windows,
                       const std::vector<int>& horizons = {5, 10, 20, 50});

std::map<int, double> horizon_mae(const std::vector<PredRecord>& records,
                                  const std::vector<int>& horizons, int h_max);

// Exact top-2 eigendecomposition of the latent covariance. Component signs
// are canonicalized (largest-magnitude loading positive).
PcaProjection pca_project(const std::vector<std::vector<double>>& latents,
                          const std::vector<double>& soh,
                          const std::vector<std::string>& cell_ids);

PcaProjection latent_pca(net::Model& model, const std::vector<data::Window>& windows);

// metrics.txt (key = value lines), heatmap.tsv, pca.tsv (when available).
void emit_report(const MetricsReport& report, const PcaProjection* pca,
                 const std::filesystem::path& dir);

MetricsReport parse_metrics(const std::filesystem::path& file);

} // namespace bwm::eval
