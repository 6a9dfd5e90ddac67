#pragma once

#include <map>
#include <vector>

#include <torch/torch.h>

#include "bwm/net.hpp"
#include "bwm/types.hpp"

namespace bwm::batch {

struct WindowBatch {
    torch::Tensor input;      // [B, W, 3, T]
    torch::Tensor action;     // [B, 1], I_mean / action_scale
    torch::Tensor soh_now;    // [B]
    torch::Tensor soh_future; // [B, H]
    torch::Tensor s_ir;       // [B], SPM-implied SOH from measured resistances
    torch::Tensor vterm;      // [B], voltage-consistency constants
    torch::Tensor lstm_feats; // [B, W, F] summary features
    std::vector<int> indices; // positions into the source window list
};

// Tensorizes a window list once (per-cell series/feature tensors plus
// per-window supervision) and assembles minibatches on demand.
class BatchBuilder {
public:
    BatchBuilder(const std::vector<data::Window>& windows, const net::NetConfig& cfg,
                 double spm_gamma);

    WindowBatch make(const std::vector<int>& indices) const;
    size_t size() const { return windows_.size(); }
    const std::vector<data::Window>& windows() const { return windows_; }

private:
    struct CellTensors {
        torch::Tensor cycles; // [N, 3, T]
        torch::Tensor feats;  // [N, F]
        torch::Tensor soh;    // [N]
    };

    std::vector<data::Window> windows_;
    net::NetConfig cfg_;
    std::map<const data::CellRecord*, CellTensors> cells_;
    torch::Tensor action_, soh_now_, s_ir_, vterm_; // [n_windows]
};

// Per-cycle summary features for the recurrent control: mean/min/max voltage,
// mean current, mean temperature, duration fraction.
std::array<double, net::kLstmFeatures> summary_features(const data::CycleSeries& s, int t_max);

} // namespace bwm::batch
