#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "bwm/net.hpp"
#include "bwm/types.hpp"

namespace bwm::loss {

struct LossWeights {
    double lambda_phys = 0.1;
    double lambda_ewc = 0.4;
    double epsilon_mono = 0.005; // SOH units
    double gamma = 0.75;         // SPM exponent

    void validate() const {
        if (lambda_phys < 0 || lambda_ewc < 0 || epsilon_mono < 0 || gamma <= 0)
            throw ConfigError("loss weights must be nonnegative (gamma positive)");
    }
};

// MSE on current SOH plus trajectory MSE reduced by mean over the horizon.
torch::Tensor data_loss(const torch::Tensor& soh_now_hat, const torch::Tensor& soh_now,
                        const torch::Tensor& soh_future_hat, const torch::Tensor& soh_future);

// Hinge on consecutive increases beyond the noise tolerance, squared, mean
// over the H-1 pairs (and over the batch when batched). H < 2 -> 0.
torch::Tensor monotonicity_loss(const torch::Tensor& traj_hat, double epsilon);

// Eq.-style SPM inversion: (r0 / r_last)^(1/gamma).
double soh_from_resistance(double r_last, double r0, double gamma);

// (soh_now_hat - s_ir)^2, batch mean; s_ir precomputed supervision-side.
torch::Tensor resistance_consistency_loss(const torch::Tensor& soh_now_hat,
                                          const torch::Tensor& s_ir);

inline constexpr double kVoltageFloor = 0.05; // volts, guards the relative check

// Squared relative mismatch between the observed ohmic drop of the last
// observed cycle and the drop implied by I_mean * R_last. Constant with
// respect to predictions; measured quantities only.
double voltage_consistency_term(double dv_obs, double i_mean, double r_last);
torch::Tensor voltage_consistency_term(const torch::Tensor& dv_obs, const torch::Tensor& i_mean,
                                       const torch::Tensor& r_last);
double voltage_consistency_loss(const data::Window& window);

// Observed drop: voltage at discharge start minus cycle minimum voltage.
double observed_ohmic_drop(const data::CycleSeries& series);

// Unweighted sum of the three physics terms.
torch::Tensor physics_loss(const torch::Tensor& traj_hat, const torch::Tensor& soh_now_hat,
                           const torch::Tensor& s_ir, const torch::Tensor& voltage_term,
                           double epsilon);

struct FisherDiagonal {
    std::map<std::string, torch::Tensor> fisher;  // F_i >= 0, per parameter path
    std::map<std::string, torch::Tensor> anchors; // theta* snapshot
    bool empty() const { return fisher.empty(); }
};

// F_i = (1/N) sum_n (dL^(n)/dtheta_i)^2 over the given batch losses, each a
// closure evaluating the data loss on one batch with the current parameters.
// Anchors snapshot the parameters as they are now.
FisherDiagonal estimate_fisher(const std::map<std::string, torch::Tensor>& params,
                               const std::vector<std::function<torch::Tensor()>>& batch_losses);

// sum_i F_i (theta_i - theta_i*)^2, differentiable in the current parameters.
torch::Tensor ewc_penalty(const std::map<std::string, torch::Tensor>& params,
                          const FisherDiagonal& fisher);

struct TotalLossFlags {
    bool physics = false;
    bool ewc = false;
};

inline TotalLossFlags flags_for(net::Variant v) {
    return TotalLossFlags{net::variant_uses_physics(v), net::variant_uses_ewc(v)};
}

// L_data + lambda_phys * L_phys [if enabled] + lambda_ewc * L_ewc [if
// enabled]. Disabled terms must be passed undefined so no graph is built.
torch::Tensor total_loss(const torch::Tensor& data, const torch::Tensor& phys,
                         const torch::Tensor& ewc, const LossWeights& weights,
                         const TotalLossFlags& flags);

void save_fisher(const std::filesystem::path& path, const net::NetConfig& cfg, net::Variant variant,
                 const FisherDiagonal& fisher);
FisherDiagonal load_fisher(const std::filesystem::path& path);

} // namespace bwm::loss
