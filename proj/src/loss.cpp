#include "bwm/loss.hpp"

#include <cmath>

namespace bwm::loss {

torch::Tensor data_loss(const torch::Tensor& soh_now_hat, const torch::Tensor& soh_now,
                        const torch::Tensor& soh_future_hat, const torch::Tensor& soh_future) {
    if (soh_future_hat.sizes() != soh_future.sizes())
        throw ConfigError("data_loss: future vectors have mismatched shapes " +
                          c10::str(soh_future_hat.sizes()) + " vs " + c10::str(soh_future.sizes()));
    auto now_term = (soh_now_hat - soh_now).square().mean();
    if (soh_future.numel() == 0) return now_term;
    return now_term + (soh_future_hat - soh_future).square().mean();
}

torch::Tensor monotonicity_loss(const torch::Tensor& traj_hat, double epsilon) {
    const auto h = traj_hat.size(-1);
    if (h < 2) return torch::zeros({}, traj_hat.options());
    auto next = traj_hat.narrow(-1, 1, h - 1);
    auto prev = traj_hat.narrow(-1, 0, h - 1);
    return (next - prev + epsilon).clamp_min(0.0).square().mean();
}

double soh_from_resistance(double r_last, double r0, double gamma) {
    if (!(r_last > 0.0) || !(r0 > 0.0))
        throw ConfigError("soh_from_resistance: resistances must be positive");
    if (!(gamma > 0.0)) throw ConfigError("soh_from_resistance: gamma must be positive");
    return std::pow(r0 / r_last, 1.0 / gamma);
}

torch::Tensor resistance_consistency_loss(const torch::Tensor& soh_now_hat,
                                          const torch::Tensor& s_ir) {
    return (soh_now_hat - s_ir.to(soh_now_hat.dtype())).square().mean();
}

double voltage_consistency_term(double dv_obs, double i_mean, double r_last) {
    const double rel = (dv_obs - i_mean * r_last) / std::max(dv_obs, kVoltageFloor);
    return rel * rel;
}

torch::Tensor voltage_consistency_term(const torch::Tensor& dv_obs, const torch::Tensor& i_mean,
                                       const torch::Tensor& r_last) {
    auto rel = (dv_obs - i_mean * r_last) / dv_obs.clamp_min(kVoltageFloor);
    return rel.square();
}

double observed_ohmic_drop(const data::CycleSeries& series) {
    if (series.length < 1) throw ConfigError("observed_ohmic_drop: empty series");
    int start = 0;
    for (int t = 0; t < series.length; ++t)
        if (series.current[static_cast<size_t>(t)] < 0.0f) { start = t; break; }
    const double v_start = series.voltage[static_cast<size_t>(start)];
    double v_min = v_start;
    for (int t = 0; t < series.length; ++t)
        v_min = std::min(v_min, static_cast<double>(series.voltage[static_cast<size_t>(t)]));
    return v_start - v_min;
}

double voltage_consistency_loss(const data::Window& window) {
    const auto& cyc = window.anchor_cycle();
    return voltage_consistency_term(observed_ohmic_drop(cyc.series), cyc.mean_charge_current,
                                    cyc.internal_resistance);
}

torch::Tensor physics_loss(const torch::Tensor& traj_hat, const torch::Tensor& soh_now_hat,
                           const torch::Tensor& s_ir, const torch::Tensor& voltage_term,
                           double epsilon) {
    return monotonicity_loss(traj_hat, epsilon) + resistance_consistency_loss(soh_now_hat, s_ir) +
           voltage_term.to(soh_now_hat.dtype()).mean();
}

FisherDiagonal estimate_fisher(const std::map<std::string, torch::Tensor>& params,
                               const std::vector<std::function<torch::Tensor()>>& batch_losses) {
    if (batch_losses.empty())
        throw ConfigError("estimate_fisher: need at least one batch");

    std::vector<std::string> names;
    std::vector<torch::Tensor> tensors;
    for (const auto& [name, t] : params) {
        names.push_back(name);
        tensors.push_back(t);
    }

    FisherDiagonal out;
    for (size_t i = 0; i < names.size(); ++i)
        out.fisher[names[i]] = torch::zeros_like(tensors[i]);

    for (const auto& batch_loss : batch_losses) {
        auto loss = batch_loss();
        auto grads = torch::autograd::grad({loss}, tensors, /*grad_outputs=*/{},
                                           /*retain_graph=*/false, /*create_graph=*/false,
                                           /*allow_unused=*/true);
        torch::NoGradGuard guard;
        for (size_t i = 0; i < names.size(); ++i)
            if (grads[i].defined()) out.fisher[names[i]] += grads[i].square();
    }
    {
        torch::NoGradGuard guard;
        const double n = static_cast<double>(batch_losses.size());
        for (auto& [name, f] : out.fisher) f /= n;
        for (size_t i = 0; i < names.size(); ++i)
            out.anchors[names[i]] = tensors[i].detach().clone();
    }
    return out;
}

torch::Tensor ewc_penalty(const std::map<std::string, torch::Tensor>& params,
                          const FisherDiagonal& fisher) {
    torch::Tensor total;
    for (const auto& [name, theta] : params) {
        auto fit = fisher.fisher.find(name);
        auto ait = fisher.anchors.find(name);
        if (fit == fisher.fisher.end() || ait == fisher.anchors.end())
            throw ConfigError("ewc_penalty: no Fisher entry for parameter '" + name + "'");
        auto term = (fit->second.to(theta.dtype()) *
                     (theta - ait->second.to(theta.dtype())).square()).sum();
        total = total.defined() ? total + term : term;
    }
    if (static_cast<size_t>(params.size()) != fisher.fisher.size())
        throw ConfigError("ewc_penalty: Fisher paths do not match the parameter census");
    if (!total.defined()) throw ConfigError("ewc_penalty: empty parameter set");
    return total;
}

torch::Tensor total_loss(const torch::Tensor& data, const torch::Tensor& phys,
                         const torch::Tensor& ewc, const LossWeights& weights,
                         const TotalLossFlags& flags) {
    weights.validate();
    auto total = data;
    if (flags.physics) {
        if (!phys.defined()) throw ConfigError("total_loss: physics enabled but term missing");
        total = total + weights.lambda_phys * phys;
    }
    if (flags.ewc) {
        if (!ewc.defined()) throw ConfigError("total_loss: EWC enabled but term missing");
        total = total + weights.lambda_ewc * ewc;
    }
    return total;
}

void save_fisher(const std::filesystem::path& path, const net::NetConfig& cfg, net::Variant variant,
                 const FisherDiagonal& fisher) {
    std::map<std::string, torch::Tensor> merged;
    for (const auto& [name, t] : fisher.fisher) merged.emplace("fisher/" + name, t);
    for (const auto& [name, t] : fisher.anchors) merged.emplace("anchor/" + name, t);
    net::save_named_tensors(path, "fisher", cfg, variant, merged);
}

FisherDiagonal load_fisher(const std::filesystem::path& path) {
    std::string kind;
    auto ck = net::load_named_tensors(path, &kind);
    if (kind != "fisher") throw IoError(path.string() + " holds '" + kind + "', not Fisher tensors");
    FisherDiagonal out;
    for (const auto& [name, t] : ck.tensors) {
        if (name.rfind("fisher/", 0) == 0) out.fisher.emplace(name.substr(7), t);
        else if (name.rfind("anchor/", 0) == 0) out.anchors.emplace(name.substr(7), t);
    }
    return out;
}

} // namespace bwm::loss
