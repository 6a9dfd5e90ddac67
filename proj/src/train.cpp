#include "bwm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>

#include "bwm/dataset.hpp"

namespace bwm::train {

double clip_gradients(std::vector<torch::Tensor> grads, double max_norm) {
    if (max_norm <= 0) throw ConfigError("clip_gradients: max_norm must be positive");
    double sq = 0.0;
    for (const auto& g : grads)
        if (g.defined()) sq += g.square().sum().item<double>();
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        torch::NoGradGuard guard;
        for (auto& g : grads)
            if (g.defined()) g.mul_(scale);
    }
    return norm;
}

bool early_stop_check(const std::vector<double>& val_mae, int patience) {
    if (val_mae.empty()) throw ConfigError("early_stop_check: empty history");
    size_t best = 0;
    for (size_t i = 1; i < val_mae.size(); ++i)
        if (val_mae[i] < val_mae[best]) best = i; // ties keep the earlier epoch
    return val_mae.size() - 1 - best >= static_cast<size_t>(patience);
}

namespace {

// Inverse-CDF draws over fixed cumulative weights; identical across standard
// libraries for a given seed.
class WeightedSampler {
public:
    WeightedSampler(const std::vector<double>& weights, uint64_t seed) : rng_(seed) {
        cum_.resize(weights.size());
        double acc = 0.0;
        for (size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            cum_[i] = acc;
        }
        total_ = acc;
    }
    int draw() {
        const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53 * total_;
        const auto it = std::upper_bound(cum_.begin(), cum_.end(), u);
        return static_cast<int>(std::min<size_t>(static_cast<size_t>(it - cum_.begin()),
                                                 cum_.size() - 1));
    }
    std::vector<int> draw_batch(int n) {
        std::vector<int> out(static_cast<size_t>(n));
        for (auto& x : out) x = draw();
        return out;
    }

private:
    std::vector<double> cum_;
    double total_ = 0.0;
    std::mt19937_64 rng_;
};

using Snapshot = std::map<std::string, torch::Tensor>;

Snapshot snapshot_state(const net::Model& model) {
    Snapshot s;
    for (const auto& p : model->named_parameters()) s.emplace(p.key(), p.value().detach().clone());
    for (const auto& b : model->named_buffers()) s.emplace(b.key(), b.value().detach().clone());
    return s;
}

void restore_state(net::Model& model, const Snapshot& s) {
    torch::NoGradGuard guard;
    for (const auto& p : model->named_parameters()) p.value().copy_(s.at(p.key()));
    for (const auto& b : model->named_buffers()) b.value().copy_(s.at(b.key()));
}

struct BatchLoss {
    torch::Tensor total;
    double data = 0, mono = 0, ir = 0, volt = 0, phys = 0, ewc = 0;
};

BatchLoss compute_losses(net::Model& model, const batch::WindowBatch& b, const TrainConfig& cfg,
                         const loss::FisherDiagonal* fisher) {
    BatchLoss out;
    torch::Tensor l_data, l_phys, l_ewc;
    if (cfg.variant == net::Variant::Lstm) {
        auto pred = model->forward_lstm_features(b.lstm_feats);
        auto empty = torch::empty({0});
        l_data = loss::data_loss(pred.soh_now, b.soh_now, empty, empty);
    } else {
        auto pred = model->forward(b.input, b.action);
        l_data = loss::data_loss(pred.soh_now, b.soh_now, pred.soh_future, b.soh_future);
        if (net::variant_uses_physics(cfg.variant)) {
            auto l_mono = loss::monotonicity_loss(pred.soh_future, cfg.weights.epsilon_mono);
            auto l_ir = loss::resistance_consistency_loss(pred.soh_now, b.s_ir);
            auto l_volt = b.vterm.mean();
            l_phys = l_mono + l_ir + l_volt;
            out.mono = l_mono.item<double>();
            out.ir = l_ir.item<double>();
            out.volt = l_volt.item<double>();
            out.phys = out.mono + out.ir + out.volt;
        }
    }
    if (net::variant_uses_ewc(cfg.variant) && fisher && !fisher->empty()) {
        l_ewc = loss::ewc_penalty(net::named_parameter_map(model), *fisher);
        out.ewc = l_ewc.item<double>();
    }
    loss::TotalLossFlags flags{l_phys.defined(), l_ewc.defined()};
    out.total = loss::total_loss(l_data, l_phys, l_ewc, cfg.weights, flags);
    out.data = l_data.item<double>();
    return out;
}

} // namespace

double validation_mae(net::Model& model, const batch::BatchBuilder& builder) {
    torch::NoGradGuard guard;
    model->eval();
    const int n = static_cast<int>(builder.size());
    constexpr int kEvalBatch = 256;
    double abs_sum = 0.0;
    for (int start = 0; start < n; start += kEvalBatch) {
        const int count = std::min(kEvalBatch, n - start);
        std::vector<int> idx(static_cast<size_t>(count));
        std::iota(idx.begin(), idx.end(), start);
        auto b = builder.make(idx);
        torch::Tensor pred;
        if (model->variant == net::Variant::Lstm)
            pred = model->forward_lstm_features(b.lstm_feats).soh_now;
        else
            pred = model->forward(b.input, b.action).soh_now;
        abs_sum += (pred - b.soh_now).abs().sum().item<double>();
    }
    return abs_sum / std::max(1, n);
}

namespace {

struct PhasePlan {
    int phase = 0;    // 0 = joint
    int batch_id = 0; // 0 = all batches
    std::vector<data::Window> windows;
};

TrainResult train_phases(const std::vector<data::CellRecord>& cells,
                         const data::SplitAssignment& split, const net::NetConfig& net_cfg,
                         const TrainConfig& cfg, const std::vector<PhasePlan>& plans) {
    torch::manual_seed(cfg.seed);

    const auto val_cells = data::select_cells(cells, split.val);
    const auto val_windows = data::build_windows(val_cells, static_cast<int>(net_cfg.w),
                                                 static_cast<int>(net_cfg.horizon));
    if (val_windows.empty())
        throw ConfigError("train: validation split yields no windows");
    batch::BatchBuilder val_builder(val_windows, net_cfg, cfg.weights.gamma);

    TrainResult result;
    result.model = net::Model(net_cfg, cfg.variant);
    net::init_params(result.model, cfg.seed);

    const loss::FisherDiagonal* active_fisher = nullptr;

    for (const auto& plan : plans) {
        PhaseSummary summary;
        summary.phase = plan.phase;
        summary.batch_id = plan.batch_id;
        if (plan.windows.empty()) {
            std::cerr << "warning: phase " << plan.phase << " (batch " << plan.batch_id
                      << ") has no training windows; skipped\n";
            summary.skipped = true;
            result.history.phases.push_back(summary);
            continue;
        }

        batch::BatchBuilder builder(plan.windows, net_cfg, cfg.weights.gamma);
        const auto weights = data::inverse_frequency_weights(plan.windows);
        const uint64_t phase_salt =
            cfg.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(plan.phase + 1));
        WeightedSampler sampler(weights, phase_salt);

        std::vector<torch::Tensor> params;
        for (auto& p : result.model->parameters()) params.push_back(p);
        torch::optim::AdamW optimizer(
            params, torch::optim::AdamWOptions(cfg.learning_rate).weight_decay(cfg.weight_decay));

        const int n_batches =
            static_cast<int>((plan.windows.size() + static_cast<size_t>(cfg.batch_size) - 1) /
                             static_cast<size_t>(cfg.batch_size));

        std::vector<double> val_curve;
        double best_val = std::numeric_limits<double>::infinity();
        Snapshot best_state = snapshot_state(result.model);
        int best_epoch = 0;
        loss::FisherDiagonal captured;
        int captured_epoch = 0;
        const bool staged = plan.phase > 0;

        auto capture_fisher = [&]() {
            std::mt19937_64 rng(phase_salt ^ 0xf15be5ULL);
            std::vector<int> order(plan.windows.size());
            std::iota(order.begin(), order.end(), 0);
            std::shuffle(order.begin(), order.end(), rng);
            const int budget = std::min(cfg.fisher_batches, n_batches);
            std::vector<std::function<torch::Tensor()>> batch_losses;
            for (int k = 0; k < budget; ++k) {
                const size_t lo = static_cast<size_t>(k) * static_cast<size_t>(cfg.batch_size);
                const size_t hi = std::min(order.size(), lo + static_cast<size_t>(cfg.batch_size));
                std::vector<int> idx(order.begin() + static_cast<long>(lo),
                                     order.begin() + static_cast<long>(hi));
                batch_losses.emplace_back([&builder, &cfg, idx, model = result.model]() mutable {
                    auto b = builder.make(idx);
                    if (cfg.variant == net::Variant::Lstm) {
                        auto empty = torch::empty({0});
                        return loss::data_loss(model->forward_lstm_features(b.lstm_feats).soh_now,
                                               b.soh_now, empty, empty);
                    }
                    auto pred = model->forward(b.input, b.action);
                    return loss::data_loss(pred.soh_now, b.soh_now, pred.soh_future, b.soh_future);
                });
            }
            result.model->train();
            return loss::estimate_fisher(net::named_parameter_map(result.model), batch_losses);
        };

        for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
            const auto t0 = std::chrono::steady_clock::now();
            result.model->train();
            EpochStats stats;
            stats.phase = plan.phase;
            stats.epoch = epoch;
            for (int bi = 0; bi < n_batches; ++bi) {
                auto indices = sampler.draw_batch(cfg.batch_size);
                if (cfg.batch_observer) {
                    std::vector<const data::Window*> sampled;
                    for (int wi : indices)
                        sampled.push_back(&builder.windows()[static_cast<size_t>(wi)]);
                    cfg.batch_observer(plan.phase, epoch, sampled);
                }
                auto wb = builder.make(indices);
                auto bl = compute_losses(result.model, wb, cfg, active_fisher);
                optimizer.zero_grad();
                bl.total.backward();
                std::vector<torch::Tensor> grads;
                for (auto& p : params)
                    if (p.grad().defined()) grads.push_back(p.grad());
                const double pre_norm = clip_gradients(grads, cfg.grad_clip_norm);
                double post_norm = pre_norm;
                if (pre_norm > cfg.grad_clip_norm) {
                    double sq = 0.0;
                    for (const auto& g : grads) sq += g.square().sum().item<double>();
                    post_norm = std::sqrt(sq);
                }
                stats.grad_norm_max = std::max(stats.grad_norm_max, post_norm);
                optimizer.step();
                stats.l_data += bl.data;
                stats.l_mono += bl.mono;
                stats.l_ir += bl.ir;
                stats.l_volt += bl.volt;
                stats.l_phys += bl.phys;
                stats.l_ewc += bl.ewc;
                stats.l_total += bl.total.item<double>();
            }
            stats.l_data /= n_batches;
            stats.l_mono /= n_batches;
            stats.l_ir /= n_batches;
            stats.l_volt /= n_batches;
            stats.l_phys /= n_batches;
            stats.l_ewc /= n_batches;
            stats.l_total /= n_batches;

            stats.val_mae = validation_mae(result.model, val_builder);
            val_curve.push_back(stats.val_mae);
            if (stats.val_mae < best_val) {
                best_val = stats.val_mae;
                best_epoch = epoch;
                best_state = snapshot_state(result.model);
            }
            if (staged && epoch == cfg.fisher_epoch) {
                captured = capture_fisher();
                captured_epoch = epoch;
            }
            stats.seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            result.history.epochs.push_back(stats);
            summary.epochs_run = epoch;
            if (early_stop_check(val_curve, cfg.patience)) break;
        }

        restore_state(result.model, best_state);
        summary.best_epoch = best_epoch;
        summary.best_val_mae = best_val;

        if (staged && captured_epoch == 0) {
            // fisher_epoch beyond the early stop: capture post-convergence.
            captured = capture_fisher();
            captured_epoch = summary.epochs_run;
        }
        if (staged) {
            summary.fisher_captured_epoch = captured_epoch;
            result.fishers.push_back(std::move(captured));
            active_fisher = &result.fishers.back();
        }
        result.history.phases.push_back(summary);
    }
    result.model->eval();
    return result;
}

} // namespace

TrainResult train_joint(const std::vector<data::CellRecord>& cells,
                        const data::SplitAssignment& split, const net::NetConfig& net_config,
                        const TrainConfig& train_config) {
    train_config.validate();
    net_config.validate();
    const auto train_cells = data::select_cells(cells, split.train);
    PhasePlan plan;
    plan.phase = 0;
    plan.windows = data::build_windows(train_cells, static_cast<int>(net_config.w),
                                       static_cast<int>(net_config.horizon));
    if (plan.windows.empty()) throw ConfigError("train: training split yields no windows");
    return train_phases(cells, split, net_config, train_config, {plan});
}

TrainResult train_batch_staged(const std::vector<data::CellRecord>& cells,
                               const data::SplitAssignment& split, const net::NetConfig& net_config,
                               const TrainConfig& train_config) {
    train_config.validate();
    net_config.validate();
    const auto train_cells = data::select_cells(cells, split.train);
    std::vector<PhasePlan> plans;
    bool any = false;
    for (int batch_id = 1; batch_id <= 3; ++batch_id) {
        PhasePlan plan;
        plan.phase = batch_id;
        plan.batch_id = batch_id;
        std::vector<const data::CellRecord*> phase_cells;
        for (const auto* c : train_cells)
            if (c->batch_id == batch_id) phase_cells.push_back(c);
        plan.windows = data::build_windows(phase_cells, static_cast<int>(net_config.w),
                                           static_cast<int>(net_config.horizon));
        any = any || !plan.windows.empty();
        plans.push_back(std::move(plan));
    }
    if (!any) throw ConfigError("train: no batch phase has training windows");
    return train_phases(cells, split, net_config, train_config, plans);
}

} // namespace bwm::train
