#include "bwm/batch.hpp"

#include <algorithm>
#include <cstring>

#include "bwm/dataset.hpp"
#include "bwm/loss.hpp"

namespace bwm::batch {

std::array<double, net::kLstmFeatures> summary_features(const data::CycleSeries& s, int t_max) {
    double v_sum = 0.0, v_min = s.voltage[0], v_max = s.voltage[0], i_sum = 0.0, t_sum = 0.0;
    for (int t = 0; t < s.length; ++t) {
        const double v = s.voltage[static_cast<size_t>(t)];
        v_sum += v;
        v_min = std::min(v_min, v);
        v_max = std::max(v_max, v);
        i_sum += s.current[static_cast<size_t>(t)];
        t_sum += s.temperature[static_cast<size_t>(t)];
    }
    const double n = static_cast<double>(s.length);
    return {v_sum / n, v_min, v_max, i_sum / n, t_sum / n,
            static_cast<double>(s.length) / static_cast<double>(t_max)};
}

BatchBuilder::BatchBuilder(const std::vector<data::Window>& windows, const net::NetConfig& cfg,
                           double spm_gamma)
    : windows_(windows), cfg_(cfg) {
    const auto n = static_cast<int64_t>(windows_.size());
    action_ = torch::empty({n}, torch::kFloat32);
    soh_now_ = torch::empty({n}, torch::kFloat32);
    s_ir_ = torch::empty({n}, torch::kFloat32);
    vterm_ = torch::empty({n}, torch::kFloat32);

    for (int64_t i = 0; i < n; ++i) {
        const auto& w = windows_[static_cast<size_t>(i)];
        if (!cells_.count(w.cell)) {
            const auto& cycles = w.cell->cycles;
            const auto nc = static_cast<int64_t>(cycles.size());
            const auto t = static_cast<int64_t>(cfg_.t_max);
            if (cycles[0].series.padded_size() != cfg_.t_max)
                throw ConfigError("batch: series canonicalized to " +
                                  std::to_string(cycles[0].series.padded_size()) +
                                  " timesteps but the model expects t_max = " +
                                  std::to_string(cfg_.t_max));
            CellTensors ct;
            ct.cycles = torch::empty({nc, 3, t}, torch::kFloat32);
            ct.feats = torch::empty({nc, net::kLstmFeatures}, torch::kFloat32);
            ct.soh = torch::empty({nc}, torch::kFloat32);
            float* dst = ct.cycles.data_ptr<float>();
            auto* fdst = ct.feats.data_ptr<float>();
            auto* sdst = ct.soh.data_ptr<float>();
            for (int64_t c = 0; c < nc; ++c) {
                const auto& s = cycles[static_cast<size_t>(c)].series;
                std::memcpy(dst, s.voltage.data(), sizeof(float) * static_cast<size_t>(t));
                std::memcpy(dst + t, s.current.data(), sizeof(float) * static_cast<size_t>(t));
                std::memcpy(dst + 2 * t, s.temperature.data(), sizeof(float) * static_cast<size_t>(t));
                dst += 3 * t;
                const auto f = summary_features(s, static_cast<int>(cfg_.t_max));
                for (int k = 0; k < net::kLstmFeatures; ++k)
                    fdst[c * net::kLstmFeatures + k] = static_cast<float>(f[static_cast<size_t>(k)]);
                sdst[c] = static_cast<float>(data::soh_of(cycles[static_cast<size_t>(c)], *w.cell));
            }
            cells_.emplace(w.cell, std::move(ct));
        }
        action_[i] = static_cast<float>(w.action() / cfg_.action_scale);
        soh_now_[i] = static_cast<float>(w.soh_now());
        s_ir_[i] = static_cast<float>(
            loss::soh_from_resistance(w.resistance_last(), w.resistance_initial(), spm_gamma));
        vterm_[i] = static_cast<float>(loss::voltage_consistency_loss(w));
    }
}

WindowBatch BatchBuilder::make(const std::vector<int>& indices) const {
    const auto b = static_cast<int64_t>(indices.size());
    WindowBatch out;
    out.indices = indices;
    out.input = torch::empty({b, cfg_.w, 3, cfg_.t_max}, torch::kFloat32);
    out.lstm_feats = torch::empty({b, cfg_.w, net::kLstmFeatures}, torch::kFloat32);
    out.soh_future = torch::empty({b, cfg_.horizon}, torch::kFloat32);
    auto idx = torch::empty({b}, torch::kLong);
    auto* iptr = idx.data_ptr<int64_t>();

    for (int64_t i = 0; i < b; ++i) {
        const int wi = indices[static_cast<size_t>(i)];
        if (wi < 0 || static_cast<size_t>(wi) >= windows_.size())
            throw ConfigError("batch: window index out of range");
        const auto& w = windows_[static_cast<size_t>(wi)];
        const auto& ct = cells_.at(w.cell);
        const int64_t first = w.anchor - w.w; // 0-based row of the first input cycle
        out.input[i] = ct.cycles.narrow(0, first, w.w);
        out.lstm_feats[i] = ct.feats.narrow(0, first, w.w);
        out.soh_future[i] = ct.soh.narrow(0, w.anchor, w.horizon);
        iptr[i] = wi;
    }
    out.action = action_.index_select(0, idx).unsqueeze(1);
    out.soh_now = soh_now_.index_select(0, idx);
    out.s_ir = s_ir_.index_select(0, idx);
    out.vterm = vterm_.index_select(0, idx);
    return out;
}

} // namespace bwm::batch
