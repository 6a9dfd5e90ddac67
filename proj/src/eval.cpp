#include "bwm/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "bwm/dataset.hpp"

namespace bwm::eval {

std::vector<PredRecord> collect_predictions(net::Model& model, const batch::BatchBuilder& builder) {
    torch::NoGradGuard guard;
    model->eval();
    const auto& windows = builder.windows();
    const int n = static_cast<int>(windows.size());
    std::vector<PredRecord> records;
    records.reserve(static_cast<size_t>(n));
    constexpr int kEvalBatch = 256;
    const bool lstm = model->variant == net::Variant::Lstm;

    for (int start = 0; start < n; start += kEvalBatch) {
        const int count = std::min(kEvalBatch, n - start);
        std::vector<int> idx(static_cast<size_t>(count));
        std::iota(idx.begin(), idx.end(), start);
        auto b = builder.make(idx);
        net::ModelOutput out;
        if (lstm)
            out = model->forward_lstm_features(b.lstm_feats);
        else
            out = model->forward(b.input, b.action);
        auto now = out.soh_now.to(torch::kFloat64);
        torch::Tensor traj, latent, truth;
        if (!lstm) {
            traj = out.soh_future.to(torch::kFloat64);
            latent = out.latent.to(torch::kFloat64);
        }
        truth = b.soh_future.to(torch::kFloat64);
        for (int i = 0; i < count; ++i) {
            const auto& w = windows[static_cast<size_t>(start + i)];
            PredRecord r;
            r.cell_id = w.cell_id();
            r.anchor = w.anchor;
            r.soh_true = w.soh_now();
            r.soh_pred = now[i].item<double>();
            if (!lstm) {
                const auto h = traj.size(1);
                r.traj_pred.resize(static_cast<size_t>(h));
                r.traj_true.resize(static_cast<size_t>(h));
                for (int64_t k = 0; k < h; ++k) {
                    r.traj_pred[static_cast<size_t>(k)] = traj[i][k].item<double>();
                    r.traj_true[static_cast<size_t>(k)] = truth[i][k].item<double>();
                }
                const auto d = latent.size(1);
                r.latent.resize(static_cast<size_t>(d));
                for (int64_t k = 0; k < d; ++k)
                    r.latent[static_cast<size_t>(k)] = latent[i][k].item<double>();
            }
            records.push_back(std::move(r));
        }
    }
    return records;
}

namespace {

MetricGroup group_metrics(const std::vector<const PredRecord*>& recs, long* guard_hits) {
    MetricGroup g;
    g.count = static_cast<long>(recs.size());
    if (recs.empty()) return g;
    double abs_sum = 0, sq_sum = 0, pct_sum = 0;
    for (const auto* r : recs) {
        const double err = std::abs(r->soh_pred - r->soh_true);
        abs_sum += err;
        sq_sum += err * err;
        double denom = r->soh_true;
        if (denom < kMapeGuard) {
            denom = kMapeGuard;
            if (guard_hits) ++*guard_hits;
        }
        pct_sum += err / denom * 100.0;
    }
    const double n = static_cast<double>(recs.size());
    g.mae = abs_sum / n;
    g.rmse = std::sqrt(sq_sum / n);
    g.mape = pct_sum / n;
    return g;
}

} // namespace

std::map<int, double> horizon_mae(const std::vector<PredRecord>& records,
                                  const std::vector<int>& horizons, int h_max) {
    std::map<int, double> out;
    for (int h : horizons) {
        if (h < 1 || h > h_max)
            throw ConfigError("horizon " + std::to_string(h) + " exceeds the model horizon " +
                              std::to_string(h_max));
        double sum = 0;
        long n = 0;
        for (const auto& r : records) {
            if (static_cast<int>(r.traj_pred.size()) < h) continue;
            sum += std::abs(r.traj_pred[static_cast<size_t>(h - 1)] -
                            r.traj_true[static_cast<size_t>(h - 1)]);
            ++n;
        }
        out[h] = n > 0 ? sum / static_cast<double>(n) : 0.0;
    }
    return out;
}

MetricsReport metrics_from_records(const std::vector<PredRecord>& records,
                                   const std::string& method,
                                   const std::vector<int>& horizons) {
    MetricsReport rep;
    rep.method = method;
    std::vector<const PredRecord*> all;
    std::map<int, std::vector<const PredRecord*>> by_stage;
    std::map<std::string, std::vector<const PredRecord*>> by_cell;
    for (const auto& r : records) {
        all.push_back(&r);
        by_stage[static_cast<int>(data::classify_stage(r.soh_true))].push_back(&r);
        by_cell[r.cell_id].push_back(&r);
    }
    rep.overall = group_metrics(all, &rep.mape_guard_hits);
    for (int s = 1; s <= 4; ++s) {
        auto it = by_stage.find(s);
        const long count = it == by_stage.end() ? 0 : static_cast<long>(it->second.size());
        rep.stage_counts[s] = count;
        if (count == 0) continue;
        if (s == 4 && count < kStage4SampleFloor) continue; // insufficient samples
        rep.stages[s] = group_metrics(it->second, nullptr);
    }
    for (const auto& [cell, recs] : by_cell) rep.per_cell_mae[cell] = group_metrics(recs, nullptr).mae;
    if (!records.empty() && !records.front().traj_pred.empty())
        rep.horizon_mae = horizon_mae(records, horizons,
                                      static_cast<int>(records.front().traj_pred.size()));
    return rep;
}

MetricsReport evaluate(net::Model& model, const std::vector<data::Window>& windows,
                       const std::vector<int>& horizons) {
    if (windows.empty()) throw ConfigError("evaluate: no test windows");
    batch::BatchBuilder builder(windows, model->config, /*spm_gamma=*/0.75);
    auto records = collect_predictions(model, builder);
    return metrics_from_records(records, net::variant_name(model->variant), horizons);
}

// --------------------------------------------------------------------------
// PCA
// --------------------------------------------------------------------------

PcaProjection pca_project(const std::vector<std::vector<double>>& latents,
                          const std::vector<double>& soh,
                          const std::vector<std::string>& cell_ids) {
    const auto n = static_cast<int64_t>(latents.size());
    if (n < 3) throw ConfigError("latent_pca: need at least 3 samples");
    if (soh.size() != latents.size() || cell_ids.size() != latents.size())
        throw ConfigError("latent_pca: mismatched sample annotations");
    const auto d = static_cast<int64_t>(latents.front().size());

    auto x = torch::empty({n, d}, torch::kFloat64);
    for (int64_t i = 0; i < n; ++i) {
        if (static_cast<int64_t>(latents[static_cast<size_t>(i)].size()) != d)
            throw ConfigError("latent_pca: ragged latent dimensions");
        std::copy(latents[static_cast<size_t>(i)].begin(), latents[static_cast<size_t>(i)].end(),
                  x[i].data_ptr<double>());
    }
    auto centered = x - x.mean(0, /*keepdim=*/true);
    auto cov = centered.t().matmul(centered) / static_cast<double>(n - 1);
    auto [eigvals, eigvecs] = torch::linalg_eigh(cov); // ascending

    double total = 0.0;
    for (int64_t i = 0; i < d; ++i) total += std::max(0.0, eigvals[i].item<double>());

    PcaProjection out;
    out.soh = soh;
    out.cell_ids = cell_ids;
    out.coords.assign(static_cast<size_t>(n), {0.0, 0.0});

    for (int comp = 0; comp < 2 && comp < d; ++comp) {
        const int64_t col = d - 1 - comp;
        const double lambda = std::max(0.0, eigvals[col].item<double>());
        const double ratio = total > 0.0 ? lambda / total : 0.0;
        if (comp == 0) out.ratio_pc1 = ratio; else out.ratio_pc2 = ratio;
        if (lambda <= 0.0) continue;
        auto v = eigvecs.select(1, col).clone();
        // Canonical sign: the largest-magnitude loading is positive.
        int64_t arg = 0;
        double best = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            const double a = std::abs(v[i].item<double>());
            if (a > best) { best = a; arg = i; }
        }
        if (v[arg].item<double>() < 0.0) v = -v;
        auto proj = centered.matmul(v);
        for (int64_t i = 0; i < n; ++i)
            out.coords[static_cast<size_t>(i)][static_cast<size_t>(comp)] = proj[i].item<double>();
    }
    return out;
}

PcaProjection latent_pca(net::Model& model, const std::vector<data::Window>& windows) {
    if (model->variant == net::Variant::Lstm)
        throw UnsupportedOperation("the LSTM control has no latent state to project");
    batch::BatchBuilder builder(windows, model->config, /*spm_gamma=*/0.75);
    auto records = collect_predictions(model, builder);
    std::vector<std::vector<double>> latents;
    std::vector<double> soh;
    std::vector<std::string> ids;
    for (auto& r : records) {
        latents.push_back(std::move(r.latent));
        soh.push_back(r.soh_true);
        ids.push_back(r.cell_id);
    }
    return pca_project(latents, soh, ids);
}

// --------------------------------------------------------------------------
// report files
// --------------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    out << text;
    if (!out) throw IoError("short write to " + p.string());
}

} // namespace

void emit_report(const MetricsReport& report, const PcaProjection* pca,
                 const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);

    std::string m;
    m += "method = " + report.method + "\n";
    auto put_group = [&m](const std::string& prefix, const MetricGroup& g) {
        m += prefix + ".count = " + std::to_string(g.count) + "\n";
        m += prefix + ".mae = " + fmt_double(g.mae) + "\n";
        m += prefix + ".rmse = " + fmt_double(g.rmse) + "\n";
        m += prefix + ".mape = " + fmt_double(g.mape) + "\n";
    };
    put_group("overall", report.overall);
    for (const auto& [s, count] : report.stage_counts)
        m += "stage" + std::to_string(s) + ".count = " + std::to_string(count) + "\n";
    for (const auto& [s, g] : report.stages) {
        const std::string prefix = "stage" + std::to_string(s);
        m += prefix + ".mae = " + fmt_double(g.mae) + "\n";
        m += prefix + ".rmse = " + fmt_double(g.rmse) + "\n";
        m += prefix + ".mape = " + fmt_double(g.mape) + "\n";
    }
    for (const auto& [h, mae] : report.horizon_mae)
        m += "horizon.h" + std::to_string(h) + ".mae = " + fmt_double(mae) + "\n";
    for (const auto& [cell, mae] : report.per_cell_mae)
        m += "cell." + cell + ".mae = " + fmt_double(mae) + "\n";
    m += "guard.mape_clamped = " + std::to_string(report.mape_guard_hits) + "\n";
    write_text(dir / "metrics.txt", m);

    std::string heat = "cell_id\tmethod\tmae\n";
    for (const auto& [cell, mae] : report.per_cell_mae)
        heat += cell + "\t" + report.method + "\t" + fmt_double(mae) + "\n";
    write_text(dir / "heatmap.tsv", heat);

    if (pca) {
        std::string p = "pc1\tpc2\tsoh\tcell_id\n";
        for (size_t i = 0; i < pca->coords.size(); ++i)
            p += fmt_double(pca->coords[i][0]) + "\t" + fmt_double(pca->coords[i][1]) + "\t" +
                 fmt_double(pca->soh[i]) + "\t" + pca->cell_ids[i] + "\n";
        write_text(dir / "pca.tsv", p);
    }
}

MetricsReport parse_metrics(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    MetricsReport rep;
    std::string line;
    auto parse_double = [](const std::string& s) {
        double v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc()) throw IoError("bad numeric value: " + s);
        (void)p;
        return v;
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto sep = line.find(" = ");
        if (sep == std::string::npos) throw IoError("malformed metrics line: " + line);
        const std::string key = line.substr(0, sep);
        const std::string value = line.substr(sep + 3);
        if (key == "method") { rep.method = value; continue; }
        if (key == "guard.mape_clamped") { rep.mape_guard_hits = std::stol(value); continue; }
        auto apply_group = [&](MetricGroup& g, const std::string& field) {
            if (field == "count") g.count = std::stol(value);
            else if (field == "mae") g.mae = parse_double(value);
            else if (field == "rmse") g.rmse = parse_double(value);
            else if (field == "mape") g.mape = parse_double(value);
            else throw IoError("unknown metrics field: " + key);
        };
        if (key.rfind("overall.", 0) == 0) {
            apply_group(rep.overall, key.substr(8));
        } else if (key.rfind("stage", 0) == 0) {
            const int s = key[5] - '0';
            const std::string field = key.substr(key.find('.') + 1);
            if (field == "count") rep.stage_counts[s] = std::stol(value);
            else apply_group(rep.stages[s], field);
        } else if (key.rfind("horizon.h", 0) == 0) {
            const int h = std::stoi(key.substr(9, key.find('.', 9) - 9));
            rep.horizon_mae[h] = parse_double(value);
        } else if (key.rfind("cell.", 0) == 0) {
            const auto dot = key.rfind('.');
            rep.per_cell_mae[key.substr(5, dot - 5)] = parse_double(value);
        } else {
            throw IoError("unknown metrics key: " + key);
        }
    }
    // Stage metric groups parsed without their counts pick them up here.
    for (auto& [s, g] : rep.stages)
        if (g.count == 0 && rep.stage_counts.count(s)) g.count = rep.stage_counts[s];
    return rep;
}

} // namespace bwm::eval
