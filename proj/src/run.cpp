#include "bwm/run.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "bwm/dataset.hpp"

namespace bwm::run {

using json = nlohmann::ordered_json;

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

std::string iso_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return ss.str();
}

void require_fresh_run_dir(const std::filesystem::path& dir) {
    if (std::filesystem::exists(dir / "manifest.json"))
        throw ConfigError("run directory " + dir.string() +
                          " already holds a manifest; run directories are immutable, pick a new path");
    std::filesystem::create_directories(dir);
}

json net_config_json(const net::NetConfig& c) {
    return json{{"d", c.d},
                {"w", c.w},
                {"horizon", c.horizon},
                {"patch_len", c.patch_len},
                {"patch_stride", c.patch_stride},
                {"layers", c.layers},
                {"heads", c.heads},
                {"ff_width", c.ff_width},
                {"t_max", c.t_max},
                {"conv_stride", c.conv_stride},
                {"transition_hidden", c.transition_hidden},
                {"head_hidden", c.head_hidden},
                {"lstm_hidden", c.lstm_hidden},
                {"lstm_layers", c.lstm_layers},
                {"action_scale", c.action_scale}};
}

json train_config_json(const train::TrainConfig& c) {
    return json{{"learning_rate", c.learning_rate},
                {"weight_decay", c.weight_decay},
                {"batch_size", c.batch_size},
                {"max_epochs", c.max_epochs},
                {"patience", c.patience},
                {"grad_clip_norm", c.grad_clip_norm},
                {"fisher_epoch", c.fisher_epoch},
                {"fisher_batches", c.fisher_batches},
                {"seed", c.seed},
                {"variant", net::variant_name(c.variant)},
                {"lambda_phys", c.weights.lambda_phys},
                {"lambda_ewc", c.weights.lambda_ewc},
                {"epsilon_mono", c.weights.epsilon_mono},
                {"gamma", c.weights.gamma}};
}

struct LoadedFleet {
    std::vector<data::CellRecord> cells;
    data::SplitAssignment split;
};

LoadedFleet load_and_split(const std::filesystem::path& data_dir, int t_max, uint64_t seed,
                           int val_cells, int test_cells) {
    data::LoadOptions lo;
    lo.t_max = t_max;
    auto loaded = data::load_dataset(data_dir, lo);
    for (const auto& rej : loaded.rejected)
        std::fprintf(stderr, "warning: rejected cell %s: %s\n", rej.cell_id.c_str(),
                     rej.reason.c_str());
    const int n = static_cast<int>(loaded.cells.size());
    if (n < 3) throw ConfigError("dataset has fewer than 3 usable cells");
    int nv = val_cells > 0 ? val_cells : std::max(1, n / 10);
    int nt = test_cells > 0 ? test_cells : std::max(1, n / 10);
    if (nv + nt >= n)
        throw ConfigError("val+test cells (" + std::to_string(nv + nt) +
                          ") leave no training cells out of " + std::to_string(n));
    LoadedFleet fleet;
    fleet.split = data::stratified_split(loaded.cells, n - nv - nt, nv, nt, seed);
    fleet.cells = std::move(loaded.cells);
    return fleet;
}

} // namespace

std::string content_hash(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
        if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const char* data, size_t n) {
        for (size_t i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(data[i]);
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& f : files) {
        const std::string rel = std::filesystem::relative(f, dir).string();
        mix(rel.data(), rel.size());
        std::ifstream in(f, std::ios::binary);
        char buf[1 << 16];
        while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
            mix(buf, static_cast<size_t>(in.gcount()));
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

void write_history(const train::TrainHistory& history, const std::filesystem::path& file) {
    std::string t =
        "phase\tepoch\tl_data\tl_mono\tl_ir\tl_volt\tl_phys\tl_ewc\tl_total\tval_mae\tgrad_norm_max\tseconds\n";
    for (const auto& e : history.epochs) {
        t += std::to_string(e.phase) + "\t" + std::to_string(e.epoch) + "\t" + fmt_double(e.l_data) +
             "\t" + fmt_double(e.l_mono) + "\t" + fmt_double(e.l_ir) + "\t" + fmt_double(e.l_volt) +
             "\t" + fmt_double(e.l_phys) + "\t" + fmt_double(e.l_ewc) + "\t" + fmt_double(e.l_total) +
             "\t" + fmt_double(e.val_mae) + "\t" + fmt_double(e.grad_norm_max) + "\t" +
             fmt_double(e.seconds) + "\n";
    }
    write_text(file, t);
    std::string p = "phase\tbatch_id\tepochs_run\tbest_epoch\tbest_val_mae\tfisher_epoch\tskipped\n";
    for (const auto& s : history.phases) {
        p += std::to_string(s.phase) + "\t" + std::to_string(s.batch_id) + "\t" +
             std::to_string(s.epochs_run) + "\t" + std::to_string(s.best_epoch) + "\t" +
             fmt_double(s.best_val_mae) + "\t" + std::to_string(s.fisher_captured_epoch) + "\t" +
             (s.skipped ? "1" : "0") + "\n";
    }
    auto phases_file = file;
    phases_file.replace_filename("phases.tsv");
    write_text(phases_file, p);
}

void write_split(const data::SplitAssignment& split, const std::filesystem::path& file) {
    json j;
    j["seed"] = split.seed;
    j["train"] = split.train;
    j["val"] = split.val;
    j["test"] = split.test;
    write_text(file, j.dump(2) + "\n");
}

data::SplitAssignment read_split(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open split file " + file.string());
    json j = json::parse(in);
    data::SplitAssignment s;
    s.seed = j.at("seed");
    s.train = j.at("train").get<std::vector<std::string>>();
    s.val = j.at("val").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    return s;
}

void run_synth(const synth::FleetParams& params, const std::filesystem::path& out_dir) {
    const auto fleet = synth::generate_fleet(params);
    data::export_fleet(fleet, out_dir);
}

TrainArtifacts run_train(const TrainOptions& opts) {
    opts.net.validate();
    opts.train.validate();
    require_fresh_run_dir(opts.out_dir);

    auto fleet = load_and_split(opts.data_dir, static_cast<int>(opts.net.t_max), opts.train.seed,
                                opts.val_cells, opts.test_cells);

    auto result = net::variant_is_batch_staged(opts.train.variant)
                      ? train::train_batch_staged(fleet.cells, fleet.split, opts.net, opts.train)
                      : train::train_joint(fleet.cells, fleet.split, opts.net, opts.train);

    TrainArtifacts artifacts;
    artifacts.history = result.history;
    artifacts.checkpoint = opts.out_dir / "checkpoint.bwm";
    net::save_checkpoint(artifacts.checkpoint, result.model);
    write_history(result.history, opts.out_dir / "history.tsv");
    write_split(fleet.split, opts.out_dir / "split.json");
    for (size_t i = 0; i < result.fishers.size(); ++i)
        loss::save_fisher(opts.out_dir / ("fisher_phase" + std::to_string(i + 1) + ".bwm"), opts.net,
                          opts.train.variant, result.fishers[i]);

    // Final evaluation on the held-out test cells.
    const auto test_cells = data::select_cells(fleet.cells, fleet.split.test);
    const auto test_windows = data::build_windows(test_cells, static_cast<int>(opts.net.w),
                                                  static_cast<int>(opts.net.horizon));
    if (test_windows.empty()) throw ConfigError("test split yields no windows");
    std::vector<int> horizons;
    for (int h : {5, 10, 20, 50})
        if (h <= opts.net.horizon) horizons.push_back(h);
    auto report = eval::evaluate(result.model, test_windows,
                                 net::variant_has_trajectory(opts.train.variant) ? horizons
                                                                                 : std::vector<int>{});
    std::optional<eval::PcaProjection> pca;
    if (opts.train.variant != net::Variant::Lstm && test_windows.size() >= 3)
        pca = eval::latent_pca(result.model, test_windows);
    eval::emit_report(report, pca ? &*pca : nullptr, opts.out_dir);
    artifacts.metrics = opts.out_dir / "metrics.txt";

    json manifest;
    manifest["command"] = "train";
    manifest["created_at"] = iso_now();
    manifest["seed"] = opts.train.seed;
    manifest["variant"] = net::variant_name(opts.train.variant);
    manifest["data_dir"] = opts.data_dir.string();
    manifest["input_hash"] = content_hash(opts.data_dir);
    manifest["net_config"] = net_config_json(opts.net);
    manifest["train_config"] = train_config_json(opts.train);
    json outputs = json::array();
    for (const char* f : {"checkpoint.bwm", "history.tsv", "phases.tsv", "split.json", "metrics.txt",
                          "heatmap.tsv"})
        outputs.push_back(f);
    if (pca) outputs.push_back("pca.tsv");
    for (size_t i = 0; i < result.fishers.size(); ++i)
        outputs.push_back("fisher_phase" + std::to_string(i + 1) + ".bwm");
    manifest["outputs"] = outputs;
    write_text(opts.out_dir / "manifest.json", manifest.dump(2) + "\n");
    return artifacts;
}

namespace {

struct EvalContext {
    net::Model model{nullptr};
    std::vector<data::CellRecord> cells;
    std::vector<data::Window> test_windows;
};

EvalContext load_eval_context(const std::filesystem::path& checkpoint,
                              const std::filesystem::path& data_dir,
                              const std::optional<std::filesystem::path>& split_file) {
    EvalContext ctx;
    ctx.model = net::load_checkpoint(checkpoint);

    const auto split_path = split_file.value_or(checkpoint.parent_path() / "split.json");
    if (!std::filesystem::exists(split_path))
        throw ConfigError("no split file at " + split_path.string() +
                          "; pass one explicitly to pick the evaluation cells");
    const auto split = read_split(split_path);

    data::LoadOptions lo;
    lo.t_max = static_cast<int>(ctx.model->config.t_max);
    auto loaded = data::load_dataset(data_dir, lo);
    ctx.cells = std::move(loaded.cells);
    const auto test_cells = data::select_cells(ctx.cells, split.test);
    ctx.test_windows = data::build_windows(test_cells, static_cast<int>(ctx.model->config.w),
                                           static_cast<int>(ctx.model->config.horizon));
    if (ctx.test_windows.empty()) throw ConfigError("test split yields no windows");
    return ctx;
}

} // namespace

eval::MetricsReport run_eval(const EvalOptions& opts) {
    auto ctx = load_eval_context(opts.checkpoint, opts.data_dir, opts.split_file);
    for (int h : opts.horizons)
        if (h > ctx.model->config.horizon)
            throw ConfigError("requested horizon " + std::to_string(h) +
                              " exceeds the checkpoint horizon " +
                              std::to_string(ctx.model->config.horizon));

    require_fresh_run_dir(opts.out_dir);
    const bool traj = net::variant_has_trajectory(ctx.model->variant);
    auto report = eval::evaluate(ctx.model, ctx.test_windows,
                                 traj ? opts.horizons : std::vector<int>{});
    std::optional<eval::PcaProjection> pca;
    if (ctx.model->variant != net::Variant::Lstm && ctx.test_windows.size() >= 3)
        pca = eval::latent_pca(ctx.model, ctx.test_windows);
    eval::emit_report(report, pca ? &*pca : nullptr, opts.out_dir);

    json manifest;
    manifest["command"] = "eval";
    manifest["created_at"] = iso_now();
    manifest["checkpoint"] = opts.checkpoint.string();
    manifest["data_dir"] = opts.data_dir.string();
    manifest["input_hash"] = content_hash(opts.data_dir);
    manifest["horizons"] = opts.horizons;
    manifest["outputs"] = json::array({"metrics.txt", "heatmap.tsv"});
    if (pca) manifest["outputs"].push_back("pca.tsv");
    write_text(opts.out_dir / "manifest.json", manifest.dump(2) + "\n");
    return report;
}

std::vector<RolloutRow> run_rollout(const std::filesystem::path& checkpoint,
                                    const std::filesystem::path& data_dir,
                                    const std::string& cell_id, int anchor) {
    auto model = net::load_checkpoint(checkpoint);
    return run_rollout_with_model(model, data_dir, cell_id, anchor);
}

std::vector<RolloutRow> run_rollout_with_model(net::Model& model,
                                               const std::filesystem::path& data_dir,
                                               const std::string& cell_id, int anchor) {
    if (!net::variant_has_trajectory(model->variant))
        throw UnsupportedOperation(std::string(net::variant_name(model->variant)) +
                                   " cannot produce a future trajectory");
    data::LoadOptions lo;
    lo.t_max = static_cast<int>(model->config.t_max);
    auto loaded = data::load_dataset(data_dir, lo);
    const auto* cell = data::find_cell(loaded.cells, cell_id);
    if (!cell) throw ConfigError("unknown cell_id: " + cell_id);
    const int w = static_cast<int>(model->config.w);
    const int h = static_cast<int>(model->config.horizon);
    const int n = cell->retained_count();
    if (anchor < w + 1 || anchor > n - h)
        throw ConfigError("anchor must lie in [" + std::to_string(w + 1) + ", " +
                          std::to_string(n - h) + "] for cell " + cell_id);

    data::Window window{cell, anchor, w, h};
    batch::BatchBuilder builder({window}, model->config, 0.75);
    auto records = eval::collect_predictions(model, builder);
    std::vector<RolloutRow> rows;
    for (int i = 0; i < h; ++i)
        rows.push_back({i + 1, records[0].traj_pred[static_cast<size_t>(i)],
                        records[0].traj_true[static_cast<size_t>(i)]});
    return rows;
}

std::vector<SweepRow> run_sweep_h(const TrainOptions& base, const std::vector<int>& h_set) {
    if (h_set.empty()) throw ConfigError("sweep-h: empty horizon set");
    require_fresh_run_dir(base.out_dir);
    std::vector<SweepRow> rows;
    for (int h : h_set) {
        TrainOptions opts = base;
        opts.net.horizon = h;
        opts.out_dir = base.out_dir / ("h" + std::to_string(h));
        auto artifacts = run_train(opts);
        const auto report = eval::parse_metrics(artifacts.metrics);
        rows.push_back({h, report.overall.mae});
    }
    std::string t = "horizon\toverall_mae\n";
    for (const auto& r : rows)
        t += std::to_string(r.horizon) + "\t" + fmt_double(r.overall_mae) + "\n";
    write_text(base.out_dir / "sweep.tsv", t);

    json manifest;
    manifest["command"] = "sweep-h";
    manifest["created_at"] = iso_now();
    manifest["seed"] = base.train.seed;
    manifest["variant"] = net::variant_name(base.train.variant);
    manifest["data_dir"] = base.data_dir.string();
    manifest["input_hash"] = content_hash(base.data_dir);
    json hs = json::array();
    for (int h : h_set) hs.push_back(h);
    manifest["h_set"] = hs;
    manifest["outputs"] = json::array({"sweep.tsv"});
    write_text(base.out_dir / "manifest.json", manifest.dump(2) + "\n");
    return rows;
}

void run_pca(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
             const std::filesystem::path& out_file,
             const std::optional<std::filesystem::path>& split_file) {
    auto ctx = load_eval_context(checkpoint, data_dir, split_file);
    if (ctx.model->variant == net::Variant::Lstm)
        throw UnsupportedOperation("the LSTM control has no latent state to project");
    auto pca = eval::latent_pca(ctx.model, ctx.test_windows);
    std::string p = "pc1\tpc2\tsoh\tcell_id\n";
    for (size_t i = 0; i < pca.coords.size(); ++i)
        p += fmt_double(pca.coords[i][0]) + "\t" + fmt_double(pca.coords[i][1]) + "\t" +
             fmt_double(pca.soh[i]) + "\t" + pca.cell_ids[i] + "\n";
    if (out_file.has_parent_path()) std::filesystem::create_directories(out_file.parent_path());
    write_text(out_file, p);
}

} // namespace bwm::run
