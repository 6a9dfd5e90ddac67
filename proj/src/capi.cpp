#include "bwm_c.h"

#include <cstring>
#include <string>

#include "bwm/run.hpp"

namespace {

thread_local std::string g_last_error;

int set_error(int code, const char* what) {
    g_last_error = what ? what : "";
    return code;
}

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return BWM_OK;
    } catch (const bwm::ConfigError& e) {
        return set_error(BWM_E_CONFIG, e.what());
    } catch (const bwm::UnsupportedOperation& e) {
        return set_error(BWM_E_UNSUPPORTED, e.what());
    } catch (const bwm::IoError& e) {
        return set_error(BWM_E_IO, e.what());
    } catch (const std::exception& e) {
        return set_error(BWM_E_RUNTIME, e.what());
    } catch (...) {
        return set_error(BWM_E_RUNTIME, "unknown failure");
    }
}

bwm::run::TrainOptions to_train_options(const bwm_train_opts& o, const char* data_dir,
                                        const char* out_dir) {
    bwm::run::TrainOptions t;
    t.data_dir = data_dir;
    t.out_dir = out_dir;
    t.train.variant = bwm::net::variant_from_name(o.variant ? o.variant : "");
    t.train.seed = o.seed;
    t.train.learning_rate = o.learning_rate;
    t.train.weight_decay = o.weight_decay;
    t.train.batch_size = o.batch_size;
    t.train.max_epochs = o.max_epochs;
    t.train.patience = o.patience;
    t.train.grad_clip_norm = o.grad_clip_norm;
    t.train.fisher_epoch = o.fisher_epoch;
    t.train.weights.lambda_phys = o.lambda_phys;
    t.train.weights.lambda_ewc = o.lambda_ewc;
    t.train.weights.epsilon_mono = o.epsilon_mono;
    t.train.weights.gamma = o.gamma;
    t.net.d = o.d;
    t.net.w = o.w;
    t.net.horizon = o.horizon;
    t.net.patch_len = o.patch_len;
    t.net.patch_stride = o.patch_stride;
    t.net.layers = o.layers;
    t.net.heads = o.heads;
    t.net.ff_width = o.ff_width;
    t.net.t_max = o.t_max;
    t.net.action_scale = o.action_scale;
    t.val_cells = o.val_cells;
    t.test_cells = o.test_cells;
    return t;
}

std::vector<int> parse_int_csv(const char* csv) {
    std::vector<int> out;
    if (!csv) return out;
    const std::string s(csv);
    size_t start = 0;
    while (start <= s.size()) {
        const size_t comma = s.find(',', start);
        const std::string tok = s.substr(start, comma == std::string::npos ? comma : comma - start);
        if (!tok.empty()) out.push_back(std::stoi(tok));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

} // namespace

extern "C" {

const char* bwm_version(void) { return "0.1.0"; }

const char* bwm_last_error(void) { return g_last_error.c_str(); }

void bwm_synth_opts_init(bwm_synth_opts* opts) {
    if (!opts) return;
    opts->cells = 30;
    opts->seed = 7;
    opts->timesteps = 1000;
    opts->noise_sd = 0.004;
    opts->lifetime_min = 150;
    opts->lifetime_max = 600;
}

int bwm_synth_generate(const bwm_synth_opts* opts, const char* out_dir) {
    return guarded([&] {
        if (!opts || !out_dir) throw bwm::ConfigError("null synth options or output directory");
        bwm::synth::FleetParams fp;
        fp.n_cells = opts->cells;
        fp.seed = opts->seed;
        fp.base_timesteps = opts->timesteps;
        fp.noise_sd = opts->noise_sd;
        fp.lifetime_range = {opts->lifetime_min, opts->lifetime_max};
        bwm::run::run_synth(fp, out_dir);
    });
}

void bwm_train_opts_init(bwm_train_opts* opts) {
    if (!opts) return;
    std::memset(opts, 0, sizeof(*opts));
    opts->variant = "piwm";
    opts->seed = 7;
    opts->learning_rate = 1e-3;
    opts->weight_decay = 1e-4;
    opts->batch_size = 32;
    opts->max_epochs = 100;
    opts->patience = 15;
    opts->grad_clip_norm = 1.0;
    opts->fisher_epoch = 10;
    opts->lambda_phys = 0.1;
    opts->lambda_ewc = 0.4;
    opts->epsilon_mono = 0.005;
    opts->gamma = 0.75;
    opts->d = 64;
    opts->w = 30;
    opts->horizon = 80;
    opts->patch_len = 6;
    opts->patch_stride = 3;
    opts->layers = 3;
    opts->heads = 4;
    opts->ff_width = 256;
    opts->t_max = 1000;
    opts->action_scale = 6.0;
    opts->val_cells = -1;
    opts->test_cells = -1;
}

int bwm_train_run(const bwm_train_opts* opts, const char* data_dir, const char* out_dir) {
    return guarded([&] {
        if (!opts || !data_dir || !out_dir)
            throw bwm::ConfigError("null train options, data or output directory");
        bwm::run::run_train(to_train_options(*opts, data_dir, out_dir));
    });
}

int bwm_eval_run(const char* checkpoint, const char* data_dir, const char* out_dir,
                 const char* horizons_csv) {
    return guarded([&] {
        if (!checkpoint || !data_dir || !out_dir)
            throw bwm::ConfigError("null checkpoint, data or output directory");
        bwm::run::EvalOptions opts;
        opts.checkpoint = checkpoint;
        opts.data_dir = data_dir;
        opts.out_dir = out_dir;
        if (horizons_csv) opts.horizons = parse_int_csv(horizons_csv);
        bwm::run::run_eval(opts);
    });
}

int bwm_sweep_h(const bwm_train_opts* opts, const char* data_dir, const char* out_dir,
                const char* h_csv) {
    return guarded([&] {
        if (!opts || !data_dir || !out_dir)
            throw bwm::ConfigError("null train options, data or output directory");
        auto base = to_train_options(*opts, data_dir, out_dir);
        auto h_set = parse_int_csv(h_csv);
        if (h_set.empty()) h_set = {50, 80, 100};
        bwm::run::run_sweep_h(base, h_set);
    });
}

int bwm_pca_run(const char* checkpoint, const char* data_dir, const char* out_file) {
    return guarded([&] {
        if (!checkpoint || !data_dir || !out_file)
            throw bwm::ConfigError("null checkpoint, data directory or output file");
        bwm::run::run_pca(checkpoint, data_dir, out_file);
    });
}

struct bwm_model {
    bwm::net::Model model{nullptr};
};

bwm_model* bwm_model_open(const char* checkpoint) {
    bwm_model* handle = nullptr;
    guarded([&] {
        if (!checkpoint) throw bwm::ConfigError("null checkpoint path");
        auto m = bwm::net::load_checkpoint(checkpoint);
        handle = new bwm_model{std::move(m)};
    });
    return handle;
}

void bwm_model_close(bwm_model* model) { delete model; }

int bwm_model_horizon(const bwm_model* model) {
    if (!model) return set_error(BWM_E_CONFIG, "null model handle");
    return static_cast<int>(model->model->config.horizon);
}

const char* bwm_model_variant(const bwm_model* model) {
    if (!model) return "";
    return bwm::net::variant_name(model->model->variant);
}

int bwm_model_rollout(bwm_model* model, const char* data_dir, const char* cell_id, int anchor,
                      double* pred, double* truth, int capacity) {
    return guarded([&] {
        if (!model || !data_dir || !cell_id)
            throw bwm::ConfigError("null model, data directory or cell id");
        if (!bwm::net::variant_has_trajectory(model->model->variant))
            throw bwm::UnsupportedOperation(
                std::string(bwm::net::variant_name(model->model->variant)) +
                " cannot produce a future trajectory");
        const int h = static_cast<int>(model->model->config.horizon);
        if (capacity < h)
            throw bwm::ConfigError("output capacity " + std::to_string(capacity) +
                                   " is below the horizon " + std::to_string(h));
        // Reuses the checkpointed parameters already held by the handle; the
        // file path is only needed for the dataset.
        auto rows = bwm::run::run_rollout_with_model(model->model, data_dir, cell_id, anchor);
        for (int i = 0; i < h; ++i) {
            if (pred) pred[i] = rows[static_cast<size_t>(i)].predicted;
            if (truth) truth[i] = rows[static_cast<size_t>(i)].truth;
        }
    });
}

} // extern "C"
