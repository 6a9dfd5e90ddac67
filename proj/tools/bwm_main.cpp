// Command-line front end for the battery SOH world-model library. Talks to
// the core exclusively through the C API in bwm_c.h.
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bwm_c.h"

namespace {

int exit_code_for(int rc) {
    if (rc == BWM_OK) return 0;
    std::fprintf(stderr, "error: %s\n", bwm_last_error());
    return rc == BWM_E_CONFIG ? 2 : 1;
}

void add_train_flags(CLI::App* cmd, bwm_train_opts& o, std::string& variant) {
    cmd->add_option("--variant", variant, "piwm | wm | cnn-patchtst | piwm-ewc | lstm")
        ->default_val(variant);
    cmd->add_option("--seed", o.seed, "master seed (split, init, sampling)")->default_val(o.seed);
    cmd->add_option("--lr", o.learning_rate, "learning rate")->default_val(o.learning_rate);
    cmd->add_option("--weight-decay", o.weight_decay, "decoupled weight decay")
        ->default_val(o.weight_decay);
    cmd->add_option("--batch-size", o.batch_size)->default_val(o.batch_size);
    cmd->add_option("--epochs", o.max_epochs, "maximum epochs")->default_val(o.max_epochs);
    cmd->add_option("--patience", o.patience, "early-stop patience (epochs)")
        ->default_val(o.patience);
    cmd->add_option("--clip-norm", o.grad_clip_norm, "global gradient clip norm")
        ->default_val(o.grad_clip_norm);
    cmd->add_option("--fisher-epoch", o.fisher_epoch, "Fisher capture epoch per phase")
        ->default_val(o.fisher_epoch);
    cmd->add_option("--lambda-phys", o.lambda_phys)->default_val(o.lambda_phys);
    cmd->add_option("--lambda-ewc", o.lambda_ewc)->default_val(o.lambda_ewc);
    cmd->add_option("--epsilon-mono", o.epsilon_mono, "monotonicity tolerance (SOH)")
        ->default_val(o.epsilon_mono);
    cmd->add_option("--gamma", o.gamma, "SPM exponent")->default_val(o.gamma);
    cmd->add_option("--d", o.d, "embedding width")->default_val(o.d);
    cmd->add_option("--w", o.w, "input window (cycles)")->default_val(o.w);
    cmd->add_option("--horizon", o.horizon, "forecast horizon (cycles)")->default_val(o.horizon);
    cmd->add_option("--patch-len", o.patch_len)->default_val(o.patch_len);
    cmd->add_option("--patch-stride", o.patch_stride)->default_val(o.patch_stride);
    cmd->add_option("--layers", o.layers, "transformer layers")->default_val(o.layers);
    cmd->add_option("--heads", o.heads, "attention heads")->default_val(o.heads);
    cmd->add_option("--ff-width", o.ff_width, "transformer feed-forward width")
        ->default_val(o.ff_width);
    cmd->add_option("--t-max", o.t_max, "canonical timesteps per cycle")->default_val(o.t_max);
    cmd->add_option("--action-scale", o.action_scale, "charge-current normalizer (A)")
        ->default_val(o.action_scale);
    cmd->add_option("--val-cells", o.val_cells, "validation cells (<=0: 10%)")
        ->default_val(o.val_cells);
    cmd->add_option("--test-cells", o.test_cells, "test cells (<=0: 10%)")
        ->default_val(o.test_cells);
    cmd->set_config("--config", "", "read options from a TOML file");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"battery SOH world-model: synthetic fleets, training, evaluation"};
    app.require_subcommand(1);

    // synth
    bwm_synth_opts synth_opts;
    bwm_synth_opts_init(&synth_opts);
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "generate a synthetic fleet dataset");
    synth->add_option("--out", synth_out, "output dataset directory")->required();
    synth->add_option("--cells", synth_opts.cells, "number of cells")
        ->default_val(synth_opts.cells)
        ->check(CLI::PositiveNumber);
    synth->add_option("--seed", synth_opts.seed)->default_val(synth_opts.seed);
    synth->add_option("--timesteps", synth_opts.timesteps, "raw series length at SOH 1")
        ->default_val(synth_opts.timesteps)
        ->check(CLI::PositiveNumber);
    synth->add_option("--noise-sd", synth_opts.noise_sd, "SOH noise standard deviation")
        ->default_val(synth_opts.noise_sd);
    synth->add_option("--lifetime-min", synth_opts.lifetime_min)
        ->default_val(synth_opts.lifetime_min)
        ->check(CLI::PositiveNumber);
    synth->add_option("--lifetime-max", synth_opts.lifetime_max)
        ->default_val(synth_opts.lifetime_max)
        ->check(CLI::PositiveNumber);

    // train
    bwm_train_opts train_opts;
    bwm_train_opts_init(&train_opts);
    std::string train_variant = "piwm", train_data, train_out;
    auto* train = app.add_subcommand("train", "train one variant and evaluate its test split");
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "run directory (must be fresh)")->required();
    add_train_flags(train, train_opts, train_variant);

    // eval
    std::string eval_ckpt, eval_data, eval_out, eval_horizons = "5,10,20,50";
    auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on its test split");
    evalc->add_option("--checkpoint", eval_ckpt)->required();
    evalc->add_option("--data", eval_data)->required();
    evalc->add_option("--out", eval_out, "run directory (must be fresh)")->required();
    evalc->add_option("--horizons", eval_horizons, "comma-separated forecast horizons")
        ->default_val(eval_horizons);

    // rollout
    std::string ro_ckpt, ro_data, ro_cell, ro_out;
    int ro_anchor = 0;
    auto* rollout = app.add_subcommand("rollout", "emit one window's H-step forecast as TSV");
    rollout->add_option("--checkpoint", ro_ckpt)->required();
    rollout->add_option("--data", ro_data)->required();
    rollout->add_option("--cell", ro_cell, "cell id")->required();
    rollout->add_option("--anchor", ro_anchor, "anchor position among retained cycles (1-based)")
        ->required();
    rollout->add_option("--out", ro_out, "output file (default: stdout)");

    // sweep-h
    bwm_train_opts sweep_opts;
    bwm_train_opts_init(&sweep_opts);
    std::string sweep_variant = "wm", sweep_data, sweep_out, sweep_hset = "50,80,100";
    auto* sweep = app.add_subcommand("sweep-h", "train once per horizon and tabulate overall MAE");
    sweep->add_option("--data", sweep_data)->required();
    sweep->add_option("--out", sweep_out, "run directory (must be fresh)")->required();
    sweep->add_option("--h-set", sweep_hset, "comma-separated horizons")->default_val(sweep_hset);
    add_train_flags(sweep, sweep_opts, sweep_variant);

    // pca
    std::string pca_ckpt, pca_data, pca_out;
    auto* pca = app.add_subcommand("pca", "latent PCA scatter data over the test split");
    pca->add_option("--checkpoint", pca_ckpt)->required();
    pca->add_option("--data", pca_data)->required();
    pca->add_option("--out", pca_out, "output TSV file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e); // prints help, exits 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (synth->parsed()) return exit_code_for(bwm_synth_generate(&synth_opts, synth_out.c_str()));

    if (train->parsed()) {
        train_opts.variant = train_variant.c_str();
        return exit_code_for(bwm_train_run(&train_opts, train_data.c_str(), train_out.c_str()));
    }

    if (evalc->parsed())
        return exit_code_for(
            bwm_eval_run(eval_ckpt.c_str(), eval_data.c_str(), eval_out.c_str(), eval_horizons.c_str()));

    if (rollout->parsed()) {
        bwm_model* model = bwm_model_open(ro_ckpt.c_str());
        if (!model) return exit_code_for(BWM_E_IO);
        const int h = bwm_model_horizon(model);
        std::vector<double> pred(static_cast<size_t>(h)), truth(static_cast<size_t>(h));
        const int rc =
            bwm_model_rollout(model, ro_data.c_str(), ro_cell.c_str(), ro_anchor, pred.data(),
                              truth.data(), h);
        bwm_model_close(model);
        if (rc != BWM_OK) return exit_code_for(rc);
        FILE* out = stdout;
        if (!ro_out.empty()) {
            out = std::fopen(ro_out.c_str(), "wb");
            if (!out) {
                std::fprintf(stderr, "error: cannot write %s\n", ro_out.c_str());
                return 1;
            }
        }
        std::fprintf(out, "h\tsoh_pred\tsoh_true\n");
        for (int i = 0; i < h; ++i)
            std::fprintf(out, "%d\t%.17g\t%.17g\n", i + 1, pred[static_cast<size_t>(i)],
                         truth[static_cast<size_t>(i)]);
        if (out != stdout) std::fclose(out);
        return 0;
    }

    if (sweep->parsed()) {
        sweep_opts.variant = sweep_variant.c_str();
        return exit_code_for(
            bwm_sweep_h(&sweep_opts, sweep_data.c_str(), sweep_out.c_str(), sweep_hset.c_str()));
    }

    if (pca->parsed())
        return exit_code_for(bwm_pca_run(pca_ckpt.c_str(), pca_data.c_str(), pca_out.c_str()));

    return 2;
}
