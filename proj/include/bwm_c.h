/* C interface to the battery SOH world-model library.
 *
 * All functions return BWM_OK (0) on success or a negative error code;
 * bwm_last_error() describes the most recent failure on the calling thread.
 * Handles are opaque and must be released with their matching close call.
 */
#ifndef BWM_C_H
#define BWM_C_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define BWM_OK 0
#define BWM_E_CONFIG (-1)      /* invalid arguments or configuration */
#define BWM_E_IO (-2)          /* file system / format failure */
#define BWM_E_UNSUPPORTED (-3) /* operation not supported by this variant */
#define BWM_E_RUNTIME (-4)     /* anything else */

const char* bwm_version(void);

/* Message for the last failure on this thread; empty string if none. */
const char* bwm_last_error(void);

typedef struct bwm_synth_opts {
    int cells;
    uint64_t seed;
    int timesteps;      /* raw series length at SOH 1 */
    double noise_sd;    /* SOH noise (0 disables measurement ripple too) */
    int lifetime_min;   /* retained-cycle count range */
    int lifetime_max;
} bwm_synth_opts;

void bwm_synth_opts_init(bwm_synth_opts* opts);

/* Writes a synthetic fleet in the ingestion format. Deterministic per seed. */
int bwm_synth_generate(const bwm_synth_opts* opts, const char* out_dir);

typedef struct bwm_train_opts {
    const char* variant; /* piwm | wm | cnn-patchtst | piwm-ewc | lstm */
    uint64_t seed;

    /* optimization */
    double learning_rate;
    double weight_decay;
    int batch_size;
    int max_epochs;
    int patience;
    double grad_clip_norm;
    int fisher_epoch;

    /* loss weights */
    double lambda_phys;
    double lambda_ewc;
    double epsilon_mono;
    double gamma;

    /* architecture */
    int d;
    int w;
    int horizon;
    int patch_len;
    int patch_stride;
    int layers;
    int heads;
    int ff_width;
    int t_max;
    double action_scale;

    /* split sizes; <= 0 means 10% of cells (at least 1) */
    int val_cells;
    int test_cells;
} bwm_train_opts;

void bwm_train_opts_init(bwm_train_opts* opts);

/* Full training run: checkpoint + history + split + metrics + manifest are
 * written into out_dir, which must not already contain a manifest. */
int bwm_train_run(const bwm_train_opts* opts, const char* data_dir, const char* out_dir);

/* Evaluate a checkpoint on its own test split (split.json beside the
 * checkpoint). horizons_csv like "5,10,20,50"; NULL for the default. */
int bwm_eval_run(const char* checkpoint, const char* data_dir, const char* out_dir,
                 const char* horizons_csv);

/* One training run per horizon in h_csv (e.g. "50,80,100"); sweep.tsv in
 * out_dir collects the overall MAE per horizon. */
int bwm_sweep_h(const bwm_train_opts* opts, const char* data_dir, const char* out_dir,
                const char* h_csv);

/* PCA of the latent states over the checkpoint's test split. */
int bwm_pca_run(const char* checkpoint, const char* data_dir, const char* out_file);

typedef struct bwm_model bwm_model;

bwm_model* bwm_model_open(const char* checkpoint);
void bwm_model_close(bwm_model* model);

/* Model horizon H, or a negative error code. */
int bwm_model_horizon(const bwm_model* model);

/* Variant name of an open model (static string). */
const char* bwm_model_variant(const bwm_model* model);

/* Roll one window's H-step forecast. pred/truth hold H entries on success;
 * either pointer may be NULL. Fails with BWM_E_UNSUPPORTED for variants
 * without a trajectory. */
int bwm_model_rollout(bwm_model* model, const char* data_dir, const char* cell_id, int anchor,
                      double* pred, double* truth, int capacity);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* BWM_C_H */
