/*
 * C interface to the attention multiple-instance learning toolkit.
 *
 * All functions return AMIL_OK on success; on failure they return a status
 * code and leave a human-readable message retrievable through
 * amil_last_error() (thread-local). Handles are opaque and must be released
 * with their matching close function.
 */
#ifndef AMIL_H
#define AMIL_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum amil_status {
    AMIL_OK = 0,
    AMIL_ERR_INVALID_ARGUMENT = 1,
    AMIL_ERR_DIMENSION = 2,
    AMIL_ERR_GEOMETRY = 3,
    AMIL_ERR_CONTRACT = 4,
    AMIL_ERR_INGESTION = 5,
    AMIL_ERR_TRAINING = 6,
    AMIL_ERR_IO = 7
} amil_status;

typedef enum amil_pooling {
    AMIL_POOLING_ATTENTION = 0,
    AMIL_POOLING_MAX = 1,
    AMIL_POOLING_MEAN = 2
} amil_pooling;

typedef enum amil_optimizer {
    AMIL_OPTIMIZER_ADAM = 0,
    AMIL_OPTIMIZER_SGD = 1
} amil_optimizer;

typedef struct amil_dataset amil_dataset; /* labeled source images */
typedef struct amil_model amil_model;     /* trained network parameters */

const char* amil_version(void);

/* Message describing this thread's most recent failure ("" if none). */
const char* amil_last_error(void);

/*
 * Writes a synthetic motif dataset under out_dir: images/bag_NNNN.png, a
 * labels.csv (path,label) and a truth.csv (path,cells) naming the ground-truth
 * motif cells of every bag. Deterministic for a fixed seed.
 */
amil_status amil_synth_write(const char* out_dir, int n_bags, int grid_rows, int grid_cols,
                             int patch_size, double positive_fraction, double motif_rate,
                             uint64_t seed);

/* Loads every image listed in labels_csv (paths relative to root_dir). */
amil_status amil_dataset_open(const char* root_dir, const char* labels_csv, amil_dataset** out);
void amil_dataset_close(amil_dataset* dataset);
int64_t amil_dataset_size(const amil_dataset* dataset);

typedef struct amil_train_options {
    double learning_rate;   /* default 0.001 */
    int epochs;             /* total epoch budget, >= 1 */
    uint64_t seed;          /* drives every random stream */
    int pooling;            /* amil_pooling */
    int augment;            /* 1: redraw one flip/rotation per image per epoch */
    int optimizer;          /* amil_optimizer */
    double weight_decay;    /* default 0 */
    int patch_size;         /* tiling patch edge, default 28 */
    int stride;             /* tiling stride, default 28 */
    int attention_dim;      /* attention hidden size, default 128 */
    double split_fraction;  /* train share of the dataset, default 0.8 */
    int record_timing;      /* 1: measured epoch seconds in metrics.csv */
    int log_progress;       /* 1: one console line per epoch */
    const char* resume_from; /* optional last.ckpt to continue from */
} amil_train_options;

void amil_train_options_init(amil_train_options* options);

/*
 * Splits the dataset, trains for the configured epoch budget (batch size one)
 * and writes metrics.csv, best.ckpt(+.bin) and last.ckpt(+.bin) under out_dir.
 * Reports the best validation accuracy seen when best_val_acc is non-null.
 */
amil_status amil_train(const amil_dataset* dataset, const amil_train_options* options,
                       const char* out_dir, double* best_val_acc);

amil_status amil_model_open(const char* checkpoint_path, amil_model** out);
void amil_model_close(amil_model* model);
amil_status amil_model_save(const amil_model* model, const char* checkpoint_path);
amil_status amil_model_pooling(const amil_model* model, int* pooling);
amil_status amil_model_patch_size(const amil_model* model, int* patch_size);

/*
 * Accuracy of thresholded bag probabilities (> 0.5) against the dataset
 * labels. When predictions_csv is non-null, writes one row per bag:
 * path,label,probability,prediction.
 */
amil_status amil_evaluate(const amil_model* model, const amil_dataset* dataset,
                          const char* predictions_csv, double* accuracy);

/* Bag probability for a single image file. */
amil_status amil_predict_image(const amil_model* model, const char* image_path,
                               double* probability);

/*
 * Attention heatmap for one image: writes the alpha-blended overlay PNG and a
 * CSV grid of the raw attention weights. The model must use attention
 * pooling, and the image must tile with the model's patch geometry.
 */
amil_status amil_render_heatmap(const amil_model* model, const char* image_path,
                                const char* overlay_png, const char* attention_csv,
                                double alpha);

#ifdef __cplusplus
}
#endif

#endif /* AMIL_H */
