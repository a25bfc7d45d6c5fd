#ifndef FRACDET_FRACDET_H
#define FRACDET_FRACDET_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FD_API __declspec(dllexport)
#else
#define FD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Every fallible call returns a status; on failure fd_last_error() holds a
 * message for the calling thread until its next failing call. */
typedef enum fd_status {
  FD_OK = 0,
  FD_ERR_INVALID_ARGUMENT = 1,
  FD_ERR_DECODE = 2,
  FD_ERR_FORMAT = 3,
  FD_ERR_DEGENERATE_HISTOGRAM = 4,
  FD_ERR_DIVERGED = 5,
  FD_ERR_IO = 6,
  FD_ERR_NOT_LOADED = 7,
  FD_ERR_INTERNAL = 8
} fd_status;

FD_API const char* fd_last_error(void);
FD_API const char* fd_status_name(fd_status status);
FD_API const char* fd_version(void);

/* Class 0 is "fractured" (the positive class), class 1 "not fractured". */
FD_API const char* fd_class_name(int class_idx);

/* ---- preprocessing ---------------------------------------------------- */

typedef struct fd_pipeline_config {
  int clahe_tile_rows;
  int clahe_tile_cols;
  double clahe_clip_factor; /* INFINITY disables clipping */
  double canny_sigma;
  double canny_low_frac;
  double canny_high_frac;
  int target_width; /* overridden by the model input size where a model is involved */
  int target_height;
} fd_pipeline_config;

FD_API void fd_pipeline_config_default(fd_pipeline_config* cfg);

typedef struct fd_preprocess_result {
  int otsu_threshold; /* -1 when the histogram is degenerate */
  int degenerate;
} fd_preprocess_result;

/* Writes resized.png, enhanced.png, mask.png, edges.png and triptych.png
 * into out_dir (created if missing). */
FD_API fd_status fd_preprocess_file(const char* image_path, const fd_pipeline_config* cfg, const char* out_dir,
                                    fd_preprocess_result* out);

/* ---- architectures ---------------------------------------------------- */

typedef struct fd_arch fd_arch;

FD_API fd_status fd_arch_vgg19(const uint32_t* head, size_t head_len, int global_pool, fd_arch** out);
FD_API fd_status fd_arch_toy(const uint32_t* channels, size_t channels_len, const uint32_t* head, size_t head_len,
                             size_t input_size, fd_arch** out);
FD_API void fd_arch_free(fd_arch* arch);

typedef struct fd_layer_info {
  const char* kind; /* "conv3x3", "maxpool2x2", "relu", "flatten", "gap", "dense", "softmax" */
  uint32_t units;
  size_t out_shape[3]; /* unused trailing dims are 0 */
  size_t out_rank;
  uint64_t params;
} fd_layer_info;

FD_API size_t fd_arch_layer_count(const fd_arch* arch);
FD_API fd_status fd_arch_layer_info(const fd_arch* arch, size_t layer, fd_layer_info* out);
FD_API uint64_t fd_arch_param_count(const fd_arch* arch);
FD_API size_t fd_arch_input_size(const fd_arch* arch);

/* ---- datasets --------------------------------------------------------- */

typedef struct fd_dataset fd_dataset;

typedef struct fd_synth_config {
  int size;
  int band_min_width;
  int band_max_width;
  int crack_thickness;
  double crack_amplitude;
  double noise_std;
  uint64_t seed;
} fd_synth_config;

FD_API void fd_synth_config_default(fd_synth_config* cfg);
FD_API fd_status fd_dataset_synthetic(const fd_synth_config* cfg, size_t n_per_class, fd_dataset** out);
/* root/<class>/<image>; undecodable files become warnings. */
FD_API fd_status fd_dataset_load(const char* root, fd_dataset** out);
FD_API fd_status fd_dataset_save(const fd_dataset* ds, const char* root);
FD_API void fd_dataset_free(fd_dataset* ds);
FD_API size_t fd_dataset_size(const fd_dataset* ds);
FD_API size_t fd_dataset_class_count(const fd_dataset* ds, int class_idx);
FD_API size_t fd_dataset_warning_count(const fd_dataset* ds);
FD_API const char* fd_dataset_warning(const fd_dataset* ds, size_t i);

typedef struct fd_split_ratios {
  double train;
  double val;
  double test;
} fd_split_ratios;

FD_API void fd_split_ratios_default(fd_split_ratios* r);
/* counts[0..2] = train, val, test sample counts for a class of n samples. */
FD_API fd_status fd_split_count(size_t n, const fd_split_ratios* r, size_t counts[3]);
/* Stratified split; any output pointer may be NULL. manifest_csv (path,label,split) is optional. */
FD_API fd_status fd_dataset_split(const fd_dataset* ds, const fd_split_ratios* r, uint64_t seed,
                                  const char* manifest_csv, fd_dataset** train, fd_dataset** val, fd_dataset** test);

/* ---- models ----------------------------------------------------------- */

typedef struct fd_model fd_model;

FD_API fd_status fd_model_create(const fd_arch* arch, uint64_t seed, fd_model** out);
FD_API fd_status fd_model_load(const char* path, fd_model** out);
FD_API fd_status fd_model_save(const fd_model* model, const char* path);
FD_API void fd_model_free(fd_model* model);
/* Copy of the model's architecture; free with fd_arch_free. */
FD_API fd_status fd_model_arch(const fd_model* model, fd_arch** out);

typedef struct fd_train_config {
  float learning_rate;
  size_t batch_size;
  size_t max_epochs;
  size_t patience;
  double min_delta;
  uint64_t seed;
} fd_train_config;

FD_API void fd_train_config_default(fd_train_config* cfg);

typedef struct fd_epoch_record {
  size_t epoch; /* 1-based */
  double train_loss;
  double train_accuracy;
  double val_loss;
  double val_accuracy;
  double seconds;
} fd_epoch_record;

typedef void (*fd_epoch_callback)(const fd_epoch_record* record, void* user);

typedef struct fd_train_result {
  size_t epochs_run;
  size_t best_epoch;
  int stopped_early;
} fd_train_result;

/* history_csv and callback may be NULL. On return the model holds the
 * best-epoch parameters. */
FD_API fd_status fd_train(fd_model* model, const fd_dataset* train, const fd_dataset* val, const fd_train_config* cfg,
                          const fd_pipeline_config* pipeline, const char* history_csv, fd_epoch_callback callback,
                          void* user, fd_train_result* out);

typedef struct fd_metrics {
  uint64_t tp, tn, fp, fn;
  double accuracy;
  double precision; /* valid only when has_precision */
  double recall;
  double f1;
  int has_precision;
  int has_recall;
  int has_f1;
  double auc;
  double loss;
} fd_metrics;

/* report_json and roc_csv may be NULL. */
FD_API fd_status fd_evaluate(const fd_model* model, const fd_dataset* ds, const fd_pipeline_config* pipeline,
                             const char* report_json, const char* roc_csv, fd_metrics* out);

typedef struct fd_prediction {
  int class_idx;
  double confidence;
  double probabilities[2];
} fd_prediction;

FD_API fd_status fd_predict_file(const fd_model* model, const char* image_path, const fd_pipeline_config* pipeline,
                                 fd_prediction* out);
/* Grad-CAM overlay for class_idx (-1: the predicted class) written as PNG;
 * heatmap_pgm (raw map at the target layer resolution) may be NULL. */
FD_API fd_status fd_explain_file(const fd_model* model, const char* image_path, const fd_pipeline_config* pipeline,
                                 int class_idx, double alpha, const char* overlay_png, const char* heatmap_pgm,
                                 fd_prediction* out);

/* ---- inference server ------------------------------------------------- */

typedef struct fd_server fd_server;

typedef struct fd_server_config {
  const char* host;
  int port; /* 0 picks a free port */
  size_t upload_limit;
  const char* cors_origin;
  double overlay_alpha;
  fd_pipeline_config pipeline;
} fd_server_config;

FD_API void fd_server_config_default(fd_server_config* cfg);
FD_API fd_status fd_server_create(const fd_server_config* cfg, fd_server** out);
FD_API fd_status fd_server_load_model(fd_server* server, const char* path);
/* Binds and serves on a background thread; *port receives the bound port. */
FD_API fd_status fd_server_start(fd_server* server, int* port);
/* Binds and serves on the calling thread until fd_server_stop. */
FD_API fd_status fd_server_run(fd_server* server, void (*on_bound)(int port, void* user), void* user);
FD_API void fd_server_stop(fd_server* server);
FD_API void fd_server_free(fd_server* server);

#ifdef __cplusplus
}
#endif

#endif
