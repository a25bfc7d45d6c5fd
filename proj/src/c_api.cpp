#include "fracdet/fracdet.h"

#include <cmath>
#include <filesystem>
#include <memory>
#include <string>

#include "fracdet/codec.hpp"
#include "fracdet/data.hpp"
#include "fracdet/error.hpp"
#include "fracdet/gradcam.hpp"
#include "fracdet/metrics.hpp"
#include "fracdet/model.hpp"
#include "fracdet/preprocess.hpp"
#include "fracdet/service.hpp"
#include "fracdet/training.hpp"

struct fd_arch {
  fracdet::ArchitectureSpec spec;
};

struct fd_dataset {
  fracdet::LabeledDataset data;
};

struct fd_model {
  fracdet::Model model;
};

struct fd_server {
  explicit fd_server(fracdet::ServiceConfig cfg) : service(std::move(cfg)), http(service) {}
  fracdet::InferenceService service;
  fracdet::HttpServer http;
};

namespace {

using namespace fracdet;

thread_local std::string g_last_error;

fd_status fail(fd_status status, const char* what) {
  g_last_error = what;
  return status;
}

fd_status to_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return FD_ERR_INVALID_ARGUMENT;
    case ErrorCode::kDecode: return FD_ERR_DECODE;
    case ErrorCode::kFormat: return FD_ERR_FORMAT;
    case ErrorCode::kDegenerateHistogram: return FD_ERR_DEGENERATE_HISTOGRAM;
    case ErrorCode::kDiverged: return FD_ERR_DIVERGED;
    case ErrorCode::kIo: return FD_ERR_IO;
    case ErrorCode::kNotLoaded: return FD_ERR_NOT_LOADED;
    case ErrorCode::kInternal: return FD_ERR_INTERNAL;
  }
  return FD_ERR_INTERNAL;
}

template <typename F>
fd_status guarded(F&& body) {
  try {
    body();
    return FD_OK;
  } catch (const Error& e) {
    return fail(to_status(e.code()), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(FD_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(FD_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(FD_ERR_INTERNAL, e.what());
  }
}

void require(const void* p, const char* name) {
  if (!p) throw_invalid(std::string(name) + " must not be null");
}

PipelineConfig pipeline_from(const fd_pipeline_config* c) {
  PipelineConfig p;
  if (!c) return p;
  p.clahe.tile_rows = c->clahe_tile_rows;
  p.clahe.tile_cols = c->clahe_tile_cols;
  p.clahe.clip_factor = c->clahe_clip_factor;
  p.canny.gaussian_sigma = c->canny_sigma;
  p.canny.low_frac = c->canny_low_frac;
  p.canny.high_frac = c->canny_high_frac;
  p.target_width = c->target_width;
  p.target_height = c->target_height;
  return p;
}

PipelineConfig pipeline_for(const Model& model, const fd_pipeline_config* c) {
  PipelineConfig p = pipeline_from(c);
  p.target_height = static_cast<int>(model.spec().input[1]);
  p.target_width = static_cast<int>(model.spec().input[2]);
  return p;
}

SplitRatios ratios_from(const fd_split_ratios* r) {
  SplitRatios s;
  if (r) s = {r->train, r->val, r->test};
  return s;
}

const char* kind_label(LayerKind k) {
  switch (k) {
    case LayerKind::kConv3x3: return "conv3x3";
    case LayerKind::kMaxPool2x2: return "maxpool2x2";
    case LayerKind::kReLU: return "relu";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kGlobalAvgPool: return "gap";
    case LayerKind::kDense: return "dense";
    case LayerKind::kSoftmax: return "softmax";
  }
  return "?";
}

fd_prediction prediction_from(const Tensor& probabilities) {
  fd_prediction p{};
  p.class_idx = static_cast<int>(predicted_class(probabilities));
  p.probabilities[0] = probabilities[0];
  p.probabilities[1] = probabilities[1];
  p.confidence = p.probabilities[p.class_idx];
  return p;
}

}  // namespace

extern "C" {

const char* fd_last_error(void) { return g_last_error.c_str(); }

const char* fd_status_name(fd_status status) {
  if (status == FD_OK) return "ok";
  if (status < FD_ERR_INVALID_ARGUMENT || status > FD_ERR_INTERNAL) return "unknown";
  return error_code_name(static_cast<ErrorCode>(status));
}

const char* fd_version(void) { return kVersion; }

const char* fd_class_name(int class_idx) {
  return class_idx == 0 || class_idx == 1 ? kClassNames[class_idx] : nullptr;
}

void fd_pipeline_config_default(fd_pipeline_config* cfg) {
  if (!cfg) return;
  const PipelineConfig p;
  *cfg = {p.clahe.tile_rows, p.clahe.tile_cols,  p.clahe.clip_factor, p.canny.gaussian_sigma,
          p.canny.low_frac,  p.canny.high_frac,  p.target_width,       p.target_height};
}

fd_status fd_preprocess_file(const char* image_path, const fd_pipeline_config* cfg, const char* out_dir,
                             fd_preprocess_result* out) {
  return guarded([&] {
    require(image_path, "image_path");
    require(out_dir, "out_dir");
    const PipelineOutput r = run_pipeline(read_image(image_path), pipeline_from(cfg));
    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    write_image(dir / "resized.png", r.resized);
    write_image(dir / "enhanced.png", r.enhanced);
    write_image(dir / "mask.png", r.mask);
    write_image(dir / "edges.png", r.edges);
    write_image(dir / "triptych.png", triptych(r));
    if (out) *out = {r.otsu_threshold.value_or(-1), r.degenerate_histogram ? 1 : 0};
  });
}

fd_status fd_arch_vgg19(const uint32_t* head, size_t head_len, int global_pool, fd_arch** out) {
  return guarded([&] {
    require(out, "out");
    if (head_len > 0) require(head, "head");
    *out = new fd_arch{build_vgg19_modified({head, head_len}, global_pool != 0)};
  });
}

fd_status fd_arch_toy(const uint32_t* channels, size_t channels_len, const uint32_t* head, size_t head_len,
                      size_t input_size, fd_arch** out) {
  return guarded([&] {
    require(out, "out");
    if (channels_len > 0) require(channels, "channels");
    if (head_len > 0) require(head, "head");
    *out = new fd_arch{build_toy({channels, channels_len}, {head, head_len}, input_size)};
  });
}

void fd_arch_free(fd_arch* arch) { delete arch; }

size_t fd_arch_layer_count(const fd_arch* arch) { return arch ? arch->spec.layers.size() : 0; }

fd_status fd_arch_layer_info(const fd_arch* arch, size_t layer, fd_layer_info* out) {
  return guarded([&] {
    require(arch, "arch");
    require(out, "out");
    if (layer >= arch->spec.layers.size()) throw_invalid("layer index out of range");
    const Shape s = layer_output_shapes(arch->spec)[layer];
    fd_layer_info info{};
    info.kind = kind_label(arch->spec.layers[layer].kind);
    info.units = arch->spec.layers[layer].units;
    info.out_rank = s.size();
    for (std::size_t i = 0; i < s.size() && i < 3; ++i) info.out_shape[i] = s[i];
    info.params = layer_parameter_count(arch->spec, layer);
    *out = info;
  });
}

uint64_t fd_arch_param_count(const fd_arch* arch) {
  uint64_t n = 0;
  if (guarded([&] {
        require(arch, "arch");
        n = count_parameters(arch->spec);
      }) != FD_OK) {
    return 0;
  }
  return n;
}

size_t fd_arch_input_size(const fd_arch* arch) { return arch ? arch->spec.input[1] : 0; }

void fd_synth_config_default(fd_synth_config* cfg) {
  if (!cfg) return;
  const SyntheticConfig s;
  *cfg = {s.size, s.band_min_width, s.band_max_width, s.crack_thickness, s.crack_amplitude, s.noise_std, s.seed};
}

fd_status fd_dataset_synthetic(const fd_synth_config* cfg, size_t n_per_class, fd_dataset** out) {
  return guarded([&] {
    require(out, "out");
    SyntheticConfig s;
    if (cfg) {
      s = {cfg->size,          cfg->band_min_width, cfg->band_max_width, cfg->crack_thickness,
           cfg->crack_amplitude, cfg->noise_std,      cfg->seed};
    }
    *out = new fd_dataset{generate_synthetic(s, n_per_class)};
  });
}

fd_status fd_dataset_load(const char* root, fd_dataset** out) {
  return guarded([&] {
    require(root, "root");
    require(out, "out");
    *out = new fd_dataset{load_directory(root)};
  });
}

fd_status fd_dataset_save(const fd_dataset* ds, const char* root) {
  return guarded([&] {
    require(ds, "dataset");
    require(root, "root");
    write_dataset(ds->data, root);
  });
}

void fd_dataset_free(fd_dataset* ds) { delete ds; }

size_t fd_dataset_size(const fd_dataset* ds) { return ds ? ds->data.size() : 0; }

size_t fd_dataset_class_count(const fd_dataset* ds, int class_idx) {
  if (!ds || class_idx < 0) return 0;
  const auto counts = ds->data.class_counts();
  return static_cast<std::size_t>(class_idx) < counts.size() ? counts[class_idx] : 0;
}

size_t fd_dataset_warning_count(const fd_dataset* ds) { return ds ? ds->data.warnings.size() : 0; }

const char* fd_dataset_warning(const fd_dataset* ds, size_t i) {
  return ds && i < ds->data.warnings.size() ? ds->data.warnings[i].c_str() : nullptr;
}

void fd_split_ratios_default(fd_split_ratios* r) {
  if (!r) return;
  const SplitRatios s;
  *r = {s.train, s.val, s.test};
}

fd_status fd_split_count(size_t n, const fd_split_ratios* r, size_t counts[3]) {
  return guarded([&] {
    require(counts, "counts");
    const auto c = split_class_count(n, ratios_from(r));
    for (int i = 0; i < 3; ++i) counts[i] = c[i];
  });
}

fd_status fd_dataset_split(const fd_dataset* ds, const fd_split_ratios* r, uint64_t seed, const char* manifest_csv,
                           fd_dataset** train, fd_dataset** val, fd_dataset** test) {
  return guarded([&] {
    require(ds, "dataset");
    DatasetSplit split = stratified_split(ds->data, ratios_from(r), seed);
    if (manifest_csv) write_split_manifest(split, manifest_csv);
    auto a = std::make_unique<fd_dataset>(fd_dataset{std::move(split.train)});
    auto b = std::make_unique<fd_dataset>(fd_dataset{std::move(split.val)});
    auto c = std::make_unique<fd_dataset>(fd_dataset{std::move(split.test)});
    if (train) *train = a.release();
    if (val) *val = b.release();
    if (test) *test = c.release();
  });
}

fd_status fd_model_create(const fd_arch* arch, uint64_t seed, fd_model** out) {
  return guarded([&] {
    require(arch, "arch");
    require(out, "out");
    *out = new fd_model{Model(arch->spec, init_params(arch->spec, seed))};
  });
}

fd_status fd_model_load(const char* path, fd_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new fd_model{load_model(path)};
  });
}

fd_status fd_model_save(const fd_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    save_model(model->model, path);
  });
}

void fd_model_free(fd_model* model) { delete model; }

fd_status fd_model_arch(const fd_model* model, fd_arch** out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = new fd_arch{model->model.spec()};
  });
}

void fd_train_config_default(fd_train_config* cfg) {
  if (!cfg) return;
  const TrainConfig t;
  *cfg = {t.learning_rate, t.batch_size, t.max_epochs, t.patience, t.min_delta, t.seed};
}

fd_status fd_train(fd_model* model, const fd_dataset* train_ds, const fd_dataset* val_ds, const fd_train_config* cfg,
                   const fd_pipeline_config* pipeline, const char* history_csv, fd_epoch_callback callback, void* user,
                   fd_train_result* out) {
  return guarded([&] {
    require(model, "model");
    require(train_ds, "train");
    require(val_ds, "val");
    TrainConfig tc;
    if (cfg) tc = {cfg->learning_rate, cfg->batch_size, cfg->max_epochs, cfg->patience, cfg->min_delta, cfg->seed};
    const PipelineConfig p = pipeline_for(model->model, pipeline);
    const auto train_t = prepare_tensors(train_ds->data, p);
    const auto val_t = prepare_tensors(val_ds->data, p);
    TrainHooks hooks;
    if (callback) {
      hooks.on_epoch_end = [&](const Model&, const EpochRecord& r) {
        const fd_epoch_record rec{r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy, r.seconds};
        callback(&rec, user);
      };
    }
    const TrainingHistory h = fracdet::train(model->model, train_t, val_t, tc, hooks);
    if (history_csv) write_history_csv(h, history_csv);
    if (out) *out = {h.epochs.size(), h.best_epoch, h.stopped_early ? 1 : 0};
  });
}

fd_status fd_evaluate(const fd_model* model, const fd_dataset* ds, const fd_pipeline_config* pipeline,
                      const char* report_json, const char* roc_csv, fd_metrics* out) {
  return guarded([&] {
    require(model, "model");
    require(ds, "dataset");
    const auto data = prepare_tensors(ds->data, pipeline_for(model->model, pipeline));
    std::vector<std::size_t> labels;
    for (const auto& s : data) labels.push_back(s.label);
    const SampleScores scores = score_samples(model->model, data);
    MetricReport report;
    report.loss = evaluate(model->model, data).loss;
    report.confusion = confusion(labels, scores.predicted);
    report.summary = summarize(report.confusion);
    report.roc = roc_auc(labels, scores.positive);
    if (report_json) {
      const std::string text = fracdet::report_json(report);
      write_file(report_json, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
    }
    if (roc_csv) write_roc_csv(report.roc, roc_csv);
    if (out) {
      fd_metrics m{};
      m.tp = report.confusion.tp;
      m.tn = report.confusion.tn;
      m.fp = report.confusion.fp;
      m.fn = report.confusion.fn;
      m.accuracy = report.summary.accuracy;
      m.has_precision = report.summary.precision.has_value();
      m.has_recall = report.summary.recall.has_value();
      m.has_f1 = report.summary.f1.has_value();
      m.precision = report.summary.precision.value_or(0.0);
      m.recall = report.summary.recall.value_or(0.0);
      m.f1 = report.summary.f1.value_or(0.0);
      m.auc = report.roc.auc;
      m.loss = *report.loss;
      *out = m;
    }
  });
}

fd_status fd_predict_file(const fd_model* model, const char* image_path, const fd_pipeline_config* pipeline,
                          fd_prediction* out) {
  return guarded([&] {
    require(model, "model");
    require(image_path, "image_path");
    require(out, "out");
    const Tensor x = fracdet::model_input(read_image(image_path), pipeline_for(model->model, pipeline));
    *out = prediction_from(forward(model->model, x).probabilities);
  });
}

fd_status fd_explain_file(const fd_model* model, const char* image_path, const fd_pipeline_config* pipeline,
                          int class_idx, double alpha, const char* overlay_png, const char* heatmap_pgm,
                          fd_prediction* out) {
  return guarded([&] {
    require(model, "model");
    require(image_path, "image_path");
    require(overlay_png, "overlay_png");
    if (class_idx < -1 || class_idx > 1) throw_invalid("class index must be -1, 0 or 1");
    const PipelineConfig p = pipeline_for(model->model, pipeline);
    const PipelineOutput pre = run_pipeline(read_image(image_path), p);
    const fd_prediction pred = prediction_from(forward(model->model, pre.model_input).probabilities);
    const std::size_t cls = class_idx < 0 ? static_cast<std::size_t>(pred.class_idx) : class_idx;
    const Heatmap h = grad_cam(model->model, pre.model_input, cls);
    const PixelGrid8 base = resize_bilinear(pre.enhanced, p.target_width, p.target_height);
    write_image(overlay_png, overlay(h, base, alpha));
    if (heatmap_pgm) write_image(heatmap_pgm, heatmap_to_grid(h));
    if (out) *out = pred;
  });
}

void fd_server_config_default(fd_server_config* cfg) {
  if (!cfg) return;
  static const ServiceConfig s;
  cfg->host = s.host.c_str();
  cfg->port = s.port;
  cfg->upload_limit = s.upload_limit;
  cfg->cors_origin = s.cors_origin.c_str();
  cfg->overlay_alpha = s.overlay_alpha;
  fd_pipeline_config_default(&cfg->pipeline);
}

fd_status fd_server_create(const fd_server_config* cfg, fd_server** out) {
  return guarded([&] {
    require(out, "out");
    ServiceConfig s;
    if (cfg) {
      if (cfg->host) s.host = cfg->host;
      s.port = cfg->port;
      s.upload_limit = cfg->upload_limit;
      if (cfg->cors_origin) s.cors_origin = cfg->cors_origin;
      s.overlay_alpha = cfg->overlay_alpha;
      s.pipeline = pipeline_from(&cfg->pipeline);
    }
    if (!(s.overlay_alpha >= 0.0 && s.overlay_alpha <= 1.0)) throw_invalid("overlay alpha must lie in [0, 1]");
    if (s.upload_limit == 0) throw_invalid("upload limit must be positive");
    *out = new fd_server(std::move(s));
  });
}

fd_status fd_server_load_model(fd_server* server, const char* path) {
  return guarded([&] {
    require(server, "server");
    require(path, "path");
    server->service.load_model(path);
  });
}

fd_status fd_server_start(fd_server* server, int* port) {
  return guarded([&] {
    require(server, "server");
    const auto& cfg = server->service.config();
    const int bound = server->http.start(cfg.host, cfg.port);
    if (port) *port = bound;
  });
}

fd_status fd_server_run(fd_server* server, void (*on_bound)(int port, void* user), void* user) {
  return guarded([&] {
    require(server, "server");
    const auto& cfg = server->service.config();
    const int bound = server->http.bind(cfg.host, cfg.port);
    if (on_bound) on_bound(bound, user);
    server->http.listen();
  });
}

void fd_server_stop(fd_server* server) {
  if (server) server->http.stop();
}

void fd_server_free(fd_server* server) { delete server; }

}  // extern "C"
