#include <cmath>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fracdet/fracdet.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRuntime = 3;

int g_verbosity = 1;

int report(fd_status st) {
  if (st == FD_OK) return kExitOk;
  std::fprintf(stderr, "error (%s): %s\n", fd_status_name(st), fd_last_error());
  switch (st) {
    case FD_ERR_INVALID_ARGUMENT:
    case FD_ERR_DECODE:
    case FD_ERR_FORMAT:
    case FD_ERR_DEGENERATE_HISTOGRAM:
    case FD_ERR_IO:
      return kExitData;
    default:
      return kExitRuntime;
  }
}

#define TRY(expr)                       \
  do {                                  \
    const fd_status st_ = (expr);       \
    if (st_ != FD_OK) return report(st_); \
  } while (0)

struct PipelineFlags {
  fd_pipeline_config cfg;
  PipelineFlags() { fd_pipeline_config_default(&cfg); }

  void add(CLI::App* app) {
    app->add_option("--clahe-rows", cfg.clahe_tile_rows, "CLAHE tile rows")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--clahe-cols", cfg.clahe_tile_cols, "CLAHE tile columns")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--clahe-clip", cfg.clahe_clip_factor, "CLAHE clip factor (inf disables clipping)")->capture_default_str();
    app->add_option("--canny-sigma", cfg.canny_sigma, "Gaussian sigma before Sobel")->capture_default_str();
    app->add_option("--canny-low", cfg.canny_low_frac, "weak edge threshold, fraction of max magnitude")->capture_default_str();
    app->add_option("--canny-high", cfg.canny_high_frac, "strong edge threshold, fraction of max magnitude")->capture_default_str();
  }
};

struct ArchFlags {
  std::string arch = "vgg19";
  std::vector<uint32_t> head{128};
  std::vector<uint32_t> channels{8, 16, 32};
  size_t input_size = 64;
  bool gap = false;

  void add(CLI::App* app) {
    app->add_option("--arch", arch, "vgg19 or toy")->check(CLI::IsMember({"vgg19", "toy"}))->capture_default_str();
    app->add_option("--head", head, "hidden Dense widths before the 2-way classifier")->delimiter(',')->capture_default_str();
    app->add_option("--channels", channels, "toy: conv block widths")->delimiter(',')->capture_default_str();
    app->add_option("--input-size", input_size, "toy: square input size")->capture_default_str();
    app->add_flag("--gap", gap, "vgg19: global average pooling instead of Flatten");
  }

  fd_status build(fd_arch** out) const {
    if (arch == "toy") return fd_arch_toy(channels.data(), channels.size(), head.data(), head.size(), input_size, out);
    return fd_arch_vgg19(head.data(), head.size(), gap ? 1 : 0, out);
  }
};

struct SplitFlags {
  fd_split_ratios ratios;
  uint64_t seed = 1;
  SplitFlags() { fd_split_ratios_default(&ratios); }

  void add(CLI::App* app) {
    app->add_option("--train-ratio", ratios.train, "training fraction")->capture_default_str();
    app->add_option("--val-ratio", ratios.val, "validation fraction")->capture_default_str();
    app->add_option("--test-ratio", ratios.test, "test fraction")->capture_default_str();
    app->add_option("--split-seed", seed, "shuffle seed of the stratified split")->capture_default_str();
  }
};

void note(const char* fmt, const std::string& a = {}) {
  if (g_verbosity > 0) std::fprintf(stderr, fmt, a.c_str());
}

void print_metrics(const fd_metrics& m) {
  auto opt = [](int has, double v) {
    char buf[32];
    if (!has) return std::string("undefined");
    std::snprintf(buf, sizeof buf, "%.5f", v);
    return std::string(buf);
  };
  std::printf("tp %llu  tn %llu  fp %llu  fn %llu\n", static_cast<unsigned long long>(m.tp),
              static_cast<unsigned long long>(m.tn), static_cast<unsigned long long>(m.fp),
              static_cast<unsigned long long>(m.fn));
  std::printf("accuracy   %.5f\n", m.accuracy);
  std::printf("precision  %s\n", opt(m.has_precision, m.precision).c_str());
  std::printf("recall     %s\n", opt(m.has_recall, m.recall).c_str());
  std::printf("f1         %s\n", opt(m.has_f1, m.f1).c_str());
  std::printf("auc        %.5f\n", m.auc);
  std::printf("loss       %.6f\n", m.loss);
}

void print_epoch(const fd_epoch_record* r, void*) {
  if (g_verbosity > 0) {
    std::fprintf(stderr, "epoch %3zu  train loss %.5f acc %.4f  val loss %.5f acc %.4f  (%.1fs)\n", r->epoch,
                 r->train_loss, r->train_accuracy, r->val_loss, r->val_accuracy, r->seconds);
  }
}

// Loads a directory dataset, or generates the synthetic one when n > 0.
fd_status load_data(const std::string& dir, size_t synthetic, const fd_synth_config& synth, fd_dataset** out) {
  if (synthetic > 0) return fd_dataset_synthetic(&synth, synthetic, out);
  const fd_status st = fd_dataset_load(dir.c_str(), out);
  if (st == FD_OK) {
    for (size_t i = 0; i < fd_dataset_warning_count(*out); ++i) note("warning: %s\n", fd_dataset_warning(*out, i));
  }
  return st;
}

fd_server* g_server = nullptr;

void on_signal(int) {
  if (g_server) fd_server_stop(g_server);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bone fracture detection: preprocessing, training, evaluation, explanation and serving", "fracdet"};
  app.require_subcommand(1);
  app.set_version_flag("--version", fd_version());
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress progress output");

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "write CLAHE, Otsu and Canny panels for one image");
  std::string pre_in, pre_out = "panels";
  PipelineFlags pre_pipe;
  pre->add_option("input", pre_in, "image file (PGM, PPM, PNG, JPEG)")->required();
  pre->add_option("-o,--out", pre_out, "output directory")->capture_default_str();
  pre->add_option("--size", pre_pipe.cfg.target_width, "resized panel side length")->capture_default_str();
  pre_pipe.add(pre);

  // synth
  auto* syn = app.add_subcommand("synth", "write a synthetic fracture dataset");
  fd_synth_config synth;
  fd_synth_config_default(&synth);
  std::string syn_out;
  size_t syn_n = 1000;
  syn->add_option("-o,--out", syn_out, "output root directory")->required();
  syn->add_option("-n,--per-class", syn_n, "images per class")->capture_default_str();
  syn->add_option("--size", synth.size, "image side length")->capture_default_str();
  syn->add_option("--noise", synth.noise_std, "background noise standard deviation")->capture_default_str();
  syn->add_option("--seed", synth.seed, "generator seed")->capture_default_str();

  // split
  auto* spl = app.add_subcommand("split", "stratified train/val/test split");
  std::vector<size_t> spl_counts;
  std::string spl_data, spl_manifest = "split.csv";
  SplitFlags spl_flags;
  auto* counts_opt = spl->add_option("--counts", spl_counts, "per-class counts; prints the resulting split sizes")
                         ->delimiter(',');
  spl->add_option("--data", spl_data, "dataset root (one subdirectory per class)")->excludes(counts_opt);
  spl->add_option("--manifest", spl_manifest, "manifest CSV (path,label,split)")->capture_default_str();
  spl_flags.add(spl);

  // train
  auto* trn = app.add_subcommand("train", "train a model; writes the model file and history CSV");
  std::string trn_data, trn_model = "model.fdxm", trn_history = "history.csv", trn_manifest;
  size_t trn_synth = 0;
  fd_synth_config trn_synth_cfg;
  fd_synth_config_default(&trn_synth_cfg);
  fd_train_config tcfg;
  fd_train_config_default(&tcfg);
  ArchFlags trn_arch;
  PipelineFlags trn_pipe;
  SplitFlags trn_split;
  trn->add_option("--data", trn_data, "dataset root");
  trn->add_option("--synthetic", trn_synth, "use N synthetic images per class instead of --data");
  trn->add_option("-o,--model", trn_model, "output model file")->capture_default_str();
  trn->add_option("--history", trn_history, "per-epoch history CSV")->capture_default_str();
  trn->add_option("--manifest", trn_manifest, "also write the split manifest here");
  trn->add_option("--lr", tcfg.learning_rate, "Adam learning rate")->capture_default_str();
  trn->add_option("--batch-size", tcfg.batch_size, "batch size")->capture_default_str();
  trn->add_option("--epochs", tcfg.max_epochs, "maximum epochs")->capture_default_str();
  trn->add_option("--patience", tcfg.patience, "early-stopping patience in epochs")->capture_default_str();
  trn->add_option("--seed", tcfg.seed, "initialization and shuffle seed")->capture_default_str();
  trn_arch.add(trn);
  trn_pipe.add(trn);
  trn_split.add(trn);

  // eval
  auto* evl = app.add_subcommand("eval", "evaluate a model; writes a JSON metric report and ROC CSV");
  std::string evl_model, evl_data, evl_report = "report.json", evl_roc = "roc.csv", evl_subset = "test";
  size_t evl_synth = 0;
  fd_synth_config evl_synth_cfg;
  fd_synth_config_default(&evl_synth_cfg);
  PipelineFlags evl_pipe;
  SplitFlags evl_split;
  evl->add_option("-m,--model", evl_model, "model file")->required();
  evl->add_option("--data", evl_data, "dataset root");
  evl->add_option("--synthetic", evl_synth, "use N synthetic images per class instead of --data");
  evl->add_option("--subset", evl_subset, "which split to score")
      ->check(CLI::IsMember({"all", "train", "val", "test"}))
      ->capture_default_str();
  evl->add_option("--report", evl_report, "JSON report path")->capture_default_str();
  evl->add_option("--roc", evl_roc, "ROC CSV path")->capture_default_str();
  evl_pipe.add(evl);
  evl_split.add(evl);

  // explain
  auto* exp = app.add_subcommand("explain", "write Grad-CAM overlay PNGs");
  std::string exp_model, exp_out = "explain";
  std::vector<std::string> exp_images;
  int exp_class = -1;
  double exp_alpha = 0.5;
  bool exp_raw = false;
  PipelineFlags exp_pipe;
  exp->add_option("-m,--model", exp_model, "model file")->required();
  exp->add_option("images", exp_images, "image files")->required();
  exp->add_option("-o,--out", exp_out, "output directory")->capture_default_str();
  exp->add_option("--class", exp_class, "target class (0 fractured, 1 not fractured, -1 predicted)")
      ->check(CLI::Range(-1, 1))
      ->capture_default_str();
  exp->add_option("--alpha", exp_alpha, "overlay opacity")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  exp->add_flag("--raw", exp_raw, "also write the raw heatmap as PGM");
  exp_pipe.add(exp);

  // inspect
  auto* ins = app.add_subcommand("inspect", "print per-layer shapes and parameter counts");
  std::string ins_model;
  ArchFlags ins_arch;
  ins->add_option("-m,--model", ins_model, "inspect a model file instead of an architecture");
  ins_arch.add(ins);

  // serve
  auto* srv = app.add_subcommand("serve", "run the HTTP inference service");
  fd_server_config scfg;
  fd_server_config_default(&scfg);
  std::string srv_model, srv_host = scfg.host, srv_cors = scfg.cors_origin;
  PipelineFlags srv_pipe;
  srv->add_option("-m,--model", srv_model, "model file to load at startup")->envname("FRACDET_MODEL");
  srv->add_option("--host", srv_host, "bind address")->envname("FRACDET_HOST")->capture_default_str();
  srv->add_option("--port", scfg.port, "TCP port (0 picks a free one)")->envname("FRACDET_PORT")->capture_default_str();
  srv->add_option("--upload-limit", scfg.upload_limit, "maximum request body in bytes")
      ->envname("FRACDET_UPLOAD_LIMIT")
      ->capture_default_str();
  srv->add_option("--cors-origin", srv_cors, "Access-Control-Allow-Origin value")
      ->envname("FRACDET_CORS_ORIGIN")
      ->capture_default_str();
  srv->add_option("--alpha", scfg.overlay_alpha, "heatmap overlay opacity")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  srv_pipe.add(srv);

  if (argc < 2) {
    std::fputs(app.help().c_str(), stderr);
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  g_verbosity = quiet ? 0 : 1;

  if (*pre) {
    pre_pipe.cfg.target_height = pre_pipe.cfg.target_width;
    fd_preprocess_result r;
    TRY(fd_preprocess_file(pre_in.c_str(), &pre_pipe.cfg, pre_out.c_str(), &r));
    if (r.degenerate) {
      std::printf("otsu threshold: undefined (uniform image, mask left empty)\n");
    } else {
      std::printf("otsu threshold: %d\n", r.otsu_threshold);
    }
    std::printf("panels written to %s\n", pre_out.c_str());
    return kExitOk;
  }

  if (*syn) {
    fd_dataset* ds = nullptr;
    TRY(fd_dataset_synthetic(&synth, syn_n, &ds));
    const fd_status st = fd_dataset_save(ds, syn_out.c_str());
    fd_dataset_free(ds);
    TRY(st);
    std::printf("wrote %zu images per class to %s\n", syn_n, syn_out.c_str());
    return kExitOk;
  }

  if (*spl) {
    if (!spl_counts.empty()) {
      std::printf("%-16s %8s %8s %8s %8s\n", "class", "total", "train", "val", "test");
      size_t tot[4] = {0, 0, 0, 0};
      for (size_t c = 0; c < spl_counts.size(); ++c) {
        size_t s[3];
        TRY(fd_split_count(spl_counts[c], &spl_flags.ratios, s));
        const std::string name = c < 2 ? fd_class_name(static_cast<int>(c)) : "class " + std::to_string(c);
        std::printf("%-16s %8zu %8zu %8zu %8zu\n", name.c_str(), spl_counts[c], s[0], s[1], s[2]);
        tot[0] += spl_counts[c];
        for (int k = 0; k < 3; ++k) tot[k + 1] += s[k];
      }
      std::printf("%-16s %8zu %8zu %8zu %8zu\n", "total", tot[0], tot[1], tot[2], tot[3]);
      return kExitOk;
    }
    if (spl_data.empty()) {
      std::fprintf(stderr, "split: one of --counts or --data is required\n");
      return kExitUsage;
    }
    fd_dataset *ds = nullptr, *a = nullptr, *b = nullptr, *c = nullptr;
    TRY(load_data(spl_data, 0, synth, &ds));
    const fd_status st = fd_dataset_split(ds, &spl_flags.ratios, spl_flags.seed, spl_manifest.c_str(), &a, &b, &c);
    fd_dataset_free(ds);
    TRY(st);
    std::printf("train %zu  val %zu  test %zu  -> %s\n", fd_dataset_size(a), fd_dataset_size(b), fd_dataset_size(c),
                spl_manifest.c_str());
    fd_dataset_free(a);
    fd_dataset_free(b);
    fd_dataset_free(c);
    return kExitOk;
  }

  if (*trn) {
    if (trn_data.empty() && trn_synth == 0) {
      std::fprintf(stderr, "train: one of --data or --synthetic is required\n");
      return kExitUsage;
    }
    fd_arch* arch = nullptr;
    TRY(trn_arch.build(&arch));
    trn_synth_cfg.size = static_cast<int>(fd_arch_input_size(arch));
    fd_model* model = nullptr;
    fd_status st = fd_model_create(arch, tcfg.seed, &model);
    fd_arch_free(arch);
    TRY(st);
    fd_dataset *ds = nullptr, *tr = nullptr, *va = nullptr;
    st = load_data(trn_data, trn_synth, trn_synth_cfg, &ds);
    if (st == FD_OK) {
      st = fd_dataset_split(ds, &trn_split.ratios, trn_split.seed, trn_manifest.empty() ? nullptr : trn_manifest.c_str(),
                            &tr, &va, nullptr);
    }
    fd_train_result res{};
    if (st == FD_OK) {
      note("training on %s\n", std::to_string(fd_dataset_size(tr)) + " images");
      st = fd_train(model, tr, va, &tcfg, &trn_pipe.cfg, trn_history.c_str(), print_epoch, nullptr, &res);
    }
    if (st == FD_OK) st = fd_model_save(model, trn_model.c_str());
    fd_dataset_free(ds);
    fd_dataset_free(tr);
    fd_dataset_free(va);
    fd_model_free(model);
    TRY(st);
    std::printf("epochs %zu  best epoch %zu  stopped early %s\n", res.epochs_run, res.best_epoch,
                res.stopped_early ? "yes" : "no");
    std::printf("model written to %s, history to %s\n", trn_model.c_str(), trn_history.c_str());
    return kExitOk;
  }

  if (*evl) {
    if (evl_data.empty() && evl_synth == 0) {
      std::fprintf(stderr, "eval: one of --data or --synthetic is required\n");
      return kExitUsage;
    }
    fd_model* model = nullptr;
    TRY(fd_model_load(evl_model.c_str(), &model));
    fd_arch* arch = nullptr;
    fd_status st = fd_model_arch(model, &arch);
    if (st == FD_OK) {
      evl_synth_cfg.size = static_cast<int>(fd_arch_input_size(arch));
      fd_arch_free(arch);
    }
    fd_dataset *ds = nullptr, *parts[3] = {nullptr, nullptr, nullptr};
    if (st == FD_OK) st = load_data(evl_data, evl_synth, evl_synth_cfg, &ds);
    const fd_dataset* target = ds;
    if (st == FD_OK && evl_subset != "all") {
      st = fd_dataset_split(ds, &evl_split.ratios, evl_split.seed, nullptr, &parts[0], &parts[1], &parts[2]);
      target = evl_subset == "train" ? parts[0] : evl_subset == "val" ? parts[1] : parts[2];
    }
    fd_metrics m{};
    if (st == FD_OK) st = fd_evaluate(model, target, &evl_pipe.cfg, evl_report.c_str(), evl_roc.c_str(), &m);
    fd_dataset_free(ds);
    for (auto* p : parts) fd_dataset_free(p);
    fd_model_free(model);
    TRY(st);
    print_metrics(m);
    return kExitOk;
  }

  if (*exp) {
    fd_model* model = nullptr;
    TRY(fd_model_load(exp_model.c_str(), &model));
    std::error_code ec;
    std::filesystem::create_directories(exp_out, ec);
    fd_status st = FD_OK;
    for (const auto& img : exp_images) {
      const std::string stem = std::filesystem::path(img).stem().string();
      const std::string png = (std::filesystem::path(exp_out) / (stem + "_gradcam.png")).string();
      const std::string pgm = (std::filesystem::path(exp_out) / (stem + "_heatmap.pgm")).string();
      fd_prediction p{};
      st = fd_explain_file(model, img.c_str(), &exp_pipe.cfg, exp_class, exp_alpha, png.c_str(),
                           exp_raw ? pgm.c_str() : nullptr, &p);
      if (st != FD_OK) break;
      std::printf("%s  %s  %.4f  -> %s\n", img.c_str(), fd_class_name(p.class_idx), p.confidence, png.c_str());
    }
    fd_model_free(model);
    TRY(st);
    return kExitOk;
  }

  if (*ins) {
    fd_arch* arch = nullptr;
    if (!ins_model.empty()) {
      fd_model* model = nullptr;
      TRY(fd_model_load(ins_model.c_str(), &model));
      const fd_status st = fd_model_arch(model, &arch);
      fd_model_free(model);
      TRY(st);
    } else {
      TRY(ins_arch.build(&arch));
    }
    std::printf("%5s  %-11s %7s  %-16s %14s\n", "layer", "kind", "units", "output", "params");
    for (size_t i = 0; i < fd_arch_layer_count(arch); ++i) {
      fd_layer_info info;
      const fd_status st = fd_arch_layer_info(arch, i, &info);
      if (st != FD_OK) {
        fd_arch_free(arch);
        return report(st);
      }
      std::string shape;
      for (size_t d = 0; d < info.out_rank; ++d) shape += (d ? "x" : "") + std::to_string(info.out_shape[d]);
      std::printf("%5zu  %-11s %7u  %-16s %14llu\n", i, info.kind, info.units, shape.c_str(),
                  static_cast<unsigned long long>(info.params));
    }
    std::printf("total parameters: %llu\n", static_cast<unsigned long long>(fd_arch_param_count(arch)));
    fd_arch_free(arch);
    return kExitOk;
  }

  if (*srv) {
    scfg.host = srv_host.c_str();
    scfg.cors_origin = srv_cors.c_str();
    scfg.pipeline = srv_pipe.cfg;
    fd_server* server = nullptr;
    TRY(fd_server_create(&scfg, &server));
    if (!srv_model.empty()) {
      const fd_status st = fd_server_load_model(server, srv_model.c_str());
      if (st != FD_OK) {
        fd_server_free(server);
        return report(st);
      }
    }
    g_server = server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    const fd_status st = fd_server_run(
        server,
        [](int port, void*) {
          std::fprintf(stderr, "listening on port %d\n", port);
        },
        nullptr);
    g_server = nullptr;
    fd_server_free(server);
    TRY(st);
    return kExitOk;
  }
  return kExitUsage;
}
