#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>

#include "fracdet/model.hpp"
#include "fracdet/preprocess.hpp"

namespace httplib {
class Server;
}

namespace fracdet {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kPredictionSchemaVersion = 1;

struct ServiceConfig {
  std::string host = "0.0.0.0";
  int port = 8080;
  std::size_t upload_limit = 10 * 1024 * 1024;
  std::string cors_origin = "*";
  // Target size is taken from the loaded model; this one applies otherwise.
  PipelineConfig pipeline;
  double overlay_alpha = 0.5;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

struct LoadedModel {
  Model model;
  std::string digest;  // SHA-256 of the model file, hex
};

std::string sha256_hex(std::string_view bytes);
std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

// Request handlers independent of the transport. The current model is shared
// immutably; set_model swaps it atomically between requests.
class InferenceService {
 public:
  explicit InferenceService(ServiceConfig cfg = {});

  void load_model(const std::filesystem::path& path);
  void set_model(Model model, std::string digest);
  std::shared_ptr<const LoadedModel> current() const;
  const ServiceConfig& config() const { return cfg_; }

  // JSON {label, confidence, probabilities{fractured, not_fractured},
  // latency_ms, heatmap?, schema_version}. heatmap is a base64 PNG overlay at
  // the model input resolution.
  HttpResponse predict(std::string_view image_bytes, bool heatmap) const;
  // JSON {degenerate, otsu_threshold, panels{original, enhanced, mask, edges}}
  // with base64 PNG panels.
  HttpResponse preprocess(std::string_view image_bytes) const;
  HttpResponse health() const;
  HttpResponse reload(const std::filesystem::path& path);

 private:
  PipelineConfig pipeline_for(const LoadedModel* m) const;
  std::optional<HttpResponse> check_payload(std::string_view bytes) const;

  ServiceConfig cfg_;
  mutable std::mutex mu_;
  std::shared_ptr<const LoadedModel> model_;
};

// HTTP/1.1 front end: POST /api/predict[?heatmap=true], POST /api/preprocess,
// GET /health, POST /admin/reload?path=...
class HttpServer {
 public:
  explicit HttpServer(InferenceService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds host:port (port 0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  // Serves on the calling thread until stop().
  void listen();
  // bind + serve on a background thread.
  int start(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  InferenceService& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace fracdet
