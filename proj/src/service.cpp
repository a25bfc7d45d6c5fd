#include "fracdet/service.hpp"

#include <chrono>
#include <span>

#include <openssl/evp.h>

#include "fracdet/codec.hpp"
#include "fracdet/error.hpp"
#include "fracdet/gradcam.hpp"
#include "httplib.h"
#include "json.hpp"

namespace fracdet {

namespace {

using nlohmann::json;

HttpResponse json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

HttpResponse error_response(int status, const std::string& reason) {
  return json_response(status, {{"error", reason}, {"status", status}});
}

std::span<const std::uint8_t> as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

std::string png_base64(const Bytes& png) {
  return base64_encode(std::string_view(reinterpret_cast<const char*>(png.data()), png.size()));
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kInternal, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(ErrorCode::kDecode, "base64 input length is not a multiple of 4");
  std::string out(3 * text.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw Error(ErrorCode::kDecode, "malformed base64");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

InferenceService::InferenceService(ServiceConfig cfg) : cfg_(std::move(cfg)) {}

void InferenceService::load_model(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  Model m = deserialize_model(bytes);
  set_model(std::move(m), sha256_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
}

void InferenceService::set_model(Model model, std::string digest) {
  auto next = std::make_shared<const LoadedModel>(LoadedModel{std::move(model), std::move(digest)});
  std::lock_guard lock(mu_);
  model_ = std::move(next);
}

std::shared_ptr<const LoadedModel> InferenceService::current() const {
  std::lock_guard lock(mu_);
  return model_;
}

PipelineConfig InferenceService::pipeline_for(const LoadedModel* m) const {
  PipelineConfig p = cfg_.pipeline;
  if (m) {
    p.target_height = static_cast<int>(m->model.spec().input[1]);
    p.target_width = static_cast<int>(m->model.spec().input[2]);
  }
  return p;
}

std::optional<HttpResponse> InferenceService::check_payload(std::string_view bytes) const {
  if (bytes.empty()) return error_response(400, "empty request body");
  if (bytes.size() > cfg_.upload_limit) {
    return error_response(413, "payload of " + std::to_string(bytes.size()) + " bytes exceeds the limit of " +
                                   std::to_string(cfg_.upload_limit));
  }
  return std::nullopt;
}

HttpResponse InferenceService::predict(std::string_view image_bytes, bool want_heatmap) const {
  const auto start = std::chrono::steady_clock::now();
  if (auto bad = check_payload(image_bytes)) return *bad;
  const auto loaded = current();
  if (!loaded) return error_response(503, "model not loaded");
  const Model& model = loaded->model;
  try {
    const ColorImage img = decode_image(as_bytes(image_bytes));
    const PipelineConfig pcfg = pipeline_for(loaded.get());
    json body;
    if (want_heatmap) {
      const PipelineOutput pre = run_pipeline(img, pcfg);
      const std::size_t layer = last_conv_layer(model.spec());
      const ClassScoreGradient probe = class_score_gradient(model, pre.model_input, 0, layer);
      const std::size_t cls = predicted_class(probe.probabilities);
      Heatmap h = cls == 0 ? grad_cam_from(probe.activation, probe.gradient)
                           : grad_cam(model, pre.model_input, cls, layer);
      const PixelGrid8 base = resize_bilinear(pre.enhanced, pcfg.target_width, pcfg.target_height);
      body["heatmap"] = png_base64(encode_png(overlay(h, base, cfg_.overlay_alpha)));
      body["label"] = kClassNames[cls];
      body["confidence"] = probe.probabilities[cls];
      body["probabilities"] = {{"fractured", probe.probabilities[0]}, {"not_fractured", probe.probabilities[1]}};
    } else {
      const ForwardResult r = forward(model, model_input(img, pcfg));
      const std::size_t cls = predicted_class(r.probabilities);
      body["label"] = kClassNames[cls];
      body["confidence"] = r.probabilities[cls];
      body["probabilities"] = {{"fractured", r.probabilities[0]}, {"not_fractured", r.probabilities[1]}};
    }
    body["schema_version"] = kPredictionSchemaVersion;
    body["latency_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return json_response(200, body);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kDecode || e.code() == ErrorCode::kInvalidArgument) {
      return error_response(400, e.what());
    }
    return error_response(500, e.what());
  }
}

HttpResponse InferenceService::preprocess(std::string_view image_bytes) const {
  if (auto bad = check_payload(image_bytes)) return *bad;
  const auto loaded = current();
  try {
    const ColorImage img = decode_image(as_bytes(image_bytes));
    const PipelineOutput out = run_pipeline(img, pipeline_for(loaded.get()));
    json body;
    body["degenerate"] = out.degenerate_histogram;
    body["otsu_threshold"] = out.otsu_threshold ? json(*out.otsu_threshold) : json(nullptr);
    body["panels"] = {
        {"original", png_base64(encode_png(out.resized))},
        {"enhanced", png_base64(encode_png(out.enhanced))},
        {"mask", png_base64(encode_png(out.mask))},
        {"edges", png_base64(encode_png(out.edges))},
    };
    return json_response(200, body);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kDecode || e.code() == ErrorCode::kInvalidArgument) {
      return error_response(400, e.what());
    }
    return error_response(500, e.what());
  }
}

HttpResponse InferenceService::health() const {
  const auto loaded = current();
  json body;
  body["status"] = "ok";
  body["loaded"] = loaded != nullptr;
  body["model_digest"] = loaded ? json(loaded->digest) : json(nullptr);
  body["version"] = kVersion;
  return json_response(200, body);
}

HttpResponse InferenceService::reload(const std::filesystem::path& path) {
  try {
    load_model(path);
  } catch (const Error& e) {
    return error_response(e.code() == ErrorCode::kIo ? 404 : 422, e.what());
  }
  return health();
}

namespace {

std::string_view upload_payload(const httplib::Request& req) {
  if (!req.is_multipart_form_data()) return req.body;
  for (const char* key : {"image", "file"}) {
    if (auto it = req.files.find(key); it != req.files.end()) return it->second.content;
  }
  for (const auto& [key, file] : req.files) {
    if (!file.content.empty()) return file.content;
  }
  return {};
}

void reply(httplib::Response& res, const HttpResponse& r) {
  res.status = r.status;
  res.set_content(r.body, r.content_type);
}

}  // namespace

HttpServer::HttpServer(InferenceService& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
  const ServiceConfig& cfg = service_.config();
  server_->set_payload_max_length(cfg.upload_limit);
  server_->set_default_headers({{"Access-Control-Allow-Origin", cfg.cors_origin}});
  server_->Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  server_->Post("/api/predict", [this](const httplib::Request& req, httplib::Response& res) {
    const bool heatmap = req.has_param("heatmap") && req.get_param_value("heatmap") == "true";
    reply(res, service_.predict(upload_payload(req), heatmap));
  });
  server_->Post("/api/preprocess", [this](const httplib::Request& req, httplib::Response& res) {
    reply(res, service_.preprocess(upload_payload(req)));
  });
  server_->Get("/health", [this](const httplib::Request&, httplib::Response& res) { reply(res, service_.health()); });
  server_->Post("/admin/reload", [this](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_param("path")) return reply(res, error_response(400, "missing path parameter"));
    reply(res, service_.reload(req.get_param_value("path")));
  });
  server_->set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      res.set_content(json{{"error", httplib::status_message(res.status)}, {"status", res.status}}.dump(),
                      "application/json");
    }
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ < 0) throw Error(ErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port));
  return port_;
}

void HttpServer::listen() { server_->listen_after_bind(); }

int HttpServer::start(const std::string& host, int port) {
  const int bound = bind(host, port);
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void HttpServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace fracdet
