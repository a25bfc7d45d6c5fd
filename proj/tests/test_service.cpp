#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "fracdet/codec.hpp"
#include "fracdet/data.hpp"
#include "fracdet/service.hpp"
#include "httplib.h"
#include "json.hpp"

using namespace fracdet;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string as_string(const Bytes& b) { return {b.begin(), b.end()}; }

Bytes as_bytes(const std::string& s) { return {s.begin(), s.end()}; }

Model small_model() {
  const std::uint32_t ch[] = {4, 8}, head[] = {8};
  const ArchitectureSpec spec = build_toy(ch, head, 32);
  return Model(spec, init_params(spec, 3));
}

std::string sample_png(int size = 48) {
  SyntheticConfig cfg;
  cfg.size = size;
  return as_string(encode_png(*generate_synthetic(cfg, 1).samples[0].image));
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("fracdet_service_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir_);
    model_path_ = dir_ / "m.fdxm";
    write_file(model_path_, serialize_model(small_model()));
    ServiceConfig cfg;
    cfg.upload_limit = 64 * 1024;
    service_ = std::make_unique<InferenceService>(cfg);
    server_ = std::make_unique<HttpServer>(*service_);
    port_ = server_->start("127.0.0.1", 0);
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }
  void TearDown() override {
    server_->stop();
    fs::remove_all(dir_);
  }

  httplib::Result post(const std::string& path, const std::string& body) {
    return client_->Post(path, body, "application/octet-stream");
  }

  fs::path dir_, model_path_;
  std::unique_ptr<InferenceService> service_;
  std::unique_ptr<HttpServer> server_;
  std::unique_ptr<httplib::Client> client_;
  int port_ = 0;
};

}  // namespace

TEST(Base64, RoundTripAndDigest) {
  for (const std::string s : std::vector<std::string>{"", "a", "ab", "abc", "abcd", std::string("\0\xff\x10", 3)}) {
    EXPECT_EQ(base64_decode(base64_encode(s)), s);
  }
  EXPECT_EQ(base64_encode("hello"), "aGVsbG8=");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_F(ServiceTest, HealthBeforeAndAfterLoad) {
  auto r = client_->Get("/health");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  auto j = json::parse(r->body);
  EXPECT_EQ(j["status"], "ok");
  EXPECT_FALSE(j["loaded"].get<bool>());
  EXPECT_TRUE(j["model_digest"].is_null());

  r = client_->Post("/admin/reload?path=" + model_path_.string(), "", "text/plain");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  j = json::parse(client_->Get("/health")->body);
  EXPECT_TRUE(j["loaded"].get<bool>());
  EXPECT_EQ(j["model_digest"], sha256_hex(as_string(read_file(model_path_))));
  EXPECT_EQ(j["version"], kVersion);
}

TEST_F(ServiceTest, PredictWithoutModelIsUnavailable) {
  auto r = post("/api/predict", sample_png());
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 503);
  EXPECT_TRUE(json::parse(r->body).contains("error"));
}

TEST_F(ServiceTest, PredictBadPayloads) {
  service_->load_model(model_path_);
  auto r = post("/api/predict", "");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 400);
  r = post("/api/predict", "definitely not an image");
  EXPECT_EQ(r->status, 400);
  r = post("/api/predict", std::string(65 * 1024, 'x'));
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 413);
}

TEST_F(ServiceTest, PredictReturnsProbabilitiesAndHeatmap) {
  service_->load_model(model_path_);
  auto r = post("/api/predict?heatmap=true", sample_png());
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200) << r->body;
  const auto j = json::parse(r->body);
  const double pf = j["probabilities"]["fractured"], pn = j["probabilities"]["not_fractured"];
  EXPECT_NEAR(pf + pn, 1.0, 1e-6);
  EXPECT_EQ(j["label"], pf >= pn ? "fractured" : "not fractured");
  EXPECT_DOUBLE_EQ(j["confidence"].get<double>(), std::max(pf, pn));
  EXPECT_EQ(j["schema_version"], kPredictionSchemaVersion);
  EXPECT_GE(j["latency_ms"].get<double>(), 0.0);
  const ColorImage heat = decode_image(as_bytes(base64_decode(j["heatmap"].get<std::string>())));
  EXPECT_EQ(heat.width, 32);
  EXPECT_EQ(heat.height, 32);

  r = post("/api/predict", sample_png());
  EXPECT_FALSE(json::parse(r->body).contains("heatmap"));
}

TEST_F(ServiceTest, MultipartUpload) {
  service_->load_model(model_path_);
  httplib::MultipartFormDataItems items{{"image", sample_png(), "x.png", "image/png"}};
  auto r = client_->Post("/api/predict", items);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200) << r->body;
}

TEST_F(ServiceTest, PreprocessPanelsMatchLibrary) {
  const std::string png = sample_png(64);
  auto r = post("/api/preprocess", png);
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200) << r->body;
  const auto j = json::parse(r->body);
  const PipelineOutput direct = run_pipeline(decode_image(as_bytes(png)), service_->config().pipeline);
  EXPECT_EQ(base64_decode(j["panels"]["original"].get<std::string>()), as_string(encode_png(direct.resized)));
  EXPECT_EQ(base64_decode(j["panels"]["enhanced"].get<std::string>()), as_string(encode_png(direct.enhanced)));
  EXPECT_EQ(base64_decode(j["panels"]["mask"].get<std::string>()), as_string(encode_png(direct.mask)));
  EXPECT_EQ(base64_decode(j["panels"]["edges"].get<std::string>()), as_string(encode_png(direct.edges)));
  EXPECT_FALSE(j["degenerate"].get<bool>());
  EXPECT_EQ(j["otsu_threshold"], *direct.otsu_threshold);
}

TEST_F(ServiceTest, PreprocessConstantImageIsDegenerate) {
  auto r = post("/api/preprocess", as_string(encode_png(PixelGrid8(40, 40, 77))));
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200);
  const auto j = json::parse(r->body);
  EXPECT_TRUE(j["degenerate"].get<bool>());
  EXPECT_TRUE(j["otsu_threshold"].is_null());
}

TEST_F(ServiceTest, UnknownRouteAndCors) {
  auto r = client_->Get("/nope");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 404);
  r = client_->Options("/api/predict");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 204);
  EXPECT_EQ(r->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_NE(r->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);
}

TEST_F(ServiceTest, ReloadErrors) {
  auto r = client_->Post("/admin/reload?path=" + (dir_ / "missing.fdxm").string(), "", "text/plain");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 404);
  write_file(dir_ / "bad.fdxm", as_bytes("FDXMgarbage"));
  r = client_->Post("/admin/reload?path=" + (dir_ / "bad.fdxm").string(), "", "text/plain");
  EXPECT_EQ(r->status, 422);
  EXPECT_FALSE(json::parse(client_->Get("/health")->body)["loaded"].get<bool>());
}
