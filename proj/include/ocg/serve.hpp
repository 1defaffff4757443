// SPDX-License-Identifier: Apache-2.0
//
// Click-to-locate HTTP service.
//
//   POST /predict                 PredictRequest -> PredictResponse
//   GET  /health                  {v, status, checkpoint_id, model_params, ...}
//   GET  /samples                 fixture listing for the browser client
//   GET  /image/{sample_id}/{role} raw image bytes, role = query | satellite
//
// Every JSON body carries "v": 1. Errors are {"v", "error"} with 400 for
// malformed requests or undecodable images, 422 for a click outside the
// unit square, 404 for unknown samples and 503 when no model is loaded.
#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "ocg/pipeline.hpp"

namespace ocg::serve {

inline constexpr int kApiVersion = 1;

struct Response {
  int status = 200;
  nlohmann::json body;
};

std::string base64_encode(std::span<const uint8_t> bytes);
/// Throws DecodeError on malformed input.
std::vector<uint8_t> base64_decode(const std::string& text);

/// Heatmap as {"dims": [h, w], "data": [...]} or, in binary mode,
/// {"dims", "encoding": "f32le-base64", "data": "<base64>"}.
nlohmann::json heatmap_payload(const Tensor<float>& t, bool binary);
Tensor<float> heatmap_from_payload(const nlohmann::json& j);

/// Normalized click to source pixels; 1.0 maps onto the last pixel.
gkt::ClickPoint denormalize_click(double x, double y, ImageSize image);

/// Request handling independent of the transport.
class Service {
 public:
  Service() = default;
  /// Throws VersionError or IoError if the checkpoint cannot be used.
  void load_checkpoint(const std::filesystem::path& path);
  void set_manifest(const std::filesystem::path& path);
  bool has_model() const;

  Response predict(const std::string& body) const;
  Response predict(const nlohmann::json& request) const;
  Response health() const;
  Response samples() const;
  /// Raw bytes and content type, or nullopt when unknown.
  std::optional<std::pair<std::string, std::string>> image(const std::string& sample_id,
                                                           const std::string& role) const;

  /// Mean forward latency over `runs` requests after one warm-up call.
  double measure_latency(const nlohmann::json& request, int runs = 100);

 private:
  struct Loaded {
    std::unique_ptr<OcgNet<float>> model;
    std::string checkpoint_id;
    int64_t params = 0;
  };
  std::shared_ptr<Loaded> snapshot() const;

  mutable std::mutex mu_;
  std::shared_ptr<Loaded> loaded_;
  std::optional<data::Manifest> manifest_;
  std::optional<double> latency_ms_;
};

struct ServeConfig {
  std::string host = "0.0.0.0";
  int port = 8080;
  std::string cors_origin = "*";
};

/// Blocks serving requests until stop() is called from another thread.
class Server {
 public:
  Server(Service& service, ServeConfig cfg);
  ~Server();
  /// Binds the port; throws IoError when it is unavailable. Port 0 picks a
  /// free port, returned here.
  int bind();
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ocg::serve
