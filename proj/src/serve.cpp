// SPDX-License-Identifier: Apache-2.0
#include "ocg/serve.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iterator>

#include <httplib.h>
#include <openssl/evp.h>

namespace ocg::serve {

std::string base64_encode(std::span<const uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<size_t>(n));
  return out;
}

std::vector<uint8_t> base64_decode(const std::string& text) {
  std::string clean;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) clean += c;
  // Accept data URLs from browsers.
  if (clean.rfind("data:", 0) == 0) {
    const auto comma = clean.find(',');
    if (comma == std::string::npos) throw DecodeError("malformed data URL");
    clean.erase(0, comma + 1);
  }
  if (clean.size() % 4 != 0) throw DecodeError("base64 length is not a multiple of 4");
  std::vector<uint8_t> out(clean.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) throw DecodeError("invalid base64");
  size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<size_t>(n) - pad);
  return out;
}

nlohmann::json heatmap_payload(const Tensor<float>& t, bool binary) {
  nlohmann::json j{{"dims", {t.size(0), t.size(1)}}};
  if (binary) {
    j["encoding"] = "f32le-base64";
    j["data"] = base64_encode(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(t.data()),
                                                       static_cast<size_t>(t.numel()) * 4));
  } else {
    j["data"] = t.storage();
  }
  return j;
}

Tensor<float> heatmap_from_payload(const nlohmann::json& j) {
  const Shape dims = j.at("dims").get<Shape>();
  if (j.value("encoding", "") == "f32le-base64") {
    const auto bytes = base64_decode(j.at("data").get<std::string>());
    Tensor<float> t(dims);
    if (bytes.size() != static_cast<size_t>(t.numel()) * 4) throw DecodeError("payload size mismatch");
    std::memcpy(t.data(), bytes.data(), bytes.size());
    return t;
  }
  return Tensor<float>(dims, j.at("data").get<std::vector<float>>());
}

namespace {

Response error(int status, const std::string& msg) {
  return {status, {{"v", kApiVersion}, {"error", msg}}};
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Box normalized_box(const Box& b, ImageSize size) {
  const double w = static_cast<double>(size.width), h = static_cast<double>(size.height);
  const double x1 = std::clamp(b.x1() / w, 0.0, 1.0), x2 = std::clamp(b.x2() / w, 0.0, 1.0);
  const double y1 = std::clamp(b.y1() / h, 0.0, 1.0), y2 = std::clamp(b.y2() / h, 0.0, 1.0);
  return Box::from_corners(x1, y1, x2, y2);
}

}  // namespace

void Service::load_checkpoint(const std::filesystem::path& path) {
  Checkpoint ck = read_checkpoint(path);
  auto next = std::make_shared<Loaded>();
  next->model = std::make_unique<OcgNet<float>>(ck.config);
  load_into(*next->model, ck);
  next->checkpoint_id = ck.id;
  next->params = next->model->parameter_count();
  std::lock_guard lock(mu_);
  loaded_ = std::move(next);
  latency_ms_.reset();
}

void Service::set_manifest(const std::filesystem::path& path) {
  manifest_ = data::load_manifest(path, {.check_images = false});
}

bool Service::has_model() const { return snapshot() != nullptr; }

std::shared_ptr<Service::Loaded> Service::snapshot() const {
  std::lock_guard lock(mu_);
  return loaded_;
}

Response Service::predict(const std::string& body) const {
  if (body.empty()) return error(400, "empty request body");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    return error(400, "request body is not valid JSON");
  }
  return predict(j);
}

gkt::ClickPoint denormalize_click(double x, double y, ImageSize image) {
  const auto w = static_cast<double>(image.width), h = static_cast<double>(image.height);
  return {std::min(x * w, w - 1.0), std::min(y * h, h - 1.0)};
}

Response Service::predict(const nlohmann::json& req) const {
  const auto t0 = std::chrono::steady_clock::now();
  if (!req.is_object()) return error(400, "request must be a JSON object");
  if (req.contains("v") && req["v"] != kApiVersion) {
    return error(400, "unsupported request version " + req["v"].dump());
  }
  auto loaded = snapshot();
  if (!loaded) return error(503, "no model loaded");
  const ModelConfig& cfg = loaded->model->config();

  const bool has_images = req.contains("query_image") || req.contains("satellite_image");
  const bool has_id = req.contains("sample_id");
  if (has_images == has_id) {
    return error(400, "provide either query_image and satellite_image, or sample_id");
  }
  if (!req.contains("click") || !req["click"].is_array() || req["click"].size() != 2 ||
      !req["click"][0].is_number() || !req["click"][1].is_number()) {
    return error(400, "click must be [x, y] in normalized coordinates");
  }
  const double cx = req["click"][0].get<double>(), cy = req["click"][1].get<double>();
  if (!(cx >= 0.0 && cx <= 1.0 && cy >= 0.0 && cy <= 1.0)) {
    return error(422, "click must lie in the unit square");
  }

  image::RgbImage query, satellite;
  QueryKind kind = QueryKind::kDrone;
  std::optional<Box> gt;
  try {
    if (has_id) {
      if (!manifest_) return error(404, "no sample manifest configured");
      const auto* s = manifest_->find(req["sample_id"].get<std::string>());
      if (s == nullptr) return error(404, "unknown sample_id");
      query = image::read(manifest_->resolve(s->query_path));
      satellite = image::read(manifest_->resolve(s->satellite_path));
      kind = s->query_kind;
    } else {
      if (!req.contains("query_image") || !req.contains("satellite_image")) {
        return error(400, "both query_image and satellite_image are required");
      }
      query = image::decode(base64_decode(req["query_image"].get<std::string>()));
      satellite = image::decode(base64_decode(req["satellite_image"].get<std::string>()));
    }
    if (req.contains("query_kind")) kind = query_kind_from_string(req["query_kind"].get<std::string>());
  } catch (const DecodeError& e) {
    return error(400, e.what());
  } catch (const nlohmann::json::exception& e) {
    return error(400, e.what());
  } catch (const InvalidInput& e) {
    return error(400, e.what());
  }

  data::PreprocessOptions opts;
  if (req.contains("sigma")) {
    if (!req["sigma"].is_number() || !(req["sigma"].get<double>() > 0.0)) {
      return error(422, "sigma must be a positive number");
    }
    opts.sigma_drone = opts.sigma_ground = req["sigma"].get<double>();
  }
  const gkt::ClickPoint click = denormalize_click(cx, cy, query.size());
  const bool with_attention = req.value("return_attention", false);
  const bool binary = req.value("binary", false);

  pipeline::Prediction pred;
  try {
    const auto inputs = data::preprocess_images(query, satellite, kind, click, gt, cfg, opts);
    pred = pipeline::Predictor(*loaded->model).run_one(inputs, with_attention);
  } catch (const Error& e) {
    return error(422, e.what());
  }
  const Box nb = normalized_box(pred.box.box, cfg.satellite_size);
  nlohmann::json body{{"v", kApiVersion},
                      {"bbox", {nb.cx, nb.cy, nb.w, nb.h}},
                      {"score", pred.box.score},
                      {"grid_cell", {pred.box.cell_row, pred.box.cell_col}},
                      {"anchor_index", pred.box.anchor_index},
                      {"query_kind", to_string(kind)},
                      {"checkpoint_id", loaded->checkpoint_id}};
  if (has_id) body["sample_id"] = req["sample_id"];
  if (with_attention) {
    body["attention"] = {{"a_s", heatmap_payload(pred.a_s, binary)},
                         {"f_u_l", heatmap_payload(pred.f_u_l, binary)}};
  }
  body["latency_ms"] =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return {200, body};
}

Response Service::health() const {
  auto loaded = snapshot();
  nlohmann::json body{{"v", kApiVersion}};
  if (!loaded) {
    body["status"] = "no_model";
    body["checkpoint_id"] = nullptr;
    body["model_params"] = 0;
    return {503, body};
  }
  body["status"] = "ok";
  body["checkpoint_id"] = loaded->checkpoint_id;
  body["model_params"] = loaded->params;
  const ModelConfig& cfg = loaded->model->config();
  body["satellite_size"] = cfg.satellite_size;
  body["drone_size"] = cfg.drone_size;
  body["ground_size"] = cfg.ground_size;
  std::lock_guard lock(mu_);
  body["latency_ms_mean"] = latency_ms_ ? nlohmann::json(*latency_ms_) : nlohmann::json(nullptr);
  return {200, body};
}

Response Service::samples() const {
  nlohmann::json list = nlohmann::json::array();
  if (manifest_) {
    for (const auto& s : manifest_->samples) {
      list.push_back({{"sample_id", s.sample_id},
                      {"query_kind", to_string(s.query_kind)},
                      {"class_label", s.class_label},
                      {"split", data::to_string(s.split)},
                      {"query_url", "/image/" + s.sample_id + "/query"},
                      {"satellite_url", "/image/" + s.sample_id + "/satellite"}});
    }
  }
  return {200, {{"v", kApiVersion}, {"samples", list}}};
}

std::optional<std::pair<std::string, std::string>> Service::image(const std::string& sample_id,
                                                                  const std::string& role) const {
  if (!manifest_) return std::nullopt;
  const auto* s = manifest_->find(sample_id);
  if (s == nullptr || (role != "query" && role != "satellite")) return std::nullopt;
  const auto path = manifest_->resolve(role == "query" ? s->query_path : s->satellite_path);
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  const std::string type = ext == ".png" ? "image/png" : "image/jpeg";
  try {
    return std::make_pair(read_file(path), type);
  } catch (const IoError&) {
    return std::nullopt;
  }
}

double Service::measure_latency(const nlohmann::json& request, int runs) {
  if (runs < 1) throw InvalidInput("latency runs must be >= 1");
  Response warm = predict(request);
  if (warm.status != 200) throw InvalidInput("latency request failed: " + warm.body.dump());
  double total = 0.0;
  for (int i = 0; i < runs; ++i) total += predict(request).body.at("latency_ms").get<double>();
  const double mean = total / runs;
  std::lock_guard lock(mu_);
  latency_ms_ = mean;
  return mean;
}

struct Server::Impl {
  Service& service;
  ServeConfig cfg;
  httplib::Server http;
  Impl(Service& s, ServeConfig c) : service(s), cfg(std::move(c)) {}
};

Server::Server(Service& service, ServeConfig cfg)
    : impl_(std::make_unique<Impl>(service, std::move(cfg))) {
  auto& http = impl_->http;
  const std::string origin = impl_->cfg.cors_origin;
  auto send = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  http.set_post_routing_handler([origin](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", origin);
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
  });
  http.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  Service* svc = &impl_->service;
  http.Post("/predict", [svc, send](const httplib::Request& req, httplib::Response& res) {
    send(res, svc->predict(req.body));
  });
  http.Get("/health", [svc, send](const httplib::Request&, httplib::Response& res) {
    send(res, svc->health());
  });
  http.Get("/samples", [svc, send](const httplib::Request&, httplib::Response& res) {
    send(res, svc->samples());
  });
  http.Get(R"(/image/([^/]+)/([^/]+))",
           [svc, send](const httplib::Request& req, httplib::Response& res) {
             auto img = svc->image(req.matches[1], req.matches[2]);
             if (!img) {
               send(res, error(404, "unknown sample or role"));
               return;
             }
             res.set_content(img->first, img->second);
           });
}

Server::~Server() = default;

int Server::bind() {
  auto& http = impl_->http;
  // SO_REUSEPORT would let a second server silently share the port.
  http.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  if (impl_->cfg.port == 0) {
    const int port = http.bind_to_any_port(impl_->cfg.host);
    if (port <= 0) throw IoError("cannot bind " + impl_->cfg.host);
    impl_->cfg.port = port;
    return port;
  }
  if (!http.bind_to_port(impl_->cfg.host, impl_->cfg.port)) {
    throw IoError("cannot bind " + impl_->cfg.host + ":" + std::to_string(impl_->cfg.port) +
                  " (port busy?)");
  }
  return impl_->cfg.port;
}

void Server::run() { impl_->http.listen_after_bind(); }
void Server::stop() { impl_->http.stop(); }

}  // namespace ocg::serve
