// SPDX-License-Identifier: Apache-2.0
#include "ocg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace ocg {

namespace {

constexpr char kMagic[8] = {'O', 'C', 'G', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

std::string fnv1a_hex(const std::string& bytes) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, OcgNet<float>& model,
                     const CheckpointMeta& meta) {
  nlohmann::json index = nlohmann::json::array();
  uint64_t offset = 0;
  auto state = model.state();
  for (const auto& s : state) {
    const Tensor<float>& t = s.param != nullptr ? s.param->value() : *s.buffer;
    index.push_back({{"name", s.name}, {"shape", t.shape()}, {"offset", offset}});
    offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
  }
  const ModelConfig& cfg = model.config();
  nlohmann::json header{{"format_version", kCheckpointVersion},
                        {"model", cfg},
                        {"anchors", cfg.anchors},
                        {"normalization", {{"mean", cfg.pixel_mean}, {"std", cfg.pixel_std}}},
                        {"sigma", {{"drone", cfg.sigma_drone}, {"ground", cfg.sigma_ground}}},
                        {"optimizer", meta.optimizer},
                        {"train_classes", meta.train_classes},
                        {"extra", meta.extra},
                        {"tensors", index}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    const uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& s : state) {
      const Tensor<float>& t = s.param != nullptr ? s.param->value() : *s.buffer;
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!out) throw IoError("short write on checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_all(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw VersionError(path.string() + " is not a model checkpoint");
  }
  uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof(len));
  if (16 + len > bytes.size()) throw VersionError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw VersionError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const int version = header.value("format_version", -1);
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint format version " + std::to_string(version) +
                       " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }

  Checkpoint ck;
  ck.config = header.at("model").get<ModelConfig>();
  ck.meta.optimizer = header.value("optimizer", nlohmann::json::object());
  ck.meta.train_classes = header.value("train_classes", std::vector<std::string>{});
  ck.meta.extra = header.value("extra", nlohmann::json::object());
  ck.id = fnv1a_hex(bytes);
  const size_t data_begin = 16 + len;
  for (const auto& entry : header.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    const uint64_t off = entry.at("offset").get<uint64_t>();
    Tensor<float> t(shape);
    const size_t nbytes = static_cast<size_t>(t.numel()) * sizeof(float);
    if (data_begin + off + nbytes > bytes.size()) {
      throw VersionError("checkpoint tensor " + entry.at("name").get<std::string>() +
                         " runs past end of file");
    }
    std::memcpy(t.data(), bytes.data() + data_begin + off, nbytes);
    ck.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
  }
  return ck;
}

void check_compatible(const ModelConfig& expected, const ModelConfig& found) {
  auto layout = [](const ModelConfig& c) {
    nlohmann::json j = c;
    for (const char* k : {"sigma_drone", "sigma_ground", "bn_momentum", "sa_init_scale",
                          "objectness_prior", "drone_size", "ground_size", "satellite_size"}) {
      j.erase(k);
    }
    return j;
  };
  const nlohmann::json a = layout(expected), b = layout(found);
  if (a == b) return;
  std::string diff;
  for (auto it = a.begin(); it != a.end(); ++it) {
    if (!b.contains(it.key()) || b.at(it.key()) != it.value()) {
      diff += (diff.empty() ? "" : ", ") + it.key();
    }
  }
  throw VersionError("checkpoint layout does not match config (differs in: " + diff + ")");
}

void load_into(OcgNet<float>& model, const Checkpoint& ckpt) {
  check_compatible(model.config(), ckpt.config);
  for (auto& s : model.state()) {
    auto it = ckpt.tensors.find(s.name);
    if (it == ckpt.tensors.end()) throw VersionError("checkpoint lacks tensor " + s.name);
    Tensor<float>& dst = s.param != nullptr ? s.param->mutable_value() : *s.buffer;
    if (dst.shape() != it->second.shape()) {
      throw VersionError("checkpoint tensor " + s.name + " has shape " +
                         shape_str(it->second.shape()) + ", model expects " +
                         shape_str(dst.shape()));
    }
    dst = it->second;
  }
}

int64_t load_backbones(OcgNet<float>& model, const Checkpoint& ckpt) {
  int64_t copied = 0;
  for (auto& s : model.state()) {
    if (!s.name.starts_with("query_encoder.") && !s.name.starts_with("reference_encoder.")) continue;
    auto it = ckpt.tensors.find(s.name);
    if (it == ckpt.tensors.end()) continue;
    Tensor<float>& dst = s.param != nullptr ? s.param->mutable_value() : *s.buffer;
    if (dst.shape() != it->second.shape()) {
      throw VersionError("pretrained tensor " + s.name + " has shape " +
                         shape_str(it->second.shape()) + ", model expects " +
                         shape_str(dst.shape()));
    }
    dst = it->second;
    ++copied;
  }
  return copied;
}

}  // namespace ocg
