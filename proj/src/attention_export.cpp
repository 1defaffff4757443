// SPDX-License-Identifier: Apache-2.0
#include "ocg/attention_export.hpp"

#include <fstream>
#include <regex>

namespace ocg::io {

void write_npy(const std::filesystem::path& path, const Tensor<float>& t) {
  std::string shape = "(";
  for (size_t i = 0; i < t.shape().size(); ++i) {
    shape += std::to_string(t.shape()[i]);
    if (t.shape().size() == 1 || i + 1 < t.shape().size()) shape += ",";
    if (i + 1 < t.shape().size()) shape += " ";
  }
  shape += ")";
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': " + shape + ", }";
  // Magic (6) + version (2) + length (2) + header + newline, padded to 64.
  const size_t total = 10 + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header += '\n';

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write("\x93NUMPY\x01\x00", 8);
  const uint16_t len = static_cast<uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

Tensor<float> read_npy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[10];
  in.read(magic, 10);
  if (!in || std::string(magic, 6) != "\x93NUMPY") throw DecodeError(path.string() + " is not .npy");
  const size_t len = static_cast<uint8_t>(magic[8]) | (static_cast<size_t>(static_cast<uint8_t>(magic[9])) << 8);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (header.find("'<f4'") == std::string::npos || header.find("False") == std::string::npos) {
    throw DecodeError(path.string() + ": only C-order little-endian float32 is supported");
  }
  std::smatch m;
  if (!std::regex_search(header, m, std::regex(R"('shape':\s*\(([^)]*)\))"))) {
    throw DecodeError(path.string() + ": no shape in header");
  }
  Shape shape;
  const std::string dims = m[1];
  const std::regex number(R"(\d+)");
  for (std::sregex_iterator it(dims.begin(), dims.end(), number), end; it != end; ++it) {
    shape.push_back(std::stoll(it->str()));
  }
  Tensor<float> t(shape);
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!in) throw DecodeError(path.string() + ": truncated data");
  return t;
}

std::vector<std::filesystem::path> export_attention(const std::filesystem::path& dir,
                                                    const std::string& sample_id,
                                                    const pipeline::Prediction& p) {
  std::vector<std::filesystem::path> out{dir / (sample_id + "_a_s.npy"),
                                         dir / (sample_id + "_f_u_l.npy"),
                                         dir / (sample_id + "_mhca.npy")};
  write_npy(out[0], p.a_s);
  write_npy(out[1], p.f_u_l);
  write_npy(out[2], p.mhca_weights);
  return out;
}

}  // namespace ocg::io
