// SPDX-License-Identifier: Apache-2.0
#include "ocg/image_io.hpp"

#include <fstream>
#include <iterator>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace ocg::image {

namespace {

RgbImage from_bgr(const cv::Mat& bgr) {
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  RgbImage out;
  out.height = rgb.rows;
  out.width = rgb.cols;
  out.pixels.assign(rgb.datastart, rgb.dataend);
  return out;
}

cv::Mat to_bgr(const RgbImage& img) {
  cv::Mat rgb(static_cast<int>(img.height), static_cast<int>(img.width), CV_8UC3,
              const_cast<uint8_t*>(img.pixels.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

}  // namespace

RgbImage decode(std::span<const uint8_t> bytes) {
  if (bytes.empty()) throw DecodeError("empty image payload");
  cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<uint8_t*>(bytes.data()));
  cv::Mat bgr;
  try {
    bgr = cv::imdecode(buf, cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw DecodeError(std::string("image decode failed: ") + e.what());
  }
  if (bgr.empty()) throw DecodeError("image bytes are not a decodable PNG or JPEG");
  return from_bgr(bgr);
}

RgbImage read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  }
}

std::vector<uint8_t> encode_png(const RgbImage& img) {
  std::vector<uint8_t> out;
  if (!cv::imencode(".png", to_bgr(img), out)) throw IoError("png encoding failed");
  return out;
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  const auto bytes = encode_png(img);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

RgbImage resize(const RgbImage& img, ImageSize to) {
  if (img.size() == to) return img;
  cv::Mat src(static_cast<int>(img.height), static_cast<int>(img.width), CV_8UC3,
              const_cast<uint8_t*>(img.pixels.data()));
  cv::Mat dst;
  const bool shrink = to.height <= img.height && to.width <= img.width;
  cv::resize(src, dst, cv::Size(static_cast<int>(to.width), static_cast<int>(to.height)), 0, 0,
             shrink ? cv::INTER_AREA : cv::INTER_LINEAR);
  RgbImage out;
  out.height = dst.rows;
  out.width = dst.cols;
  out.pixels.assign(dst.datastart, dst.dataend);
  return out;
}

Tensor<float> to_tensor(const RgbImage& img, const std::array<double, 3>& mean,
                        const std::array<double, 3>& std) {
  const int64_t plane = img.height * img.width;
  Tensor<float> t({3, img.height, img.width});
  for (int64_t c = 0; c < 3; ++c) {
    const double m = mean[static_cast<size_t>(c)];
    const double s = std[static_cast<size_t>(c)];
    for (int64_t i = 0; i < plane; ++i) {
      t[c * plane + i] = static_cast<float>((img.pixels[static_cast<size_t>(3 * i + c)] / 255.0 - m) / s);
    }
  }
  return t;
}

}  // namespace ocg::image
