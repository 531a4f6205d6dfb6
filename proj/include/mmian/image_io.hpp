#pragma once

// PNG serialization: screenshots as 24-bit RGB, heatmaps and masks as
// single-channel 8-bit.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "mmian/core.hpp"

namespace mmian::io {

namespace fs = std::filesystem;

inline RgbImage read_png_rgb(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot read image " + path.string());
  RgbImage img(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      auto* px = img.pixel(y, x);
      px[0] = row[x][2];
      px[1] = row[x][1];
      px[2] = row[x][0];
    }
  }
  return img;
}

inline void write_png_rgb(const fs::path& path, const RgbImage& img) {
  cv::Mat bgr(img.height(), img.width(), CV_8UC3);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width(); ++x) {
      const auto* px = img.pixel(y, x);
      row[x] = cv::Vec3b(px[2], px[1], px[0]);
    }
  }
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), bgr);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

inline Grid<std::uint8_t> read_png_gray(const fs::path& path) {
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) throw IoError("cannot read image " + path.string());
  Grid<std::uint8_t> out(gray.rows, gray.cols);
  for (int y = 0; y < gray.rows; ++y) {
    const auto* row = gray.ptr<std::uint8_t>(y);
    std::copy(row, row + gray.cols, &out(y, 0));
  }
  return out;
}

inline void write_png_gray(const fs::path& path, const Grid<std::uint8_t>& img) {
  cv::Mat gray(img.rows(), img.cols(), CV_8UC1);
  for (int y = 0; y < img.rows(); ++y) std::copy(&img(y, 0), &img(y, 0) + img.cols(), gray.ptr<std::uint8_t>(y));
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), gray);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

/// Heatmaps are written in grayscale_255 form (converted if needed).
inline void write_heatmap_png(const fs::path& path, const GazeHeatmap& map) {
  const GazeHeatmap gray = to_grayscale(map);
  Grid<std::uint8_t> bytes(gray.values.rows(), gray.values.cols());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<std::uint8_t>(gray.values[i]);
  write_png_gray(path, bytes);
}

inline GazeHeatmap read_heatmap_png(const fs::path& path) {
  const auto bytes = read_png_gray(path);
  GazeHeatmap out{Grid<double>(bytes.rows(), bytes.cols()), Normalization::grayscale_255};
  for (std::size_t i = 0; i < bytes.size(); ++i) out.values[i] = bytes[i];
  return out;
}

/// Masks are stored as 0/255 for viewing; any value above 127 reads back as 1.
inline void write_mask_png(const fs::path& path, const BinaryMask& mask) {
  Grid<std::uint8_t> bytes(mask.values.rows(), mask.values.cols());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.values[i] ? 255 : 0;
  write_png_gray(path, bytes);
}

inline BinaryMask read_mask_png(const fs::path& path, MaskKind kind) {
  const auto bytes = read_png_gray(path);
  BinaryMask out{Grid<std::uint8_t>(bytes.rows(), bytes.cols()), kind};
  for (std::size_t i = 0; i < bytes.size(); ++i) out.values[i] = bytes[i] > 127 ? 1 : 0;
  return out;
}

/// Sorted list of `*.png` files directly inside `dir`.
inline std::vector<fs::path> list_pngs(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace mmian::io
