#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "psfed/dataset.hpp"

namespace psfed {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

// Minimal PNG support for the dataset layout: 8-bit grayscale,
// non-interlaced. The reader handles all five scanline filters; anything
// else is reported as unreadable.
void write_png(const GrayImage& img, const std::filesystem::path& path);
GrayImage read_png(const std::filesystem::path& path);

// Area-averaging resample (box filter with fractional edge weights).
std::vector<double> resize_area(const std::vector<double>& src, int src_h, int src_w,
                                int dst_h, int dst_w);

struct DirectoryLoadResult {
  std::vector<Sample> samples;
  std::vector<std::string> errors;  // itemized; loading continues past bad files
};

// Layout: <band>/<identity>/<session>_<idx>.png. Pixel values are scaled to
// [0, 1] and images resized to target_size by area averaging. An empty or
// missing directory yields an empty dataset without error.
DirectoryLoadResult load_image_directory(const std::filesystem::path& root,
                                         int target_size = 32);

// One band's subtree: <identity>/<session>_<idx>.png under `dir`.
DirectoryLoadResult load_band_directory(const std::filesystem::path& dir, Band band,
                                        int target_size = 32);

// Writes the generated dataset in the same layout (values quantized to
// 8-bit).
void save_dataset_directory(const FederationDataset& ds,
                            const std::filesystem::path& root);

}  // namespace psfed
