#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lfc/lf_repr.hpp"

namespace lfc::io {

// Planar image with samples normalized to [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  std::vector<double> samples;  // [channel][row][col]
  double at(int c, int r, int k) const {
    return samples[(static_cast<std::size_t>(c) * height + r) * width + k];
  }
  double& at(int c, int r, int k) {
    return samples[(static_cast<std::size_t>(c) * height + r) * width + k];
  }
};

// Binary PGM (P5) / PPM (P6) and PNG, chosen by file extension.
Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& image, int bit_depth = 8);

// Directory of `view_{u}_{v}.<ext>` files; A is inferred from the names.
LightField4D read_sai_dir(const std::filesystem::path& dir);
void write_sai_dir(const std::filesystem::path& dir, const LightField4D& lf,
                   const std::string& extension = "png", int bit_depth = 8);

// Key-value sidecar next to a single MacPI image.
struct Manifest {
  int A = 0;
  int H = 0;
  int W = 0;
  int channels = 0;
  ValueRange range{};
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

// Sidecar path used for a MacPI image: `<image>.manifest`.
std::filesystem::path manifest_path_for(const std::filesystem::path& image);

MacPI read_macpi(const std::filesystem::path& image);
void write_macpi(const std::filesystem::path& image, const MacPI& m, int bit_depth = 8);

}  // namespace lfc::io
