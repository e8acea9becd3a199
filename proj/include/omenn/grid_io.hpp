#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "omenn/tensor.hpp"

// Text float grids and 8-bit PGM/PPM maps.
//
// Grid format (whitespace separated, '#' starts a comment to end of line):
//   omenn-grid 1
//   <rows> <cols> [<height> <width>]
//   <rows * cols values, row-major>
namespace omenn {

struct Grid {
  Tensor values;  // rows x cols
  std::size_t height = 0;
  std::size_t width = 0;
};

Grid parse_grid(const std::string& text, const std::string& source = "<grid>");
Grid read_grid(const std::filesystem::path& path);
std::string format_grid(const Tensor& values, std::size_t height = 0, std::size_t width = 0);
void write_grid(const std::filesystem::path& path, const Tensor& values, std::size_t height = 0,
                std::size_t width = 0);

struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;  // 1 (P5) or 3 (P6)
  std::vector<std::uint8_t> pixels;
};

Image read_pnm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& pixels);

/// Pixel = round(255 * v / max v); an all-zero map stays 0. Values must be >= 0.
std::vector<std::uint8_t> heatmap_pixels(const Tensor& map);

/// Reads an input as tokens x channels. PGM/PPM files are detected by their
/// magic and scaled to [0, 1]; anything else is parsed as a text grid.
Tensor load_input(const std::filesystem::path& path, const Shape2D& expected);

}  // namespace omenn
