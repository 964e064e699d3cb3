#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lanedet/geometry.hpp"
#include "lanedet/localizer.hpp"
#include "lanedet/tensor.hpp"

namespace lanedet {

struct RgbImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;  // row-major RGB triples

    bool operator==(const RgbImage&) const = default;
};

using Rgb = std::array<std::uint8_t, 3>;
extern const std::array<Rgb, 8> kLanePalette;

// Binary PGM (P5, maxval up to 65535) to [1,h,w] in [0,1].
Tensor read_pgm(const std::string& path);
// Values clamped to [0,1], written as 8-bit or 16-bit big-endian P5.
void write_pgm(const std::string& path, const Tensor& image, bool sixteen_bit = false);

std::vector<std::uint8_t> encode_ppm(const RgbImage& image);
RgbImage decode_ppm(const std::vector<std::uint8_t>& bytes);
void write_ppm(const std::string& path, const RgbImage& image);
RgbImage read_ppm(const std::string& path);

// Grayscale [1,h,w] or [h,w] in [0,1] to RGB, rounding to 8 bits.
RgbImage to_rgb(const Tensor& gray);

// Lane i is drawn in kLanePalette[i % 8] as a 3-pixel-wide polyline over
// rows 0..h-1.
RgbImage render_overlay(const Tensor& gray, const std::vector<QuadraticLane>& lanes);
void render_overlay(const Tensor& gray, const std::vector<QuadraticLane>& lanes, const std::string& path);

// One line per lane: p2 p1 p0 k1 k2 k3 score.
std::string format_lanes(const LanePrediction& lanes);

}  // namespace lanedet
