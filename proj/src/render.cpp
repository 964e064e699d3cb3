#include "lanedet/render.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

#include "lanedet/binary_io.hpp"
#include "lanedet/errors.hpp"

namespace lanedet {

const std::array<Rgb, 8> kLanePalette{{
    {230, 25, 75},
    {60, 180, 75},
    {0, 130, 200},
    {255, 225, 25},
    {245, 130, 48},
    {145, 30, 180},
    {70, 240, 240},
    {240, 50, 230},
}};

namespace {

struct NetpbmHeader {
    std::string magic;
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t maxval = 0;
    std::size_t data_offset = 0;
};

NetpbmHeader parse_header(const std::vector<std::uint8_t>& bytes) {
    NetpbmHeader h;
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto number = [&](const char* what) {
        skip_space();
        if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw FormatError(std::string("bad ") + what, pos);
        std::size_t v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos++] - '0');
            if (v > 1u << 24) throw FormatError(std::string(what) + " too large", pos);
        }
        return v;
    };
    if (bytes.size() < 2) throw FormatError("truncated image header", 0);
    h.magic.assign(bytes.begin(), bytes.begin() + 2);
    pos = 2;
    h.width = number("width");
    h.height = number("height");
    h.maxval = number("maxval");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("missing separator after header", pos);
    h.data_offset = pos + 1;
    if (h.width == 0 || h.height == 0) throw FormatError("empty image", 0);
    if (h.maxval == 0 || h.maxval > 65535) throw FormatError("maxval out of range", 0);
    return h;
}

void put_pixel(RgbImage& img, long x, long y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= static_cast<long>(img.width) || y >= static_cast<long>(img.height)) return;
    auto* p = img.pixels.data() + (static_cast<std::size_t>(y) * img.width + static_cast<std::size_t>(x)) * 3;
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
}

}  // namespace

Tensor read_pgm(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    const auto h = parse_header(bytes);
    if (h.magic != "P5") throw FormatError("'" + path + "' is not a binary PGM", 0);
    const std::size_t bpp = h.maxval > 255 ? 2 : 1;
    const std::size_t n = h.width * h.height;
    if (bytes.size() - h.data_offset < n * bpp) throw FormatError("truncated PGM pixel data", bytes.size());
    std::vector<double> v(n);
    const double scale = 1.0 / static_cast<double>(h.maxval);
    for (std::size_t i = 0; i < n; ++i) {
        const auto* p = bytes.data() + h.data_offset + i * bpp;
        const unsigned raw = bpp == 2 ? (unsigned{p[0]} << 8) | p[1] : p[0];
        v[i] = std::min(1.0, raw * scale);
    }
    return Tensor(Shape{1, h.height, h.width}, std::move(v));
}

void write_pgm(const std::string& path, const Tensor& image, bool sixteen_bit) {
    const std::size_t rank = image.rank();
    if (rank < 2) throw DimensionError("PGM output needs an [h,w] image");
    const std::size_t hgt = image.dim(rank - 2), wid = image.dim(rank - 1);
    if (image.size() != hgt * wid) throw DimensionError("PGM output needs a single-channel image");
    const unsigned maxval = sixteen_bit ? 65535 : 255;
    std::string header = "P5\n" + std::to_string(wid) + " " + std::to_string(hgt) + "\n" + std::to_string(maxval) + "\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    for (double v : image.data()) {
        const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
        if (sixteen_bit) out.push_back(static_cast<std::uint8_t>(q >> 8));
        out.push_back(static_cast<std::uint8_t>(q & 0xff));
    }
    write_file_bytes(path, out);
}

std::vector<std::uint8_t> encode_ppm(const RgbImage& image) {
    if (image.pixels.size() != image.width * image.height * 3) throw DimensionError("RGB buffer size mismatch");
    std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.pixels.begin(), image.pixels.end());
    return out;
}

RgbImage decode_ppm(const std::vector<std::uint8_t>& bytes) {
    const auto h = parse_header(bytes);
    if (h.magic != "P6") throw FormatError("not a binary PPM", 0);
    if (h.maxval != 255) throw FormatError("only 8-bit PPM is supported", 0);
    RgbImage img{h.height, h.width, {}};
    const std::size_t n = h.width * h.height * 3;
    if (bytes.size() - h.data_offset < n) throw FormatError("truncated PPM pixel data", bytes.size());
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset),
                      bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset + n));
    return img;
}

void write_ppm(const std::string& path, const RgbImage& image) { write_file_bytes(path, encode_ppm(image)); }

RgbImage read_ppm(const std::string& path) { return decode_ppm(read_file_bytes(path)); }

RgbImage to_rgb(const Tensor& gray) {
    const std::size_t rank = gray.rank();
    if (rank < 2 || gray.size() != gray.dim(rank - 2) * gray.dim(rank - 1)) {
        throw DimensionError("overlay needs a single-channel image, got " + shape_to_string(gray.shape()));
    }
    RgbImage img{gray.dim(rank - 2), gray.dim(rank - 1), {}};
    img.pixels.reserve(gray.size() * 3);
    for (double v : gray.data()) {
        const auto q = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        img.pixels.insert(img.pixels.end(), {q, q, q});
    }
    return img;
}

RgbImage render_overlay(const Tensor& gray, const std::vector<QuadraticLane>& lanes) {
    RgbImage img = to_rgb(gray);
    for (std::size_t i = 0; i < lanes.size(); ++i) {
        const auto& lane = lanes[i];
        if (!std::isfinite(lane.p2) || !std::isfinite(lane.p1) || !std::isfinite(lane.p0)) {
            throw ContractError("cannot draw a lane with non-finite coefficients");
        }
        const Rgb& color = kLanePalette[i % kLanePalette.size()];
        for (std::size_t y = 0; y < img.height; ++y) {
            // Segment from row y to row y+1, stepped finely enough to stay connected.
            const double x0 = lane.x_at(static_cast<double>(y));
            const double x1 = y + 1 < img.height ? lane.x_at(static_cast<double>(y + 1)) : x0;
            const double span = std::min(std::abs(x1 - x0), 4.0 * static_cast<double>(img.width));
            const int steps = std::max(1, static_cast<int>(std::ceil(span)));
            for (int s = 0; s <= steps; ++s) {
                const double t = static_cast<double>(s) / steps;
                const long cx = std::lround(x0 + (x1 - x0) * t);
                const long cy = std::lround(static_cast<double>(y) + (y + 1 < img.height ? t : 0.0));
                for (long dy = -1; dy <= 1; ++dy)
                    for (long dx = -1; dx <= 1; ++dx) put_pixel(img, cx + dx, cy + dy, color);
            }
        }
    }
    return img;
}

void render_overlay(const Tensor& gray, const std::vector<QuadraticLane>& lanes, const std::string& path) {
    write_ppm(path, render_overlay(gray, lanes));
}

std::string format_lanes(const LanePrediction& lanes) {
    std::string out;
    char line[512];
    for (const auto& e : lanes) {
        std::snprintf(line, sizeof line, "%.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", e.lane.p2, e.lane.p1,
                      e.lane.p0, e.keys.k1, e.keys.k2, e.keys.k3, e.score);
        out += line;
    }
    return out;
}

}  // namespace lanedet
