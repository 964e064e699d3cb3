#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lanedet/geometry.hpp"

namespace lanedet {

// Flat `key = value` text configuration; '#' starts a comment.
class Config {
public:
    static Config parse(const std::string& text);
    static Config load(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
    std::vector<std::size_t> get_sizes(const std::string& key, const std::vector<std::size_t>& fallback) const;

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

// Four ground-plane correspondences plus the output raster size.
struct IpmConfig {
    std::array<Point2, 4> src{};
    std::array<Point2, 4> dst{};
    std::size_t out_h = 128;
    std::size_t out_w = 256;

    Homography homography() const { return homography_from_correspondences(src, dst); }
};

// Reads `ipm.src`, `ipm.dst` (8 numbers each: x0 y0 ... x3 y3), `ipm.out_h`, `ipm.out_w`.
IpmConfig ipm_config_from(const Config& config);

}  // namespace lanedet
