#include "lanedet/config.hpp"

#include <fstream>
#include <sstream>

#include "lanedet/errors.hpp"

namespace lanedet {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<double> split_numbers(const std::string& key, const std::string& text) {
    std::string cleaned = text;
    for (auto& ch : cleaned)
        if (ch == ',' || ch == '[' || ch == ']') ch = ' ';
    std::istringstream is(cleaned);
    std::vector<double> out;
    std::string token;
    while (is >> token) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(token, &used));
            if (used != token.size()) throw std::invalid_argument(token);
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': '" + token + "' is not a number");
        }
    }
    return out;
}

}  // namespace

Config Config::parse(const std::string& text) {
    Config cfg;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

Config Config::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto v = split_numbers(key, it->second);
    if (v.size() != 1) throw ConfigError("config key '" + key + "' expects one number");
    return v[0];
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const double v = get_double(key, 0.0);
    if (v != static_cast<double>(static_cast<std::int64_t>(v))) {
        throw ConfigError("config key '" + key + "' expects an integer");
    }
    return static_cast<std::int64_t>(v);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto& v = it->second;
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "' expects a boolean");
}

std::vector<double> Config::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : split_numbers(key, it->second);
}

std::vector<std::size_t> Config::get_sizes(const std::string& key, const std::vector<std::size_t>& fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::size_t> out;
    for (double v : split_numbers(key, it->second)) {
        if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
            throw ConfigError("config key '" + key + "' expects non-negative integers");
        }
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

IpmConfig ipm_config_from(const Config& config) {
    IpmConfig ipm;
    ipm.out_h = static_cast<std::size_t>(config.get_int("ipm.out_h", 128));
    ipm.out_w = static_cast<std::size_t>(config.get_int("ipm.out_w", 256));
    const double w = static_cast<double>(ipm.out_w), h = static_cast<double>(ipm.out_h);
    const std::vector<double> identity{0, 0, w - 1, 0, w - 1, h - 1, 0, h - 1};
    const auto src = config.get_doubles("ipm.src", identity);
    const auto dst = config.get_doubles("ipm.dst", identity);
    if (src.size() != 8) throw ConfigError("ipm.src needs 8 numbers");
    if (dst.size() != 8) throw ConfigError("ipm.dst needs 8 numbers");
    for (int i = 0; i < 4; ++i) {
        ipm.src[i] = {src[2 * i], src[2 * i + 1]};
        ipm.dst[i] = {dst[2 * i], dst[2 * i + 1]};
    }
    return ipm;
}

}  // namespace lanedet
