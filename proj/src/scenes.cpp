#include "lanedet/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lanedet/binary_io.hpp"
#include "lanedet/errors.hpp"
#include "lanedet/rng.hpp"

namespace lanedet {

namespace {

constexpr int kMaxAttempts = 100;

struct Canvas {
    std::size_t h, w;
    std::vector<double> px;

    void put(long x, long y, double v) {
        if (x < 0 || y < 0 || x >= static_cast<long>(w) || y >= static_cast<long>(h)) return;
        px[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = v;
    }
    void fill_rect(double x0, double y0, double x1, double y1, double v) {
        for (long y = std::lround(std::ceil(y0)); y <= std::lround(std::floor(y1)); ++y)
            for (long x = std::lround(std::ceil(x0)); x <= std::lround(std::floor(x1)); ++x) put(x, y, v);
    }
};

double row_separation(const QuadraticLane& a, const QuadraticLane& b, double h) {
    double best = std::numeric_limits<double>::infinity();
    for (double y = 0; y <= h; y += 1.0) best = std::min(best, std::abs(a.x_at(y) - b.x_at(y)));
    return best;
}

bool inside(const QuadraticLane& lane, const SceneSpec& spec) {
    const double lo = spec.margin, hi = static_cast<double>(spec.width) - 1.0 - spec.margin;
    for (double y = 0; y <= static_cast<double>(spec.height); y += 1.0) {
        const double x = lane.x_at(y);
        if (x < lo || x > hi) return false;
    }
    return true;
}

// Offset of x(y) from the bottom intercept, extremes over the image rows.
std::pair<double, double> offset_range(double p2, double p1, double h) {
    double lo = 0.0, hi = 0.0;
    for (double y = 0; y <= h; y += 1.0) {
        const double off = p2 * (y * y - h * h) + p1 * (y - h);
        lo = std::min(lo, off);
        hi = std::max(hi, off);
    }
    return {lo, hi};
}

// Lane set with a partner lane flag: index of the lane it merges into or
// splits from, or -1.
struct LaneDraft {
    std::vector<QuadraticLane> lanes;
    std::vector<int> partner;
};

bool try_sample_lanes(const SceneSpec& spec, Rng& rng, LaneDraft& out) {
    const double h = static_cast<double>(spec.height);
    const auto n = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(spec.min_lanes), static_cast<std::int64_t>(spec.max_lanes)));
    const bool paired = n >= 2 && rng.bernoulli(spec.merge_split_probability);
    const std::size_t n_base = paired ? n - 1 : n;

    const double c0 = rng.uniform(-spec.max_curvature, spec.max_curvature);
    const double s0 = rng.uniform(-spec.max_slope, spec.max_slope);
    std::vector<double> p2(n_base), p1(n_base);
    double env_lo = 0.0, env_hi = 0.0;
    for (std::size_t i = 0; i < n_base; ++i) {
        p2[i] = std::clamp(c0 + rng.uniform(-0.1, 0.1) * spec.max_curvature, -spec.max_curvature, spec.max_curvature);
        p1[i] = s0 + rng.uniform(-spec.lane_jitter_slope, spec.lane_jitter_slope);
        const auto [lo, hi] = offset_range(p2[i], p1[i], h);
        env_lo = std::min(env_lo, lo);
        env_hi = std::max(env_hi, hi);
    }
    const double lo = spec.margin - env_lo;
    const double hi = static_cast<double>(spec.width) - 1.0 - spec.margin - env_hi;
    const double gap = spec.min_gap + 0.25 * spec.min_gap;
    const double free_span = hi - lo - gap * static_cast<double>(n_base - 1);
    if (free_span < 0) return false;

    // Sorted uniform positions on the reduced span, then spread by the gap.
    std::vector<double> u(n_base);
    for (auto& v : u) v = rng.uniform(0.0, free_span);
    std::sort(u.begin(), u.end());
    out.lanes.clear();
    out.partner.clear();
    for (std::size_t i = 0; i < n_base; ++i) {
        const double k3 = lo + u[i] + gap * static_cast<double>(i);
        const double p0 = k3 - p2[i] * h * h - p1[i] * h;
        out.lanes.push_back({p2[i], p1[i], p0});
        out.partner.push_back(-1);
    }

    if (paired) {
        const auto base_idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n_base) - 1));
        const auto& base = out.lanes[base_idx];
        const bool merge = rng.bernoulli(0.5);
        const double d = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(spec.min_gap, 1.5 * spec.min_gap);
        // Same curvature; the two lanes coincide at the shared end and
        // diverge linearly towards the other.
        QuadraticLane lane = base;
        if (merge) {
            lane.p1 = base.p1 - d / h;
            lane.p0 = base.p0 + d;
        } else {
            lane.p1 = base.p1 + d / h;
        }
        out.lanes.push_back(lane);
        out.partner.push_back(static_cast<int>(base_idx));
    }

    for (std::size_t i = 0; i < out.lanes.size(); ++i) {
        if (!inside(out.lanes[i], spec)) return false;
        for (std::size_t j = 0; j < i; ++j) {
            if (out.partner[i] == static_cast<int>(j) || out.partner[j] == static_cast<int>(i)) continue;
            if (row_separation(out.lanes[i], out.lanes[j], h) < spec.min_gap) return false;
        }
    }
    return true;
}

// True when a box [x0,x1] x [y0,y1] keeps `clearance` px from every lane centre.
bool clear_of_lanes(const std::vector<QuadraticLane>& lanes, double x0, double x1, double y0, double y1,
                    double clearance) {
    for (const auto& lane : lanes) {
        for (double y = std::floor(y0); y <= std::ceil(y1); y += 1.0) {
            const double c = lane.x_at(y);
            if (c >= x0 - clearance && c <= x1 + clearance) return false;
        }
    }
    return true;
}

double lane_intensity(const SceneSpec& spec, Rng& rng) {
    return rng.uniform(spec.lane_intensity_min, spec.lane_intensity_max);
}

void draw_arrow(Canvas& cv, const SceneSpec& spec, const std::vector<QuadraticLane>& lanes, Rng& rng) {
    const double sw = rng.uniform(3.0, 6.0), len = rng.uniform(18.0, 30.0), head = rng.uniform(8.0, 12.0);
    const double half = 1.5 * sw;
    const bool up = rng.bernoulli(0.5);
    const double v = lane_intensity(spec, rng);
    for (int attempt = 0; attempt < 20; ++attempt) {
        const double cx = rng.uniform(half, static_cast<double>(cv.w) - 1 - half);
        const double top = rng.uniform(0.0, static_cast<double>(cv.h) - 1 - len - head);
        if (!clear_of_lanes(lanes, cx - half, cx + half, top, top + len + head, 4.0)) continue;
        const double shaft_top = up ? top + head : top;
        cv.fill_rect(cx - sw / 2, shaft_top, cx + sw / 2, shaft_top + len, v);
        // Triangle head: width shrinks linearly from the base to the tip.
        for (double t = 0; t <= head; t += 1.0) {
            const double y = up ? top + head - t : top + len + t;
            const double hw = half * (1.0 - t / head);
            cv.fill_rect(cx - hw, y, cx + hw, y, v);
        }
        return;
    }
}

void draw_text(Canvas& cv, const SceneSpec& spec, const std::vector<QuadraticLane>& lanes, Rng& rng) {
    const int glyphs = static_cast<int>(rng.uniform_int(2, 4));
    const double gw = 6.0, gh = 9.0, pitch = 8.0;
    const double width = pitch * glyphs;
    const double v = lane_intensity(spec, rng);
    for (int attempt = 0; attempt < 20; ++attempt) {
        const double x0 = rng.uniform(0.0, static_cast<double>(cv.w) - 1 - width);
        const double y0 = rng.uniform(0.0, static_cast<double>(cv.h) - 1 - gh);
        if (!clear_of_lanes(lanes, x0, x0 + width, y0, y0 + gh, 4.0)) continue;
        for (int g = 0; g < glyphs; ++g) {
            const double gx = x0 + pitch * g;
            const int strokes = static_cast<int>(rng.uniform_int(3, 5));
            for (int s = 0; s < strokes; ++s) {
                if (rng.bernoulli(0.5)) {
                    const double y = y0 + std::round(rng.uniform(0.0, gh));
                    cv.fill_rect(gx, y, gx + gw - 1, y + 1, v);
                } else {
                    const double x = gx + std::round(rng.uniform(0.0, gw - 2));
                    cv.fill_rect(x, y0, x + 1, y0 + gh, v);
                }
            }
        }
        return;
    }
}

void draw_vehicle(Canvas& cv, const SceneSpec& spec, const std::vector<QuadraticLane>& lanes, Rng& rng) {
    const double vw = rng.uniform(18.0, 26.0), vh = rng.uniform(34.0, 52.0);
    const double body = rng.uniform(0.05, 0.15), rim = lane_intensity(spec, rng);
    for (int attempt = 0; attempt < 20; ++attempt) {
        const double x0 = rng.uniform(0.0, static_cast<double>(cv.w) - 1 - vw);
        const double y0 = rng.uniform(0.0, static_cast<double>(cv.h) - 1 - vh);
        if (!clear_of_lanes(lanes, x0, x0 + vw, y0, y0 + vh, 3.0)) continue;
        cv.fill_rect(x0, y0, x0 + vw, y0 + vh, rim);
        cv.fill_rect(x0 + 2, y0 + 2, x0 + vw - 2, y0 + vh - 2, body);
        return;
    }
}

}  // namespace

SceneSpec easy_scene_spec() { return SceneSpec{}; }

SceneSpec hard_scene_spec() {
    SceneSpec s;
    s.max_curvature = 0.003;
    s.all_dashed = true;
    s.dash_probability = 1.0;
    s.merge_split_probability = 0.15;
    s.arrows = 3;
    s.text_blobs = 2;
    s.vehicles = 2;
    s.noise_sigma = 0.06;
    s.lane_intensity_min = 0.7;
    return s;
}

SceneSpec scene_spec_from(const Config& c, SceneSpec s) {
    s.height = static_cast<std::size_t>(c.get_int("scene.height", static_cast<std::int64_t>(s.height)));
    s.width = static_cast<std::size_t>(c.get_int("scene.width", static_cast<std::int64_t>(s.width)));
    s.min_lanes = static_cast<std::size_t>(c.get_int("scene.min_lanes", static_cast<std::int64_t>(s.min_lanes)));
    s.max_lanes = static_cast<std::size_t>(c.get_int("scene.max_lanes", static_cast<std::int64_t>(s.max_lanes)));
    s.max_curvature = c.get_double("scene.max_curvature", s.max_curvature);
    s.max_slope = c.get_double("scene.max_slope", s.max_slope);
    s.lane_jitter_slope = c.get_double("scene.lane_jitter_slope", s.lane_jitter_slope);
    s.lane_width_min = c.get_double("scene.lane_width_min", s.lane_width_min);
    s.lane_width_max = c.get_double("scene.lane_width_max", s.lane_width_max);
    s.min_gap = c.get_double("scene.min_gap", s.min_gap);
    s.margin = c.get_double("scene.margin", s.margin);
    s.dash_probability = c.get_double("scene.dash_probability", s.dash_probability);
    s.all_dashed = c.get_bool("scene.all_dashed", s.all_dashed);
    s.dash_period_min = c.get_double("scene.dash_period_min", s.dash_period_min);
    s.dash_period_max = c.get_double("scene.dash_period_max", s.dash_period_max);
    s.dash_duty = c.get_double("scene.dash_duty", s.dash_duty);
    s.merge_split_probability = c.get_double("scene.merge_split_probability", s.merge_split_probability);
    s.arrows = static_cast<std::size_t>(c.get_int("scene.arrows", static_cast<std::int64_t>(s.arrows)));
    s.text_blobs = static_cast<std::size_t>(c.get_int("scene.text_blobs", static_cast<std::int64_t>(s.text_blobs)));
    s.vehicles = static_cast<std::size_t>(c.get_int("scene.vehicles", static_cast<std::int64_t>(s.vehicles)));
    s.noise_sigma = c.get_double("scene.noise_sigma", s.noise_sigma);
    s.background_min = c.get_double("scene.background_min", s.background_min);
    s.background_max = c.get_double("scene.background_max", s.background_max);
    s.lane_intensity_min = c.get_double("scene.lane_intensity_min", s.lane_intensity_min);
    s.lane_intensity_max = c.get_double("scene.lane_intensity_max", s.lane_intensity_max);
    if (s.height == 0 || s.width == 0 || s.height > 65535 || s.width > 65535)
        throw ConfigError("scene size must be in [1, 65535]");
    if (s.min_lanes < 1 || s.min_lanes > s.max_lanes || s.max_lanes > 255)
        throw ConfigError("scene lane count range must satisfy 1 <= min <= max <= 255");
    return s;
}

bool LaneStyle::rendered_at(std::size_t row) const {
    if (!dashed) return true;
    return std::fmod(static_cast<double>(row) + dash_phase, dash_period) < dash_duty * dash_period;
}

Tensor Sample::image_tensor() const {
    return Tensor(Shape{1, height, width}, std::vector<double>(image.begin(), image.end()));
}

Tensor Sample::edge_tensor() const {
    return Tensor(Shape{1, height, width}, std::vector<double>(edges.begin(), edges.end()));
}

std::size_t Sample::positive_count() const {
    return static_cast<std::size_t>(std::count(edges.begin(), edges.end(), std::uint8_t{1}));
}

Sample Sample::as_weak() const {
    Sample s = *this;
    s.weak_count = lanes.size();
    s.lanes.clear();
    s.full_labels = false;
    return s;
}

void sort_lanes_left_to_right(std::vector<QuadraticLane>& lanes, double height) {
    std::stable_sort(lanes.begin(), lanes.end(), [height](const QuadraticLane& a, const QuadraticLane& b) {
        const double a3 = a.x_at(height), b3 = b.x_at(height);
        if (a3 != b3) return a3 < b3;
        return a.p0 < b.p0;
    });
}

GeneratedScene generate_scene_detailed(const SceneSpec& spec, std::uint64_t seed) {
    if (spec.height == 0 || spec.width == 0) throw GenerationError("scene size must be positive");
    if (spec.min_lanes < 1 || spec.min_lanes > spec.max_lanes)
        throw GenerationError("lane count range must satisfy 1 <= min <= max");
    Rng rng(seed);
    const double h = static_cast<double>(spec.height);

    std::vector<QuadraticLane> lanes = spec.fixed_lanes;
    if (lanes.empty()) {
        LaneDraft draft;
        bool ok = false;
        for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) ok = try_sample_lanes(spec, rng, draft);
        if (!ok) {
            throw GenerationError("could not place " + std::to_string(spec.max_lanes) + " lanes with gap " +
                                  std::to_string(spec.min_gap) + " px after " + std::to_string(kMaxAttempts) +
                                  " attempts");
        }
        lanes = std::move(draft.lanes);
    }
    sort_lanes_left_to_right(lanes, h);

    std::vector<LaneStyle> styles;
    std::vector<double> intensity;
    for (std::size_t i = 0; i < lanes.size(); ++i) {
        LaneStyle st;
        st.half_width = rng.uniform(spec.lane_width_min, spec.lane_width_max) / 2.0;
        st.dashed = spec.all_dashed || rng.bernoulli(spec.dash_probability);
        if (st.dashed) {
            st.dash_period = rng.uniform(spec.dash_period_min, spec.dash_period_max);
            st.dash_phase = rng.uniform(0.0, st.dash_period);
            st.dash_duty = spec.dash_duty;
        }
        styles.push_back(st);
        intensity.push_back(lane_intensity(spec, rng));
    }

    Canvas cv{spec.height, spec.width, std::vector<double>(spec.height * spec.width)};
    const double base = rng.uniform(spec.background_min, spec.background_max);
    const double gx = rng.uniform(-0.03, 0.03), gy = rng.uniform(-0.03, 0.03);
    for (std::size_t y = 0; y < spec.height; ++y)
        for (std::size_t x = 0; x < spec.width; ++x)
            cv.px[y * spec.width + x] = base + gx * (static_cast<double>(x) / static_cast<double>(spec.width) - 0.5) +
                                        gy * (static_cast<double>(y) / h - 0.5);

    auto draw_some = [&](std::size_t max_count, auto&& draw) {
        const auto n = rng.uniform_int(0, static_cast<std::int64_t>(max_count));
        for (std::int64_t i = 0; i < n; ++i) draw(cv, spec, lanes, rng);
    };
    draw_some(spec.vehicles, draw_vehicle);
    draw_some(spec.arrows, draw_arrow);
    draw_some(spec.text_blobs, draw_text);

    Sample sample;
    sample.height = spec.height;
    sample.width = spec.width;
    sample.edges.assign(spec.height * spec.width, 0);
    for (std::size_t i = 0; i < lanes.size(); ++i) {
        for (std::size_t y = 0; y < spec.height; ++y) {
            if (!styles[i].rendered_at(y)) continue;
            const double c = lanes[i].x_at(static_cast<double>(y));
            const long left = std::lround(c - styles[i].half_width);
            const long right = std::lround(c + styles[i].half_width);
            for (long x = left; x <= right; ++x) cv.put(x, static_cast<long>(y), intensity[i]);
            for (long x : {left, right}) {
                if (x >= 0 && x < static_cast<long>(spec.width)) sample.edges[y * spec.width + static_cast<std::size_t>(x)] = 1;
            }
        }
    }

    sample.image.resize(cv.px.size());
    for (std::size_t i = 0; i < cv.px.size(); ++i) {
        double z = rng.normal();
        while (std::abs(z) > 3.0) z = rng.normal();
        sample.image[i] = static_cast<float>(std::clamp(cv.px[i] + spec.noise_sigma * z, 0.0, 1.0));
    }
    sample.lanes = lanes;
    sample.weak_count = lanes.size();
    sample.full_labels = true;
    return {std::move(sample), std::move(styles)};
}

Sample generate_scene(const SceneSpec& spec, std::uint64_t seed) {
    return std::move(generate_scene_detailed(spec, seed).sample);
}

std::vector<Sample> generate_dataset(const SceneSpec& spec, std::size_t count, std::uint64_t seed,
                                     std::size_t first_index) {
    std::vector<Sample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scene(spec, Rng::derive_seed(seed, first_index + i)));
    return out;
}

std::vector<std::uint8_t> encode_dataset(const std::vector<Sample>& samples) {
    ByteWriter w;
    w.bytes("LNDS");
    w.u32(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(samples.size()));
    for (const auto& s : samples) {
        if (s.height > 65535 || s.width > 65535) throw ContractError("sample size exceeds u16");
        if (s.image.size() != s.height * s.width || s.edges.size() != s.height * s.width)
            throw DimensionError("sample buffers do not match " + std::to_string(s.height) + "x" + std::to_string(s.width));
        if (s.full_labels && s.lanes.size() != s.weak_count)
            throw ContractError("lane list length differs from lane count");
        if (s.weak_count > 255) throw ContractError("lane count exceeds u8");
        w.u16(static_cast<std::uint16_t>(s.height));
        w.u16(static_cast<std::uint16_t>(s.width));
        for (float v : s.image) w.f32(v);
        std::uint8_t byte = 0;
        std::size_t bit = 0;
        for (auto e : s.edges) {
            if (e) byte |= static_cast<std::uint8_t>(0x80u >> bit);
            if (++bit == 8) {
                w.u8(byte);
                byte = 0;
                bit = 0;
            }
        }
        if (bit) w.u8(byte);
        w.u8(static_cast<std::uint8_t>(s.weak_count));
        w.u8(s.full_labels ? 1 : 0);
        if (s.full_labels) {
            for (const auto& lane : s.lanes) {
                w.f64(lane.p2);
                w.f64(lane.p1);
                w.f64(lane.p0);
            }
        }
    }
    return w.take();
}

std::vector<Sample> decode_dataset(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    if (r.bytes(4, "magic") != "LNDS") throw FormatError("bad dataset magic", 0);
    const auto version = r.u32("version");
    if (version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(version), 4);
    const auto count = r.u32("sample count");
    std::vector<Sample> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        Sample s;
        s.height = r.u16("height");
        s.width = r.u16("width");
        const std::size_t n = s.height * s.width;
        s.image.resize(n);
        for (auto& v : s.image) v = r.f32("image");
        const std::uint8_t* bits = r.raw((n + 7) / 8, "edge bitset");
        s.edges.resize(n);
        for (std::size_t k = 0; k < n; ++k) s.edges[k] = (bits[k / 8] >> (7 - k % 8)) & 1u;
        s.weak_count = r.u8("lane count");
        const std::size_t flag_offset = r.offset();
        const auto flag = r.u8("label flag");
        if (flag > 1) throw FormatError("bad label flag " + std::to_string(flag), flag_offset);
        s.full_labels = flag == 1;
        if (s.full_labels) {
            for (std::size_t k = 0; k < s.weak_count; ++k) {
                QuadraticLane lane;
                lane.p2 = r.f64("lane p2");
                lane.p1 = r.f64("lane p1");
                lane.p0 = r.f64("lane p0");
                s.lanes.push_back(lane);
            }
        }
        out.push_back(std::move(s));
    }
    if (!r.at_end()) throw FormatError("trailing bytes after last sample", r.offset());
    return out;
}

void write_dataset(const std::vector<Sample>& samples, const std::string& path) {
    write_file_bytes(path, encode_dataset(samples));
}

std::vector<Sample> read_dataset(const std::string& path) { return decode_dataset(read_file_bytes(path)); }

}  // namespace lanedet
