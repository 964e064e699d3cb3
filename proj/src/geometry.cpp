#include "lanedet/geometry.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "lanedet/errors.hpp"

namespace lanedet {

namespace {

constexpr double kHorizonEps = 1e-12;

double cross(Point2 a, Point2 b, Point2 c) { return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x); }

void reject_collinear(const std::array<Point2, 4>& quad, const char* which) {
    double scale = 0.0;
    for (const auto& p : quad) scale = std::max({scale, std::abs(p.x), std::abs(p.y)});
    const double tol = 1e-9 * std::max(1.0, scale * scale);
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j)
            for (int k = j + 1; k < 4; ++k)
                if (std::abs(cross(quad[i], quad[j], quad[k])) <= tol) {
                    throw SingularSystemError(std::string("degenerate ") + which + " quad: points " + std::to_string(i) +
                                              ", " + std::to_string(j) + ", " + std::to_string(k) + " are collinear");
                }
}

// Gaussian elimination with partial pivoting on an 8x8 system.
std::array<double, 8> solve8(std::array<std::array<double, 9>, 8> a) {
    for (int col = 0; col < 8; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 8; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        if (std::abs(a[pivot][col]) < 1e-12) throw SingularSystemError("singular correspondence system");
        std::swap(a[col], a[pivot]);
        for (int r = 0; r < 8; ++r) {
            if (r == col) continue;
            const double f = a[r][col] / a[col][col];
            if (f == 0.0) continue;
            for (int c = col; c < 9; ++c) a[r][c] -= f * a[col][c];
        }
    }
    std::array<double, 8> x{};
    for (int i = 0; i < 8; ++i) x[i] = a[i][8] / a[i][i];
    return x;
}

}  // namespace

Matrix3 key_transform_matrix(double h) {
    if (!(h > 0.0)) throw ContractError("key transform needs h > 0");
    const double half = h / 2.0;
    return Matrix3{{{0.0, half * half, h * h}, {0.0, half, h}, {1.0, 1.0, 1.0}}};
}

Matrix3 inverse_key_transform_matrix(double h) {
    if (!(h > 0.0)) throw ContractError("key transform needs h > 0");
    const double h2 = h * h;
    // Rows map [k1 k2 k3] back onto [p2 p1 p0] columns: P = K * M^-1.
    return Matrix3{{{2.0 / h2, -3.0 / h, 1.0}, {-4.0 / h2, 4.0 / h, 0.0}, {2.0 / h2, -1.0 / h, 0.0}}};
}

KeyValues params_to_keys(const QuadraticLane& lane, double h) {
    const auto m = key_transform_matrix(h);
    const std::array<double, 3> p{lane.p2, lane.p1, lane.p0};
    std::array<double, 3> k{};
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) k[j] += p[i] * m[i][j];
    return {k[0], k[1], k[2]};
}

QuadraticLane keys_to_params(const KeyValues& keys, double h) {
    const auto inv = inverse_key_transform_matrix(h);
    const std::array<double, 3> k{keys.k1, keys.k2, keys.k3};
    std::array<double, 3> p{};
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) p[j] += k[i] * inv[i][j];
    return {p[0], p[1], p[2]};
}

std::array<double, 3> key_weights_at(double y, double h) {
    const auto inv = inverse_key_transform_matrix(h);
    const std::array<double, 3> mono{y * y, y, 1.0};
    std::array<double, 3> w{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) w[i] += inv[i][j] * mono[j];
    return w;
}

double horizontal_distance(Point2 point, const QuadraticLane& lane) { return std::abs(point.x - lane.x_at(point.y)); }

void validate_lane(const QuadraticLane& lane, double curvature_bound) {
    if (!std::isfinite(lane.p2) || !std::isfinite(lane.p1) || !std::isfinite(lane.p0)) {
        throw ContractError("lane has a non-finite coefficient");
    }
    if (std::abs(lane.p2) > curvature_bound) {
        throw ContractError("lane quadratic coefficient " + std::to_string(lane.p2) + " exceeds bound " +
                            std::to_string(curvature_bound));
    }
}

Homography::Homography() : m_{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}} {}

Homography::Homography(const Matrix3& m) : m_(m) {
    if (std::abs(determinant()) <= 1e-9) throw SingularSystemError("homography is not invertible");
}

Homography Homography::translation(double dx, double dy) { return Homography(Matrix3{{{1, 0, dx}, {0, 1, dy}, {0, 0, 1}}}); }

double Homography::determinant() const {
    const auto& m = m_;
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

Homography Homography::inverse() const {
    const auto& m = m_;
    const double det = determinant();
    Matrix3 inv{};
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
    inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
    inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
    inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
    return Homography(inv);
}

Point2 Homography::apply(Point2 p) const {
    const auto& m = m_;
    const double w = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
    if (std::abs(w) < kHorizonEps) {
        throw HorizonError("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") maps to the horizon");
    }
    return {(m[0][0] * p.x + m[0][1] * p.y + m[0][2]) / w, (m[1][0] * p.x + m[1][1] * p.y + m[1][2]) / w};
}

Point2 warp_point(Point2 p, const Homography& hom) { return hom.apply(p); }

Homography homography_from_correspondences(const std::array<Point2, 4>& src, const std::array<Point2, 4>& dst) {
    reject_collinear(src, "source");
    reject_collinear(dst, "destination");
    std::array<std::array<double, 9>, 8> a{};
    for (int i = 0; i < 4; ++i) {
        const auto [x, y] = src[i];
        const auto [u, v] = dst[i];
        a[2 * i] = {x, y, 1, 0, 0, 0, -u * x, -u * y, u};
        a[2 * i + 1] = {0, 0, 0, x, y, 1, -v * x, -v * y, v};
    }
    const auto h = solve8(a);
    return Homography(Matrix3{{{h[0], h[1], h[2]}, {h[3], h[4], h[5]}, {h[6], h[7], 1.0}}});
}

Tensor ipm_warp(const Tensor& image, const Homography& hom, std::size_t out_h, std::size_t out_w) {
    if (image.rank() != 3) throw DimensionError("ipm_warp: image must be [C,H,W], got " + shape_to_string(image.shape()));
    const std::size_t channels = image.dim(0), h = image.dim(1), w = image.dim(2);
    const Homography back = hom.inverse();
    const auto src = image.data();
    std::vector<double> out(channels * out_h * out_w, 0.0);
    for (std::size_t y = 0; y < out_h; ++y) {
        for (std::size_t x = 0; x < out_w; ++x) {
            Point2 s;
            try {
                s = back.apply({static_cast<double>(x), static_cast<double>(y)});
            } catch (const HorizonError&) {
                continue;
            }
            if (!(s.x >= 0.0 && s.y >= 0.0 && s.x <= static_cast<double>(w - 1) && s.y <= static_cast<double>(h - 1))) continue;
            const auto x0 = static_cast<std::size_t>(std::floor(s.x));
            const auto y0 = static_cast<std::size_t>(std::floor(s.y));
            const double fx = s.x - static_cast<double>(x0);
            const double fy = s.y - static_cast<double>(y0);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const std::size_t y1 = std::min(y0 + 1, h - 1);
            for (std::size_t c = 0; c < channels; ++c) {
                const double* plane = src.data() + c * h * w;
                double v = (1.0 - fx) * (1.0 - fy) * plane[y0 * w + x0];
                if (fx != 0.0) v += fx * (1.0 - fy) * plane[y0 * w + x1];
                if (fy != 0.0) v += (1.0 - fx) * fy * plane[y1 * w + x0];
                if (fx != 0.0 && fy != 0.0) v += fx * fy * plane[y1 * w + x1];
                out[(c * out_h + y) * out_w + x] = v;
            }
        }
    }
    return Tensor(Shape{channels, out_h, out_w}, std::move(out));
}

}  // namespace lanedet
