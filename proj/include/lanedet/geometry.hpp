#pragma once

#include <array>
#include <cstddef>

#include "lanedet/tensor.hpp"

namespace lanedet {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

// x(y) = p2*y^2 + p1*y + p0 in IPM pixels, y growing downward from the top row.
struct QuadraticLane {
    double p2 = 0.0;
    double p1 = 0.0;
    double p0 = 0.0;

    double x_at(double y) const { return (p2 * y + p1) * y + p0; }

    bool operator==(const QuadraticLane&) const = default;
};

// x of the lane where it crosses y = 0, y = h/2 and y = h.
struct KeyValues {
    double k1 = 0.0;
    double k2 = 0.0;
    double k3 = 0.0;
};

using Matrix3 = std::array<std::array<double, 3>, 3>;

inline constexpr double kDefaultCurvatureBound = 0.01;

// [k1 k2 k3] = [p2 p1 p0] * M with M = [[0, (h/2)^2, h^2], [0, h/2, h], [1, 1, 1]].
Matrix3 key_transform_matrix(double h);
// Closed-form M^-1; exists for every h > 0.
Matrix3 inverse_key_transform_matrix(double h);

KeyValues params_to_keys(const QuadraticLane& lane, double h);
QuadraticLane keys_to_params(const KeyValues& keys, double h);

// Weights w with x(y) = w[0]*k1 + w[1]*k2 + w[2]*k3 (row y of M^-1 applied to
// the monomials). Gives d x(y) / d k directly.
std::array<double, 3> key_weights_at(double y, double h);

double horizontal_distance(Point2 point, const QuadraticLane& lane);

// Throws ContractError when a coefficient is non-finite or |p2| exceeds the bound.
void validate_lane(const QuadraticLane& lane, double curvature_bound = kDefaultCurvatureBound);

// Projective map from front-view pixels to IPM pixels.
class Homography {
public:
    Homography();  // identity
    explicit Homography(const Matrix3& m);

    static Homography translation(double dx, double dy);

    const Matrix3& matrix() const { return m_; }
    double determinant() const;
    Homography inverse() const;

    // Throws HorizonError when the projective w-coordinate vanishes.
    Point2 apply(Point2 p) const;

private:
    Matrix3 m_;
};

Point2 warp_point(Point2 p, const Homography& hom);

// Direct linear transform of four correspondences with h33 fixed to 1.
// Throws SingularSystemError for degenerate quads.
Homography homography_from_correspondences(const std::array<Point2, 4>& src, const std::array<Point2, 4>& dst);

// Inverse-maps every output pixel through `hom` and samples [C,H,W] bilinearly.
// Pixels that land outside the source, or on the horizon, are 0.
Tensor ipm_warp(const Tensor& image, const Homography& hom, std::size_t out_h, std::size_t out_w);

}  // namespace lanedet
