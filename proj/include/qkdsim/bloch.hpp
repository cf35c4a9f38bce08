#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace qkdsim {

inline constexpr double kPureNormTolerance = 1e-9;

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// Wraps an angle in degrees to [0, 360).
inline double wrap_deg(double deg) {
    double w = std::fmod(deg, 360.0);
    return w < 0.0 ? w + 360.0 : w;
}

/// Wraps an angle difference in degrees to (-180, 180].
inline double wrap_signed_deg(double deg) {
    double w = std::fmod(deg, 360.0);
    if (w <= -180.0) w += 360.0;
    if (w > 180.0) w -= 360.0;
    return w;
}

/// Qubit state as a point on (or slightly inside) the Poincare sphere.
///
/// Convention: |0> <-> +S3, |1> <-> -S3, |+> <-> +S1, circular <-> S2.
/// States prepared as cos(theta/2)|0> + sin(theta/2)|1> live on the great
/// circle s2 = 0 with Bloch vector (sin theta, 0, cos theta), so theta is the
/// polar angle in the S1-S3 plane.
class PureState {
  public:
    PureState() : s1_(0.0), s2_(0.0), s3_(1.0) {}

    static PureState from_theta_deg(double theta_deg) {
        if (!std::isfinite(theta_deg))
            throw std::invalid_argument("state angle must be finite");
        const double t = deg_to_rad(wrap_deg(theta_deg));
        return PureState(std::sin(t), 0.0, std::cos(t));
    }

    /// Accepts any Bloch vector with norm in (0, 1 + eps]; norms above one by
    /// more than rounding error are rejected.
    static PureState from_bloch(double s1, double s2, double s3) {
        const double norm = std::sqrt(s1 * s1 + s2 * s2 + s3 * s3);
        if (!(norm > 0.0))
            throw std::invalid_argument("Bloch vector must have positive norm");
        if (norm > 1.0 + 1e-6)
            throw std::invalid_argument("Bloch vector norm exceeds 1: " + std::to_string(norm));
        return PureState(s1, s2, s3);
    }

    double s1() const { return s1_; }
    double s2() const { return s2_; }
    double s3() const { return s3_; }

    double bloch_norm() const { return std::sqrt(s1_ * s1_ + s2_ * s2_ + s3_ * s3_); }

    bool is_pure(double tol = kPureNormTolerance) const {
        return std::abs(bloch_norm() - 1.0) <= tol;
    }

    /// Polar angle in the S1-S3 plane, in [0, 360). Ignores any S2 component.
    double theta_deg() const { return wrap_deg(rad_to_deg(std::atan2(s1_, s3_))); }

    double dot(const PureState& other) const {
        return s1_ * other.s1_ + s2_ * other.s2_ + s3_ * other.s3_;
    }

    /// Rotation by `angle_deg` in the S1-S3 plane (|0> toward |+> for
    /// positive angles). S2 is untouched.
    PureState rotated_deg(double angle_deg) const {
        const double a = deg_to_rad(angle_deg);
        const double c = std::cos(a), s = std::sin(a);
        return PureState(c * s1_ + s * s3_, s2_, -s * s1_ + c * s3_);
    }

  private:
    PureState(double s1, double s2, double s3) : s1_(s1), s2_(s2), s3_(s3) {}

    double s1_, s2_, s3_;
};

/// Fidelity |<a|b>|^2 = (1 + a.b)/2. Both states must be pure.
inline double overlap(const PureState& a, const PureState& b) {
    if (!a.is_pure() || !b.is_pure())
        throw std::invalid_argument("overlap requires unit Bloch vectors");
    const double f = 0.5 * (1.0 + a.dot(b));
    return f < 0.0 ? 0.0 : (f > 1.0 ? 1.0 : f);
}

/// Binary entropy in bits, with h(0) = h(1) = 0.
inline double binary_entropy(double p) {
    if (!(p >= 0.0 && p <= 1.0))
        throw std::domain_error("binary_entropy argument outside [0, 1]");
    if (p == 0.0 || p == 1.0) return 0.0;
    return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

/// Raw polarimeter output: total intensity s0 and polarization components,
/// all in the same (arbitrary) linear units.
struct StokesVector {
    double s0 = 0.0;
    double s1 = 0.0;
    double s2 = 0.0;
    double s3 = 0.0;

    double polarized_norm() const { return std::sqrt(s1 * s1 + s2 * s2 + s3 * s3); }

    /// Degree of polarization, in [0, 1] up to measurement noise.
    double dop() const { return s0 > 0.0 ? polarized_norm() / s0 : 0.0; }

    void validate(double rel_tol = 1e-6) const {
        if (!(s0 > 0.0)) throw std::invalid_argument("Stokes s0 must be positive");
        if (polarized_norm() > s0 * (1.0 + rel_tol))
            throw std::invalid_argument("degree of polarization exceeds 1");
    }
};

struct ProjectedState {
    PureState state;
    /// 1 - DOP: fraction of the intensity not carried by the pure direction.
    double depolarization = 0.0;
};

/// Nearest pure state to a (possibly partially polarized) Stokes vector.
inline ProjectedState stokes_to_state(const StokesVector& s) {
    s.validate();
    const double norm = s.polarized_norm();
    if (!(norm > 0.0))
        throw std::invalid_argument("cannot project a fully depolarized Stokes vector");
    ProjectedState out;
    out.state = PureState::from_bloch(s.s1 / norm, s.s2 / norm, s.s3 / norm);
    double dop = norm / s.s0;
    if (dop > 1.0) dop = 1.0;
    out.depolarization = 1.0 - dop;
    return out;
}

} // namespace qkdsim
