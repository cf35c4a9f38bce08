#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>

#include "bloch.hpp"
#include "rng.hpp"

namespace qkdsim::channel {

/// Bob's four threshold detectors. Z0/Z1 sit behind the key-basis output of
/// the passive beam splitter, XPlus/XMinus behind the test-basis output.
enum class Detector : int { Z0 = 0, Z1 = 1, XPlus = 2, XMinus = 3 };
inline constexpr std::array<Detector, 4> kDetectors{Detector::Z0, Detector::Z1,
                                                    Detector::XPlus, Detector::XMinus};
inline int idx(Detector d) { return static_cast<int>(d); }

inline const char* name(Detector d) {
    switch (d) {
        case Detector::Z0: return "z0";
        case Detector::Z1: return "z1";
        case Detector::XPlus: return "x_plus";
        default: return "x_minus";
    }
}

/// Measurement axis of each detector on the great circle (degrees).
inline double detector_axis_deg(Detector d) {
    switch (d) {
        case Detector::Z0: return 0.0;
        case Detector::Z1: return 180.0;
        case Detector::XPlus: return 90.0;
        default: return 270.0;
    }
}

struct LinkModel {
    double fiber_length_km = 151.5;
    double attenuation_db_per_km = 0.2;
    double bob_insertion_loss_db = 1.0;
    double detector_efficiency = 0.8;
    double dark_rate_hz = 191.0;
    double dead_time_s = 0.0;
    double repetition_rate_hz = 5e9;
    double p_basis_bob_z = 0.5;
    double misalignment_deg = 0.0;

    void validate() const {
        if (!(fiber_length_km >= 0.0))
            throw std::invalid_argument("fiber length must be non-negative");
        if (!(attenuation_db_per_km > 0.0))
            throw std::invalid_argument("attenuation coefficient must be positive");
        if (!(bob_insertion_loss_db >= 0.0))
            throw std::invalid_argument("insertion loss must be non-negative");
        if (!(detector_efficiency > 0.0 && detector_efficiency <= 1.0))
            throw std::invalid_argument("detector efficiency must lie in (0, 1]");
        if (!(dark_rate_hz >= 0.0)) throw std::invalid_argument("dark rate must be non-negative");
        if (!(dead_time_s >= 0.0)) throw std::invalid_argument("dead time must be non-negative");
        if (!(repetition_rate_hz > 0.0))
            throw std::invalid_argument("repetition rate must be positive");
        if (!(p_basis_bob_z > 0.0 && p_basis_bob_z < 1.0))
            throw std::invalid_argument("Bob's basis probability must lie in (0, 1)");
    }

    double dark_per_gate() const { return dark_rate_hz / repetition_rate_hz; }
    /// Gates a detector stays blocked after a click.
    std::uint64_t dead_gates() const {
        return static_cast<std::uint64_t>(std::ceil(dead_time_s * repetition_rate_hz));
    }
};

/// End-to-end single-photon transmission probability, detector included.
inline double transmittance(const LinkModel& m) {
    m.validate();
    const double loss_db = m.fiber_length_km * m.attenuation_db_per_km + m.bob_insertion_loss_db;
    return std::pow(10.0, -loss_db / 10.0) * m.detector_efficiency;
}

/// Per-gate click probability of each detector for a coherent pulse of mean
/// photon number mu in polarization `state`:
///   p_d = 1 - (1 - p_dark) * exp(-mu * t * p_route(d) * p_proj(d)).
/// The passive beam splitter routes to the Z pair with p_basis_bob_z;
/// misalignment acts as a global rotation before projection. The detectors
/// are statistically independent (coherent light splits into independent
/// Poisson processes), so multi-click patterns follow from these four
/// marginals as independent events.
inline std::array<double, 4> click_probabilities_mixed(const PureState& state, double mu,
                                                       const LinkModel& m,
                                                       double error_mixing) {
    if (!(mu >= 0.0)) throw std::invalid_argument("mean photon number must be non-negative");
    if (!(error_mixing >= 0.0 && error_mixing <= 0.5))
        throw std::invalid_argument("error mixing must lie in [0, 0.5]");
    if (!state.is_pure()) throw std::invalid_argument("click_probabilities requires a pure state");
    const double t = transmittance(m);
    const double p_dark = m.dark_per_gate();
    const PureState rotated = state.rotated_deg(m.misalignment_deg);
    std::array<double, 4> p{};
    for (Detector d : kDetectors) {
        const double p_route =
            (d == Detector::Z0 || d == Detector::Z1) ? m.p_basis_bob_z : 1.0 - m.p_basis_bob_z;
        double p_proj = overlap(rotated, PureState::from_theta_deg(detector_axis_deg(d)));
        // Isotropic error floor: convex mixing of the projection toward an
        // even split of the basis pair (preserves per-basis gain).
        p_proj = (1.0 - 2.0 * error_mixing) * p_proj + error_mixing;
        p[idx(d)] = 1.0 - (1.0 - p_dark) * std::exp(-mu * t * p_route * p_proj);
    }
    return p;
}

inline std::array<double, 4> click_probabilities(const PureState& state, double mu,
                                                 const LinkModel& m) {
    return click_probabilities_mixed(state, mu, m, 0.0);
}

/// Squashing rule: no click maps to nothing, a unique click to its detector,
/// and multi-click gates to a uniformly random firing detector.
inline std::optional<Detector> resolve_click(const std::array<bool, 4>& fired,
                                             std::mt19937_64& rng) {
    int n = 0;
    for (bool f : fired) n += f ? 1 : 0;
    if (n == 0) return std::nullopt;
    int pick = n == 1 ? 0 : static_cast<int>(uniform01(rng) * n);
    if (pick >= n) pick = n - 1;
    for (Detector d : kDetectors) {
        if (!fired[idx(d)]) continue;
        if (pick == 0) return d;
        --pick;
    }
    return std::nullopt; // unreachable
}

} // namespace qkdsim::channel
