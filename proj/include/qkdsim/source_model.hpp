#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bloch.hpp"
#include "rng.hpp"

namespace qkdsim::source {

/// Transmitted state labels. Zero/One span the key (Z) basis, Plus is the
/// single test-basis state of the three-state protocol.
enum class StateLabel : int { Zero = 0, One = 1, Plus = 2 };
enum class IntensityLabel : int { Signal = 0, Decoy = 1 };

inline constexpr std::array<StateLabel, 3> kStates{StateLabel::Zero, StateLabel::One,
                                                   StateLabel::Plus};
inline constexpr std::array<IntensityLabel, 2> kIntensities{IntensityLabel::Signal,
                                                            IntensityLabel::Decoy};

inline int idx(StateLabel j) { return static_cast<int>(j); }
inline int idx(IntensityLabel a) { return static_cast<int>(a); }

inline const char* name(StateLabel j) {
    switch (j) {
        case StateLabel::Zero: return "zero";
        case StateLabel::One: return "one";
        default: return "plus";
    }
}
inline const char* name(IntensityLabel a) {
    return a == IntensityLabel::Signal ? "signal" : "decoy";
}

/// Full transmitter description: average angles, nearest-neighbour state and
/// intensity correlation tables, phase-coherence probability and the emission
/// probabilities of the protocol.
///
/// Angle convention: theta_actual of a pulse with label j after a pulse with
/// label k is theta_avg[j] + delta[j][k] (degrees). Intensity convention:
/// mu_actual of intensity a after intensity b is mu_cond[a][b].
struct SourceProfile {
    std::array<double, 3> theta_avg_deg{0.0, 180.0, 90.0};
    std::array<std::array<double, 3>, 3> delta_deg{};          // [j][prev k]
    std::array<double, 2> mu{0.3, 0.15};                       // [a]
    std::array<std::array<double, 2>, 2> mu_cond{{{0.3, 0.3},  // [a][prev b]
                                                  {0.15, 0.15}}};
    double p_c = 0.0;
    std::array<double, 3> p_state{0.45, 0.45, 0.10};
    std::array<double, 2> p_intensity{0.6, 0.4};

    double theta_actual_deg(StateLabel j, StateLabel prev) const {
        return theta_avg_deg[idx(j)] + delta_deg[idx(j)][idx(prev)];
    }
    double mu_actual(IntensityLabel a, IntensityLabel prev) const {
        return mu_cond[idx(a)][idx(prev)];
    }
    double p_z_alice() const { return p_state[0] + p_state[1]; }

    void validate() const {
        auto check_dist = [](const auto& p, const char* what) {
            double sum = 0.0;
            for (double v : p) {
                if (!(v >= 0.0 && v <= 1.0))
                    throw std::invalid_argument(std::string(what) +
                                                " probabilities must lie in [0, 1]");
                sum += v;
            }
            if (std::abs(sum - 1.0) > 1e-9)
                throw std::invalid_argument(std::string(what) +
                                            " probabilities must sum to 1");
        };
        check_dist(p_state, "state");
        check_dist(p_intensity, "intensity");
        if (!(mu[0] > mu[1] && mu[1] > 0.0))
            throw std::invalid_argument("intensities must satisfy mu(signal) > mu(decoy) > 0");
        for (const auto& row : mu_cond)
            for (double m : row)
                if (!(m > 0.0))
                    throw std::invalid_argument("conditional intensities must be positive");
        if (!(p_c >= 0.0 && p_c <= 1.0))
            throw std::invalid_argument("p_c must lie in [0, 1]");
        for (const auto& row : delta_deg)
            for (double d : row)
                if (!(std::abs(d) <= 90.0))
                    throw std::invalid_argument("|delta| must not exceed 90 degrees");
    }
};

/// Operating point and measured imperfections of the experiment this library
/// models: 5 GHz clock, theta = (8.0, 165.6, 90.0) deg with per-state maximum
/// correlation deviations (6.3, 6.9, 8.0) deg, mu = (0.3, 0.15) with a 3%
/// nearest-neighbour intensity pattern, residual phase coherence 1.9e-3.
///
/// Only the per-state maximum |delta| is published; the default table puts
/// +max after a "zero", -max after a "one" and 0 after a "plus" so the spread
/// is reproduced without inventing a full table. Intensities rise 3% after a
/// decoy pulse and drop 3% after a signal pulse.
inline SourceProfile reference_profile() {
    SourceProfile p;
    p.theta_avg_deg = {8.0, 165.6, 90.0};
    const std::array<double, 3> max_delta{6.3, 6.9, 8.0};
    for (int j = 0; j < 3; ++j) p.delta_deg[j] = {max_delta[j], -max_delta[j], 0.0};
    p.mu = {0.3, 0.15};
    for (int a = 0; a < 2; ++a)
        p.mu_cond[a] = {p.mu[a] * (1.0 - 0.03), p.mu[a] * (1.0 + 0.03)};
    p.p_c = 0.0019;
    p.p_state = {0.45, 0.45, 0.10};
    p.p_intensity = {0.6, 0.4};
    return p;
}

/// Same protocol probabilities and intensities, but a flawless transmitter:
/// exact angles, no correlations, perfect phase randomization.
inline SourceProfile ideal_profile() {
    SourceProfile p;
    p.theta_avg_deg = {0.0, 180.0, 90.0};
    p.mu = {0.3, 0.15};
    for (int a = 0; a < 2; ++a) p.mu_cond[a] = {p.mu[a], p.mu[a]};
    p.p_c = 0.0;
    p.p_state = {0.45, 0.45, 0.10};
    p.p_intensity = {0.6, 0.4};
    return p;
}

struct PulseRecord {
    std::uint64_t index = 0;
    StateLabel state = StateLabel::Zero;
    IntensityLabel intensity = IntensityLabel::Signal;
    double theta_deg = 0.0;
    double mu = 0.0;
    bool coherent_with_prev = false;
};

/// Deterministic pulse generator. Output depends only on (profile, seed,
/// stream_id); the first pulse of a stream carries delta = 0 and no
/// coherence flag, later pulses condition on their immediate predecessor.
class SourceStream {
  public:
    SourceStream(const SourceProfile& profile, std::uint64_t seed, std::uint64_t stream_id = 0)
        : profile_(profile), rng_(make_stream(seed, stream_id)) {
        profile_.validate();
        cdf_state_[0] = profile_.p_state[0];
        cdf_state_[1] = cdf_state_[0] + profile_.p_state[1];
        cdf_state_[2] = 1.0;
    }

    PulseRecord next() {
        PulseRecord r;
        r.index = count_;
        const double us = uniform01(rng_);
        r.state = us < cdf_state_[0]   ? StateLabel::Zero
                  : us < cdf_state_[1] ? StateLabel::One
                                       : StateLabel::Plus;
        r.intensity = uniform01(rng_) < profile_.p_intensity[0] ? IntensityLabel::Signal
                                                                : IntensityLabel::Decoy;
        if (count_ == 0) {
            r.theta_deg = profile_.theta_avg_deg[idx(r.state)];
            r.mu = profile_.mu[idx(r.intensity)];
            r.coherent_with_prev = false;
        } else {
            r.theta_deg = profile_.theta_actual_deg(r.state, prev_state_);
            r.mu = profile_.mu_actual(r.intensity, prev_intensity_);
            r.coherent_with_prev = uniform01(rng_) < profile_.p_c;
        }
        prev_state_ = r.state;
        prev_intensity_ = r.intensity;
        ++count_;
        return r;
    }

    const SourceProfile& profile() const { return profile_; }

  private:
    SourceProfile profile_;
    std::mt19937_64 rng_;
    std::array<double, 3> cdf_state_{};
    StateLabel prev_state_ = StateLabel::Zero;
    IntensityLabel prev_intensity_ = IntensityLabel::Signal;
    std::uint64_t count_ = 0;
};

inline std::vector<PulseRecord> emit_sequence(const SourceProfile& profile, std::uint64_t n,
                                              std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("emit_sequence requires n >= 1");
    SourceStream stream(profile, seed);
    std::vector<PulseRecord> out;
    out.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) out.push_back(stream.next());
    return out;
}

inline PureState conditional_state(const SourceProfile& profile, StateLabel j, StateLabel prev) {
    return PureState::from_theta_deg(profile.theta_actual_deg(j, prev));
}

/// Predecessor-averaged state of label j: the normalized vector sum of the
/// conditional states weighted by the predecessor occurrence probabilities,
/// i.e. the state at the probability-weighted circular mean angle.
inline PureState mean_state(const SourceProfile& profile, StateLabel j) {
    double s1 = 0.0, s3 = 0.0;
    for (StateLabel k : kStates) {
        const double t = deg_to_rad(profile.theta_actual_deg(j, k));
        s1 += profile.p_state[idx(k)] * std::sin(t);
        s3 += profile.p_state[idx(k)] * std::cos(t);
    }
    const double norm = std::sqrt(s1 * s1 + s3 * s3);
    // Cancellation of the conditional states leaves a norm at rounding level,
    // never an exact zero; anything this small has no usable direction.
    if (!(norm > 1e-9))
        throw std::runtime_error("mean state undefined: conditional states cancel");
    return PureState::from_bloch(s1 / norm, 0.0, s3 / norm);
}

} // namespace qkdsim::source
