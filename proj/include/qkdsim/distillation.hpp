#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>

#include "bloch.hpp"
#include "linalg.hpp"
#include "protocol.hpp"
#include "tally.hpp"

namespace qkdsim::distill {

using channel::Detector;
using channel::LinkModel;
using protocol::Basis;
using protocol::TallySet;
using source::IntensityLabel;
using source::SourceProfile;
using source::StateLabel;

struct SecurityParams {
    double eps_sec = 1e-9;
    double eps_corr = 1e-15;

    void validate() const {
        if (!(eps_sec > 0.0 && eps_sec < 1.0) || !(eps_corr > 0.0 && eps_corr < 1.0))
            throw std::invalid_argument("security parameters must lie in (0, 1)");
    }
    /// Failure probability of each individual statistical bound: the secrecy
    /// budget split evenly across the 19 invocations the key-length constant
    /// accounts for.
    double eps1() const { return eps_sec / 19.0; }
};

/// Finite-sample deviation sqrt((n/2) ln(1/eps)).
inline double hoeffding_delta(double n, double eps) {
    if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("epsilon must lie in (0, 1)");
    if (!(n >= 0.0)) throw std::invalid_argument("count must be non-negative");
    return std::sqrt(0.5 * n * std::log(1.0 / eps));
}

/// (n - delta, n + delta) with the lower bound clamped at zero.
inline std::pair<double, double> hoeffding_bounds(double n, double eps) {
    const double d = hoeffding_delta(n, eps);
    return {std::max(0.0, n - d), n + d};
}

/// Probability that a transmitted pulse carries n photons, averaged over the
/// two intensity settings: tau_n = sum_a p_a e^{-mu_a} mu_a^n / n!.
inline double tau_n(const SourceProfile& profile, int n) {
    double t = 0.0;
    for (int a = 0; a < 2; ++a) {
        double pois = std::exp(-profile.mu[a]);
        for (int k = 1; k <= n; ++k) pois *= profile.mu[a] / k;
        t += profile.p_intensity[a] * pois;
    }
    return t;
}

/// Vacuum/single-photon count bounds for one detection class observed at two
/// intensities (the 1-decoy estimates). All quantities are in detection
/// counts of the class; `s0_cap` lets the caller install an additional upper
/// bound on the vacuum count (used with the error-count argument in the key
/// basis).
struct PhotonNumberBounds {
    double s0_lo = 0.0, s0_hi = 0.0;
    double s1_lo = 0.0, s1_hi = 0.0;
    bool insufficient = false;
};

inline PhotonNumberBounds photon_number_bounds(
    double count_signal, double count_decoy, const SourceProfile& profile, double eps,
    double s0_cap = std::numeric_limits<double>::infinity()) {
    if (!(count_signal >= 0.0 && count_decoy >= 0.0))
        throw std::invalid_argument("counts must be non-negative");
    const double mu0 = profile.mu[0], mu1 = profile.mu[1];
    const double p0 = profile.p_intensity[0], p1 = profile.p_intensity[1];
    const double tau0 = tau_n(profile, 0), tau1 = tau_n(profile, 1);

    PhotonNumberBounds b;
    const double total = count_signal + count_decoy;
    if (total <= 0.0) {
        b.s0_hi = std::min(0.0, s0_cap);
        b.insufficient = true;
        return b;
    }
    const double delta = hoeffding_delta(total, eps);
    const double up_sig = (std::exp(mu0) / p0) * (count_signal + delta);
    const double lo_sig = (std::exp(mu0) / p0) * std::max(0.0, count_signal - delta);
    const double up_dec = (std::exp(mu1) / p1) * (count_decoy + delta);
    const double lo_dec = (std::exp(mu1) / p1) * std::max(0.0, count_decoy - delta);

    b.s0_lo = std::max(0.0, tau0 * (mu0 * lo_dec - mu1 * up_sig) / (mu0 - mu1));
    b.s0_hi = std::max(0.0, std::min({tau0 * up_sig, tau0 * up_dec, s0_cap}));
    b.s1_lo = std::max(
        0.0, tau1 * mu0 / (mu1 * (mu0 - mu1)) *
                 (lo_dec - (mu1 * mu1) / (mu0 * mu0) * up_sig -
                  (mu0 * mu0 - mu1 * mu1) / (mu0 * mu0) * (b.s0_hi / tau0)));
    b.s1_hi = std::max({0.0, tau1 * (up_sig - lo_dec) / (mu0 - mu1), b.s1_lo});
    b.insufficient = !(b.s1_lo > 0.0);
    (void)lo_sig;
    return b;
}

struct DecoyBounds {
    double s0_z = 0.0;   // lower bound on vacuum detections in the key basis
    double s1_z = 0.0;   // lower bound on single-photon detections in the key basis
    double v1_x = 0.0;   // upper bound on single-photon errors in the test basis
    bool insufficient = false;
};

/// 1-decoy bounds on the sifted key-basis tallies plus the test-basis
/// single-photon error ceiling. The vacuum upper bound entering s1_z uses
/// both the decoy counts and 2(m_Z + delta): vacuum detections land on the
/// wrong detector half the time, so they cannot exceed twice the error count
/// by more than a fluctuation.
inline DecoyBounds decoy_bounds(const TallySet& t, const SourceProfile& profile,
                                const SecurityParams& sec) {
    profile.validate();
    sec.validate();
    const double eps = sec.eps1();
    const double n_z = t.n(Basis::Z, Basis::Z);
    const double m_z = t.m(Basis::Z, Basis::Z);
    const double cap = 2.0 * (m_z + hoeffding_delta(n_z, eps));
    const auto z = photon_number_bounds(t.n_sifted_z(IntensityLabel::Signal),
                                        t.n_sifted_z(IntensityLabel::Decoy), profile, eps, cap);
    const auto x_err = photon_number_bounds(t.at(StateLabel::Plus, Detector::XMinus,
                                                 IntensityLabel::Signal),
                                            t.at(StateLabel::Plus, Detector::XMinus,
                                                 IntensityLabel::Decoy),
                                            profile, eps);
    DecoyBounds b;
    b.s0_z = z.s0_lo;
    b.s1_z = z.s1_lo;
    b.v1_x = x_err.s1_hi;
    b.insufficient = z.insufficient;
    return b;
}

namespace detail {

struct VirtualPair {
    double p_plus = 0.5, p_minus = 0.5;
    double theta_plus_deg = 90.0, theta_minus_deg = 270.0;
};

/// Virtual key-round states: with the key emitted as sqrt(q0)|phi_0> and
/// sqrt(q1)|phi_1>, a virtual test measurement on the sender's side collapses
/// the line onto (sqrt(q0)|phi_0> +/- sqrt(q1)|phi_1>)/norm with probability
/// norm^2/2. For exact states these are the test-basis eigenstates with
/// probability 1/2 each.
inline VirtualPair virtual_pair(double q0, double q1, double th0_deg, double th1_deg) {
    const double tot = q0 + q1;
    if (!(tot > 0.0)) throw std::invalid_argument("key-state probabilities are zero");
    const double a = std::sqrt(q0 / tot), b = std::sqrt(q1 / tot);
    const double h0 = deg_to_rad(th0_deg) / 2.0, h1 = deg_to_rad(th1_deg) / 2.0;
    VirtualPair v;
    const double cp0 = a * std::cos(h0) + b * std::cos(h1);
    const double cp1 = a * std::sin(h0) + b * std::sin(h1);
    const double cm0 = a * std::cos(h0) - b * std::cos(h1);
    const double cm1 = a * std::sin(h0) - b * std::sin(h1);
    v.p_plus = (cp0 * cp0 + cp1 * cp1) / 2.0;
    v.p_minus = (cm0 * cm0 + cm1 * cm1) / 2.0;
    v.theta_plus_deg = wrap_deg(rad_to_deg(2.0 * std::atan2(cp1, cp0)));
    v.theta_minus_deg = wrap_deg(rad_to_deg(2.0 * std::atan2(cm1, cm0)));
    return v;
}

struct RateInterval {
    double lo = 0.0, hi = 0.0;
};

/// sum_j w_j y_j maximized/minimized over the per-state boxes, clamped into
/// [0, 1] (the result is a detection probability of a virtual state).
inline double box_extreme(const std::array<double, 3>& w,
                          const std::array<RateInterval, 3>& y, bool maximize) {
    double s = 0.0;
    for (int j = 0; j < 3; ++j) {
        const bool take_hi = (w[j] > 0.0) == maximize;
        s += w[j] * (take_hi ? y[j].hi : y[j].lo);
    }
    return std::clamp(s, 0.0, 1.0);
}

/// Transmission-rate estimate of the phase error probability. Each observed
/// test-basis rate is linear in the (I, sigma_x, sigma_z) components of the
/// test measurement operators, so the three prepared states pin those
/// components down; the virtual states' error rate follows by linearity. The
/// rates carry Hoeffding confidence intervals; the single-photon statistics
/// enter through the callers' s1-based sampling correction instead.
/// `assumed_theta_deg` is the characterization the estimator trusts: the
/// mean prepared angles for the compensated estimate, the nominal
/// (0, 180, 90) for the uncompensated one.
inline double phase_error_estimate(const TallySet& t, const SourceProfile& profile,
                                   const SecurityParams& sec,
                                   const std::array<double, 3>& assumed_theta_deg) {
    const double eps = sec.eps1();

    // Transmission-rate intervals per (sent state, test detector).
    std::array<RateInterval, 3> y_xplus{}, y_xminus{};
    for (int j = 0; j < 3; ++j) {
        const double n_j = t.total_sent(source::kStates[j]);
        if (!(n_j > 0.0))
            throw std::invalid_argument("test-basis tallies require emissions of all three states");
        for (Detector d : {Detector::XPlus, Detector::XMinus}) {
            const double c = t.at(source::kStates[j], d, IntensityLabel::Signal) +
                             t.at(source::kStates[j], d, IntensityLabel::Decoy);
            const auto [lo, hi] = hoeffding_bounds(c, eps);
            RateInterval r{std::clamp(lo / n_j, 0.0, 1.0), std::clamp(hi / n_j, 0.0, 1.0)};
            (d == Detector::XPlus ? y_xplus[j] : y_xminus[j]) = r;
        }
    }

    std::array<std::array<double, 3>, 3> a_t{}; // transpose of the design matrix
    for (int j = 0; j < 3; ++j) {
        const double th = deg_to_rad(assumed_theta_deg[j]);
        a_t[0][j] = 1.0;
        a_t[1][j] = std::sin(th);
        a_t[2][j] = std::cos(th);
    }
    const auto vp = detail::virtual_pair(profile.p_state[0], profile.p_state[1],
                                         assumed_theta_deg[0], assumed_theta_deg[1]);
    auto direction = [](double theta_deg) {
        const double th = deg_to_rad(theta_deg);
        return std::array<double, 3>{1.0, std::sin(th), std::cos(th)};
    };
    std::array<double, 3> w_plus{}, w_minus{};
    try {
        w_plus = solve_linear<3>(a_t, direction(vp.theta_plus_deg));
        w_minus = solve_linear<3>(a_t, direction(vp.theta_minus_deg));
    } catch (const std::runtime_error&) {
        throw std::invalid_argument("prepared states do not span the Z-X plane");
    }

    // Phase errors: virtual "+" answered by the minus detector or vice versa.
    const double n_max = vp.p_plus * box_extreme(w_plus, y_xminus, true) +
                         vp.p_minus * box_extreme(w_minus, y_xplus, true);
    const double m_min = vp.p_plus * box_extreme(w_plus, y_xplus, false) +
                         vp.p_minus * box_extreme(w_minus, y_xminus, false);
    if (!(n_max + m_min > 0.0)) return 0.5;
    return n_max / (n_max + m_min);
}

} // namespace detail

/// Phase error rate of the sifted key from the three states' test-basis
/// transmission rates, compensating the preparation flaws, plus the sampling
/// correction from rate to realized fraction among the s1_z key rounds.
inline double phase_error_loss_tolerant(const TallySet& t, const SourceProfile& profile,
                                        const SecurityParams& sec) {
    profile.validate();
    sec.validate();
    const double s1 = decoy_bounds(t, profile, sec).s1_z;
    if (!(s1 > 0.0)) return 0.5;
    const double phi = detail::phase_error_estimate(t, profile, sec, profile.theta_avg_deg);
    return std::min(0.5, phi + std::sqrt(std::log(1.0 / sec.eps1()) / (2.0 * s1)));
}

/// Same pipeline but trusting the nominal angles (0, 180, 90): the estimate a
/// protocol unaware of its preparation flaws would make. Strictly larger than
/// the compensated estimate whenever the flaws are real.
inline double phase_error_naive(const TallySet& t, const SourceProfile& profile,
                                const SecurityParams& sec) {
    profile.validate();
    sec.validate();
    const double s1 = decoy_bounds(t, profile, sec).s1_z;
    if (!(s1 > 0.0)) return 0.5;
    const double phi = detail::phase_error_estimate(t, profile, sec, {0.0, 180.0, 90.0});
    return std::min(0.5, phi + std::sqrt(std::log(1.0 / sec.eps1()) / (2.0 * s1)));
}

/// Error-correction leakage: the deployed code has fixed rate 2/3, so one
/// third of the sifted key leaks for any QBER it can handle (up to 3%);
/// beyond that, account a 1.16 * h(Q) adaptive-code model instead.
inline double ec_leakage(double n_z, double qber_z) {
    if (!(n_z >= 0.0)) throw std::invalid_argument("n_z must be non-negative");
    if (!(qber_z >= 0.0 && qber_z <= 0.5))
        throw std::invalid_argument("qber must lie in [0, 0.5]");
    if (qber_z <= 0.03) return n_z / 3.0;
    return 1.16 * n_z * binary_entropy(qber_z);
}

/// Constant cost of the finite-key bound composition:
/// 6 log2(19/eps_sec) + log2(2/eps_corr).
inline double penalty_bits(const SecurityParams& sec) {
    sec.validate();
    return 6.0 * std::log2(19.0 / sec.eps_sec) + std::log2(2.0 / sec.eps_corr);
}

struct KeyLengthParts {
    double raw_bits = 0.0;        // s1_z (1 - h(phi)) - lambda_EC - penalty
    double discounted_bits = 0.0; // raw * (1 - p_c_star)
    std::int64_t secret_bits = 0;
};

/// l = max(0, floor[(s1_z (1 - h(phi)) - lambda_EC - penalty) (1 - p_c*)]).
/// The phase-randomization discount multiplies the whole length, it does not
/// enter the entropy term.
inline KeyLengthParts key_length_parts(double s0_z, double s1_z, double phi_z,
                                       double lambda_ec, const SecurityParams& sec,
                                       double p_c_star) {
    if (!(s0_z >= 0.0 && s1_z >= 0.0 && lambda_ec >= 0.0))
        throw std::invalid_argument("key-length inputs must be non-negative");
    if (!(phi_z >= 0.0 && phi_z <= 0.5))
        throw std::invalid_argument("phase error rate must lie in [0, 0.5]");
    if (!(p_c_star >= 0.0 && p_c_star <= 1.0))
        throw std::invalid_argument("p_c_star must lie in [0, 1]");
    (void)s0_z; // no vacuum credit is taken in this composition
    KeyLengthParts parts;
    parts.raw_bits = s1_z * (1.0 - binary_entropy(phi_z)) - lambda_ec - penalty_bits(sec);
    parts.discounted_bits = parts.raw_bits * (1.0 - p_c_star);
    parts.secret_bits =
        std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(parts.discounted_bits)));
    return parts;
}

inline std::int64_t key_length(double s0_z, double s1_z, double phi_z, double lambda_ec,
                               const SecurityParams& sec, double p_c_star) {
    return key_length_parts(s0_z, s1_z, phi_z, lambda_ec, sec, p_c_star).secret_bits;
}

struct KeyReport {
    double n_z = 0.0, m_z = 0.0, qber_z = 0.0;
    double s0_z = 0.0, s1_z = 0.0, v1_x = 0.0;
    double phi_z = 0.5;
    double lambda_ec = 0.0, penalty = 0.0;
    double raw_bits = 0.0, discounted_bits = 0.0;
    std::int64_t secret_bits = 0;
    double skr_bps = 0.0;
    double sifted_rate_bps = 0.0;
    double tau0 = 0.0, tau1 = 0.0;
    double eps_sec = 0.0, eps_corr = 0.0, p_c_star = 0.0;
    double elapsed_pulses = 0.0, repetition_rate_hz = 0.0;
    bool insufficient = false;
};

/// Full finite-key pipeline on a set of tallies.
inline KeyReport distill(const TallySet& t, const SourceProfile& profile, const LinkModel& model,
                         const SecurityParams& sec, double p_c_star) {
    t.validate();
    profile.validate();
    model.validate();
    sec.validate();
    KeyReport r;
    r.eps_sec = sec.eps_sec;
    r.eps_corr = sec.eps_corr;
    r.p_c_star = p_c_star;
    r.elapsed_pulses = t.elapsed_pulses;
    r.repetition_rate_hz = model.repetition_rate_hz;
    r.penalty = penalty_bits(sec);
    r.tau0 = tau_n(profile, 0);
    r.tau1 = tau_n(profile, 1);

    r.n_z = t.n(Basis::Z, Basis::Z);
    r.m_z = t.m(Basis::Z, Basis::Z);
    r.qber_z = r.n_z > 0.0 ? r.m_z / r.n_z : 0.0;
    if (t.elapsed_pulses > 0.0)
        r.sifted_rate_bps = r.n_z * model.repetition_rate_hz / t.elapsed_pulses;

    const auto db = decoy_bounds(t, profile, sec);
    r.s0_z = db.s0_z;
    r.s1_z = db.s1_z;
    r.v1_x = db.v1_x;
    r.insufficient = db.insufficient;

    if (r.n_z > 0.0 && !db.insufficient)
        r.phi_z = phase_error_loss_tolerant(t, profile, sec);
    else
        r.phi_z = 0.5;

    r.lambda_ec = ec_leakage(r.n_z, std::min(r.qber_z, 0.5));
    const auto parts = key_length_parts(r.s0_z, r.s1_z, r.phi_z, r.lambda_ec, sec, p_c_star);
    r.raw_bits = parts.raw_bits;
    r.discounted_bits = parts.discounted_bits;
    r.secret_bits = parts.secret_bits;
    if (t.elapsed_pulses > 0.0)
        r.skr_bps = static_cast<double>(r.secret_bits) * model.repetition_rate_hz /
                    t.elapsed_pulses;
    return r;
}

/// Published operating point of one link: enough to rebuild a consistent
/// tally set when the raw per-intensity tallies themselves are not available.
struct OperatingPoint {
    double sifted_rate_bps = 0.0;
    double qber_z = 0.0;
    double phi_z = 0.0;
    double block_bits = 4192.0 * 1944.0;
};

struct Reconstruction {
    TallySet tallies;
    double loss_offset_db = 0.0; // extra (or saved) loss vs. the nominal link budget
    double error_mixing = 0.0;   // isotropic error floor matching the phase error target
};

/// Builds expectation tallies that hit a published operating point exactly:
/// the link loss is offset until the sifted rate matches, intensities split
/// by their analytic gain ratio, the key-basis error split is forced to the
/// published QBER, and an isotropic test-basis error floor is solved for so
/// the compensated phase-error estimate lands on the published value.
inline Reconstruction reconstruct_tallies(const SourceProfile& profile, const LinkModel& model,
                                          const OperatingPoint& op, const SecurityParams& sec) {
    profile.validate();
    model.validate();
    sec.validate();
    if (!(op.sifted_rate_bps > 0.0 && op.block_bits >= 1.0))
        throw std::invalid_argument("operating point requires a positive sifted rate and block");
    if (!(op.qber_z >= 0.0 && op.qber_z <= 0.5))
        throw std::invalid_argument("operating point QBER must lie in [0, 0.5]");

    const double target_rate = op.sifted_rate_bps / model.repetition_rate_hz;
    auto with_offset = [&](double offset_db) {
        LinkModel m = model;
        m.fiber_length_km =
            model.fiber_length_km + offset_db / model.attenuation_db_per_km;
        return m;
    };
    auto sift_per_pulse = [&](double offset_db) {
        return protocol::run_analytic(profile, with_offset(offset_db), 1.0)
            .n(Basis::Z, Basis::Z);
    };

    double lo = -6.0, hi = 6.0;
    if (!(sift_per_pulse(lo) > target_rate && sift_per_pulse(hi) < target_rate))
        throw std::runtime_error("sifted-rate target outside the reachable loss window");
    for (int i = 0; i < 80; ++i) {
        const double mid = 0.5 * (lo + hi);
        (sift_per_pulse(mid) > target_rate ? lo : hi) = mid;
    }
    const double offset_db = 0.5 * (lo + hi);
    const LinkModel m_eff = with_offset(offset_db);
    const double elapsed = op.block_bits / sift_per_pulse(offset_db);

    auto build = [&](double mixing) {
        TallySet t = protocol::run_analytic(profile, m_eff, elapsed, mixing);
        for (StateLabel j : {StateLabel::Zero, StateLabel::One}) {
            const Detector right = j == StateLabel::Zero ? Detector::Z0 : Detector::Z1;
            const Detector wrong = j == StateLabel::Zero ? Detector::Z1 : Detector::Z0;
            for (IntensityLabel a : source::kIntensities) {
                const double row = t.at(j, right, a) + t.at(j, wrong, a);
                t.at(j, right, a) = row * (1.0 - op.qber_z);
                t.at(j, wrong, a) = row * op.qber_z;
            }
        }
        return t;
    };

    Reconstruction rec;
    rec.loss_offset_db = offset_db;
    if (op.phi_z > 0.0) {
        auto phi_of = [&](double mixing) {
            return phase_error_loss_tolerant(build(mixing), profile, sec);
        };
        double elo = 0.0, ehi = 0.45;
        if (!(phi_of(elo) < op.phi_z))
            throw std::runtime_error("phase error target below the estimator floor");
        if (!(phi_of(ehi) > op.phi_z))
            throw std::runtime_error("phase error target above the reachable range");
        for (int i = 0; i < 60; ++i) {
            const double mid = 0.5 * (elo + ehi);
            (phi_of(mid) < op.phi_z ? elo : ehi) = mid;
        }
        rec.error_mixing = 0.5 * (elo + ehi);
    }
    rec.tallies = build(rec.error_mixing);
    return rec;
}

} // namespace qkdsim::distill
