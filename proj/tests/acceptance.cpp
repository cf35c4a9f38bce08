// Acceptance gate: ten end-to-end checks against the published operating
// points and the statistical guarantees the library claims. Each criterion
// prints one PASS/FAIL line; the process exits non-zero if any fail.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <qkdsim/qkdsim.hpp>

namespace {

using namespace qkdsim;
namespace fs = std::filesystem;

int g_failures = 0;

void criterion(int number, const std::string& name, bool pass, const std::string& detail) {
    std::ostringstream line;
    line << "C" << (number < 10 ? "0" : "") << number << " " << (pass ? "PASS" : "FAIL") << "  "
         << name << "  [" << detail << "]";
    std::cout << line.str() << std::endl;
    if (!pass) ++g_failures;
}

std::string fmt(double v, int precision = 6) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path fixture(const char* name) { return fs::path(QKDSIM_SOURCE_DIR) / "fixtures" / name; }

// Two-sided Poisson acceptance band with 1.35e-3 tail mass per side (the
// two-sided 3-sigma budget), computed from the exact distribution.
struct Band {
    double lo = 0.0;
    double hi = 0.0;
};

Band poisson_band(double lambda) {
    constexpr double tail = 1.349898e-3;
    if (!(lambda > 0.0)) return {0.0, 0.0};
    const double sd = std::sqrt(lambda);
    const long long start = std::max(0.0, std::floor(lambda - 12.0 * sd - 12.0));
    const long long stop = static_cast<long long>(std::ceil(lambda + 12.0 * sd + 12.0));
    const double log_lambda = std::log(lambda);
    double cdf = 0.0;
    long long lo = start, hi = stop;
    bool have_lo = false, have_hi = false;
    for (long long k = start; k <= stop; ++k) {
        cdf += std::exp(k * log_lambda - lambda - std::lgamma(static_cast<double>(k) + 1.0));
        if (!have_lo && cdf > tail) {
            lo = k; // P(X < k) <= tail
            have_lo = true;
        }
        if (!have_hi && cdf >= 1.0 - tail) {
            hi = k; // P(X > k) <= tail
            have_hi = true;
            break;
        }
    }
    return {static_cast<double>(lo), static_cast<double>(have_hi ? hi : stop)};
}

// --------------------------------------------------------------------------

void c01_key_length_constant() {
    const distill::SecurityParams sec; // 1e-9 / 1e-15
    const double penalty = distill::penalty_bits(sec);
    criterion(1, "finite-key composition constant", std::abs(penalty - 255.7) <= 0.1,
              "penalty=" + fmt(penalty, 7) + " bits, expected 255.7 +/- 0.1");
}

void reproduce_operating_point(int number, const std::string& name, double fiber_km,
                               double sifted_bps, double qber, double phi, double target_bps) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto profile = source::reference_profile();
    channel::LinkModel model; // 0.2 dB/km, 1 dB insertion, eta 0.8, dark 191 Hz
    model.fiber_length_km = fiber_km;
    const distill::SecurityParams sec;
    distill::OperatingPoint op;
    op.sifted_rate_bps = sifted_bps;
    op.qber_z = qber;
    op.phi_z = phi;

    const auto rec = distill::reconstruct_tallies(profile, model, op, sec);
    const auto report = distill::distill(rec.tallies, profile, model, sec, 0.0019);
    const double lo = 0.7 * target_bps, hi = 1.3 * target_bps;
    const bool pass = report.skr_bps >= lo && report.skr_bps <= hi;
    criterion(number, name, pass,
              "skr=" + fmt(report.skr_bps / 1e3, 5) + " kbps, band [" + fmt(lo / 1e3, 4) + ", " +
                  fmt(hi / 1e3, 4) + "], qber=" + fmt(report.qber_z, 4) + ", phi=" +
                  fmt(report.phi_z, 4) + ", " + fmt(seconds_since(t0), 3) + " s");
}

void c04_monte_carlo_end_to_end() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto profile = source::reference_profile();
    const channel::LinkModel model; // the 151.5 km reference link
    protocol::SimOptions opt;
    opt.n_pulses = 100000000;
    opt.seed = 1;
    const auto t = protocol::run_monte_carlo(profile, model, opt);
    const double elapsed = seconds_since(t0);

    const double n_z = t.n(protocol::Basis::Z, protocol::Basis::Z);
    const double sifted_bps = n_z * model.repetition_rate_hz / t.elapsed_pulses;
    const double qber = n_z > 0.0 ? t.m(protocol::Basis::Z, protocol::Basis::Z) / n_z : 1.0;
    const bool rate_ok = sifted_bps >= 0.7 * 330e3 && sifted_bps <= 1.3 * 330e3;
    const bool qber_ok = qber >= 0.010 && qber <= 0.030;
    const bool time_ok = elapsed < 60.0;
    criterion(4, "1e8-pulse sampled run at 151.5 km", rate_ok && qber_ok && time_ok,
              "sifted=" + fmt(sifted_bps / 1e3, 5) + " kbps (band [231, 429]), qber=" +
                  fmt(qber * 100.0, 3) + "% (band [1, 3]), " + fmt(elapsed, 3) + " s (< 60)");
}

// Independent photon-class sampler: every sifted gate picks an intensity,
// a Poissonian photon number and a per-class detection, so the true
// single-photon count is known and the 1-decoy lower bound must sit below it.
void c05_decoy_bound_soundness() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto profile = source::reference_profile();
    const distill::SecurityParams sec;

    const double gates = 2.2e6;   // sifted exposure per block -> n_Z about 1e5
    const double c_click = 0.20;  // per-photon click probability
    const double p_dark = 3.8e-8; // per-gate dark probability
    const double e_mis = 0.01;    // error probability of a photon click
    constexpr int kMaxClass = 16;
    const int blocks = 10000;

    std::mt19937_64 rng(20260815);
    int violations = 0;
    double ratio_sum = 0.0;
    int ratio_count = 0;

    for (int b = 0; b < blocks; ++b) {
        std::array<double, 2> detections{}, errors{};
        double true_single = 0.0;
        for (int a = 0; a < 2; ++a) {
            const double mu = profile.mu[a];
            double pois = std::exp(-mu); // class probability, updated in place
            for (int n = 0; n <= kMaxClass; ++n) {
                if (n > 0) pois *= mu / n;
                const double yield = 1.0 - (1.0 - p_dark) * std::pow(1.0 - c_click, n);
                const double lambda = gates * profile.p_intensity[a] * pois * yield;
                std::poisson_distribution<long long> det(lambda);
                const double d = lambda > 0.0 ? static_cast<double>(det(rng)) : 0.0;
                detections[a] += d;
                if (n == 1) true_single += d;
                const double p_err = n == 0 ? 0.5 : e_mis;
                std::binomial_distribution<long long> err(static_cast<long long>(d), p_err);
                errors[a] += d > 0.0 ? static_cast<double>(err(rng)) : 0.0;
            }
        }

        protocol::TallySet t;
        t.elapsed_pulses = gates / (profile.p_z_alice() * 0.5);
        for (int a = 0; a < 2; ++a) {
            const auto label = source::kIntensities[a];
            t.sent_at(source::StateLabel::Zero, label) = gates * profile.p_intensity[a];
            t.at(source::StateLabel::Zero, channel::Detector::Z0, label) =
                detections[a] - errors[a];
            t.at(source::StateLabel::Zero, channel::Detector::Z1, label) = errors[a];
        }
        const auto bounds = distill::decoy_bounds(t, profile, sec);
        if (bounds.s1_z > true_single) ++violations;
        if (true_single > 0.0) {
            ratio_sum += bounds.s1_z / true_single;
            ++ratio_count;
        }
    }
    const double mean_ratio = ratio_count > 0 ? ratio_sum / ratio_count : 0.0;
    criterion(5, "single-photon lower bound over 1e4 tagged blocks",
              violations == 0 && mean_ratio > 0.5,
              "violations=" + std::to_string(violations) + "/10000, mean tightness=" +
                  fmt(mean_ratio, 4) + " (> 0.5 required), " + fmt(seconds_since(t0), 3) + " s");
}

void c06_loss_tolerant_compensation() {
    source::SourceProfile profile = source::reference_profile();
    profile.delta_deg = {}; // preparation flaws only, no correlations
    for (int a = 0; a < 2; ++a) profile.mu_cond[a] = {profile.mu[a], profile.mu[a]};

    channel::LinkModel model; // reference loss, with the noise terms off
    model.dark_rate_hz = 0.0;

    const distill::SecurityParams sec;
    const auto t = protocol::run_analytic(profile, model, 1e18);
    const double compensated = distill::phase_error_loss_tolerant(t, profile, sec);
    const double naive = distill::phase_error_naive(t, profile, sec);
    criterion(6, "flaw-compensating phase error on a noiseless channel",
              compensated <= 1e-3 && naive > compensated,
              "compensated=" + fmt(compensated, 6) + " (<= 1e-3), uncompensated=" +
                  fmt(naive, 6));
}

void c07_polarimetry_round_trip() {
    const auto angles = characterize::default_qwp_angles();
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        double s1 = u(rng), s2 = u(rng), s3 = u(rng);
        const double norm = std::sqrt(s1 * s1 + s2 * s2 + s3 * s3);
        if (norm > 1.0) {
            s1 /= norm;
            s2 /= norm;
            s3 /= norm;
        }
        const StokesVector in{1.0, s1, s2, s3};
        characterize::QwpTrace trace;
        trace.angles_deg = angles;
        trace.labels = {{source::StateLabel::Zero, source::IntensityLabel::Signal}};
        trace.intensities.resize(1);
        for (double rho : angles)
            trace.intensities[0].push_back(characterize::qwp_forward(in, rho));
        const StokesVector fit = characterize::fit_stokes(trace, 0);
        worst = std::max({worst, std::abs(fit.s0 - in.s0), std::abs(fit.s1 - in.s1),
                          std::abs(fit.s2 - in.s2), std::abs(fit.s3 - in.s3)});
    }

    std::ifstream qwp_file(fixture("qwp-trace.csv"));
    bool loop_ok = false;
    std::string loop_detail = "fixture missing";
    if (qwp_file) {
        const auto trace = characterize::parse_qwp_csv(qwp_file);
        std::vector<PureState> states;
        std::vector<source::StateLabel> labels;
        for (std::size_t i = 0; i < trace.labels.size(); ++i) {
            states.push_back(stokes_to_state(characterize::fit_stokes(trace, i)).state);
            labels.push_back(trace.labels[i].state);
        }
        const auto table = characterize::extract_correlations(states, labels);
        const std::array<double, 3> want_theta{8.0, 165.6, 90.0};
        const std::array<double, 3> want_delta{6.3, 6.9, 8.0};
        loop_ok = true;
        for (int j = 0; j < 3; ++j) {
            loop_ok = loop_ok && std::abs(table.theta_avg_deg[j] - want_theta[j]) <= 0.1;
            loop_ok = loop_ok && std::abs(table.max_delta_deg[j] - want_delta[j]) <= 0.1;
        }
        loop_detail = "angles (" + fmt(table.theta_avg_deg[0], 4) + ", " +
                      fmt(table.theta_avg_deg[1], 5) + ", " + fmt(table.theta_avg_deg[2], 4) +
                      "), max delta (" + fmt(table.max_delta_deg[0], 3) + ", " +
                      fmt(table.max_delta_deg[1], 3) + ", " + fmt(table.max_delta_deg[2], 3) + ")";
    }
    criterion(7, "polarimeter fit identity and characterization loop",
              worst <= 1e-6 && loop_ok,
              "max fit error=" + fmt(worst, 3) + " (<= 1e-6), " + loop_detail);
}

void c08_phase_randomization_pipeline() {
    std::ifstream vis_file(fixture("visibility-curve.csv"));
    bool exact = false;
    double pc = -1.0;
    if (vis_file) {
        pc = characterize::estimate_pc(characterize::parse_visibility_csv(vis_file));
        exact = (pc == 0.0019);
    }

    const distill::SecurityParams sec;
    const auto plain = distill::key_length_parts(100.0, 1e6, 0.03, 2e5, sec, 0.0);
    const auto discounted = distill::key_length_parts(100.0, 1e6, 0.03, 2e5, sec, 0.0019);
    const bool multiplicative = discounted.raw_bits == plain.raw_bits &&
                                discounted.discounted_bits ==
                                    plain.raw_bits * (1.0 - 0.0019) &&
                                discounted.secret_bits ==
                                    static_cast<std::int64_t>(
                                        std::floor(discounted.discounted_bits));
    criterion(8, "phase-coherence estimate and key-length discount", exact && multiplicative,
              "p_c*=" + fmt(pc, 6) + " (exact 0.0019: " + (exact ? "yes" : "no") +
                  "), discount exact: " + (multiplicative ? "yes" : "no"));
}

void c09_mc_analytic_consistency() {
    const auto t0 = std::chrono::steady_clock::now();
    struct Config {
        const char* name;
        source::SourceProfile profile;
        channel::LinkModel model;
    };
    std::vector<Config> configs;
    configs.push_back({"151.5 km", source::reference_profile(), channel::LinkModel{}});
    {
        channel::LinkModel m;
        m.fiber_length_km = 101.0;
        configs.push_back({"101.0 km", source::reference_profile(), m});
    }
    {
        channel::LinkModel m;
        m.fiber_length_km = 0.0;
        m.bob_insertion_loss_db = 0.0;
        m.detector_efficiency = 1.0;
        m.dark_rate_hz = 0.0;
        configs.push_back({"lossless", source::SourceProfile{}, m});
    }

    const double pulses = 1e7;
    int bad_cells = 0;
    std::string first_bad;
    for (const auto& [name, profile, model] : configs) {
        const auto expect = protocol::run_analytic(profile, model, pulses);
        protocol::SimOptions opt;
        opt.n_pulses = static_cast<std::uint64_t>(pulses);
        opt.seed = 2026;
        const auto got = protocol::run_monte_carlo(profile, model, opt);
        auto check_cell = [&](const std::string& label, double obs, double lambda) {
            const Band band = poisson_band(lambda);
            if (obs < band.lo || obs > band.hi) {
                ++bad_cells;
                if (first_bad.empty())
                    first_bad = std::string(name) + " " + label + ": obs=" + fmt(obs, 8) +
                                " band=[" + fmt(band.lo, 8) + ", " + fmt(band.hi, 8) + "]";
            }
        };
        for (auto j : source::kStates) {
            for (auto a : source::kIntensities) {
                check_cell(std::string("sent(") + source::name(j) + "," + source::name(a) + ")",
                           got.sent_at(j, a), expect.sent_at(j, a));
                for (auto d : channel::kDetectors)
                    check_cell(std::string("count(") + source::name(j) + "," + channel::name(d) +
                                   "," + source::name(a) + ")",
                               got.at(j, d, a), expect.at(j, d, a));
            }
        }
    }
    criterion(9, "sampled tallies match expectations cell by cell", bad_cells == 0,
              "90 cells x 3 configs at 1e7 pulses, out-of-band=" + std::to_string(bad_cells) +
                  (first_bad.empty() ? "" : ", first: " + first_bad) + ", " +
                  fmt(seconds_since(t0), 3) + " s");
}

void c10_optimizer_dominance() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto profile = source::reference_profile();
    const channel::LinkModel model;
    const distill::SecurityParams sec;

    optimize::Options opt;
    opt.mu_step = 0.05;
    opt.prob_step = 0.1;
    const auto res = optimize::optimize(profile, model, sec, 0.0019, opt);

    optimize::Objective obj(profile, model, sec, 0.0019, opt.block_bits);
    const double at_reference = obj(optimize::Params::from_profile(profile));
    criterion(10, "optimized rate dominates the configured operating point",
              res.feasible && res.best_skr_bps >= at_reference,
              "best=" + fmt(res.best_skr_bps / 1e3, 5) + " kbps at mu=(" +
                  fmt(res.best.mu_signal, 3) + ", " + fmt(res.best.mu_decoy, 3) +
                  "), reference point=" + fmt(at_reference / 1e3, 5) + " kbps, " +
                  fmt(seconds_since(t0), 3) + " s");
}

} // namespace

int main() {
    std::cout << "acceptance gate: simulator and finite-key toolkit\n";
    c01_key_length_constant();
    reproduce_operating_point(2, "operating point at 151.5 km (30.3 dB)", 151.5, 330e3, 0.0188,
                              0.0350, 54.5e3);
    reproduce_operating_point(3, "operating point at 101.0 km (20.2 dB)", 101.0, 2320.2e3,
                              0.0193, 0.0367, 392.7e3);
    c04_monte_carlo_end_to_end();
    c05_decoy_bound_soundness();
    c06_loss_tolerant_compensation();
    c07_polarimetry_round_trip();
    c08_phase_randomization_pipeline();
    c09_mc_analytic_consistency();
    c10_optimizer_dominance();

    if (g_failures == 0) {
        std::cout << "all 10 criteria passed\n";
        return 0;
    }
    std::cout << g_failures << " criteria failed\n";
    return 1;
}
