#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bloch.hpp"
#include "linalg.hpp"
#include "source_model.hpp"

namespace qkdsim::characterize {

using source::IntensityLabel;
using source::SourceProfile;
using source::StateLabel;

/// Malformed measurement file; `row` is the 1-based offending line.
struct CsvError : std::runtime_error {
    int row;
    CsvError(int row_, const std::string& what)
        : std::runtime_error("row " + std::to_string(row_) + ": " + what), row(row_) {}
};

/// Intensity behind a rotating quarter-wave plate followed by a polarizer at
/// 0 deg, for plate angle rho:
///   I(rho) = (s0 + s1 cos^2(2rho) + s2 cos(2rho) sin(2rho) - s3 sin(2rho)) / 2.
inline double qwp_forward(const StokesVector& s, double rho_deg) {
    const double r2 = deg_to_rad(2.0 * rho_deg);
    const double c = std::cos(r2), sn = std::sin(r2);
    return 0.5 * (s.s0 + s.s1 * c * c + s.s2 * c * sn - s.s3 * sn);
}

struct SlotLabel {
    StateLabel state = StateLabel::Zero;
    IntensityLabel intensity = IntensityLabel::Signal;
};

/// Polarimeter recording of a cyclically repeated pulse pattern: mean
/// detected counts per (pattern slot, plate angle), plus the slot labels.
struct QwpTrace {
    std::vector<double> angles_deg;
    std::vector<std::vector<double>> intensities; // [slot][angle]
    std::vector<SlotLabel> labels;

    void validate() const {
        if (labels.size() != intensities.size())
            throw std::invalid_argument("trace slots and labels differ in length");
        std::vector<double> distinct = angles_deg;
        std::sort(distinct.begin(), distinct.end());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        if (distinct.size() < 8)
            throw std::invalid_argument("need at least 8 distinct plate angles");
        for (const auto& row : intensities) {
            if (row.size() != angles_deg.size())
                throw std::invalid_argument("trace row length does not match the angle set");
            for (double v : row)
                if (!(v >= 0.0)) throw std::invalid_argument("negative trace intensity");
        }
    }
};

/// Least-squares Stokes inversion of one slot's angle scan.
inline StokesVector fit_stokes(const QwpTrace& trace, std::size_t slot) {
    trace.validate();
    if (slot >= trace.intensities.size()) throw std::invalid_argument("slot out of range");
    std::vector<std::array<double, 4>> rows;
    rows.reserve(trace.angles_deg.size());
    for (double rho : trace.angles_deg) {
        const double r2 = deg_to_rad(2.0 * rho);
        const double c = std::cos(r2), sn = std::sin(r2);
        rows.push_back({0.5, 0.5 * c * c, 0.5 * c * sn, -0.5 * sn});
    }
    const auto x = least_squares<4>(rows, trace.intensities[slot]);
    StokesVector s{x[0], x[1], x[2], x[3]};
    if (!(s.s0 > 0.0)) throw std::invalid_argument("slot carries no intensity");
    return s;
}

struct CorrelationTable {
    std::array<double, 3> theta_avg_deg{};            // by state label
    std::array<std::array<double, 3>, 3> delta_deg{}; // [state][previous state]
    std::array<double, 3> max_delta_deg{};
    double max_s2_residual = 0.0; // largest out-of-plane component seen
};

/// Average angles and nearest-neighbour deviations from per-slot states.
/// The sequence is treated as cyclic (slot 0's predecessor is the last
/// slot). The reference frame is rotated so the average angle of the test
/// state is exactly 90 deg, which removes any global rotation of the inputs.
/// Out-of-plane components do not enter the angles; the largest one is
/// reported as a residual.
inline CorrelationTable extract_correlations(const std::vector<PureState>& states,
                                             const std::vector<StateLabel>& labels) {
    if (states.size() != labels.size() || states.size() < 2)
        throw std::invalid_argument("need one state per label, at least two slots");
    const std::size_t n = states.size();

    CorrelationTable out;
    std::vector<double> theta(n);
    for (std::size_t i = 0; i < n; ++i) {
        theta[i] = states[i].theta_deg();
        out.max_s2_residual = std::max(out.max_s2_residual, std::abs(states[i].s2()));
    }

    auto circular_mean = [&](auto&& keep) -> double {
        double s = 0.0, c = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!keep(i)) continue;
            s += std::sin(deg_to_rad(theta[i]));
            c += std::cos(deg_to_rad(theta[i]));
            ++count;
        }
        if (count == 0) return std::numeric_limits<double>::quiet_NaN();
        return wrap_deg(rad_to_deg(std::atan2(s, c)));
    };

    const double plus_mean =
        circular_mean([&](std::size_t i) { return labels[i] == StateLabel::Plus; });
    if (std::isnan(plus_mean))
        throw std::invalid_argument("sequence contains no test-state slots");
    const double frame = 90.0 - plus_mean;
    for (double& th : theta) th = wrap_deg(th + frame);

    for (int j = 0; j < 3; ++j) {
        const double mean_j = circular_mean(
            [&](std::size_t i) { return source::idx(labels[i]) == j; });
        if (std::isnan(mean_j))
            throw std::invalid_argument(std::string("no slots for state ") +
                                        source::name(source::kStates[j]));
        out.theta_avg_deg[j] = mean_j;
        for (int k = 0; k < 3; ++k) {
            const double mean_jk = circular_mean([&](std::size_t i) {
                return source::idx(labels[i]) == j &&
                       source::idx(labels[(i + n - 1) % n]) == k;
            });
            if (std::isnan(mean_jk))
                throw std::invalid_argument(std::string("state pair (") +
                                            source::name(source::kStates[j]) + "|" +
                                            source::name(source::kStates[k]) +
                                            ") never occurs");
            out.delta_deg[j][k] = wrap_signed_deg(mean_jk - mean_j);
            out.max_delta_deg[j] =
                std::max(out.max_delta_deg[j], std::abs(out.delta_deg[j][k]));
        }
    }
    return out;
}

struct IntensityStats {
    std::array<double, 2> mu_hat{};                    // by intensity label
    std::array<std::array<double, 2>, 2> mu_cond_hat{}; // [intensity][previous]
    double max_rel_deviation = 0.0;
};

/// Conditional mean intensities over a cyclic slot sequence and the largest
/// relative deviation of any conditional mean from its unconditional one.
inline IntensityStats decoy_correlation_stats(const std::vector<double>& means,
                                              const std::vector<IntensityLabel>& labels) {
    if (means.size() != labels.size() || means.size() < 2)
        throw std::invalid_argument("need one mean per label, at least two slots");
    const std::size_t n = means.size();
    std::array<double, 2> sum{}, cnt{};
    std::array<std::array<double, 2>, 2> csum{}, ccnt{};
    for (std::size_t i = 0; i < n; ++i) {
        if (!(means[i] >= 0.0)) throw std::invalid_argument("negative intensity sample");
        const int a = source::idx(labels[i]);
        const int b = source::idx(labels[(i + n - 1) % n]);
        sum[a] += means[i];
        cnt[a] += 1.0;
        csum[a][b] += means[i];
        ccnt[a][b] += 1.0;
    }
    IntensityStats out;
    for (int a = 0; a < 2; ++a) {
        if (cnt[a] == 0.0)
            throw std::invalid_argument(std::string("no slots with intensity ") +
                                        source::name(source::kIntensities[a]));
        out.mu_hat[a] = sum[a] / cnt[a];
        for (int b = 0; b < 2; ++b) {
            if (ccnt[a][b] == 0.0)
                throw std::invalid_argument(std::string("intensity pair (") +
                                            source::name(source::kIntensities[a]) + "|" +
                                            source::name(source::kIntensities[b]) +
                                            ") never occurs");
            out.mu_cond_hat[a][b] = csum[a][b] / ccnt[a][b];
            if (out.mu_hat[a] > 0.0)
                out.max_rel_deviation =
                    std::max(out.max_rel_deviation,
                             std::abs(out.mu_cond_hat[a][b] / out.mu_hat[a] - 1.0));
        }
    }
    return out;
}

/// Interferometer fringe visibilities per arm-length delay, for the CW
/// reference and the pulsed source under test.
struct VisibilityCurve {
    std::vector<double> delay_mm;
    std::vector<double> v_cw;
    std::vector<double> v_pulsed;

    void validate() const {
        if (delay_mm.empty() || v_cw.size() != delay_mm.size() ||
            v_pulsed.size() != delay_mm.size())
            throw std::invalid_argument("visibility curve columns differ in length");
        for (std::size_t i = 0; i < delay_mm.size(); ++i)
            if (!(v_cw[i] >= 0.0 && v_cw[i] <= 1.0 && v_pulsed[i] >= 0.0 && v_pulsed[i] <= 1.0))
                throw std::invalid_argument("visibilities must lie in [0, 1]");
    }
};

/// Residual phase-coherence estimate: the worst-case ratio of pulsed to CW
/// fringe visibility over the measured delays, clamped into [0, 1].
inline double estimate_pc(const VisibilityCurve& curve) {
    curve.validate();
    double best = -1.0;
    for (std::size_t i = 0; i < curve.delay_mm.size(); ++i) {
        if (!(curve.v_cw[i] > 0.0)) continue;
        best = std::max(best, curve.v_pulsed[i] / curve.v_cw[i]);
    }
    if (best < 0.0) throw std::invalid_argument("no delay has a positive CW visibility");
    return std::clamp(best, 0.0, 1.0);
}

/// Visibility (Imax - Imin)/(Imax + Imin) of a sinusoidal fringe scan with
/// known period, from a least-squares sinusoid fit rather than raw extrema.
inline double fringe_visibility(const std::vector<double>& positions,
                                const std::vector<double>& intensities, double period) {
    if (positions.size() != intensities.size() || positions.size() < 3)
        throw std::invalid_argument("need at least 3 samples of the fringe");
    if (!(period > 0.0)) throw std::invalid_argument("period must be positive");
    std::vector<std::array<double, 3>> rows;
    rows.reserve(positions.size());
    for (double x : positions) {
        const double ph = 2.0 * std::numbers::pi * x / period;
        rows.push_back({1.0, std::cos(ph), std::sin(ph)});
    }
    const auto x = least_squares<3>(rows, intensities);
    if (!(x[0] > 0.0)) throw std::invalid_argument("fringe has non-positive mean intensity");
    return std::clamp(std::hypot(x[1], x[2]) / x[0], 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Synthetic fixtures
// ---------------------------------------------------------------------------

/// The canonical 32-slot pattern used by the bundled fixtures. States follow
/// a closed walk realizing a fixed transition table with two properties:
/// every ordered state pair occurs, and each state sees "zero" and "one"
/// predecessors equally often, so the per-state average angle equals the
/// configured theta even with the sign-alternating deviation table.
/// Intensities repeat signal, signal, decoy, decoy, which balances intensity
/// predecessors the same way.
inline std::vector<SlotLabel> reference_sequence_labels() {
    // Transition counts [from][to]; row sums = column sums, all entries > 0.
    std::array<std::array<int, 3>, 3> remaining{{{5, 5, 2}, {5, 5, 2}, {2, 2, 4}}};
    std::vector<int> stack{0}, circuit;
    while (!stack.empty()) {
        const int v = stack.back();
        int next = -1;
        for (int j = 0; j < 3; ++j) {
            if (remaining[v][j] > 0) {
                next = j;
                break;
            }
        }
        if (next < 0) {
            circuit.push_back(v);
            stack.pop_back();
        } else {
            --remaining[v][next];
            stack.push_back(next);
        }
    }
    std::reverse(circuit.begin(), circuit.end());
    if (circuit.size() != 33 || circuit.front() != circuit.back())
        throw std::logic_error("reference sequence construction failed");
    std::vector<SlotLabel> labels(32);
    for (int i = 0; i < 32; ++i) {
        labels[i].state = source::kStates[circuit[i]];
        labels[i].intensity = (i % 4 < 2) ? IntensityLabel::Signal : IntensityLabel::Decoy;
    }
    return labels;
}

inline std::vector<double> default_qwp_angles() {
    std::vector<double> a(16);
    for (int i = 0; i < 16; ++i) a[i] = i * 180.0 / 16.0;
    return a;
}

/// Noiseless trace of the label sequence under the given profile: each
/// slot's state is the conditional state for its cyclic predecessor, at unit
/// total intensity.
inline QwpTrace synthetic_qwp_trace(const SourceProfile& profile,
                                    const std::vector<SlotLabel>& labels,
                                    const std::vector<double>& angles_deg) {
    profile.validate();
    QwpTrace trace;
    trace.angles_deg = angles_deg;
    trace.labels = labels;
    const std::size_t n = labels.size();
    trace.intensities.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto prev = labels[(i + n - 1) % n];
        const auto state = source::conditional_state(profile, labels[i].state, prev.state);
        const StokesVector s{1.0, state.s1(), state.s2(), state.s3()};
        trace.intensities[i].reserve(angles_deg.size());
        for (double rho : angles_deg) trace.intensities[i].push_back(qwp_forward(s, rho));
    }
    trace.validate();
    return trace;
}

/// Per-slot mean photon numbers of the label sequence under the profile's
/// conditional intensity table.
inline std::vector<double> synthetic_intensity_means(const SourceProfile& profile,
                                                     const std::vector<SlotLabel>& labels) {
    profile.validate();
    const std::size_t n = labels.size();
    std::vector<double> means(n);
    for (std::size_t i = 0; i < n; ++i)
        means[i] = profile.mu_actual(labels[i].intensity, labels[(i + n - 1) % n].intensity);
    return means;
}

/// Bundled interferometer curve: CW visibility decaying with delay, pulsed
/// visibility scaled so the worst-case ratio is exactly 1.9e-3 at zero delay.
inline VisibilityCurve reference_visibility_curve() {
    VisibilityCurve c;
    c.delay_mm = {0.0, 5.0, 10.0, 15.0, 20.0, 25.0};
    c.v_cw = {0.25, 0.20, 0.16, 0.125, 0.10, 0.08};
    c.v_pulsed = {0.000475, 0.0002, 0.00016, 0.000125, 0.0001, 0.00008};
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// CSV schemas (documented in the README)
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

inline std::string_view trim(std::string_view v) {
    while (!v.empty() && (v.front() == ' ' || v.front() == '\t' || v.front() == '\r'))
        v.remove_prefix(1);
    while (!v.empty() && (v.back() == ' ' || v.back() == '\t' || v.back() == '\r'))
        v.remove_suffix(1);
    return v;
}

inline double parse_double(std::string_view field, int row) {
    field = trim(field);
    double value = 0.0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
    if (res.ec != std::errc{} || res.ptr != field.data() + field.size())
        throw CsvError(row, "expected a number, got '" + std::string(field) + "'");
    return value;
}

inline long parse_long(std::string_view field, int row) {
    field = trim(field);
    long value = 0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
    if (res.ec != std::errc{} || res.ptr != field.data() + field.size())
        throw CsvError(row, "expected an integer, got '" + std::string(field) + "'");
    return value;
}

inline StateLabel parse_state(std::string_view field, int row) {
    field = trim(field);
    for (StateLabel j : source::kStates)
        if (field == source::name(j)) return j;
    throw CsvError(row, "unknown state label '" + std::string(field) + "'");
}

inline IntensityLabel parse_intensity(std::string_view field, int row) {
    field = trim(field);
    for (IntensityLabel a : source::kIntensities)
        if (field == source::name(a)) return a;
    throw CsvError(row, "unknown intensity label '" + std::string(field) + "'");
}

/// Reads all non-empty lines; checks the header, returns data rows paired
/// with their 1-based file row numbers.
inline std::vector<std::pair<int, std::string>> read_rows(std::istream& in,
                                                          const std::string& header) {
    std::vector<std::pair<int, std::string>> rows;
    std::string line;
    int row = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++row;
        const auto trimmed = trim(line);
        if (trimmed.empty() || trimmed.front() == '#') continue;
        if (!saw_header) {
            if (std::string(trimmed) != header)
                throw CsvError(row, "expected header '" + header + "'");
            saw_header = true;
            continue;
        }
        rows.emplace_back(row, std::string(trimmed));
    }
    if (!saw_header) throw CsvError(row == 0 ? 1 : row, "file is empty, expected '" + header + "'");
    if (rows.empty()) throw CsvError(row, "no data rows");
    return rows;
}

} // namespace detail

inline constexpr const char* kQwpCsvHeader = "slot,state,intensity,qwp_deg,counts";
inline constexpr const char* kIntensityCsvHeader = "slot,intensity,mean_photons";
inline constexpr const char* kVisibilityCsvHeader = "delay_mm,v_cw,v_pulsed";

/// slot,state,intensity,qwp_deg,counts — slots 0..N-1, every slot scanned at
/// the same angles in the same order, identical labels within a slot.
inline QwpTrace parse_qwp_csv(std::istream& in) {
    QwpTrace trace;
    for (const auto& [row, line] : detail::read_rows(in, kQwpCsvHeader)) {
        const auto f = detail::split_fields(line);
        if (f.size() != 5) throw CsvError(row, "expected 5 fields");
        const long slot = detail::parse_long(f[0], row);
        if (slot < 0) throw CsvError(row, "slot must be non-negative");
        const SlotLabel label{detail::parse_state(f[1], row), detail::parse_intensity(f[2], row)};
        const double angle = detail::parse_double(f[3], row);
        const double counts = detail::parse_double(f[4], row);
        if (!(counts >= 0.0)) throw CsvError(row, "counts must be non-negative");
        if (static_cast<std::size_t>(slot) > trace.intensities.size())
            throw CsvError(row, "slots must be contiguous from 0");
        if (static_cast<std::size_t>(slot) == trace.intensities.size()) {
            trace.intensities.emplace_back();
            trace.labels.push_back(label);
        }
        auto& slot_row = trace.intensities[slot];
        const auto& lbl = trace.labels[slot];
        if (lbl.state != label.state || lbl.intensity != label.intensity)
            throw CsvError(row, "labels change within a slot");
        if (trace.intensities.size() == 1) {
            trace.angles_deg.push_back(angle);
        } else {
            if (slot_row.size() >= trace.angles_deg.size())
                throw CsvError(row, "more angles than in slot 0");
            if (angle != trace.angles_deg[slot_row.size()])
                throw CsvError(row, "angle grid differs from slot 0");
        }
        slot_row.push_back(counts);
    }
    try {
        trace.validate();
    } catch (const std::invalid_argument& e) {
        throw CsvError(1, e.what());
    }
    return trace;
}

inline void write_qwp_csv(std::ostream& out, const QwpTrace& trace) {
    out << std::setprecision(17) << kQwpCsvHeader << '\n';
    for (std::size_t i = 0; i < trace.intensities.size(); ++i)
        for (std::size_t g = 0; g < trace.angles_deg.size(); ++g)
            out << i << ',' << source::name(trace.labels[i].state) << ','
                << source::name(trace.labels[i].intensity) << ',' << trace.angles_deg[g] << ','
                << trace.intensities[i][g] << '\n';
}

/// slot,intensity,mean_photons — slots 0..N-1 in order.
inline std::pair<std::vector<double>, std::vector<IntensityLabel>> parse_intensity_csv(
    std::istream& in) {
    std::vector<double> means;
    std::vector<IntensityLabel> labels;
    for (const auto& [row, line] : detail::read_rows(in, kIntensityCsvHeader)) {
        const auto f = detail::split_fields(line);
        if (f.size() != 3) throw CsvError(row, "expected 3 fields");
        const long slot = detail::parse_long(f[0], row);
        if (slot != static_cast<long>(means.size()))
            throw CsvError(row, "slots must be contiguous from 0");
        labels.push_back(detail::parse_intensity(f[1], row));
        const double mean = detail::parse_double(f[2], row);
        if (!(mean >= 0.0)) throw CsvError(row, "mean photon number must be non-negative");
        means.push_back(mean);
    }
    return {means, labels};
}

inline void write_intensity_csv(std::ostream& out, const std::vector<double>& means,
                                const std::vector<SlotLabel>& labels) {
    out << std::setprecision(17) << kIntensityCsvHeader << '\n';
    for (std::size_t i = 0; i < means.size(); ++i)
        out << i << ',' << source::name(labels[i].intensity) << ',' << means[i] << '\n';
}

/// delay_mm,v_cw,v_pulsed.
inline VisibilityCurve parse_visibility_csv(std::istream& in) {
    VisibilityCurve curve;
    for (const auto& [row, line] : detail::read_rows(in, kVisibilityCsvHeader)) {
        const auto f = detail::split_fields(line);
        if (f.size() != 3) throw CsvError(row, "expected 3 fields");
        curve.delay_mm.push_back(detail::parse_double(f[0], row));
        const double vcw = detail::parse_double(f[1], row);
        const double vp = detail::parse_double(f[2], row);
        if (!(vcw >= 0.0 && vcw <= 1.0 && vp >= 0.0 && vp <= 1.0))
            throw CsvError(row, "visibilities must lie in [0, 1]");
        curve.v_cw.push_back(vcw);
        curve.v_pulsed.push_back(vp);
    }
    return curve;
}

inline void write_visibility_csv(std::ostream& out, const VisibilityCurve& curve) {
    out << std::setprecision(17) << kVisibilityCsvHeader << '\n';
    for (std::size_t i = 0; i < curve.delay_mm.size(); ++i)
        out << curve.delay_mm[i] << ',' << curve.v_cw[i] << ',' << curve.v_pulsed[i] << '\n';
}

} // namespace qkdsim::characterize
