#pragma once

#include <array>
#include <optional>
#include <stdexcept>

#include "channel.hpp"
#include "source_model.hpp"

namespace qkdsim::protocol {

using source::IntensityLabel;
using source::StateLabel;
using channel::Detector;

enum class Basis : int { Z = 0, X = 1 };

inline Basis basis_of(StateLabel j) { return j == StateLabel::Plus ? Basis::X : Basis::Z; }
inline Basis basis_of(Detector d) {
    return (d == Detector::Z0 || d == Detector::Z1) ? Basis::Z : Basis::X;
}
/// Bit convention: |0> and |+> encode 0, |1> and the X-minus outcome encode 1.
inline int bit_of(StateLabel j) { return j == StateLabel::One ? 1 : 0; }
inline int bit_of(Detector d) {
    return (d == Detector::Z1 || d == Detector::XMinus) ? 1 : 0;
}

/// Detection bookkeeping of a protocol run, at the granularity every
/// estimator downstream needs: assigned clicks per (sent state, detector,
/// intensity) plus emission counts per (state, intensity).
///
/// Counts are stored as doubles so the same container carries exact Monte
/// Carlo integers (exact up to 2^53) and analytic expectations.
struct TallySet {
    std::array<std::array<std::array<double, 2>, 4>, 3> counts{}; // [state][detector][intensity]
    std::array<std::array<double, 2>, 3> sent{};                  // [state][intensity]
    double elapsed_pulses = 0.0;

    double& at(StateLabel j, Detector d, IntensityLabel a) {
        return counts[source::idx(j)][channel::idx(d)][source::idx(a)];
    }
    double at(StateLabel j, Detector d, IntensityLabel a) const {
        return counts[source::idx(j)][channel::idx(d)][source::idx(a)];
    }
    double& sent_at(StateLabel j, IntensityLabel a) {
        return sent[source::idx(j)][source::idx(a)];
    }
    double sent_at(StateLabel j, IntensityLabel a) const {
        return sent[source::idx(j)][source::idx(a)];
    }

    /// Detections with Alice basis A and Bob basis B, one intensity or both.
    double n(Basis alice, Basis bob, std::optional<IntensityLabel> sel = std::nullopt) const {
        return reduce(alice, bob, sel, false);
    }
    /// Errors in the same selection (Bob's bit differs from Alice's).
    double m(Basis alice, Basis bob, std::optional<IntensityLabel> sel = std::nullopt) const {
        return reduce(alice, bob, sel, true);
    }

    double n_sifted_z(IntensityLabel a) const { return n(Basis::Z, Basis::Z, a); }
    double m_sifted_z(IntensityLabel a) const { return m(Basis::Z, Basis::Z, a); }
    double n_sent(IntensityLabel a) const {
        double s = 0.0;
        for (StateLabel j : source::kStates) s += sent_at(j, a);
        return s;
    }
    double total_sent(StateLabel j) const {
        double s = 0.0;
        for (IntensityLabel a : source::kIntensities) s += sent_at(j, a);
        return s;
    }
    double total_detections() const {
        double s = 0.0;
        for (const auto& byState : counts)
            for (const auto& byDet : byState)
                for (double c : byDet) s += c;
        return s;
    }

    void add(const TallySet& other) {
        for (int j = 0; j < 3; ++j) {
            for (int d = 0; d < 4; ++d)
                for (int a = 0; a < 2; ++a) counts[j][d][a] += other.counts[j][d][a];
            for (int a = 0; a < 2; ++a) sent[j][a] += other.sent[j][a];
        }
        elapsed_pulses += other.elapsed_pulses;
    }

    void scale(double f) {
        for (auto& byState : counts)
            for (auto& byDet : byState)
                for (double& c : byDet) c *= f;
        for (auto& row : sent)
            for (double& s : row) s *= f;
        elapsed_pulses *= f;
    }

    void validate() const {
        double sent_total = 0.0;
        for (StateLabel j : source::kStates) {
            double det = 0.0, emitted = 0.0;
            for (IntensityLabel a : source::kIntensities) {
                if (!(sent_at(j, a) >= 0.0))
                    throw std::invalid_argument("negative emission count");
                emitted += sent_at(j, a);
                for (Detector d : channel::kDetectors) {
                    if (!(at(j, d, a) >= 0.0))
                        throw std::invalid_argument("negative detection count");
                    det += at(j, d, a);
                }
            }
            if (det > emitted * (1.0 + 1e-9) + 1e-6)
                throw std::invalid_argument("more detections than emitted pulses for a state");
            sent_total += emitted;
        }
        if (sent_total > elapsed_pulses * (1.0 + 1e-9) + 1e-6)
            throw std::invalid_argument("emission counts exceed elapsed pulses");
    }

  private:
    double reduce(Basis alice, Basis bob, std::optional<IntensityLabel> sel,
                  bool errors_only) const {
        double s = 0.0;
        for (StateLabel j : source::kStates) {
            if (basis_of(j) != alice) continue;
            for (Detector d : channel::kDetectors) {
                if (basis_of(d) != bob) continue;
                if (errors_only && bit_of(d) == bit_of(j)) continue;
                for (IntensityLabel a : source::kIntensities) {
                    if (sel && *sel != a) continue;
                    s += at(j, d, a);
                }
            }
        }
        return s;
    }
};

/// QBER of the selected basis pair; throws when the selection holds no
/// detections.
inline double qber(const TallySet& t, Basis alice, Basis bob,
                   std::optional<IntensityLabel> sel = std::nullopt) {
    const double n = t.n(alice, bob, sel);
    if (!(n > 0.0)) throw std::invalid_argument("qber undefined: no detections in selection");
    return t.m(alice, bob, sel) / n;
}

} // namespace qkdsim::protocol
