#pragma once

#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "channel.hpp"
#include "distillation.hpp"
#include "tally.hpp"

namespace qkdsim::reports {

using nlohmann::json;
using protocol::Basis;
using protocol::TallySet;

/// Version of every JSON document this library writes. Readers reject other
/// versions instead of guessing.
inline constexpr int kSchemaVersion = 1;

inline json tally_to_json(const TallySet& t, const json& resolved_config) {
    t.validate();
    json sent, counts;
    for (source::StateLabel j : source::kStates) {
        json per_int, per_det;
        for (source::IntensityLabel a : source::kIntensities)
            per_int[source::name(a)] = t.sent_at(j, a);
        for (channel::Detector d : channel::kDetectors) {
            json cell;
            for (source::IntensityLabel a : source::kIntensities)
                cell[source::name(a)] = t.at(j, d, a);
            per_det[channel::name(d)] = cell;
        }
        sent[source::name(j)] = per_int;
        counts[source::name(j)] = per_det;
    }
    const double n_z = t.n(Basis::Z, Basis::Z);
    const double m_z = t.m(Basis::Z, Basis::Z);
    return json{{"schema_version", kSchemaVersion},
                {"kind", "tally_set"},
                {"elapsed_pulses", t.elapsed_pulses},
                {"sent", sent},
                {"counts", counts},
                {"derived",
                 {{"n_sifted_z", n_z},
                  {"m_sifted_z", m_z},
                  {"qber_z", n_z > 0.0 ? m_z / n_z : 0.0},
                  {"n_sifted_x", t.n(Basis::X, Basis::X)},
                  {"total_detections", t.total_detections()}}},
                {"config", resolved_config}};
}

/// Inverse of tally_to_json. Structural problems and disagreements between
/// the stored derived block and the counts are data errors (the CLI maps
/// them to exit code 3), not config errors.
inline TallySet tally_from_json(const json& j) {
    if (!j.is_object() || !j.contains("kind") || j["kind"] != "tally_set")
        throw std::runtime_error("not a tally_set document");
    if (!j.contains("schema_version") || j["schema_version"] != kSchemaVersion)
        throw std::runtime_error("unsupported tally_set schema version");
    TallySet t;
    t.elapsed_pulses = j.at("elapsed_pulses").get<double>();
    for (source::StateLabel sj : source::kStates) {
        const auto& per_int = j.at("sent").at(source::name(sj));
        for (source::IntensityLabel a : source::kIntensities)
            t.sent_at(sj, a) = per_int.at(source::name(a)).get<double>();
        const auto& per_det = j.at("counts").at(source::name(sj));
        for (channel::Detector d : channel::kDetectors) {
            const auto& cell = per_det.at(channel::name(d));
            for (source::IntensityLabel a : source::kIntensities)
                t.at(sj, d, a) = cell.at(source::name(a)).get<double>();
        }
    }
    t.validate();
    if (j.contains("derived")) {
        const auto& der = j["derived"];
        auto check = [&](const char* key, double actual) {
            if (!der.contains(key)) return;
            const double stored = der.at(key).get<double>();
            const double scale = std::max({1.0, std::abs(stored), std::abs(actual)});
            if (std::abs(stored - actual) > 1e-6 * scale)
                throw std::runtime_error(std::string("tally_set invariant violation: derived ") +
                                         key + " disagrees with the stored counts");
        };
        const double n_z = t.n(Basis::Z, Basis::Z);
        check("n_sifted_z", n_z);
        check("m_sifted_z", t.m(Basis::Z, Basis::Z));
        check("qber_z", n_z > 0.0 ? t.m(Basis::Z, Basis::Z) / n_z : 0.0);
        check("n_sifted_x", t.n(Basis::X, Basis::X));
        check("total_detections", t.total_detections());
    }
    return t;
}

inline json report_to_json(const distill::KeyReport& r, const json& resolved_config) {
    return json{{"schema_version", kSchemaVersion},
                {"kind", "key_report"},
                {"n_z", r.n_z},
                {"m_z", r.m_z},
                {"qber_z", r.qber_z},
                {"s0_z", r.s0_z},
                {"s1_z", r.s1_z},
                {"v1_x", r.v1_x},
                {"phi_z", r.phi_z},
                {"lambda_ec", r.lambda_ec},
                {"penalty_bits", r.penalty},
                {"raw_bits", r.raw_bits},
                {"discounted_bits", r.discounted_bits},
                {"secret_bits", r.secret_bits},
                {"skr_bps", r.skr_bps},
                {"sifted_rate_bps", r.sifted_rate_bps},
                {"tau0", r.tau0},
                {"tau1", r.tau1},
                {"eps_sec", r.eps_sec},
                {"eps_corr", r.eps_corr},
                {"p_c_star", r.p_c_star},
                {"elapsed_pulses", r.elapsed_pulses},
                {"repetition_rate_hz", r.repetition_rate_hz},
                {"insufficient", r.insufficient},
                {"config", resolved_config}};
}

inline constexpr const char* kTallyCsvHeader = "kind,state,detector,intensity,value";

inline void write_tally_csv(std::ostream& out, const TallySet& t) {
    out << std::setprecision(17) << kTallyCsvHeader << '\n';
    out << "elapsed_pulses,-,-,-," << t.elapsed_pulses << '\n';
    for (source::StateLabel j : source::kStates)
        for (source::IntensityLabel a : source::kIntensities)
            out << "sent," << source::name(j) << ",-," << source::name(a) << ','
                << t.sent_at(j, a) << '\n';
    for (source::StateLabel j : source::kStates)
        for (channel::Detector d : channel::kDetectors)
            for (source::IntensityLabel a : source::kIntensities)
                out << "count," << source::name(j) << ',' << channel::name(d) << ','
                    << source::name(a) << ',' << t.at(j, d, a) << '\n';
}

inline constexpr const char* kSummaryCsvHeader =
    "fiber_length_km,attenuation_db,sifted_kbps,qber_pct,phi_pct,skr_kbps";

/// One-line operating-point summary in the units used to quote such links:
/// fiber attenuation in dB, sifted and secret rates in kbps, errors in %.
inline void write_summary_csv(std::ostream& out, const distill::KeyReport& r,
                              const channel::LinkModel& link) {
    out << std::setprecision(17) << kSummaryCsvHeader << '\n';
    out << link.fiber_length_km << ',' << link.fiber_length_km * link.attenuation_db_per_km
        << ',' << r.sifted_rate_bps / 1e3 << ',' << r.qber_z * 100.0 << ',' << r.phi_z * 100.0
        << ',' << r.skr_bps / 1e3 << '\n';
}

} // namespace qkdsim::reports
