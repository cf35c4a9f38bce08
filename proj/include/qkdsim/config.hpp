#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "channel.hpp"
#include "distillation.hpp"
#include "optimizer.hpp"
#include "source_model.hpp"

namespace qkdsim::config {

using nlohmann::json;

/// Anything wrong with a configuration file: unreadable, unparsable, unknown
/// keys, or values that fail the domain invariants. The CLI maps this to
/// exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Everything a pipeline run needs, plus the fully resolved configuration
/// (defaults applied) for embedding into every output file.
struct AppConfig {
    source::SourceProfile profile;
    channel::LinkModel link;
    distill::SecurityParams security;
    double p_c_star = 0.0;
    double block_bits = 4192.0 * 1944.0;
    optimize::Options optimizer;
    json resolved;
};

namespace detail {

inline int line_of_byte(const std::string& text, std::size_t byte) {
    int line = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i)
        if (text[i] == '\n') ++line;
    return line;
}

inline double as_number(const json& v, const std::string& where) {
    if (!v.is_number()) throw ConfigError(where + " must be a number");
    return v.get<double>();
}

template <std::size_t N>
std::array<double, N> as_array(const json& v, const std::string& where) {
    if (!v.is_array() || v.size() != N)
        throw ConfigError(where + " must be an array of " + std::to_string(N) + " numbers");
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i)
        out[i] = as_number(v[i], where + "[" + std::to_string(i) + "]");
    return out;
}

template <std::size_t R, std::size_t C>
std::array<std::array<double, C>, R> as_table(const json& v, const std::string& where) {
    if (!v.is_array() || v.size() != R)
        throw ConfigError(where + " must be a " + std::to_string(R) + "x" + std::to_string(C) +
                          " table");
    std::array<std::array<double, C>, R> out{};
    for (std::size_t r = 0; r < R; ++r)
        out[r] = as_array<C>(v[r], where + "[" + std::to_string(r) + "]");
    return out;
}

/// Strict section reader: every key must be claimed, leftovers are errors.
class Section {
  public:
    Section(const json& root, const char* key) : path_(key) {
        if (const auto it = root.find(key); it != root.end()) {
            if (!it->is_object())
                throw ConfigError(std::string("section '") + key + "' must be a table");
            obj_ = &*it;
        }
    }

    const json* find(const char* key) {
        if (!obj_) return nullptr;
        claimed_.insert(key);
        const auto it = obj_->find(key);
        return it == obj_->end() ? nullptr : &*it;
    }

    bool number(const char* key, double& target) {
        if (const json* v = find(key)) {
            target = as_number(*v, path_ + "." + key);
            return true;
        }
        return false;
    }

    bool boolean(const char* key, bool& target) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) throw ConfigError(path_ + "." + key + " must be a boolean");
            target = v->get<bool>();
            return true;
        }
        return false;
    }

    template <std::size_t N>
    bool array(const char* key, std::array<double, N>& target) {
        if (const json* v = find(key)) {
            target = as_array<N>(*v, path_ + "." + key);
            return true;
        }
        return false;
    }

    void finish() const {
        if (!obj_) return;
        for (const auto& [key, value] : obj_->items())
            if (!claimed_.count(key))
                throw ConfigError("unknown key '" + key + "' in section '" + path_ + "'");
    }

  private:
    const json* obj_ = nullptr;
    std::string path_;
    std::set<std::string> claimed_;
};

} // namespace detail

/// The resolved configuration with every default spelled out; embedded under
/// "config" in all output files.
inline json resolved_json(const AppConfig& c) {
    return json{
        {"source",
         {{"theta_avg_deg", c.profile.theta_avg_deg},
          {"delta_deg", c.profile.delta_deg},
          {"mu", c.profile.mu},
          {"mu_cond", c.profile.mu_cond},
          {"p_c", c.profile.p_c},
          {"p_state", c.profile.p_state},
          {"p_intensity", c.profile.p_intensity}}},
        {"link",
         {{"fiber_length_km", c.link.fiber_length_km},
          {"attenuation_db_per_km", c.link.attenuation_db_per_km},
          {"bob_insertion_loss_db", c.link.bob_insertion_loss_db},
          {"detector_efficiency", c.link.detector_efficiency},
          {"dark_rate_hz", c.link.dark_rate_hz},
          {"dead_time_s", c.link.dead_time_s},
          {"repetition_rate_hz", c.link.repetition_rate_hz},
          {"p_basis_bob_z", c.link.p_basis_bob_z},
          {"misalignment_deg", c.link.misalignment_deg}}},
        {"security", {{"eps_sec", c.security.eps_sec}, {"eps_corr", c.security.eps_corr}}},
        {"distillation", {{"p_c_star", c.p_c_star}, {"block_bits", c.block_bits}}},
        {"optimizer",
         {{"mu_signal_min", c.optimizer.mu_signal_min},
          {"mu_signal_max", c.optimizer.mu_signal_max},
          {"mu_decoy_min", c.optimizer.mu_decoy_min},
          {"mu_decoy_max", c.optimizer.mu_decoy_max},
          {"prob_min", c.optimizer.prob_min},
          {"prob_max", c.optimizer.prob_max},
          {"mu_step", c.optimizer.mu_step},
          {"prob_step", c.optimizer.prob_step},
          {"refine_passes", c.optimizer.refine_passes}}}};
}

/// Parses and validates a configuration document. Units: km, dB, dB/km, Hz,
/// seconds, degrees, photons per pulse; probabilities dimensionless.
inline AppConfig parse_config(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("line " + std::to_string(detail::line_of_byte(text, e.byte)) + ": " +
                          e.what());
    }
    if (!root.is_object()) throw ConfigError("top level must be a table of sections");
    static const std::set<std::string> known_sections{"source", "link", "security",
                                                      "distillation", "optimizer"};
    for (const auto& [key, value] : root.items())
        if (!known_sections.count(key)) throw ConfigError("unknown section '" + key + "'");

    AppConfig c;
    c.profile = source::SourceProfile{}; // ideal transmitter unless configured

    detail::Section src(root, "source");
    src.array("theta_avg_deg", c.profile.theta_avg_deg);
    const json* delta = src.find("delta_deg");
    const json* max_delta = src.find("max_delta_deg");
    if (delta && max_delta)
        throw ConfigError("source: give either delta_deg or max_delta_deg, not both");
    if (delta) c.profile.delta_deg = detail::as_table<3, 3>(*delta, "source.delta_deg");
    if (max_delta) {
        // Shorthand for the measured summary: only per-state maxima are
        // known, installed as +max after "zero", -max after "one", 0 after
        // "plus" so the configured spread is realized.
        const auto m = detail::as_array<3>(*max_delta, "source.max_delta_deg");
        for (int j = 0; j < 3; ++j) c.profile.delta_deg[j] = {m[j], -m[j], 0.0};
    }
    const bool mu_given = src.array("mu", c.profile.mu);
    for (int a = 0; a < 2; ++a)
        c.profile.mu_cond[a] = {c.profile.mu[a], c.profile.mu[a]};
    (void)mu_given;
    const json* mu_cond = src.find("mu_cond");
    const json* corr = src.find("intensity_correlation");
    if (mu_cond && corr)
        throw ConfigError("source: give either mu_cond or intensity_correlation, not both");
    if (mu_cond) c.profile.mu_cond = detail::as_table<2, 2>(*mu_cond, "source.mu_cond");
    if (corr) {
        // Scalar shorthand: intensities drop by the factor after a signal
        // pulse and rise by it after a decoy pulse.
        const double crel = detail::as_number(*corr, "source.intensity_correlation");
        if (!(crel >= 0.0 && crel < 1.0))
            throw ConfigError("source.intensity_correlation must lie in [0, 1)");
        for (int a = 0; a < 2; ++a)
            c.profile.mu_cond[a] = {c.profile.mu[a] * (1.0 - crel),
                                    c.profile.mu[a] * (1.0 + crel)};
    }
    src.number("p_c", c.profile.p_c);
    src.array("p_state", c.profile.p_state);
    src.array("p_intensity", c.profile.p_intensity);
    src.finish();

    detail::Section link(root, "link");
    link.number("fiber_length_km", c.link.fiber_length_km);
    link.number("attenuation_db_per_km", c.link.attenuation_db_per_km);
    link.number("bob_insertion_loss_db", c.link.bob_insertion_loss_db);
    link.number("detector_efficiency", c.link.detector_efficiency);
    link.number("dark_rate_hz", c.link.dark_rate_hz);
    link.number("dead_time_s", c.link.dead_time_s);
    link.number("repetition_rate_hz", c.link.repetition_rate_hz);
    link.number("p_basis_bob_z", c.link.p_basis_bob_z);
    link.number("misalignment_deg", c.link.misalignment_deg);
    link.finish();

    detail::Section sec(root, "security");
    sec.number("eps_sec", c.security.eps_sec);
    sec.number("eps_corr", c.security.eps_corr);
    sec.finish();

    c.p_c_star = c.profile.p_c; // measured discount defaults to the modeled one
    detail::Section dist(root, "distillation");
    dist.number("p_c_star", c.p_c_star);
    dist.number("block_bits", c.block_bits);
    dist.finish();

    detail::Section opt(root, "optimizer");
    opt.number("mu_signal_min", c.optimizer.mu_signal_min);
    opt.number("mu_signal_max", c.optimizer.mu_signal_max);
    opt.number("mu_decoy_min", c.optimizer.mu_decoy_min);
    opt.number("mu_decoy_max", c.optimizer.mu_decoy_max);
    opt.number("prob_min", c.optimizer.prob_min);
    opt.number("prob_max", c.optimizer.prob_max);
    opt.number("mu_step", c.optimizer.mu_step);
    opt.number("prob_step", c.optimizer.prob_step);
    double passes = c.optimizer.refine_passes;
    if (opt.number("refine_passes", passes)) c.optimizer.refine_passes = static_cast<int>(passes);
    opt.finish();
    c.optimizer.block_bits = c.block_bits;

    try {
        c.profile.validate();
        c.link.validate();
        c.security.validate();
        c.optimizer.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (!(c.p_c_star >= 0.0 && c.p_c_star <= 1.0))
        throw ConfigError("distillation.p_c_star must lie in [0, 1]");
    if (!(c.block_bits >= 1.0)) throw ConfigError("distillation.block_bits must be at least 1");
    if (optimize::grid_cardinality(c.optimizer) == 0)
        throw ConfigError("optimizer: empty feasible region");

    c.resolved = resolved_json(c);
    return c;
}

inline AppConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_config(buf.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

} // namespace qkdsim::config
