// Command-line front end: wires config files to the simulation, distillation,
// characterization and optimization pipelines and writes JSON/CSV reports.
//
// Exit codes: 0 success, 2 configuration or input-schema error, 3 runtime or
// data-invariant error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include <qkdsim/qkdsim.hpp>

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw std::runtime_error("short write to '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

json parse_json_file(const fs::path& path) {
    const std::string text = read_text(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

void write_run_outputs(const std::string& prefix, const qkdsim::protocol::TallySet& tallies,
                       const qkdsim::distill::KeyReport& report,
                       const qkdsim::config::AppConfig& cfg) {
    write_text(prefix + ".tallies.json",
               qkdsim::reports::tally_to_json(tallies, cfg.resolved).dump(2) + "\n");
    write_text(prefix + ".report.json",
               qkdsim::reports::report_to_json(report, cfg.resolved).dump(2) + "\n");
    std::ostringstream tcsv;
    qkdsim::reports::write_tally_csv(tcsv, tallies);
    write_text(prefix + ".tallies.csv", tcsv.str());
    std::ostringstream scsv;
    qkdsim::reports::write_summary_csv(scsv, report, cfg.link);
    write_text(prefix + ".summary.csv", scsv.str());
}

void print_report_summary(const qkdsim::distill::KeyReport& r) {
    std::cout << "sifted_rate_kbps=" << r.sifted_rate_bps / 1e3 << " qber_z_pct="
              << r.qber_z * 100.0 << " phi_z_pct=" << r.phi_z * 100.0
              << " secret_bits=" << r.secret_bits << " skr_kbps=" << r.skr_bps / 1e3 << "\n";
}

struct SimulateArgs {
    std::string config;
    std::string out = "qkdsim-run";
    std::string mode = "mc";
    double pulses = 1e7;
    std::uint64_t seed = 1;
    unsigned threads = 1;
};

int run_simulate(const SimulateArgs& a) {
    const auto cfg = qkdsim::config::load_config(a.config);
    qkdsim::protocol::TallySet tallies;
    if (a.mode == "analytic") {
        tallies = qkdsim::protocol::run_analytic(cfg.profile, cfg.link, a.pulses);
    } else {
        qkdsim::protocol::SimOptions opt;
        opt.n_pulses = static_cast<std::uint64_t>(a.pulses);
        opt.seed = a.seed;
        opt.threads = a.threads;
        tallies = qkdsim::protocol::run_monte_carlo(cfg.profile, cfg.link, opt);
    }
    const auto report =
        qkdsim::distill::distill(tallies, cfg.profile, cfg.link, cfg.security, cfg.p_c_star);
    write_run_outputs(a.out, tallies, report, cfg);
    print_report_summary(report);
    return 0;
}

struct DistillArgs {
    std::string config;
    std::string tallies;
    std::string out;
};

int run_distill(const DistillArgs& a) {
    const auto cfg = qkdsim::config::load_config(a.config);
    const auto tallies = qkdsim::reports::tally_from_json(parse_json_file(a.tallies));
    const auto report =
        qkdsim::distill::distill(tallies, cfg.profile, cfg.link, cfg.security, cfg.p_c_star);
    const json doc = qkdsim::reports::report_to_json(report, cfg.resolved);
    if (a.out.empty()) {
        std::cout << doc.dump(2) << "\n";
    } else {
        write_text(a.out + ".report.json", doc.dump(2) + "\n");
        std::ostringstream scsv;
        qkdsim::reports::write_summary_csv(scsv, report, cfg.link);
        write_text(a.out + ".summary.csv", scsv.str());
        print_report_summary(report);
    }
    return 0;
}

struct CharacterizeArgs {
    std::string qwp, intensity, visibility, out;
};

int run_characterize(const CharacterizeArgs& a) {
    namespace ch = qkdsim::characterize;
    json doc{{"schema_version", qkdsim::reports::kSchemaVersion}};
    if (!a.qwp.empty()) {
        std::ifstream in(a.qwp);
        if (!in) throw std::runtime_error("cannot read '" + a.qwp + "'");
        const auto trace = ch::parse_qwp_csv(in);
        std::vector<qkdsim::PureState> states;
        std::vector<qkdsim::source::StateLabel> labels;
        states.reserve(trace.labels.size());
        double max_depol = 0.0;
        for (std::size_t i = 0; i < trace.labels.size(); ++i) {
            const auto fitted = ch::fit_stokes(trace, i);
            const auto projected = qkdsim::stokes_to_state(fitted);
            states.push_back(projected.state);
            max_depol = std::max(max_depol, projected.depolarization);
            labels.push_back(trace.labels[i].state);
        }
        const auto table = ch::extract_correlations(states, labels);
        doc["kind"] = "state_correlations";
        doc["theta_avg_deg"] = table.theta_avg_deg;
        doc["delta_deg"] = table.delta_deg;
        doc["max_delta_deg"] = table.max_delta_deg;
        doc["max_s2_residual"] = table.max_s2_residual;
        doc["max_depolarization"] = max_depol;
    } else if (!a.intensity.empty()) {
        std::ifstream in(a.intensity);
        if (!in) throw std::runtime_error("cannot read '" + a.intensity + "'");
        const auto [means, labels] = ch::parse_intensity_csv(in);
        const auto stats = ch::decoy_correlation_stats(means, labels);
        doc["kind"] = "intensity_correlations";
        doc["mu"] = stats.mu_hat;
        doc["mu_cond"] = stats.mu_cond_hat;
        doc["max_rel_deviation"] = stats.max_rel_deviation;
    } else {
        std::ifstream in(a.visibility);
        if (!in) throw std::runtime_error("cannot read '" + a.visibility + "'");
        const auto curve = ch::parse_visibility_csv(in);
        doc["kind"] = "phase_randomization";
        doc["p_c_star"] = ch::estimate_pc(curve);
        doc["delay_mm"] = curve.delay_mm;
        doc["v_cw"] = curve.v_cw;
        doc["v_pulsed"] = curve.v_pulsed;
    }
    if (a.out.empty())
        std::cout << doc.dump(2) << "\n";
    else
        write_text(a.out, doc.dump(2) + "\n");
    return 0;
}

struct OptimizeArgs {
    std::string config;
    std::string out;
    std::string trace;
    bool grid_only = false;
    unsigned threads = 1;
};

int run_optimize(const OptimizeArgs& a) {
    const auto cfg = qkdsim::config::load_config(a.config);
    qkdsim::optimize::Options opt = cfg.optimizer;
    opt.grid_only = a.grid_only;
    opt.threads = a.threads;
    const auto res =
        qkdsim::optimize::optimize(cfg.profile, cfg.link, cfg.security, cfg.p_c_star, opt);
    json doc{{"schema_version", qkdsim::reports::kSchemaVersion},
             {"kind", "optimization"},
             {"feasible", res.feasible},
             {"best",
              {{"mu_signal", res.best.mu_signal},
               {"mu_decoy", res.best.mu_decoy},
               {"p_signal", res.best.p_signal},
               {"p_z_alice", res.best.p_z_alice}}},
             {"best_skr_bps", res.best_skr_bps},
             {"grid_points", res.grid_points},
             {"evaluations", res.trace.size()},
             {"config", cfg.resolved}};
    if (!a.trace.empty()) {
        std::ostringstream csv;
        qkdsim::optimize::write_trace_csv(csv, res.trace);
        write_text(a.trace, csv.str());
    }
    if (a.out.empty())
        std::cout << doc.dump(2) << "\n";
    else
        write_text(a.out, doc.dump(2) + "\n");
    return 0;
}

/// Writes the bundled synthetic fixtures: a polarimeter trace, per-slot mean
/// intensities and an interferometer visibility curve, all generated from
/// the measured-transmitter defaults so characterization can be exercised
/// end to end without hardware.
int run_gen_fixtures(const std::string& out_dir) {
    namespace ch = qkdsim::characterize;
    fs::create_directories(out_dir);
    const auto profile = qkdsim::source::reference_profile();
    const auto labels = ch::reference_sequence_labels();

    std::ostringstream qwp;
    ch::write_qwp_csv(qwp, ch::synthetic_qwp_trace(profile, labels, ch::default_qwp_angles()));
    write_text(fs::path(out_dir) / "qwp-trace.csv", qwp.str());

    std::ostringstream inten;
    ch::write_intensity_csv(inten, ch::synthetic_intensity_means(profile, labels), labels);
    write_text(fs::path(out_dir) / "intensity-means.csv", inten.str());

    std::ostringstream vis;
    ch::write_visibility_csv(vis, ch::reference_visibility_curve());
    write_text(fs::path(out_dir) / "visibility-curve.csv", vis.str());

    std::cout << "wrote qwp-trace.csv, intensity-means.csv, visibility-curve.csv to " << out_dir
              << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Simulator and finite-key analysis toolkit for a three-state decoy-state "
                 "polarization QKD link"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* sim_cmd = app.add_subcommand("simulate", "Run the channel model and distill a key");
    sim_cmd->add_option("--config", sim.config, "Configuration file (JSON)")->required();
    sim_cmd->add_option("--pulses", sim.pulses, "Number of transmitted pulses")
        ->check(CLI::PositiveNumber);
    sim_cmd->add_option("--seed", sim.seed, "Monte Carlo seed");
    sim_cmd->add_option("--mode", sim.mode, "mc (sampled) or analytic (expectation)")
        ->check(CLI::IsMember({"mc", "analytic"}));
    sim_cmd->add_option("--threads", sim.threads, "Worker threads (does not change results)");
    sim_cmd->add_option("--out", sim.out, "Output path prefix");

    DistillArgs dis;
    auto* dis_cmd = app.add_subcommand("distill", "Finite-key analysis of recorded tallies");
    dis_cmd->add_option("--config", dis.config, "Configuration file (JSON)")->required();
    dis_cmd->add_option("--tallies", dis.tallies, "Tally file (.tallies.json)")->required();
    dis_cmd->add_option("--out", dis.out, "Output path prefix (default: report to stdout)");

    CharacterizeArgs chr;
    auto* chr_cmd =
        app.add_subcommand("characterize", "Extract source imperfections from measurements");
    auto* qwp_opt = chr_cmd->add_option("--qwp", chr.qwp, "Rotating-plate polarimeter CSV");
    auto* int_opt =
        chr_cmd->add_option("--intensity", chr.intensity, "Per-slot mean photon number CSV");
    auto* vis_opt =
        chr_cmd->add_option("--visibility", chr.visibility, "Interferometer visibility CSV");
    qwp_opt->excludes(int_opt)->excludes(vis_opt);
    int_opt->excludes(vis_opt);
    chr_cmd->add_option("--out", chr.out, "Output file (default: stdout)");

    OptimizeArgs opt;
    auto* opt_cmd = app.add_subcommand("optimize", "Search protocol parameters for maximum SKR");
    opt_cmd->add_option("--config", opt.config, "Configuration file (JSON)")->required();
    opt_cmd->add_flag("--grid-only", opt.grid_only, "Skip golden-section refinement");
    opt_cmd->add_option("--trace", opt.trace, "Write the full evaluation trace CSV here");
    opt_cmd->add_option("--threads", opt.threads, "Worker threads (does not change results)");
    opt_cmd->add_option("--out", opt.out, "Output file (default: stdout)");

    std::string fixture_dir = "fixtures";
    auto* gen_cmd = app.add_subcommand("gen-fixtures", "Regenerate the bundled synthetic fixtures");
    gen_cmd->add_option("--out-dir", fixture_dir, "Directory for the fixture CSVs");

    try {
        app.parse(argc, argv);
        if (sim_cmd->parsed()) return run_simulate(sim);
        if (dis_cmd->parsed()) return run_distill(dis);
        if (chr_cmd->parsed()) {
            if (chr.qwp.empty() && chr.intensity.empty() && chr.visibility.empty())
                throw CLI::RequiredError("one of --qwp/--intensity/--visibility");
            return run_characterize(chr);
        }
        if (opt_cmd->parsed()) return run_optimize(opt);
        if (gen_cmd->parsed()) return run_gen_fixtures(fixture_dir);
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    } catch (const qkdsim::config::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const qkdsim::characterize::CsvError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        // Domain invariant violated by runtime data (tallies, measurements).
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
