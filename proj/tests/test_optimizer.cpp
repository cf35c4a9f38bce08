#include "catch_amalgamated.hpp"

#include <cmath>
#include <sstream>

#include <qkdsim/optimizer.hpp>

using namespace qkdsim;
using namespace qkdsim::optimize;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Coarse box containing the reference operating point; 144 grid points.
Options coarse_box() {
    Options opt;
    opt.mu_signal_min = 0.2;
    opt.mu_signal_max = 0.4;
    opt.mu_decoy_min = 0.04;
    opt.mu_decoy_max = 0.35;
    opt.mu_step = 0.1;
    opt.prob_min = 0.3;
    opt.prob_max = 0.9;
    opt.prob_step = 0.2;
    return opt;
}

bool same_params(const Params& a, const Params& b) {
    return a.mu_signal == b.mu_signal && a.mu_decoy == b.mu_decoy && a.p_signal == b.p_signal &&
           a.p_z_alice == b.p_z_alice;
}

} // namespace

TEST_CASE("option validation") {
    Options opt;
    CHECK_NOTHROW(opt.validate());
    SECTION("steps") {
        opt.mu_step = 0.0;
        CHECK_THROWS_WITH(opt.validate(), ContainsSubstring("grid steps"));
    }
    SECTION("intensity box") {
        opt.mu_decoy_min = 0.0;
        CHECK_THROWS_AS(opt.validate(), std::invalid_argument);
        opt = Options{};
        opt.mu_signal_max = 1.5;
        CHECK_THROWS_WITH(opt.validate(), ContainsSubstring("mu <= 1"));
    }
    SECTION("probability box") {
        opt.prob_min = 0.0;
        CHECK_THROWS_AS(opt.validate(), std::invalid_argument);
        opt = Options{};
        opt.prob_max = 1.0;
        CHECK_THROWS_AS(opt.validate(), std::invalid_argument);
    }
    SECTION("block size and refinement schedule") {
        opt.block_bits = 0.5;
        CHECK_THROWS_WITH(opt.validate(), ContainsSubstring("block_bits"));
        opt = Options{};
        opt.refine_passes = -1;
        CHECK_THROWS_AS(opt.validate(), std::invalid_argument);
        opt = Options{};
        opt.refine_iters = 0;
        CHECK_THROWS_AS(opt.validate(), std::invalid_argument);
    }
}

TEST_CASE("grid enumeration respects the intensity ordering") {
    const Options opt = coarse_box();
    // mu_signal in {0.2, 0.3, 0.4}, mu_decoy in {0.04, 0.14, 0.24, 0.34}
    // restricted to mu_decoy < mu_signal: 2 + 3 + 4 = 9 intensity pairs,
    // times 4 x 4 probability choices.
    CHECK(grid_cardinality(opt) == 144);

    const auto grid = grid_points(opt);
    REQUIRE(grid.size() == 144);
    CHECK(grid.front().mu_signal == 0.2);
    CHECK(grid.front().mu_decoy == 0.04);
    CHECK(grid.front().p_signal == 0.3);
    CHECK(grid.front().p_z_alice == 0.3);
    // p_z_alice is the innermost axis.
    CHECK(grid[1].p_z_alice == 0.5);
    CHECK(grid[1].p_signal == 0.3);
    for (const auto& q : grid) {
        CHECK(q.mu_decoy < q.mu_signal);
        CHECK(q.mu_signal <= 0.4);
        CHECK(q.mu_decoy >= 0.04);
    }
}

TEST_CASE("an inverted intensity box has no feasible points") {
    Options opt = coarse_box();
    opt.mu_signal_min = opt.mu_signal_max = 0.1;
    opt.mu_decoy_min = opt.mu_decoy_max = 0.2;
    CHECK(grid_cardinality(opt) == 0);
    CHECK_THROWS_WITH(grid_points(opt), ContainsSubstring("empty feasible region"));
    CHECK_THROWS_AS(qkdsim::optimize::optimize(source::reference_profile(), channel::LinkModel{},
                             distill::SecurityParams{}, 0.0019, opt),
                    std::invalid_argument);
}

TEST_CASE("parameters lift from a profile") {
    const auto p = Params::from_profile(source::reference_profile());
    CHECK(p.mu_signal == 0.3);
    CHECK(p.mu_decoy == 0.15);
    CHECK(p.p_signal == 0.6);
    CHECK_THAT(p.p_z_alice, WithinRel(0.9, 1e-12));
}

TEST_CASE("the objective rebuilds a consistent profile") {
    const auto base = source::reference_profile();
    Objective obj(base, channel::LinkModel{}, distill::SecurityParams{}, 0.0019,
                  Options{}.block_bits);
    const Params q{0.42, 0.11, 0.55, 0.8};
    const auto p = obj.profile_at(q);
    CHECK(p.mu[0] == 0.42);
    CHECK(p.mu[1] == 0.11);
    CHECK_THAT(p.p_state[0], WithinRel(0.4, 1e-12));
    CHECK_THAT(p.p_state[2], WithinRel(0.2, 1e-12));
    CHECK_THAT(p.p_intensity[1], WithinRel(0.45, 1e-12));
    // Relative intensity-correlation strengths carry over to the new means.
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            CHECK_THAT(p.mu_cond[a][b] / p.mu[a], WithinRel(base.mu_cond[a][b] / base.mu[a], 1e-12));
    CHECK_NOTHROW(p.validate());
    // The angle model is untouched.
    CHECK(p.theta_avg_deg == base.theta_avg_deg);
}

TEST_CASE("grid-only search records exactly the grid") {
    Options opt = coarse_box();
    opt.grid_only = true;
    const auto res = qkdsim::optimize::optimize(source::reference_profile(), channel::LinkModel{},
                              distill::SecurityParams{}, 0.0019, opt);
    CHECK(res.grid_points == 144);
    REQUIRE(res.trace.size() == 144);

    double best_seen = 0.0;
    bool best_in_trace = false;
    for (const auto& pt : res.trace) {
        CHECK(pt.skr_bps >= 0.0);
        CHECK(res.best_skr_bps >= pt.skr_bps);
        best_seen = std::max(best_seen, pt.skr_bps);
        if (same_params(pt.params, res.best)) best_in_trace = true;
    }
    CHECK(res.best_skr_bps == best_seen);
    CHECK(best_in_trace);
    CHECK(res.feasible == (res.best_skr_bps > 0.0));
    // The default link still distills a positive key somewhere in this box.
    CHECK(res.feasible);
}

TEST_CASE("refinement only improves on the grid and on the operating point") {
    const auto profile = source::reference_profile();
    Options opt = coarse_box();
    opt.refine_passes = 1;
    const auto res =
        qkdsim::optimize::optimize(profile, channel::LinkModel{}, distill::SecurityParams{}, 0.0019, opt);

    // The search is seeded with the profile's own parameters, so it can
    // never report less than the configured operating point delivers.
    Objective obj(profile, channel::LinkModel{}, distill::SecurityParams{}, 0.0019,
                  opt.block_bits);
    const Params incumbent = Params::from_profile(profile);
    const double incumbent_skr = obj(incumbent);
    CHECK(incumbent_skr > 0.0);
    CHECK(res.best_skr_bps >= incumbent_skr);

    REQUIRE(res.trace.size() > 144); // incumbent + grid + refinement probes
    CHECK(same_params(res.trace.front().params, incumbent));
    CHECK(res.trace.front().skr_bps == incumbent_skr);
    for (const auto& pt : res.trace) CHECK(res.best_skr_bps >= pt.skr_bps);
    CHECK(res.feasible);
    // Refined intensities stay inside the box with the ordering intact.
    CHECK(res.best.mu_signal <= opt.mu_signal_max);
    CHECK(res.best.mu_decoy >= opt.mu_decoy_min);
    CHECK(res.best.mu_decoy < res.best.mu_signal);
    CHECK(res.best.p_signal >= opt.prob_min);
    CHECK(res.best.p_z_alice <= opt.prob_max);
}

TEST_CASE("the search is deterministic and thread-invariant") {
    const auto profile = source::reference_profile();
    Options opt = coarse_box();
    opt.refine_passes = 1;
    opt.refine_iters = 8;

    const auto a = qkdsim::optimize::optimize(profile, channel::LinkModel{}, distill::SecurityParams{}, 0.0019, opt);
    const auto b = qkdsim::optimize::optimize(profile, channel::LinkModel{}, distill::SecurityParams{}, 0.0019, opt);
    Options threaded = opt;
    threaded.threads = 3;
    const auto c =
        qkdsim::optimize::optimize(profile, channel::LinkModel{}, distill::SecurityParams{}, 0.0019, threaded);

    for (const auto* other : {&b, &c}) {
        CHECK(other->best_skr_bps == a.best_skr_bps);
        CHECK(same_params(other->best, a.best));
        REQUIRE(other->trace.size() == a.trace.size());
        for (std::size_t i = 0; i < a.trace.size(); ++i) {
            CHECK(same_params(other->trace[i].params, a.trace[i].params));
            CHECK(other->trace[i].skr_bps == a.trace[i].skr_bps);
        }
    }
}

TEST_CASE("an opaque link is reported as infeasible") {
    channel::LinkModel dead;
    dead.fiber_length_km = 10000.0; // ~2000 dB of fiber
    dead.dark_rate_hz = 0.0;

    Options opt;
    opt.mu_signal_min = opt.mu_signal_max = 0.3;
    opt.mu_decoy_min = opt.mu_decoy_max = 0.15;
    opt.prob_min = opt.prob_max = 0.5;
    opt.grid_only = true;
    const auto res =
        qkdsim::optimize::optimize(source::reference_profile(), dead, distill::SecurityParams{}, 0.0019, opt);
    REQUIRE(res.trace.size() == 1);
    CHECK(res.best_skr_bps == 0.0);
    CHECK_FALSE(res.feasible);
}

TEST_CASE("trace CSV layout") {
    std::vector<TracePoint> trace{{{0.3, 0.15, 0.6, 0.9}, 54321.0},
                                  {{0.31, 0.14, 0.55, 0.85}, 0.0}};
    std::stringstream out;
    write_trace_csv(out, trace);
    std::string line;
    REQUIRE(std::getline(out, line));
    CHECK(line == "mu_signal,mu_decoy,p_signal,p_z_alice,skr_bps");
    REQUIRE(std::getline(out, line));
    // Values are written round-trip exact; parse them back.
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    double mu0 = 0.0, mu1 = 0.0, ps = 0.0, pz = 0.0, skr = 0.0;
    REQUIRE(row >> mu0 >> mu1 >> ps >> pz >> skr);
    CHECK(mu0 == 0.3);
    CHECK(mu1 == 0.15);
    CHECK(ps == 0.6);
    CHECK(pz == 0.9);
    CHECK(skr == 54321.0);
    REQUIRE(std::getline(out, line));
    CHECK_FALSE(std::getline(out, line));
}
