#include "catch_amalgamated.hpp"

#include <cmath>
#include <random>

#include <qkdsim/channel.hpp>

using namespace qkdsim;
using namespace qkdsim::channel;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

LinkModel lossless() {
    LinkModel m;
    m.fiber_length_km = 0.0;
    m.bob_insertion_loss_db = 0.0;
    m.detector_efficiency = 1.0;
    m.dark_rate_hz = 0.0;
    return m;
}

} // namespace

TEST_CASE("transmittance follows the link budget") {
    LinkModel m = lossless();
    CHECK(transmittance(m) == 1.0);

    m.fiber_length_km = 101.0;
    CHECK_THAT(transmittance(m), WithinRel(9.55e-3, 1e-3)); // 20.2 dB of fiber

    m.fiber_length_km = 151.5;
    m.detector_efficiency = 0.8;
    CHECK_THAT(transmittance(m), WithinRel(7.46e-4, 1e-3)); // 30.3 dB and 80% efficiency
}

TEST_CASE("transmittance is monotone in the loss terms") {
    LinkModel m;
    double prev = 1.0;
    for (double km : {0.0, 50.0, 101.0, 151.5, 200.0}) {
        m.fiber_length_km = km;
        const double t = transmittance(m);
        CHECK((t < prev || km == 0.0));
        prev = t;
    }
    LinkModel a = m, b = m;
    b.bob_insertion_loss_db = a.bob_insertion_loss_db + 2.0;
    CHECK(transmittance(b) < transmittance(a));
}

TEST_CASE("link model validation") {
    LinkModel m;
    CHECK_NOTHROW(m.validate());
    SECTION("attenuation must be positive") {
        m.attenuation_db_per_km = 0.0;
        CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    }
    SECTION("efficiency in (0, 1]") {
        m.detector_efficiency = 0.0;
        CHECK_THROWS_AS(m.validate(), std::invalid_argument);
        m.detector_efficiency = 1.2;
        CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    }
    SECTION("dead time non-negative") {
        m.dead_time_s = -1e-9;
        CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    }
    SECTION("Bob basis choice strictly between 0 and 1") {
        m.p_basis_bob_z = 1.0;
        CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    }
}

TEST_CASE("vacuum with dark counts off never clicks") {
    LinkModel m = lossless();
    const auto p = click_probabilities(PureState::from_theta_deg(0.0), 0.0, m);
    for (Detector d : kDetectors) CHECK(p[idx(d)] == 0.0);
}

TEST_CASE("bright aligned light saturates its detector and spares the opposite one") {
    LinkModel m = lossless();
    // Very large mean photon number: the matched detector fires essentially
    // always, the orthogonal one stays dark without dark counts.
    const auto p = click_probabilities(PureState::from_theta_deg(0.0), 1e6, m);
    CHECK_THAT(p[idx(Detector::Z0)], WithinAbs(1.0, 1e-12));
    CHECK(p[idx(Detector::Z1)] == 0.0);
}

TEST_CASE("click probability closed form") {
    LinkModel m;
    m.fiber_length_km = 101.0;
    m.bob_insertion_loss_db = 0.0;
    m.detector_efficiency = 1.0;
    m.p_basis_bob_z = 0.45;
    const double t = transmittance(m);
    const double p_dark = m.dark_rate_hz / m.repetition_rate_hz;

    const auto p = click_probabilities(PureState::from_theta_deg(0.0), 0.3, m);
    // Independent scalar evaluation of the same model.
    const double expected = 1.0 - (1.0 - p_dark) * std::exp(-0.3 * t * 0.45 * 1.0);
    CHECK_THAT(p[idx(Detector::Z0)], WithinRel(expected, 1e-12));
    CHECK_THAT(p[idx(Detector::Z0)], WithinRel(1.289e-3 + 3.8e-8, 2e-3));
    // An unmatched basis detector sees half the projection.
    const double expected_x = 1.0 - (1.0 - p_dark) * std::exp(-0.3 * t * 0.55 * 0.5);
    CHECK_THAT(p[idx(Detector::XPlus)], WithinRel(expected_x, 1e-12));
}

TEST_CASE("negative mean photon number is rejected") {
    CHECK_THROWS_AS(click_probabilities(PureState::from_theta_deg(0.0), -0.1, LinkModel{}),
                    std::invalid_argument);
}

TEST_CASE("misalignment rotates the state before projection") {
    LinkModel m = lossless();
    m.misalignment_deg = 90.0;
    // |0> rotated by 90 degrees lands on |+>: all the Z-side light splits
    // evenly between the two Z detectors.
    const auto p = click_probabilities(PureState::from_theta_deg(0.0), 0.2, m);
    CHECK_THAT(p[idx(Detector::Z0)], WithinRel(p[idx(Detector::Z1)], 1e-12));
    CHECK_THAT(p[idx(Detector::XPlus)],
               WithinRel(1.0 - std::exp(-0.2 * 0.5), 1e-12));
}

TEST_CASE("exact states only err through dark counts") {
    LinkModel m;
    m.dark_rate_hz = 0.0;
    const auto p0 = click_probabilities(PureState::from_theta_deg(0.0), 0.3, m);
    const auto p1 = click_probabilities(PureState::from_theta_deg(180.0), 0.3, m);
    CHECK(p0[idx(Detector::Z1)] == 0.0);
    CHECK(p1[idx(Detector::Z0)] == 0.0);

    m.dark_rate_hz = 191.0;
    const auto pd = click_probabilities(PureState::from_theta_deg(0.0), 0.3, m);
    CHECK(pd[idx(Detector::Z1)] > 0.0);
    // 1 - (1 - p_dark) round-trips through 1.0, so the result can sit up to
    // one ulp of 1.0 away from the exact dark probability.
    CHECK_THAT(pd[idx(Detector::Z1)],
               WithinAbs(m.dark_rate_hz / m.repetition_rate_hz, 1.2e-16));
}

TEST_CASE("error mixing hook blends an isotropic error floor") {
    LinkModel m = lossless();
    const double e = 0.05;
    const auto p = click_probabilities_mixed(PureState::from_theta_deg(0.0), 0.3, m, e);
    // Projection probabilities become (1-2e)*p + e.
    CHECK_THAT(p[idx(Detector::Z1)], WithinRel(1.0 - std::exp(-0.3 * 0.5 * e), 1e-12));
    CHECK_THAT(p[idx(Detector::Z0)],
               WithinRel(1.0 - std::exp(-0.3 * 0.5 * (1.0 - e)), 1e-12));
}

TEST_CASE("resolve_click handles empty and single patterns") {
    std::mt19937_64 rng(1);
    CHECK_FALSE(resolve_click({false, false, false, false}, rng).has_value());
    const auto only = resolve_click({true, false, false, false}, rng);
    REQUIRE(only.has_value());
    CHECK(*only == Detector::Z0);
    const auto xm = resolve_click({false, false, false, true}, rng);
    REQUIRE(xm.has_value());
    CHECK(*xm == Detector::XMinus);
}

TEST_CASE("double clicks squash uniformly") {
    std::mt19937_64 rng(2024);
    const int n = 100000;
    int z0 = 0;
    for (int i = 0; i < n; ++i) {
        const auto d = resolve_click({true, true, false, false}, rng);
        REQUIRE(d.has_value());
        if (*d == Detector::Z0) ++z0;
    }
    const double sigma = std::sqrt(0.25 / n);
    CHECK_THAT(double(z0) / n, WithinAbs(0.5, 3.0 * sigma));
}

TEST_CASE("triple clicks cover all firing detectors") {
    std::mt19937_64 rng(7);
    std::array<int, 4> hits{};
    for (int i = 0; i < 60000; ++i) {
        const auto d = resolve_click({true, true, true, false}, rng);
        REQUIRE(d.has_value());
        ++hits[idx(*d)];
    }
    CHECK(hits[3] == 0);
    for (int k = 0; k < 3; ++k) {
        const double sigma = std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / 60000.0);
        CHECK_THAT(hits[k] / 60000.0, WithinAbs(1.0 / 3.0, 3.0 * sigma));
    }
}

TEST_CASE("dead time bookkeeping") {
    LinkModel m;
    CHECK(m.dead_gates() == 0);
    m.dead_time_s = 1e-6;
    CHECK(m.dead_gates() == 5000); // 1 us at 5 GHz
    m.dead_time_s = 1.1e-10;
    CHECK(m.dead_gates() == 1);
}
