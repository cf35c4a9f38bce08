#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <thread>
#include <vector>

#include "channel.hpp"
#include "distillation.hpp"
#include "protocol.hpp"
#include "source_model.hpp"

namespace qkdsim::optimize {

using channel::LinkModel;
using source::SourceProfile;

/// The four free protocol parameters. Everything else (angles, correlation
/// tables, relative intensity-correlation strengths, channel) stays fixed
/// during a search.
struct Params {
    double mu_signal = 0.3;
    double mu_decoy = 0.15;
    double p_signal = 0.6;
    double p_z_alice = 0.9;

    static Params from_profile(const SourceProfile& p) {
        return {p.mu[0], p.mu[1], p.p_intensity[0], p.p_z_alice()};
    }
};

struct Options {
    double mu_signal_min = 0.05, mu_signal_max = 0.60;
    double mu_decoy_min = 0.01, mu_decoy_max = 0.50;
    double prob_min = 0.05, prob_max = 0.95;
    double mu_step = 0.01;
    double prob_step = 0.05;
    bool grid_only = false;
    int refine_passes = 2;
    int refine_iters = 24; // golden-section shrink steps per coordinate
    double block_bits = 4192.0 * 1944.0;
    unsigned threads = 1;

    void validate() const {
        if (!(mu_step > 0.0 && prob_step > 0.0))
            throw std::invalid_argument("grid steps must be positive");
        if (!(mu_decoy_min > 0.0 && mu_signal_max <= 1.0))
            throw std::invalid_argument("intensity box must satisfy 0 < mu <= 1");
        if (!(prob_min > 0.0 && prob_max < 1.0))
            throw std::invalid_argument("probability box must lie inside (0, 1)");
        if (!(block_bits >= 1.0)) throw std::invalid_argument("block_bits must be at least 1");
        if (refine_passes < 0 || refine_iters < 1)
            throw std::invalid_argument("refinement schedule must be non-negative");
    }
};

struct TracePoint {
    Params params;
    double skr_bps = 0.0;
};

struct Result {
    Params best{};
    double best_skr_bps = 0.0;
    bool feasible = false; // true iff the best point yields a positive key
    std::vector<TracePoint> trace;
    std::size_t grid_points = 0;
};

/// SKR objective of the analytic pipeline at a fixed privacy-amplification
/// block size: expected tallies are scaled so the sifted key equals one
/// block, then distilled. Caches the channel statistics, which depend on the
/// intensities but not on the emission probabilities, so probability sweeps
/// at a fixed intensity pair are cheap.
class Objective {
  public:
    Objective(const SourceProfile& imperfections, const LinkModel& model,
              const distill::SecurityParams& sec, double p_c_star, double block_bits)
        : base_(imperfections), model_(model), sec_(sec), p_c_star_(p_c_star),
          block_bits_(block_bits) {
        base_.validate();
        model_.validate();
        sec_.validate();
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) mu_ratio_[a][b] = base_.mu_cond[a][b] / base_.mu[a];
    }

    SourceProfile profile_at(const Params& q) const {
        SourceProfile p = base_;
        p.mu = {q.mu_signal, q.mu_decoy};
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) p.mu_cond[a][b] = p.mu[a] * mu_ratio_[a][b];
        p.p_state = {q.p_z_alice / 2.0, q.p_z_alice / 2.0, 1.0 - q.p_z_alice};
        p.p_intensity = {q.p_signal, 1.0 - q.p_signal};
        return p;
    }

    double operator()(const Params& q) {
        const SourceProfile p = profile_at(q);
        if (!have_combos_ || q.mu_signal != combo_mu_[0] || q.mu_decoy != combo_mu_[1]) {
            combos_ = protocol::detail::build_combos(p, model_);
            combo_mu_ = {q.mu_signal, q.mu_decoy};
            have_combos_ = true;
        }
        protocol::TallySet t = protocol::detail::accumulate_analytic(combos_, p, 1.0);
        const double sifted_per_pulse = t.n(protocol::Basis::Z, protocol::Basis::Z);
        if (!(sifted_per_pulse > 0.0)) return 0.0;
        t.scale(block_bits_ / sifted_per_pulse);
        return distill::distill(t, p, model_, sec_, p_c_star_).skr_bps;
    }

  private:
    SourceProfile base_;
    LinkModel model_;
    distill::SecurityParams sec_;
    double p_c_star_;
    double block_bits_;
    std::array<std::array<double, 2>, 2> mu_ratio_{};
    std::array<protocol::detail::ComboStats, 36> combos_{};
    std::array<double, 2> combo_mu_{};
    bool have_combos_ = false;
};

namespace detail {

inline std::vector<double> grid_axis(double lo, double hi, double step) {
    std::vector<double> v;
    if (hi >= lo) {
        const int n = static_cast<int>(std::floor((hi - lo) / step + 1e-9)) + 1;
        v.reserve(n);
        // lo + i * step can overshoot hi by rounding when the end point is
        // meant to land exactly on it; keep every axis value inside the box.
        for (int i = 0; i < n; ++i) v.push_back(std::min(lo + i * step, hi));
    }
    return v;
}

template <typename Fn>
void for_each_grid_point(const Options& opt, Fn&& fn) {
    opt.validate();
    const auto mu0s = grid_axis(opt.mu_signal_min, opt.mu_signal_max, opt.mu_step);
    const auto mu1s = grid_axis(opt.mu_decoy_min, opt.mu_decoy_max, opt.mu_step);
    const auto probs = grid_axis(opt.prob_min, opt.prob_max, opt.prob_step);
    for (double mu0 : mu0s)
        for (double mu1 : mu1s) {
            if (!(mu1 <= mu0 - 0.5 * opt.mu_step)) break; // axis is sorted
            for (double ps : probs)
                for (double pz : probs) fn(Params{mu0, mu1, ps, pz});
        }
}

} // namespace detail

/// Number of feasible grid points; zero means the box is empty (e.g.
/// mu_decoy >= mu_signal everywhere).
inline std::size_t grid_cardinality(const Options& opt) {
    std::size_t n = 0;
    detail::for_each_grid_point(opt, [&](const Params&) { ++n; });
    return n;
}

/// All feasible grid points in scan order (mu_signal, mu_decoy, p_signal,
/// p_z). Throws on an empty feasible region.
inline std::vector<Params> grid_points(const Options& opt) {
    std::vector<Params> grid;
    detail::for_each_grid_point(opt, [&](const Params& q) { grid.push_back(q); });
    if (grid.empty()) throw std::invalid_argument("empty feasible region");
    return grid;
}

/// Coarse grid scan, then (unless grid_only) coordinate-wise golden-section
/// refinement inside the box. Deterministic: the trace and the winner are
/// independent of the thread count. The starting point of the search is the
/// profile's own parameter set whenever it lies inside the box, so the
/// result never falls below the configured operating point.
inline Result optimize(const SourceProfile& imperfections, const LinkModel& model,
                       const distill::SecurityParams& sec, double p_c_star,
                       const Options& opt = {}) {
    const auto grid = grid_points(opt);

    Result res;
    res.grid_points = grid.size();
    res.trace.reserve(grid.size() + 64);

    const Params incumbent = Params::from_profile(imperfections);
    const bool seed_incumbent =
        !opt.grid_only && incumbent.mu_signal >= opt.mu_signal_min &&
        incumbent.mu_signal <= opt.mu_signal_max && incumbent.mu_decoy >= opt.mu_decoy_min &&
        incumbent.mu_decoy <= opt.mu_decoy_max && incumbent.p_signal >= opt.prob_min &&
        incumbent.p_signal <= opt.prob_max && incumbent.p_z_alice >= opt.prob_min &&
        incumbent.p_z_alice <= opt.prob_max;
    if (seed_incumbent) {
        Objective obj(imperfections, model, sec, p_c_star, opt.block_bits);
        res.trace.push_back({incumbent, obj(incumbent)});
    }

    // Grid pass. Contiguous chunks keep the (mu0, mu1) combo cache warm and
    // give every thread count the same trace.
    const std::size_t trace_base = res.trace.size();
    res.trace.resize(trace_base + grid.size());
    const unsigned n_threads =
        std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(grid.size())));
    auto run_chunk = [&](std::size_t begin, std::size_t end) {
        Objective obj(imperfections, model, sec, p_c_star, opt.block_bits);
        for (std::size_t i = begin; i < end; ++i)
            res.trace[trace_base + i] = {grid[i], obj(grid[i])};
    };
    if (n_threads == 1) {
        run_chunk(0, grid.size());
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_threads);
        const std::size_t chunk = (grid.size() + n_threads - 1) / n_threads;
        for (unsigned w = 0; w < n_threads; ++w) {
            const std::size_t begin = std::min<std::size_t>(w * chunk, grid.size());
            const std::size_t end = std::min<std::size_t>(begin + chunk, grid.size());
            if (begin < end) pool.emplace_back(run_chunk, begin, end);
        }
        for (auto& th : pool) th.join();
    }

    std::size_t best_idx = 0;
    for (std::size_t i = 1; i < res.trace.size(); ++i)
        if (res.trace[i].skr_bps > res.trace[best_idx].skr_bps) best_idx = i;
    res.best = res.trace[best_idx].params;
    res.best_skr_bps = res.trace[best_idx].skr_bps;

    if (!opt.grid_only && opt.refine_passes > 0) {
        Objective obj(imperfections, model, sec, p_c_star, opt.block_bits);
        constexpr double invphi = 0.6180339887498949;
        constexpr double kMuGap = 1e-4; // keeps mu_signal > mu_decoy strict
        auto eval = [&](const Params& q) {
            const double v = obj(q);
            res.trace.push_back({q, v});
            return v;
        };
        auto refine_coord = [&](int dim) {
            double lo = 0.0, hi = 0.0;
            switch (dim) {
                case 0:
                    lo = std::max(opt.mu_signal_min, res.best.mu_decoy + kMuGap);
                    hi = opt.mu_signal_max;
                    break;
                case 1:
                    lo = opt.mu_decoy_min;
                    hi = std::min(opt.mu_decoy_max, res.best.mu_signal - kMuGap);
                    break;
                default:
                    lo = opt.prob_min;
                    hi = opt.prob_max;
                    break;
            }
            if (!(lo < hi)) return;
            auto at = [&](double x) {
                Params q = res.best;
                (dim == 0 ? q.mu_signal
                 : dim == 1 ? q.mu_decoy
                 : dim == 2 ? q.p_signal
                            : q.p_z_alice) = x;
                return q;
            };
            double cand_x = res.best.mu_signal, cand_f = -1.0;
            auto probe = [&](double x) {
                // Interior points can round a hair outside the bracket.
                x = std::clamp(x, lo, hi);
                const double v = eval(at(x));
                if (v > cand_f) {
                    cand_f = v;
                    cand_x = x;
                }
                return v;
            };
            probe(lo);
            probe(hi);
            double a = lo, b = hi;
            double x1 = b - invphi * (b - a);
            double x2 = a + invphi * (b - a);
            double f1 = probe(x1);
            double f2 = probe(x2);
            for (int it = 0; it < opt.refine_iters; ++it) {
                if (f1 < f2) {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + invphi * (b - a);
                    f2 = probe(x2);
                } else {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - invphi * (b - a);
                    f1 = probe(x1);
                }
            }
            if (cand_f > res.best_skr_bps) {
                res.best_skr_bps = cand_f;
                res.best = at(cand_x);
            }
        };
        for (int pass = 0; pass < opt.refine_passes; ++pass)
            for (int dim = 0; dim < 4; ++dim) refine_coord(dim);
    }

    res.feasible = res.best_skr_bps > 0.0;
    return res;
}

inline constexpr const char* kTraceCsvHeader = "mu_signal,mu_decoy,p_signal,p_z_alice,skr_bps";

inline void write_trace_csv(std::ostream& out, const std::vector<TracePoint>& trace) {
    out << std::setprecision(17) << kTraceCsvHeader << '\n';
    for (const auto& pt : trace)
        out << pt.params.mu_signal << ',' << pt.params.mu_decoy << ',' << pt.params.p_signal
            << ',' << pt.params.p_z_alice << ',' << pt.skr_bps << '\n';
}

} // namespace qkdsim::optimize
