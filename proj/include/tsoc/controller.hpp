#pragma once

// Two-scale online control loop: Gamma/V window, per-interval planning,
// per-slot real-time solves and leaky-battery queue updates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsoc/core_model.hpp"
#include "tsoc/planner.hpp"
#include "tsoc/qos_socp.hpp"
#include "tsoc/random.hpp"

namespace tsoc {

class WindowError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ParameterWindow {
    double Gamma_min = 0.0;
    double Gamma_max = 0.0;
    double V_max = 0.0;       // min over tau of the per-tau width ratio
    double V_feasible = 0.0;  // largest V with Gamma_min <= Gamma_max
    double alpha_bar = 0.0;
    double beta_under = 0.0;
    double V = 0.0;           // V at which the Gamma bounds were evaluated
};

namespace detail {

struct WindowTerms {
    double a_max = -std::numeric_limits<double>::infinity();  // max_tau of the lower-bound term
    double b_min = std::numeric_limits<double>::infinity();   // min_tau of the upper-bound term
    double width_min = std::numeric_limits<double>::infinity();
};

inline WindowTerms window_terms(const SystemConfig& cfg)
{
    WindowTerms w;
    for (int tau = 1; tau <= cfg.T; ++tau) {
        const double r = geometric_sum(cfg.eta, tau);
        const double et = cfg.eta == 1.0 ? 1.0 : std::pow(cfg.eta, tau);
        const double a = (r * cfg.P_b_max - cfg.C_max) / et;
        const double b = (r * cfg.P_b_min - cfg.C_min) / et;
        w.a_max = std::max(w.a_max, a);
        w.b_min = std::min(w.b_min, b);
        w.width_min = std::min(w.width_min, b - a);
    }
    return w;
}

} // namespace detail

/// Gamma window at V, together with V_max. Throws WindowError when the
/// window is empty at V.
inline ParameterWindow parameter_window(const ValidatedConfig& vcfg, double alpha_bar, double beta_under, double V)
{
    const SystemConfig& cfg = *vcfg;
    if (!(alpha_bar > beta_under))
        throw std::invalid_argument("parameter_window: need alpha_bar > beta_under");
    if (!(V > 0.0))
        throw std::invalid_argument("parameter_window: need V > 0");
    const detail::WindowTerms w = detail::window_terms(cfg);
    ParameterWindow out;
    out.alpha_bar = alpha_bar;
    out.beta_under = beta_under;
    out.V = V;
    out.V_max = w.width_min / (alpha_bar - beta_under);
    out.V_feasible = (w.b_min - w.a_max) / (alpha_bar - beta_under);
    out.Gamma_min = w.a_max - V * beta_under;
    out.Gamma_max = w.b_min - V * alpha_bar;
    // at V = V_feasible the window is a single point up to rounding
    if (out.Gamma_min > out.Gamma_max && out.Gamma_min - out.Gamma_max <= 1e-9 * (1.0 + std::abs(out.Gamma_min)))
        out.Gamma_max = out.Gamma_min;
    if (out.Gamma_min > out.Gamma_max)
        throw WindowError("parameter_window: empty Gamma window at V = " + std::to_string(V)
                          + " (V_max = " + std::to_string(out.V_max)
                          + ", largest feasible V = " + std::to_string(out.V_feasible) + ")");
    return out;
}

inline ParameterWindow parameter_window(const SystemConfig& cfg, double alpha_bar, double beta_under, double V)
{
    return parameter_window(validate_config(cfg), alpha_bar, beta_under, V);
}

enum class SocClass { ForceCharge, ForceDischarge, Interior };

inline const char* to_string(SocClass c)
{
    switch (c) {
    case SocClass::ForceCharge: return "force-charge";
    case SocClass::ForceDischarge: return "force-discharge";
    case SocClass::Interior: return "interior";
    }
    return "?";
}

/// Battery regime implied by the SoC at an interval start.
inline SocClass classify_soc(double C, double V, double Gamma, double alpha_bar, double beta_under)
{
    if (C > -V * beta_under - Gamma)
        return SocClass::ForceDischarge;
    if (C < -V * alpha_bar - Gamma)
        return SocClass::ForceCharge;
    return SocClass::Interior;
}

struct LyapunovParameters {
    double Gamma = 0.0;
    double V = 0.0;
    ParameterWindow window;  // evaluated at V
};

/// V defaults to the largest value with a nonempty Gamma window and Gamma to
/// the window midpoint; cfg.V and cfg.Gamma override them after validation.
inline LyapunovParameters select_parameters(const ValidatedConfig& vcfg)
{
    const SystemConfig& cfg = *vcfg;
    const double ab = cfg.alpha_bar(), bu = cfg.beta_under();
    const detail::WindowTerms w = detail::window_terms(cfg);
    const double V_max = w.width_min / (ab - bu);
    const double V_feas = (w.b_min - w.a_max) / (ab - bu);
    double V = cfg.V ? *cfg.V : std::min(V_max, V_feas);
    if (!(V > 0.0))
        throw WindowError("select_parameters: no positive V admits a Gamma window");
    LyapunovParameters p;
    p.window = parameter_window(vcfg, ab, bu, V);
    p.V = V;
    if (cfg.Gamma) {
        const double G = *cfg.Gamma;
        if (G < p.window.Gamma_min || G > p.window.Gamma_max)
            throw WindowError("select_parameters: Gamma = " + std::to_string(G) + " outside ["
                              + std::to_string(p.window.Gamma_min) + ", " + std::to_string(p.window.Gamma_max) + "]");
        p.Gamma = G;
    } else {
        p.Gamma = 0.5 * (p.window.Gamma_min + p.window.Gamma_max);
    }
    return p;
}

/// Explicit-window form: midpoint Gamma at the window's V.
inline LyapunovParameters select_parameters(const ValidatedConfig& vcfg, const ParameterWindow& window)
{
    (void)vcfg;
    if (window.Gamma_min > window.Gamma_max)
        throw WindowError("select_parameters: empty window");
    LyapunovParameters p;
    p.window = window;
    p.V = window.V;
    p.Gamma = 0.5 * (window.Gamma_min + window.Gamma_max);
    return p;
}

enum class Policy { TSOC, ALG1, ALG2 };

inline const char* to_string(Policy p)
{
    switch (p) {
    case Policy::TSOC: return "tsoc";
    case Policy::ALG1: return "alg1";
    case Policy::ALG2: return "alg2";
    }
    return "?";
}

/// Per-slot output. Per-BS vectors have length I, sinr has length K.
/// C and Q are the values seen by the decision (start of slot).
struct SlotRecord {
    int t = 0;
    int n = 0;
    std::vector<double> E_share;  // E_i[n] / T
    std::vector<double> A;        // RES of the interval as used in the cost
    std::vector<double> P;
    std::vector<double> P_b;
    std::vector<double> C;
    std::vector<double> Q;
    std::vector<double> Phi;
    double alpha_lt = 0.0, beta_lt = 0.0, alpha_rt = 0.0, beta_rt = 0.0;
    std::vector<double> sinr;
    int iterations = 0;

    double total_cost() const
    {
        double s = 0.0;
        for (double x : Phi)
            s += x;
        return s;
    }
};

/// Matched realizations for a run: one slow state per interval and T fast
/// states per interval. Each state comes from its own derived stream, so a
/// longer path extends a shorter one with the same seed.
struct SamplePath {
    std::vector<SlowState> slow;
    std::vector<FastState> fast;

    int intervals() const { return static_cast<int>(slow.size()); }
    std::span<const FastState> interval_fast(int n, int T) const
    {
        return std::span<const FastState>(fast).subspan(static_cast<std::size_t>(n) * T, static_cast<std::size_t>(T));
    }
};

inline SamplePath generate_path(const SystemConfig& cfg, std::uint64_t seed, int intervals)
{
    SamplePath p;
    p.slow.reserve(static_cast<std::size_t>(intervals));
    p.fast.reserve(static_cast<std::size_t>(intervals) * cfg.T);
    for (int n = 0; n < intervals; ++n) {
        Rng rs(derive_seed(seed, "slow", static_cast<std::uint64_t>(n)));
        p.slow.push_back(sample_slow_state(rs, cfg));
        for (int tau = 0; tau < cfg.T; ++tau) {
            Rng rf(derive_seed(seed, "fast", static_cast<std::uint64_t>(n) * cfg.T + tau));
            p.fast.push_back(sample_fast_state(rf, cfg));
        }
    }
    return p;
}

/// Counters checked by the feasibility and threshold suites.
struct ControllerStats {
    long slots = 0;
    long soc_violations = 0;
    double worst_soc_excess = 0.0;
    long intervals_by_class[3] = {0, 0, 0};  // ForceCharge, ForceDischarge, Interior (per BS)
    long forced_slots = 0;
    long threshold_violations = 0;
    double worst_threshold_error = 0.0;
    long planner_inner_solves = 0;
};

/// Tolerance for SoC bound checks (kWh).
inline constexpr double soc_tolerance = 1e-9;
/// Tolerance for the forced (dis)charge check (kWh).
inline constexpr double threshold_tolerance = 1e-6;

class Controller {
public:
    Controller(const ValidatedConfig& vcfg, Policy policy = Policy::TSOC, std::optional<std::uint64_t> seed = {})
        : cfg_(*vcfg), policy_(policy), seed_(seed.value_or(vcfg->rng_seed)),
          history_(static_cast<std::size_t>(vcfg->history_intervals) * vcfg->T)
    {
        params_ = select_parameters(vcfg);
        battery_ = cfg_.has_battery() && (policy_ == Policy::TSOC || (policy_ == Policy::ALG1 && cfg_.alg1_battery));
        C_.assign(static_cast<std::size_t>(cfg_.I), cfg_.C0);
        Q_.resize(C_.size());
        for (std::size_t i = 0; i < C_.size(); ++i)
            Q_[i] = C_[i] + params_.Gamma;
        if (policy_ != Policy::ALG1) {
            // No past realizations exist at start-up; seed the history with
            // draws from the configured generators.
            Rng rng(derive_seed(seed_, "cold-start"));
            for (int k = 0; k < cfg_.cold_start_samples; ++k)
                history_.push(sample_fast_state(rng, cfg_));
        }
    }

    std::vector<SlotRecord> step_interval(const SlowState& slow, std::span<const FastState> fast)
    {
        const int I = cfg_.I, T = cfg_.T;
        if (static_cast<int>(fast.size()) != T)
            throw std::invalid_argument("step_interval: need exactly T fast states");
        if (slow.A.size() != static_cast<std::size_t>(I))
            throw std::invalid_argument("step_interval: slow state needs one RES value per BS");

        const std::vector<double> Q_frozen = Q_;
        std::vector<SocClass> cls(static_cast<std::size_t>(I));
        for (int i = 0; i < I; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            cls[ii] = classify_soc(C_[ii], params_.V, params_.Gamma, params_.window.alpha_bar,
                                   params_.window.beta_under);
            ++stats_.intervals_by_class[static_cast<int>(cls[ii])];
        }

        // ALG2 ignores RES both when planning and when paying.
        SlowState used = slow;
        if (policy_ == Policy::ALG2)
            std::fill(used.A.begin(), used.A.end(), 0.0);

        std::vector<double> E(static_cast<std::size_t>(I), 0.0);
        if (policy_ != Policy::ALG1) {
            PlanContext ctx;
            ctx.cfg = &cfg_;
            ctx.Q = Q_frozen;
            ctx.V = params_.V;
            ctx.battery = battery_;
            ctx.solver = solver_;
            SubgradientSchedule sched{cfg_.planner_mu0, cfg_.planner_iterations};
            Rng rng(derive_seed(seed_, "planner", static_cast<std::uint64_t>(n_)));
            last_plan_ = plan(history_, used, ctx, sched, rng);
            stats_.planner_inner_solves += last_plan_.inner_solves;
            E = last_plan_.E;
        } else {
            if (cfg_.alg1_res_supply)
                E = slow.A;
            last_plan_ = PlanDecision{E, 0, 0.0, 0};
        }

        std::vector<SlotRecord> out;
        out.reserve(static_cast<std::size_t>(T));
        for (int tau = 0; tau < T; ++tau) {
            const FastState& xi = fast[static_cast<std::size_t>(tau)];
            const std::vector<double>& Qd = cfg_.live_queue ? Q_ : Q_frozen;
            const RealtimeProblem rp = build_realtime_problem(xi, E, Qd, params_.V, cfg_, battery_);
            const RealtimeDecision d = solve_realtime(rp, solver_);

            SlotRecord r;
            r.t = n_ * T + tau;
            r.n = n_;
            r.alpha_lt = slow.alpha_lt;
            r.beta_lt = slow.beta_lt;
            r.alpha_rt = xi.alpha_rt;
            r.beta_rt = xi.beta_rt;
            r.sinr = d.sinr;
            r.iterations = d.report.iterations;
            for (int i = 0; i < I; ++i) {
                const auto ii = static_cast<std::size_t>(i);
                r.E_share.push_back(E[ii] / T);
                r.A.push_back(used.A[ii]);
                r.P.push_back(d.P[ii]);
                r.P_b.push_back(d.P_b[ii]);
                r.C.push_back(C_[ii]);
                r.Q.push_back(Q_[ii]);
                r.Phi.push_back(slot_cost(E[ii], d.P[ii], used, xi, used.A[ii], T));

                if (battery_ && !cfg_.live_queue && cls[ii] != SocClass::Interior) {
                    ++stats_.forced_slots;
                    const double target = cls[ii] == SocClass::ForceDischarge ? cfg_.P_b_min : cfg_.P_b_max;
                    const double err = std::abs(d.P_b[ii] - target);
                    stats_.worst_threshold_error = std::max(stats_.worst_threshold_error, err);
                    if (err > threshold_tolerance)
                        ++stats_.threshold_violations;
                }

                C_[ii] = battery_step(C_[ii], d.P_b[ii], cfg_.eta);
                const double excess = std::max(cfg_.C_min - C_[ii], C_[ii] - cfg_.C_max);
                if (excess > soc_tolerance)
                    ++stats_.soc_violations;
                stats_.worst_soc_excess = std::max(stats_.worst_soc_excess, excess);
                Q_[ii] = C_[ii] + params_.Gamma;
            }
            cumulative_cost_ += r.total_cost();
            ++stats_.slots;
            if (policy_ != Policy::ALG1)
                history_.push(xi);
            out.push_back(std::move(r));
        }
        ++n_;
        return out;
    }

    const SystemConfig& config() const { return cfg_; }
    Policy policy() const { return policy_; }
    bool battery() const { return battery_; }
    const LyapunovParameters& parameters() const { return params_; }
    double Gamma() const { return params_.Gamma; }
    double V() const { return params_.V; }
    const std::vector<double>& C() const { return C_; }
    const std::vector<double>& Q() const { return Q_; }
    int interval() const { return n_; }
    double cumulative_cost() const { return cumulative_cost_; }
    const ControllerStats& stats() const { return stats_; }
    const PlanDecision& last_plan() const { return last_plan_; }
    const HistoryBuffer& history() const { return history_; }

    conic::Settings& solver_settings() { return solver_; }

private:
    SystemConfig cfg_;
    Policy policy_;
    std::uint64_t seed_;
    LyapunovParameters params_;
    bool battery_ = true;
    std::vector<double> C_, Q_;
    int n_ = 0;
    double cumulative_cost_ = 0.0;
    HistoryBuffer history_;
    PlanDecision last_plan_;
    ControllerStats stats_;
    conic::Settings solver_{};
};

struct RunResult {
    std::vector<SlotRecord> records;
    ControllerStats stats;
    LyapunovParameters params;
    std::vector<PlanDecision> plans;
    double average_cost = 0.0;  // per slot, summed over BSs
};

/// Runs a policy over the first `intervals` intervals of a path.
inline RunResult run_policy(const ValidatedConfig& vcfg, Policy policy, const SamplePath& path,
                            std::optional<std::uint64_t> seed = {}, int intervals = -1)
{
    const int N = intervals < 0 ? path.intervals() : intervals;
    if (N > path.intervals())
        throw std::invalid_argument("run_policy: path shorter than requested horizon");
    Controller ctl(vcfg, policy, seed);
    RunResult out;
    out.records.reserve(static_cast<std::size_t>(N) * vcfg->T);
    for (int n = 0; n < N; ++n) {
        auto recs = ctl.step_interval(path.slow[static_cast<std::size_t>(n)], path.interval_fast(n, vcfg->T));
        out.plans.push_back(ctl.last_plan());
        for (auto& r : recs)
            out.records.push_back(std::move(r));
    }
    out.stats = ctl.stats();
    out.params = ctl.parameters();
    out.average_cost = out.records.empty() ? 0.0 : ctl.cumulative_cost() / static_cast<double>(out.records.size());
    return out;
}

} // namespace tsoc
