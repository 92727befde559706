#pragma once

// Ahead-of-time energy planning by projected stochastic subgradient.
//
// The per-interval objective is
//     F(E) = V sum_i G^lt(E_i) + T * E_xi[ inner(E, xi) ],
//     inner(E, xi) = min_{w, P_b} sum_i V G^rt(P_c + p_i(w) + P_b,i - E_i/T) + Q_i P_b,i,
// and each iteration draws one xi from the stored history.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "tsoc/core_model.hpp"
#include "tsoc/qos_socp.hpp"
#include "tsoc/random.hpp"

namespace tsoc {

/// Subgradient of G^lt at E; alpha at the kink.
inline double subgrad_lt(double E, double A, double alpha_lt, double beta_lt)
{
    return E < A ? beta_lt : alpha_lt;
}

/// Partial subgradient of Psi^rt in E for the inner optimum with demand Delta;
/// -alpha/T at the kink.
inline double subgrad_psi(double E, double Delta, double alpha_rt, double beta_rt, int T)
{
    const double Td = static_cast<double>(T);
    return E / Td > Delta ? -beta_rt / Td : -alpha_rt / Td;
}

struct SubgradientSchedule {
    double mu0 = 1.0;
    int J = 2000;

    double step(int j) const { return mu0 / std::sqrt(static_cast<double>(j) + 1.0); }
};

struct PlanDecision {
    std::vector<double> E;  // kWh per interval, per BS
    int iterations_used = 0;
    double final_step = 0.0;
    int inner_solves = 0;  // conic solves actually performed
};

/// Data shared by every inner evaluation of one planning call.
struct PlanContext {
    const SystemConfig* cfg = nullptr;
    std::vector<double> Q;
    double V = 1.0;
    bool battery = true;
    conic::Settings solver{};
};

/// Inner optimum at one E for one fast state.
struct InnerEval {
    double value = 0.0;          // inner(E, xi)
    std::vector<double> price;   // marginal real-time price per BS: d inner / dE_i = -V price_i / T
    std::vector<double> delta;   // P_c + p_i + P_b,i
    std::vector<double> P_b;
    bool solved = false;         // true when a conic solve was needed
};

namespace detail {

enum class Piece { Buy, Sell, Balanced, Kink };

/// Battery action and piece of BS i for net static demand d = P_c + p_i at supply e.
inline std::pair<double, Piece> battery_rule(double d, double e, double Q, double V, double alpha, double beta,
                                             double lo, double hi, double tol)
{
    if (Q > -V * beta)
        hi = lo;  // discharging is always profitable
    else if (Q < -V * alpha)
        lo = hi;  // charging is always profitable
    const double x_lo = d + lo - e;
    const double x_hi = d + hi - e;
    if (x_lo > tol)
        return {lo, Piece::Buy};
    if (x_hi < -tol)
        return {hi, Piece::Sell};
    if (x_lo < -tol && x_hi > tol)
        return {e - d, Piece::Balanced};
    return {std::clamp(e - d, lo, hi), Piece::Kink};
}

} // namespace detail

/// Inner solutions for one fast state, reused across E wherever the optimal
/// beamformers are unchanged.
///
/// With every BS strictly inside one linear piece of its real-time cost, the
/// optimal beamformers minimize sum_i V*price_i*p_i, which depends on E and Q
/// only through the prices. A stored solution is reused when the prices
/// implied at the new point match the stored ones.
class InnerCache {
public:
    InnerEval evaluate(const FastState& xi, const std::vector<double>& E, const PlanContext& ctx)
    {
        const SystemConfig& cfg = *ctx.cfg;
        const int I = cfg.I;
        for (const auto& c : entries_) {
            InnerEval ev;
            if (try_reuse(c, xi, E, ctx, ev))
                return ev;
        }
        const RealtimeDecision d = solve_planning_sample(xi, E, ctx.Q, ctx.V, cfg, ctx.battery, ctx.solver);
        InnerEval ev;
        ev.solved = true;
        ev.value = d.objective;
        ev.price = d.price;
        ev.P_b = d.P_b;
        ev.delta.resize(static_cast<std::size_t>(I));
        Entry entry;
        entry.demand.resize(static_cast<std::size_t>(I));
        entry.price.resize(static_cast<std::size_t>(I));
        bool cacheable = true;
        for (int i = 0; i < I; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            ev.delta[ii] = d.demand(i, cfg.P_c);
            const double dem = cfg.P_c + d.tx_power[ii];
            const double e = E[ii] / cfg.T;
            const auto [pb, piece] = rule(dem, e, ii, xi, ctx);
            (void)pb;
            entry.demand[ii] = dem;
            entry.price[ii] = piece_price(piece, ii, xi, ctx);
            if (piece == detail::Piece::Kink)
                cacheable = false;
        }
        if (cacheable)
            store(std::move(entry));
        return ev;
    }

    void clear()
    {
        entries_.clear();
        next_ = 0;
    }
    std::size_t size() const { return entries_.size(); }

    static constexpr std::size_t max_entries = 16;

private:
    struct Entry {
        std::vector<double> demand;  // P_c + p_i
        std::vector<double> price;
    };

    static double tolerance(double e) { return 1e-7 * (1.0 + std::abs(e)); }

    void store(Entry entry)
    {
        if (entries_.size() < max_entries) {
            entries_.push_back(std::move(entry));
        } else {
            entries_[next_] = std::move(entry);
            next_ = (next_ + 1) % max_entries;
        }
    }

    static std::pair<double, detail::Piece> rule(double dem, double e, std::size_t i, const FastState& xi,
                                                 const PlanContext& ctx)
    {
        const double lo = ctx.battery ? ctx.cfg->P_b_min : 0.0;
        const double hi = ctx.battery ? ctx.cfg->P_b_max : 0.0;
        return detail::battery_rule(dem, e, ctx.Q[i], ctx.V, xi.alpha_rt, xi.beta_rt, lo, hi, tolerance(e));
    }

    static double piece_price(detail::Piece p, std::size_t i, const FastState& xi, const PlanContext& ctx)
    {
        switch (p) {
        case detail::Piece::Buy: return xi.alpha_rt;
        case detail::Piece::Sell: return xi.beta_rt;
        case detail::Piece::Balanced: return -ctx.Q[i] / ctx.V;
        case detail::Piece::Kink: break;
        }
        return std::numeric_limits<double>::quiet_NaN();
    }

    static bool try_reuse(const Entry& c, const FastState& xi, const std::vector<double>& E, const PlanContext& ctx,
                          InnerEval& ev)
    {
        const SystemConfig& cfg = *ctx.cfg;
        const auto I = static_cast<std::size_t>(cfg.I);
        ev.price.resize(I);
        ev.delta.resize(I);
        ev.P_b.resize(I);
        double value = 0.0;
        for (std::size_t i = 0; i < I; ++i) {
            const double e = E[i] / cfg.T;
            const auto [pb, piece] = rule(c.demand[i], e, i, xi, ctx);
            if (piece == detail::Piece::Kink)
                return false;
            const double price = piece_price(piece, i, xi, ctx);
            if (std::abs(price - c.price[i]) > 1e-12 * (1.0 + std::abs(price)))
                return false;
            ev.price[i] = price;
            ev.P_b[i] = pb;
            ev.delta[i] = c.demand[i] + pb;
            value += ctx.V * cost_rt(c.demand[i] + pb - e, xi.alpha_rt, xi.beta_rt) + ctx.Q[i] * pb;
        }
        ev.value = value;
        ev.solved = false;
        return true;
    }

    std::vector<Entry> entries_;
    std::size_t next_ = 0;  // slot overwritten once the cache is full
};

/// Ring buffer of past fast states, each with its inner-solution cache.
class HistoryBuffer {
public:
    explicit HistoryBuffer(std::size_t capacity) : capacity_(capacity)
    {
        if (capacity == 0)
            throw std::invalid_argument("HistoryBuffer: capacity must be positive");
        entries_.reserve(capacity);
    }

    void push(FastState xi)
    {
        if (entries_.size() < capacity_) {
            entries_.push_back({std::move(xi), {}});
        } else {
            entries_[head_] = {std::move(xi), {}};
            head_ = (head_ + 1) % capacity_;
        }
    }

    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return entries_.empty(); }
    const FastState& state(std::size_t k) const { return entries_[k].xi; }
    InnerCache& cache(std::size_t k) { return entries_[k].cache; }

    /// Drops every cached inner solution (needed when V or the config changes).
    void clear_caches()
    {
        for (auto& e : entries_)
            e.cache.clear();
    }

    /// Uniform draw over stored entries.
    std::size_t sample_index(Rng& rng) const { return static_cast<std::size_t>(rng.below(entries_.size())); }

private:
    struct Entry {
        FastState xi;
        InnerCache cache;
    };
    std::size_t capacity_;
    std::size_t head_ = 0;
    std::vector<Entry> entries_;
};

/// One-sample objective f(E) = V sum_i G^lt(E_i) + T inner(E, xi) and its subgradient.
struct SampleObjective {
    double value = 0.0;
    std::vector<double> grad;
    InnerEval inner;
};

inline SampleObjective sample_objective(const std::vector<double>& E, const SlowState& slow, const FastState& xi,
                                        InnerCache& cache, const PlanContext& ctx)
{
    const SystemConfig& cfg = *ctx.cfg;
    SampleObjective out;
    out.inner = cache.evaluate(xi, E, ctx);
    out.value = static_cast<double>(cfg.T) * out.inner.value;
    out.grad.resize(E.size());
    for (std::size_t i = 0; i < E.size(); ++i) {
        out.value += ctx.V * cost_lt(E[i], slow.A[i], slow.alpha_lt, slow.beta_lt);
        out.grad[i] = ctx.V * (subgrad_lt(E[i], slow.A[i], slow.alpha_lt, slow.beta_lt) - out.inner.price[i]);
    }
    return out;
}

/// Projected stochastic subgradient onto [0, E_max] with diminishing steps; returns the
/// average of the last J/2 iterates. The iterate starts at T * P_c.
inline PlanDecision plan(HistoryBuffer& history, const SlowState& slow, const PlanContext& ctx,
                         const SubgradientSchedule& sched, Rng& rng,
                         std::vector<std::vector<double>>* trace = nullptr)
{
    if (history.empty())
        throw std::logic_error("plan: empty history (cold start needs synthetic samples)");
    const SystemConfig& cfg = *ctx.cfg;
    const auto I = static_cast<std::size_t>(cfg.I);
    std::vector<double> E(I, std::min(cfg.T * cfg.P_c, cfg.E_max()));
    std::vector<double> sum(I, 0.0);
    const int J = std::max(1, sched.J);
    const int tail_start = J - std::max(1, J / 2);
    int n_avg = 0;
    PlanDecision out;
    for (int j = 0; j < J; ++j) {
        const std::size_t k = history.sample_index(rng);
        const SampleObjective so = sample_objective(E, slow, history.state(k), history.cache(k), ctx);
        out.inner_solves += so.inner.solved ? 1 : 0;
        const double mu = sched.step(j);
        for (std::size_t i = 0; i < I; ++i)
            E[i] = std::clamp(E[i] - mu * so.grad[i], 0.0, cfg.E_max());
        if (j >= tail_start) {
            for (std::size_t i = 0; i < I; ++i)
                sum[i] += E[i];
            ++n_avg;
        }
        if (trace)
            trace->push_back(E);
        out.final_step = mu;
    }
    out.E.resize(I);
    for (std::size_t i = 0; i < I; ++i)
        out.E[i] = sum[i] / n_avg;
    out.iterations_used = J;
    return out;
}

struct SupportPoint {
    FastState xi;
    double probability = 0.0;
};

/// Exact F(E) over a finite support.
inline double finite_support_objective(const std::vector<double>& E, const std::vector<SupportPoint>& support,
                                       const SlowState& slow, const PlanContext& ctx,
                                       std::vector<InnerCache>* caches = nullptr)
{
    const SystemConfig& cfg = *ctx.cfg;
    double F = 0.0;
    for (std::size_t i = 0; i < E.size(); ++i)
        F += ctx.V * cost_lt(E[i], slow.A[i], slow.alpha_lt, slow.beta_lt);
    for (std::size_t s = 0; s < support.size(); ++s) {
        if (support[s].probability == 0.0)
            continue;
        double inner;
        if (caches) {
            inner = (*caches)[s].evaluate(support[s].xi, E, ctx).value;
        } else {
            inner = solve_planning_sample(support[s].xi, E, ctx.Q, ctx.V, cfg, ctx.battery, ctx.solver).objective;
        }
        F += cfg.T * support[s].probability * inner;
    }
    return F;
}

struct ExactPlan {
    PlanDecision decision;
    double objective = 0.0;
};

/// Grid search over E in [0, E_max]^I followed by refinement to 1e-3 kWh:
/// golden section for one BS, successive grid zooming otherwise.
inline ExactPlan plan_exact_finite_support(const std::vector<SupportPoint>& support, const SlowState& slow,
                                           const PlanContext& ctx, double E_max = -1.0, int grid = 0,
                                           bool use_cache = false)
{
    const SystemConfig& cfg = *ctx.cfg;
    double total = 0.0;
    for (const auto& s : support) {
        if (s.probability < 0.0)
            throw std::invalid_argument("plan_exact_finite_support: negative probability");
        total += s.probability;
    }
    if (support.empty() || std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("plan_exact_finite_support: probabilities must sum to 1");
    if (E_max <= 0.0)
        E_max = cfg.E_max();
    const auto I = static_cast<std::size_t>(cfg.I);
    std::vector<InnerCache> caches(support.size());
    auto F = [&](const std::vector<double>& E) {
        return finite_support_objective(E, support, slow, ctx, use_cache ? &caches : nullptr);
    };

    ExactPlan out;
    if (I == 1) {
        const int N = grid > 0 ? grid : 1001;
        const double h = E_max / (N - 1);
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int g = 0; g < N; ++g) {
            const double v = F({g * h});
            if (v < best) {
                best = v;
                arg = g;
            }
        }
        double a = std::max(0.0, (arg - 1) * h), b = std::min(E_max, (arg + 1) * h);
        const double r = 0.5 * (std::sqrt(5.0) - 1.0);
        double x1 = b - r * (b - a), x2 = a + r * (b - a);
        double f1 = F({x1}), f2 = F({x2});
        while (b - a > 1e-4) {
            if (f1 <= f2) {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - r * (b - a);
                f1 = F({x1});
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + r * (b - a);
                f2 = F({x2});
            }
        }
        double xm = 0.5 * (a + b);
        double fm = F({xm});
        if (best < fm) {
            xm = arg * h;
            fm = best;
        }
        out.decision.E = {xm};
        out.objective = fm;
        return out;
    }

    const int N = grid > 0 ? grid : 41;
    std::vector<double> lo(I, 0.0), hi(I, E_max), best_E(I, 0.0);
    double best = std::numeric_limits<double>::infinity();
    while (true) {
        std::vector<int> idx(I, 0);
        std::vector<double> E(I);
        std::vector<double> h(I);
        for (std::size_t i = 0; i < I; ++i)
            h[i] = (hi[i] - lo[i]) / (N - 1);
        while (true) {
            for (std::size_t i = 0; i < I; ++i)
                E[i] = lo[i] + idx[i] * h[i];
            const double v = F(E);
            if (v < best) {
                best = v;
                best_E = E;
            }
            std::size_t d = 0;
            while (d < I && ++idx[d] == N)
                idx[d++] = 0;
            if (d == I)
                break;
        }
        const double width = *std::max_element(h.begin(), h.end());
        if (width < 1e-3)
            break;
        for (std::size_t i = 0; i < I; ++i) {
            lo[i] = std::max(0.0, best_E[i] - 2.0 * h[i]);
            hi[i] = std::min(E_max, best_E[i] + 2.0 * h[i]);
        }
    }
    out.decision.E = best_E;
    out.objective = best;
    return out;
}

} // namespace tsoc
