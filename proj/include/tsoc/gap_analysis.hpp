#pragma once

// Optimality-gap constants of the drift-plus-penalty bound and the
// minimum gap over admissible (Gamma, V) pairs.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsoc/controller.hpp"
#include "tsoc/core_model.hpp"

namespace tsoc {

struct GapConstants {
    double M_B = 0.0;
    double M_C = 0.0;
    double M1 = 0.0;
    double M2 = 0.0;
    double M3 = 0.0;
    double M = 0.0;
    double gap = 0.0;  // M / V
};

/// Constants for queue offset Gamma and weight V. The eta = 1 branch uses the
/// limits of the geometric factors.
inline GapConstants gap_constants(double Gamma, double V, const SystemConfig& cfg)
{
    if (!(cfg.eta > 0.0 && cfg.eta <= 1.0))
        throw std::invalid_argument("gap_constants: eta must lie in (0, 1]");
    if (!(V > 0.0))
        throw std::invalid_argument("gap_constants: V must be positive");
    const double eta = cfg.eta;
    const double I = cfg.I, T = cfg.T;
    const double eps = 1.0 - eta;
    GapConstants g;
    g.M_B = std::max(std::pow(eps * Gamma + cfg.P_b_min, 2), std::pow(eps * Gamma + cfg.P_b_max, 2));
    g.M_C = std::max(std::pow(Gamma + cfg.C_min, 2), std::pow(Gamma + cfg.C_max, 2));
    if (eta == 1.0) {
        g.M1 = I * g.M_B / 2.0;
        g.M2 = I * (T - 1.0) * g.M_B / 2.0;
        g.M3 = 0.0;
    } else {
        const double one_minus_etaT = -std::expm1(T * std::log1p(-eps));  // 1 - eta^T
        g.M1 = I * T * eps / (2.0 * eta * one_minus_etaT) * g.M_B;
        g.M2 = I * (T * eps - one_minus_etaT) / (eps * one_minus_etaT) * g.M_B;
        g.M3 = I * eps * g.M_C;
    }
    g.M = g.M1 + g.M2 + g.M3;
    g.gap = g.M / V;
    return g;
}

struct MinGap {
    double G_min = 0.0;
    double V = 0.0;
    double Gamma = 0.0;
    double grid_min = 0.0;  // best value on the 200 x 200 grid
    double V_upper = 0.0;   // largest V searched: min(V_max, largest V with a nonempty window)
};

class GapError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline double golden_min(const auto& f, double a, double b, double tol, double* arg)
{
    const double r = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = b - r * (b - a), x2 = a + r * (b - a);
    double f1 = f(x1), f2 = f(x2);
    while (b - a > tol) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }
    // compare with the end points, which golden section never evaluates
    double best_x = 0.5 * (a + b), best = f(best_x);
    for (double x : {a, b}) {
        const double v = f(x);
        if (v < best) {
            best = v;
            best_x = x;
        }
    }
    *arg = best_x;
    return best;
}

} // namespace detail

/// Minimizes M(Gamma)/V over 0 < V <= V_max and Gamma in the V-dependent
/// window: 200 x 200 grid, then nested golden-section refinement (the
/// objective is jointly convex and the feasible set is a convex polygon).
inline MinGap min_gap(double V_max, const SystemConfig& cfg)
{
    const double ab = cfg.alpha_bar(), bu = cfg.beta_under();
    const detail::WindowTerms w = detail::window_terms(cfg);
    const double V_feas = (w.b_min - w.a_max) / (ab - bu);
    MinGap out;
    out.V_upper = std::min(V_max, V_feas);
    if (!(out.V_upper > 0.0))
        throw GapError("min_gap: the Gamma window is empty for every V > 0");
    auto lo = [&](double V) { return w.a_max - V * bu; };
    auto hi = [&](double V) { return w.b_min - V * ab; };
    auto M = [&](double G) { return gap_constants(G, 1.0, cfg).M; };

    constexpr int N = 200;
    double best = std::numeric_limits<double>::infinity(), bV = 0.0, bG = 0.0;
    const double hV = out.V_upper / N;
    for (int a = 1; a <= N; ++a) {
        const double V = a * hV;
        const double g0 = lo(V), g1 = hi(V);
        for (int b = 0; b < N; ++b) {
            const double G = g0 + (g1 - g0) * b / (N - 1);
            const double v = M(G) / V;
            if (v < best) {
                best = v;
                bV = V;
                bG = G;
            }
        }
    }
    out.grid_min = best;

    // inner: exact 1-D minimization over Gamma; outer: golden section in V
    auto inner = [&](double V, double* G) {
        const double g0 = lo(V), g1 = hi(V);
        const double tol = 1e-12 * (1.0 + std::abs(g0) + std::abs(g1));
        return detail::golden_min(M, g0, std::max(g0, g1), tol, G) / V;
    };
    const double a = std::max(1e-12 * out.V_upper, bV - hV), b = std::min(out.V_upper, bV + hV);
    double Vr = bV;
    auto outer = [&](double V) {
        double G;
        return inner(V, &G);
    };
    double val = detail::golden_min(outer, a, b, 1e-12 * out.V_upper, &Vr);
    double Gr;
    val = inner(Vr, &Gr);
    if (val <= best) {
        out.G_min = val;
        out.V = Vr;
        out.Gamma = Gr;
    } else {
        out.G_min = best;
        out.V = bV;
        out.Gamma = bG;
    }
    return out;
}

struct GapCurveRow {
    double eta = 1.0;
    double C_max = 0.0;
    double V_max = std::numeric_limits<double>::quiet_NaN();
    double G_min = std::numeric_limits<double>::quiet_NaN();
    double V = std::numeric_limits<double>::quiet_NaN();
    double Gamma = std::numeric_limits<double>::quiet_NaN();
    bool ok = false;
    std::string reason;  // why the point was skipped
};

/// One row per (eta, C_max): V_max recomputed for that point, then min_gap.
inline std::vector<GapCurveRow> gap_vs_capacity_curve(const SystemConfig& base, const std::vector<double>& C_max_list,
                                                      const std::vector<double>& eta_list)
{
    std::vector<GapCurveRow> rows;
    for (double eta : eta_list) {
        for (double cmax : C_max_list) {
            GapCurveRow row;
            row.eta = eta;
            row.C_max = cmax;
            SystemConfig cfg = base;
            cfg.eta = eta;
            cfg.C_max = cmax;
            cfg.C0 = std::clamp(cfg.C0, cfg.C_min, cfg.C_max);
            cfg.V.reset();
            cfg.Gamma.reset();
            try {
                validate_config(cfg);
                const detail::WindowTerms w = detail::window_terms(cfg);
                row.V_max = w.width_min / (cfg.alpha_bar() - cfg.beta_under());
                const MinGap mg = min_gap(row.V_max, cfg);
                row.G_min = mg.G_min;
                row.V = mg.V;
                row.Gamma = mg.Gamma;
                row.ok = true;
            } catch (const std::exception& e) {
                row.reason = e.what();
            }
            rows.push_back(row);
        }
    }
    return rows;
}

struct CurveMinimizer {
    double G_min = std::numeric_limits<double>::quiet_NaN();
    double C_lo = std::numeric_limits<double>::quiet_NaN();  // smallest C_max attaining G_min
    double C_hi = std::numeric_limits<double>::quiet_NaN();  // largest C_max attaining G_min
    double C_mid = std::numeric_limits<double>::quiet_NaN();
};

/// The gap is flat in C_max once the optimal (V, Gamma) no longer touches the
/// capacity-dependent constraints, so the minimizer is a range. Rows within
/// rel_tol of the minimum count as attaining it; C_mid is the range centre.
inline CurveMinimizer curve_minimizer(const std::vector<GapCurveRow>& rows, double eta, double rel_tol = 1e-6)
{
    CurveMinimizer out;
    double g = std::numeric_limits<double>::infinity();
    for (const GapCurveRow& r : rows)
        if (r.ok && r.eta == eta)
            g = std::min(g, r.G_min);
    if (!std::isfinite(g))
        return out;
    out.G_min = g;
    out.C_lo = std::numeric_limits<double>::infinity();
    out.C_hi = -out.C_lo;
    for (const GapCurveRow& r : rows) {
        if (r.ok && r.eta == eta && r.G_min <= g * (1.0 + rel_tol)) {
            out.C_lo = std::min(out.C_lo, r.C_max);
            out.C_hi = std::max(out.C_hi, r.C_max);
        }
    }
    out.C_mid = 0.5 * (out.C_lo + out.C_hi);
    return out;
}

} // namespace tsoc
