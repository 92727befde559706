#pragma once

// Per-slot energy-balancing and beamforming problem as a conic program.
//
// Variables (all real):
//   w     2*M*I per user: Re(w_k) then Im(w_k), users in order
//   P_b   one per BS (omitted when the battery is absent)
//   s     one per BS, epigraph of the real-time cost
//   p     one per BS, epigraph of the transmit power sum_k w_k^H B_i w_k
//
//   minimize   sum_i V s_i + Q_i P_b,i
//   subject to Im(h_k^H w_k) = 0
//              p_i <= P_g_max - P_c
//              P_b_min <= P_b,i <= P_b_max
//              alpha (P_c + p_i + P_b,i - e_i) <= s_i      (e_i = E_i / T)
//              beta  (P_c + p_i + P_b,i - e_i) <= s_i
//              || (h_k^H w_l)_{l != k}, sigma_k || <= Re(h_k^H w_k) / sqrt(gamma_k)
//              || (2 u_i, p_i - 1) || <= p_i + 1           (u_i = rows of BS i in every w_k)

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsoc/conic_solver.hpp"
#include "tsoc/core_model.hpp"

namespace tsoc {

struct SolveReport {
    conic::Status status = conic::Status::NumericalError;
    bool reduced_accuracy = false;
    double objective = 0.0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double cone_residual = 0.0;
    double duality_gap = 0.0;
    double relative_gap = 0.0;
    int iterations = 0;
};

class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, SolveReport r) : std::runtime_error(what), report_(r) {}
    const SolveReport& report() const noexcept { return report_; }

private:
    SolveReport report_;
};

class InfeasibleProblem : public SolverError {
public:
    using SolverError::SolverError;
};

class IterationLimit : public SolverError {
public:
    using SolverError::SolverError;
};

struct RealtimeProblem {
    conic::ConeProgram prog;
    int I = 0, K = 0, M = 0;
    bool battery = true;
    int off_pb = -1, off_s = 0, off_p = 0;
    int row_epi = 0;  // first of the 2I epigraph rows (alpha rows, then beta rows)
    double V = 0.0, P_c = 0.0, alpha_rt = 0.0, beta_rt = 0.0, P_b_min = 0.0, P_b_max = 0.0;
    std::vector<double> e;  // E_i / T
    std::vector<double> Q;
    std::vector<double> sigma2;
    CMat H;
    bool zero_channel = false;

    int num_vars() const { return static_cast<int>(prog.c.size()); }
    int w_index(int k, int r, bool imag) const { return k * 2 * M * I + (imag ? M * I : 0) + r; }
};

struct RealtimeDecision {
    CMat W;                        // (M*I) x K, column k is w_k
    std::vector<double> P_b;       // per BS
    std::vector<double> P;         // real-time trade per BS
    std::vector<double> tx_power;  // sum_k w_k^H B_i w_k per BS
    std::vector<double> price;     // marginal real-time energy price per BS, in [beta_rt, alpha_rt]
    std::vector<double> sinr;      // per user
    double objective = 0.0;        // sum_i V*cost_rt(P_i) + Q_i*P_b,i
    SolveReport report;

    /// Energy drawn by BS i excluding the planned share: P_c + tx + P_b.
    double demand(int i, double P_c) const
    {
        return P_c + tx_power[static_cast<std::size_t>(i)] + P_b[static_cast<std::size_t>(i)];
    }
};

/// Builds the conic form of the per-slot problem for a given plan E (kWh per
/// interval, per BS) and frozen queues Q. `battery` false drops the P_b block.
inline RealtimeProblem build_realtime_problem(const FastState& fast, const std::vector<double>& E,
                                              const std::vector<double>& Q, double V, const SystemConfig& cfg,
                                              bool battery)
{
    const int I = cfg.I, K = cfg.K, M = cfg.M;
    const int MI = M * I;
    if (fast.H.rows() != MI || fast.H.cols() != K)
        throw std::invalid_argument("build_realtime_problem: channel matrix must be (M*I) x K");
    if (E.size() != static_cast<std::size_t>(I) || Q.size() != static_cast<std::size_t>(I))
        throw std::invalid_argument("build_realtime_problem: E and Q need one entry per BS");

    RealtimeProblem rp;
    rp.I = I;
    rp.K = K;
    rp.M = M;
    rp.battery = battery;
    rp.V = V;
    rp.P_c = cfg.P_c;
    rp.alpha_rt = fast.alpha_rt;
    rp.beta_rt = fast.beta_rt;
    rp.P_b_min = battery ? cfg.P_b_min : 0.0;
    rp.P_b_max = battery ? cfg.P_b_max : 0.0;
    rp.Q = Q;
    rp.H = fast.H;
    rp.e.resize(static_cast<std::size_t>(I));
    for (int i = 0; i < I; ++i)
        rp.e[static_cast<std::size_t>(i)] = E[static_cast<std::size_t>(i)] / cfg.T;
    rp.sigma2.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k)
        rp.sigma2[static_cast<std::size_t>(k)] = cfg.sigma2_k(k);

    const int nw = 2 * MI * K;
    int n = nw;
    if (battery) {
        rp.off_pb = n;
        n += I;
    }
    rp.off_s = n;
    n += I;
    rp.off_p = n;
    n += I;

    auto& P = rp.prog;
    P.c = conic::Vec::Zero(n);
    for (int i = 0; i < I; ++i) {
        P.c[rp.off_s + i] = V;
        if (battery)
            P.c[rp.off_pb + i] = Q[static_cast<std::size_t>(i)];
    }

    // Re(h^H w) = hr'wr + hi'wi ; Im(h^H w) = hr'wi - hi'wr
    std::vector<conic::Triplet> at;
    for (int k = 0; k < K; ++k) {
        if (fast.H.col(k).squaredNorm() == 0.0)
            rp.zero_channel = true;
        for (int r = 0; r < MI; ++r) {
            const cplx h = fast.H(r, k);
            at.emplace_back(k, rp.w_index(k, r, true), h.real());
            at.emplace_back(k, rp.w_index(k, r, false), -h.imag());
        }
    }
    P.A.resize(K, n);
    P.A.setFromTriplets(at.begin(), at.end());
    P.b = conic::Vec::Zero(K);

    const int n_lin = I + (battery ? 2 * I : 0) + 2 * I;
    const int soc_sinr = 2 * K;
    const int soc_pow = 2 + 2 * M * K;
    P.cones.linear = n_lin;
    P.cones.soc.assign(static_cast<std::size_t>(K), soc_sinr);
    P.cones.soc.insert(P.cones.soc.end(), static_cast<std::size_t>(I), soc_pow);
    const int m = P.cones.total();
    P.h = conic::Vec::Zero(m);
    std::vector<conic::Triplet> gt;

    int row = 0;
    for (int i = 0; i < I; ++i, ++row) {  // power cap
        gt.emplace_back(row, rp.off_p + i, 1.0);
        P.h[row] = cfg.P_g_max - cfg.P_c;
    }
    if (battery) {
        for (int i = 0; i < I; ++i, ++row) {
            gt.emplace_back(row, rp.off_pb + i, 1.0);
            P.h[row] = cfg.P_b_max;
        }
        for (int i = 0; i < I; ++i, ++row) {
            gt.emplace_back(row, rp.off_pb + i, -1.0);
            P.h[row] = -cfg.P_b_min;
        }
    }
    rp.row_epi = row;
    for (double price : {fast.alpha_rt, fast.beta_rt}) {
        for (int i = 0; i < I; ++i, ++row) {
            gt.emplace_back(row, rp.off_p + i, price);
            if (battery)
                gt.emplace_back(row, rp.off_pb + i, price);
            gt.emplace_back(row, rp.off_s + i, -1.0);
            P.h[row] = price * (rp.e[static_cast<std::size_t>(i)] - cfg.P_c);
        }
    }

    // SINR cones: s = (Re(h_k^H w_k)/sqrt(gamma), [Re, Im](h_k^H w_l) for l != k, sigma_k)
    for (int k = 0; k < K; ++k) {
        const double inv_sg = 1.0 / std::sqrt(cfg.gamma_k(k));
        for (int r = 0; r < MI; ++r) {
            const cplx h = fast.H(r, k);
            gt.emplace_back(row, rp.w_index(k, r, false), -h.real() * inv_sg);
            gt.emplace_back(row, rp.w_index(k, r, true), -h.imag() * inv_sg);
        }
        int sub = row + 1;
        for (int l = 0; l < K; ++l) {
            if (l == k)
                continue;
            for (int r = 0; r < MI; ++r) {
                const cplx h = fast.H(r, k);
                gt.emplace_back(sub, rp.w_index(l, r, false), -h.real());
                gt.emplace_back(sub, rp.w_index(l, r, true), -h.imag());
                gt.emplace_back(sub + 1, rp.w_index(l, r, true), -h.real());
                gt.emplace_back(sub + 1, rp.w_index(l, r, false), h.imag());
            }
            sub += 2;
        }
        P.h[sub] = std::sqrt(cfg.sigma2_k(k));
        row += soc_sinr;
    }

    // power cones: (p + 1, 2 u, p - 1)
    for (int i = 0; i < I; ++i) {
        gt.emplace_back(row, rp.off_p + i, -1.0);
        P.h[row] = 1.0;
        int sub = row + 1;
        for (int k = 0; k < K; ++k)
            for (int a = 0; a < M; ++a)
                for (bool imag : {false, true})
                    gt.emplace_back(sub++, rp.w_index(k, i * M + a, imag), -2.0);
        gt.emplace_back(sub, rp.off_p + i, -1.0);
        P.h[sub] = -1.0;
        row += soc_pow;
    }

    P.G.resize(m, n);
    P.G.setFromTriplets(gt.begin(), gt.end());
    return rp;
}

inline RealtimeProblem build_realtime_problem(const FastState& fast, const std::vector<double>& E,
                                              const std::vector<double>& Q, double V, const SystemConfig& cfg)
{
    return build_realtime_problem(fast, E, Q, V, cfg, cfg.has_battery());
}

inline SolveReport make_report(const conic::Result& r)
{
    SolveReport rep;
    rep.status = r.status;
    rep.reduced_accuracy = r.reduced_accuracy;
    rep.objective = r.pcost;
    rep.primal_residual = r.pres;
    rep.dual_residual = r.dres;
    rep.cone_residual = r.cone_residual;
    rep.duality_gap = r.gap;
    rep.relative_gap = r.relgap;
    rep.iterations = r.iterations;
    return rep;
}

inline void throw_on_failure(const conic::Result& r, const char* who)
{
    const SolveReport rep = make_report(r);
    switch (r.status) {
    case conic::Status::Optimal: return;
    case conic::Status::PrimalInfeasible:
        throw InfeasibleProblem(std::string(who) + ": problem infeasible (SINR targets unreachable)", rep);
    case conic::Status::MaxIterations:
        throw IterationLimit(std::string(who) + ": iteration limit reached", rep);
    default: throw SolverError(std::string(who) + ": solver failed (" + conic::to_string(r.status) + ")", rep);
    }
}

/// Exact minimizer over [lo, hi] of V*G^rt(d + P_b - e) + Q*P_b for fixed
/// consumption d. The slopes are Q + V*alpha (buying) and Q + V*beta
/// (selling), so the answer is a bound or the balance point.
inline double battery_argmin(double d, double e, double Q, double V, double alpha, double beta, double lo, double hi)
{
    if (Q + V * beta >= 0.0)
        return lo;
    if (Q + V * alpha <= 0.0)
        return hi;
    return std::clamp(e - d, lo, hi);
}

/// Maps a solver point back to beamformers, battery action and real-time trade.
/// The battery action is re-derived exactly from the returned beamformers,
/// which removes the interior-point offset from the box bounds.
inline RealtimeDecision extract_decision(const RealtimeProblem& rp, const conic::Result& r)
{
    const int I = rp.I, K = rp.K, M = rp.M, MI = M * I;
    RealtimeDecision d;
    d.report = make_report(r);
    d.W.resize(MI, K);
    for (int k = 0; k < K; ++k)
        for (int j = 0; j < MI; ++j)
            d.W(j, k) = cplx(r.x[rp.w_index(k, j, false)], r.x[rp.w_index(k, j, true)]);
    d.P_b.assign(static_cast<std::size_t>(I), 0.0);
    d.P.resize(static_cast<std::size_t>(I));
    d.tx_power.resize(static_cast<std::size_t>(I));
    d.price.resize(static_cast<std::size_t>(I));
    double obj = 0.0;
    for (int i = 0; i < I; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        d.tx_power[ii] = transmit_power(d.W, M, i);
        if (rp.battery)
            d.P_b[ii] = battery_argmin(rp.P_c + d.tx_power[ii], rp.e[ii], rp.Q[ii], rp.V, rp.alpha_rt, rp.beta_rt,
                                       rp.P_b_min, rp.P_b_max);
        d.P[ii] = rp.P_c + d.tx_power[ii] + d.P_b[ii] - rp.e[ii];
        const double za = r.z[rp.row_epi + i], zb = r.z[rp.row_epi + I + i];
        const double zsum = za + zb;
        d.price[ii] = zsum > 0.0 ? std::clamp((rp.alpha_rt * za + rp.beta_rt * zb) / zsum, rp.beta_rt, rp.alpha_rt)
                                 : rp.alpha_rt;
        obj += rp.V * cost_rt(d.P[ii], rp.alpha_rt, rp.beta_rt) + rp.Q[ii] * d.P_b[ii];
    }
    d.objective = obj;
    d.sinr.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k)
        d.sinr[static_cast<std::size_t>(k)] = sinr(rp.H, d.W, rp.sigma2[static_cast<std::size_t>(k)], k);
    return d;
}

inline RealtimeDecision solve_realtime(const RealtimeProblem& rp, const conic::Settings& st = {})
{
    if (rp.zero_channel) {
        SolveReport rep;
        rep.status = conic::Status::PrimalInfeasible;
        throw InfeasibleProblem("solve_realtime: a user has an all-zero channel, SINR target unreachable", rep);
    }
    const conic::Result r = conic::solve(rp.prog, st);
    throw_on_failure(r, "solve_realtime");
    return extract_decision(rp, r);
}

/// Inner problem of the planner for one sampled fast state with the plan
/// fixed at the iterate E. Returns the decision; Delta_i is decision.demand(i, P_c).
inline RealtimeDecision solve_planning_sample(const FastState& fast, const std::vector<double>& E_iterate,
                                              const std::vector<double>& Q, double V, const SystemConfig& cfg,
                                              bool battery, const conic::Settings& st = {})
{
    return solve_realtime(build_realtime_problem(fast, E_iterate, Q, V, cfg, battery), st);
}

/// Plain-text dump of a conic program:
///   line 1: n p m
///   line 2: "cones" L q1 q2 ...
///   then sections "c", "b", "h" (one value per line) and "A", "G" (row col value triplets),
///   each introduced by its name and entry count.
inline void write_problem(std::ostream& os, const conic::ConeProgram& P)
{
    const auto prec = os.precision(17);
    os << P.c.size() << ' ' << P.b.size() << ' ' << P.h.size() << '\n';
    os << "cones " << P.cones.linear;
    for (int q : P.cones.soc)
        os << ' ' << q;
    os << '\n';
    auto vec = [&](const char* name, const conic::Vec& v) {
        os << name << ' ' << v.size() << '\n';
        for (Eigen::Index j = 0; j < v.size(); ++j)
            os << v[j] << '\n';
    };
    auto mat = [&](const char* name, const conic::SpMat& A) {
        os << name << ' ' << A.nonZeros() << '\n';
        for (int k = 0; k < A.outerSize(); ++k)
            for (conic::SpMat::InnerIterator it(A, k); it; ++it)
                os << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
    };
    vec("c", P.c);
    mat("A", P.A);
    vec("b", P.b);
    mat("G", P.G);
    vec("h", P.h);
    os.precision(prec);
}

} // namespace tsoc
