#pragma once

// Comparison policies: one-scale control without planning (ALG1), two-scale
// control without RES or storage (ALG2), and the clairvoyant offline optimum.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsoc/conic_solver.hpp"
#include "tsoc/controller.hpp"
#include "tsoc/core_model.hpp"
#include "tsoc/qos_socp.hpp"

namespace tsoc {

/// E = 0 every interval; the battery follows the real-time rule unless
/// cfg.alg1_battery is false.
inline RunResult run_alg1(const ValidatedConfig& vcfg, const SamplePath& path, std::optional<std::uint64_t> seed = {},
                          int intervals = -1)
{
    return run_policy(vcfg, Policy::ALG1, path, seed, intervals);
}

/// Planner and real-time solves with A = 0 and no battery.
inline RunResult run_alg2(const ValidatedConfig& vcfg, const SamplePath& path, std::optional<std::uint64_t> seed = {},
                          int intervals = -1)
{
    return run_policy(vcfg, Policy::ALG2, path, seed, intervals);
}

class OfflineHorizonError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct OfflineResult {
    double total_cost = 0.0;
    double average_cost = 0.0;              // per slot, summed over BSs
    std::vector<std::vector<double>> E;     // [interval][BS]
    std::vector<SlotRecord> records;        // Q entries are NaN (no queue)
    SolveReport report;
    int num_vars = 0;
    int num_constraints = 0;
};

/// Stacked program over the whole horizon: per-slot beamformers, battery
/// actions and real-time epigraphs, per-interval plans with their epigraphs,
/// and the SoC trajectory tied by the battery dynamics.
struct OfflineProgram {
    conic::ConeProgram prog;
    int slots = 0, intervals = 0;
    int n_slot = 0;  // variables per slot
    int off_C = -1, off_E = 0, off_u = 0;
    std::vector<RealtimeProblem> slot;  // per-slot layout (E = 0, Q = 0, V = 1)
    bool battery = true;
};

inline OfflineProgram build_offline_program(const ValidatedConfig& vcfg, const SamplePath& path, int intervals)
{
    const SystemConfig& cfg = *vcfg;
    const int I = cfg.I, K = cfg.K, T = cfg.T;
    const int N = intervals;
    const int NT = N * T;
    if (NT > cfg.offline_max_slots)
        throw OfflineHorizonError("solve_offline: horizon of " + std::to_string(NT) + " slots exceeds the cap of "
                                  + std::to_string(cfg.offline_max_slots));
    if (N > path.intervals())
        throw std::invalid_argument("solve_offline: path shorter than requested horizon");

    OfflineProgram op;
    op.slots = NT;
    op.intervals = N;
    op.battery = cfg.has_battery();
    const std::vector<double> zeros(static_cast<std::size_t>(I), 0.0);
    op.slot.reserve(static_cast<std::size_t>(NT));
    for (int t = 0; t < NT; ++t)
        op.slot.push_back(build_realtime_problem(path.fast[static_cast<std::size_t>(t)], zeros, zeros, 1.0, cfg,
                                                 op.battery));
    const RealtimeProblem& r0 = op.slot.front();
    op.n_slot = r0.num_vars();
    const int n_lin_slot = r0.prog.cones.linear;
    const int n_cone_slot = r0.prog.cones.total() - n_lin_slot;

    int n = NT * op.n_slot;
    if (op.battery) {
        op.off_C = n;
        n += NT * I;
    }
    op.off_E = n;
    n += N * I;
    op.off_u = n;
    n += N * I;

    const int lin_soc = op.battery ? 2 * NT * I : 0;
    const int lin_total = NT * n_lin_slot + lin_soc + 2 * N * I + 2 * N * I;
    const int m = lin_total + NT * n_cone_slot;
    const int p = NT * K + (op.battery ? NT * I : 0);

    auto& P = op.prog;
    P.c = conic::Vec::Zero(n);
    P.h = conic::Vec::Zero(m);
    P.b = conic::Vec::Zero(p);
    P.cones.linear = lin_total;
    for (int t = 0; t < NT; ++t)
        P.cones.soc.insert(P.cones.soc.end(), r0.prog.cones.soc.begin(), r0.prog.cones.soc.end());

    std::vector<conic::Triplet> gt, at;
    for (int t = 0; t < NT; ++t) {
        const RealtimeProblem& rp = op.slot[static_cast<std::size_t>(t)];
        const int col0 = t * op.n_slot;
        const int lin0 = t * n_lin_slot;
        const int cone0 = lin_total + t * n_cone_slot;
        auto map_row = [&](int r) { return r < n_lin_slot ? lin0 + r : cone0 + (r - n_lin_slot); };
        for (int k = 0; k < rp.prog.G.outerSize(); ++k)
            for (conic::SpMat::InnerIterator it(rp.prog.G, k); it; ++it)
                gt.emplace_back(map_row(static_cast<int>(it.row())), col0 + static_cast<int>(it.col()), it.value());
        for (int r = 0; r < rp.prog.h.size(); ++r)
            P.h[map_row(r)] = rp.prog.h[r];
        for (int k = 0; k < rp.prog.A.outerSize(); ++k)
            for (conic::SpMat::InnerIterator it(rp.prog.A, k); it; ++it)
                at.emplace_back(t * K + static_cast<int>(it.row()), col0 + static_cast<int>(it.col()), it.value());
        const int nint = t / T;
        for (int i = 0; i < I; ++i) {
            P.c[col0 + rp.off_s + i] = 1.0;
            const int e_col = op.off_E + nint * I + i;
            gt.emplace_back(lin0 + rp.row_epi + i, e_col, -rp.alpha_rt / T);
            gt.emplace_back(lin0 + rp.row_epi + I + i, e_col, -rp.beta_rt / T);
        }
    }

    int row = NT * n_lin_slot;
    if (op.battery) {
        // C(t+1) = eta C(t) + P_b(t), with C(0) = C0 fixed; bounds on C(1..NT)
        for (int t = 0; t < NT; ++t) {
            for (int i = 0; i < I; ++i) {
                const int arow = NT * K + t * I + i;
                const int c_next = op.off_C + t * I + i;
                at.emplace_back(arow, c_next, 1.0);
                at.emplace_back(arow, t * op.n_slot + op.slot[static_cast<std::size_t>(t)].off_pb + i, -1.0);
                if (t == 0)
                    P.b[arow] = cfg.eta * cfg.C0;
                else
                    at.emplace_back(arow, op.off_C + (t - 1) * I + i, -cfg.eta);
            }
        }
        for (int j = 0; j < NT * I; ++j) {
            gt.emplace_back(row, op.off_C + j, 1.0);
            P.h[row++] = cfg.C_max;
            gt.emplace_back(row, op.off_C + j, -1.0);
            P.h[row++] = -cfg.C_min;
        }
    }
    for (int j = 0; j < N * I; ++j) {  // 0 <= E <= E_max
        gt.emplace_back(row, op.off_E + j, -1.0);
        P.h[row++] = 0.0;
        gt.emplace_back(row, op.off_E + j, 1.0);
        P.h[row++] = cfg.E_max();
    }
    for (int nint = 0; nint < N; ++nint) {
        const SlowState& s = path.slow[static_cast<std::size_t>(nint)];
        for (int i = 0; i < I; ++i) {
            const int j = nint * I + i;
            P.c[op.off_u + j] = 1.0;
            for (double price : {s.alpha_lt, s.beta_lt}) {
                gt.emplace_back(row, op.off_E + j, price);
                gt.emplace_back(row, op.off_u + j, -1.0);
                P.h[row++] = price * s.A[static_cast<std::size_t>(i)];
            }
        }
    }
    P.G.resize(m, n);
    P.G.setFromTriplets(gt.begin(), gt.end());
    P.A.resize(p, n);
    P.A.setFromTriplets(at.begin(), at.end());
    return op;
}

/// Clairvoyant optimum over the first `intervals` intervals of the path.
inline OfflineResult solve_offline(const ValidatedConfig& vcfg, const SamplePath& path, int intervals = -1,
                                   const conic::Settings& st = {})
{
    const SystemConfig& cfg = *vcfg;
    const int N = intervals < 0 ? path.intervals() : intervals;
    const OfflineProgram op = build_offline_program(vcfg, path, N);
    const conic::Result r = conic::solve(op.prog, st);
    throw_on_failure(r, "solve_offline");

    const int I = cfg.I, T = cfg.T;
    OfflineResult out;
    out.report = make_report(r);
    out.num_vars = static_cast<int>(op.prog.c.size());
    out.num_constraints = static_cast<int>(op.prog.h.size() + op.prog.b.size());
    out.E.assign(static_cast<std::size_t>(N), std::vector<double>(static_cast<std::size_t>(I)));
    for (int nint = 0; nint < N; ++nint)
        for (int i = 0; i < I; ++i)
            out.E[static_cast<std::size_t>(nint)][static_cast<std::size_t>(i)] =
                std::clamp(r.x[op.off_E + nint * I + i], 0.0, cfg.E_max());

    std::vector<double> C(static_cast<std::size_t>(I), cfg.C0);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (int t = 0; t < op.slots; ++t) {
        const RealtimeProblem& rp = op.slot[static_cast<std::size_t>(t)];
        const int col0 = t * op.n_slot;
        const int nint = t / T;
        const SlowState& slow = path.slow[static_cast<std::size_t>(nint)];
        const FastState& xi = path.fast[static_cast<std::size_t>(t)];
        const conic::Vec xs = r.x.segment(col0, op.n_slot);
        CMat W(rp.M * rp.I, rp.K);
        for (int k = 0; k < rp.K; ++k)
            for (int j = 0; j < rp.M * rp.I; ++j)
                W(j, k) = cplx(xs[rp.w_index(k, j, false)], xs[rp.w_index(k, j, true)]);
        SlotRecord rec;
        rec.t = t;
        rec.n = nint;
        rec.alpha_lt = slow.alpha_lt;
        rec.beta_lt = slow.beta_lt;
        rec.alpha_rt = xi.alpha_rt;
        rec.beta_rt = xi.beta_rt;
        rec.iterations = r.iterations;
        for (int k = 0; k < rp.K; ++k)
            rec.sinr.push_back(sinr(xi.H, W, cfg.sigma2_k(k), k));
        for (int i = 0; i < I; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            const double E = out.E[static_cast<std::size_t>(nint)][ii];
            const double pb = op.battery ? std::clamp(xs[rp.off_pb + i], cfg.P_b_min, cfg.P_b_max) : 0.0;
            const double P = cfg.P_c + transmit_power(W, rp.M, i) + pb - E / T;
            rec.E_share.push_back(E / T);
            rec.A.push_back(slow.A[ii]);
            rec.P.push_back(P);
            rec.P_b.push_back(pb);
            rec.C.push_back(C[ii]);
            rec.Q.push_back(nan);
            rec.Phi.push_back(slot_cost(E, P, slow, xi, slow.A[ii], T));
            C[ii] = battery_step(C[ii], pb, cfg.eta);
        }
        out.total_cost += rec.total_cost();
        out.records.push_back(std::move(rec));
    }
    out.average_cost = op.slots > 0 ? out.total_cost / op.slots : 0.0;
    return out;
}

} // namespace tsoc
