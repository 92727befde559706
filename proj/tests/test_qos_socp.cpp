#include <cmath>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "tsoc/core_model.hpp"
#include "tsoc/qos_socp.hpp"
#include "tsoc/random.hpp"

using namespace tsoc;

namespace {

SystemConfig single_user()
{
    SystemConfig c;
    c.I = 1;
    c.K = 1;
    c.M = 2;
    c.gamma = {2.0};
    c.sigma2 = {0.5};
    return c;
}

double piecewise_objective(const RealtimeProblem& rp, const RealtimeDecision& d)
{
    double v = 0.0;
    for (int i = 0; i < rp.I; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        const double P = rp.P_c + d.tx_power[ii] + d.P_b[ii] - rp.e[ii];
        v += rp.V * cost_rt(P, rp.alpha_rt, rp.beta_rt) + rp.Q[ii] * d.P_b[ii];
    }
    return v;
}

} // namespace

TEST(RealtimeLayout, SmallestInstance)
{
    SystemConfig c;
    c.I = 1;
    c.K = 1;
    c.M = 1;
    Rng rng(1);
    const FastState xi = sample_fast_state(rng, c);
    const RealtimeProblem rp = build_realtime_problem(xi, {0.0}, {0.0}, 1.0, c);
    EXPECT_EQ(rp.num_vars(), 5);
    ASSERT_EQ(rp.prog.cones.soc.size(), 2u);
    EXPECT_EQ(rp.prog.cones.soc[0], 2);  // SINR cone: noise entry only
    EXPECT_EQ(rp.prog.A.rows(), 1);     // phase equality
}

TEST(RealtimeLayout, TableOneShape)
{
    const SystemConfig c;
    Rng rng(1);
    const FastState xi = sample_fast_state(rng, c);
    const RealtimeProblem rp = build_realtime_problem(xi, {0.0, 0.0}, {0.0, 0.0}, 1.0, c);
    EXPECT_EQ(rp.off_pb, 24);  // 2 * M * I * K beamformer reals come first
    for (int k = 0; k < c.K; ++k)
        EXPECT_EQ(rp.prog.cones.soc[static_cast<std::size_t>(k)], 2 * c.K);  // K-1 interferers, noise, signal side
    EXPECT_THROW(build_realtime_problem(xi, {0.0}, {0.0, 0.0}, 1.0, c), std::invalid_argument);
}

TEST(Realtime, SingleUserClosedForm)
{
    const SystemConfig c = single_user();
    Rng rng(42);
    for (int s = 0; s < 100; ++s) {
        const FastState xi = sample_fast_state(rng, c);
        const RealtimeDecision d = solve_realtime(build_realtime_problem(xi, {0.0}, {0.0}, 1.0, c, false));
        const double want = c.gamma[0] * c.sigma2[0] / xi.H.col(0).squaredNorm();
        EXPECT_NEAR(d.tx_power[0], want, 1e-6 * want);
        // scaled matched filter: w parallel to h
        const cplx proj = xi.H.col(0).dot(d.W.col(0));
        EXPECT_NEAR(std::abs(proj), xi.H.col(0).norm() * d.W.col(0).norm(), 1e-6 * std::abs(proj));
        EXPECT_GE(d.sinr[0], c.gamma[0] - 1e-6);
    }
}

TEST(Realtime, ForcedChargeWhenQueueVeryNegative)
{
    const SystemConfig c;
    Rng rng(8);
    for (int s = 0; s < 20; ++s) {
        const FastState xi = sample_fast_state(rng, c);
        const double V = 5.0;
        const double Q = -V * xi.alpha_rt - 1.0;  // below -V * alpha
        const RealtimeDecision d = solve_realtime(build_realtime_problem(xi, {30.0, 5.0}, {Q, Q}, V, c));
        for (double pb : d.P_b)
            EXPECT_NEAR(pb, c.P_b_max, 1e-6);
    }
}

TEST(Realtime, SurplusIsSoldAndBatteryCharges)
{
    const SystemConfig c;
    Rng rng(9);
    const FastState xi = sample_fast_state(rng, c);
    const double V = 2.0;
    const double Q = -V * xi.beta_rt - 0.5;  // V beta + Q < 0
    const double E = c.T * (c.P_g_max + c.P_b_max) + 10.0;
    const RealtimeDecision d = solve_realtime(build_realtime_problem(xi, {E, E}, {Q, Q}, V, c));
    for (int i = 0; i < c.I; ++i) {
        EXPECT_LT(d.P[static_cast<std::size_t>(i)], 0.0);
        EXPECT_NEAR(d.P_b[static_cast<std::size_t>(i)], c.P_b_max, 1e-9);
    }
}

TEST(Realtime, FeasibilityAndBalance)
{
    const SystemConfig c;
    Rng rng(10);
    for (int s = 0; s < 50; ++s) {
        const FastState xi = sample_fast_state(rng, c);
        const std::vector<double> E{60.0 * rng.uniform(), 60.0 * rng.uniform()};
        const std::vector<double> Q{-120.0 * rng.uniform(), -120.0 * rng.uniform()};
        const RealtimeProblem rp = build_realtime_problem(xi, E, Q, 10.0, c);
        const RealtimeDecision d = solve_realtime(rp);
        for (int k = 0; k < c.K; ++k)
            EXPECT_GE(d.sinr[static_cast<std::size_t>(k)], c.gamma_k(k) - 1e-6);
        for (int i = 0; i < c.I; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            EXPECT_GE(d.P_b[ii], c.P_b_min);
            EXPECT_LE(d.P_b[ii], c.P_b_max);
            EXPECT_LE(c.P_c + d.tx_power[ii], c.P_g_max + 1e-7);
            const double balance = d.P[ii] - (c.P_c + transmit_power(d.W, c.M, i) + d.P_b[ii] - E[ii] / c.T);
            EXPECT_LE(std::abs(balance), 1e-7);
        }
        // epigraph objective and the piecewise cost agree at the returned point
        EXPECT_NEAR(d.report.objective, piecewise_objective(rp, d), 1e-6 * (1 + std::abs(d.objective)));
        EXPECT_LE(std::abs(d.report.duality_gap), 1e-7);
    }
}

TEST(Realtime, PhaseRotationInvariance)
{
    const SystemConfig c;
    Rng rng(12);
    for (int s = 0; s < 10; ++s) {
        FastState xi = sample_fast_state(rng, c);
        const std::vector<double> E{20.0, 40.0}, Q{-60.0, -90.0};
        const double base = solve_realtime(build_realtime_problem(xi, E, Q, 10.0, c)).objective;
        for (int k = 0; k < c.K; ++k)
            xi.H.col(k) *= std::polar(1.0, 0.37 + k);
        const double rot = solve_realtime(build_realtime_problem(xi, E, Q, 10.0, c)).objective;
        EXPECT_NEAR(rot, base, 1e-8 * std::max(1.0, std::abs(base)));
    }
}

TEST(Realtime, MoreSupplyNeverCostsMore)
{
    const SystemConfig c;
    Rng rng(14);
    for (int s = 0; s < 20; ++s) {
        const FastState xi = sample_fast_state(rng, c);
        const std::vector<double> Q{-50.0, -80.0};
        const double E0 = 50.0 * rng.uniform();
        const double a = solve_realtime(build_realtime_problem(xi, {E0, E0}, Q, 10.0, c)).objective;
        const double b = solve_realtime(build_realtime_problem(xi, {E0 + 5.0, E0}, Q, 10.0, c)).objective;
        EXPECT_LE(b, a + 1e-7 * (1 + std::abs(a)));
    }
}

TEST(Realtime, ZeroChannelAndUnreachableTargets)
{
    SystemConfig c = single_user();
    Rng rng(3);
    FastState xi = sample_fast_state(rng, c);
    xi.H.setZero();
    EXPECT_THROW(solve_realtime(build_realtime_problem(xi, {0.0}, {0.0}, 1.0, c, false)), InfeasibleProblem);

    xi = sample_fast_state(rng, c);
    c.gamma = {1e9};
    EXPECT_THROW(solve_realtime(build_realtime_problem(xi, {0.0}, {0.0}, 1.0, c, false)), InfeasibleProblem);
}

TEST(Realtime, PlanningSampleDeltaIndependentOfPlanAwayFromKinks)
{
    // with the battery off and the net position far on one side of zero,
    // the beamformers do not depend on E
    SystemConfig c;
    Rng rng(15);
    for (int s = 0; s < 2; ++s) {
        const FastState xi = sample_fast_state(rng, c);
        const RealtimeDecision a = solve_planning_sample(xi, {0.0, 0.0}, {0.0, 0.0}, 1.0, c, false);
        const RealtimeDecision b = solve_planning_sample(xi, {5.0, 5.0}, {0.0, 0.0}, 1.0, c, false);
        for (int i = 0; i < c.I; ++i)
            EXPECT_NEAR(a.demand(i, c.P_c), b.demand(i, c.P_c), 1e-6);
    }
}

TEST(Realtime, BatteryArgmin)
{
    // slopes Q + V alpha and Q + V beta decide the corners
    EXPECT_EQ(battery_argmin(12.0, 10.0, 1.0, 1.0, 2.0, 0.5, -2.0, 2.0), -2.0);
    EXPECT_EQ(battery_argmin(12.0, 10.0, -3.0, 1.0, 2.0, 0.5, -2.0, 2.0), 2.0);
    EXPECT_EQ(battery_argmin(12.0, 13.0, -1.0, 1.0, 2.0, 0.5, -2.0, 2.0), 1.0);
    EXPECT_EQ(battery_argmin(12.0, 20.0, -1.0, 1.0, 2.0, 0.5, -2.0, 2.0), 2.0);
}

TEST(RealtimeOracle, AgreesWithGenericConicSolver)
{
    std::ifstream is(std::string(TSOC_TEST_DATA) + "/realtime_oracle.json");
    ASSERT_TRUE(is) << "missing oracle data";
    const nlohmann::json j = nlohmann::json::parse(is);
    int count = 0;
    for (const auto& inst : j.at("instances")) {
        SystemConfig c;
        c.I = inst.at("I");
        c.K = inst.at("K");
        c.M = inst.at("M");
        c.T = inst.at("T");
        c.P_c = inst.at("P_c");
        c.P_g_max = inst.at("P_g_max");
        c.P_b_min = inst.at("P_b_min");
        c.P_b_max = inst.at("P_b_max");
        c.gamma = inst.at("gamma").get<std::vector<double>>();
        c.sigma2 = inst.at("sigma2").get<std::vector<double>>();
        FastState xi;
        xi.alpha_rt = inst.at("alpha_rt");
        xi.beta_rt = inst.at("beta_rt");
        const auto re = inst.at("H_re").get<std::vector<std::vector<double>>>();
        const auto im = inst.at("H_im").get<std::vector<std::vector<double>>>();
        xi.H.resize(c.M * c.I, c.K);
        for (int r = 0; r < c.M * c.I; ++r)
            for (int k = 0; k < c.K; ++k)
                xi.H(r, k) = cplx(re[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)],
                                  im[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)]);
        const bool battery = inst.at("battery");
        const RealtimeDecision d = solve_realtime(build_realtime_problem(
            xi, inst.at("E").get<std::vector<double>>(), inst.at("Q").get<std::vector<double>>(), inst.at("V"), c,
            battery));
        const double want = inst.at("objective");
        EXPECT_NEAR(d.objective, want, 1e-5 * std::max(1.0, std::abs(want))) << "instance " << count;
        ++count;
    }
    EXPECT_EQ(count, 20);
}
