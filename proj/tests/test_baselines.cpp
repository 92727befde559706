#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "tsoc/baselines.hpp"
#include "tsoc/controller.hpp"
#include "tsoc/core_model.hpp"

using namespace tsoc;

namespace {

SystemConfig quick()
{
    SystemConfig c;
    c.planner_iterations = 60;
    c.history_intervals = 4;
    c.cold_start_samples = 5;
    c.res_mean = 25.0;
    return c;
}

} // namespace

TEST(Alg2, NoBatteryNoRes)
{
    const SystemConfig c = quick();
    const RunResult r = run_alg2(validate_config(c), generate_path(c, 4, 6), 4);
    for (const SlotRecord& s : r.records) {
        for (double pb : s.P_b)
            EXPECT_EQ(pb, 0.0);
        for (double a : s.A)
            EXPECT_EQ(a, 0.0);
        for (double C : s.C)
            EXPECT_DOUBLE_EQ(C, c.C0 * std::pow(c.eta, s.t));
    }
    EXPECT_EQ(r.stats.forced_slots, 0);
}

TEST(Alg1, PlansNothingAheadOrConsumesRes)
{
    SystemConfig c = quick();
    const SamplePath p = generate_path(c, 6, 4);
    RunResult r = run_alg1(validate_config(c), p, 6);
    EXPECT_EQ(r.stats.planner_inner_solves, 0);
    for (const SlotRecord& s : r.records)
        for (double e : s.E_share)
            EXPECT_EQ(e, 0.0);
    c.alg1_res_supply = true;
    r = run_alg1(validate_config(c), p, 6);
    for (const SlotRecord& s : r.records)
        for (std::size_t i = 0; i < s.E_share.size(); ++i)
            EXPECT_DOUBLE_EQ(s.E_share[i] * c.T, s.A[i]);
    EXPECT_EQ(r.stats.soc_violations, 0);
}

TEST(Offline, MatchesGenericConicSolver)
{
    std::ifstream is(std::string(TSOC_TEST_DATA) + "/offline_oracle.json");
    ASSERT_TRUE(is) << "missing oracle data";
    const nlohmann::json j = nlohmann::json::parse(is);
    int count = 0;
    for (const auto& inst : j.at("instances")) {
        SystemConfig c;
        c.I = inst.at("I");
        c.K = inst.at("K");
        c.M = inst.at("M");
        c.T = inst.at("T");
        c.eta = inst.at("eta");
        c.P_c = inst.at("P_c");
        c.P_g_max = inst.at("P_g_max");
        c.P_b_min = inst.at("P_b_min");
        c.P_b_max = inst.at("P_b_max");
        c.C_min = inst.at("C_min");
        c.C_max = inst.at("C_max");
        c.C0 = inst.at("C0");
        c.gamma = inst.at("gamma").get<std::vector<double>>();
        c.sigma2 = inst.at("sigma2").get<std::vector<double>>();
        SamplePath p;
        for (const auto& s : inst.at("slow")) {
            SlowState st;
            st.alpha_lt = s.at("alpha_lt");
            st.beta_lt = s.at("beta_lt");
            st.A = s.at("A").get<std::vector<double>>();
            p.slow.push_back(st);
        }
        for (const auto& f : inst.at("fast")) {
            FastState xi;
            xi.alpha_rt = f.at("alpha_rt");
            xi.beta_rt = f.at("beta_rt");
            const auto re = f.at("H_re").get<std::vector<std::vector<double>>>();
            const auto im = f.at("H_im").get<std::vector<std::vector<double>>>();
            xi.H.resize(c.M * c.I, c.K);
            for (int r = 0; r < c.M * c.I; ++r)
                for (int k = 0; k < c.K; ++k)
                    xi.H(r, k) = cplx(re[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)],
                                      im[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)]);
            p.fast.push_back(xi);
        }
        const OfflineResult off = solve_offline(validate_config(c), p);
        const double want = inst.at("objective");
        EXPECT_NEAR(off.total_cost, want, 1e-5 * std::max(1.0, std::abs(want))) << "instance " << count;
        for (const auto& E : off.E)
            for (double e : E) {
                EXPECT_GE(e, 0.0);
                EXPECT_LE(e, c.E_max());
            }
        for (const SlotRecord& s : off.records) {
            for (double C : s.C) {
                EXPECT_GE(C, c.C_min - 1e-6);
                EXPECT_LE(C, c.C_max + 1e-6);
            }
            for (int k = 0; k < c.K; ++k)
                EXPECT_GE(s.sinr[static_cast<std::size_t>(k)], c.gamma_k(k) * (1 - 1e-6));
        }
        ++count;
    }
    EXPECT_EQ(count, 4);
}

TEST(Offline, LowerBoundsEveryOnlinePolicy)
{
    for (std::uint64_t seed : {1u, 2u}) {
        const SystemConfig c = quick();
        const ValidatedConfig v = validate_config(c);
        const SamplePath p = generate_path(c, seed, 8);
        const OfflineResult off = solve_offline(v, p);
        for (Policy pol : {Policy::TSOC, Policy::ALG1, Policy::ALG2}) {
            const RunResult r = run_policy(v, pol, p, seed);
            EXPECT_LE(off.average_cost, r.average_cost + 1e-6) << to_string(pol) << " seed " << seed;
        }
    }
}

TEST(Offline, HorizonCap)
{
    SystemConfig c = quick();
    c.offline_max_slots = 10;
    const SamplePath p = generate_path(c, 1, 3);
    EXPECT_THROW(solve_offline(validate_config(c), p), OfflineHorizonError);
    EXPECT_NO_THROW(solve_offline(validate_config(c), p, 2));
}
