#include <cmath>
#include <limits>
#include <numbers>

#include <gtest/gtest.h>

#include "tsoc/core_model.hpp"
#include "tsoc/random.hpp"

using namespace tsoc;

namespace {

ConfigCondition condition_of(const SystemConfig& c)
{
    try {
        validate_config(c);
    } catch (const ConfigError& e) {
        return e.condition();
    }
    ADD_FAILURE() << "config unexpectedly valid";
    return ConfigCondition::Dimensions;
}

} // namespace

TEST(ValidateConfig, TableOneIsValid)
{
    const ValidatedConfig v = validate_config(SystemConfig{});
    EXPECT_EQ(v->I, 2);
    EXPECT_EQ(v->T, 5);
    EXPECT_DOUBLE_EQ(v->eta, 0.95);
}

TEST(ValidateConfig, SmallCapacityViolatesA2)
{
    SystemConfig c;
    c.C_max = 10.0;  // needs >= (1 - 0.95^5)/0.05 * 4 ~ 18.1
    EXPECT_EQ(condition_of(c), ConfigCondition::ConditionA2);
    c.C_max = 18.2;
    EXPECT_NO_THROW(validate_config(c));
    c.C_max = 18.0;
    EXPECT_EQ(condition_of(c), ConfigCondition::ConditionA2);
}

TEST(ValidateConfig, LosslessBatteryUsesLimitRatio)
{
    SystemConfig c;
    c.eta = 1.0;
    c.C_min = 0.0;
    c.C0 = 0.0;
    c.C_max = 20.0;  // T * 4 = 20 exactly
    EXPECT_NO_THROW(validate_config(c));
    c.C_max = 19.99;
    EXPECT_EQ(condition_of(c), ConfigCondition::ConditionA2);
}

TEST(ValidateConfig, DistinctConditions)
{
    SystemConfig c;
    c.eta = 1.5;
    EXPECT_EQ(condition_of(c), ConfigCondition::Efficiency);
    c = {};
    c.P_b_min = 1.0;
    EXPECT_EQ(condition_of(c), ConfigCondition::BatteryBounds);
    c = {};
    c.C0 = 90.0;
    EXPECT_EQ(condition_of(c), ConfigCondition::SocBounds);
    c = {};
    c.sell_ratio_rt = 1.0;
    EXPECT_EQ(condition_of(c), ConfigCondition::SellRatio);
    c = {};
    c.P_g_max = 5.0;
    EXPECT_EQ(condition_of(c), ConfigCondition::PowerCap);
    c = {};
    c.gamma = {1.0, 1.0};
    EXPECT_EQ(condition_of(c), ConfigCondition::UserVectors);
    c = {};
    c.C_min = 50.0;
    c.C0 = 50.0;
    c.C_max = 200.0;
    c.eta = 0.9;
    c.P_b_max = 2.0;  // (1 - 0.9) * 50 = 5 > 2
    EXPECT_EQ(condition_of(c), ConfigCondition::ConditionA1);
    c = {};
    c.V = -1.0;
    EXPECT_EQ(condition_of(c), ConfigCondition::Lyapunov);
}

TEST(ValidateConfig, ErrorNamesTheInequality)
{
    SystemConfig c;
    c.C_max = 10.0;
    try {
        validate_config(c);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("A2"), std::string::npos);
    }
}

TEST(ConfigJson, RoundTrip)
{
    SystemConfig c;
    c.eta = 0.9;
    c.gamma = {1.0, 2.0, 0.5};
    c.V = 3.5;
    c.price_cap_rt = 4.0;
    const SystemConfig d = config_from_json(config_to_json(c));
    EXPECT_EQ(config_to_json(c), config_to_json(d));
    EXPECT_DOUBLE_EQ(*d.V, 3.5);
    EXPECT_FALSE(d.Gamma.has_value());
}

TEST(ConfigJson, UnknownKeyAndBadType)
{
    EXPECT_THROW(config_from_json(nlohmann::json{{"etta", 0.9}}), ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json{{"eta", "high"}}), ConfigError);
    const SystemConfig s = config_from_json(nlohmann::json{{"gamma", 2.0}});
    ASSERT_EQ(s.gamma.size(), 3u);
    EXPECT_DOUBLE_EQ(s.gamma[2], 2.0);
}

TEST(Sampling, FoldedNormalMeanOfLongTermPrice)
{
    SystemConfig c;
    Rng rng(7);
    const int n = 100000;
    double sum = 0.0;
    for (int k = 0; k < n; ++k) {
        const SlowState s = sample_slow_state(rng, c);
        EXPECT_GT(s.alpha_lt, s.beta_lt);
        sum += s.alpha_lt;
    }
    // mean of |N(m, s^2)|: s sqrt(2/pi) exp(-m^2/2s^2) + m (1 - 2 Phi(-m/s))
    const double m = c.price_lt_mean, s = m / 4.0;
    const double folded = s * std::sqrt(2.0 / std::numbers::pi) * std::exp(-m * m / (2 * s * s))
                          + m * std::erf(m / (s * std::sqrt(2.0)));
    EXPECT_NEAR(sum / n, folded, 0.01 * folded);
}

TEST(Sampling, SellRatiosAndDegenerateRes)
{
    SystemConfig c;
    c.res_scale = 0.0;
    Rng rng(3);
    const SlowState s = sample_slow_state(rng, c);
    EXPECT_DOUBLE_EQ(s.beta_lt, 0.9 * s.alpha_lt);
    for (double a : s.A)
        EXPECT_EQ(a, c.res_mean);
    const FastState f = sample_fast_state(rng, c);
    EXPECT_DOUBLE_EQ(f.beta_rt, 0.3 * f.alpha_rt);
    EXPECT_EQ(f.H.rows(), 4);
    EXPECT_EQ(f.H.cols(), 3);
    EXPECT_NEAR(0.9 * 1.2, 1.08, 1e-15);
    EXPECT_NEAR(0.3 * 2.3, 0.69, 1e-15);
}

TEST(Sampling, UnitVarianceChannelsAndPriceCap)
{
    SystemConfig c;
    c.K = 1;
    c.I = 1;
    c.M = 1;
    Rng rng(11);
    double power = 0.0, worst = 0.0;
    const int n = 100000;
    for (int k = 0; k < n; ++k) {
        const FastState f = sample_fast_state(rng, c);
        power += std::norm(f.H(0, 0));
        worst = std::max(worst, f.alpha_rt);
        ASSERT_GT(f.alpha_rt, f.beta_rt);
        ASSERT_GE(f.alpha_rt, c.floor_rt());
    }
    EXPECT_NEAR(power / n, 1.0, 0.02);
    EXPECT_LE(worst, c.cap_rt());
}

TEST(Sampling, SeedsAreReproducibleAndTagsSeparate)
{
    EXPECT_EQ(derive_seed(5, "slow", 3), derive_seed(5, "slow", 3));
    EXPECT_NE(derive_seed(5, "slow", 3), derive_seed(5, "fast", 3));
    EXPECT_NE(derive_seed(5, "slow", 3), derive_seed(5, "slow", 4));
    SystemConfig c;
    Rng a(derive_seed(9, "x")), b(derive_seed(9, "x"));
    const FastState fa = sample_fast_state(a, c), fb = sample_fast_state(b, c);
    EXPECT_EQ(fa.alpha_rt, fb.alpha_rt);
    EXPECT_TRUE(fa.H == fb.H);
}

TEST(Battery, StepExamples)
{
    EXPECT_DOUBLE_EQ(battery_step(40.0, 2.0, 0.95), 40.0);
    EXPECT_DOUBLE_EQ(battery_step(30.0, -2.0, 1.0), 28.0);
    EXPECT_DOUBLE_EQ(battery_step(30.0, -2.0, 0.9), 25.0);
}

TEST(Battery, StepIsAffine)
{
    Rng rng(2);
    for (int k = 0; k < 1000; ++k) {
        const double a = rng.uniform(), C1 = 80 * rng.uniform(), C2 = 80 * rng.uniform();
        const double P1 = 4 * rng.uniform() - 2, P2 = 4 * rng.uniform() - 2, eta = 0.5 + 0.5 * rng.uniform();
        EXPECT_NEAR(battery_step(a * C1 + (1 - a) * C2, a * P1 + (1 - a) * P2, eta),
                    a * battery_step(C1, P1, eta) + (1 - a) * battery_step(C2, P2, eta), 1e-12);
    }
}

TEST(Costs, Examples)
{
    EXPECT_NEAR(cost_lt(10.0, 4.0, 1.2, 1.08), 7.2, 1e-12);
    EXPECT_EQ(cost_lt(5.0, 5.0, 1.2, 1.08), 0.0);
    EXPECT_NEAR(cost_lt(0.0, 5.0, 1.2, 1.0), -5.0, 1e-12);
    EXPECT_EQ(cost_rt(0.0, 2.3, 0.69), 0.0);
    EXPECT_NEAR(cost_rt(3.0, 2.3, 0.69), 6.9, 1e-12);
    EXPECT_NEAR(cost_rt(-2.0, 2.3, 0.69), -1.38, 1e-12);
    EXPECT_NEAR(slot_cost(10.0, 4.0, 3.0, 1.2, 1.08, 2.3, 0.69, 5), 8.34, 1e-12);
    EXPECT_EQ(slot_cost(4.0, 4.0, 0.0, 1.2, 1.08, 2.3, 0.69, 5), 0.0);
}

TEST(Costs, PiecewiseEqualsMaxForm)
{
    Rng rng(13);
    for (int k = 0; k < 1000000; ++k) {
        const double a = 5.0 * rng.uniform() + 1e-3;
        const double b = a * rng.uniform();
        const double P = 200.0 * rng.uniform() - 100.0;
        const double x = cost_rt(P, a, b), y = cost_rt_max(P, a, b);
        ASSERT_LE(std::abs(x - y), std::numeric_limits<double>::epsilon() * std::abs(x)) << P << ' ' << a << ' ' << b;
        const double z = cost_lt(P, 3.0, a, b), w = cost_lt_max(P, 3.0, a, b);
        ASSERT_NEAR(z, w, 4 * std::numeric_limits<double>::epsilon() * (1 + std::abs(z)));
    }
}

TEST(Costs, LongTermCostConvexNondecreasing)
{
    Rng rng(17);
    for (int k = 0; k < 10000; ++k) {
        double e[3] = {100 * rng.uniform(), 100 * rng.uniform(), 100 * rng.uniform()};
        std::sort(e, e + 3);
        const double A = 50 * rng.uniform(), a = 1 + rng.uniform(), b = a * rng.uniform();
        EXPECT_GE(cost_lt(e[1], A, a, b), cost_lt(e[0], A, a, b));
        const double mid = 0.5 * (e[0] + e[2]);
        EXPECT_LE(cost_lt(mid, A, a, b), 0.5 * (cost_lt(e[0], A, a, b) + cost_lt(e[2], A, a, b)) + 1e-12);
    }
}

TEST(Costs, PositiveHomogeneity)
{
    EXPECT_NEAR(cost_rt_max(6.0, 2.3, 0.69), 2 * cost_rt_max(3.0, 2.3, 0.69), 1e-12);
    EXPECT_NEAR(cost_lt_max(20.0, 8.0, 1.2, 1.08), 2 * cost_lt_max(10.0, 4.0, 1.2, 1.08), 1e-12);
}

TEST(Sinr, MatchedFilterAndZero)
{
    CMat H(2, 1);
    H << cplx(0.3, -1.1), cplx(0.7, 0.2);
    const double p = 2.5;
    CMat W = std::sqrt(p) * H / H.norm();
    EXPECT_NEAR(sinr(H, W, 1.0, 0), p * H.squaredNorm(), 1e-12);
    EXPECT_EQ(sinr(H, CMat::Zero(2, 1), 1.0, 0), 0.0);
}

TEST(Sinr, TwoUserExplicitArithmetic)
{
    Rng rng(21);
    CMat H(3, 2), W(3, 2);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 2; ++c) {
            H(r, c) = sample_cscg(rng);
            W(r, c) = sample_cscg(rng);
        }
    // explicit h^H w with written-out real arithmetic
    auto inner = [&](int k, int l) {
        double re = 0, im = 0;
        for (int r = 0; r < 3; ++r) {
            const double hr = H(r, k).real(), hi = H(r, k).imag(), wr = W(r, l).real(), wi = W(r, l).imag();
            re += hr * wr + hi * wi;
            im += hr * wi - hi * wr;
        }
        return re * re + im * im;
    };
    for (int k = 0; k < 2; ++k) {
        const double want = inner(k, k) / (inner(k, 1 - k) + 0.7);
        EXPECT_NEAR(sinr(H, W, 0.7, k), want, 1e-12 * want);
    }
}

TEST(Sinr, PhaseRotationInvariance)
{
    Rng rng(23);
    CMat H(4, 3), W(4, 3);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 3; ++c) {
            H(r, c) = sample_cscg(rng);
            W(r, c) = sample_cscg(rng);
        }
    for (int k = 0; k < 3; ++k) {
        const double base = sinr(H, W, 1.0, k);
        CMat R = W;
        R.col(k) *= std::polar(1.0, 0.731 * (k + 1));
        EXPECT_NEAR(sinr(H, R, 1.0, k), base, 1e-12 * base);
    }
}

TEST(Power, PerBsSelector)
{
    CMat W = CMat::Zero(4, 2);
    W(0, 0) = cplx(1, 1);
    W(3, 1) = cplx(0, 2);
    EXPECT_DOUBLE_EQ(transmit_power(W, 2, 0), 2.0);
    EXPECT_DOUBLE_EQ(transmit_power(W, 2, 1), 4.0);
}
