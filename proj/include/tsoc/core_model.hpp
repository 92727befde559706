#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tsoc/random.hpp"

namespace tsoc {

using cplx = std::complex<double>;
using Vec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;

/// All physical, market and algorithm constants of one simulation.
///
/// Energies are in kWh; one slot has unit duration so kWh/slot and kW are
/// used interchangeably. Beamformer powers share that unit.
struct SystemConfig {
    int I = 2;  // base stations
    int K = 3;  // users
    int M = 2;  // antennas per BS
    int T = 5;  // slots per coarse interval

    double P_c = 10.0;
    double P_g_max = 50.0;
    double P_b_min = -2.0;
    double P_b_max = 2.0;
    double C_min = 0.0;
    double C_max = 80.0;
    double C0 = 0.0;
    double eta = 0.95;

    std::vector<double> gamma;   // per-user SINR target; empty means all 1
    std::vector<double> sigma2;  // per-user noise power; empty means all 1

    double price_lt_mean = 1.15;
    double price_rt_mean = 2.3;
    double sell_ratio_lt = 0.9;
    double sell_ratio_rt = 0.3;
    double price_scale_ratio = 0.25;  // std of the underlying normal / mean
    std::optional<double> price_cap_rt;    // default 2 * price_rt_mean
    std::optional<double> price_floor_rt;  // default 0.1 * price_rt_mean
    double res_mean = 40.0;   // per interval, per BS
    double res_scale = 10.0;

    std::optional<double> V;      // absent: V = largest feasible value
    std::optional<double> Gamma;  // absent: window midpoint

    std::uint64_t rng_seed = 1;

    // planner
    int planner_iterations = 2000;
    double planner_mu0 = 1.0;
    int history_intervals = 20;
    int cold_start_samples = 20;

    // controller / baselines
    bool live_queue = false;
    bool alg1_battery = true;
    bool alg1_res_supply = false;  // ALG1 consumes its RES locally (E = A) instead of E = 0
    int offline_max_slots = 100;

    double cap_rt() const { return price_cap_rt.value_or(2.0 * price_rt_mean); }
    double floor_rt() const { return price_floor_rt.value_or(0.1 * price_rt_mean); }
    /// Largest possible real-time purchase price.
    double alpha_bar() const { return cap_rt(); }
    /// Smallest possible real-time selling price.
    double beta_under() const { return sell_ratio_rt * floor_rt(); }
    bool has_battery() const { return P_b_min != 0.0 || P_b_max != 0.0; }
    /// Most ahead-of-time energy a BS can take delivery of in one interval.
    double E_max() const { return T * (P_g_max + P_b_max); }
    int antennas() const { return M * I; }
    double gamma_k(int k) const { return gamma.empty() ? 1.0 : gamma[static_cast<std::size_t>(k)]; }
    double sigma2_k(int k) const { return sigma2.empty() ? 1.0 : sigma2[static_cast<std::size_t>(k)]; }
};

/// (1 - eta^tau) / (1 - eta), with the limit tau at eta = 1.
inline double geometric_sum(double eta, int tau)
{
    if (eta == 1.0)
        return static_cast<double>(tau);
    return (1.0 - std::pow(eta, tau)) / (1.0 - eta);
}

enum class ConfigCondition {
    Dimensions,
    PowerCap,
    BatteryBounds,
    SocBounds,
    Efficiency,
    ConditionA1,
    ConditionA2,
    Prices,
    SellRatio,
    PriceCap,
    Res,
    UserVectors,
    Lyapunov,
    Planner,
};

class ConfigError : public std::runtime_error {
public:
    ConfigError(ConfigCondition c, const std::string& what) : std::runtime_error(what), condition_(c) {}
    ConfigCondition condition() const noexcept { return condition_; }

private:
    ConfigCondition condition_;
};

/// A SystemConfig that passed validate_config.
class ValidatedConfig {
public:
    const SystemConfig& operator*() const noexcept { return cfg_; }
    const SystemConfig* operator->() const noexcept { return &cfg_; }
    const SystemConfig& get() const noexcept { return cfg_; }

private:
    explicit ValidatedConfig(SystemConfig c) : cfg_(std::move(c)) {}
    friend ValidatedConfig validate_config(SystemConfig cfg);
    SystemConfig cfg_;
};

inline ValidatedConfig validate_config(SystemConfig cfg)
{
    auto fail = [](ConfigCondition c, const std::string& msg) { throw ConfigError(c, msg); };

    if (cfg.I < 1 || cfg.K < 1 || cfg.M < 1 || cfg.T < 1)
        fail(ConfigCondition::Dimensions, "I, K, M, T must all be >= 1");
    if (!(cfg.P_c >= 0.0) || !(cfg.P_g_max > cfg.P_c))
        fail(ConfigCondition::PowerCap, "need 0 <= P_c < P_g_max");
    if (cfg.has_battery() && !(cfg.P_b_min < 0.0 && 0.0 < cfg.P_b_max))
        fail(ConfigCondition::BatteryBounds, "need P_b_min < 0 < P_b_max (or both zero for no battery)");
    if (!(cfg.C_min <= cfg.C0 && cfg.C0 <= cfg.C_max))
        fail(ConfigCondition::SocBounds, "need C_min <= C0 <= C_max");
    if (!(cfg.C_min >= 0.0))
        fail(ConfigCondition::SocBounds, "need C_min >= 0");
    if (!(cfg.eta > 0.0 && cfg.eta <= 1.0))
        fail(ConfigCondition::Efficiency, "need eta in (0, 1]");
    if (!(cfg.P_b_max >= (1.0 - cfg.eta) * cfg.C_min))
        fail(ConfigCondition::ConditionA1, "condition A1 violated: P_b_max >= (1 - eta) * C_min");
    {
        const double need = geometric_sum(cfg.eta, cfg.T) * (cfg.P_b_max - cfg.P_b_min);
        if (!(cfg.C_max - cfg.C_min >= need))
            fail(ConfigCondition::ConditionA2,
                 "condition A2 violated: C_max - C_min >= (1 - eta^T)/(1 - eta) * (P_b_max - P_b_min) = "
                     + std::to_string(need));
    }
    if (!(cfg.price_lt_mean > 0.0 && cfg.price_rt_mean > 0.0 && cfg.price_scale_ratio >= 0.0))
        fail(ConfigCondition::Prices, "price means must be positive and the scale ratio non-negative");
    if (!(cfg.sell_ratio_lt > 0.0 && cfg.sell_ratio_lt < 1.0 && cfg.sell_ratio_rt > 0.0 && cfg.sell_ratio_rt < 1.0))
        fail(ConfigCondition::SellRatio, "selling prices must lie strictly below purchase prices: sell ratios in (0, 1)");
    if (!(cfg.floor_rt() > 0.0 && cfg.cap_rt() > cfg.floor_rt()))
        fail(ConfigCondition::PriceCap, "need 0 < price_floor_rt < price_cap_rt");
    if (!(cfg.res_mean >= 0.0 && cfg.res_scale >= 0.0))
        fail(ConfigCondition::Res, "res_mean and res_scale must be non-negative");
    for (const auto* v : {&cfg.gamma, &cfg.sigma2}) {
        if (!v->empty() && v->size() != static_cast<std::size_t>(cfg.K))
            fail(ConfigCondition::UserVectors, "gamma and sigma2 need one entry per user");
        for (double x : *v)
            if (!(x > 0.0))
                fail(ConfigCondition::UserVectors, "gamma and sigma2 entries must be positive");
    }
    if (cfg.V && !(*cfg.V > 0.0))
        fail(ConfigCondition::Lyapunov, "V must be positive");
    if (cfg.planner_iterations < 2 || !(cfg.planner_mu0 > 0.0) || cfg.history_intervals < 1
        || cfg.cold_start_samples < 1)
        fail(ConfigCondition::Planner, "planner settings out of range");
    if (cfg.offline_max_slots < 1)
        fail(ConfigCondition::Planner, "offline_max_slots must be >= 1");
    return ValidatedConfig(std::move(cfg));
}

// ---------------------------------------------------------------------------
// JSON schema: one key per SystemConfig field, same names.

namespace detail {
template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out)
{
    if (auto it = j.find(key); it != j.end())
        out = it->get<T>();
}

inline void read_user_vector(const nlohmann::json& j, const char* key, std::vector<double>& out)
{
    auto it = j.find(key);
    if (it == j.end())
        return;
    if (it->is_number())
        out = {it->get<double>()};
    else
        out = it->get<std::vector<double>>();
}
} // namespace detail

inline SystemConfig config_from_json(const nlohmann::json& j)
{
    static const char* const known[] = {
        "I", "K", "M", "T", "P_c", "P_g_max", "P_b_min", "P_b_max", "C_min", "C_max", "C0", "eta", "gamma",
        "sigma2", "price_lt_mean", "price_rt_mean", "sell_ratio_lt", "sell_ratio_rt", "price_scale_ratio",
        "price_cap_rt", "price_floor_rt", "res_mean", "res_scale", "V", "Gamma", "rng_seed",
        "planner_iterations", "planner_mu0", "history_intervals", "cold_start_samples", "live_queue",
        "alg1_battery", "alg1_res_supply", "offline_max_slots"};
    if (!j.is_object())
        throw ConfigError(ConfigCondition::Dimensions, "config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; })
            == std::end(known))
            throw ConfigError(ConfigCondition::Dimensions, "unknown config key '" + key + "'");
    }

    SystemConfig c;
    try {
        using detail::read_opt;
        read_opt(j, "I", c.I);
        read_opt(j, "K", c.K);
        read_opt(j, "M", c.M);
        read_opt(j, "T", c.T);
        read_opt(j, "P_c", c.P_c);
        read_opt(j, "P_g_max", c.P_g_max);
        read_opt(j, "P_b_min", c.P_b_min);
        read_opt(j, "P_b_max", c.P_b_max);
        read_opt(j, "C_min", c.C_min);
        read_opt(j, "C_max", c.C_max);
        read_opt(j, "C0", c.C0);
        read_opt(j, "eta", c.eta);
        read_opt(j, "price_lt_mean", c.price_lt_mean);
        read_opt(j, "price_rt_mean", c.price_rt_mean);
        read_opt(j, "sell_ratio_lt", c.sell_ratio_lt);
        read_opt(j, "sell_ratio_rt", c.sell_ratio_rt);
        read_opt(j, "price_scale_ratio", c.price_scale_ratio);
        read_opt(j, "res_mean", c.res_mean);
        read_opt(j, "res_scale", c.res_scale);
        read_opt(j, "rng_seed", c.rng_seed);
        read_opt(j, "planner_iterations", c.planner_iterations);
        read_opt(j, "planner_mu0", c.planner_mu0);
        read_opt(j, "history_intervals", c.history_intervals);
        read_opt(j, "cold_start_samples", c.cold_start_samples);
        read_opt(j, "live_queue", c.live_queue);
        read_opt(j, "alg1_battery", c.alg1_battery);
        read_opt(j, "alg1_res_supply", c.alg1_res_supply);
        read_opt(j, "offline_max_slots", c.offline_max_slots);
        detail::read_user_vector(j, "gamma", c.gamma);
        detail::read_user_vector(j, "sigma2", c.sigma2);
        for (auto [key, dst] : {std::pair{"price_cap_rt", &c.price_cap_rt}, {"price_floor_rt", &c.price_floor_rt},
                                {"V", &c.V}, {"Gamma", &c.Gamma}}) {
            auto it = j.find(key);
            if (it != j.end() && !it->is_null() && !(it->is_string() && it->get<std::string>() == "auto"))
                *dst = it->get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(ConfigCondition::Dimensions, std::string("bad config value: ") + e.what());
    }
    // a scalar gamma/sigma2 applies to every user
    if (c.gamma.size() == 1 && c.K > 1)
        c.gamma.assign(static_cast<std::size_t>(c.K), c.gamma[0]);
    if (c.sigma2.size() == 1 && c.K > 1)
        c.sigma2.assign(static_cast<std::size_t>(c.K), c.sigma2[0]);
    return c;
}

inline nlohmann::json config_to_json(const SystemConfig& c)
{
    nlohmann::json j;
    j["I"] = c.I;
    j["K"] = c.K;
    j["M"] = c.M;
    j["T"] = c.T;
    j["P_c"] = c.P_c;
    j["P_g_max"] = c.P_g_max;
    j["P_b_min"] = c.P_b_min;
    j["P_b_max"] = c.P_b_max;
    j["C_min"] = c.C_min;
    j["C_max"] = c.C_max;
    j["C0"] = c.C0;
    j["eta"] = c.eta;
    std::vector<double> g(static_cast<std::size_t>(c.K)), s(static_cast<std::size_t>(c.K));
    for (int k = 0; k < c.K; ++k) {
        g[static_cast<std::size_t>(k)] = c.gamma_k(k);
        s[static_cast<std::size_t>(k)] = c.sigma2_k(k);
    }
    j["gamma"] = g;
    j["sigma2"] = s;
    j["price_lt_mean"] = c.price_lt_mean;
    j["price_rt_mean"] = c.price_rt_mean;
    j["sell_ratio_lt"] = c.sell_ratio_lt;
    j["sell_ratio_rt"] = c.sell_ratio_rt;
    j["price_scale_ratio"] = c.price_scale_ratio;
    j["price_cap_rt"] = c.cap_rt();
    j["price_floor_rt"] = c.floor_rt();
    j["res_mean"] = c.res_mean;
    j["res_scale"] = c.res_scale;
    j["V"] = c.V ? nlohmann::json(*c.V) : nlohmann::json("auto");
    j["Gamma"] = c.Gamma ? nlohmann::json(*c.Gamma) : nlohmann::json("auto");
    j["rng_seed"] = c.rng_seed;
    j["planner_iterations"] = c.planner_iterations;
    j["planner_mu0"] = c.planner_mu0;
    j["history_intervals"] = c.history_intervals;
    j["cold_start_samples"] = c.cold_start_samples;
    j["live_queue"] = c.live_queue;
    j["alg1_battery"] = c.alg1_battery;
    j["alg1_res_supply"] = c.alg1_res_supply;
    j["offline_max_slots"] = c.offline_max_slots;
    return j;
}

// ---------------------------------------------------------------------------
// Random state of the two timescales.

struct SlowState {
    double alpha_lt = 0.0;
    double beta_lt = 0.0;
    std::vector<double> A;  // RES per BS over the interval
};

struct FastState {
    double alpha_rt = 0.0;
    double beta_rt = 0.0;
    CMat H;  // (M*I) x K, column k is h_k
};

/// Draw order: alpha_lt, then A_0 .. A_{I-1}.
inline SlowState sample_slow_state(Rng& rng, const SystemConfig& cfg)
{
    SlowState s;
    const double m = cfg.price_lt_mean;
    s.alpha_lt = rng.folded_normal(m, cfg.price_scale_ratio * m);
    s.beta_lt = cfg.sell_ratio_lt * s.alpha_lt;
    s.A.resize(static_cast<std::size_t>(cfg.I));
    for (auto& a : s.A)
        a = cfg.res_scale == 0.0 ? cfg.res_mean : rng.folded_normal(cfg.res_mean, cfg.res_scale);
    return s;
}

/// Circularly-symmetric complex Gaussian with unit variance.
inline cplx sample_cscg(Rng& rng)
{
    static const double s = std::sqrt(0.5);
    const double re = s * rng.normal();
    const double im = s * rng.normal();
    return {re, im};
}

/// Draw order: alpha_rt, then channel entries column by column (re before im).
inline FastState sample_fast_state(Rng& rng, const SystemConfig& cfg)
{
    FastState f;
    const double m = cfg.price_rt_mean;
    f.alpha_rt = std::clamp(rng.folded_normal(m, cfg.price_scale_ratio * m), cfg.floor_rt(), cfg.cap_rt());
    f.beta_rt = cfg.sell_ratio_rt * f.alpha_rt;
    f.H.resize(cfg.antennas(), cfg.K);
    for (int k = 0; k < cfg.K; ++k)
        for (int r = 0; r < cfg.antennas(); ++r)
            f.H(r, k) = sample_cscg(rng);
    return f;
}

// ---------------------------------------------------------------------------
// Closed-form physics and costs.

inline double battery_step(double C, double P_b, double eta) { return eta * C + P_b; }

inline double pos(double x) { return x > 0.0 ? x : 0.0; }

/// Ahead-of-time transaction cost: alpha*[E-A]^+ - beta*[A-E]^+.
inline double cost_lt(double E, double A, double alpha_lt, double beta_lt)
{
    return alpha_lt * pos(E - A) - beta_lt * pos(A - E);
}

inline double cost_lt_max(double E, double A, double alpha_lt, double beta_lt)
{
    return std::max(alpha_lt * (E - A), beta_lt * (E - A));
}

/// Real-time transaction cost: alpha*[P]^+ - beta*[-P]^+.
inline double cost_rt(double P, double alpha_rt, double beta_rt)
{
    return alpha_rt * pos(P) - beta_rt * pos(-P);
}

inline double cost_rt_max(double P, double alpha_rt, double beta_rt)
{
    return std::max(alpha_rt * P, beta_rt * P);
}

/// Per-slot cost of one BS: interval cost spread evenly over T slots plus the real-time trade.
inline double slot_cost(double E_interval, double A, double P, double alpha_lt, double beta_lt, double alpha_rt,
                        double beta_rt, int T)
{
    return cost_lt(E_interval, A, alpha_lt, beta_lt) / static_cast<double>(T) + cost_rt(P, alpha_rt, beta_rt);
}

inline double slot_cost(double E_interval, double P, const SlowState& slow, const FastState& fast, double A, int T)
{
    return slot_cost(E_interval, A, P, slow.alpha_lt, slow.beta_lt, fast.alpha_rt, fast.beta_rt, T);
}

/// SINR of user k; W holds w_k in column k.
inline double sinr(const CMat& H, const CMat& W, double sigma2_k, int k)
{
    const auto h = H.col(k);
    double interference = 0.0;
    for (int l = 0; l < W.cols(); ++l)
        if (l != k)
            interference += std::norm(h.dot(W.col(l)));  // dot() conjugates h
    return std::norm(h.dot(W.col(k))) / (interference + sigma2_k);
}

/// Transmit power sum_k w_k^H B_i w_k of BS i.
inline double transmit_power(const CMat& W, int M, int i)
{
    return W.middleRows(static_cast<Eigen::Index>(i) * M, M).squaredNorm();
}

} // namespace tsoc
