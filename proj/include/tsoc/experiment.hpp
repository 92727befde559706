#pragma once

// Seeded Monte Carlo harness: matched sample paths per seed, per-slot CSV
// output, per-seed and aggregate summaries, and trace helpers for plotting.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "tsoc/baselines.hpp"
#include "tsoc/controller.hpp"
#include "tsoc/core_model.hpp"
#include "tsoc/gap_analysis.hpp"

namespace tsoc {

enum class RunPolicy { TSOC, ALG1, ALG2, Offline };

inline const char* to_string(RunPolicy p)
{
    switch (p) {
    case RunPolicy::TSOC: return "tsoc";
    case RunPolicy::ALG1: return "alg1";
    case RunPolicy::ALG2: return "alg2";
    case RunPolicy::Offline: return "offline";
    }
    return "?";
}

inline RunPolicy parse_policy(const std::string& s)
{
    if (s == "tsoc") return RunPolicy::TSOC;
    if (s == "alg1") return RunPolicy::ALG1;
    if (s == "alg2") return RunPolicy::ALG2;
    if (s == "offline") return RunPolicy::Offline;
    throw std::invalid_argument("unknown policy '" + s + "' (expected tsoc, alg1, alg2 or offline)");
}

// ---------------------------------------------------------------- formatting

inline std::string fmt_double(double v)
{
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Header in SlotRecord field order; per-BS columns are 1-based.
inline std::string slot_csv_header(int I, int K)
{
    std::ostringstream os;
    os << "t,n";
    for (const char* f : {"E_share", "A", "P", "P_b", "C", "Q", "Phi"})
        for (int i = 1; i <= I; ++i)
            os << ',' << f << '_' << i;
    os << ",alpha_lt,beta_lt,alpha_rt,beta_rt";
    for (int k = 1; k <= K; ++k)
        os << ",sinr_" << k;
    os << ",iterations";
    return os.str();
}

inline std::string slot_csv_row(const SlotRecord& r)
{
    std::string s = std::to_string(r.t) + ',' + std::to_string(r.n);
    for (const auto* v : {&r.E_share, &r.A, &r.P, &r.P_b, &r.C, &r.Q, &r.Phi})
        for (double x : *v)
            s += ',' + fmt_double(x);
    for (double x : {r.alpha_lt, r.beta_lt, r.alpha_rt, r.beta_rt})
        s += ',' + fmt_double(x);
    for (double x : r.sinr)
        s += ',' + fmt_double(x);
    s += ',' + std::to_string(r.iterations);
    return s;
}

inline void write_slot_csv(const std::filesystem::path& file, const std::vector<SlotRecord>& recs, int I, int K)
{
    std::ofstream os(file, std::ios::binary);
    if (!os)
        throw std::runtime_error("cannot open " + file.string() + " for writing");
    os << slot_csv_header(I, K) << '\n';
    for (const SlotRecord& r : recs)
        os << slot_csv_row(r) << '\n';
    if (!os)
        throw std::runtime_error("write failed: " + file.string());
}

// ------------------------------------------------------------------ metrics

/// Prefix means of a per-slot cost series.
inline std::vector<double> running_average(const std::vector<double>& x)
{
    if (x.empty())
        throw std::invalid_argument("running_average: empty series");
    std::vector<double> out(x.size());
    double s = 0.0;
    for (std::size_t t = 0; t < x.size(); ++t) {
        s += x[t];
        out[t] = s / static_cast<double>(t + 1);
    }
    return out;
}

inline std::vector<double> slot_totals(const std::vector<SlotRecord>& recs)
{
    std::vector<double> v;
    v.reserve(recs.size());
    for (const SlotRecord& r : recs)
        v.push_back(r.total_cost());
    return v;
}

struct QueuePricePoint {
    int t = 0;
    double neg_q_over_v = 0.0;
    double alpha_rt_avg = 0.0;
    double beta_rt_avg = 0.0;
};

/// -Q_i(t)/V next to the running averages of the real-time prices.
inline std::vector<QueuePricePoint> queue_price_trace(const std::vector<SlotRecord>& recs, double V, int bs = 0)
{
    std::vector<QueuePricePoint> out;
    out.reserve(recs.size());
    double sa = 0.0, sb = 0.0;
    for (std::size_t t = 0; t < recs.size(); ++t) {
        const SlotRecord& r = recs[t];
        sa += r.alpha_rt;
        sb += r.beta_rt;
        QueuePricePoint p;
        p.t = r.t;
        p.neg_q_over_v = -r.Q.at(static_cast<std::size_t>(bs)) / V;
        p.alpha_rt_avg = sa / static_cast<double>(t + 1);
        p.beta_rt_avg = sb / static_cast<double>(t + 1);
        out.push_back(p);
    }
    return out;
}

struct MeanCI {
    std::size_t n = 0;
    double mean = std::numeric_limits<double>::quiet_NaN();
    double stddev = std::numeric_limits<double>::quiet_NaN();
    double half_width = std::numeric_limits<double>::quiet_NaN();  // two-sided Student-t interval
};

inline MeanCI mean_ci(const std::vector<double>& x, double level = 0.95)
{
    MeanCI m;
    m.n = x.size();
    if (x.empty())
        return m;
    double s = 0.0;
    for (double v : x)
        s += v;
    m.mean = s / static_cast<double>(x.size());
    if (x.size() < 2)
        return m;
    double ss = 0.0;
    for (double v : x)
        ss += (v - m.mean) * (v - m.mean);
    m.stddev = std::sqrt(ss / static_cast<double>(x.size() - 1));
    boost::math::students_t dist(static_cast<double>(x.size() - 1));
    const double q = boost::math::quantile(dist, 0.5 + 0.5 * level);
    m.half_width = q * m.stddev / std::sqrt(static_cast<double>(x.size()));
    return m;
}

inline void write_queue_price_csv(const std::filesystem::path& file, const std::vector<QueuePricePoint>& tr)
{
    std::ofstream os(file, std::ios::binary);
    if (!os)
        throw std::runtime_error("cannot open " + file.string() + " for writing");
    os << "t,neg_q_over_v,alpha_rt_avg,beta_rt_avg\n";
    for (const QueuePricePoint& p : tr)
        os << p.t << ',' << fmt_double(p.neg_q_over_v) << ',' << fmt_double(p.alpha_rt_avg) << ','
           << fmt_double(p.beta_rt_avg) << '\n';
}

// --------------------------------------------------------------- experiment

struct ExperimentSpec {
    std::string name = "run";
    SystemConfig cfg;
    std::vector<RunPolicy> policies{RunPolicy::TSOC};
    int slots = 500;  // NT; must be a multiple of T
    std::vector<std::uint64_t> seeds{1};
    std::optional<std::filesystem::path> out_dir;  // nothing is written when empty
    int threads = 0;                               // 0: hardware concurrency
    bool keep_records = false;                     // keep per-slot records in the summary
};

struct SeedOutcome {
    std::uint64_t seed = 0;
    RunPolicy policy = RunPolicy::TSOC;
    bool ok = false;
    std::string failure;  // solver failure reason when !ok
    double average_cost = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> running;  // running-average cost per slot
    ControllerStats stats;
    std::vector<SlotRecord> records;  // only with keep_records
};

struct PolicySummary {
    RunPolicy policy = RunPolicy::TSOC;
    MeanCI cost;
    std::size_t failures = 0;
    std::vector<double> mean_running;  // across successful seeds
};

struct ExperimentSummary {
    std::string name;
    LyapunovParameters params;
    std::vector<SeedOutcome> outcomes;  // policy-major, then seed order
    std::vector<PolicySummary> policies;

    const SeedOutcome& outcome(RunPolicy p, std::uint64_t seed) const
    {
        for (const SeedOutcome& o : outcomes)
            if (o.policy == p && o.seed == seed)
                return o;
        throw std::out_of_range("no outcome for this policy and seed");
    }
    const PolicySummary& summary(RunPolicy p) const
    {
        for (const PolicySummary& s : policies)
            if (s.policy == p)
                return s;
        throw std::out_of_range("policy not part of the experiment");
    }
    bool any_failure() const
    {
        return std::any_of(outcomes.begin(), outcomes.end(), [](const SeedOutcome& o) { return !o.ok; });
    }
};

/// Checks what validate_config cannot: horizon shape and the offline cap.
inline ValidatedConfig validate_spec(const ExperimentSpec& spec)
{
    ValidatedConfig v = validate_config(spec.cfg);
    if (spec.slots < 0 || spec.slots % spec.cfg.T != 0)
        throw ConfigError(ConfigCondition::Dimensions,
                          "slots (" + std::to_string(spec.slots) + ") must be a nonnegative multiple of T");
    const bool offline = std::find(spec.policies.begin(), spec.policies.end(), RunPolicy::Offline) != spec.policies.end();
    if (offline && spec.slots > spec.cfg.offline_max_slots)
        throw ConfigError(ConfigCondition::Dimensions, "offline horizon of " + std::to_string(spec.slots)
                                                           + " slots exceeds offline_max_slots = "
                                                           + std::to_string(spec.cfg.offline_max_slots));
    return v;
}

inline nlohmann::json resolved_config_json(const ValidatedConfig& vcfg)
{
    const LyapunovParameters p = select_parameters(vcfg);
    nlohmann::json j = config_to_json(*vcfg);
    j["derived"] = {{"Gamma", p.Gamma},
                    {"V", p.V},
                    {"Gamma_min", p.window.Gamma_min},
                    {"Gamma_max", p.window.Gamma_max},
                    {"V_max", p.window.V_max},
                    {"V_feasible", p.window.V_feasible},
                    {"alpha_bar", p.window.alpha_bar},
                    {"beta_under", p.window.beta_under}};
    return j;
}

namespace detail {

inline SeedOutcome run_one(const ValidatedConfig& vcfg, RunPolicy policy, const SamplePath& path, std::uint64_t seed,
                           int intervals)
{
    SeedOutcome o;
    o.seed = seed;
    o.policy = policy;
    try {
        std::vector<SlotRecord> recs;
        if (policy == RunPolicy::Offline) {
            OfflineResult r = solve_offline(vcfg, path, intervals);
            recs = std::move(r.records);
        } else {
            const Policy p = policy == RunPolicy::TSOC ? Policy::TSOC
                                                        : (policy == RunPolicy::ALG1 ? Policy::ALG1 : Policy::ALG2);
            RunResult r = run_policy(vcfg, p, path, seed, intervals);
            o.stats = r.stats;
            recs = std::move(r.records);
        }
        const std::vector<double> tot = slot_totals(recs);
        if (!tot.empty()) {
            o.running = running_average(tot);
            o.average_cost = o.running.back();
        }
        o.ok = true;
        o.records = std::move(recs);
    } catch (const SolverError& e) {
        o.failure = e.what();
    }
    return o;
}

template <class F>
void parallel_for(std::size_t n, int threads, F&& f)
{
    unsigned hw = std::thread::hardware_concurrency();
    std::size_t nt = threads > 0 ? static_cast<std::size_t>(threads) : std::max(1u, hw);
    nt = std::min(nt, n);
    if (nt <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < nt; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++)
                f(i);
        });
    for (auto& th : pool)
        th.join();
}

} // namespace detail

/// Runs every (seed, policy) pair on matched sample paths. Seeds run
/// concurrently; each writes its own CSV, and summaries are written after
/// all seeds finish, so output bytes do not depend on scheduling.
inline ExperimentSummary run_experiment(const ExperimentSpec& spec)
{
    const ValidatedConfig vcfg = validate_spec(spec);
    const SystemConfig& cfg = *vcfg;
    const int N = spec.slots / cfg.T;
    ExperimentSummary sum;
    sum.name = spec.name;
    sum.params = select_parameters(vcfg);

    if (spec.out_dir)
        std::filesystem::create_directories(*spec.out_dir);

    const std::size_t S = spec.seeds.size(), Pn = spec.policies.size();
    std::vector<SeedOutcome> outcomes(S * Pn);
    detail::parallel_for(S, spec.threads, [&](std::size_t s) {
        const std::uint64_t seed = spec.seeds[s];
        const SamplePath path = generate_path(cfg, seed, N);
        for (std::size_t p = 0; p < Pn; ++p) {
            SeedOutcome o = detail::run_one(vcfg, spec.policies[p], path, seed, N);
            if (spec.out_dir && o.ok) {
                const std::string stem = std::string(to_string(o.policy)) + "_seed" + std::to_string(seed);
                write_slot_csv(*spec.out_dir / (stem + ".csv"), o.records, cfg.I, cfg.K);
                if (o.policy == RunPolicy::TSOC)
                    write_queue_price_csv(*spec.out_dir / (stem + "_queue_price.csv"),
                                          queue_price_trace(o.records, sum.params.V));
            }
            if (!spec.keep_records)
                o.records.clear();
            outcomes[p * S + s] = std::move(o);
        }
    });
    sum.outcomes = std::move(outcomes);

    for (std::size_t p = 0; p < Pn; ++p) {
        PolicySummary ps;
        ps.policy = spec.policies[p];
        std::vector<double> costs;
        std::size_t ok = 0;
        for (std::size_t s = 0; s < S; ++s) {
            const SeedOutcome& o = sum.outcomes[p * S + s];
            if (!o.ok) {
                ++ps.failures;
                continue;
            }
            costs.push_back(o.average_cost);
            if (ps.mean_running.empty())
                ps.mean_running.assign(o.running.size(), 0.0);
            for (std::size_t t = 0; t < o.running.size(); ++t)
                ps.mean_running[t] += o.running[t];
            ++ok;
        }
        for (double& v : ps.mean_running)
            v /= static_cast<double>(ok);
        ps.cost = mean_ci(costs);
        sum.policies.push_back(std::move(ps));
    }

    if (spec.out_dir) {
        const auto& dir = *spec.out_dir;
        {
            std::ofstream os(dir / "config.json", std::ios::binary);
            os << resolved_config_json(vcfg).dump(2) << '\n';
        }
        {
            std::ofstream os(dir / "seeds.csv", std::ios::binary);
            os << "policy,seed,status,average_cost,soc_violations,threshold_violations,forced_slots,reason\n";
            for (const SeedOutcome& o : sum.outcomes) {
                std::string reason = o.failure;
                std::replace(reason.begin(), reason.end(), ',', ';');
                std::replace(reason.begin(), reason.end(), '\n', ' ');
                os << to_string(o.policy) << ',' << o.seed << ',' << (o.ok ? "ok" : "failed") << ','
                   << fmt_double(o.average_cost) << ',' << o.stats.soc_violations << ',' << o.stats.threshold_violations
                   << ',' << o.stats.forced_slots << ',' << reason << '\n';
            }
        }
        {
            std::ofstream os(dir / "summary.csv", std::ios::binary);
            os << "policy,seeds,failures,mean_cost,stddev,ci95_half_width\n";
            for (const PolicySummary& ps : sum.policies)
                os << to_string(ps.policy) << ',' << ps.cost.n << ',' << ps.failures << ',' << fmt_double(ps.cost.mean)
                   << ',' << fmt_double(ps.cost.stddev) << ',' << fmt_double(ps.cost.half_width) << '\n';
        }
        {
            // seed-averaged running-average cost, one column per policy
            std::ofstream os(dir / "running_average.csv", std::ios::binary);
            os << 't';
            for (const PolicySummary& ps : sum.policies)
                os << ',' << to_string(ps.policy);
            os << '\n';
            for (int t = 0; t < spec.slots; ++t) {
                os << t;
                for (const PolicySummary& ps : sum.policies)
                    os << ','
                       << fmt_double(static_cast<std::size_t>(t) < ps.mean_running.size()
                                         ? ps.mean_running[static_cast<std::size_t>(t)]
                                         : std::numeric_limits<double>::quiet_NaN());
                os << '\n';
            }
        }
    }
    return sum;
}

inline void write_gap_curve_csv(const std::filesystem::path& file, const std::vector<GapCurveRow>& rows)
{
    std::ofstream os(file, std::ios::binary);
    if (!os)
        throw std::runtime_error("cannot open " + file.string() + " for writing");
    os << "eta,C_max,V_max,G_min,V,Gamma,status,reason\n";
    for (const GapCurveRow& r : rows) {
        std::string reason = r.reason;
        std::replace(reason.begin(), reason.end(), ',', ';');
        os << fmt_double(r.eta) << ',' << fmt_double(r.C_max) << ',' << fmt_double(r.V_max) << ','
           << fmt_double(r.G_min) << ',' << fmt_double(r.V) << ',' << fmt_double(r.Gamma) << ','
           << (r.ok ? "ok" : "skipped") << ',' << reason << '\n';
    }
}

// ------------------------------------------------------------------ presets

/// Named scenarios. Each expands into one or more experiment specs that
/// differ only in the swept parameter; out_dir is left for the caller.
struct Scenario {
    std::string name;
    std::string description;
    std::vector<ExperimentSpec> runs;
};

/// Table-I values plus the RES level, ALG1 reading and planner budget used
/// by the simulation scenarios.
inline SystemConfig scenario_base()
{
    SystemConfig c;
    c.res_mean = 25.0;
    c.planner_iterations = 500;
    c.alg1_res_supply = true;
    return c;
}

inline std::vector<std::string> scenario_names()
{
    return {"cost-comparison", "cost-vs-capacity", "soc-trace", "queue-price", "battery-actions", "energy-plan"};
}

inline Scenario make_scenario(const std::string& name, const std::vector<std::uint64_t>& seeds)
{
    Scenario sc;
    sc.name = name;
    auto spec = [&](const std::string& run, const SystemConfig& c, std::vector<RunPolicy> pol, int slots) {
        ExperimentSpec s;
        s.name = run;
        s.cfg = c;
        s.policies = std::move(pol);
        s.slots = slots;
        s.seeds = seeds;
        return s;
    };
    auto eta_tag = [](double eta) {
        char b[32];
        std::snprintf(b, sizeof b, "eta%.2f", eta);
        return std::string(b);
    };
    if (name == "cost-comparison") {
        sc.description = "running-average cost of TS-OC, ALG1, ALG2 and the offline optimum over 500 slots";
        SystemConfig c = scenario_base();
        c.offline_max_slots = 500;
        sc.runs.push_back(spec(name, c, {RunPolicy::TSOC, RunPolicy::ALG1, RunPolicy::ALG2, RunPolicy::Offline}, 500));
    } else if (name == "cost-vs-capacity") {
        sc.description = "TS-OC average cost over C_max for eta in {0.9, 0.95, 1}";
        for (double eta : {0.9, 0.95, 1.0})
            for (int cmax = 40; cmax <= 120; cmax += 20) {
                SystemConfig c = scenario_base();
                c.eta = eta;
                c.C_max = cmax;
                sc.runs.push_back(spec(eta_tag(eta) + "_cmax" + std::to_string(cmax), c, {RunPolicy::TSOC}, 500));
            }
    } else if (name == "soc-trace" || name == "queue-price") {
        sc.description = name == "soc-trace" ? "SoC trajectory C_1(t) for eta in {0.9, 0.95, 1}"
                                             : "-Q_1(t)/V against running-average real-time prices";
        for (double eta : {0.9, 0.95, 1.0}) {
            SystemConfig c = scenario_base();
            c.eta = eta;
            sc.runs.push_back(spec(eta_tag(eta), c, {RunPolicy::TSOC}, 500));
        }
    } else if (name == "battery-actions") {
        sc.description = "interval-start SoC and (dis)charging with P_b in [-5, 5]";
        SystemConfig c = scenario_base();
        c.P_b_min = -5.0;
        c.P_b_max = 5.0;
        sc.runs.push_back(spec(name, c, {RunPolicy::TSOC}, 50));
    } else if (name == "energy-plan") {
        sc.description = "planned ahead-of-time energy E_1[n] next to alpha_lt over 100 slots";
        SystemConfig c = scenario_base();
        sc.runs.push_back(spec(name, c, {RunPolicy::TSOC}, 100));
    } else {
        throw std::invalid_argument("unknown scenario '" + name + "'");
    }
    return sc;
}

} // namespace tsoc
