// Command-line front end: simulation runs, gap curves, config validation and
// quick self-checks against closed-form oracles.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tsoc/baselines.hpp"
#include "tsoc/controller.hpp"
#include "tsoc/core_model.hpp"
#include "tsoc/experiment.hpp"
#include "tsoc/gap_analysis.hpp"
#include "tsoc/planner.hpp"
#include "tsoc/qos_socp.hpp"

namespace fs = std::filesystem;
using namespace tsoc;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_check_failed = 1;
constexpr int exit_config = 2;
constexpr int exit_solver = 3;

struct ConfigLoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

SystemConfig load_config(const std::string& path, const SystemConfig& base)
{
    if (path.empty())
        return base;
    std::ifstream is(path);
    if (!is)
        throw ConfigLoadError("cannot read config file '" + path + "'");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigLoadError("malformed JSON in '" + path + "': " + e.what());
    }
    // keys in the file override the base; absent keys keep base values
    nlohmann::json merged = config_to_json(base);
    for (const auto& [k, v] : j.items())
        merged[k] = v;
    return config_from_json(merged);
}

/// Accepts "N" or "N..M" (inclusive).
std::vector<std::uint64_t> parse_seed_range(const std::string& s)
{
    std::vector<std::uint64_t> out;
    const auto dots = s.find("..");
    try {
        if (dots == std::string::npos) {
            out.push_back(std::stoull(s));
            return out;
        }
        const std::uint64_t a = std::stoull(s.substr(0, dots)), b = std::stoull(s.substr(dots + 2));
        for (std::uint64_t k = a; k <= b; ++k)
            out.push_back(k);
    } catch (const std::logic_error&) {
        throw ConfigLoadError("bad seed range '" + s + "' (expected N or N..M)");
    }
    return out;
}

std::vector<double> parse_list(const std::string& s)
{
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const auto comma = s.find(',', pos);
        const std::string tok = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
            out.push_back(std::stod(tok));
        } catch (const std::logic_error&) {
            throw ConfigLoadError("bad number '" + tok + "' in list '" + s + "'");
        }
        if (comma == std::string::npos)
            break;
        pos = comma + 1;
    }
    return out;
}

void print_summary(const ExperimentSummary& sum)
{
    std::printf("%s: Gamma = %.6g, V = %.6g\n", sum.name.c_str(), sum.params.Gamma, sum.params.V);
    for (const PolicySummary& ps : sum.policies) {
        std::printf("  %-8s seeds %zu  mean %.6g  ci95 +-%.3g  failures %zu\n", to_string(ps.policy), ps.cost.n,
                    ps.cost.mean, ps.cost.half_width, ps.failures);
    }
    for (const SeedOutcome& o : sum.outcomes)
        if (!o.ok)
            std::fprintf(stderr, "  %s seed %llu failed: %s\n", to_string(o.policy),
                         static_cast<unsigned long long>(o.seed), o.failure.c_str());
}

// ------------------------------------------------------------------- oracles

struct CheckLine {
    std::string name;
    bool pass;
    std::string detail;
};

CheckLine oracle_single_user(std::uint64_t seed)
{
    SystemConfig c;
    c.I = 1;
    c.K = 1;
    c.M = 2;
    c.gamma = {2.0};
    c.sigma2 = {0.5};
    const ValidatedConfig v = validate_config(c);
    Rng rng(derive_seed(seed, "oracle-single-user"));
    double worst = 0.0;
    for (int s = 0; s < 100; ++s) {
        FastState xi = sample_fast_state(rng, *v);
        const RealtimeDecision d = solve_realtime(build_realtime_problem(xi, {0.0}, {0.0}, 1.0, *v, false));
        const double want = c.gamma[0] * c.sigma2[0] / xi.H.col(0).squaredNorm();
        worst = std::max(worst, std::abs(d.tx_power[0] - want) / want);
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "max relative error %.3g over 100 channels", worst);
    return {"single-user power = gamma sigma^2 / |h|^2", worst <= 1e-6, buf};
}

CheckLine oracle_gap_closed_form()
{
    SystemConfig c;
    c.eta = 1.0;
    const double M = gap_constants(-40.0, 1.0, c).M;
    const double want = c.I * c.T * std::max(c.P_b_min * c.P_b_min, c.P_b_max * c.P_b_max) / 2.0;
    char buf[96];
    std::snprintf(buf, sizeof buf, "M = %.17g, closed form %.17g", M, want);
    return {"gap constant at eta = 1", M == want, buf};
}

CheckLine oracle_gap_continuity()
{
    SystemConfig a, b;
    a.eta = 1.0;
    b.eta = 1.0 - 1e-8;
    const double Ma = gap_constants(-40.0, 1.0, a).M, Mb = gap_constants(-40.0, 1.0, b).M;
    const double rel = std::abs(Ma - Mb) / Ma;
    char buf[96];
    std::snprintf(buf, sizeof buf, "relative difference %.3g", rel);
    return {"gap constant continuity at eta -> 1", rel <= 1e-4, buf};
}

CheckLine oracle_planner(std::uint64_t seed)
{
    SystemConfig c;
    c.I = 1;
    c.K = 1;
    c.M = 2;
    const ValidatedConfig v = validate_config(c);
    Rng rng(derive_seed(seed, "oracle-planner"));
    std::vector<SupportPoint> support;
    HistoryBuffer hist(4);
    for (int s = 0; s < 4; ++s) {
        FastState xi = sample_fast_state(rng, *v);
        hist.push(xi);
        support.push_back({xi, 0.25});
    }
    SlowState slow = sample_slow_state(rng, *v);
    const LyapunovParameters p = select_parameters(v);
    PlanContext ctx{&*v, {c.C0 + p.Gamma}, p.V, true, {}};
    const ExactPlan ex = plan_exact_finite_support(support, slow, ctx);
    Rng prng(derive_seed(seed, "oracle-planner-run"));
    const PlanDecision pd = plan(hist, slow, ctx, {c.planner_mu0, 2000}, prng);
    const double F = finite_support_objective(pd.E, support, slow, ctx);
    const double rel = (F - ex.objective) / std::max(1.0, std::abs(ex.objective));
    char buf[128];
    std::snprintf(buf, sizeof buf, "subgradient F = %.6g, grid oracle F = %.6g, excess %.3g", F, ex.objective, rel);
    return {"planner vs finite-support grid oracle", rel <= 0.02, buf};
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Two-scale energy planning and beamforming simulator"};
    app.require_subcommand(1);

    std::string config_path, out_dir, seeds_arg, scenario;
    std::vector<std::string> policies;
    std::uint64_t seed = 1;
    int slots = -1, threads = 0;

    auto* run = app.add_subcommand("run", "simulate one or more policies on matched sample paths");
    run->add_option("--config", config_path, "JSON config (keys mirror SystemConfig)");
    run->add_option("--scenario", scenario, "named scenario preset")
        ->check(CLI::IsMember(scenario_names()));
    run->add_option("--seed", seed, "single seed");
    run->add_option("--seeds", seeds_arg, "seed range N..M (overrides --seed)");
    run->add_option("--out", out_dir, "output directory");
    run->add_option("--policy", policies, "tsoc, alg1, alg2, offline (repeatable)")->delimiter(',');
    run->add_option("--slots", slots, "horizon NT (multiple of T)");
    run->add_option("--threads", threads, "worker threads (0: all cores)");

    std::string etas = "0.9,0.95,1", cmax_range = "20:200:5";
    auto* gap = app.add_subcommand("gap-curve", "minimum optimality gap versus battery capacity");
    gap->add_option("--config", config_path, "JSON config");
    gap->add_option("--eta", etas, "comma-separated efficiencies");
    gap->add_option("--cmax", cmax_range, "C_max range lo:hi:step");
    gap->add_option("--out", out_dir, "output directory");

    auto* val = app.add_subcommand("validate-config", "check a config and print the derived parameters");
    val->add_option("--config", config_path, "JSON config")->required();

    auto* orc = app.add_subcommand("oracle", "run closed-form and grid-search self-checks");
    orc->add_option("--seed", seed, "seed for the random instances");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*val) {
            const ValidatedConfig v = validate_config(load_config(config_path, SystemConfig{}));
            std::cout << resolved_config_json(v).dump(2) << '\n';
            return exit_ok;
        }

        if (*gap) {
            const SystemConfig base = load_config(config_path, SystemConfig{});
            const std::vector<double> r = [&] {
                std::vector<double> p;
                std::string s = cmax_range;
                std::replace(s.begin(), s.end(), ':', ',');
                p = parse_list(s);
                if (p.size() != 3 || !(p[2] > 0.0) || p[1] < p[0])
                    throw ConfigLoadError("--cmax expects lo:hi:step with step > 0");
                return p;
            }();
            std::vector<double> cm;
            for (int k = 0; r[0] + k * r[2] <= r[1] + 1e-9; ++k)
                cm.push_back(r[0] + k * r[2]);
            const auto rows = gap_vs_capacity_curve(base, cm, parse_list(etas));
            if (!out_dir.empty()) {
                fs::create_directories(out_dir);
                write_gap_curve_csv(fs::path(out_dir) / "gap_curve.csv", rows);
            }
            for (double eta : parse_list(etas)) {
                const CurveMinimizer m = curve_minimizer(rows, eta);
                std::printf("eta %.4g: min gap %.6g for C_max in [%.6g, %.6g] (centre %.6g)\n", eta, m.G_min, m.C_lo,
                            m.C_hi, m.C_mid);
            }
            for (const auto& row : rows)
                if (!row.ok)
                    std::fprintf(stderr, "skipped eta %.4g C_max %.6g: %s\n", row.eta, row.C_max, row.reason.c_str());
            return exit_ok;
        }

        if (*orc) {
            std::vector<CheckLine> lines{oracle_single_user(seed), oracle_gap_closed_form(), oracle_gap_continuity(),
                                         oracle_planner(seed)};
            bool all = true;
            for (const auto& l : lines) {
                std::printf("[%s] %s: %s\n", l.pass ? "PASS" : "FAIL", l.name.c_str(), l.detail.c_str());
                all = all && l.pass;
            }
            return all ? exit_ok : exit_check_failed;
        }

        // run
        const std::vector<std::uint64_t> seeds = seeds_arg.empty() ? std::vector<std::uint64_t>{seed}
                                                                   : parse_seed_range(seeds_arg);
        std::vector<ExperimentSpec> specs;
        if (!scenario.empty()) {
            Scenario sc = make_scenario(scenario, seeds);
            std::printf("scenario %s: %s\n", sc.name.c_str(), sc.description.c_str());
            specs = std::move(sc.runs);
        } else {
            ExperimentSpec s;
            s.name = "run";
            s.seeds = seeds;
            specs.push_back(std::move(s));
        }
        for (ExperimentSpec& s : specs) {
            if (!config_path.empty())
                s.cfg = load_config(config_path, s.cfg);
            if (!policies.empty()) {
                s.policies.clear();
                for (const auto& p : policies)
                    s.policies.push_back(parse_policy(p));
            }
            if (slots >= 0)
                s.slots = slots;
            s.threads = threads;
            if (!out_dir.empty())
                s.out_dir = specs.size() == 1 ? fs::path(out_dir) : fs::path(out_dir) / s.name;
        }
        bool failed = false;
        for (const ExperimentSpec& s : specs) {
            const ExperimentSummary sum = run_experiment(s);
            print_summary(sum);
            failed = failed || sum.any_failure();
        }
        return failed ? exit_solver : exit_ok;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return exit_config;
    } catch (const ConfigLoadError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return exit_config;
    } catch (const WindowError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return exit_config;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return exit_config;
    } catch (const SolverError& e) {
        std::fprintf(stderr, "solver failure: %s\n", e.what());
        return exit_solver;
    }
}
