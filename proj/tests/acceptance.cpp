// Prints one PASS/FAIL line per acceptance criterion; exits non-zero if any fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "tlshield/automaton.hpp"
#include "tlshield/cbf.hpp"
#include "tlshield/gp.hpp"
#include "tlshield/nn.hpp"
#include "tlshield/oracle.hpp"
#include "tlshield/trainer.hpp"

using namespace tlshield;

namespace {

const std::string kSrc = TLSHIELD_SOURCE_DIR;
const std::string kCli = TLSHIELD_CLI;
const std::string kOut = "acceptance_out";

struct Verdict {
    bool pass;
    std::string detail;
};

int failures = 0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

void report(int id, const std::function<Verdict()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
        v = body();
    } catch (const std::exception& e) {
        v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << " (" << num(seconds_since(t0)) << " s) " << v.detail
              << std::endl;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string formula_of(const std::string& path) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    const std::string tag = "# formula: ";
    if (line.rfind(tag, 0) != 0) throw std::runtime_error(path + " has no formula line");
    return line.substr(tag.size());
}

trainer::TrainConfig config(const std::string& file) {
    auto c = trainer::load_config(kSrc + "/configs/" + file);
    c.out_dir = kOut;
    return c;
}

// Criterion 1
Verdict ldgba_equivalence() {
    const auto t0 = std::chrono::steady_clock::now();
    // reach_both, surveil_both, pen1 (with a hazard sink) and the additional fixtures.
    const std::vector<std::string> names = {"reach_both", "surveil_both", "pen1", "pen2", "sequence", "gf3", "response", "until"};
    long words = 0, mismatches = 0;
    std::string bad;
    for (const auto& n : names) {
        const std::string path = kSrc + "/fixtures/automata/" + n + ".aut";
        const auto a = automaton::load_automaton(path);
        if (a.aps.size() > 3) throw std::runtime_error(n + " has more than three propositions");
        const auto f = ltl::parse_ltl(formula_of(path), std::set<std::string>(a.aps.begin(), a.aps.end()));
        const auto rep = automaton::check_equivalence(a, f.get(), 3, 4);
        words += rep.words;
        mismatches += rep.mismatches;
        if (rep.mismatches) bad += " " + n;
    }
    const double secs = seconds_since(t0);
    return {mismatches == 0 && secs < 60.0, std::to_string(names.size()) + " automata, " + std::to_string(words) + " lasso words, " +
                                                std::to_string(mismatches) + " mismatches" + bad + ", " + num(secs) + " s (limit 60 s)"};
}

std::vector<oracle::CheckResult> suite_results;

// Criteria 2-4 share one run of the exact suite.
Verdict theorem_check(const std::string& check, int min_fixtures, double limit_s) {
    const auto t0 = std::chrono::steady_clock::now();
    if (suite_results.empty()) {
        suite_results = oracle::run_suite(kSrc + "/fixtures/grids");
        for (const auto& r : oracle::run_suite(kSrc + "/fixtures/grids/limit"))
            if (r.check == "penalized_optimal") suite_results.push_back(r);
    }
    int n = 0, passed = 0;
    bool sizes_ok = true;
    std::string detail;
    for (const auto& r : suite_results) {
        if (r.check == "size") sizes_ok = sizes_ok && r.pass;
        if (r.check != check) continue;
        ++n;
        passed += r.pass;
        detail += " [" + r.fixture + ": " + r.detail + "]";
    }
    const double secs = seconds_since(t0);
    const bool ok = n >= min_fixtures && passed == n && sizes_ok && (limit_s <= 0 || secs < limit_s);
    return {ok, std::to_string(passed) + "/" + std::to_string(n) + " fixtures" + detail};
}

// Criterion 5
Verdict gp_oracle() {
    std::mt19937_64 rng(5005);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    double worst = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
        const int n = 1 + static_cast<int>(rng() % 50), dim = 1 + static_cast<int>(rng() % 3);
        gp::GpHyper h;
        h.sigma_f = 0.5 + 2.0 * (u(rng) + 2.0) / 4.0;
        h.lengthscale = 0.3 + 1.5 * (u(rng) + 2.0) / 4.0;
        h.sigma_noise = 0.02 + 0.3 * (u(rng) + 2.0) / 4.0;
        std::vector<gp::Measurement> data;
        Mat X(n, dim);
        Vec y(n);
        for (int i = 0; i < n; ++i) {
            Vec s = Vec::NullaryExpr(dim, [&](Eigen::Index) { return u(rng); });
            X.row(i) = s.transpose();
            y(i) = std::sin(s.sum()) + 0.1 * u(rng);
            data.push_back({s, Vec::Constant(1, y(i)), 0});
        }
        const auto model = gp::fit(data, h, 1);
        for (int q = 0; q < 5; ++q) {
            const Vec s = Vec::NullaryExpr(dim, [&](Eigen::Index) { return 1.2 * u(rng); });
            const auto ref = oracle_ref::dense_gp(X, y, h.sigma_f, h.lengthscale, h.sigma_noise, s);
            const auto post = gp::posterior(model, s);
            worst = std::max({worst, std::abs(post.mean(0) - ref.mean), std::abs(post.std(0) * post.std(0) - ref.var)});
        }
    }
    // Noiseless interpolation on points three lengthscales apart.
    gp::GpHyper h;
    h.sigma_noise = 0.0;
    h.lengthscale = 0.5;
    std::vector<gp::Measurement> pts;
    for (int i = 0; i < 20; ++i) pts.push_back({Vec::Constant(1, -15.0 + 1.5 * i), Vec::Constant(1, std::cos(0.7 * i)), 0});
    const auto model = gp::fit(pts, h, 1);
    double interp = 0.0;
    for (const auto& p : pts) interp = std::max(interp, std::abs(gp::posterior(model, p.s).mean(0) - p.y(0)));
    return {worst < 1e-8 && interp < 1e-6,
            "50 instances, max |mean/var - dense| = " + num(worst) + " (tol 1e-8); noiseless interpolation error " + num(interp) + " (tol 1e-6)"};
}

// Criterion 6
Verdict qp_oracle() {
    std::mt19937_64 rng(6006);
    double worst_gap = -INFINITY, worst_kkt = 0.0;
    bool feasible = true;
    for (int inst = 0; inst < 100; ++inst) {
        const int m = 1 + inst % 2, nc = 1 + static_cast<int>(rng() % 3);
        auto p = oracle_ref::random_qp(rng, m, nc);
        const auto s = cbf::solve_qp(p);
        worst_gap = std::max(worst_gap, s.objective - oracle_ref::qp_grid_best(p));
        worst_kkt = std::max(worst_kkt, cbf::kkt_residual(p, s));
        const Vec tot = p.a_rl + s.a_pt;
        feasible = feasible && s.eps.minCoeff() >= 0.0 && (tot.array() >= p.a_low.array() - 1e-9).all() &&
                   (tot.array() <= p.a_high.array() + 1e-9).all();
        for (std::size_t i = 0; i < p.constraints.size(); ++i) {
            const double e = p.shared_slack ? s.eps(0) : s.eps(static_cast<Eigen::Index>(i));
            feasible = feasible && p.constraints[i].alpha.dot(tot) + p.constraints[i].beta + e >= -1e-8;
        }
    }
    return {feasible && worst_gap <= 1e-3 && worst_kkt < 1e-6, "100 instances, feasible=" + std::string(feasible ? "yes" : "no") +
                                                                   ", max objective - grid = " + num(worst_gap) + " (tol 1e-3), max KKT residual " +
                                                                   num(worst_kkt) + " (tol 1e-6)"};
}

// Criterion 7
Verdict grad_check() {
    Rng rng(7007);
    double worst_p = 0.0, worst_x = 0.0;
    for (int k = 0; k < 20; ++k) {
        std::vector<int> sizes{1 + static_cast<int>(rng() % 6)};
        const int depth = 1 + static_cast<int>(rng() % 4);
        for (int l = 0; l < depth; ++l) sizes.push_back(2 + static_cast<int>(rng() % 16));
        sizes.push_back(1 + static_cast<int>(rng() % 3));
        nn::Mlp net(sizes, k % 2 ? nn::OutputAct::TanhBox : nn::OutputAct::Linear, rng);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        const Mat X = Mat::NullaryExpr(sizes.front(), 6, [&](Eigen::Index, Eigen::Index) { return 1.5 * u(rng); });
        const Mat W = Mat::NullaryExpr(sizes.back(), 6, [&](Eigen::Index, Eigen::Index) { return u(rng); });
        const auto gc = oracle_ref::mlp_grad_check(net, X, W);
        worst_p = std::max(worst_p, gc.param_rel);
        worst_x = std::max(worst_x, gc.input_rel);
    }
    return {worst_p < 1e-4 && worst_x < 1e-4,
            "20 nets, max relative error: parameters " + num(worst_p) + ", inputs " + num(worst_x) + " (tol 1e-4)"};
}

// Criteria 8-10 share the pendulum runs.
struct PendulumRuns {
    std::vector<trainer::EpisodeMetrics> guided;   // first 300 episodes, filter and guiding on
    double guided_s = 0.0;
    int unguarded_violations = -1;                 // filter off, first 50 episodes
    std::vector<trainer::EpisodeMetrics> unguided;  // guiding off
    trainer::EvalResult infinite, finite;
    double infinite_s = 0.0, finite_s = 0.0;
};

std::vector<double> decile_interventions(const std::vector<trainer::EpisodeMetrics>& ms) {
    std::string csv = trainer::metrics_header(1) + "\n";
    for (const auto& m : ms) csv += trainer::metrics_row(m) + "\n";
    return trainer::decile_means(trainer::parse_metrics(csv), "interventions");
}

PendulumRuns& pendulum() {
    static PendulumRuns r;
    static bool done = false;
    if (done) return r;
    done = true;

    auto cfg = config("pendulum_surveillance.toml");
    {
        auto t0 = std::chrono::steady_clock::now();
        trainer::Trainer tr(cfg);
        for (int e = 0; e < 300; ++e) r.guided.push_back(tr.run_episode(e));
        r.guided_s = seconds_since(t0);
        // The infinite task keeps training the same agent to 500 episodes.
        for (int e = 300; e < 500; ++e) tr.run_episode(e);
        const rl::ModularAgent& agent = tr.agent();
        r.infinite = trainer::evaluate(cfg, [&agent](const product::ProductState& x) { return agent.act(x); }, cfg.eval_runs, true,
                                       tr.gp_model());
        r.infinite_s = seconds_since(t0);
    }
    {
        auto off = cfg;
        off.cbf.enabled = false;
        off.guiding = false;
        trainer::Trainer tr(off);
        r.unguarded_violations = 0;
        for (int e = 0; e < 50; ++e) r.unguarded_violations += !tr.run_episode(e).safe;
    }
    {
        auto nog = cfg;
        nog.guiding = false;
        trainer::Trainer tr(nog);
        for (int e = 0; e < 300; ++e) r.unguided.push_back(tr.run_episode(e));
    }
    {
        auto fin = config("pendulum_reach.toml");
        auto t0 = std::chrono::steady_clock::now();
        trainer::Trainer tr(fin);
        for (int e = 0; e < 300; ++e) tr.run_episode(e);
        const rl::ModularAgent& agent = tr.agent();
        r.finite = trainer::evaluate(fin, [&agent](const product::ProductState& x) { return agent.act(x); }, fin.eval_runs, true,
                                     tr.gp_model());
        r.finite_s = seconds_since(t0);
    }
    return r;
}

Verdict safety_during_training() {
    const auto& r = pendulum();
    int unsafe = 0;
    double worst = INFINITY;
    for (const auto& m : r.guided) {
        unsafe += !m.safe;
        worst = std::min(worst, m.min_barrier);
    }
    const double frac = r.unguarded_violations / 50.0;
    return {unsafe == 0 && frac >= 0.2 && r.guided_s < 900.0,
            "filter on: " + std::to_string(unsafe) + "/300 episodes with h < -1e-3 (min h " + num(worst) + "), " + num(r.guided_s) +
                " s (limit 900 s); filter off, untrained: " + std::to_string(r.unguarded_violations) + "/50 episodes violate (need >= 20%)"};
}

Verdict intervention_decay() {
    const auto& r = pendulum();
    const auto g = decile_interventions(r.guided), n = decile_interventions(r.unguided);
    const double ratio = g[9] / g[0];
    const double ratio_off = n[0] > 0 ? n[9] / n[0] : NAN;
    return {g[0] > 0 && g[9] < 0.2 * g[0], "guiding on: first decile " + num(g[0]) + ", last decile " + num(g[9]) + ", ratio " + num(ratio) +
                                               " (need < 0.2); guiding off (informational): first " + num(n[0]) + ", last " + num(n[9]) +
                                               ", ratio " + num(ratio_off)};
}

Verdict scaled_success() {
    const auto& r = pendulum();
    const bool ok = r.finite.success_rate >= 0.8 && r.infinite.success_rate >= 0.6 && r.finite_s < 1800 && r.infinite_s < 1800;
    return {ok, "finite (300 episodes): success " + num(r.finite.success_rate) + " over " + std::to_string(r.finite.runs) + " runs (need 0.8), " +
                    num(r.finite_s) + " s; infinite (500 episodes): success " + num(r.infinite.success_rate) + " over " +
                    std::to_string(r.infinite.runs) + " runs (need 0.6), " + num(r.infinite_s) + " s"};
}

// Criterion 11
Verdict round_property() {
    std::mt19937_64 rng(1111);
    long steps = 0, rounds = 0, violations = 0;
    for (const char* name : {"surveil_both", "gf3", "pen1", "response", "sequence"}) {
        const auto a = automaton::load_automaton(kSrc + "/fixtures/automata/" + name + ".aut");
        const auto full = automaton::full_frontier(a);
        const auto letters = 1u << a.aps.size();
        auto x = automaton::initial_state(a);
        automaton::Frontier seen = 0;
        for (int i = 0; i < 20000; ++i, ++steps) {
            x = automaton::embedded_step(a, x, static_cast<ltl::Letter>(rng() % letters));
            if (x.T == 0) ++violations;
            seen |= a.membership[x.q];
            if (x.round_flag) {
                violations += seen != full;
                seen = a.membership[x.q];
                ++rounds;
            }
        }
    }
    return {violations == 0 && steps >= 100000,
            std::to_string(steps) + " random steps, " + std::to_string(rounds) + " rounds, " + std::to_string(violations) + " violations"};
}

// Criterion 12
Verdict determinism() {
    const std::string cfg = kSrc + "/configs/pendulum_surveillance.toml";
    std::string csv[2];
    for (int k = 0; k < 2; ++k) {
        const std::string id = "determinism_" + std::to_string(k);
        const std::string cmd = "\"" + kCli + "\" train \"" + cfg + "\" --episodes 20 --out " + kOut + " --run-id " + id + " > /dev/null";
        if (std::system(cmd.c_str()) != 0) return {false, "train invocation failed"};
        csv[k] = read_file(kOut + "/" + id + "/metrics.csv");
    }
    const bool same = !csv[0].empty() && csv[0] == csv[1];
    return {same, "two CLI train runs (20 episodes): metrics CSVs " + std::string(same ? "byte-identical" : "differ") + ", " +
                      std::to_string(csv[0].size()) + " bytes"};
}

}  // namespace

int main() {
    std::filesystem::create_directories(kOut);
    report(1, ldgba_equivalence);
    report(2, [] { return theorem_check("greedy_optimal", 3, 30.0); });
    report(3, [] { return theorem_check("shaping_invariant", 3, 0.0); });
    report(4, [] { return theorem_check("penalized_optimal", 2, 0.0); });
    report(5, gp_oracle);
    report(6, qp_oracle);
    report(7, grad_check);
    report(8, safety_during_training);
    report(9, intervention_decay);
    report(10, scaled_success);
    report(11, round_property);
    report(12, determinism);
    std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed")) << std::endl;
    return failures ? 1 : 0;
}
