// tlshield check|train|eval|oracle|report
//
// Exit codes: 0 ok, 1 usage or I/O error, 2 validation failure,
// 3 equivalence counterexample, 4 oracle suite failure.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <json.hpp>

#include "tlshield/automaton.hpp"
#include "tlshield/ltl.hpp"
#include "tlshield/oracle.hpp"
#include "tlshield/trainer.hpp"

namespace {

using namespace tlshield;

std::string word_text(const ltl::LassoWord& w) {
    auto letters = [&](const std::vector<ltl::Letter>& ls) {
        std::string out;
        for (auto l : ls) {
            out += " {";
            bool first = true;
            for (const auto& n : ltl::names_of(w.aps, l)) {
                out += (first ? "" : ",") + n;
                first = false;
            }
            out += "}";
        }
        return out;
    };
    return "prefix:" + letters(w.prefix) + "  cycle:" + letters(w.cycle);
}

int cmd_check(const std::string& path, const std::string& formula, int prefix, int cycle) {
    if (!std::filesystem::is_regular_file(path)) {
        std::cerr << "cannot open '" << path << "'\n";
        return 1;
    }
    automaton::Ldgba a;
    try {
        a = automaton::load_automaton(path);
    } catch (const automaton::AutomatonError& e) {
        std::cerr << "invalid automaton: " << e.what() << '\n';
        return 2;
    }
    std::cout << path << ": " << a.num_states() << " states, " << a.num_sets() << " accepting sets, " << a.unsafe.size()
              << " unsafe, " << automaton::sink_states(a).size() << " sinks\n";
    if (formula.empty()) return 0;
    ltl::FormulaPtr f;
    try {
        f = ltl::parse_ltl(formula, std::set<std::string>(a.aps.begin(), a.aps.end()));
    } catch (const ltl::ParseError& e) {
        std::cerr << "formula: " << e.what() << '\n';
        return 1;
    }
    automaton::EquivalenceReport rep;
    try {
        rep = automaton::check_equivalence(a, f.get(), prefix, cycle);
    } catch (const automaton::AutomatonError& e) {
        std::cerr << e.what() << '\n';
        return 2;
    }
    std::cout << rep.words << " lasso words, " << rep.mismatches << " disagreements\n";
    if (rep.mismatches == 0) return 0;
    std::cout << "counterexample " << word_text(*rep.counterexample) << "\n  ltl=" << rep.ltl << " ldgba=" << rep.ldgba
              << " e-ldgba=" << rep.eldgba << '\n';
    return 3;
}

int cmd_train(const std::string& config, int episodes, const std::string& out, const std::string& run_id) {
    auto cfg = trainer::load_config(config);
    if (episodes > 0) cfg.episodes = episodes;
    if (!out.empty()) cfg.out_dir = out;
    if (!run_id.empty()) cfg.run_id = run_id;
    trainer::Trainer t(cfg);
    for (const auto& w : t.warnings()) std::cerr << "warning: " << w << '\n';
    const auto metrics = t.run(true);
    int safe = 0, success = 0, interventions = 0;
    for (const auto& m : metrics) {
        safe += m.safe;
        success += m.success;
        interventions += m.interventions;
    }
    std::cout << "wrote " << t.run_dir() << ": " << metrics.size() << " episodes, " << safe << " safe, " << success
              << " successful, " << interventions << " interventions\n";
    return 0;
}

int cmd_eval(std::string checkpoint, const std::string& config, int runs, bool no_cbf) {
    if (runs <= 0) {
        std::cerr << "--runs must be positive\n";
        return 1;
    }
    if (std::filesystem::is_regular_file(checkpoint)) checkpoint = std::filesystem::path(checkpoint).parent_path().string();
    const auto cfg = trainer::load_config(config);
    const auto r = trainer::evaluate_checkpoint(cfg, checkpoint, runs, !no_cbf);
    nlohmann::json j;
    j["runs"] = r.runs;
    j["success_rate"] = r.success_rate;
    j["safety_rate"] = r.safety_rate;
    j["mean_return"] = r.mean_return;
    j["ci"] = {{"success", {r.success_ci.lo, r.success_ci.hi}}, {"safety", {r.safety_ci.lo, r.safety_ci.hi}}};
    std::cout << j.dump(2) << '\n';
    return 0;
}

int cmd_oracle(const std::string& dir) {
    const auto results = oracle::run_suite(dir);
    bool ok = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.fixture << ' ' << r.check << ": " << r.detail << '\n';
        ok = ok && r.pass;
    }
    return ok ? 0 : 4;
}

int cmd_report(const std::string& path, int window, bool deciles) {
    const auto t = trainer::read_metrics(path);
    std::cout << (deciles ? trainer::decile_report(t) : trainer::rolling_report(t, window));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LTL-guided safe reinforcement learning with GP-ECBF shielding"};
    app.require_subcommand(1);

    std::string path, formula, config, out, run_id;
    int prefix = 3, cycle = 4, episodes = 0, runs = 0, window = 20;
    bool no_cbf = false, deciles = false;

    auto* check = app.add_subcommand("check", "validate an automaton and optionally compare it to an LTL formula");
    check->add_option("automaton", path, "automaton file")->required();
    check->add_option("--ltl", formula, "formula over the automaton's propositions");
    check->add_option("--prefix", prefix, "maximum lasso prefix length")->check(CLI::NonNegativeNumber);
    check->add_option("--cycle", cycle, "maximum lasso cycle length")->check(CLI::PositiveNumber);

    auto* train = app.add_subcommand("train", "train the shielded agent and write checkpoint, metrics and config echo");
    train->add_option("config", config, "config file")->required();
    train->add_option("--episodes", episodes, "override trainer.episodes");
    train->add_option("--out", out, "override trainer.out_dir");
    train->add_option("--run-id", run_id, "override trainer.run_id");

    auto* eval = app.add_subcommand("eval", "evaluate a trained run; prints JSON");
    eval->add_option("checkpoint", path, "ckpt.bin or its run directory")->required();
    eval->add_option("config", config, "config file")->required();
    eval->add_option("--runs", runs, "number of evaluation runs")->required();
    eval->add_flag("--no-cbf", no_cbf, "evaluate without the safety filter");

    auto* orc = app.add_subcommand("oracle", "run the exact theorem suite over gridworld fixtures");
    orc->add_option("fixtures", path, "directory of .grid files")->required();

    auto* report = app.add_subcommand("report", "aggregate a metrics CSV for plotting");
    report->add_option("metrics", path, "metrics.csv")->required();
    report->add_option("--window", window, "rolling window in episodes")->check(CLI::PositiveNumber);
    report->add_flag("--deciles", deciles, "per-decile summary instead of rolling means");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*check) return cmd_check(path, formula, prefix, cycle);
        if (*train) return cmd_train(config, episodes, out, run_id);
        if (*eval) return cmd_eval(path, config, runs, no_cbf);
        if (*orc) return cmd_oracle(path);
        if (*report) return cmd_report(path, window, deciles);
    } catch (const automaton::AutomatonError& e) {
        std::cerr << "invalid automaton: " << e.what() << '\n';
        return 2;
    } catch (const trainer::ConfigError& e) {
        std::cerr << "invalid config: " << e.what() << '\n';
        return 2;
    } catch (const oracle::OracleError& e) {
        std::cerr << "oracle: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
