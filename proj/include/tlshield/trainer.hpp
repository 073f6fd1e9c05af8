#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tlshield/automaton.hpp"
#include "tlshield/cbf.hpp"
#include "tlshield/envs.hpp"
#include "tlshield/gp.hpp"
#include "tlshield/product.hpp"
#include "tlshield/reward.hpp"
#include "tlshield/rl.hpp"

namespace tlshield::trainer {

enum class TaskKind { Finite, Infinite };

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::string source_path;
    std::string text;  // verbatim file contents

    std::string env = "pendulum";
    envs::EnvOptions env_opt;

    TaskKind task = TaskKind::Infinite;
    int rounds_required = 2;
    int eval_runs = 200;

    std::string automaton_path;

    reward::RewardParams reward;
    bool shaping = true;

    gp::GpHyper gp;
    bool gp_enabled = true;
    bool gp_refit = true;  // refit from the measurement buffer after every episode

    cbf::FilterConfig cbf;

    rl::RlParams rl;
    int updates_per_step = 1;

    int episodes = 100;
    int steps = 200;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    std::string run_id = "run";
    bool guiding = true;
};

TrainConfig parse_config(const std::string& text, const std::string& base_dir = ".");
// Reads the file, resolves the automaton path against its directory and applies TLSHIELD_SEED.
TrainConfig load_config(const std::string& path);

// A state counts as a barrier violation when min_j h_j(s) < -violation_tol.
inline constexpr double violation_tol = 1e-3;

struct EpisodeMetrics {
    int episode = 0;
    int steps = 0;
    double ret = 0.0;
    double shaped_ret = 0.0;
    int interventions = 0;
    int rounds = 0;
    std::vector<double> max_abs_state;
    bool safe = true;
    bool success = false;
    double min_barrier = 0.0;  // not written to the CSV
    bool diverged = false;
};

std::string metrics_header(int state_dim);
std::string metrics_row(const EpisodeMetrics& m);

struct TraceStep {
    int q;
    bool round_flag;
    bool violated;  // min_j h_j(s) < 0
};

bool success_of_episode(const std::vector<TraceStep>& trace, TaskKind kind, int rounds_required,
                        const std::vector<int>& goal_states, const std::vector<int>& unsafe_states);

// Def. 19 applied to one stored tuple; `sink` is the designated unsafe automaton state.
rl::Transition guide_step(rl::Transition t, const Vec& a_pt, int sink, const reward::RewardParams& p, bool enabled);

struct StepRecord {
    int episode;
    int t;
    product::ProductState x;
    Vec a_rl, a_safe, a_pt;
    rl::Transition stored;
};
using StepHook = std::function<void(const StepRecord&)>;

class Trainer {
public:
    explicit Trainer(TrainConfig cfg);

    EpisodeMetrics run_episode(int episode);
    std::vector<EpisodeMetrics> run(bool write_artifacts = true);

    void set_hook(StepHook h) { hook_ = std::move(h); }
    const TrainConfig& config() const { return cfg_; }
    const automaton::Ldgba& automaton() const { return aut_; }
    const envs::EnvSpec& env() const { return env_; }
    rl::ModularAgent& agent() { return *agent_; }
    const cbf::SafetyFilter& filter() const { return *filter_; }
    std::shared_ptr<const gp::GpModel> gp_model() const { return model_; }
    const std::vector<gp::Measurement>& gp_buffer() const { return gp_buffer_; }
    const std::vector<std::string>& warnings() const { return warnings_; }
    int sink() const { return sink_; }
    std::string run_dir() const;
    std::uint64_t signature() const;

    void refit_gp(int episode);
    void write_artifacts(const std::vector<EpisodeMetrics>& metrics) const;

private:
    TrainConfig cfg_;
    envs::EnvSpec env_;
    automaton::Ldgba aut_;
    std::unique_ptr<envs::Labeler> labeler_;
    std::unique_ptr<cbf::SafetyFilter> filter_;
    std::unique_ptr<rl::ModularAgent> agent_;
    std::shared_ptr<const gp::GpModel> model_;
    std::vector<gp::Measurement> gp_buffer_;
    std::vector<gp::Measurement> gp_fit_set_;
    std::vector<int> goals_;
    int sink_ = -1;
    Rng env_rng_, agent_rng_, gp_rng_;
    std::vector<std::string> warnings_;
    StepHook hook_;
};

envs::EnvSpec make_env(const TrainConfig& cfg);
// Loads the automaton and, when guiding needs one, adds a virtual unsafe sink.
automaton::Ldgba load_task_automaton(const TrainConfig& cfg, int* sink, std::vector<std::string>* warnings);

struct Interval {
    double lo = 0.0, hi = 0.0;
};
Interval wilson_interval(int successes, int n, double z = 1.959963984540054);

struct EvalResult {
    int runs = 0;
    int successes = 0;
    int safe = 0;
    double mean_return = 0.0;
    double success_rate = 0.0;
    double safety_rate = 0.0;
    Interval success_ci, safety_ci;
};

using Policy = std::function<Vec(const product::ProductState&)>;

// Deterministic rollouts, guiding off, filter per flag.
EvalResult evaluate(const TrainConfig& cfg, const Policy& policy, int n_runs, bool cbf_on,
                    std::shared_ptr<const gp::GpModel> model = nullptr);
// Restores a run directory written by Trainer::run.
EvalResult evaluate_checkpoint(const TrainConfig& cfg, const std::string& run_dir, int n_runs, bool cbf_on);

void write_measurements(const std::string& path, const std::vector<gp::Measurement>& data);
std::vector<gp::Measurement> read_measurements(const std::string& path);

struct MetricsTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    int column(const std::string& name) const;
    std::vector<double> values(const std::string& name) const;
};

MetricsTable read_metrics(const std::string& path);
MetricsTable parse_metrics(const std::string& text);
// Trailing means over at most `window` episodes.
std::string rolling_report(const MetricsTable& t, int window);
// Ten contiguous episode blocks; decile k spans [k E / 10, (k + 1) E / 10).
std::string decile_report(const MetricsTable& t);
std::vector<double> decile_means(const MetricsTable& t, const std::string& column);

}  // namespace tlshield::trainer
