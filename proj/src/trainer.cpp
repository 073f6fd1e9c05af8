#include "tlshield/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace tlshield::trainer {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

Rng stream(std::uint64_t seed, std::uint64_t salt) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(salt)};
    return Rng(seq);
}

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

}  // namespace

std::string metrics_header(int state_dim) {
    std::string h = "episode,steps,return,shaped_return,interventions,rounds";
    for (int i = 1; i <= state_dim; ++i) h += ",max_abs_state_" + std::to_string(i);
    return h + ",safe,success";
}

std::string metrics_row(const EpisodeMetrics& m) {
    std::string r = std::to_string(m.episode) + "," + std::to_string(m.steps) + "," + fmt(m.ret) + "," + fmt(m.shaped_ret) + "," +
                    std::to_string(m.interventions) + "," + std::to_string(m.rounds);
    for (double v : m.max_abs_state) r += "," + fmt(v);
    return r + "," + (m.safe ? "1" : "0") + "," + (m.success ? "1" : "0");
}

bool success_of_episode(const std::vector<TraceStep>& trace, TaskKind kind, int rounds_required,
                        const std::vector<int>& goal_states, const std::vector<int>& unsafe_states) {
    bool reached = false;
    int rounds = 0;
    for (const auto& st : trace) {
        if (st.violated || contains(unsafe_states, st.q)) return false;
        if (contains(goal_states, st.q)) reached = true;
        if (st.round_flag) ++rounds;
    }
    return kind == TaskKind::Finite ? reached : rounds >= rounds_required;
}

rl::Transition guide_step(rl::Transition t, const Vec& a_pt, int sink, const reward::RewardParams& p, bool enabled) {
    if (!enabled) return t;
    if (sink < 0) throw std::invalid_argument("exploration guiding needs an unsafe automaton state");
    const double norm = a_pt.size() ? a_pt.norm() : 0.0;
    if (norm > p.zero_tol) {
        t.r = reward::guided_reward(t.r, a_pt, p);
        t.q_next = sink;
        t.done = true;
    }
    return t;
}

envs::EnvSpec make_env(const TrainConfig& cfg) { return envs::make_env(cfg.env, cfg.env_opt); }

automaton::Ldgba load_task_automaton(const TrainConfig& cfg, int* sink, std::vector<std::string>* warnings) {
    auto a = automaton::load_automaton(cfg.automaton_path);
    if (a.has_nondeterminism()) throw ConfigError("training needs an automaton without nondeterministic states");
    int s = -1;
    if (!a.unsafe.empty()) {
        s = a.unsafe.front();
    } else if (cfg.guiding) {
        s = automaton::add_virtual_sink(a);
        if (warnings) warnings->push_back("automaton declares no unsafe state; added virtual sink for guiding");
    }
    if (sink) *sink = s;
    return a;
}

Trainer::Trainer(TrainConfig cfg)
    : cfg_(std::move(cfg)),
      env_(make_env(cfg_)),
      env_rng_(stream(cfg_.seed, 1)),
      agent_rng_(stream(cfg_.seed, 2)),
      gp_rng_(stream(cfg_.seed, 3)) {
    aut_ = load_task_automaton(cfg_, &sink_, &warnings_);
    for (const auto& w : cfg_.reward.validate()) warnings_.push_back(w);
    labeler_ = std::make_unique<envs::Labeler>(env_, aut_.aps);
    filter_ = std::make_unique<cbf::SafetyFilter>(env_, cfg_.cbf);
    agent_ = std::make_unique<rl::ModularAgent>(aut_.num_states(), aut_.num_sets(), env_.a_low, env_.a_high, env_.scale, cfg_.rl,
                                                agent_rng_);
    goals_ = automaton::goal_states(aut_);
    if (cfg_.gp_enabled) {
        model_ = std::make_shared<const gp::GpModel>(gp::fit({}, cfg_.gp, env_.n, env_.residual_dims));
        filter_->set_model(model_);
    }
}

std::string Trainer::run_dir() const { return (std::filesystem::path(cfg_.out_dir) / cfg_.run_id).string(); }

std::uint64_t Trainer::signature() const {
    std::string sig = env_.name + "|" + automaton::serialize(aut_) + "|";
    for (int h : cfg_.rl.hidden) sig += std::to_string(h) + ",";
    return nn::fnv1a(sig);
}

void Trainer::refit_gp(int episode) {
    (void)episode;
    if (!cfg_.gp_enabled || !cfg_.gp_refit) return;
    gp_fit_set_ = gp::subsample(gp_buffer_, cfg_.gp.n_max, gp_rng_);
    gp::GpHyper h = cfg_.gp;
    if (h.grid_search && gp_fit_set_.size() >= 5) h = gp::grid_search(gp_fit_set_, h, env_.residual_dims);
    model_ = std::make_shared<const gp::GpModel>(gp::fit(gp_fit_set_, h, env_.n, env_.residual_dims));
    filter_->set_model(model_);
}

EpisodeMetrics Trainer::run_episode(int episode) {
    EpisodeMetrics m;
    m.episode = episode;
    m.max_abs_state.assign(env_.n, 0.0);
    product::ProductState x = product::initial_product_state(aut_, env_.initial_state(env_rng_));
    reward::ShapingState S = reward::initial_shaping(aut_);
    std::vector<TraceStep> trace;
    m.min_barrier = env_.min_barrier(x.s);
    const double dt = env_.dt;

    for (int t = 0; t < cfg_.steps; ++t) {
        const auto sel = agent_->select_action(aut_, x, true, agent_rng_);
        cbf::SafeAction sa;
        if (cfg_.cbf.enabled) {
            sa = filter_->safe_action(x.s, sel.a_rl);
        } else {
            sa.a_safe = envs::clamp_action(env_, sel.a_rl);
            sa.a_pt = Vec::Zero(env_.m);
        }
        const auto ps = product::product_step(env_, *labeler_, aut_, x, product::ProductAction::continuous(sa.a_safe), dt, &env_rng_);
        ++m.steps;

        double r = reward::base_reward(x, aut_, cfg_.reward);
        m.ret += r;
        if (cfg_.shaping) {
            r = reward::shaped_reward(x, ps.x, aut_, S, cfg_.reward);
            S = reward::shaping_update(ps.x.q, S, ps.x.round_flag);
        }
        m.shaped_ret += r;
        const bool intervened = sa.a_pt.norm() > cfg_.reward.zero_tol;
        if (intervened) ++m.interventions;
        if (ps.x.round_flag) ++m.rounds;

        const double h = ps.env.diverged ? -INFINITY : env_.min_barrier(ps.env.s);
        m.min_barrier = std::min(m.min_barrier, h);
        const bool violated = h < -violation_tol;
        if (violated) m.safe = false;
        for (int i = 0; i < env_.n; ++i) m.max_abs_state[i] = std::max(m.max_abs_state[i], std::abs(ps.env.s(i)));
        trace.push_back({ps.x.q, ps.x.round_flag, violated});

        const bool unsafe = product::is_unsafe(aut_, ps.x);
        const bool last = t + 1 == cfg_.steps;
        rl::Transition tr{agent_->encode(x), sel.a_rl, r, reward::discount(x, aut_, cfg_.reward), agent_->encode(ps.x), ps.x.q,
                          unsafe || ps.env.diverged || last};
        tr = guide_step(std::move(tr), sa.a_pt, sink_, cfg_.reward, cfg_.guiding);
        if (hook_) hook_({episode, t, x, sel.a_rl, sa.a_safe, sa.a_pt, tr});
        agent_->store(x.q, tr);

        if (cfg_.gp_enabled && !ps.env.diverged) gp_buffer_.push_back(gp::residual_from_transition(env_, x.s, sa.a_safe, ps.env.s, dt, episode));
        for (int k = 0; k < cfg_.updates_per_step; ++k) agent_->update_module(x.q, agent_rng_);

        x = ps.x;
        if (ps.env.diverged) {
            m.diverged = true;
            std::cerr << "episode " << episode << ": dynamics diverged at step " << t << ", episode aborted\n";
            break;
        }
        if (unsafe || (cfg_.guiding && intervened)) break;
    }
    m.success = success_of_episode(trace, cfg_.task, cfg_.rounds_required, goals_, aut_.unsafe);
    agent_->end_episode();
    refit_gp(episode);
    return m;
}

std::vector<EpisodeMetrics> Trainer::run(bool write) {
    std::vector<EpisodeMetrics> out;
    out.reserve(cfg_.episodes);
    for (int e = 0; e < cfg_.episodes; ++e) out.push_back(run_episode(e));
    if (write) write_artifacts(out);
    return out;
}

void Trainer::write_artifacts(const std::vector<EpisodeMetrics>& metrics) const {
    const std::string dir = run_dir();
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir + "/metrics.csv", std::ios::binary);
        f << metrics_header(env_.n) << '\n';
        for (const auto& m : metrics) f << metrics_row(m) << '\n';
        if (!f) throw std::runtime_error("cannot write " + dir + "/metrics.csv");
    }
    {
        std::ofstream f(dir + "/config.echo", std::ios::binary);
        f << cfg_.text;
    }
    nn::save_checkpoint(dir + "/ckpt.bin", agent_->checkpoint(signature()));
    write_measurements(dir + "/gp.csv", gp_fit_set_);
}

Interval wilson_interval(int successes, int n, double z) {
    if (n <= 0) throw std::invalid_argument("interval needs at least one trial");
    const double p = static_cast<double>(successes) / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (p + z2 / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4.0 * n * n)) / denom;
    return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

EvalResult evaluate(const TrainConfig& cfg, const Policy& policy, int n_runs, bool cbf_on, std::shared_ptr<const gp::GpModel> model) {
    if (n_runs <= 0) throw std::invalid_argument("evaluation needs at least one run");
    int sink = -1;
    const auto aut = load_task_automaton(cfg, &sink, nullptr);
    const auto env = make_env(cfg);
    const envs::Labeler labeler(env, aut.aps);
    cbf::FilterConfig fc = cfg.cbf;
    fc.enabled = cbf_on;
    cbf::SafetyFilter filter(env, fc);
    if (cfg.gp_enabled) filter.set_model(model ? model : std::make_shared<const gp::GpModel>(gp::fit({}, cfg.gp, env.n, env.residual_dims)));
    const auto goals = automaton::goal_states(aut);

    EvalResult res;
    res.runs = n_runs;
    double total = 0.0;
    for (int run = 0; run < n_runs; ++run) {
        Rng rng = stream(cfg.seed, 1000 + static_cast<std::uint64_t>(run));
        product::ProductState x = product::initial_product_state(aut, env.initial_state(rng));
        std::vector<TraceStep> trace;
        bool safe = true;
        double ret = 0.0;
        for (int t = 0; t < cfg.steps; ++t) {
            const auto a = filter.safe_action(x.s, policy(x)).a_safe;
            const auto ps = product::product_step(env, labeler, aut, x, product::ProductAction::continuous(a), env.dt, &rng);
            ret += reward::base_reward(x, aut, cfg.reward);
            const bool violated = ps.env.diverged || env.min_barrier(ps.env.s) < -violation_tol;
            safe = safe && !violated;
            trace.push_back({ps.x.q, ps.x.round_flag, violated});
            x = ps.x;
            if (ps.env.diverged || product::is_unsafe(aut, x)) break;
        }
        total += ret;
        if (safe) ++res.safe;
        if (success_of_episode(trace, cfg.task, cfg.rounds_required, goals, aut.unsafe)) ++res.successes;
    }
    res.mean_return = total / n_runs;
    res.success_rate = static_cast<double>(res.successes) / n_runs;
    res.safety_rate = static_cast<double>(res.safe) / n_runs;
    res.success_ci = wilson_interval(res.successes, n_runs);
    res.safety_ci = wilson_interval(res.safe, n_runs);
    return res;
}

EvalResult evaluate_checkpoint(const TrainConfig& cfg, const std::string& run_dir, int n_runs, bool cbf_on) {
    if (n_runs <= 0) throw std::invalid_argument("evaluation needs at least one run");
    TrainConfig quiet = cfg;
    Trainer shell(quiet);
    const auto ck = nn::load_checkpoint(run_dir + "/ckpt.bin");
    if (ck.config_hash != shell.signature()) throw nn::CheckpointError("checkpoint was trained with an incompatible configuration");
    shell.agent().restore(ck);
    std::shared_ptr<const gp::GpModel> model;
    const std::string gp_path = run_dir + "/gp.csv";
    if (cfg.gp_enabled && std::filesystem::exists(gp_path)) {
        const auto env = make_env(cfg);
        model = std::make_shared<const gp::GpModel>(gp::fit(read_measurements(gp_path), cfg.gp, env.n, env.residual_dims));
    }
    const rl::ModularAgent& agent = shell.agent();
    return evaluate(cfg, [&agent](const product::ProductState& x) { return agent.act(x); }, n_runs, cbf_on, model);
}

void write_measurements(const std::string& path, const std::vector<gp::Measurement>& data) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    char buf[40];
    for (const auto& m : data) {
        f << m.episode << ',' << m.s.size();
        for (Eigen::Index i = 0; i < m.s.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", m.s(i));
            f << ',' << buf;
        }
        for (Eigen::Index i = 0; i < m.y.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", m.y(i));
            f << ',' << buf;
        }
        f << '\n';
    }
}

std::vector<gp::Measurement> read_measurements(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::vector<gp::Measurement> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<double> v;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
        if (v.size() < 2) throw std::runtime_error("malformed measurement row in " + path);
        const auto n = static_cast<std::size_t>(v[1]);
        if (v.size() != 2 + 2 * n) throw std::runtime_error("malformed measurement row in " + path);
        gp::Measurement m;
        m.episode = static_cast<int>(v[0]);
        m.s = Eigen::Map<const Vec>(v.data() + 2, static_cast<Eigen::Index>(n));
        m.y = Eigen::Map<const Vec>(v.data() + 2 + n, static_cast<Eigen::Index>(n));
        out.push_back(std::move(m));
    }
    return out;
}

int MetricsTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("metrics have no column '" + name + "'");
}

std::vector<double> MetricsTable::values(const std::string& name) const {
    const int c = column(name);
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
}

MetricsTable parse_metrics(const std::string& text) {
    MetricsTable t;
    std::istringstream in(text);
    std::string line;
    auto split = [](const std::string& l) {
        std::vector<std::string> cells;
        std::stringstream ss(l);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        return cells;
    };
    if (!std::getline(in, line)) throw std::runtime_error("metrics file is empty");
    t.header = split(line);
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != t.header.size()) throw std::runtime_error("metrics line " + std::to_string(lineno) + " has the wrong number of fields");
        std::vector<double> row;
        for (const auto& c : cells) {
            try {
                row.push_back(std::stod(c));
            } catch (const std::exception&) {
                throw std::runtime_error("metrics line " + std::to_string(lineno) + " has a non-numeric field '" + c + "'");
            }
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

MetricsTable read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_metrics(ss.str());
}

std::string rolling_report(const MetricsTable& t, int window) {
    if (window < 1) throw std::invalid_argument("window must be at least 1");
    const auto ep = t.values("episode"), ret = t.values("return"), iv = t.values("interventions"), safe = t.values("safe"),
               succ = t.values("success");
    std::string out = "episode,return,rolling_return,interventions,rolling_interventions,rolling_safety,rolling_success\n";
    for (std::size_t i = 0; i < ep.size(); ++i) {
        const std::size_t lo = i + 1 >= static_cast<std::size_t>(window) ? i + 1 - window : 0;
        double r = 0, v = 0, s = 0, c = 0;
        for (std::size_t k = lo; k <= i; ++k) {
            r += ret[k];
            v += iv[k];
            s += safe[k];
            c += succ[k];
        }
        const double n = static_cast<double>(i + 1 - lo);
        out += fmt(ep[i]) + "," + fmt(ret[i]) + "," + fmt(r / n) + "," + fmt(iv[i]) + "," + fmt(v / n) + "," + fmt(s / n) + "," + fmt(c / n) + "\n";
    }
    return out;
}

std::vector<double> decile_means(const MetricsTable& t, const std::string& column) {
    const auto v = t.values(column);
    const std::size_t E = v.size();
    std::vector<double> out;
    for (std::size_t k = 0; k < 10; ++k) {
        const std::size_t lo = k * E / 10, hi = (k + 1) * E / 10;
        double s = 0;
        for (std::size_t i = lo; i < hi; ++i) s += v[i];
        out.push_back(hi > lo ? s / static_cast<double>(hi - lo) : std::nan(""));
    }
    return out;
}

std::string decile_report(const MetricsTable& t) {
    const std::size_t E = t.rows.size();
    const auto ret = decile_means(t, "return"), iv = decile_means(t, "interventions"), safe = decile_means(t, "safe"),
               succ = decile_means(t, "success");
    std::string out = "decile,first_episode,last_episode,mean_return,mean_interventions,safety_rate,success_rate\n";
    for (std::size_t k = 0; k < 10; ++k) {
        const std::size_t lo = k * E / 10, hi = (k + 1) * E / 10;
        if (hi == lo) continue;
        out += std::to_string(k + 1) + "," + std::to_string(lo) + "," + std::to_string(hi - 1) + "," + fmt(ret[k]) + "," + fmt(iv[k]) + "," +
               fmt(safe[k]) + "," + fmt(succ[k]) + "\n";
    }
    return out;
}

}  // namespace tlshield::trainer
