#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tlshield/trainer.hpp"

namespace tlshield::trainer {

namespace {

namespace pt = boost::property_tree;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// ptree keeps inline comments and quotes in values.
std::string clean_value(std::string v) {
    bool quoted = false;
    std::size_t cut = std::string::npos;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] == '"') quoted = !quoted;
        if (!quoted && (v[i] == '#' || v[i] == ';') && (i == 0 || v[i - 1] == ' ' || v[i - 1] == '\t')) {
            cut = i;
            break;
        }
    }
    v = trim(v.substr(0, cut));
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
    return v;
}

class Reader {
public:
    explicit Reader(const pt::ptree& tree) {
        for (const auto& [section, body] : tree) {
            if (body.empty()) throw ConfigError("key '" + section + "' appears outside a section");
            for (const auto& [key, value] : body) values_[section + "." + key] = clean_value(value.data());
        }
    }

    bool has(const std::string& k) const { return values_.count(k) > 0; }

    std::string str(const std::string& k, const std::string& def) {
        auto it = values_.find(k);
        if (it == values_.end()) return def;
        used_.insert(k);
        return it->second;
    }

    double num(const std::string& k, double def) {
        if (!has(k)) return def;
        const std::string v = str(k, "");
        try {
            std::size_t pos = 0;
            const double d = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw ConfigError("'" + k + "' expects a number, got '" + v + "'");
        }
    }

    long integer(const std::string& k, long def) {
        const double d = num(k, static_cast<double>(def));
        if (d != static_cast<double>(static_cast<long>(d))) throw ConfigError("'" + k + "' expects an integer");
        return static_cast<long>(d);
    }

    bool flag(const std::string& k, bool def) {
        if (!has(k)) return def;
        const std::string v = str(k, "");
        if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "off" || v == "no") return false;
        throw ConfigError("'" + k + "' expects true or false, got '" + v + "'");
    }

    std::vector<double> list(const std::string& k, std::vector<double> def) {
        if (!has(k)) return def;
        std::string v = str(k, "");
        if (!v.empty() && v.front() == '[') v.erase(0, 1);
        if (!v.empty() && v.back() == ']') v.pop_back();
        std::vector<double> out;
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (item.empty()) continue;
            try {
                out.push_back(std::stod(item));
            } catch (const std::exception&) {
                throw ConfigError("'" + k + "' has a non-numeric entry '" + item + "'");
            }
        }
        return out;
    }

    std::vector<std::string> keys_with_prefix(const std::string& prefix) const {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_)
            if (k.rfind(prefix, 0) == 0) out.push_back(k);
        return out;
    }

    void reject_unknown() const {
        for (const auto& [k, v] : values_)
            if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }

private:
    std::map<std::string, std::string> values_;
    std::set<std::string> used_;
};

}  // namespace

TrainConfig parse_config(const std::string& text, const std::string& base_dir) {
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config syntax: ") + e.what());
    }
    Reader r(tree);
    TrainConfig c;
    c.text = text;

    c.env = r.str("env.name", c.env);
    c.env_opt.uncertainty = r.num("env.uncertainty", 0.0);
    c.env_opt.sign = r.num("env.sign", 1.0);
    c.env_opt.dt = r.num("env.dt", 0.0);
    c.env_opt.second_order = r.flag("env.second_order", false);
    c.env_opt.region_half_width = r.num("env.region_half_width", c.env_opt.region_half_width);
    c.env_opt.noise_sigma = r.num("env.noise_sigma", -1.0);

    const std::string kind = r.str("task.kind", "infinite");
    if (kind == "finite")
        c.task = TaskKind::Finite;
    else if (kind == "infinite")
        c.task = TaskKind::Infinite;
    else
        throw ConfigError("task.kind must be finite or infinite");
    c.rounds_required = static_cast<int>(r.integer("task.rounds_required", c.rounds_required));
    c.eval_runs = static_cast<int>(r.integer("task.eval_runs", c.eval_runs));

    const std::string aut = r.str("automaton.path", "");
    if (aut.empty()) throw ConfigError("automaton.path is required");
    c.automaton_path = std::filesystem::path(aut).is_absolute() ? aut : (std::filesystem::path(base_dir) / aut).lexically_normal().string();

    c.reward.r_f = r.num("reward.r_f", c.reward.r_f);
    c.reward.gamma_f = r.num("reward.gamma_f", c.reward.gamma_f);
    c.reward.eta_phi = r.num("reward.eta_phi", c.reward.eta_phi);
    c.reward.r_n = r.num("reward.r_n", c.reward.r_n);
    c.reward.zero_tol = r.num("reward.zero_tol", c.reward.zero_tol);
    c.shaping = r.flag("reward.shaping", true);

    c.gp_enabled = r.flag("gp.enabled", true);
    c.gp.sigma_f = r.num("gp.sigma_f", c.gp.sigma_f);
    c.gp.lengthscale = r.num("gp.lengthscale", c.gp.lengthscale);
    const auto ls = r.list("gp.lengthscales", {});
    if (!ls.empty()) c.gp.lengthscales = Eigen::Map<const Vec>(ls.data(), static_cast<Eigen::Index>(ls.size()));
    c.gp.sigma_noise = r.num("gp.sigma_noise", c.gp.sigma_noise);
    c.gp.n_max = static_cast<int>(r.integer("gp.n_max", c.gp.n_max));
    c.gp.k_delta = r.num("gp.k_delta", c.gp.k_delta);
    c.gp.grid_search = r.flag("gp.grid_search", false);
    c.gp_refit = r.flag("gp.refit_every_episode", true);

    c.cbf.enabled = r.flag("cbf.enabled", true);
    c.cbf.k_eps = r.num("cbf.k_eps", c.cbf.k_eps);
    c.cbf.shared_slack = r.flag("cbf.shared_slack", c.cbf.shared_slack);
    c.cbf.total_objective = r.flag("cbf.total_objective", false);
    c.cbf.discrete = r.flag("cbf.discrete", false);
    c.cbf.eta = r.num("cbf.eta", c.cbf.eta);
    c.cbf.k_delta = c.gp.k_delta;
    c.cbf.poles = r.list("cbf.poles", c.cbf.poles);
    for (const auto& k : r.keys_with_prefix("cbf.poles_")) c.cbf.barrier_poles[k.substr(10)] = r.list(k, {});

    c.rl.lr_actor = r.num("rl.lr_actor", c.rl.lr_actor);
    c.rl.lr_critic = r.num("rl.lr_critic", c.rl.lr_critic);
    c.rl.tau_soft = r.num("rl.tau_soft", c.rl.tau_soft);
    c.rl.batch = static_cast<int>(r.integer("rl.batch", c.rl.batch));
    c.rl.capacity = static_cast<std::size_t>(r.integer("rl.capacity", static_cast<long>(c.rl.capacity)));
    c.rl.noise_std = r.num("rl.noise_std", c.rl.noise_std);
    c.rl.noise_decay = r.num("rl.noise_decay", c.rl.noise_decay);
    std::vector<double> hidden_default(c.rl.hidden.begin(), c.rl.hidden.end());
    c.rl.hidden.clear();
    for (double h : r.list("rl.hidden", hidden_default)) c.rl.hidden.push_back(static_cast<int>(h));
    c.updates_per_step = static_cast<int>(r.integer("rl.updates_per_step", c.updates_per_step));

    c.episodes = static_cast<int>(r.integer("trainer.episodes", c.episodes));
    c.steps = static_cast<int>(r.integer("trainer.steps", c.steps));
    c.seed = static_cast<std::uint64_t>(r.integer("trainer.seed", static_cast<long>(c.seed)));
    c.out_dir = r.str("trainer.out_dir", c.out_dir);
    c.run_id = r.str("trainer.run_id", c.run_id);
    c.guiding = r.flag("trainer.guiding", true);

    r.reject_unknown();

    if (c.episodes < 1) throw ConfigError("trainer.episodes must be at least 1");
    if (c.steps < 1) throw ConfigError("trainer.steps must be at least 1");
    if (c.rounds_required < 1) throw ConfigError("task.rounds_required must be at least 1");
    if (c.updates_per_step < 0) throw ConfigError("rl.updates_per_step must be non-negative");
    if (c.rl.hidden.empty()) throw ConfigError("rl.hidden needs at least one layer");
    try {
        c.reward.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

TrainConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    TrainConfig c = parse_config(ss.str(), std::filesystem::path(path).parent_path().string());
    c.source_path = path;
    if (const char* s = std::getenv("TLSHIELD_SEED"); s && *s) {
        try {
            c.seed = std::stoull(s);
        } catch (const std::exception&) {
            throw ConfigError(std::string("TLSHIELD_SEED is not an unsigned integer: ") + s);
        }
    }
    if (!std::filesystem::exists(c.automaton_path)) throw ConfigError("automaton file '" + c.automaton_path + "' does not exist");
    return c;
}

}  // namespace tlshield::trainer
