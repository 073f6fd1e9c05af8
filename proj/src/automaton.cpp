#include "tlshield/automaton.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

namespace tlshield::automaton {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> words(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

std::string letter_text(const Ldgba& a, Letter l) {
    std::string out = "{";
    bool first = true;
    for (const auto& n : ltl::names_of(a.aps, l)) {
        out += (first ? "" : ",") + n;
        first = false;
    }
    return out + "}";
}

// Tarjan SCC over an adjacency list; returns the component id of each vertex.
std::vector<int> scc_ids(const std::vector<std::vector<int>>& adj, int& count) {
    const int n = static_cast<int>(adj.size());
    std::vector<int> index(n, -1), low(n, 0), comp(n, -1), stack;
    std::vector<bool> on(n, false);
    int counter = 0;
    count = 0;
    // Iterative to keep deep machines off the call stack.
    std::vector<std::pair<int, std::size_t>> work;
    for (int root = 0; root < n; ++root) {
        if (index[root] >= 0) continue;
        work.push_back({root, 0});
        while (!work.empty()) {
            auto& [v, it] = work.back();
            if (it == 0 && index[v] < 0) {
                index[v] = low[v] = counter++;
                stack.push_back(v);
                on[v] = true;
            }
            if (it < adj[v].size()) {
                int w = adj[v][it++];
                if (index[w] < 0) {
                    work.push_back({w, 0});
                } else if (on[w]) {
                    low[v] = std::min(low[v], index[w]);
                }
                continue;
            }
            if (low[v] == index[v]) {
                int w;
                do {
                    w = stack.back();
                    stack.pop_back();
                    on[w] = false;
                    comp[w] = count;
                } while (w != v);
                ++count;
            }
            int done = v;
            work.pop_back();
            if (!work.empty()) low[work.back().first] = std::min(low[work.back().first], low[done]);
        }
    }
    return comp;
}

int run_lasso(const Ldgba& a, const std::vector<Letter>& prefix, const std::vector<Letter>& cycle, bool embedded) {
    if (a.has_nondeterminism()) throw AutomatonError("lasso acceptance requires an automaton without nondeterministic states");
    if (cycle.empty()) throw std::invalid_argument("lasso cycle must be non-empty");
    // Run records hold (q, entry frontier, B); these decide the credited sets of the embedded state.
    struct Rec {
        int q;
        Frontier entry;
        bool B;
    };
    std::vector<Rec> run;
    ELdgbaState x = initial_state(a);
    Frontier entry = x.T;
    for (Letter l : prefix) {
        run.push_back({x.q, entry, x.round_flag});
        entry = x.T;
        x = embedded_step(a, x, l);
    }
    std::map<std::tuple<int, Frontier, Frontier, bool, std::size_t>, std::size_t> seen;
    std::size_t pos = 0;
    std::size_t start = 0;
    for (;;) {
        auto key = embedded ? std::make_tuple(x.q, entry, x.T, x.round_flag, pos) : std::make_tuple(x.q, Frontier{0}, Frontier{0}, false, pos);
        auto [it, fresh] = seen.emplace(key, run.size());
        if (!fresh) {
            start = it->second;
            break;
        }
        run.push_back({x.q, entry, x.round_flag});
        entry = x.T;
        x = embedded_step(a, x, cycle[pos]);
        pos = (pos + 1) % cycle.size();
    }
    Frontier hit = 0;
    for (std::size_t k = start; k < run.size(); ++k) {
        const Frontier m = a.membership[run[k].q];
        hit |= embedded ? (m & credit_mask(a, run[k].entry, run[k].B)) : m;
    }
    return hit == full_frontier(a);
}

std::vector<Letter> remap(const Ldgba& a, const std::vector<std::string>& aps, const std::vector<Letter>& ls) {
    if (aps == a.aps) return ls;
    std::vector<Letter> out;
    for (Letter l : ls) out.push_back(a.letter(ltl::names_of(aps, l)));
    return out;
}

}  // namespace

int Ldgba::state_index(const std::string& name) const {
    for (std::size_t i = 0; i < states.size(); ++i)
        if (states[i] == name) return static_cast<int>(i);
    return -1;
}

bool Ldgba::has_nondeterminism() const {
    return std::any_of(deterministic.begin(), deterministic.end(), [](bool d) { return !d; });
}

void finalize(Ldgba& a) {
    const int n = a.num_states();
    if (a.aps.size() > 16) throw AutomatonError("at most 16 atomic propositions are supported");
    if (n == 0) throw AutomatonError("automaton has no states");
    if (a.initial < 0 || a.initial >= n) throw AutomatonError("initial state is not declared");
    if (static_cast<int>(a.deterministic.size()) != n) a.deterministic.assign(n, true);
    if (a.accepting.empty()) throw AutomatonError("at least one accepting set is required");
    if (a.accepting.size() > 32) throw AutomatonError("at most 32 accepting sets are supported");
    a.membership.assign(n, 0);
    for (std::size_t j = 0; j < a.accepting.size(); ++j)
        for (int q : a.accepting[j]) {
            if (!a.deterministic[q])
                throw AutomatonError("accepting state '" + a.states[q] + "' is outside the deterministic part");
            a.membership[q] |= Frontier{1} << j;
        }
    for (const auto& e : a.eps)
        if (a.deterministic[e.source])
            throw AutomatonError("epsilon transition leaves deterministic state '" + a.states[e.source] + "'");
    for (const auto& t : a.transitions)
        if (!t.guard->is_boolean()) throw AutomatonError("guard on '" + a.states[t.source] + "' is not propositional");

    std::vector<ltl::CompiledFormula> guards;
    for (const auto& t : a.transitions) guards.emplace_back(*t.guard, a.aps);
    const Letter letters = Letter{1} << a.aps.size();
    a.delta.assign(static_cast<std::size_t>(n) * letters, -1);
    for (int q = 0; q < n; ++q) {
        if (!a.deterministic[q]) continue;
        for (Letter l = 0; l < letters; ++l) {
            int target = -1;
            for (std::size_t k = 0; k < a.transitions.size(); ++k) {
                if (a.transitions[k].source != q || !guards[k].eval_letter(l)) continue;
                if (target >= 0)
                    throw AutomatonError("state '" + a.states[q] + "' is nondeterministic on letter " + letter_text(a, l));
                target = a.transitions[k].target;
            }
            if (target < 0) throw AutomatonError("state '" + a.states[q] + "' has no transition on letter " + letter_text(a, l));
            if (!a.deterministic[target])
                throw AutomatonError("transition from '" + a.states[q] + "' enters nondeterministic state '" + a.states[target] + "'");
            a.delta[(static_cast<std::size_t>(q) << a.aps.size()) | l] = target;
        }
    }
    std::sort(a.unsafe.begin(), a.unsafe.end());
    a.unsafe.erase(std::unique(a.unsafe.begin(), a.unsafe.end()), a.unsafe.end());
    unsafe_states(a, a.unsafe);
}

Ldgba parse_automaton(const std::string& text) {
    Ldgba a;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    bool have_states = false, have_initial = false, have_accepting = false;
    std::string initial_name;
    std::vector<std::string> det_names, unsafe_names;
    bool have_det = false;
    std::vector<std::pair<std::string, std::vector<std::string>>> acc;
    struct PendingTrans {
        std::string src, dst, guard;
        int line;
    };
    std::vector<PendingTrans> trans, eps;

    auto fail = [&](const std::string& msg) -> AutomatonError {
        return AutomatonError("line " + std::to_string(lineno) + ": " + msg);
    };

    while (std::getline(in, raw)) {
        ++lineno;
        auto hash = raw.find('#');
        std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        auto colon = line.find(':');
        if (colon == std::string::npos) throw fail("expected 'key: value'");
        std::string key = trim(line.substr(0, colon));
        std::string rest = trim(line.substr(colon + 1));
        if (key == "aps") {
            a.aps = words(rest);
        } else if (key == "states") {
            a.states = words(rest);
            have_states = true;
        } else if (key == "initial") {
            initial_name = rest;
            have_initial = true;
        } else if (key == "deterministic") {
            det_names = words(rest);
            have_det = true;
        } else if (key == "unsafe") {
            unsafe_names = words(rest);
        } else if (key == "accepting") {
            std::istringstream sets(rest);
            for (std::string part; std::getline(sets, part, ';');) {
                auto eq = part.find('=');
                if (eq == std::string::npos) throw fail("accepting set needs 'name = states'");
                acc.push_back({trim(part.substr(0, eq)), words(part.substr(eq + 1))});
            }
            have_accepting = true;
        } else if (key == "trans" || key == "eps") {
            auto arrow = rest.find("->");
            if (arrow == std::string::npos) throw fail("expected 'source -> target'");
            std::string src = trim(rest.substr(0, arrow));
            std::string tail = rest.substr(arrow + 2);
            std::string dst = trim(tail), guard;
            if (key == "trans") {
                auto gc = tail.find(':');
                if (gc == std::string::npos) throw fail("transition needs ': guard'");
                dst = trim(tail.substr(0, gc));
                guard = trim(tail.substr(gc + 1));
                if (guard.empty()) throw fail("empty guard");
            }
            (key == "trans" ? trans : eps).push_back({src, dst, guard, lineno});
        } else {
            throw fail("unknown key '" + key + "'");
        }
    }
    if (!have_states) throw AutomatonError("missing 'states:' line");
    if (!have_initial) throw AutomatonError("missing 'initial:' line");
    if (!have_accepting) throw AutomatonError("missing 'accepting:' line");

    std::set<std::string> uniq(a.states.begin(), a.states.end());
    if (uniq.size() != a.states.size()) throw AutomatonError("duplicate state name");
    std::set<std::string> ap_set(a.aps.begin(), a.aps.end());
    if (ap_set.size() != a.aps.size()) throw AutomatonError("duplicate atomic proposition");

    auto idx = [&](const std::string& name, int line) {
        int i = a.state_index(name);
        if (i < 0) throw AutomatonError("line " + std::to_string(line) + ": unknown state '" + name + "'");
        return i;
    };
    a.initial = idx(initial_name, 0);
    a.deterministic.assign(a.states.size(), !have_det);
    for (const auto& d : det_names) a.deterministic[idx(d, 0)] = true;
    for (const auto& [name, members] : acc) {
        a.accepting_names.push_back(name);
        std::vector<int> set;
        for (const auto& m : members) set.push_back(idx(m, 0));
        std::sort(set.begin(), set.end());
        a.accepting.push_back(set);
    }
    for (const auto& u : unsafe_names) a.unsafe.push_back(idx(u, 0));
    for (const auto& t : trans) {
        ltl::FormulaPtr g;
        try {
            g = ltl::parse_ltl(t.guard, ap_set);
        } catch (const ltl::ParseError& e) {
            throw AutomatonError("line " + std::to_string(t.line) + ": guard: " + e.what());
        }
        a.transitions.push_back({idx(t.src, t.line), g, idx(t.dst, t.line)});
    }
    for (const auto& e : eps) a.eps.push_back({idx(e.src, e.line), idx(e.dst, e.line)});
    finalize(a);
    return a;
}

Ldgba load_automaton(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw AutomatonError("cannot open automaton file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_automaton(ss.str());
}

std::string serialize(const Ldgba& a) {
    auto join = [&](const std::vector<int>& ids) {
        std::string out;
        for (int i : ids) out += (out.empty() ? "" : " ") + a.states[i];
        return out;
    };
    std::ostringstream out;
    out << "aps:";
    for (const auto& p : a.aps) out << ' ' << p;
    out << "\nstates:";
    for (const auto& s : a.states) out << ' ' << s;
    out << "\ninitial: " << a.states[a.initial] << "\ndeterministic:";
    for (int q = 0; q < a.num_states(); ++q)
        if (a.deterministic[q]) out << ' ' << a.states[q];
    out << "\naccepting:";
    for (std::size_t j = 0; j < a.accepting.size(); ++j)
        out << (j ? " ;" : "") << ' ' << a.accepting_names[j] << " = " << join(a.accepting[j]);
    out << "\nunsafe:" << (a.unsafe.empty() ? "" : " ") << join(a.unsafe) << '\n';
    std::vector<std::tuple<int, int, std::string>> ts;
    for (const auto& t : a.transitions) ts.emplace_back(t.source, t.target, ltl::to_string(*t.guard));
    std::sort(ts.begin(), ts.end());
    for (const auto& [s, t, g] : ts) out << "trans: " << a.states[s] << " -> " << a.states[t] << " : " << g << '\n';
    std::vector<std::pair<int, int>> es;
    for (const auto& e : a.eps) es.emplace_back(e.source, e.target);
    std::sort(es.begin(), es.end());
    for (const auto& [s, t] : es) out << "eps: " << a.states[s] << " -> " << a.states[t] << '\n';
    return out.str();
}

Frontier full_frontier(const Ldgba& a) {
    return a.num_sets() >= 32 ? ~Frontier{0} : (Frontier{1} << a.num_sets()) - 1;
}

int step(const Ldgba& a, int q, Letter sigma) {
    if (q < 0 || q >= a.num_states()) throw std::out_of_range("state index out of range");
    if (!a.deterministic[q]) throw AutomatonError("step called on nondeterministic state '" + a.states[q] + "'");
    return a.delta[(static_cast<std::size_t>(q) << a.aps.size()) | (sigma & ((Letter{1} << a.aps.size()) - 1))];
}

std::pair<Frontier, bool> frontier_update(const Ldgba& a, int q_next, Frontier T) {
    const Frontier hit = a.membership[q_next];
    if (hit == 0) return {T, false};
    const Frontier rest = T & ~hit;
    if (rest != 0) return {rest, false};
    const Frontier reset = full_frontier(a) & ~hit;
    return {reset != 0 ? reset : full_frontier(a), true};
}

ELdgbaState initial_state(const Ldgba& a) { return {a.initial, full_frontier(a), false}; }

ELdgbaState embedded_step(const Ldgba& a, const ELdgbaState& x, Letter sigma) {
    const int q = step(a, x.q, sigma);
    auto [T, B] = frontier_update(a, q, x.T);
    return {q, T, B};
}

// x.T is the frontier held before arrival. An arrival that completes a round
// credits every set of q, including those carried into the new round.
bool is_accepting(const Ldgba& a, const ELdgbaState& x) { return (a.membership[x.q] & credit_mask(a, x.T, x.round_flag)) != 0; }

std::vector<int> sink_states(const Ldgba& a) {
    const int n = a.num_states();
    std::vector<std::vector<int>> adj(n);
    std::vector<bool> self(n, false);
    const Letter letters = Letter{1} << a.aps.size();
    for (const auto& t : a.transitions) {
        ltl::CompiledFormula g(*t.guard, a.aps);
        bool sat = false;
        for (Letter l = 0; l < letters && !sat; ++l) sat = g.eval_letter(l);
        if (!sat) continue;
        adj[t.source].push_back(t.target);
        if (t.source == t.target) self[t.source] = true;
    }
    for (const auto& e : a.eps) {
        adj[e.source].push_back(e.target);
        if (e.source == e.target) self[e.source] = true;
    }
    int count = 0;
    auto comp = scc_ids(adj, count);
    std::vector<int> size(count, 0);
    std::vector<Frontier> meets(count, 0);
    std::vector<bool> cyclic(count, false);
    for (int q = 0; q < n; ++q) {
        ++size[comp[q]];
        meets[comp[q]] |= a.membership[q];
        if (self[q]) cyclic[comp[q]] = true;
    }
    std::vector<std::vector<int>> radj(n);
    for (int q = 0; q < n; ++q)
        for (int t : adj[q]) radj[t].push_back(q);
    std::vector<bool> good(n, false);
    std::vector<int> queue;
    for (int q = 0; q < n; ++q) {
        const int c = comp[q];
        if ((size[c] > 1 || cyclic[c]) && meets[c] == full_frontier(a)) {
            good[q] = true;
            queue.push_back(q);
        }
    }
    while (!queue.empty()) {
        int v = queue.back();
        queue.pop_back();
        for (int u : radj[v])
            if (!good[u]) {
                good[u] = true;
                queue.push_back(u);
            }
    }
    std::vector<int> out;
    for (int q = 0; q < n; ++q)
        if (!good[q]) out.push_back(q);
    return out;
}

std::vector<int> unsafe_states(const Ldgba& a, const std::vector<int>& declared) {
    if (declared.empty()) return {};
    auto sinks = sink_states(a);
    std::vector<int> out;
    for (int q : declared) {
        if (!std::binary_search(sinks.begin(), sinks.end(), q))
            throw AutomatonError("declared unsafe state '" + a.states[q] + "' is not a sink");
        out.push_back(q);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<int> goal_states(const Ldgba& a) {
    std::vector<int> out;
    const Letter letters = Letter{1} << a.aps.size();
    for (int q = 0; q < a.num_states(); ++q) {
        if (!a.deterministic[q] || a.membership[q] != full_frontier(a)) continue;
        bool closed = true;
        for (Letter l = 0; l < letters && closed; ++l) {
            int t = step(a, q, l);
            closed = t == q || std::binary_search(a.unsafe.begin(), a.unsafe.end(), t);
        }
        if (closed) out.push_back(q);
    }
    return out;
}

int add_virtual_sink(Ldgba& a) {
    std::string name = "__unsafe_sink";
    while (a.state_index(name) >= 0) name += "_";
    a.states.push_back(name);
    a.deterministic.push_back(true);
    const int q = a.num_states() - 1;
    a.transitions.push_back({q, ltl::make_true(), q});
    a.unsafe.push_back(q);
    finalize(a);
    return q;
}

bool lasso_accepts(const Ldgba& a, const std::vector<Letter>& prefix, const std::vector<Letter>& cycle) {
    return run_lasso(a, prefix, cycle, false);
}

bool lasso_accepts_embedded(const Ldgba& a, const std::vector<Letter>& prefix, const std::vector<Letter>& cycle) {
    return run_lasso(a, prefix, cycle, true);
}

bool lasso_accepts(const Ldgba& a, const ltl::LassoWord& w) {
    return lasso_accepts(a, remap(a, w.aps, w.prefix), remap(a, w.aps, w.cycle));
}

bool lasso_accepts_embedded(const Ldgba& a, const ltl::LassoWord& w) {
    return lasso_accepts_embedded(a, remap(a, w.aps, w.prefix), remap(a, w.aps, w.cycle));
}

EquivalenceReport check_equivalence(const Ldgba& a, const ltl::Formula* f, int max_prefix, int max_cycle) {
    if (a.has_nondeterminism()) throw AutomatonError("equivalence check requires an automaton without nondeterministic states");
    if (max_prefix < 0 || max_cycle < 1) throw std::invalid_argument("need prefix >= 0 and cycle >= 1");
    std::optional<ltl::CompiledFormula> phi;
    if (f) phi.emplace(*f, a.aps);
    const Letter letters = Letter{1} << a.aps.size();
    EquivalenceReport rep;
    std::vector<Letter> prefix, cycle;
    // Odometer over all words of a given length.
    auto words_of = [&](int len, auto&& body) {
        std::vector<Letter> w(len, 0);
        for (;;) {
            body(w);
            int i = len - 1;
            while (i >= 0 && ++w[i] == letters) w[i--] = 0;
            if (i < 0) return;
        }
    };
    for (int p = 0; p <= max_prefix; ++p)
        words_of(p, [&](const std::vector<Letter>& pre) {
            for (int c = 1; c <= max_cycle; ++c)
                words_of(c, [&](const std::vector<Letter>& cyc) {
                    ++rep.words;
                    const bool d = lasso_accepts(a, pre, cyc);
                    const bool e = lasso_accepts_embedded(a, pre, cyc);
                    const bool l = phi ? phi->eval_lasso(pre, cyc) : d;
                    if (d == e && d == l) return;
                    if (rep.mismatches++ == 0) {
                        rep.counterexample = ltl::LassoWord{a.aps, pre, cyc};
                        rep.ltl = l;
                        rep.ldgba = d;
                        rep.eldgba = e;
                    }
                });
        });
    return rep;
}

}  // namespace tlshield::automaton
