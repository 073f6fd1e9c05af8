#include "tlshield/oracle.hpp"

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

namespace tlshield::oracle {

namespace {

using Adj = std::vector<std::vector<int>>;

// Iterative Tarjan; returns the component id of every vertex (-1 for vertices not in `active`).
std::vector<int> scc(const Adj& adj, const std::vector<char>& active, int* count) {
    const int n = static_cast<int>(adj.size());
    std::vector<int> index(n, -1), low(n, 0), comp(n, -1), stack;
    std::vector<char> on(n, 0);
    int next = 0, ncomp = 0;
    struct Frame {
        int v;
        std::size_t edge;
    };
    for (int root = 0; root < n; ++root) {
        if (!active[root] || index[root] >= 0) continue;
        std::vector<Frame> call{{root, 0}};
        index[root] = low[root] = next++;
        stack.push_back(root);
        on[root] = 1;
        while (!call.empty()) {
            Frame& f = call.back();
            if (f.edge < adj[f.v].size()) {
                const int w = adj[f.v][f.edge++];
                if (!active[w]) continue;
                if (index[w] < 0) {
                    index[w] = low[w] = next++;
                    stack.push_back(w);
                    on[w] = 1;
                    call.push_back({w, 0});
                } else if (on[w]) {
                    low[f.v] = std::min(low[f.v], index[w]);
                }
                continue;
            }
            const int v = f.v;
            call.pop_back();
            if (!call.empty()) low[call.back().v] = std::min(low[call.back().v], low[v]);
            if (low[v] == index[v]) {
                int w;
                do {
                    w = stack.back();
                    stack.pop_back();
                    on[w] = 0;
                    comp[w] = ncomp;
                } while (w != v);
                ++ncomp;
            }
        }
    }
    if (count) *count = ncomp;
    return comp;
}

Frontier all_sets(int f) { return f >= 32 ? ~Frontier{0} : (Frontier{1} << f) - 1; }

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

void FiniteMdp::validate() const {
    if (num_states < 1) throw OracleError("MDP has no states");
    if (static_cast<int>(trans.size()) != num_states || static_cast<int>(labels.size()) != num_states)
        throw OracleError("MDP tables do not match the state count");
    if (initial < 0 || initial >= num_states) throw OracleError("initial state out of range");
    for (int s = 0; s < num_states; ++s) {
        if (trans[s].empty()) throw OracleError("state " + std::to_string(s) + " has no actions");
        for (std::size_t u = 0; u < trans[s].size(); ++u) {
            double total = 0.0;
            for (const auto& o : trans[s][u]) {
                if (o.target < 0 || o.target >= num_states || !(o.p >= 0)) throw OracleError("bad outcome in state " + std::to_string(s));
                total += o.p;
            }
            if (std::abs(total - 1.0) > 1e-12)
                throw OracleError("probabilities of state " + std::to_string(s) + " action " + std::to_string(u) + " sum to " + fmt(total));
        }
    }
}

FiniteProduct build_product(const FiniteMdp& mdp, const automaton::Ldgba& a, std::size_t cap) {
    mdp.validate();
    if (a.has_nondeterminism()) throw OracleError("product construction needs an automaton without nondeterministic states");
    FiniteProduct P;
    P.num_sets = a.num_sets();
    std::map<std::tuple<int, int, Frontier, Frontier, bool>, int> index;
    auto intern = [&](const ProductNode& n) {
        auto key = std::make_tuple(n.s, n.q, n.entry, n.T, n.B);
        auto [it, fresh] = index.emplace(key, static_cast<int>(P.nodes.size()));
        if (fresh) {
            if (P.nodes.size() >= cap) throw OracleError("product exceeds the state cap of " + std::to_string(cap));
            P.nodes.push_back(n);
        }
        return it->second;
    };
    const auto x0 = automaton::initial_state(a);
    intern({mdp.initial, x0.q, x0.T, x0.T, false});
    for (std::size_t i = 0; i < P.nodes.size(); ++i) {
        const ProductNode n = P.nodes[i];
        const auto nx = automaton::embedded_step(a, {n.q, n.T, n.B}, a.letter(mdp.labels[n.s]));
        std::vector<std::vector<Outcome>> acts;
        for (const auto& outs : mdp.trans[n.s]) {
            std::map<int, double> merged;
            for (const auto& o : outs)
                if (o.p > 0) merged[intern({o.target, nx.q, n.T, nx.T, nx.round_flag})] += o.p;
            std::vector<Outcome> v;
            for (const auto& [t, p] : merged) v.push_back({t, p});
            acts.push_back(std::move(v));
        }
        P.trans.push_back(std::move(acts));
    }
    for (const auto& n : P.nodes) {
        P.acc.push_back(a.membership[n.q] & automaton::credit_mask(a, n.entry, n.B));
        P.unsafe.push_back(std::binary_search(a.unsafe.begin(), a.unsafe.end(), n.q) ? 1 : 0);
    }
    return P;
}

RewardModel standard_rewards(const FiniteProduct& prod, const reward::RewardParams& p) {
    const int n = prod.size();
    RewardModel m{Vec(n), Vec(n), Vec::Zero(n)};
    for (int x = 0; x < n; ++x) {
        m.R(x) = prod.accepting(x) ? 1.0 - p.r_f : 0.0;
        m.gamma(x) = prod.accepting(x) ? p.r_f : p.gamma_f;
    }
    return m;
}

RewardModel with_unsafe_penalty(RewardModel m, const FiniteProduct& prod, double penalty) {
    for (int x = 0; x < prod.size(); ++x)
        if (prod.unsafe[x]) m.R(x) += penalty;
    return m;
}

Vec q_values(const FiniteProduct& prod, const RewardModel& m, const Vec& V, int x) {
    const auto& acts = prod.trans[x];
    Vec q(static_cast<Eigen::Index>(acts.size()));
    for (std::size_t u = 0; u < acts.size(); ++u) {
        double e = 0.0;
        for (const auto& o : acts[u]) e += o.p * (m.phi(o.target) + V(o.target));
        q(static_cast<Eigen::Index>(u)) = m.R(x) - m.phi(x) + m.gamma(x) * e;
    }
    return q;
}

int greedy_action(const FiniteProduct& prod, const RewardModel& m, const Vec& V, int x) {
    const Vec q = q_values(prod, m, V, x);
    const double best = q.maxCoeff();
    const double tie = 1e-9 * (1.0 + std::abs(best));
    for (Eigen::Index u = 0; u < q.size(); ++u)
        if (q(u) >= best - tie) return static_cast<int>(u);
    return 0;
}

namespace {

Vec evaluate_policy(const FiniteProduct& prod, const RewardModel& m, const std::vector<int>& pi) {
    const int n = prod.size();
    std::vector<Eigen::Triplet<double>> trips;
    Vec b(n);
    for (int x = 0; x < n; ++x) {
        trips.emplace_back(x, x, 1.0);
        double e = 0.0;
        for (const auto& o : prod.trans[x][pi[x]]) {
            trips.emplace_back(x, o.target, -m.gamma(x) * o.p);
            e += o.p * m.phi(o.target);
        }
        b(x) = m.R(x) - m.phi(x) + m.gamma(x) * e;
    }
    Eigen::SparseMatrix<double> A(n, n);
    A.setFromTriplets(trips.begin(), trips.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) throw OracleError("policy evaluation system is singular");
    return lu.solve(b);
}

double bellman_residual(const FiniteProduct& prod, const RewardModel& m, const Vec& V) {
    double r = 0.0;
    for (int x = 0; x < prod.size(); ++x) r = std::max(r, std::abs(q_values(prod, m, V, x).maxCoeff() - V(x)));
    return r;
}

}  // namespace

ViResult value_iteration(const FiniteProduct& prod, const RewardModel& m, double tol) {
    if (!(tol > 0)) throw std::invalid_argument("tolerance must be positive");
    const int n = prod.size();
    ViResult res;
    std::vector<int> pi(n, 0);
    Vec V = evaluate_policy(prod, m, pi);
    for (int it = 0; it < 10000; ++it) {
        ++res.iterations;
        bool changed = false;
        for (int x = 0; x < n; ++x) {
            const Vec q = q_values(prod, m, V, x);
            Eigen::Index u;
            const double best = q.maxCoeff(&u);
            if (best > q(pi[x]) + 1e-12 * (1.0 + std::abs(best))) {
                pi[x] = static_cast<int>(u);
                changed = true;
            }
        }
        if (!changed) break;
        V = evaluate_policy(prod, m, pi);
    }
    // Plain value iteration polishes whatever the linear solves left behind.
    res.residual = bellman_residual(prod, m, V);
    for (int k = 0; k < 100000 && res.residual > tol; ++k) {
        Vec next(n);
        for (int x = 0; x < n; ++x) next(x) = q_values(prod, m, V, x).maxCoeff();
        res.residual = (next - V).cwiseAbs().maxCoeff();
        V = std::move(next);
    }
    res.V = V;
    res.policy.resize(n);
    for (int x = 0; x < n; ++x) res.policy[x] = greedy_action(prod, m, V, x);
    return res;
}

std::vector<Mec> mec_decomposition(const FiniteProduct& prod) {
    const int n = prod.size();
    std::vector<std::vector<char>> enabled(n);
    for (int x = 0; x < n; ++x) enabled[x].assign(prod.trans[x].size(), 1);
    std::vector<char> active(n, 1);
    std::vector<int> comp;
    for (;;) {
        Adj adj(n);
        for (int x = 0; x < n; ++x) {
            if (!active[x]) continue;
            for (std::size_t u = 0; u < enabled[x].size(); ++u)
                if (enabled[x][u])
                    for (const auto& o : prod.trans[x][u]) adj[x].push_back(o.target);
        }
        comp = scc(adj, active, nullptr);
        bool changed = false;
        for (int x = 0; x < n; ++x) {
            if (!active[x]) continue;
            bool any = false;
            for (std::size_t u = 0; u < enabled[x].size(); ++u) {
                if (!enabled[x][u]) continue;
                for (const auto& o : prod.trans[x][u])
                    if (!active[o.target] || comp[o.target] != comp[x]) {
                        enabled[x][u] = 0;
                        changed = true;
                        break;
                    }
                any = any || enabled[x][u];
            }
            if (!any) {
                active[x] = 0;
                changed = true;
            }
        }
        if (!changed) break;
    }
    std::map<int, Mec> by_comp;
    for (int x = 0; x < n; ++x) {
        if (!active[x]) continue;
        Mec& m = by_comp[comp[x]];
        m.states.push_back(x);
        std::vector<int> acts;
        for (std::size_t u = 0; u < enabled[x].size(); ++u)
            if (enabled[x][u]) acts.push_back(static_cast<int>(u));
        m.actions.push_back(std::move(acts));
    }
    std::vector<Mec> out;
    for (auto& [c, m] : by_comp) out.push_back(std::move(m));
    std::sort(out.begin(), out.end(), [](const Mec& a, const Mec& b) { return a.states.front() < b.states.front(); });
    return out;
}

std::vector<Mec> amec_filter(const std::vector<Mec>& mecs, const FiniteProduct& prod) {
    std::vector<Mec> out;
    for (const auto& m : mecs) {
        Frontier hit = 0;
        for (int x : m.states) hit |= prod.acc[x];
        if (hit == all_sets(prod.num_sets)) out.push_back(m);
    }
    return out;
}

Vec max_sat_probability(const FiniteProduct& prod) {
    const int n = prod.size();
    std::vector<char> target(n, 0);
    for (const auto& m : amec_filter(mec_decomposition(prod), prod))
        for (int x : m.states) target[x] = 1;

    // Prob1E: greatest fixpoint of states that can stay inside U while reaching the target.
    std::vector<char> U(n, 1);
    for (;;) {
        std::vector<char> R = target;
        for (bool grew = true; grew;) {
            grew = false;
            for (int x = 0; x < n; ++x) {
                if (R[x] || !U[x]) continue;
                for (const auto& outs : prod.trans[x]) {
                    bool inside = true, hits = false;
                    for (const auto& o : outs) {
                        inside = inside && U[o.target];
                        hits = hits || R[o.target];
                    }
                    if (inside && hits) {
                        R[x] = 1;
                        grew = true;
                        break;
                    }
                }
            }
        }
        if (R == U) break;
        U = R;
    }
    // States with no path to the target stay at zero.
    std::vector<char> reach = target;
    for (bool grew = true; grew;) {
        grew = false;
        for (int x = 0; x < n; ++x) {
            if (reach[x]) continue;
            for (const auto& outs : prod.trans[x])
                for (const auto& o : outs)
                    if (reach[o.target] && !reach[x]) {
                        reach[x] = 1;
                        grew = true;
                    }
        }
    }
    Vec V = Vec::Zero(n);
    for (int x = 0; x < n; ++x)
        if (U[x]) V(x) = 1.0;
    for (int it = 0; it < 1000000; ++it) {
        double delta = 0.0;
        for (int x = 0; x < n; ++x) {
            if (U[x] || !reach[x]) continue;
            double best = 0.0;
            for (const auto& outs : prod.trans[x]) {
                double e = 0.0;
                for (const auto& o : outs) e += o.p * V(o.target);
                best = std::max(best, e);
            }
            delta = std::max(delta, std::abs(best - V(x)));
            V(x) = best;
        }
        if (delta < 1e-13) break;
    }
    return V;
}

ChainAnalysis policy_sat_probability(const FiniteProduct& prod, const std::vector<int>& policy) {
    const int n = prod.size();
    if (static_cast<int>(policy.size()) != n) throw std::invalid_argument("policy size does not match the product");
    Adj adj(n);
    for (int x = 0; x < n; ++x) {
        if (policy[x] < 0 || policy[x] >= static_cast<int>(prod.trans[x].size())) throw std::invalid_argument("policy action out of range");
        for (const auto& o : prod.trans[x][policy[x]]) adj[x].push_back(o.target);
    }
    int ncomp = 0;
    const auto comp = scc(adj, std::vector<char>(n, 1), &ncomp);
    std::vector<char> bottom(ncomp, 1);
    for (int x = 0; x < n; ++x)
        for (int y : adj[x])
            if (comp[y] != comp[x]) bottom[comp[x]] = 0;
    ChainAnalysis res;
    std::vector<int> class_of(ncomp, -1);
    std::vector<Frontier> hit;
    for (int x = 0; x < n; ++x) {
        const int c = comp[x];
        if (!bottom[c]) continue;
        if (class_of[c] < 0) {
            class_of[c] = static_cast<int>(res.classes.size());
            res.classes.emplace_back();
            hit.push_back(0);
        }
        res.classes[class_of[c]].push_back(x);
        hit[class_of[c]] |= prod.acc[x];
    }
    const Frontier full = all_sets(prod.num_sets);
    for (Frontier h : hit) {
        res.good.push_back(h == full ? 1 : 0);
        if (h != 0 && h != full) res.recurrent_classes = false;
    }
    // Absorption probabilities into good classes via one sparse solve over transient states.
    std::vector<int> tindex(n, -1);
    int nt = 0;
    for (int x = 0; x < n; ++x)
        if (!bottom[comp[x]]) tindex[x] = nt++;
    res.per_state = Vec::Zero(n);
    for (int x = 0; x < n; ++x)
        if (bottom[comp[x]] && res.good[class_of[comp[x]]]) res.per_state(x) = 1.0;
    if (nt > 0) {
        std::vector<Eigen::Triplet<double>> trips;
        Vec b = Vec::Zero(nt);
        for (int x = 0; x < n; ++x) {
            if (tindex[x] < 0) continue;
            trips.emplace_back(tindex[x], tindex[x], 1.0);
            for (const auto& o : prod.trans[x][policy[x]]) {
                if (tindex[o.target] >= 0)
                    trips.emplace_back(tindex[x], tindex[o.target], -o.p);
                else
                    b(tindex[x]) += o.p * res.per_state(o.target);
            }
        }
        Eigen::SparseMatrix<double> A(nt, nt);
        A.setFromTriplets(trips.begin(), trips.end());
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(A);
        if (lu.info() != Eigen::Success) throw OracleError("absorption system is singular");
        const Vec v = lu.solve(b);
        for (int x = 0; x < n; ++x)
            if (tindex[x] >= 0) res.per_state(x) = v(tindex[x]);
    }
    res.probability = res.per_state(0);
    return res;
}

ShapedProduct shaped_product(const FiniteProduct& prod, const automaton::Ldgba& a, const reward::RewardParams& p, std::size_t cap) {
    ShapedProduct out;
    out.prod.num_sets = prod.num_sets;
    const reward::ShapingState S0 = reward::initial_shaping(a);
    // Augmented node: (base node, current T_Phi, whether the base node's q was in T_Phi on arrival).
    std::map<std::tuple<int, std::vector<char>, bool>, int> index;
    std::vector<std::vector<char>> tphi;
    std::vector<char> flag;
    auto intern = [&](int x, const std::vector<char>& T, bool f) {
        auto [it, fresh] = index.emplace(std::make_tuple(x, T, f), static_cast<int>(out.base.size()));
        if (fresh) {
            if (out.base.size() >= cap) throw OracleError("shaped product exceeds the state cap");
            out.base.push_back(x);
            tphi.push_back(T);
            flag.push_back(f ? 1 : 0);
        }
        return it->second;
    };
    intern(0, S0.T_phi, false);
    for (std::size_t i = 0; i < out.base.size(); ++i) {
        const int x = out.base[i];
        const std::vector<char> T = tphi[i];
        std::vector<std::vector<Outcome>> acts;
        for (const auto& outs : prod.trans[x]) {
            std::vector<Outcome> v;
            for (const auto& o : outs) {
                const ProductNode& nn = prod.nodes[o.target];
                reward::ShapingState S{T, S0.T_phi0};
                const bool f = T[nn.q] != 0;
                const auto S1 = reward::shaping_update(nn.q, S, nn.B);
                v.push_back({intern(o.target, S1.T_phi, f), o.p});
            }
            acts.push_back(std::move(v));
        }
        out.prod.trans.push_back(std::move(acts));
    }
    const double bonus = p.eta_phi * (1.0 - p.r_f);
    out.phi = Vec(static_cast<Eigen::Index>(out.base.size()));
    for (std::size_t i = 0; i < out.base.size(); ++i) {
        const int x = out.base[i];
        out.prod.nodes.push_back(prod.nodes[x]);
        out.prod.acc.push_back(prod.acc[x]);
        out.prod.unsafe.push_back(prod.unsafe[x]);
        out.phi(static_cast<Eigen::Index>(i)) = flag[i] ? bonus : 0.0;
    }
    return out;
}

GridFixture parse_grid(const std::string& text, const std::string& base_dir) {
    GridFixture g;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    int sx = 0, sy = 0;
    std::vector<std::tuple<int, int, std::string, int>> cells;
    auto fail = [&](const std::string& msg) { throw OracleError("grid line " + std::to_string(lineno) + ": " + msg); };
    while (std::getline(in, raw)) {
        ++lineno;
        const std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) continue;
        const auto colon = line.find(':');
        if (colon == std::string::npos) fail("expected 'key: value'");
        const std::string key = trim(line.substr(0, colon));
        const std::string val = trim(line.substr(colon + 1));
        std::istringstream vs(val);
        if (key == "name") {
            g.name = val;
        } else if (key == "size") {
            if (!(vs >> g.width >> g.height) || g.width < 1 || g.height < 1) fail("size needs two positive integers");
        } else if (key == "slip") {
            if (!(vs >> g.slip) || g.slip < 0 || g.slip > 1) fail("slip must lie in [0, 1]");
        } else if (key == "start") {
            if (!(vs >> sx >> sy)) fail("start needs two integers");
        } else if (key == "automaton") {
            g.automaton_path = std::filesystem::path(val).is_absolute() ? val : (std::filesystem::path(base_dir) / val).lexically_normal().string();
        } else if (key == "safe_optimum") {
            g.safe_optimum = val == "true";
        } else if (key.rfind("cell", 0) == 0) {
            std::istringstream ks(key.substr(4));
            int x, y;
            if (!(ks >> x >> y)) fail("cell needs coordinates");
            cells.emplace_back(x, y, val, lineno);
        } else {
            fail("unknown key '" + key + "'");
        }
    }
    if (g.width < 1) throw OracleError("grid is missing 'size'");
    if (g.automaton_path.empty()) throw OracleError("grid is missing 'automaton'");
    auto inside = [&](int x, int y) { return x >= 0 && y >= 0 && x < g.width && y < g.height; };
    if (!inside(sx, sy)) throw OracleError("start lies outside the grid");
    g.start = sy * g.width + sx;
    g.labels.assign(static_cast<std::size_t>(g.width) * g.height, {});
    for (const auto& [x, y, names, ln] : cells) {
        lineno = ln;
        if (!inside(x, y)) fail("cell lies outside the grid");
        std::istringstream ns(names);
        std::string name;
        while (std::getline(ns, name, ',')) {
            name = trim(name);
            if (!name.empty()) g.labels[y * g.width + x].insert(name);
        }
    }
    return g;
}

GridFixture load_grid(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw OracleError("cannot open grid '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    GridFixture g = parse_grid(ss.str(), std::filesystem::path(path).parent_path().string());
    if (g.name.empty()) g.name = std::filesystem::path(path).stem().string();
    return g;
}

FiniteMdp grid_mdp(const GridFixture& g) {
    FiniteMdp m;
    m.num_states = g.width * g.height;
    m.labels = g.labels;
    m.initial = g.start;
    m.trans.resize(m.num_states);
    const int dx[4] = {0, 1, 0, -1}, dy[4] = {1, 0, -1, 0};
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x) {
            const int s = y * g.width + x;
            auto move = [&](int d) {
                const int nx = x + dx[d], ny = y + dy[d];
                return nx >= 0 && ny >= 0 && nx < g.width && ny < g.height ? ny * g.width + nx : s;
            };
            for (int d = 0; d < 4; ++d) {
                std::map<int, double> out;
                out[move(d)] += 1.0 - g.slip;
                out[move((d + 1) % 4)] += g.slip / 2;
                out[move((d + 3) % 4)] += g.slip / 2;
                std::vector<Outcome> v;
                for (const auto& [t, p] : out)
                    if (p > 0) v.push_back({t, p});
                m.trans[s].push_back(std::move(v));
            }
            m.trans[s].push_back({{s, 1.0}});
        }
    return m;
}

std::vector<CheckResult> run_fixture(const GridFixture& g) {
    std::vector<CheckResult> out;
    const auto a = automaton::load_automaton(g.automaton_path);
    const auto P = build_product(grid_mdp(g), a);
    out.push_back({g.name, "size", P.size() <= 500, std::to_string(P.size()) + " product states"});

    const double pmax = max_sat_probability(P)(0);
    bool recurrent_classes = true;

    // Greedy optimality over the gamma_F schedule; the equality is asserted at the tightest setting.
    std::string gaps;
    bool greedy_optimal = false;
    for (double gf : {0.99, 0.999, 0.9999}) {
        reward::RewardParams rp;
        rp.gamma_f = gf;
        rp.r_f = reward::coupled_r_f(gf);
        const auto vi = value_iteration(P, standard_rewards(P, rp));
        const auto ch = policy_sat_probability(P, vi.policy);
        recurrent_classes = recurrent_classes && ch.recurrent_classes;
        const double gap = std::abs(ch.probability - pmax);
        gaps += (gaps.empty() ? "" : " ") + std::string("gamma_F=") + std::to_string(gf).substr(0, 6) + ":gap=" + fmt(gap);
        if (gf == 0.9999) greedy_optimal = gap <= 1e-6;
    }
    out.push_back({g.name, "greedy_optimal", greedy_optimal, "max=" + fmt(pmax) + " " + gaps});

    reward::RewardParams rp;
    rp.gamma_f = 0.9999;
    rp.r_f = 0.99;
    const auto base = standard_rewards(P, rp);
    const auto plain = value_iteration(P, base);
    const auto sp = shaped_product(P, a, rp);
    RewardModel shaped{Vec(sp.prod.size()), Vec(sp.prod.size()), sp.phi};
    for (int y = 0; y < sp.prod.size(); ++y) {
        shaped.R(y) = base.R(sp.base[y]);
        shaped.gamma(y) = base.gamma(sp.base[y]);
    }
    const auto vs = value_iteration(sp.prod, shaped);
    int mismatches = 0;
    for (int y = 0; y < sp.prod.size(); ++y)
        if (vs.policy[y] != plain.policy[sp.base[y]]) ++mismatches;
    out.push_back({g.name, "shaping_invariant", mismatches == 0,
                   std::to_string(mismatches) + " argmax mismatches over " + std::to_string(sp.prod.size()) + " shaped states"});

    if (g.safe_optimum) {
        const auto vp = value_iteration(P, with_unsafe_penalty(base, P, rp.r_n));
        const auto ch = policy_sat_probability(P, vp.policy);
        recurrent_classes = recurrent_classes && ch.recurrent_classes;
        const double gap = std::abs(ch.probability - pmax);
        out.push_back({g.name, "penalized_optimal", gap <= 1e-6, "max=" + fmt(pmax) + " penalized=" + fmt(ch.probability)});
    }
    out.push_back({g.name, "recurrent_classes", recurrent_classes, recurrent_classes ? "every recurrent class meets all accepting sets or none" : "mixed class found"});
    return out;
}

std::vector<CheckResult> run_suite(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.path().extension() == ".grid") files.push_back(e.path().string());
    if (files.empty()) throw OracleError("no .grid fixtures in '" + dir + "'");
    std::sort(files.begin(), files.end());
    std::vector<CheckResult> out;
    for (const auto& f : files) {
        auto r = run_fixture(load_grid(f));
        out.insert(out.end(), r.begin(), r.end());
    }
    return out;
}

}  // namespace tlshield::oracle
