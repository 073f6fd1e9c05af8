#include "catch_amalgamated.hpp"

#include <cmath>
#include <deque>
#include <random>
#include <set>

#include "tlshield/oracle.hpp"

using namespace tlshield;
using namespace tlshield::oracle;
using Catch::Approx;

namespace {

const std::string kSrc = TLSHIELD_SOURCE_DIR;

// A product built directly from transition tables; acc[x] is the credited set mask.
FiniteProduct raw_product(std::vector<std::vector<std::vector<Outcome>>> trans, std::vector<Frontier> acc, int num_sets,
                          std::vector<char> unsafe = {}) {
    FiniteProduct p;
    p.trans = std::move(trans);
    p.acc = std::move(acc);
    p.num_sets = num_sets;
    for (int x = 0; x < static_cast<int>(p.trans.size()); ++x) p.nodes.push_back({x, 0, 0, 0, false});
    p.unsafe = unsafe.empty() ? std::vector<char>(p.trans.size(), 0) : std::move(unsafe);
    return p;
}

FiniteProduct random_product(std::mt19937_64& rng, int n, int num_sets) {
    std::vector<std::vector<std::vector<Outcome>>> trans(n);
    std::vector<Frontier> acc(n);
    for (int x = 0; x < n; ++x) {
        const int acts = 1 + static_cast<int>(rng() % 3);
        for (int u = 0; u < acts; ++u) {
            const int k = 1 + static_cast<int>(rng() % 2);
            std::set<int> targets;
            while (static_cast<int>(targets.size()) < k) targets.insert(static_cast<int>(rng() % n));
            std::vector<Outcome> outs;
            for (int t : targets) outs.push_back({t, 1.0 / k});
            trans[x].push_back(outs);
        }
        acc[x] = static_cast<Frontier>(rng() % (1u << num_sets)) & static_cast<Frontier>(rng() % (1u << num_sets));
    }
    return raw_product(std::move(trans), std::move(acc), num_sets);
}

struct BruteEc {
    std::vector<int> states;
    std::vector<std::vector<int>> actions;
};

// Maximal end components by subset enumeration.
std::vector<BruteEc> brute_mecs(const FiniteProduct& p) {
    const int n = p.size();
    std::vector<BruteEc> ecs;
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
        BruteEc ec;
        bool ok = true;
        for (int x = 0; x < n && ok; ++x) {
            if (!(mask >> x & 1u)) continue;
            std::vector<int> acts;
            for (int u = 0; u < static_cast<int>(p.trans[x].size()); ++u) {
                bool inside = true;
                for (const auto& o : p.trans[x][u]) inside = inside && (mask >> o.target & 1u);
                if (inside) acts.push_back(u);
            }
            ok = !acts.empty();
            ec.states.push_back(x);
            ec.actions.push_back(acts);
        }
        if (!ok) continue;
        // Strong connectivity under the retained actions: every state reaches every other.
        for (int src : ec.states) {
            unsigned seen = 1u << src;
            std::deque<int> q{src};
            while (!q.empty()) {
                const int x = q.front();
                q.pop_front();
                const auto pos = std::find(ec.states.begin(), ec.states.end(), x) - ec.states.begin();
                for (int u : ec.actions[pos])
                    for (const auto& o : p.trans[x][u])
                        if (!(seen >> o.target & 1u)) {
                            seen |= 1u << o.target;
                            q.push_back(o.target);
                        }
            }
            ok = ok && (seen & mask) == mask;
        }
        if (ok) ecs.push_back(ec);
    }
    std::vector<BruteEc> maximal;
    for (const auto& a : ecs) {
        bool dominated = false;
        for (const auto& b : ecs)
            if (b.states.size() > a.states.size() && std::includes(b.states.begin(), b.states.end(), a.states.begin(), a.states.end()))
                dominated = true;
        if (!dominated) maximal.push_back(a);
    }
    std::sort(maximal.begin(), maximal.end(), [](const BruteEc& a, const BruteEc& b) { return a.states.front() < b.states.front(); });
    return maximal;
}

FiniteProduct grid_product(const std::string& path, GridFixture* out = nullptr) {
    const auto g = load_grid(path);
    if (out) *out = g;
    return build_product(grid_mdp(g), automaton::load_automaton(g.automaton_path));
}

// Maximal reachability of the AMEC union: Jacobi iteration from zero, then an optimal
// proper policy (greedy, moving strictly closer to the target) evaluated by a dense solve.
Vec dense_max_reach(const FiniteProduct& p) {
    const int n = p.size();
    std::vector<char> target(n, 0);
    for (const auto& m : amec_filter(mec_decomposition(p), p))
        for (int x : m.states) target[x] = 1;
    Vec V = Vec::Zero(n);
    for (int x = 0; x < n; ++x) V(x) = target[x];
    for (int it = 0; it < 200000; ++it) {
        Vec W = V;
        for (int x = 0; x < n; ++x) {
            if (target[x]) continue;
            double best = 0.0;
            for (const auto& outs : p.trans[x]) {
                double e = 0.0;
                for (const auto& o : outs) e += o.p * V(o.target);
                best = std::max(best, e);
            }
            W(x) = best;
        }
        const double d = (W - V).cwiseAbs().maxCoeff();
        V = W;
        if (d < 1e-15) break;
    }
    std::vector<int> dist(n, -1), pol(n, 0);
    for (int x = 0; x < n; ++x)
        if (target[x]) dist[x] = 0;
    for (int layer = 0, grew = 1; grew; ++layer) {
        grew = 0;
        for (int x = 0; x < n; ++x) {
            if (dist[x] >= 0 || V(x) < 1e-12) continue;
            for (int u = 0; u < static_cast<int>(p.trans[x].size()); ++u) {
                double e = 0.0;
                bool closer = false;
                for (const auto& o : p.trans[x][u]) {
                    e += o.p * V(o.target);
                    closer = closer || (dist[o.target] >= 0 && dist[o.target] <= layer);
                }
                if (closer && e >= V(x) - 1e-9) {
                    pol[x] = u;
                    dist[x] = layer + 1;
                    grew = 1;
                    break;
                }
            }
        }
    }
    Mat A = Mat::Identity(n, n);
    Vec b = Vec::Zero(n);
    for (int x = 0; x < n; ++x) {
        if (target[x]) {
            b(x) = 1.0;
            continue;
        }
        if (dist[x] < 0) continue;
        for (const auto& o : p.trans[x][pol[x]]) A(x, o.target) -= o.p;
    }
    return A.fullPivLu().solve(b);
}

}  // namespace

TEST_CASE("value iteration closed forms", "[oracle]") {
    reward::RewardParams rp;
    rp.r_f = 0.9;
    rp.gamma_f = 0.99;
    const auto loop = raw_product({{{{0, 1.0}}}}, {1}, 1);
    auto vi = value_iteration(loop, standard_rewards(loop, rp));
    CHECK(vi.V(0) == Approx(1.0).epsilon(1e-10));

    const auto dead = raw_product({{{{0, 1.0}}}}, {0}, 1);
    CHECK(value_iteration(dead, standard_rewards(dead, rp)).V(0) == 0.0);

    // x0 -> x1 (accepting loop) with probability 0.7, else stays: V0 = 0.99 (0.7 + 0.3 V0).
    const auto chain = raw_product({{{{1, 0.7}, {0, 0.3}}}, {{{1, 1.0}}}}, {0, 1}, 1);
    vi = value_iteration(chain, standard_rewards(chain, rp));
    CHECK(std::abs(vi.V(1) - 1.0) < 1e-9);
    CHECK(std::abs(vi.V(0) - 0.99 * 0.7 / (1 - 0.99 * 0.3)) < 1e-9);

    // Greedy ties go to the lower action index.
    const auto tie = raw_product({{{{1, 1.0}}, {{1, 1.0}}}, {{{1, 1.0}}}}, {0, 1}, 1);
    CHECK(value_iteration(tie, standard_rewards(tie, rp)).policy[0] == 0);
}

TEST_CASE("MEC decomposition matches brute force", "[oracle][property]") {
    std::mt19937_64 rng(17);
    for (int k = 0; k < 200; ++k) {
        const int n = 2 + static_cast<int>(rng() % 9);
        const auto p = random_product(rng, n, 2);
        const auto fast = mec_decomposition(p);
        const auto slow = brute_mecs(p);
        INFO("instance " << k);
        REQUIRE(fast.size() == slow.size());
        for (std::size_t i = 0; i < fast.size(); ++i) {
            CHECK(fast[i].states == slow[i].states);
            CHECK(fast[i].actions == slow[i].actions);
        }
        for (const auto& m : amec_filter(fast, p)) {
            Frontier hit = 0;
            for (int x : m.states) hit |= p.acc[x];
            CHECK(hit == 3u);
        }
    }
}

TEST_CASE("MEC corner cases", "[oracle]") {
    const auto full = raw_product({{{{1, 1.0}}}, {{{2, 1.0}}}, {{{0, 1.0}}}}, {1, 2, 0}, 2);
    const auto m = mec_decomposition(full);
    REQUIRE(m.size() == 1);
    CHECK(m[0].states == std::vector<int>{0, 1, 2});
    CHECK(amec_filter(m, full).size() == 1);

    const auto missing = raw_product({{{{1, 1.0}}}, {{{2, 1.0}}}, {{{0, 1.0}}}}, {1, 1, 0}, 2);
    CHECK(amec_filter(mec_decomposition(missing), missing).empty());
    CHECK(max_sat_probability(missing)(0) == 0.0);

    const auto dag = raw_product({{{{1, 1.0}}}, {{{2, 1.0}}}, {{{2, 1.0}}}}, {0, 0, 1}, 1);
    const auto d = mec_decomposition(dag);
    REQUIRE(d.size() == 1);
    CHECK(d[0].states == std::vector<int>{2});
    CHECK(max_sat_probability(dag)(0) == 1.0);
}

TEST_CASE("max satisfaction probability matches a dense solve", "[oracle]") {
    for (const char* f : {"bridge.grid", "reach.grid", "surveil.grid", "limit/detour.grid"}) {
        const auto p = grid_product(kSrc + "/fixtures/grids/" + f);
        const Vec fast = max_sat_probability(p), dense = dense_max_reach(p);
        INFO(f);
        CHECK((fast - dense).cwiseAbs().maxCoeff() < 1e-8);
    }
    std::mt19937_64 rng(5);
    for (int k = 0; k < 50; ++k) {
        const auto p = random_product(rng, 12, 2);
        CHECK((max_sat_probability(p) - dense_max_reach(p)).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("product construction", "[oracle]") {
    FiniteMdp one;
    one.num_states = 1;
    one.trans = {{{{0, 1.0}}}};
    one.labels = {{"green"}};
    const auto surveil_both = automaton::load_automaton(kSrc + "/fixtures/automata/surveil_both.aut");
    CHECK(build_product(one, surveil_both).size() <= 12);

    one.labels = {{}};
    const auto quiet = build_product(one, surveil_both);
    for (const auto& n : quiet.nodes) CHECK(n.q == surveil_both.initial);

    GridFixture g;
    const auto reach = grid_product(kSrc + "/fixtures/grids/reach.grid", &g);
    const auto a = automaton::load_automaton(g.automaton_path);
    bool hit_bad = false;
    for (int x = 0; x < reach.size(); ++x) hit_bad = hit_bad || (reach.unsafe[x] && reach.nodes[x].q == a.state_index("qbad"));
    CHECK(hit_bad);
    CHECK_THROWS_AS(build_product(grid_mdp(g), a, 10), OracleError);

    FiniteMdp bad = one;
    bad.trans = {{{{0, 0.6}}}};
    CHECK_THROWS_AS(bad.validate(), OracleError);
    const auto eps = automaton::load_automaton(kSrc + "/fixtures/automata/ldgba_eps.aut");
    one.labels = {{"a"}};
    CHECK_THROWS_AS(build_product(one, eps), OracleError);
}

TEST_CASE("policy satisfaction probability against simulation", "[oracle]") {
    const auto p = grid_product(kSrc + "/fixtures/grids/bridge.grid");
    reward::RewardParams rp;
    rp.gamma_f = 0.9999;
    rp.r_f = 0.99;
    const auto vi = value_iteration(p, standard_rewards(p, rp));
    const auto ch = policy_sat_probability(p, vi.policy);
    REQUIRE(ch.probability > 0.1);
    REQUIRE(ch.probability < 0.9);
    CHECK(ch.recurrent_classes);

    // Accepting iff every set is credited in the second half of a long run.
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int runs = 200000, horizon = 120;
    int good = 0;
    for (int r = 0; r < runs; ++r) {
        int x = 0;
        Frontier late = 0;
        for (int t = 0; t < horizon; ++t) {
            if (t >= horizon / 2) late |= p.acc[x];
            const auto& outs = p.trans[x][vi.policy[x]];
            double c = u(rng);
            int next = outs.back().target;
            for (const auto& o : outs) {
                if (c < o.p) {
                    next = o.target;
                    break;
                }
                c -= o.p;
            }
            x = next;
        }
        good += late == 1u;
    }
    const double est = static_cast<double>(good) / runs;
    const double sigma = std::sqrt(ch.probability * (1 - ch.probability) / runs);
    INFO("exact " << ch.probability << ", simulated " << est);
    CHECK(std::abs(est - ch.probability) < 3 * sigma);

    const auto trap = raw_product({{{{1, 1.0}}, {{2, 1.0}}}, {{{1, 1.0}}}, {{{2, 1.0}}}}, {0, 0, 1}, 1, {0, 1, 0});
    CHECK(policy_sat_probability(trap, {0, 0, 0}).probability == 0.0);
    CHECK(policy_sat_probability(trap, {1, 0, 0}).probability == 1.0);
    CHECK_THROWS(policy_sat_probability(trap, {2, 0, 0}));
}

TEST_CASE("recurrent classes meet all accepting sets or none", "[oracle][property]") {
    std::mt19937_64 rng(21);
    for (const char* f : {"open.grid", "triple.grid", "surveil.grid"}) {
        const auto p = grid_product(kSrc + "/fixtures/grids/" + f);
        for (int k = 0; k < 20; ++k) {
            std::vector<int> pol(p.size());
            for (int x = 0; x < p.size(); ++x) pol[x] = static_cast<int>(rng() % p.trans[x].size());
            CHECK(policy_sat_probability(p, pol).recurrent_classes);
        }
    }
}

TEST_CASE("greedy satisfaction converges in the discount limit", "[oracle]") {
    GridFixture g;
    const auto p = grid_product(kSrc + "/fixtures/grids/limit/detour.grid", &g);
    const double pmax = max_sat_probability(p)(0);
    double last = INFINITY;
    for (double gf : {0.99, 0.999, 0.9999, 0.99999}) {
        reward::RewardParams rp;
        rp.gamma_f = gf;
        rp.r_f = reward::coupled_r_f(gf);
        const double gap = pmax - policy_sat_probability(p, value_iteration(p, standard_rewards(p, rp)).policy).probability;
        CHECK(gap >= -1e-9);
        CHECK(gap <= last + 1e-12);
        last = gap;
    }
    CHECK(last < 1e-6);
    for (const auto& r : run_fixture(g))
        if (r.check == "penalized_optimal" || r.check == "shaping_invariant" || r.check == "recurrent_classes") CHECK(r.pass);
}

TEST_CASE("shipped oracle suite passes", "[oracle]") {
    const auto results = run_suite(kSrc + "/fixtures/grids");
    std::set<std::string> fixtures;
    for (const auto& r : results) {
        INFO(r.fixture << " " << r.check << ": " << r.detail);
        CHECK(r.pass);
        fixtures.insert(r.fixture);
    }
    CHECK(fixtures.size() >= 3);
    CHECK_THROWS_AS(run_suite(kSrc + "/fixtures/automata"), OracleError);
}

TEST_CASE("grid fixture parsing", "[oracle]") {
    const auto g = parse_grid("name: t\nsize: 2 1\nslip: 0.2\nstart: 1 0\nautomaton: x.aut\ncell 0 0: a, b\n", "/base");
    CHECK(g.width == 2);
    CHECK(g.start == 1);
    CHECK(g.labels[0] == std::set<std::string>{"a", "b"});
    CHECK(g.automaton_path == "/base/x.aut");
    const auto mdp = grid_mdp(g);
    mdp.validate();
    CHECK(mdp.trans[0].size() == 5);
    CHECK_THROWS_AS(parse_grid("size: 2 1\nautomaton: x.aut\ncell 5 0: a\n"), OracleError);
    CHECK_THROWS_AS(parse_grid("size: 2 1\nautomaton: x.aut\nslip: 2\n"), OracleError);
    CHECK_THROWS_AS(parse_grid("size: 2 1\n"), OracleError);
    CHECK_THROWS_AS(parse_grid("size: 2 1\nautomaton: x.aut\nwind: 3\n"), OracleError);
}
