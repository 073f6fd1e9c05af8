#pragma once

#include <set>
#include <string>
#include <vector>

#include "tlshield/automaton.hpp"
#include "tlshield/envs.hpp"
#include "tlshield/reward.hpp"

namespace tlshield::oracle {

using automaton::Frontier;

struct Outcome {
    int target;
    double p;
};

class OracleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FiniteMdp {
    int num_states = 0;
    std::vector<std::vector<std::vector<Outcome>>> trans;  // [s][u] -> outcomes
    std::vector<std::set<std::string>> labels;
    int initial = 0;

    void validate() const;
};

// x = (s, q, T) with the frontier held on entry to q and the arrival round flag.
struct ProductNode {
    int s;
    int q;
    Frontier entry;
    Frontier T;
    bool B;
};

struct FiniteProduct {
    std::vector<ProductNode> nodes;  // nodes[0] is initial
    std::vector<std::vector<std::vector<Outcome>>> trans;
    std::vector<Frontier> acc;       // accepting-set indices credited at x (see automaton::credit_mask)
    std::vector<char> unsafe;
    int num_sets = 0;

    int size() const { return static_cast<int>(nodes.size()); }
    bool accepting(int x) const { return acc[x] != 0; }
};

FiniteProduct build_product(const FiniteMdp& mdp, const automaton::Ldgba& a, std::size_t cap = 1000000);

// Per-state reward, discount and (optional) potential. The one-step value of
// taking u in x is R(x) - Phi(x) + gamma(x) * sum_x' p (Phi(x') + V(x')).
struct RewardModel {
    Vec R;
    Vec gamma;
    Vec phi;
};

RewardModel standard_rewards(const FiniteProduct& prod, const reward::RewardParams& p);
// Adds r_n to the reward of every unsafe node.
RewardModel with_unsafe_penalty(RewardModel m, const FiniteProduct& prod, double penalty);

struct ViResult {
    Vec V;
    std::vector<int> policy;
    int iterations = 0;
    double residual = 0.0;
};

// Policy iteration with exact sparse evaluation, verified against the Bellman operator to tol.
ViResult value_iteration(const FiniteProduct& prod, const RewardModel& m, double tol = 1e-10);
Vec q_values(const FiniteProduct& prod, const RewardModel& m, const Vec& V, int x);
int greedy_action(const FiniteProduct& prod, const RewardModel& m, const Vec& V, int x);

struct Mec {
    std::vector<int> states;
    std::vector<std::vector<int>> actions;  // per entry of `states`
};

std::vector<Mec> mec_decomposition(const FiniteProduct& prod);
std::vector<Mec> amec_filter(const std::vector<Mec>& mecs, const FiniteProduct& prod);
Vec max_sat_probability(const FiniteProduct& prod);

struct ChainAnalysis {
    double probability = 0.0;             // from the initial node
    Vec per_state;
    std::vector<std::vector<int>> classes;  // recurrent classes
    std::vector<char> good;                 // class meets every accepting set
    bool recurrent_classes = true;                     // each class meets all sets or none
};
ChainAnalysis policy_sat_probability(const FiniteProduct& prod, const std::vector<int>& policy);

// Potential-based shaping on the product augmented with the shaping frontier T_Phi.
struct ShapedProduct {
    FiniteProduct prod;
    std::vector<int> base;  // node of the unaugmented product
    Vec phi;
};
ShapedProduct shaped_product(const FiniteProduct& prod, const automaton::Ldgba& a, const reward::RewardParams& p,
                             std::size_t cap = 1000000);

// Gridworld: actions N, E, S, W (slip to each perpendicular neighbour with slip/2) and stay.
struct GridFixture {
    std::string name;
    int width = 0, height = 0;
    double slip = 0.0;
    int start = 0;
    std::vector<std::set<std::string>> labels;
    std::string automaton_path;
    bool safe_optimum = false;  // a maximal policy avoiding unsafe sinks exists
};

GridFixture parse_grid(const std::string& text, const std::string& base_dir = ".");
GridFixture load_grid(const std::string& path);
FiniteMdp grid_mdp(const GridFixture& g);

struct CheckResult {
    std::string fixture;
    std::string check;
    bool pass = false;
    std::string detail;
};

std::vector<CheckResult> run_fixture(const GridFixture& g);
std::vector<CheckResult> run_suite(const std::string& dir);

}  // namespace tlshield::oracle
