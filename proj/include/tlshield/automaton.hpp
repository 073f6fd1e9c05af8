#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tlshield/ltl.hpp"

namespace tlshield::automaton {

using ltl::Letter;

// Bit j set <=> accepting set F_{j+1} is still unvisited in the current round.
using Frontier = std::uint32_t;

class AutomatonError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Transition {
    int source;
    ltl::FormulaPtr guard;
    int target;
};

struct EpsTransition {
    int source;
    int target;
};

struct Ldgba {
    std::vector<std::string> aps;
    std::vector<std::string> states;
    int initial = 0;
    std::vector<bool> deterministic;
    std::vector<std::string> accepting_names;
    std::vector<std::vector<int>> accepting;
    std::vector<int> unsafe;
    std::vector<Transition> transitions;
    std::vector<EpsTransition> eps;

    // Built by finalize().
    std::vector<int> delta;             // [q << |AP| | letter], -1 outside Q_D
    std::vector<Frontier> membership;   // F(q) as a frontier mask

    int num_states() const { return static_cast<int>(states.size()); }
    int num_sets() const { return static_cast<int>(accepting.size()); }
    int state_index(const std::string& name) const;
    Letter letter(const std::set<std::string>& holds) const { return ltl::letter_of(aps, holds); }
    bool has_nondeterminism() const;
};

struct ELdgbaState {
    int q = 0;
    Frontier T = 0;
    bool round_flag = false;
    bool operator==(const ELdgbaState&) const = default;
};

// Validates every structural invariant and builds the lookup tables.
void finalize(Ldgba& a);

Ldgba parse_automaton(const std::string& text);
Ldgba load_automaton(const std::string& path);
std::string serialize(const Ldgba& a);

Frontier full_frontier(const Ldgba& a);
int step(const Ldgba& a, int q, Letter sigma);
std::pair<Frontier, bool> frontier_update(const Ldgba& a, int q_next, Frontier T);
ELdgbaState initial_state(const Ldgba& a);
ELdgbaState embedded_step(const Ldgba& a, const ELdgbaState& x, Letter sigma);
// Accepting-set indices credited by arriving with entry frontier T and round flag B.
inline Frontier credit_mask(const Ldgba& a, Frontier T, bool B) { return B ? full_frontier(a) : T; }
// x.T must be the frontier held before arrival at x.q.
bool is_accepting(const Ldgba& a, const ELdgbaState& x);

std::vector<int> sink_states(const Ldgba& a);
std::vector<int> unsafe_states(const Ldgba& a, const std::vector<int>& declared);
// States in every accepting set whose only exits lead to themselves or to declared unsafe states.
std::vector<int> goal_states(const Ldgba& a);
// Adds an absorbing unsafe state with a `true` self-loop and returns its index.
int add_virtual_sink(Ldgba& a);

bool lasso_accepts(const Ldgba& a, const ltl::LassoWord& w);
bool lasso_accepts_embedded(const Ldgba& a, const ltl::LassoWord& w);

// Fast variants for words already expressed over a.aps.
bool lasso_accepts(const Ldgba& a, const std::vector<Letter>& prefix, const std::vector<Letter>& cycle);
bool lasso_accepts_embedded(const Ldgba& a, const std::vector<Letter>& prefix, const std::vector<Letter>& cycle);

struct EquivalenceReport {
    long words = 0;
    long mismatches = 0;
    std::optional<ltl::LassoWord> counterexample;
    bool ltl = false, ldgba = false, eldgba = false;  // verdicts on the counterexample
};

// Every lasso with prefix length <= max_prefix and cycle length in [1, max_cycle]
// over the automaton alphabet; compares the formula (if any), the LDGBA and the E-LDGBA.
EquivalenceReport check_equivalence(const Ldgba& a, const ltl::Formula* f, int max_prefix = 3, int max_cycle = 4);

}  // namespace tlshield::automaton
