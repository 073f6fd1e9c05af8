#include "tlshield/product.hpp"

#include <algorithm>
#include <stdexcept>

namespace tlshield::product {

ProductState initial_product_state(const automaton::Ldgba& a, Vec s0) {
    const auto x = automaton::initial_state(a);
    return {std::move(s0), x.q, x.T, false, x.T};
}

ProductStep product_step(const envs::EnvSpec& env, const envs::Labeler& labeler, const automaton::Ldgba& a,
                         const ProductState& x, const ProductAction& u, double dt, Rng* rng) {
    ProductStep out;
    if (u.kind == ProductAction::Kind::Epsilon) {
        auto eps = available_eps(a, x);
        if (std::find(eps.begin(), eps.end(), u.target) == eps.end())
            throw std::invalid_argument("epsilon move to '" + (u.target >= 0 && u.target < a.num_states() ? a.states[u.target] : std::string("?")) +
                                        "' is not enabled");
        out.x = x;
        out.x.q = u.target;
        out.x.round_flag = false;
        out.x.entry = x.T;
        out.env.s = x.s;
        return out;
    }
    if (!a.deterministic[x.q])
        throw std::invalid_argument("continuous action from nondeterministic state '" + a.states[x.q] + "' has no enabled automaton move");
    // The automaton reads the label of the state being left.
    const auto next = automaton::embedded_step(a, {x.q, x.T, x.round_flag}, labeler(x.s));
    out.env = envs::step_dynamics(env, x.s, u.a, dt, rng);
    out.x = {out.env.s, next.q, next.T, next.round_flag, x.T};
    return out;
}

bool is_unsafe(const automaton::Ldgba& a, const ProductState& x) {
    return std::binary_search(a.unsafe.begin(), a.unsafe.end(), x.q);
}

bool is_accepting(const automaton::Ldgba& a, const ProductState& x) {
    return automaton::is_accepting(a, {x.q, x.entry, x.round_flag});
}

std::vector<int> available_eps(const automaton::Ldgba& a, const ProductState& x) {
    std::vector<int> out;
    if (a.deterministic[x.q]) return out;
    for (const auto& e : a.eps)
        if (e.source == x.q) out.push_back(e.target);
    return out;
}

}  // namespace tlshield::product
