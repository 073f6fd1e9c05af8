#pragma once

#include <vector>

#include "tlshield/automaton.hpp"
#include "tlshield/envs.hpp"

namespace tlshield::product {

using automaton::Frontier;

// x = (s, q, T). `entry` is the frontier held when q was entered, before the
// arrival update; acceptance of x is decided on it.
struct ProductState {
    Vec s;
    int q = 0;
    Frontier T = 0;
    bool round_flag = false;
    Frontier entry = 0;
};

struct ProductAction {
    enum class Kind { Continuous, Epsilon } kind = Kind::Continuous;
    Vec a;
    int target = -1;

    static ProductAction continuous(Vec a) { return {Kind::Continuous, std::move(a), -1}; }
    static ProductAction epsilon(int target) { return {Kind::Epsilon, Vec(), target}; }
};

struct ProductStep {
    ProductState x;
    envs::StepResult env;
};

ProductState initial_product_state(const automaton::Ldgba& a, Vec s0);

ProductStep product_step(const envs::EnvSpec& env, const envs::Labeler& labeler, const automaton::Ldgba& a,
                         const ProductState& x, const ProductAction& u, double dt, Rng* rng = nullptr);

bool is_unsafe(const automaton::Ldgba& a, const ProductState& x);
bool is_accepting(const automaton::Ldgba& a, const ProductState& x);
std::vector<int> available_eps(const automaton::Ldgba& a, const ProductState& x);

}  // namespace tlshield::product
