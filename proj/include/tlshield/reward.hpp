#pragma once

#include <string>
#include <vector>

#include "tlshield/automaton.hpp"
#include "tlshield/product.hpp"

namespace tlshield::reward {

struct RewardParams {
    double r_f = 0.9;
    double gamma_f = 0.99;
    double eta_phi = 1000.0;
    double r_n = -50.0;
    double zero_tol = 1e-6;

    // Hard errors throw; soft issues (outside the limit regime) come back as warnings.
    std::vector<std::string> validate() const;
};

// r_F = 1 - sqrt(1 - gamma_F): r_F -> 1 and (1 - gamma_F)/(1 - r_F) -> 0 as gamma_F -> 1.
double coupled_r_f(double gamma_f);

struct ShapingState {
    std::vector<char> T_phi;
    std::vector<char> T_phi0;
};

ShapingState initial_shaping(const automaton::Ldgba& a);

double base_reward(const product::ProductState& x, const automaton::Ldgba& a, const RewardParams& p);
double discount(const product::ProductState& x, const automaton::Ldgba& a, const RewardParams& p);
double potential(int q, const ShapingState& S, const RewardParams& p);
ShapingState shaping_update(int q_next, const ShapingState& S, bool B);
double shaped_reward(const product::ProductState& x, const product::ProductState& x_next, const automaton::Ldgba& a,
                     const ShapingState& S_before, const RewardParams& p);
double guided_reward(double r_shaped, const Vec& a_pt, const RewardParams& p);

}  // namespace tlshield::reward
