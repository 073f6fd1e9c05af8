#include "tlshield/reward.hpp"

#include <cmath>
#include <stdexcept>

namespace tlshield::reward {

std::vector<std::string> RewardParams::validate() const {
    if (!(r_f > 0 && r_f < 1)) throw std::invalid_argument("r_f must lie in (0, 1)");
    if (!(gamma_f > 0 && gamma_f < 1)) throw std::invalid_argument("gamma_f must lie in (0, 1)");
    if (!(eta_phi > 0)) throw std::invalid_argument("eta_phi must be positive");
    if (!(r_n < 0)) throw std::invalid_argument("r_n must be negative");
    std::vector<std::string> warnings;
    if (!(1 - gamma_f < 1 - r_f)) warnings.push_back("1 - gamma_f >= 1 - r_f: outside the regime where accepting visits dominate");
    return warnings;
}

double coupled_r_f(double gamma_f) { return 1.0 - std::sqrt(1.0 - gamma_f); }

ShapingState initial_shaping(const automaton::Ldgba& a) {
    ShapingState S;
    S.T_phi0.assign(a.num_states(), 1);
    S.T_phi0[a.initial] = 0;
    for (int q : automaton::sink_states(a)) S.T_phi0[q] = 0;
    S.T_phi = S.T_phi0;
    return S;
}

double base_reward(const product::ProductState& x, const automaton::Ldgba& a, const RewardParams& p) {
    return product::is_accepting(a, x) ? 1.0 - p.r_f : 0.0;
}

double discount(const product::ProductState& x, const automaton::Ldgba& a, const RewardParams& p) {
    return product::is_accepting(a, x) ? p.r_f : p.gamma_f;
}

double potential(int q, const ShapingState& S, const RewardParams& p) {
    return S.T_phi[q] ? p.eta_phi * (1.0 - p.r_f) : 0.0;
}

ShapingState shaping_update(int q_next, const ShapingState& S, bool B) {
    ShapingState out = S;
    if (B) {
        out.T_phi = S.T_phi0;
        out.T_phi[q_next] = 0;
    } else {
        out.T_phi[q_next] = 0;
    }
    return out;
}

double shaped_reward(const product::ProductState& x, const product::ProductState& x_next, const automaton::Ldgba& a,
                     const ShapingState& S_before, const RewardParams& p) {
    return base_reward(x, a, p) + discount(x, a, p) * potential(x_next.q, S_before, p) - potential(x.q, S_before, p);
}

double guided_reward(double r_shaped, const Vec& a_pt, const RewardParams& p) {
    const double norm = a_pt.size() ? a_pt.norm() : 0.0;
    return norm > p.zero_tol ? p.r_n * norm : r_shaped;
}

}  // namespace tlshield::reward
