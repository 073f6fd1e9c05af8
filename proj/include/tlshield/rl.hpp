#pragma once

#include <cstddef>
#include <vector>

#include "tlshield/automaton.hpp"
#include "tlshield/nn.hpp"
#include "tlshield/product.hpp"

namespace tlshield::rl {

struct RlParams {
    double lr_actor = 1e-4;
    double lr_critic = 1e-3;
    double tau_soft = 0.005;
    int batch = 64;
    std::size_t capacity = 100000;
    double noise_std = 0.1;     // fraction of the action range
    double noise_decay = 0.999; // per episode
    std::vector<int> hidden = {64, 64, 64};
};

struct Transition {
    Vec x;          // encoded source state
    Vec a;          // a_RL, never the filtered action
    double r = 0.0;
    double gamma = 0.0;
    Vec x_next;     // encoded successor
    int q_next = 0;
    bool done = false;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity = 100000);
    void push(Transition t);
    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }
    const Transition& operator[](std::size_t i) const { return data_[i]; }
    // Oldest first.
    const Transition& ordered(std::size_t i) const { return data_[(head_ + i) % data_.size()]; }
    std::vector<std::size_t> sample(std::size_t n, Rng& rng) const;

private:
    std::size_t capacity_;
    std::size_t head_ = 0;
    std::vector<Transition> data_;
};

struct Module {
    nn::Mlp actor, critic, actor_target, critic_target;
    nn::Adam opt_actor, opt_critic;
    ReplayBuffer buffer;
};

struct UpdateStats {
    bool skipped = true;
    double critic_loss = 0.0;
    double mean_q = 0.0;
};

struct Selection {
    product::ProductAction u;
    Vec a_rl;
};

class ModularAgent {
public:
    ModularAgent(int num_states, int num_sets, Vec a_low, Vec a_high, Vec scale, RlParams p, Rng& rng);

    int num_modules() const { return static_cast<int>(modules_.size()); }
    int input_dim() const { return static_cast<int>(scale_.size()) + num_sets_; }
    const RlParams& params() const { return p_; }
    double noise_std() const { return noise_; }
    Module& module(int q) { return modules_.at(q); }
    const Module& module(int q) const { return modules_.at(q); }

    Vec encode(const product::ProductState& x) const;
    // Deterministic actor output for the module of x.
    Vec act(const product::ProductState& x) const;
    Selection select_action(const automaton::Ldgba& a, const product::ProductState& x, bool explore, Rng& rng) const;

    void store(int q, Transition t);
    UpdateStats update_module(int q, Rng& rng);
    void end_episode() { noise_ *= p_.noise_decay; }

    double q_value(int q, const Vec& x_enc, const Vec& a) const;

    nn::Checkpoint checkpoint(std::uint64_t config_hash) const;
    void restore(const nn::Checkpoint& c);

private:
    Vec normalize_action(const Vec& a) const;

    int num_sets_;
    Vec a_low_, a_high_, scale_;
    RlParams p_;
    double noise_;
    std::vector<Module> modules_;
};

}  // namespace tlshield::rl
