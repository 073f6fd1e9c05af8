#include "tlshield/rl.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tlshield::rl {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
    if (!std::isfinite(t.r) || !std::isfinite(t.gamma)) throw std::invalid_argument("transition reward or discount is not finite");
    if (data_.size() < capacity_) {
        data_.push_back(std::move(t));
        return;
    }
    data_[head_] = std::move(t);
    head_ = (head_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
    std::uniform_int_distribution<std::size_t> u(0, data_.size() - 1);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = u(rng);
    return idx;
}

ModularAgent::ModularAgent(int num_states, int num_sets, Vec a_low, Vec a_high, Vec scale, RlParams p, Rng& rng)
    : num_sets_(num_sets), a_low_(std::move(a_low)), a_high_(std::move(a_high)), scale_(std::move(scale)), p_(std::move(p)),
      noise_(p_.noise_std) {
    if (num_states < 1) throw std::invalid_argument("agent needs at least one module");
    if (p_.batch < 1) throw std::invalid_argument("batch size must be positive");
    const int in = input_dim();
    const int m = static_cast<int>(a_low_.size());
    std::vector<int> actor_sizes{in}, critic_sizes{in + m};
    for (int h : p_.hidden) {
        actor_sizes.push_back(h);
        critic_sizes.push_back(h);
    }
    actor_sizes.push_back(m);
    critic_sizes.push_back(1);
    for (int q = 0; q < num_states; ++q) {
        Module mod{nn::Mlp(actor_sizes, nn::OutputAct::TanhBox, rng, 0.003),
                   nn::Mlp(critic_sizes, nn::OutputAct::Linear, rng),
                   {}, {}, {}, {}, ReplayBuffer(p_.capacity)};
        mod.opt_actor.lr = p_.lr_actor;
        mod.opt_critic.lr = p_.lr_critic;
        mod.actor.set_output_box(a_low_, a_high_);
        mod.actor_target = mod.actor;
        mod.critic_target = mod.critic;
        modules_.push_back(std::move(mod));
    }
}

Vec ModularAgent::encode(const product::ProductState& x) const {
    Vec out(input_dim());
    out.head(scale_.size()) = x.s.cwiseQuotient(scale_);
    for (int j = 0; j < num_sets_; ++j) out(scale_.size() + j) = (x.T >> j) & 1u ? 1.0 : 0.0;
    return out;
}

Vec ModularAgent::normalize_action(const Vec& a) const {
    return (2.0 * a - a_low_ - a_high_).cwiseQuotient(a_high_ - a_low_);
}

Vec ModularAgent::act(const product::ProductState& x) const { return modules_.at(x.q).actor.forward(encode(x)); }

Selection ModularAgent::select_action(const automaton::Ldgba& a, const product::ProductState& x, bool explore, Rng& rng) const {
    const auto eps = product::available_eps(a, x);
    if (!eps.empty()) return {product::ProductAction::epsilon(eps.front()), Vec::Zero(a_low_.size())};
    Vec u = act(x);
    if (explore && noise_ > 0) {
        std::normal_distribution<double> n(0.0, 1.0);
        for (Eigen::Index i = 0; i < u.size(); ++i) u(i) += noise_ * (a_high_(i) - a_low_(i)) * n(rng);
    }
    u = u.cwiseMax(a_low_).cwiseMin(a_high_);
    return {product::ProductAction::continuous(u), u};
}

void ModularAgent::store(int q, Transition t) { modules_.at(q).buffer.push(std::move(t)); }

double ModularAgent::q_value(int q, const Vec& x_enc, const Vec& a) const {
    Vec in(x_enc.size() + a.size());
    in << x_enc, normalize_action(a);
    return modules_.at(q).critic.forward(in)(0);
}

UpdateStats ModularAgent::update_module(int q, Rng& rng) {
    Module& mod = modules_.at(q);
    UpdateStats st;
    if (mod.buffer.size() < static_cast<std::size_t>(p_.batch)) return st;
    st.skipped = false;
    const auto idx = mod.buffer.sample(static_cast<std::size_t>(p_.batch), rng);
    const int B = p_.batch;
    const int d = input_dim();
    const int m = static_cast<int>(a_low_.size());

    // Targets come from the next module's target networks.
    Vec y(B);
    std::vector<std::vector<int>> by_next(modules_.size());
    for (int i = 0; i < B; ++i) {
        const Transition& t = mod.buffer[idx[i]];
        y(i) = t.r;
        if (!t.done) by_next.at(t.q_next).push_back(i);
    }
    for (std::size_t nq = 0; nq < by_next.size(); ++nq) {
        const auto& rows = by_next[nq];
        if (rows.empty()) continue;
        Mat xn(d, static_cast<Eigen::Index>(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k) xn.col(k) = mod.buffer[idx[rows[k]]].x_next;
        const Mat an = modules_[nq].actor_target.forward(xn);
        Mat in(d + m, xn.cols());
        in.topRows(d) = xn;
        for (Eigen::Index k = 0; k < xn.cols(); ++k) in.col(k).tail(m) = normalize_action(an.col(k));
        const Mat qn = modules_[nq].critic_target.forward(in);
        for (std::size_t k = 0; k < rows.size(); ++k) {
            const Transition& t = mod.buffer[idx[rows[k]]];
            y(rows[k]) += t.gamma * qn(0, static_cast<Eigen::Index>(k));
        }
    }

    // Critic: mean squared error.
    Mat xb(d, B), inb(d + m, B);
    for (int i = 0; i < B; ++i) {
        const Transition& t = mod.buffer[idx[i]];
        xb.col(i) = t.x;
        inb.col(i) << t.x, normalize_action(t.a);
    }
    nn::Mlp::Cache cache;
    const Mat qv = mod.critic.forward(inb, &cache);
    const Mat err = qv - y.transpose();
    st.critic_loss = 0.5 * err.squaredNorm() / B;
    Vec grad = Vec::Zero(mod.critic.num_params());
    mod.critic.backward(cache, err / B, grad);
    mod.opt_critic.step(mod.critic.params, grad);

    // Actor: ascend Q(x, pi(x)) through the critic's input gradient.
    nn::Mlp::Cache acache, ccache;
    const Mat ab = mod.actor.forward(xb, &acache);
    Mat in_pi(d + m, B);
    in_pi.topRows(d) = xb;
    for (int i = 0; i < B; ++i) in_pi.col(i).tail(m) = normalize_action(ab.col(i));
    const Mat qpi = mod.critic.forward(in_pi, &ccache);
    st.mean_q = qpi.mean();
    Vec scratch = Vec::Zero(mod.critic.num_params());
    const Mat dq_din = mod.critic.backward(ccache, Mat::Constant(1, B, -1.0 / B), scratch);
    Mat da = dq_din.bottomRows(m);
    const Vec dnorm = (2.0 * Vec::Ones(m)).cwiseQuotient(a_high_ - a_low_);
    da = dnorm.asDiagonal() * da;
    Vec agrad = Vec::Zero(mod.actor.num_params());
    mod.actor.backward(acache, da, agrad);
    mod.opt_actor.step(mod.actor.params, agrad);

    nn::soft_update(mod.actor_target, mod.actor, p_.tau_soft);
    nn::soft_update(mod.critic_target, mod.critic, p_.tau_soft);
    return st;
}

nn::Checkpoint ModularAgent::checkpoint(std::uint64_t config_hash) const {
    nn::Checkpoint c;
    c.config_hash = config_hash;
    for (std::size_t q = 0; q < modules_.size(); ++q) {
        const std::string k = std::to_string(q);
        c.nets.push_back({"actor/" + k, modules_[q].actor});
        c.nets.push_back({"critic/" + k, modules_[q].critic});
        c.nets.push_back({"actor_target/" + k, modules_[q].actor_target});
        c.nets.push_back({"critic_target/" + k, modules_[q].critic_target});
    }
    c.counters.push_back(std::bit_cast<std::uint64_t>(noise_));
    for (const auto& m : modules_) c.counters.push_back(m.buffer.size());
    return c;
}

void ModularAgent::restore(const nn::Checkpoint& c) {
    if (c.nets.size() != 4 * modules_.size()) throw nn::CheckpointError("checkpoint holds a different number of modules");
    for (std::size_t q = 0; q < modules_.size(); ++q) {
        auto take = [&](std::size_t k, nn::Mlp& dst) {
            const nn::Mlp& src = c.nets[4 * q + k].net;
            if (src.sizes() != dst.sizes()) throw nn::CheckpointError("checkpoint network shape mismatch in " + c.nets[4 * q + k].name);
            dst = src;
        };
        take(0, modules_[q].actor);
        take(1, modules_[q].critic);
        take(2, modules_[q].actor_target);
        take(3, modules_[q].critic_target);
    }
    if (!c.counters.empty()) noise_ = std::bit_cast<double>(c.counters[0]);
}

}  // namespace tlshield::rl
