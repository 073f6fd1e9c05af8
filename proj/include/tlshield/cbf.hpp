#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tlshield/envs.hpp"
#include "tlshield/gp.hpp"

namespace tlshield::cbf {

// Gains K_b = [k_0, ..., k_{r-1}] so that the companion matrix A_b - B_b K_b has the given poles.
Vec pole_place(int relative_degree, const std::vector<double>& poles);
bool is_hurwitz(const Vec& K);

// A barrier bound to its feedback gains.
struct Ecbf {
    envs::Barrier barrier;
    Vec K;

    Ecbf(envs::Barrier b, Vec K);
};

// alpha^T a_total + beta (+ eps) >= 0
struct LinearConstraint {
    Vec alpha;
    double beta = 0.0;
};

Vec traverse(const envs::Barrier& b, const envs::EnvSpec& env, const Vec& s, const Vec& d_hat);

// Robust ECBF constraint over the residual box [lower, upper].
LinearConstraint ecbf_constraint(const Ecbf& e, const envs::EnvSpec& env, const Vec& s, const Vec& lower, const Vec& upper);

using StepFn = std::function<Vec(const Vec& s, const Vec& a)>;
// Linearization in a (about a_ref) of h(F(s, a)) >= (1 - eta) h(s).
LinearConstraint discrete_cbf_constraint(const envs::Barrier& b, const Vec& s, const StepFn& step, double eta,
                                         const Vec& a_ref);

struct QpProblem {
    Mat H;                 // m x m, positive definite
    double k_eps = 1e6;
    Vec a_rl;
    Vec a_low, a_high;     // box on a_rl + a
    std::vector<LinearConstraint> constraints;
    bool shared_slack = true;
    // false: minimize 1/2 a^T H a (the perturbation); true: 1/2 (a_rl + a)^T H (a_rl + a).
    bool total_objective = false;
};

struct QpSolution {
    Vec a_pt;
    Vec eps;                     // one entry when the slack is shared
    double objective = 0.0;
    std::vector<int> active;     // rows: constraints, then lower box, upper box, slack signs
    Vec multipliers;             // one per row, zero when inactive
    double max_eps() const { return eps.size() ? eps.maxCoeff() : 0.0; }
};

class QpError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

QpSolution solve_qp(const QpProblem& p);
double qp_objective(const QpProblem& p, const Vec& a, const Vec& eps);
// Max of stationarity, complementarity, primal and dual infeasibility residuals.
double kkt_residual(const QpProblem& p, const QpSolution& sol);

struct FilterConfig {
    bool enabled = true;
    double k_eps = 1e6;
    bool shared_slack = true;
    bool total_objective = false;
    bool discrete = false;   // discrete-time condition for relative-degree-1 barriers
    double eta = 1.0;
    double k_delta = 2.0;
    std::vector<double> poles = {-1.0, -1.0};
    std::map<std::string, std::vector<double>> barrier_poles;
};

struct SafeAction {
    Vec a_safe;
    Vec a_pt;
    double eps = 0.0;
};

class SafetyFilter {
public:
    SafetyFilter(const envs::EnvSpec& env, FilterConfig cfg);

    void set_model(std::shared_ptr<const gp::GpModel> model) { model_ = std::move(model); }
    const gp::GpModel* model() const { return model_.get(); }
    const FilterConfig& config() const { return cfg_; }
    const std::vector<Ecbf>& barriers() const { return ecbfs_; }

    std::vector<LinearConstraint> constraints(const Vec& s) const;
    SafeAction safe_action(const Vec& s, const Vec& a_rl) const;

private:
    const envs::EnvSpec* env_;
    FilterConfig cfg_;
    std::vector<Ecbf> ecbfs_;
    std::shared_ptr<const gp::GpModel> model_;
};

}  // namespace tlshield::cbf
