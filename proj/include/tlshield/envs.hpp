#pragma once

#include <Eigen/Dense>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tlshield/ltl.hpp"

namespace tlshield {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

}  // namespace tlshield

namespace tlshield::envs {

// Safe set {s : h(s) >= 0}. The Hessian is only consulted for relative degree 2.
struct Barrier {
    std::string name;
    int relative_degree = 1;
    std::function<double(const Vec&)> h;
    std::function<Vec(const Vec&)> grad;
    std::function<Mat(const Vec&)> hess;
};

struct Region {
    std::string name;
    std::function<bool(const Vec&)> contains;
};

struct EnvSpec {
    std::string name;
    int n = 0;
    int m = 0;
    Vec a_low, a_high;
    double dt = 0.05;

    std::function<Vec(const Vec&)> f_nominal, f_true;
    std::function<Mat(const Vec&)> g_nominal, g_true;
    // State components on which the residual may be non-zero; the GP only models these.
    std::vector<int> residual_dims;
    // Additive Gaussian noise on the derivative of these components, held over a step.
    double noise_sigma = 0.0;
    std::vector<int> noise_dims;

    std::vector<Region> regions;
    std::vector<Barrier> barriers;
    std::function<Vec(Rng&)> initial_state;
    Vec scale;  // encoding scale: s / scale is O(1) on the operating domain

    // Region names plus "unsafe".
    std::vector<std::string> aps() const;
    // True minus nominal vector field. Independent of a unless the gain is mismatched.
    Vec residual(const Vec& s, const Vec& a) const;
    Vec true_field(const Vec& s, const Vec& a) const;
    Vec nominal_field(const Vec& s, const Vec& a) const;
    double min_barrier(const Vec& s) const;
};

struct EnvOptions {
    double uncertainty = 0.0;
    double sign = 1.0;         // nominal parameters are true * (1 + sign * uncertainty)
    double dt = 0.0;           // 0 keeps the environment default
    bool second_order = false; // pendulum only
    double region_half_width = 0.15;
    double noise_sigma = -1.0; // < 0 keeps the environment default
};

EnvSpec make_pendulum(const EnvOptions& opt = {});
EnvSpec make_cartpole(const EnvOptions& opt = {});
EnvSpec make_car(const EnvOptions& opt = {});
EnvSpec make_particle_gym(const EnvOptions& opt = {});
EnvSpec make_rover(const EnvOptions& opt = {});
EnvSpec make_env(const std::string& name, const EnvOptions& opt = {});

struct StepResult {
    Vec s;
    bool clamped = false;
    bool diverged = false;
};

Vec clamp_action(const EnvSpec& spec, const Vec& a, bool* clamped = nullptr);
// One RK4 step of the true dynamics; noise (if any) is drawn from rng.
StepResult step_dynamics(const EnvSpec& spec, const Vec& s, const Vec& a, double dt, Rng* rng = nullptr);
// One RK4 step of the nominal model, optionally with a residual estimate added to the field.
Vec nominal_step(const EnvSpec& spec, const Vec& s, const Vec& a, double dt);

std::vector<std::string> label(const EnvSpec& spec, const Vec& s);

// Maps environment predicates onto the bit order of an automaton alphabet.
class Labeler {
public:
    Labeler(const EnvSpec& spec, const std::vector<std::string>& aps);
    ltl::Letter operator()(const Vec& s) const;

private:
    const EnvSpec* spec_;
    std::vector<int> region_;  // region index per AP, -1 for "unsafe"
};

struct TrajectoryRow {
    double t;
    Vec s;
    Vec a;
};
void write_trajectory_csv(const EnvSpec& spec, const std::vector<TrajectoryRow>& rows, const std::string& path);

}  // namespace tlshield::envs
