#include "tlshield/envs.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace tlshield::envs {

namespace {

using std::numbers::pi;

Vec vec(std::initializer_list<double> xs) {
    Vec v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v(i++) = x;
    return v;
}

double perturbed(double value, const EnvOptions& opt) { return value * (1.0 + opt.sign * opt.uncertainty); }

void check(const EnvOptions& opt) {
    if (opt.uncertainty < 0.0 || opt.uncertainty >= 1.0) throw std::invalid_argument("uncertainty must lie in [0, 1)");
}

// h = r2 - s_i^2, keeping |s_i| <= sqrt(r2).
Barrier symmetric_bound(std::string name, int n, int i, double r2, int degree) {
    Barrier b;
    b.name = std::move(name);
    b.relative_degree = degree;
    b.h = [i, r2](const Vec& s) { return r2 - s(i) * s(i); };
    b.grad = [i, n](const Vec& s) {
        Vec g = Vec::Zero(n);
        g(i) = -2.0 * s(i);
        return g;
    };
    b.hess = [i, n](const Vec&) {
        Mat h = Mat::Zero(n, n);
        h(i, i) = -2.0;
        return h;
    };
    return b;
}

// h = |p - c|^2 - r^2 over the planar position in components 0 and 1.
Barrier keep_out(std::string name, int n, double cx, double cy, double r) {
    Barrier b;
    b.name = std::move(name);
    b.relative_degree = 2;
    b.h = [=](const Vec& s) { return (s(0) - cx) * (s(0) - cx) + (s(1) - cy) * (s(1) - cy) - r * r; };
    b.grad = [=](const Vec& s) {
        Vec g = Vec::Zero(n);
        g(0) = 2.0 * (s(0) - cx);
        g(1) = 2.0 * (s(1) - cy);
        return g;
    };
    b.hess = [=](const Vec&) {
        Mat h = Mat::Zero(n, n);
        h(0, 0) = h(1, 1) = 2.0;
        return h;
    };
    return b;
}

// h = dir * (s_i - bound), a half-plane wall.
Barrier wall(std::string name, int n, int i, double bound, double dir) {
    Barrier b;
    b.name = std::move(name);
    b.relative_degree = 2;
    b.h = [=](const Vec& s) { return dir * (s(i) - bound); };
    b.grad = [=](const Vec&) {
        Vec g = Vec::Zero(n);
        g(i) = dir;
        return g;
    };
    b.hess = [=](const Vec&) { return Mat::Zero(n, n); };
    return b;
}

Region disc(std::string name, double cx, double cy, double r) {
    return {std::move(name), [=](const Vec& s) { return std::hypot(s(0) - cx, s(1) - cy) <= r; }};
}

struct Circle {
    double x, y, r;
};

// Kinematic car: s = [px, py, heading, speed], a = [accel, curvature = tan(steer)].
EnvSpec car_model(const std::string& name, const EnvOptions& opt, double dt_default, double half_extent,
                  const std::vector<Circle>& obstacles, const std::vector<std::pair<std::string, Circle>>& regions,
                  Vec start) {
    check(opt);
    const double L = 1.0, Ku = 1.0;
    const double Ln = perturbed(L, opt), Kn = perturbed(Ku, opt);
    EnvSpec e;
    e.name = name;
    e.n = 4;
    e.m = 2;
    const double kmax = std::tan(0.6);
    e.a_low = vec({-2.0, -kmax});
    e.a_high = vec({2.0, kmax});
    e.dt = opt.dt > 0 ? opt.dt : dt_default;
    auto drift = [](const Vec& s) { return vec({s(3) * std::cos(s(2)), s(3) * std::sin(s(2)), 0.0, 0.0}); };
    auto gain = [](double l, double k) {
        return [l, k](const Vec&) {
            Mat g = Mat::Zero(4, 2);
            g(2, 1) = 1.0 / l;
            g(3, 0) = k;
            return g;
        };
    };
    e.f_true = drift;
    e.f_nominal = drift;
    e.g_true = gain(L, Ku);
    e.g_nominal = gain(Ln, Kn);
    e.residual_dims = {2, 3};
    e.noise_sigma = opt.noise_sigma >= 0 ? opt.noise_sigma : 0.05;
    e.noise_dims = {3};
    for (std::size_t k = 0; k < obstacles.size(); ++k)
        e.barriers.push_back(keep_out("obstacle" + std::to_string(k), 4, obstacles[k].x, obstacles[k].y, obstacles[k].r));
    e.barriers.push_back(wall("wall_xmin", 4, 0, -half_extent, 1.0));
    e.barriers.push_back(wall("wall_xmax", 4, 0, half_extent, -1.0));
    e.barriers.push_back(wall("wall_ymin", 4, 1, -half_extent, 1.0));
    e.barriers.push_back(wall("wall_ymax", 4, 1, half_extent, -1.0));
    for (const auto& [rname, c] : regions) e.regions.push_back(disc(rname, c.x, c.y, c.r));
    e.initial_state = [start](Rng& rng) {
        std::uniform_real_distribution<double> u(-0.1, 0.1);
        Vec s = start;
        s(0) += u(rng);
        s(1) += u(rng);
        return s;
    };
    e.scale = vec({half_extent, half_extent, pi, 2.0});
    return e;
}

}  // namespace

std::vector<std::string> EnvSpec::aps() const {
    std::vector<std::string> out;
    for (const auto& r : regions) out.push_back(r.name);
    out.push_back("unsafe");
    return out;
}

Vec EnvSpec::true_field(const Vec& s, const Vec& a) const { return f_true(s) + g_true(s) * a; }
Vec EnvSpec::nominal_field(const Vec& s, const Vec& a) const { return f_nominal(s) + g_nominal(s) * a; }
Vec EnvSpec::residual(const Vec& s, const Vec& a) const { return true_field(s, a) - nominal_field(s, a); }

double EnvSpec::min_barrier(const Vec& s) const {
    double h = std::numeric_limits<double>::infinity();
    for (const auto& b : barriers) h = std::min(h, b.h(s));
    return h;
}

EnvSpec make_pendulum(const EnvOptions& opt) {
    check(opt);
    const double m = 1.0, l = 1.0, g = 9.81;
    const double ln = perturbed(l, opt);
    EnvSpec e;
    e.name = "pendulum";
    e.m = 1;
    e.a_low = vec({-15.0});
    e.a_high = vec({15.0});
    e.dt = opt.dt > 0 ? opt.dt : 0.05;
    const double w = opt.region_half_width;
    e.regions.push_back({"green", [w](const Vec& s) { return std::abs(s(0) + pi / 4) <= w; }});
    e.regions.push_back({"yellow", [w](const Vec& s) { return std::abs(s(0) - pi / 4) <= w; }});
    const double lim2 = (pi / 2) * (pi / 2);
    if (!opt.second_order) {
        // Literal first-order model: theta' = (3g/2l) sin(theta) + 3/(2 m l^2) u.
        e.n = 1;
        e.f_true = [=](const Vec& s) { return vec({3.0 * g / (2.0 * l) * std::sin(s(0))}); };
        e.f_nominal = [=](const Vec& s) { return vec({3.0 * g / (2.0 * ln) * std::sin(s(0))}); };
        e.g_true = e.g_nominal = [=](const Vec&) { return Mat::Constant(1, 1, 3.0 / (2.0 * m * l * l)); };
        e.residual_dims = {0};
        e.barriers.push_back(symmetric_bound("angle", 1, 0, lim2, 1));
        e.initial_state = [](Rng& rng) { return vec({std::uniform_real_distribution<double>(-0.1, 0.1)(rng)}); };
        e.scale = vec({pi / 2});
    } else {
        // Rigid rod about its pivot: theta'' = (3g/2l) sin(theta) + 3/(m l^2) u.
        e.n = 2;
        e.f_true = [=](const Vec& s) { return vec({s(1), 3.0 * g / (2.0 * l) * std::sin(s(0))}); };
        e.f_nominal = [=](const Vec& s) { return vec({s(1), 3.0 * g / (2.0 * ln) * std::sin(s(0))}); };
        e.g_true = e.g_nominal = [=](const Vec&) {
            Mat gm = Mat::Zero(2, 1);
            gm(1, 0) = 3.0 / (m * l * l);
            return gm;
        };
        e.residual_dims = {1};
        e.barriers.push_back(symmetric_bound("angle", 2, 0, lim2, 2));
        e.initial_state = [](Rng& rng) {
            std::uniform_real_distribution<double> u(-0.1, 0.1);
            double th = u(rng);
            return vec({th, 0.0});
        };
        e.scale = vec({pi / 2, 5.0});
    }
    return e;
}

EnvSpec make_cartpole(const EnvOptions& opt) {
    check(opt);
    struct P {
        double mc, mp, l, g;
    };
    const P truth{1.0, 0.1, 0.5, 9.8};
    const P nom{perturbed(truth.mc, opt), perturbed(truth.mp, opt), perturbed(truth.l, opt), truth.g};
    // s = [theta_p, s_c, theta_p', s_c'] with theta_p measured from upright.
    auto drift = [](P p) {
        return [p](const Vec& s) {
            const double th = s(0), w = s(2), c = std::cos(th), sn = std::sin(th), M = p.mc + p.mp;
            const double den = 4.0 / 3.0 * M - p.mp * c * c;
            const double thdd = (M * p.g * sn - c * p.mp * p.l * w * w * sn) / (p.l * den);
            const double xdd = (4.0 / 3.0 * p.mp * p.l * w * w * sn - p.mp * p.g * sn * c) / den;
            return vec({w, s(3), thdd, xdd});
        };
    };
    auto gain = [](P p) {
        return [p](const Vec& s) {
            const double c = std::cos(s(0)), M = p.mc + p.mp;
            const double den = 4.0 / 3.0 * M - p.mp * c * c;
            Mat g = Mat::Zero(4, 1);
            g(2, 0) = -c / (p.l * den);
            g(3, 0) = 4.0 / 3.0 / den;
            return g;
        };
    };
    EnvSpec e;
    e.name = "cartpole";
    e.n = 4;
    e.m = 1;
    e.a_low = vec({-20.0});
    e.a_high = vec({20.0});
    e.dt = opt.dt > 0 ? opt.dt : 0.02;
    e.f_true = drift(truth);
    e.f_nominal = drift(nom);
    e.g_true = e.g_nominal = gain(truth);
    e.residual_dims = {2, 3};
    const double th_max = 12.0 * pi / 180.0;
    e.barriers.push_back(symmetric_bound("angle", 4, 0, th_max * th_max, 2));
    e.barriers.push_back(symmetric_bound("position", 4, 1, 2.4 * 2.4, 2));
    e.regions.push_back({"green", [](const Vec& s) { return s(1) >= -1.44 && s(1) <= -0.96; }});
    e.regions.push_back({"yellow", [](const Vec& s) { return s(1) >= 0.96 && s(1) <= 1.44; }});
    e.initial_state = [](Rng& rng) {
        std::uniform_real_distribution<double> u(-0.05, 0.05);
        Vec s(4);
        for (int i = 0; i < 4; ++i) s(i) = u(rng);
        return s;
    };
    e.scale = vec({th_max, 2.4, 2.0, 2.0});
    return e;
}

EnvSpec make_car(const EnvOptions& opt) {
    return car_model("car", opt, 0.05, 5.0, {{0.0, 0.0, 1.0}}, {{"goal", {3.5, 3.5, 0.6}}}, vec({-3.5, -3.5, pi / 4, 0.0}));
}

EnvSpec make_particle_gym(const EnvOptions& opt) {
    std::vector<std::pair<std::string, Circle>> regions = {
        {"r1", {-3.0, 3.0, 0.6}}, {"r2", {3.0, 3.0, 0.6}}, {"r3", {3.0, -3.0, 0.6}},
        {"r4", {-3.0, -3.0, 0.6}}, {"r5", {0.0, 3.8, 0.6}}};
    return car_model("gym", opt, 0.02, 5.0, {{0.0, 0.0, 1.2}, {-2.0, 0.5, 0.6}}, regions, vec({0.0, -3.5, pi / 2, 0.0}));
}

EnvSpec make_rover(const EnvOptions& opt) {
    std::vector<std::pair<std::string, Circle>> regions = {{"vstart", {-8.0, -8.0, 0.8}}};
    const double xs[10] = {-6.0, -2.0, 2.0, 6.0, 8.0, 6.0, 2.0, -2.0, -6.0, -8.0};
    const double ys[10] = {-8.0, -8.5, -8.0, -6.0, -1.0, 5.0, 8.0, 8.5, 6.0, 1.0};
    for (int k = 0; k < 10; ++k) regions.push_back({"v" + std::to_string(k + 1), {xs[k], ys[k], 0.8}});
    return car_model("rover", opt, 0.02, 10.0, {{0.0, 0.0, 2.5}}, regions, vec({-8.0, -8.0, 0.0, 0.0}));
}

EnvSpec make_env(const std::string& name, const EnvOptions& opt) {
    if (name == "pendulum") return make_pendulum(opt);
    if (name == "cartpole") return make_cartpole(opt);
    if (name == "car") return make_car(opt);
    if (name == "gym") return make_particle_gym(opt);
    if (name == "rover") return make_rover(opt);
    throw std::invalid_argument("unknown environment '" + name + "'");
}

Vec clamp_action(const EnvSpec& spec, const Vec& a, bool* clamped) {
    if (a.size() != spec.m) throw std::invalid_argument("action has the wrong dimension");
    Vec c = a.cwiseMax(spec.a_low).cwiseMin(spec.a_high);
    if (clamped) *clamped = (c - a).cwiseAbs().maxCoeff() > 0.0;
    return c;
}

StepResult step_dynamics(const EnvSpec& spec, const Vec& s, const Vec& a, double dt, Rng* rng) {
    StepResult r;
    const Vec u = clamp_action(spec, a, &r.clamped);
    Vec w = Vec::Zero(spec.n);
    if (spec.noise_sigma > 0 && rng) {
        std::normal_distribution<double> nd(0.0, spec.noise_sigma);
        for (int i : spec.noise_dims) w(i) = nd(*rng);
    }
    auto F = [&](const Vec& x) { Vec v = spec.true_field(x, u); v += w; return v; };
    const Vec k1 = F(s);
    const Vec k2 = F(s + 0.5 * dt * k1);
    const Vec k3 = F(s + 0.5 * dt * k2);
    const Vec k4 = F(s + dt * k3);
    r.s = s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    r.diverged = !r.s.allFinite();
    return r;
}

Vec nominal_step(const EnvSpec& spec, const Vec& s, const Vec& a, double dt) {
    auto F = [&](const Vec& x) { return spec.nominal_field(x, a); };
    const Vec k1 = F(s);
    const Vec k2 = F(s + 0.5 * dt * k1);
    const Vec k3 = F(s + 0.5 * dt * k2);
    const Vec k4 = F(s + dt * k3);
    return s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

std::vector<std::string> label(const EnvSpec& spec, const Vec& s) {
    std::vector<std::string> out;
    for (const auto& r : spec.regions)
        if (r.contains(s)) out.push_back(r.name);
    if (spec.min_barrier(s) < 0.0) out.push_back("unsafe");
    return out;
}

Labeler::Labeler(const EnvSpec& spec, const std::vector<std::string>& aps) : spec_(&spec) {
    for (const auto& ap : aps) {
        int idx = -2;
        if (ap == "unsafe") idx = -1;
        for (std::size_t k = 0; k < spec.regions.size(); ++k)
            if (spec.regions[k].name == ap) idx = static_cast<int>(k);
        if (idx == -2) throw std::invalid_argument("environment '" + spec.name + "' does not label proposition '" + ap + "'");
        region_.push_back(idx);
    }
}

ltl::Letter Labeler::operator()(const Vec& s) const {
    ltl::Letter l = 0;
    for (std::size_t i = 0; i < region_.size(); ++i) {
        const bool holds = region_[i] < 0 ? spec_->min_barrier(s) < 0.0 : spec_->regions[region_[i]].contains(s);
        if (holds) l |= ltl::Letter{1} << i;
    }
    return l;
}

void write_trajectory_csv(const EnvSpec& spec, const std::vector<TrajectoryRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "t";
    for (int i = 0; i < spec.n; ++i) out << ",s" << i + 1;
    for (int i = 0; i < spec.m; ++i) out << ",a" << i + 1;
    out << ",labels\n";
    out.precision(10);
    for (const auto& r : rows) {
        out << r.t;
        for (int i = 0; i < spec.n; ++i) out << ',' << r.s(i);
        for (int i = 0; i < spec.m; ++i) out << ',' << (i < r.a.size() ? r.a(i) : 0.0);
        std::string labels;
        for (const auto& l : label(spec, r.s)) labels += (labels.empty() ? "" : " ") + l;
        out << ',' << labels << '\n';
    }
}

}  // namespace tlshield::envs
