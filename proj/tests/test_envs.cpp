#include "catch_amalgamated.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "tlshield/envs.hpp"

using namespace tlshield;
using namespace tlshield::envs;
using Catch::Approx;

namespace {

const double kPi = 3.14159265358979323846;

Vec v1(double x) { return Vec::Constant(1, x); }

bool has(const std::vector<std::string>& labels, const std::string& name) {
    return std::find(labels.begin(), labels.end(), name) != labels.end();
}

Vec integrate(const EnvSpec& e, Vec s, const Vec& a, double dt, int steps) {
    for (int i = 0; i < steps; ++i) s = step_dynamics(e, s, a, dt).s;
    return s;
}

Vec random_state(const EnvSpec& e, Rng& rng) {
    Vec s = e.initial_state(rng);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int i = 0; i < e.n; ++i) s(i) += u(rng) * e.scale(i);
    return s;
}

Vec random_action(const EnvSpec& e, Rng& rng) {
    Vec a(e.m);
    for (int i = 0; i < e.m; ++i) a(i) = std::uniform_real_distribution<double>(e.a_low(i), e.a_high(i))(rng);
    return a;
}

}  // namespace

TEST_CASE("pendulum equilibrium and vector field", "[envs]") {
    const auto e = make_pendulum();
    CHECK(e.n == 1);
    CHECK(step_dynamics(e, v1(0.0), v1(0.0), e.dt).s(0) == 0.0);
    CHECK(e.true_field(v1(kPi / 6), v1(0.0))(0) == Approx(7.3575).epsilon(1e-12));
    CHECK(e.true_field(v1(0.0), v1(2.0))(0) == Approx(3.0));
    CHECK(e.a_low(0) == -15.0);
    CHECK(e.a_high(0) == 15.0);
}

TEST_CASE("cart-pole at rest stays at rest", "[envs]") {
    const auto e = make_cartpole({0.3});
    const Vec s = Vec::Zero(4);
    CHECK(integrate(e, s, Vec::Zero(1), e.dt, 50).norm() == 0.0);
    CHECK(e.a_low(0) == -20.0);
    CHECK(e.a_high(0) == 20.0);
}

TEST_CASE("labels follow the region geometry", "[envs]") {
    const auto c = make_cartpole();
    Vec s = Vec::Zero(4);
    s(1) = -1.2;
    CHECK(label(c, s) == std::vector<std::string>{"green"});
    s(1) = 0.0;
    CHECK(label(c, s).empty());
    s(1) = 1.2;
    CHECK(label(c, s) == std::vector<std::string>{"yellow"});

    const auto p = make_pendulum();
    CHECK(label(p, v1(kPi / 4)) == std::vector<std::string>{"yellow"});
    CHECK(label(p, v1(-kPi / 4)) == std::vector<std::string>{"green"});
    CHECK(label(p, v1(0.0)).empty());
    CHECK(has(label(p, v1(1.6)), "unsafe"));

    const Labeler lab(p, {"yellow", "unsafe", "green"});
    CHECK(lab(v1(kPi / 4)) == 1u);
    CHECK(lab(v1(-kPi / 4)) == 4u);
    CHECK(lab(v1(-1.7)) == 2u);
    CHECK_THROWS(Labeler(p, {"blue"}));
}

TEST_CASE("pendulum nominal model and residual", "[envs]") {
    const auto e = make_pendulum({0.4});
    const Vec s = v1(kPi / 6), a = v1(0.0);
    const double f_true = 1.5 * 9.81 * 0.5;
    const double f_nom = 1.5 * 9.81 / 1.4 * 0.5;
    CHECK(e.f_nominal(s)(0) == Approx(f_nom).epsilon(1e-12));
    CHECK(e.residual(s, a)(0) == Approx(f_true - f_nom).epsilon(1e-12));
    CHECK(make_pendulum({0.0}).residual(s, a).norm() == 0.0);
}

TEST_CASE("cart-pole barriers", "[envs]") {
    const auto e = make_cartpole({0.3});
    REQUIRE(e.barriers.size() == 2);
    Vec s = Vec::Zero(4);
    s(0) = 0.1;
    s(1) = 1.0;
    const double th = 12.0 * kPi / 180.0;
    CHECK(e.barriers[0].h(s) == Approx(th * th - 0.01));
    CHECK(e.barriers[1].h(s) == Approx(2.4 * 2.4 - 1.0));
    CHECK(e.barriers[0].relative_degree == 2);
    CHECK(make_cartpole({0.0}).residual(s, Vec::Zero(1)).norm() == 0.0);
}

TEST_CASE("uncertainty outside [0, 1) is rejected", "[envs]") {
    CHECK_THROWS(make_pendulum({1.0}));
    CHECK_THROWS(make_cartpole({-0.1}));
    CHECK_THROWS(make_env("marsh"));
}

TEST_CASE("actions are clamped and flagged", "[envs]") {
    const auto e = make_pendulum();
    bool clamped = false;
    CHECK(clamp_action(e, v1(20.0), &clamped)(0) == 15.0);
    CHECK(clamped);
    CHECK(clamp_action(e, v1(3.0), &clamped)(0) == 3.0);
    CHECK_FALSE(clamped);
    CHECK(step_dynamics(e, v1(0.1), v1(40.0), e.dt).clamped);
    const auto r = step_dynamics(e, v1(std::nan("")), v1(0.0), e.dt);
    CHECK(r.diverged);
}

TEST_CASE("RK4 global error is fourth order", "[envs][property]") {
    const auto e = make_pendulum();
    const double T = 0.2;
    const Vec s0 = v1(0.3), a = v1(-2.0);
    auto at = [&](int n) { return integrate(e, s0, a, T / n, n)(0); };
    const double ref = at(64);
    const double e1 = std::abs(at(4) - ref), e2 = std::abs(at(8) - ref);
    const double ratio = e1 / e2;
    INFO("ratio " << ratio);
    CHECK(ratio > 12.0);
    CHECK(ratio < 20.0);
}

TEST_CASE("residual closes the vector field", "[envs][property]") {
    Rng rng(11);
    for (const char* name : {"pendulum", "cartpole", "car", "gym", "rover"}) {
        EnvOptions opt;
        opt.uncertainty = 0.3;
        auto e = make_env(name, opt);
        e.noise_sigma = 0.0;
        for (int k = 0; k < 50; ++k) {
            const Vec s = random_state(e, rng), a = random_action(e, rng);
            const Vec lhs = e.f_nominal(s) + e.g_nominal(s) * a + e.residual(s, a);
            INFO(name);
            CHECK((lhs - e.true_field(s, a)).cwiseAbs().maxCoeff() < 1e-12);
            const Vec r = e.residual(s, a);
            for (int i = 0; i < e.n; ++i)
                if (std::find(e.residual_dims.begin(), e.residual_dims.end(), i) == e.residual_dims.end()) CHECK(r(i) == 0.0);
        }
    }
}

TEST_CASE("unsafe label matches the barrier sign", "[envs][property]") {
    Rng rng(12);
    for (const char* name : {"pendulum", "cartpole", "car", "gym", "rover"}) {
        const auto e = make_env(name);
        for (int k = 0; k < 500; ++k) {
            Vec s = e.initial_state(rng);
            std::uniform_real_distribution<double> u(-1.5, 1.5);
            for (int i = 0; i < e.n; ++i) s(i) = u(rng) * e.scale(i) * 1.3;
            CHECK(has(label(e, s), "unsafe") == (e.min_barrier(s) < 0));
        }
    }
}

TEST_CASE("barrier gradients and Hessians match finite differences", "[envs][property]") {
    Rng rng(13);
    for (const char* name : {"pendulum", "cartpole", "car", "gym"}) {
        const auto e = make_env(name);
        for (const auto& b : e.barriers)
            for (int k = 0; k < 10; ++k) {
                const Vec s = random_state(e, rng);
                const Vec g = b.grad(s);
                const Mat H = b.hess(s);
                for (int i = 0; i < e.n; ++i) {
                    Vec sp = s, sm = s;
                    sp(i) += 1e-5;
                    sm(i) -= 1e-5;
                    CHECK(g(i) == Approx((b.h(sp) - b.h(sm)) / 2e-5).margin(1e-6));
                    if (b.relative_degree == 2) CHECK((H.col(i) - (b.grad(sp) - b.grad(sm)) / 2e-5).norm() < 1e-6);
                }
            }
    }
}

TEST_CASE("noise comes from the caller's stream", "[envs]") {
    const auto e = make_car({0.25});
    const Vec s = e.initial_state(*std::make_unique<Rng>(1));
    Rng a(5), b(5), c(6);
    const Vec u = Vec::Constant(2, 0.1);
    const Vec x = step_dynamics(e, s, u, e.dt, &a).s, y = step_dynamics(e, s, u, e.dt, &b).s, z = step_dynamics(e, s, u, e.dt, &c).s;
    CHECK(x == y);
    CHECK(x != z);
}

TEST_CASE("trajectory dump", "[envs]") {
    const auto e = make_pendulum();
    const auto path = (std::filesystem::temp_directory_path() / "tlshield_traj_test.csv").string();
    write_trajectory_csv(e, {{0.0, v1(kPi / 4), v1(1.0)}, {0.05, v1(0.0), v1(-1.0)}}, path);
    std::ifstream in(path);
    std::string header, r1, r2;
    std::getline(in, header);
    std::getline(in, r1);
    std::getline(in, r2);
    CHECK(header == "t,s1,a1,labels");
    CHECK(r1.substr(r1.rfind(',') + 1) == "yellow");
    CHECK(r2.back() == ',');
    std::filesystem::remove(path);
}
