#include "catch_amalgamated.hpp"

#include <cmath>
#include <map>
#include <random>

#include "oracles.hpp"
#include "tlshield/gp.hpp"

using namespace tlshield;
using Catch::Approx;

namespace {

std::vector<gp::Measurement> make_data(Rng& rng, int n, int dim, double spread) {
    std::uniform_real_distribution<double> u(-spread, spread);
    std::vector<gp::Measurement> data;
    for (int i = 0; i < n; ++i) {
        gp::Measurement m;
        m.s = Vec::NullaryExpr(dim, [&](Eigen::Index) { return u(rng); });
        m.y = Vec::Constant(1, std::sin(m.s.sum()) + 0.1 * u(rng));
        data.push_back(m);
    }
    return data;
}

Mat inputs(const std::vector<gp::Measurement>& d) {
    Mat X(d.size(), d[0].s.size());
    for (std::size_t i = 0; i < d.size(); ++i) X.row(i) = d[i].s.transpose();
    return X;
}

Vec targets(const std::vector<gp::Measurement>& d) {
    Vec y(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) y(i) = d[i].y(0);
    return y;
}

}  // namespace

TEST_CASE("squared-exponential kernel", "[gp]") {
    gp::GpHyper h;
    const Vec a = Vec::Constant(2, 0.3), b = Vec::Constant(2, -0.4);
    CHECK(gp::kernel(h, a, a) == Approx(1.0));
    CHECK(gp::kernel(h, a, b) == gp::kernel(h, b, a));
    Vec c = a;
    c(0) += h.lengthscale;
    CHECK(gp::kernel(h, a, c) == Approx(0.60653065971).epsilon(1e-10));
    h.sigma_f = 2.0;
    CHECK(gp::kernel(h, a, a) == Approx(4.0));
    h.lengthscales = Vec(2);
    h.lengthscales << 1.0, 10.0;
    Vec d = a;
    d(1) += 10.0;
    CHECK(gp::kernel(h, a, d) == Approx(4.0 * std::exp(-0.5)));
}

TEST_CASE("posterior matches the dense oracle", "[gp][oracle]") {
    Rng rng(21);
    for (int inst = 0; inst < 20; ++inst) {
        const int n = 1 + static_cast<int>(rng() % 30), dim = 1 + static_cast<int>(rng() % 3);
        gp::GpHyper h;
        h.sigma_f = 0.5 + (rng() % 100) / 50.0;
        h.lengthscale = 0.3 + (rng() % 100) / 60.0;
        h.sigma_noise = 0.05 + (rng() % 100) / 400.0;
        const auto data = make_data(rng, n, dim, 2.0);
        const auto model = gp::fit(data, h, 1);
        for (int q = 0; q < 5; ++q) {
            const Vec s = make_data(rng, 1, dim, 2.5)[0].s;
            const auto ref = oracle_ref::dense_gp(inputs(data), targets(data), h.sigma_f, h.lengthscale, h.sigma_noise, s);
            const auto post = gp::posterior(model, s);
            CHECK(std::abs(post.mean(0) - ref.mean) < 1e-8);
            CHECK(std::abs(post.std(0) * post.std(0) - ref.var) < 1e-8);
        }
    }
}

TEST_CASE("noiseless interpolation", "[gp]") {
    gp::GpHyper h;
    h.sigma_noise = 0.0;
    gp::Measurement m{Vec::Constant(1, 0.7), Vec::Constant(1, -1.3), 0};
    const auto model = gp::fit({m}, h, 1);
    const auto p = gp::posterior(model, m.s);
    CHECK(std::abs(p.mean(0) + 1.3) < 1e-10);
    CHECK(p.std(0) * p.std(0) < 1e-10);
}

TEST_CASE("prior reversion, empty model and bounds", "[gp]") {
    gp::GpHyper h;
    h.sigma_f = 1.5;
    const auto empty = gp::fit({}, h, 2, {1});
    auto p = gp::posterior(empty, Vec::Zero(2));
    CHECK(p.mean.norm() == 0.0);
    CHECK(p.std(0) == 0.0);
    CHECK(p.std(1) == 1.5);

    Rng rng(3);
    const auto model = gp::fit(make_data(rng, 10, 1, 1.0), h, 1);
    p = gp::posterior(model, Vec::Constant(1, 50.0));
    CHECK(std::abs(p.mean(0)) < 1e-12);
    CHECK(p.std(0) == Approx(1.5));

    gp::GpHyper unit;
    const auto [lo, hi] = gp::confidence_bounds(gp::fit({}, unit, 1), Vec::Zero(1), 2.0);
    CHECK(lo(0) == -2.0);
    CHECK(hi(0) == 2.0);
    CHECK_THROWS(gp::confidence_bounds(model, Vec::Zero(1), 0.0));
}

TEST_CASE("posterior variance is bounded and monotone in data", "[gp][property]") {
    Rng rng(5);
    gp::GpHyper h;
    h.sigma_f = 1.3;
    h.lengthscale = 0.7;
    auto data = make_data(rng, 25, 2, 2.0);
    const auto queries = make_data(rng, 20, 2, 2.5);
    std::vector<gp::Measurement> grown;
    std::vector<double> last(queries.size(), h.sigma_f * h.sigma_f);
    for (const auto& d : data) {
        grown.push_back(d);
        const auto model = gp::fit(grown, h, 1);
        for (std::size_t q = 0; q < queries.size(); ++q) {
            const double var = std::pow(gp::posterior(model, queries[q].s).std(0), 2);
            CHECK(var <= h.sigma_f * h.sigma_f + 1e-12);
            CHECK(var <= last[q] + 1e-10);
            last[q] = var;
        }
    }
}

TEST_CASE("confidence bounds are calibrated on GP samples", "[gp][property]") {
    // Draw the latent function from the prior on a grid, observe it with noise, and count coverage.
    Rng rng(77);
    gp::GpHyper h;
    h.sigma_f = 1.0;
    h.lengthscale = 0.5;
    h.sigma_noise = 0.1;
    const int grid = 120;
    Mat X(grid, 1);
    for (int i = 0; i < grid; ++i) X(i, 0) = -3.0 + 6.0 * i / (grid - 1);
    Mat K(grid, grid);
    for (int i = 0; i < grid; ++i)
        for (int j = 0; j < grid; ++j) K(i, j) = gp::kernel(h, X.row(i).transpose(), X.row(j).transpose());
    K.diagonal().array() += 1e-8;
    const Mat L = Eigen::LLT<Mat>(K).matrixL();
    std::normal_distribution<double> nd;
    int covered = 0, total = 0;
    for (int draw = 0; draw < 100; ++draw) {
        const Vec f = L * Vec::NullaryExpr(grid, [&](Eigen::Index) { return nd(rng); });
        std::vector<gp::Measurement> data;
        for (int i = 0; i < grid; i += 6) data.push_back({X.row(i).transpose(), Vec::Constant(1, f(i) + 0.1 * nd(rng)), 0});
        const auto model = gp::fit(data, h, 1);
        for (int i = 0; i < grid; ++i) {
            const auto [lo, hi] = gp::confidence_bounds(model, X.row(i).transpose(), 2.0);
            covered += f(i) >= lo(0) && f(i) <= hi(0);
            ++total;
        }
    }
    CHECK(static_cast<double>(covered) / total >= 0.95);
}

TEST_CASE("residual measurements from transitions", "[gp]") {
    auto env = envs::make_pendulum({0.0});
    const Vec s = Vec::Constant(1, 0.2), a = Vec::Constant(1, 1.0);
    const double dt = 1e-3;
    auto m = gp::residual_from_transition(env, s, a, envs::step_dynamics(env, s, a, dt).s, dt);
    // Only the secant bias remains: (dt / 2) * d/dt theta' = (dt / 2) * f'(theta) * theta'.
    const double thdot = env.true_field(s, a)(0), fprime = 1.5 * 9.81 * std::cos(0.2);
    CHECK(m.y(0) == Approx(0.5 * dt * fprime * thdot).epsilon(0.02));

    // A constant disturbance is recovered to O(dt^2) when the field is otherwise constant.
    envs::EnvSpec c = env;
    c.f_nominal = [](const Vec&) { return Vec::Zero(1); };
    c.f_true = [](const Vec&) { return Vec::Constant(1, 0.8); };
    m = gp::residual_from_transition(c, s, a, envs::step_dynamics(c, s, a, 0.05).s, 0.05);
    CHECK(m.y(0) == Approx(0.8).margin(1e-12));
    CHECK_THROWS(gp::residual_from_transition(c, s, a, s, 0.0));
}

TEST_CASE("subsampling", "[gp]") {
    Rng rng(9);
    const auto data = make_data(rng, 50, 1, 1.0);
    Rng a(1), b(1);
    CHECK(gp::subsample(data, 60, a).size() == 50);
    const auto x = gp::subsample(data, 20, a);
    const auto y = gp::subsample(data, 20, b);
    REQUIRE(x.size() == 20);
    // Same stream position, same selection.
    Rng c(1);
    gp::subsample(data, 60, c);
    const auto z = gp::subsample(data, 20, c);
    for (std::size_t i = 0; i < 20; ++i) CHECK(z[i].s == x[i].s);
    CHECK(y.size() == 20);

    // Each element is chosen with probability n / N; chi-square over 2000 draws.
    std::vector<int> count(50, 0);
    std::map<double, int> index;
    for (int i = 0; i < 50; ++i) index[data[i].s(0)] = i;
    Rng r(42);
    const int draws = 2000;
    for (int t = 0; t < draws; ++t)
        for (const auto& m : gp::subsample(data, 10, r)) ++count[index[m.s(0)]];
    const double expected = draws * 10.0 / 50.0;
    double chi2 = 0.0;
    for (int k : count) chi2 += (k - expected) * (k - expected) / expected;
    CHECK(chi2 < 90.0);  // 49 dof, p ~ 3e-4
    CHECK_THROWS(gp::subsample(data, 0, r));
}

TEST_CASE("fit errors and capacity", "[gp]") {
    gp::GpHyper h;
    h.n_max = 3;
    Rng rng(2);
    CHECK_THROWS_AS(gp::fit(make_data(rng, 4, 1, 1.0), h, 1), gp::GpError);
    auto d = make_data(rng, 2, 1, 1.0);
    d[0].y(0) = std::nan("");
    CHECK_THROWS_AS(gp::fit(d, h, 1), gp::GpError);
}

TEST_CASE("grid search prefers the generating lengthscale", "[gp]") {
    Rng rng(4);
    gp::GpHyper h;
    h.sigma_f = 1.0;
    h.lengthscale = 0.25;
    h.sigma_noise = 0.05;
    std::uniform_real_distribution<double> u(-3, 3);
    std::vector<gp::Measurement> data;
    for (int i = 0; i < 60; ++i) {
        const double x = u(rng);
        data.push_back({Vec::Constant(1, x), Vec::Constant(1, std::sin(x)), 0});
    }
    const auto best = gp::grid_search(data, h, {0});
    CHECK(best.lengthscale > h.lengthscale);
    CHECK(gp::log_marginal_likelihood(data, best, {0}) >= gp::log_marginal_likelihood(data, h, {0}));
}
