#include "tlshield/cbf.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <functional>
#include <tuple>

namespace tlshield::cbf {

namespace {

Mat jacobian(const std::function<Vec(const Vec&)>& f, const Vec& s) {
    const Vec f0 = f(s);
    Mat J(f0.size(), s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        const double step = 1e-6 * std::max(1.0, std::abs(s(i)));
        Vec sp = s, sm = s;
        sp(i) += step;
        sm(i) -= step;
        J.col(i) = (f(sp) - f(sm)) / (2.0 * step);
    }
    return J;
}

// Row form G x >= g over x = [a; eps].
struct Rows {
    Mat G;
    Vec g;
};

}  // namespace

Vec pole_place(int relative_degree, const std::vector<double>& poles) {
    if (relative_degree < 1 || relative_degree > 2) throw std::invalid_argument("relative degree must be 1 or 2");
    if (static_cast<int>(poles.size()) < relative_degree) throw std::invalid_argument("need one pole per relative degree");
    for (int i = 0; i < relative_degree; ++i)
        if (!(poles[i] < 0)) throw std::invalid_argument("poles must be strictly negative");
    Vec K(relative_degree);
    if (relative_degree == 1) {
        K(0) = -poles[0];
    } else {
        // (s - p1)(s - p2) = s^2 + k1 s + k0
        K(0) = poles[0] * poles[1];
        K(1) = -(poles[0] + poles[1]);
    }
    return K;
}

bool is_hurwitz(const Vec& K) {
    const Eigen::Index r = K.size();
    Mat A = Mat::Zero(r, r);
    for (Eigen::Index i = 0; i + 1 < r; ++i) A(i, i + 1) = 1.0;
    A.row(r - 1) -= K.transpose();
    Eigen::EigenSolver<Mat> es(A);
    return (es.eigenvalues().real().array() < 0).all();
}

Ecbf::Ecbf(envs::Barrier b, Vec k) : barrier(std::move(b)), K(std::move(k)) {
    if (K.size() != barrier.relative_degree) throw std::invalid_argument("gain size does not match the relative degree");
    if (!is_hurwitz(K)) throw std::invalid_argument("barrier '" + barrier.name + "' gains are not Hurwitz");
}

Vec traverse(const envs::Barrier& b, const envs::EnvSpec& env, const Vec& s, const Vec& d_hat) {
    Vec xi(b.relative_degree);
    xi(0) = b.h(s);
    if (b.relative_degree == 2) xi(1) = b.grad(s).dot(env.f_nominal(s) + d_hat);
    return xi;
}

LinearConstraint ecbf_constraint(const Ecbf& e, const envs::EnvSpec& env, const Vec& s, const Vec& lower, const Vec& upper) {
    const auto& b = e.barrier;
    const Vec mu = 0.5 * (lower + upper);
    const Vec w = (0.5 * (upper - lower)).cwiseMax(0.0);
    const Vec fbar = env.f_nominal(s) + mu;
    const Mat g = env.g_nominal(s);
    const Vec grad = b.grad(s);
    const double h = b.h(s);
    LinearConstraint c;
    if (b.relative_degree == 1) {
        c.alpha = g.transpose() * grad;
        c.beta = grad.dot(fbar) + e.K(0) * h - grad.cwiseAbs().dot(w);
        return c;
    }
    const Mat J = jacobian(env.f_nominal, s);
    const Mat Hh = b.hess(s);
    const double L1 = grad.dot(fbar);
    const double L2 = fbar.dot(Hh * fbar) + grad.dot(J * fbar);
    const Vec lin = 2.0 * Hh * fbar + J.transpose() * grad + e.K(1) * grad;
    // Lower bound of delta^T Hh delta over the box |delta_i| <= w_i.
    double quad = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i)
        for (Eigen::Index j = 0; j < w.size(); ++j)
            quad += i == j ? std::min(0.0, Hh(i, i)) * w(i) * w(i) : -std::abs(Hh(i, j)) * w(i) * w(j);
    c.alpha = g.transpose() * (Hh * fbar + J.transpose() * grad);
    c.beta = L2 + e.K(0) * h + e.K(1) * L1 - lin.cwiseAbs().dot(w) + quad;
    return c;
}

LinearConstraint discrete_cbf_constraint(const envs::Barrier& b, const Vec& s, const StepFn& step, double eta, const Vec& a_ref) {
    if (b.relative_degree != 1) throw std::invalid_argument("discrete barrier condition needs relative degree 1");
    if (!(eta > 0 && eta <= 1)) throw std::invalid_argument("eta must lie in (0, 1]");
    const Vec F0 = step(s, a_ref);
    Mat B(F0.size(), a_ref.size());
    for (Eigen::Index j = 0; j < a_ref.size(); ++j) {
        const double da = 1e-6 * std::max(1.0, std::abs(a_ref(j)));
        Vec ap = a_ref, am = a_ref;
        ap(j) += da;
        am(j) -= da;
        B.col(j) = (step(s, ap) - step(s, am)) / (2.0 * da);
    }
    LinearConstraint c;
    c.alpha = B.transpose() * b.grad(F0);
    c.beta = b.h(F0) - c.alpha.dot(a_ref) - (1.0 - eta) * b.h(s);
    return c;
}

double qp_objective(const QpProblem& p, const Vec& a, const Vec& eps) {
    const Vec z = p.total_objective ? Vec(p.a_rl + a) : a;
    return 0.5 * z.dot(p.H * z) + p.k_eps * eps.sum();
}

namespace {

Rows build_rows(const QpProblem& p, int m, int k) {
    const int nc = static_cast<int>(p.constraints.size());
    const int rows = nc + 2 * m + k;
    Rows r{Mat::Zero(rows, m + k), Vec::Zero(rows)};
    for (int i = 0; i < nc; ++i) {
        const auto& c = p.constraints[i];
        r.G.row(i).head(m) = c.alpha.transpose();
        r.G(i, m + (p.shared_slack ? 0 : i)) = 1.0;
        r.g(i) = -(c.alpha.dot(p.a_rl) + c.beta);
    }
    for (int j = 0; j < m; ++j) {
        r.G(nc + j, j) = 1.0;
        r.g(nc + j) = p.a_low(j) - p.a_rl(j);
        r.G(nc + m + j, j) = -1.0;
        r.g(nc + m + j) = -(p.a_high(j) - p.a_rl(j));
    }
    for (int l = 0; l < k; ++l) r.G(nc + 2 * m + l, m + l) = 1.0;
    return r;
}

int slack_count(const QpProblem& p) {
    const int nc = static_cast<int>(p.constraints.size());
    return nc == 0 ? 0 : (p.shared_slack ? 1 : nc);
}

}  // namespace

QpSolution solve_qp(const QpProblem& p) {
    const int m = static_cast<int>(p.a_rl.size());
    if (p.H.rows() != m || p.H.cols() != m || p.a_low.size() != m || p.a_high.size() != m)
        throw std::invalid_argument("QP dimensions are inconsistent");
    if ((p.a_low.array() > p.a_high.array()).any()) throw QpError("empty action box");
    const int k = slack_count(p);
    const int nv = m + k;
    const Rows R = build_rows(p, m, k);
    const int rows = static_cast<int>(R.g.size());
    const int nc = static_cast<int>(p.constraints.size());

    Mat P = Mat::Zero(nv, nv);
    P.topLeftCorner(m, m) = p.H;
    Vec q = Vec::Zero(nv);
    if (p.total_objective) q.head(m) = p.H * p.a_rl;
    q.tail(k).setConstant(p.k_eps);

    const double tol_primal = 1e-9;
    const double tol_dual = 1e-9 * (1.0 + p.k_eps);
    std::vector<int> subset;

    // Depth-first over subsets of increasing size; any KKT point of this convex QP is the optimum.
    auto try_subset = [&](QpSolution& out) {
        const int s = static_cast<int>(subset.size());
        for (int idx : subset)
            if (idx >= nc && idx < nc + m && std::find(subset.begin(), subset.end(), idx + m) != subset.end()) return false;
        Mat KKT = Mat::Zero(nv + s, nv + s);
        Vec rhs(nv + s);
        KKT.topLeftCorner(nv, nv) = P;
        rhs.head(nv) = -q;
        for (int t = 0; t < s; ++t) {
            KKT.block(0, nv + t, nv, 1) = -R.G.row(subset[t]).transpose();
            KKT.block(nv + t, 0, 1, nv) = R.G.row(subset[t]);
            rhs(nv + t) = R.g(subset[t]);
        }
        Eigen::FullPivLU<Mat> lu(KKT);
        if (lu.rank() < nv + s) return false;
        const Vec sol = lu.solve(rhs);
        const Vec x = sol.head(nv);
        const Vec lam = sol.tail(s);
        if (s && lam.minCoeff() < -tol_dual) return false;
        const Vec slackness = R.G * x - R.g;
        for (int i = 0; i < rows; ++i)
            if (slackness(i) < -tol_primal * (1.0 + std::abs(R.g(i)))) return false;
        out.a_pt = x.head(m);
        out.eps = x.tail(k).cwiseMax(0.0);
        out.active = subset;
        out.multipliers = Vec::Zero(rows);
        for (int t = 0; t < s; ++t) out.multipliers(subset[t]) = std::max(0.0, lam(t));
        out.objective = qp_objective(p, out.a_pt, out.eps);
        return true;
    };

    QpSolution best;
    std::function<bool(int, int)> choose = [&](int start, int remaining) -> bool {
        if (remaining == 0) return try_subset(best);
        for (int i = start; i <= rows - remaining; ++i) {
            subset.push_back(i);
            if (choose(i + 1, remaining - 1)) return true;
            subset.pop_back();
        }
        return false;
    };
    for (int size = 0; size <= std::min(nv, rows); ++size)
        if (choose(0, size)) return best;
    throw QpError("no KKT point found");
}

double kkt_residual(const QpProblem& p, const QpSolution& sol) {
    const int m = static_cast<int>(p.a_rl.size());
    const int k = slack_count(p);
    const Rows R = build_rows(p, m, k);
    Vec x(m + k);
    x << sol.a_pt, sol.eps;
    Vec grad = Vec::Zero(m + k);
    grad.head(m) = p.H * (p.total_objective ? Vec(p.a_rl + sol.a_pt) : sol.a_pt);
    grad.tail(k).setConstant(p.k_eps);
    const Vec stat = grad - R.G.transpose() * sol.multipliers;
    const Vec slack = R.G * x - R.g;
    double res = stat.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < slack.size(); ++i) {
        res = std::max(res, std::max(0.0, -slack(i)));
        res = std::max(res, std::max(0.0, -sol.multipliers(i)));
        res = std::max(res, std::abs(sol.multipliers(i) * slack(i)) / (1.0 + p.k_eps));
    }
    return res;
}

SafetyFilter::SafetyFilter(const envs::EnvSpec& env, FilterConfig cfg) : env_(&env), cfg_(std::move(cfg)) {
    for (const auto& b : env.barriers) {
        auto it = cfg_.barrier_poles.find(b.name);
        std::vector<double> poles = it != cfg_.barrier_poles.end() ? it->second : cfg_.poles;
        if (static_cast<int>(poles.size()) < b.relative_degree) poles.resize(b.relative_degree, poles.empty() ? -1.0 : poles.back());
        ecbfs_.emplace_back(b, pole_place(b.relative_degree, poles));
    }
}

std::vector<LinearConstraint> SafetyFilter::constraints(const Vec& s) const {
    Vec lo = Vec::Zero(env_->n), hi = Vec::Zero(env_->n);
    if (model_) std::tie(lo, hi) = gp::confidence_bounds(*model_, s, cfg_.k_delta);
    std::vector<LinearConstraint> out;
    for (const auto& e : ecbfs_) {
        if (cfg_.discrete && e.barrier.relative_degree == 1) {
            const Vec mu = 0.5 * (lo + hi);
            const double dt = env_->dt;
            StepFn step = [&, mu, dt](const Vec& x, const Vec& a) { return Vec(envs::nominal_step(*env_, x, a, dt) + dt * mu); };
            out.push_back(discrete_cbf_constraint(e.barrier, s, step, cfg_.eta, Vec::Zero(env_->m)));
        } else {
            out.push_back(ecbf_constraint(e, *env_, s, lo, hi));
        }
    }
    return out;
}

SafeAction SafetyFilter::safe_action(const Vec& s, const Vec& a_rl) const {
    SafeAction out;
    const Vec a = envs::clamp_action(*env_, a_rl);
    if (!cfg_.enabled || ecbfs_.empty()) {
        out.a_safe = a;
        out.a_pt = Vec::Zero(env_->m);
        return out;
    }
    QpProblem p;
    p.H = Mat::Identity(env_->m, env_->m);
    p.k_eps = cfg_.k_eps;
    p.a_rl = a;
    p.a_low = env_->a_low;
    p.a_high = env_->a_high;
    p.constraints = constraints(s);
    p.shared_slack = cfg_.shared_slack;
    p.total_objective = cfg_.total_objective;
    const auto sol = solve_qp(p);
    out.a_pt = sol.a_pt;
    out.a_safe = envs::clamp_action(*env_, a + sol.a_pt);
    out.eps = sol.max_eps();
    return out;
}

}  // namespace tlshield::cbf
