#include "tlshield/gp.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <numbers>

namespace tlshield::gp {

namespace {

std::vector<int> all_dims(int n) {
    std::vector<int> d(n);
    for (int i = 0; i < n; ++i) d[i] = i;
    return d;
}

Mat gram(const GpHyper& h, const Mat& X) {
    const Eigen::Index n = X.rows();
    Mat K(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) K(i, j) = K(j, i) = kernel(h, X.row(i).transpose(), X.row(j).transpose());
    K.diagonal().array() += h.sigma_noise * h.sigma_noise;
    return K;
}

}  // namespace

double kernel(const GpHyper& h, const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw std::invalid_argument("kernel inputs differ in dimension");
    double r2;
    if (h.lengthscales.size() == a.size()) {
        r2 = ((a - b).array() / h.lengthscales.array()).square().sum();
    } else {
        r2 = (a - b).squaredNorm() / (h.lengthscale * h.lengthscale);
    }
    return h.sigma_f * h.sigma_f * std::exp(-0.5 * r2);
}

GpModel fit(const std::vector<Measurement>& data, const GpHyper& hyper, int out_dim, std::vector<int> dims) {
    GpModel m;
    m.hyper = hyper;
    m.out_dim = out_dim;
    m.dims = dims.empty() ? all_dims(out_dim) : std::move(dims);
    if (data.empty()) return m;
    if (static_cast<int>(data.size()) > hyper.n_max)
        throw GpError("training set of " + std::to_string(data.size()) + " exceeds the cap of " + std::to_string(hyper.n_max));
    const Eigen::Index N = static_cast<Eigen::Index>(data.size()), n_in = data[0].s.size();
    m.X.resize(N, n_in);
    Mat Y(N, static_cast<Eigen::Index>(m.dims.size()));
    for (Eigen::Index i = 0; i < N; ++i) {
        if (!data[i].s.allFinite() || !data[i].y.allFinite()) throw GpError("non-finite measurement");
        m.X.row(i) = data[i].s.transpose();
        for (std::size_t k = 0; k < m.dims.size(); ++k) Y(i, static_cast<Eigen::Index>(k)) = data[i].y(m.dims[k]);
    }
    m.llt.compute(gram(hyper, m.X));
    if (m.llt.info() != Eigen::Success)
        throw GpError("kernel matrix is not positive definite; raise sigma_noise");
    m.alpha = m.llt.solve(Y);
    return m;
}

Posterior posterior(const GpModel& model, const Vec& s) {
    Posterior p{Vec::Zero(model.out_dim), Vec::Zero(model.out_dim)};
    const double prior = model.hyper.sigma_f * model.hyper.sigma_f;
    if (model.size() == 0) {
        for (int d : model.dims) p.std(d) = model.hyper.sigma_f;
        return p;
    }
    Vec k(model.size());
    for (int i = 0; i < model.size(); ++i) k(i) = kernel(model.hyper, s, model.X.row(i).transpose());
    const Vec mu = model.alpha.transpose() * k;
    const Vec v = model.llt.matrixL().solve(k);
    const double var = std::max(0.0, prior - v.squaredNorm());
    for (std::size_t j = 0; j < model.dims.size(); ++j) {
        p.mean(model.dims[j]) = mu(static_cast<Eigen::Index>(j));
        p.std(model.dims[j]) = std::sqrt(var);
    }
    return p;
}

std::pair<Vec, Vec> confidence_bounds(const GpModel& model, const Vec& s, double k_delta) {
    if (!(k_delta > 0)) throw std::invalid_argument("k_delta must be positive");
    const auto p = posterior(model, s);
    return {p.mean - k_delta * p.std, p.mean + k_delta * p.std};
}

double log_marginal_likelihood(const std::vector<Measurement>& data, const GpHyper& hyper, const std::vector<int>& dims) {
    if (data.empty()) return 0.0;
    const Eigen::Index N = static_cast<Eigen::Index>(data.size());
    Mat X(N, data[0].s.size());
    for (Eigen::Index i = 0; i < N; ++i) X.row(i) = data[i].s.transpose();
    Eigen::LLT<Mat> llt(gram(hyper, X));
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    double total = 0.0;
    for (int d : dims) {
        Vec y(N);
        for (Eigen::Index i = 0; i < N; ++i) y(i) = data[i].y(d);
        total += -0.5 * y.dot(llt.solve(y)) - 0.5 * logdet - 0.5 * N * std::log(2.0 * std::numbers::pi);
    }
    return total;
}

GpHyper grid_search(const std::vector<Measurement>& data, const GpHyper& hyper, const std::vector<int>& dims) {
    GpHyper best = hyper;
    double best_ll = log_marginal_likelihood(data, hyper, dims);
    for (double fs : {0.25, 0.5, 1.0, 2.0, 4.0})
        for (double fl : {0.25, 0.5, 1.0, 2.0, 4.0}) {
            GpHyper h = hyper;
            h.sigma_f *= fs;
            h.lengthscale *= fl;
            h.lengthscales = hyper.lengthscales * fl;
            const double ll = log_marginal_likelihood(data, h, dims);
            if (ll > best_ll) {
                best_ll = ll;
                best = h;
            }
        }
    return best;
}

Measurement residual_from_transition(const envs::EnvSpec& spec, const Vec& s, const Vec& a, const Vec& s_next,
                                     double dt, int episode) {
    if (!(dt > 0)) throw std::invalid_argument("dt must be positive");
    if (!s.allFinite() || !a.allFinite() || !s_next.allFinite()) throw GpError("non-finite transition");
    Measurement m;
    m.s = s;
    m.y = (s_next - s) / dt - spec.f_nominal(s) - spec.g_nominal(s) * a;
    m.episode = episode;
    return m;
}

std::vector<Measurement> subsample(const std::vector<Measurement>& buffer, int n, Rng& rng) {
    if (n < 1) throw std::invalid_argument("subsample size must be at least 1");
    if (static_cast<int>(buffer.size()) <= n) return buffer;
    std::vector<std::size_t> idx(buffer.size()), chosen;
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sample(idx.begin(), idx.end(), std::back_inserter(chosen), n, rng);
    std::vector<Measurement> out;
    out.reserve(chosen.size());
    for (std::size_t i : chosen) out.push_back(buffer[i]);
    return out;
}

}  // namespace tlshield::gp
