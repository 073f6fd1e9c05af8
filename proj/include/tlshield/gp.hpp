#pragma once

#include <Eigen/Cholesky>
#include <stdexcept>
#include <utility>
#include <vector>

#include "tlshield/envs.hpp"

namespace tlshield::gp {

struct GpHyper {
    double sigma_f = 1.0;
    double lengthscale = 1.0;
    Vec lengthscales;  // per input dimension; empty means isotropic `lengthscale`
    double sigma_noise = 0.1;
    int n_max = 200;
    double k_delta = 2.0;
    bool grid_search = false;
};

struct Measurement {
    Vec s;
    Vec y;
    int episode = 0;
};

class GpError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// One GP per modeled output dimension, sharing the kernel and hence the factor.
struct GpModel {
    GpHyper hyper;
    int out_dim = 0;
    std::vector<int> dims;  // modeled output components; the rest are exactly zero
    Mat X;                  // N x n_in
    Mat alpha;              // N x |dims|, (K + s^2 I)^-1 y
    Eigen::LLT<Mat> llt;

    int size() const { return static_cast<int>(X.rows()); }
};

double kernel(const GpHyper& h, const Vec& a, const Vec& b);

// Empty data yields the prior model.
GpModel fit(const std::vector<Measurement>& data, const GpHyper& hyper, int out_dim, std::vector<int> dims = {});

struct Posterior {
    Vec mean;
    Vec std;
};
Posterior posterior(const GpModel& model, const Vec& s);
std::pair<Vec, Vec> confidence_bounds(const GpModel& model, const Vec& s, double k_delta);

// Sum over modeled dimensions of the log marginal likelihood.
double log_marginal_likelihood(const std::vector<Measurement>& data, const GpHyper& hyper, const std::vector<int>& dims);
// Picks sigma_f and lengthscale on a fixed multiplicative grid around `hyper`.
GpHyper grid_search(const std::vector<Measurement>& data, const GpHyper& hyper, const std::vector<int>& dims);

Measurement residual_from_transition(const envs::EnvSpec& spec, const Vec& s, const Vec& a, const Vec& s_next,
                                     double dt, int episode = 0);

std::vector<Measurement> subsample(const std::vector<Measurement>& buffer, int n, Rng& rng);

}  // namespace tlshield::gp
