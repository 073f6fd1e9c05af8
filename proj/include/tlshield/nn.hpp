#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tlshield/envs.hpp"

namespace tlshield::nn {

enum class OutputAct : std::uint8_t { Linear = 0, TanhBox = 1 };

// Fully connected ReLU network. Parameters live in one flat vector, layer by
// layer: W (column-major, out x in) followed by b.
class Mlp {
public:
    struct Cache {
        std::vector<Mat> inputs;  // input to each layer
        std::vector<Mat> pre;     // pre-activation of each layer
    };

    Mlp() = default;
    Mlp(std::vector<int> sizes, OutputAct act, Rng& rng, double final_scale = 1.0);

    const std::vector<int>& sizes() const { return sizes_; }
    OutputAct output_act() const { return act_; }
    int in_dim() const { return sizes_.front(); }
    int out_dim() const { return sizes_.back(); }
    Eigen::Index num_params() const { return params.size(); }

    // TanhBox maps the last layer through center + half_range * tanh(z).
    void set_output_box(const Vec& low, const Vec& high);

    Mat forward(const Mat& X, Cache* cache = nullptr) const;  // columns are samples
    Vec forward(const Vec& x) const;
    // Accumulates (sums over the batch) parameter gradients into grad and returns dL/dX.
    Mat backward(const Cache& cache, const Mat& out_grad, Vec& grad) const;

    Vec params;
    Vec out_center, out_half;

private:
    std::vector<int> sizes_;
    OutputAct act_ = OutputAct::Linear;
};

struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    Vec m, v;
    long t = 0;

    void step(Vec& params, const Vec& grad);
};

void soft_update(Mlp& target, const Mlp& online, double tau);

struct NamedNet {
    std::string name;
    Mlp net;
};

struct Checkpoint {
    std::uint64_t config_hash = 0;
    std::vector<NamedNet> nets;
    std::vector<std::uint64_t> counters;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void write_checkpoint(std::ostream& out, const Checkpoint& c);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

std::uint64_t fnv1a(const std::string& text);

}  // namespace tlshield::nn
