#include "tlshield/nn.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

namespace tlshield::nn {

namespace {

constexpr char kMagic[8] = {'T', 'L', 'S', 'H', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}
void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}
void put_f64(std::ostream& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
    return v;
}
std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("truncated checkpoint");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[i]} << (8 * i);
    return v;
}
double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

Eigen::Index count_params(const std::vector<int>& sizes) {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) n += static_cast<Eigen::Index>(sizes[l + 1]) * (sizes[l] + 1);
    return n;
}

}  // namespace

Mlp::Mlp(std::vector<int> sizes, OutputAct act, Rng& rng, double final_scale) : sizes_(std::move(sizes)), act_(act) {
    if (sizes_.size() < 2) throw std::invalid_argument("network needs at least an input and an output layer");
    params.resize(count_params(sizes_));
    Eigen::Index off = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        const int in = sizes_[l], out = sizes_[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        const double scale = l + 2 == sizes_.size() ? final_scale : 1.0;
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(out) * (in + 1); ++k) params(off + k) = scale * u(rng);
        off += static_cast<Eigen::Index>(out) * (in + 1);
    }
    out_center = Vec::Zero(sizes_.back());
    out_half = Vec::Ones(sizes_.back());
}

void Mlp::set_output_box(const Vec& low, const Vec& high) {
    out_center = 0.5 * (low + high);
    out_half = 0.5 * (high - low);
}

Mat Mlp::forward(const Mat& X, Cache* cache) const {
    if (X.rows() != in_dim()) throw std::invalid_argument("network input has the wrong dimension");
    if (cache) {
        cache->inputs.clear();
        cache->pre.clear();
    }
    Mat a = X;
    Eigen::Index off = 0;
    const std::size_t L = sizes_.size() - 1;
    for (std::size_t l = 0; l < L; ++l) {
        const int in = sizes_[l], out = sizes_[l + 1];
        Eigen::Map<const Mat> W(params.data() + off, out, in);
        Eigen::Map<const Vec> b(params.data() + off + static_cast<Eigen::Index>(out) * in, out);
        off += static_cast<Eigen::Index>(out) * (in + 1);
        Mat z = W * a;
        z.colwise() += b;
        if (cache) {
            cache->inputs.push_back(a);
            cache->pre.push_back(z);
        }
        if (l + 1 < L) {
            a = z.cwiseMax(0.0);
        } else if (act_ == OutputAct::TanhBox) {
            a = (z.array().tanh().colwise() * out_half.array()).colwise() + out_center.array();
        } else {
            a = std::move(z);
        }
    }
    return a;
}

Vec Mlp::forward(const Vec& x) const { return forward(Mat(x)).col(0); }

Mat Mlp::backward(const Cache& cache, const Mat& out_grad, Vec& grad) const {
    if (grad.size() != params.size()) grad = Vec::Zero(params.size());
    const std::size_t L = sizes_.size() - 1;
    std::vector<Eigen::Index> offs(L);
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < L; ++l) {
        offs[l] = off;
        off += static_cast<Eigen::Index>(sizes_[l + 1]) * (sizes_[l] + 1);
    }
    Mat delta = out_grad;
    if (act_ == OutputAct::TanhBox) {
        const Eigen::ArrayXXd t = cache.pre[L - 1].array().tanh();
        Eigen::ArrayXXd d = 1.0 - t.square();
        d.colwise() *= out_half.array();
        delta = (delta.array() * d).matrix();
    }
    for (std::size_t l = L; l-- > 0;) {
        const int in = sizes_[l], out = sizes_[l + 1];
        Eigen::Map<const Mat> W(params.data() + offs[l], out, in);
        Eigen::Map<Mat> gW(grad.data() + offs[l], out, in);
        Eigen::Map<Vec> gb(grad.data() + offs[l] + static_cast<Eigen::Index>(out) * in, out);
        gW.noalias() += delta * cache.inputs[l].transpose();
        gb += delta.rowwise().sum();
        Mat back = W.transpose() * delta;
        if (l > 0) back = (back.array() * (cache.pre[l - 1].array() > 0.0).cast<double>()).matrix();
        delta = std::move(back);
    }
    return delta;
}

void Adam::step(Vec& params, const Vec& grad) {
    if (m.size() != params.size()) {
        m = Vec::Zero(params.size());
        v = Vec::Zero(params.size());
    }
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

void soft_update(Mlp& target, const Mlp& online, double tau) {
    if (!(tau >= 0 && tau <= 1)) throw std::invalid_argument("tau must lie in [0, 1]");
    if (target.params.size() != online.params.size()) throw std::invalid_argument("network shapes differ");
    target.params = tau * online.params + (1.0 - tau) * target.params;
}

void write_checkpoint(std::ostream& out, const Checkpoint& c) {
    out.write(kMagic, 8);
    put_u32(out, kVersion);
    put_u64(out, c.config_hash);
    put_u32(out, static_cast<std::uint32_t>(c.nets.size()));
    for (const auto& n : c.nets) {
        put_u32(out, static_cast<std::uint32_t>(n.name.size()));
        out.write(n.name.data(), static_cast<std::streamsize>(n.name.size()));
        put_u32(out, static_cast<std::uint32_t>(n.net.sizes().size()));
        for (int s : n.net.sizes()) put_u32(out, static_cast<std::uint32_t>(s));
        out.put(static_cast<char>(n.net.output_act()));
    }
    for (const auto& n : c.nets) {
        for (Eigen::Index i = 0; i < n.net.out_dim(); ++i) put_f64(out, n.net.out_center(i));
        for (Eigen::Index i = 0; i < n.net.out_dim(); ++i) put_f64(out, n.net.out_half(i));
        for (Eigen::Index i = 0; i < n.net.num_params(); ++i) put_f64(out, n.net.params(i));
    }
    put_u32(out, static_cast<std::uint32_t>(c.counters.size()));
    for (auto v : c.counters) put_u64(out, v);
}

Checkpoint read_checkpoint(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kMagic)) throw CheckpointError("not a checkpoint file");
    if (get_u32(in) != kVersion) throw CheckpointError("unsupported checkpoint version");
    Checkpoint c;
    c.config_hash = get_u64(in);
    const std::uint32_t count = get_u32(in);
    if (count > 100000) throw CheckpointError("corrupt network table");
    struct Shape {
        std::string name;
        std::vector<int> sizes;
        OutputAct act;
    };
    std::vector<Shape> shapes(count);
    for (auto& s : shapes) {
        const std::uint32_t len = get_u32(in);
        if (len > 4096) throw CheckpointError("corrupt network name");
        s.name.resize(len);
        if (!in.read(s.name.data(), len)) throw CheckpointError("truncated checkpoint");
        const std::uint32_t layers = get_u32(in);
        if (layers < 2 || layers > 64) throw CheckpointError("corrupt layer table");
        for (std::uint32_t l = 0; l < layers; ++l) s.sizes.push_back(static_cast<int>(get_u32(in)));
        const int act = in.get();
        if (act != 0 && act != 1) throw CheckpointError("corrupt output activation");
        s.act = static_cast<OutputAct>(act);
    }
    Rng dummy(0);
    for (const auto& s : shapes) {
        NamedNet n{s.name, Mlp(s.sizes, s.act, dummy)};
        for (Eigen::Index i = 0; i < n.net.out_dim(); ++i) n.net.out_center(i) = get_f64(in);
        for (Eigen::Index i = 0; i < n.net.out_dim(); ++i) n.net.out_half(i) = get_f64(in);
        for (Eigen::Index i = 0; i < n.net.num_params(); ++i) n.net.params(i) = get_f64(in);
        c.nets.push_back(std::move(n));
    }
    const std::uint32_t nc = get_u32(in);
    for (std::uint32_t i = 0; i < nc; ++i) c.counters.push_back(get_u64(in));
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write '" + path + "'");
    write_checkpoint(out, c);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open '" + path + "'");
    return read_checkpoint(in);
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace tlshield::nn
