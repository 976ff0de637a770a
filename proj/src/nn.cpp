#include "dsadapt/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace dsadapt {

Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    double stddev = std::sqrt(2.0 / fan_in);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
    return t;
}

Tensor xavier_uniform(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
    Tensor t(std::move(shape));
    double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-limit, limit);
    return t;
}

Conv2dLayer::Conv2dLayer(const std::string& name, int cin, int cout, int k, int stride, int pad,
                         Rng& rng)
    : stride(stride), pad(pad) {
    w = parameter(he_normal({cout, cin, k, k}, cin * k * k, rng), name + ".w");
    b = parameter(Tensor({cout}), name + ".b");
}

DenseLayer::DenseLayer(const std::string& name, int cin, int cout, Rng& rng) {
    w = parameter(xavier_uniform({cout, cin}, cin, cout, rng), name + ".w");
    b = parameter(Tensor({cout}), name + ".b");
}

void zero_grads(const std::vector<Var>& params) {
    for (const auto& p : params) p->zero_grad();
}

void set_requires_grad(const std::vector<Var>& params, bool enabled) {
    for (const auto& p : params) p->requires_grad = enabled;
}

SgdOptimizer::SgdOptimizer(double lr, double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
    lr_ = lr;
}

void SgdOptimizer::step(const std::vector<Var>& params) {
    for (const auto& p : params) {
        if (p->grad.empty()) continue;
        auto [it, inserted] = velocity_.try_emplace(p->name, Tensor(p->value.shape()));
        Tensor& vel = it->second;
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            double g = p->grad[i] + weight_decay_ * p->value[i];
            vel[i] = momentum_ * vel[i] + g;
            p->value[i] -= lr_ * vel[i];
        }
    }
}

void SgdOptimizer::save_state(std::map<std::string, Tensor>& out, const std::string& prefix) const {
    for (const auto& [name, vel] : velocity_) out[prefix + "velocity." + name] = vel;
}

void SgdOptimizer::load_state(const std::map<std::string, Tensor>& in, const std::string& prefix) {
    velocity_.clear();
    const std::string key = prefix + "velocity.";
    for (const auto& [name, t] : in)
        if (name.rfind(key, 0) == 0) velocity_[name.substr(key.size())] = t;
}

AdamOptimizer::AdamOptimizer(double lr, double beta1, double beta2, double eps,
                             double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
    lr_ = lr;
}

void AdamOptimizer::step(const std::vector<Var>& params) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (const auto& p : params) {
        if (p->grad.empty()) continue;
        auto [mi, m_new] = m_.try_emplace(p->name, Tensor(p->value.shape()));
        auto [vi, v_new] = v_.try_emplace(p->name, Tensor(p->value.shape()));
        Tensor& m = mi->second;
        Tensor& v = vi->second;
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            double g = p->grad[i] + weight_decay_ * p->value[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            p->value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void AdamOptimizer::save_state(std::map<std::string, Tensor>& out,
                               const std::string& prefix) const {
    for (const auto& [name, m] : m_) out[prefix + "m." + name] = m;
    for (const auto& [name, v] : v_) out[prefix + "v." + name] = v;
    out[prefix + "t"] = Tensor::scalar(static_cast<double>(t_));
}

void AdamOptimizer::load_state(const std::map<std::string, Tensor>& in,
                               const std::string& prefix) {
    m_.clear();
    v_.clear();
    t_ = 0;
    const std::string mkey = prefix + "m.", vkey = prefix + "v.", tkey = prefix + "t";
    for (const auto& [name, t] : in) {
        if (name.rfind(mkey, 0) == 0) m_[name.substr(mkey.size())] = t;
        else if (name.rfind(vkey, 0) == 0) v_[name.substr(vkey.size())] = t;
        else if (name == tkey) t_ = static_cast<long>(t[0]);
    }
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, double lr, double momentum,
                                          double weight_decay) {
    if (kind == "sgd") return std::make_unique<SgdOptimizer>(lr, momentum, weight_decay);
    if (kind == "adam")
        return std::make_unique<AdamOptimizer>(lr, 0.9, 0.999, 1e-8, weight_decay);
    throw std::invalid_argument("unknown optimizer kind: " + kind);
}

}  // namespace dsadapt
