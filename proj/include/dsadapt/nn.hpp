#pragma once

#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dsadapt/autodiff.hpp"

namespace dsadapt {

// Deterministic parameter-init RNG. One instance is threaded through module
// construction so a fixed seed fixes every initial weight.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    double normal(double mean, double stddev) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    std::uint64_t next() { return engine_(); }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng);
Tensor xavier_uniform(std::vector<int> shape, int fan_in, int fan_out, Rng& rng);

struct Conv2dLayer {
    Var w, b;
    int stride = 1, pad = 0;

    Conv2dLayer() = default;
    Conv2dLayer(const std::string& name, int cin, int cout, int k, int stride, int pad, Rng& rng);
    Var forward(const Var& x) const { return conv2d(x, w, b, stride, pad); }
    void collect(std::vector<Var>& out) const {
        out.push_back(w);
        out.push_back(b);
    }
};

struct DenseLayer {
    Var w, b;

    DenseLayer() = default;
    DenseLayer(const std::string& name, int cin, int cout, Rng& rng);
    Var forward(const Var& x) const { return dense(x, w, b); }
    void collect(std::vector<Var>& out) const {
        out.push_back(w);
        out.push_back(b);
    }
};

void zero_grads(const std::vector<Var>& params);
void set_requires_grad(const std::vector<Var>& params, bool enabled);

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(const std::vector<Var>& params) = 0;
    virtual void save_state(std::map<std::string, Tensor>& out, const std::string& prefix) const = 0;
    virtual void load_state(const std::map<std::string, Tensor>& in, const std::string& prefix) = 0;
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

protected:
    double lr_ = 0.0;
};

class SgdOptimizer final : public Optimizer {
public:
    SgdOptimizer(double lr, double momentum, double weight_decay);
    void step(const std::vector<Var>& params) override;
    void save_state(std::map<std::string, Tensor>& out, const std::string& prefix) const override;
    void load_state(const std::map<std::string, Tensor>& in, const std::string& prefix) override;

private:
    double momentum_, weight_decay_;
    std::map<std::string, Tensor> velocity_;
};

class AdamOptimizer final : public Optimizer {
public:
    AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                  double weight_decay = 0.0);
    void step(const std::vector<Var>& params) override;
    void save_state(std::map<std::string, Tensor>& out, const std::string& prefix) const override;
    void load_state(const std::map<std::string, Tensor>& in, const std::string& prefix) override;

private:
    double beta1_, beta2_, eps_, weight_decay_;
    long t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

// kind: "sgd" or "adam"
std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, double lr, double momentum,
                                          double weight_decay);

}  // namespace dsadapt
