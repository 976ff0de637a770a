#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dsadapt/tensor.hpp"

namespace dsadapt {

struct Node;
using Var = std::shared_ptr<Node>;

// One value in the computation graph. Intermediates are created by the op
// functions below and keep their inputs alive through `parents`; the backward
// closure accumulates into the parents' grad buffers.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::string name;

    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.empty()) grad = Tensor(value.shape());
    }
    void zero_grad() {
        if (!grad.empty()) grad.fill(0.0);
    }
};

// Gradient mode. While disabled, ops produce plain values: no parents, no
// backward closures, so teacher/eval passes cannot leak gradients.
bool grad_mode_enabled();

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

Var constant(Tensor v);
Var parameter(Tensor v, std::string name);
Var detach(const Var& x);

// Runs reverse-mode accumulation from a scalar root. Grads of reachable nodes
// with requires_grad are accumulated (callers zero parameter grads between
// steps).
void backward(const Var& root);

// --- elementwise / structural ---
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var leaky_relu(const Var& x, double negative_slope);
Var sigmoid(const Var& x);
Var reshape(const Var& x, std::vector<int> shape);
Var concat_channels(const Var& a, const Var& b);

// --- reductions ---
Var vsum(const Var& x);
Var vmean(const Var& x);

// --- linear algebra ---
// C = op(A) * op(B) with optional transposes; A,B rank-2.
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
// y = W x + b for x:[Cin], W:[Cout,Cin], b:[Cout] (b may be null)
Var dense(const Var& x, const Var& w, const Var& b);

// --- conv / spatial ---
// x:[Cin,H,W], w:[Cout,Cin,kh,kw], b:[Cout] or null. Zero padding.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// Spatial size of one conv output dimension; throws if nonpositive.
int conv_out_dim(int in, int kernel, int stride, int pad);
// Bilinear interpolation to [C, out_h, out_w], half-pixel centers.
Var upsample_bilinear(const Var& x, int out_h, int out_w);
// [C,H,W] -> [C] mean over spatial positions
Var global_avg_pool(const Var& x);
// Per-channel zero-mean unit-variance normalization over spatial positions
// (no affine terms); keeps feature magnitudes bounded.
Var instance_norm(const Var& x, double eps = 1e-5);
// out[c] = x[c] * v[c] for x:[C,H,W], v:[C]
Var channel_scale(const Var& x, const Var& v);

// --- softmax family (all row-max stabilized) ---
// softmax over the last index of a rank-2 tensor, per row
Var row_softmax(const Var& m);

// --- losses ---
// Mean cross-entropy over non-ignored pixels; logits:[K,H,W], labels int map
// [H,W]. All-ignored input yields 0 (callers may warn).
Var softmax_xent_mean(const Var& logits, const Tensor& labels, int ignore_index);
// Mean over elements of binary cross-entropy against a constant target in {0,1}.
Var bce_logits_mean(const Var& logits, double target);

// --- plain-tensor helpers (no graph) ---
// Per-pixel class probabilities: softmax over dim 0 of [K,H,W].
Tensor softmax_channels(const Tensor& logits);
// argmax over dim 0 of [K,H,W] -> int map [H,W]
Tensor argmax_channels(const Tensor& scores);

}  // namespace dsadapt
