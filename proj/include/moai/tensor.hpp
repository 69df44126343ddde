#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "moai/common.hpp"
#include "moai/rng.hpp"

namespace moai {

// Dense row-major tensor with reverse-mode gradient accumulation.
//
// Values are immutable once a tensor participates in a graph; only leaf
// tensors may be mutated, and only by a single controller (optimizer,
// gradient checker) between forward passes. Feature matrices follow the
// convention rows = tokens, cols = channels.
class Tensor {
public:
    struct Node {
        std::vector<int> shape;
        std::vector<double> value;
        std::vector<double> grad;  // allocated lazily, same length as value
        bool requires_grad = false;
        uint64_t id = 0;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backprop;

        int64_t numel() const {
            int64_t n = 1;
            for (int d : shape) n *= d;
            return n;
        }
        void ensure_grad() {
            if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        }
    };

    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double fill, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double v);
    static Tensor randn(std::vector<int> shape, Rng& rng, double stddev,
                        bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int64_t numel() const { return node_->numel(); }
    int rows() const;
    int cols() const;

    const std::vector<double>& value() const { return node_->value; }
    std::vector<double>& mutable_value() { return node_->value; }
    const std::vector<double>& grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

    double at(int r, int c) const;
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    // Error state check: throws CorruptionError on NaN/Inf.
    void assert_finite(const std::string& what) const;

    std::shared_ptr<Node> node() const { return node_; }
    static Tensor wrap(std::shared_ptr<Node> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<Node> node_;
};

// When constructed, forward ops record no graph (inference mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    static bool enabled();

private:
    bool previous_;
};

// --- forward operations (all differentiable unless noted) ---

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
// x[n,d] + b[d] broadcast over rows
Tensor add_rowvec(const Tensor& x, const Tensor& b);
// row i of x scaled by w[i]; w has shape [n]
Tensor mul_rowscale(const Tensor& x, const Tensor& w);
Tensor scale(const Tensor& x, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
// a[m,k] * b[n,k]^T -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// axis 0: each column sums to 1; axis 1: each row sums to 1
Tensor softmax(const Tensor& x, int axis);
// normalizes each row of x[n,d]; gain/bias have shape [d]
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
// exact erf-based GELU
Tensor gelu(const Tensor& x);
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int r0, int r1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, int c0, int c1);
// rows of `table` gathered by id; result [ids.size(), d]
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);
Tensor sum_all(const Tensor& x);

// Scaled dot-product attention over pre-projected q[nq,d], k[nk,d], v[nk,d].
// Splits d into `heads` slices; causal forbids key j > query i (requires nq == nk).
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                            bool causal);

// Mean cross-entropy over rows of logits[n,v] where mask[i] != 0.
Tensor masked_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<uint8_t>& mask);

// Per-row top-k on a [n,3] weight matrix: zero all but the k largest entries
// and renormalize survivors to sum 1. Ties break toward the lower column.
Tensor top_k_filter(const Tensor& weights, int k);

// Reverse accumulation from a scalar loss. Grad buffers accumulate across
// calls; zeroing between steps is the caller's responsibility.
void backward(const Tensor& loss);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
};

// Central finite differences against analytic gradients. Probes at most
// `max_entries_per_param` entries per parameter (0 = all), chosen by `rng`.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<std::pair<std::string, Tensor>>& params, double eps,
                           int max_entries_per_param, Rng& rng);

}  // namespace moai
