#include "moai/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace moai {

namespace {

std::atomic<uint64_t> g_node_counter{1};

thread_local bool g_grad_enabled = true;

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension");
        n *= d;
    }
    return n;
}

std::shared_ptr<Tensor::Node> new_node(std::vector<int> shape) {
    auto n = std::make_shared<Tensor::Node>();
    n->shape = std::move(shape);
    n->value.assign(shape_numel(n->shape), 0.0);
    n->id = g_node_counter.fetch_add(1, std::memory_order_relaxed);
    return n;
}

// Result node wired to parents; grad tracking skipped under NoGradGuard.
std::shared_ptr<Tensor::Node> op_node(std::vector<int> shape,
                                      std::vector<std::shared_ptr<Tensor::Node>> parents,
                                      std::function<void(Tensor::Node&)> backprop) {
    auto n = new_node(std::move(shape));
    if (g_grad_enabled) {
        bool rg = false;
        for (const auto& p : parents) rg = rg || p->requires_grad;
        if (rg) {
            n->requires_grad = true;
            n->parents = std::move(parents);
            n->backprop = std::move(backprop);
        }
    }
    return n;
}

void require_2d(const Tensor& t, const char* what) {
    if (t.shape().size() != 2) throw ShapeError(std::string(what) + ": expected 2-d tensor");
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(double* c, const double* a, const double* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            double* crow = c + i * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(double* c, const double* a, const double* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(double* c, const double* a, const double* b, int m, int k, int n) {
    for (int p = 0; p < m; ++p) {
        const double* brow = b + p * n;
        for (int i = 0; i < k; ++i) {
            const double av = a[p * k + i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

double norm_cdf(double x) { return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)); }
double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool NoGradGuard::enabled() { return !g_grad_enabled; }

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto n = new_node(std::move(shape));
    n->requires_grad = requires_grad && g_grad_enabled;
    return wrap(n);
}

Tensor Tensor::full(std::vector<int> shape, double fill, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node()->value.begin(), t.node()->value.end(), fill);
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    auto n = new_node(std::move(shape));
    if (static_cast<int64_t>(data.size()) != n->numel())
        throw ShapeError("from_data: data length does not match shape");
    n->value = std::move(data);
    n->requires_grad = requires_grad && g_grad_enabled;
    return wrap(n);
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.node()->value) v = rng.normal(0.0, stddev);
    return t;
}

int Tensor::rows() const {
    if (node_->shape.size() != 2) throw ShapeError("rows(): not a 2-d tensor");
    return node_->shape[0];
}

int Tensor::cols() const {
    if (node_->shape.size() != 2) throw ShapeError("cols(): not a 2-d tensor");
    return node_->shape[1];
}

double Tensor::at(int r, int c) const {
    if (node_->shape.size() != 2) throw ShapeError("at(): not a 2-d tensor");
    if (r < 0 || r >= node_->shape[0] || c < 0 || c >= node_->shape[1])
        throw IndexError("at(): out of range");
    return node_->value[static_cast<size_t>(r) * node_->shape[1] + c];
}

double Tensor::item() const {
    if (numel() != 1) throw UsageError("item(): tensor is not a scalar");
    return node_->value[0];
}

void Tensor::assert_finite(const std::string& what) const {
    for (double v : node_->value) {
        if (!std::isfinite(v)) throw CorruptionError("non-finite value in " + what);
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch");
    auto n = op_node(a.shape(), {a.node(), b.node()}, [](Tensor::Node& self) {
        for (int s = 0; s < 2; ++s) {
            auto& p = self.parents[s];
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
    });
    for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] + b.value()[i];
    return Tensor::wrap(n);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("sub: shape mismatch");
    auto n = op_node(a.shape(), {a.node(), b.node()}, [](Tensor::Node& self) {
        if (self.parents[0]->requires_grad) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            auto& p = self.parents[1];
            p->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] -= self.grad[i];
        }
    });
    for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] - b.value()[i];
    return Tensor::wrap(n);
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    require_2d(x, "add_rowvec");
    if (b.shape().size() != 1 || b.shape()[0] != x.cols())
        throw ShapeError("add_rowvec: bias must be 1-d of length cols");
    const int rows = x.rows(), cols = x.cols();
    auto n = op_node(x.shape(), {x.node(), b.node()}, [rows, cols](Tensor::Node& self) {
        if (self.parents[0]->requires_grad) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            auto& p = self.parents[1];
            p->ensure_grad();
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j) p->grad[j] += self.grad[i * cols + j];
        }
    });
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) n->value[i * cols + j] = x.value()[i * cols + j] + b.value()[j];
    return Tensor::wrap(n);
}

Tensor mul_rowscale(const Tensor& x, const Tensor& w) {
    require_2d(x, "mul_rowscale");
    if (w.shape().size() != 1 || w.shape()[0] != x.rows())
        throw ShapeError("mul_rowscale: weight must be 1-d of length rows");
    const int rows = x.rows(), cols = x.cols();
    auto xv = x.node();
    auto wv = w.node();
    auto n = op_node(x.shape(), {xv, wv}, [rows, cols](Tensor::Node& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        if (px->requires_grad) {
            px->ensure_grad();
            for (int i = 0; i < rows; ++i) {
                const double wi = pw->value[i];
                for (int j = 0; j < cols; ++j) px->grad[i * cols + j] += self.grad[i * cols + j] * wi;
            }
        }
        if (pw->requires_grad) {
            pw->ensure_grad();
            for (int i = 0; i < rows; ++i) {
                double acc = 0.0;
                for (int j = 0; j < cols; ++j) acc += self.grad[i * cols + j] * px->value[i * cols + j];
                pw->grad[i] += acc;
            }
        }
    });
    for (int i = 0; i < rows; ++i) {
        const double wi = w.value()[i];
        for (int j = 0; j < cols; ++j) n->value[i * cols + j] = x.value()[i * cols + j] * wi;
    }
    return Tensor::wrap(n);
}

Tensor scale(const Tensor& x, double c) {
    auto n = op_node(x.shape(), {x.node()}, [c](Tensor::Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += c * self.grad[i];
    });
    for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = c * x.value()[i];
    return Tensor::wrap(n);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) throw ShapeError("matmul: inner dimensions disagree");
    auto node = op_node({m, n}, {a.node(), b.node()}, [m, k, n](Tensor::Node& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            gemm_nt(pa->grad.data(), self.grad.data(), pb->value.data(), m, n, k);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            gemm_tn(pb->grad.data(), pa->value.data(), self.grad.data(), m, k, n);
        }
    });
    gemm_nn(node->value.data(), a.value().data(), b.value().data(), m, k, n);
    return Tensor::wrap(node);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul_nt");
    require_2d(b, "matmul_nt");
    const int m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) throw ShapeError("matmul_nt: inner dimensions disagree");
    auto node = op_node({m, n}, {a.node(), b.node()}, [m, k, n](Tensor::Node& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            gemm_nn(pa->grad.data(), self.grad.data(), pb->value.data(), m, n, k);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            gemm_tn(pb->grad.data(), self.grad.data(), pa->value.data(), m, n, k);
        }
    });
    gemm_nt(node->value.data(), a.value().data(), b.value().data(), m, k, n);
    return Tensor::wrap(node);
}

Tensor softmax(const Tensor& x, int axis) {
    require_2d(x, "softmax");
    if (axis != 0 && axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
    if (x.shape()[axis] == 0) throw ShapeError("softmax: empty axis");
    const int rows = x.rows(), cols = x.cols();
    auto node = op_node(x.shape(), {x.node()}, [rows, cols, axis](Tensor::Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        const int outer = axis == 1 ? rows : cols;
        const int inner = axis == 1 ? cols : rows;
        for (int o = 0; o < outer; ++o) {
            auto idx = [&](int i) { return axis == 1 ? o * cols + i : i * cols + o; };
            double dot = 0.0;
            for (int i = 0; i < inner; ++i) dot += self.grad[idx(i)] * self.value[idx(i)];
            for (int i = 0; i < inner; ++i)
                p->grad[idx(i)] += self.value[idx(i)] * (self.grad[idx(i)] - dot);
        }
    });
    const int outer = axis == 1 ? rows : cols;
    const int inner = axis == 1 ? cols : rows;
    for (int o = 0; o < outer; ++o) {
        auto idx = [&](int i) { return axis == 1 ? o * cols + i : i * cols + o; };
        double mx = -HUGE_VAL;
        for (int i = 0; i < inner; ++i) mx = std::max(mx, x.value()[idx(i)]);
        double sum = 0.0;
        for (int i = 0; i < inner; ++i) {
            const double e = std::exp(x.value()[idx(i)] - mx);
            node->value[idx(i)] = e;
            sum += e;
        }
        for (int i = 0; i < inner; ++i) node->value[idx(i)] /= sum;
    }
    return Tensor::wrap(node);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_2d(x, "layer_norm");
    const int rows = x.rows(), cols = x.cols();
    if (cols < 2) throw ShapeError("layer_norm: last axis must have length >= 2");
    if (gain.shape() != std::vector<int>{cols} || bias.shape() != std::vector<int>{cols})
        throw ShapeError("layer_norm: gain/bias must be 1-d of length cols");

    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(rows) * cols);
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (int i = 0; i < rows; ++i) {
        double mean = 0.0;
        for (int j = 0; j < cols; ++j) mean += x.value()[i * cols + j];
        mean /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) {
            const double d = x.value()[i * cols + j] - mean;
            var += d * d;
        }
        var /= cols;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (int j = 0; j < cols; ++j)
            (*xhat)[i * cols + j] = (x.value()[i * cols + j] - mean) * is;
    }

    auto node = op_node(x.shape(), {x.node(), gain.node(), bias.node()},
                        [rows, cols, xhat, inv_std](Tensor::Node& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        if (px->requires_grad) {
            px->ensure_grad();
            for (int i = 0; i < rows; ++i) {
                double mean_gy = 0.0, mean_gyx = 0.0;
                for (int j = 0; j < cols; ++j) {
                    const double gy = self.grad[i * cols + j] * pg->value[j];
                    mean_gy += gy;
                    mean_gyx += gy * (*xhat)[i * cols + j];
                }
                mean_gy /= cols;
                mean_gyx /= cols;
                for (int j = 0; j < cols; ++j) {
                    const double gy = self.grad[i * cols + j] * pg->value[j];
                    px->grad[i * cols + j] +=
                        (gy - mean_gy - (*xhat)[i * cols + j] * mean_gyx) * (*inv_std)[i];
                }
            }
        }
        if (pg->requires_grad) {
            pg->ensure_grad();
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j)
                    pg->grad[j] += self.grad[i * cols + j] * (*xhat)[i * cols + j];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j) pb->grad[j] += self.grad[i * cols + j];
        }
    });
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            node->value[i * cols + j] = gain.value()[j] * (*xhat)[i * cols + j] + bias.value()[j];
    return Tensor::wrap(node);
}

Tensor gelu(const Tensor& x) {
    auto node = op_node(x.shape(), {x.node()}, [](Tensor::Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const double v = p->value[i];
            p->grad[i] += self.grad[i] * (norm_cdf(v) + v * norm_pdf(v));
        }
    });
    for (size_t i = 0; i < node->value.size(); ++i) {
        const double v = x.value()[i];
        node->value[i] = v * norm_cdf(v);
    }
    return Tensor::wrap(node);
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
    if (shape_numel(shape) != x.numel()) throw ShapeError("reshape: element count mismatch");
    auto node = op_node(std::move(shape), {x.node()}, [](Tensor::Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    });
    node->value = x.value();
    return Tensor::wrap(node);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    const int cols = parts[0].cols();
    int rows = 0;
    std::vector<std::shared_ptr<Tensor::Node>> parents;
    for (const auto& p : parts) {
        if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
        rows += p.rows();
        parents.push_back(p.node());
    }
    std::vector<int> part_rows;
    for (const auto& p : parts) part_rows.push_back(p.rows());
    auto node = op_node({rows, cols}, std::move(parents), [part_rows, cols](Tensor::Node& self) {
        int r = 0;
        for (size_t s = 0; s < self.parents.size(); ++s) {
            auto& p = self.parents[s];
            if (p->requires_grad) {
                p->ensure_grad();
                for (size_t i = 0; i < p->value.size(); ++i)
                    p->grad[i] += self.grad[static_cast<size_t>(r) * cols + i];
            }
            r += part_rows[s];
        }
    });
    int r = 0;
    for (const auto& p : parts) {
        std::copy(p.value().begin(), p.value().end(),
                  node->value.begin() + static_cast<size_t>(r) * cols);
        r += p.rows();
    }
    return Tensor::wrap(node);
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
    require_2d(x, "slice_rows");
    if (r0 < 0 || r1 < r0 || r1 > x.rows()) throw ShapeError("slice_rows: bad range");
    const int cols = x.cols();
    auto node = op_node({r1 - r0, cols}, {x.node()}, [r0, cols](Tensor::Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            p->grad[static_cast<size_t>(r0) * cols + i] += self.grad[i];
    });
    std::copy(x.value().begin() + static_cast<size_t>(r0) * cols,
              x.value().begin() + static_cast<size_t>(r1) * cols, node->value.begin());
    return Tensor::wrap(node);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    const int rows = parts[0].rows();
    int cols = 0;
    std::vector<std::shared_ptr<Tensor::Node>> parents;
    std::vector<int> part_cols;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
        cols += p.cols();
        part_cols.push_back(p.cols());
        parents.push_back(p.node());
    }
    auto node = op_node({rows, cols}, std::move(parents), [part_cols, rows, cols](Tensor::Node& self) {
        int c = 0;
        for (size_t s = 0; s < self.parents.size(); ++s) {
            auto& p = self.parents[s];
            const int pc = part_cols[s];
            if (p->requires_grad) {
                p->ensure_grad();
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < pc; ++j) p->grad[i * pc + j] += self.grad[i * cols + c + j];
            }
            c += pc;
        }
    });
    int c = 0;
    for (const auto& p : parts) {
        const int pc = p.cols();
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < pc; ++j) node->value[i * cols + c + j] = p.value()[i * pc + j];
        c += pc;
    }
    return Tensor::wrap(node);
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
    require_2d(x, "slice_cols");
    if (c0 < 0 || c1 < c0 || c1 > x.cols()) throw ShapeError("slice_cols: bad range");
    const int rows = x.rows(), cols = x.cols(), out = c1 - c0;
    auto node = op_node({rows, out}, {x.node()}, [rows, cols, c0, out](Tensor::Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < out; ++j) p->grad[i * cols + c0 + j] += self.grad[i * out + j];
    });
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < out; ++j) node->value[i * out + j] = x.value()[i * cols + c0 + j];
    return Tensor::wrap(node);
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
    require_2d(table, "embedding_rows");
    const int vocab = table.rows(), d = table.cols();
    for (int id : ids)
        if (id < 0 || id >= vocab) throw IndexError("embedding_rows: id out of range");
    const int n = static_cast<int>(ids.size());
    auto node = op_node({n, d}, {table.node()}, [ids, d](Tensor::Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t j = 0; j < ids.size(); ++j)
            for (int e = 0; e < d; ++e) p->grad[static_cast<size_t>(ids[j]) * d + e] += self.grad[j * d + e];
    });
    for (int j = 0; j < n; ++j)
        std::copy(table.value().begin() + static_cast<size_t>(ids[j]) * d,
                  table.value().begin() + static_cast<size_t>(ids[j] + 1) * d,
                  node->value.begin() + static_cast<size_t>(j) * d);
    return Tensor::wrap(node);
}

Tensor sum_all(const Tensor& x) {
    auto node = op_node({1}, {x.node()}, [](Tensor::Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (auto& g : p->grad) g += self.grad[0];
    });
    double acc = 0.0;
    for (double v : x.value()) acc += v;
    node->value[0] = acc;
    return Tensor::wrap(node);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                            bool causal) {
    require_2d(q, "multi_head_attention");
    require_2d(k, "multi_head_attention");
    require_2d(v, "multi_head_attention");
    const int d = q.cols();
    if (heads < 1 || d % heads != 0)
        throw ConfigError("multi_head_attention: width not divisible by heads");
    if (k.cols() != d || v.cols() != d) throw ShapeError("multi_head_attention: width mismatch");
    if (k.rows() != v.rows()) throw ShapeError("multi_head_attention: key/value count mismatch");
    const int nq = q.rows(), nk = k.rows();
    if (causal && nq != nk)
        throw ShapeError("multi_head_attention: causal mask requires equal query/key counts");
    if (nk == 0) throw ShapeError("multi_head_attention: empty key set");
    const int hd = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

    Tensor mask;
    if (causal) {
        std::vector<double> m(static_cast<size_t>(nq) * nk, 0.0);
        for (int i = 0; i < nq; ++i)
            for (int j = i + 1; j < nk; ++j) m[static_cast<size_t>(i) * nk + j] = -1e30;
        mask = Tensor::from_data({nq, nk}, std::move(m));
    }

    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * hd, (h + 1) * hd);
        Tensor kh = slice_cols(k, h * hd, (h + 1) * hd);
        Tensor vh = slice_cols(v, h * hd, (h + 1) * hd);
        Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
        if (causal) scores = add(scores, mask);
        Tensor att = softmax(scores, 1);
        outs.push_back(matmul(att, vh));
    }
    return concat_cols(outs);
}

Tensor masked_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<uint8_t>& mask) {
    require_2d(logits, "masked_cross_entropy");
    const int n = logits.rows(), vocab = logits.cols();
    if (static_cast<int>(targets.size()) != n || static_cast<int>(mask.size()) != n)
        throw ShapeError("masked_cross_entropy: targets/mask length mismatch");
    int count = 0;
    for (int i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        if (targets[i] < 0 || targets[i] >= vocab)
            throw IndexError("masked_cross_entropy: target out of range");
        ++count;
    }
    if (count == 0) throw UsageError("masked_cross_entropy: empty mask");

    auto node = op_node({1}, {logits.node()}, [targets, mask, n, vocab, count](Tensor::Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        const double g = self.grad[0] / count;
        for (int i = 0; i < n; ++i) {
            if (!mask[i]) continue;
            const double* row = p->value.data() + static_cast<size_t>(i) * vocab;
            double mx = -HUGE_VAL;
            for (int j = 0; j < vocab; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0;
            for (int j = 0; j < vocab; ++j) sum += std::exp(row[j] - mx);
            double* grow = p->grad.data() + static_cast<size_t>(i) * vocab;
            for (int j = 0; j < vocab; ++j) {
                double sm = std::exp(row[j] - mx) / sum;
                grow[j] += g * (sm - (j == targets[i] ? 1.0 : 0.0));
            }
        }
    });
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        const double* row = logits.value().data() + static_cast<size_t>(i) * vocab;
        double mx = -HUGE_VAL;
        for (int j = 0; j < vocab; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < vocab; ++j) sum += std::exp(row[j] - mx);
        loss += std::log(sum) - (row[targets[i]] - mx);
    }
    node->value[0] = loss / count;
    return Tensor::wrap(node);
}

Tensor top_k_filter(const Tensor& weights, int k) {
    require_2d(weights, "top_k_filter");
    if (weights.cols() != 3) throw ShapeError("top_k_filter: expected 3 columns");
    if (k < 1 || k > 3) throw ConfigError("top_k_filter: k must be in {1,2,3}");
    if (k == 3) return weights;
    const int n = weights.rows();

    // Per-row keep mask; ties break toward the lower column index.
    auto keep = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(n) * 3, 0);
    for (int i = 0; i < n; ++i) {
        int order[3] = {0, 1, 2};
        const double* row = weights.value().data() + static_cast<size_t>(i) * 3;
        std::stable_sort(order, order + 3, [&](int a, int b) { return row[a] > row[b]; });
        for (int s = 0; s < k; ++s) (*keep)[static_cast<size_t>(i) * 3 + order[s]] = 1;
    }

    auto node = op_node(weights.shape(), {weights.node()}, [n, keep](Tensor::Node& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int i = 0; i < n; ++i) {
            const double* row = p->value.data() + static_cast<size_t>(i) * 3;
            const uint8_t* m = keep->data() + static_cast<size_t>(i) * 3;
            double s = 0.0;
            for (int j = 0; j < 3; ++j) s += m[j] ? row[j] : 0.0;
            double gy_dot_y = 0.0;
            for (int j = 0; j < 3; ++j)
                gy_dot_y += self.grad[static_cast<size_t>(i) * 3 + j] *
                            self.value[static_cast<size_t>(i) * 3 + j];
            for (int j = 0; j < 3; ++j) {
                if (!m[j]) continue;
                p->grad[static_cast<size_t>(i) * 3 + j] +=
                    (self.grad[static_cast<size_t>(i) * 3 + j] - gy_dot_y) / s;
            }
        }
    });
    for (int i = 0; i < n; ++i) {
        const double* row = weights.value().data() + static_cast<size_t>(i) * 3;
        const uint8_t* m = keep->data() + static_cast<size_t>(i) * 3;
        double s = 0.0;
        for (int j = 0; j < 3; ++j) s += m[j] ? row[j] : 0.0;
        if (s <= 0.0) throw ValidationError("top_k_filter: surviving weights sum to zero");
        for (int j = 0; j < 3; ++j)
            node->value[static_cast<size_t>(i) * 3 + j] = m[j] ? row[j] / s : 0.0;
    }
    return Tensor::wrap(node);
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) throw UsageError("backward: loss must be a scalar");
    loss.assert_finite("loss");

    // Parents are always created before children, so descending node id is a
    // valid topological order.
    std::vector<Tensor::Node*> order;
    std::unordered_set<Tensor::Node*> seen;
    std::vector<Tensor::Node*> stack{loss.node().get()};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        Tensor::Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& p : n->parents) {
            if (seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const Tensor::Node* a, const Tensor::Node* b) { return a->id > b->id; });

    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (Tensor::Node* n : order) {
        if (!n->requires_grad || !n->backprop || n->grad.empty()) continue;
        n->backprop(*n);
    }
}

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<std::pair<std::string, Tensor>>& params, double eps,
                           int max_entries_per_param, Rng& rng) {
    for (const auto& [name, t] : params) {
        (void)name;
        Tensor handle = t;
        handle.zero_grad();
    }
    Tensor loss = loss_fn();
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& [name, t] : params) {
        (void)name;
        analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.numel(), 0.0));
    }

    GradCheckReport report;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const auto& name = params[pi].first;
        Tensor t = params[pi].second;
        auto& values = t.mutable_value();
        const int64_t n = static_cast<int64_t>(values.size());

        std::vector<int64_t> probe;
        if (max_entries_per_param <= 0 || n <= max_entries_per_param) {
            probe.resize(n);
            for (int64_t i = 0; i < n; ++i) probe[i] = i;
        } else {
            std::unordered_set<int64_t> chosen;
            while (static_cast<int>(chosen.size()) < max_entries_per_param)
                chosen.insert(static_cast<int64_t>(rng.uniform_below(static_cast<uint64_t>(n))));
            probe.assign(chosen.begin(), chosen.end());
            std::sort(probe.begin(), probe.end());
        }

        for (int64_t idx : probe) {
            const double orig = values[idx];
            double fp, fm;
            {
                NoGradGuard ng;
                values[idx] = orig + eps;
                fp = loss_fn().item();
                values[idx] = orig - eps;
                fm = loss_fn().item();
            }
            values[idx] = orig;
            const double fd = (fp - fm) / (2.0 * eps);
            const double an = analytic[pi][idx];
            const double denom = std::max({std::abs(an), std::abs(fd), 1e-6});
            const double rel = std::abs(an - fd) / denom;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = name;
            }
        }
    }
    return report;
}

}  // namespace moai
