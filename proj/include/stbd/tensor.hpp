#pragma once

// Minimal dense tensor with reverse-mode automatic differentiation.
// Row-major storage, double precision. Graphs are rebuilt per forward
// pass (define-by-run); a graph and its tensors belong to one thread.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace stbd {

using Shape = std::vector<std::size_t>;

struct TensorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : TensorError {
    using TensorError::TensorError;
};
struct NumericError : TensorError {
    using TensorError::TensorError;
};
struct UsageError : TensorError {
    using TensorError::TensorError;
};

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t numel_of(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    std::size_t numel() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() : node_(std::make_shared<TensorNode>()) {}

    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
        : node_(std::make_shared<TensorNode>()) {
        for (auto d : shape)
            if (d == 0) throw ShapeError("Tensor: zero extent in shape " + shape_str(shape));
        node_->shape = std::move(shape);
        node_->data.assign(numel_of(node_->shape), fill);
        node_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<TensorNode>()) {
        if (numel_of(shape) != data.size())
            throw ShapeError("Tensor: shape " + shape_str(shape) + " does not match data length " +
                             std::to_string(data.size()));
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
    }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->numel(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    std::vector<double>& grad() { return node_->grad; }
    const std::vector<double>& grad() const { return node_->grad; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    double item() const {
        if (numel() != 1) throw UsageError("item(): tensor has " + std::to_string(numel()) + " elements");
        return node_->data[0];
    }

    double at(std::size_t r, std::size_t c) const {
        return node_->data[r * node_->shape[1] + c];
    }
    double& at(std::size_t r, std::size_t c) {
        return node_->data[r * node_->shape[1] + c];
    }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    std::shared_ptr<TensorNode> node() const { return node_; }

    // Internal: wrap a result node.
    static Tensor from_node(std::shared_ptr<TensorNode> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline void check_finite(const TensorNode& n, const char* op) {
    for (double v : n.data)
        if (!std::isfinite(v))
            throw NumericError(std::string(op) + ": non-finite value in result");
}

inline std::shared_ptr<TensorNode> make_result(Shape shape, std::vector<double> data,
                                               std::vector<Tensor> parents, const char* op) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    check_finite(*n, op);
    for (auto& p : parents) {
        if (p.requires_grad()) n->requires_grad = true;
        n->parents.push_back(p.node());
    }
    return n;
}

}  // namespace detail

// ---- core ops ------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    std::vector<double> out(m * n, 0.0);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ad[i * k + p];
            const double* brow = bd + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    auto node = detail::make_result({m, n}, std::move(out), {a, b}, "matmul");
    if (node->requires_grad) {
        auto an = a.node(), bn = b.node();
        node->backward_fn = [an, bn, m, k, n](TensorNode& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                // dA = dC * B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        const double* grow = self.grad.data() + i * n;
                        const double* brow = bn->data.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                        an->grad[i * k + p] += s;
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                // dB = A^T * dC
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = self.grad.data() + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = an->data[i * k + p];
                        double* brow = bn->grad.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                    }
                }
            }
        };
    }
    return Tensor::from_node(node);
}

// add: same shape, or b is rank-1 with extent == last axis of a (row broadcast).
inline Tensor add(const Tensor& a, const Tensor& b) {
    const bool same = a.shape() == b.shape();
    const bool bcast = !same && a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1);
    if (!same && !bcast)
        throw ShapeError("add: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    std::vector<double> out(a.numel());
    if (same) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    } else {
        const std::size_t rows = a.dim(0), cols = a.dim(1);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
                out[r * cols + c] = a.data()[r * cols + c] + b.data()[c];
    }
    auto node = detail::make_result(a.shape(), std::move(out), {a, b}, "add");
    if (node->requires_grad) {
        auto an = a.node(), bn = b.node();
        node->backward_fn = [an, bn, same](TensorNode& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                if (same) {
                    for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
                } else {
                    const std::size_t cols = bn->data.size();
                    const std::size_t rows = self.data.size() / cols;
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c) bn->grad[c] += self.grad[r * cols + c];
                }
            }
        };
    }
    return Tensor::from_node(node);
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto node = detail::make_result(a.shape(), std::move(out), {a, b}, "mul");
    if (node->requires_grad) {
        auto an = a.node(), bn = b.node();
        node->backward_fn = [an, bn](TensorNode& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    an->grad[i] += self.grad[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    bn->grad[i] += self.grad[i] * an->data[i];
            }
        };
    }
    return Tensor::from_node(node);
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    auto node = detail::make_result(a.shape(), std::move(out), {a}, "scale");
    if (node->requires_grad) {
        auto an = a.node();
        node->backward_fn = [an, c](TensorNode& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * c;
        };
    }
    return Tensor::from_node(node);
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    auto node = detail::make_result(a.shape(), std::move(out), {a}, "relu");
    if (node->requires_grad) {
        auto an = a.node();
        // subgradient at 0 is 0
        node->backward_fn = [an](TensorNode& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (an->data[i] > 0.0) an->grad[i] += self.grad[i];
        };
    }
    return Tensor::from_node(node);
}

// softmax along an axis, shifted by the per-slice max so large inputs survive.
inline Tensor softmax_stable(const Tensor& a, int axis = -1) {
    for (double v : a.data())
        if (!std::isfinite(v)) throw NumericError("softmax_stable: non-finite input");
    std::size_t rows, cols;
    bool by_row;  // normalize within each row
    if (a.rank() == 1) {
        if (axis != 0 && axis != -1) throw UsageError("softmax_stable: invalid axis for rank-1 tensor");
        rows = 1;
        cols = a.dim(0);
        by_row = true;
    } else if (a.rank() == 2) {
        if (axis == -1) axis = 1;
        if (axis != 0 && axis != 1) throw UsageError("softmax_stable: invalid axis");
        rows = a.dim(0);
        cols = a.dim(1);
        by_row = (axis == 1);
    } else {
        throw UsageError("softmax_stable: rank > 2 unsupported");
    }
    const std::size_t nslice = by_row ? rows : cols;
    const std::size_t slen = by_row ? cols : rows;
    auto idx = [by_row, cols](std::size_t s, std::size_t i) {
        return by_row ? s * cols + i : i * cols + s;
    };

    std::vector<double> out(a.numel());
    for (std::size_t s = 0; s < nslice; ++s) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < slen; ++i) mx = std::max(mx, a.data()[idx(s, i)]);
        double denom = 0.0;
        for (std::size_t i = 0; i < slen; ++i) {
            const double e = std::exp(a.data()[idx(s, i)] - mx);
            out[idx(s, i)] = e;
            denom += e;
        }
        for (std::size_t i = 0; i < slen; ++i) out[idx(s, i)] /= denom;
    }
    auto node = detail::make_result(a.shape(), std::move(out), {a}, "softmax_stable");
    if (node->requires_grad) {
        auto an = a.node();
        node->backward_fn = [an, nslice, slen, idx](TensorNode& self) {
            an->ensure_grad();
            for (std::size_t s = 0; s < nslice; ++s) {
                double dot = 0.0;
                for (std::size_t i = 0; i < slen; ++i)
                    dot += self.grad[idx(s, i)] * self.data[idx(s, i)];
                for (std::size_t i = 0; i < slen; ++i)
                    an->grad[idx(s, i)] += self.data[idx(s, i)] * (self.grad[idx(s, i)] - dot);
            }
        };
    }
    return Tensor::from_node(node);
}

// Normalizes each last-axis vector to mean 0 / variance 1, then applies
// gain and bias. Variance floored at 1e-10 so constant rows are defined.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    if (x.rank() < 1 || x.rank() > 2) throw UsageError("layer_norm: rank must be 1 or 2");
    const std::size_t d = x.rank() == 2 ? x.dim(1) : x.dim(0);
    const std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
    if (d < 2) throw ShapeError("layer_norm: last axis must have extent >= 2");
    if (gain.numel() != d || bias.numel() != d)
        throw ShapeError("layer_norm: gain/bias length must equal last-axis extent");
    constexpr double kVarFloor = 1e-10;

    std::vector<double> out(x.numel());
    std::vector<double> means(rows), istds(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data().data() + r * d;
        double mean = 0.0;
        for (std::size_t i = 0; i < d; ++i) mean += xr[i];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
        var /= static_cast<double>(d);
        const double istd = 1.0 / std::sqrt(var + kVarFloor);
        means[r] = mean;
        istds[r] = istd;
        for (std::size_t i = 0; i < d; ++i)
            out[r * d + i] = (xr[i] - mean) * istd * gain.data()[i] + bias.data()[i];
    }
    auto node = detail::make_result(x.shape(), std::move(out), {x, gain, bias}, "layer_norm");
    if (node->requires_grad) {
        auto xn = x.node(), gn = gain.node(), bn = bias.node();
        node->backward_fn = [xn, gn, bn, rows, d, means, istds](TensorNode& self) {
            for (std::size_t r = 0; r < rows; ++r) {
                const double* xr = xn->data.data() + r * d;
                const double* gr = self.grad.data() + r * d;
                const double mean = means[r], istd = istds[r];
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    for (std::size_t i = 0; i < d; ++i)
                        gn->grad[i] += gr[i] * (xr[i] - mean) * istd;
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (std::size_t i = 0; i < d; ++i) bn->grad[i] += gr[i];
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    // dL/dxhat_i = gr_i * gain_i; propagate through (x-mean)*istd
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                        const double xhat = (xr[i] - mean) * istd;
                        const double dxhat = gr[i] * gn->data[i];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    const double dn = static_cast<double>(d);
                    for (std::size_t i = 0; i < d; ++i) {
                        const double xhat = (xr[i] - mean) * istd;
                        const double dxhat = gr[i] * gn->data[i];
                        xn->grad[r * d + i] +=
                            istd * (dxhat - sum_dxhat / dn - xhat * sum_dxhat_xhat / dn);
                    }
                }
            }
        };
    }
    return Tensor::from_node(node);
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw UsageError("transpose: rank-2 only");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
    auto node = detail::make_result({n, m}, std::move(out), {a}, "transpose");
    if (node->requires_grad) {
        auto an = a.node();
        node->backward_fn = [an, m, n](TensorNode& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += self.grad[j * m + i];
        };
    }
    return Tensor::from_node(node);
}

inline Tensor sum(const Tensor& a) {
    double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
    auto node = detail::make_result({1}, {s}, {a}, "sum");
    if (node->requires_grad) {
        auto an = a.node();
        node->backward_fn = [an](TensorNode& self) {
            an->ensure_grad();
            for (auto& g : an->grad) g += self.grad[0];
        };
    }
    return Tensor::from_node(node);
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

// Gather rows of a [V x d] table by integer id; scatter-adds on backward.
inline Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw UsageError("embedding: table must be rank-2");
    const std::size_t v = table.dim(0), d = table.dim(1);
    if (ids.empty()) throw UsageError("embedding: empty id list");
    std::vector<double> out(ids.size() * d);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const int id = ids[r];
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw UsageError("embedding: id " + std::to_string(id) + " out of range [0," +
                             std::to_string(v) + ")");
        std::copy_n(table.data().data() + static_cast<std::size_t>(id) * d, d, out.data() + r * d);
    }
    auto node = detail::make_result({ids.size(), d}, std::move(out), {table}, "embedding");
    if (node->requires_grad) {
        auto tn = table.node();
        auto ids_copy = ids;
        node->backward_fn = [tn, ids_copy, d](TensorNode& self) {
            tn->ensure_grad();
            for (std::size_t r = 0; r < ids_copy.size(); ++r) {
                double* dst = tn->grad.data() + static_cast<std::size_t>(ids_copy[r]) * d;
                const double* src = self.grad.data() + r * d;
                for (std::size_t i = 0; i < d; ++i) dst[i] += src[i];
            }
        };
    }
    return Tensor::from_node(node);
}

// Column-wise concatenation of rank-2 tensors with equal row counts.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw UsageError("concat_cols: no inputs");
    const std::size_t rows = parts[0].dim(0);
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != rows)
            throw ShapeError("concat_cols: row counts differ");
        total += p.dim(1);
    }
    std::vector<double> out(rows * total);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t c = p.dim(1);
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(p.data().data() + r * c, c, out.data() + r * total + off);
        off += c;
    }
    auto node = detail::make_result({rows, total}, std::move(out), parts, "concat_cols");
    if (node->requires_grad) {
        std::vector<std::shared_ptr<TensorNode>> pn;
        std::vector<std::size_t> widths;
        for (const auto& p : parts) {
            pn.push_back(p.node());
            widths.push_back(p.dim(1));
        }
        node->backward_fn = [pn, widths, rows, total](TensorNode& self) {
            std::size_t off2 = 0;
            for (std::size_t k = 0; k < pn.size(); ++k) {
                const std::size_t c = widths[k];
                if (pn[k]->requires_grad) {
                    pn[k]->ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t i = 0; i < c; ++i)
                            pn[k]->grad[r * c + i] += self.grad[r * total + off2 + i];
                }
                off2 += c;
            }
        };
    }
    return Tensor::from_node(node);
}

// Fused token cross-entropy over logit rows. Returns the SUM of per-row
// -log p(target) over rows where select[row] != 0, plus the selected count
// via out parameter. Optional label smoothing spreads eps over the vocab.
inline Tensor cross_entropy_sum(const Tensor& logits, const std::vector<int>& targets,
                                const std::vector<std::uint8_t>& select, std::size_t* count_out,
                                double label_smoothing = 0.0) {
    if (logits.rank() != 2) throw UsageError("cross_entropy_sum: logits must be rank-2");
    const std::size_t rows = logits.dim(0), v = logits.dim(1);
    if (targets.size() != rows || select.size() != rows)
        throw ShapeError("cross_entropy_sum: targets/select length must match logit rows");
    std::size_t cnt = 0;
    // cache log-softmax rows for backward
    auto logp = std::make_shared<std::vector<double>>(rows * v);
    double total = 0.0;
    const double ls = label_smoothing;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* lr = logits.data().data() + r * v;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, lr[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < v; ++j) denom += std::exp(lr[j] - mx);
        const double logz = std::log(denom) + mx;
        for (std::size_t j = 0; j < v; ++j) (*logp)[r * v + j] = lr[j] - logz;
        if (!select[r]) continue;
        ++cnt;
        const int t = targets[r];
        if (t < 0 || static_cast<std::size_t>(t) >= v)
            throw UsageError("cross_entropy_sum: target id out of range");
        if (ls == 0.0) {
            total -= (*logp)[r * v + static_cast<std::size_t>(t)];
        } else {
            double smooth = 0.0;
            for (std::size_t j = 0; j < v; ++j) smooth -= (*logp)[r * v + j];
            total += (1.0 - ls) * -(*logp)[r * v + static_cast<std::size_t>(t)] +
                     ls / static_cast<double>(v) * smooth;
        }
    }
    if (cnt == 0) throw UsageError("cross_entropy_sum: all positions excluded");
    if (count_out) *count_out = cnt;
    auto node = detail::make_result({1}, {total}, {logits}, "cross_entropy_sum");
    if (node->requires_grad) {
        auto ln = logits.node();
        auto tgt = targets;
        auto sel = select;
        node->backward_fn = [ln, tgt, sel, logp, rows, v, ls](TensorNode& self) {
            ln->ensure_grad();
            const double g = self.grad[0];
            for (std::size_t r = 0; r < rows; ++r) {
                if (!sel[r]) continue;
                for (std::size_t j = 0; j < v; ++j) {
                    const double p = std::exp((*logp)[r * v + j]);
                    double q = ls / static_cast<double>(v);
                    if (j == static_cast<std::size_t>(tgt[r])) q += 1.0 - ls;
                    ln->grad[r * v + j] += g * (p - q);
                }
            }
        };
    }
    return Tensor::from_node(node);
}

// Inverted dropout: scales survivors by 1/(1-p) at train time.
inline Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng, bool training) {
    if (p < 0.0 || p >= 1.0) throw UsageError("dropout: p must be in [0,1)");
    if (!training || p == 0.0) return a;
    std::bernoulli_distribution keep(1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(a.numel());
    const double inv = 1.0 / (1.0 - p);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        (*mask)[i] = keep(rng) ? inv : 0.0;
        out[i] = a.data()[i] * (*mask)[i];
    }
    auto node = detail::make_result(a.shape(), std::move(out), {a}, "dropout");
    if (node->requires_grad) {
        auto an = a.node();
        node->backward_fn = [an, mask](TensorNode& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                an->grad[i] += self.grad[i] * (*mask)[i];
        };
    }
    return Tensor::from_node(node);
}

// ---- backward ------------------------------------------------------------

inline void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw UsageError("backward: loss must be scalar");
    if (!loss.node()->requires_grad) return;

    // reverse topological order via iterative post-order DFS
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            TensorNode* p = n->parents[i++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

// Max relative error between analytic and central-difference gradients.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double step = 1e-5) {
    Tensor probe(x.shape(), x.data(), true);
    Tensor loss = f(probe);
    if (loss.numel() != 1) throw UsageError("grad_check: f must return a scalar");
    backward(loss);
    std::vector<double> analytic = probe.grad();
    if (analytic.empty()) analytic.assign(x.numel(), 0.0);

    double worst = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        Tensor xp(x.shape(), x.data());
        Tensor xm(x.shape(), x.data());
        xp.data()[i] += step;
        xm.data()[i] -= step;
        const double fp = f(xp).item();
        const double fm = f(xm).item();
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("grad_check: non-finite function value near x");
        const double numeric = (fp - fm) / (2.0 * step);
        const double rel = std::abs(analytic[i] - numeric) /
                           (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace stbd
