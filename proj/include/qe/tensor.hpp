#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "qe/errors.hpp"
#include "qe/rng.hpp"

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// Templated on the element type: production code runs TensorT<float>,
// gradient-check tests run TensorT<double>. Statistical reductions (means,
// variances, norms, dot products, softmax sums) always accumulate in double
// regardless of the element type; matrix products accumulate in the working
// precision.
//
// Ops record the computation graph only while gradients are enabled and at
// least one input requires a gradient. backward() walks the graph once in
// reverse topological order; repeated calls without zero_grad() accumulate.

namespace qe {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

namespace detail {

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

template <typename T>
struct NodeT {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // persistent, lazily allocated, accumulates
    bool requires_grad = false;
    std::vector<std::shared_ptr<NodeT>> parents;
    // backward_fn(upstream, self, parent_scratch): accumulate into the
    // non-null scratch buffers of parents that need gradients.
    std::function<void(const std::vector<T>&, const NodeT&,
                       const std::vector<std::vector<T>*>&)>
        backward_fn;
    // Transposed value, materialized on demand during backward. All matmul
    // nodes sharing this node as their right operand (every example in a
    // batch multiplies by the same weight matrix) reuse one transpose;
    // mutating the value invalidates it.
    std::vector<T> transpose_cache;
    bool transpose_cache_valid = false;
};

}  // namespace detail

// Disables graph recording for the enclosing scope (inference paths).
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) {
        detail::grad_mode_flag() = false;
    }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <typename T>
class TensorT {
public:
    using Node = detail::NodeT<T>;

    TensorT() = default;

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static TensorT filled(Shape shape, T fill, bool requires_grad = false) {
        auto node = std::make_shared<Node>();
        node->value.assign(shape_numel(shape), fill);
        node->shape = std::move(shape);
        node->requires_grad = requires_grad;
        return TensorT(std::move(node));
    }

    static TensorT from_data(Shape shape, std::vector<T> data,
                             bool requires_grad = false) {
        if (data.size() != shape_numel(shape)) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->value = std::move(data);
        node->requires_grad = requires_grad;
        return TensorT(std::move(node));
    }

    static TensorT scalar(T v, bool requires_grad = false) {
        return from_data({}, {v}, requires_grad);
    }

    // Entries drawn Normal(mean, stddev^2) in declaration order.
    static TensorT randn(Shape shape, Rng& rng, double mean, double stddev,
                         bool requires_grad = false) {
        std::vector<T> data(shape_numel(shape));
        for (auto& v : data) v = static_cast<T>(rng.normal(mean, stddev));
        return from_data(std::move(shape), std::move(data), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t rank() const { return node_->shape.size(); }

    std::size_t dim(std::size_t axis) const {
        if (axis >= node_->shape.size()) {
            throw ContractError("axis " + std::to_string(axis) +
                                " out of range for shape " + shape_str(shape()));
        }
        return node_->shape[axis];
    }

    const std::vector<T>& data() const { return node_->value; }

    // In-place mutation is reserved for weight updates between graphs.
    std::vector<T>& mutable_data() {
        node_->transpose_cache_valid = false;
        return node_->value;
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    bool has_grad() const { return node_ && !node_->grad.empty(); }

    const std::vector<T>& grad() const {
        if (node_->grad.empty()) node_->grad.assign(node_->value.size(), T(0));
        return node_->grad;
    }

    void zero_grad() { node_->grad.clear(); }

    T item() const {
        if (numel() != 1) {
            throw ContractError("item() requires a scalar tensor, got shape " +
                                shape_str(shape()));
        }
        return node_->value[0];
    }

    void backward() const;

    std::shared_ptr<Node> node() const { return node_; }

    // Deep copy of values; no graph, no grads.
    TensorT clone_detached() const {
        auto node = std::make_shared<Node>();
        node->shape = node_->shape;
        node->value = node_->value;
        node->requires_grad = node_->requires_grad;
        return TensorT(std::move(node));
    }

private:
    explicit TensorT(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    template <typename U, typename Fn>
    friend TensorT<U> record(Shape, std::vector<U>, std::vector<TensorT<U>>, Fn);

    std::shared_ptr<Node> node_;
};

// Builds an op result node, recording parents and the backward rule only when
// gradients are enabled and some input needs them.
template <typename T, typename Fn>
TensorT<T> record(Shape shape, std::vector<T> value,
                  std::vector<TensorT<T>> inputs, Fn backward_fn) {
    auto node = std::make_shared<detail::NodeT<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& in : inputs) {
            if (in.defined() && in.requires_grad()) {
                needs = true;
                break;
            }
        }
    }
    if (needs) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (const auto& in : inputs) node->parents.push_back(in.node());
        node->backward_fn = std::move(backward_fn);
    }
    return TensorT<T>(std::move(node));
}

template <typename T>
void TensorT<T>::backward() const {
    if (!node_) throw ContractError("backward() on an undefined tensor");
    if (numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " +
                            shape_str(shape()));
    }

    // Reverse topological order: iterative DFS post-order, reversed. Each
    // node is visited exactly once.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    struct Frame {
        Node* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({node_.get(), 0});
    seen.insert(node_.get());
    while (!stack.empty()) {
        Frame& frame = stack.back();
        if (frame.next_parent < frame.node->parents.size()) {
            Node* parent = frame.node->parents[frame.next_parent++].get();
            if (seen.insert(parent).second) stack.push_back({parent, 0});
        } else {
            order.push_back(frame.node);
            stack.pop_back();
        }
    }

    std::unordered_map<Node*, std::vector<T>> scratch;
    scratch[node_.get()] = {T(1)};

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        auto found = scratch.find(n);
        if (found == scratch.end()) continue;
        std::vector<T>& upstream = found->second;
        if (n->requires_grad) {
            if (n->grad.empty()) n->grad.assign(n->value.size(), T(0));
            for (std::size_t i = 0; i < upstream.size(); ++i)
                n->grad[i] += upstream[i];
        }
        if (!n->backward_fn) continue;
        std::vector<std::vector<T>*> parent_bufs(n->parents.size(), nullptr);
        for (std::size_t i = 0; i < n->parents.size(); ++i) {
            Node* p = n->parents[i].get();
            if (!p->requires_grad) continue;
            auto& buf = scratch[p];
            if (buf.size() != p->value.size()) buf.assign(p->value.size(), T(0));
            parent_bufs[i] = &buf;
        }
        n->backward_fn(upstream, *n, parent_bufs);
    }
}

template <typename T>
void backward(const TensorT<T>& loss) {
    loss.backward();
}

// ---------------------------------------------------------------------------
// Raw kernels
// ---------------------------------------------------------------------------

namespace detail {

// c += a.b for row-major a[m x k], b[k x n].
template <typename T>
void gemm_nn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                 std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c += a^T.g for a[m x k], g[m x n]; c is [k x n].
template <typename T>
void gemm_tn_acc(const T* a, const T* g, T* c, std::size_t m, std::size_t k,
                 std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            T* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
        }
    }
}

template <typename T>
std::vector<T> transposed(const T* a, std::size_t rows, std::size_t cols) {
    std::vector<T> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
    return out;
}

template <typename T>
const std::vector<T>& cached_transpose(NodeT<T>& node, std::size_t rows,
                                       std::size_t cols) {
    if (!node.transpose_cache_valid) {
        node.transpose_cache = transposed(node.value.data(), rows, cols);
        node.transpose_cache_valid = true;
    }
    return node.transpose_cache;
}

template <typename T>
void require_rank(const TensorT<T>& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + " tensor, got shape " +
                         shape_str(t.shape()));
    }
}

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b,
                        const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_rank(a, 2, "matmul");
    detail::require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions disagree, " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<T> out(m * n, T(0));
    detail::gemm_nn_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    return record<T>(
        {m, n}, std::move(out), {a, b},
        [m, k, n](const std::vector<T>& up, const detail::NodeT<T>& self,
                  const std::vector<std::vector<T>*>& pg) {
            const auto& av = self.parents[0]->value;
            if (pg[0]) {
                // dA += dY . B^T; the materialized B^T keeps inner loops
                // stride-1 and is shared by every matmul against this node.
                const std::vector<T>& bt =
                    detail::cached_transpose(*self.parents[1], k, n);
                detail::gemm_nn_acc(up.data(), bt.data(), pg[0]->data(), m, n, k);
            }
            if (pg[1]) detail::gemm_tn_acc(av.data(), up.data(), pg[1]->data(), m, k, n);
        });
}

template <typename T>
TensorT<T> transpose(const TensorT<T>& a) {
    detail::require_rank(a, 2, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<T> out = detail::transposed(a.data().data(), m, n);
    return record<T>(
        {n, m}, std::move(out), {a},
        [m, n](const std::vector<T>& up, const detail::NodeT<T>&,
               const std::vector<std::vector<T>*>& pg) {
            if (!pg[0]) return;
            auto& g = *pg[0];
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) g[j * n + i] += up[i * m + j];
        });
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> out(a.data());
    const auto& bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return record<T>(
        a.shape(), std::move(out), {a, b},
        [](const std::vector<T>& up, const detail::NodeT<T>&,
           const std::vector<std::vector<T>*>& pg) {
            for (auto* buf : pg) {
                if (!buf) continue;
                for (std::size_t i = 0; i < up.size(); ++i) (*buf)[i] += up[i];
            }
        });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<T> out(a.data());
    const auto& bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return record<T>(
        a.shape(), std::move(out), {a, b},
        [](const std::vector<T>& up, const detail::NodeT<T>&,
           const std::vector<std::vector<T>*>& pg) {
            if (pg[0])
                for (std::size_t i = 0; i < up.size(); ++i) (*pg[0])[i] += up[i];
            if (pg[1])
                for (std::size_t i = 0; i < up.size(); ++i) (*pg[1])[i] -= up[i];
        });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<T> out(a.data());
    const auto& bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return record<T>(
        a.shape(), std::move(out), {a, b},
        [](const std::vector<T>& up, const detail::NodeT<T>& self,
           const std::vector<std::vector<T>*>& pg) {
            const auto& av = self.parents[0]->value;
            const auto& bv2 = self.parents[1]->value;
            if (pg[0])
                for (std::size_t i = 0; i < up.size(); ++i)
                    (*pg[0])[i] += up[i] * bv2[i];
            if (pg[1])
                for (std::size_t i = 0; i < up.size(); ++i)
                    (*pg[1])[i] += up[i] * av[i];
        });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T factor) {
    std::vector<T> out(a.data());
    for (auto& v : out) v *= factor;
    return record<T>(
        a.shape(), std::move(out), {a},
        [factor](const std::vector<T>& up, const detail::NodeT<T>&,
                 const std::vector<std::vector<T>*>& pg) {
            if (!pg[0]) return;
            for (std::size_t i = 0; i < up.size(); ++i)
                (*pg[0])[i] += factor * up[i];
        });
}

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
    std::vector<T> out(a.data());
    for (auto& v : out) v = v > T(0) ? v : T(0);
    return record<T>(
        a.shape(), std::move(out), {a},
        [](const std::vector<T>& up, const detail::NodeT<T>& self,
           const std::vector<std::vector<T>*>& pg) {
            if (!pg[0]) return;
            const auto& av = self.parents[0]->value;
            for (std::size_t i = 0; i < up.size(); ++i)
                if (av[i] > T(0)) (*pg[0])[i] += up[i];
        });
}

// Exact-erf GELU: x/2 * (1 + erf(x/sqrt(2))).
template <typename T>
TensorT<T> gelu(const TensorT<T>& a) {
    std::vector<T> out(a.data());
    for (auto& v : out) {
        const double x = static_cast<double>(v);
        v = static_cast<T>(0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)));
    }
    return record<T>(
        a.shape(), std::move(out), {a},
        [](const std::vector<T>& up, const detail::NodeT<T>& self,
           const std::vector<std::vector<T>*>& pg) {
            if (!pg[0]) return;
            const auto& av = self.parents[0]->value;
            constexpr double inv_sqrt_2pi = 0.3989422804014326779;
            for (std::size_t i = 0; i < up.size(); ++i) {
                const double x = static_cast<double>(av[i]);
                const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
                (*pg[0])[i] += up[i] * static_cast<T>(cdf + x * pdf);
            }
        });
}

// Numerically stable softmax along `axis` of a rank-1 or rank-2 tensor.
// Row/column sums accumulate in double.
template <typename T>
TensorT<T> softmax(const TensorT<T>& a, std::size_t axis) {
    if (a.rank() != 1 && a.rank() != 2) {
        throw ShapeError("softmax: expected rank 1 or 2, got shape " +
                         shape_str(a.shape()));
    }
    if (axis >= a.rank()) {
        throw ContractError("softmax: axis " + std::to_string(axis) +
                            " invalid for shape " + shape_str(a.shape()));
    }
    const bool row_major_slices = (a.rank() == 1) || (axis == 1);
    const std::size_t n_slices =
        a.rank() == 1 ? 1 : (axis == 1 ? a.dim(0) : a.dim(1));
    const std::size_t slice_len =
        a.rank() == 1 ? a.dim(0) : (axis == 1 ? a.dim(1) : a.dim(0));
    const std::size_t stride = row_major_slices ? 1 : a.dim(1);

    const auto& av = a.data();
    std::vector<T> out(av.size());
    for (std::size_t s = 0; s < n_slices; ++s) {
        const std::size_t base = row_major_slices ? s * slice_len : s;
        T mx = av[base];
        for (std::size_t i = 1; i < slice_len; ++i)
            mx = std::max(mx, av[base + i * stride]);
        double denom = 0.0;
        for (std::size_t i = 0; i < slice_len; ++i) {
            const T e = std::exp(av[base + i * stride] - mx);
            out[base + i * stride] = e;
            denom += static_cast<double>(e);
        }
        for (std::size_t i = 0; i < slice_len; ++i)
            out[base + i * stride] =
                static_cast<T>(static_cast<double>(out[base + i * stride]) / denom);
    }
    return record<T>(
        a.shape(), std::move(out), {a},
        [n_slices, slice_len, stride, row_major_slices](
            const std::vector<T>& up, const detail::NodeT<T>& self,
            const std::vector<std::vector<T>*>& pg) {
            if (!pg[0]) return;
            const auto& w = self.value;
            for (std::size_t s = 0; s < n_slices; ++s) {
                const std::size_t base = row_major_slices ? s * slice_len : s;
                double inner = 0.0;
                for (std::size_t i = 0; i < slice_len; ++i) {
                    const std::size_t ix = base + i * stride;
                    inner += static_cast<double>(w[ix]) * static_cast<double>(up[ix]);
                }
                for (std::size_t i = 0; i < slice_len; ++i) {
                    const std::size_t ix = base + i * stride;
                    (*pg[0])[ix] += static_cast<T>(
                        static_cast<double>(w[ix]) *
                        (static_cast<double>(up[ix]) - inner));
                }
            }
        });
}

// Per-row normalization to zero mean / unit variance (population variance,
// double accumulation) followed by the elementwise affine gain/bias.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain,
                      const TensorT<T>& bias, T eps) {
    if (x.rank() != 1 && x.rank() != 2) {
        throw ShapeError("layer_norm: expected rank 1 or 2, got shape " +
                         shape_str(x.shape()));
    }
    if (eps <= T(0)) throw ContractError("layer_norm: eps must be positive");
    const std::size_t d = x.rank() == 2 ? x.dim(1) : x.dim(0);
    const std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
    detail::require_rank(gain, 1, "layer_norm");
    detail::require_rank(bias, 1, "layer_norm");
    if (gain.dim(0) != d || bias.dim(0) != d) {
        throw ShapeError("layer_norm: gain/bias shape " + shape_str(gain.shape()) +
                         "/" + shape_str(bias.shape()) +
                         " does not match feature size " + std::to_string(d));
    }

    const auto& xv = x.data();
    const auto& gv = gain.data();
    const auto& bv = bias.data();
    std::vector<T> out(xv.size());
    std::vector<T> xhat(xv.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xv.data() + r * d;
        double mean = 0.0;
        for (std::size_t i = 0; i < d; ++i) mean += static_cast<double>(xr[i]);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double c = static_cast<double>(xr[i]) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
        inv_std[r] = inv;
        for (std::size_t i = 0; i < d; ++i) {
            const double h = (static_cast<double>(xr[i]) - mean) * inv;
            xhat[r * d + i] = static_cast<T>(h);
            out[r * d + i] = static_cast<T>(h * static_cast<double>(gv[i]) +
                                            static_cast<double>(bv[i]));
        }
    }
    return record<T>(
        x.shape(), std::move(out), {x, gain, bias},
        [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
            const std::vector<T>& up, const detail::NodeT<T>& self,
            const std::vector<std::vector<T>*>& pg) {
            const auto& gv2 = self.parents[1]->value;
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t base = r * d;
                if (pg[2])
                    for (std::size_t i = 0; i < d; ++i)
                        (*pg[2])[i] += up[base + i];
                if (pg[1])
                    for (std::size_t i = 0; i < d; ++i)
                        (*pg[1])[i] += up[base + i] * xhat[base + i];
                if (pg[0]) {
                    double mean_h = 0.0, mean_hx = 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                        const double h = static_cast<double>(up[base + i]) *
                                         static_cast<double>(gv2[i]);
                        mean_h += h;
                        mean_hx += h * static_cast<double>(xhat[base + i]);
                    }
                    mean_h /= static_cast<double>(d);
                    mean_hx /= static_cast<double>(d);
                    for (std::size_t i = 0; i < d; ++i) {
                        const double h = static_cast<double>(up[base + i]) *
                                         static_cast<double>(gv2[i]);
                        (*pg[0])[base + i] += static_cast<T>(
                            inv_std[r] *
                            (h - mean_h -
                             static_cast<double>(xhat[base + i]) * mean_hx));
                    }
                }
            }
        });
}

// Mean along an axis; rank-2 -> rank-1, rank-1 -> scalar. Double accumulation.
template <typename T>
TensorT<T> mean_axis(const TensorT<T>& a, std::size_t axis) {
    if (a.rank() == 1) {
        if (axis != 0)
            throw ContractError("mean_axis: axis must be 0 for rank-1 input");
        double acc = 0.0;
        for (T v : a.data()) acc += static_cast<double>(v);
        const std::size_t n = a.dim(0);
        return record<T>(
            {}, {static_cast<T>(acc / static_cast<double>(n))}, {a},
            [n](const std::vector<T>& up, const detail::NodeT<T>&,
                const std::vector<std::vector<T>*>& pg) {
                if (!pg[0]) return;
                const T g = up[0] / static_cast<T>(n);
                for (auto& v : *pg[0]) v += g;
            });
    }
    detail::require_rank(a, 2, "mean_axis");
    if (axis > 1)
        throw ContractError("mean_axis: axis " + std::to_string(axis) +
                            " invalid for shape " + shape_str(a.shape()));
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    const auto& av = a.data();
    if (axis == 0) {
        std::vector<double> acc(cols, 0.0);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
                acc[j] += static_cast<double>(av[i * cols + j]);
        std::vector<T> out(cols);
        for (std::size_t j = 0; j < cols; ++j)
            out[j] = static_cast<T>(acc[j] / static_cast<double>(rows));
        return record<T>(
            {cols}, std::move(out), {a},
            [rows, cols](const std::vector<T>& up, const detail::NodeT<T>&,
                         const std::vector<std::vector<T>*>& pg) {
                if (!pg[0]) return;
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j)
                        (*pg[0])[i * cols + j] += up[j] / static_cast<T>(rows);
            });
    }
    std::vector<T> out(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < cols; ++j)
            acc += static_cast<double>(av[i * cols + j]);
        out[i] = static_cast<T>(acc / static_cast<double>(cols));
    }
    return record<T>(
        {rows}, std::move(out), {a},
        [rows, cols](const std::vector<T>& up, const detail::NodeT<T>&,
                     const std::vector<std::vector<T>*>& pg) {
            if (!pg[0]) return;
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j)
                    (*pg[0])[i * cols + j] += up[i] / static_cast<T>(cols);
        });
}

// Max along an axis; gradients route to the argmax, ties to the lowest index.
template <typename T>
TensorT<T> max_axis(const TensorT<T>& a, std::size_t axis) {
    detail::require_rank(a, 2, "max_axis");
    if (axis > 1)
        throw ContractError("max_axis: axis " + std::to_string(axis) +
                            " invalid for shape " + shape_str(a.shape()));
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    const auto& av = a.data();
    const std::size_t out_len = axis == 0 ? cols : rows;
    const std::size_t n_along = axis == 0 ? rows : cols;
    std::vector<T> out(out_len);
    std::vector<std::size_t> argmax(out_len, 0);
    for (std::size_t o = 0; o < out_len; ++o) {
        T best{};
        for (std::size_t i = 0; i < n_along; ++i) {
            const T v = axis == 0 ? av[i * cols + o] : av[o * cols + i];
            if (i == 0 || v > best) {
                best = v;
                argmax[o] = i;
            }
        }
        out[o] = best;
    }
    return record<T>(
        {out_len}, std::move(out), {a},
        [axis, cols, argmax = std::move(argmax)](
            const std::vector<T>& up, const detail::NodeT<T>&,
            const std::vector<std::vector<T>*>& pg) {
            if (!pg[0]) return;
            for (std::size_t o = 0; o < up.size(); ++o) {
                const std::size_t i = argmax[o];
                const std::size_t ix = axis == 0 ? i * cols + o : o * cols + i;
                (*pg[0])[ix] += up[o];
            }
        });
}

// Concatenation along axis 0 (rank 1 or 2) or axis 1 (rank 2).
template <typename T>
TensorT<T> concat_axis(const std::vector<TensorT<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat_axis: no inputs");
    const std::size_t rank = parts.front().rank();
    if (rank != 1 && rank != 2)
        throw ShapeError("concat_axis: expected rank 1 or 2 inputs");
    if (axis >= rank)
        throw ContractError("concat_axis: axis " + std::to_string(axis) +
                            " invalid for rank " + std::to_string(rank));
    for (const auto& p : parts) {
        if (p.rank() != rank)
            throw ShapeError("concat_axis: mixed ranks " + shape_str(p.shape()) +
                             " vs " + shape_str(parts.front().shape()));
        for (std::size_t ax = 0; ax < rank; ++ax) {
            if (ax != axis && p.shape()[ax] != parts.front().shape()[ax])
                throw ShapeError("concat_axis: shape mismatch " +
                                 shape_str(p.shape()) + " vs " +
                                 shape_str(parts.front().shape()));
        }
    }

    Shape out_shape = parts.front().shape();
    out_shape[axis] = 0;
    for (const auto& p : parts) out_shape[axis] += p.shape()[axis];
    std::vector<T> out(shape_numel(out_shape));
    std::vector<std::size_t> offsets(parts.size());

    if (axis == 0) {
        std::size_t pos = 0;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            offsets[i] = pos;
            const auto& pv = parts[i].data();
            std::copy(pv.begin(), pv.end(), out.begin() + pos);
            pos += pv.size();
        }
    } else {
        const std::size_t rows = out_shape[0], total_cols = out_shape[1];
        std::size_t col0 = 0;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            offsets[i] = col0;
            const std::size_t pc = parts[i].shape()[1];
            const auto& pv = parts[i].data();
            for (std::size_t r = 0; r < rows; ++r)
                std::copy(pv.begin() + r * pc, pv.begin() + (r + 1) * pc,
                          out.begin() + r * total_cols + col0);
            col0 += pc;
        }
    }
    std::vector<std::size_t> part_dims(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i)
        part_dims[i] = parts[i].shape()[axis];
    const std::size_t out_rows = out_shape.size() == 2 ? out_shape[0] : 0;
    const std::size_t out_cols = out_shape.size() == 2 ? out_shape[1] : 0;
    return record<T>(
        out_shape, std::move(out), parts,
        [axis, offsets = std::move(offsets), part_dims = std::move(part_dims),
         out_rows, out_cols](const std::vector<T>& up, const detail::NodeT<T>&,
                             const std::vector<std::vector<T>*>& pg) {
            for (std::size_t i = 0; i < pg.size(); ++i) {
                if (!pg[i]) continue;
                if (axis == 0) {
                    const std::size_t n = pg[i]->size();
                    for (std::size_t j = 0; j < n; ++j)
                        (*pg[i])[j] += up[offsets[i] + j];
                } else {
                    const std::size_t pc = part_dims[i];
                    for (std::size_t r = 0; r < out_rows; ++r)
                        for (std::size_t j = 0; j < pc; ++j)
                            (*pg[i])[r * pc + j] +=
                                up[r * out_cols + offsets[i] + j];
                }
            }
        });
}

// Row range [r0, r1) of a rank-2 tensor.
template <typename T>
TensorT<T> slice_rows(const TensorT<T>& a, std::size_t r0, std::size_t r1) {
    detail::require_rank(a, 2, "slice_rows");
    if (r0 >= r1 || r1 > a.dim(0))
        throw ContractError("slice_rows: invalid range [" + std::to_string(r0) +
                            ", " + std::to_string(r1) + ") for shape " +
                            shape_str(a.shape()));
    const std::size_t cols = a.dim(1);
    std::vector<T> out(a.data().begin() + r0 * cols, a.data().begin() + r1 * cols);
    return record<T>(
        {r1 - r0, cols}, std::move(out), {a},
        [r0, cols](const std::vector<T>& up, const detail::NodeT<T>&,
                   const std::vector<std::vector<T>*>& pg) {
            if (!pg[0]) return;
            for (std::size_t i = 0; i < up.size(); ++i)
                (*pg[0])[r0 * cols + i] += up[i];
        });
}

// Column range [c0, c1) of a rank-2 tensor.
template <typename T>
TensorT<T> slice_cols(const TensorT<T>& a, std::size_t c0, std::size_t c1) {
    detail::require_rank(a, 2, "slice_cols");
    if (c0 >= c1 || c1 > a.dim(1))
        throw ContractError("slice_cols: invalid range [" + std::to_string(c0) +
                            ", " + std::to_string(c1) + ") for shape " +
                            shape_str(a.shape()));
    const std::size_t rows = a.dim(0), cols = a.dim(1), w = c1 - c0;
    std::vector<T> out(rows * w);
    const auto& av = a.data();
    for (std::size_t r = 0; r < rows; ++r)
        std::copy(av.begin() + r * cols + c0, av.begin() + r * cols + c1,
                  out.begin() + r * w);
    return record<T>(
        {rows, w}, std::move(out), {a},
        [rows, cols, c0, w](const std::vector<T>& up, const detail::NodeT<T>&,
                            const std::vector<std::vector<T>*>& pg) {
            if (!pg[0]) return;
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < w; ++j)
                    (*pg[0])[r * cols + c0 + j] += up[r * w + j];
        });
}

// Row i of a rank-2 tensor as a rank-1 vector.
template <typename T>
TensorT<T> row(const TensorT<T>& a, std::size_t i) {
    detail::require_rank(a, 2, "row");
    if (i >= a.dim(0))
        throw ContractError("row: index " + std::to_string(i) +
                            " out of range for shape " + shape_str(a.shape()));
    const std::size_t cols = a.dim(1);
    std::vector<T> out(a.data().begin() + i * cols,
                       a.data().begin() + (i + 1) * cols);
    return record<T>(
        {cols}, std::move(out), {a},
        [i, cols](const std::vector<T>& up, const detail::NodeT<T>&,
                  const std::vector<std::vector<T>*>& pg) {
            if (!pg[0]) return;
            for (std::size_t j = 0; j < cols; ++j)
                (*pg[0])[i * cols + j] += up[j];
        });
}

// Extends a rank-2 tensor with zero rows up to total_rows.
template <typename T>
TensorT<T> pad_rows(const TensorT<T>& a, std::size_t total_rows) {
    detail::require_rank(a, 2, "pad_rows");
    if (total_rows < a.dim(0))
        throw ContractError("pad_rows: target rows " + std::to_string(total_rows) +
                            " smaller than input " + shape_str(a.shape()));
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    std::vector<T> out(total_rows * cols, T(0));
    std::copy(a.data().begin(), a.data().end(), out.begin());
    return record<T>(
        {total_rows, cols}, std::move(out), {a},
        [rows, cols](const std::vector<T>& up, const detail::NodeT<T>&,
                     const std::vector<std::vector<T>*>& pg) {
            if (!pg[0]) return;
            for (std::size_t i = 0; i < rows * cols; ++i) (*pg[0])[i] += up[i];
        });
}

// Gathers rows of an embedding table; gradients scatter-add back.
template <typename T>
TensorT<T> embedding_rows(const TensorT<T>& table, const std::vector<int>& ids) {
    detail::require_rank(table, 2, "embedding_rows");
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab)
            throw ContractError("embedding_rows: id " + std::to_string(id) +
                                " out of range for table " +
                                shape_str(table.shape()));
    }
    std::vector<T> out(ids.size() * d);
    const auto& tv = table.data();
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy(tv.begin() + static_cast<std::size_t>(ids[i]) * d,
                  tv.begin() + (static_cast<std::size_t>(ids[i]) + 1) * d,
                  out.begin() + i * d);
    return record<T>(
        {ids.size(), d}, std::move(out), {table},
        [ids, d](const std::vector<T>& up, const detail::NodeT<T>&,
                 const std::vector<std::vector<T>*>& pg) {
            if (!pg[0]) return;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const std::size_t base = static_cast<std::size_t>(ids[i]) * d;
                for (std::size_t j = 0; j < d; ++j)
                    (*pg[0])[base + j] += up[i * d + j];
            }
        });
}

// Dot product of two equal-length vectors -> scalar. Double accumulation.
template <typename T>
TensorT<T> dot(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_rank(a, 1, "dot");
    detail::require_rank(b, 1, "dot");
    detail::require_same_shape(a, b, "dot");
    double acc = 0.0;
    const auto& av = a.data();
    const auto& bv = b.data();
    for (std::size_t i = 0; i < av.size(); ++i)
        acc += static_cast<double>(av[i]) * static_cast<double>(bv[i]);
    return record<T>(
        {}, {static_cast<T>(acc)}, {a, b},
        [](const std::vector<T>& up, const detail::NodeT<T>& self,
           const std::vector<std::vector<T>*>& pg) {
            const auto& av2 = self.parents[0]->value;
            const auto& bv2 = self.parents[1]->value;
            if (pg[0])
                for (std::size_t i = 0; i < av2.size(); ++i)
                    (*pg[0])[i] += up[0] * bv2[i];
            if (pg[1])
                for (std::size_t i = 0; i < av2.size(); ++i)
                    (*pg[1])[i] += up[0] * av2[i];
        });
}

// Sum of all entries -> scalar. Double accumulation.
template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
    double acc = 0.0;
    for (T v : a.data()) acc += static_cast<double>(v);
    return record<T>(
        {}, {static_cast<T>(acc)}, {a},
        [](const std::vector<T>& up, const detail::NodeT<T>&,
           const std::vector<std::vector<T>*>& pg) {
            if (!pg[0]) return;
            for (auto& v : *pg[0]) v += up[0];
        });
}

// Cosine of the angle between two nonzero vectors -> scalar in [-1, 1].
template <typename T>
TensorT<T> cosine_similarity(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_rank(a, 1, "cosine");
    detail::require_rank(b, 1, "cosine");
    detail::require_same_shape(a, b, "cosine");
    const auto& av = a.data();
    const auto& bv = b.data();
    double s = 0.0, na2 = 0.0, nb2 = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double x = static_cast<double>(av[i]);
        const double y = static_cast<double>(bv[i]);
        s += x * y;
        na2 += x * x;
        nb2 += y * y;
    }
    if (na2 == 0.0 || nb2 == 0.0)
        throw DegenerateInputError("cosine of a zero vector is undefined");
    const double na = std::sqrt(na2);
    const double nb = std::sqrt(nb2);
    const double c = s / (na * nb);
    return record<T>(
        {}, {static_cast<T>(c)}, {a, b},
        [c, na, nb, na2, nb2](const std::vector<T>& up,
                              const detail::NodeT<T>& self,
                              const std::vector<std::vector<T>*>& pg) {
            const auto& av2 = self.parents[0]->value;
            const auto& bv2 = self.parents[1]->value;
            const double g = static_cast<double>(up[0]);
            if (pg[0])
                for (std::size_t i = 0; i < av2.size(); ++i)
                    (*pg[0])[i] += static_cast<T>(
                        g * (static_cast<double>(bv2[i]) / (na * nb) -
                             c * static_cast<double>(av2[i]) / na2));
            if (pg[1])
                for (std::size_t i = 0; i < bv2.size(); ++i)
                    (*pg[1])[i] += static_cast<T>(
                        g * (static_cast<double>(av2[i]) / (na * nb) -
                             c * static_cast<double>(bv2[i]) / nb2));
        });
}

// Mean squared error between two equal-length batch vectors -> scalar.
// Accumulates in double, in index order.
template <typename T>
TensorT<T> mse_loss(const TensorT<T>& predictions, const TensorT<T>& labels) {
    detail::require_rank(predictions, 1, "mse_loss");
    detail::require_rank(labels, 1, "mse_loss");
    detail::require_same_shape(predictions, labels, "mse_loss");
    const std::size_t n = predictions.dim(0);
    if (n == 0) throw ContractError("mse_loss: empty batch");
    const auto& pv = predictions.data();
    const auto& lv = labels.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pv[i]) - static_cast<double>(lv[i]);
        acc += d * d;
    }
    return record<T>(
        {}, {static_cast<T>(acc / static_cast<double>(n))}, {predictions, labels},
        [n](const std::vector<T>& up, const detail::NodeT<T>& self,
            const std::vector<std::vector<T>*>& pg) {
            const auto& pv2 = self.parents[0]->value;
            const auto& lv2 = self.parents[1]->value;
            const double g = 2.0 * static_cast<double>(up[0]) / static_cast<double>(n);
            if (pg[0])
                for (std::size_t i = 0; i < n; ++i)
                    (*pg[0])[i] += static_cast<T>(
                        g * (static_cast<double>(pv2[i]) -
                             static_cast<double>(lv2[i])));
            if (pg[1])
                for (std::size_t i = 0; i < n; ++i)
                    (*pg[1])[i] -= static_cast<T>(
                        g * (static_cast<double>(pv2[i]) -
                             static_cast<double>(lv2[i])));
        });
}

// Stacks scalar tensors into a rank-1 batch vector.
template <typename T>
TensorT<T> stack_scalars(const std::vector<TensorT<T>>& scalars) {
    if (scalars.empty()) throw ContractError("stack_scalars: empty batch");
    std::vector<T> out(scalars.size());
    for (std::size_t i = 0; i < scalars.size(); ++i) out[i] = scalars[i].item();
    return record<T>(
        {scalars.size()}, std::move(out), scalars,
        [](const std::vector<T>& up, const detail::NodeT<T>&,
           const std::vector<std::vector<T>*>& pg) {
            for (std::size_t i = 0; i < pg.size(); ++i)
                if (pg[i]) (*pg[i])[0] += up[i];
        });
}

using Tensor = TensorT<float>;

}  // namespace qe
