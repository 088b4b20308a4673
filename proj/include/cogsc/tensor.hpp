#pragma once

// Dense 64-bit tensor with reverse-mode differentiation.
//
// Every op records its parents and a backward closure on the result node;
// Tensor::backward() walks the recorded graph in reverse topological order.
// Leaf tensors accumulate gradients across calls until zero_grad().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace cogsc {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    bool leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;

    std::vector<double>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

inline thread_local bool grad_enabled = true;

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        for (auto d : shape)
            if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
        node_->value.assign(numel(shape), fill);
        node_->shape = std::move(shape);
        node_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        for (auto d : shape)
            if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
        if (numel(shape) != values.size())
            throw ShapeError("tensor of shape " + shape_str(shape) + " needs " +
                             std::to_string(numel(shape)) + " values, got " +
                             std::to_string(values.size()));
        node_->value = std::move(values);
        node_->shape = std::move(shape);
        node_->requires_grad = requires_grad;
    }

    static Tensor scalar(double v, bool requires_grad = false) { return Tensor({1}, v, requires_grad); }

    static Tensor vector(std::vector<double> v, bool requires_grad = false) {
        Shape s{v.size()};
        return Tensor(std::move(s), std::move(v), requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t size() const { return node_->value.size(); }

    std::span<const double> data() const { return node_->value; }
    std::span<double> data() { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }
    double operator[](std::size_t i) const { return node_->value[i]; }
    double item() const {
        if (size() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_str(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) {
        if (!node_->leaf) throw std::logic_error("requires_grad can only be set on leaf tensors");
        node_->requires_grad = on;
    }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::vector<double> grad_or_zero() const {
        return node_->grad.empty() ? std::vector<double>(size(), 0.0) : node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    /// Copy of the values with no graph history.
    Tensor detach() const { return Tensor(shape(), node_->value, false); }

    /// Reverse pass from a scalar. Intermediate gradients are reset on entry,
    /// leaf gradients accumulate.
    void backward() const {
        if (size() != 1) throw ShapeError("backward() requires a scalar loss, got " + shape_str(shape()));
        if (!node_->requires_grad) throw std::logic_error("backward() on a tensor that does not require grad");
        auto order = topo_order();
        for (auto* n : order)
            if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
        node_->ensure_grad()[0] += 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it)
            if ((*it)->backward_fn) (*it)->backward_fn();
    }

    const std::shared_ptr<detail::Node>& node() const { return node_; }

    static Tensor from_node(std::shared_ptr<detail::Node> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::vector<detail::Node*> topo_order() const {
        std::vector<detail::Node*> order;
        std::unordered_set<detail::Node*> seen;
        std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                auto* p = n->parents[next++].get();
                if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        return order;
    }

    std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Builds an op result. The backward closure receives the result node and
/// is dropped when no parent requires grad or recording is disabled.
inline Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                          std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->leaf = false;
    bool needs = false;
    if (grad_enabled)
        for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
        n->requires_grad = true;
        for (auto& p : parents) n->parents.push_back(p.node());
        Node* self = n.get();
        n->backward_fn = [self, fn = std::move(backward)] { fn(*self); };
    }
    return Tensor::from_node(std::move(n));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline void accumulate(const Tensor& target, std::span<const double> g, double scale = 1.0) {
    if (!target.requires_grad()) return;
    auto& dst = target.node()->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += scale * g[i];
}

template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
    std::vector<double> out(x.size());
    const auto& in = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
    return make_result(x.shape(), std::move(out), {x}, [x, df](Node& self) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        const auto& in = x.values();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(in[i], self.value[i]);
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) {
        detail::accumulate(a, self.grad);
        detail::accumulate(b, self.grad);
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) {
        detail::accumulate(a, self.grad);
        detail::accumulate(b, self.grad, -1.0);
    });
}

inline Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "elementwise_mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) {
        if (a.requires_grad()) {
            auto& g = a.node()->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b[i];
        }
        if (b.requires_grad()) {
            auto& g = b.node()->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a[i];
        }
    });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return elementwise_mul(a, b); }

inline Tensor scale(const Tensor& x, double c) {
    return detail::unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
    return detail::unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Tensor relu(const Tensor& x) {
    return detail::unary(x, [](double v) { return v > 0 ? v : 0.0; },
                         [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

inline Tensor leaky_relu(const Tensor& x, double slope = 0.2) {
    return detail::unary(x, [slope](double v) { return v > 0 ? v : slope * v; },
                         [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

inline Tensor sigmoid(const Tensor& x) {
    return detail::unary(
        x,
        [](double v) {
            if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
            double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& x) {
    return detail::unary(x, [](double v) { return std::tanh(v); },
                         [](double, double y) { return 1.0 - y * y; });
}

inline Tensor exp(const Tensor& x) {
    return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
    for (double v : x.values())
        if (!(v > 0)) throw std::domain_error("log: non-positive input");
    return detail::unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor square(const Tensor& x) {
    return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

/// 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
inline Tensor smooth_l1(const Tensor& x) {
    return detail::unary(
        x, [](double v) { return std::abs(v) < 1.0 ? 0.5 * v * v : std::abs(v) - 0.5; },
        [](double v, double) { return std::abs(v) < 1.0 ? v : (v > 0 ? 1.0 : -1.0); });
}

// ---------------------------------------------------------------------------
// Reductions and layout

inline Tensor sum(const Tensor& x) {
    double s = 0;
    for (double v : x.values()) s += v;
    return detail::make_result({1}, {s}, {x}, [x](detail::Node& self) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    return detail::make_result(std::move(shape), x.values(), {x},
                               [x](detail::Node& self) { detail::accumulate(x, self.grad); });
}

inline Tensor flatten(const Tensor& x) { return reshape(x, {x.size()}); }

/// Concatenates along the leading axis; trailing dims must agree.
inline Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    std::size_t lead = 0;
    std::vector<double> out;
    for (const auto& p : parts) {
        Shape t(p.shape().begin() + 1, p.shape().end());
        if (t != tail)
            throw ShapeError("concat: trailing shape mismatch " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
        lead += p.dim(0);
        out.insert(out.end(), p.values().begin(), p.values().end());
    }
    Shape shape{lead};
    shape.insert(shape.end(), tail.begin(), tail.end());
    return detail::make_result(std::move(shape), std::move(out), parts, [parts](detail::Node& self) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            detail::accumulate(p, std::span<const double>(self.grad).subspan(off, p.size()));
            off += p.size();
        }
    });
}

/// Rows [begin, end) along the leading axis.
inline Tensor slice(const Tensor& x, std::size_t begin, std::size_t end) {
    if (begin >= end || end > x.dim(0))
        throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of bounds for " + shape_str(x.shape()));
    std::size_t inner = x.size() / x.dim(0);
    Shape shape = x.shape();
    shape[0] = end - begin;
    std::vector<double> out(x.values().begin() + begin * inner, x.values().begin() + end * inner);
    return detail::make_result(std::move(shape), std::move(out), {x}, [x, begin, inner](detail::Node& self) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * inner + i] += self.grad[i];
    });
}

/// Concatenates 2-D tensors along columns; row counts must agree.
inline Tensor concat_columns(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_columns: no inputs");
    const std::size_t rows = parts[0].dim(0);
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != rows)
            throw ShapeError("concat_columns: incompatible " + shape_str(parts[0].shape()) + " and " +
                             shape_str(p.shape()));
        total += p.dim(1);
    }
    std::vector<double> out(rows * total);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t d = p.dim(1);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) out[r * total + off + c] = p[r * d + c];
        off += d;
    }
    return detail::make_result({rows, total}, std::move(out), parts, [parts, rows, total](detail::Node& self) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t d = p.dim(1);
            if (p.requires_grad()) {
                auto& g = p.node()->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < d; ++c) g[r * d + c] += self.grad[r * total + off + c];
            }
            off += d;
        }
    });
}

/// Picks elements by flat index into a 1-D result.
inline Tensor pick(const Tensor& x, std::vector<std::size_t> idx) {
    if (idx.empty()) throw ShapeError("pick: empty index list");
    std::vector<double> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= x.size()) throw ShapeError("pick: index out of range");
        out[i] = x[idx[i]];
    }
    Shape shape{idx.size()};
    return detail::make_result(std::move(shape), std::move(out), {x}, [x, idx](detail::Node& self) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Dense algebra

inline void require_rank(const Tensor& t, std::size_t r, const char* op) {
    if (t.rank() != r)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                         shape_str(t.shape()));
}

/// A[m x k] . B[k x n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul: inner dims differ " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
    std::vector<double> out(m * n, 0.0);
    const auto& A = a.values();
    const auto& B = b.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            if (av == 0.0) continue;
            const double* brow = &B[p * n];
            double* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    return detail::make_result({m, n}, std::move(out), {a, b}, [a, b, m, k, n](detail::Node& self) {
        const auto& G = self.grad;
        if (a.requires_grad()) {
            auto& ga = a.node()->ensure_grad();
            const auto& B = b.values();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0;
                    for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
                    ga[i * k + p] += s;
                }
        }
        if (b.requires_grad()) {
            auto& gb = b.node()->ensure_grad();
            const auto& A = a.values();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = A[i * k + p];
                    if (av == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * G[i * n + j];
                }
        }
    });
}

/// Adds b[d] to every row of x[n x d] (or to x[d]).
inline Tensor add_row(const Tensor& x, const Tensor& b) {
    const std::size_t d = b.size();
    if (x.size() % d != 0 || x.shape().back() != d)
        throw ShapeError("add_row: bias " + shape_str(b.shape()) + " does not match " + shape_str(x.shape()));
    std::vector<double> out = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % d];
    return detail::make_result(x.shape(), std::move(out), {x, b}, [x, b, d](detail::Node& self) {
        detail::accumulate(x, self.grad);
        if (b.requires_grad()) {
            auto& g = b.node()->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
        }
    });
}

/// y = x W + b for x[in] or x[n x in], W[in x out], b[out] (b may be undefined).
inline Tensor fully_connected(const Tensor& x, const Tensor& w, const Tensor& b = {}) {
    require_rank(w, 2, "fully_connected");
    const bool vec = x.rank() == 1;
    if (!vec) require_rank(x, 2, "fully_connected");
    const std::size_t in = vec ? x.dim(0) : x.dim(1);
    if (in != w.dim(0))
        throw ShapeError("fully_connected: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
    Tensor x2 = vec ? reshape(x, {1, in}) : x;
    Tensor y = matmul(x2, w);
    if (b.defined()) {
        if (b.size() != w.dim(1))
            throw ShapeError("fully_connected: bias " + shape_str(b.shape()) + " vs weight " + shape_str(w.shape()));
        y = add_row(y, b);
    }
    return vec ? reshape(y, {w.dim(1)}) : y;
}

/// Multiplies row i of x[n x d] by s[i].
inline Tensor row_scale(const Tensor& x, const Tensor& s) {
    require_rank(x, 2, "row_scale");
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (s.size() != n) throw ShapeError("row_scale: " + shape_str(s.shape()) + " vs " + shape_str(x.shape()));
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] * s[i];
    return detail::make_result(x.shape(), std::move(out), {x, s}, [x, s, n, d](detail::Node& self) {
        if (x.requires_grad()) {
            auto& g = x.node()->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.grad[i * d + j] * s[i];
        }
        if (s.requires_grad()) {
            auto& g = s.node()->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0;
                for (std::size_t j = 0; j < d; ++j) acc += self.grad[i * d + j] * x[i * d + j];
                g[i] += acc;
            }
        }
    });
}

/// Row-wise softmax over the last axis.
inline Tensor softmax(const Tensor& x) {
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.size() / d;
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = &x.values()[r * d];
        double mx = *std::max_element(in, in + d);
        double z = 0;
        for (std::size_t j = 0; j < d; ++j) z += (out[r * d + j] = std::exp(in[j] - mx));
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] /= z;
    }
    return detail::make_result(x.shape(), std::move(out), {x}, [x, rows, d](detail::Node& self) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0;
            for (std::size_t j = 0; j < d; ++j) dot += self.grad[r * d + j] * self.value[r * d + j];
            for (std::size_t j = 0; j < d; ++j)
                g[r * d + j] += self.value[r * d + j] * (self.grad[r * d + j] - dot);
        }
    });
}

inline Tensor log_softmax(const Tensor& x) {
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.size() / d;
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = &x.values()[r * d];
        double mx = *std::max_element(in, in + d);
        double z = 0;
        for (std::size_t j = 0; j < d; ++j) z += std::exp(in[j] - mx);
        double lz = mx + std::log(z);
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = in[j] - lz;
    }
    return detail::make_result(x.shape(), std::move(out), {x}, [x, rows, d](detail::Node& self) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            double gs = 0;
            for (std::size_t j = 0; j < d; ++j) gs += self.grad[r * d + j];
            for (std::size_t j = 0; j < d; ++j)
                g[r * d + j] += self.grad[r * d + j] - std::exp(self.value[r * d + j]) * gs;
        }
    });
}

/// Scales each row of x[n x d] to unit L2 norm. Zero rows are rejected.
inline Tensor l2_normalize_rows(const Tensor& x) {
    require_rank(x, 2, "l2_normalize_rows");
    const std::size_t n = x.dim(0), d = x.dim(1);
    std::vector<double> norms(n), out(x.size());
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * x[i * d + j];
        if (!(s > 0)) throw std::domain_error("l2_normalize_rows: zero row " + std::to_string(i));
        norms[i] = std::sqrt(s);
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] / norms[i];
    }
    return detail::make_result(x.shape(), std::move(out), {x}, [x, n, d, norms](detail::Node& self) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0;
            for (std::size_t j = 0; j < d; ++j) dot += self.grad[i * d + j] * self.value[i * d + j];
            for (std::size_t j = 0; j < d; ++j)
                g[i * d + j] += (self.grad[i * d + j] - self.value[i * d + j] * dot) / norms[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Index-driven graph ops (edge lists over node rows)

/// out[e] = x[idx[e]] for x[n x d].
inline Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
    require_rank(x, 2, "gather_rows");
    if (idx.empty()) throw ShapeError("gather_rows: empty index list");
    const std::size_t n = x.dim(0), d = x.dim(1);
    std::vector<double> out(idx.size() * d);
    for (std::size_t e = 0; e < idx.size(); ++e) {
        if (idx[e] >= n) throw ShapeError("gather_rows: row index out of range");
        std::copy_n(&x.values()[idx[e] * d], d, &out[e * d]);
    }
    return detail::make_result({idx.size(), d}, std::move(out), {x}, [x, idx, d](detail::Node& self) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        for (std::size_t e = 0; e < idx.size(); ++e)
            for (std::size_t j = 0; j < d; ++j) g[idx[e] * d + j] += self.grad[e * d + j];
    });
}

/// out[idx[e]] += x[e] into an [n x d] result of zeros.
inline Tensor scatter_add_rows(const Tensor& x, const std::vector<std::size_t>& idx, std::size_t n) {
    require_rank(x, 2, "scatter_add_rows");
    const std::size_t e_count = x.dim(0), d = x.dim(1);
    if (idx.size() != e_count) throw ShapeError("scatter_add_rows: index count mismatch");
    std::vector<double> out(n * d, 0.0);
    for (std::size_t e = 0; e < e_count; ++e) {
        if (idx[e] >= n) throw ShapeError("scatter_add_rows: row index out of range");
        for (std::size_t j = 0; j < d; ++j) out[idx[e] * d + j] += x[e * d + j];
    }
    return detail::make_result({n, d}, std::move(out), {x}, [x, idx, d](detail::Node& self) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        for (std::size_t e = 0; e < idx.size(); ++e)
            for (std::size_t j = 0; j < d; ++j) g[e * d + j] += self.grad[idx[e] * d + j];
    });
}

/// Softmax of scores[e] within groups sharing segment[e].
inline Tensor segment_softmax(const Tensor& scores, const std::vector<std::size_t>& segment, std::size_t n) {
    if (scores.size() != segment.size()) throw ShapeError("segment_softmax: segment count mismatch");
    std::vector<double> mx(n, -std::numeric_limits<double>::infinity()), z(n, 0.0);
    for (std::size_t e = 0; e < segment.size(); ++e) mx.at(segment[e]) = std::max(mx[segment[e]], scores[e]);
    std::vector<double> out(scores.size());
    for (std::size_t e = 0; e < segment.size(); ++e) z[segment[e]] += (out[e] = std::exp(scores[e] - mx[segment[e]]));
    for (std::size_t e = 0; e < segment.size(); ++e) out[e] /= z[segment[e]];
    return detail::make_result(scores.shape(), std::move(out), {scores}, [scores, segment, n](detail::Node& self) {
        if (!scores.requires_grad()) return;
        std::vector<double> dot(n, 0.0);
        for (std::size_t e = 0; e < segment.size(); ++e) dot[segment[e]] += self.grad[e] * self.value[e];
        auto& g = scores.node()->ensure_grad();
        for (std::size_t e = 0; e < segment.size(); ++e)
            g[e] += self.value[e] * (self.grad[e] - dot[segment[e]]);
    });
}

// ---------------------------------------------------------------------------
// Initialization

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-a, a);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = u(rng);
    return Tensor(std::move(shape), std::move(v), true);
}

inline Tensor zeros_param(Shape shape) { return Tensor(std::move(shape), 0.0, true); }

inline bool all_finite(const Tensor& t) {
    return std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace cogsc
