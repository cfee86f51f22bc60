#pragma once

// Dense tensor with reverse-mode automatic differentiation.
//
// A Tensor<T> is a handle to a graph node holding a contiguous value
// buffer, an optional gradient buffer, and (when grad is required) the
// backward rule that scatters the node's gradient into its parents.
// backward() walks the graph in reverse topological order exactly once.
// Everything is single-threaded and deterministic.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <memory>
#include <numeric>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace stenoseg {

using Shape = std::vector<std::size_t>;

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IOError : std::runtime_error {
    explicit IOError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Trailing-dimension broadcast: align shapes at the right, extents must
// match or one of them be 1. Missing leading dims behave as 1.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (ea == eb)
            out[i] = ea;
        else if (ea == 1)
            out[i] = eb;
        else if (eb == 1)
            out[i] = ea;
        else
            throw ShapeError("broadcast mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    return out;
}

inline std::vector<std::size_t> contiguous_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

// Strides for reading `s` as if broadcast to `target`: broadcast axes get
// stride 0.
inline std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& target) {
    std::vector<std::size_t> st(target.size(), 0);
    auto own = contiguous_strides(s);
    const std::size_t off = target.size() - s.size();
    for (std::size_t i = 0; i < s.size(); ++i)
        st[off + i] = (s[i] == 1 && target[off + i] != 1) ? 0 : own[i];
    return st;
}

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily, same extent as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backprop;  // scatter this->grad into parents

    std::size_t numel() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

template <class T>
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

    Tensor(const Shape& shape, bool requires_grad = false) {
        node_ = std::make_shared<Node<T>>();
        node_->shape = shape;
        node_->value.assign(shape_numel(shape), T(0));
        node_->requires_grad = requires_grad;
    }

    Tensor(const Shape& shape, std::vector<T> values, bool requires_grad = false) {
        if (values.size() != shape_numel(shape))
            throw ShapeError("element count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        node_ = std::make_shared<Node<T>>();
        node_->shape = shape;
        node_->value = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return Tensor(Shape{}, std::vector<T>{v}, requires_grad);
    }
    static Tensor zeros(const Shape& s, bool rg = false) { return Tensor(s, rg); }
    static Tensor full(const Shape& s, T v, bool rg = false) {
        return Tensor(s, std::vector<T>(shape_numel(s), v), rg);
    }
    static Tensor ones(const Shape& s, bool rg = false) { return full(s, T(1), rg); }

    template <class Rng>
    static Tensor uniform(const Shape& s, T lo, T hi, Rng& rng, bool rg = false) {
        std::uniform_real_distribution<double> d{double(lo), double(hi)};
        std::vector<T> v(shape_numel(s));
        for (auto& x : v) x = T(d(rng));
        return Tensor(s, std::move(v), rg);
    }
    template <class Rng>
    static Tensor normal(const Shape& s, T mean, T stddev, Rng& rng, bool rg = false) {
        std::normal_distribution<double> d{double(mean), double(stddev)};
        std::vector<T> v(shape_numel(s));
        for (auto& x : v) x = T(d(rng));
        return Tensor(s, std::move(v), rg);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t extent(std::size_t i) const { return node_->shape.at(i); }

    std::vector<T>& values() { return node_->value; }
    const std::vector<T>& values() const { return node_->value; }
    std::vector<T>& grad() { return node_->grad; }
    const std::vector<T>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }
    void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

    T item() const {
        if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }

    std::shared_ptr<Node<T>> node() const { return node_; }

    // Detached copy of values (no graph edge).
    Tensor detach() const { return Tensor(shape(), values(), false); }

  private:
    std::shared_ptr<Node<T>> node_;
};

template <class T>
inline void check_finite(const std::vector<T>& v, const char* what) {
    for (const T& x : v)
        if (!std::isfinite(double(x))) throw NumericError(std::string("non-finite value in ") + what);
}

// ---------------------------------------------------------------------------
// Graph construction helpers

template <class T>
inline Tensor<T> make_op(Shape shape, std::vector<T> value,
                         std::vector<Tensor<T>> inputs,
                         std::function<void(Node<T>&)> backprop,
                         const char* name) {
    check_finite(value, name);
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    for (const auto& in : inputs)
        if (in.requires_grad()) n->requires_grad = true;
    if (n->requires_grad) {
        for (const auto& in : inputs) n->parents.push_back(in.node());
        n->backprop = std::move(backprop);
    }
    return Tensor<T>(n);
}

// Reverse-topological backward pass. `loss` must be scalar.
template <class T>
inline void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) throw ShapeError("backward requires a scalar loss");
    auto root = loss.node();
    if (!root->requires_grad) return;

    // Iterative post-order DFS; recursion would overflow on long scan chains.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node<T>* n : order) n->ensure_grad();
    root->grad.assign(1, T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

// ---------------------------------------------------------------------------
// Elementwise ops

namespace detail {

// Accumulate `g` (laid out as `shape`) into `dst` whose shape is `src_shape`,
// summing over broadcast axes.
template <class T>
inline void reduce_into(const std::vector<T>& g, const Shape& shape,
                        std::vector<T>& dst, const Shape& src_shape) {
    if (shape == src_shape) {
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        return;
    }
    auto st = broadcast_strides(src_shape, shape);
    const std::size_t rank = shape.size();
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t flat = 0; flat < g.size(); ++flat) {
        std::size_t off = 0;
        for (std::size_t d = 0; d < rank; ++d) off += idx[d] * st[d];
        dst[off] += g[flat];
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < shape[d]) break;
            idx[d] = 0;
        }
    }
}

}  // namespace detail

// Generic broadcast binary op. fwd(a,b) -> out; dfa/dfb give local partials.
template <class T, class F, class Da, class Db>
inline Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, F fwd, Da dfa, Db dfb,
                           const char* name) {
    Shape out_shape = broadcast_shape(a.shape(), b.shape());
    const std::size_t n = shape_numel(out_shape);
    std::vector<T> out(n);

    if (a.shape() == b.shape()) {
        const auto& av = a.values();
        const auto& bv = b.values();
        for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
    } else {
        auto sa = broadcast_strides(a.shape(), out_shape);
        auto sb = broadcast_strides(b.shape(), out_shape);
        const std::size_t rank = out_shape.size();
        std::vector<std::size_t> idx(rank, 0);
        const auto& av = a.values();
        const auto& bv = b.values();
        for (std::size_t flat = 0; flat < n; ++flat) {
            std::size_t oa = 0, ob = 0;
            for (std::size_t d = 0; d < rank; ++d) {
                oa += idx[d] * sa[d];
                ob += idx[d] * sb[d];
            }
            out[flat] = fwd(av[oa], bv[ob]);
            for (std::size_t d = rank; d-- > 0;) {
                if (++idx[d] < out_shape[d]) break;
                idx[d] = 0;
            }
        }
    }

    auto an = a.node();
    auto bn = b.node();
    Shape ash = a.shape(), bsh = b.shape();
    return make_op<T>(
        out_shape, std::move(out), {a, b},
        [an, bn, ash, bsh, dfa, dfb](Node<T>& self) {
            const Shape& osh = self.shape;
            const std::size_t n = self.numel();
            auto sa = broadcast_strides(ash, osh);
            auto sb = broadcast_strides(bsh, osh);
            const std::size_t rank = osh.size();
            std::vector<T> ga(an->requires_grad ? n : 0);
            std::vector<T> gb(bn->requires_grad ? n : 0);
            std::vector<std::size_t> idx(rank, 0);
            for (std::size_t flat = 0; flat < n; ++flat) {
                std::size_t oa = 0, ob = 0;
                for (std::size_t d = 0; d < rank; ++d) {
                    oa += idx[d] * sa[d];
                    ob += idx[d] * sb[d];
                }
                const T av = an->value[oa], bv = bn->value[ob], g = self.grad[flat];
                if (an->requires_grad) ga[flat] = g * dfa(av, bv);
                if (bn->requires_grad) gb[flat] = g * dfb(av, bv);
                for (std::size_t d = rank; d-- > 0;) {
                    if (++idx[d] < osh[d]) break;
                    idx[d] = 0;
                }
            }
            if (an->requires_grad) {
                an->ensure_grad();
                detail::reduce_into(ga, osh, an->grad, ash);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                detail::reduce_into(gb, osh, bn->grad, bsh);
            }
        },
        name);
}

template <class T, class F, class Df>
inline Tensor<T> unary_op(const Tensor<T>& a, F fwd, Df df, const char* name) {
    const std::size_t n = a.numel();
    std::vector<T> out(n);
    const auto& av = a.values();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
    auto an = a.node();
    return make_op<T>(
        a.shape(), std::move(out), {a},
        [an, df](Node<T>& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.numel(); ++i)
                an->grad[i] += self.grad[i] * df(an->value[i], self.value[i]);
        },
        name);
}

template <class T>
inline Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
        [](T, T) { return T(1); }, "add");
}
template <class T>
inline Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
        [](T, T) { return T(-1); }, "sub");
}
template <class T>
inline Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
        [](T x, T) { return x; }, "mul");
}
template <class T>
inline Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
        [](T x, T y) { return -x / (y * y); }, "div");
}

template <class T>
inline Tensor<T> scale(const Tensor<T>& a, T k) {
    return unary_op<T>(
        a, [k](T x) { return k * x; }, [k](T, T) { return k; }, "scale");
}
template <class T>
inline Tensor<T> add_scalar(const Tensor<T>& a, T k) {
    return unary_op<T>(
        a, [k](T x) { return x + k; }, [](T, T) { return T(1); }, "add_scalar");
}
template <class T>
inline Tensor<T> neg(const Tensor<T>& a) {
    return scale(a, T(-1));
}

// exp/softplus clamp their argument at 40 before exponentiation; exp(40)
// is ~2.4e17, far below overflow, and gradients stay finite.
inline constexpr double kExpClamp = 40.0;

template <class T>
inline Tensor<T> exp_t(const Tensor<T>& a) {
    return unary_op<T>(
        a, [](T x) { return std::exp(std::min(x, T(kExpClamp))); },
        [](T x, T y) { return x >= T(kExpClamp) ? T(0) : y; }, "exp");
}
template <class T>
inline Tensor<T> log_t(const Tensor<T>& a) {
    return unary_op<T>(
        a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; }, "log");
}
template <class T>
inline Tensor<T> softplus(const Tensor<T>& a) {
    return unary_op<T>(
        a,
        [](T x) {
            if (x > T(kExpClamp)) return x;  // softplus(x) ~ x for large x
            return T(std::log1p(std::exp(double(x))));
        },
        [](T x, T) { return x > T(kExpClamp) ? T(1) : T(1) / (T(1) + std::exp(-x)); },
        "softplus");
}
template <class T>
inline Tensor<T> sigmoid(const Tensor<T>& a) {
    return unary_op<T>(
        a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
        [](T, T y) { return y * (T(1) - y); }, "sigmoid");
}
template <class T>
inline Tensor<T> silu(const Tensor<T>& a) {
    return unary_op<T>(
        a,
        [](T x) {
            const T s = T(1) / (T(1) + std::exp(-x));
            return x * s;
        },
        [](T x, T) {
            const T s = T(1) / (T(1) + std::exp(-x));
            return s * (T(1) + x * (T(1) - s));
        },
        "silu");
}
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

template <class T>
inline Tensor<T> gelu(const Tensor<T>& a) {
    // tanh approximation
    return unary_op<T>(
        a,
        [](T x) {
            const double u = kGeluC * (double(x) + 0.044715 * double(x) * double(x) * double(x));
            return T(0.5 * double(x) * (1.0 + std::tanh(u)));
        },
        [](T x, T) {
            const double xd = double(x);
            const double u = kGeluC * (xd + 0.044715 * xd * xd * xd);
            const double t = std::tanh(u);
            const double du = kGeluC * (1.0 + 3.0 * 0.044715 * xd * xd);
            return T(0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du);
        },
        "gelu");
}
template <class T>
inline Tensor<T> square(const Tensor<T>& a) {
    return unary_op<T>(
        a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; }, "square");
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
inline Tensor<T> sum(const Tensor<T>& a) {
    T acc = 0;
    for (T v : a.values()) acc += v;
    auto an = a.node();
    return make_op<T>(
        Shape{}, {acc}, {a},
        [an](Node<T>& self) {
            an->ensure_grad();
            const T g = self.grad[0];
            for (auto& x : an->grad) x += g;
        },
        "sum");
}

template <class T>
inline Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / T(a.numel()));
}

// ---------------------------------------------------------------------------
// Layout ops

template <class T>
inline Tensor<T> reshape(const Tensor<T>& a, const Shape& s) {
    if (shape_numel(s) != a.numel())
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(s));
    auto an = a.node();
    return make_op<T>(
        s, a.values(), {a},
        [an](Node<T>& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.numel(); ++i) an->grad[i] += self.grad[i];
        },
        "reshape");
}

template <class T>
inline Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes) {
    const std::size_t rank = a.rank();
    if (axes.size() != rank) throw ShapeError("permute rank mismatch");
    Shape out_shape(rank);
    for (std::size_t i = 0; i < rank; ++i) out_shape[i] = a.extent(axes[i]);
    auto in_strides = contiguous_strides(a.shape());
    std::vector<std::size_t> perm_strides(rank);
    for (std::size_t i = 0; i < rank; ++i) perm_strides[i] = in_strides[axes[i]];

    const std::size_t n = a.numel();
    std::vector<T> out(n);
    std::vector<std::size_t> src_index(n);  // out flat -> in flat
    std::vector<std::size_t> idx(rank, 0);
    const auto& av = a.values();
    for (std::size_t flat = 0; flat < n; ++flat) {
        std::size_t off = 0;
        for (std::size_t d = 0; d < rank; ++d) off += idx[d] * perm_strides[d];
        out[flat] = av[off];
        src_index[flat] = off;
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
    auto an = a.node();
    return make_op<T>(
        out_shape, std::move(out), {a},
        [an, src_index](Node<T>& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.numel(); ++i)
                an->grad[src_index[i]] += self.grad[i];
        },
        "permute");
}

// Select along axis 1 of a rank-3 tensor [B, L, C]: out[b,i,c] = x[b,idx[i],c].
template <class T>
inline Tensor<T> index_select_l(const Tensor<T>& x, const std::vector<std::size_t>& index) {
    if (x.rank() != 3) throw ShapeError("index_select_l expects rank-3 [B,L,C]");
    const std::size_t B = x.extent(0), L = x.extent(1), C = x.extent(2);
    const std::size_t Lo = index.size();
    std::vector<T> out(B * Lo * C);
    const auto& xv = x.values();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < Lo; ++i) {
            if (index[i] >= L) throw ShapeError("index_select_l index out of range");
            std::memcpy(&out[(b * Lo + i) * C], &xv[(b * L + index[i]) * C], C * sizeof(T));
        }
    auto xn = x.node();
    return make_op<T>(
        Shape{B, Lo, C}, std::move(out), {x},
        [xn, index, B, L, C, Lo](Node<T>& self) {
            xn->ensure_grad();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < Lo; ++i)
                    for (std::size_t c = 0; c < C; ++c)
                        xn->grad[(b * L + index[i]) * C + c] += self.grad[(b * Lo + i) * C + c];
        },
        "index_select_l");
}

// Concatenate along a given axis.
template <class T>
inline Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of nothing");
    const Shape& s0 = parts[0].shape();
    Shape out_shape = s0;
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != s0.size()) throw ShapeError("concat rank mismatch");
        for (std::size_t d = 0; d < s0.size(); ++d)
            if (d != axis && p.extent(d) != s0[d]) throw ShapeError("concat extent mismatch");
        total += p.extent(axis);
    }
    out_shape[axis] = total;

    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
    for (std::size_t d = axis + 1; d < out_shape.size(); ++d) inner *= out_shape[d];

    std::vector<T> out(shape_numel(out_shape));
    std::size_t axis_off = 0;
    for (const auto& p : parts) {
        const std::size_t pa = p.extent(axis);
        const auto& pv = p.values();
        for (std::size_t o = 0; o < outer; ++o)
            std::memcpy(&out[(o * total + axis_off) * inner], &pv[o * pa * inner],
                        pa * inner * sizeof(T));
        axis_off += pa;
    }

    std::vector<std::shared_ptr<Node<T>>> nodes;
    std::vector<std::size_t> axis_extents;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        axis_extents.push_back(p.extent(axis));
    }
    return make_op<T>(
        out_shape, std::move(out), parts,
        [nodes, axis_extents, outer, inner, total](Node<T>& self) {
            std::size_t axis_off = 0;
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                const std::size_t pa = axis_extents[k];
                if (nodes[k]->requires_grad) {
                    nodes[k]->ensure_grad();
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t j = 0; j < pa * inner; ++j)
                            nodes[k]->grad[o * pa * inner + j] +=
                                self.grad[(o * total + axis_off) * inner + j];
                }
                axis_off += pa;
            }
        },
        "concat");
}

// ---------------------------------------------------------------------------
// Serialization: magic "TNSR1", u32 rank, u64 extents, u8 element width,
// raw little-endian elements.

namespace detail {
template <class V>
inline void write_raw(std::ostream& os, const V& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}
template <class V>
inline V read_raw(std::istream& is) {
    V v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!is) throw IOError("truncated tensor stream");
    return v;
}
}  // namespace detail

template <class T>
inline void save_tensor(std::ostream& os, const Tensor<T>& t) {
    os.write("TNSR1", 5);
    detail::write_raw(os, std::uint32_t(t.rank()));
    for (std::size_t e : t.shape()) detail::write_raw(os, std::uint64_t(e));
    detail::write_raw(os, std::uint8_t(sizeof(T)));
    os.write(reinterpret_cast<const char*>(t.values().data()),
             std::streamsize(t.numel() * sizeof(T)));
}

template <class T>
inline Tensor<T> load_tensor(std::istream& is) {
    char magic[5];
    is.read(magic, 5);
    if (!is || std::memcmp(magic, "TNSR1", 5) != 0) throw IOError("bad tensor magic");
    const auto rank = detail::read_raw<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& e : shape) e = std::size_t(detail::read_raw<std::uint64_t>(is));
    const auto width = detail::read_raw<std::uint8_t>(is);
    const std::size_t n = shape_numel(shape);
    std::vector<T> vals(n);
    if (width == sizeof(T)) {
        is.read(reinterpret_cast<char*>(vals.data()), std::streamsize(n * sizeof(T)));
        if (!is) throw IOError("truncated tensor payload");
    } else if (width == 4) {
        std::vector<float> tmp(n);
        is.read(reinterpret_cast<char*>(tmp.data()), std::streamsize(n * 4));
        if (!is) throw IOError("truncated tensor payload");
        for (std::size_t i = 0; i < n; ++i) vals[i] = T(tmp[i]);
    } else if (width == 8) {
        std::vector<double> tmp(n);
        is.read(reinterpret_cast<char*>(tmp.data()), std::streamsize(n * 8));
        if (!is) throw IOError("truncated tensor payload");
        for (std::size_t i = 0; i < n; ++i) vals[i] = T(tmp[i]);
    } else {
        throw IOError("unsupported element width " + std::to_string(width));
    }
    return Tensor<T>(shape, std::move(vals));
}

template <class T>
inline void save_tensor(const Tensor<T>& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IOError("cannot write tensor file: " + path);
    save_tensor(os, t);
    if (!os) throw IOError("short write: " + path);
}

template <class T>
inline Tensor<T> load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IOError("cannot open tensor file: " + path);
    return load_tensor<T>(is);
}

}  // namespace stenoseg
