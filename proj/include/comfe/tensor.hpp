#pragma once

// Dense row-major tensors and a define-by-run reverse-mode tape.
//
// Everything is templated on the scalar type so that the float training path
// and the double-precision shadow path used by gradient checks share one
// implementation. Ops are free functions over `Var<T>` handles; each op
// appends one node to the tape, so node order is already a topological order
// and `Tape::backward` is a single reverse sweep.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "comfe/errors.hpp"

namespace comfe {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape &shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

inline std::size_t shape_numel(const Shape &shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

template <typename T>
class Tensor {
   public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        check_shape();
        data_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape();
        if (data_.size() != shape_numel(shape_)) {
            throw DimensionError("data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<T> values) {
        return Tensor({rows, cols}, std::vector<T>(values));
    }

    static Tensor vector(std::initializer_list<T> values) {
        return Tensor({values.size()}, std::vector<T>(values));
    }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t(i, i) = T(1);
        return t;
    }

    const Shape &shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // Rank-1 tensors behave as a single row.
    std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
    std::size_t cols() const noexcept {
        return shape_.size() == 2 ? shape_[1] : (shape_.empty() ? 0 : shape_[0]);
    }

    T &operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const T &operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    T &operator[](std::size_t i) { return data_[i]; }
    const T &operator[](std::size_t i) const { return data_[i]; }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T> &storage() noexcept { return data_; }
    const std::vector<T> &storage() const noexcept { return data_; }

    std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols(), cols()); }
    std::span<const T> row(std::size_t r) const {
        return std::span<const T>(data_).subspan(r * cols(), cols());
    }

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

    const std::optional<std::vector<T>> &grad() const noexcept { return grad_; }
    std::vector<T> &ensure_grad() {
        if (!grad_) grad_.emplace(data_.size(), T(0));
        return *grad_;
    }
    void clear_grad() noexcept { grad_.reset(); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    // Value equality (shape and payload); gradient state is ignored.
    friend bool operator==(const Tensor &a, const Tensor &b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

   private:
    void check_shape() const {
        if (shape_.empty()) throw DimensionError("tensor shape must have at least one axis");
        for (auto d : shape_) {
            if (d == 0) throw DimensionError("tensor shape " + shape_str(shape_) + " has a zero axis");
        }
    }

    Shape shape_;
    std::vector<T> data_;
    bool requires_grad_ = false;
    std::optional<std::vector<T>> grad_;
};

template <typename T>
class Tape;

// Lightweight handle to a tape node.
template <typename T>
class Var {
   public:
    Var() = default;
    Var(Tape<T> *tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor<T> &value() const { return tape_->value(id_); }
    const Shape &shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    std::size_t size() const { return value().size(); }
    T item() const { return value()[0]; }

    Tape<T> &tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

   private:
    Tape<T> *tape_ = nullptr;
    std::size_t id_ = 0;
};

template <typename T>
class Tape {
   public:
    using BackwardFn = std::function<void(Tape &, std::size_t)>;

    Tape() = default;
    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;

    Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
        value.set_requires_grad(requires_grad);
        value.clear_grad();
        nodes_.push_back(Node{std::move(value), {}, {}});
        return Var<T>(this, nodes_.size() - 1);
    }

    Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

    // Appends an op result. The node needs a gradient iff any input does.
    Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward) {
        bool needs = false;
        for (auto id : inputs) needs = needs || nodes_.at(id).value.requires_grad();
        value.set_requires_grad(needs);
        value.clear_grad();
        nodes_.push_back(Node{std::move(value), std::move(inputs),
                              needs ? std::move(backward) : BackwardFn{}});
        return Var<T>(this, nodes_.size() - 1);
    }

    // Seeds d(root)/d(root) = 1 and sweeps nodes in reverse creation order.
    void backward(Var<T> root) {
        if (root.size() != 1) {
            throw DimensionError("backward needs a scalar root, got " + shape_str(root.shape()));
        }
        if (!requires_grad(root.id())) return;
        grad(root.id())[0] += T(1);
        for (std::size_t id = root.id() + 1; id-- > 0;) {
            Node &n = nodes_[id];
            if (!n.backward || !n.value.grad()) continue;
            n.backward(*this, id);
        }
    }

    const Tensor<T> &value(std::size_t id) const { return nodes_[id].value; }
    Tensor<T> &mutable_value(std::size_t id) { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].value.requires_grad(); }
    const std::vector<std::size_t> &inputs(std::size_t id) const { return nodes_[id].inputs; }

    // Gradient buffer of a node, zero-initialized on first access.
    std::vector<T> &grad(std::size_t id) { return nodes_[id].value.ensure_grad(); }

    // Gradient of a node, or zeros if nothing reached it.
    Tensor<T> grad_of(Var<T> v) const {
        const auto &t = nodes_[v.id()].value;
        if (t.grad()) return Tensor<T>(t.shape(), *t.grad());
        return Tensor<T>(t.shape());
    }

    std::size_t size() const noexcept { return nodes_.size(); }

   private:
    struct Node {
        Tensor<T> value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
};

namespace detail {

template <typename T>
void require_same_tape(const Var<T> &a, const Var<T> &b, const char *op) {
    if (&a.tape() != &b.tape()) throw DimensionError(std::string(op) + ": operands live on different tapes");
}

template <typename T>
void require_matrix(const Var<T> &a, const char *op) {
    if (a.value().rank() != 2) {
        throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(a.shape()));
    }
}

template <typename T>
void require_finite(std::span<const T> xs, const char *op) {
    for (auto x : xs) {
        if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
    }
}

// Iteration plan for a reduction along one axis.
struct Lanes {
    std::size_t count = 0;   // number of independent lanes
    std::size_t length = 0;  // elements per lane
    std::size_t stride = 0;  // distance between consecutive lane elements
    std::size_t lane_step = 0;
    Shape reduced;

    std::size_t base(std::size_t lane) const { return lane * lane_step; }
};

inline Lanes lanes_of(const Shape &shape, int axis, const char *op) {
    Lanes l;
    if (shape.size() == 1 && axis == 0) {
        l = {1, shape[0], 1, 0, {1}};
    } else if (shape.size() == 2 && axis == 1) {
        l = {shape[0], shape[1], 1, shape[1], {shape[0], 1}};
    } else if (shape.size() == 2 && axis == 0) {
        l = {shape[1], shape[0], shape[1], 1, {1, shape[1]}};
    } else {
        throw DimensionError(std::string(op) + ": no axis " + std::to_string(axis) + " in " +
                             shape_str(shape));
    }
    if (l.length == 0) throw DimensionError(std::string(op) + ": empty reduction axis");
    return l;
}

enum class Broadcast { none, row };

template <typename T>
Broadcast broadcast_kind(const Var<T> &a, const Var<T> &b, const char *op) {
    if (a.shape() == b.shape()) return Broadcast::none;
    const bool b_is_row = b.rows() == 1 && b.cols() == a.cols() && a.value().rank() == 2;
    if (b_is_row) return Broadcast::row;
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
}

template <typename T>
void add_into(std::vector<T> &dst, std::span<const T> src, T scale = T(1)) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

}  // namespace detail

// ---------------------------------------------------------------- linear algebra

namespace detail {

// Row-major rows×cols block copied into its cols×rows transpose.
template <typename T>
std::vector<T> transposed(const T *src, std::size_t rows, std::size_t cols) {
    std::vector<T> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = src[i * cols + j];
    return out;
}

}  // namespace detail

template <typename T>
Var<T> matmul(const Var<T> &a, const Var<T> &b) {
    detail::require_same_tape(a, b, "matmul");
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    Tensor<T> out({m, n});
    {
        const T *pa = a.value().data().data();
        const T *pb = b.value().data().data();
        T *po = out.data().data();
        for (std::size_t i = 0; i < m; ++i) {
            T *orow = po + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const T av = pa[i * k + p];
                const T *brow = pb + p * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    }
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape<T> &t, std::size_t self) {
        const T *g = t.grad(self).data();
        if (t.requires_grad(ia)) {
            // ga += g · bᵀ, accumulated row-wise against a transposed copy of b.
            const auto bt = detail::transposed(t.value(ib).data().data(), k, n);
            T *ga = t.grad(ia).data();
            for (std::size_t i = 0; i < m; ++i) {
                T *garow = ga + i * k;
                for (std::size_t j = 0; j < n; ++j) {
                    const T gv = g[i * n + j];
                    const T *btrow = bt.data() + j * k;
                    for (std::size_t p = 0; p < k; ++p) garow[p] += gv * btrow[p];
                }
            }
        }
        if (t.requires_grad(ib)) {
            const T *pa = t.value(ia).data().data();
            T *gb = t.grad(ib).data();
            for (std::size_t i = 0; i < m; ++i) {
                const T *grow = g + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const T av = pa[i * k + p];
                    T *gbrow = gb + p * n;
                    for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                }
            }
        }
    });
}

// a · bᵀ without materializing the transpose.
template <typename T>
Var<T> matmul_nt(const Var<T> &a, const Var<T> &b) {
    detail::require_same_tape(a, b, "matmul_nt");
    detail::require_matrix(a, "matmul_nt");
    detail::require_matrix(b, "matmul_nt");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        throw DimensionError("matmul_nt: inner dimensions disagree for " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()) + "^T");
    }
    Tensor<T> out({m, n});
    {
        const T *pa = a.value().data().data();
        const auto bt = detail::transposed(b.value().data().data(), n, k);
        T *po = out.data().data();
        for (std::size_t i = 0; i < m; ++i) {
            T *orow = po + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const T av = pa[i * k + p];
                const T *btrow = bt.data() + p * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * btrow[j];
            }
        }
    }
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape<T> &t, std::size_t self) {
        const T *g = t.grad(self).data();
        if (t.requires_grad(ia)) {
            const T *pb = t.value(ib).data().data();
            T *ga = t.grad(ia).data();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    const T gv = g[i * n + j];
                    for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gv * pb[j * k + p];
                }
            }
        }
        if (t.requires_grad(ib)) {
            const T *pa = t.value(ia).data().data();
            T *gb = t.grad(ib).data();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    const T gv = g[i * n + j];
                    for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gv * pa[i * k + p];
                }
            }
        }
    });
}

template <typename T>
Var<T> transpose(const Var<T> &a) {
    detail::require_matrix(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    Tensor<T> out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out(j, i) = a.value()(i, j);
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {ia}, [ia, m, n](Tape<T> &t, std::size_t self) {
        const auto &g = t.grad(self);
        auto &ga = t.grad(ia);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
}

// ---------------------------------------------------------------- elementwise

namespace detail {

// Shared forward/backward for add, sub and mul with optional row broadcast.
template <typename T, typename Fwd, typename DA, typename DB>
Var<T> binary(const Var<T> &a, const Var<T> &b, const char *op, Fwd fwd, DA da, DB db) {
    require_same_tape(a, b, op);
    const Broadcast bc = broadcast_kind(a, b, op);
    const std::size_t cols = a.cols();
    Tensor<T> out(a.shape());
    {
        const auto &av = a.value();
        const auto &bv = b.value();
        for (std::size_t i = 0; i < out.size(); ++i) {
            const std::size_t jb = bc == Broadcast::row ? i % cols : i;
            out[i] = fwd(av[i], bv[jb]);
        }
    }
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {ia, ib}, [=](Tape<T> &t, std::size_t self) {
        const auto &g = t.grad(self);
        const auto &av = t.value(ia);
        const auto &bv = t.value(ib);
        if (t.requires_grad(ia)) {
            auto &ga = t.grad(ia);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const std::size_t jb = bc == Broadcast::row ? i % cols : i;
                ga[i] += da(g[i], av[i], bv[jb]);
            }
        }
        if (t.requires_grad(ib)) {
            auto &gb = t.grad(ib);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const std::size_t jb = bc == Broadcast::row ? i % cols : i;
                gb[jb] += db(g[i], av[i], bv[jb]);
            }
        }
    });
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const Var<T> &a, Fwd fwd, Deriv deriv) {
    Tensor<T> out(a.shape());
    {
        const auto &av = a.value();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {ia}, [=](Tape<T> &t, std::size_t self) {
        const auto &g = t.grad(self);
        const auto &x = t.value(ia);
        const auto &y = t.value(self);
        auto &ga = t.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
    });
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T> &a, const Var<T> &b) {
    return detail::binary(
        a, b, "add", [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return g; });
}

template <typename T>
Var<T> sub(const Var<T> &a, const Var<T> &b) {
    return detail::binary(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return -g; });
}

template <typename T>
Var<T> mul(const Var<T> &a, const Var<T> &b) {
    return detail::binary(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
        [](T g, T x, T) { return g * x; });
}

template <typename T>
Var<T> operator+(const Var<T> &a, const Var<T> &b) { return add(a, b); }
template <typename T>
Var<T> operator-(const Var<T> &a, const Var<T> &b) { return sub(a, b); }
template <typename T>
Var<T> operator*(const Var<T> &a, const Var<T> &b) { return mul(a, b); }

// scale * a + shift
template <typename T>
Var<T> affine(const Var<T> &a, T scale, T shift = T(0)) {
    return detail::unary(
        a, [=](T x) { return scale * x + shift; }, [=](T, T) { return scale; });
}

template <typename T>
Var<T> operator*(const Var<T> &a, T s) { return affine(a, s); }
template <typename T>
Var<T> operator-(const Var<T> &a) { return affine(a, T(-1)); }

template <typename T>
Var<T> exp(const Var<T> &a) {
    return detail::unary(
        a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T> &a) {
    for (auto x : a.value().data()) {
        if (!(x > T(0))) throw NumericError("log of non-positive value");
    }
    return detail::unary(
        a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

// Exact (erf) GELU.
template <typename T>
Var<T> gelu(const Var<T> &a) {
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    constexpr T inv_sqrt2pi = T(0.39894228040143267794);
    return detail::unary(
        a, [=](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
        [=](T x, T) {
            return T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
        });
}

// Gradient passes only where the input lies strictly inside [lo, hi].
template <typename T>
Var<T> clamp(const Var<T> &a, T lo, T hi) {
    return detail::unary(
        a, [=](T x) { return std::clamp(x, lo, hi); },
        [=](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

// Inverted dropout; identity when rate == 0.
template <typename T, typename Rng>
Var<T> dropout(const Var<T> &a, double rate, Rng &rng) {
    if (rate <= 0.0) return a;
    if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
    Tensor<T> mask(a.shape());
    std::bernoulli_distribution keep(1.0 - rate);
    const T scale = T(1.0 / (1.0 - rate));
    for (auto &m : mask.data()) m = keep(rng) ? scale : T(0);
    return mul(a, a.tape().constant(std::move(mask)));
}

// ---------------------------------------------------------------- reductions

template <typename T>
Var<T> sum(const Var<T> &a) {
    T s = 0;
    for (auto x : a.value().data()) s += x;
    const std::size_t ia = a.id();
    return a.tape().record(Tensor<T>({1}, std::vector<T>{s}), {ia}, [ia](Tape<T> &t, std::size_t self) {
        const T g = t.grad(self)[0];
        for (auto &x : t.grad(ia)) x += g;
    });
}

template <typename T>
Var<T> mean(const Var<T> &a) {
    return affine(sum(a), T(1) / T(a.size()));
}

template <typename T>
Var<T> sum_along(const Var<T> &a, int axis) {
    const auto lanes = detail::lanes_of(a.shape(), axis, "sum_along");
    Tensor<T> out(lanes.reduced);
    const auto &av = a.value();
    for (std::size_t l = 0; l < lanes.count; ++l) {
        T s = 0;
        for (std::size_t e = 0; e < lanes.length; ++e) s += av[lanes.base(l) + e * lanes.stride];
        out[l] = s;
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {ia}, [ia, lanes](Tape<T> &t, std::size_t self) {
        const auto &g = t.grad(self);
        auto &ga = t.grad(ia);
        for (std::size_t l = 0; l < lanes.count; ++l)
            for (std::size_t e = 0; e < lanes.length; ++e) ga[lanes.base(l) + e * lanes.stride] += g[l];
    });
}

template <typename T>
struct MaxAlong {
    Var<T> values;
    std::vector<std::size_t> indices;  // position along the reduced axis
};

// Ties resolve to the lowest index.
template <typename T>
MaxAlong<T> max_along(const Var<T> &a, int axis) {
    const auto lanes = detail::lanes_of(a.shape(), axis, "max_along");
    Tensor<T> out(lanes.reduced);
    std::vector<std::size_t> idx(lanes.count, 0);
    const auto &av = a.value();
    for (std::size_t l = 0; l < lanes.count; ++l) {
        T best = av[lanes.base(l)];
        for (std::size_t e = 1; e < lanes.length; ++e) {
            const T x = av[lanes.base(l) + e * lanes.stride];
            if (x > best) {
                best = x;
                idx[l] = e;
            }
        }
        out[l] = best;
    }
    const std::size_t ia = a.id();
    auto v = a.tape().record(std::move(out), {ia}, [ia, lanes, idx](Tape<T> &t, std::size_t self) {
        const auto &g = t.grad(self);
        auto &ga = t.grad(ia);
        for (std::size_t l = 0; l < lanes.count; ++l) ga[lanes.base(l) + idx[l] * lanes.stride] += g[l];
    });
    return {v, std::move(idx)};
}

// log Σ exp(x / temperature) along an axis, max-shifted.
template <typename T>
Var<T> log_sum_exp(const Var<T> &a, int axis, T temperature = T(1)) {
    if (!(temperature > T(0))) throw ConfigError("log_sum_exp temperature must be positive");
    detail::require_finite<T>(a.value().data(), "log_sum_exp");
    const auto lanes = detail::lanes_of(a.shape(), axis, "log_sum_exp");
    Tensor<T> out(lanes.reduced);
    const auto &av = a.value();
    for (std::size_t l = 0; l < lanes.count; ++l) {
        T mx = av[lanes.base(l)];
        for (std::size_t e = 1; e < lanes.length; ++e) mx = std::max(mx, av[lanes.base(l) + e * lanes.stride]);
        T s = 0;
        for (std::size_t e = 0; e < lanes.length; ++e)
            s += std::exp((av[lanes.base(l) + e * lanes.stride] - mx) / temperature);
        out[l] = mx / temperature + std::log(s);
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {ia}, [ia, lanes, temperature](Tape<T> &t, std::size_t self) {
        const auto &g = t.grad(self);
        const auto &x = t.value(ia);
        const auto &y = t.value(self);
        auto &ga = t.grad(ia);
        for (std::size_t l = 0; l < lanes.count; ++l) {
            for (std::size_t e = 0; e < lanes.length; ++e) {
                const std::size_t k = lanes.base(l) + e * lanes.stride;
                ga[k] += g[l] * std::exp(x[k] / temperature - y[l]) / temperature;
            }
        }
    });
}

// ---------------------------------------------------------------- softmax family

template <typename T>
Var<T> softmax(const Var<T> &a, int axis, T temperature = T(1)) {
    if (!(temperature > T(0))) throw ConfigError("softmax temperature must be positive");
    detail::require_finite<T>(a.value().data(), "softmax");
    const auto lanes = detail::lanes_of(a.shape(), axis, "softmax");
    Tensor<T> out(a.shape());
    const auto &av = a.value();
    for (std::size_t l = 0; l < lanes.count; ++l) {
        const std::size_t b = lanes.base(l);
        T mx = av[b];
        for (std::size_t e = 1; e < lanes.length; ++e) mx = std::max(mx, av[b + e * lanes.stride]);
        T s = 0;
        for (std::size_t e = 0; e < lanes.length; ++e) {
            const std::size_t k = b + e * lanes.stride;
            out[k] = std::exp((av[k] - mx) / temperature);
            s += out[k];
        }
        for (std::size_t e = 0; e < lanes.length; ++e) out[b + e * lanes.stride] /= s;
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {ia}, [ia, lanes, temperature](Tape<T> &t, std::size_t self) {
        const auto &g = t.grad(self);
        const auto &y = t.value(self);
        auto &ga = t.grad(ia);
        for (std::size_t l = 0; l < lanes.count; ++l) {
            const std::size_t b = lanes.base(l);
            T dot = 0;
            for (std::size_t e = 0; e < lanes.length; ++e) dot += g[b + e * lanes.stride] * y[b + e * lanes.stride];
            for (std::size_t e = 0; e < lanes.length; ++e) {
                const std::size_t k = b + e * lanes.stride;
                ga[k] += y[k] * (g[k] - dot) / temperature;
            }
        }
    });
}

template <typename T>
Var<T> log_softmax(const Var<T> &a, int axis, T temperature = T(1)) {
    if (!(temperature > T(0))) throw ConfigError("log_softmax temperature must be positive");
    detail::require_finite<T>(a.value().data(), "log_softmax");
    const auto lanes = detail::lanes_of(a.shape(), axis, "log_softmax");
    Tensor<T> out(a.shape());
    const auto &av = a.value();
    for (std::size_t l = 0; l < lanes.count; ++l) {
        const std::size_t b = lanes.base(l);
        T mx = av[b];
        for (std::size_t e = 1; e < lanes.length; ++e) mx = std::max(mx, av[b + e * lanes.stride]);
        T s = 0;
        for (std::size_t e = 0; e < lanes.length; ++e) s += std::exp((av[b + e * lanes.stride] - mx) / temperature);
        const T lse = std::log(s);
        for (std::size_t e = 0; e < lanes.length; ++e) {
            const std::size_t k = b + e * lanes.stride;
            out[k] = (av[k] - mx) / temperature - lse;
        }
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {ia}, [ia, lanes, temperature](Tape<T> &t, std::size_t self) {
        const auto &g = t.grad(self);
        const auto &y = t.value(self);
        auto &ga = t.grad(ia);
        for (std::size_t l = 0; l < lanes.count; ++l) {
            const std::size_t b = lanes.base(l);
            T gs = 0;
            for (std::size_t e = 0; e < lanes.length; ++e) gs += g[b + e * lanes.stride];
            for (std::size_t e = 0; e < lanes.length; ++e) {
                const std::size_t k = b + e * lanes.stride;
                ga[k] += (g[k] - std::exp(y[k]) * gs) / temperature;
            }
        }
    });
}

// ---------------------------------------------------------------- normalization

inline constexpr double kDegenerateRowNorm = 1e-12;

template <typename T>
Var<T> l2_normalize_rows(const Var<T> &a) {
    const std::size_t m = a.rows(), n = a.cols();
    Tensor<T> out(a.shape());
    std::vector<T> norms(m);
    const auto &av = a.value();
    // Rows already unit to within rounding are copied as-is, which makes the
    // operation exactly idempotent.
    const double unit_tol = 4.0 * double(std::numeric_limits<T>::epsilon());
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < n; ++j) s += double(av(i, j)) * double(av(i, j));
        const double norm = std::sqrt(s);
        if (!(norm > kDegenerateRowNorm)) {
            throw NormalizationError("degenerate row " + std::to_string(i) + " (norm " + std::to_string(norm) + ")");
        }
        norms[i] = T(norm);
        const bool unit = std::abs(norm - 1.0) <= unit_tol;
        for (std::size_t j = 0; j < n; ++j) out(i, j) = unit ? av(i, j) : T(double(av(i, j)) / norm);
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {ia}, [ia, m, n, norms](Tape<T> &t, std::size_t self) {
        const auto &g = t.grad(self);
        const auto &y = t.value(self);
        auto &ga = t.grad(ia);
        for (std::size_t i = 0; i < m; ++i) {
            T dot = 0;
            for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += (g[i * n + j] - y[i * n + j] * dot) / norms[i];
        }
    });
}

inline constexpr double kLayerNormEps = 1e-5;

// Row-wise layer normalization with affine gain/bias (row vectors).
template <typename T>
Var<T> layer_norm(const Var<T> &x, const Var<T> &gain, const Var<T> &bias, T eps = T(kLayerNormEps)) {
    detail::require_same_tape(x, gain, "layer_norm");
    detail::require_same_tape(x, bias, "layer_norm");
    const std::size_t m = x.rows(), n = x.cols();
    if (gain.size() != n || bias.size() != n) {
        throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                             " do not match width of " + shape_str(x.shape()));
    }
    Tensor<T> xhat(x.shape());
    std::vector<T> rstd(m);
    const auto &xv = x.value();
    for (std::size_t i = 0; i < m; ++i) {
        T mu = 0;
        for (std::size_t j = 0; j < n; ++j) mu += xv(i, j);
        mu /= T(n);
        T var = 0;
        for (std::size_t j = 0; j < n; ++j) var += (xv(i, j) - mu) * (xv(i, j) - mu);
        var /= T(n);
        rstd[i] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) xhat(i, j) = (xv(i, j) - mu) * rstd[i];
    }
    Tensor<T> out(x.shape());
    const auto &gv = gain.value();
    const auto &bv = bias.value();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out(i, j) = xhat(i, j) * gv[j] + bv[j];

    const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
    return x.tape().record(
        std::move(out), {ix, ig, ib},
        [ix, ig, ib, m, n, rstd, xhat = std::move(xhat)](Tape<T> &t, std::size_t self) {
            const auto &g = t.grad(self);
            if (t.requires_grad(ig)) {
                auto &gg = t.grad(ig);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat(i, j);
            }
            if (t.requires_grad(ib)) {
                auto &gb = t.grad(ib);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
            if (t.requires_grad(ix)) {
                const auto &gv = t.value(ig);
                auto &gx = t.grad(ix);
                for (std::size_t i = 0; i < m; ++i) {
                    T mean_d = 0, mean_dx = 0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const T d = g[i * n + j] * gv[j];
                        mean_d += d;
                        mean_dx += d * xhat(i, j);
                    }
                    mean_d /= T(n);
                    mean_dx /= T(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        const T d = g[i * n + j] * gv[j];
                        gx[i * n + j] += rstd[i] * (d - mean_d - xhat(i, j) * mean_dx);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------- slicing

template <typename T>
Var<T> slice_cols(const Var<T> &a, std::size_t begin, std::size_t count) {
    detail::require_matrix(a, "slice_cols");
    const std::size_t m = a.rows(), n = a.cols();
    if (count == 0 || begin + count > n) {
        throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                             ") outside " + shape_str(a.shape()));
    }
    Tensor<T> out({m, count});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) out(i, j) = a.value()(i, begin + j);
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {ia}, [ia, m, n, begin, count](Tape<T> &t, std::size_t self) {
        const auto &g = t.grad(self);
        auto &ga = t.grad(ia);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < count; ++j) ga[i * n + begin + j] += g[i * count + j];
    });
}

template <typename T>
Var<T> slice_rows(const Var<T> &a, std::size_t begin, std::size_t count) {
    detail::require_matrix(a, "slice_rows");
    const std::size_t m = a.rows(), n = a.cols();
    if (count == 0 || begin + count > m) {
        throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                             ") outside " + shape_str(a.shape()));
    }
    const auto src = a.value().data().subspan(begin * n, count * n);
    Tensor<T> out({count, n}, std::vector<T>(src.begin(), src.end()));
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {ia}, [ia, n, begin, count](Tape<T> &t, std::size_t self) {
        const auto &g = t.grad(self);
        auto &ga = t.grad(ia);
        for (std::size_t k = 0; k < count * n; ++k) ga[begin * n + k] += g[k];
    });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>> &parts) {
    if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
    const std::size_t m = parts.front().rows();
    std::size_t n = 0;
    std::vector<std::size_t> ids, widths;
    for (const auto &p : parts) {
        detail::require_matrix(p, "concat_cols");
        detail::require_same_tape(parts.front(), p, "concat_cols");
        if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
        ids.push_back(p.id());
        widths.push_back(p.cols());
        n += p.cols();
    }
    Tensor<T> out({m, n});
    std::size_t off = 0;
    for (const auto &p : parts) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j) out(i, off + j) = p.value()(i, j);
        off += p.cols();
    }
    return parts.front().tape().record(std::move(out), ids, [ids, widths, m, n](Tape<T> &t, std::size_t self) {
        const auto &g = t.grad(self);
        std::size_t off = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
            if (t.requires_grad(ids[p])) {
                auto &gp = t.grad(ids[p]);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < widths[p]; ++j) gp[i * widths[p] + j] += g[i * n + off + j];
            }
            off += widths[p];
        }
    });
}

}  // namespace comfe
