#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sraa/errors.hpp"

namespace sraa {

using Shape = std::vector<std::size_t>;

namespace detail {

inline std::size_t shape_product(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a backward pass touches this node
    bool requires_grad = false;
};

using NodePtr = std::shared_ptr<TensorNode>;

inline void ensure_grad(const NodePtr& n) {
    if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
}

inline void check_finite(const TensorNode& n, const char* op) {
    for (double v : n.data) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + ": non-finite value in result");
        }
    }
}

}  // namespace detail

class Tensor;

/// Ordered record of differentiable operations. Ops executed inside a
/// GradTape::Scope append a backward closure; backward() replays the record
/// in exact reverse execution order. A tape and the tensors recorded on it
/// form a single-threaded unit.
class GradTape {
public:
    GradTape() = default;
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    class Scope {
    public:
        explicit Scope(GradTape& tape) { stack().push_back(&tape); }
        ~Scope() { stack().pop_back(); }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;
    };

    static GradTape* active() {
        auto& s = stack();
        return s.empty() ? nullptr : s.back();
    }

    void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

    std::size_t size() const { return ops_.size(); }

    void clear() { ops_.clear(); }

    void backward(const Tensor& loss);

private:
    static std::vector<GradTape*>& stack() {
        thread_local std::vector<GradTape*> s;
        return s;
    }

    std::vector<std::function<void()>> ops_;
};

/// Dense row-major tensor of 64-bit floats. Copies share the underlying
/// node; use clone() for an independent deep copy. Results of operations
/// never alias their inputs, and public operations reject non-finite
/// outputs rather than propagating them.
class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> data) {
        validate_shape(shape);
        if (detail::shape_product(shape) != data.size()) {
            throw ShapeError("Tensor: data length " + std::to_string(data.size()) +
                             " does not match shape " + detail::shape_str(shape));
        }
        auto n = std::make_shared<detail::TensorNode>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        return Tensor(std::move(n));
    }

    static Tensor full(Shape shape, double value) {
        validate_shape(shape);
        std::vector<double> d(detail::shape_product(shape), value);
        return from(std::move(shape), std::move(d));
    }

    static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
    static Tensor scalar(double v) { return from({}, {v}); }

    /// Gradient-tracked leaf (a trainable parameter).
    static Tensor param(Shape shape, std::vector<double> data) {
        Tensor t = from(std::move(shape), std::move(data));
        t.node_->requires_grad = true;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node()->shape; }
    std::size_t rank() const { return node()->shape.size(); }
    std::size_t size() const { return node()->data.size(); }
    bool requires_grad() const { return node()->requires_grad; }
    bool has_grad() const { return !node()->grad.empty(); }

    std::span<const double> data() const { return node()->data; }
    std::span<double> data_mut() { return node()->data; }
    std::span<const double> grad() const {
        if (!has_grad()) throw Error("Tensor: gradient has not been populated");
        return node()->grad;
    }

    void zero_grad() { node()->grad.clear(); }

    /// Value of a single-element tensor.
    double value() const {
        if (size() != 1) throw ShapeError("value(): tensor is not a scalar");
        return node()->data[0];
    }

    double at(std::initializer_list<std::size_t> idx) const {
        const auto& sh = shape();
        if (idx.size() != sh.size()) throw ShapeError("at(): index rank mismatch");
        std::size_t flat = 0, d = 0;
        for (std::size_t i : idx) {
            if (i >= sh[d]) throw ShapeError("at(): index out of range");
            flat = flat * sh[d] + i;
            ++d;
        }
        return node()->data[flat];
    }

    /// Independent deep copy with a fresh (empty) gradient buffer.
    Tensor clone(bool requires_grad = false) const {
        auto n = std::make_shared<detail::TensorNode>();
        n->shape = node()->shape;
        n->data = node()->data;
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    // Internal: used by operation implementations.
    explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}
    const detail::NodePtr& node_ptr() const { return node(); }

private:
    static void validate_shape(const Shape& s) {
        for (std::size_t e : s) {
            if (e == 0) throw ShapeError("Tensor: zero extent in shape " + detail::shape_str(s));
        }
    }

    const detail::NodePtr& node() const {
        if (!node_) throw Error("Tensor: use of default-constructed tensor");
        return node_;
    }

    detail::NodePtr node_;
};

inline void GradTape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ShapeError("backward: loss must be a scalar, got shape " +
                         detail::shape_str(loss.shape()));
    }
    detail::ensure_grad(loss.node_ptr());
    loss.node_ptr()->grad[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

namespace detail {

inline bool tracing(std::initializer_list<const Tensor*> inputs) {
    if (GradTape::active() == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

inline Tensor make_result(Shape shape, std::vector<double> data, bool track, const char* op) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = track;
    check_finite(*n, op);
    return Tensor(std::move(n));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

// Decomposition of a shape around one axis: element (o, l, i) of the axis
// lives at flat index (o*len + l)*inner + i.
struct AxisSplit {
    std::size_t outer, len, inner;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
    AxisSplit sp{1, s[axis], 1};
    for (std::size_t d = 0; d < axis; ++d) sp.outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) sp.inner *= s[d];
    return sp;
}

inline void require_axis(const Tensor& a, std::size_t axis, const char* op) {
    if (axis >= a.rank()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " invalid for rank " + std::to_string(a.rank()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary operations (equal shapes, or scalar second operand)
// ---------------------------------------------------------------------------

namespace detail {

enum class BinOp { Add, Sub, Mul, Div };

inline const char* bin_name(BinOp k) {
    switch (k) {
        case BinOp::Add: return "add";
        case BinOp::Sub: return "sub";
        case BinOp::Mul: return "mul";
        default: return "div";
    }
}

inline Tensor binary(BinOp kind, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, bin_name(kind));
    const auto& ad = a.data();
    const auto& bd = b.data();
    if (kind == BinOp::Div) {
        for (double v : bd) {
            if (v == 0.0) throw NumericError("div: division by exact zero");
        }
    }
    std::vector<double> out(ad.size());
    switch (kind) {
        case BinOp::Add: for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i]; break;
        case BinOp::Sub: for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i]; break;
        case BinOp::Mul: for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i]; break;
        case BinOp::Div: for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] / bd[i]; break;
    }
    bool track = tracing({&a, &b});
    Tensor r = make_result(a.shape(), std::move(out), track, bin_name(kind));
    if (track) {
        GradTape::active()->record([kind, an = a.node_ptr(), bn = b.node_ptr(), rn = r.node_ptr()] {
            if (rn->grad.empty()) return;
            const auto& g = rn->grad;
            if (an->requires_grad) {
                ensure_grad(an);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    switch (kind) {
                        case BinOp::Add:
                        case BinOp::Sub: an->grad[i] += g[i]; break;
                        case BinOp::Mul: an->grad[i] += g[i] * bn->data[i]; break;
                        case BinOp::Div: an->grad[i] += g[i] / bn->data[i]; break;
                    }
                }
            }
            if (bn->requires_grad) {
                ensure_grad(bn);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    switch (kind) {
                        case BinOp::Add: bn->grad[i] += g[i]; break;
                        case BinOp::Sub: bn->grad[i] -= g[i]; break;
                        case BinOp::Mul: bn->grad[i] += g[i] * an->data[i]; break;
                        case BinOp::Div:
                            bn->grad[i] -= g[i] * an->data[i] / (bn->data[i] * bn->data[i]);
                            break;
                    }
                }
            }
        });
    }
    return r;
}

inline Tensor binary_scalar(BinOp kind, const Tensor& a, double s) {
    if (kind == BinOp::Div && s == 0.0) throw NumericError("div: division by exact zero");
    const auto& ad = a.data();
    std::vector<double> out(ad.size());
    switch (kind) {
        case BinOp::Add: for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + s; break;
        case BinOp::Sub: for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - s; break;
        case BinOp::Mul: for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * s; break;
        case BinOp::Div: for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] / s; break;
    }
    bool track = tracing({&a});
    Tensor r = make_result(a.shape(), std::move(out), track, bin_name(kind));
    if (track) {
        GradTape::active()->record([kind, s, an = a.node_ptr(), rn = r.node_ptr()] {
            if (rn->grad.empty() || !an->requires_grad) return;
            ensure_grad(an);
            const auto& g = rn->grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                switch (kind) {
                    case BinOp::Add:
                    case BinOp::Sub: an->grad[i] += g[i]; break;
                    case BinOp::Mul: an->grad[i] += g[i] * s; break;
                    case BinOp::Div: an->grad[i] += g[i] / s; break;
                }
            }
        });
    }
    return r;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(detail::BinOp::Add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(detail::BinOp::Sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(detail::BinOp::Mul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return detail::binary(detail::BinOp::Div, a, b); }

inline Tensor add(const Tensor& a, double s) { return detail::binary_scalar(detail::BinOp::Add, a, s); }
inline Tensor sub(const Tensor& a, double s) { return detail::binary_scalar(detail::BinOp::Sub, a, s); }
inline Tensor mul(const Tensor& a, double s) { return detail::binary_scalar(detail::BinOp::Mul, a, s); }
inline Tensor div(const Tensor& a, double s) { return detail::binary_scalar(detail::BinOp::Div, a, s); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return sub(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, s); }
inline Tensor operator/(const Tensor& a, double s) { return div(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return add(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul(a, s); }
inline Tensor operator-(double s, const Tensor& a) {
    return detail::binary(detail::BinOp::Sub, Tensor::full(a.shape(), s), a);
}
inline Tensor operator/(double s, const Tensor& a) {
    return detail::binary(detail::BinOp::Div, Tensor::full(a.shape(), s), a);
}

// ---------------------------------------------------------------------------
// Elementwise unary operations
// ---------------------------------------------------------------------------

inline Tensor neg(const Tensor& a) { return mul(a, -1.0); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

/// max(0, x); the subgradient at exactly 0 is fixed to 0.
inline Tensor relu(const Tensor& a) {
    const auto& ad = a.data();
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] > 0.0 ? ad[i] : 0.0;
    bool track = detail::tracing({&a});
    Tensor r = detail::make_result(a.shape(), std::move(out), track, "relu");
    if (track) {
        GradTape::active()->record([an = a.node_ptr(), rn = r.node_ptr()] {
            if (rn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(an);
            for (std::size_t i = 0; i < rn->grad.size(); ++i) {
                if (an->data[i] > 0.0) an->grad[i] += rn->grad[i];
            }
        });
    }
    return r;
}

/// Natural logarithm; non-positive input is a NumericError.
inline Tensor log(const Tensor& a) {
    const auto& ad = a.data();
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (ad[i] <= 0.0) throw NumericError("log: non-positive input");
        out[i] = std::log(ad[i]);
    }
    bool track = detail::tracing({&a});
    Tensor r = detail::make_result(a.shape(), std::move(out), track, "log");
    if (track) {
        GradTape::active()->record([an = a.node_ptr(), rn = r.node_ptr()] {
            if (rn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(an);
            for (std::size_t i = 0; i < rn->grad.size(); ++i) {
                an->grad[i] += rn->grad[i] / an->data[i];
            }
        });
    }
    return r;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace detail {

enum class ReduceOp { Sum, Mean, Max };

inline Tensor reduce_impl(ReduceOp kind, const Tensor& a, std::vector<std::size_t> axes,
                          const char* op) {
    const Shape& sh = a.shape();
    std::vector<bool> reduced(sh.size(), false);
    for (std::size_t ax : axes) {
        if (ax >= sh.size()) {
            throw ShapeError(std::string(op) + ": axis " + std::to_string(ax) +
                             " invalid for rank " + std::to_string(sh.size()));
        }
        if (reduced[ax]) throw ShapeError(std::string(op) + ": duplicate axis");
        reduced[ax] = true;
    }
    Shape out_shape;
    std::size_t count = 1;
    for (std::size_t d = 0; d < sh.size(); ++d) {
        if (reduced[d]) count *= sh[d];
        else out_shape.push_back(sh[d]);
    }
    const std::size_t out_n = shape_product(out_shape);
    const auto& ad = a.data();

    // Map every input flat index to its output flat index.
    std::vector<std::size_t> out_index(ad.size());
    {
        std::vector<std::size_t> coord(sh.size(), 0);
        for (std::size_t i = 0; i < ad.size(); ++i) {
            std::size_t oi = 0;
            for (std::size_t d = 0; d < sh.size(); ++d) {
                if (!reduced[d]) oi = oi * sh[d] + coord[d];
            }
            out_index[i] = oi;
            for (std::size_t d = sh.size(); d-- > 0;) {
                if (++coord[d] < sh[d]) break;
                coord[d] = 0;
            }
        }
    }

    std::vector<double> out;
    std::vector<std::size_t> arg;  // winning input index per output cell (Max only)
    if (kind == ReduceOp::Max) {
        out.assign(out_n, -std::numeric_limits<double>::infinity());
        arg.assign(out_n, 0);
        for (std::size_t i = 0; i < ad.size(); ++i) {
            if (ad[i] > out[out_index[i]]) {
                out[out_index[i]] = ad[i];
                arg[out_index[i]] = i;
            }
        }
    } else {
        out.assign(out_n, 0.0);
        for (std::size_t i = 0; i < ad.size(); ++i) out[out_index[i]] += ad[i];
        if (kind == ReduceOp::Mean) {
            for (double& v : out) v /= static_cast<double>(count);
        }
    }

    bool track = tracing({&a});
    Tensor r = make_result(std::move(out_shape), std::move(out), track, op);
    if (track) {
        GradTape::active()->record([kind, count, idx = std::move(out_index), arg = std::move(arg),
                                    an = a.node_ptr(), rn = r.node_ptr()] {
            if (rn->grad.empty() || !an->requires_grad) return;
            ensure_grad(an);
            const auto& g = rn->grad;
            switch (kind) {
                case ReduceOp::Sum:
                    for (std::size_t i = 0; i < idx.size(); ++i) an->grad[i] += g[idx[i]];
                    break;
                case ReduceOp::Mean:
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                        an->grad[i] += g[idx[i]] / static_cast<double>(count);
                    }
                    break;
                case ReduceOp::Max:
                    for (std::size_t o = 0; o < g.size(); ++o) an->grad[arg[o]] += g[o];
                    break;
            }
        });
    }
    return r;
}

inline std::vector<std::size_t> all_axes(const Tensor& a) {
    std::vector<std::size_t> axes(a.rank());
    std::iota(axes.begin(), axes.end(), std::size_t{0});
    return axes;
}

}  // namespace detail

inline Tensor sum(const Tensor& a, std::vector<std::size_t> axes) {
    return detail::reduce_impl(detail::ReduceOp::Sum, a, std::move(axes), "sum");
}
inline Tensor sum(const Tensor& a) { return sum(a, detail::all_axes(a)); }

inline Tensor mean(const Tensor& a, std::vector<std::size_t> axes) {
    return detail::reduce_impl(detail::ReduceOp::Mean, a, std::move(axes), "mean");
}
inline Tensor mean(const Tensor& a) { return mean(a, detail::all_axes(a)); }

inline Tensor reduce_max(const Tensor& a, std::vector<std::size_t> axes) {
    return detail::reduce_impl(detail::ReduceOp::Max, a, std::move(axes), "max");
}
inline Tensor reduce_max(const Tensor& a) { return reduce_max(a, detail::all_axes(a)); }

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul: operands must be rank 2");
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions disagree " + detail::shape_str(a.shape()) +
                         " vs " + detail::shape_str(b.shape()));
    }
    const auto& ad = a.data();
    const auto& bd = b.data();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const double av = ad[i * k + l];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * bd[l * n + j];
        }
    }
    bool track = detail::tracing({&a, &b});
    Tensor r = detail::make_result({m, n}, std::move(out), track, "matmul");
    if (track) {
        GradTape::active()->record([m, k, n, an = a.node_ptr(), bn = b.node_ptr(),
                                    rn = r.node_ptr()] {
            if (rn->grad.empty()) return;
            const auto& g = rn->grad;
            if (an->requires_grad) {
                detail::ensure_grad(an);
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        const double gv = g[i * n + j];
                        if (gv == 0.0) continue;
                        for (std::size_t l = 0; l < k; ++l) {
                            an->grad[i * k + l] += gv * bn->data[l * n + j];
                        }
                    }
                }
            }
            if (bn->requires_grad) {
                detail::ensure_grad(bn);
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t l = 0; l < k; ++l) {
                        const double av = an->data[i * k + l];
                        if (av == 0.0) continue;
                        for (std::size_t j = 0; j < n; ++j) {
                            bn->grad[l * n + j] += av * g[i * n + j];
                        }
                    }
                }
            }
        });
    }
    return r;
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: operand must be rank 2");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    const auto& ad = a.data();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
    }
    bool track = detail::tracing({&a});
    Tensor r = detail::make_result({n, m}, std::move(out), track, "transpose");
    if (track) {
        GradTape::active()->record([m, n, an = a.node_ptr(), rn = r.node_ptr()] {
            if (rn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(an);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += rn->grad[j * m + i];
            }
        });
    }
    return r;
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape new_shape) {
    if (detail::shape_product(new_shape) != a.size()) {
        throw ShapeError("reshape: cannot view " + detail::shape_str(a.shape()) + " as " +
                         detail::shape_str(new_shape));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    bool track = detail::tracing({&a});
    Tensor r = detail::make_result(std::move(new_shape), std::move(out), track, "reshape");
    if (track) {
        GradTape::active()->record([an = a.node_ptr(), rn = r.node_ptr()] {
            if (rn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(an);
            for (std::size_t i = 0; i < rn->grad.size(); ++i) an->grad[i] += rn->grad[i];
        });
    }
    return r;
}

/// Concatenates tensors along `axis`. All parts must agree on every other
/// extent; the output extent on `axis` is the sum of the parts'.
inline Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    detail::require_axis(parts[0], axis, "concat");
    std::size_t axis_total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != s0.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t d = 0; d < s0.size(); ++d) {
            if (d != axis && p.shape()[d] != s0[d]) {
                throw ShapeError("concat: extent mismatch outside axis " + std::to_string(axis));
            }
        }
        axis_total += p.shape()[axis];
    }
    Shape out_shape = s0;
    out_shape[axis] = axis_total;
    auto sp = detail::split_at(out_shape, axis);

    std::vector<double> out(detail::shape_product(out_shape));
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t len = p.shape()[axis];
        const auto& pd = p.data();
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t l = 0; l < len; ++l) {
                const double* src = pd.data() + (o * len + l) * sp.inner;
                double* dst = out.data() + (o * sp.len + offset + l) * sp.inner;
                std::copy(src, src + sp.inner, dst);
            }
        }
        offset += len;
    }

    bool track = false;
    for (const Tensor& p : parts) {
        if (detail::tracing({&p})) track = true;
    }
    Tensor r = detail::make_result(std::move(out_shape), std::move(out), track, "concat");
    if (track) {
        std::vector<detail::NodePtr> part_nodes;
        part_nodes.reserve(parts.size());
        for (const Tensor& p : parts) part_nodes.push_back(p.node_ptr());
        GradTape::active()->record([sp, part_nodes = std::move(part_nodes), rn = r.node_ptr()] {
            if (rn->grad.empty()) return;
            std::size_t offset = 0;
            for (const auto& pn : part_nodes) {
                const std::size_t len = pn->data.size() / (sp.outer * sp.inner);
                if (pn->requires_grad) {
                    detail::ensure_grad(pn);
                    for (std::size_t o = 0; o < sp.outer; ++o) {
                        for (std::size_t l = 0; l < len; ++l) {
                            const double* src = rn->grad.data() + (o * sp.len + offset + l) * sp.inner;
                            double* dst = pn->grad.data() + (o * len + l) * sp.inner;
                            for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
                        }
                    }
                }
                offset += len;
            }
        });
    }
    return r;
}

inline Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
    return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

/// Contiguous sub-range [start, start+len) along `axis`.
inline Tensor narrow(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
    detail::require_axis(a, axis, "narrow");
    const Shape& sh = a.shape();
    if (len == 0 || start + len > sh[axis]) {
        throw ShapeError("narrow: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") invalid for extent " +
                         std::to_string(sh[axis]));
    }
    auto sp = detail::split_at(sh, axis);
    Shape out_shape = sh;
    out_shape[axis] = len;
    std::vector<double> out(detail::shape_product(out_shape));
    const auto& ad = a.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t l = 0; l < len; ++l) {
            const double* src = ad.data() + (o * sp.len + start + l) * sp.inner;
            double* dst = out.data() + (o * len + l) * sp.inner;
            std::copy(src, src + sp.inner, dst);
        }
    }
    bool track = detail::tracing({&a});
    Tensor r = detail::make_result(std::move(out_shape), std::move(out), track, "narrow");
    if (track) {
        GradTape::active()->record([sp, start, len, an = a.node_ptr(), rn = r.node_ptr()] {
            if (rn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(an);
            for (std::size_t o = 0; o < sp.outer; ++o) {
                for (std::size_t l = 0; l < len; ++l) {
                    const double* src = rn->grad.data() + (o * len + l) * sp.inner;
                    double* dst = an->grad.data() + (o * sp.len + start + l) * sp.inner;
                    for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return r;
}

// ---------------------------------------------------------------------------
// Softmax, cosine similarity, L2 normalization
// ---------------------------------------------------------------------------

/// Softmax along `axis`, computed with max-subtraction. Each slice of the
/// output is positive and sums to 1.
inline Tensor softmax(const Tensor& a, std::size_t axis) {
    detail::require_axis(a, axis, "softmax");
    auto sp = detail::split_at(a.shape(), axis);
    const auto& ad = a.data();
    std::vector<double> out(ad.size());
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.len * sp.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, ad[base + l * sp.inner]);
            double denom = 0.0;
            for (std::size_t l = 0; l < sp.len; ++l) {
                const double e = std::exp(ad[base + l * sp.inner] - mx);
                out[base + l * sp.inner] = e;
                denom += e;
            }
            for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] /= denom;
        }
    }
    bool track = detail::tracing({&a});
    Tensor r = detail::make_result(a.shape(), std::move(out), track, "softmax");
    if (track) {
        GradTape::active()->record([sp, an = a.node_ptr(), rn = r.node_ptr()] {
            if (rn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(an);
            const auto& y = rn->data;
            const auto& g = rn->grad;
            for (std::size_t o = 0; o < sp.outer; ++o) {
                for (std::size_t i = 0; i < sp.inner; ++i) {
                    const std::size_t base = o * sp.len * sp.inner + i;
                    double dot = 0.0;
                    for (std::size_t l = 0; l < sp.len; ++l) {
                        dot += g[base + l * sp.inner] * y[base + l * sp.inner];
                    }
                    for (std::size_t l = 0; l < sp.len; ++l) {
                        const std::size_t k = base + l * sp.inner;
                        an->grad[k] += y[k] * (g[k] - dot);
                    }
                }
            }
        });
    }
    return r;
}

/// Cosine similarity of two equal-length vectors; scalar result in [-1, 1].
inline Tensor cosine_sim(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1) throw ShapeError("cosine_sim: operands must be rank 1");
    detail::require_same_shape(a, b, "cosine_sim");
    const auto& ad = a.data();
    const auto& bd = b.data();
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (std::size_t i = 0; i < ad.size(); ++i) {
        dot += ad[i] * bd[i];
        na2 += ad[i] * ad[i];
        nb2 += bd[i] * bd[i];
    }
    if (na2 == 0.0 || nb2 == 0.0) throw NumericError("cosine_sim: zero-norm input");
    const double na = std::sqrt(na2), nb = std::sqrt(nb2);
    const double c = dot / (na * nb);
    bool track = detail::tracing({&a, &b});
    Tensor r = detail::make_result({}, {c}, track, "cosine_sim");
    if (track) {
        GradTape::active()->record([c, na, nb, an = a.node_ptr(), bn = b.node_ptr(),
                                    rn = r.node_ptr()] {
            if (rn->grad.empty()) return;
            const double g = rn->grad[0];
            if (an->requires_grad) {
                detail::ensure_grad(an);
                for (std::size_t i = 0; i < an->data.size(); ++i) {
                    an->grad[i] += g * (bn->data[i] / (na * nb) - c * an->data[i] / (na * na));
                }
            }
            if (bn->requires_grad) {
                detail::ensure_grad(bn);
                for (std::size_t i = 0; i < bn->data.size(); ++i) {
                    bn->grad[i] += g * (an->data[i] / (na * nb) - c * bn->data[i] / (nb * nb));
                }
            }
        });
    }
    return r;
}

/// Scales every slice along `axis` to unit L2 norm. A zero-norm slice is a
/// NumericError.
inline Tensor l2_normalize(const Tensor& a, std::size_t axis) {
    detail::require_axis(a, axis, "l2_normalize");
    auto sp = detail::split_at(a.shape(), axis);
    const auto& ad = a.data();
    std::vector<double> out(ad.size());
    std::vector<double> norms(sp.outer * sp.inner);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.len * sp.inner + i;
            double n2 = 0.0;
            for (std::size_t l = 0; l < sp.len; ++l) {
                const double v = ad[base + l * sp.inner];
                n2 += v * v;
            }
            if (n2 == 0.0) throw NumericError("l2_normalize: zero-norm slice");
            const double n = std::sqrt(n2);
            norms[o * sp.inner + i] = n;
            for (std::size_t l = 0; l < sp.len; ++l) {
                out[base + l * sp.inner] = ad[base + l * sp.inner] / n;
            }
        }
    }
    bool track = detail::tracing({&a});
    Tensor r = detail::make_result(a.shape(), std::move(out), track, "l2_normalize");
    if (track) {
        GradTape::active()->record([sp, norms = std::move(norms), an = a.node_ptr(),
                                    rn = r.node_ptr()] {
            if (rn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(an);
            const auto& y = rn->data;
            const auto& g = rn->grad;
            for (std::size_t o = 0; o < sp.outer; ++o) {
                for (std::size_t i = 0; i < sp.inner; ++i) {
                    const std::size_t base = o * sp.len * sp.inner + i;
                    const double n = norms[o * sp.inner + i];
                    double dot = 0.0;
                    for (std::size_t l = 0; l < sp.len; ++l) {
                        dot += g[base + l * sp.inner] * y[base + l * sp.inner];
                    }
                    for (std::size_t l = 0; l < sp.len; ++l) {
                        const std::size_t k = base + l * sp.inner;
                        an->grad[k] += (g[k] - dot * y[k]) / n;
                    }
                }
            }
        });
    }
    return r;
}

// ---------------------------------------------------------------------------
// 2-D convolution (NHWC), odd-kernel same padding, integer stride
// ---------------------------------------------------------------------------

/// x: [N,H,W,Cin], kernel: [kh,kw,Cin,Cout], bias: [Cout]. Padding is
/// (k-1)/2 per side, so stride 1 preserves the spatial extent and stride 2
/// halves even extents.
inline Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                     std::size_t stride) {
    if (x.rank() != 4) throw ShapeError("conv2d: input must be rank 4 (NHWC)");
    if (kernel.rank() != 4) throw ShapeError("conv2d: kernel must be rank 4 (KhKwCinCout)");
    if (bias.rank() != 1) throw ShapeError("conv2d: bias must be rank 1");
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    const std::size_t N = x.shape()[0], H = x.shape()[1], W = x.shape()[2], Ci = x.shape()[3];
    const std::size_t kh = kernel.shape()[0], kw = kernel.shape()[1];
    if (kernel.shape()[2] != Ci) throw ShapeError("conv2d: kernel input channels disagree");
    const std::size_t Co = kernel.shape()[3];
    if (bias.shape()[0] != Co) throw ShapeError("conv2d: bias length disagrees");
    const std::size_t ph = (kh - 1) / 2, pw = (kw - 1) / 2;
    if (H + 2 * ph < kh || W + 2 * pw < kw) throw ShapeError("conv2d: kernel larger than input");
    const std::size_t Ho = (H + 2 * ph - kh) / stride + 1;
    const std::size_t Wo = (W + 2 * pw - kw) / stride + 1;

    const auto& xd = x.data();
    const auto& kd = kernel.data();
    const auto& bd = bias.data();
    std::vector<double> out(N * Ho * Wo * Co);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t oh = 0; oh < Ho; ++oh) {
            for (std::size_t ow = 0; ow < Wo; ++ow) {
                double* orow = out.data() + ((n * Ho + oh) * Wo + ow) * Co;
                for (std::size_t co = 0; co < Co; ++co) orow[co] = bd[co];
                for (std::size_t r = 0; r < kh; ++r) {
                    const std::ptrdiff_t ih =
                        static_cast<std::ptrdiff_t>(oh * stride + r) - static_cast<std::ptrdiff_t>(ph);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t s = 0; s < kw; ++s) {
                        const std::ptrdiff_t iw =
                            static_cast<std::ptrdiff_t>(ow * stride + s) - static_cast<std::ptrdiff_t>(pw);
                        if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                        const double* xrow = xd.data() + ((n * H + ih) * W + iw) * Ci;
                        const double* krow = kd.data() + (r * kw + s) * Ci * Co;
                        for (std::size_t ci = 0; ci < Ci; ++ci) {
                            const double xv = xrow[ci];
                            if (xv == 0.0) continue;
                            const double* kc = krow + ci * Co;
                            for (std::size_t co = 0; co < Co; ++co) orow[co] += xv * kc[co];
                        }
                    }
                }
            }
        }
    }

    bool track = detail::tracing({&x, &kernel, &bias});
    Tensor r = detail::make_result({N, Ho, Wo, Co}, std::move(out), track, "conv2d");
    if (track) {
        GradTape::active()->record([N, H, W, Ci, kh, kw, Co, ph, pw, stride, Ho, Wo,
                                    xn = x.node_ptr(), kn = kernel.node_ptr(),
                                    bn = bias.node_ptr(), rn = r.node_ptr()] {
            if (rn->grad.empty()) return;
            const auto& g = rn->grad;
            const bool gx = xn->requires_grad, gk = kn->requires_grad, gb = bn->requires_grad;
            if (gx) detail::ensure_grad(xn);
            if (gk) detail::ensure_grad(kn);
            if (gb) detail::ensure_grad(bn);
            for (std::size_t n = 0; n < N; ++n) {
                for (std::size_t oh = 0; oh < Ho; ++oh) {
                    for (std::size_t ow = 0; ow < Wo; ++ow) {
                        const double* grow = g.data() + ((n * Ho + oh) * Wo + ow) * Co;
                        if (gb) {
                            for (std::size_t co = 0; co < Co; ++co) bn->grad[co] += grow[co];
                        }
                        for (std::size_t r = 0; r < kh; ++r) {
                            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + r) -
                                                      static_cast<std::ptrdiff_t>(ph);
                            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (std::size_t s = 0; s < kw; ++s) {
                                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + s) -
                                                          static_cast<std::ptrdiff_t>(pw);
                                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                                const std::size_t xbase = ((n * H + ih) * W + iw) * Ci;
                                const std::size_t kbase = (r * kw + s) * Ci * Co;
                                for (std::size_t ci = 0; ci < Ci; ++ci) {
                                    const double xv = xn->data[xbase + ci];
                                    double acc = 0.0;
                                    for (std::size_t co = 0; co < Co; ++co) {
                                        const double gv = grow[co];
                                        if (gk) kn->grad[kbase + ci * Co + co] += gv * xv;
                                        acc += gv * kn->data[kbase + ci * Co + co];
                                    }
                                    if (gx) xn->grad[xbase + ci] += acc;
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return r;
}

}  // namespace sraa
