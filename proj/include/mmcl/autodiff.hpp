#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// Each operation allocates a graph node holding the result plus a backward
// closure; the graph is a per-forward-pass tape kept alive by shared_ptr
// edges and freed once the handles go out of scope. Leaves created with
// requires_grad keep their accumulated gradients until zero_grad().
// Everything is single-threaded and deterministic: identical inputs and
// seeds give bit-identical values and gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mmcl/tensor.hpp"

namespace mmcl {

struct Node {
    const char* op = "leaf";
    Tensor value;
    bool requires_grad = false;
    std::string name;  // set for parameters, empty otherwise
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    Tensor& grad_buf() {
        if (!grad_alloc_) {
            grad_ = Tensor::zeros(value.shape());
            grad_alloc_ = true;
        }
        return grad_;
    }

    bool has_grad() const { return grad_alloc_; }

    void drop_grad() { grad_alloc_ = false; }

    void accumulate(const Tensor& g) {
        Tensor& buf = grad_buf();
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
    }

private:
    Tensor grad_;
    bool grad_alloc_ = false;
};

class Var {
public:
    Var() = default;

    explicit Var(Tensor value, bool requires_grad = false, std::string name = {}) {
        n_ = std::make_shared<Node>();
        n_->value = std::move(value);
        n_->requires_grad = requires_grad;
        n_->name = std::move(name);
    }

    static Var constant(Tensor value) { return Var(std::move(value), false); }
    static Var scalar(double v) { return Var(Tensor::scalar(v), false); }
    static Var param(Tensor value, std::string name) {
        return Var(std::move(value), true, std::move(name));
    }

    bool defined() const { return n_ != nullptr; }
    const Tensor& value() const { return n_->value; }
    const Shape& shape() const { return n_->value.shape(); }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    const std::string& name() const { return n_->name; }

    // zeros until a backward pass reaches this node
    const Tensor& grad() const { return n_->grad_buf(); }

    void zero_grad() { n_->drop_grad(); }

    // in-place value update for leaves (optimizer steps)
    void set_value(Tensor v) {
        if (!v.same_shape(n_->value))
            throw ShapeError("set_value: shape " + shape_str(v.shape()) +
                             " does not match " + shape_str(n_->value.shape()));
        n_->value = std::move(v);
    }

    // constant view sharing a copy of the current value
    Var detach() const { return Var(n_->value, false); }

    std::shared_ptr<Node> node() const { return n_; }
    Node* raw() const { return n_.get(); }

private:
    std::shared_ptr<Node> n_;
};

namespace detail {

inline Var make_node(const char* op, Tensor value, std::vector<Var> ins,
                     std::function<void(Node&)> backward) {
    bool rg = false;
    for (const Var& v : ins) rg = rg || v.requires_grad();
    Var out(std::move(value), rg);
    if (rg) {
        Node& n = *out.node();
        n.op = op;
        n.inputs.reserve(ins.size());
        for (Var& v : ins) n.inputs.push_back(v.node());
        n.backward = std::move(backward);
    }
    return out;
}

[[noreturn]] inline void shape_fail(const char* op, const Tensor& a) {
    throw ShapeError(std::string(op) + ": bad shape " + shape_str(a.shape()));
}

[[noreturn]] inline void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not conformable");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise helpers

namespace detail {

template <class Fwd, class Bwd>
Var unary_elementwise(const char* op, const Var& x, Fwd f, Bwd dfdx) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return make_node(op, std::move(out), {x}, [px = x.raw(), dfdx](Node& self) {
        if (!px->requires_grad) return;
        const Tensor& g = self.grad_buf();
        Tensor& dx = px->grad_buf();
        const Tensor& xv = px->value;
        const Tensor& yv = self.value;
        for (std::size_t i = 0; i < xv.size(); ++i) dx[i] += g[i] * dfdx(xv[i], yv[i]);
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// arithmetic

inline Var add(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.same_shape(B)) {
        Tensor out(A.shape());
        for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i];
        return detail::make_node("add", std::move(out), {a, b},
                                 [pa = a.raw(), pb = b.raw()](Node& self) {
                                     const Tensor& g = self.grad_buf();
                                     if (pa->requires_grad) pa->accumulate(g);
                                     if (pb->requires_grad) pb->accumulate(g);
                                 });
    }
    if (B.is_scalar()) {
        Tensor out(A.shape());
        const double b0 = B.item();
        for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + b0;
        return detail::make_node("add", std::move(out), {a, b},
                                 [pa = a.raw(), pb = b.raw()](Node& self) {
                                     const Tensor& g = self.grad_buf();
                                     if (pa->requires_grad) pa->accumulate(g);
                                     if (pb->requires_grad) {
                                         double s = 0;
                                         for (std::size_t i = 0; i < g.size(); ++i) s += g[i];
                                         pb->grad_buf()[0] += s;
                                     }
                                 });
    }
    if (A.is_scalar()) return add(b, a);
    detail::shape_fail("add", A, B);
}

inline Var sub(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.same_shape(B)) {
        Tensor out(A.shape());
        for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] - B[i];
        return detail::make_node("sub", std::move(out), {a, b},
                                 [pa = a.raw(), pb = b.raw()](Node& self) {
                                     const Tensor& g = self.grad_buf();
                                     if (pa->requires_grad) pa->accumulate(g);
                                     if (pb->requires_grad) {
                                         Tensor& db = pb->grad_buf();
                                         for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
                                     }
                                 });
    }
    if (B.is_scalar()) {
        Tensor out(A.shape());
        const double b0 = B.item();
        for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] - b0;
        return detail::make_node("sub", std::move(out), {a, b},
                                 [pa = a.raw(), pb = b.raw()](Node& self) {
                                     const Tensor& g = self.grad_buf();
                                     if (pa->requires_grad) pa->accumulate(g);
                                     if (pb->requires_grad) {
                                         double s = 0;
                                         for (std::size_t i = 0; i < g.size(); ++i) s += g[i];
                                         pb->grad_buf()[0] -= s;
                                     }
                                 });
    }
    detail::shape_fail("sub", A, B);
}

inline Var mul(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.same_shape(B)) {
        Tensor out(A.shape());
        for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
        return detail::make_node("mul", std::move(out), {a, b},
                                 [pa = a.raw(), pb = b.raw()](Node& self) {
                                     const Tensor& g = self.grad_buf();
                                     if (pa->requires_grad) {
                                         Tensor& da = pa->grad_buf();
                                         const Tensor& bv = pb->value;
                                         for (std::size_t i = 0; i < g.size(); ++i)
                                             da[i] += g[i] * bv[i];
                                     }
                                     if (pb->requires_grad) {
                                         Tensor& db = pb->grad_buf();
                                         const Tensor& av = pa->value;
                                         for (std::size_t i = 0; i < g.size(); ++i)
                                             db[i] += g[i] * av[i];
                                     }
                                 });
    }
    if (B.is_scalar()) {
        Tensor out(A.shape());
        const double b0 = B.item();
        for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * b0;
        return detail::make_node("mul", std::move(out), {a, b},
                                 [pa = a.raw(), pb = b.raw()](Node& self) {
                                     const Tensor& g = self.grad_buf();
                                     if (pa->requires_grad) {
                                         Tensor& da = pa->grad_buf();
                                         const double b0 = pb->value.item();
                                         for (std::size_t i = 0; i < g.size(); ++i)
                                             da[i] += g[i] * b0;
                                     }
                                     if (pb->requires_grad) {
                                         const Tensor& av = pa->value;
                                         double s = 0;
                                         for (std::size_t i = 0; i < g.size(); ++i)
                                             s += g[i] * av[i];
                                         pb->grad_buf()[0] += s;
                                     }
                                 });
    }
    if (A.is_scalar()) return mul(b, a);
    detail::shape_fail("mul", A, B);
}

inline Var scalar_mul(const Var& x, double c) {
    const Tensor& X = x.value();
    Tensor out(X.shape());
    for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] * c;
    return detail::make_node("scalar_mul", std::move(out), {x}, [px = x.raw(), c](Node& self) {
        if (!px->requires_grad) return;
        const Tensor& g = self.grad_buf();
        Tensor& dx = px->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * c;
    });
}

inline Var add_scalar(const Var& x, double c) {
    const Tensor& X = x.value();
    Tensor out(X.shape());
    for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] + c;
    return detail::make_node("add_scalar", std::move(out), {x}, [px = x.raw()](Node& self) {
        if (px->requires_grad) px->accumulate(self.grad_buf());
    });
}

inline Var neg(const Var& x) { return scalar_mul(x, -1.0); }

inline Var add_n(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("add_n: empty input list");
    Tensor out = parts[0].value();
    for (std::size_t k = 1; k < parts.size(); ++k) {
        const Tensor& P = parts[k].value();
        if (!P.same_shape(out)) detail::shape_fail("add_n", out, P);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += P[i];
    }
    std::vector<Node*> raw;
    raw.reserve(parts.size());
    for (const Var& p : parts) raw.push_back(p.raw());
    return detail::make_node("add_n", std::move(out), parts, [raw](Node& self) {
        const Tensor& g = self.grad_buf();
        for (Node* p : raw)
            if (p->requires_grad) p->accumulate(g);
    });
}

// ---------------------------------------------------------------------------
// linear algebra

inline Var matmul(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    const std::size_t ra = A.rank(), rb = B.rank();

    if (ra == 2 && rb == 2) {
        const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
        if (B.rows() != k) detail::shape_fail("matmul", A, B);
        Tensor out(Shape{m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                const double av = A.at(i, p);
                if (av == 0.0) continue;
                for (std::size_t j = 0; j < n; ++j) out.at(i, j) += av * B.at(p, j);
            }
        return detail::make_node("matmul", std::move(out), {a, b},
                                 [pa = a.raw(), pb = b.raw()](Node& self) {
                                     const Tensor& g = self.grad_buf();
                                     const Tensor& A = pa->value;
                                     const Tensor& B = pb->value;
                                     const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
                                     if (pa->requires_grad) {
                                         Tensor& da = pa->grad_buf();  // G * B^T
                                         for (std::size_t i = 0; i < m; ++i)
                                             for (std::size_t p = 0; p < k; ++p) {
                                                 double s = 0;
                                                 for (std::size_t j = 0; j < n; ++j)
                                                     s += g.at(i, j) * B.at(p, j);
                                                 da.at(i, p) += s;
                                             }
                                     }
                                     if (pb->requires_grad) {
                                         Tensor& db = pb->grad_buf();  // A^T * G
                                         for (std::size_t p = 0; p < k; ++p)
                                             for (std::size_t j = 0; j < n; ++j) {
                                                 double s = 0;
                                                 for (std::size_t i = 0; i < m; ++i)
                                                     s += A.at(i, p) * g.at(i, j);
                                                 db.at(p, j) += s;
                                             }
                                     }
                                 });
    }
    if (ra == 1 && rb == 2) {
        const std::size_t k = A.size(), n = B.cols();
        if (B.rows() != k) detail::shape_fail("matmul", A, B);
        Tensor out(Shape{n});
        for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < n; ++j) out[j] += A[p] * B.at(p, j);
        return detail::make_node("matmul", std::move(out), {a, b},
                                 [pa = a.raw(), pb = b.raw()](Node& self) {
                                     const Tensor& g = self.grad_buf();
                                     const Tensor& A = pa->value;
                                     const Tensor& B = pb->value;
                                     const std::size_t k = A.size(), n = B.cols();
                                     if (pa->requires_grad) {
                                         Tensor& da = pa->grad_buf();
                                         for (std::size_t p = 0; p < k; ++p) {
                                             double s = 0;
                                             for (std::size_t j = 0; j < n; ++j)
                                                 s += B.at(p, j) * g[j];
                                             da[p] += s;
                                         }
                                     }
                                     if (pb->requires_grad) {
                                         Tensor& db = pb->grad_buf();
                                         for (std::size_t p = 0; p < k; ++p)
                                             for (std::size_t j = 0; j < n; ++j)
                                                 db.at(p, j) += A[p] * g[j];
                                     }
                                 });
    }
    if (ra == 2 && rb == 1) {
        const std::size_t m = A.rows(), k = A.cols();
        if (B.size() != k) detail::shape_fail("matmul", A, B);
        Tensor out(Shape{m});
        for (std::size_t i = 0; i < m; ++i) {
            double s = 0;
            for (std::size_t p = 0; p < k; ++p) s += A.at(i, p) * B[p];
            out[i] = s;
        }
        return detail::make_node("matmul", std::move(out), {a, b},
                                 [pa = a.raw(), pb = b.raw()](Node& self) {
                                     const Tensor& g = self.grad_buf();
                                     const Tensor& A = pa->value;
                                     const Tensor& B = pb->value;
                                     const std::size_t m = A.rows(), k = A.cols();
                                     if (pa->requires_grad) {
                                         Tensor& da = pa->grad_buf();
                                         for (std::size_t i = 0; i < m; ++i)
                                             for (std::size_t p = 0; p < k; ++p)
                                                 da.at(i, p) += g[i] * B[p];
                                     }
                                     if (pb->requires_grad) {
                                         Tensor& db = pb->grad_buf();
                                         for (std::size_t p = 0; p < k; ++p) {
                                             double s = 0;
                                             for (std::size_t i = 0; i < m; ++i)
                                                 s += A.at(i, p) * g[i];
                                             db[p] += s;
                                         }
                                     }
                                 });
    }
    if (ra == 1 && rb == 1) {
        const std::size_t k = A.size();
        if (B.size() != k) detail::shape_fail("matmul", A, B);
        double s = 0;
        for (std::size_t p = 0; p < k; ++p) s += A[p] * B[p];
        return detail::make_node("matmul", Tensor::scalar(s), {a, b},
                                 [pa = a.raw(), pb = b.raw()](Node& self) {
                                     const double g = self.grad_buf()[0];
                                     const Tensor& A = pa->value;
                                     const Tensor& B = pb->value;
                                     if (pa->requires_grad) {
                                         Tensor& da = pa->grad_buf();
                                         for (std::size_t p = 0; p < A.size(); ++p)
                                             da[p] += g * B[p];
                                     }
                                     if (pb->requires_grad) {
                                         Tensor& db = pb->grad_buf();
                                         for (std::size_t p = 0; p < B.size(); ++p)
                                             db[p] += g * A[p];
                                     }
                                 });
    }
    detail::shape_fail("matmul", A, B);
}

inline Var dot(const Var& a, const Var& b) { return matmul(a, b); }

inline Var transpose(const Var& x) {
    const Tensor& X = x.value();
    if (X.rank() != 2) detail::shape_fail("transpose", X);
    const std::size_t m = X.rows(), n = X.cols();
    Tensor out(Shape{n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(j, i) = X.at(i, j);
    return detail::make_node("transpose", std::move(out), {x}, [px = x.raw()](Node& self) {
        if (!px->requires_grad) return;
        const Tensor& g = self.grad_buf();
        Tensor& dx = px->grad_buf();
        const std::size_t m = dx.rows(), n = dx.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) dx.at(i, j) += g.at(j, i);
    });
}

// row i of x scaled by v[i]
inline Var scale_rows(const Var& x, const Var& v) {
    const Tensor& X = x.value();
    const Tensor& V = v.value();
    if (X.rank() != 2 || V.rank() != 1 || V.size() != X.rows())
        detail::shape_fail("scale_rows", X, V);
    const std::size_t m = X.rows(), n = X.cols();
    Tensor out(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = X.at(i, j) * V[i];
    return detail::make_node("scale_rows", std::move(out), {x, v},
                             [px = x.raw(), pv = v.raw()](Node& self) {
                                 const Tensor& g = self.grad_buf();
                                 const Tensor& X = px->value;
                                 const Tensor& V = pv->value;
                                 const std::size_t m = X.rows(), n = X.cols();
                                 if (px->requires_grad) {
                                     Tensor& dx = px->grad_buf();
                                     for (std::size_t i = 0; i < m; ++i)
                                         for (std::size_t j = 0; j < n; ++j)
                                             dx.at(i, j) += g.at(i, j) * V[i];
                                 }
                                 if (pv->requires_grad) {
                                     Tensor& dv = pv->grad_buf();
                                     for (std::size_t i = 0; i < m; ++i) {
                                         double s = 0;
                                         for (std::size_t j = 0; j < n; ++j)
                                             s += g.at(i, j) * X.at(i, j);
                                         dv[i] += s;
                                     }
                                 }
                             });
}

// column j of x scaled by v[j]
inline Var scale_cols(const Var& x, const Var& v) {
    const Tensor& X = x.value();
    const Tensor& V = v.value();
    if (X.rank() != 2 || V.rank() != 1 || V.size() != X.cols())
        detail::shape_fail("scale_cols", X, V);
    const std::size_t m = X.rows(), n = X.cols();
    Tensor out(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = X.at(i, j) * V[j];
    return detail::make_node("scale_cols", std::move(out), {x, v},
                             [px = x.raw(), pv = v.raw()](Node& self) {
                                 const Tensor& g = self.grad_buf();
                                 const Tensor& X = px->value;
                                 const Tensor& V = pv->value;
                                 const std::size_t m = X.rows(), n = X.cols();
                                 if (px->requires_grad) {
                                     Tensor& dx = px->grad_buf();
                                     for (std::size_t i = 0; i < m; ++i)
                                         for (std::size_t j = 0; j < n; ++j)
                                             dx.at(i, j) += g.at(i, j) * V[j];
                                 }
                                 if (pv->requires_grad) {
                                     Tensor& dv = pv->grad_buf();
                                     for (std::size_t j = 0; j < n; ++j) {
                                         double s = 0;
                                         for (std::size_t i = 0; i < m; ++i)
                                             s += g.at(i, j) * X.at(i, j);
                                         dv[j] += s;
                                     }
                                 }
                             });
}

// b[j] added to every row of x
inline Var add_bias(const Var& x, const Var& b) {
    const Tensor& X = x.value();
    const Tensor& B = b.value();
    if (X.rank() != 2 || B.rank() != 1 || B.size() != X.cols())
        detail::shape_fail("add_bias", X, B);
    const std::size_t m = X.rows(), n = X.cols();
    Tensor out(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = X.at(i, j) + B[j];
    return detail::make_node("add_bias", std::move(out), {x, b},
                             [px = x.raw(), pb = b.raw()](Node& self) {
                                 const Tensor& g = self.grad_buf();
                                 const std::size_t m = g.rows(), n = g.cols();
                                 if (px->requires_grad) px->accumulate(g);
                                 if (pb->requires_grad) {
                                     Tensor& db = pb->grad_buf();
                                     for (std::size_t j = 0; j < n; ++j) {
                                         double s = 0;
                                         for (std::size_t i = 0; i < m; ++i) s += g.at(i, j);
                                         db[j] += s;
                                     }
                                 }
                             });
}

// ---------------------------------------------------------------------------
// structural ops

inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty input list");
    const std::size_t n = parts[0].value().cols();
    std::size_t m = 0;
    for (const Var& p : parts) {
        if (p.value().rank() != 2 || p.value().cols() != n)
            detail::shape_fail("concat_rows", parts[0].value(), p.value());
        m += p.value().rows();
    }
    Tensor out(Shape{m, n});
    std::size_t r = 0;
    for (const Var& p : parts) {
        const Tensor& P = p.value();
        for (std::size_t i = 0; i < P.rows(); ++i)
            for (std::size_t j = 0; j < n; ++j) out.at(r + i, j) = P.at(i, j);
        r += P.rows();
    }
    std::vector<Node*> raw;
    for (const Var& p : parts) raw.push_back(p.raw());
    return detail::make_node("concat_rows", std::move(out), parts, [raw](Node& self) {
        const Tensor& g = self.grad_buf();
        const std::size_t n = g.cols();
        std::size_t r = 0;
        for (Node* p : raw) {
            const std::size_t pm = p->value.rows();
            if (p->requires_grad) {
                Tensor& d = p->grad_buf();
                for (std::size_t i = 0; i < pm; ++i)
                    for (std::size_t j = 0; j < n; ++j) d.at(i, j) += g.at(r + i, j);
            }
            r += pm;
        }
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty input list");
    const std::size_t m = parts[0].value().rows();
    std::size_t n = 0;
    for (const Var& p : parts) {
        if (p.value().rank() != 2 || p.value().rows() != m)
            detail::shape_fail("concat_cols", parts[0].value(), p.value());
        n += p.value().cols();
    }
    Tensor out(Shape{m, n});
    std::size_t c = 0;
    for (const Var& p : parts) {
        const Tensor& P = p.value();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < P.cols(); ++j) out.at(i, c + j) = P.at(i, j);
        c += P.cols();
    }
    std::vector<Node*> raw;
    for (const Var& p : parts) raw.push_back(p.raw());
    return detail::make_node("concat_cols", std::move(out), parts, [raw](Node& self) {
        const Tensor& g = self.grad_buf();
        const std::size_t m = g.rows();
        std::size_t c = 0;
        for (Node* p : raw) {
            const std::size_t pn = p->value.cols();
            if (p->requires_grad) {
                Tensor& d = p->grad_buf();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < pn; ++j) d.at(i, j) += g.at(i, c + j);
            }
            c += pn;
        }
    });
}

inline Var slice_rows(const Var& x, std::size_t r0, std::size_t len) {
    const Tensor& X = x.value();
    if (X.rank() != 2 || r0 + len > X.rows())
        throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," +
                         std::to_string(r0 + len) + ") outside " + shape_str(X.shape()));
    const std::size_t n = X.cols();
    Tensor out(Shape{len, n});
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = X.at(r0 + i, j);
    return detail::make_node("slice_rows", std::move(out), {x}, [px = x.raw(), r0](Node& self) {
        if (!px->requires_grad) return;
        const Tensor& g = self.grad_buf();
        Tensor& dx = px->grad_buf();
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) dx.at(r0 + i, j) += g.at(i, j);
    });
}

inline Var slice_cols(const Var& x, std::size_t c0, std::size_t len) {
    const Tensor& X = x.value();
    if (X.rank() != 2 || c0 + len > X.cols())
        throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," +
                         std::to_string(c0 + len) + ") outside " + shape_str(X.shape()));
    const std::size_t m = X.rows();
    Tensor out(Shape{m, len});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < len; ++j) out.at(i, j) = X.at(i, c0 + j);
    return detail::make_node("slice_cols", std::move(out), {x}, [px = x.raw(), c0](Node& self) {
        if (!px->requires_grad) return;
        const Tensor& g = self.grad_buf();
        Tensor& dx = px->grad_buf();
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) dx.at(i, c0 + j) += g.at(i, j);
    });
}

inline std::vector<Var> split_cols(const Var& x, std::size_t parts) {
    const Tensor& X = x.value();
    if (X.rank() != 2 || parts == 0 || X.cols() % parts != 0)
        throw ShapeError("split_cols: cannot split " + shape_str(X.shape()) + " into " +
                         std::to_string(parts) + " parts");
    const std::size_t w = X.cols() / parts;
    std::vector<Var> out;
    out.reserve(parts);
    for (std::size_t p = 0; p < parts; ++p) out.push_back(slice_cols(x, p * w, w));
    return out;
}

inline std::vector<Var> split_rows(const Var& x, std::size_t parts) {
    const Tensor& X = x.value();
    if (X.rank() != 2 || parts == 0 || X.rows() % parts != 0)
        throw ShapeError("split_rows: cannot split " + shape_str(X.shape()) + " into " +
                         std::to_string(parts) + " parts");
    const std::size_t h = X.rows() / parts;
    std::vector<Var> out;
    out.reserve(parts);
    for (std::size_t p = 0; p < parts; ++p) out.push_back(slice_rows(x, p * h, h));
    return out;
}

inline Var reshape(const Var& x, Shape shape) {
    const Tensor& X = x.value();
    if (shape_numel(shape) != X.size())
        throw ShapeError("reshape: " + shape_str(X.shape()) + " to " + shape_str(shape) +
                         " changes element count");
    Tensor out(std::move(shape), X.raw());
    return detail::make_node("reshape", std::move(out), {x}, [px = x.raw()](Node& self) {
        if (!px->requires_grad) return;
        const Tensor& g = self.grad_buf();
        Tensor& dx = px->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    });
}

inline Var slice_vec(const Var& x, std::size_t i0, std::size_t len) {
    const Tensor& X = x.value();
    if (X.rank() != 1 || i0 + len > X.size())
        throw ShapeError("slice_vec: range [" + std::to_string(i0) + "," +
                         std::to_string(i0 + len) + ") outside " + shape_str(X.shape()));
    Tensor out(Shape{len});
    for (std::size_t i = 0; i < len; ++i) out[i] = X[i0 + i];
    return detail::make_node("slice_vec", std::move(out), {x}, [px = x.raw(), i0](Node& self) {
        if (!px->requires_grad) return;
        const Tensor& g = self.grad_buf();
        Tensor& dx = px->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) dx[i0 + i] += g[i];
    });
}

inline Var gather_vec(const Var& x, const std::vector<std::size_t>& idx) {
    const Tensor& X = x.value();
    if (X.rank() != 1) detail::shape_fail("gather_vec", X);
    Tensor out(Shape{idx.size()});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= X.size())
            throw ShapeError("gather_vec: index " + std::to_string(idx[i]) + " outside " +
                             shape_str(X.shape()));
        out[i] = X[idx[i]];
    }
    return detail::make_node("gather_vec", std::move(out), {x},
                             [px = x.raw(), idx](Node& self) {
                                 if (!px->requires_grad) return;
                                 const Tensor& g = self.grad_buf();
                                 Tensor& dx = px->grad_buf();
                                 for (std::size_t i = 0; i < idx.size(); ++i)
                                     dx[idx[i]] += g[i];
                             });
}

inline Var pick(const Var& v, std::size_t idx) {
    const Tensor& V = v.value();
    if (V.rank() != 1 || idx >= V.size())
        throw ShapeError("pick: index " + std::to_string(idx) + " outside " +
                         shape_str(V.shape()));
    return detail::make_node("pick", Tensor::scalar(V[idx]), {v},
                             [pv = v.raw(), idx](Node& self) {
                                 if (pv->requires_grad)
                                     pv->grad_buf()[idx] += self.grad_buf()[0];
                             });
}

// ---------------------------------------------------------------------------
// reductions

inline Var sum_all(const Var& x) {
    const Tensor& X = x.value();
    double s = 0;
    for (std::size_t i = 0; i < X.size(); ++i) s += X[i];
    return detail::make_node("sum", Tensor::scalar(s), {x}, [px = x.raw()](Node& self) {
        if (!px->requires_grad) return;
        const double g = self.grad_buf()[0];
        Tensor& dx = px->grad_buf();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
    });
}

inline Var mean_all(const Var& x) {
    return scalar_mul(sum_all(x), 1.0 / static_cast<double>(x.value().size()));
}

// axis 0: column sums -> [cols]; axis 1: row sums -> [rows]
inline Var sum_axis(const Var& x, int axis) {
    const Tensor& X = x.value();
    if (X.rank() != 2 || (axis != 0 && axis != 1)) detail::shape_fail("sum_axis", X);
    const std::size_t m = X.rows(), n = X.cols();
    if (axis == 0) {
        Tensor out(Shape{n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[j] += X.at(i, j);
        return detail::make_node("sum_axis", std::move(out), {x}, [px = x.raw()](Node& self) {
            if (!px->requires_grad) return;
            const Tensor& g = self.grad_buf();
            Tensor& dx = px->grad_buf();
            for (std::size_t i = 0; i < dx.rows(); ++i)
                for (std::size_t j = 0; j < dx.cols(); ++j) dx.at(i, j) += g[j];
        });
    }
    Tensor out(Shape{m});
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < n; ++j) s += X.at(i, j);
        out[i] = s;
    }
    return detail::make_node("sum_axis", std::move(out), {x}, [px = x.raw()](Node& self) {
        if (!px->requires_grad) return;
        const Tensor& g = self.grad_buf();
        Tensor& dx = px->grad_buf();
        for (std::size_t i = 0; i < dx.rows(); ++i)
            for (std::size_t j = 0; j < dx.cols(); ++j) dx.at(i, j) += g[i];
    });
}

inline Var mean_axis(const Var& x, int axis) {
    const Tensor& X = x.value();
    if (X.rank() != 2) detail::shape_fail("mean_axis", X);
    const double denom = axis == 0 ? static_cast<double>(X.rows())
                                   : static_cast<double>(X.cols());
    return scalar_mul(sum_axis(x, axis), 1.0 / denom);
}

// mean over the time (row) axis of an LxD sequence
inline Var mean_pool_time(const Var& x) { return mean_axis(x, 0); }

// ---------------------------------------------------------------------------
// nonlinearities

inline Var sigmoid(const Var& x) {
    return detail::unary_elementwise(
        "sigmoid", x,
        [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Var relu(const Var& x) {
    return detail::unary_elementwise(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var vabs(const Var& x) {
    return detail::unary_elementwise(
        "abs", x, [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Var square(const Var& x) {
    return detail::unary_elementwise(
        "square", x, [](double v) { return v * v; },
        [](double v, double) { return 2.0 * v; });
}

inline Var vlog(const Var& x) {
    return detail::unary_elementwise(
        "log", x, [](double v) { return std::log(v); },
        [](double v, double) { return 1.0 / v; });
}

// 1/x for x > 0, else 0; guards zero-padded norms and row sums
inline Var inv_or_zero(const Var& x) {
    return detail::unary_elementwise(
        "inv_or_zero", x, [](double v) { return v > 0.0 ? 1.0 / v : 0.0; },
        [](double v, double) { return v > 0.0 ? -1.0 / (v * v) : 0.0; });
}

inline Var clamp01(const Var& x) {
    return detail::unary_elementwise(
        "clamp01", x,
        [](double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); },
        [](double v, double) { return (v > 0.0 && v < 1.0) ? 1.0 : 0.0; });
}

inline Var min_elem(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (!A.same_shape(B)) detail::shape_fail("min_elem", A, B);
    Tensor out(A.shape());
    for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] <= B[i] ? A[i] : B[i];
    return detail::make_node("min_elem", std::move(out), {a, b},
                             [pa = a.raw(), pb = b.raw()](Node& self) {
                                 const Tensor& g = self.grad_buf();
                                 const Tensor& A = pa->value;
                                 const Tensor& B = pb->value;
                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                     if (A[i] <= B[i]) {
                                         if (pa->requires_grad) pa->grad_buf()[i] += g[i];
                                     } else if (pb->requires_grad) {
                                         pb->grad_buf()[i] += g[i];
                                     }
                                 }
                             });
}

inline Var max_elem(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (!A.same_shape(B)) detail::shape_fail("max_elem", A, B);
    Tensor out(A.shape());
    for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] >= B[i] ? A[i] : B[i];
    return detail::make_node("max_elem", std::move(out), {a, b},
                             [pa = a.raw(), pb = b.raw()](Node& self) {
                                 const Tensor& g = self.grad_buf();
                                 const Tensor& A = pa->value;
                                 const Tensor& B = pb->value;
                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                     if (A[i] >= B[i]) {
                                         if (pa->requires_grad) pa->grad_buf()[i] += g[i];
                                     } else if (pb->requires_grad) {
                                         pb->grad_buf()[i] += g[i];
                                     }
                                 }
                             });
}

// ---------------------------------------------------------------------------
// softmax and norms

inline Var softmax_rows(const Var& x) {
    const Tensor& X = x.value();
    if (X.rank() != 2) detail::shape_fail("softmax_rows", X);
    const std::size_t m = X.rows(), n = X.cols();
    Tensor out(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double mx = X.at(i, 0);
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, X.at(i, j));
        double z = 0;
        for (std::size_t j = 0; j < n; ++j) {
            out.at(i, j) = std::exp(X.at(i, j) - mx);
            z += out.at(i, j);
        }
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= z;
    }
    return detail::make_node("softmax_rows", std::move(out), {x}, [px = x.raw()](Node& self) {
        if (!px->requires_grad) return;
        const Tensor& g = self.grad_buf();
        const Tensor& s = self.value;
        Tensor& dx = px->grad_buf();
        const std::size_t m = s.rows(), n = s.cols();
        for (std::size_t i = 0; i < m; ++i) {
            double inner = 0;
            for (std::size_t j = 0; j < n; ++j) inner += g.at(i, j) * s.at(i, j);
            for (std::size_t j = 0; j < n; ++j)
                dx.at(i, j) += s.at(i, j) * (g.at(i, j) - inner);
        }
    });
}

inline Var softmax_vec(const Var& x) {
    const Tensor& X = x.value();
    if (X.rank() != 1) detail::shape_fail("softmax_vec", X);
    const std::size_t n = X.size();
    Tensor out(Shape{n});
    double mx = X[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, X[j]);
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) {
        out[j] = std::exp(X[j] - mx);
        z += out[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[j] /= z;
    return detail::make_node("softmax_vec", std::move(out), {x}, [px = x.raw()](Node& self) {
        if (!px->requires_grad) return;
        const Tensor& g = self.grad_buf();
        const Tensor& s = self.value;
        Tensor& dx = px->grad_buf();
        double inner = 0;
        for (std::size_t j = 0; j < s.size(); ++j) inner += g[j] * s[j];
        for (std::size_t j = 0; j < s.size(); ++j) dx[j] += s[j] * (g[j] - inner);
    });
}

inline Var row_l2_norm(const Var& x) {
    const Tensor& X = x.value();
    if (X.rank() != 2) detail::shape_fail("row_l2_norm", X);
    const std::size_t m = X.rows(), n = X.cols();
    Tensor out(Shape{m});
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < n; ++j) s += X.at(i, j) * X.at(i, j);
        out[i] = std::sqrt(s);
    }
    return detail::make_node("row_l2_norm", std::move(out), {x}, [px = x.raw()](Node& self) {
        if (!px->requires_grad) return;
        const Tensor& g = self.grad_buf();
        const Tensor& norms = self.value;
        const Tensor& X = px->value;
        Tensor& dx = px->grad_buf();
        for (std::size_t i = 0; i < X.rows(); ++i) {
            if (norms[i] == 0.0) continue;
            const double gi = g[i] / norms[i];
            for (std::size_t j = 0; j < X.cols(); ++j) dx.at(i, j) += gi * X.at(i, j);
        }
    });
}

// ---------------------------------------------------------------------------
// composites

// x (LxD or 1-D) through xW + b
inline Var affine(const Var& x, const Var& w, const Var& b) {
    if (x.value().rank() == 2) return add_bias(matmul(x, w), b);
    return add(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// backward pass

inline std::vector<Node*> topo_order_from(Node* root) {
    // iterative post-order DFS over grad-requiring nodes
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;  // children before parents
}

// Populates grad on every grad-requiring node reachable from `out`.
// `out` must be scalar. Gradients accumulate across calls on leaves;
// call zero_grad between optimization steps.
inline void backward(const Var& out) {
    if (!out.value().is_scalar())
        throw ShapeError("backward: output must be scalar, got " +
                         shape_str(out.value().shape()));
    if (!out.requires_grad()) return;
    std::vector<Node*> order = topo_order_from(out.raw());
    out.raw()->grad_buf()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward) n->backward(*n);
    }
}

// ---------------------------------------------------------------------------
// finite-difference gradient checking

// Max over all input entries of |analytic - numeric| / max(1, |analytic|,
// |numeric|), with numeric gradients from central differences.
inline double grad_check(const std::function<Var(const std::vector<Var>&)>& fn,
                         const std::vector<Tensor>& inputs, double eps = 1e-6) {
    if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");

    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.emplace_back(t, true);
    Var out = fn(vars);
    if (!out.value().is_scalar())
        throw ShapeError("grad_check: function must produce a scalar");
    if (!std::isfinite(out.value().item()))
        throw std::runtime_error("grad_check: non-finite output at evaluation point");
    backward(out);

    std::vector<Tensor> analytic;
    analytic.reserve(vars.size());
    for (Var& v : vars) analytic.push_back(v.grad());

    auto eval_at = [&](const std::vector<Tensor>& pts) {
        std::vector<Var> consts;
        consts.reserve(pts.size());
        for (const Tensor& t : pts) consts.emplace_back(t, false);
        const double y = fn(consts).value().item();
        if (!std::isfinite(y))
            throw std::runtime_error("grad_check: non-finite output at perturbed point");
        return y;
    };

    double max_err = 0.0;
    std::vector<Tensor> probe = inputs;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double orig = probe[k][i];
            probe[k][i] = orig + eps;
            const double fp = eval_at(probe);
            probe[k][i] = orig - eps;
            const double fm = eval_at(probe);
            probe[k][i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[k][i];
            const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
            max_err = std::max(max_err, std::abs(a - numeric) / denom);
        }
    }
    return max_err;
}

}  // namespace mmcl
