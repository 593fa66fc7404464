#pragma once

#include "candida/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

namespace candida {

// Reverse-mode autodiff over Tensor<T>. Graphs are built eagerly; backward()
// walks the tape in reverse topological order. Parameters are leaf nodes with
// requires_grad set; everything trainable hangs off them.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    bool trainable = true;  // parameters only; cleared by freezing
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.data.empty()) grad = Tensor<T>::zeros(value.shape);
    }
    void accumulate(const Tensor<T>& g) {
        ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) grad[i] += g[i];
    }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> constant(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    return n;
}

template <typename T>
Var<T> parameter(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = true;
    return n;
}

namespace detail {

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> back) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    bool any = false;
    for (auto& p : parents)
        if (p->requires_grad) any = true;
    if (any) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(back);
    }
    return n;
}

}  // namespace detail

// Seeds the root with ones (roots are scalars in practice) and runs the tape.
template <typename T>
void backward(const Var<T>& root) {
    if (!root->requires_grad) return;
    // iterative post-order DFS
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node<T>* p = n->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    std::fill(root->grad.data.begin(), root->grad.data.end(), T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

// ---- elementwise ----

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    assert(a->value.same_shape(b->value));
    Tensor<T> v = a->value;
    for (int64_t i = 0; i < v.numel(); ++i) v[i] += b->value[i];
    return detail::make_op<T>(std::move(v), {a, b}, [a, b](Node<T>& n) {
        if (a->requires_grad) a->accumulate(n.grad);
        if (b->requires_grad) b->accumulate(n.grad);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    assert(a->value.same_shape(b->value));
    Tensor<T> v = a->value;
    for (int64_t i = 0; i < v.numel(); ++i) v[i] -= b->value[i];
    return detail::make_op<T>(std::move(v), {a, b}, [a, b](Node<T>& n) {
        if (a->requires_grad) a->accumulate(n.grad);
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i) b->grad[i] -= n.grad[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    assert(a->value.same_shape(b->value));
    Tensor<T> v = a->value;
    for (int64_t i = 0; i < v.numel(); ++i) v[i] *= b->value[i];
    return detail::make_op<T>(std::move(v), {a, b}, [a, b](Node<T>& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i) a->grad[i] += n.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i) b->grad[i] += n.grad[i] * a->value[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
    Tensor<T> v = a->value;
    for (auto& x : v.data) x *= c;
    return detail::make_op<T>(std::move(v), {a}, [a, c](Node<T>& n) {
        a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) a->grad[i] += n.grad[i] * c;
    });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T c) {
    Tensor<T> v = a->value;
    for (auto& x : v.data) x += c;
    return detail::make_op<T>(std::move(v), {a},
                              [a](Node<T>& n) { a->accumulate(n.grad); });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
    return scale(a, T(-1));
}

// x scaled by a 1-element variable s
template <typename T>
Var<T> scale_by(const Var<T>& x, const Var<T>& s) {
    assert(s->value.numel() == 1);
    T sv = s->value[0];
    Tensor<T> v = x->value;
    for (auto& e : v.data) e *= sv;
    return detail::make_op<T>(std::move(v), {x, s}, [x, s, sv](Node<T>& n) {
        if (x->requires_grad) {
            x->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i) x->grad[i] += n.grad[i] * sv;
        }
        if (s->requires_grad) {
            s->ensure_grad();
            T acc = 0;
            for (int64_t i = 0; i < n.grad.numel(); ++i) acc += n.grad[i] * x->value[i];
            s->grad[0] += acc;
        }
    });
}

template <typename T>
Var<T> div_by(const Var<T>& x, const Var<T>& s) {
    assert(s->value.numel() == 1);
    T sv = s->value[0];
    Tensor<T> v = x->value;
    for (auto& e : v.data) e /= sv;
    return detail::make_op<T>(std::move(v), {x, s}, [x, s, sv](Node<T>& n) {
        if (x->requires_grad) {
            x->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i) x->grad[i] += n.grad[i] / sv;
        }
        if (s->requires_grad) {
            s->ensure_grad();
            T acc = 0;
            for (int64_t i = 0; i < n.grad.numel(); ++i) acc += n.grad[i] * x->value[i];
            s->grad[0] -= acc / (sv * sv);
        }
    });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> v = a->value;
    for (auto& x : v.data) x = x > T(0) ? x : T(0);
    return detail::make_op<T>(std::move(v), {a}, [a](Node<T>& n) {
        a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i)
            if (a->value[i] > T(0)) a->grad[i] += n.grad[i];
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> v = a->value;
    for (auto& x : v.data) x = T(1) / (T(1) + std::exp(-x));
    auto out = detail::make_op<T>(std::move(v), {a}, [a](Node<T>& n) {
        a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) {
            T y = n.value[i];
            a->grad[i] += n.grad[i] * y * (T(1) - y);
        }
    });
    return out;
}

template <typename T>
Var<T> log_op(const Var<T>& a) {
    Tensor<T> v = a->value;
    for (auto& x : v.data) x = std::log(x);
    return detail::make_op<T>(std::move(v), {a}, [a](Node<T>& n) {
        a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) a->grad[i] += n.grad[i] / a->value[i];
    });
}

template <typename T>
Var<T> sqrt_op(const Var<T>& a) {
    Tensor<T> v = a->value;
    for (auto& x : v.data) x = std::sqrt(x);
    return detail::make_op<T>(std::move(v), {a}, [a](Node<T>& n) {
        a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i)
            a->grad[i] += n.grad[i] * T(0.5) / n.value[i];
    });
}

template <typename T>
Var<T> pow_scalar(const Var<T>& a, T p) {
    Tensor<T> v = a->value;
    for (auto& x : v.data) x = std::pow(x, p);
    return detail::make_op<T>(std::move(v), {a, }, [a, p](Node<T>& n) {
        a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i)
            a->grad[i] += n.grad[i] * p * std::pow(a->value[i], p - T(1));
    });
}

// elementwise smooth-L1 (quadratic below 1, linear above)
template <typename T>
Var<T> smooth_l1(const Var<T>& a) {
    Tensor<T> v = a->value;
    for (auto& x : v.data) {
        T ax = std::abs(x);
        x = ax < T(1) ? T(0.5) * x * x : ax - T(0.5);
    }
    return detail::make_op<T>(std::move(v), {a}, [a](Node<T>& n) {
        a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) {
            T x = a->value[i];
            T d = std::abs(x) < T(1) ? x : (x > T(0) ? T(1) : T(-1));
            a->grad[i] += n.grad[i] * d;
        }
    });
}

// ---- reductions ----

template <typename T>
Var<T> sum_all(const Var<T>& a) {
    T s = 0;
    for (const auto& x : a->value.data) s += x;
    return detail::make_op<T>(Tensor<T>::scalar(s), {a}, [a](Node<T>& n) {
        a->ensure_grad();
        for (int64_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += n.grad[0];
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
    return scale(sum_all(a), T(1) / T(a->value.numel()));
}

// weighted sum with a constant weight tensor (used for masked means)
template <typename T>
Var<T> weighted_sum(const Var<T>& a, Tensor<T> w) {
    assert(a->value.same_shape(w));
    T s = 0;
    for (int64_t i = 0; i < w.numel(); ++i) s += a->value[i] * w[i];
    auto wc = std::make_shared<Tensor<T>>(std::move(w));
    return detail::make_op<T>(Tensor<T>::scalar(s), {a}, [a, wc](Node<T>& n) {
        a->ensure_grad();
        for (int64_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += n.grad[0] * (*wc)[i];
    });
}

// ---- shape ops ----

template <typename T>
Var<T> reshape(const Var<T>& a, std::vector<int> shape) {
    assert(Tensor<T>::count(shape) == a->value.numel());
    Tensor<T> v(std::move(shape), a->value.data);
    return detail::make_op<T>(std::move(v), {a},
                              [a](Node<T>& n) { a->accumulate(n.grad); });
}

template <typename T>
Var<T> transpose2d(const Var<T>& a) {
    int r = a->value.dim(0), c = a->value.dim(1);
    Tensor<T> v({c, r});
    v.mat(c, r) = a->value.mat(r, c).transpose();
    return detail::make_op<T>(std::move(v), {a}, [a, r, c](Node<T>& n) {
        a->ensure_grad();
        a->grad.mat(r, c) += n.grad.mat(c, r).transpose();
    });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, int start, int len) {
    int r = a->value.dim(0), c = a->value.dim(1);
    assert(start >= 0 && start + len <= r);
    Tensor<T> v({len, c});
    std::copy(a->value.data.begin() + static_cast<size_t>(start) * c,
              a->value.data.begin() + static_cast<size_t>(start + len) * c, v.data.begin());
    return detail::make_op<T>(std::move(v), {a}, [a, start, c](Node<T>& n) {
        a->ensure_grad();
        int len = n.value.dim(0);
        for (int64_t i = 0; i < static_cast<int64_t>(len) * c; ++i)
            a->grad[static_cast<int64_t>(start) * c + i] += n.grad[i];
    });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    assert(!parts.empty());
    int c = parts[0]->value.dim(1);
    int rows = 0;
    for (auto& p : parts) {
        assert(p->value.dim(1) == c);
        rows += p->value.dim(0);
    }
    Tensor<T> v({rows, c});
    size_t off = 0;
    for (auto& p : parts) {
        std::copy(p->value.data.begin(), p->value.data.end(), v.data.begin() + off);
        off += p->value.data.size();
    }
    return detail::make_op<T>(std::move(v), parts, [parts, c](Node<T>& n) {
        size_t off = 0;
        for (auto& p : parts) {
            if (p->requires_grad) {
                p->ensure_grad();
                for (int64_t i = 0; i < p->grad.numel(); ++i)
                    p->grad[i] += n.grad[static_cast<int64_t>(off) + i];
            }
            off += p->value.data.size();
        }
    });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, int start, int len) {
    int r = a->value.dim(0), c = a->value.dim(1);
    assert(start >= 0 && start + len <= c);
    Tensor<T> v({r, len});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < len; ++j) v.at(i, j) = a->value.at(i, start + j);
    return detail::make_op<T>(std::move(v), {a}, [a, start](Node<T>& n) {
        a->ensure_grad();
        int r = n.value.dim(0), len = n.value.dim(1);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < len; ++j) a->grad.at(i, start + j) += n.grad.at(i, j);
    });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    assert(!parts.empty());
    int r = parts[0]->value.dim(0);
    int cols = 0;
    for (auto& p : parts) {
        assert(p->value.dim(0) == r);
        cols += p->value.dim(1);
    }
    Tensor<T> v({r, cols});
    int off = 0;
    for (auto& p : parts) {
        int pc = p->value.dim(1);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < pc; ++j) v.at(i, off + j) = p->value.at(i, j);
        off += pc;
    }
    return detail::make_op<T>(std::move(v), parts, [parts, r](Node<T>& n) {
        int off = 0;
        for (auto& p : parts) {
            int pc = p->value.dim(1);
            if (p->requires_grad) {
                p->ensure_grad();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < pc; ++j) p->grad.at(i, j) += n.grad.at(i, off + j);
            }
            off += pc;
        }
    });
}

// ---- linear algebra ----

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    int m = a->value.dim(0), k = a->value.dim(1), n2 = b->value.dim(1);
    assert(b->value.dim(0) == k);
    Tensor<T> v({m, n2});
    v.mat(m, n2).noalias() = a->value.mat(m, k) * b->value.mat(k, n2);
    return detail::make_op<T>(std::move(v), {a, b}, [a, b, m, k, n2](Node<T>& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad.mat(m, k).noalias() += n.grad.mat(m, n2) * b->value.mat(k, n2).transpose();
        }
        if (b->requires_grad) {
            b->ensure_grad();
            b->grad.mat(k, n2).noalias() += a->value.mat(m, k).transpose() * n.grad.mat(m, n2);
        }
    });
}

// x[N,d] + b[d] broadcast over rows
template <typename T>
Var<T> add_rowvec(const Var<T>& x, const Var<T>& b) {
    int r = x->value.dim(0), c = x->value.dim(1);
    assert(b->value.numel() == c);
    Tensor<T> v = x->value;
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) v.at(i, j) += b->value[j];
    return detail::make_op<T>(std::move(v), {x, b}, [x, b, r, c](Node<T>& n) {
        if (x->requires_grad) x->accumulate(n.grad);
        if (b->requires_grad) {
            b->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) b->grad[j] += n.grad.at(i, j);
        }
    });
}

// ---- row-wise softmax family ----

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
    int r = a->value.dim(0), c = a->value.dim(1);
    Tensor<T> v({r, c});
    for (int i = 0; i < r; ++i) {
        T mx = a->value.at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, a->value.at(i, j));
        T s = 0;
        for (int j = 0; j < c; ++j) {
            T e = std::exp(a->value.at(i, j) - mx);
            v.at(i, j) = e;
            s += e;
        }
        for (int j = 0; j < c; ++j) v.at(i, j) /= s;
    }
    return detail::make_op<T>(std::move(v), {a}, [a, r, c](Node<T>& n) {
        a->ensure_grad();
        for (int i = 0; i < r; ++i) {
            T dot = 0;
            for (int j = 0; j < c; ++j) dot += n.grad.at(i, j) * n.value.at(i, j);
            for (int j = 0; j < c; ++j)
                a->grad.at(i, j) += n.value.at(i, j) * (n.grad.at(i, j) - dot);
        }
    });
}

template <typename T>
Var<T> log_softmax_rows(const Var<T>& a) {
    int r = a->value.dim(0), c = a->value.dim(1);
    Tensor<T> v({r, c});
    for (int i = 0; i < r; ++i) {
        T mx = a->value.at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, a->value.at(i, j));
        T s = 0;
        for (int j = 0; j < c; ++j) s += std::exp(a->value.at(i, j) - mx);
        T lse = mx + std::log(s);
        for (int j = 0; j < c; ++j) v.at(i, j) = a->value.at(i, j) - lse;
    }
    return detail::make_op<T>(std::move(v), {a}, [a, r, c](Node<T>& n) {
        a->ensure_grad();
        for (int i = 0; i < r; ++i) {
            T gs = 0;
            for (int j = 0; j < c; ++j) gs += n.grad.at(i, j);
            for (int j = 0; j < c; ++j)
                a->grad.at(i, j) += n.grad.at(i, j) - std::exp(n.value.at(i, j)) * gs;
        }
    });
}

// adds a constant additive mask (e.g. -1e9 on padded keys) before softmax
template <typename T>
Var<T> add_const(const Var<T>& a, Tensor<T> c) {
    assert(a->value.same_shape(c));
    Tensor<T> v = a->value;
    for (int64_t i = 0; i < v.numel(); ++i) v[i] += c[i];
    return detail::make_op<T>(std::move(v), {a},
                              [a](Node<T>& n) { a->accumulate(n.grad); });
}

// ---- normalization ----

// per-row layer norm with affine parameters
template <typename T>
Var<T> layer_norm_rows(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                       T eps = T(1e-5)) {
    int r = x->value.dim(0), c = x->value.dim(1);
    assert(gamma->value.numel() == c && beta->value.numel() == c);
    Tensor<T> v({r, c});
    auto xhat = std::make_shared<Tensor<T>>(std::vector<int>{r, c});
    auto istd = std::make_shared<std::vector<T>>(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) {
        T mean = 0;
        for (int j = 0; j < c; ++j) mean += x->value.at(i, j);
        mean /= T(c);
        T var = 0;
        for (int j = 0; j < c; ++j) {
            T d = x->value.at(i, j) - mean;
            var += d * d;
        }
        var /= T(c);
        T is = T(1) / std::sqrt(var + eps);
        (*istd)[static_cast<size_t>(i)] = is;
        for (int j = 0; j < c; ++j) {
            T xh = (x->value.at(i, j) - mean) * is;
            xhat->at(i, j) = xh;
            v.at(i, j) = xh * gamma->value[j] + beta->value[j];
        }
    }
    return detail::make_op<T>(
        std::move(v), {x, gamma, beta}, [x, gamma, beta, xhat, istd, r, c](Node<T>& n) {
            if (gamma->requires_grad) gamma->ensure_grad();
            if (beta->requires_grad) beta->ensure_grad();
            if (x->requires_grad) x->ensure_grad();
            for (int i = 0; i < r; ++i) {
                T m1 = 0, m2 = 0;
                for (int j = 0; j < c; ++j) {
                    T dxh = n.grad.at(i, j) * gamma->value[j];
                    m1 += dxh;
                    m2 += dxh * xhat->at(i, j);
                }
                m1 /= T(c);
                m2 /= T(c);
                for (int j = 0; j < c; ++j) {
                    if (gamma->requires_grad)
                        gamma->grad[j] += n.grad.at(i, j) * xhat->at(i, j);
                    if (beta->requires_grad) beta->grad[j] += n.grad.at(i, j);
                    if (x->requires_grad) {
                        T dxh = n.grad.at(i, j) * gamma->value[j];
                        x->grad.at(i, j) +=
                            (*istd)[static_cast<size_t>(i)] *
                            (dxh - m1 - xhat->at(i, j) * m2);
                    }
                }
            }
        });
}

// group norm on [C,H,W] with per-channel affine
template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int groups,
                  T eps = T(1e-5)) {
    int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
    assert(C % groups == 0);
    int cg = C / groups;
    int64_t gsz = static_cast<int64_t>(cg) * H * W;
    Tensor<T> v(x->value.shape);
    auto xhat = std::make_shared<Tensor<T>>(x->value.shape);
    auto istd = std::make_shared<std::vector<T>>(static_cast<size_t>(groups));
    for (int g = 0; g < groups; ++g) {
        int64_t base = static_cast<int64_t>(g) * gsz;
        T mean = 0;
        for (int64_t i = 0; i < gsz; ++i) mean += x->value[base + i];
        mean /= T(gsz);
        T var = 0;
        for (int64_t i = 0; i < gsz; ++i) {
            T d = x->value[base + i] - mean;
            var += d * d;
        }
        var /= T(gsz);
        T is = T(1) / std::sqrt(var + eps);
        (*istd)[static_cast<size_t>(g)] = is;
        for (int64_t i = 0; i < gsz; ++i) {
            T xh = (x->value[base + i] - mean) * is;
            (*xhat)[base + i] = xh;
            int ch = g * cg + static_cast<int>(i / (static_cast<int64_t>(H) * W));
            v[base + i] = xh * gamma->value[ch] + beta->value[ch];
        }
    }
    return detail::make_op<T>(
        std::move(v), {x, gamma, beta},
        [x, gamma, beta, xhat, istd, groups, cg, H, W](Node<T>& n) {
            int64_t hw = static_cast<int64_t>(H) * W;
            int64_t gsz = cg * hw;
            if (gamma->requires_grad) gamma->ensure_grad();
            if (beta->requires_grad) beta->ensure_grad();
            if (x->requires_grad) x->ensure_grad();
            for (int g = 0; g < groups; ++g) {
                int64_t base = static_cast<int64_t>(g) * gsz;
                T m1 = 0, m2 = 0;
                for (int64_t i = 0; i < gsz; ++i) {
                    int ch = g * cg + static_cast<int>(i / hw);
                    T dxh = n.grad[base + i] * gamma->value[ch];
                    m1 += dxh;
                    m2 += dxh * (*xhat)[base + i];
                }
                m1 /= T(gsz);
                m2 /= T(gsz);
                for (int64_t i = 0; i < gsz; ++i) {
                    int ch = g * cg + static_cast<int>(i / hw);
                    if (gamma->requires_grad)
                        gamma->grad[ch] += n.grad[base + i] * (*xhat)[base + i];
                    if (beta->requires_grad) beta->grad[ch] += n.grad[base + i];
                    if (x->requires_grad) {
                        T dxh = n.grad[base + i] * gamma->value[ch];
                        x->grad[base + i] += (*istd)[static_cast<size_t>(g)] *
                                             (dxh - m1 - (*xhat)[base + i] * m2);
                    }
                }
            }
        });
}

// ---- convolution ----

namespace detail {

template <typename T>
void im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad, int ho, int wo,
            Tensor<T>& col) {
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    // col: [C*kh*kw, ho*wo]
    int64_t ocols = static_cast<int64_t>(ho) * wo;
    for (int c = 0; c < C; ++c)
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                int64_t row = (static_cast<int64_t>(c) * kh + ki) * kw + kj;
                T* dst = col.data.data() + row * ocols;
                for (int oi = 0; oi < ho; ++oi) {
                    int ii = oi * stride + ki - pad;
                    for (int oj = 0; oj < wo; ++oj) {
                        int jj = oj * stride + kj - pad;
                        dst[static_cast<int64_t>(oi) * wo + oj] =
                            (ii >= 0 && ii < H && jj >= 0 && jj < W) ? x.at(c, ii, jj) : T(0);
                    }
                }
            }
}

template <typename T>
void col2im_accum(const Tensor<T>& col, int C, int H, int W, int kh, int kw, int stride,
                  int pad, int ho, int wo, Tensor<T>& out) {
    int64_t ocols = static_cast<int64_t>(ho) * wo;
    for (int c = 0; c < C; ++c)
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                int64_t row = (static_cast<int64_t>(c) * kh + ki) * kw + kj;
                const T* src = col.data.data() + row * ocols;
                for (int oi = 0; oi < ho; ++oi) {
                    int ii = oi * stride + ki - pad;
                    if (ii < 0 || ii >= H) continue;
                    for (int oj = 0; oj < wo; ++oj) {
                        int jj = oj * stride + kj - pad;
                        if (jj < 0 || jj >= W) continue;
                        out.at(c, ii, jj) += src[static_cast<int64_t>(oi) * wo + oj];
                    }
                }
            }
}

}  // namespace detail

// x: [Ci,H,W], w: [Co,Ci,kh,kw], b: [Co] (may be null)
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
    int Ci = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
    int Co = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
    assert(w->value.dim(1) == Ci);
    int ho = (H + 2 * pad - kh) / stride + 1;
    int wo = (W + 2 * pad - kw) / stride + 1;
    int krows = Ci * kh * kw;
    int64_t ocols = static_cast<int64_t>(ho) * wo;
    auto col = std::make_shared<Tensor<T>>(std::vector<int>{krows, static_cast<int>(ocols)});
    detail::im2col(x->value, kh, kw, stride, pad, ho, wo, *col);
    Tensor<T> v({Co, ho, wo});
    v.mat(Co, static_cast<int>(ocols)).noalias() =
        w->value.mat(Co, krows) * col->mat(krows, static_cast<int>(ocols));
    if (b) {
        for (int c = 0; c < Co; ++c)
            for (int64_t i = 0; i < ocols; ++i) v[c * ocols + i] += b->value[c];
    }
    std::vector<Var<T>> parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
    return detail::make_op<T>(
        std::move(v), std::move(parents),
        [x, w, b, col, Ci, H, W, kh, kw, stride, pad, ho, wo, Co, krows, ocols](Node<T>& n) {
            int oc = static_cast<int>(ocols);
            if (w->requires_grad) {
                w->ensure_grad();
                w->grad.mat(Co, krows).noalias() +=
                    n.grad.mat(Co, oc) * col->mat(krows, oc).transpose();
            }
            if (b && b->requires_grad) {
                b->ensure_grad();
                for (int c = 0; c < Co; ++c) {
                    T s = 0;
                    for (int64_t i = 0; i < ocols; ++i) s += n.grad[c * ocols + i];
                    b->grad[c] += s;
                }
            }
            if (x->requires_grad) {
                x->ensure_grad();
                Tensor<T> gcol({krows, oc});
                gcol.mat(krows, oc).noalias() =
                    w->value.mat(Co, krows).transpose() * n.grad.mat(Co, oc);
                detail::col2im_accum(gcol, Ci, H, W, kh, kw, stride, pad, ho, wo, x->grad);
            }
        });
}

// global spatial mean: [C,H,W] -> [C]
template <typename T>
Var<T> mean_spatial(const Var<T>& x) {
    int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
    int64_t hw = static_cast<int64_t>(H) * W;
    Tensor<T> v({C});
    for (int c = 0; c < C; ++c) {
        T s = 0;
        for (int64_t i = 0; i < hw; ++i) s += x->value[c * hw + i];
        v[c] = s / T(hw);
    }
    return detail::make_op<T>(std::move(v), {x}, [x, C, hw](Node<T>& n) {
        x->ensure_grad();
        for (int c = 0; c < C; ++c)
            for (int64_t i = 0; i < hw; ++i) x->grad[c * hw + i] += n.grad[c] / T(hw);
    });
}

// ---- bilinear interpolation ----

struct BilinearTap {
    int64_t idx[4];
    double w[4];
};

// half-pixel-centers sampling taps for oh x ow output over ih x iw input
inline std::vector<BilinearTap> bilinear_taps(int ih, int iw, int oh, int ow) {
    std::vector<BilinearTap> taps(static_cast<size_t>(oh) * ow);
    double sy = static_cast<double>(ih) / oh;
    double sx = static_cast<double>(iw) / ow;
    for (int oy = 0; oy < oh; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y0c = std::clamp(y0, 0, ih - 1);
        int y1c = std::clamp(y0 + 1, 0, ih - 1);
        for (int ox = 0; ox < ow; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x0c = std::clamp(x0, 0, iw - 1);
            int x1c = std::clamp(x0 + 1, 0, iw - 1);
            BilinearTap& t = taps[static_cast<size_t>(oy) * ow + ox];
            t.idx[0] = static_cast<int64_t>(y0c) * iw + x0c;
            t.idx[1] = static_cast<int64_t>(y0c) * iw + x1c;
            t.idx[2] = static_cast<int64_t>(y1c) * iw + x0c;
            t.idx[3] = static_cast<int64_t>(y1c) * iw + x1c;
            t.w[0] = (1 - wy) * (1 - wx);
            t.w[1] = (1 - wy) * wx;
            t.w[2] = wy * (1 - wx);
            t.w[3] = wy * wx;
        }
    }
    return taps;
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int oh, int ow) {
    int ih = x.dim(0), iw = x.dim(1);
    auto taps = bilinear_taps(ih, iw, oh, ow);
    Tensor<T> out({oh, ow});
    for (size_t i = 0; i < taps.size(); ++i) {
        const auto& t = taps[i];
        double s = 0;
        for (int k = 0; k < 4; ++k) s += t.w[k] * static_cast<double>(x[t.idx[k]]);
        out[static_cast<int64_t>(i)] = static_cast<T>(s);
    }
    return out;
}

// [ih,iw] -> [oh,ow]
template <typename T>
Var<T> bilinear_upsample(const Var<T>& x, int oh, int ow) {
    int ih = x->value.dim(0), iw = x->value.dim(1);
    auto taps = std::make_shared<std::vector<BilinearTap>>(bilinear_taps(ih, iw, oh, ow));
    Tensor<T> v({oh, ow});
    for (size_t i = 0; i < taps->size(); ++i) {
        const auto& t = (*taps)[i];
        double s = 0;
        for (int k = 0; k < 4; ++k) s += t.w[k] * static_cast<double>(x->value[t.idx[k]]);
        v[static_cast<int64_t>(i)] = static_cast<T>(s);
    }
    return detail::make_op<T>(std::move(v), {x}, [x, taps](Node<T>& n) {
        x->ensure_grad();
        for (size_t i = 0; i < taps->size(); ++i) {
            const auto& t = (*taps)[i];
            T g = n.grad[static_cast<int64_t>(i)];
            for (int k = 0; k < 4; ++k) x->grad[t.idx[k]] += static_cast<T>(t.w[k]) * g;
        }
    });
}

// L2 norm of a flat vector as a 1-element var
template <typename T>
Var<T> l2_norm(const Var<T>& x, T eps = T(1e-12)) {
    return sqrt_op(add_scalar(sum_all(mul(x, x)), eps));
}

}  // namespace candida
