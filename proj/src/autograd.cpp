#include "diffcl/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <tuple>
#include <unordered_set>
#include <utility>

#include <Eigen/Dense>
#include <fftw3.h>

namespace diffcl {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;

void Node::ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor::zeros(value.shape);
}

void Node::accumulate(const Tensor& g) {
    ensure_grad();
    for (std::size_t i = 0; i < g.numel(); ++i) grad.data[i] += g.data[i];
}

NodePtr constant(Tensor v) { return std::make_shared<Node>(std::move(v)); }

NodePtr make_param(Tensor v, std::string name) {
    auto n = std::make_shared<Node>(std::move(v));
    n->requires_grad = true;
    n->name = std::move(name);
    return n;
}

namespace {

NodePtr make_op(Tensor value, std::vector<NodePtr> parents,
                std::function<void(Node&)> bwd) {
    auto n = std::make_shared<Node>(std::move(value));
    for (const auto& p : parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    n->parents = std::move(parents);
    if (n->requires_grad) n->backward_fn = std::move(bwd);
    return n;
}

void check_same(const NodePtr& a, const NodePtr& b, const char* what) {
    if (!same_shape(a->value.shape, b->value.shape)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a->value.shape) +
                         " vs " + shape_str(b->value.shape));
    }
}

}  // namespace

void backward(const NodePtr& root) {
    if (root->value.numel() != 1) {
        throw ShapeError("backward: root must be scalar, got " + shape_str(root->value.shape));
    }
    root->ensure_grad();
    root->grad.data[0] += 1.0;
    if (!root->requires_grad) return;

    // reverse post-order DFS over the requires_grad subgraph
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& top = stack.back();
        Node* n = top.first;
        if (top.second < n->parents.size()) {
            Node* p = n->parents[top.second++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

void zero_all_grads(const std::vector<NodePtr>& params) {
    for (const auto& p : params) p->zero_grad();
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

NodePtr add(const NodePtr& a, const NodePtr& b) {
    check_same(a, b, "add");
    Tensor v(a->value.shape);
    for (std::size_t i = 0; i < v.numel(); ++i) v.data[i] = a->value.data[i] + b->value.data[i];
    return make_op(std::move(v), {a, b}, [a, b](Node& self) {
        if (a->requires_grad) a->accumulate(self.grad);
        if (b->requires_grad) b->accumulate(self.grad);
    });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
    check_same(a, b, "sub");
    Tensor v(a->value.shape);
    for (std::size_t i = 0; i < v.numel(); ++i) v.data[i] = a->value.data[i] - b->value.data[i];
    return make_op(std::move(v), {a, b}, [a, b](Node& self) {
        if (a->requires_grad) a->accumulate(self.grad);
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < self.grad.numel(); ++i)
                b->grad.data[i] -= self.grad.data[i];
        }
    });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
    check_same(a, b, "mul");
    Tensor v(a->value.shape);
    for (std::size_t i = 0; i < v.numel(); ++i) v.data[i] = a->value.data[i] * b->value.data[i];
    return make_op(std::move(v), {a, b}, [a, b](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < self.grad.numel(); ++i)
                a->grad.data[i] += self.grad.data[i] * b->value.data[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < self.grad.numel(); ++i)
                b->grad.data[i] += self.grad.data[i] * a->value.data[i];
        }
    });
}

NodePtr div_(const NodePtr& a, const NodePtr& b) {
    check_same(a, b, "div");
    Tensor v(a->value.shape);
    for (std::size_t i = 0; i < v.numel(); ++i) v.data[i] = a->value.data[i] / b->value.data[i];
    return make_op(std::move(v), {a, b}, [a, b](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < self.grad.numel(); ++i)
                a->grad.data[i] += self.grad.data[i] / b->value.data[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < self.grad.numel(); ++i) {
                const double bv = b->value.data[i];
                b->grad.data[i] -= self.grad.data[i] * a->value.data[i] / (bv * bv);
            }
        }
    });
}

NodePtr add_scalar(const NodePtr& a, double s) {
    Tensor v(a->value.shape);
    for (std::size_t i = 0; i < v.numel(); ++i) v.data[i] = a->value.data[i] + s;
    return make_op(std::move(v), {a}, [a](Node& self) { a->accumulate(self.grad); });
}

NodePtr mul_scalar(const NodePtr& a, double s) {
    Tensor v(a->value.shape);
    for (std::size_t i = 0; i < v.numel(); ++i) v.data[i] = a->value.data[i] * s;
    return make_op(std::move(v), {a}, [a, s](Node& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i)
            a->grad.data[i] += self.grad.data[i] * s;
    });
}

NodePtr relu(const NodePtr& a) {
    Tensor v(a->value.shape);
    for (std::size_t i = 0; i < v.numel(); ++i) v.data[i] = std::max(0.0, a->value.data[i]);
    return make_op(std::move(v), {a}, [a](Node& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i)
            if (a->value.data[i] > 0.0) a->grad.data[i] += self.grad.data[i];
    });
}

NodePtr leaky_relu(const NodePtr& a, double slope) {
    Tensor v(a->value.shape);
    for (std::size_t i = 0; i < v.numel(); ++i) {
        const double x = a->value.data[i];
        v.data[i] = x > 0.0 ? x : slope * x;
    }
    return make_op(std::move(v), {a}, [a, slope](Node& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i)
            a->grad.data[i] += self.grad.data[i] * (a->value.data[i] > 0.0 ? 1.0 : slope);
    });
}

NodePtr sigmoid(const NodePtr& a) {
    Tensor v(a->value.shape);
    for (std::size_t i = 0; i < v.numel(); ++i) v.data[i] = 1.0 / (1.0 + std::exp(-a->value.data[i]));
    return make_op(std::move(v), {a}, [a](Node& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) {
            const double y = self.value.data[i];
            a->grad.data[i] += self.grad.data[i] * y * (1.0 - y);
        }
    });
}

NodePtr softplus(const NodePtr& a) {
    Tensor v(a->value.shape);
    for (std::size_t i = 0; i < v.numel(); ++i) {
        const double x = a->value.data[i];
        v.data[i] = x > 30.0 ? x : std::log1p(std::exp(x));
    }
    return make_op(std::move(v), {a}, [a](Node& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) {
            const double x = a->value.data[i];
            a->grad.data[i] += self.grad.data[i] / (1.0 + std::exp(-x));
        }
    });
}

NodePtr exp_(const NodePtr& a) {
    Tensor v(a->value.shape);
    for (std::size_t i = 0; i < v.numel(); ++i) v.data[i] = std::exp(a->value.data[i]);
    return make_op(std::move(v), {a}, [a](Node& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i)
            a->grad.data[i] += self.grad.data[i] * self.value.data[i];
    });
}

NodePtr log_(const NodePtr& a) {
    Tensor v(a->value.shape);
    for (std::size_t i = 0; i < v.numel(); ++i) v.data[i] = std::log(a->value.data[i]);
    return make_op(std::move(v), {a}, [a](Node& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i)
            a->grad.data[i] += self.grad.data[i] / a->value.data[i];
    });
}

NodePtr clamp_min(const NodePtr& a, double lo) {
    Tensor v(a->value.shape);
    for (std::size_t i = 0; i < v.numel(); ++i) v.data[i] = std::max(lo, a->value.data[i]);
    return make_op(std::move(v), {a}, [a, lo](Node& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i)
            if (a->value.data[i] > lo) a->grad.data[i] += self.grad.data[i];
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

NodePtr sum_all(const NodePtr& a) {
    Tensor v({1});
    double s = 0.0;
    for (double x : a->value.data) s += x;
    v.data[0] = s;
    return make_op(std::move(v), {a}, [a](Node& self) {
        a->ensure_grad();
        const double g = self.grad.data[0];
        for (auto& x : a->grad.data) x += g;
    });
}

NodePtr mean_all(const NodePtr& a) {
    const double inv = 1.0 / static_cast<double>(a->value.numel());
    return mul_scalar(sum_all(a), inv);
}

NodePtr sum_per_channel(const NodePtr& a) {
    if (a->value.ndim() < 2) throw ShapeError("sum_per_channel: need at least 2 dims");
    const int n = a->value.dim(0);
    const int c = a->value.dim(1);
    std::size_t spatial = 1;
    for (int i = 2; i < a->value.ndim(); ++i) spatial *= static_cast<std::size_t>(a->value.dim(i));
    Tensor v({c});
    for (int in = 0; in < n; ++in) {
        for (int ic = 0; ic < c; ++ic) {
            const double* p = a->value.data.data() + (static_cast<std::size_t>(in) * c + ic) * spatial;
            double s = 0.0;
            for (std::size_t i = 0; i < spatial; ++i) s += p[i];
            v.data[static_cast<std::size_t>(ic)] += s;
        }
    }
    return make_op(std::move(v), {a}, [a, n, c, spatial](Node& self) {
        a->ensure_grad();
        for (int in = 0; in < n; ++in) {
            for (int ic = 0; ic < c; ++ic) {
                double* p = a->grad.data.data() + (static_cast<std::size_t>(in) * c + ic) * spatial;
                const double g = self.grad.data[static_cast<std::size_t>(ic)];
                for (std::size_t i = 0; i < spatial; ++i) p[i] += g;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

NodePtr linear(const NodePtr& x, const NodePtr& w, const NodePtr& b) {
    if (x->value.ndim() != 2 || w->value.ndim() != 2 || x->value.dim(1) != w->value.dim(1)) {
        throw ShapeError("linear: incompatible shapes " + shape_str(x->value.shape) + " and " +
                         shape_str(w->value.shape));
    }
    const int rows = x->value.dim(0);
    const int in = x->value.dim(1);
    const int out = w->value.dim(0);
    Tensor v({rows, out});
    {
        MapCM X(x->value.data.data(), rows, in);
        MapCM W(w->value.data.data(), out, in);
        MapM Y(v.data.data(), rows, out);
        Y.noalias() = X * W.transpose();
        if (b) {
            for (int r = 0; r < rows; ++r)
                for (int o = 0; o < out; ++o) v.data[static_cast<std::size_t>(r) * out + o] += b->value.data[static_cast<std::size_t>(o)];
        }
    }
    std::vector<NodePtr> parents = {x, w};
    if (b) parents.push_back(b);
    return make_op(std::move(v), std::move(parents), [x, w, b, rows, in, out](Node& self) {
        MapCM G(self.grad.data.data(), rows, out);
        if (x->requires_grad) {
            x->ensure_grad();
            MapM DX(x->grad.data.data(), rows, in);
            MapCM W(w->value.data.data(), out, in);
            DX.noalias() += G * W;
        }
        if (w->requires_grad) {
            w->ensure_grad();
            MapM DW(w->grad.data.data(), out, in);
            MapCM X(x->value.data.data(), rows, in);
            DW.noalias() += G.transpose() * X;
        }
        if (b && b->requires_grad) {
            b->ensure_grad();
            for (int r = 0; r < rows; ++r)
                for (int o = 0; o < out; ++o)
                    b->grad.data[static_cast<std::size_t>(o)] += self.grad.data[static_cast<std::size_t>(r) * out + o];
        }
    });
}

NodePtr matmul_nt(const NodePtr& a, const NodePtr& b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(1)) {
        throw ShapeError("matmul_nt: incompatible shapes");
    }
    const int p = a->value.dim(0);
    const int d = a->value.dim(1);
    const int q = b->value.dim(0);
    Tensor v({p, q});
    {
        MapCM A(a->value.data.data(), p, d);
        MapCM B(b->value.data.data(), q, d);
        MapM Y(v.data.data(), p, q);
        Y.noalias() = A * B.transpose();
    }
    return make_op(std::move(v), {a, b}, [a, b, p, d, q](Node& self) {
        MapCM G(self.grad.data.data(), p, q);
        if (a->requires_grad) {
            a->ensure_grad();
            MapM DA(a->grad.data.data(), p, d);
            MapCM B(b->value.data.data(), q, d);
            DA.noalias() += G * B;
        }
        if (b->requires_grad) {
            b->ensure_grad();
            MapM DB(b->grad.data.data(), q, d);
            MapCM A(a->value.data.data(), p, d);
            DB.noalias() += G.transpose() * A;
        }
    });
}

// ---------------------------------------------------------------------------
// shape / layout
// ---------------------------------------------------------------------------

NodePtr reshape(const NodePtr& a, Shape s) {
    if (shape_numel(s) != a->value.numel()) {
        throw ShapeError("reshape: numel mismatch " + shape_str(a->value.shape) + " -> " +
                         shape_str(s));
    }
    Tensor v(std::move(s), a->value.data);
    return make_op(std::move(v), {a}, [a](Node& self) { a->accumulate(self.grad); });
}

NodePtr concat_ch(const NodePtr& a, const NodePtr& b) {
    const auto& sa = a->value.shape;
    const auto& sb = b->value.shape;
    if (sa.size() != sb.size() || sa.size() < 2 || sa[0] != sb[0]) {
        throw ShapeError("concat_ch: incompatible shapes");
    }
    for (std::size_t i = 2; i < sa.size(); ++i) {
        if (sa[i] != sb[i]) throw ShapeError("concat_ch: spatial mismatch");
    }
    const int n = sa[0];
    const int ca = sa[1];
    const int cb = sb[1];
    std::size_t spatial = 1;
    for (std::size_t i = 2; i < sa.size(); ++i) spatial *= static_cast<std::size_t>(sa[i]);
    Shape so = sa;
    so[1] = ca + cb;
    Tensor v(so);
    const std::size_t block_a = static_cast<std::size_t>(ca) * spatial;
    const std::size_t block_b = static_cast<std::size_t>(cb) * spatial;
    for (int in = 0; in < n; ++in) {
        std::memcpy(v.data.data() + static_cast<std::size_t>(in) * (block_a + block_b),
                    a->value.data.data() + static_cast<std::size_t>(in) * block_a,
                    block_a * sizeof(double));
        std::memcpy(v.data.data() + static_cast<std::size_t>(in) * (block_a + block_b) + block_a,
                    b->value.data.data() + static_cast<std::size_t>(in) * block_b,
                    block_b * sizeof(double));
    }
    return make_op(std::move(v), {a, b}, [a, b, n, block_a, block_b](Node& self) {
        for (int in = 0; in < n; ++in) {
            const double* g = self.grad.data.data() + static_cast<std::size_t>(in) * (block_a + block_b);
            if (a->requires_grad) {
                a->ensure_grad();
                double* ga = a->grad.data.data() + static_cast<std::size_t>(in) * block_a;
                for (std::size_t i = 0; i < block_a; ++i) ga[i] += g[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                double* gb = b->grad.data.data() + static_cast<std::size_t>(in) * block_b;
                for (std::size_t i = 0; i < block_b; ++i) gb[i] += g[block_a + i];
            }
        }
    });
}

NodePtr gather_rows(const NodePtr& a, std::vector<std::size_t> idx, int row_len) {
    const std::size_t rows = a->value.numel() / static_cast<std::size_t>(row_len);
    for (std::size_t r : idx) {
        if (r >= rows) throw ShapeError("gather_rows: index out of range");
    }
    Tensor v({static_cast<int>(idx.size()), row_len});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::memcpy(v.data.data() + i * static_cast<std::size_t>(row_len),
                    a->value.data.data() + idx[i] * static_cast<std::size_t>(row_len),
                    static_cast<std::size_t>(row_len) * sizeof(double));
    }
    auto idx_keep = std::make_shared<std::vector<std::size_t>>(std::move(idx));
    return make_op(std::move(v), {a}, [a, idx_keep, row_len](Node& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < idx_keep->size(); ++i) {
            double* dst = a->grad.data.data() + (*idx_keep)[i] * static_cast<std::size_t>(row_len);
            const double* g = self.grad.data.data() + i * static_cast<std::size_t>(row_len);
            for (int j = 0; j < row_len; ++j) dst[j] += g[j];
        }
    });
}

NodePtr permute_seq(const NodePtr& a, std::vector<int> idx) {
    if (a->value.ndim() != 3) throw ShapeError("permute_seq: expected [N,S,C]");
    const int n = a->value.dim(0);
    const int s = a->value.dim(1);
    const int c = a->value.dim(2);
    if (static_cast<int>(idx.size()) != s) throw ShapeError("permute_seq: index length mismatch");
    Tensor v(a->value.shape);
    for (int in = 0; in < n; ++in) {
        for (int is = 0; is < s; ++is) {
            std::memcpy(v.data.data() + (static_cast<std::size_t>(in) * s + is) * c,
                        a->value.data.data() + (static_cast<std::size_t>(in) * s + idx[static_cast<std::size_t>(is)]) * c,
                        static_cast<std::size_t>(c) * sizeof(double));
        }
    }
    auto idx_keep = std::make_shared<std::vector<int>>(std::move(idx));
    return make_op(std::move(v), {a}, [a, idx_keep, n, s, c](Node& self) {
        a->ensure_grad();
        for (int in = 0; in < n; ++in) {
            for (int is = 0; is < s; ++is) {
                double* dst = a->grad.data.data() + (static_cast<std::size_t>(in) * s + (*idx_keep)[static_cast<std::size_t>(is)]) * c;
                const double* g = self.grad.data.data() + (static_cast<std::size_t>(in) * s + is) * c;
                for (int j = 0; j < c; ++j) dst[j] += g[j];
            }
        }
    });
}

}  // namespace diffcl
