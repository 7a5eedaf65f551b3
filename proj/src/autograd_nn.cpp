#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <map>
#include <mutex>
#include <tuple>

#include <Eigen/Dense>
#include <fftw3.h>

#include "diffcl/autograd.hpp"

namespace diffcl {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;

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

struct ConvDims {
    int n, cin, h, l, d;
    int cout, k;
    int stride, pad;
    int ho, lo, dov;
    std::size_t in_spatial() const { return static_cast<std::size_t>(h) * l * d; }
    std::size_t out_spatial() const { return static_cast<std::size_t>(ho) * lo * dov; }
    std::size_t patch() const { return static_cast<std::size_t>(cin) * k * k * k; }
};

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// col: [cin*k^3, out_spatial] for one sample
void im2col(const double* x, const ConvDims& cd, PadMode mode, double* col) {
    const int k = cd.k;
    std::size_t row = 0;
    for (int ci = 0; ci < cd.cin; ++ci) {
        const double* xc = x + static_cast<std::size_t>(ci) * cd.in_spatial();
        for (int kz = 0; kz < k; ++kz)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    double* out = col + row * cd.out_spatial();
                    std::size_t idx = 0;
                    for (int oz = 0; oz < cd.ho; ++oz) {
                        const int iz = oz * cd.stride - cd.pad + kz;
                        for (int oy = 0; oy < cd.lo; ++oy) {
                            const int iy = oy * cd.stride - cd.pad + ky;
                            for (int ox = 0; ox < cd.dov; ++ox, ++idx) {
                                const int ix = ox * cd.stride - cd.pad + kx;
                                if (mode == PadMode::Zero) {
                                    if (iz < 0 || iz >= cd.h || iy < 0 || iy >= cd.l || ix < 0 ||
                                        ix >= cd.d) {
                                        out[idx] = 0.0;
                                    } else {
                                        out[idx] = xc[(static_cast<std::size_t>(iz) * cd.l + iy) * cd.d + ix];
                                    }
                                } else {
                                    const int cz = clampi(iz, 0, cd.h - 1);
                                    const int cy = clampi(iy, 0, cd.l - 1);
                                    const int cx = clampi(ix, 0, cd.d - 1);
                                    out[idx] = xc[(static_cast<std::size_t>(cz) * cd.l + cy) * cd.d + cx];
                                }
                            }
                        }
                    }
                    ++row;
                }
    }
}

// scatter-add of dcol back to dx for one sample
void col2im(const double* dcol, const ConvDims& cd, PadMode mode, double* dx) {
    const int k = cd.k;
    std::size_t row = 0;
    for (int ci = 0; ci < cd.cin; ++ci) {
        double* xc = dx + static_cast<std::size_t>(ci) * cd.in_spatial();
        for (int kz = 0; kz < k; ++kz)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    const double* g = dcol + row * cd.out_spatial();
                    std::size_t idx = 0;
                    for (int oz = 0; oz < cd.ho; ++oz) {
                        const int iz = oz * cd.stride - cd.pad + kz;
                        for (int oy = 0; oy < cd.lo; ++oy) {
                            const int iy = oy * cd.stride - cd.pad + ky;
                            for (int ox = 0; ox < cd.dov; ++ox, ++idx) {
                                const int ix = ox * cd.stride - cd.pad + kx;
                                if (mode == PadMode::Zero) {
                                    if (iz < 0 || iz >= cd.h || iy < 0 || iy >= cd.l || ix < 0 ||
                                        ix >= cd.d)
                                        continue;
                                    xc[(static_cast<std::size_t>(iz) * cd.l + iy) * cd.d + ix] += g[idx];
                                } else {
                                    const int cz = clampi(iz, 0, cd.h - 1);
                                    const int cy = clampi(iy, 0, cd.l - 1);
                                    const int cx = clampi(ix, 0, cd.d - 1);
                                    xc[(static_cast<std::size_t>(cz) * cd.l + cy) * cd.d + cx] += g[idx];
                                }
                            }
                        }
                    }
                    ++row;
                }
    }
}

}  // namespace

NodePtr conv3d(const NodePtr& x, const NodePtr& w, const NodePtr& b, int stride, int pad,
               PadMode mode) {
    if (x->value.ndim() != 5 || w->value.ndim() != 5) {
        throw ShapeError("conv3d: expected x [N,C,H,L,D] and w [O,C,k,k,k]");
    }
    ConvDims cd;
    cd.n = x->value.dim(0);
    cd.cin = x->value.dim(1);
    cd.h = x->value.dim(2);
    cd.l = x->value.dim(3);
    cd.d = x->value.dim(4);
    cd.cout = w->value.dim(0);
    cd.k = w->value.dim(2);
    cd.stride = stride;
    cd.pad = pad;
    if (w->value.dim(1) != cd.cin || w->value.dim(3) != cd.k || w->value.dim(4) != cd.k) {
        throw ShapeError("conv3d: weight shape " + shape_str(w->value.shape) +
                         " incompatible with input " + shape_str(x->value.shape));
    }
    cd.ho = (cd.h + 2 * pad - cd.k) / stride + 1;
    cd.lo = (cd.l + 2 * pad - cd.k) / stride + 1;
    cd.dov = (cd.d + 2 * pad - cd.k) / stride + 1;
    if (cd.ho <= 0 || cd.lo <= 0 || cd.dov <= 0) {
        throw ShapeError("conv3d: kernel larger than padded input");
    }

    Tensor v({cd.n, cd.cout, cd.ho, cd.lo, cd.dov});
    const std::size_t in_block = static_cast<std::size_t>(cd.cin) * cd.in_spatial();
    const std::size_t out_block = static_cast<std::size_t>(cd.cout) * cd.out_spatial();

#pragma omp parallel for schedule(static)
    for (int in = 0; in < cd.n; ++in) {
        std::vector<double> col(cd.patch() * cd.out_spatial());
        im2col(x->value.data.data() + static_cast<std::size_t>(in) * in_block, cd, mode, col.data());
        MapCM W(w->value.data.data(), cd.cout, static_cast<int>(cd.patch()));
        MapCM C(col.data(), static_cast<int>(cd.patch()), static_cast<int>(cd.out_spatial()));
        MapM Y(v.data.data() + static_cast<std::size_t>(in) * out_block, cd.cout,
               static_cast<int>(cd.out_spatial()));
        Y.noalias() = W * C;
        if (b) {
            for (int co = 0; co < cd.cout; ++co) Y.row(co).array() += b->value.data[static_cast<std::size_t>(co)];
        }
    }

    std::vector<NodePtr> parents = {x, w};
    if (b) parents.push_back(b);
    return make_op(std::move(v), std::move(parents),
                   [x, w, b, cd, mode, in_block, out_block](Node& self) {
        const bool need_dx = x->requires_grad;
        const bool need_dw = w->requires_grad;
        if (need_dx) x->ensure_grad();
        if (need_dw) w->ensure_grad();
        // per-sample weight grads, reduced serially for determinism
        std::vector<std::vector<double>> dws(need_dw ? static_cast<std::size_t>(cd.n) : 0);
        std::vector<std::vector<double>> dbs(b && b->requires_grad ? static_cast<std::size_t>(cd.n) : 0);

#pragma omp parallel for schedule(static)
        for (int in = 0; in < cd.n; ++in) {
            MapCM G(self.grad.data.data() + static_cast<std::size_t>(in) * out_block, cd.cout,
                    static_cast<int>(cd.out_spatial()));
            std::vector<double> col(cd.patch() * cd.out_spatial());
            im2col(x->value.data.data() + static_cast<std::size_t>(in) * in_block, cd, mode,
                   col.data());
            if (need_dw) {
                dws[static_cast<std::size_t>(in)].assign(cd.cout * cd.patch(), 0.0);
                MapM DW(dws[static_cast<std::size_t>(in)].data(), cd.cout, static_cast<int>(cd.patch()));
                MapCM C(col.data(), static_cast<int>(cd.patch()), static_cast<int>(cd.out_spatial()));
                DW.noalias() = G * C.transpose();
            }
            if (!dbs.empty()) {
                dbs[static_cast<std::size_t>(in)].assign(static_cast<std::size_t>(cd.cout), 0.0);
                for (int co = 0; co < cd.cout; ++co)
                    dbs[static_cast<std::size_t>(in)][static_cast<std::size_t>(co)] = G.row(co).sum();
            }
            if (need_dx) {
                std::vector<double> dcol(cd.patch() * cd.out_spatial());
                MapM DC(dcol.data(), static_cast<int>(cd.patch()), static_cast<int>(cd.out_spatial()));
                MapCM W(w->value.data.data(), cd.cout, static_cast<int>(cd.patch()));
                DC.noalias() = W.transpose() * G;
                col2im(dcol.data(), cd, mode,
                       x->grad.data.data() + static_cast<std::size_t>(in) * in_block);
            }
        }
        if (need_dw) {
            for (int in = 0; in < cd.n; ++in)
                for (std::size_t i = 0; i < w->grad.numel(); ++i)
                    w->grad.data[i] += dws[static_cast<std::size_t>(in)][i];
        }
        if (!dbs.empty()) {
            b->ensure_grad();
            for (int in = 0; in < cd.n; ++in)
                for (int co = 0; co < cd.cout; ++co)
                    b->grad.data[static_cast<std::size_t>(co)] += dbs[static_cast<std::size_t>(in)][static_cast<std::size_t>(co)];
        }
    });
}

NodePtr upsample_nearest2(const NodePtr& x) {
    if (x->value.ndim() != 5) throw ShapeError("upsample_nearest2: expected [N,C,H,L,D]");
    const int n = x->value.dim(0), c = x->value.dim(1);
    const int h = x->value.dim(2), l = x->value.dim(3), d = x->value.dim(4);
    Tensor v({n, c, 2 * h, 2 * l, 2 * d});
    const std::size_t so = static_cast<std::size_t>(8) * h * l * d;
    const std::size_t si = static_cast<std::size_t>(h) * l * d;
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const double* src = x->value.data.data() + (static_cast<std::size_t>(in) * c + ic) * si;
            double* dst = v.data.data() + (static_cast<std::size_t>(in) * c + ic) * so;
            for (int z = 0; z < 2 * h; ++z)
                for (int y = 0; y < 2 * l; ++y)
                    for (int xx = 0; xx < 2 * d; ++xx)
                        dst[(static_cast<std::size_t>(z) * 2 * l + y) * 2 * d + xx] =
                            src[(static_cast<std::size_t>(z / 2) * l + y / 2) * d + xx / 2];
        }
    return make_op(std::move(v), {x}, [x, n, c, h, l, d, si, so](Node& self) {
        x->ensure_grad();
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic) {
                double* dst = x->grad.data.data() + (static_cast<std::size_t>(in) * c + ic) * si;
                const double* g = self.grad.data.data() + (static_cast<std::size_t>(in) * c + ic) * so;
                for (int z = 0; z < 2 * h; ++z)
                    for (int y = 0; y < 2 * l; ++y)
                        for (int xx = 0; xx < 2 * d; ++xx)
                            dst[(static_cast<std::size_t>(z / 2) * l + y / 2) * d + xx / 2] +=
                                g[(static_cast<std::size_t>(z) * 2 * l + y) * 2 * d + xx];
            }
    });
}

NodePtr channel_mean(const NodePtr& x) {
    if (x->value.ndim() != 5) throw ShapeError("channel_mean: expected [N,C,H,L,D]");
    const int n = x->value.dim(0), c = x->value.dim(1);
    const std::size_t sp = static_cast<std::size_t>(x->value.dim(2)) * x->value.dim(3) * x->value.dim(4);
    Tensor v({n, 1, x->value.dim(2), x->value.dim(3), x->value.dim(4)});
    const double inv = 1.0 / c;
    for (int in = 0; in < n; ++in) {
        double* out = v.data.data() + static_cast<std::size_t>(in) * sp;
        for (int ic = 0; ic < c; ++ic) {
            const double* src = x->value.data.data() + (static_cast<std::size_t>(in) * c + ic) * sp;
            for (std::size_t i = 0; i < sp; ++i) out[i] += src[i] * inv;
        }
    }
    return make_op(std::move(v), {x}, [x, n, c, sp, inv](Node& self) {
        x->ensure_grad();
        for (int in = 0; in < n; ++in) {
            const double* g = self.grad.data.data() + static_cast<std::size_t>(in) * sp;
            for (int ic = 0; ic < c; ++ic) {
                double* dst = x->grad.data.data() + (static_cast<std::size_t>(in) * c + ic) * sp;
                for (std::size_t i = 0; i < sp; ++i) dst[i] += g[i] * inv;
            }
        }
    });
}

NodePtr channel_max(const NodePtr& x) {
    if (x->value.ndim() != 5) throw ShapeError("channel_max: expected [N,C,H,L,D]");
    const int n = x->value.dim(0), c = x->value.dim(1);
    const std::size_t sp = static_cast<std::size_t>(x->value.dim(2)) * x->value.dim(3) * x->value.dim(4);
    Tensor v({n, 1, x->value.dim(2), x->value.dim(3), x->value.dim(4)});
    auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(n) * sp, 0);
    for (int in = 0; in < n; ++in) {
        double* out = v.data.data() + static_cast<std::size_t>(in) * sp;
        for (std::size_t i = 0; i < sp; ++i) {
            int best = 0;
            double bv = x->value.data[(static_cast<std::size_t>(in) * c) * sp + i];
            for (int ic = 1; ic < c; ++ic) {
                const double cv = x->value.data[(static_cast<std::size_t>(in) * c + ic) * sp + i];
                if (cv > bv) {
                    bv = cv;
                    best = ic;
                }
            }
            out[i] = bv;
            (*argmax)[static_cast<std::size_t>(in) * sp + i] = best;
        }
    }
    return make_op(std::move(v), {x}, [x, argmax, n, c, sp](Node& self) {
        x->ensure_grad();
        for (int in = 0; in < n; ++in) {
            const double* g = self.grad.data.data() + static_cast<std::size_t>(in) * sp;
            for (std::size_t i = 0; i < sp; ++i) {
                const int ic = (*argmax)[static_cast<std::size_t>(in) * sp + i];
                x->grad.data[(static_cast<std::size_t>(in) * c + ic) * sp + i] += g[i];
            }
        }
    });
}

NodePtr broadcast_mul_ch(const NodePtr& x, const NodePtr& gate) {
    if (x->value.ndim() != 5 || gate->value.ndim() != 5 || gate->value.dim(1) != 1) {
        throw ShapeError("broadcast_mul_ch: expected x [N,C,H,L,D], gate [N,1,H,L,D]");
    }
    const int n = x->value.dim(0), c = x->value.dim(1);
    const std::size_t sp = static_cast<std::size_t>(x->value.dim(2)) * x->value.dim(3) * x->value.dim(4);
    Tensor v(x->value.shape);
    for (int in = 0; in < n; ++in) {
        const double* gsrc = gate->value.data.data() + static_cast<std::size_t>(in) * sp;
        for (int ic = 0; ic < c; ++ic) {
            const double* src = x->value.data.data() + (static_cast<std::size_t>(in) * c + ic) * sp;
            double* dst = v.data.data() + (static_cast<std::size_t>(in) * c + ic) * sp;
            for (std::size_t i = 0; i < sp; ++i) dst[i] = src[i] * gsrc[i];
        }
    }
    return make_op(std::move(v), {x, gate}, [x, gate, n, c, sp](Node& self) {
        for (int in = 0; in < n; ++in) {
            const double* gsrc = gate->value.data.data() + static_cast<std::size_t>(in) * sp;
            if (x->requires_grad) {
                x->ensure_grad();
                for (int ic = 0; ic < c; ++ic) {
                    const double* g = self.grad.data.data() + (static_cast<std::size_t>(in) * c + ic) * sp;
                    double* dst = x->grad.data.data() + (static_cast<std::size_t>(in) * c + ic) * sp;
                    for (std::size_t i = 0; i < sp; ++i) dst[i] += g[i] * gsrc[i];
                }
            }
            if (gate->requires_grad) {
                gate->ensure_grad();
                double* dg = gate->grad.data.data() + static_cast<std::size_t>(in) * sp;
                for (int ic = 0; ic < c; ++ic) {
                    const double* g = self.grad.data.data() + (static_cast<std::size_t>(in) * c + ic) * sp;
                    const double* src = x->value.data.data() + (static_cast<std::size_t>(in) * c + ic) * sp;
                    for (std::size_t i = 0; i < sp; ++i) dg[i] += g[i] * src[i];
                }
            }
        }
    });
}

NodePtr add_per_sample_channel_bias(const NodePtr& x, const NodePtr& v) {
    if (x->value.ndim() != 5 || v->value.ndim() != 2 || v->value.dim(0) != x->value.dim(0) ||
        v->value.dim(1) != x->value.dim(1)) {
        throw ShapeError("add_per_sample_channel_bias: expected x [N,C,...], v [N,C]");
    }
    const int n = x->value.dim(0), c = x->value.dim(1);
    const std::size_t sp = static_cast<std::size_t>(x->value.dim(2)) * x->value.dim(3) * x->value.dim(4);
    Tensor out(x->value.shape);
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const double bias = v->value.data[static_cast<std::size_t>(in) * c + ic];
            const double* src = x->value.data.data() + (static_cast<std::size_t>(in) * c + ic) * sp;
            double* dst = out.data.data() + (static_cast<std::size_t>(in) * c + ic) * sp;
            for (std::size_t i = 0; i < sp; ++i) dst[i] = src[i] + bias;
        }
    return make_op(std::move(out), {x, v}, [x, v, n, c, sp](Node& self) {
        if (x->requires_grad) x->accumulate(self.grad);
        if (v->requires_grad) {
            v->ensure_grad();
            for (int in = 0; in < n; ++in)
                for (int ic = 0; ic < c; ++ic) {
                    const double* g = self.grad.data.data() + (static_cast<std::size_t>(in) * c + ic) * sp;
                    double s = 0.0;
                    for (std::size_t i = 0; i < sp; ++i) s += g[i];
                    v->grad.data[static_cast<std::size_t>(in) * c + ic] += s;
                }
        }
    });
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

namespace {

// shared core: normalizes `m` strided elements per group; gamma/beta indexed
// per element through cidx.
struct NormGroup {
    std::size_t base;        // offset of first element
    std::size_t stride;      // stride between elements of the group
    std::size_t m;           // group size
};

}  // namespace

NodePtr group_norm(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta, int groups,
                   double eps) {
    if (x->value.ndim() != 5) throw ShapeError("group_norm: expected [N,C,H,L,D]");
    const int n = x->value.dim(0), c = x->value.dim(1);
    if (c % groups != 0) throw ShapeError("group_norm: channels not divisible by groups");
    const std::size_t sp = static_cast<std::size_t>(x->value.dim(2)) * x->value.dim(3) * x->value.dim(4);
    const int cg = c / groups;
    const std::size_t m = static_cast<std::size_t>(cg) * sp;

    Tensor v(x->value.shape);
    auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * groups * 2);
    for (int in = 0; in < n; ++in) {
        for (int g = 0; g < groups; ++g) {
            const std::size_t off = (static_cast<std::size_t>(in) * c + static_cast<std::size_t>(g) * cg) * sp;
            const double* src = x->value.data.data() + off;
            double mean = 0.0;
            for (std::size_t i = 0; i < m; ++i) mean += src[i];
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                const double dlt = src[i] - mean;
                var += dlt * dlt;
            }
            var /= static_cast<double>(m);
            const double inv_sd = 1.0 / std::sqrt(var + eps);
            (*stats)[(static_cast<std::size_t>(in) * groups + g) * 2] = mean;
            (*stats)[(static_cast<std::size_t>(in) * groups + g) * 2 + 1] = inv_sd;
            double* dst = v.data.data() + off;
            for (int icg = 0; icg < cg; ++icg) {
                const double ga = gamma->value.data[static_cast<std::size_t>(g) * cg + icg];
                const double be = beta->value.data[static_cast<std::size_t>(g) * cg + icg];
                for (std::size_t i = 0; i < sp; ++i) {
                    const std::size_t ii = static_cast<std::size_t>(icg) * sp + i;
                    dst[ii] = ga * (src[ii] - mean) * inv_sd + be;
                }
            }
        }
    }
    return make_op(std::move(v), {x, gamma, beta},
                   [x, gamma, beta, stats, n, c, groups, cg, sp, m](Node& self) {
        if (x->requires_grad) x->ensure_grad();
        if (gamma->requires_grad) gamma->ensure_grad();
        if (beta->requires_grad) beta->ensure_grad();
        for (int in = 0; in < n; ++in) {
            for (int g = 0; g < groups; ++g) {
                const std::size_t off = (static_cast<std::size_t>(in) * c + static_cast<std::size_t>(g) * cg) * sp;
                const double mean = (*stats)[(static_cast<std::size_t>(in) * groups + g) * 2];
                const double inv_sd = (*stats)[(static_cast<std::size_t>(in) * groups + g) * 2 + 1];
                const double* src = x->value.data.data() + off;
                const double* gr = self.grad.data.data() + off;
                // accumulate per-channel gamma/beta grads and the two group sums
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int icg = 0; icg < cg; ++icg) {
                    const double ga = gamma->value.data[static_cast<std::size_t>(g) * cg + icg];
                    double dg = 0.0, db = 0.0;
                    for (std::size_t i = 0; i < sp; ++i) {
                        const std::size_t ii = static_cast<std::size_t>(icg) * sp + i;
                        const double xhat = (src[ii] - mean) * inv_sd;
                        dg += gr[ii] * xhat;
                        db += gr[ii];
                        const double dxhat = gr[ii] * ga;
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    if (gamma->requires_grad) gamma->grad.data[static_cast<std::size_t>(g) * cg + icg] += dg;
                    if (beta->requires_grad) beta->grad.data[static_cast<std::size_t>(g) * cg + icg] += db;
                }
                if (x->requires_grad) {
                    double* dx = x->grad.data.data() + off;
                    const double inv_m = 1.0 / static_cast<double>(m);
                    for (int icg = 0; icg < cg; ++icg) {
                        const double ga = gamma->value.data[static_cast<std::size_t>(g) * cg + icg];
                        for (std::size_t i = 0; i < sp; ++i) {
                            const std::size_t ii = static_cast<std::size_t>(icg) * sp + i;
                            const double xhat = (src[ii] - mean) * inv_sd;
                            const double dxhat = gr[ii] * ga;
                            dx[ii] += inv_sd * (dxhat - inv_m * (sum_dxhat + xhat * sum_dxhat_xhat));
                        }
                    }
                }
            }
        }
    });
}

namespace {

// layer norm over contiguous rows of length m (x viewed as [rows, m])
NodePtr layer_norm_rows(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                        std::size_t rows, std::size_t m, double eps) {
    Tensor v(x->value.shape);
    auto stats = std::make_shared<std::vector<double>>(rows * 2);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = x->value.data.data() + r * m;
        double mean = 0.0;
        for (std::size_t i = 0; i < m; ++i) mean += src[i];
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double dlt = src[i] - mean;
            var += dlt * dlt;
        }
        var /= static_cast<double>(m);
        const double inv_sd = 1.0 / std::sqrt(var + eps);
        (*stats)[r * 2] = mean;
        (*stats)[r * 2 + 1] = inv_sd;
        double* dst = v.data.data() + r * m;
        for (std::size_t i = 0; i < m; ++i)
            dst[i] = gamma->value.data[i] * (src[i] - mean) * inv_sd + beta->value.data[i];
    }
    return make_op(std::move(v), {x, gamma, beta}, [x, gamma, beta, stats, rows, m](Node& self) {
        if (x->requires_grad) x->ensure_grad();
        if (gamma->requires_grad) gamma->ensure_grad();
        if (beta->requires_grad) beta->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double mean = (*stats)[r * 2];
            const double inv_sd = (*stats)[r * 2 + 1];
            const double* src = x->value.data.data() + r * m;
            const double* gr = self.grad.data.data() + r * m;
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                const double xhat = (src[i] - mean) * inv_sd;
                const double dxhat = gr[i] * gamma->value.data[i];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
                if (gamma->requires_grad) gamma->grad.data[i] += gr[i] * xhat;
                if (beta->requires_grad) beta->grad.data[i] += gr[i];
            }
            if (x->requires_grad) {
                double* dx = x->grad.data.data() + r * m;
                const double inv_m = 1.0 / static_cast<double>(m);
                for (std::size_t i = 0; i < m; ++i) {
                    const double xhat = (src[i] - mean) * inv_sd;
                    const double dxhat = gr[i] * gamma->value.data[i];
                    dx[i] += inv_sd * (dxhat - inv_m * (sum_dxhat + xhat * sum_dxhat_xhat));
                }
            }
        }
    });
}

}  // namespace

NodePtr layer_norm_last(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta, double eps) {
    if (x->value.ndim() != 3) throw ShapeError("layer_norm_last: expected [N,S,C]");
    const std::size_t m = static_cast<std::size_t>(x->value.dim(2));
    const std::size_t rows = x->value.numel() / m;
    if (gamma->value.numel() != m || beta->value.numel() != m) {
        throw ShapeError("layer_norm_last: gamma/beta must have C entries");
    }
    return layer_norm_rows(x, gamma, beta, rows, m, eps);
}

NodePtr to_seq(const NodePtr& x) {
    if (x->value.ndim() != 5) throw ShapeError("to_seq: expected [N,C,H,L,D]");
    const int n = x->value.dim(0), c = x->value.dim(1);
    const std::size_t sp = static_cast<std::size_t>(x->value.dim(2)) * x->value.dim(3) * x->value.dim(4);
    Tensor v({n, static_cast<int>(sp), c});
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const double* src = x->value.data.data() + (static_cast<std::size_t>(in) * c + ic) * sp;
            for (std::size_t i = 0; i < sp; ++i)
                v.data[(static_cast<std::size_t>(in) * sp + i) * c + ic] = src[i];
        }
    return make_op(std::move(v), {x}, [x, n, c, sp](Node& self) {
        x->ensure_grad();
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic) {
                double* dst = x->grad.data.data() + (static_cast<std::size_t>(in) * c + ic) * sp;
                for (std::size_t i = 0; i < sp; ++i)
                    dst[i] += self.grad.data[(static_cast<std::size_t>(in) * sp + i) * c + ic];
            }
    });
}

NodePtr from_seq(const NodePtr& x, Shape spatial) {
    if (x->value.ndim() != 3 || spatial.size() != 3) {
        throw ShapeError("from_seq: expected [N,S,C] and 3D spatial shape");
    }
    const int n = x->value.dim(0), c = x->value.dim(2);
    const std::size_t sp = shape_numel(spatial);
    if (static_cast<std::size_t>(x->value.dim(1)) != sp) {
        throw ShapeError("from_seq: sequence length does not match spatial shape");
    }
    Tensor v({n, c, spatial[0], spatial[1], spatial[2]});
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            double* dst = v.data.data() + (static_cast<std::size_t>(in) * c + ic) * sp;
            for (std::size_t i = 0; i < sp; ++i)
                dst[i] = x->value.data[(static_cast<std::size_t>(in) * sp + i) * c + ic];
        }
    return make_op(std::move(v), {x}, [x, n, c, sp](Node& self) {
        x->ensure_grad();
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic) {
                const double* g = self.grad.data.data() + (static_cast<std::size_t>(in) * c + ic) * sp;
                for (std::size_t i = 0; i < sp; ++i)
                    x->grad.data[(static_cast<std::size_t>(in) * sp + i) * c + ic] += g[i];
            }
    });
}

NodePtr l2_normalize_ch(const NodePtr& x, double eps) {
    if (x->value.ndim() != 5) throw ShapeError("l2_normalize_ch: expected [N,C,H,L,D]");
    const int n = x->value.dim(0), c = x->value.dim(1);
    const std::size_t sp = static_cast<std::size_t>(x->value.dim(2)) * x->value.dim(3) * x->value.dim(4);
    Tensor v(x->value.shape);
    auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * sp);
    for (int in = 0; in < n; ++in) {
        for (std::size_t i = 0; i < sp; ++i) {
            double s = 0.0;
            for (int ic = 0; ic < c; ++ic) {
                const double xv = x->value.data[(static_cast<std::size_t>(in) * c + ic) * sp + i];
                s += xv * xv;
            }
            const double nrm = std::sqrt(s);
            (*norms)[static_cast<std::size_t>(in) * sp + i] = nrm;
            if (nrm < eps) {
                // degenerate input: emit a fixed unit vector (gradient is zero there)
                v.data[(static_cast<std::size_t>(in) * c) * sp + i] = 1.0;
                for (int ic = 1; ic < c; ++ic)
                    v.data[(static_cast<std::size_t>(in) * c + ic) * sp + i] = 0.0;
            } else {
                for (int ic = 0; ic < c; ++ic)
                    v.data[(static_cast<std::size_t>(in) * c + ic) * sp + i] =
                        x->value.data[(static_cast<std::size_t>(in) * c + ic) * sp + i] / nrm;
            }
        }
    }
    return make_op(std::move(v), {x}, [x, norms, n, c, sp, eps](Node& self) {
        x->ensure_grad();
        for (int in = 0; in < n; ++in) {
            for (std::size_t i = 0; i < sp; ++i) {
                const double nrm = (*norms)[static_cast<std::size_t>(in) * sp + i];
                if (nrm < eps) continue;
                double dot = 0.0;
                for (int ic = 0; ic < c; ++ic) {
                    const std::size_t ii = (static_cast<std::size_t>(in) * c + ic) * sp + i;
                    dot += self.grad.data[ii] * self.value.data[ii];
                }
                for (int ic = 0; ic < c; ++ic) {
                    const std::size_t ii = (static_cast<std::size_t>(in) * c + ic) * sp + i;
                    x->grad.data[ii] += (self.grad.data[ii] - self.value.data[ii] * dot) / nrm;
                }
            }
        }
    });
}

NodePtr softmax_ch(const NodePtr& x) {
    if (x->value.ndim() < 2) throw ShapeError("softmax_ch: need at least 2 dims");
    const int n = x->value.dim(0), c = x->value.dim(1);
    std::size_t sp = 1;
    for (int i = 2; i < x->value.ndim(); ++i) sp *= static_cast<std::size_t>(x->value.dim(i));
    Tensor v(x->value.shape);
    for (int in = 0; in < n; ++in) {
        for (std::size_t i = 0; i < sp; ++i) {
            double mx = -1e300;
            for (int ic = 0; ic < c; ++ic)
                mx = std::max(mx, x->value.data[(static_cast<std::size_t>(in) * c + ic) * sp + i]);
            double sum = 0.0;
            for (int ic = 0; ic < c; ++ic) {
                const std::size_t ii = (static_cast<std::size_t>(in) * c + ic) * sp + i;
                const double e = std::exp(x->value.data[ii] - mx);
                v.data[ii] = e;
                sum += e;
            }
            for (int ic = 0; ic < c; ++ic) v.data[(static_cast<std::size_t>(in) * c + ic) * sp + i] /= sum;
        }
    }
    return make_op(std::move(v), {x}, [x, n, c, sp](Node& self) {
        x->ensure_grad();
        for (int in = 0; in < n; ++in) {
            for (std::size_t i = 0; i < sp; ++i) {
                double dot = 0.0;
                for (int ic = 0; ic < c; ++ic) {
                    const std::size_t ii = (static_cast<std::size_t>(in) * c + ic) * sp + i;
                    dot += self.grad.data[ii] * self.value.data[ii];
                }
                for (int ic = 0; ic < c; ++ic) {
                    const std::size_t ii = (static_cast<std::size_t>(in) * c + ic) * sp + i;
                    x->grad.data[ii] += self.value.data[ii] * (self.grad.data[ii] - dot);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// selective scan
// ---------------------------------------------------------------------------

NodePtr selective_scan_op(const NodePtr& x, const NodePtr& a, const NodePtr& b,
                          const NodePtr& c) {
    if (x->value.ndim() != 3 || a->value.ndim() != 4) {
        throw ShapeError("selective_scan_op: expected x [N,S,C], params [N,S,C,K]");
    }
    const int n = x->value.dim(0), s = x->value.dim(1), ch = x->value.dim(2);
    const int k = a->value.dim(3);
    const Shape pshape = {n, s, ch, k};
    if (!same_shape(a->value.shape, pshape) || !same_shape(b->value.shape, pshape) ||
        !same_shape(c->value.shape, pshape)) {
        throw ShapeError("selective_scan_op: parameter sequence lengths do not match input");
    }
    Tensor y({n, s, ch});
    auto hsave = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * s * ch * k);
    const std::size_t ck = static_cast<std::size_t>(ch) * k;
    for (int in = 0; in < n; ++in) {
        std::vector<double> h(ck, 0.0);
        for (int t = 0; t < s; ++t) {
            const std::size_t base = (static_cast<std::size_t>(in) * s + t) * ck;
            const std::size_t xbase = (static_cast<std::size_t>(in) * s + t) * ch;
            for (int ic = 0; ic < ch; ++ic) {
                const double xv = x->value.data[xbase + ic];
                double acc = 0.0;
                for (int ik = 0; ik < k; ++ik) {
                    const std::size_t pi = base + static_cast<std::size_t>(ic) * k + ik;
                    const std::size_t hi = static_cast<std::size_t>(ic) * k + ik;
                    h[hi] = a->value.data[pi] * h[hi] + b->value.data[pi] * xv;
                    (*hsave)[pi] = h[hi];
                    acc += c->value.data[pi] * h[hi];
                }
                y.data[xbase + ic] = acc;
            }
        }
    }
    return make_op(std::move(y), {x, a, b, c}, [x, a, b, c, hsave, n, s, ch, k, ck](Node& self) {
        if (x->requires_grad) x->ensure_grad();
        if (a->requires_grad) a->ensure_grad();
        if (b->requires_grad) b->ensure_grad();
        if (c->requires_grad) c->ensure_grad();
        for (int in = 0; in < n; ++in) {
            std::vector<double> dh(ck, 0.0);
            for (int t = s - 1; t >= 0; --t) {
                const std::size_t base = (static_cast<std::size_t>(in) * s + t) * ck;
                const std::size_t xbase = (static_cast<std::size_t>(in) * s + t) * ch;
                for (int ic = 0; ic < ch; ++ic) {
                    const double gy = self.grad.data[xbase + ic];
                    const double xv = x->value.data[xbase + ic];
                    double dx_acc = 0.0;
                    for (int ik = 0; ik < k; ++ik) {
                        const std::size_t pi = base + static_cast<std::size_t>(ic) * k + ik;
                        const std::size_t hi = static_cast<std::size_t>(ic) * k + ik;
                        const double ht = (*hsave)[pi];
                        if (c->requires_grad) c->grad.data[pi] += gy * ht;
                        double d = dh[hi] + gy * c->value.data[pi];
                        const double hprev =
                            t > 0 ? (*hsave)[pi - ck] : 0.0;
                        if (a->requires_grad) a->grad.data[pi] += d * hprev;
                        if (b->requires_grad) b->grad.data[pi] += d * xv;
                        dx_acc += d * b->value.data[pi];
                        dh[hi] = d * a->value.data[pi];
                    }
                    if (x->requires_grad) x->grad.data[xbase + ic] += dx_acc;
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// frequency-domain high pass
// ---------------------------------------------------------------------------

namespace {

std::mutex g_fftw_mutex;

struct PlanPair {
    fftw_plan fwd = nullptr;
    fftw_plan bwd = nullptr;
};

// plans cached per grid shape; guarded creation, thread-safe new-array execution
PlanPair& get_plans(int h, int l, int d) {
    static std::map<std::tuple<int, int, int>, PlanPair> cache;
    std::lock_guard<std::mutex> lock(g_fftw_mutex);
    auto key = std::make_tuple(h, l, d);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    const std::size_t m = static_cast<std::size_t>(h) * l * d;
    fftw_complex* buf = fftw_alloc_complex(m);
    PlanPair pp;
    pp.fwd = fftw_plan_dft_3d(h, l, d, buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
    pp.bwd = fftw_plan_dft_3d(h, l, d, buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
    fftw_free(buf);
    return cache.emplace(key, pp).first->second;
}

// apply the centered-spectrum mask high pass to one real grid, in place
void high_pass_grid(const double* in, double* out, int h, int l, int d,
                    const std::vector<std::uint8_t>& mask) {
    const std::size_t m = static_cast<std::size_t>(h) * l * d;
    PlanPair& pp = get_plans(h, l, d);
    fftw_complex* buf = fftw_alloc_complex(m);
    for (std::size_t i = 0; i < m; ++i) {
        buf[i][0] = in[i];
        buf[i][1] = 0.0;
    }
    fftw_execute_dft(pp.fwd, buf, buf);
    // mask lives in fftshifted coordinates: bin (i,j,kk) maps to shifted
    // position ((i+h/2)%h, ...)
    const int sh = h / 2, sl = l / 2, sd = d / 2;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < l; ++j)
            for (int kk = 0; kk < d; ++kk) {
                const int si = (i + sh) % h, sj = (j + sl) % l, sk = (kk + sd) % d;
                const std::size_t mi = (static_cast<std::size_t>(si) * l + sj) * d + sk;
                if (!mask[mi]) {
                    const std::size_t bi = (static_cast<std::size_t>(i) * l + j) * d + kk;
                    buf[bi][0] = 0.0;
                    buf[bi][1] = 0.0;
                }
            }
    fftw_execute_dft(pp.bwd, buf, buf);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) out[i] = buf[i][0] * inv;
    fftw_free(buf);
}

}  // namespace

NodePtr high_pass_op(const NodePtr& x, const std::vector<std::uint8_t>& centered_mask) {
    if (x->value.ndim() != 5) throw ShapeError("high_pass_op: expected [N,C,H,L,D]");
    const int n = x->value.dim(0), c = x->value.dim(1);
    const int h = x->value.dim(2), l = x->value.dim(3), d = x->value.dim(4);
    const std::size_t sp = static_cast<std::size_t>(h) * l * d;
    if (centered_mask.size() != sp) throw ShapeError("high_pass_op: mask size mismatch");
    if (!x->value.all_finite()) throw NumericError("high_pass_op: non-finite input");
    Tensor v(x->value.shape);
    auto mask = std::make_shared<std::vector<std::uint8_t>>(centered_mask);
#pragma omp parallel for schedule(static)
    for (int nc = 0; nc < n * c; ++nc) {
        high_pass_grid(x->value.data.data() + static_cast<std::size_t>(nc) * sp,
                       v.data.data() + static_cast<std::size_t>(nc) * sp, h, l, d, *mask);
    }
    return make_op(std::move(v), {x}, [x, mask, n, c, h, l, d, sp](Node& self) {
        // the mask is symmetric under frequency negation, so the operator is
        // self-adjoint: backward applies the same filter to the gradient
        x->ensure_grad();
        Tensor tmp({n * c, static_cast<int>(sp)});
#pragma omp parallel for schedule(static)
        for (int nc = 0; nc < n * c; ++nc) {
            high_pass_grid(self.grad.data.data() + static_cast<std::size_t>(nc) * sp,
                           tmp.data.data() + static_cast<std::size_t>(nc) * sp, h, l, d, *mask);
        }
        for (std::size_t i = 0; i < x->grad.numel(); ++i) x->grad.data[i] += tmp.data[i];
    });
}

// ---------------------------------------------------------------------------
// contrastive terms
// ---------------------------------------------------------------------------

NodePtr contrastive_terms(const NodePtr& scores_p, const NodePtr& scores_n, double tau) {
    if (scores_p->value.ndim() != 2 || scores_n->value.ndim() != 2 ||
        scores_p->value.dim(0) != scores_n->value.dim(0)) {
        throw ShapeError("contrastive_terms: expected [p,kP] and [p,kN]");
    }
    if (tau <= 0.0) throw ConfigError("contrastive_terms: tau must be positive");
    const int p = scores_p->value.dim(0);
    const int kp = scores_p->value.dim(1);
    const int kn = scores_n->value.dim(1);
    const double inv_tau = 1.0 / tau;
    Tensor v({1});
    double total = 0.0;
    for (int i = 0; i < p; ++i) {
        double wmax = -1e300;
        for (int al = 0; al < kn; ++al)
            wmax = std::max(wmax, scores_n->value.data[static_cast<std::size_t>(i) * kn + al] * inv_tau);
        for (int j = 0; j < kp; ++j) {
            const double z = scores_p->value.data[static_cast<std::size_t>(i) * kp + j] * inv_tau;
            const double mlt = std::max(z, wmax);
            double den = std::exp(z - mlt);
            for (int al = 0; al < kn; ++al)
                den += std::exp(scores_n->value.data[static_cast<std::size_t>(i) * kn + al] * inv_tau - mlt);
            total += std::log(den) - (z - mlt);
        }
    }
    v.data[0] = total;
    return make_op(std::move(v), {scores_p, scores_n},
                   [scores_p, scores_n, p, kp, kn, inv_tau](Node& self) {
        const double g = self.grad.data[0];
        if (scores_p->requires_grad) scores_p->ensure_grad();
        if (scores_n->requires_grad) scores_n->ensure_grad();
        for (int i = 0; i < p; ++i) {
            double wmax = -1e300;
            for (int al = 0; al < kn; ++al)
                wmax = std::max(wmax, scores_n->value.data[static_cast<std::size_t>(i) * kn + al] * inv_tau);
            for (int j = 0; j < kp; ++j) {
                const double z = scores_p->value.data[static_cast<std::size_t>(i) * kp + j] * inv_tau;
                const double mlt = std::max(z, wmax);
                const double ep = std::exp(z - mlt);
                double den = ep;
                for (int al = 0; al < kn; ++al)
                    den += std::exp(scores_n->value.data[static_cast<std::size_t>(i) * kn + al] * inv_tau - mlt);
                if (scores_p->requires_grad)
                    scores_p->grad.data[static_cast<std::size_t>(i) * kp + j] += g * (ep / den - 1.0) * inv_tau;
                if (scores_n->requires_grad) {
                    for (int al = 0; al < kn; ++al) {
                        const double ew = std::exp(scores_n->value.data[static_cast<std::size_t>(i) * kn + al] * inv_tau - mlt);
                        scores_n->grad.data[static_cast<std::size_t>(i) * kn + al] += g * (ew / den) * inv_tau;
                    }
                }
            }
        }
    });
}

}  // namespace diffcl
