#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace oracles {

std::vector<double> naive_scan(const std::vector<double>& x_seq, const ScanParams& p) {
    const int ch = p.ch;
    const int st = p.state;
    const std::size_t n = x_seq.size() / static_cast<std::size_t>(ch);
    if (p.a_bar.size() != n * ch * st || p.b_bar.size() != n * ch * st ||
        p.c_sel.size() != n * ch * st) {
        throw std::invalid_argument("naive_scan: parameter length mismatch");
    }
    std::vector<double> h(static_cast<std::size_t>(ch) * st, 0.0);
    std::vector<double> y(x_seq.size(), 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        for (int c = 0; c < ch; ++c) {
            const double xv = x_seq[t * ch + c];
            double acc = 0.0;
            for (int k = 0; k < st; ++k) {
                const std::size_t pi = (t * ch + c) * st + k;
                const std::size_t hi = static_cast<std::size_t>(c) * st + k;
                h[hi] = p.a_bar[pi] * h[hi] + p.b_bar[pi] * xv;
                acc += p.c_sel[pi] * h[hi];
            }
            y[t * ch + c] = acc;
        }
    }
    return y;
}

std::vector<std::complex<double>> dft3(const std::vector<double>& grid, int h, int l, int d) {
    if (h > 8 || l > 8 || d > 8) throw std::invalid_argument("dft3: grid larger than 8^3");
    const double two_pi = 6.283185307179586476925286766559;
    std::vector<std::complex<double>> spec(static_cast<std::size_t>(h) * l * d);
    for (int fu = 0; fu < h; ++fu)
        for (int fv = 0; fv < l; ++fv)
            for (int fw = 0; fw < d; ++fw) {
                std::complex<double> acc(0.0, 0.0);
                for (int iu = 0; iu < h; ++iu)
                    for (int iv = 0; iv < l; ++iv)
                        for (int iw = 0; iw < d; ++iw) {
                            const double phase =
                                -two_pi * (static_cast<double>(fu) * iu / h +
                                           static_cast<double>(fv) * iv / l +
                                           static_cast<double>(fw) * iw / d);
                            acc += grid[(static_cast<std::size_t>(iu) * l + iv) * d + iw] *
                                   std::complex<double>(std::cos(phase), std::sin(phase));
                        }
                spec[(static_cast<std::size_t>(fu) * l + fv) * d + fw] = acc;
            }
    return spec;
}

std::vector<double> idft3_real(const std::vector<std::complex<double>>& spec, int h, int l,
                               int d) {
    const double two_pi = 6.283185307179586476925286766559;
    std::vector<double> grid(static_cast<std::size_t>(h) * l * d, 0.0);
    const double inv = 1.0 / (static_cast<double>(h) * l * d);
    for (int iu = 0; iu < h; ++iu)
        for (int iv = 0; iv < l; ++iv)
            for (int iw = 0; iw < d; ++iw) {
                std::complex<double> acc(0.0, 0.0);
                for (int fu = 0; fu < h; ++fu)
                    for (int fv = 0; fv < l; ++fv)
                        for (int fw = 0; fw < d; ++fw) {
                            const double phase =
                                two_pi * (static_cast<double>(fu) * iu / h +
                                          static_cast<double>(fv) * iv / l +
                                          static_cast<double>(fw) * iw / d);
                            acc += spec[(static_cast<std::size_t>(fu) * l + fv) * d + fw] *
                                   std::complex<double>(std::cos(phase), std::sin(phase));
                        }
                grid[(static_cast<std::size_t>(iu) * l + iv) * d + iw] = acc.real() * inv;
            }
    return grid;
}

namespace {

std::vector<std::array<int, 3>> boundary_voxels(const std::vector<int>& mask, int h, int l,
                                                int d) {
    std::vector<std::array<int, 3>> out;
    auto at = [&](int z, int y, int x) -> int {
        if (z < 0 || z >= h || y < 0 || y >= l || x < 0 || x >= d) return 0;
        return mask[(static_cast<std::size_t>(z) * l + y) * d + x];
    };
    for (int z = 0; z < h; ++z)
        for (int y = 0; y < l; ++y)
            for (int x = 0; x < d; ++x) {
                if (!at(z, y, x)) continue;
                if (!at(z - 1, y, x) || !at(z + 1, y, x) || !at(z, y - 1, x) ||
                    !at(z, y + 1, x) || !at(z, y, x - 1) || !at(z, y, x + 1)) {
                    out.push_back({z, y, x});
                }
            }
    return out;
}

}  // namespace

SurfaceDistances exhaustive_surface_distances(const std::vector<int>& mask_a,
                                              const std::vector<int>& mask_b, int h, int l,
                                              int d, const std::array<double, 3>& spacing) {
    SurfaceDistances out;
    auto ba = boundary_voxels(mask_a, h, l, d);
    auto bb = boundary_voxels(mask_b, h, l, d);
    out.a_empty = ba.empty();
    out.b_empty = bb.empty();
    if (out.a_empty || out.b_empty) return out;
    auto dist = [&](const std::array<int, 3>& p, const std::array<int, 3>& q) {
        const double dz = (p[0] - q[0]) * spacing[0];
        const double dy = (p[1] - q[1]) * spacing[1];
        const double dx = (p[2] - q[2]) * spacing[2];
        return std::sqrt(dz * dz + dy * dy + dx * dx);
    };
    for (const auto& p : ba) {
        double best = 1e300;
        for (const auto& q : bb) best = std::min(best, dist(p, q));
        out.a_to_b.push_back(best);
    }
    for (const auto& q : bb) {
        double best = 1e300;
        for (const auto& p : ba) best = std::min(best, dist(q, p));
        out.b_to_a.push_back(best);
    }
    return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<int> topk_indices(const std::vector<double>& keys, int k) {
    std::vector<int> idx(keys.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int i, int j) {
        return keys[static_cast<std::size_t>(i)] > keys[static_cast<std::size_t>(j)];
    });
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

std::pair<double, double> overlap_dice_jaccard(const std::vector<int>& a,
                                               const std::vector<int>& b) {
    std::size_t inter = 0, ca = 0, cb = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool va = a[i] != 0, vb = b[i] != 0;
        inter += va && vb;
        ca += va;
        cb += vb;
        uni += va || vb;
    }
    if (ca == 0 && cb == 0) return {1.0, 1.0};
    const double dice = 2.0 * static_cast<double>(inter) / static_cast<double>(ca + cb);
    const double jac = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    return {dice, jac};
}

double percentile_linear(std::vector<double> values, double pct) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const double rank = pct / 100.0 * (static_cast<double>(values.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(rank);
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

}  // namespace oracles
