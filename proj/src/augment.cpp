#include <algorithm>
#include <string>

#include "diffcl/rng.hpp"
#include "diffcl/volume.hpp"

namespace diffcl {

namespace {

template <typename T>
std::vector<T> transform_grid(const std::vector<T>& src, const Shape& in_shape,
                              const OrthoTransform& t, Shape& out_shape) {
    // output axis a takes its extent from input axis perm[a]
    out_shape = {in_shape[t.perm[0]], in_shape[t.perm[1]], in_shape[t.perm[2]]};
    std::vector<T> dst(src.size());
    for (int z = 0; z < out_shape[0]; ++z)
        for (int y = 0; y < out_shape[1]; ++y)
            for (int x = 0; x < out_shape[2]; ++x) {
                std::array<int, 3> oc{z, y, x};
                std::array<int, 3> ic{0, 0, 0};
                for (int a = 0; a < 3; ++a) {
                    int c = oc[static_cast<std::size_t>(a)];
                    if (t.flip[static_cast<std::size_t>(a)]) c = out_shape[a] - 1 - c;
                    ic[static_cast<std::size_t>(t.perm[static_cast<std::size_t>(a)])] = c;
                }
                dst[flat3(out_shape, z, y, x)] = src[flat3(in_shape, ic[0], ic[1], ic[2])];
            }
    return dst;
}

}  // namespace

Tensor apply_ortho_grid(const Tensor& grid, const OrthoTransform& t) {
    Shape out_shape;
    auto data = transform_grid(grid.data, grid.shape, t, out_shape);
    return Tensor(out_shape, std::move(data));
}

VolumeSample apply_ortho(const VolumeSample& sample, const OrthoTransform& t) {
    VolumeSample out;
    out.id = sample.id;
    out.image = apply_ortho_grid(sample.image, t);
    for (int a = 0; a < 3; ++a) out.spacing[static_cast<std::size_t>(a)] = sample.spacing[static_cast<std::size_t>(t.perm[static_cast<std::size_t>(a)])];
    if (sample.label) {
        Shape out_shape;
        auto data = transform_grid(sample.label->data, sample.label->shape, t, out_shape);
        LabelGrid lg(out_shape);
        lg.data = std::move(data);
        out.label = std::move(lg);
    }
    return out;
}

std::vector<OrthoTransform> all_ortho_transforms() {
    static const std::array<std::array<int, 3>, 6> perms = {
        std::array<int, 3>{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    std::vector<OrthoTransform> out;
    for (const auto& p : perms)
        for (int f = 0; f < 8; ++f) {
            OrthoTransform t;
            t.perm = p;
            t.flip = {(f & 1) != 0, (f & 2) != 0, (f & 4) != 0};
            out.push_back(t);
        }
    return out;
}

VolumeSample crop_patch(const VolumeSample& sample, const Shape& patch_size, CropMode mode,
                        std::uint64_t seed) {
    if (patch_size.size() != 3) throw ConfigError("crop_patch: patch_size must have 3 axes");
    const Shape& vs = sample.shape();
    for (int a = 0; a < 3; ++a) {
        if (patch_size[a] > vs[a]) {
            throw ConfigError("crop_patch: patch " + shape_str(patch_size) +
                              " exceeds volume " + shape_str(vs));
        }
    }
    std::array<int, 3> off{0, 0, 0};
    if (mode == CropMode::Center) {
        for (int a = 0; a < 3; ++a) off[static_cast<std::size_t>(a)] = (vs[a] - patch_size[a]) / 2;
    } else {
        Rng rng(derive_seed(seed, 0xc509ull));
        for (int a = 0; a < 3; ++a)
            off[static_cast<std::size_t>(a)] = static_cast<int>(rng.index(static_cast<std::uint64_t>(vs[a] - patch_size[a] + 1)));
    }
    VolumeSample out;
    out.id = sample.id;
    out.spacing = sample.spacing;
    out.image = Tensor(patch_size);
    if (sample.label) out.label = LabelGrid(patch_size);
    for (int z = 0; z < patch_size[0]; ++z)
        for (int y = 0; y < patch_size[1]; ++y)
            for (int x = 0; x < patch_size[2]; ++x) {
                const std::size_t si = flat3(vs, z + off[0], y + off[1], x + off[2]);
                const std::size_t di = flat3(patch_size, z, y, x);
                out.image.data[di] = sample.image.data[si];
                if (sample.label) out.label->data[di] = sample.label->data[si];
            }
    return out;
}

VolumeSample augment(const VolumeSample& sample, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0xa6a6ull));
    OrthoTransform t;
    // random axis flips
    for (auto& f : t.flip) f = rng.index(2) == 1;
    // one 90-degree rotation about a random axis, k in {0..3}; encoded as a
    // signed permutation so labels stay exact
    const int axis = rng.range(0, 2);
    const int k = rng.range(0, 3);
    const Shape& vs = sample.shape();
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    const bool square = vs[a1] == vs[a2];
    OrthoTransform rot;  // identity by default
    if (square && k != 0) {
        // quarter-turn about `axis`: out(a1) <- in(a2) flipped, out(a2) <- in(a1)
        OrthoTransform q;
        q.perm[static_cast<std::size_t>(axis)] = axis;
        q.perm[static_cast<std::size_t>(a1)] = a2;
        q.perm[static_cast<std::size_t>(a2)] = a1;
        q.flip[static_cast<std::size_t>(a1)] = true;
        VolumeSample tmp = sample;
        for (int i = 0; i < k; ++i) tmp = apply_ortho(tmp, q);
        VolumeSample flipped = apply_ortho(tmp, t);
        return flipped;
    }
    return apply_ortho(sample, t);
}

}  // namespace diffcl
