#include <algorithm>
#include <cmath>
#include <string>

#include "diffcl/rng.hpp"
#include "diffcl/volume.hpp"

namespace diffcl {

namespace {

// separable Gaussian blur with reflect padding; sigma in voxels
void gaussian_blur(Tensor& img, double sigma) {
    if (sigma <= 0.0) return;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
        kernel[static_cast<std::size_t>(i + radius)] = w;
        sum += w;
    }
    for (auto& w : kernel) w /= sum;

    const int h = img.dim(0), l = img.dim(1), d = img.dim(2);
    auto reflect = [](int i, int n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i - 1;
            if (i >= n) i = 2 * n - 1 - i;
        }
        return i;
    };
    Tensor tmp(img.shape);
    // axis 0
    for (int z = 0; z < h; ++z)
        for (int y = 0; y < l; ++y)
            for (int x = 0; x < d; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[static_cast<std::size_t>(i + radius)] *
                           img.data[flat3(img.shape, reflect(z + i, h), y, x)];
                tmp.data[flat3(img.shape, z, y, x)] = acc;
            }
    // axis 1
    for (int z = 0; z < h; ++z)
        for (int y = 0; y < l; ++y)
            for (int x = 0; x < d; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[static_cast<std::size_t>(i + radius)] *
                           tmp.data[flat3(img.shape, z, reflect(y + i, l), x)];
                img.data[flat3(img.shape, z, y, x)] = acc;
            }
    // axis 2
    for (int z = 0; z < h; ++z)
        for (int y = 0; y < l; ++y)
            for (int x = 0; x < d; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[static_cast<std::size_t>(i + radius)] *
                           img.data[flat3(img.shape, z, y, reflect(x + i, d))];
                tmp.data[flat3(img.shape, z, y, x)] = acc;
            }
    img = tmp;
}

}  // namespace

void normalize_intensity(Tensor& image) {
    const double n = static_cast<double>(image.numel());
    double mean = 0.0;
    for (double v : image.data) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : image.data) var += (v - mean) * (v - mean);
    var /= n;
    const double sd = std::sqrt(std::max(var, 1e-12));
    for (auto& v : image.data) v = (v - mean) / sd;
}

std::vector<VolumeSample> gen_synthetic_dataset(const GenSpec& spec) {
    if (spec.grid.size() != 3 || spec.grid[0] < 8 || spec.grid[1] < 8 || spec.grid[2] < 8) {
        throw ConfigError("gen_synthetic_dataset: grid must be at least 8 per axis");
    }
    if (spec.num_classes < 2) throw ConfigError("gen_synthetic_dataset: num_classes must be >= 2");
    if (spec.count < 1) throw ConfigError("gen_synthetic_dataset: count must be >= 1");
    if (spec.radius_min < 0.0 || spec.radius_max < spec.radius_min) {
        throw ConfigError("gen_synthetic_dataset: radius_min/radius_max invalid");
    }
    const int min_axis = std::min({spec.grid[0], spec.grid[1], spec.grid[2]});
    if (spec.radius_max > 0.0 && 2.0 * spec.radius_max > static_cast<double>(min_axis)) {
        throw ConfigError("gen_synthetic_dataset: radius_max too large for grid (field radius_max)");
    }

    std::vector<VolumeSample> out;
    out.reserve(static_cast<std::size_t>(spec.count));
    for (int s = 0; s < spec.count; ++s) {
        Rng rng(derive_seed(spec.seed, 0x5eed5a1eull, static_cast<std::uint64_t>(s)));
        VolumeSample v;
        v.id = "synth-" + std::to_string(spec.seed) + "-" + std::to_string(s);
        v.image = Tensor(spec.grid, 0.0);
        v.label = LabelGrid(spec.grid, 0);

        // one ellipsoid per foreground class, up to a random count in [1, C-1]
        const int max_structs = spec.num_classes - 1;
        const int n_structs = max_structs == 1 ? 1 : rng.range(1, max_structs);
        for (int f = 0; f < n_structs; ++f) {
            const int cls = f + 1;
            std::array<double, 3> radii;
            for (auto& r : radii) r = rng.uniform(spec.radius_min, spec.radius_max);
            std::array<double, 3> center;
            for (int a = 0; a < 3; ++a) {
                const double margin = radii[static_cast<std::size_t>(a)];
                const double lo = margin;
                const double hi = static_cast<double>(spec.grid[a]) - 1.0 - margin;
                center[static_cast<std::size_t>(a)] = hi <= lo ? (lo + hi) / 2.0 : rng.uniform(lo, hi);
            }
            if (radii[0] <= 0.0) continue;  // radius 0: all background
            for (int z = 0; z < spec.grid[0]; ++z)
                for (int y = 0; y < spec.grid[1]; ++y)
                    for (int x = 0; x < spec.grid[2]; ++x) {
                        const double dz = (z - center[0]) / radii[0];
                        const double dy = (y - center[1]) / radii[1];
                        const double dx = (x - center[2]) / radii[2];
                        if (dz * dz + dy * dy + dx * dx <= 1.0) {
                            const std::size_t i = flat3(spec.grid, z, y, x);
                            v.label->data[i] = cls;
                            v.image.data[i] = 1.0;
                        }
                    }
        }

        gaussian_blur(v.image, spec.blur_sigma);
        for (auto& val : v.image.data) val += rng.normal() * spec.noise_sigma;
        normalize_intensity(v.image);
        out.push_back(std::move(v));
    }
    return out;
}

DatasetSplit split_dataset(const std::vector<VolumeSample>& samples, int labeled_count,
                           std::uint64_t seed) {
    const int n = static_cast<int>(samples.size());
    if (labeled_count < 1 || labeled_count >= n) {
        throw ConfigError("split_dataset: labeled_count must be in [1, count)");
    }
    std::vector<int> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(derive_seed(seed, 0x51117ull));
    rng.shuffle(order);

    DatasetSplit out;
    out.seed = seed;
    for (int i = 0; i < n; ++i) {
        const VolumeSample& s = samples[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        if (i < labeled_count) {
            out.labeled.push_back(s);
        } else {
            VolumeSample stripped = s;
            stripped.label.reset();
            out.unlabeled.push_back(std::move(stripped));
            out.unlabeled_truth.push_back(s);
        }
    }
    return out;
}

}  // namespace diffcl
