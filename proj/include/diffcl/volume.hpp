#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "diffcl/tensor.hpp"

namespace diffcl {

struct VolumeSample {
    Tensor image;                    // [H,L,D]
    std::optional<LabelGrid> label;  // same shape when present
    std::string id;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};

    const Shape& shape() const { return image.shape; }
};

struct DatasetSplit {
    std::vector<VolumeSample> labeled;
    std::vector<VolumeSample> unlabeled;  // labels stripped from the training view
    std::uint64_t seed = 0;
    // ground truth of the unlabeled part, retained for evaluation only
    std::vector<VolumeSample> unlabeled_truth;
};

// Synthetic dataset: randomly placed ellipsoids with Gaussian-blurred
// intensity boundaries plus additive noise. Labels stay crisp.
struct GenSpec {
    Shape grid{16, 16, 16};
    int count = 1;
    int num_classes = 2;
    double noise_sigma = 0.5;
    double blur_sigma = 1.0;
    double radius_min = 3.0;
    double radius_max = 5.0;
    std::uint64_t seed = 0;
};

std::vector<VolumeSample> gen_synthetic_dataset(const GenSpec& spec);

DatasetSplit split_dataset(const std::vector<VolumeSample>& samples, int labeled_count,
                           std::uint64_t seed);

enum class CropMode { Random, Center };
VolumeSample crop_patch(const VolumeSample& sample, const Shape& patch_size, CropMode mode,
                        std::uint64_t seed);

VolumeSample augment(const VolumeSample& sample, std::uint64_t seed);

// grid-preserving orthogonal transform: permute axes then flip; the set of
// all 48 of them is closed under composition
struct OrthoTransform {
    std::array<int, 3> perm{0, 1, 2};
    std::array<bool, 3> flip{false, false, false};
};
VolumeSample apply_ortho(const VolumeSample& sample, const OrthoTransform& t);
Tensor apply_ortho_grid(const Tensor& grid, const OrthoTransform& t);
std::vector<OrthoTransform> all_ortho_transforms();

// zero mean / unit variance over the whole volume, in place
void normalize_intensity(Tensor& image);

// NIfTI-1 single-file volumes (.nii or .nii.gz)
VolumeSample load_volume(const std::string& path);
void save_volume(const VolumeSample& sample, const std::string& path);

}  // namespace diffcl
