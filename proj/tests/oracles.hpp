#pragma once

// Brute-force reference implementations used only by tests. Deliberately
// slow and obviously correct; shares no code with the production library.

#include <array>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace oracles {

struct ScanParams {
    // [t][c][k] flattened as ((t*ch)+c)*k + k_i
    std::vector<double> a_bar, b_bar, c_sel;
    int ch = 1;
    int state = 1;
};

// literal recurrence: h_t = a_t h_{t-1} + b_t x_t, y_t = c_t h_t, h_0 = 0
std::vector<double> naive_scan(const std::vector<double>& x_seq, const ScanParams& p);

// direct triple-sum DFT of a real grid (refuses grids larger than 8^3)
std::vector<std::complex<double>> dft3(const std::vector<double>& grid, int h, int l, int d);
std::vector<double> idft3_real(const std::vector<std::complex<double>>& spec, int h, int l,
                               int d);

// all-pairs directed surface distances between boundary voxel sets of two
// masks (6-connectivity boundary, outside-volume treated as background)
struct SurfaceDistances {
    std::vector<double> a_to_b;  // one entry per boundary voxel of A
    std::vector<double> b_to_a;
    bool a_empty = false;
    bool b_empty = false;
};
SurfaceDistances exhaustive_surface_distances(const std::vector<int>& mask_a,
                                              const std::vector<int>& mask_b, int h, int l,
                                              int d, const std::array<double, 3>& spacing);

// brute-force cosine similarity between two raw vectors
double cosine(const std::vector<double>& a, const std::vector<double>& b);

// exhaustive top-k selection: returns indices of the k largest keys,
// ties broken by lower index
std::vector<int> topk_indices(const std::vector<double>& keys, int k);

// brute-force overlap metrics
std::pair<double, double> overlap_dice_jaccard(const std::vector<int>& a,
                                               const std::vector<int>& b);

// percentile with linear interpolation over a copy of the values
double percentile_linear(std::vector<double> values, double pct);

}  // namespace oracles
