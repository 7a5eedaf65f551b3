#pragma once

#include <cstdint>
#include <vector>

#include "diffcl/tensor.hpp"

namespace diffcl {

// Diffusion timetable. Index t runs 1..T; alpha_bar(0) == 1 (clean endpoint).
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // [T]
    std::vector<double> alpha;      // [T], 1 - beta
    std::vector<double> alpha_bar;  // [T], running product of alpha

    double abar(int t) const;  // t in [0, T]
};

struct NoisyLabelField {
    Tensor values;  // [C,H,L,D]
    int t = 0;
    Tensor noise;   // the epsilon draw, retained for testing
};

NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

// one-hot in {-1,+1}: channel c is +1 where label == c, else -1
Tensor onehot_encode(const LabelGrid& labels, int num_classes);
LabelGrid onehot_decode(const Tensor& encoded);

NoisyLabelField forward_noise(const Tensor& y0, int t, const NoiseSchedule& sched,
                              std::uint64_t seed);
NoisyLabelField forward_noise_with(const Tensor& y0, int t, const NoiseSchedule& sched,
                                   const Tensor& noise);

Tensor predict_x0_from_eps(const Tensor& x_t, const Tensor& eps_pred, int t,
                           const NoiseSchedule& sched);

// deterministic DDIM step (eta = 0); tau_prev == 0 means the clean endpoint
Tensor ddim_reverse_step(const Tensor& x_tau, const Tensor& x0_pred, int tau, int tau_prev,
                         const NoiseSchedule& sched);

}  // namespace diffcl
