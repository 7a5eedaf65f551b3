#include "diffcl/ddim.hpp"

#include <cmath>
#include <string>

#include "diffcl/rng.hpp"

namespace diffcl {

double NoiseSchedule::abar(int t) const {
    if (t == 0) return 1.0;
    if (t < 1 || t > T) throw ConfigError("timestep " + std::to_string(t) + " outside [0, " +
                                          std::to_string(T) + "]");
    return alpha_bar[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw ConfigError("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
        throw ConfigError("make_schedule: need 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(static_cast<std::size_t>(T));
    s.alpha.resize(static_cast<std::size_t>(T));
    s.alpha_bar.resize(static_cast<std::size_t>(T));
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t) / (T - 1);
        const double b = beta_start + (beta_end - beta_start) * frac;
        s.beta[static_cast<std::size_t>(t)] = b;
        s.alpha[static_cast<std::size_t>(t)] = 1.0 - b;
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<std::size_t>(t)] = prod;
    }
    return s;
}

Tensor onehot_encode(const LabelGrid& labels, int num_classes) {
    const auto& sh = labels.shape;
    Tensor out({num_classes, sh[0], sh[1], sh[2]}, -1.0);
    const std::size_t sp = labels.numel();
    for (std::size_t i = 0; i < sp; ++i) {
        const int v = labels.data[i];
        if (v < 0 || v >= num_classes) {
            throw ConfigError("onehot_encode: label value " + std::to_string(v) +
                              " outside [0, " + std::to_string(num_classes) + ")");
        }
        out.data[static_cast<std::size_t>(v) * sp + i] = 1.0;
    }
    return out;
}

LabelGrid onehot_decode(const Tensor& encoded) {
    if (encoded.ndim() != 4) throw ShapeError("onehot_decode: expected [C,H,L,D]");
    const int c = encoded.dim(0);
    LabelGrid out({encoded.dim(1), encoded.dim(2), encoded.dim(3)});
    const std::size_t sp = out.numel();
    for (std::size_t i = 0; i < sp; ++i) {
        int best = 0;
        double bv = encoded.data[i];
        for (int ic = 1; ic < c; ++ic) {
            const double v = encoded.data[static_cast<std::size_t>(ic) * sp + i];
            if (v > bv) {
                bv = v;
                best = ic;
            }
        }
        out.data[i] = best;
    }
    return out;
}

NoisyLabelField forward_noise_with(const Tensor& y0, int t, const NoiseSchedule& sched,
                                   const Tensor& noise) {
    if (t < 1 || t > sched.T) {
        throw ConfigError("forward_noise: t=" + std::to_string(t) + " outside [1, " +
                          std::to_string(sched.T) + "]");
    }
    require_shape(noise.shape, y0.shape, "forward_noise noise");
    const double ab = sched.abar(t);
    const double sa = std::sqrt(ab);
    const double sn = std::sqrt(1.0 - ab);
    NoisyLabelField out;
    out.t = t;
    out.noise = noise;
    out.values = Tensor(y0.shape);
    for (std::size_t i = 0; i < y0.numel(); ++i) {
        out.values.data[i] = sa * y0.data[i] + sn * noise.data[i];
    }
    return out;
}

NoisyLabelField forward_noise(const Tensor& y0, int t, const NoiseSchedule& sched,
                              std::uint64_t seed) {
    Rng rng(seed);
    Tensor eps(y0.shape);
    for (auto& v : eps.data) v = rng.normal();
    return forward_noise_with(y0, t, sched, eps);
}

Tensor predict_x0_from_eps(const Tensor& x_t, const Tensor& eps_pred, int t,
                           const NoiseSchedule& sched) {
    require_shape(eps_pred.shape, x_t.shape, "predict_x0_from_eps");
    const double ab = sched.abar(t);
    if (ab <= 0.0) throw NumericError("predict_x0_from_eps: alpha_bar is zero at t");
    const double sa = std::sqrt(ab);
    const double sn = std::sqrt(1.0 - ab);
    Tensor out(x_t.shape);
    for (std::size_t i = 0; i < x_t.numel(); ++i) {
        out.data[i] = (x_t.data[i] - sn * eps_pred.data[i]) / sa;
    }
    return out;
}

Tensor ddim_reverse_step(const Tensor& x_tau, const Tensor& x0_pred, int tau, int tau_prev,
                         const NoiseSchedule& sched) {
    if (!(tau_prev < tau)) throw ConfigError("ddim_reverse_step: tau_prev must be < tau");
    require_shape(x0_pred.shape, x_tau.shape, "ddim_reverse_step");
    const double ab_t = sched.abar(tau);
    const double ab_p = sched.abar(tau_prev);
    if (ab_t >= 1.0) throw NumericError("ddim_reverse_step: alpha_bar(tau) == 1");
    const double sa_t = std::sqrt(ab_t);
    const double sn_t = std::sqrt(1.0 - ab_t);
    const double sa_p = std::sqrt(ab_p);
    const double sn_p = std::sqrt(1.0 - ab_p);
    Tensor out(x_tau.shape);
    for (std::size_t i = 0; i < x_tau.numel(); ++i) {
        const double eps_dir = (x_tau.data[i] - sa_t * x0_pred.data[i]) / sn_t;
        out.data[i] = sa_p * x0_pred.data[i] + sn_p * eps_dir;
    }
    return out;
}

}  // namespace diffcl
