#include "diffcl/losses.hpp"

#include <cmath>
#include <string>

namespace diffcl {

void LossWeights::validate() const {
    if (mu1 < 0 || mu2 < 0 || beta_base < 0 || lambda1 < 0 || lambda2 < 0 || eta < 0) {
        throw ConfigError("loss weights must be nonnegative");
    }
    if (t_max < 1) throw ConfigError("t_max must be >= 1");
}

double warmup_lambda(double t, double t_max) {
    if (t_max <= 0.0) throw ConfigError("warmup_lambda: t_max must be positive");
    const double u = 1.0 - t / t_max;
    return 2.0 * std::exp(-5.0 * u * u);
}

Tensor onehot01(const LabelGrid& labels, int num_classes) {
    const auto& sh = labels.shape;
    Tensor out({num_classes, sh[0], sh[1], sh[2]}, 0.0);
    const std::size_t sp = labels.numel();
    for (std::size_t i = 0; i < sp; ++i) {
        const int v = labels.data[i];
        if (v < 0 || v >= num_classes) {
            throw ConfigError("onehot01: label value " + std::to_string(v) + " outside [0, " +
                              std::to_string(num_classes) + ")");
        }
        out.data[static_cast<std::size_t>(v) * sp + i] = 1.0;
    }
    return out;
}

NodePtr dice_loss(const NodePtr& probs, const Tensor& target, double smooth) {
    require_shape(target.shape, probs->value.shape, "dice_loss target");
    const int c = probs->value.dim(1);
    auto tgt = constant(target);
    auto inter = sum_per_channel(mul(probs, tgt));             // [C]
    auto psum = sum_per_channel(probs);
    auto tsum = sum_per_channel(tgt);
    auto num = add_scalar(mul_scalar(inter, 2.0), smooth);
    auto den = add_scalar(add(psum, tsum), smooth);
    auto dice_c = div_(num, den);
    // 1 - mean over classes (background included)
    return add_scalar(mul_scalar(sum_all(dice_c), -1.0 / static_cast<double>(c)), 1.0);
}

NodePtr ce_loss(const NodePtr& probs, const Tensor& target, double eps) {
    require_shape(target.shape, probs->value.shape, "ce_loss target");
    const int n = probs->value.dim(0);
    std::size_t sp = 1;
    for (int i = 2; i < probs->value.ndim(); ++i) sp *= static_cast<std::size_t>(probs->value.dim(i));
    const double voxels = static_cast<double>(n) * static_cast<double>(sp);
    auto tgt = constant(target);
    auto nll = mul(tgt, log_(clamp_min(probs, eps)));
    return mul_scalar(sum_all(nll), -1.0 / voxels);
}

SupervisedLosses supervised_losses(const NodePtr& probs_ds, const NodePtr& probs_cs,
                                   const Tensor& target_onehot, const LossWeights& w,
                                   double t_epoch) {
    SupervisedLosses out;
    out.beta = w.beta_base * warmup_lambda(t_epoch, static_cast<double>(w.t_max));
    out.ds = add(dice_loss(probs_ds, target_onehot),
                 mul_scalar(ce_loss(probs_ds, target_onehot), out.beta));
    out.cs = add(dice_loss(probs_cs, target_onehot),
                 mul_scalar(ce_loss(probs_cs, target_onehot), out.beta));
    return out;
}

CrossPseudoLosses cross_pseudo_losses(const NodePtr& probs_ds_u, const Tensor& pseudo_cs,
                                      const NodePtr& probs_cs_u, const Tensor& pseudo_ds,
                                      const LossWeights& w) {
    CrossPseudoLosses out;
    out.ds = add(dice_loss(probs_ds_u, pseudo_cs),
                 mul_scalar(ce_loss(probs_ds_u, pseudo_cs), w.lambda1));
    out.cs = add(dice_loss(probs_cs_u, pseudo_ds),
                 mul_scalar(ce_loss(probs_cs_u, pseudo_ds), w.lambda2));
    return out;
}

TotalLosses total_losses(const NodePtr& ds_sup, const NodePtr& cs_sup, const NodePtr& ds_pseudo,
                         const NodePtr& cs_pseudo, const NodePtr& contrastive,
                         const LossWeights& w) {
    TotalLosses out;
    out.cs_unsup = add(cs_pseudo, mul_scalar(contrastive, w.eta));
    out.ds = add(ds_sup, mul_scalar(ds_pseudo, w.mu1));
    out.cs = add(cs_sup, mul_scalar(out.cs_unsup, w.mu2));
    return out;
}

}  // namespace diffcl
