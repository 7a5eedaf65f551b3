#pragma once

#include "diffcl/autograd.hpp"
#include "diffcl/tensor.hpp"

namespace diffcl {

struct LossWeights {
    double mu1 = 1.0;        // weight of the DS cross-pseudo term
    double mu2 = 1.0;        // weight of the CS unsupervised term
    double beta_base = 0.1;  // beta1 = beta2 = beta_base * warmup(t)
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double eta = 0.5;        // weight of the contrastive term
    int t_max = 300;

    void validate() const;
};

// per-step scalar terms; totals must equal their defining combinations
struct LossReport {
    double ds_sup = 0.0;       // L^d_s
    double cs_sup = 0.0;       // L^c_s
    double ds_pseudo = 0.0;    // L^d_p
    double cs_pseudo = 0.0;    // L^c_p
    double contrastive = 0.0;  // L_cl
    double cs_unsup = 0.0;     // L^c_u
    double ds_total = 0.0;     // L^d
    double cs_total = 0.0;     // L^c
    double warmup = 0.0;       // lambda(t)
    bool cl_skipped = false;
};

// Gaussian warmup: 2.0 * exp(-5 (1 - t/t_max)^2)
double warmup_lambda(double t, double t_max);

// {0,1} one-hot targets in probability space (loss targets, not DDIM inputs)
Tensor onehot01(const LabelGrid& labels, int num_classes);

// probs, targets: [N,C,H,L,D]; targets are gradient-free constants
NodePtr dice_loss(const NodePtr& probs, const Tensor& target, double smooth = 1e-5);
NodePtr ce_loss(const NodePtr& probs, const Tensor& target, double eps = 1e-7);

struct SupervisedLosses {
    NodePtr ds;  // L^d_s
    NodePtr cs;  // L^c_s
    double beta = 0.0;
};
SupervisedLosses supervised_losses(const NodePtr& probs_ds, const NodePtr& probs_cs,
                                   const Tensor& target_onehot, const LossWeights& w,
                                   double t_epoch);

struct CrossPseudoLosses {
    NodePtr ds;  // L^d_p (DS probs vs CS pseudo-labels)
    NodePtr cs;  // L^c_p (CS probs vs DS pseudo-labels)
};
CrossPseudoLosses cross_pseudo_losses(const NodePtr& probs_ds_u, const Tensor& pseudo_cs,
                                      const NodePtr& probs_cs_u, const Tensor& pseudo_ds,
                                      const LossWeights& w);

struct TotalLosses {
    NodePtr ds;       // L^d = L^d_s + mu1 * L^d_p
    NodePtr cs;       // L^c = L^c_s + mu2 * (L^c_p + eta * L_cl)
    NodePtr cs_unsup; // L^c_u
};
TotalLosses total_losses(const NodePtr& ds_sup, const NodePtr& cs_sup, const NodePtr& ds_pseudo,
                         const NodePtr& cs_pseudo, const NodePtr& contrastive,
                         const LossWeights& w);

}  // namespace diffcl
