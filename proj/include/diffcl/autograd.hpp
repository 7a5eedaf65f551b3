#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "diffcl/tensor.hpp"

namespace diffcl {

// Tape-based reverse-mode autodiff. Each forward op allocates a Node that
// keeps its parents alive and knows how to push gradients back to them.
// Graphs are rebuilt every iteration; parameters are long-lived leaf nodes.
class Node;
using NodePtr = std::shared_ptr<Node>;

class Node {
public:
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::string name;  // nonempty for parameters
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;

    explicit Node(Tensor v) : value(std::move(v)) {}

    void accumulate(const Tensor& g);
    void ensure_grad();
    void zero_grad() { grad = Tensor(); }
};

NodePtr constant(Tensor v);
NodePtr make_param(Tensor v, std::string name);

// Runs the tape from a scalar root (numel == 1), seeding d(root)/d(root) = 1.
void backward(const NodePtr& root);

// ---- elementwise ----
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr div_(const NodePtr& a, const NodePtr& b);
NodePtr add_scalar(const NodePtr& a, double s);
NodePtr mul_scalar(const NodePtr& a, double s);
NodePtr relu(const NodePtr& a);
NodePtr leaky_relu(const NodePtr& a, double slope = 0.01);
NodePtr sigmoid(const NodePtr& a);
NodePtr softplus(const NodePtr& a);
NodePtr exp_(const NodePtr& a);
NodePtr log_(const NodePtr& a);
NodePtr clamp_min(const NodePtr& a, double lo);

// ---- reductions ----
NodePtr sum_all(const NodePtr& a);                // -> [1]
NodePtr mean_all(const NodePtr& a);               // -> [1]
NodePtr sum_per_channel(const NodePtr& a);        // [N,C,...] -> [C]

// ---- linear algebra ----
// x: [rows, in], w: [out, in], b: [out] (b may be null) -> [rows, out]
NodePtr linear(const NodePtr& x, const NodePtr& w, const NodePtr& b);
// rows of a [p, d] against rows of b [q, d] -> [p, q] of dot products
NodePtr matmul_nt(const NodePtr& a, const NodePtr& b);

// ---- shape / layout ----
NodePtr reshape(const NodePtr& a, Shape s);
NodePtr concat_ch(const NodePtr& a, const NodePtr& b);  // along dim 1 of [N,C,...]
// gathers rows at flat indices from [R, C]-viewed tensor -> [idx.size(), C]
NodePtr gather_rows(const NodePtr& a, std::vector<std::size_t> idx, int row_len);
// permutes the S dim of [N, S, C]; idx holds source positions (out[s] = in[idx[s]])
NodePtr permute_seq(const NodePtr& a, std::vector<int> idx);

// ---- conv / spatial (tensors are [N, C, H, L, D]) ----
enum class PadMode { Zero, Replicate };
NodePtr conv3d(const NodePtr& x, const NodePtr& w, const NodePtr& b, int stride,
               int pad, PadMode mode = PadMode::Zero);
NodePtr upsample_nearest2(const NodePtr& x);
NodePtr channel_mean(const NodePtr& x);          // -> [N,1,H,L,D]
NodePtr channel_max(const NodePtr& x);           // -> [N,1,H,L,D]
NodePtr broadcast_mul_ch(const NodePtr& x, const NodePtr& gate);  // gate [N,1,H,L,D]
NodePtr add_per_sample_channel_bias(const NodePtr& x, const NodePtr& v);  // v [N,C]

// ---- normalization ----
NodePtr group_norm(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                   int groups, double eps = 1e-5);
NodePtr layer_norm_last(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                        double eps = 1e-5);  // normalizes dim 2 of [N,S,C]
NodePtr l2_normalize_ch(const NodePtr& x, double eps = 1e-12);  // unit norm per voxel

// ---- sequence layout ----
NodePtr to_seq(const NodePtr& x);                     // [N,C,H,L,D] -> [N,S,C]
NodePtr from_seq(const NodePtr& x, Shape spatial);    // [N,S,C] -> [N,C,H,L,D]

// ---- softmax ----
NodePtr softmax_ch(const NodePtr& x);  // over dim 1 of [N,C,...]

// ---- selective state-space scan ----
// x [N,S,C]; a,b,c [N,S,C,K]. h_t = a_t*h_{t-1} + b_t*x_t (per c,k, x broadcast
// over k); y_t[c] = sum_k c_t[c,k]*h_t[c,k].
NodePtr selective_scan_op(const NodePtr& x, const NodePtr& a, const NodePtr& b,
                          const NodePtr& c);

// SSM parameter plumbing
NodePtr outer_cs(const NodePtr& dt, const NodePtr& a);   // [N,S,C] x [C,K] -> [N,S,C,K]
NodePtr outer_ck(const NodePtr& dt, const NodePtr& b);   // [N,S,C] x [N,S,K] -> [N,S,C,K]
NodePtr broadcast_k(const NodePtr& c, int channels);     // [N,S,K] -> [N,S,C,K]
NodePtr scale_last(const NodePtr& x, const NodePtr& s);  // [N,S,C] * [C] broadcast

// ---- frequency domain ----
// Applies a fixed binary mask in the centered spectrum, per channel of
// [N,C,H,L,D]. Linear and self-adjoint, so backward reapplies the filter.
NodePtr high_pass_op(const NodePtr& x, const std::vector<std::uint8_t>& centered_mask);

// ---- contrastive ----
// scores_p, scores_n: [p, k] cosine scores (positives / negatives for one
// class). Returns the summed InfoNCE terms, max-subtraction stabilized.
NodePtr contrastive_terms(const NodePtr& scores_p, const NodePtr& scores_n, double tau);

// parameter utilities
void zero_all_grads(const std::vector<NodePtr>& params);

}  // namespace diffcl
