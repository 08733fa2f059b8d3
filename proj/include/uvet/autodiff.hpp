#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "uvet/tensor.hpp"

namespace uvet::ad {

using NodeId = std::uint32_t;
using GradMap = std::map<NodeId, Tensor>;

// Reverse-mode tape. A forward pass records one node per primitive; backward
// replays the records in exact reverse order, pulling adjoints into the
// inputs. A tape is single-use: the second backward() throws.
//
// Gradients only flow where requested: a node requires grad iff any of its
// inputs does, and pull rules skip inputs that do not (encoder weights stay
// grad-free during an attack, only the image leaf accumulates).
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    NodeId leaf(Tensor value, bool requires_grad = false);

    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double s);
    NodeId matmul(NodeId a, NodeId b);
    NodeId matmul_nt(NodeId a, NodeId b);  // value(a) * value(b)^T
    NodeId add_rowvec(NodeId a, NodeId v);
    NodeId softmax_rows(NodeId a);
    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, double eps);
    NodeId gelu(NodeId x);
    NodeId mse(NodeId a, NodeId b);  // 1-element output

    // out[i] = in[index[i]]; every source index used at most once.
    NodeId gather(NodeId a, std::vector<std::size_t> index, Shape out_shape);
    NodeId concat_rows(NodeId top, NodeId bottom);
    NodeId slice_cols(NodeId a, std::size_t c0, std::size_t c1);
    NodeId concat_cols(const std::vector<NodeId>& parts);
    NodeId row_scale(NodeId a, std::vector<double> weights);
    NodeId mul_const(NodeId a, Tensor factor);

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
    std::size_t num_nodes() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    // Seeded reverse pass from `root`; returns gradients for every
    // differentiable leaf, keyed by leaf id.
    GradMap backward(NodeId root, const Tensor& seed);
    GradMap backward(NodeId root);  // scalar root, seed = [1]

private:
    using PullFn = std::function<void(Tape&, const Tensor& out_adj)>;

    struct Node {
        Tensor value;
        bool requires_grad = false;
        bool is_leaf = false;
        PullFn pull;  // empty for leaves
    };

    NodeId push(Tensor value, bool requires_grad, PullFn pull);
    void accumulate(NodeId id, const Tensor& grad);
    Tensor& adjoint(NodeId id);

    std::vector<Node> nodes_;
    std::vector<Tensor> adjoints_;
    bool consumed_ = false;
};

// Samples n_coords coordinates of x and compares the tape gradient of fn
// against central differences (f(x+h)-f(x-h))/2h. Returns the max relative
// error |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
using TracedFn = std::function<NodeId(Tape&, NodeId input)>;
double grad_check(const TracedFn& fn, const Tensor& x, double h, std::size_t n_coords,
                  std::uint64_t rng_seed);

namespace testhooks {
// Flips the sign of softmax's backward rule. Exists so the validation
// harness can prove the grad checker catches a broken rule.
void set_softmax_backward_sign_flip(bool enabled);
bool softmax_backward_sign_flip();
}  // namespace testhooks

}  // namespace uvet::ad
