#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "hada/tensor.hpp"

namespace hada {

using NodeId = std::uint32_t;

// Reverse-mode differentiation tape. Operations append nodes in evaluation
// order, so the recorded list is already topologically sorted; backward()
// walks it once in reverse. Single-threaded per training context.
class Tape {
public:
    // Leaves. constant() values never need their gradients read back but the
    // buffer exists so backward rules stay uniform.
    NodeId constant(Tensor t);
    NodeId param(Tensor t);

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    const Tensor& grad(NodeId id) const { return nodes_[id].grad; }
    std::size_t node_count() const { return nodes_.size(); }

    // --- elementwise ---
    NodeId add(NodeId a, NodeId b);
    // matrix + row-broadcast vector
    NodeId add_rowvec(NodeId m, NodeId v);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double c);
    NodeId add_const(NodeId a, double c);
    NodeId leaky_relu(NodeId a, double slope);
    NodeId elu(NodeId a);
    NodeId sigmoid(NodeId a);
    NodeId log(NodeId a);
    NodeId abs(NodeId a);
    // Clamp values to [lo, hi]; gradient passes through only where unclamped.
    NodeId clamp(NodeId a, double lo, double hi);
    // Multiply every element of t by the scalar node s.
    NodeId mul_scalar(NodeId t, NodeId s);
    // Elementwise t / s for a scalar node s.
    NodeId div_scalar(NodeId t, NodeId s);

    // --- linear algebra ---
    NodeId matmul(NodeId a, NodeId b);     // [m,k]x[k,n] -> [m,n]
    NodeId matmul_nt(NodeId a, NodeId b);  // [m,k]x[n,k]^T -> [m,n]
    NodeId matvec(NodeId m, NodeId v);     // [r,c]x[c] -> [r]
    NodeId transpose(NodeId a);
    NodeId dot(NodeId a, NodeId b);  // vectors -> scalar

    // --- structure ---
    NodeId concat_rows(const std::vector<NodeId>& mats);
    NodeId concat_cols(const std::vector<NodeId>& mats);
    NodeId gather_rows(NodeId m, std::vector<std::size_t> idx);
    // rows of m scaled by per-row weights w: out[e,:] = m[e,:] * w[e]
    NodeId scale_rows(NodeId m, NodeId w);
    // sum rows of m into n_seg buckets keyed by seg[e]
    NodeId segment_sum(NodeId m, std::vector<std::size_t> seg, std::size_t n_seg);
    NodeId diag(NodeId m);  // main diagonal of a square matrix

    // --- reductions / normalization ---
    NodeId sum(NodeId a);
    NodeId mean(NodeId a);
    NodeId row_logsumexp(NodeId m);  // [r,c] -> [r]
    // softmax within segments of a score vector; every segment must be non-empty
    NodeId segment_softmax(NodeId scores, std::vector<std::size_t> seg, std::size_t n_seg);
    // rank-1: whole-vector L2 normalize; rank-2: per-row
    NodeId l2_normalize(NodeId a);

    // Accumulate d(root)/d(node) into every grad buffer. root must be scalar.
    void backward(NodeId root);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void()> back;  // empty for leaves
    };

    NodeId push(Tensor value, std::function<void()> back = {});
    Tensor& grad_mut(NodeId id) { return nodes_[id].grad; }

    std::vector<Node> nodes_;
};

}  // namespace hada
