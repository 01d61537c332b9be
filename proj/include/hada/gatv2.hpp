#pragma once

#include "hada/fusion_graph.hpp"
#include "hada/tape.hpp"

namespace hada {

// One attention head staged on a tape: W1, W2 are [d' x d], A is [d'].
struct GatHeadRef {
    NodeId w1;
    NodeId w2;
    NodeId attn;
};

struct GatLayerRef {
    std::vector<GatHeadRef> heads;
    NodeId out_w;  // [d_out x H*d']
    NodeId out_b;  // [d_out]
    double leaky_slope = 0.2;
};

// Per-edge score A^T LeakyReLU(W1 x_src + W2 x_dst), shape [|E|].
NodeId edge_scores(Tape& tape, const GatHeadRef& head, const FusionGraph& graph,
                   double leaky_slope);

// Softmax of edge scores within each destination-CLS segment.
NodeId attention_normalize(Tape& tape, NodeId scores, const FusionGraph& graph);

// Updated CLS rows: ELU(sum over incoming edges of alpha * W1 x_src),
// shape [n_cls x d']. Non-CLS nodes receive no edges and are untouched.
NodeId node_update(Tape& tape, const GatHeadRef& head, NodeId attention,
                   const FusionGraph& graph);

// Concat of all head updates followed by the output affine, [n_cls x d_out].
NodeId multi_head_forward(Tape& tape, const GatLayerRef& layer, const FusionGraph& graph);

}  // namespace hada
