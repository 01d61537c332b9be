#include "hada/gatv2.hpp"

namespace hada {

NodeId edge_scores(Tape& tape, const GatHeadRef& head, const FusionGraph& graph,
                   double leaky_slope) {
    // Per-node transforms first, then per-edge gathers.
    NodeId hx1 = tape.matmul_nt(graph.nodes, head.w1);  // [n_nodes x d']
    NodeId hx2 = tape.matmul_nt(graph.nodes, head.w2);
    NodeId src = tape.gather_rows(hx1, graph.topo.edge_src);
    NodeId dst = tape.gather_rows(hx2, graph.topo.edge_dst);
    NodeId pre = tape.leaky_relu(tape.add(src, dst), leaky_slope);
    return tape.matvec(pre, head.attn);  // [|E|]
}

NodeId attention_normalize(Tape& tape, NodeId scores, const FusionGraph& graph) {
    return tape.segment_softmax(scores, graph.topo.edge_seg, graph.topo.n_cls());
}

NodeId node_update(Tape& tape, const GatHeadRef& head, NodeId attention,
                   const FusionGraph& graph) {
    NodeId hx1 = tape.matmul_nt(graph.nodes, head.w1);
    NodeId src = tape.gather_rows(hx1, graph.topo.edge_src);  // [|E| x d']
    NodeId weighted = tape.scale_rows(src, attention);
    NodeId agg = tape.segment_sum(weighted, graph.topo.edge_seg, graph.topo.n_cls());
    return tape.elu(agg);
}

NodeId multi_head_forward(Tape& tape, const GatLayerRef& layer, const FusionGraph& graph) {
    if (layer.heads.empty()) throw ConfigError("gatv2: layer has no heads");
    std::vector<NodeId> head_outs;
    head_outs.reserve(layer.heads.size());
    for (const auto& head : layer.heads) {
        NodeId scores = edge_scores(tape, head, graph, layer.leaky_slope);
        NodeId attn = attention_normalize(tape, scores, graph);
        head_outs.push_back(node_update(tape, head, attn, graph));
    }
    NodeId cat = head_outs.size() == 1 ? head_outs[0] : tape.concat_cols(head_outs);
    return tape.add_rowvec(tape.matmul_nt(cat, layer.out_w), layer.out_b);
}

}  // namespace hada
