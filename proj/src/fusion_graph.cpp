#include "hada/fusion_graph.hpp"

namespace hada {

NodeId project_tokens(Tape& tape, const FeatureRecord& record, NodeId weight, NodeId bias) {
    NodeId tokens = tape.constant(record.tokens);
    return tape.add_rowvec(tape.matmul_nt(tokens, weight), bias);
}

NodeId project_tokens(Tape& tape, const FeatureRecord& record, NodeId weight) {
    NodeId tokens = tape.constant(record.tokens);
    return tape.matmul_nt(tokens, weight);
}

GraphTopology build_topology(const std::vector<std::size_t>& rows_per_model) {
    if (rows_per_model.empty()) {
        throw ShapeError("build_graph: at least one model required");
    }
    GraphTopology topo;
    topo.n_models = rows_per_model.size();
    topo.n_items = 1;
    topo.item_offset = {0};
    std::size_t off = 0;
    for (std::size_t rows : rows_per_model) {
        if (rows < 1) throw ShapeError("build_graph: model with zero rows (CLS required)");
        topo.cls_nodes.push_back(off);  // row 0 of each model block is CLS
        off += rows;
    }
    topo.n_nodes = off;
    // edge order: destination-major, sources in node order
    for (std::size_t j = 0; j < topo.n_models; ++j) {
        for (std::size_t x = 0; x < topo.n_nodes; ++x) {
            topo.edge_src.push_back(x);
            topo.edge_dst.push_back(topo.cls_nodes[j]);
            topo.edge_seg.push_back(j);
        }
    }
    return topo;
}

GraphTopology batch_topologies(const std::vector<GraphTopology>& topos) {
    if (topos.empty()) throw ShapeError("batch_graphs: empty batch");
    GraphTopology out;
    out.n_models = topos[0].n_models;
    std::size_t node_off = 0, seg_off = 0;
    for (const auto& t : topos) {
        if (t.n_models != out.n_models) {
            throw ShapeError("batch_graphs: item graphs disagree on model count");
        }
        out.item_offset.push_back(node_off);
        for (std::size_t c : t.cls_nodes) out.cls_nodes.push_back(c + node_off);
        for (std::size_t e = 0; e < t.n_edges(); ++e) {
            out.edge_src.push_back(t.edge_src[e] + node_off);
            out.edge_dst.push_back(t.edge_dst[e] + node_off);
            out.edge_seg.push_back(t.edge_seg[e] + seg_off);
        }
        node_off += t.n_nodes;
        seg_off += t.n_cls();
        out.n_items += t.n_items;
    }
    out.n_nodes = node_off;
    return out;
}

FusionGraph build_graph(Tape& tape, const std::vector<NodeId>& projected_per_model) {
    std::vector<std::size_t> rows;
    rows.reserve(projected_per_model.size());
    for (NodeId m : projected_per_model) rows.push_back(tape.value(m).rows());
    FusionGraph g;
    g.topo = build_topology(rows);
    g.nodes = projected_per_model.size() == 1 ? projected_per_model[0]
                                              : tape.concat_rows(projected_per_model);
    return g;
}

FusionGraph batch_graphs(Tape& tape, const std::vector<FusionGraph>& graphs) {
    std::vector<GraphTopology> topos;
    std::vector<NodeId> nodes;
    for (const auto& g : graphs) {
        topos.push_back(g.topo);
        nodes.push_back(g.nodes);
    }
    FusionGraph out;
    out.topo = batch_topologies(topos);
    out.nodes = nodes.size() == 1 ? nodes[0] : tape.concat_rows(nodes);
    return out;
}

}  // namespace hada
