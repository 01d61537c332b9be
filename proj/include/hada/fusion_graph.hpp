#pragma once

#include <string>
#include <vector>

#include "hada/featstore.hpp"
#include "hada/tape.hpp"

namespace hada {

// Structural part of a fusion graph: node/edge indices only, no features.
// Every edge points at a CLS node; each CLS receives an edge from every
// node of the same item including itself.
struct GraphTopology {
    std::size_t n_nodes = 0;
    std::size_t n_models = 0;
    std::size_t n_items = 0;
    std::vector<std::size_t> edge_src;
    std::vector<std::size_t> edge_dst;
    std::vector<std::size_t> edge_seg;     // segment id = cls ordinal of edge_dst
    std::vector<std::size_t> cls_nodes;    // [item*n_models + model] -> node index
    std::vector<std::size_t> item_offset;  // first node index of each item

    std::size_t n_cls() const { return cls_nodes.size(); }
    std::size_t n_edges() const { return edge_src.size(); }
};

struct FusionGraph {
    GraphTopology topo;
    NodeId nodes = 0;  // [n_nodes x d_shared] on the tape
};

// Row-wise affine map of one record's tokens into the shared space.
// Weights live on the tape under proj.{img|txt}.{model}.W / .b.
NodeId project_tokens(Tape& tape, const FeatureRecord& record, NodeId weight, NodeId bias);
NodeId project_tokens(Tape& tape, const FeatureRecord& record, NodeId weight);  // bias-free

// Single-item graph over the given (model, projected-matrix) list, in model
// order. Node rows are the concatenation of all models' rows; edges go from
// every node to every model's CLS.
FusionGraph build_graph(Tape& tape, const std::vector<NodeId>& projected_per_model);

// Disjoint union with index offsets; softmax segments never mix items.
FusionGraph batch_graphs(Tape& tape, const std::vector<FusionGraph>& graphs);

// Topology-only variants for structural tests and reuse.
GraphTopology build_topology(const std::vector<std::size_t>& rows_per_model);
GraphTopology batch_topologies(const std::vector<GraphTopology>& topos);

}  // namespace hada
