#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hada/featstore.hpp"
#include "hada/fusion_graph.hpp"
#include "hada/gatv2.hpp"
#include "hada/optim.hpp"
#include "hada/tape.hpp"

namespace hada {

enum class Variant { kHada, kB2 };

// Architecture of the fusion head. Desk-scale tests shrink every dim;
// defaults follow the reference configuration.
struct Arch {
    std::vector<ModelSpec> models;  // ordered; order fixes node/concat layout
    std::size_t d_shared = 512;
    std::size_t d_out = 512;  // GAT output dim; per-head d' = d_out / heads
    std::size_t heads = 4;
    std::size_t d_h = 256;
    std::size_t head_depth = 2;  // final stack: 1 = affine, 2 = affine-ELU-affine
    bool proj_bias = true;
    double dropout = 0.7;
    double leaky_slope = 0.2;
    std::string anchor_model;
    bool normalize_anchor = true;
    Variant variant = Variant::kHada;

    void validate() const;
    std::size_t d_head() const { return d_out / heads; }
    std::size_t glob_total() const;
    std::size_t head_input_dim() const;
    std::uint32_t config_hash() const;
};

// All trainable state. Tensors are keyed by stable names so the optimizer,
// checkpoints and gradient checks all agree on ordering.
struct HadaParams {
    Arch arch;
    ParamSet tensors;
    int phase = 1;

    static HadaParams init(const Arch& arch, double tau_init, std::uint64_t seed);

    double tau() const { return tensors.at("tau").item(); }
    double alpha() const { return tensors.at("alpha").item(); }
    void set_tau(double v) { tensors.at("tau").data[0] = v; }
    void set_alpha(double v) { tensors.at("alpha").data[0] = v; }
    std::size_t scalar_count() const;  // total trainable scalars

    bool operator==(const HadaParams& other) const;
};

// Parameter tensors staged onto a tape for one forward/backward pass.
struct StagedParams {
    std::map<std::string, NodeId> ids;
    NodeId at(const std::string& name) const;
};

StagedParams stage_params(Tape& tape, const HadaParams& params);
GradSet collect_grads(const Tape& tape, const StagedParams& staged);

// All of one item's records for the models in arch order.
using ItemRecords = std::vector<const FeatureRecord*>;

ItemRecords gather_item_records(const FeatureStore& store, const Arch& arch,
                                const std::string& item_id, Modality modality);

// Full fused forward for a batch of items of one modality:
// project -> graph -> GATv2 -> concat with original globals -> final stack
// -> row L2 normalize. Returns [M x d_h]. dropout_rng enables train-mode
// inverted dropout; null means eval mode.
NodeId embed_batch(Tape& tape, const StagedParams& staged, const Arch& arch,
                   const std::vector<ItemRecords>& items, Modality modality,
                   std::mt19937_64* dropout_rng);

// Eval-mode convenience: single item through a private tape.
Tensor embed(const HadaParams& params, const ItemRecords& records, Modality modality);

double similarity(const Tensor& h_p, const Tensor& h_s);

// (1-alpha)*<h_p,h_s> + alpha*<anchor globals>; anchor globals are the raw
// ingested vectors, L2-normalized when arch.normalize_anchor is set.
double weighted_similarity(const HadaParams& params, const Tensor& h_p, const Tensor& h_s,
                           const Tensor& anchor_img_global, const Tensor& anchor_txt_global);

double anchor_dot(const Arch& arch, const Tensor& anchor_img_global,
                  const Tensor& anchor_txt_global);

// sigmoid(W^T [h_p || h_s || |h_p-h_s| || h_p*h_s]) per row; [K] in (0,1).
NodeId discriminate(Tape& tape, NodeId h_p_rows, NodeId h_s_rows, NodeId w_dc);

// Eval-mode scalar version.
double discriminate(const HadaParams& params, const Tensor& h_p, const Tensor& h_s);

void save_checkpoint(const HadaParams& params, const std::filesystem::path& path);
// Load and verify the stored config hash against the expected architecture.
HadaParams load_checkpoint(const std::filesystem::path& path, const Arch& expected);

}  // namespace hada
