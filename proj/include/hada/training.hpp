#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hada/eval.hpp"
#include "hada/featstore.hpp"
#include "hada/model.hpp"
#include "hada/optim.hpp"
#include "hada/tape.hpp"

namespace hada {

struct TrainConfig {
    std::size_t batch_size = 20;
    std::size_t epochs = 50;
    double lr_max = 1e-4;
    double lr_min = 5e-6;
    double weight_decay = 0.02;
    double dropout = 0.7;
    double tau_init = 0.07;
    double tau_min = 0.001;
    double tau_max = 0.5;
    double alpha_min = 0.1;
    double alpha_max = 0.9;
    int phase = 1;
    std::size_t patience = 5;
    std::uint64_t seed = 42;
    bool restart_schedule = true;  // phase 2 restarts cosine annealing

    void validate() const;
};

// Symmetric InfoNCE over an MxM in-batch similarity matrix with learnable
// temperature. sim[i][j] = S(I_i, T_j); positives on the diagonal.
NodeId itc_loss(Tape& tape, NodeId sim, NodeId tau);

struct HardNegatives {
    std::vector<std::size_t> neg_text;   // per image: hardest non-matching text
    std::vector<std::size_t> neg_image;  // per text: hardest non-matching image
};

// Off-diagonal argmax per row/column; ties broken by lowest index.
HardNegatives mine_hard_negatives(const Tensor& sim);

// Binary cross-entropy over 3M pairs: the M positives plus both hard
// negatives, probabilities clamped to [1e-12, 1-1e-12] before the log.
NodeId itm_loss(Tape& tape, NodeId h_p, NodeId h_s, NodeId w_dc, const HardNegatives& negs);

struct EpochLog {
    std::size_t epoch = 0;
    int phase = 1;
    double train_loss = 0.0;
    double val_rsum = 0.0;
    double lr = 0.0;
    double tau = 0.0;
    double alpha = 0.0;
    double seconds = 0.0;

    std::string to_json() const;
};

struct TrainResult {
    HadaParams best;
    double best_val_rsum = 0.0;
    std::size_t epochs_run = 0;
    std::vector<EpochLog> log;
};

// One forward/backward/update pass over a prepared batch; exposed for the
// full-model gradient check. Returns (loss node, staged params).
struct BatchForward {
    NodeId loss;
    NodeId sim;  // similarity matrix used for ITC and mining
    StagedParams staged;
};
BatchForward batch_total_loss(Tape& tape, const HadaParams& params, const FeatureStore& store,
                              const std::vector<std::string>& image_ids,
                              const std::vector<std::string>& text_ids,
                              std::mt19937_64* dropout_rng);

// Phase 1 freezes alpha at 0; phase 2 starts from the given params with
// alpha = 0.5 clamped to [alpha_min, alpha_max]. Per-epoch: seeded caption
// draw and shuffle, AdamW with cosine annealing, tau/alpha clamps after
// every step, early stopping on validation RSum.
TrainResult train(const FeatureStore& store, const TrainConfig& cfg, HadaParams params);

}  // namespace hada
