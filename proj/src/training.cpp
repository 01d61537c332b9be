#include "hada/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace hada {

void TrainConfig::validate() const {
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2 for contrastive terms");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (lr_max <= 0 || lr_min <= 0 || lr_min > lr_max) throw ConfigError("train: bad lr range");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("train: dropout must be in [0,1)");
    if (tau_min <= 0 || tau_min > tau_max) throw ConfigError("train: bad tau clamp range");
    if (tau_init < tau_min || tau_init > tau_max) throw ConfigError("train: tau_init out of range");
    if (alpha_min > alpha_max || alpha_min < 0.0 || alpha_max > 1.0) {
        throw ConfigError("train: bad alpha clamp range");
    }
    if (phase != 1 && phase != 2) throw ConfigError("train: phase must be 1 or 2");
}

NodeId itc_loss(Tape& tape, NodeId sim, NodeId tau) {
    const Tensor& S = tape.value(sim);
    if (S.rank() != 2 || S.rows() != S.cols()) {
        throw ShapeError("itc_loss: square similarity matrix required, got " + shape_str(S.shape));
    }
    std::size_t M = S.rows();
    if (M < 2) throw ConfigError("itc_loss: batch of M >= 2 pairs required");
    NodeId logits = tape.div_scalar(sim, tau);
    NodeId diag_sum = tape.sum(tape.diag(logits));
    NodeId i2t = tape.sub(tape.sum(tape.row_logsumexp(logits)), diag_sum);
    NodeId t2i = tape.sub(tape.sum(tape.row_logsumexp(tape.transpose(logits))), diag_sum);
    return tape.scale(tape.add(i2t, t2i), 1.0 / static_cast<double>(M));
}

HardNegatives mine_hard_negatives(const Tensor& sim) {
    std::size_t M = sim.rows();
    if (M < 2 || sim.cols() != M) {
        throw ConfigError("mine_hard_negatives: square matrix with M >= 2 required");
    }
    HardNegatives negs;
    negs.neg_text.resize(M);
    negs.neg_image.resize(M);
    for (std::size_t m = 0; m < M; ++m) {
        std::size_t best_t = m == 0 ? 1 : 0;
        std::size_t best_i = m == 0 ? 1 : 0;
        for (std::size_t j = 0; j < M; ++j) {
            if (j == m) continue;
            if (sim.at(m, j) > sim.at(m, best_t)) best_t = j;
            if (sim.at(j, m) > sim.at(best_i, m)) best_i = j;
        }
        negs.neg_text[m] = best_t;
        negs.neg_image[m] = best_i;
    }
    return negs;
}

NodeId itm_loss(Tape& tape, NodeId h_p, NodeId h_s, NodeId w_dc, const HardNegatives& negs) {
    std::size_t M = tape.value(h_p).rows();
    if (negs.neg_text.size() != M || negs.neg_image.size() != M) {
        throw ShapeError("itm_loss: negatives do not match batch size");
    }
    constexpr double kEps = 1e-12;
    auto log_clamped = [&](NodeId p) { return tape.log(tape.clamp(p, kEps, 1.0 - kEps)); };
    auto one_minus = [&](NodeId p) { return tape.add_const(tape.scale(p, -1.0), 1.0); };

    NodeId p_pos = discriminate(tape, h_p, h_s, w_dc);
    NodeId p_neg_t = discriminate(tape, h_p, tape.gather_rows(h_s, negs.neg_text), w_dc);
    NodeId p_neg_i = discriminate(tape, tape.gather_rows(h_p, negs.neg_image), h_s, w_dc);

    NodeId ll = tape.add(tape.sum(log_clamped(p_pos)),
                         tape.add(tape.sum(log_clamped(one_minus(p_neg_t))),
                                  tape.sum(log_clamped(one_minus(p_neg_i)))));
    return tape.scale(ll, -1.0 / (3.0 * static_cast<double>(M)));
}

std::string EpochLog::to_json() const {
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["phase"] = phase;
    j["train_loss"] = train_loss;
    j["val_rsum"] = val_rsum;
    j["lr"] = lr;
    j["tau"] = tau;
    j["alpha"] = alpha;
    j["seconds"] = seconds;
    return j.dump();
}

BatchForward batch_total_loss(Tape& tape, const HadaParams& params, const FeatureStore& store,
                              const std::vector<std::string>& image_ids,
                              const std::vector<std::string>& text_ids,
                              std::mt19937_64* dropout_rng) {
    if (image_ids.size() != text_ids.size() || image_ids.size() < 2) {
        throw ConfigError("batch: need M >= 2 aligned image/text pairs");
    }
    std::size_t M = image_ids.size();
    const Arch& arch = params.arch;

    BatchForward fwd;
    fwd.staged = stage_params(tape, params);

    std::vector<ItemRecords> img_items, txt_items;
    img_items.reserve(M);
    txt_items.reserve(M);
    for (std::size_t m = 0; m < M; ++m) {
        img_items.push_back(gather_item_records(store, arch, image_ids[m], Modality::kImage));
        txt_items.push_back(gather_item_records(store, arch, text_ids[m], Modality::kText));
    }

    NodeId h_p = embed_batch(tape, fwd.staged, arch, img_items, Modality::kImage, dropout_rng);
    NodeId h_s = embed_batch(tape, fwd.staged, arch, txt_items, Modality::kText, dropout_rng);
    NodeId sim = tape.matmul_nt(h_p, h_s);

    if (params.phase == 2) {
        if (arch.anchor_model.empty()) {
            throw ConfigError("train: phase 2 requires an anchor model");
        }
        std::size_t anchor_idx = 0;
        for (std::size_t i = 0; i < arch.models.size(); ++i) {
            if (arch.models[i].id == arch.anchor_model) anchor_idx = i;
        }
        Tensor anchor = Tensor::zeros({M, M});
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < M; ++j) {
                anchor.at(i, j) = anchor_dot(arch, img_items[i][anchor_idx]->global,
                                             txt_items[j][anchor_idx]->global);
            }
        NodeId alpha = fwd.staged.at("alpha");
        NodeId one_minus_alpha = tape.add_const(tape.scale(alpha, -1.0), 1.0);
        sim = tape.add(tape.mul_scalar(sim, one_minus_alpha),
                       tape.mul_scalar(tape.constant(std::move(anchor)), alpha));
    }
    fwd.sim = sim;

    NodeId itc = itc_loss(tape, sim, fwd.staged.at("tau"));
    HardNegatives negs = mine_hard_negatives(tape.value(sim));
    NodeId itm = itm_loss(tape, h_p, h_s, fwd.staged.at("dc.W"), negs);
    fwd.loss = tape.add(itc, itm);
    return fwd;
}

TrainResult train(const FeatureStore& store, const TrainConfig& cfg, HadaParams params) {
    cfg.validate();
    params.arch.dropout = cfg.dropout;
    params.phase = cfg.phase;
    if (cfg.phase == 1) {
        params.set_alpha(0.0);
    } else {
        params.set_alpha(std::clamp(0.5, cfg.alpha_min, cfg.alpha_max));
    }

    // training pairs: images of the train split with their caption lists
    std::vector<const RelevancePair*> train_pairs;
    for (const auto& pair : store.manifest.pairs) {
        for (const auto& it : store.manifest.items) {
            if (it.id == pair.image_id && it.split == Split::kTrain) {
                train_pairs.push_back(&pair);
                break;
            }
        }
    }
    if (train_pairs.size() < cfg.batch_size && train_pairs.size() < 2) {
        throw ConfigError("train: train split has too few pairs");
    }

    std::size_t n = train_pairs.size();
    std::size_t n_batches = 0;
    for (std::size_t off = 0; off < n; off += cfg.batch_size) {
        if (std::min(cfg.batch_size, n - off) >= 2) ++n_batches;
    }
    CosineSchedule sched{cfg.lr_max, cfg.lr_min, static_cast<long>(cfg.epochs * n_batches)};

    AdamW optim(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
    std::mt19937_64 rng(cfg.seed);

    TrainResult result;
    result.best = params;
    result.best_val_rsum = -1.0;
    std::size_t since_improve = 0;
    long global_step = 0;

    ScoreMode val_mode = cfg.phase == 2 ? ScoreMode::kWeighted : ScoreMode::kFused;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();

        // seeded caption draw, then seeded shuffle of pair order
        std::vector<std::pair<std::string, std::string>> samples;
        samples.reserve(n);
        for (const auto* pair : train_pairs) {
            std::size_t ti = pair->text_ids.size() == 1 ? 0 : rng() % pair->text_ids.size();
            samples.emplace_back(pair->image_id, pair->text_ids[ti]);
        }
        for (std::size_t i = samples.size(); i > 1; --i) std::swap(samples[i - 1], samples[rng() % i]);

        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        double last_lr = 0.0;
        for (std::size_t off = 0; off < n; off += cfg.batch_size) {
            std::size_t bsz = std::min(cfg.batch_size, n - off);
            if (bsz < 2) continue;
            std::vector<std::string> img_ids, txt_ids;
            for (std::size_t k = 0; k < bsz; ++k) {
                img_ids.push_back(samples[off + k].first);
                txt_ids.push_back(samples[off + k].second);
            }

            Tape tape;
            BatchForward fwd = batch_total_loss(tape, params, store, img_ids, txt_ids, &rng);
            double loss = tape.value(fwd.loss).item();
            if (!std::isfinite(loss)) {
                std::ostringstream os;
                os << "train: non-finite loss at epoch " << epoch << ", batch offset " << off
                   << "; batch items:";
                for (const auto& id : img_ids) os << " " << id;
                throw NumericError(os.str());
            }
            tape.backward(fwd.loss);
            GradSet grads = collect_grads(tape, fwd.staged);
            if (cfg.phase == 1) grads.erase("alpha");  // frozen

            last_lr = cosine_lr(sched, global_step);
            optim.step(params.tensors, grads, last_lr);
            ++global_step;

            params.set_tau(std::clamp(params.tau(), cfg.tau_min, cfg.tau_max));
            if (cfg.phase == 2) {
                params.set_alpha(std::clamp(params.alpha(), cfg.alpha_min, cfg.alpha_max));
            }
            loss_sum += loss;
            ++loss_count;
        }

        EvalResult val = evaluate(store, params, Split::kVal, val_mode);
        auto t1 = std::chrono::steady_clock::now();

        EpochLog log;
        log.epoch = epoch;
        log.phase = cfg.phase;
        log.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
        log.val_rsum = val.report.total_rsum;
        log.lr = last_lr;
        log.tau = params.tau();
        log.alpha = params.alpha();
        log.seconds = std::chrono::duration<double>(t1 - t0).count();
        result.log.push_back(log);
        result.epochs_run = epoch + 1;

        if (val.report.total_rsum > result.best_val_rsum) {
            result.best_val_rsum = val.report.total_rsum;
            result.best = params;
            since_improve = 0;
        } else {
            ++since_improve;
            if (since_improve > cfg.patience) break;
        }
    }
    return result;
}

}  // namespace hada
