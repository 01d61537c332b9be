#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "hada/training.hpp"

using namespace hada;
using hada::testing::max_grad_rel_error;
using hada::testing::random_tensor;

namespace {

double itc_value(const Tensor& sim, double tau) {
    Tape tape;
    return tape.value(itc_loss(tape, tape.constant(sim), tape.constant(Tensor::scalar(tau)))).item();
}

FeatureStore tiny_store(std::size_t items, double noise, std::uint64_t seed) {
    SyntheticConfig cfg = SyntheticConfig::two_model_default();
    cfg.items = items;
    cfg.noise = noise;
    cfg.seed = seed;
    FeatureStore store = generate_synthetic(cfg);
    split_dataset(store.manifest, 0.75, 0.25, 0.0, seed);
    return store;
}

Arch desk_arch(const FeatureStore& store) {
    Arch a;
    a.models = store.manifest.models;
    a.d_shared = 8;
    a.d_out = 8;
    a.heads = 2;
    a.d_h = 8;
    a.dropout = 0.0;
    a.anchor_model = store.manifest.models.front().id;
    return a;
}

}  // namespace

TEST_CASE("itc on a constant similarity matrix is 2 log M") {
    for (std::size_t m : {2u, 5u, 20u}) {
        for (double tau : {0.07, 0.5}) {
            Tensor sim = Tensor::full({m, m}, 0.3);
            CHECK(itc_value(sim, tau) == doctest::Approx(2.0 * std::log((double)m)).epsilon(1e-9));
        }
    }
}

TEST_CASE("itc on a 2x2 identity at tau = 1") {
    // per direction, each row contributes log(1 + e^{-1}); both directions average to the same
    double expect = 2.0 * std::log(1.0 + std::exp(-1.0));
    CHECK(itc_value(Tensor::identity(2), 1.0) == doctest::Approx(expect).epsilon(1e-9));
    CHECK(itc_value(Tensor::identity(2), 1.0) == doctest::Approx(0.6265233750364456).epsilon(1e-9));
}

TEST_CASE("itc is invariant to adding a constant to the whole matrix") {
    std::mt19937_64 rng(5);
    Tensor sim = random_tensor({4, 4}, rng);
    Tensor shifted = sim;
    for (double& v : shifted.data) v += 3.7;
    CHECK(itc_value(sim, 0.1) == doctest::Approx(itc_value(shifted, 0.1)).epsilon(1e-9));
}

TEST_CASE("itc rejects degenerate batches") {
    Tape tape;
    NodeId tau = tape.constant(Tensor::scalar(0.07));
    CHECK_THROWS_AS(itc_loss(tape, tape.constant(Tensor::matrix(1, 1, {1.0})), tau), ConfigError);
    CHECK_THROWS_AS(itc_loss(tape, tape.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6})), tau),
                    ShapeError);
}

TEST_CASE("itc gradient vs finite differences") {
    std::mt19937_64 rng(6);
    Tensor sim = random_tensor({3, 3}, rng);
    Tensor tau = Tensor::scalar(0.3);
    double err = max_grad_rel_error({sim, tau}, [](Tape& t, const std::vector<NodeId>& id) {
        return itc_loss(t, id[0], id[1]);
    });
    CHECK(err < 1e-6);
}

TEST_CASE("hard negative mining picks the off-diagonal argmax") {
    Tensor sim = Tensor::matrix(3, 3, {0.9, 0.8, 0.3,
                                       0.1, 0.9, 0.2,
                                       0.4, 0.5, 0.9});
    HardNegatives negs = mine_hard_negatives(sim);
    CHECK(negs.neg_text == std::vector<std::size_t>{1, 2, 1});
    CHECK(negs.neg_image == std::vector<std::size_t>{2, 0, 0});
}

TEST_CASE("mining ties break to the lowest index") {
    Tensor sim = Tensor::matrix(3, 3, {0.9, 0.5, 0.5,
                                       0.5, 0.9, 0.5,
                                       0.5, 0.5, 0.9});
    HardNegatives negs = mine_hard_negatives(sim);
    CHECK(negs.neg_text == std::vector<std::size_t>{1, 0, 0});
    CHECK(negs.neg_image == std::vector<std::size_t>{1, 0, 0});
}

TEST_CASE("itm at uniform 0.5 probability is log 2") {
    std::size_t m = 3, d = 4;
    Tape tape;
    std::mt19937_64 rng(7);
    NodeId hp = tape.constant(random_tensor({m, d}, rng));
    NodeId hs = tape.constant(random_tensor({m, d}, rng));
    NodeId w = tape.constant(Tensor::zeros({4 * d}));  // sigmoid(0) = 0.5 everywhere
    HardNegatives negs{{1, 2, 0}, {2, 0, 1}};
    double loss = tape.value(itm_loss(tape, hp, hs, w, negs)).item();
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(loss == doctest::Approx(0.6931471805599453).epsilon(1e-12));
}

TEST_CASE("itm matches a scalar BCE oracle") {
    std::size_t m = 2, d = 3;
    std::mt19937_64 rng(8);
    Tensor hp = random_tensor({m, d}, rng), hs = random_tensor({m, d}, rng);
    Tensor w = random_tensor({4 * d}, rng);
    HardNegatives negs{{1, 0}, {1, 0}};

    auto row = [&](const Tensor& t, std::size_t r) {
        return Tensor::vector({t.data[r * d], t.data[r * d + 1], t.data[r * d + 2]});
    };
    auto dc = [&](const Tensor& a, const Tensor& b) {
        double z = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            z += w.data[j] * a.data[j] + w.data[d + j] * b.data[j] +
                 w.data[2 * d + j] * std::fabs(a.data[j] - b.data[j]) +
                 w.data[3 * d + j] * a.data[j] * b.data[j];
        }
        return 1.0 / (1.0 + std::exp(-z));
    };
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        total += std::log(dc(row(hp, i), row(hs, i)));                     // matched pair
        total += std::log(1.0 - dc(row(hp, i), row(hs, negs.neg_text[i])));  // hard text
        total += std::log(1.0 - dc(row(hp, negs.neg_image[i]), row(hs, i)));  // hard image
    }
    double expect = -total / (3.0 * m);

    Tape tape;
    double loss = tape.value(itm_loss(tape, tape.constant(hp), tape.constant(hs),
                                      tape.constant(w), negs)).item();
    CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("itm gradient vs finite differences") {
    std::size_t m = 3, d = 4;
    std::mt19937_64 rng(9);
    Tensor hp = random_tensor({m, d}, rng), hs = random_tensor({m, d}, rng);
    for (std::size_t i = 0; i < hp.size(); ++i) hp.data[i] += (hp.data[i] >= hs.data[i] ? 0.5 : -0.5);
    Tensor w = random_tensor({4 * d}, rng);
    HardNegatives negs{{1, 2, 0}, {2, 0, 1}};
    double err = max_grad_rel_error({hp, hs, w}, [&](Tape& t, const std::vector<NodeId>& id) {
        return itm_loss(t, id[0], id[1], id[2], negs);
    });
    CHECK(err < 1e-5);
}

TEST_CASE("batch_total_loss is finite and backpropagates to every group") {
    FeatureStore store = tiny_store(8, 0.1, 42);
    Arch arch = desk_arch(store);
    HadaParams params = HadaParams::init(arch, 0.07, 42);

    std::vector<std::string> imgs, txts;
    for (const auto& pair : store.manifest.pairs) {
        imgs.push_back(pair.image_id);
        txts.push_back(pair.text_ids.front());
        if (imgs.size() == 4) break;
    }
    Tape tape;
    BatchForward fwd = batch_total_loss(tape, params, store, imgs, txts, nullptr);
    double loss = tape.value(fwd.loss).item();
    CHECK(std::isfinite(loss));
    CHECK(loss > 0.0);

    tape.backward(fwd.loss);
    GradSet grads = collect_grads(tape, fwd.staged);
    double total_mag = 0.0;
    for (const auto& [name, g] : grads) {
        double mag = 0.0;
        for (double v : g.data) mag += std::fabs(v);
        if (name != "alpha") CHECK_MESSAGE(mag > 0.0, "no gradient reached ", name);
        total_mag += mag;
    }
    CHECK(std::isfinite(total_mag));
}

TEST_CASE("patience 0 stops one epoch past the first non-improvement") {
    FeatureStore store = tiny_store(12, 0.5, 11);
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.epochs = 40;
    cfg.patience = 0;
    cfg.dropout = 0.0;
    HadaParams params = HadaParams::init(desk_arch(store), cfg.tau_init, 42);
    TrainResult res = train(store, cfg, params);
    CHECK(res.epochs_run < cfg.epochs);
    // the run must end exactly one epoch after val RSum last improved
    double best = -1.0;
    std::size_t best_epoch = 0;
    for (const auto& e : res.log) {
        if (e.val_rsum > best) {
            best = e.val_rsum;
            best_epoch = e.epoch;
        }
    }
    CHECK(res.epochs_run == best_epoch + 2);  // epochs are 0-indexed in the log
    CHECK(res.best_val_rsum == best);
}

TEST_CASE("training is deterministic in the seed") {
    FeatureStore store = tiny_store(12, 0.3, 21);
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.epochs = 3;
    cfg.patience = 10;
    HadaParams init = HadaParams::init(desk_arch(store), cfg.tau_init, 42);
    TrainResult a = train(store, cfg, init);
    TrainResult b = train(store, cfg, init);
    CHECK(a.best == b.best);
    CHECK(a.best_val_rsum == b.best_val_rsum);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].train_loss == b.log[i].train_loss);
        CHECK(a.log[i].val_rsum == b.log[i].val_rsum);
    }
}

TEST_CASE("phase 1 keeps alpha frozen at 0 and tau inside its clamp") {
    FeatureStore store = tiny_store(12, 0.3, 31);
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.epochs = 3;
    cfg.patience = 10;
    HadaParams init = HadaParams::init(desk_arch(store), cfg.tau_init, 42);
    TrainResult res = train(store, cfg, init);
    CHECK(res.best.alpha() == 0.0);
    CHECK(res.best.tau() >= cfg.tau_min);
    CHECK(res.best.tau() <= cfg.tau_max);
    CHECK(res.best.phase == 1);
}

TEST_CASE("phase 2 learns alpha inside its clamp") {
    FeatureStore store = tiny_store(12, 0.3, 31);
    TrainConfig p1;
    p1.batch_size = 4;
    p1.epochs = 2;
    p1.patience = 10;
    HadaParams init = HadaParams::init(desk_arch(store), p1.tau_init, 42);
    TrainResult phase1 = train(store, p1, init);

    TrainConfig p2 = p1;
    p2.phase = 2;
    p2.epochs = 3;
    TrainResult phase2 = train(store, p2, phase1.best);
    CHECK(phase2.best.phase == 2);
    CHECK(phase2.best.alpha() >= p2.alpha_min);
    CHECK(phase2.best.alpha() <= p2.alpha_max);
}

TEST_CASE("phase 1 on a noise-free store reaches high validation recall") {
    FeatureStore store = tiny_store(64, 0.0, 42);
    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.epochs = 30;
    cfg.patience = 8;
    cfg.dropout = 0.1;
    cfg.lr_max = 5e-3;  // desk-scale runs take few steps, so anneal from higher
    cfg.lr_min = 1e-4;
    Arch arch = desk_arch(store);
    arch.d_shared = 16;
    arch.d_out = 16;
    arch.d_h = 16;
    HadaParams init = HadaParams::init(arch, cfg.tau_init, 42);
    TrainResult res = train(store, cfg, init);
    EvalResult ev = evaluate(store, res.best, Split::kVal, ScoreMode::kFused);
    CHECK(ev.report.i2t.r1 >= 95.0);
    CHECK(ev.report.t2i.r1 >= 95.0);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.batch_size = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.phase = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.tau_min = 0.8;  // above tau_max
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
