// hada: command line front end. Subcommands: gen-synth, train, eval, embed,
// compare. Every run is a pure function of (config file, store, checkpoints);
// CLI flags override config keys and the effective config is printed in the
// run header. Exit codes: 0 success, 2 config/usage, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "hada/eval.hpp"
#include "hada/training.hpp"

using json = nlohmann::ordered_json;
using namespace hada;
namespace fs = std::filesystem;

namespace {

struct RunConfig {
    std::string store;
    std::string out = ".";
    std::vector<std::string> models;  // empty = all store models, manifest order
    std::string anchor_model;         // empty = first model
    std::string score_mode = "fused";
    std::string split = "test";
    // architecture
    std::size_t d_shared = 512, d_out = 512, heads = 4, d_h = 256, head_depth = 2;
    bool proj_bias = true;
    bool normalize_anchor = true;
    double leaky_slope = 0.2;
    std::string variant = "hada";
    // training
    TrainConfig train;
    // synthetic generation
    std::size_t items = 64, latent_dim = 12, texts_per_image = 1;
    double noise = 0.1;
    double train_frac = 0.8, val_frac = 0.1, test_frac = 0.1;

    json to_json() const {
        json j;
        j["store"] = store;
        j["out"] = out;
        j["models"] = models;
        j["anchor_model"] = anchor_model;
        j["score_mode"] = score_mode;
        j["split"] = split;
        j["d_shared"] = d_shared;
        j["d_out"] = d_out;
        j["heads"] = heads;
        j["d_h"] = d_h;
        j["head_depth"] = head_depth;
        j["proj_bias"] = proj_bias;
        j["normalize_anchor"] = normalize_anchor;
        j["leaky_slope"] = leaky_slope;
        j["variant"] = variant;
        j["batch_size"] = train.batch_size;
        j["epochs"] = train.epochs;
        j["lr_max"] = train.lr_max;
        j["lr_min"] = train.lr_min;
        j["weight_decay"] = train.weight_decay;
        j["dropout"] = train.dropout;
        j["tau_init"] = train.tau_init;
        j["tau_min"] = train.tau_min;
        j["tau_max"] = train.tau_max;
        j["alpha_min"] = train.alpha_min;
        j["alpha_max"] = train.alpha_max;
        j["phase"] = train.phase;
        j["patience"] = train.patience;
        j["seed"] = train.seed;
        j["restart_schedule"] = train.restart_schedule;
        j["items"] = items;
        j["latent_dim"] = latent_dim;
        j["texts_per_image"] = texts_per_image;
        j["noise"] = noise;
        j["train_frac"] = train_frac;
        j["val_frac"] = val_frac;
        j["test_frac"] = test_frac;
        return j;
    }

    void apply_json(const json& j) {
        static const std::set<std::string> known = [] {
            std::set<std::string> k;
            json defaults = RunConfig{}.to_json();
            for (auto& [key, _] : defaults.items()) k.insert(key);
            return k;
        }();
        for (auto& [key, _] : j.items()) {
            if (!known.count(key)) throw ConfigError("config: unknown key '" + key + "'");
        }
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        get("store", store);
        get("out", out);
        get("models", models);
        get("anchor_model", anchor_model);
        get("score_mode", score_mode);
        get("split", split);
        get("d_shared", d_shared);
        get("d_out", d_out);
        get("heads", heads);
        get("d_h", d_h);
        get("head_depth", head_depth);
        get("proj_bias", proj_bias);
        get("normalize_anchor", normalize_anchor);
        get("leaky_slope", leaky_slope);
        get("variant", variant);
        get("batch_size", train.batch_size);
        get("epochs", train.epochs);
        get("lr_max", train.lr_max);
        get("lr_min", train.lr_min);
        get("weight_decay", train.weight_decay);
        get("dropout", train.dropout);
        get("tau_init", train.tau_init);
        get("tau_min", train.tau_min);
        get("tau_max", train.tau_max);
        get("alpha_min", train.alpha_min);
        get("alpha_max", train.alpha_max);
        get("phase", train.phase);
        get("patience", train.patience);
        get("seed", train.seed);
        get("restart_schedule", train.restart_schedule);
        get("items", items);
        get("latent_dim", latent_dim);
        get("texts_per_image", texts_per_image);
        get("noise", noise);
        get("train_frac", train_frac);
        get("val_frac", val_frac);
        get("test_frac", test_frac);
    }
};

RunConfig load_base_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config: invalid JSON in '" + path + "': " + e.what());
    }
    cfg.apply_json(j);
    return cfg;
}

void apply_env_seed(RunConfig& cfg) {
    if (const char* s = std::getenv("HADA_SEED")) cfg.train.seed = std::stoull(s);
}

void print_header(const std::string& cmd, const RunConfig& cfg) {
    std::cout << "hada " << cmd << "\nconfig: " << cfg.to_json().dump() << "\n";
}

Arch build_arch(const RunConfig& cfg, const StoreManifest& manifest) {
    Arch a;
    std::vector<std::string> ids = cfg.models;
    if (ids.empty()) {
        for (const auto& m : manifest.models) ids.push_back(m.id);
    }
    for (const auto& id : ids) {
        const ModelSpec* spec = manifest.find_model(id);
        if (!spec) throw ConfigError("config: model '" + id + "' not in store manifest");
        a.models.push_back(*spec);
    }
    a.d_shared = cfg.d_shared;
    a.d_out = cfg.d_out;
    a.heads = cfg.heads;
    a.d_h = cfg.d_h;
    a.head_depth = cfg.head_depth;
    a.proj_bias = cfg.proj_bias;
    a.dropout = cfg.train.dropout;
    a.leaky_slope = cfg.leaky_slope;
    a.anchor_model = cfg.anchor_model.empty() ? a.models.front().id : cfg.anchor_model;
    a.normalize_anchor = cfg.normalize_anchor;
    if (cfg.variant == "hada") a.variant = Variant::kHada;
    else if (cfg.variant == "b2") a.variant = Variant::kB2;
    else throw ConfigError("config: variant must be 'hada' or 'b2'");
    a.validate();
    return a;
}

std::uint32_t file_hash(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for hashing");
    std::uint32_t h = 2166136261u;
    char c;
    while (in.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 16777619u;
    }
    return h;
}

json direction_json(const DirectionReport& d) {
    return json{{"r1", d.r1}, {"r5", d.r5}, {"r10", d.r10}, {"rsum", d.rsum}};
}

json report_json(const RetrievalReport& r, std::uint32_t config_hash,
                 std::uint32_t checkpoint_hash) {
    json j;
    j["i2t"] = direction_json(r.i2t);
    j["t2i"] = direction_json(r.t2i);
    j["total_rsum"] = r.total_rsum;
    j["config_hash"] = config_hash;
    j["checkpoint_hash"] = checkpoint_hash;
    return j;
}

void print_report_table(const std::string& label, const RetrievalReport& r) {
    std::cout << std::fixed << std::setprecision(2);
    std::cout << label << "\n"
              << "  direction     R@1     R@5    R@10    RSum\n"
              << "  i2t       " << std::setw(7) << r.i2t.r1 << " " << std::setw(7) << r.i2t.r5
              << " " << std::setw(7) << r.i2t.r10 << " " << std::setw(7) << r.i2t.rsum << "\n"
              << "  t2i       " << std::setw(7) << r.t2i.r1 << " " << std::setw(7) << r.t2i.r5
              << " " << std::setw(7) << r.t2i.r10 << " " << std::setw(7) << r.t2i.rsum << "\n"
              << "  total RSum " << r.total_rsum << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
}

int cmd_gen_synth(const RunConfig& cfg) {
    print_header("gen-synth", cfg);
    SyntheticConfig sc = SyntheticConfig::two_model_default();
    sc.items = cfg.items;
    sc.latent_dim = cfg.latent_dim;
    sc.texts_per_image = cfg.texts_per_image;
    sc.noise = cfg.noise;
    sc.seed = cfg.train.seed;
    FeatureStore store = generate_synthetic(sc);
    split_dataset(store.manifest, cfg.train_frac, cfg.val_frac, cfg.test_frac, cfg.train.seed);
    write_store(store, cfg.out);
    std::cout << "wrote store with " << cfg.items << " image items to " << cfg.out << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& resume, bool deterministic_log) {
    print_header("train", cfg);
    cfg.train.validate();
    if (cfg.train.phase == 2 && resume.empty()) {
        throw ConfigError("train: --resume <checkpoint> is required for phase 2");
    }
    FeatureStore store = read_store(cfg.store);
    Arch arch = build_arch(cfg, store.manifest);
    HadaParams params = resume.empty()
                            ? HadaParams::init(arch, cfg.train.tau_init, cfg.train.seed)
                            : load_checkpoint(resume, arch);
    TrainResult res = train(store, cfg.train, params);

    fs::create_directories(cfg.out);
    fs::path ckpt = fs::path(cfg.out) / "best.hadc";
    save_checkpoint(res.best, ckpt);
    std::ostringstream log;
    for (const auto& e : res.log) {
        json j;
        j["epoch"] = e.epoch;
        j["phase"] = e.phase;
        j["train_loss"] = e.train_loss;
        j["val_rsum"] = e.val_rsum;
        j["lr"] = e.lr;
        j["tau"] = e.tau;
        j["alpha"] = e.alpha;
        if (!deterministic_log) j["seconds"] = e.seconds;
        log << j.dump() << "\n";
    }
    write_text(fs::path(cfg.out) / "train_log.jsonl", log.str());
    std::cout << "epochs run: " << res.epochs_run << ", best val RSum: " << res.best_val_rsum
              << "\ncheckpoint: " << ckpt.string() << "\n";
    return 0;
}

ScoreMode parse_mode(const std::string& mode) {
    if (mode == "fused") return ScoreMode::kFused;
    if (mode == "weighted") return ScoreMode::kWeighted;
    if (mode == "b2") return ScoreMode::kB2;
    if (mode == "single") return ScoreMode::kSingleModel;
    throw ConfigError("eval: unknown score mode '" + mode + "'");
}

int cmd_eval(const RunConfig& cfg, const std::string& ckpt, const std::string& single_model,
             const std::string& ckpt_a, const std::string& ckpt_b) {
    print_header("eval", cfg);
    FeatureStore store = read_store(cfg.store);
    Split split = split_from_name(cfg.split);
    Arch arch = build_arch(cfg, store.manifest);

    RetrievalReport report;
    std::uint32_t ckpt_hash = 0;
    if (cfg.score_mode == "b1") {
        if (ckpt_a.empty() || ckpt_b.empty()) {
            throw ConfigError("eval: mode b1 requires --ckpt-a and --ckpt-b");
        }
        EvalResult a = evaluate(store, load_checkpoint(ckpt_a, arch), split, ScoreMode::kFused);
        EvalResult b = evaluate(store, load_checkpoint(ckpt_b, arch), split, ScoreMode::kFused);
        report = baseline_b1(a, b).report;
        ckpt_hash = file_hash(ckpt_a) ^ file_hash(ckpt_b);
    } else if (cfg.score_mode == "single") {
        if (single_model.empty()) throw ConfigError("eval: mode single requires --model");
        HadaParams none;
        report = evaluate(store, none, split, ScoreMode::kSingleModel, single_model).report;
    } else {
        if (ckpt.empty()) throw ConfigError("eval: mode " + cfg.score_mode + " requires --ckpt");
        HadaParams params = load_checkpoint(ckpt, arch);
        report = evaluate(store, params, split, parse_mode(cfg.score_mode)).report;
        ckpt_hash = file_hash(ckpt);
    }
    json j = report_json(report, arch.config_hash(), ckpt_hash);
    fs::create_directories(cfg.out);
    write_text(fs::path(cfg.out) / "report.json", j.dump(2) + "\n");
    print_report_table("mode " + cfg.score_mode + " on split " + cfg.split, report);
    return 0;
}

int cmd_embed(const RunConfig& cfg, const std::string& ckpt) {
    print_header("embed", cfg);
    if (ckpt.empty()) throw ConfigError("embed: --ckpt is required");
    FeatureStore store = read_store(cfg.store);
    Split split = split_from_name(cfg.split);
    Arch arch = build_arch(cfg, store.manifest);
    HadaParams params = load_checkpoint(ckpt, arch);

    // Dump fused embeddings as a one-model store: globals carry the embedding.
    FeatureStore dump;
    dump.manifest.models = {ModelSpec{"hada", arch.d_h, arch.d_h, false}};
    for (const auto& item : store.manifest.items) {
        if (item.split != split) continue;
        ItemRecords recs = gather_item_records(store, arch, item.id, item.modality);
        Tensor h = embed(params, recs, item.modality);
        FeatureRecord rec;
        rec.item_id = item.id;
        rec.modality = item.modality;
        rec.model_id = "hada";
        rec.tokens = Tensor::matrix(1, arch.d_h, h.data);
        rec.global = h;
        dump.records.push_back(rec);
        dump.manifest.items.push_back(item);
    }
    std::set<std::string> kept;
    for (const auto& item : dump.manifest.items) kept.insert(item.id);
    for (const auto& pair : store.manifest.pairs) {
        if (kept.count(pair.image_id)) dump.manifest.pairs.push_back(pair);
    }
    write_store(dump, cfg.out);
    std::cout << "wrote " << dump.records.size() << " embeddings to " << cfg.out << "\n";
    return 0;
}

int cmd_compare(const RunConfig& cfg, const std::string& ckpt, const std::string& ckpt_b2,
                const std::string& reference) {
    print_header("compare", cfg);
    if (ckpt.empty()) throw ConfigError("compare: --ckpt is required");
    FeatureStore store = read_store(cfg.store);
    Split split = split_from_name(cfg.split);
    Arch arch = build_arch(cfg, store.manifest);

    std::vector<std::pair<std::string, RetrievalReport>> rows;
    HadaParams none;
    std::vector<EvalResult> singles;
    for (const auto& m : arch.models) {
        EvalResult ev = evaluate(store, none, split, ScoreMode::kSingleModel, m.id);
        rows.emplace_back(m.id, ev.report);
        singles.push_back(std::move(ev));
    }
    if (singles.size() >= 2) {
        rows.emplace_back("B1", baseline_b1(singles[0], singles[1]).report);
    }
    if (!ckpt_b2.empty()) {
        Arch b2 = arch;
        b2.variant = Variant::kB2;
        rows.emplace_back("B2", evaluate(store, load_checkpoint(ckpt_b2, b2), split,
                                         ScoreMode::kB2).report);
    }
    HadaParams params = load_checkpoint(ckpt, arch);
    ScoreMode mode = params.phase == 2 ? ScoreMode::kWeighted : ScoreMode::kFused;
    rows.emplace_back("HADA", evaluate(store, params, split, mode).report);

    std::string ref = reference.empty() ? "HADA" : reference;
    double ref_rsum = 0.0;
    bool found = false;
    for (const auto& [name, rep] : rows) {
        if (name == ref) {
            ref_rsum = rep.total_rsum;
            found = true;
        }
    }
    if (!found) throw ConfigError("compare: reference row '" + ref + "' not present");

    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.second.total_rsum < b.second.total_rsum; });
    std::cout << std::fixed << std::setprecision(2);
    std::cout << "model         i2t-RSum  t2i-RSum     RSum    dRSum\n";
    for (const auto& [name, rep] : rows) {
        std::cout << std::left << std::setw(12) << name << std::right << " " << std::setw(9)
                  << rep.i2t.rsum << " " << std::setw(9) << rep.t2i.rsum << " " << std::setw(8)
                  << rep.total_rsum << " " << std::setw(8) << rep.total_rsum - ref_rsum << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"HADA graph-fusion retrieval engine"};
    app.require_subcommand(1);

    std::string config_path, resume, ckpt, ckpt_a, ckpt_b, ckpt_b2, single_model, reference;
    bool deterministic_log = false;

    // pre-scan for --config so file values form the baseline and CLI flags override
    for (int i = 1; i < argc - 1; ++i) {
        if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
    }
    RunConfig cfg;
    try {
        cfg = load_base_config(config_path);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "run configuration JSON");
        sub->add_option("--store", cfg.store, "feature store directory");
        sub->add_option("--out", cfg.out, "output directory");
        sub->add_option("--seed", cfg.train.seed, "random seed");
        sub->add_option("--split", cfg.split, "dataset split: train|val|test");
    };

    CLI::App* gen = app.add_subcommand("gen-synth", "generate a synthetic feature store");
    add_common(gen);
    gen->add_option("--items", cfg.items, "number of image items");
    gen->add_option("--noise", cfg.noise, "feature noise level");
    gen->add_option("--texts-per-image", cfg.texts_per_image, "captions per image");
    gen->add_option("--train-frac", cfg.train_frac, "train fraction");
    gen->add_option("--val-frac", cfg.val_frac, "val fraction");
    gen->add_option("--test-frac", cfg.test_frac, "test fraction");

    CLI::App* tr = app.add_subcommand("train", "train the fusion head");
    add_common(tr);
    tr->add_option("--phase", cfg.train.phase, "training phase: 1|2");
    tr->add_option("--resume", resume, "checkpoint to resume from (required for phase 2)");
    tr->add_option("--epochs", cfg.train.epochs, "max epochs");
    tr->add_option("--batch-size", cfg.train.batch_size, "batch size");
    tr->add_option("--lr-max", cfg.train.lr_max, "peak learning rate");
    tr->add_option("--lr-min", cfg.train.lr_min, "final learning rate");
    tr->add_option("--dropout", cfg.train.dropout, "dropout probability");
    tr->add_option("--patience", cfg.train.patience, "early-stopping patience");
    tr->add_flag("--deterministic-log", deterministic_log, "omit wall-clock fields from the log");

    CLI::App* ev = app.add_subcommand("eval", "evaluate retrieval metrics");
    add_common(ev);
    ev->add_option("--mode", cfg.score_mode, "fused|weighted|b2|single|b1");
    ev->add_option("--ckpt", ckpt, "checkpoint to evaluate");
    ev->add_option("--model", single_model, "upstream model id for mode single");
    ev->add_option("--ckpt-a", ckpt_a, "first checkpoint for mode b1");
    ev->add_option("--ckpt-b", ckpt_b, "second checkpoint for mode b1");

    CLI::App* em = app.add_subcommand("embed", "dump fused embeddings as a feature store");
    add_common(em);
    em->add_option("--ckpt", ckpt, "checkpoint to embed with");

    CLI::App* cp = app.add_subcommand("compare", "side-by-side table against baselines");
    add_common(cp);
    cp->add_option("--ckpt", ckpt, "HADA checkpoint");
    cp->add_option("--ckpt-b2", ckpt_b2, "optional B2 baseline checkpoint");
    cp->add_option("--reference", reference, "reference row for the delta column");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        apply_env_seed(cfg);
        if (gen->parsed()) return cmd_gen_synth(cfg);
        if (tr->parsed()) return cmd_train(cfg, resume, deterministic_log);
        if (ev->parsed()) return cmd_eval(cfg, ckpt, single_model, ckpt_a, ckpt_b);
        if (em->parsed()) return cmd_embed(cfg, ckpt);
        if (cp->parsed()) return cmd_compare(cfg, ckpt, ckpt_b2, reference);
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
