#include "hada/featstore.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <random>

#include <json.hpp>

namespace hada {

namespace {

constexpr char kMagic[4] = {'H', 'A', 'D', 'F'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("features.bin: truncated payload");
    return v;
}

void write_str(std::ostream& os, const std::string& s) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<long>(s.size()));
}

std::string read_str(std::istream& is) {
    auto len = read_pod<std::uint32_t>(is);
    std::string s(len, '\0');
    is.read(s.data(), len);
    if (!is) throw IoError("features.bin: truncated payload");
    return s;
}

void write_doubles(std::ostream& os, const std::vector<double>& v) {
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<long>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& is, std::size_t n) {
    std::vector<double> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<long>(n * sizeof(double)));
    if (!is) throw IoError("features.bin: truncated payload");
    return v;
}

void validate(const FeatureStore& store) {
    for (const auto& rec : store.records) {
        const ModelSpec* spec = store.manifest.find_model(rec.model_id);
        if (!spec) {
            throw ConfigError("store: record for unknown model '" + rec.model_id + "'");
        }
        if (rec.tokens.rank() != 2 || rec.tokens.rows() < 1 || rec.tokens.cols() != spec->d_tok) {
            throw ConfigError("store: token dims of item '" + rec.item_id + "' model '" +
                              rec.model_id + "' disagree with manifest d_tok=" +
                              std::to_string(spec->d_tok));
        }
        if (rec.global.rank() != 1 || rec.global.shape[0] != spec->d_glob) {
            throw ConfigError("store: global dim of item '" + rec.item_id + "' model '" +
                              rec.model_id + "' disagrees with manifest d_glob=" +
                              std::to_string(spec->d_glob));
        }
        if (!rec.tokens.all_finite() || !rec.global.all_finite()) {
            throw ConfigError("store: non-finite values in item '" + rec.item_id + "'");
        }
    }
    for (const auto& pair : store.manifest.pairs) {
        auto has_item = [&](const std::string& id) {
            return std::any_of(store.manifest.items.begin(), store.manifest.items.end(),
                               [&](const ItemEntry& e) { return e.id == id; });
        };
        if (!has_item(pair.image_id)) {
            throw ConfigError("store: pair references unknown image '" + pair.image_id + "'");
        }
        for (const auto& tid : pair.text_ids) {
            if (!has_item(tid)) {
                throw ConfigError("store: pair references unknown text '" + tid + "'");
            }
        }
    }
}

}  // namespace

std::string split_name(Split s) {
    switch (s) {
        case Split::kTrain: return "train";
        case Split::kVal: return "val";
        case Split::kTest: return "test";
    }
    throw ConfigError("bad split enum");
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::kTrain;
    if (name == "val") return Split::kVal;
    if (name == "test") return Split::kTest;
    throw ConfigError("unknown split '" + name + "'");
}

bool FeatureRecord::operator==(const FeatureRecord& other) const {
    return item_id == other.item_id && modality == other.modality && model_id == other.model_id &&
           tokens.shape == other.tokens.shape && tokens.data == other.tokens.data &&
           global.shape == other.global.shape && global.data == other.global.data;
}

const ModelSpec* StoreManifest::find_model(const std::string& id) const {
    for (const auto& m : models) {
        if (m.id == id) return &m;
    }
    return nullptr;
}

const FeatureRecord* FeatureStore::find(const std::string& item_id, Modality m,
                                        const std::string& model_id) const {
    for (const auto& rec : records) {
        if (rec.item_id == item_id && rec.modality == m && rec.model_id == model_id) return &rec;
    }
    return nullptr;
}

std::vector<const FeatureRecord*> FeatureStore::item_records(const std::string& item_id,
                                                             Modality m) const {
    std::vector<const FeatureRecord*> out;
    for (const auto& rec : records) {
        if (rec.item_id == item_id && rec.modality == m) out.push_back(&rec);
    }
    return out;
}

void write_store(const FeatureStore& store, const std::filesystem::path& dir) {
    validate(store);
    std::filesystem::create_directories(dir);

    nlohmann::ordered_json j;
    j["version"] = store.manifest.version;
    j["models"] = nlohmann::ordered_json::array();
    for (const auto& m : store.manifest.models) {
        j["models"].push_back({{"id", m.id},
                               {"d_tok", m.d_tok},
                               {"d_glob", m.d_glob},
                               {"variable_len", m.variable_len}});
    }
    j["items"] = nlohmann::ordered_json::array();
    for (const auto& it : store.manifest.items) {
        j["items"].push_back({{"id", it.id},
                              {"modality", it.modality == Modality::kImage ? "image" : "text"},
                              {"split", split_name(it.split)}});
    }
    j["pairs"] = nlohmann::ordered_json::array();
    for (const auto& p : store.manifest.pairs) {
        j["pairs"].push_back({{"image_id", p.image_id}, {"text_ids", p.text_ids}});
    }
    std::ofstream mf(dir / "manifest.json", std::ios::binary);
    mf << j.dump(2) << "\n";
    if (!mf) throw IoError("cannot write " + (dir / "manifest.json").string());

    std::ofstream bf(dir / "features.bin", std::ios::binary);
    bf.write(kMagic, 4);
    write_pod<std::uint32_t>(bf, kVersion);
    write_pod<std::uint64_t>(bf, store.records.size());
    for (const auto& rec : store.records) {
        write_str(bf, rec.item_id);
        write_pod<std::uint8_t>(bf, static_cast<std::uint8_t>(rec.modality));
        write_str(bf, rec.model_id);
        write_pod<std::uint32_t>(bf, static_cast<std::uint32_t>(rec.tokens.rows()));
        write_pod<std::uint32_t>(bf, static_cast<std::uint32_t>(rec.tokens.cols()));
        write_doubles(bf, rec.tokens.data);
        write_pod<std::uint32_t>(bf, static_cast<std::uint32_t>(rec.global.shape[0]));
        write_doubles(bf, rec.global.data);
    }
    if (!bf) throw IoError("cannot write " + (dir / "features.bin").string());
}

FeatureStore read_store(const std::filesystem::path& dir) {
    FeatureStore store;

    std::ifstream mf(dir / "manifest.json", std::ios::binary);
    if (!mf) throw IoError("cannot open " + (dir / "manifest.json").string());
    nlohmann::json j;
    try {
        mf >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("manifest.json: parse error: " + std::string(e.what()));
    }
    store.manifest.version = j.at("version").get<int>();
    if (store.manifest.version != 1) {
        throw IoError("manifest.json: unsupported version " +
                      std::to_string(store.manifest.version));
    }
    for (const auto& m : j.at("models")) {
        store.manifest.models.push_back(ModelSpec{m.at("id").get<std::string>(),
                                                  m.at("d_tok").get<std::size_t>(),
                                                  m.at("d_glob").get<std::size_t>(),
                                                  m.at("variable_len").get<bool>()});
    }
    for (const auto& it : j.at("items")) {
        store.manifest.items.push_back(
            ItemEntry{it.at("id").get<std::string>(),
                      it.at("modality").get<std::string>() == "image" ? Modality::kImage
                                                                      : Modality::kText,
                      split_from_name(it.at("split").get<std::string>())});
    }
    for (const auto& p : j.at("pairs")) {
        store.manifest.pairs.push_back(RelevancePair{p.at("image_id").get<std::string>(),
                                                     p.at("text_ids").get<std::vector<std::string>>()});
    }

    std::ifstream bf(dir / "features.bin", std::ios::binary);
    if (!bf) throw IoError("cannot open " + (dir / "features.bin").string());
    char magic[4];
    bf.read(magic, 4);
    if (!bf || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("features.bin: bad magic, not a HADF file");
    }
    auto version = read_pod<std::uint32_t>(bf);
    if (version != kVersion) {
        throw IoError("features.bin: unsupported version " + std::to_string(version));
    }
    auto count = read_pod<std::uint64_t>(bf);
    store.records.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        FeatureRecord rec;
        rec.item_id = read_str(bf);
        rec.modality = static_cast<Modality>(read_pod<std::uint8_t>(bf));
        rec.model_id = read_str(bf);
        auto rows = read_pod<std::uint32_t>(bf);
        auto cols = read_pod<std::uint32_t>(bf);
        rec.tokens = Tensor({rows, cols}, read_doubles(bf, std::size_t(rows) * cols));
        auto d_glob = read_pod<std::uint32_t>(bf);
        rec.global = Tensor({d_glob}, read_doubles(bf, d_glob));
        const ModelSpec* spec = store.manifest.find_model(rec.model_id);
        if (!spec || cols != spec->d_tok || d_glob != spec->d_glob) {
            throw IoError("features.bin: record " + rec.item_id + "/" + rec.model_id +
                          " dims disagree with manifest");
        }
        store.records.push_back(std::move(rec));
    }
    return store;
}

SyntheticConfig SyntheticConfig::two_model_default() {
    SyntheticConfig cfg;
    cfg.models = {
        SyntheticModelCfg{"synthA", 16, 8, 5, 5},
        SyntheticModelCfg{"synthB", 12, 8, 3, 9},  // variable-length, DOT-style
    };
    return cfg;
}

FeatureStore generate_synthetic(const SyntheticConfig& cfg) {
    if (cfg.models.empty()) throw ConfigError("synthetic: at least one model required");
    if (cfg.noise < 0.0) throw ConfigError("synthetic: noise scale must be >= 0");
    if (cfg.latent_dim < 1 || cfg.items < 1 || cfg.texts_per_image < 1) {
        throw ConfigError("synthetic: items, latent_dim, texts_per_image must be >= 1");
    }
    for (const auto& m : cfg.models) {
        if (m.d_tok < 1 || m.d_glob < 1 || m.tokens_min > m.tokens_max) {
            throw ConfigError("synthetic: bad model config for '" + m.id + "'");
        }
    }

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double proj_scale = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));

    // Fixed per-model projections: one global projection and one per token slot.
    struct ModelProj {
        Tensor global;                // d_glob x latent
        std::vector<Tensor> tokens;   // (tokens_max+1) matrices, d_tok x latent
    };
    std::vector<ModelProj> projs;
    for (const auto& m : cfg.models) {
        ModelProj mp;
        mp.global = Tensor::zeros({m.d_glob, cfg.latent_dim});
        for (double& v : mp.global.data) v = gauss(rng) * proj_scale;
        for (std::size_t t = 0; t <= m.tokens_max; ++t) {
            Tensor tp = Tensor::zeros({m.d_tok, cfg.latent_dim});
            for (double& v : tp.data) v = gauss(rng) * proj_scale;
            mp.tokens.push_back(std::move(tp));
        }
        projs.push_back(std::move(mp));
    }

    auto project = [](const Tensor& P, const std::vector<double>& z) {
        std::vector<double> out(P.rows(), 0.0);
        for (std::size_t i = 0; i < P.rows(); ++i)
            for (std::size_t j = 0; j < P.cols(); ++j) out[i] += P.at(i, j) * z[j];
        return out;
    };

    FeatureStore store;
    store.manifest.version = 1;
    for (const auto& m : cfg.models) {
        store.manifest.models.push_back(
            ModelSpec{m.id, m.d_tok, m.d_glob, m.tokens_min != m.tokens_max});
    }

    auto make_records = [&](const std::string& item_id, Modality mod,
                            const std::vector<double>& z) {
        for (std::size_t mi = 0; mi < cfg.models.size(); ++mi) {
            const auto& mcfg = cfg.models[mi];
            std::size_t n_tok = mcfg.tokens_min;
            if (mcfg.tokens_max > mcfg.tokens_min) {
                n_tok = mcfg.tokens_min + rng() % (mcfg.tokens_max - mcfg.tokens_min + 1);
            }
            FeatureRecord rec;
            rec.item_id = item_id;
            rec.modality = mod;
            rec.model_id = mcfg.id;
            rec.tokens = Tensor::zeros({n_tok + 1, mcfg.d_tok});
            for (std::size_t t = 0; t <= n_tok; ++t) {
                auto row = project(projs[mi].tokens[t], z);
                for (std::size_t j = 0; j < mcfg.d_tok; ++j) {
                    rec.tokens.at(t, j) = row[j] + cfg.noise * gauss(rng);
                }
            }
            auto g = project(projs[mi].global, z);
            double nrm = 0.0;
            for (std::size_t j = 0; j < mcfg.d_glob; ++j) {
                g[j] += cfg.noise * gauss(rng);
                nrm += g[j] * g[j];
            }
            nrm = std::sqrt(nrm);
            if (nrm == 0.0) nrm = 1.0;
            for (double& v : g) v /= nrm;
            rec.global = Tensor::vector(std::move(g));
            store.records.push_back(std::move(rec));
        }
    };

    char buf[32];
    for (std::size_t m = 0; m < cfg.items; ++m) {
        std::vector<double> z(cfg.latent_dim);
        for (double& v : z) v = gauss(rng);

        std::snprintf(buf, sizeof(buf), "img%05zu", m);
        std::string img_id = buf;
        store.manifest.items.push_back(ItemEntry{img_id, Modality::kImage, Split::kTrain});
        make_records(img_id, Modality::kImage, z);

        RelevancePair pair;
        pair.image_id = img_id;
        for (std::size_t t = 0; t < cfg.texts_per_image; ++t) {
            std::snprintf(buf, sizeof(buf), "txt%05zu_%zu", m, t);
            std::string txt_id = buf;
            store.manifest.items.push_back(ItemEntry{txt_id, Modality::kText, Split::kTrain});
            make_records(txt_id, Modality::kText, z);
            pair.text_ids.push_back(txt_id);
        }
        store.manifest.pairs.push_back(std::move(pair));
    }
    return store;
}

void split_dataset(StoreManifest& manifest, double train_frac, double val_frac, double test_frac,
                   std::uint64_t seed) {
    double sum = train_frac + val_frac + test_frac;
    if (std::fabs(sum - 1.0) > 1e-9) {
        throw ConfigError("split: fractions sum to " + std::to_string(sum) + ", expected 1");
    }
    std::vector<std::size_t> pair_idx(manifest.pairs.size());
    for (std::size_t i = 0; i < pair_idx.size(); ++i) pair_idx[i] = i;
    // Explicit Fisher-Yates so the permutation is identical across toolchains.
    std::mt19937_64 rng(seed);
    for (std::size_t i = pair_idx.size(); i > 1; --i) {
        std::size_t j = rng() % i;
        std::swap(pair_idx[i - 1], pair_idx[j]);
    }
    std::size_t n = pair_idx.size();
    auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
    auto n_val = static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n)));
    if (n_train + n_val > n) n_val = n - n_train;

    auto set_split = [&](const std::string& id, Split s) {
        for (auto& it : manifest.items) {
            if (it.id == id) it.split = s;
        }
    };
    for (std::size_t k = 0; k < n; ++k) {
        Split s = k < n_train ? Split::kTrain : (k < n_train + n_val ? Split::kVal : Split::kTest);
        const auto& pair = manifest.pairs[pair_idx[k]];
        set_split(pair.image_id, s);
        for (const auto& tid : pair.text_ids) set_split(tid, s);
    }
}

}  // namespace hada
