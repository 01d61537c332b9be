#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hada/tensor.hpp"

namespace hada {

enum class Modality : std::uint8_t { kImage = 0, kText = 1 };

enum class Split { kTrain, kVal, kTest };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

// One item's features from one upstream model. Row 0 of tokens is the
// [CLS] token; global is the model's own retrieval embedding.
struct FeatureRecord {
    std::string item_id;
    Modality modality = Modality::kImage;
    std::string model_id;
    Tensor tokens;  // (N+1) x d_tok
    Tensor global;  // d_glob

    bool operator==(const FeatureRecord& other) const;
};

struct ModelSpec {
    std::string id;
    std::size_t d_tok = 0;
    std::size_t d_glob = 0;
    bool variable_len = false;

    bool operator==(const ModelSpec&) const = default;
};

struct ItemEntry {
    std::string id;
    Modality modality = Modality::kImage;
    Split split = Split::kTrain;

    bool operator==(const ItemEntry&) const = default;
};

struct RelevancePair {
    std::string image_id;
    std::vector<std::string> text_ids;

    bool operator==(const RelevancePair&) const = default;
};

struct StoreManifest {
    int version = 1;
    std::vector<ModelSpec> models;
    std::vector<ItemEntry> items;
    std::vector<RelevancePair> pairs;

    bool operator==(const StoreManifest&) const = default;

    const ModelSpec* find_model(const std::string& id) const;
};

struct FeatureStore {
    std::vector<FeatureRecord> records;
    StoreManifest manifest;

    const FeatureRecord* find(const std::string& item_id, Modality m,
                              const std::string& model_id) const;
    std::vector<const FeatureRecord*> item_records(const std::string& item_id, Modality m) const;
};

// Validates manifest/record consistency, then writes manifest.json and
// features.bin under dir. read_store inverts it bit-exactly.
void write_store(const FeatureStore& store, const std::filesystem::path& dir);
FeatureStore read_store(const std::filesystem::path& dir);

struct SyntheticModelCfg {
    std::string id;
    std::size_t d_tok = 16;
    std::size_t d_glob = 8;
    std::size_t tokens_min = 4;  // patch count N (excluding CLS)
    std::size_t tokens_max = 4;  // == tokens_min for fixed-length models
};

struct SyntheticConfig {
    std::size_t items = 64;
    std::size_t latent_dim = 12;
    std::size_t texts_per_image = 1;
    std::vector<SyntheticModelCfg> models;
    double noise = 0.1;
    std::uint64_t seed = 42;

    static SyntheticConfig two_model_default();
};

// Each pair draws one latent z; every model views z through its own fixed
// random projections, so relevant image/text records share signal and
// distinct models give genuinely different views. Pure function of cfg.
FeatureStore generate_synthetic(const SyntheticConfig& cfg);

// Disjoint, exhaustive split by image item; all texts of an image follow it.
void split_dataset(StoreManifest& manifest, double train_frac, double val_frac, double test_frac,
                   std::uint64_t seed);

}  // namespace hada
