#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "hada/featstore.hpp"

using namespace hada;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("hada_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

FeatureStore tiny_store() {
    FeatureStore store;
    store.manifest.models = {ModelSpec{"m1", 3, 2, false}};
    store.manifest.items = {ItemEntry{"img0", Modality::kImage, Split::kTrain},
                            ItemEntry{"txt0", Modality::kText, Split::kTrain}};
    store.manifest.pairs = {RelevancePair{"img0", {"txt0"}}};
    store.records = {
        FeatureRecord{"img0", Modality::kImage, "m1", Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}),
                      Tensor::vector({0.6, 0.8})},
        FeatureRecord{"txt0", Modality::kText, "m1", Tensor::matrix(1, 3, {-1, 0, 1}),
                      Tensor::vector({1.0, 0.0})},
    };
    return store;
}

}  // namespace

TEST_CASE("write/read round trip is the identity") {
    auto dir = temp_dir("roundtrip");
    FeatureStore store = tiny_store();
    write_store(store, dir);
    FeatureStore back = read_store(dir);
    CHECK(back.manifest == store.manifest);
    CHECK(back.records == store.records);
}

TEST_CASE("empty store round trips") {
    auto dir = temp_dir("empty");
    FeatureStore store;
    write_store(store, dir);
    FeatureStore back = read_store(dir);
    CHECK(back.records.empty());
    CHECK(back.manifest.items.empty());
}

TEST_CASE("manifest reflects two models with distinct dims") {
    auto dir = temp_dir("dims");
    FeatureStore store;
    store.manifest.models = {ModelSpec{"alb", 768, 256, false}, ModelSpec{"dot", 768, 768, true}};
    write_store(store, dir);
    FeatureStore back = read_store(dir);
    REQUIRE(back.manifest.models.size() == 2);
    CHECK(back.manifest.models[0].d_glob == 256);
    CHECK(back.manifest.models[1].d_glob == 768);
}

TEST_CASE("inconsistent dims are rejected before any write") {
    auto dir = temp_dir("baddims");
    FeatureStore store = tiny_store();
    store.records[0].global = Tensor::vector({1, 2, 3});  // manifest says d_glob=2
    CHECK_THROWS_AS(write_store(store, dir), ConfigError);
    CHECK(!fs::exists(dir / "features.bin"));
}

TEST_CASE("load errors are distinct") {
    auto dir = temp_dir("loaderr");
    write_store(tiny_store(), dir);

    SUBCASE("truncated payload") {
        auto bytes = slurp(dir / "features.bin");
        std::ofstream f(dir / "features.bin", std::ios::binary);
        f.write(bytes.data(), static_cast<long>(bytes.size() / 2));
        f.close();
        CHECK_THROWS_WITH_AS(read_store(dir), doctest::Contains("truncated"), IoError);
    }
    SUBCASE("bad magic") {
        auto bytes = slurp(dir / "features.bin");
        bytes[0] = 'X';
        std::ofstream f(dir / "features.bin", std::ios::binary);
        f.write(bytes.data(), static_cast<long>(bytes.size()));
        f.close();
        CHECK_THROWS_WITH_AS(read_store(dir), doctest::Contains("magic"), IoError);
    }
    SUBCASE("unsupported version") {
        auto bytes = slurp(dir / "features.bin");
        bytes[4] = 99;  // u32 version little-endian
        std::ofstream f(dir / "features.bin", std::ios::binary);
        f.write(bytes.data(), static_cast<long>(bytes.size()));
        f.close();
        CHECK_THROWS_WITH_AS(read_store(dir), doctest::Contains("version"), IoError);
    }
}

TEST_CASE("synthetic generation is a pure function of the config") {
    SyntheticConfig cfg = SyntheticConfig::two_model_default();
    cfg.items = 8;
    cfg.seed = 123;
    FeatureStore a = generate_synthetic(cfg);
    FeatureStore b = generate_synthetic(cfg);
    CHECK(a.manifest == b.manifest);
    CHECK(a.records == b.records);

    auto dir_a = temp_dir("det_a");
    auto dir_b = temp_dir("det_b");
    write_store(a, dir_a);
    write_store(b, dir_b);
    CHECK(slurp(dir_a / "features.bin") == slurp(dir_b / "features.bin"));
    CHECK(slurp(dir_a / "manifest.json") == slurp(dir_b / "manifest.json"));
}

TEST_CASE("noise-free pairs have identical image/text globals") {
    SyntheticConfig cfg = SyntheticConfig::two_model_default();
    cfg.items = 6;
    cfg.noise = 0.0;
    FeatureStore store = generate_synthetic(cfg);
    for (const auto& pair : store.manifest.pairs) {
        for (const auto& m : store.manifest.models) {
            const auto* ig = store.find(pair.image_id, Modality::kImage, m.id);
            const auto* tg = store.find(pair.text_ids[0], Modality::kText, m.id);
            REQUIRE(ig);
            REQUIRE(tg);
            CHECK(ig->global.data == tg->global.data);
        }
    }
}

TEST_CASE("noise-free store: brute-force nearest neighbor gets R@1 = 1.0") {
    SyntheticConfig cfg = SyntheticConfig::two_model_default();
    cfg.items = 16;
    cfg.noise = 0.0;
    FeatureStore store = generate_synthetic(cfg);
    // brute-force oracle over a single model's globals
    const std::string model = cfg.models[0].id;
    std::size_t hits = 0;
    for (const auto& pair : store.manifest.pairs) {
        const Tensor& q = store.find(pair.image_id, Modality::kImage, model)->global;
        double best = -1e300;
        std::string best_id;
        for (const auto& other : store.manifest.pairs) {
            const Tensor& t = store.find(other.text_ids[0], Modality::kText, model)->global;
            double s = 0;
            for (std::size_t i = 0; i < q.size(); ++i) s += q.data[i] * t.data[i];
            if (s > best) {
                best = s;
                best_id = other.text_ids[0];
            }
        }
        if (best_id == pair.text_ids[0]) ++hits;
    }
    CHECK(hits == store.manifest.pairs.size());
}

TEST_CASE("variable token counts stay within the configured range") {
    SyntheticConfig cfg = SyntheticConfig::two_model_default();
    cfg.items = 20;
    cfg.models[1].tokens_min = 4;
    cfg.models[1].tokens_max = 12;
    FeatureStore store = generate_synthetic(cfg);
    for (const auto& rec : store.records) {
        if (rec.model_id != cfg.models[1].id) continue;
        std::size_t n = rec.tokens.rows() - 1;
        CHECK(n >= 4);
        CHECK(n <= 12);
    }
}

TEST_CASE("split_dataset") {
    SyntheticConfig cfg = SyntheticConfig::two_model_default();
    cfg.items = 100;
    cfg.texts_per_image = 3;
    FeatureStore store = generate_synthetic(cfg);

    SUBCASE("(1,0,0) puts everything in train") {
        split_dataset(store.manifest, 1.0, 0.0, 0.0, 5);
        for (const auto& it : store.manifest.items) CHECK(it.split == Split::kTrain);
    }
    SUBCASE("80/10/10 images and texts follow their image") {
        split_dataset(store.manifest, 0.8, 0.1, 0.1, 5);
        std::map<Split, int> img_counts;
        std::map<std::string, Split> split_of;
        for (const auto& it : store.manifest.items) {
            split_of[it.id] = it.split;
            if (it.modality == Modality::kImage) img_counts[it.split]++;
        }
        CHECK(img_counts[Split::kTrain] == 80);
        CHECK(img_counts[Split::kVal] == 10);
        CHECK(img_counts[Split::kTest] == 10);
        for (const auto& pair : store.manifest.pairs) {
            for (const auto& tid : pair.text_ids) {
                CHECK(split_of.at(tid) == split_of.at(pair.image_id));
            }
        }
    }
    SUBCASE("fractions must sum to 1") {
        CHECK_THROWS_AS(split_dataset(store.manifest, 0.5, 0.1, 0.1, 5), ConfigError);
    }
}
