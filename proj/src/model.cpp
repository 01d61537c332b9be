#include "hada/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace hada {

namespace {

constexpr char kMagic[4] = {'H', 'A', 'D', 'C'};
constexpr std::uint32_t kVersion = 1;

const char* mod_tag(Modality m) { return m == Modality::kImage ? "img" : "txt"; }

void fnv_mix(std::uint32_t& h, const std::string& s) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 16777619u;
    }
    h ^= 0xff;
    h *= 16777619u;
}

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("checkpoint: truncated payload");
    return v;
}

Tensor dropout_mask(const std::vector<std::size_t>& shape, double p, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor mask = Tensor::zeros(shape);
    double keep = 1.0 / (1.0 - p);
    for (double& v : mask.data) v = u(rng) < p ? 0.0 : keep;
    return mask;
}

}  // namespace

void Arch::validate() const {
    if (models.empty()) throw ConfigError("arch: no models configured");
    if (d_h < 1 || d_shared < 1 || d_out < 1) throw ConfigError("arch: dims must be >= 1");
    if (heads < 1 || d_out % heads != 0) {
        throw ConfigError("arch: d_out (" + std::to_string(d_out) +
                          ") must be divisible by heads (" + std::to_string(heads) + ")");
    }
    if (head_depth != 1 && head_depth != 2) throw ConfigError("arch: head_depth must be 1 or 2");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("arch: dropout must be in [0,1)");
    if (!anchor_model.empty()) {
        bool found = false;
        for (const auto& m : models) found = found || m.id == anchor_model;
        if (!found) throw ConfigError("arch: anchor model '" + anchor_model + "' not configured");
    }
}

std::size_t Arch::glob_total() const {
    std::size_t s = 0;
    for (const auto& m : models) s += m.d_glob;
    return s;
}

std::size_t Arch::head_input_dim() const {
    return variant == Variant::kB2 ? glob_total() : models.size() * d_out + glob_total();
}

std::uint32_t Arch::config_hash() const {
    std::uint32_t h = 2166136261u;
    fnv_mix(h, variant == Variant::kB2 ? "b2" : "hada");
    for (const auto& m : models) {
        fnv_mix(h, m.id);
        fnv_mix(h, std::to_string(m.d_tok));
        fnv_mix(h, std::to_string(m.d_glob));
    }
    fnv_mix(h, std::to_string(d_shared));
    fnv_mix(h, std::to_string(d_out));
    fnv_mix(h, std::to_string(heads));
    fnv_mix(h, std::to_string(d_h));
    fnv_mix(h, std::to_string(head_depth));
    fnv_mix(h, proj_bias ? "bias" : "nobias");
    fnv_mix(h, std::to_string(leaky_slope));
    fnv_mix(h, anchor_model);
    fnv_mix(h, normalize_anchor ? "normanchor" : "rawanchor");
    return h;
}

HadaParams HadaParams::init(const Arch& arch, double tau_init, std::uint64_t seed) {
    arch.validate();
    std::mt19937_64 rng(seed);
    HadaParams p;
    p.arch = arch;
    // Draw order below is fixed; the map only stores the result.
    for (Modality mod : {Modality::kImage, Modality::kText}) {
        std::string mt = mod_tag(mod);
        if (arch.variant == Variant::kHada) {
            for (const auto& m : arch.models) {
                p.tensors["proj." + mt + "." + m.id + ".W"] =
                    init_uniform({arch.d_shared, m.d_tok}, m.d_tok, rng);
                if (arch.proj_bias) {
                    p.tensors["proj." + mt + "." + m.id + ".b"] = Tensor::zeros({arch.d_shared});
                }
            }
            std::size_t dh = arch.d_head();
            for (std::size_t k = 0; k < arch.heads; ++k) {
                std::string base = "gat." + mt + ".h" + std::to_string(k) + ".";
                p.tensors[base + "W1"] = init_uniform({dh, arch.d_shared}, arch.d_shared, rng);
                p.tensors[base + "W2"] = init_uniform({dh, arch.d_shared}, arch.d_shared, rng);
                p.tensors[base + "A"] = init_uniform({dh}, dh, rng);
            }
            p.tensors["gat." + mt + ".out.W"] =
                init_uniform({arch.d_out, arch.heads * dh}, arch.heads * dh, rng);
            p.tensors["gat." + mt + ".out.b"] = Tensor::zeros({arch.d_out});
        }
        std::size_t in = arch.head_input_dim();
        if (arch.head_depth == 1) {
            p.tensors["head." + mt + ".0.W"] = init_uniform({arch.d_h, in}, in, rng);
            p.tensors["head." + mt + ".0.b"] = Tensor::zeros({arch.d_h});
        } else {
            p.tensors["head." + mt + ".0.W"] = init_uniform({arch.d_h, in}, in, rng);
            p.tensors["head." + mt + ".0.b"] = Tensor::zeros({arch.d_h});
            p.tensors["head." + mt + ".1.W"] = init_uniform({arch.d_h, arch.d_h}, arch.d_h, rng);
            p.tensors["head." + mt + ".1.b"] = Tensor::zeros({arch.d_h});
        }
    }
    p.tensors["dc.W"] = init_uniform({4 * arch.d_h}, 4 * arch.d_h, rng);
    p.tensors["tau"] = Tensor::scalar(tau_init);
    p.tensors["alpha"] = Tensor::scalar(0.0);
    return p;
}

std::size_t HadaParams::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
}

bool HadaParams::operator==(const HadaParams& other) const {
    if (phase != other.phase || tensors.size() != other.tensors.size()) return false;
    for (const auto& [name, t] : tensors) {
        auto it = other.tensors.find(name);
        if (it == other.tensors.end() || it->second.shape != t.shape || it->second.data != t.data) {
            return false;
        }
    }
    return true;
}

NodeId StagedParams::at(const std::string& name) const {
    auto it = ids.find(name);
    if (it == ids.end()) throw ConfigError("staged params: unknown tensor '" + name + "'");
    return it->second;
}

StagedParams stage_params(Tape& tape, const HadaParams& params) {
    StagedParams staged;
    for (const auto& [name, t] : params.tensors) staged.ids[name] = tape.param(t);
    return staged;
}

GradSet collect_grads(const Tape& tape, const StagedParams& staged) {
    GradSet grads;
    for (const auto& [name, id] : staged.ids) grads[name] = tape.grad(id);
    return grads;
}

ItemRecords gather_item_records(const FeatureStore& store, const Arch& arch,
                                const std::string& item_id, Modality modality) {
    ItemRecords recs;
    for (const auto& m : arch.models) {
        const FeatureRecord* r = store.find(item_id, modality, m.id);
        if (!r) {
            throw ConfigError("item '" + item_id + "': missing record for model '" + m.id + "'");
        }
        recs.push_back(r);
    }
    return recs;
}

NodeId embed_batch(Tape& tape, const StagedParams& staged, const Arch& arch,
                   const std::vector<ItemRecords>& items, Modality modality,
                   std::mt19937_64* dropout_rng) {
    if (items.empty()) throw ConfigError("embed: empty batch");
    std::string mt = mod_tag(modality);
    std::size_t nm = arch.models.size();
    std::size_t M = items.size();

    for (const auto& recs : items) {
        if (recs.size() != nm) throw ConfigError("embed: record list does not cover all models");
    }

    auto maybe_dropout = [&](NodeId x) {
        if (!dropout_rng || arch.dropout == 0.0) return x;
        return tape.mul(x, tape.constant(dropout_mask(tape.value(x).shape, arch.dropout,
                                                      *dropout_rng)));
    };

    std::vector<NodeId> head_in_cols;

    if (arch.variant == Variant::kHada) {
        std::vector<FusionGraph> graphs;
        graphs.reserve(M);
        for (const auto& recs : items) {
            std::vector<NodeId> projected;
            projected.reserve(nm);
            for (std::size_t i = 0; i < nm; ++i) {
                const auto& m = arch.models[i];
                NodeId w = staged.at("proj." + mt + "." + m.id + ".W");
                NodeId proj = arch.proj_bias
                                  ? project_tokens(tape, *recs[i], w,
                                                   staged.at("proj." + mt + "." + m.id + ".b"))
                                  : project_tokens(tape, *recs[i], w);
                projected.push_back(maybe_dropout(proj));
            }
            graphs.push_back(build_graph(tape, projected));
        }
        FusionGraph batched = batch_graphs(tape, graphs);

        GatLayerRef layer;
        layer.leaky_slope = arch.leaky_slope;
        for (std::size_t k = 0; k < arch.heads; ++k) {
            std::string base = "gat." + mt + ".h" + std::to_string(k) + ".";
            layer.heads.push_back(GatHeadRef{staged.at(base + "W1"), staged.at(base + "W2"),
                                             staged.at(base + "A")});
        }
        layer.out_w = staged.at("gat." + mt + ".out.W");
        layer.out_b = staged.at("gat." + mt + ".out.b");

        NodeId cls_mat = maybe_dropout(multi_head_forward(tape, layer, batched));

        // item-major CLS rows back into one column block per model
        for (std::size_t i = 0; i < nm; ++i) {
            std::vector<std::size_t> idx(M);
            for (std::size_t m = 0; m < M; ++m) idx[m] = m * nm + i;
            head_in_cols.push_back(tape.gather_rows(cls_mat, std::move(idx)));
        }
    }

    // pass-through original globals
    Tensor globals = Tensor::zeros({M, arch.glob_total()});
    for (std::size_t m = 0; m < M; ++m) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < nm; ++i) {
            const Tensor& g = items[m][i]->global;
            std::copy(g.data.begin(), g.data.end(), globals.data.begin() + m * arch.glob_total() + off);
            off += g.size();
        }
    }
    head_in_cols.push_back(tape.constant(std::move(globals)));

    NodeId x = head_in_cols.size() == 1 ? head_in_cols[0] : tape.concat_cols(head_in_cols);
    x = tape.add_rowvec(tape.matmul_nt(x, staged.at("head." + mt + ".0.W")),
                        staged.at("head." + mt + ".0.b"));
    if (arch.head_depth == 2) {
        x = tape.elu(x);
        x = tape.add_rowvec(tape.matmul_nt(x, staged.at("head." + mt + ".1.W")),
                            staged.at("head." + mt + ".1.b"));
    }
    return tape.l2_normalize(x);
}

Tensor embed(const HadaParams& params, const ItemRecords& records, Modality modality) {
    Tape tape;
    StagedParams staged = stage_params(tape, params);
    NodeId out = embed_batch(tape, staged, params.arch, {records}, modality, nullptr);
    const Tensor& v = tape.value(out);
    return Tensor({v.cols()}, v.data);
}

double similarity(const Tensor& h_p, const Tensor& h_s) {
    if (h_p.size() != h_s.size()) {
        throw ShapeError("similarity: dim mismatch " + shape_str(h_p.shape) + " vs " +
                         shape_str(h_s.shape));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < h_p.size(); ++i) acc += h_p.data[i] * h_s.data[i];
    return acc;
}

double anchor_dot(const Arch& arch, const Tensor& anchor_img_global,
                  const Tensor& anchor_txt_global) {
    if (!arch.normalize_anchor) return similarity(anchor_img_global, anchor_txt_global);
    auto norm = [](const Tensor& t) {
        double acc = 0.0;
        for (double v : t.data) acc += v * v;
        return std::sqrt(acc);
    };
    double ni = norm(anchor_img_global), nt = norm(anchor_txt_global);
    if (ni == 0.0 || nt == 0.0) throw NumericError("anchor similarity: zero global vector");
    return similarity(anchor_img_global, anchor_txt_global) / (ni * nt);
}

double weighted_similarity(const HadaParams& params, const Tensor& h_p, const Tensor& h_s,
                           const Tensor& anchor_img_global, const Tensor& anchor_txt_global) {
    double a = params.alpha();
    return (1.0 - a) * similarity(h_p, h_s) +
           a * anchor_dot(params.arch, anchor_img_global, anchor_txt_global);
}

NodeId discriminate(Tape& tape, NodeId h_p_rows, NodeId h_s_rows, NodeId w_dc) {
    NodeId diff = tape.abs(tape.sub(h_p_rows, h_s_rows));
    NodeId prod = tape.mul(h_p_rows, h_s_rows);
    NodeId feat = tape.concat_cols({h_p_rows, h_s_rows, diff, prod});
    return tape.sigmoid(tape.matvec(feat, w_dc));
}

double discriminate(const HadaParams& params, const Tensor& h_p, const Tensor& h_s) {
    Tape tape;
    NodeId hp = tape.constant(Tensor({1, h_p.size()}, h_p.data));
    NodeId hs = tape.constant(Tensor({1, h_s.size()}, h_s.data));
    NodeId w = tape.constant(params.tensors.at("dc.W"));
    return tape.value(discriminate(tape, hp, hs, w)).data[0];
}

void save_checkpoint(const HadaParams& params, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os.write(kMagic, 4);
    write_pod<std::uint32_t>(os, kVersion);
    write_pod<std::uint32_t>(os, params.arch.config_hash());
    std::uint32_t blocks = 0;
    for (const auto& [name, t] : params.tensors) {
        if (name != "tau" && name != "alpha") ++blocks;
    }
    write_pod<std::uint32_t>(os, blocks);
    for (const auto& [name, t] : params.tensors) {
        if (name == "tau" || name == "alpha") continue;
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<long>(name.size()));
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape) write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<long>(t.data.size() * sizeof(double)));
    }
    write_pod<double>(os, params.tau());
    write_pod<double>(os, params.alpha());
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params.phase));
    if (!os) throw IoError("checkpoint write failed: " + path.string());
}

HadaParams load_checkpoint(const std::filesystem::path& path, const Arch& expected) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("checkpoint: bad magic, not a HADC file");
    }
    auto version = read_pod<std::uint32_t>(is);
    if (version != kVersion) {
        throw IoError("checkpoint: unsupported version " + std::to_string(version));
    }
    auto hash = read_pod<std::uint32_t>(is);
    if (hash != expected.config_hash()) {
        throw IoError("checkpoint: config mismatch (stored hash " + std::to_string(hash) +
                      ", expected " + std::to_string(expected.config_hash()) + ")");
    }
    HadaParams params;
    params.arch = expected;
    auto blocks = read_pod<std::uint32_t>(is);
    for (std::uint32_t b = 0; b < blocks; ++b) {
        auto name_len = read_pod<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        auto rank = read_pod<std::uint32_t>(is);
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = read_pod<std::uint32_t>(is);
        Tensor t = Tensor::zeros(shape);
        is.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<long>(t.data.size() * sizeof(double)));
        if (!is) throw IoError("checkpoint: truncated payload");
        params.tensors[name] = std::move(t);
    }
    params.tensors["tau"] = Tensor::scalar(read_pod<double>(is));
    params.tensors["alpha"] = Tensor::scalar(read_pod<double>(is));
    params.phase = static_cast<int>(read_pod<std::uint32_t>(is));
    return params;
}

}  // namespace hada
