#include "hada/eval.hpp"

#include <algorithm>
#include <cmath>

namespace hada {

Rankings rank(const Tensor& score_matrix) {
    std::size_t nq = score_matrix.rows(), ng = score_matrix.cols();
    Rankings out(nq);
    for (std::size_t q = 0; q < nq; ++q) {
        for (std::size_t g = 0; g < ng; ++g) {
            if (std::isnan(score_matrix.at(q, g))) {
                throw NumericError("rank: NaN score at query " + std::to_string(q) +
                                   ", gallery " + std::to_string(g));
            }
        }
        std::vector<std::size_t> order(ng);
        for (std::size_t g = 0; g < ng; ++g) order[g] = g;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            double sa = score_matrix.at(q, a), sb = score_matrix.at(q, b);
            if (sa != sb) return sa > sb;
            return a < b;
        });
        out[q] = std::move(order);
    }
    return out;
}

double recall_at_k(const Rankings& rankings, const Relevance& relevance, std::size_t k) {
    if (k < 1) throw ConfigError("recall_at_k: k must be >= 1");
    if (rankings.empty()) throw ConfigError("recall_at_k: no queries");
    std::size_t hits = 0;
    for (std::size_t q = 0; q < rankings.size(); ++q) {
        if (relevance[q].empty()) {
            throw ConfigError("recall_at_k: empty relevance set for query " + std::to_string(q));
        }
        std::size_t top = std::min(k, rankings[q].size());
        for (std::size_t i = 0; i < top; ++i) {
            if (relevance[q].count(rankings[q][i])) {
                ++hits;
                break;
            }
        }
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(rankings.size());
}

double rsum(double r1, double r5, double r10) { return r1 + r5 + r10; }

DirectionReport direction_report(const Rankings& rankings, const Relevance& relevance) {
    DirectionReport rep;
    rep.r1 = recall_at_k(rankings, relevance, 1);
    rep.r5 = recall_at_k(rankings, relevance, 5);
    rep.r10 = recall_at_k(rankings, relevance, 10);
    rep.rsum = rsum(rep.r1, rep.r5, rep.r10);
    return rep;
}

namespace {

RetrievalReport make_report(const EvalResult& r) {
    RetrievalReport rep;
    rep.i2t = direction_report(r.i2t_rankings, r.i2t_relevance);
    rep.t2i = direction_report(r.t2i_rankings, r.t2i_relevance);
    rep.total_rsum = rep.i2t.rsum + rep.t2i.rsum;
    return rep;
}

}  // namespace

EvalResult evaluate(const FeatureStore& store, const HadaParams& params, Split split,
                    ScoreMode mode, const std::string& single_model) {
    EvalResult res;
    for (const auto& it : store.manifest.items) {
        if (it.split != split) continue;
        if (it.modality == Modality::kImage) {
            res.image_ids.push_back(it.id);
        } else {
            res.text_ids.push_back(it.id);
        }
    }
    if (res.image_ids.empty() || res.text_ids.empty()) {
        throw ConfigError("evaluate: split '" + split_name(split) + "' is empty");
    }

    std::size_t ni = res.image_ids.size(), nt = res.text_ids.size();
    Tensor scores = Tensor::zeros({ni, nt});

    if (mode == ScoreMode::kSingleModel) {
        if (single_model.empty()) throw ConfigError("evaluate: single-model mode needs a model id");
        std::vector<const Tensor*> ig(ni), tg(nt);
        for (std::size_t i = 0; i < ni; ++i) {
            const FeatureRecord* r = store.find(res.image_ids[i], Modality::kImage, single_model);
            if (!r) throw ConfigError("evaluate: no record for image " + res.image_ids[i]);
            ig[i] = &r->global;
        }
        for (std::size_t t = 0; t < nt; ++t) {
            const FeatureRecord* r = store.find(res.text_ids[t], Modality::kText, single_model);
            if (!r) throw ConfigError("evaluate: no record for text " + res.text_ids[t]);
            tg[t] = &r->global;
        }
        for (std::size_t i = 0; i < ni; ++i)
            for (std::size_t t = 0; t < nt; ++t) scores.at(i, t) = similarity(*ig[i], *tg[t]);
    } else {
        const Arch& arch = params.arch;
        if (mode == ScoreMode::kB2 && arch.variant != Variant::kB2) {
            throw ConfigError("evaluate: b2 mode requires a b2-variant checkpoint");
        }
        // embed each gallery once, offline
        std::vector<Tensor> himg(ni), htxt(nt);
        for (std::size_t i = 0; i < ni; ++i) {
            himg[i] = embed(params, gather_item_records(store, arch, res.image_ids[i], Modality::kImage),
                            Modality::kImage);
        }
        for (std::size_t t = 0; t < nt; ++t) {
            htxt[t] = embed(params, gather_item_records(store, arch, res.text_ids[t], Modality::kText),
                            Modality::kText);
        }
        if (mode == ScoreMode::kWeighted) {
            if (arch.anchor_model.empty()) {
                throw ConfigError("evaluate: weighted mode requires an anchor model");
            }
            std::vector<const Tensor*> aig(ni), atg(nt);
            for (std::size_t i = 0; i < ni; ++i) {
                aig[i] = &store.find(res.image_ids[i], Modality::kImage, arch.anchor_model)->global;
            }
            for (std::size_t t = 0; t < nt; ++t) {
                atg[t] = &store.find(res.text_ids[t], Modality::kText, arch.anchor_model)->global;
            }
            for (std::size_t i = 0; i < ni; ++i)
                for (std::size_t t = 0; t < nt; ++t)
                    scores.at(i, t) = weighted_similarity(params, himg[i], htxt[t], *aig[i], *atg[t]);
        } else {
            for (std::size_t i = 0; i < ni; ++i)
                for (std::size_t t = 0; t < nt; ++t) scores.at(i, t) = similarity(himg[i], htxt[t]);
        }
    }

    // relevance from manifest pairs
    std::map<std::string, std::size_t> img_idx, txt_idx;
    for (std::size_t i = 0; i < ni; ++i) img_idx[res.image_ids[i]] = i;
    for (std::size_t t = 0; t < nt; ++t) txt_idx[res.text_ids[t]] = t;
    res.i2t_relevance.resize(ni);
    res.t2i_relevance.resize(nt);
    for (const auto& pair : store.manifest.pairs) {
        auto ii = img_idx.find(pair.image_id);
        if (ii == img_idx.end()) continue;
        for (const auto& tid : pair.text_ids) {
            auto ti = txt_idx.find(tid);
            if (ti == txt_idx.end()) continue;
            res.i2t_relevance[ii->second].insert(ti->second);
            res.t2i_relevance[ti->second].insert(ii->second);
        }
    }

    res.i2t_rankings = rank(scores);
    Tensor scores_t = Tensor::zeros({nt, ni});
    for (std::size_t i = 0; i < ni; ++i)
        for (std::size_t t = 0; t < nt; ++t) scores_t.at(t, i) = scores.at(i, t);
    res.t2i_rankings = rank(scores_t);
    res.report = make_report(res);
    return res;
}

Rankings average_rankings(const Rankings& a, const Rankings& b) {
    if (a.size() != b.size()) throw ConfigError("b1: query sets differ in size");
    Rankings out(a.size());
    for (std::size_t q = 0; q < a.size(); ++q) {
        std::size_t ng = a[q].size();
        if (b[q].size() != ng) throw ConfigError("b1: gallery sets differ in size");
        std::vector<double> pos_a(ng), pos_b(ng);
        for (std::size_t r = 0; r < ng; ++r) {
            pos_a[a[q][r]] = static_cast<double>(r);
            pos_b[b[q][r]] = static_cast<double>(r);
        }
        Tensor score = Tensor::zeros({1, ng});
        for (std::size_t g = 0; g < ng; ++g) score.at(0, g) = -(pos_a[g] + pos_b[g]) / 2.0;
        out[q] = rank(score)[0];
    }
    return out;
}

EvalResult baseline_b1(const EvalResult& a, const EvalResult& b) {
    if (a.image_ids != b.image_ids || a.text_ids != b.text_ids) {
        throw ConfigError("b1: mismatched item sets");
    }
    EvalResult res;
    res.image_ids = a.image_ids;
    res.text_ids = a.text_ids;
    res.i2t_relevance = a.i2t_relevance;
    res.t2i_relevance = a.t2i_relevance;
    res.i2t_rankings = average_rankings(a.i2t_rankings, b.i2t_rankings);
    res.t2i_rankings = average_rankings(a.t2i_rankings, b.t2i_rankings);
    res.report = make_report(res);
    return res;
}

}  // namespace hada
