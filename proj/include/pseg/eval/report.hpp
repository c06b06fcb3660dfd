#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pseg/common.hpp"
#include "pseg/episodes/sampler.hpp"
#include "pseg/eval/confusion.hpp"
#include "pseg/fen/config.hpp"
#include "pseg/fen/network.hpp"
#include "pseg/geom/point_cloud.hpp"
#include "pseg/lpa/segment.hpp"
#include "pseg/proto/prototypes.hpp"
#include "pseg/tensor.hpp"

namespace pseg::eval {

/// Maps an episode label back to the corpus alphabet: 0 stays background,
/// class e becomes the e-th chosen foreground class.
inline Index episode_to_global(Index episode_label, const std::vector<geom::Label>& chosen) {
    if (episode_label == 0) return static_cast<Index>(geom::kPlane);
    if (episode_label < 1 || episode_label > static_cast<Index>(chosen.size()))
        throw ParameterError("episode label outside the episode alphabet");
    return static_cast<Index>(chosen[static_cast<std::size_t>(episode_label - 1)]);
}

/// Plain per-cloud features, computed once per distinct cloud and reused
/// across the episodes of a run.
class PlainFeatureCache {
  public:
    const Tensor& features(Index cloud_index, const geom::LabeledPointCloud& cloud,
                           const fen::ParamMap& params, const fen::ModelConfig& cfg) {
        auto it = cache_.find(cloud_index);
        if (it != cache_.end()) return it->second;
        Tensor f = fen::extract_features(cloud.cloud, params, cfg).features;
        return cache_.emplace(cloud_index, std::move(f)).first->second;
    }

    void clear() { cache_.clear(); }

  private:
    std::map<Index, Tensor> cache_;
};

struct EpisodePrediction {
    std::vector<std::vector<Index>> labels;  // episode labels per query cloud
    Tensor probs;                            // all query rows, row-major per cloud
    double sigma2 = 0.0;
};

/// Inference for one episode: group support features by episode class, build
/// multi-prototypes, and propagate labels to the query points.
inline EpisodePrediction predict_episode(const episodes::Episode& ep,
                                         const std::vector<geom::LabeledPointCloud>& corpus,
                                         const fen::ParamMap& params,
                                         const fen::ModelConfig& mcfg, Index n_p,
                                         const lpa::PropagationConfig& pcfg,
                                         PlainFeatureCache& cache) {
    if (ep.support.empty() || ep.query.empty())
        throw ParameterError("predict_episode: episode has no support or no query");
    const Index way = static_cast<Index>(ep.chosen.size());

    std::vector<Tensor> per_class;
    for (Index e = 0; e <= way; ++e) {
        std::vector<const Tensor*> feats;
        std::vector<std::vector<Index>> rows;
        Index total = 0;
        for (const auto& s : ep.support) {
            if (e != 0 && s.episode_class != e) continue;
            const Tensor& f =
                cache.features(s.cloud, corpus[static_cast<std::size_t>(s.cloud)], params, mcfg);
            std::vector<Index> idx;
            for (std::size_t i = 0; i < s.mask.size(); ++i)
                if ((s.mask[i] != 0) == (e != 0)) idx.push_back(static_cast<Index>(i));
            if (idx.empty()) continue;
            total += static_cast<Index>(idx.size());
            feats.push_back(&f);
            rows.push_back(std::move(idx));
        }
        if (total == 0)
            throw ParameterError("predict_episode: no support points for episode class " +
                                 std::to_string(e));
        Tensor block({total, mcfg.feature_dim()});
        Index at = 0;
        for (std::size_t b = 0; b < feats.size(); ++b)
            for (Index r : rows[b]) block.mat().row(at++) = feats[b]->mat().row(r);
        per_class.push_back(std::move(block));
    }
    const proto::PrototypeSet protos = proto::build_prototypes(per_class, n_p);

    Index qrows = 0;
    for (const auto& q : ep.query)
        qrows += static_cast<Index>(q.episode_labels.size());
    Tensor query({qrows, mcfg.feature_dim()});
    Index at = 0;
    for (const auto& q : ep.query) {
        const Tensor& f =
            cache.features(q.cloud, corpus[static_cast<std::size_t>(q.cloud)], params, mcfg);
        query.mat().middleRows(at, f.rows()) = f.mat();
        at += f.rows();
    }

    const lpa::SegmentResult seg =
        lpa::segment_episode(protos.features, protos.class_of, query, way, pcfg);

    EpisodePrediction out;
    out.probs = seg.probs;
    out.sigma2 = seg.sigma2;
    std::size_t cursor = 0;
    for (const auto& q : ep.query) {
        const std::size_t n = q.episode_labels.size();
        out.labels.emplace_back(seg.labels.begin() + cursor, seg.labels.begin() + cursor + n);
        cursor += n;
    }
    return out;
}

/// Pools one episode into a corpus-alphabet confusion matrix. Both truth and
/// prediction pass through the episode alphabet, so foreground classes that
/// were not chosen count as background on both sides.
inline void accumulate_episode(ConfusionMatrix& conf, const episodes::Episode& ep,
                               const EpisodePrediction& pred) {
    if (pred.labels.size() != ep.query.size())
        throw ShapeError("accumulate_episode: one label list per query cloud required");
    for (std::size_t qi = 0; qi < ep.query.size(); ++qi) {
        const auto& truth = ep.query[qi].episode_labels;
        const auto& labels = pred.labels[qi];
        if (labels.size() != truth.size())
            throw ShapeError("accumulate_episode: label count mismatch");
        for (std::size_t i = 0; i < truth.size(); ++i)
            conf.add(episode_to_global(truth[i], ep.chosen),
                     episode_to_global(labels[i], ep.chosen));
    }
}

struct RunScore {
    double miou = 0.0;
    IouResult detail;
    ConfusionMatrix confusion{geom::kNumClasses};
};

/// Scores one checkpoint: pools the confusion matrix over a deterministic
/// stream of test episodes and reports the foreground mIoU.
inline RunScore evaluate_checkpoint(const fen::ParamMap& params,
                                    const std::vector<geom::LabeledPointCloud>& corpus,
                                    const std::vector<geom::Label>& test_classes,
                                    const fen::ModelConfig& mcfg, Index n_p,
                                    const lpa::PropagationConfig& pcfg, Index way, Index shot,
                                    Index num_queries, Index num_episodes, std::uint64_t seed) {
    if (num_episodes < 1) throw ParameterError("evaluate_checkpoint: need at least one episode");
    const auto stream =
        episodes::episode_stream(corpus, test_classes, way, shot, num_queries, num_episodes, seed);
    RunScore score;
    PlainFeatureCache cache;
    for (const auto& ep : stream) {
        const auto pred = predict_episode(ep, corpus, params, mcfg, n_p, pcfg, cache);
        accumulate_episode(score.confusion, ep, pred);
    }
    score.detail = miou(score.confusion);
    score.miou = score.detail.mean;
    return score;
}

/// Best/mean summary across the runs of one setting, Table-1 style. The
/// per-class scores follow the best run.
struct SettingReport {
    std::string setting;
    Index runs = 0;
    double best_miou = 0.0;
    double mean_miou = 0.0;
    std::map<std::string, double> per_class;
};

inline SettingReport summarize_setting(const std::string& setting,
                                       const std::vector<RunScore>& scores,
                                       const geom::ClassAlphabet& alphabet) {
    if (scores.empty()) throw ParameterError("summarize_setting: no runs");
    SettingReport rep;
    rep.setting = setting;
    rep.runs = static_cast<Index>(scores.size());
    std::size_t best = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        sum += scores[i].miou;
        if (scores[i].miou > scores[best].miou) best = i;
    }
    rep.best_miou = scores[best].miou;
    rep.mean_miou = sum / static_cast<double>(scores.size());
    const auto& detail = scores[best].detail;
    for (std::size_t c = 0; c < alphabet.size(); ++c)
        if (c < detail.defined.size() && detail.defined[c] != 0)
            rep.per_class.emplace(alphabet.names[c], detail.per_class[c]);
    return rep;
}

inline nlohmann::json report_to_json(const std::vector<SettingReport>& reports) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : reports) {
        nlohmann::json row{{"setting", r.setting},
                           {"runs", r.runs},
                           {"best_miou", r.best_miou},
                           {"mean_miou", r.mean_miou}};
        row["per_class"] = nlohmann::json::object();
        for (const auto& [name, iou] : r.per_class) row["per_class"][name] = iou;
        arr.push_back(std::move(row));
    }
    return nlohmann::json{{"results", std::move(arr)}};
}

/// Fixed-width text table with one row per setting.
inline std::string report_table(const std::vector<SettingReport>& reports) {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-16s %6s %12s %12s\n", "setting", "runs", "best mIoU",
                  "mean mIoU");
    out += buf;
    out += std::string(48, '-') + "\n";
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof buf, "%-16s %6lld %12.4f %12.4f\n", r.setting.c_str(),
                      static_cast<long long>(r.runs), r.best_miou, r.mean_miou);
        out += buf;
    }
    return out;
}

}  // namespace pseg::eval
