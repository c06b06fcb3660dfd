#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "pseg/geom/point_cloud.hpp"
#include "pseg/rng.hpp"
#include "pseg/tensor.hpp"

namespace pseg::episodes {

/// One support example: a cloud together with the binary mask of its points
/// that belong to the example's class.
struct SupportSample {
    Index cloud = 0;              // index into the prepared corpus
    geom::Label global_class = 0;
    Index episode_class = 0;      // 1..C within the episode alphabet
    std::vector<char> mask;
};

struct QuerySample {
    Index cloud = 0;
    std::vector<Index> episode_labels;  // per point: 0 background, 1..C chosen classes
};

struct Episode {
    Index way = 0;
    Index shot = 0;
    std::vector<geom::Label> chosen;  // episode class e maps to chosen[e - 1]
    std::vector<SupportSample> support;
    std::vector<QuerySample> query;

    Index episode_class_of(geom::Label global) const {
        for (std::size_t e = 0; e < chosen.size(); ++e)
            if (chosen[e] == global) return static_cast<Index>(e) + 1;
        return 0;
    }
};

/// Draws a C-way K-shot episode. Chosen classes come from active_classes,
/// support clouds are drawn per class from clouds that contain it, and query
/// clouds are drawn from clouds containing any chosen class, disjoint from
/// this episode's support clouds. Deterministic per seed.
inline Episode sample_episode(const std::vector<geom::LabeledPointCloud>& corpus,
                              const std::vector<geom::Label>& active_classes, Index way,
                              Index shot, Index num_queries, std::uint64_t seed) {
    if (way < 1 || shot < 1 || num_queries < 1)
        throw ParameterError("sample_episode: way, shot, and query count must be positive");
    if (static_cast<Index>(active_classes.size()) < way)
        throw SamplingError("sample_episode: fewer active classes than requested ways");

    Rng rng(seed);
    Episode ep;
    ep.way = way;
    ep.shot = shot;
    for (std::size_t pick : rng.sample_without_replacement(active_classes.size(),
                                                           static_cast<std::size_t>(way)))
        ep.chosen.push_back(active_classes[pick]);

    std::unordered_set<Index> used_clouds;
    for (Index e = 1; e <= way; ++e) {
        const geom::Label cls = ep.chosen[static_cast<std::size_t>(e - 1)];
        std::vector<Index> candidates;
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            const auto& labels = corpus[i].labels;
            if (std::find(labels.begin(), labels.end(), cls) != labels.end())
                candidates.push_back(static_cast<Index>(i));
        }
        if (static_cast<Index>(candidates.size()) < shot)
            throw SamplingError("sample_episode: not enough clouds containing class " +
                                std::to_string(cls));
        for (std::size_t pick :
             rng.sample_without_replacement(candidates.size(), static_cast<std::size_t>(shot))) {
            SupportSample s;
            s.cloud = candidates[pick];
            s.global_class = cls;
            s.episode_class = e;
            const auto& labels = corpus[static_cast<std::size_t>(s.cloud)].labels;
            s.mask.resize(labels.size());
            for (std::size_t p = 0; p < labels.size(); ++p) s.mask[p] = labels[p] == cls ? 1 : 0;
            used_clouds.insert(s.cloud);
            ep.support.push_back(std::move(s));
        }
    }

    std::vector<Index> query_candidates;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (used_clouds.count(static_cast<Index>(i))) continue;
        const auto& labels = corpus[i].labels;
        const bool has_chosen = std::any_of(labels.begin(), labels.end(), [&](geom::Label l) {
            return std::find(ep.chosen.begin(), ep.chosen.end(), l) != ep.chosen.end();
        });
        if (has_chosen) query_candidates.push_back(static_cast<Index>(i));
    }
    if (static_cast<Index>(query_candidates.size()) < num_queries)
        throw SamplingError("sample_episode: not enough query clouds disjoint from support");
    for (std::size_t pick : rng.sample_without_replacement(query_candidates.size(),
                                                           static_cast<std::size_t>(num_queries))) {
        QuerySample q;
        q.cloud = query_candidates[pick];
        const auto& labels = corpus[static_cast<std::size_t>(q.cloud)].labels;
        q.episode_labels.reserve(labels.size());
        for (geom::Label l : labels) q.episode_labels.push_back(ep.episode_class_of(l));
        ep.query.push_back(std::move(q));
    }
    return ep;
}

/// count episodes with per-episode seeds derived from the stream seed.
inline std::vector<Episode> episode_stream(const std::vector<geom::LabeledPointCloud>& corpus,
                                           const std::vector<geom::Label>& active_classes,
                                           Index way, Index shot, Index num_queries, Index count,
                                           std::uint64_t seed) {
    std::vector<Episode> out;
    out.reserve(static_cast<std::size_t>(count));
    for (Index i = 0; i < count; ++i)
        out.push_back(sample_episode(corpus, active_classes, way, shot, num_queries,
                                     sub_seed(seed, "episode", static_cast<std::size_t>(i))));
    return out;
}

/// Replayable description of an episode stream: composition only, masks and
/// labels are rebuilt from the corpus on load.
inline nlohmann::json episode_to_json(const Episode& ep) {
    nlohmann::json support = nlohmann::json::array();
    for (const SupportSample& s : ep.support)
        support.push_back({{"cloud", s.cloud}, {"class", s.global_class}});
    nlohmann::json query = nlohmann::json::array();
    for (const QuerySample& q : ep.query) query.push_back(q.cloud);
    return nlohmann::json{
        {"way", ep.way}, {"shot", ep.shot}, {"chosen", ep.chosen},
        {"support", support}, {"query", query}};
}

inline Episode episode_from_json(const nlohmann::json& j,
                                 const std::vector<geom::LabeledPointCloud>& corpus) {
    Episode ep;
    ep.way = j.at("way").get<Index>();
    ep.shot = j.at("shot").get<Index>();
    ep.chosen = j.at("chosen").get<std::vector<geom::Label>>();
    Index next_class = 1;
    Index in_class = 0;
    for (const auto& js : j.at("support")) {
        SupportSample s;
        s.cloud = js.at("cloud").get<Index>();
        s.global_class = js.at("class").get<geom::Label>();
        if (s.cloud < 0 || s.cloud >= static_cast<Index>(corpus.size()))
            throw ConfigError("episode manifest: support cloud index out of range");
        s.episode_class = next_class;
        if (++in_class == ep.shot) {
            ++next_class;
            in_class = 0;
        }
        const auto& labels = corpus[static_cast<std::size_t>(s.cloud)].labels;
        s.mask.resize(labels.size());
        for (std::size_t p = 0; p < labels.size(); ++p)
            s.mask[p] = labels[p] == s.global_class ? 1 : 0;
        ep.support.push_back(std::move(s));
    }
    for (const auto& jq : j.at("query")) {
        QuerySample q;
        q.cloud = jq.get<Index>();
        if (q.cloud < 0 || q.cloud >= static_cast<Index>(corpus.size()))
            throw ConfigError("episode manifest: query cloud index out of range");
        const auto& labels = corpus[static_cast<std::size_t>(q.cloud)].labels;
        q.episode_labels.reserve(labels.size());
        for (geom::Label l : labels) q.episode_labels.push_back(ep.episode_class_of(l));
        ep.query.push_back(std::move(q));
    }
    return ep;
}

}  // namespace pseg::episodes
