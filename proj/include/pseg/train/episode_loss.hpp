#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pseg/ad/graph.hpp"
#include "pseg/common.hpp"
#include "pseg/episodes/sampler.hpp"
#include "pseg/fen/config.hpp"
#include "pseg/fen/network.hpp"
#include "pseg/geom/cloud_ops.hpp"
#include "pseg/geom/knn.hpp"
#include "pseg/geom/point_cloud.hpp"
#include "pseg/proto/centers.hpp"
#include "pseg/proto/prototypes.hpp"
#include "pseg/tensor.hpp"
#include "pseg/train/config.hpp"
#include "pseg/train/optimizer.hpp"

namespace pseg::train {

struct LossBreakdown {
    double l_m = 0.0;
    double l_c = 0.0;
    double l_reg = 0.0;
    double total = 0.0;
};

/// Per-cloud activations at the frozen/trainable boundary.
///
/// During fine-tuning the layers below the boundary never change, so each
/// cloud is pushed through them once and the result is replayed as a graph
/// constant afterwards. The boundary sits after self-attention by default
/// and before it when attention is trainable. One cache belongs to one
/// parameter set; clear it if the frozen layers are ever replaced.
class FeatureCache {
  public:
    struct Entry {
        Tensor activation;
        double reg = 0.0;  // transform regularizer, constant below the boundary
    };

    const Entry& boundary(Index cloud_index, const geom::LabeledPointCloud& cloud,
                          const fen::ParamMap& params, const fen::ModelConfig& cfg,
                          bool through_attention) {
        auto it = entries_.find(cloud_index);
        if (it != entries_.end()) return it->second;
        ad::Graph g;
        const ad::NodeId coords = g.constant(geom::cloud_coords(cloud.cloud));
        const ad::NodeId normals = g.constant(geom::cloud_normals(cloud.cloud));
        const fen::ParamNodes p = fen::make_param_nodes(g, params, {});
        const fen::BackboneOut bb = fen::backbone(g, coords, normals, p, cfg);
        ad::NodeId x = bb.concat;
        if (through_attention) x = fen::self_attention(g, x, p, cfg);
        Entry e{g.value(x), fen::reg_loss(g.value(bb.a_hat))};
        return entries_.emplace(cloud_index, std::move(e)).first->second;
    }

    void clear() { entries_.clear(); }
    std::size_t size() const { return entries_.size(); }

  private:
    std::map<Index, Entry> entries_;
};

struct LpaGraphOut {
    ad::NodeId probs = -1;  // query rows after the row softmax
    ad::NodeId z = -1;      // propagation result for every node
    ad::NodeId loss = -1;   // mean negative log-likelihood over query rows
    double sigma2 = 0.0;    // kernel bandwidth actually used
};

/// Differentiable label propagation: builds the closed-form solve
/// (I - alpha * S) Z = Y on the tape so gradients flow back into the node
/// features. The kNN pattern is fixed from the current feature values;
/// weights, degrees and the adaptive bandwidth stay differentiable.
inline LpaGraphOut lpa_loss_graph(ad::Graph& g, ad::NodeId features, const Tensor& y,
                                  const std::vector<Index>& query_rows,
                                  const std::vector<Index>& truth, Index k, double alpha,
                                  double sigma) {
    const Tensor& fv = g.value(features);
    const Index n = fv.rows();
    if (n < 2) throw ParameterError("lpa_loss_graph: need at least two nodes");
    if (!(alpha >= 0.0 && alpha < 1.0))
        throw ParameterError("lpa_loss_graph: alpha must be in [0, 1)");
    if (y.rows() != n) throw ShapeError("lpa_loss_graph: Y must have one row per node");
    if (truth.size() != query_rows.size())
        throw ShapeError("lpa_loss_graph: one label per query row required");

    const Index k_eff = std::min<Index>(k, n - 1);
    const auto nbr = geom::knn(fv, k_eff, true);
    std::vector<Index> ei, ej;
    ei.reserve(static_cast<std::size_t>(n * k_eff));
    ej.reserve(static_cast<std::size_t>(n * k_eff));
    for (Index i = 0; i < n; ++i) {
        for (Index j : nbr[static_cast<std::size_t>(i)]) {
            ei.push_back(i);
            ej.push_back(j);
        }
    }

    const ad::NodeId diff = g.subtract(g.gather_rows(features, ei), g.gather_rows(features, ej));
    const ad::NodeId sq = g.rowwise_sum_sq(diff);
    const ad::NodeId sigma2 =
        sigma > 0.0 ? g.constant(Tensor::scalar(sigma * sigma)) : g.reduce_mean(sq);
    const ad::NodeId w = g.exp(g.mul_scalar_node(g.scale(sq, -1.0), g.reciprocal(sigma2)));

    const ad::NodeId w_dir = g.scatter_matrix(w, std::move(ei), std::move(ej), n, n);
    const ad::NodeId w_sym = g.add(w_dir, g.transpose(w_dir));
    const ad::NodeId deg = g.matmul(w_sym, g.constant(Tensor::full({n, 1}, 1.0)));
    const ad::NodeId inv_sqrt = g.rsqrt(g.add(deg, g.constant(Tensor::full({n, 1}, 1e-12))));
    const ad::NodeId s = g.mul_cols(g.mul_rows(w_sym, inv_sqrt), inv_sqrt);
    const ad::NodeId system = g.subtract(g.constant(Tensor::identity(n)), g.scale(s, alpha));

    const ad::NodeId z = g.solve_lu(system, g.constant(y));
    const ad::NodeId probs = g.softmax_rows(g.gather_rows(z, query_rows));
    const ad::NodeId loss = g.nll_rows(probs, truth);
    return {probs, z, loss, g.value(sigma2).v[0]};
}

/// One episode's loss on the tape, plus everything a step needs afterwards.
struct EpisodeLoss {
    ad::Graph graph;
    ad::NodeId root = -1;  // l_m + lambda * l_c; the transform term is constant
    ad::NodeId l_m = -1;
    ad::NodeId l_c = -1;
    LossBreakdown values;                    // filled in at build time
    fen::ParamNodes leaves;                  // trainable parameters only
    Tensor query_features;                   // values, for the center update
    std::vector<Index> query_global_labels;  // original corpus labels per query point
    double sigma2 = 0.0;
};

namespace detail {

/// Row indices of a support sample that belong to episode class e: masked
/// rows for the sample's own class, unmasked rows for the background.
inline std::vector<Index> class_rows(const episodes::SupportSample& s, Index e) {
    std::vector<Index> rows;
    const bool want_marked = e != 0;
    for (std::size_t i = 0; i < s.mask.size(); ++i)
        if ((s.mask[i] != 0) == want_marked) rows.push_back(static_cast<Index>(i));
    return rows;
}

}  // namespace detail

/// Builds the fine-tuning objective for one episode.
///
/// Trainable layers (the head, plus attention when configured) run on the
/// tape on top of cached boundary activations. Support features are grouped
/// per episode class, partitioned into prototypes around farthest-point
/// anchors, and propagated together with the query points; the masked loss
/// is the mean negative log-likelihood of the true query labels. The center
/// loss pulls query features toward their class centers, which are
/// initialized from this batch if a class has not been seen yet.
inline EpisodeLoss build_episode_loss(const episodes::Episode& ep,
                                      const std::vector<geom::LabeledPointCloud>& corpus,
                                      const fen::ParamMap& params, proto::ClassCenters& centers,
                                      const fen::ModelConfig& mcfg, const TrainConfig& tcfg,
                                      FeatureCache& cache) {
    if (ep.support.empty() || ep.query.empty())
        throw ParameterError("build_episode_loss: episode has no support or no query");
    for (const auto& s : ep.support)
        if (s.cloud < 0 || s.cloud >= static_cast<Index>(corpus.size()))
            throw ParameterError("build_episode_loss: support cloud index out of range");
    for (const auto& q : ep.query)
        if (q.cloud < 0 || q.cloud >= static_cast<Index>(corpus.size()))
            throw ParameterError("build_episode_loss: query cloud index out of range");

    EpisodeLoss out;
    ad::Graph& g = out.graph;

    const std::set<std::string> trainable = fen::unfrozen_names(params, tcfg.unfreeze_attention);
    fen::ParamMap trainable_params;
    for (const auto& name : trainable) trainable_params.emplace(name, params.at(name));
    out.leaves = fen::make_param_nodes(g, trainable_params, trainable);

    // Distinct clouds, each lifted from the cache through the trainable tail.
    std::set<Index> distinct;
    for (const auto& s : ep.support) distinct.insert(s.cloud);
    for (const auto& q : ep.query) distinct.insert(q.cloud);

    std::map<Index, ad::NodeId> feats;
    double reg_sum = 0.0;
    for (Index ci : distinct) {
        const auto& entry = cache.boundary(ci, corpus[static_cast<std::size_t>(ci)], params, mcfg,
                                           !tcfg.unfreeze_attention);
        ad::NodeId x = g.constant(entry.activation);
        if (tcfg.unfreeze_attention) x = fen::self_attention(g, x, out.leaves, mcfg);
        const ad::NodeId f = fen::head(g, x, out.leaves, mcfg);
        if (!g.value(f).all_finite())
            throw NumericError("build_episode_loss: features are not finite");
        feats.emplace(ci, f);
        reg_sum += entry.reg;
    }
    out.values.l_reg = reg_sum / static_cast<double>(distinct.size());

    // Prototypes per episode class, background first. The partition is fixed
    // from current values; the cell means stay differentiable.
    const Index way = static_cast<Index>(ep.chosen.size());
    std::vector<ad::NodeId> proto_parts;
    std::vector<Index> proto_class;
    for (Index e = 0; e <= way; ++e) {
        std::vector<ad::NodeId> parts;
        for (const auto& s : ep.support) {
            if (e != 0 && s.episode_class != e) continue;
            std::vector<Index> rows = detail::class_rows(s, e);
            if (rows.empty()) continue;
            parts.push_back(g.gather_rows(feats.at(s.cloud), std::move(rows)));
        }
        if (parts.empty())
            throw ParameterError("build_episode_loss: no support points for episode class " +
                                 std::to_string(e));
        const ad::NodeId class_feats = parts.size() == 1 ? parts[0] : g.concat_rows(parts);
        const auto part = proto::prototype_partition(g.value(class_feats), tcfg.n_p);
        const Tensor avg = proto::averaging_matrix(part, g.value(class_feats).rows());
        proto_parts.push_back(g.matmul(g.constant(avg), class_feats));
        proto_class.insert(proto_class.end(), part.anchors.size(), e);
    }
    const ad::NodeId protos =
        proto_parts.size() == 1 ? proto_parts[0] : g.concat_rows(proto_parts);
    const Index num_protos = static_cast<Index>(proto_class.size());

    // Query features and their two label views: episode labels drive the
    // propagation loss, original corpus labels drive the center loss.
    std::vector<ad::NodeId> query_parts;
    std::vector<Index> truth;
    for (const auto& q : ep.query) {
        query_parts.push_back(feats.at(q.cloud));
        truth.insert(truth.end(), q.episode_labels.begin(), q.episode_labels.end());
        for (geom::Label l : corpus[static_cast<std::size_t>(q.cloud)].labels)
            out.query_global_labels.push_back(static_cast<Index>(l));
    }
    const ad::NodeId query_feats =
        query_parts.size() == 1 ? query_parts[0] : g.concat_rows(query_parts);
    const Index num_query_rows = g.value(query_feats).rows();

    const ad::NodeId all_nodes = g.concat_rows({protos, query_feats});
    Tensor y = Tensor::zeros({num_protos + num_query_rows, way + 1});
    for (Index p = 0; p < num_protos; ++p) y.at(p, proto_class[static_cast<std::size_t>(p)]) = 1.0;
    std::vector<Index> query_rows(static_cast<std::size_t>(num_query_rows));
    for (Index i = 0; i < num_query_rows; ++i)
        query_rows[static_cast<std::size_t>(i)] = num_protos + i;

    const LpaGraphOut lpa =
        lpa_loss_graph(g, all_nodes, y, query_rows, truth, tcfg.lpa_k, tcfg.alpha, tcfg.sigma);
    out.l_m = lpa.loss;
    out.sigma2 = lpa.sigma2;

    out.query_features = g.value(query_feats);
    proto::ensure_centers(centers, out.query_features, out.query_global_labels);
    out.l_c = proto::center_loss(g, query_feats, out.query_global_labels, centers);

    out.root = g.add(out.l_m, g.scale(out.l_c, tcfg.lambda));
    out.values.l_m = g.value(out.l_m).v[0];
    out.values.l_c = g.value(out.l_c).v[0];
    out.values.total = g.value(out.root).v[0] + out.values.l_reg;
    if (!std::isfinite(out.values.total))
        throw NumericError("build_episode_loss: loss is not finite");
    return out;
}

/// One fine-tuning step: build the episode loss, backpropagate, update the
/// trainable parameters with SGD and refresh the class centers.
inline LossBreakdown finetune_step(fen::ParamMap& params, proto::ClassCenters& centers,
                                   SgdMomentum& opt, const episodes::Episode& ep,
                                   const std::vector<geom::LabeledPointCloud>& corpus,
                                   const fen::ModelConfig& mcfg, const TrainConfig& tcfg,
                                   FeatureCache& cache) {
    EpisodeLoss loss = build_episode_loss(ep, corpus, params, centers, mcfg, tcfg, cache);
    loss.graph.backward(loss.root);

    std::map<std::string, Tensor> grads;
    for (const auto& [name, id] : loss.leaves.ids) grads.emplace(name, loss.graph.grad(id));
    clip_gradients(grads, tcfg.clip_norm);
    opt.step(params, grads);
    proto::update_centers(centers, loss.query_features, loss.query_global_labels);
    return loss.values;
}

}  // namespace pseg::train
