#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pseg/ad/graph.hpp"
#include "pseg/common.hpp"
#include "pseg/episodes/sampler.hpp"
#include "pseg/fen/checkpoint.hpp"
#include "pseg/fen/config.hpp"
#include "pseg/fen/network.hpp"
#include "pseg/geom/cloud_ops.hpp"
#include "pseg/geom/point_cloud.hpp"
#include "pseg/proto/centers.hpp"
#include "pseg/rng.hpp"
#include "pseg/tensor.hpp"
#include "pseg/train/config.hpp"
#include "pseg/train/episode_loss.hpp"
#include "pseg/train/optimizer.hpp"

namespace pseg::train {

struct TrainLogRow {
    std::uint64_t iter = 0;
    double l_m = 0.0;
    double l_c = 0.0;
    double l_reg = 0.0;
    double total = 0.0;
};

struct TrainResult {
    fen::Checkpoint checkpoint;
    std::vector<TrainLogRow> log;
};

/// Writes the loss log as CSV with enough digits to round-trip doubles.
inline void write_loss_log(const std::filesystem::path& path,
                           const std::vector<TrainLogRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write loss log: " + path.string());
    out << "iter,l_m,l_c,l_reg,total\n";
    char buf[512];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g\n",
                      static_cast<unsigned long long>(r.iter), r.l_m, r.l_c, r.l_reg, r.total);
        out << buf;
    }
    if (!out) throw IoError("failed while writing loss log: " + path.string());
}

/// Bundles parameters, optimizer state and class centers into one snapshot.
/// Velocity tensors are stored under a "momentum." prefix, centers under
/// "centers.data" and "centers.seen".
inline fen::Checkpoint make_checkpoint(std::uint64_t iteration, const fen::ParamMap& params,
                                       const fen::ParamMap& velocity,
                                       const proto::ClassCenters* centers) {
    fen::Checkpoint ckpt;
    ckpt.iteration = iteration;
    for (const auto& [name, t] : params) ckpt.tensors.emplace(name, t);
    for (const auto& [name, t] : velocity) ckpt.tensors.emplace("momentum." + name, t);
    if (centers != nullptr) {
        ckpt.tensors.emplace("centers.data", centers->data);
        Tensor seen({1, static_cast<Index>(centers->seen.size())});
        for (std::size_t i = 0; i < centers->seen.size(); ++i)
            seen.v[i] = centers->seen[i] != 0 ? 1.0 : 0.0;
        ckpt.tensors.emplace("centers.seen", std::move(seen));
    }
    return ckpt;
}

/// Inverse of make_checkpoint. Pass centers as null when the snapshot is not
/// expected to carry any (for example pretraining checkpoints).
inline void split_checkpoint(const fen::Checkpoint& ckpt, fen::ParamMap& params,
                             fen::ParamMap& velocity, proto::ClassCenters* centers) {
    params.clear();
    velocity.clear();
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.rfind("momentum.", 0) == 0) {
            velocity.emplace(name.substr(9), t);
        } else if (name == "centers.data") {
            if (centers == nullptr) continue;
            if (!centers->data.same_shape(t))
                throw ShapeError("checkpoint centers do not match the model dimensions");
            centers->data = t;
        } else if (name == "centers.seen") {
            if (centers == nullptr) continue;
            if (t.numel() != static_cast<Index>(centers->seen.size()))
                throw ShapeError("checkpoint center flags do not match the class count");
            for (std::size_t i = 0; i < centers->seen.size(); ++i)
                centers->seen[i] = t.v[i] != 0.0 ? 1 : 0;
        } else {
            params.emplace(name, t);
        }
    }
}

namespace detail {

inline std::vector<Index> masked_labels(const geom::LabeledPointCloud& cloud,
                                        const std::set<geom::Label>& mask_to_background) {
    std::vector<Index> out;
    out.reserve(cloud.labels.size());
    for (geom::Label l : cloud.labels)
        out.push_back(mask_to_background.count(l) != 0 ? 0 : static_cast<Index>(l));
    return out;
}

inline std::filesystem::path checkpoint_name(const std::filesystem::path& dir,
                                             std::uint64_t iteration) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "checkpoint_%06llu.bin",
                  static_cast<unsigned long long>(iteration));
    return dir / buf;
}

}  // namespace detail

/// One pretraining step over a batch of clouds: features from the full
/// network feed a linear per-point classifier, and the loss is the mean
/// cross entropy plus the mean transform regularizer. Classes listed in
/// mask_to_background are relabeled as background so held-out folds leak
/// nothing into the backbone.
inline LossBreakdown pretrain_step(fen::ParamMap& params, SgdMomentum& opt,
                                   const std::vector<Index>& batch,
                                   const std::vector<geom::LabeledPointCloud>& corpus,
                                   const std::set<geom::Label>& mask_to_background,
                                   const fen::ModelConfig& mcfg, double clip_norm = 5.0) {
    if (batch.empty()) throw ParameterError("pretrain_step: empty batch");
    ad::Graph g;
    std::set<std::string> all_names;
    for (const auto& [name, t] : params) all_names.insert(name);
    const fen::ParamNodes p = fen::make_param_nodes(g, params, all_names);

    ad::NodeId lm_sum = -1;
    ad::NodeId reg_sum = -1;
    for (Index ci : batch) {
        if (ci < 0 || ci >= static_cast<Index>(corpus.size()))
            throw ParameterError("pretrain_step: cloud index out of range");
        const auto& cloud = corpus[static_cast<std::size_t>(ci)];
        const ad::NodeId coords = g.constant(geom::cloud_coords(cloud.cloud));
        const ad::NodeId normals = g.constant(geom::cloud_normals(cloud.cloud));
        const fen::ExtractorOut ext = fen::extract_features(g, coords, normals, p, mcfg);
        const ad::NodeId logits =
            g.add_rowvec(g.matmul(ext.features, g.transpose(p.at("clf.w"))), p.at("clf.b"));
        const ad::NodeId nll = g.nll_rows(g.softmax_rows(logits),
                                          detail::masked_labels(cloud, mask_to_background));
        const ad::NodeId reg = fen::reg_loss(g, ext.a_hat);
        lm_sum = lm_sum < 0 ? nll : g.add(lm_sum, nll);
        reg_sum = reg_sum < 0 ? reg : g.add(reg_sum, reg);
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const ad::NodeId l_m = g.scale(lm_sum, inv_b);
    const ad::NodeId l_reg = g.scale(reg_sum, inv_b);
    const ad::NodeId root = g.add(l_m, l_reg);
    if (!g.value(root).all_finite()) throw NumericError("pretrain_step: loss is not finite");

    g.backward(root);
    std::map<std::string, Tensor> grads;
    for (const auto& [name, id] : p.ids) grads.emplace(name, g.grad(id));
    clip_gradients(grads, clip_norm);
    opt.step(params, grads);
    return {g.value(l_m).v[0], 0.0, g.value(l_reg).v[0], g.value(root).v[0]};
}

/// Pretrains the feature network with a disposable linear classifier on top.
/// The returned checkpoint carries the network, the classifier and the
/// optimizer state.
inline TrainResult run_pretraining(const std::vector<geom::LabeledPointCloud>& corpus,
                                   const std::set<geom::Label>& mask_to_background,
                                   const fen::ModelConfig& mcfg, const TrainConfig& tcfg) {
    mcfg.validate();
    tcfg.validate();
    if (corpus.empty()) throw ParameterError("run_pretraining: empty corpus");

    fen::ParamMap params = fen::init_params(mcfg, sub_seed(tcfg.seed, "pretrain.init"));
    const Index d = mcfg.feature_dim();
    params.emplace("clf.w",
                   fen::detail::gaussian_init(geom::kNumClasses, d, 1.0 / std::sqrt(double(d)),
                                              sub_seed(tcfg.seed, "pretrain.init.clf")));
    params.emplace("clf.b", Tensor::zeros({1, geom::kNumClasses}));

    SgdMomentum opt(tcfg.lr, tcfg.momentum);
    TrainResult res;
    for (Index it = 0; it < tcfg.pretrain_iterations; ++it) {
        Rng rng(sub_seed(tcfg.seed, "pretrain.batch", static_cast<std::uint64_t>(it)));
        const std::size_t take =
            std::min<std::size_t>(static_cast<std::size_t>(tcfg.batch_size), corpus.size());
        std::vector<Index> batch;
        for (std::size_t s : rng.sample_without_replacement(corpus.size(), take))
            batch.push_back(static_cast<Index>(s));
        const LossBreakdown b =
            pretrain_step(params, opt, batch, corpus, mask_to_background, mcfg, tcfg.clip_norm);
        res.log.push_back({static_cast<std::uint64_t>(it), b.l_m, b.l_c, b.l_reg, b.total});
    }
    res.checkpoint =
        make_checkpoint(static_cast<std::uint64_t>(tcfg.pretrain_iterations), params,
                        opt.velocity(), nullptr);
    return res;
}

/// Episodic fine-tuning on the given classes, starting from a pretrained
/// network. The disposable pretraining classifier is dropped and the head
/// layers restart from fresh random weights; everything below the trainable
/// boundary stays frozen. Periodic snapshots land in checkpoint_dir when it
/// is non-empty, and a final snapshot is always returned. Passing resume
/// continues an interrupted run and replays it exactly.
inline TrainResult run_training(const std::vector<geom::LabeledPointCloud>& corpus,
                                const std::vector<geom::Label>& active_classes,
                                const fen::ParamMap& backbone, const fen::ModelConfig& mcfg,
                                const TrainConfig& tcfg,
                                const std::filesystem::path& checkpoint_dir = {},
                                const fen::Checkpoint* resume = nullptr) {
    mcfg.validate();
    tcfg.validate();

    fen::ParamMap params;
    SgdMomentum opt(tcfg.lr, tcfg.momentum);
    proto::ClassCenters centers(geom::kNumClasses, mcfg.feature_dim(), tcfg.center_rate);
    std::uint64_t start = 0;

    if (resume != nullptr) {
        split_checkpoint(*resume, params, opt.velocity(), &centers);
        start = resume->iteration;
    } else {
        for (const auto& [name, t] : backbone)
            if (name.rfind("clf.", 0) != 0) params.emplace(name, t);
        if (tcfg.reinit_head) {
            for (auto& [name, t] : params) {
                if (name.rfind("head.", 0) != 0) continue;
                if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".w") == 0) {
                    const double stddev = std::sqrt(2.0 / static_cast<double>(t.cols()));
                    t = fen::detail::gaussian_init(t.rows(), t.cols(), stddev,
                                                   sub_seed(tcfg.seed, "finetune.init." + name));
                } else {
                    t = Tensor::zeros(t.shape);
                }
            }
        }
    }

    if (!checkpoint_dir.empty()) std::filesystem::create_directories(checkpoint_dir);

    FeatureCache cache;
    TrainResult res;
    for (std::uint64_t it = start; it < static_cast<std::uint64_t>(tcfg.iterations); ++it) {
        const episodes::Episode ep =
            episodes::sample_episode(corpus, active_classes, tcfg.way, tcfg.shot,
                                     tcfg.num_queries, sub_seed(tcfg.seed, "episode", it));
        const LossBreakdown b =
            finetune_step(params, centers, opt, ep, corpus, mcfg, tcfg, cache);
        res.log.push_back({it, b.l_m, b.l_c, b.l_reg, b.total});
        const std::uint64_t done = it + 1;
        if (!checkpoint_dir.empty() && done % static_cast<std::uint64_t>(tcfg.checkpoint_every) == 0 &&
            done != static_cast<std::uint64_t>(tcfg.iterations)) {
            fen::save_checkpoint(detail::checkpoint_name(checkpoint_dir, done),
                                 make_checkpoint(done, params, opt.velocity(), &centers));
        }
    }

    res.checkpoint = make_checkpoint(static_cast<std::uint64_t>(tcfg.iterations), params,
                                     opt.velocity(), &centers);
    if (!checkpoint_dir.empty())
        fen::save_checkpoint(checkpoint_dir / "checkpoint_final.bin", res.checkpoint);
    return res;
}

}  // namespace pseg::train
