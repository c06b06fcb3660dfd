// pseg: command-line front end for the few-shot part-segmentation toolkit.
//
// Every subcommand reads a flat `key = value` config (file via --config,
// overridden by per-key flags), echoes the effective config into its output
// directory, and fails with a single `code: message` line on stderr. Partial
// outputs are removed when a command fails.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pseg/common.hpp"
#include "pseg/episodes/prepare.hpp"
#include "pseg/episodes/sampler.hpp"
#include "pseg/episodes/split.hpp"
#include "pseg/eval/confusion.hpp"
#include "pseg/eval/report.hpp"
#include "pseg/fen/checkpoint.hpp"
#include "pseg/fen/config.hpp"
#include "pseg/geom/ply_io.hpp"
#include "pseg/rng.hpp"
#include "pseg/synth/corpus.hpp"
#include "pseg/train/config.hpp"
#include "pseg/train/gradcheck.hpp"
#include "pseg/train/trainer.hpp"
#include "pseg/util/kvconfig.hpp"
#include "pseg/util/log.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using pseg::Index;
using pseg::util::KvConfig;

namespace {

// ---------------------------------------------------------------------------
// Config schemas. A key with a null fallback is optional (or required, when
// the handler insists); everything else is materialized into the effective
// config so the echoed file is complete and re-feedable.

struct KeySpec {
    const char* key;
    const char* fallback;  // nullptr: no default, omitted from the echo when unset
    const char* help;
};

const std::vector<KeySpec> kCommonKeys = {
    {"seed", "0", "master seed; all randomness derives from it"},
    {"threads", "1", "upper bound on worker threads (1 keeps runs bit-reproducible)"},
};

const std::vector<KeySpec> kModelKeys = {
    {"model.k", "20", "neighborhood size in the feature network"},
    {"model.tnet_point_widths", "32,64", "per-point widths of the transform net"},
    {"model.tnet_post_widths", "32", "post-pooling widths of the transform net"},
    {"model.edgeconv_widths", "64,64,64", "edge convolution output widths"},
    {"model.attention_dk", "64", "attention key/query dimension"},
    {"model.head_widths", "128,64", "segmentation head widths; last is the feature dim"},
    {"model.leaky_slope", "0.2", "negative slope of the leaky relu"},
};

const std::vector<KeySpec> kDataKeys = {
    {"data.points", "256", "points per cloud after subsampling and normalization"},
};

const std::vector<KeySpec> kEpisodeKeys = {
    {"episode.way", "2", "foreground classes per episode"},
    {"episode.shot", "1", "support clouds per class"},
    {"episode.num_queries", "1", "query clouds per episode"},
};

const std::vector<KeySpec> kPropagationKeys = {
    {"proto.n_p", "10", "prototypes per class"},
    {"lpa.k", "10", "neighbors in the propagation graph"},
    {"lpa.alpha", "0.99", "propagation mixing coefficient"},
    {"lpa.sigma", "0", "affinity bandwidth; values <= 0 pick it adaptively"},
};

const std::vector<KeySpec> kOptimizerKeys = {
    {"train.lr", "0.001", "learning rate"},
    {"train.momentum", "0.9", "momentum coefficient"},
    {"train.clip_norm", "5", "global gradient norm cap; 0 disables clipping"},
};

std::vector<KeySpec> concat_keys(std::initializer_list<std::vector<KeySpec>> groups) {
    std::vector<KeySpec> out;
    for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
    return out;
}

std::vector<KeySpec> schema_for(const std::string& command) {
    if (command == "synth")
        return concat_keys({kCommonKeys,
                            {{{"synth.specs", nullptr, "spec file; omit to generate random specs"},
                              {"synth.count", "8", "number of random specs when generating"},
                              {"synth.points", "2048", "points per generated cloud"},
                              {"synth.noise", "0", "surface noise sigma"},
                              {"synth.clouds_per_spec", "1", "clouds sampled per spec"}}}});
    if (command == "split")
        return concat_keys(
            {kCommonKeys, {{{"split.fold", "0", "which half of the classes is held out"}}}});
    if (command == "pretrain")
        return concat_keys(
            {kCommonKeys,
             kDataKeys,
             kModelKeys,
             kOptimizerKeys,
             {{{"pretrain.corpus", nullptr, "corpus directory (required)"},
               {"pretrain.split", nullptr, "split record; its test classes are masked"},
               {"train.batch_size", "16", "clouds per pretraining step"},
               {"train.pretrain_iterations", "2000", "number of pretraining steps"}}}});
    if (command == "train")
        return concat_keys(
            {kCommonKeys,
             kDataKeys,
             kModelKeys,
             kEpisodeKeys,
             kPropagationKeys,
             kOptimizerKeys,
             {{{"train.corpus", nullptr, "corpus directory (required)"},
               {"train.split", nullptr, "split record (required); trains on its train classes"},
               {"train.init", nullptr, "pretrained checkpoint to start from"},
               {"train.resume", nullptr, "checkpoint to resume an interrupted run from"},
               {"train.iterations", "1000", "number of fine-tuning episodes"},
               {"train.lambda", "0.9", "weight of the center loss"},
               {"train.center_rate", "0.5", "center update rate"},
               {"train.checkpoint_every", "250", "periodic checkpoint interval"},
               {"train.unfreeze_attention", "false", "also train the attention block"},
               {"train.reinit_head", "true", "re-initialize the head before fine-tuning"}}}});
    if (command == "segment")
        return concat_keys(
            {kCommonKeys,
             kDataKeys,
             kModelKeys,
             kEpisodeKeys,
             kPropagationKeys,
             {{{"segment.checkpoint", nullptr, "model checkpoint (required)"},
               {"segment.corpus", nullptr, "corpus directory (required)"},
               {"segment.episodes", nullptr, "episode manifest to replay"},
               {"segment.split", nullptr, "split record; episodes come from its test classes"},
               {"segment.count", "5", "episodes to generate when no manifest is given"}}}});
    if (command == "eval")
        return concat_keys(
            {kCommonKeys,
             kDataKeys,
             kModelKeys,
             kPropagationKeys,
             {{{"episode.way", "2", "foreground classes per episode"},
               {"episode.num_queries", "1", "query clouds per episode"},
               {"eval.corpus", nullptr, "corpus directory (required)"},
               {"eval.checkpoints", nullptr, "comma-separated checkpoints, one per run"},
               {"eval.split", nullptr, "split record; evaluates on its test classes"},
               {"eval.episodes", "100", "test episodes per run"},
               {"eval.shots", "1,3,5", "shot counts to report"},
               {"eval.predictions", nullptr, "segment output directory to re-score instead"}}}});
    if (command == "gradcheck") return kCommonKeys;
    throw pseg::ParameterError("unknown command: " + command);
}

KvConfig materialize(const KvConfig& given, const std::vector<KeySpec>& schema) {
    std::set<std::string> allowed;
    for (const auto& ks : schema) allowed.insert(ks.key);
    given.require_known(allowed);
    KvConfig out = given;
    for (const auto& ks : schema)
        if (ks.fallback != nullptr && !out.has(ks.key)) out.set(ks.key, ks.fallback);
    return out;
}

// ---------------------------------------------------------------------------
// Typed config readers.

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = text.find(',', start);
        const std::size_t end = comma == std::string::npos ? text.size() : comma;
        out.push_back(pseg::util::detail::trim(text.substr(start, end - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

std::vector<Index> index_list(const KvConfig& cfg, const std::string& key) {
    std::vector<Index> out;
    for (const std::string& part : split_list(cfg.require_string(key))) {
        char* end = nullptr;
        const long long v = std::strtoll(part.c_str(), &end, 10);
        if (part.empty() || end == nullptr || *end != '\0')
            throw pseg::ConfigError("config key " + key + ": expected integers, got '" + part +
                                    "'");
        out.push_back(static_cast<Index>(v));
    }
    return out;
}

pseg::fen::ModelConfig model_from(const KvConfig& cfg) {
    pseg::fen::ModelConfig m;
    m.k_neighbors = static_cast<Index>(cfg.get_i64("model.k", m.k_neighbors));
    m.tnet_point_widths = index_list(cfg, "model.tnet_point_widths");
    m.tnet_post_widths = index_list(cfg, "model.tnet_post_widths");
    m.edgeconv_widths = index_list(cfg, "model.edgeconv_widths");
    m.attention_dk = static_cast<Index>(cfg.get_i64("model.attention_dk", m.attention_dk));
    m.head_widths = index_list(cfg, "model.head_widths");
    m.leaky_slope = cfg.get_double("model.leaky_slope", m.leaky_slope);
    m.validate();
    return m;
}

pseg::lpa::PropagationConfig propagation_from(const KvConfig& cfg) {
    pseg::lpa::PropagationConfig p;
    p.k = static_cast<Index>(cfg.get_i64("lpa.k", p.k));
    p.alpha = cfg.get_double("lpa.alpha", p.alpha);
    p.sigma = cfg.get_double("lpa.sigma", p.sigma);
    return p;
}

int threads_from(const KvConfig& cfg) {
    const auto threads = cfg.get_i64("threads", 1);
    if (threads < 1) throw pseg::ConfigError("threads must be >= 1");
    return static_cast<int>(threads);
}

// ---------------------------------------------------------------------------
// Output directory with partial-result cleanup. The directory must be fresh
// (absent, or an existing empty directory); anything written into it is
// removed unless the command commits.

class OutputDir {
public:
    explicit OutputDir(const std::string& dir) : path_(dir) {
        if (dir.empty()) throw pseg::ConfigError("--out is required for this command");
        if (fs::exists(path_)) {
            if (!fs::is_directory(path_) || !fs::is_empty(path_))
                throw pseg::IoError("output directory exists and is not empty: " + dir);
        } else {
            std::error_code ec;
            fs::create_directories(path_, ec);
            if (ec) throw pseg::IoError("cannot create output directory: " + dir);
            created_ = true;
        }
    }

    OutputDir(const OutputDir&) = delete;
    OutputDir& operator=(const OutputDir&) = delete;

    ~OutputDir() {
        if (committed_) return;
        std::error_code ec;
        if (created_) {
            fs::remove_all(path_, ec);
        } else {
            for (const auto& entry : fs::directory_iterator(path_, ec))
                fs::remove_all(entry.path(), ec);
        }
    }

    const fs::path& path() const { return path_; }
    void commit() { committed_ = true; }

private:
    fs::path path_;
    bool created_ = false;
    bool committed_ = false;
};

void echo_config(const OutputDir& out, const KvConfig& cfg) {
    std::ofstream f(out.path() / "config.txt");
    if (!f) throw pseg::IoError("cannot write config echo in " + out.path().string());
    f << cfg.render();
    if (!f) throw pseg::IoError("write failed: " + (out.path() / "config.txt").string());
}

// ---------------------------------------------------------------------------
// Shared loading helpers.

std::uint64_t corpus_seed(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw pseg::IoError("cannot open manifest.json in " + dir.string());
    try {
        json m;
        in >> m;
        return m.at("seed").get<std::uint64_t>();
    } catch (const std::exception& e) {
        throw pseg::IoError("manifest.json: " + std::string(e.what()));
    }
}

/// Loads a corpus directory and applies the deterministic preprocessing.
/// The subsample seed derives from the corpus seed, not the command seed,
/// so every stage sees identical prepared clouds.
std::vector<pseg::geom::LabeledPointCloud> load_prepared(const fs::path& dir, Index points) {
    if (points < 1) throw pseg::ConfigError("data.points must be >= 1");
    const std::uint64_t seed = corpus_seed(dir);
    auto prepared = pseg::episodes::prepare_corpus(
        pseg::synth::load_corpus(dir), static_cast<std::size_t>(points),
        pseg::sub_seed(seed, "prepare"));
    pseg::util::log_info("loaded " + std::to_string(prepared.size()) + " clouds from " +
                         dir.string());
    return prepared;
}

pseg::episodes::ClassSplit read_split(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw pseg::IoError("cannot open split record: " + path.string());
    try {
        json j;
        in >> j;
        return pseg::episodes::split_from_json(j);
    } catch (const pseg::Error&) {
        throw;
    } catch (const std::exception& e) {
        throw pseg::IoError("split record " + path.string() + ": " + std::string(e.what()));
    }
}

/// Model tensors from a checkpoint, without optimizer or center state.
pseg::fen::ParamMap model_params(const fs::path& path) {
    pseg::fen::Checkpoint ckpt = pseg::fen::load_checkpoint(path);
    pseg::fen::ParamMap out;
    for (auto& [name, tensor] : ckpt.tensors) {
        if (name.rfind("momentum.", 0) == 0 || name.rfind("centers.", 0) == 0 ||
            name.rfind("clf.", 0) == 0)
            continue;
        out.emplace(name, std::move(tensor));
    }
    if (out.empty())
        throw pseg::ConfigError("checkpoint has no model parameters: " + path.string());
    return out;
}

std::vector<pseg::episodes::Episode> read_episode_manifest(
    const fs::path& path, const std::vector<pseg::geom::LabeledPointCloud>& corpus) {
    std::ifstream in(path);
    if (!in) throw pseg::IoError("cannot open episode manifest: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw pseg::IoError("episode manifest " + path.string() + ": " + std::string(e.what()));
    }
    if (!j.contains("episodes") || !j["episodes"].is_array())
        throw pseg::ConfigError("episode manifest lacks an 'episodes' array: " + path.string());
    std::vector<pseg::episodes::Episode> out;
    for (const auto& je : j["episodes"]) out.push_back(pseg::episodes::episode_from_json(je, corpus));
    return out;
}

void write_episode_manifest(const fs::path& path,
                            const std::vector<pseg::episodes::Episode>& eps) {
    json j;
    j["episodes"] = json::array();
    for (const auto& ep : eps) j["episodes"].push_back(pseg::episodes::episode_to_json(ep));
    std::ofstream out(path);
    if (!out) throw pseg::IoError("cannot write episode manifest: " + path.string());
    out << j.dump(2) << "\n";
}

std::string ply_name(std::size_t episode, std::size_t query) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "episode_%04zu_query_%02zu.ply", episode, query);
    return buf;
}

void write_iou_csv(const fs::path& path, const std::vector<double>& ious) {
    std::ofstream out(path);
    if (!out) throw pseg::IoError("cannot write iou csv: " + path.string());
    out << "episode,miou\n";
    char buf[64];
    for (std::size_t i = 0; i < ious.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, ious[i]);
        out << buf;
    }
}

double episode_miou(const pseg::eval::ConfusionMatrix& conf) {
    try {
        return pseg::eval::miou(conf).mean;
    } catch (const pseg::NumericError&) {
        return std::nan("");
    }
}

// ---------------------------------------------------------------------------
// Command handlers.

int cmd_synth(const KvConfig& cfg, const std::string& out_dir) {
    const std::uint64_t seed = cfg.get_u64("seed", 0);
    const auto clouds_per_spec = cfg.get_i64("synth.clouds_per_spec", 1);
    if (clouds_per_spec < 1) throw pseg::ConfigError("synth.clouds_per_spec must be >= 1");

    std::vector<pseg::synth::WorkpieceSpec> specs;
    if (cfg.has("synth.specs")) {
        specs = pseg::synth::read_specs(cfg.require_string("synth.specs"));
    } else {
        specs = pseg::synth::random_specs(static_cast<int>(cfg.get_i64("synth.count", 8)), seed,
                                          static_cast<int>(cfg.get_i64("synth.points", 2048)),
                                          cfg.get_double("synth.noise", 0.0));
    }

    OutputDir out(out_dir);
    pseg::synth::write_corpus(out.path(), specs, static_cast<int>(clouds_per_spec), seed);
    echo_config(out, cfg);
    out.commit();
    pseg::util::log_info("wrote " + std::to_string(specs.size() * clouds_per_spec) +
                         " clouds to " + out.path().string());
    return 0;
}

int cmd_split(const KvConfig& cfg, const std::string& out_dir) {
    const auto fold = cfg.get_i64("split.fold", 0);
    const auto split = pseg::episodes::split_classes(pseg::geom::default_alphabet(),
                                                     static_cast<int>(fold),
                                                     cfg.get_u64("seed", 0));
    OutputDir out(out_dir);
    std::ofstream f(out.path() / "split.json");
    if (!f) throw pseg::IoError("cannot write split.json in " + out.path().string());
    f << pseg::episodes::to_json(split).dump(2) << "\n";
    echo_config(out, cfg);
    out.commit();
    pseg::util::log_info("wrote split.json (fold " + std::to_string(fold) + ")");
    return 0;
}

int cmd_pretrain(const KvConfig& cfg, const std::string& out_dir) {
    const auto mcfg = model_from(cfg);
    pseg::train::TrainConfig tcfg;
    tcfg.seed = cfg.get_u64("seed", 0);
    tcfg.lr = cfg.get_double("train.lr", tcfg.lr);
    tcfg.momentum = cfg.get_double("train.momentum", tcfg.momentum);
    tcfg.clip_norm = cfg.get_double("train.clip_norm", tcfg.clip_norm);
    tcfg.batch_size = static_cast<Index>(cfg.get_i64("train.batch_size", tcfg.batch_size));
    tcfg.pretrain_iterations =
        cfg.get_u64("train.pretrain_iterations", tcfg.pretrain_iterations);

    const auto corpus = load_prepared(cfg.require_string("pretrain.corpus"),
                                      static_cast<Index>(cfg.get_i64("data.points", 256)));
    std::set<pseg::geom::Label> mask;
    if (cfg.has("pretrain.split")) {
        const auto split = read_split(cfg.require_string("pretrain.split"));
        mask.insert(split.test_classes.begin(), split.test_classes.end());
    }

    OutputDir out(out_dir);
    const auto result = pseg::train::run_pretraining(corpus, mask, mcfg, tcfg);
    pseg::fen::save_checkpoint(out.path() / "checkpoint_final.bin", result.checkpoint);
    pseg::train::write_loss_log(out.path() / "loss.csv", result.log);
    echo_config(out, cfg);
    out.commit();
    pseg::util::log_info("pretrained for " + std::to_string(result.log.size()) + " steps");
    return 0;
}

int cmd_train(const KvConfig& cfg, const std::string& out_dir) {
    const auto mcfg = model_from(cfg);
    const auto pcfg = propagation_from(cfg);

    pseg::train::TrainConfig tcfg;
    tcfg.seed = cfg.get_u64("seed", 0);
    tcfg.iterations = cfg.get_u64("train.iterations", tcfg.iterations);
    tcfg.lambda = cfg.get_double("train.lambda", tcfg.lambda);
    tcfg.lr = cfg.get_double("train.lr", tcfg.lr);
    tcfg.momentum = cfg.get_double("train.momentum", tcfg.momentum);
    tcfg.clip_norm = cfg.get_double("train.clip_norm", tcfg.clip_norm);
    tcfg.center_rate = cfg.get_double("train.center_rate", tcfg.center_rate);
    tcfg.checkpoint_every = cfg.get_u64("train.checkpoint_every", tcfg.checkpoint_every);
    tcfg.unfreeze_attention = cfg.get_bool("train.unfreeze_attention", false);
    tcfg.reinit_head = cfg.get_bool("train.reinit_head", true);
    tcfg.way = static_cast<Index>(cfg.get_i64("episode.way", tcfg.way));
    tcfg.shot = static_cast<Index>(cfg.get_i64("episode.shot", tcfg.shot));
    tcfg.num_queries = static_cast<Index>(cfg.get_i64("episode.num_queries", tcfg.num_queries));
    tcfg.n_p = static_cast<Index>(cfg.get_i64("proto.n_p", tcfg.n_p));
    tcfg.lpa_k = pcfg.k;
    tcfg.alpha = pcfg.alpha;
    tcfg.sigma = pcfg.sigma;

    const auto corpus = load_prepared(cfg.require_string("train.corpus"),
                                      static_cast<Index>(cfg.get_i64("data.points", 256)));
    const auto split = read_split(cfg.require_string("train.split"));

    pseg::fen::ParamMap backbone;
    if (cfg.has("train.init")) {
        backbone = model_params(cfg.require_string("train.init"));
    } else {
        backbone = pseg::fen::init_params(mcfg, pseg::sub_seed(tcfg.seed, "init"));
        pseg::util::log_info("no train.init given; starting from random parameters");
    }

    pseg::fen::Checkpoint resume;
    const bool resuming = cfg.has("train.resume");
    if (resuming) resume = pseg::fen::load_checkpoint(cfg.require_string("train.resume"));

    OutputDir out(out_dir);
    const auto result =
        pseg::train::run_training(corpus, split.train_classes, backbone, mcfg, tcfg, out.path(),
                                  resuming ? &resume : nullptr);
    pseg::train::write_loss_log(out.path() / "loss.csv", result.log);
    echo_config(out, cfg);
    out.commit();
    pseg::util::log_info("fine-tuned to iteration " +
                         std::to_string(result.checkpoint.iteration));
    return 0;
}

int cmd_segment(const KvConfig& cfg, const std::string& out_dir) {
    const auto mcfg = model_from(cfg);
    const auto pcfg = propagation_from(cfg);
    const auto n_p = static_cast<Index>(cfg.get_i64("proto.n_p", 10));
    const std::uint64_t seed = cfg.get_u64("seed", 0);

    const auto corpus = load_prepared(cfg.require_string("segment.corpus"),
                                      static_cast<Index>(cfg.get_i64("data.points", 256)));
    const auto params = model_params(cfg.require_string("segment.checkpoint"));

    std::vector<pseg::episodes::Episode> eps;
    if (cfg.has("segment.episodes")) {
        eps = read_episode_manifest(cfg.require_string("segment.episodes"), corpus);
    } else {
        if (!cfg.has("segment.split"))
            throw pseg::ConfigError("segment needs segment.episodes or segment.split");
        const auto split = read_split(cfg.require_string("segment.split"));
        eps = pseg::episodes::episode_stream(
            corpus, split.test_classes, static_cast<Index>(cfg.get_i64("episode.way", 2)),
            static_cast<Index>(cfg.get_i64("episode.shot", 1)),
            static_cast<Index>(cfg.get_i64("episode.num_queries", 1)),
            static_cast<Index>(cfg.get_i64("segment.count", 5)), seed);
    }
    if (eps.empty()) throw pseg::ParameterError("segment: empty episode list");

    OutputDir out(out_dir);
    write_episode_manifest(out.path() / "episodes.json", eps);

    pseg::eval::PlainFeatureCache cache;
    std::vector<double> ious;
    for (std::size_t e = 0; e < eps.size(); ++e) {
        const auto& ep = eps[e];
        const auto pred = pseg::eval::predict_episode(ep, corpus, params, mcfg, n_p, pcfg, cache);

        pseg::eval::ConfusionMatrix conf(pseg::geom::kNumClasses);
        pseg::eval::accumulate_episode(conf, ep, pred);
        ious.push_back(episode_miou(conf));

        for (std::size_t q = 0; q < ep.query.size(); ++q) {
            pseg::geom::LabeledPointCloud labeled =
                corpus[static_cast<std::size_t>(ep.query[q].cloud)];
            for (std::size_t i = 0; i < pred.labels[q].size(); ++i)
                labeled.labels[i] = static_cast<pseg::geom::Label>(
                    pseg::eval::episode_to_global(pred.labels[q][i], ep.chosen));
            pseg::geom::write_ply(out.path() / ply_name(e, q), labeled);
        }
        pseg::util::log_debug("episode " + std::to_string(e) + " done");
    }
    write_iou_csv(out.path() / "iou.csv", ious);
    echo_config(out, cfg);
    out.commit();
    pseg::util::log_info("segmented " + std::to_string(eps.size()) + " episodes");
    return 0;
}

int eval_predictions(const KvConfig& cfg, const fs::path& pred_dir, OutputDir& out) {
    const auto corpus = load_prepared(cfg.require_string("eval.corpus"),
                                      static_cast<Index>(cfg.get_i64("data.points", 256)));
    const auto eps = read_episode_manifest(pred_dir / "episodes.json", corpus);

    pseg::eval::ConfusionMatrix pooled(pseg::geom::kNumClasses);
    std::vector<double> ious;
    for (std::size_t e = 0; e < eps.size(); ++e) {
        const auto& ep = eps[e];
        pseg::eval::ConfusionMatrix conf(pseg::geom::kNumClasses);
        for (std::size_t q = 0; q < ep.query.size(); ++q) {
            const auto labeled = pseg::geom::read_ply(pred_dir / ply_name(e, q));
            const auto& truth = ep.query[q].episode_labels;
            if (labeled.labels.size() != truth.size())
                throw pseg::ConfigError("prediction " + ply_name(e, q) +
                                        " does not match the corpus cloud size");
            for (std::size_t i = 0; i < truth.size(); ++i)
                conf.add(pseg::eval::episode_to_global(truth[i], ep.chosen),
                         static_cast<Index>(labeled.labels[i]), 1);
        }
        ious.push_back(episode_miou(conf));
        pooled.merge(conf);
    }

    write_iou_csv(out.path() / "iou.csv", ious);
    json report;
    report["episodes"] = eps.size();
    report["pooled_miou"] = episode_miou(pooled);
    std::ofstream f(out.path() / "report.json");
    if (!f) throw pseg::IoError("cannot write report.json in " + out.path().string());
    f << report.dump(2) << "\n";
    echo_config(out, cfg);
    out.commit();
    pseg::util::log_info("re-scored " + std::to_string(eps.size()) + " episodes from " +
                         pred_dir.string());
    return 0;
}

int cmd_eval(const KvConfig& cfg, const std::string& out_dir) {
    OutputDir out(out_dir);
    if (cfg.has("eval.predictions"))
        return eval_predictions(cfg, cfg.require_string("eval.predictions"), out);

    const auto mcfg = model_from(cfg);
    const auto pcfg = propagation_from(cfg);
    const auto n_p = static_cast<Index>(cfg.get_i64("proto.n_p", 10));
    const std::uint64_t seed = cfg.get_u64("seed", 0);
    const auto way = static_cast<Index>(cfg.get_i64("episode.way", 2));
    const auto num_queries = static_cast<Index>(cfg.get_i64("episode.num_queries", 1));
    const auto num_episodes = static_cast<Index>(cfg.get_i64("eval.episodes", 100));

    const auto corpus = load_prepared(cfg.require_string("eval.corpus"),
                                      static_cast<Index>(cfg.get_i64("data.points", 256)));
    const auto split = read_split(cfg.require_string("eval.split"));

    std::vector<pseg::fen::ParamMap> runs;
    for (const std::string& path : split_list(cfg.require_string("eval.checkpoints"))) {
        if (path.empty()) throw pseg::ConfigError("eval.checkpoints contains an empty entry");
        runs.push_back(model_params(path));
    }
    if (runs.empty()) throw pseg::ConfigError("eval.checkpoints is empty");

    const auto alphabet = pseg::geom::default_alphabet();
    std::vector<pseg::eval::SettingReport> reports;
    for (const Index shot : index_list(cfg, "eval.shots")) {
        std::vector<pseg::eval::RunScore> scores;
        for (std::size_t r = 0; r < runs.size(); ++r) {
            scores.push_back(pseg::eval::evaluate_checkpoint(
                runs[r], corpus, split.test_classes, mcfg, n_p, pcfg, way, shot, num_queries,
                num_episodes, pseg::sub_seed(seed, "eval.run", r)));
            pseg::util::log_info(std::to_string(shot) + "-shot run " + std::to_string(r) +
                                 ": miou " + std::to_string(scores.back().miou));
        }
        reports.push_back(pseg::eval::summarize_setting(
            std::to_string(way) + "-way " + std::to_string(shot) + "-shot", scores, alphabet));
    }

    std::ofstream fj(out.path() / "report.json");
    if (!fj) throw pseg::IoError("cannot write report.json in " + out.path().string());
    fj << pseg::eval::report_to_json(reports).dump(2) << "\n";
    const std::string table = pseg::eval::report_table(reports);
    std::ofstream ft(out.path() / "report.txt");
    if (!ft) throw pseg::IoError("cannot write report.txt in " + out.path().string());
    ft << table;
    echo_config(out, cfg);
    out.commit();
    std::fputs(table.c_str(), stdout);
    return 0;
}

int cmd_gradcheck(const KvConfig& cfg) {
    const auto report = pseg::train::run_gradcheck(cfg.get_u64("seed", 0));
    for (const auto& e : report.entries)
        std::printf("%-24s %.3e\n", e.name.c_str(), e.max_rel_err);
    const double tolerance = 1e-4;
    const bool ok = report.passed(tolerance);
    std::printf("max_rel_err %.3e tolerance %.0e %s\n", report.worst(), tolerance,
                ok ? "pass" : "FAIL");
    return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct CommandState {
    std::string config_path;
    std::string out_dir;
    std::map<std::string, std::string> overrides;
};

int dispatch(const std::string& name, const KvConfig& cfg, const std::string& out_dir) {
    (void)threads_from(cfg);  // validated; all pipelines currently run single-threaded
    if (name == "synth") return cmd_synth(cfg, out_dir);
    if (name == "split") return cmd_split(cfg, out_dir);
    if (name == "pretrain") return cmd_pretrain(cfg, out_dir);
    if (name == "train") return cmd_train(cfg, out_dir);
    if (name == "segment") return cmd_segment(cfg, out_dir);
    if (name == "eval") return cmd_eval(cfg, out_dir);
    if (name == "gradcheck") return cmd_gradcheck(cfg);
    throw pseg::ParameterError("unknown command: " + name);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pseg: few-shot 3D point-cloud part segmentation toolkit"};
    app.require_subcommand(1);

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"synth", "generate a synthetic labeled workpiece corpus"},
        {"split", "write a train/test class split record"},
        {"pretrain", "pretrain the feature network on a corpus"},
        {"train", "episodically fine-tune a checkpoint"},
        {"segment", "segment episode queries and write labeled clouds"},
        {"eval", "evaluate checkpoints and write a report"},
        {"gradcheck", "verify gradients against finite differences"},
    };

    std::map<std::string, std::shared_ptr<CommandState>> states;
    for (const auto& [name, description] : commands) {
        auto* sub = app.add_subcommand(name, description);
        auto state = std::make_shared<CommandState>();
        states[name] = state;
        sub->add_option("--config", state->config_path, "key = value config file");
        if (name != "gradcheck")
            sub->add_option("--out", state->out_dir, "output directory (must be fresh)");
        for (const KeySpec& ks : schema_for(name)) {
            sub->add_option_function<std::string>(
                "--" + std::string(ks.key),
                [key = std::string(ks.key), state](const std::string& v) {
                    state->overrides[key] = v;
                },
                ks.help);
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "usage_error: %s\n", e.what());
        return 2;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    const auto& state = *states.at(name);
    try {
        KvConfig cfg;
        if (!state.config_path.empty()) cfg = KvConfig::parse_file(state.config_path);
        for (const auto& [key, value] : state.overrides) cfg.set(key, value);
        const KvConfig effective = materialize(cfg, schema_for(name));
        return dispatch(name, effective, state.out_dir);
    } catch (const pseg::Error& e) {
        std::fprintf(stderr, "%s: %s\n", e.code().c_str(), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal_error: %s\n", e.what());
        return 1;
    }
}
