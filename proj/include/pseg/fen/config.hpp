#pragma once

#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "pseg/rng.hpp"
#include "pseg/tensor.hpp"

namespace pseg::fen {

/// Named parameter tensors. std::map keeps iteration order canonical for
/// checkpoints and optimizer sweeps.
using ParamMap = std::map<std::string, Tensor>;

struct ModelConfig {
    Index k_neighbors = 20;
    std::vector<Index> tnet_point_widths = {32, 64};
    std::vector<Index> tnet_post_widths = {32};
    std::vector<Index> edgeconv_widths = {64, 64, 64};
    Index attention_dk = 64;
    std::vector<Index> head_widths = {128, 64};
    double leaky_slope = 0.2;

    Index concat_width() const {
        return std::accumulate(edgeconv_widths.begin(), edgeconv_widths.end(), Index{0});
    }
    /// Width after appending the broadcast global max-pooled feature.
    Index attention_width() const { return 2 * concat_width(); }
    Index feature_dim() const { return head_widths.back(); }

    void validate() const {
        if (k_neighbors < 1) throw ParameterError("k_neighbors must be >= 1");
        if (tnet_point_widths.empty() || tnet_post_widths.empty() || edgeconv_widths.empty() ||
            head_widths.empty())
            throw ParameterError("all layer width lists must be non-empty");
        if (attention_dk < 1) throw ParameterError("attention_dk must be >= 1");
        for (Index w : tnet_point_widths)
            if (w < 1) throw ParameterError("tnet width must be positive");
        for (Index w : edgeconv_widths)
            if (w < 1) throw ParameterError("edgeconv width must be positive");
        for (Index w : head_widths)
            if (w < 1) throw ParameterError("head width must be positive");
    }
};

namespace detail {

inline Tensor gaussian_init(Index rows, Index cols, double stddev, std::uint64_t seed) {
    Tensor t({rows, cols});
    Rng rng(seed);
    for (double& x : t.v) x = stddev * rng.normal();
    return t;
}

}  // namespace detail

/// Layer shapes for the shared feature extractor. Each weight is stored as
/// (out x in) and applied as x * W^T + b.
inline ParamMap init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamMap p;
    auto add_linear = [&](const std::string& name, Index out, Index in) {
        const double std = std::sqrt(2.0 / static_cast<double>(in));
        p[name + ".w"] = detail::gaussian_init(out, in, std, sub_seed(seed, "init." + name + ".w"));
        p[name + ".b"] = Tensor({1, out});
    };

    Index in = 3;
    for (std::size_t i = 0; i < cfg.tnet_point_widths.size(); ++i) {
        add_linear("tnet.point" + std::to_string(i), cfg.tnet_point_widths[i], in);
        in = cfg.tnet_point_widths[i];
    }
    for (std::size_t i = 0; i < cfg.tnet_post_widths.size(); ++i) {
        add_linear("tnet.post" + std::to_string(i), cfg.tnet_post_widths[i], in);
        in = cfg.tnet_post_widths[i];
    }
    // Zero weights plus identity bias force A = I at initialization.
    p["tnet.out.w"] = Tensor({9, in});
    p["tnet.out.b"] = Tensor::row({1, 0, 0, 0, 1, 0, 0, 0, 1});

    in = 6;
    for (std::size_t i = 0; i < cfg.edgeconv_widths.size(); ++i) {
        const Index out = cfg.edgeconv_widths[i];
        const std::string name = "ec" + std::to_string(i);
        const double std = std::sqrt(2.0 / static_cast<double>(in));
        p[name + ".theta"] =
            detail::gaussian_init(out, in, std, sub_seed(seed, "init." + name + ".theta"));
        p[name + ".phi"] =
            detail::gaussian_init(out, in, std, sub_seed(seed, "init." + name + ".phi"));
        p[name + ".b"] = Tensor({1, out});
        in = out;
    }

    const Index aw = cfg.attention_width();
    const double astd = 1.0 / std::sqrt(static_cast<double>(aw));
    p["attn.wq"] = detail::gaussian_init(cfg.attention_dk, aw, astd, sub_seed(seed, "init.attn.wq"));
    p["attn.wk"] = detail::gaussian_init(cfg.attention_dk, aw, astd, sub_seed(seed, "init.attn.wk"));
    p["attn.wv"] = detail::gaussian_init(aw, aw, astd, sub_seed(seed, "init.attn.wv"));

    in = aw;
    for (std::size_t i = 0; i < cfg.head_widths.size(); ++i) {
        add_linear("head.l" + std::to_string(i), cfg.head_widths[i], in);
        in = cfg.head_widths[i];
    }
    return p;
}

/// Names updated during fine-tuning; everything else stays frozen.
inline std::set<std::string> unfrozen_names(const ParamMap& params, bool include_attention) {
    std::set<std::string> out;
    for (const auto& [name, t] : params) {
        if (name.rfind("head.", 0) == 0) out.insert(name);
        if (include_attention && name.rfind("attn.", 0) == 0) out.insert(name);
    }
    return out;
}

}  // namespace pseg::fen
