#pragma once

#include <cstdint>

#include "pseg/common.hpp"
#include "pseg/tensor.hpp"

namespace pseg::train {

/// Knobs for pretraining and episodic fine-tuning, including the episode
/// geometry and the propagation settings the loss depends on.
struct TrainConfig {
    double lambda = 0.9;          // center-loss weight
    double lr = 1e-3;
    double momentum = 0.9;
    double clip_norm = 5.0;       // global gradient-norm cap; 0 disables
    Index iterations = 1000;      // fine-tune steps
    Index pretrain_iterations = 2000;
    Index batch_size = 16;        // pretrain batch
    bool unfreeze_attention = false;
    bool reinit_head = true;      // fresh head layers at fine-tune start
    double center_rate = 0.5;
    Index checkpoint_every = 250;
    std::uint64_t seed = 0;

    Index way = 2;
    Index shot = 1;
    Index num_queries = 1;

    Index n_p = 10;               // prototypes per class
    Index lpa_k = 10;
    double alpha = 0.99;
    double sigma = 0.0;           // <= 0 selects the adaptive value

    void validate() const {
        if (lambda < 0.0) throw ParameterError("lambda must be >= 0");
        if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
        if (momentum < 0.0 || momentum >= 1.0)
            throw ParameterError("momentum must be in [0, 1)");
        if (clip_norm < 0.0) throw ParameterError("clip_norm must be >= 0");
        if (iterations < 0 || pretrain_iterations < 0)
            throw ParameterError("iteration counts must be >= 0");
        if (batch_size < 1) throw ParameterError("batch size must be >= 1");
        if (center_rate <= 0.0 || center_rate > 1.0)
            throw ParameterError("center rate must be in (0, 1]");
        if (checkpoint_every < 1) throw ParameterError("checkpoint interval must be >= 1");
        if (way < 1 || shot < 1 || num_queries < 1)
            throw ParameterError("episode geometry must be positive");
        if (n_p < 1) throw ParameterError("n_p must be >= 1");
        if (lpa_k < 1) throw ParameterError("lpa_k must be >= 1");
        if (!(alpha >= 0.0 && alpha < 1.0)) throw ParameterError("alpha must be in [0, 1)");
    }
};

}  // namespace pseg::train
