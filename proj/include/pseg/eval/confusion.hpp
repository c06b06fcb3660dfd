#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pseg/common.hpp"
#include "pseg/tensor.hpp"

namespace pseg::eval {

/// Square count table, rows = ground truth, columns = prediction.
class ConfusionMatrix {
  public:
    explicit ConfusionMatrix(Index num_classes) : n_(num_classes) {
        if (num_classes < 1) throw ParameterError("confusion matrix needs at least one class");
        counts_.assign(static_cast<std::size_t>(n_ * n_), 0);
    }

    Index num_classes() const { return n_; }

    std::int64_t at(Index truth, Index pred) const {
        check(truth, pred);
        return counts_[static_cast<std::size_t>(truth * n_ + pred)];
    }

    void add(Index truth, Index pred, std::int64_t count = 1) {
        check(truth, pred);
        counts_[static_cast<std::size_t>(truth * n_ + pred)] += count;
    }

    std::int64_t total() const {
        std::int64_t t = 0;
        for (std::int64_t c : counts_) t += c;
        return t;
    }

    /// Elementwise sum, used to merge per-worker matrices.
    void merge(const ConfusionMatrix& other) {
        if (other.n_ != n_) throw ShapeError("confusion matrices differ in class count");
        for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    }

  private:
    void check(Index truth, Index pred) const {
        if (truth < 0 || truth >= n_ || pred < 0 || pred >= n_)
            throw ParameterError("confusion matrix label out of range");
    }

    Index n_;
    std::vector<std::int64_t> counts_;
};

inline void accumulate(ConfusionMatrix& conf, const std::vector<Index>& truth,
                       const std::vector<Index>& pred) {
    if (truth.size() != pred.size())
        throw ShapeError("accumulate: truth and prediction lengths differ");
    for (std::size_t i = 0; i < truth.size(); ++i) conf.add(truth[i], pred[i]);
}

/// Per-class intersection over union. Classes whose union is empty (absent
/// from both truth and prediction) are undefined and excluded from the mean.
struct IouResult {
    std::vector<double> per_class;  // meaningful only where defined[c] != 0
    std::vector<char> defined;
    double mean = 0.0;
};

inline IouResult miou(const ConfusionMatrix& conf, bool include_background = false) {
    const Index n = conf.num_classes();
    IouResult res;
    res.per_class.assign(static_cast<std::size_t>(n), 0.0);
    res.defined.assign(static_cast<std::size_t>(n), 0);

    double sum = 0.0;
    Index used = 0;
    for (Index c = 0; c < n; ++c) {
        std::int64_t tp = conf.at(c, c), fp = 0, fn = 0;
        for (Index o = 0; o < n; ++o) {
            if (o == c) continue;
            fp += conf.at(o, c);
            fn += conf.at(c, o);
        }
        const std::int64_t denom = tp + fp + fn;
        if (denom == 0) continue;
        const double iou = static_cast<double>(tp) / static_cast<double>(denom);
        res.per_class[static_cast<std::size_t>(c)] = iou;
        res.defined[static_cast<std::size_t>(c)] = 1;
        if (c == 0 && !include_background) continue;
        sum += iou;
        ++used;
    }
    if (used == 0) throw NumericError("miou: every class is degenerate, metric undefined");
    res.mean = sum / static_cast<double>(used);
    return res;
}

}  // namespace pseg::eval
