#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pseg/geom/point_cloud.hpp"
#include "pseg/rng.hpp"

namespace pseg::episodes {

/// Which foreground classes a run trains on and which it holds out.
struct ClassSplit {
    std::vector<geom::Label> train_classes;
    std::vector<geom::Label> test_classes;
    int fold = 0;
    std::uint64_t seed = 0;
};

/// Shuffles the foreground classes with the seed, cuts them in half, and
/// assigns one half per fold. Fold 0 trains on the first half, fold 1 on the
/// second; the other half is held out for testing. Halves are reported in
/// ascending class order.
inline ClassSplit split_classes(const geom::ClassAlphabet& alphabet, int fold,
                                std::uint64_t seed) {
    alphabet.validate();
    if (fold != 0 && fold != 1) throw ParameterError("split_classes: fold must be 0 or 1");
    const auto fg = alphabet.foreground_ids();
    if (fg.size() < 2) throw ParameterError("split_classes: need at least two foreground classes");

    std::vector<geom::Label> order;
    order.reserve(fg.size());
    for (std::size_t id : fg) order.push_back(static_cast<geom::Label>(id));
    Rng rng(sub_seed(seed, "split"));
    rng.shuffle(order);

    const std::size_t half = order.size() / 2;
    std::vector<geom::Label> first(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half));
    std::vector<geom::Label> second(order.begin() + static_cast<std::ptrdiff_t>(half), order.end());
    std::sort(first.begin(), first.end());
    std::sort(second.begin(), second.end());

    ClassSplit split;
    split.fold = fold;
    split.seed = seed;
    split.train_classes = fold == 0 ? first : second;
    split.test_classes = fold == 0 ? second : first;
    return split;
}

inline nlohmann::json to_json(const ClassSplit& s) {
    return nlohmann::json{{"fold", s.fold},
                          {"seed", s.seed},
                          {"train_classes", s.train_classes},
                          {"test_classes", s.test_classes}};
}

inline ClassSplit split_from_json(const nlohmann::json& j) {
    ClassSplit s;
    s.fold = j.at("fold").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.train_classes = j.at("train_classes").get<std::vector<geom::Label>>();
    s.test_classes = j.at("test_classes").get<std::vector<geom::Label>>();
    if (s.train_classes.empty() || s.test_classes.empty())
        throw ConfigError("class split: both folds must be nonempty");
    return s;
}

}  // namespace pseg::episodes
