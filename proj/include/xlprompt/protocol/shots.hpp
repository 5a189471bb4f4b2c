#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "xlprompt/core/error.hpp"
#include "xlprompt/core/rng.hpp"
#include "xlprompt/prompt/types.hpp"

namespace xlprompt {

/// K training and K development examples per class, drawn without replacement.
struct ShotSet {
  std::vector<LabeledPair> train;
  std::vector<LabeledPair> dev;
  std::size_t k = 0;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> by_class(const std::vector<LabeledPair>& pool, std::size_t num_classes) {
  std::vector<std::vector<std::size_t>> out(num_classes);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].label >= num_classes) {
      throw input_error("pool example with label " + std::to_string(pool[i].label) + " outside " +
                        std::to_string(num_classes) + " classes");
    }
    out[pool[i].label].push_back(i);
  }
  return out;
}

inline std::vector<LabeledPair> draw_per_class(const std::vector<LabeledPair>& pool, std::size_t num_classes,
                                               std::size_t k, Rng& rng, const char* what,
                                               const std::vector<LabeledPair>* exclude = nullptr) {
  auto classes = by_class(pool, num_classes);
  std::vector<LabeledPair> out;
  for (std::size_t y = 0; y < num_classes; ++y) {
    auto& members = classes[y];
    if (exclude != nullptr) {
      std::erase_if(members, [&](std::size_t i) {
        return std::find(exclude->begin(), exclude->end(), pool[i]) != exclude->end();
      });
    }
    if (members.size() < k) {
      throw input_error(std::string(what) + " pool has " + std::to_string(members.size()) +
                        " examples of class " + std::to_string(y) + ", need " + std::to_string(k));
    }
    rng.shuffle(members);
    for (std::size_t i = 0; i < k; ++i) {
      out.push_back(pool[members[i]]);
    }
  }
  rng.shuffle(out);
  return out;
}

} // namespace detail

/// Class-stratified uniform sampling without replacement; a pure function of its arguments.
/// Dev draws skip any example that also landed in train.
inline ShotSet sample_shots(const std::vector<LabeledPair>& source_pool, const std::vector<LabeledPair>& dev_pool,
                            std::size_t k, std::size_t num_classes, std::uint64_t seed) {
  if (k == 0) {
    throw input_error("k must be positive");
  }
  Rng rng(seed);
  ShotSet out;
  out.k = k;
  out.seed = seed;
  out.train = detail::draw_per_class(source_pool, num_classes, k, rng, "training");
  out.dev = detail::draw_per_class(dev_pool, num_classes, k, rng, "development", &out.train);
  return out;
}

} // namespace xlprompt
