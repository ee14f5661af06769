#include "avca/objectives.hpp"

namespace avca {

TripletBatch sample_negatives(const std::vector<ClassId>& labels, std::mt19937_64& gen, double margin) {
  TripletBatch out;
  out.margin = margin;
  const std::size_t n = labels.size();
  out.negative.resize(n);
  out.valid.resize(n);
  std::vector<Index> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    candidates.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (labels[j] != labels[i]) candidates.push_back(static_cast<Index>(j));
    }
    if (candidates.empty()) {
      out.negative[i] = static_cast<Index>(i);
      out.valid[i] = false;
      continue;
    }
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    out.negative[i] = candidates[pick(gen)];
    out.valid[i] = true;
  }
  return out;
}

}  // namespace avca
